mod common;

use common::*;

const INSTANCES: u64 = 15;
const TOL: f64 = 1e-4;

fn check(name: &str, f: fn(u64) -> f64) {
    for seed in 0..INSTANCES {
        let e = f(seed);
        assert!(e < TOL, "{name} instance {seed}: max relative error {e:e}");
    }
}

#[test]
fn cross_entropy_matches_finite_differences() {
    check("ce", ce_instance);
}

#[test]
fn pct_matches_finite_differences() {
    check("pct", pct_instance);
}

#[test]
fn ewc_penalty_matches_finite_differences() {
    check("ewc", ewc_instance);
}

#[test]
fn ewc_fisher_is_mean_squared_sample_gradient() {
    check("fisher", ewc_fisher_brute_force_error);
}

#[test]
fn si_penalty_matches_finite_differences() {
    check("si", si_instance);
}

#[test]
fn lwf_matches_finite_differences() {
    check("lwf", lwf_instance);
}
