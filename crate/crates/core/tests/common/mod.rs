//! Test-side oracles shared by the integration targets: finite differences,
//! hand-written losses and brute-force enumerations.
#![allow(dead_code)]

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regcl::data::SparseSample;
use regcl::metrics::{flip_rates, ClassSel};
use regcl::nn::{cross_entropy, ClassMask, Matrix, MlpModel};
use regcl::pct::{pct_loss, PctConfig};
use regcl::scenarios::ScenarioKind;
use regcl::snapshot::ModelSnapshot;
use regcl::strategies::{agem_project, ewc_fisher, ewc_penalty, lwf_distill, EwcAnchor, SiState};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_sample(rng: &mut impl Rng, dim: usize, label: usize) -> SparseSample {
    let k = rng.gen_range(1..=dim.min(5));
    let mut f: Vec<u32> = index::sample(rng, dim, k).into_iter().map(|i| i as u32).collect();
    f.sort_unstable();
    SparseSample::new(f, label, None).unwrap()
}

pub fn random_batch(rng: &mut impl Rng, n: usize, dim: usize, labels: &[usize]) -> Vec<SparseSample> {
    (0..n)
        .map(|_| {
            let y = labels[rng.gen_range(0..labels.len())];
            random_sample(rng, dim, y)
        })
        .collect()
}

/// Random weights and biases, so no parameter sits at a special value.
pub fn random_model(rng: &mut impl Rng, i: usize, h: usize, o: usize) -> MlpModel {
    let p: Vec<f64> = (0..regcl::nn::param_count(i, h, o)).map(|_| rng.gen_range(-1.0..1.0)).collect();
    MlpModel::from_flat(i, h, o, p).unwrap()
}

/// Hidden pre-activations computed by hand from the canonical layout.
pub fn min_abs_preactivation(model: &MlpModel, batch: &[SparseSample]) -> f64 {
    let mut m = f64::INFINITY;
    for s in batch {
        for j in 0..model.hidden_dim() {
            let z = model.b1()[j] + s.features.iter().map(|&f| model.w1(j, f as usize)).sum::<f64>();
            m = m.min(z.abs());
        }
    }
    m
}

/// Fourth-order central difference of `f` at every coordinate of `x`.
pub fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64, h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let at = |p: &mut Vec<f64>, d: f64| {
                p[i] = x[i] + d;
                let v = f(p);
                p[i] = x[i];
                v
            };
            let (f2, f1, m1, m2) = (at(&mut p, 2.0 * h), at(&mut p, h), at(&mut p, -h), at(&mut p, -2.0 * h));
            (-f2 + 8.0 * f1 - 8.0 * m1 + m2) / (12.0 * h)
        })
        .collect()
}

/// Largest coordinate-wise `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6)).fold(0.0, f64::max)
}

pub const FD_STEP: f64 = 1e-4;
const DIMS: (usize, usize, usize) = (9, 6, 4);

/// Draws (model, batch) until no hidden unit is within reach of its kink.
fn smooth_instance(rng: &mut ChaCha8Rng, labels: &[usize], n: usize) -> (MlpModel, Vec<SparseSample>) {
    let (i, h, o) = DIMS;
    loop {
        let m = random_model(rng, i, h, o);
        let b = random_batch(rng, n, i, labels);
        if min_abs_preactivation(&m, &b) > 1e-2 {
            return (m, b);
        }
    }
}

fn model_fn<'a>(model: &'a MlpModel, loss: impl Fn(&MlpModel) -> f64 + 'a) -> impl Fn(&[f64]) -> f64 + 'a {
    let (i, h, o) = (model.input_dim(), model.hidden_dim(), model.output_dim());
    move |p: &[f64]| loss(&MlpModel::from_params(i, h, o, p.to_vec()).unwrap())
}

/// Cross-entropy over a random class mask.
pub fn ce_instance(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mask = ClassMask::from_classes(DIMS.2, [0, 1 + (seed as usize % 3)]).unwrap();
    let labels = mask.active_classes();
    let (model, batch) = smooth_instance(&mut r, &labels, 5);
    let refs: Vec<&SparseSample> = batch.iter().collect();
    let (_, grad) = regcl::nn::loss_and_grad(&model, &refs, &mask).unwrap();
    let num = numeric_grad(
        model.params(),
        model_fn(&model, |m| {
            let logits = m.forward_logits(&refs, &mask).unwrap();
            let y: Vec<usize> = refs.iter().map(|s| s.label).collect();
            let mut d = Matrix::zeros(refs.len(), m.output_dim());
            cross_entropy(&logits, &y, &mask, 1.0, &mut d).unwrap()
        }),
        FD_STEP,
    );
    max_rel_err(&grad, &num)
}

/// Full PCT term against a frozen old snapshot with fewer seen classes.
pub fn pct_instance(seed: u64) -> f64 {
    let mut r = rng(seed);
    let all: Vec<usize> = (0..DIMS.2).collect();
    let (model, batch) = smooth_instance(&mut r, &all, 6);
    let old_model = random_model(&mut r, DIMS.0, DIMS.1, DIMS.2);
    let old = ModelSnapshot::new(&old_model, 1, 0, ScenarioKind::Cil, vec![0, 1, 2]).unwrap();
    let cfg = PctConfig::enabled_with(r.gen_range(0.0..1.0), r.gen_range(0.0..1.0), r.gen_range(0.5..2.0));
    let refs: Vec<&SparseSample> = batch.iter().collect();
    let (_, grad) = pct_loss(&model, &old, &refs, &cfg).unwrap();
    let num = numeric_grad(model.params(), model_fn(&model, |m| pct_reference_loss(m, &old, &refs, &cfg)), FD_STEP);
    max_rel_err(&grad, &num)
}

/// PCT loss written out directly: lambda/B * sum_i w_i * 0.5 * ||z - z_old||^2
/// over the old model's classes, w_i = alpha + beta * [old correct].
pub fn pct_reference_loss(m: &MlpModel, old: &ModelSnapshot, batch: &[&SparseSample], cfg: &PctConfig) -> f64 {
    let classes = old.seen_classes().to_vec();
    let zo = old.model().forward_logits(batch, old.mask()).unwrap();
    let zn = m.forward_logits(batch, &ClassMask::all(m.output_dim())).unwrap();
    let mut total = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let old_pred = classes
            .iter()
            .copied()
            .max_by(|&a, &b| zo.row(i)[a].partial_cmp(&zo.row(i)[b]).unwrap().then(b.cmp(&a)))
            .unwrap();
        let w = cfg.alpha + if old_pred == s.label { cfg.beta } else { 0.0 };
        let sq: f64 = classes.iter().map(|&c| (zn.row(i)[c] - zo.row(i)[c]).powi(2)).sum();
        total += w * 0.5 * sq;
    }
    cfg.lambda * total / batch.len() as f64
}

/// EWC penalty with two anchors whose Fisher diagonals come from data.
pub fn ewc_instance(seed: u64) -> f64 {
    let mut r = rng(seed);
    let all: Vec<usize> = (0..DIMS.2).collect();
    let (model, _) = smooth_instance(&mut r, &all, 1);
    let mut anchors = Vec::new();
    for _ in 0..2 {
        let a = random_model(&mut r, DIMS.0, DIMS.1, DIMS.2);
        let data = random_batch(&mut r, 8, DIMS.0, &all);
        let refs: Vec<&SparseSample> = data.iter().collect();
        let fisher = ewc_fisher(&a, &refs, &ClassMask::all(DIMS.2)).unwrap();
        anchors.push(EwcAnchor { params: a.params().to_vec(), fisher });
    }
    let lambda = r.gen_range(0.1..10.0);
    let (_, grad) = ewc_penalty(model.params(), &anchors, lambda).unwrap();
    let num = numeric_grad(
        model.params(),
        |p| {
            let mut s = 0.0;
            for a in &anchors {
                for i in 0..p.len() {
                    s += a.fisher[i] * (p[i] - a.params[i]).powi(2);
                }
            }
            0.5 * lambda * s
        },
        FD_STEP,
    );
    max_rel_err(&grad, &num)
}

/// Empirical Fisher against per-sample gradients from single-sample batches.
pub fn ewc_fisher_brute_force_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let all: Vec<usize> = (0..DIMS.2).collect();
    let (model, data) = smooth_instance(&mut r, &all, 7);
    let refs: Vec<&SparseSample> = data.iter().collect();
    let mask = ClassMask::all(DIMS.2);
    let fisher = ewc_fisher(&model, &refs, &mask).unwrap();
    let mut brute = vec![0.0; model.param_count()];
    for s in &refs {
        let num = numeric_grad(
            model.params(),
            model_fn(&model, |m| {
                let z = m.forward_logits(&[*s], &mask).unwrap();
                let mut d = Matrix::zeros(1, m.output_dim());
                cross_entropy(&z, &[s.label], &mask, 1.0, &mut d).unwrap()
            }),
            FD_STEP,
        );
        for (b, g) in brute.iter_mut().zip(num) {
            *b += g * g / refs.len() as f64;
        }
    }
    max_rel_err(&fisher, &brute)
}

/// SI quadratic penalty after a short synthetic trajectory.
pub fn si_instance(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = regcl::nn::param_count(DIMS.0, DIMS.1, DIMS.2);
    let p0: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut state = SiState::new(&p0, r.gen_range(0.01..2.0), 0.1);
    let mut p = p0.clone();
    for _ in 0..5 {
        let g: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let d: Vec<f64> = (0..n).map(|_| r.gen_range(-0.1..0.1)).collect();
        state.accumulate(&g, &d);
        p.iter_mut().zip(&d).for_each(|(x, dx)| *x += dx);
    }
    state.consolidate(&p);
    let x: Vec<f64> = p.iter().map(|v| v + r.gen_range(-0.5..0.5)).collect();
    let (_, grad) = state.penalty(&x);
    let num = numeric_grad(
        &x,
        |q| {
            state.lambda
                * q.iter()
                    .zip(&state.reference)
                    .zip(&state.importance)
                    .map(|((a, b), o)| o * (a - b).powi(2))
                    .sum::<f64>()
        },
        FD_STEP,
    );
    max_rel_err(&grad, &num)
}

/// LwF distillation through the network, with a temperature other than 1
/// on odd seeds.
pub fn lwf_instance(seed: u64) -> f64 {
    let mut r = rng(seed);
    let all: Vec<usize> = (0..DIMS.2).collect();
    let (model, batch) = smooth_instance(&mut r, &all, 5);
    let old_mask = ClassMask::from_classes(DIMS.2, [0, 1, 3]).unwrap();
    let old = random_model(&mut r, DIMS.0, DIMS.1, DIMS.2);
    let refs: Vec<&SparseSample> = batch.iter().collect();
    let zo = old.forward_logits(&refs, &old_mask).unwrap();
    let t = if seed % 2 == 1 { 2.0 } else { 1.0 };
    let mask = ClassMask::all(DIMS.2);
    let cache = model.forward(&refs, &mask).unwrap();
    let (_, d) = lwf_distill(&cache.logits, &zo, t, &old_mask).unwrap();
    let mut grad = vec![0.0; model.param_count()];
    model.backward(&refs, &cache, &d, &mut grad);
    let classes = old_mask.active_classes();
    let num = numeric_grad(
        model.params(),
        model_fn(&model, |m| {
            let zn = m.forward_logits(&refs, &mask).unwrap();
            let mut total = 0.0;
            for i in 0..refs.len() {
                let soft = |z: &Matrix| -> Vec<f64> {
                    let e: Vec<f64> = classes.iter().map(|&c| (z.row(i)[c] / t).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.into_iter().map(|v| v / s).collect()
                };
                let (p, q) = (soft(&zn), soft(&zo));
                total -= t * t * q.iter().zip(&p).map(|(a, b)| a * b.ln()).sum::<f64>();
            }
            total / refs.len() as f64
        }),
        FD_STEP,
    );
    max_rel_err(&grad, &num)
}

/// Brute-force flip enumeration for one triple, compared with the library.
pub fn flip_oracle_agrees(old: &[usize], new: &[usize], labels: &[usize], classes: usize) -> bool {
    let mut sels = vec![ClassSel::All];
    sels.extend((0..classes).map(ClassSel::Class));
    sels.into_iter().all(|sel| {
        let idx: Vec<usize> = (0..labels.len())
            .filter(|&i| match sel {
                ClassSel::All => true,
                ClassSel::Class(c) => labels[i] == c,
            })
            .collect();
        let got = flip_rates(old, new, labels, sel).unwrap();
        if idx.is_empty() {
            return got.is_none();
        }
        let mut nf = 0;
        let mut pf = 0;
        for &i in &idx {
            match (old[i] == labels[i], new[i] == labels[i]) {
                (true, false) => nf += 1,
                (false, true) => pf += 1,
                _ => {}
            }
        }
        let g = got.unwrap();
        g.nf == nf
            && g.pf == pf
            && g.n == idx.len()
            && g.nfr == nf as f64 / idx.len() as f64
            && g.pfr == pf as f64 / idx.len() as f64
    })
}

pub fn random_flip_triple(r: &mut impl Rng) -> (Vec<usize>, Vec<usize>, Vec<usize>, usize) {
    let classes = r.gen_range(2..6);
    let n = r.gen_range(0..=50);
    let mut v = || (0..n).map(|_| r.gen_range(0..classes)).collect::<Vec<_>>();
    let (a, b, c) = (v(), v(), v());
    (a, b, c, classes)
}

/// Checks the projection contract on one pair; returns false on violation.
pub fn agem_contract_holds(grad: &[f64], reference: &[f64]) -> bool {
    let out = agem_project(grad, reference);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    if dot(&out, reference) < -1e-9 {
        return false;
    }
    if dot(grad, reference) >= 0.0 {
        return out.iter().zip(grad).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    true
}

pub fn random_agem_pair(r: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let n = r.gen_range(1..64);
    let scale = 10f64.powi(r.gen_range(-3..4));
    let g: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0) * scale).collect();
    let rf: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    (g, rf)
}
