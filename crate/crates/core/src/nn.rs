//! Dense one-hidden-layer rectifier network with hand-written backpropagation
//! and SGD with momentum.
//!
//! Parameters live in one flat vector: `w1` stored input-major (one
//! contiguous hidden-sized column per feature, so sparse rows touch
//! contiguous memory), then `b1`, `w2` (output x hidden, row-major), `b2`.
//! Gradients use the same internal layout, so strategies work on plain
//! `&[f64]`. [`MlpModel::flatten`] and [`MlpModel::from_flat`] use the
//! canonical order with `w1` as hidden x input row-major.

use rand::Rng;

use crate::data::SparseSample;
use crate::error::{config, input, Error, Result};

/// Logit assigned to inactive classes. Never wins an argmax and gets exactly
/// zero softmax mass.
pub const MASKED_LOGIT: f64 = f64::NEG_INFINITY;

pub const DEFAULT_HIDDEN: usize = 512;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Which output units may be predicted and receive probability mass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    active: Vec<bool>,
}

impl ClassMask {
    pub fn all(n: usize) -> Self {
        ClassMask { active: vec![true; n] }
    }

    pub fn from_classes(n: usize, classes: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut active = vec![false; n];
        for c in classes {
            if c >= n {
                return input(format!("class {c} outside {n} outputs"));
            }
            active[c] = true;
        }
        if !active.iter().any(|&a| a) {
            return input("class mask has no active class");
        }
        Ok(ClassMask { active })
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    #[inline]
    pub fn is_active(&self, c: usize) -> bool {
        self.active.get(c).copied().unwrap_or(false)
    }

    pub fn active_classes(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&c| self.active[c]).collect()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    params: Vec<f64>,
}

pub fn param_count(input_dim: usize, hidden_dim: usize, output_dim: usize) -> usize {
    hidden_dim * (input_dim + 1) + output_dim * (hidden_dim + 1)
}

impl MlpModel {
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || output_dim == 0 {
            return config("network dimensions must be positive");
        }
        Ok(MlpModel {
            input_dim,
            hidden_dim,
            output_dim,
            params: vec![0.0; param_count(input_dim, hidden_dim, output_dim)],
        })
    }

    /// Uniform fan-based initialisation, biases zero.
    pub fn init<R: Rng>(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(input_dim, hidden_dim, output_dim)?;
        let a1 = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        for j in 0..hidden_dim {
            for i in 0..input_dim {
                m.params[i * hidden_dim + j] = rng.gen_range(-a1..a1);
            }
        }
        let a2 = (6.0 / (hidden_dim + output_dim) as f64).sqrt();
        for w in m.w2_mut() {
            *w = rng.gen_range(-a2..a2);
        }
        Ok(m)
    }

    /// Rebuilds a model from a canonical flat parameter vector.
    pub fn from_flat(input_dim: usize, hidden_dim: usize, output_dim: usize, params: Vec<f64>) -> Result<Self> {
        let mut m = Self::from_params(input_dim, hidden_dim, output_dim, params)?;
        let n = hidden_dim * input_dim;
        let canon = m.params[..n].to_vec();
        for j in 0..hidden_dim {
            for i in 0..input_dim {
                m.params[i * hidden_dim + j] = canon[j * input_dim + i];
            }
        }
        Ok(m)
    }

    /// Rebuilds a model from a vector in the internal layout of [`Self::params`].
    pub fn from_params(input_dim: usize, hidden_dim: usize, output_dim: usize, params: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(input_dim, hidden_dim, output_dim)?;
        if params.len() != m.params.len() {
            return config(format!("parameter vector has length {}, expected {}", params.len(), m.params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        m.params = params;
        Ok(m)
    }

    /// Canonical order: `w1` hidden x input, `b1`, `w2`, `b2`.
    pub fn flatten(&self) -> Vec<f64> {
        let (hd, id) = (self.hidden_dim, self.input_dim);
        let mut out = self.params.clone();
        for j in 0..hd {
            for i in 0..id {
                out[j * id + i] = self.params[i * hd + j];
            }
        }
        out
    }

    /// Parameters in internal layout; gradients share it.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = self.hidden_dim * self.input_dim;
        let b1 = w1 + self.hidden_dim;
        let w2 = b1 + self.output_dim * self.hidden_dim;
        [w1, b1, w2, w2 + self.output_dim]
    }

    /// Weight from input `i` to hidden unit `j`.
    pub fn w1(&self, j: usize, i: usize) -> f64 {
        self.params[i * self.hidden_dim + j]
    }
    pub fn set_w1(&mut self, j: usize, i: usize, v: f64) {
        self.params[i * self.hidden_dim + j] = v;
    }
    pub fn b1(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[0]..o[1]]
    }
    pub fn w2(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[1]..o[2]]
    }
    pub fn b2(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[2]..o[3]]
    }
    pub fn b1_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.params[o[0]..o[1]]
    }
    pub fn w2_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.params[o[1]..o[2]]
    }
    pub fn b2_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.params[o[2]..o[3]]
    }

    fn check_inputs(&self, batch: &[&SparseSample], mask: &ClassMask) -> Result<()> {
        if mask.len() != self.output_dim {
            return config(format!("class mask has {} entries, model has {} outputs", mask.len(), self.output_dim));
        }
        for s in batch {
            if let Some(&f) = s.features.last() {
                if f as usize >= self.input_dim {
                    return input(format!("feature index {f} out of range for input dimension {}", self.input_dim));
                }
            }
        }
        Ok(())
    }

    /// Forward pass keeping the hidden activations needed for backprop.
    pub fn forward(&self, batch: &[&SparseSample], mask: &ClassMask) -> Result<ForwardCache> {
        self.check_inputs(batch, mask)?;
        let (hd, od, id) = (self.hidden_dim, self.output_dim, self.input_dim);
        let (b1, w2, b2) = (self.b1(), self.w2(), self.b2());
        let w1 = &self.params[..hd * id];
        let mut hidden = Matrix::zeros(batch.len(), hd);
        let mut logits = Matrix::zeros(batch.len(), od);
        for (i, s) in batch.iter().enumerate() {
            let h = hidden.row_mut(i);
            h.copy_from_slice(b1);
            for &f in &s.features {
                let col = &w1[f as usize * hd..(f as usize + 1) * hd];
                for (hj, w) in h.iter_mut().zip(col) {
                    *hj += w;
                }
            }
            for hj in h.iter_mut() {
                *hj = hj.max(0.0);
            }
            let h = hidden.row(i);
            for (o, z) in logits.row_mut(i).iter_mut().enumerate() {
                *z = if mask.is_active(o) { b2[o] + dot(&w2[o * hd..(o + 1) * hd], h) } else { MASKED_LOGIT };
            }
        }
        Ok(ForwardCache { hidden, logits })
    }

    /// Logits with inactive classes set to [`MASKED_LOGIT`].
    pub fn forward_logits(&self, batch: &[&SparseSample], mask: &ClassMask) -> Result<Matrix> {
        Ok(self.forward(batch, mask)?.logits)
    }

    /// Accumulates into `grad` the parameter gradient implied by `dlogits`
    /// (d loss / d logits, one row per sample). Entries for masked classes
    /// must be zero.
    pub fn backward(&self, batch: &[&SparseSample], cache: &ForwardCache, dlogits: &Matrix, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len(), "gradient length mismatch");
        let (hd, od) = (self.hidden_dim, self.output_dim);
        let o = self.offsets();
        let w2 = self.w2();
        let (g_w1, rest) = grad.split_at_mut(o[0]);
        let (g_b1, rest) = rest.split_at_mut(hd);
        let (g_w2, g_b2) = rest.split_at_mut(od * hd);
        let mut dh = vec![0.0; hd];
        for (i, s) in batch.iter().enumerate() {
            let h = cache.hidden.row(i);
            let dl = dlogits.row(i);
            dh.iter_mut().for_each(|v| *v = 0.0);
            for out in 0..od {
                let d = dl[out];
                if d == 0.0 {
                    continue;
                }
                g_b2[out] += d;
                let gw = &mut g_w2[out * hd..(out + 1) * hd];
                let wr = &w2[out * hd..(out + 1) * hd];
                for j in 0..hd {
                    gw[j] += d * h[j];
                    dh[j] += d * wr[j];
                }
            }
            for j in 0..hd {
                if h[j] <= 0.0 {
                    dh[j] = 0.0;
                }
            }
            for (g, d) in g_b1.iter_mut().zip(&dh) {
                *g += d;
            }
            for &f in &s.features {
                let col = &mut g_w1[f as usize * hd..(f as usize + 1) * hd];
                for (g, d) in col.iter_mut().zip(&dh) {
                    *g += d;
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Post-rectifier hidden activations, batch x hidden.
    pub hidden: Matrix,
    /// Masked logits, batch x output.
    pub logits: Matrix,
}

/// Numerically stable softmax over the finite entries of `logits`.
pub fn masked_softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - m).exp()).sum();
    let lse = m + sum.ln();
    (logits.iter().map(|&z| (z - lse).exp()).collect(), lse)
}

/// Mean cross-entropy of `labels` under masked logits. `dlogits` receives
/// `scale * (p - onehot) / batch` per row; the returned loss is unscaled.
pub fn cross_entropy(
    logits: &Matrix,
    labels: &[usize],
    mask: &ClassMask,
    scale: f64,
    dlogits: &mut Matrix,
) -> Result<f64> {
    let n = logits.rows as f64;
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if !mask.is_active(y) {
            return input(format!("label {y} is not an active class"));
        }
        let z = logits.row(i);
        let (p, lse) = masked_softmax(z);
        total += lse - z[y];
        for (c, (d, pc)) in dlogits.row_mut(i).iter_mut().zip(&p).enumerate() {
            let target = if c == y { 1.0 } else { 0.0 };
            *d += scale * (pc - target) / n;
        }
    }
    Ok(total / n)
}

/// Mean cross-entropy over the batch and its exact gradient.
pub fn loss_and_grad(model: &MlpModel, batch: &[&SparseSample], mask: &ClassMask) -> Result<(f64, Vec<f64>)> {
    let cache = model.forward(batch, mask)?;
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let mut dlogits = Matrix::zeros(batch.len(), model.output_dim());
    let loss = cross_entropy(&cache.logits, &labels, mask, 1.0, &mut dlogits)?;
    let mut grad = vec![0.0; model.param_count()];
    model.backward(batch, &cache, &dlogits, &mut grad);
    Ok((loss, grad))
}

/// Index of the largest logit; ties go to the smallest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (c, &z) in logits.iter().enumerate().skip(1) {
        if z > logits[best] {
            best = c;
        }
    }
    best
}

pub fn predict(model: &MlpModel, samples: &[&SparseSample], mask: &ClassMask) -> Result<Vec<usize>> {
    let logits = model.forward_logits(samples, mask)?;
    Ok((0..logits.rows).map(|i| argmax(logits.row(i))).collect())
}

/// Momentum buffer plus step hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl OptimizerState {
    pub fn new(param_count: usize, learning_rate: f64, momentum: f64) -> Self {
        OptimizerState { learning_rate, momentum, velocity: vec![0.0; param_count] }
    }

    pub fn reset(&mut self) {
        self.velocity.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}

/// `v <- momentum * v + g; theta <- theta - lr * v`. Refuses non-finite
/// gradients without touching the model.
pub fn sgd_step(model: &mut MlpModel, opt: &mut OptimizerState, grad: &[f64]) -> Result<()> {
    if grad.len() != model.param_count() || opt.velocity.len() != model.param_count() {
        return config(format!(
            "gradient length {} / optimizer length {} do not match {} parameters",
            grad.len(),
            opt.velocity.len(),
            model.param_count()
        ));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at coordinate {i}")));
    }
    let (lr, mu) = (opt.learning_rate, opt.momentum);
    for ((p, v), &g) in model.params.iter_mut().zip(opt.velocity.iter_mut()).zip(grad) {
        *v = mu * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn s(f: &[u32], label: usize) -> SparseSample {
        SparseSample::new(f.to_vec(), label, None).unwrap()
    }

    #[test]
    fn zero_model_logits_equal_bias() {
        let mut m = MlpModel::zeros(4, 3, 2).unwrap();
        m.b2_mut().copy_from_slice(&[0.25, -1.5]);
        let x = s(&[0, 2], 0);
        let z = m.forward_logits(&[&x], &ClassMask::all(2)).unwrap();
        assert_eq!(z.row(0), &[0.25, -1.5]);
    }

    #[test]
    fn single_feature_hand_evaluation() {
        let mut m = MlpModel::zeros(1, 1, 2).unwrap();
        m.set_w1(0, 0, 1.0);
        m.w2_mut().copy_from_slice(&[2.0, 0.0]);
        let x = s(&[0], 0);
        let z = m.forward_logits(&[&x], &ClassMask::all(2)).unwrap();
        assert_eq!(z.row(0), &[2.0, 0.0]);
    }

    #[test]
    fn masked_argmax_stays_in_active_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = MlpModel::init(20, 8, 100, &mut rng).unwrap();
        let mask = ClassMask::from_classes(100, 0..10).unwrap();
        let xs: Vec<SparseSample> = (0..50u32).map(|i| s(&[i % 20], 0)).collect();
        let refs: Vec<&SparseSample> = xs.iter().collect();
        for p in predict(&m, &refs, &mask).unwrap() {
            assert!(p < 10);
        }
        let z = m.forward_logits(&refs, &mask).unwrap();
        let (p, _) = masked_softmax(z.row(0));
        assert!(p[10..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn index_and_dimension_errors() {
        let m = MlpModel::zeros(4, 3, 2).unwrap();
        let x = s(&[4], 0);
        assert!(matches!(m.forward_logits(&[&x], &ClassMask::all(2)), Err(Error::Input(_))));
        let y = s(&[1], 0);
        assert!(matches!(m.forward_logits(&[&y], &ClassMask::all(3)), Err(Error::Config(_))));
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let m = MlpModel::zeros(3, 2, 5).unwrap();
        let x = s(&[1], 2);
        let (loss, _) = loss_and_grad(&m, &[&x], &ClassMask::all(5)).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-15);
        let mask = ClassMask::from_classes(5, [1, 2, 4]).unwrap();
        let (loss, _) = loss_and_grad(&m, &[&x], &mask).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_softmax_has_zero_loss_and_output_grad() {
        let mut m = MlpModel::zeros(2, 2, 2).unwrap();
        m.b2_mut().copy_from_slice(&[0.0, 1000.0]);
        let x = s(&[0], 1);
        let (loss, grad) = loss_and_grad(&m, &[&x], &ClassMask::all(2)).unwrap();
        assert_eq!(loss, 0.0);
        let o = m.param_count() - 2 - 2 * 2;
        assert!(grad[o..].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn label_outside_mask_is_input_error() {
        let m = MlpModel::zeros(2, 2, 3).unwrap();
        let x = s(&[0], 2);
        let mask = ClassMask::from_classes(3, [0, 1]).unwrap();
        assert!(matches!(loss_and_grad(&m, &[&x], &mask), Err(Error::Input(_))));
    }

    #[test]
    fn vanilla_and_momentum_steps() {
        let mut m = MlpModel::from_flat(1, 1, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let mut opt = OptimizerState::new(4, 0.1, 0.0);
        sgd_step(&mut m, &mut opt, &[2.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((m.params()[0] - 0.8).abs() < 1e-15);

        let mut m = MlpModel::zeros(1, 1, 1).unwrap();
        let mut opt = OptimizerState::new(4, 1.0, 0.9);
        let g = [1.0, 0.0, 0.0, 0.0];
        sgd_step(&mut m, &mut opt, &g).unwrap();
        assert_eq!(m.params()[0], -1.0);
        sgd_step(&mut m, &mut opt, &g).unwrap();
        assert!((m.params()[0] + 2.9).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = MlpModel::init(5, 4, 3, &mut rng).unwrap();
        let before = m.flatten();
        let mut opt = OptimizerState::new(m.param_count(), 1e-3, 0.9);
        sgd_step(&mut m, &mut opt, &vec![0.0; before.len()]).unwrap();
        assert_eq!(m.flatten(), before);
    }

    #[test]
    fn non_finite_gradient_refused() {
        let mut m = MlpModel::zeros(1, 1, 1).unwrap();
        let mut opt = OptimizerState::new(4, 0.1, 0.9);
        let e = sgd_step(&mut m, &mut opt, &[f64::NAN, 0.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(e, Error::Numeric(_)));
        assert!(m.params().iter().all(|&p| p == 0.0));
        assert!(opt.velocity().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.9]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[MASKED_LOGIT, 0.1, 0.1]), 1);
    }

    #[test]
    fn parameter_count_formula() {
        let m = MlpModel::zeros(7, 5, 3).unwrap();
        assert_eq!(m.param_count(), 5 * (7 + 1) + 3 * (5 + 1));
        assert_eq!(m.b1().len(), 5);
        assert_eq!(m.b2().len(), 3);
        assert!(MlpModel::from_flat(7, 5, 3, vec![0.0; 10]).is_err());
    }

    #[test]
    fn canonical_order_puts_w1_row_major() {
        let flat: Vec<f64> = (0..param_count(3, 2, 2)).map(|i| i as f64).collect();
        let m = MlpModel::from_flat(3, 2, 2, flat.clone()).unwrap();
        assert_eq!(m.w1(1, 0), 3.0);
        assert_eq!(m.w1(0, 2), 2.0);
        assert_eq!(m.b1(), &[6.0, 7.0]);
        assert_eq!(m.flatten(), flat);
    }
}
