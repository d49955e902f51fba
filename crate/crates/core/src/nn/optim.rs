//! Named parameters with gradient slots and Adam moments.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};

/// How a parameter is treated by the L2 penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Convolution filters and dense weights; penalized.
    Weight,
    /// Dense bias; not penalized.
    Bias,
    /// Batch-norm scale; not penalized.
    Scale,
    /// Batch-norm shift; not penalized.
    Shift,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight)
    }
}

#[derive(Debug, Clone)]
pub struct Param<F> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    m: Tensor<F>,
    v: Tensor<F>,
}

impl<F: Real> Param<F> {
    pub fn new(name: impl Into<String>, kind: ParamKind, value: Tensor<F>) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            kind,
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        }
    }

    pub fn moments(&self) -> (&Tensor<F>, &Tensor<F>) {
        (&self.m, &self.v)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamSet<F> {
    params: Vec<Param<F>>,
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Registers a parameter and returns its slot index.
    pub fn push(&mut self, param: Param<F>) -> usize {
        self.params.push(param);
        self.params.len() - 1
    }

    #[inline]
    pub fn get(&self, idx: usize) -> &Param<F> {
        &self.params[idx]
    }

    #[inline]
    pub fn get_mut(&mut self, idx: usize) -> &mut Param<F> {
        &mut self.params[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<F>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<F>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad.fill(F::zero()));
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// `½ Σ w²` over penalized weights.
    pub fn l2_penalty(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.kind.decays())
            .flat_map(|p| p.value.data().iter())
            .map(|w| {
                let w = w.as_f64();
                w * w
            })
            .sum::<f64>()
            * 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2_lambda: 1e-3,
            batch_size: 100,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.lr > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && self.l2_lambda >= 0.0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::InvalidConfig(alloc::format!("{self:?}")))
        }
    }
}

/// One bias-corrected Adam update at step `t ≥ 1`. Penalized weights get
/// `λ·w` added to their gradient first.
pub fn adam_step<F: Real>(params: &mut ParamSet<F>, t: u64, cfg: &OptimizerConfig) {
    debug_assert!(t >= 1);
    let t = t.max(1) as i32;
    let b1 = F::from_f64_lossy(cfg.beta1);
    let b2 = F::from_f64_lossy(cfg.beta2);
    let one = F::one();
    let c1 = F::from_f64_lossy(1.0 - num_traits::Float::powi(cfg.beta1, t));
    let c2 = F::from_f64_lossy(1.0 - num_traits::Float::powi(cfg.beta2, t));
    let lr = F::from_f64_lossy(cfg.lr);
    let eps = F::from_f64_lossy(cfg.epsilon);
    let lambda = F::from_f64_lossy(cfg.l2_lambda);
    for p in params.iter_mut() {
        let decay = p.kind.decays() && cfg.l2_lambda > 0.0;
        let n = p.value.len();
        let (w, g, m, v) = (p.value.data_mut(), p.grad.data(), p.m.data_mut(), p.v.data_mut());
        for i in 0..n {
            let gi = if decay { g[i] + lambda * w[i] } else { g[i] };
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            w[i] = w[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar(kind: ParamKind, w: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.push(Param::new("w", kind, Tensor::new(&[1], vec![w]).unwrap()));
        ps
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = scalar(ParamKind::Bias, 0.5);
        ps.get_mut(0).grad.fill(1.0);
        let cfg = OptimizerConfig::default();
        adam_step(&mut ps, 1, &cfg);
        let moved = 0.5 - ps.get(0).value.data()[0];
        assert!((moved - cfg.lr).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_without_penalty_is_a_no_op() {
        let mut ps = scalar(ParamKind::Weight, 0.5);
        let cfg = OptimizerConfig {
            l2_lambda: 0.0,
            ..Default::default()
        };
        for t in 1..5 {
            adam_step(&mut ps, t, &cfg);
        }
        assert_eq!(ps.get(0).value.data()[0], 0.5);
    }

    #[test]
    fn penalty_skips_non_weights() {
        let cfg = OptimizerConfig::default();
        for kind in [ParamKind::Bias, ParamKind::Scale, ParamKind::Shift] {
            let mut ps = scalar(kind, 0.5);
            adam_step(&mut ps, 1, &cfg);
            assert_eq!(ps.get(0).value.data()[0], 0.5, "{kind:?}");
            assert_eq!(ps.l2_penalty(), 0.0);
        }
        let mut ps = scalar(ParamKind::Weight, 0.5);
        assert_eq!(ps.l2_penalty(), 0.125);
        adam_step(&mut ps, 1, &cfg);
        assert!(ps.get(0).value.data()[0] < 0.5);
    }
}
