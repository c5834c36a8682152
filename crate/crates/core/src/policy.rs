//! Design policies and the twin action-value networks.
//!
//! A policy maps an encoded experiment history to the next design. The
//! neural policy squashes its output through `tanh` and rescales to the
//! design box, so proposals are inside bounds by construction. The twin Q
//! networks score (history, design) pairs; their elementwise minimum is the
//! clipped double-Q target.

use crate::env::History;
use crate::error::CoreError;
use crate::model::Model;
use boed_nn::{Graph64, Mlp64, MlpSpec, MlpVars, NnError, Var};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// A sequential design proposal rule.
pub trait DesignPolicy {
    /// Proposes the next design given everything observed so far.
    fn propose(&mut self, history: &History) -> Result<Vec<f64>, CoreError>;
}

/// Uniform draws over the design box, independent of history.
#[derive(Clone)]
pub struct RandomPolicy {
    bounds: Vec<(f64, f64)>,
    rng: ChaCha12Rng,
}

impl RandomPolicy {
    pub fn new(bounds: Vec<(f64, f64)>, rng: ChaCha12Rng) -> Self {
        Self { bounds, rng }
    }

    pub fn for_model(model: &dyn Model, rng: ChaCha12Rng) -> Self {
        Self::new(model.design_bounds().to_vec(), rng)
    }
}

impl DesignPolicy for RandomPolicy {
    fn propose(&mut self, _history: &History) -> Result<Vec<f64>, CoreError> {
        use rand::RngExt;
        Ok(self
            .bounds
            .iter()
            .map(|&(lo, hi)| self.rng.random_range(lo..hi))
            .collect())
    }
}

/// Replays a scripted design sequence keyed by history length.
pub struct FixedDesignPolicy {
    designs: Vec<Vec<f64>>,
    wrap: bool,
}

impl FixedDesignPolicy {
    /// One design per step; proposing past the end is a contract error.
    pub fn sequence(designs: Vec<Vec<f64>>) -> Self {
        Self {
            designs,
            wrap: false,
        }
    }

    /// The same design at every step.
    pub fn repeating(design: Vec<f64>) -> Self {
        Self {
            designs: vec![design],
            wrap: true,
        }
    }
}

impl DesignPolicy for FixedDesignPolicy {
    fn propose(&mut self, history: &History) -> Result<Vec<f64>, CoreError> {
        let t = history.len();
        let idx = if self.wrap {
            t % self.designs.len()
        } else if t < self.designs.len() {
            t
        } else {
            return Err(CoreError::contract(format!(
                "scripted policy has {} designs but step {} was requested",
                self.designs.len(),
                t
            )));
        };
        Ok(self.designs[idx].clone())
    }
}

/// Per-column affine that whitens an encoded history: designs are mapped to
/// [-1, 1] by the design box, observations by the model's observation
/// location/scale, and the trailing fill-fraction column is left alone.
pub(crate) fn encoded_input_whitening(
    model: &dyn Model,
    horizon: usize,
) -> (Vec<f64>, Vec<f64>) {
    let (obs_scale, obs_shift) = model.obs_whitening().affine();
    let mut scale = Vec::new();
    let mut shift = Vec::new();
    for _ in 0..horizon {
        for &(lo, hi) in model.design_bounds() {
            let half = 0.5 * (hi - lo);
            let center = 0.5 * (hi + lo);
            scale.push(1.0 / half);
            shift.push(-center / half);
        }
        scale.extend_from_slice(&obs_scale);
        shift.extend_from_slice(&obs_shift);
    }
    scale.push(1.0);
    shift.push(0.0);
    (scale, shift)
}

/// Whitening for raw design columns, matching the encoded-design mapping.
pub(crate) fn design_whitening(model: &dyn Model) -> (Vec<f64>, Vec<f64>) {
    let mut scale = Vec::new();
    let mut shift = Vec::new();
    for &(lo, hi) in model.design_bounds() {
        let half = 0.5 * (hi - lo);
        let center = 0.5 * (hi + lo);
        scale.push(1.0 / half);
        shift.push(-center / half);
    }
    (scale, shift)
}

/// Deterministic neural design policy over encoded histories.
///
/// Output path: whiten input, MLP, tanh, rescale to the design box, so
/// every proposal lands inside the bounds (tanh saturates to the box edge).
#[derive(Clone)]
pub struct NeuralPolicy {
    pub(crate) net: Mlp64,
    input_scale: Vec<f64>,
    input_shift: Vec<f64>,
    out_scale: Vec<f64>,
    out_shift: Vec<f64>,
    bounds: Vec<(f64, f64)>,
}

impl NeuralPolicy {
    pub fn new(
        model: &dyn Model,
        horizon: usize,
        hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let input = History::encoding_width(horizon, model.design_dim(), model.obs_dim());
        let (input_scale, input_shift) = encoded_input_whitening(model, horizon);
        let bounds = model.design_bounds().to_vec();
        let out_scale: Vec<f64> = bounds.iter().map(|&(lo, hi)| 0.5 * (hi - lo)).collect();
        let out_shift: Vec<f64> = bounds.iter().map(|&(lo, hi)| 0.5 * (hi + lo)).collect();
        let spec = MlpSpec::relu(input, hidden.to_vec(), bounds.len());
        Self {
            net: Mlp64::new(&spec, rng),
            input_scale,
            input_shift,
            out_scale,
            out_shift,
            bounds,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn design_dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn bind(&self, g: &mut Graph64) -> MlpVars {
        self.net.bind(g)
    }

    /// Graph forward from a raw encoded-history leaf to raw designs.
    pub fn forward(&self, g: &mut Graph64, vars: &MlpVars, x: Var) -> Result<Var, NnError> {
        let xw = g.affine_cols(x, &self.input_scale, &self.input_shift)?;
        let h = self.net.forward(g, vars, xw)?;
        let t = g.tanh(h);
        g.affine_cols(t, &self.out_scale, &self.out_shift)
    }

    /// Batched inference: `encoded` is row-major `[rows, input_dim]`,
    /// output row-major `[rows, design_dim]`.
    pub fn infer_batch(&self, encoded: &[f64], rows: usize) -> Result<Vec<f64>, CoreError> {
        let mut g = Graph64::new();
        let x = g.leaf_slice(rows, self.input_dim(), encoded)?;
        let vars = self.bind(&mut g);
        let out = self.forward(&mut g, &vars, x)?;
        Ok(g.value(out).to_vec())
    }

    pub fn collect_grads(&mut self, g: &Graph64, vars: &MlpVars) {
        self.net.collect_grads(g, vars);
    }

    pub fn params(&self) -> Vec<&boed_nn::Param64> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut boed_nn::Param64> {
        self.net.params_mut()
    }
}

impl DesignPolicy for NeuralPolicy {
    fn propose(&mut self, history: &History) -> Result<Vec<f64>, CoreError> {
        let encoded = history.encode();
        self.infer_batch(&encoded, 1)
    }
}

/// Two independently initialized Q networks over (encoded history, design).
#[derive(Clone)]
pub struct TwinQ {
    pub(crate) q1: Mlp64,
    pub(crate) q2: Mlp64,
    input_scale: Vec<f64>,
    input_shift: Vec<f64>,
}

impl TwinQ {
    pub fn new(
        model: &dyn Model,
        horizon: usize,
        hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let enc = History::encoding_width(horizon, model.design_dim(), model.obs_dim());
        let input = enc + model.design_dim();
        let (mut input_scale, mut input_shift) = encoded_input_whitening(model, horizon);
        let (dscale, dshift) = design_whitening(model);
        input_scale.extend_from_slice(&dscale);
        input_shift.extend_from_slice(&dshift);
        let spec = MlpSpec::relu(input, hidden.to_vec(), 1);
        Self {
            q1: Mlp64::new(&spec, rng),
            q2: Mlp64::new(&spec, rng),
            input_scale,
            input_shift,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.q1.input_dim()
    }

    pub fn bind(&self, g: &mut Graph64) -> (MlpVars, MlpVars) {
        (self.q1.bind(g), self.q2.bind(g))
    }

    fn whiten(&self, g: &mut Graph64, x: Var) -> Result<Var, NnError> {
        g.affine_cols(x, &self.input_scale, &self.input_shift)
    }

    /// Graph forward of the first net from a raw `[rows, enc + design]` leaf.
    pub fn forward_q1(&self, g: &mut Graph64, vars: &MlpVars, x: Var) -> Result<Var, NnError> {
        let xw = self.whiten(g, x)?;
        self.q1.forward(g, vars, xw)
    }

    /// Graph forward of the second net.
    pub fn forward_q2(&self, g: &mut Graph64, vars: &MlpVars, x: Var) -> Result<Var, NnError> {
        let xw = self.whiten(g, x)?;
        self.q2.forward(g, vars, xw)
    }

    /// Inference of both nets on row-major `[rows, input_dim]` input.
    pub fn infer_each(&self, x: &[f64], rows: usize) -> Result<(Vec<f64>, Vec<f64>), CoreError> {
        let mut g = Graph64::new();
        let leaf = g.leaf_slice(rows, self.input_dim(), x)?;
        let (v1, v2) = self.bind(&mut g);
        let o1 = self.forward_q1(&mut g, &v1, leaf)?;
        let o2 = self.forward_q2(&mut g, &v2, leaf)?;
        Ok((g.value(o1).to_vec(), g.value(o2).to_vec()))
    }

    /// Elementwise minimum of the two nets, the clipped double-Q value.
    pub fn infer_min(&self, x: &[f64], rows: usize) -> Result<Vec<f64>, CoreError> {
        let (a, b) = self.infer_each(x, rows)?;
        Ok(a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect())
    }

    pub fn collect_grads(&mut self, g: &Graph64, v1: &MlpVars, v2: &MlpVars) {
        self.q1.collect_grads(g, v1);
        self.q2.collect_grads(g, v2);
    }

    pub fn params(&self) -> Vec<&boed_nn::Param64> {
        let mut p = self.q1.params();
        p.extend(self.q2.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut boed_nn::Param64> {
        let mut p = self.q1.params_mut();
        p.extend(self.q2.params_mut());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use rand::SeedableRng;

    fn lf() -> Box<dyn Model> {
        models::build("location_finding").unwrap()
    }

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn random_policy_is_uniform_and_history_independent() {
        let model = lf();
        let mut a = RandomPolicy::for_model(model.as_ref(), rng(7));
        let mut b = a.clone();
        let empty = History::new(10, 2, 1);
        let mut filled = History::new(10, 2, 1);
        filled.push(&[1.0, -2.0], &[0.3]).unwrap();

        let mut sums = [0.0f64; 2];
        let n = 4000;
        for _ in 0..n {
            let da = a.propose(&empty).unwrap();
            let db = b.propose(&filled).unwrap();
            assert_eq!(da, db);
            for (d, &(lo, hi)) in da.iter().zip(model.design_bounds()) {
                assert!(*d >= lo && *d < hi);
            }
            sums[0] += da[0];
            sums[1] += da[1];
        }
        for s in sums {
            let mean = s / n as f64;
            let se = 4.0 / (3.0f64 * n as f64).sqrt();
            assert!(mean.abs() < 4.0 * se, "mean {mean} too far from 0");
        }
    }

    #[test]
    fn scripted_policy_indexes_by_history_length() {
        let mut p = FixedDesignPolicy::sequence(vec![vec![1.0], vec![2.0]]);
        let mut h = History::new(3, 1, 1);
        assert_eq!(p.propose(&h).unwrap(), vec![1.0]);
        h.push(&[1.0], &[0.0]).unwrap();
        assert_eq!(p.propose(&h).unwrap(), vec![2.0]);
        h.push(&[2.0], &[0.0]).unwrap();
        assert!(matches!(p.propose(&h), Err(CoreError::Contract(_))));

        let mut r = FixedDesignPolicy::repeating(vec![5.0]);
        assert_eq!(r.propose(&h).unwrap(), vec![5.0]);
    }

    #[test]
    fn neural_policy_outputs_stay_inside_bounds() {
        let model = lf();
        let mut r = rng(11);
        for trial in 0..50 {
            let mut policy = NeuralPolicy::new(model.as_ref(), 10, &[16, 16], &mut r);
            // Inflate weights so tanh saturates; bounds must still hold.
            for p in policy.params_mut() {
                for v in p.value.iter_mut() {
                    *v *= 40.0;
                }
            }
            let mut h = History::new(10, 2, 1);
            use rand::RngExt;
            for _ in 0..trial % 10 {
                let d = [r.random_range(-4.0..4.0), r.random_range(-4.0..4.0)];
                h.push(&d, &[r.random_range(-3.0..3.0)]).unwrap();
            }
            let d = policy.propose(&h).unwrap();
            for (x, &(lo, hi)) in d.iter().zip(model.design_bounds()) {
                assert!(*x >= lo && *x <= hi, "{x} outside [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn neural_policy_is_deterministic_and_batch_consistent() {
        let model = lf();
        let mut r = rng(3);
        let mut policy = NeuralPolicy::new(model.as_ref(), 10, &[32, 32], &mut r);
        let mut h = History::new(10, 2, 1);
        h.push(&[0.5, -1.0], &[0.2]).unwrap();
        let d1 = policy.propose(&h).unwrap();
        let d2 = policy.propose(&h).unwrap();
        assert_eq!(d1, d2);

        let enc = h.encode();
        let mut batch = enc.clone();
        batch.extend_from_slice(&enc);
        let out = policy.infer_batch(&batch, 2).unwrap();
        assert_eq!(&out[..2], d1.as_slice());
        assert_eq!(&out[2..], d1.as_slice());
    }

    #[test]
    fn twin_q_min_takes_the_smaller_net() {
        let model = lf();
        let mut r = rng(5);
        let mut q = TwinQ::new(model.as_ref(), 10, &[8], &mut r);
        // Shift the output biases apart so the nets disagree everywhere.
        {
            let mut params = q.q1.params_mut();
            params.last_mut().unwrap().value[0] += 10.0;
        }
        {
            let mut params = q.q2.params_mut();
            params.last_mut().unwrap().value[0] -= 10.0;
        }
        let x = vec![0.1; q.input_dim()];
        let (a, b) = q.infer_each(&x, 1).unwrap();
        let m = q.infer_min(&x, 1).unwrap();
        assert!(a[0] > b[0]);
        assert_eq!(m[0], b[0]);
    }
}
