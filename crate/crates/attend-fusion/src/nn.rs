//! Differentiable building blocks with hand-derived backward passes.
//!
//! Every layer follows the same discipline: `forward` caches whatever the
//! backward pass needs, `backward` consumes that cache and accumulates
//! parameter gradients additively. Calling `backward` without a matching
//! `forward` is an error, never a silent reuse of stale intermediates.
//!
//! [`SelfAttentionBlock`] keeps a *stack* of forward caches so a batch can be
//! pushed through one sequence at a time and unwound in reverse order during
//! the backward pass, accumulating shared-parameter gradients across the
//! batch.
//!
//! [`gradcheck`] verifies any [`Layer`] against central finite differences of
//! a scalar probe loss; it is the primary falsification tool for the
//! attention gradients, whose derivation is the delicate part of this crate.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Reduction, Tensor};

/// Common surface over the differentiable blocks, used by the gradient
/// checker and by model plumbing.
pub trait Layer {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor>;
    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor>;

    /// Parameter tensors in a fixed order; empty for parameterless layers.
    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        Vec::new()
    }
    /// Gradient tensors, mirroring `params` order and shapes.
    fn grads(&self) -> Vec<(&'static str, &Tensor)> {
        Vec::new()
    }
    fn grads_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        Vec::new()
    }

    /// Paired mutable access to each parameter and its gradient — what an
    /// optimizer step needs, and impossible to get from `params_mut` plus
    /// `grads_mut` without a second `&mut self`.
    fn params_and_grads_mut(&mut self) -> Vec<(&'static str, &mut Tensor, &mut Tensor)> {
        Vec::new()
    }

    /// Resets all gradient entries to exactly zero.
    fn zero_grads(&mut self) {
        for (_, g) in self.grads_mut() {
            g.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Drops any cached forward intermediates.
    fn clear_cache(&mut self);
}

/// Fully connected layer computing `y = x Wᵀ + b` over rows of `x`.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    w: Tensor,
    b: Tensor,
    grad_w: Tensor,
    grad_b: Tensor,
    cache_x: Option<Tensor>,
}

impl LinearLayer {
    /// Uniform init in `(-1/sqrt(fan_in), +1/sqrt(fan_in))`; W is drawn
    /// row-major first, then b.
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w_data: Vec<f64> = (0..out_dim * in_dim)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        let b_data: Vec<f64> = (0..out_dim).map(|_| rng.uniform(-bound, bound)).collect();
        LinearLayer {
            w: Tensor::new(vec![out_dim, in_dim], w_data).unwrap(),
            b: Tensor::new(vec![out_dim], b_data).unwrap(),
            grad_w: Tensor::zeros(&[out_dim, in_dim]),
            grad_b: Tensor::zeros(&[out_dim]),
            cache_x: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn weights(&self) -> &Tensor {
        &self.w
    }

    pub fn bias(&self) -> &Tensor {
        &self.b
    }
}

impl Layer for LinearLayer {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        if input.rank() != 2 {
            return Err(Error::RankError {
                expected: 2,
                got: input.rank(),
            });
        }
        if input.shape()[1] != self.in_dim() {
            return Err(Error::ShapeMismatch(format!(
                "linear expects {} input features, got {}",
                self.in_dim(),
                input.shape()[1]
            )));
        }
        let mut out = input.matmul(&self.w.transpose()?)?;
        let (rows, cols) = (out.shape()[0], out.shape()[1]);
        let bias = self.b.data();
        let data = out.data_mut();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += bias[c];
            }
        }
        self.cache_x = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = self.cache_x.take().ok_or(Error::BackwardBeforeForward)?;
        if upstream.rank() != 2
            || upstream.shape()[0] != x.shape()[0]
            || upstream.shape()[1] != self.out_dim()
        {
            return Err(Error::ShapeMismatch(format!(
                "linear backward expects upstream [{}x{}], got {:?}",
                x.shape()[0],
                self.out_dim(),
                upstream.shape()
            )));
        }
        let dw = upstream.transpose()?.matmul(&x)?;
        self.grad_w = self.grad_w.add(&dw)?;
        let db = upstream.reduce(Reduction::Sum, 0)?;
        self.grad_b = self.grad_b.add(&db)?;
        upstream.matmul(&self.w)
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("w", &self.w), ("b", &self.b)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("w", &mut self.w), ("b", &mut self.b)]
    }

    fn grads(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("w", &self.grad_w), ("b", &self.grad_b)]
    }

    fn grads_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("w", &mut self.grad_w), ("b", &mut self.grad_b)]
    }

    fn params_and_grads_mut(&mut self) -> Vec<(&'static str, &mut Tensor, &mut Tensor)> {
        vec![
            ("w", &mut self.w, &mut self.grad_w),
            ("b", &mut self.b, &mut self.grad_b),
        ]
    }

    fn clear_cache(&mut self) {
        self.cache_x = None;
    }
}

/// Rectified linear unit.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    cache_x: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }

    /// Smallest |pre-activation| seen by the cached forward, if any.
    /// Used by gradient-check harnesses to skip inputs near the kink.
    pub fn cached_kink_margin(&self) -> Option<f64> {
        self.cache_x
            .as_ref()
            .map(|x| x.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs())))
    }
}

impl Layer for Relu {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        if !input.is_finite() {
            return Err(Error::NonFiniteInput("relu"));
        }
        let out = Tensor::new(
            input.shape().to_vec(),
            input.data().iter().map(|&v| v.max(0.0)).collect(),
        )?;
        self.cache_x = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = self.cache_x.take().ok_or(Error::BackwardBeforeForward)?;
        if upstream.shape() != x.shape() {
            return Err(Error::ShapeMismatch(format!(
                "relu backward shape {:?} vs cached {:?}",
                upstream.shape(),
                x.shape()
            )));
        }
        Tensor::new(
            x.shape().to_vec(),
            x.data()
                .iter()
                .zip(upstream.data())
                .map(|(&xi, &ui)| if xi > 0.0 { ui } else { 0.0 })
                .collect(),
        )
    }

    fn clear_cache(&mut self) {
        self.cache_x = None;
    }
}

/// Logistic sigmoid; output is strictly inside (0, 1).
#[derive(Debug, Clone, Default)]
pub struct Sigmoid {
    cache_y: Option<Tensor>,
}

impl Sigmoid {
    pub fn new() -> Self {
        Sigmoid::default()
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    // Extreme logits would otherwise round onto the boundary; pin the output
    // to the nearest representable interior values.
    y.max(f64::MIN_POSITIVE).min(1.0 - f64::EPSILON / 2.0)
}

impl Layer for Sigmoid {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        if !input.is_finite() {
            return Err(Error::NonFiniteInput("sigmoid"));
        }
        let out = Tensor::new(
            input.shape().to_vec(),
            input.data().iter().map(|&v| sigmoid_scalar(v)).collect(),
        )?;
        self.cache_y = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let y = self.cache_y.take().ok_or(Error::BackwardBeforeForward)?;
        if upstream.shape() != y.shape() {
            return Err(Error::ShapeMismatch(format!(
                "sigmoid backward shape {:?} vs cached {:?}",
                upstream.shape(),
                y.shape()
            )));
        }
        Tensor::new(
            y.shape().to_vec(),
            y.data()
                .iter()
                .zip(upstream.data())
                .map(|(&yi, &ui)| ui * yi * (1.0 - yi))
                .collect(),
        )
    }

    fn clear_cache(&mut self) {
        self.cache_y = None;
    }
}

#[derive(Debug, Clone)]
struct AttentionCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    a: Tensor,
}

/// Single-head scaled dot-product self-attention over a `[T x d]` sequence:
/// `Q = X Wq`, `K = X Wk`, `V = X Wv`, `A = softmax(Q Kᵀ / sqrt(d))`,
/// output `A V`. No positional term, no output projection.
///
/// Forward caches are a stack: pushing several sequences and unwinding them
/// in reverse accumulates the shared projection gradients over a batch.
#[derive(Debug, Clone)]
pub struct SelfAttentionBlock {
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    scale: f64,
    grad_wq: Tensor,
    grad_wk: Tensor,
    grad_wv: Tensor,
    caches: Vec<AttentionCache>,
}

impl SelfAttentionBlock {
    pub fn new(dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.uniform(-bound, bound)).collect() };
        let wq = Tensor::new(vec![dim, dim], draw(dim * dim)).unwrap();
        let wk = Tensor::new(vec![dim, dim], draw(dim * dim)).unwrap();
        let wv = Tensor::new(vec![dim, dim], draw(dim * dim)).unwrap();
        SelfAttentionBlock {
            wq,
            wk,
            wv,
            scale: 1.0 / (dim as f64).sqrt(),
            grad_wq: Tensor::zeros(&[dim, dim]),
            grad_wk: Tensor::zeros(&[dim, dim]),
            grad_wv: Tensor::zeros(&[dim, dim]),
            caches: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.shape()[0]
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Attention matrix of the most recent cached forward.
    pub fn last_attention(&self) -> Option<&Tensor> {
        self.caches.last().map(|c| &c.a)
    }
}

impl Layer for SelfAttentionBlock {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let d = self.dim();
        if input.rank() != 2 {
            return Err(Error::RankError {
                expected: 2,
                got: input.rank(),
            });
        }
        if input.shape()[1] != d {
            return Err(Error::ShapeMismatch(format!(
                "attention expects feature dim {d}, got {}",
                input.shape()[1]
            )));
        }
        let q = input.matmul(&self.wq)?;
        let k = input.matmul(&self.wk)?;
        let v = input.matmul(&self.wv)?;
        let logits = q.matmul(&k.transpose()?)?.scale(self.scale);
        let a = logits.softmax_rows()?;
        let out = a.matmul(&v)?;
        self.caches.push(AttentionCache {
            x: input.clone(),
            q,
            k,
            v,
            a,
        });
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self.caches.pop().ok_or(Error::BackwardBeforeForward)?;
        let t = cache.x.shape()[0];
        let d = self.dim();
        if upstream.shape() != [t, d] {
            return Err(Error::ShapeMismatch(format!(
                "attention backward expects upstream [{t}x{d}], got {:?}",
                upstream.shape()
            )));
        }

        // out = A V
        let d_v = cache.a.transpose()?.matmul(upstream)?;
        let d_a = upstream.matmul(&cache.v.transpose()?)?;

        // Row-wise softmax Jacobian: dS_row = (diag(a) - a aᵀ) dA_row.
        let mut d_s = Tensor::zeros(&[t, t]);
        for i in 0..t {
            let dot: f64 = (0..t).map(|j| d_a.at2(i, j) * cache.a.at2(i, j)).sum();
            for j in 0..t {
                d_s.set2(i, j, cache.a.at2(i, j) * (d_a.at2(i, j) - dot));
            }
        }

        // S = (Q Kᵀ) * scale
        let d_q = d_s.matmul(&cache.k)?.scale(self.scale);
        let d_k = d_s.transpose()?.matmul(&cache.q)?.scale(self.scale);

        let xt = cache.x.transpose()?;
        self.grad_wq = self.grad_wq.add(&xt.matmul(&d_q)?)?;
        self.grad_wk = self.grad_wk.add(&xt.matmul(&d_k)?)?;
        self.grad_wv = self.grad_wv.add(&xt.matmul(&d_v)?)?;

        let dx = d_q
            .matmul(&self.wq.transpose()?)?
            .add(&d_k.matmul(&self.wk.transpose()?)?)?
            .add(&d_v.matmul(&self.wv.transpose()?)?)?;
        Ok(dx)
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
        ]
    }

    fn grads(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("wq", &self.grad_wq),
            ("wk", &self.grad_wk),
            ("wv", &self.grad_wv),
        ]
    }

    fn grads_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("wq", &mut self.grad_wq),
            ("wk", &mut self.grad_wk),
            ("wv", &mut self.grad_wv),
        ]
    }

    fn params_and_grads_mut(&mut self) -> Vec<(&'static str, &mut Tensor, &mut Tensor)> {
        vec![
            ("wq", &mut self.wq, &mut self.grad_wq),
            ("wk", &mut self.wk, &mut self.grad_wk),
            ("wv", &mut self.wv, &mut self.grad_wv),
        ]
    }

    fn clear_cache(&mut self) {
        self.caches.clear();
    }
}

/// Outcome of one finite-difference comparison, per parameter tensor.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
}

/// Report of a gradient check: per-parameter maximum relative error plus the
/// verdict against the tolerance. The "input" entry covers dLoss/dInput.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.max_rel_err))
    }

    pub fn pass(&self) -> bool {
        self.max_rel_err() < self.tolerance
    }
}

/// Central-difference step used by all gradient checks.
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Relative-error denominator floor: below this scale the comparison is
/// effectively absolute, which keeps structurally zero gradients (dead relu
/// units, saturated probabilities) from amplifying finite-difference noise.
pub const GRADCHECK_REL_FLOOR: f64 = 1e-3;

pub(crate) fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_REL_FLOOR)
}

/// Draws a probe input with entries in `[-1,-0.01] ∪ [0.01,1]`; the margin
/// keeps ±h perturbations from crossing the relu kink.
pub(crate) fn probe_input(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len)
        .map(|_| loop {
            let v = rng.uniform(-1.0, 1.0);
            if v.abs() >= 0.01 {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Checks a layer's analytic gradients against central finite differences of
/// the scalar probe loss `L(y) = Σ R ⊙ y` with fixed random weights `R`.
///
/// Every parameter entry and every input entry is perturbed by ±h
/// (h = [`GRADCHECK_STEP`]). Deterministic given `seed`.
pub fn gradcheck(
    layer: &mut dyn Layer,
    input_shape: &[usize],
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    run_gradcheck(layer, input_shape, tolerance, seed, false)
}

/// Same as [`gradcheck`] but doubles the analytic gradients before the
/// comparison. Used to prove the checker can fail.
pub fn gradcheck_corrupted(
    layer: &mut dyn Layer,
    input_shape: &[usize],
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    run_gradcheck(layer, input_shape, tolerance, seed, true)
}

fn run_gradcheck(
    layer: &mut dyn Layer,
    input_shape: &[usize],
    tolerance: f64,
    seed: u64,
    corrupt: bool,
) -> Result<GradCheckReport> {
    assert!(tolerance > 0.0);
    let h = GRADCHECK_STEP;
    let mut rng = Rng::from_seed(seed);
    let input = probe_input(&mut rng, input_shape);

    // Shape discovery for the probe weights.
    layer.clear_cache();
    let out_shape = layer.forward(&input)?.shape().to_vec();
    let probe_len: usize = out_shape.iter().product();
    let probe_data: Vec<f64> = (0..probe_len).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let probe = Tensor::new(out_shape, probe_data)?;

    // Analytic pass.
    layer.zero_grads();
    layer.clear_cache();
    layer.forward(&input)?;
    let d_input = layer.backward(&probe)?;
    let corruption = if corrupt { 2.0 } else { 1.0 };
    let analytic: Vec<(String, Tensor)> = layer
        .grads()
        .into_iter()
        .map(|(name, g)| (name.to_string(), g.scale(corruption)))
        .collect();

    let loss_with = |layer: &mut dyn Layer, input: &Tensor, probe: &Tensor| -> Result<f64> {
        layer.clear_cache();
        let y = layer.forward(input)?;
        Ok(y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum())
    };

    let mut entries = Vec::new();
    for (pi, (name, grad)) in analytic.iter().enumerate() {
        let mut max_err = 0.0f64;
        for e in 0..grad.len() {
            layer.params_mut()[pi].1.data_mut()[e] += h;
            let plus = loss_with(layer, &input, &probe)?;
            layer.params_mut()[pi].1.data_mut()[e] -= 2.0 * h;
            let minus = loss_with(layer, &input, &probe)?;
            layer.params_mut()[pi].1.data_mut()[e] += h;
            let numeric = (plus - minus) / (2.0 * h);
            max_err = max_err.max(relative_error(grad.data()[e], numeric));
        }
        entries.push(GradCheckEntry {
            name: name.clone(),
            max_rel_err: max_err,
        });
    }

    // Input gradient
    let mut max_err = 0.0f64;
    let mut perturbed = input.clone();
    for e in 0..perturbed.len() {
        perturbed.data_mut()[e] += h;
        let plus = loss_with(layer, &perturbed, &probe)?;
        perturbed.data_mut()[e] -= 2.0 * h;
        let minus = loss_with(layer, &perturbed, &probe)?;
        perturbed.data_mut()[e] += h;
        let numeric = (plus - minus) / (2.0 * h);
        let g = d_input.data()[e] * corruption;
        max_err = max_err.max(relative_error(g, numeric));
    }
    entries.push(GradCheckEntry {
        name: "input".to_string(),
        max_rel_err: max_err,
    });

    layer.clear_cache();
    Ok(GradCheckReport { entries, tolerance })
}
