//! Minimal dense tensor arithmetic: rank 1-3, f64, row-major, no views.
//!
//! This is deliberately the smallest core that supports the layers, losses,
//! and metrics built on top of it. There is no broadcasting beyond scalar
//! ops and no autograd; gradients are derived by hand in [`crate::nn`].
//!
//! Reductions (matmul inner products, softmax denominators, axis sums)
//! accumulate in value-sorted order. Sorted accumulation makes every
//! reduction independent of operand order, which is what lets permuting the
//! rows of an attention input permute the output bitwise rather than merely
//! approximately.

use crate::error::{Error, Result};

/// Sums `values` in a canonical order (ascending by `f64::total_cmp`).
///
/// The result depends only on the multiset of values, not their order.
fn canonical_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

/// Pointwise binary operations accepted by [`Tensor::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

/// Reductions accepted by [`Tensor::reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// Dense row-major tensor of rank 1-3 holding `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from an explicit shape and flat row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} implies {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        validate_shape(shape).expect("invalid shape for zeros");
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.iter_mut().for_each(|v| *v = 1.0);
        t
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.iter_mut().for_each(|v| *v = value);
        t
    }

    /// Rank-2 tensor from nested rows; rows must have equal lengths.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::ShapeMismatch(
                "from_rows needs at least one row".into(),
            ));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch(
                "from_rows rows have unequal lengths".into(),
            ));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element accessor for rank-2 tensors.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, value: f64) {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j] = value;
    }

    /// Element accessor for rank-3 tensors.
    pub fn at3(&self, b: usize, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(b * self.shape[1] + i) * self.shape[2] + j]
    }

    /// Copies out slice `index` along axis 0 of a rank-3 tensor as rank 2.
    pub fn slice0(&self, index: usize) -> Result<Tensor> {
        if self.rank() != 3 {
            return Err(Error::RankError {
                expected: 3,
                got: self.rank(),
            });
        }
        let (rows, cols) = (self.shape[1], self.shape[2]);
        let start = index * rows * cols;
        Tensor::new(
            vec![rows, cols],
            self.data[start..start + rows * cols].to_vec(),
        )
    }

    /// Stacks equal-shape rank-2 tensors into a rank-3 tensor along axis 0.
    pub fn stack0(slices: &[Tensor]) -> Result<Tensor> {
        if slices.is_empty() {
            return Err(Error::ShapeMismatch(
                "stack0 needs at least one slice".into(),
            ));
        }
        let shape = slices[0].shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::RankError {
                expected: 2,
                got: shape.len(),
            });
        }
        let mut data = Vec::with_capacity(slices.len() * slices[0].len());
        for s in slices {
            if s.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "stack0 slice shape {:?} differs from {:?}",
                    s.shape(),
                    shape
                )));
            }
            data.extend_from_slice(s.data());
        }
        Tensor::new(vec![slices.len(), shape[0], shape[1]], data)
    }

    /// Reinterprets the tensor with a new shape of identical element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        validate_shape(shape)?;
        let expected: usize = shape.iter().product();
        if expected != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elements) to {shape:?} ({expected} elements)",
                self.shape,
                self.len()
            )));
        }
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    /// Standard matrix product for rank-2 operands with matching inner dims.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::RankError {
                expected: 2,
                got: self.rank(),
            });
        }
        if other.rank() != 2 {
            return Err(Error::RankError {
                expected: 2,
                got: other.rank(),
            });
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul inner dims differ: [{m}x{k}] x [{k2}x{n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        let mut terms = vec![0.0; k];
        for i in 0..m {
            for j in 0..n {
                for (t, term) in terms.iter_mut().enumerate() {
                    *term = self.data[i * k + t] * other.data[t * n + j];
                }
                out[i * n + j] = canonical_sum(&mut terms);
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// Rank-2 transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::RankError {
                expected: 2,
                got: self.rank(),
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    /// Row-wise softmax with per-row max subtraction for stability.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::RankError {
                expected: 2,
                got: self.rank(),
            });
        }
        if !self.is_finite() {
            return Err(Error::NonFiniteInput("softmax_rows"));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        let mut exps = vec![0.0; n];
        for i in 0..m {
            let row = &self.data[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (e, &v) in exps.iter_mut().zip(row) {
                *e = (v - max).exp();
            }
            let denom = canonical_sum(&mut exps.clone());
            for j in 0..n {
                out[i * n + j] = exps[j] / denom;
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// Pointwise binary operation on identically shaped tensors.
    pub fn elementwise(&self, other: &Tensor, op: ElementwiseOp) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "elementwise shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| match op {
                ElementwiseOp::Add => a + b,
                ElementwiseOp::Sub => a - b,
                ElementwiseOp::Mul => a * b,
            })
            .collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, ElementwiseOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, ElementwiseOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, ElementwiseOp::Mul)
    }

    /// Multiplies every element by `s`.
    pub fn scale(&self, s: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    /// Sum or mean along `axis`; the axis is removed from the shape
    /// (a rank-1 input reduces to shape `[1]`).
    pub fn reduce(&self, kind: Reduction, axis: usize) -> Result<Tensor> {
        let rank = self.rank();
        if axis >= rank {
            return Err(Error::AxisOutOfRange { axis, rank });
        }
        let extent = self.shape[axis];
        // Strides of the removed axis: outer blocks x inner stride.
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out_shape: Vec<usize> = self
            .shape
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != axis)
            .map(|(_, &d)| d)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let mut out = vec![0.0; outer * inner];
        let mut terms = vec![0.0; extent];
        for o in 0..outer {
            for i in 0..inner {
                for (t, term) in terms.iter_mut().enumerate() {
                    *term = self.data[(o * extent + t) * inner + i];
                }
                let sum = canonical_sum(&mut terms);
                out[o * inner + i] = match kind {
                    Reduction::Sum => sum,
                    Reduction::Mean => sum / extent as f64,
                };
            }
        }
        Tensor::new(out_shape, out)
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 3 {
        return Err(Error::RankError {
            expected: 3,
            got: shape.len(),
        });
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::ShapeMismatch(format!(
            "dimensions must be positive, got {shape:?}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(eye.matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_hand_reference() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_zero_case() {
        let z = Tensor::zeros(&[2, 3]);
        let mut rng = Rng::from_seed(1);
        let b = random_tensor(&mut rng, &[3, 4]);
        let c = z.matmul(&b).unwrap();
        assert_eq!(c, Tensor::zeros(&[2, 4]));
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dims() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(matches!(a.matmul(&b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn matmul_associativity_within_tolerance() {
        let mut rng = Rng::from_seed(2);
        for _ in 0..20 {
            let a = random_tensor(&mut rng, &[3, 4]);
            let b = random_tensor(&mut rng, &[4, 5]);
            let c = random_tensor(&mut rng, &[5, 2]);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (l, r) in left.data().iter().zip(right.data()) {
                let denom = l.abs().max(r.abs()).max(1.0);
                assert!((l - r).abs() / denom < 1e-9);
            }
        }
    }

    #[test]
    fn transpose_hand_reference_and_involution() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let t = a.transpose().unwrap();
        assert_eq!(t.data(), &[1.0, 3.0, 2.0, 4.0]);
        let row = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(row.transpose().unwrap().shape(), &[3, 1]);
        let mut rng = Rng::from_seed(3);
        let r = random_tensor(&mut rng, &[4, 6]);
        assert_eq!(r.transpose().unwrap().transpose().unwrap(), r);
    }

    #[test]
    fn transpose_rejects_other_ranks() {
        let v = Tensor::zeros(&[3]);
        assert!(matches!(v.transpose(), Err(Error::RankError { .. })));
    }

    #[test]
    fn softmax_symmetry_and_closed_form() {
        let c = Tensor::from_rows(&[vec![0.7, 0.7, 0.7]]).unwrap();
        let s = c.softmax_rows().unwrap();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let t = Tensor::from_rows(&[vec![0.0, 2.0f64.ln()]]).unwrap();
        let s = t.softmax_rows().unwrap();
        assert!((s.at2(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.at2(0, 1) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_overflow_safe() {
        let big = Tensor::from_rows(&[vec![1000.0, 1000.0]]).unwrap();
        let s = big.softmax_rows().unwrap();
        assert!((s.at2(0, 0) - 0.5).abs() < 1e-15);
        assert!(s.is_finite());
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let bad = Tensor::from_rows(&[vec![f64::NAN, 1.0]]).unwrap();
        assert!(matches!(bad.softmax_rows(), Err(Error::NonFiniteInput(_))));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut rng = Rng::from_seed(4);
        for _ in 0..50 {
            let a = random_tensor(&mut rng, &[4, 6]);
            let s = a.softmax_rows().unwrap();
            for i in 0..4 {
                let row_sum: f64 = (0..6).map(|j| s.at2(i, j)).sum();
                assert!((row_sum - 1.0).abs() < 1e-12);
            }
            let shifted = a.add(&Tensor::filled(&[4, 6], 0.37)).unwrap();
            let s2 = shifted.softmax_rows().unwrap();
            for (v, w) in s.data().iter().zip(s2.data()) {
                assert!((v - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn elementwise_identities_and_reference() {
        let mut rng = Rng::from_seed(5);
        let a = random_tensor(&mut rng, &[3, 3]);
        assert_eq!(a.add(&Tensor::zeros(&[3, 3])).unwrap(), a);
        assert_eq!(a.mul(&Tensor::ones(&[3, 3])).unwrap(), a);
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let y = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        assert_eq!(x.add(&y).unwrap().data(), &[4.0, 6.0]);
        let bad = Tensor::zeros(&[2, 2]);
        assert!(matches!(x.add(&bad), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn scale_and_reduce_reference() {
        let a = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(a.scale(1.0), a);
        let sum = a.reduce(Reduction::Sum, 0).unwrap();
        assert_eq!(sum.data(), &[6.0]);
        let mean = Tensor::zeros(&[4]).reduce(Reduction::Mean, 0).unwrap();
        assert_eq!(mean.data(), &[0.0]);
        assert!(matches!(
            a.reduce(Reduction::Sum, 1),
            Err(Error::AxisOutOfRange { .. })
        ));
    }

    #[test]
    fn reduce_axes_of_rank2_and_rank3() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let col_sum = a.reduce(Reduction::Sum, 0).unwrap();
        assert_eq!(col_sum.data(), &[5.0, 7.0, 9.0]);
        let row_mean = a.reduce(Reduction::Mean, 1).unwrap();
        assert_eq!(row_mean.data(), &[2.0, 5.0]);
        // mean == sum / extent
        let row_sum = a.reduce(Reduction::Sum, 1).unwrap();
        assert_eq!(row_sum.scale(1.0 / 3.0), row_mean);

        let cube = Tensor::new(vec![2, 2, 2], (1..=8).map(f64::from).collect()).unwrap();
        let over_mid = cube.reduce(Reduction::Sum, 1).unwrap();
        assert_eq!(over_mid.shape(), &[2, 2]);
        assert_eq!(over_mid.data(), &[4.0, 6.0, 12.0, 14.0]);
    }

    #[test]
    fn slice_and_stack_round_trip() {
        let cube = Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap();
        let s0 = cube.slice0(0).unwrap();
        let s1 = cube.slice0(1).unwrap();
        assert_eq!(Tensor::stack0(&[s0, s1]).unwrap(), cube);
    }

    #[test]
    fn canonical_sums_make_reductions_order_independent() {
        let mut rng = Rng::from_seed(6);
        for _ in 0..50 {
            let a = random_tensor(&mut rng, &[5, 4]);
            let b = random_tensor(&mut rng, &[4, 3]);
            let ab = a.matmul(&b).unwrap();
            // Permute the inner dimension of both operands identically:
            // products per output entry form the same multiset.
            let perm = [2usize, 0, 3, 1];
            let a_p = {
                let mut rows = Vec::new();
                for i in 0..5 {
                    rows.push(perm.iter().map(|&t| a.at2(i, t)).collect::<Vec<_>>());
                }
                Tensor::from_rows(&rows).unwrap()
            };
            let b_p = {
                let mut rows = Vec::new();
                for &t in &perm {
                    rows.push((0..3).map(|j| b.at2(t, j)).collect::<Vec<_>>());
                }
                Tensor::from_rows(&rows).unwrap()
            };
            let ab_p = a_p.matmul(&b_p).unwrap();
            assert_eq!(ab, ab_p, "inner-permutation changed matmul bits");
        }
    }

    #[test]
    fn zero_shapes_are_rejected() {
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).is_err());
    }
}
