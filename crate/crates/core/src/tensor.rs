//! Dense row-major tensors and the core numeric kernels built on them.
//!
//! Everything the encoders compute flows through [`Tensor`]. Kernels keep a
//! fixed left-to-right summation order so results are bitwise reproducible
//! across runs and refactors, which the equivalence tests rely on.

use crate::error::{Error, Result};

/// Element type for tensors: `f32` for training runs, `f64` for
/// verification suites where finite-difference checks need the headroom.
pub trait Scalar:
    num_traits::Float
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Default
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn from_f64(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("finite f64 converts")
    }

    fn to_f64(self) -> f64 {
        <f64 as num_traits::NumCast>::from(self).expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}

/// Dense n-dimensional array with row-major contiguous storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Shape {
                op: "tensor_new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(data: Vec<S>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// 2-D tensor from nested rows; rows must be equal length.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Shape {
                    op: "from_rows",
                    lhs: vec![r, c],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor {
            shape: vec![r, c],
            data,
        })
    }

    /// Identity matrix of side `n`.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
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

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Number of rows when viewed as a matrix (leading dims collapsed).
    pub fn rows_2d(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Width of the last dimension.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn row(&self, i: usize) -> &[S] {
        let n = self.last_dim();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        let n = self.last_dim();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn at2(&self, i: usize, j: usize) -> S {
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: S) {
        let cols = self.shape[1];
        self.data[i * cols + j] = v;
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, a: S) -> Self {
        self.map(|x| x * a)
    }

    pub fn add(&self, other: &Tensor<S>) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op: "add",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add_assign(&mut self, other: &Tensor<S>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op: "add_assign",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Dot product of two 1-D tensors (or equal-length flat views).
    pub fn dot(&self, other: &Tensor<S>) -> Result<S> {
        if self.data.len() != other.data.len() {
            return Err(Error::Shape {
                op: "dot",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(S::zero(), |acc, (&a, &b)| acc + a * b))
    }

    /// Matrix transpose (2-D only).
    pub fn transpose(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::Shape {
                op: "transpose",
                lhs: self.shape.clone(),
                rhs: vec![],
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                out.data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite value produced by {op}")))
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .fold(0.0f64, |m, &x| m.max(x.to_f64().abs()))
    }
}

/// Matrix product of `a [m x k]` and `b [k x n]`.
///
/// Each output element accumulates its k-terms in ascending order, so the
/// result is independent of optimization level and call site.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Shape {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b.data[p * n..(p + 1) * n];
            for j in 0..n {
                o_row[j] = o_row[j] + av * b_row[j];
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a [m x k]` times column vector `x [k]`, yielding `[m]`.
pub fn matvec<S: Scalar>(a: &Tensor<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    if a.rank() != 2 || a.shape[1] != x.len() {
        return Err(Error::Shape {
            op: "matvec",
            lhs: a.shape.clone(),
            rhs: x.shape.clone(),
        });
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let mut out = vec![S::zero(); m];
    for i in 0..m {
        let row = &a.data[i * k..(i + 1) * k];
        out[i] = row
            .iter()
            .zip(x.data.iter())
            .fold(S::zero(), |acc, (&a, &b)| acc + a * b);
    }
    Ok(Tensor::from_vec(out))
}

/// Row vector `x [k]` times `a [k x n]`, yielding `[n]`.
pub fn vecmat<S: Scalar>(x: &Tensor<S>, a: &Tensor<S>) -> Result<Tensor<S>> {
    if a.rank() != 2 || a.shape[0] != x.len() {
        return Err(Error::Shape {
            op: "vecmat",
            lhs: x.shape.clone(),
            rhs: a.shape.clone(),
        });
    }
    let (k, n) = (a.shape[0], a.shape[1]);
    let mut out = vec![S::zero(); n];
    for (p, &xv) in x.data.iter().enumerate().take(k) {
        let a_row = &a.data[p * n..(p + 1) * n];
        for j in 0..n {
            out[j] = out[j] + xv * a_row[j];
        }
    }
    Ok(Tensor::from_vec(out))
}

/// Gradients of `matmul`: given upstream `g [m x n]`, returns
/// `(dA, dB) = (g . B^T, A^T . g)`.
pub fn matmul_backward<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    g: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let da = matmul(g, &b.transpose()?)?;
    let db = matmul(&a.transpose()?, g)?;
    Ok((da, db))
}

/// Softmax over the last dimension with max-subtraction for stability.
///
/// `mask`, when given, must have one flag per element; `false` positions
/// get probability exactly 0 and at least one position per row must stay
/// unmasked.
pub fn softmax<S: Scalar>(x: &Tensor<S>, mask: Option<&[bool]>) -> Result<Tensor<S>> {
    let n = x.last_dim();
    if n == 0 {
        return Err(Error::Degenerate {
            op: "softmax",
            msg: "zero-width rows".into(),
        });
    }
    if let Some(m) = mask {
        if m.len() != x.len() {
            return Err(Error::Shape {
                op: "softmax_mask",
                lhs: x.shape.clone(),
                rhs: vec![m.len()],
            });
        }
    }
    let rows = x.rows_2d();
    let mut out = vec![S::zero(); x.len()];
    for r in 0..rows {
        let base = r * n;
        let row = &x.data[base..base + n];
        let keep = |j: usize| mask.map_or(true, |m| m[base + j]);

        let mut max = S::neg_infinity();
        for (j, &v) in row.iter().enumerate() {
            if keep(j) && v > max {
                max = v;
            }
        }
        if max == S::neg_infinity() {
            return Err(Error::Degenerate {
                op: "softmax",
                msg: format!("row {r} is fully masked"),
            });
        }
        let mut sum = S::zero();
        for (j, &v) in row.iter().enumerate() {
            if keep(j) {
                let e = (v - max).exp();
                out[base + j] = e;
                sum = sum + e;
            }
        }
        for j in 0..n {
            if keep(j) {
                out[base + j] = out[base + j] / sum;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Softmax gradient from the forward output `y` and upstream `g`:
/// `dx_i = y_i * (g_i - sum_j g_j y_j)` per row. Masked positions have
/// `y = 0` and therefore gradient 0.
pub fn softmax_backward<S: Scalar>(y: &Tensor<S>, g: &Tensor<S>) -> Result<Tensor<S>> {
    if y.shape() != g.shape() {
        return Err(Error::Shape {
            op: "softmax_backward",
            lhs: y.shape.clone(),
            rhs: g.shape.clone(),
        });
    }
    let n = y.last_dim();
    let rows = y.rows_2d();
    let mut out = vec![S::zero(); y.len()];
    for r in 0..rows {
        let base = r * n;
        let yr = &y.data[base..base + n];
        let gr = &g.data[base..base + n];
        let inner = yr
            .iter()
            .zip(gr)
            .fold(S::zero(), |acc, (&yv, &gv)| acc + yv * gv);
        for j in 0..n {
            out[base + j] = yr[j] * (gr[j] - inner);
        }
    }
    Tensor::new(y.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t2(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let a = t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let got = matmul(&Tensor::eye(2), &a).unwrap();
        assert_eq!(got, a);
    }

    #[test]
    fn matmul_hand_case() {
        let a = t2(&[vec![1.0, 2.0]]);
        let b = t2(&[vec![3.0], vec![4.0]]);
        let got = matmul(&a, &b).unwrap();
        assert_eq!(got.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_scalar_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::new(vec![5, 4], (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b = Tensor::new(vec![4, 3], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let got = matmul(&a, &b).unwrap();
        // independent oracle: plain i/j/k loops over explicit indexing
        for i in 0..5 {
            for j in 0..3 {
                let mut acc = 0.0f64;
                for k in 0..4 {
                    acc += a.data()[i * 4 + k] * b.data()[k * 3 + j];
                }
                assert!((got.at2(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let a: Tensor<f64> = Tensor::zeros(&[2, 3]);
        let b: Tensor<f64> = Tensor::zeros(&[2, 3]);
        match matmul(&a, &b) {
            Err(Error::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn matmul_backward_matches_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::new(vec![3, 3], (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b = Tensor::new(vec![3, 3], (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let g = Tensor::new(vec![3, 3], (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (da, db) = matmul_backward(&a, &b, &g).unwrap();
        let da_ref = matmul(&g, &b.transpose().unwrap()).unwrap();
        let db_ref = matmul(&a.transpose().unwrap(), &g).unwrap();
        assert_eq!(da, da_ref);
        assert_eq!(db, db_ref);
    }

    #[test]
    fn softmax_uniform_on_equal_inputs() {
        let x = Tensor::from_vec(vec![0.0f64, 0.0, 0.0]);
        let y = softmax(&x, None).unwrap();
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_large_input_does_not_overflow() {
        let x = Tensor::from_vec(vec![1000.0f64, 0.0]);
        let y = softmax(&x, None).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-6);
        assert!(y.data()[1].abs() < 1e-6);
        assert!(y.all_finite());
    }

    #[test]
    fn softmax_matches_scalar_oracle() {
        let x = Tensor::from_vec(vec![1.0f64, 2.0, 3.0]);
        let y = softmax(&x, None).unwrap();
        // independent exp/sum recomputation
        let exps: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (got, want) in y.data().iter().zip(exps.iter().map(|e| e / sum)) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((y.data()[0] - 0.09003057).abs() < 1e-7);
        assert!((y.data()[1] - 0.24472847).abs() < 1e-7);
        assert!((y.data()[2] - 0.66524096).abs() < 1e-7);
    }

    #[test]
    fn softmax_masked_positions_are_zero() {
        let x = Tensor::from_vec(vec![5.0f64, 1.0, 2.0]);
        let y = softmax(&x, Some(&[false, true, true])).unwrap();
        assert_eq!(y.data()[0], 0.0);
        let sum: f64 = y.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_fully_masked_row_errors() {
        let x = Tensor::from_vec(vec![1.0f64, 2.0]);
        match softmax(&x, Some(&[false, false])) {
            Err(Error::Degenerate { .. }) => {}
            other => panic!("expected degenerate error, got {other:?}"),
        }
    }

    #[test]
    fn softmax_grad_at_uniform_input_is_closed_form() {
        // J = diag(p) - p p^T with p = 1/n; probe one column at a time.
        let n = 4;
        let x = Tensor::from_vec(vec![0.0f64; n]);
        let y = softmax(&x, None).unwrap();
        let p = 1.0 / n as f64;
        for col in 0..n {
            let mut g = Tensor::zeros(&[n]);
            g.data_mut()[col] = 1.0;
            let dx = softmax_backward(&y, &g).unwrap();
            for i in 0..n {
                let want = if i == col { p - p * p } else { -p * p };
                assert!((dx.data()[i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_ops_are_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Tensor<f32> =
            Tensor::new(vec![4, 4], (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b: Tensor<f32> =
            Tensor::new(vec![4, 4], (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let r1 = matmul(&a, &b).unwrap();
        let r2 = matmul(&a, &b).unwrap();
        assert_eq!(r1.data(), r2.data());
        let s1 = softmax(&a, None).unwrap();
        let s2 = softmax(&a, None).unwrap();
        assert_eq!(s1.data(), s2.data());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn softmax_rows_sum_to_one_and_nonneg(
                rows in 1usize..4,
                cols in 1usize..6,
                seed in 0u64..1000,
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-30.0..30.0)).collect();
                let x = Tensor::new(vec![rows, cols], data).unwrap();
                let y = softmax(&x, None).unwrap();
                for r in 0..rows {
                    let sum: f64 = y.row(r).iter().sum();
                    prop_assert!((sum - 1.0).abs() < 1e-6);
                    for &v in y.row(r) {
                        prop_assert!(v >= 0.0);
                    }
                }
            }
        }
    }
}
