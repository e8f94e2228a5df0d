//! Three-way tensors and the truncated higher-order SVD (Tucker).

use super::matrix::Matrix;
use super::svd::svd;
use crate::error::{check_dim, Error, Result};

/// Dense `I x J x K` tensor, row-major (`k` fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(i: usize, j: usize, k: usize) -> Self {
        Self {
            dims: [i, j, k],
            data: vec![0.0; i * j * k],
        }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        check_dim("tensor storage", dims.iter().product(), data.len())?;
        Ok(Self { dims, data })
    }

    /// Stack equally-shaped matrices along the third mode: slice `k` is
    /// `slices[k]`.
    pub fn stack(slices: &[Matrix]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Parameter("cannot stack zero slices".into()))?;
        let (i, j) = first.shape();
        let mut t = Self::zeros(i, j, slices.len());
        for (k, s) in slices.iter().enumerate() {
            check_dim("slice rows", i, s.rows())?;
            check_dim("slice cols", j, s.cols())?;
            for a in 0..i {
                for b in 0..j {
                    t.set(a, b, k, s[(a, b)]);
                }
            }
        }
        Ok(t)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = v;
    }

    /// Frontal slice `k` as an `I x J` matrix.
    pub fn slice3(&self, k: usize) -> Matrix {
        let [ni, nj, _] = self.dims;
        let mut m = Matrix::zeros(ni, nj);
        for i in 0..ni {
            for j in 0..nj {
                m[(i, j)] = self.get(i, j, k);
            }
        }
        m
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        for m in 0..3 {
            check_dim("tensor mode", self.dims[m], other.dims[m])?;
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Tensor3 {
            dims: self.dims,
            data,
        })
    }

    /// Mode-`n` unfolding (`n` in 0..3): rows indexed by mode `n`, columns by
    /// the remaining two modes in their natural order.
    pub fn unfold(&self, mode: usize) -> Matrix {
        let [ni, nj, nk] = self.dims;
        let (rows, cols) = match mode {
            0 => (ni, nj * nk),
            1 => (nj, ni * nk),
            _ => (nk, ni * nj),
        };
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..ni {
            for j in 0..nj {
                for k in 0..nk {
                    let v = self.get(i, j, k);
                    match mode {
                        0 => m[(i, j * nk + k)] = v,
                        1 => m[(j, i * nk + k)] = v,
                        _ => m[(k, i * nj + j)] = v,
                    }
                }
            }
        }
        m
    }

    /// `self x_mode m`, where `m` is `new x dims[mode]`.
    pub fn mode_product(&self, mode: usize, m: &Matrix) -> Result<Tensor3> {
        check_dim("mode product", self.dims[mode], m.cols())?;
        let mut dims = self.dims;
        dims[mode] = m.rows();
        let mut out = Tensor3::zeros(dims[0], dims[1], dims[2]);
        let [ni, nj, nk] = self.dims;
        for i in 0..ni {
            for j in 0..nj {
                for k in 0..nk {
                    let v = self.get(i, j, k);
                    if v == 0.0 {
                        continue;
                    }
                    let old = [i, j, k][mode];
                    for r in 0..m.rows() {
                        let mut idx = [i, j, k];
                        idx[mode] = r;
                        let o = out.offset(idx[0], idx[1], idx[2]);
                        out.data[o] += m[(r, old)] * v;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Largest admissible Tucker ranks: `min(dim_n, product of the others)`.
    pub fn full_ranks(&self) -> [usize; 3] {
        let [a, b, c] = self.dims;
        [a.min(b * c), b.min(a * c), c.min(a * b)]
    }
}

/// Tucker factorization `T ~ G x1 U1 x2 U2 x3 U3`. Rows of `U3` are the
/// per-slice (per-task) weight vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerFactors {
    pub core: Tensor3,
    pub factors: [Matrix; 3],
}

impl TuckerFactors {
    pub fn ranks(&self) -> [usize; 3] {
        self.core.dims()
    }

    pub fn reconstruct_full(&self) -> Tensor3 {
        self.core
            .mode_product(0, &self.factors[0])
            .and_then(|t| t.mode_product(1, &self.factors[1]))
            .and_then(|t| t.mode_product(2, &self.factors[2]))
            .expect("tucker shapes are consistent")
    }

    /// Weight vector of slice `k` (row `k` of the third factor).
    pub fn slice_weight(&self, k: usize) -> Vec<f64> {
        self.factors[2].row(k).to_vec()
    }

    /// Reconstruct one `I x J` slice from a third-mode weight vector:
    /// `G x1 U1 x2 U2 x3 w^T`.
    pub fn reconstruct(&self, weight: &[f64]) -> Result<Matrix> {
        let [r1, r2, r3] = self.ranks();
        check_dim("task weight vector", r3, weight.len())?;
        // Contract the third mode first; the remainder is U1 C U2^T.
        let mut c = Matrix::zeros(r1, r2);
        for a in 0..r1 {
            for b in 0..r2 {
                c[(a, b)] = (0..r3).map(|k| self.core.get(a, b, k) * weight[k]).sum();
            }
        }
        self.factors[0]
            .matmul(&c)?
            .matmul(&self.factors[1].transpose())
    }

    pub fn reconstruct_slice(&self, k: usize) -> Result<Matrix> {
        self.reconstruct(&self.slice_weight(k))
    }
}

/// Truncated HOSVD: factor `n` holds the leading `ranks[n]` left singular
/// vectors of the mode-`n` unfolding; the core is `T` contracted with the
/// factor transposes.
pub fn hosvd(t: &Tensor3, ranks: [usize; 3]) -> Result<TuckerFactors> {
    let full = t.full_ranks();
    for mode in 0..3 {
        if ranks[mode] == 0 || ranks[mode] > full[mode] {
            return Err(Error::Parameter(format!(
                "rank {} for mode {} outside 1..={}",
                ranks[mode],
                mode + 1,
                full[mode]
            )));
        }
    }
    let factors: [Matrix; 3] = std::array::from_fn(|mode| {
        svd(&t.unfold(mode)).u.leading_cols(ranks[mode])
    });
    let core = t
        .mode_product(0, &factors[0].transpose())?
        .mode_product(1, &factors[1].transpose())?
        .mode_product(2, &factors[2].transpose())?;
    Ok(TuckerFactors { core, factors })
}

/// Sum over modes of the squared singular values of each unfolding that a
/// truncation to `ranks` discards. Upper-bounds the squared HOSVD error.
pub fn discarded_energy(t: &Tensor3, ranks: [usize; 3]) -> f64 {
    (0..3)
        .map(|mode| {
            svd(&t.unfold(mode))
                .s
                .iter()
                .skip(ranks[mode])
                .map(|s| s * s)
                .sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_tensor(dims: [usize; 3], seed: u64) -> Tensor3 {
        let mut r = rng::rng(seed);
        let m = Matrix::random_normal(1, dims.iter().product(), &mut r);
        Tensor3::from_vec(dims, m.into_vec()).unwrap()
    }

    fn outer(u: &[f64], v: &[f64], w: &[f64]) -> Tensor3 {
        let mut t = Tensor3::zeros(u.len(), v.len(), w.len());
        for (i, a) in u.iter().enumerate() {
            for (j, b) in v.iter().enumerate() {
                for (k, c) in w.iter().enumerate() {
                    t.set(i, j, k, a * b * c);
                }
            }
        }
        t
    }

    #[test]
    fn rank_one_is_exact() {
        let t = outer(&[1.0, -2.0, 0.5], &[3.0, 1.0], &[0.2, 0.4, -1.0, 2.0]);
        let f = hosvd(&t, [1, 1, 1]).unwrap();
        assert!(t.sub(&f.reconstruct_full()).unwrap().frobenius() < 1e-10);
    }

    #[test]
    fn full_ranks_are_lossless() {
        let t = random_tensor([4, 5, 3], 9);
        let f = hosvd(&t, t.full_ranks()).unwrap();
        assert!(t.sub(&f.reconstruct_full()).unwrap().frobenius() < 1e-8);
    }

    #[test]
    fn truncation_error_bounded_by_discarded_energy() {
        let t = random_tensor([6, 5, 4], 17);
        let ranks = [3, 2, 2];
        let f = hosvd(&t, ranks).unwrap();
        let err2 = t.sub(&f.reconstruct_full()).unwrap().frobenius().powi(2);
        assert!(err2 <= discarded_energy(&t, ranks) + 1e-10);
    }

    #[test]
    fn slice_reconstruction_and_linearity() {
        let t = random_tensor([4, 3, 3], 1);
        let f = hosvd(&t, t.full_ranks()).unwrap();
        for k in 0..3 {
            let d = f.reconstruct_slice(k).unwrap().sub(&t.slice3(k)).unwrap();
            assert!(d.max_abs() < 1e-10);
        }
        let w1 = [0.3, -1.0, 2.0];
        let w2 = [1.5, 0.2, -0.7];
        let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
        let lhs = f.reconstruct(&sum).unwrap();
        let rhs = f.reconstruct(&w1).unwrap().add(&f.reconstruct(&w2).unwrap()).unwrap();
        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-10);
        assert_eq!(f.reconstruct(&[0.0; 3]).unwrap().max_abs(), 0.0);
        assert!(f.reconstruct(&[1.0]).is_err());
    }

    #[test]
    fn factors_are_orthonormal() {
        let t = random_tensor([6, 16, 2], 23);
        let f = hosvd(&t, t.full_ranks()).unwrap();
        for u in &f.factors {
            let g = u.transpose().matmul(u).unwrap();
            assert!(g.sub(&Matrix::identity(u.cols())).unwrap().max_abs() < 1e-8);
        }
    }

    #[test]
    fn invalid_ranks_rejected() {
        let t = random_tensor([2, 3, 4], 0);
        assert!(hosvd(&t, [0, 1, 1]).is_err());
        assert!(hosvd(&t, [3, 1, 1]).is_err());
    }
}
