//! Dense linear-algebra kernels: Householder QR (plain and column-pivoted),
//! thin SVD via one-sided Jacobi rotations, and truncated pseudoinverses.
//!
//! Everything here is written for tall-and-thin or small square matrices,
//! which is the shape regime of this crate: design blocks are `N x P` with
//! `P << N`, and trace factors are `N x R` with `R << N`.

use crate::scalar::Scalar;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("need at least as many rows as columns, got {rows}x{cols}")]
    Underdetermined { rows: usize, cols: usize },
    #[error("rank-deficient factor: column {col} is numerically dependent")]
    RankDeficient { col: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Relative threshold under which a triangular diagonal entry counts as zero.
pub const RANK_RTOL: f64 = 1e-12;

/// Householder QR factorization of a tall matrix (`nrows >= ncols`).
///
/// Reflectors are stored below the diagonal in the packed matrix, `R` in the
/// upper triangle. `Q` is applied implicitly.
#[derive(Debug, Clone)]
pub struct QrFactor<F> {
    packed: Array2<F>,
    beta: Vec<F>,
    nrows: usize,
    ncols: usize,
}

impl<F: Scalar> QrFactor<F> {
    pub fn new(a: Array2<F>) -> Result<Self, LinalgError> {
        let (n, p) = a.dim();
        if n < p {
            return Err(LinalgError::Underdetermined { rows: n, cols: p });
        }
        let mut packed = a;
        let mut beta = vec![F::zero(); p];
        for k in 0..p {
            beta[k] = reflect_column(&mut packed, k, k);
            if beta[k] != F::zero() {
                apply_reflector_to_trailing(&mut packed, k, k);
            }
        }
        Ok(Self { packed, beta, nrows: n, ncols: p })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// `v <- Q^T v`.
    pub fn apply_qt(&self, v: &mut Array1<F>) {
        assert_eq!(v.len(), self.nrows);
        for k in 0..self.ncols {
            self.apply_single(v, k);
        }
    }

    /// `v <- Q v`.
    pub fn apply_q(&self, v: &mut Array1<F>) {
        assert_eq!(v.len(), self.nrows);
        for k in (0..self.ncols).rev() {
            self.apply_single(v, k);
        }
    }

    fn apply_single(&self, v: &mut Array1<F>, k: usize) {
        let b = self.beta[k];
        if b == F::zero() {
            return;
        }
        let mut s = v[k];
        for i in k + 1..self.nrows {
            s += self.packed[[i, k]] * v[i];
        }
        s *= b;
        v[k] -= s;
        for i in k + 1..self.nrows {
            let w = self.packed[[i, k]];
            v[i] -= s * w;
        }
    }

    /// Upper-triangular factor, `ncols x ncols`.
    pub fn r(&self) -> Array2<F> {
        let p = self.ncols;
        let mut r = Array2::zeros((p, p));
        for i in 0..p {
            for j in i..p {
                r[[i, j]] = self.packed[[i, j]];
            }
        }
        r
    }

    /// Orthonormal `nrows x ncols` basis of the column space.
    pub fn thin_q(&self) -> Array2<F> {
        let mut q = Array2::zeros((self.nrows, self.ncols));
        for k in 0..self.ncols {
            let mut e = Array1::zeros(self.nrows);
            e[k] = F::one();
            self.apply_q(&mut e);
            q.column_mut(k).assign(&e);
        }
        q
    }

    /// Index of the first numerically dependent column, if any.
    pub fn dependent_column(&self, rtol: F) -> Option<usize> {
        let p = self.ncols;
        let mut dmax = F::zero();
        for i in 0..p {
            dmax = dmax.max(self.packed[[i, i]].abs());
        }
        (0..p).find(|&i| self.packed[[i, i]].abs() <= rtol * dmax)
    }

    /// Minimum-norm-residual solution of `min ||A x - b||_2`.
    pub fn solve(&self, b: &Array1<F>) -> Result<Array1<F>, LinalgError> {
        if b.len() != self.nrows {
            return Err(LinalgError::ShapeMismatch(format!(
                "rhs has {} entries, matrix has {} rows",
                b.len(),
                self.nrows
            )));
        }
        if let Some(col) = self.dependent_column(F::from_f64_lossy(RANK_RTOL)) {
            return Err(LinalgError::RankDeficient { col });
        }
        let mut c = b.clone();
        self.apply_qt(&mut c);
        let mut x = Array1::zeros(self.ncols);
        for i in (0..self.ncols).rev() {
            let mut s = c[i];
            for j in i + 1..self.ncols {
                s -= self.packed[[i, j]] * x[j];
            }
            x[i] = s / self.packed[[i, i]];
        }
        Ok(x)
    }

    /// Row sums of squares of `R^{-1}`; these are the diagonal entries of
    /// `(A^T A)^{-1}` when `A` has full column rank.
    pub fn normal_matrix_inverse_diagonal(&self) -> Result<Array1<F>, LinalgError> {
        let rinv = self.r_inverse()?;
        let p = self.ncols;
        let mut d = Array1::zeros(p);
        for i in 0..p {
            let mut acc = F::zero();
            for j in i..p {
                acc += rinv[[i, j]] * rinv[[i, j]];
            }
            d[i] = acc;
        }
        Ok(d)
    }

    /// Inverse of the upper-triangular factor.
    pub fn r_inverse(&self) -> Result<Array2<F>, LinalgError> {
        if let Some(col) = self.dependent_column(F::from_f64_lossy(RANK_RTOL)) {
            return Err(LinalgError::RankDeficient { col });
        }
        let p = self.ncols;
        let mut inv = Array2::zeros((p, p));
        for j in (0..p).rev() {
            inv[[j, j]] = F::one() / self.packed[[j, j]];
            for i in (0..j).rev() {
                let mut s = F::zero();
                for k in i + 1..=j {
                    s += self.packed[[i, k]] * inv[[k, j]];
                }
                inv[[i, j]] = -s / self.packed[[i, i]];
            }
        }
        Ok(inv)
    }
}

/// Build the Householder reflector that zeroes `packed[(row+1).., col]`,
/// leaving `R[row, col]` on the diagonal position and the scaled reflector
/// tail below it. Returns the reflector scale (`0` for an all-zero column).
fn reflect_column<F: Scalar>(packed: &mut Array2<F>, row: usize, col: usize) -> F {
    let n = packed.nrows();
    let x0 = packed[[row, col]];
    let mut tail = F::zero();
    for i in row + 1..n {
        tail += packed[[i, col]] * packed[[i, col]];
    }
    let norm = (x0 * x0 + tail).sqrt();
    if norm == F::zero() {
        return F::zero();
    }
    if tail == F::zero() {
        // Column already lives on the diagonal; reflect only if the sign
        // convention requires it. Keep it simple: no reflector needed.
        return F::zero();
    }
    let alpha = if x0 >= F::zero() { -norm } else { norm };
    let v0 = x0 - alpha;
    packed[[row, col]] = alpha;
    for i in row + 1..n {
        let w = packed[[i, col]] / v0;
        packed[[i, col]] = w;
    }
    (norm + x0.abs()) / norm
}

/// Apply the reflector stored in column `col` (pivot row `row`) to all
/// columns right of `col`.
fn apply_reflector_to_trailing<F: Scalar>(packed: &mut Array2<F>, row: usize, col: usize) {
    let (n, p) = packed.dim();
    // beta recomputed from the stored tail (w0 = 1 implicit).
    let mut wsq = F::one();
    for i in row + 1..n {
        wsq += packed[[i, col]] * packed[[i, col]];
    }
    let beta = F::from_f64_lossy(2.0) / wsq;
    for j in col + 1..p {
        let mut s = packed[[row, j]];
        for i in row + 1..n {
            s += packed[[i, col]] * packed[[i, j]];
        }
        s *= beta;
        packed[[row, j]] -= s;
        for i in row + 1..n {
            let w = packed[[i, col]];
            packed[[i, j]] -= s * w;
        }
    }
}

/// Column-pivoted Householder QR with early termination.
///
/// Stops once the largest remaining column norm falls below
/// `stop_rtol * (largest initial column norm)`; the number of completed steps
/// is the numerical rank estimate.
#[derive(Debug, Clone)]
pub struct PivotedQr<F> {
    packed: Array2<F>,
    beta: Vec<F>,
    perm: Vec<usize>,
    rank: usize,
    nrows: usize,
    ncols: usize,
}

impl<F: Scalar> PivotedQr<F> {
    pub fn new(a: Array2<F>, stop_rtol: F) -> Self {
        let (n, p) = a.dim();
        let kmax = n.min(p);
        let mut packed = a;
        let mut beta = vec![F::zero(); kmax];
        let mut perm: Vec<usize> = (0..p).collect();
        let mut norms2 = Array1::zeros(p);
        let mut orig2 = Array1::zeros(p);
        for j in 0..p {
            let nj: F = packed.column(j).iter().map(|&v| v * v).sum();
            norms2[j] = nj;
            orig2[j] = nj;
        }
        let init_max = norms2.iter().cloned().fold(F::zero(), F::max);
        let stop2 = init_max * stop_rtol * stop_rtol;
        let mut rank = 0;
        for k in 0..kmax {
            // pivot: largest remaining squared norm
            let mut jmax = k;
            let mut vmax = norms2[k];
            for j in k + 1..p {
                if norms2[j] > vmax {
                    vmax = norms2[j];
                    jmax = j;
                }
            }
            if vmax <= stop2 || vmax == F::zero() {
                break;
            }
            if jmax != k {
                swap_columns(&mut packed, k, jmax);
                perm.swap(k, jmax);
                norms2.swap(k, jmax);
                orig2.swap(k, jmax);
            }
            beta[k] = reflect_column(&mut packed, k, k);
            if beta[k] != F::zero() {
                apply_reflector_to_trailing(&mut packed, k, k);
            }
            rank = k + 1;
            // downdate remaining norms, recomputing when cancellation bites
            for j in k + 1..p {
                let rkj = packed[[k, j]];
                norms2[j] -= rkj * rkj;
                let guard = F::from_f64_lossy(1e-4);
                if norms2[j] < guard * orig2[j] {
                    let mut fresh = F::zero();
                    for i in k + 1..n {
                        fresh += packed[[i, j]] * packed[[i, j]];
                    }
                    norms2[j] = fresh;
                    orig2[j] = fresh;
                }
            }
        }
        Self { packed, beta, perm, rank, nrows: n, ncols: p }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Orthonormal basis of the captured column space, `nrows x rank`.
    pub fn range_basis(&self) -> Array2<F> {
        let mut q = Array2::zeros((self.nrows, self.rank));
        for k in 0..self.rank {
            let mut e = Array1::zeros(self.nrows);
            e[k] = F::one();
            for kk in (0..self.rank).rev() {
                let b = self.beta[kk];
                if b == F::zero() {
                    continue;
                }
                let mut s = e[kk];
                for i in kk + 1..self.nrows {
                    s += self.packed[[i, kk]] * e[i];
                }
                s *= b;
                e[kk] -= s;
                for i in kk + 1..self.nrows {
                    let w = self.packed[[i, kk]];
                    e[i] -= s * w;
                }
            }
            q.column_mut(k).assign(&e);
        }
        q
    }

    /// The captured rows of `R` with the column permutation undone:
    /// a `rank x ncols` matrix such that `A ~= range_basis() * captured_rows()`.
    pub fn captured_rows(&self) -> Array2<F> {
        let mut rr = Array2::zeros((self.rank, self.ncols));
        for i in 0..self.rank {
            for j in i..self.ncols {
                rr[[i, self.perm[j]]] = self.packed[[i, j]];
            }
        }
        rr
    }
}

fn swap_columns<F: Scalar>(a: &mut Array2<F>, i: usize, j: usize) {
    if i == j {
        return;
    }
    for r in 0..a.nrows() {
        let t = a[[r, i]];
        a[[r, i]] = a[[r, j]];
        a[[r, j]] = t;
    }
}

/// Thin singular value decomposition `a = u * diag(s) * vt`.
///
/// `u` is `nrows x k`, `s` has length `k`, `vt` is `k x ncols` with
/// `k = min(nrows, ncols)`. Columns of `u` (rows of `vt`) associated with a
/// zero singular value are zeroed out rather than completed to a full basis.
#[derive(Debug, Clone)]
pub struct Svd<F> {
    pub u: Array2<F>,
    pub s: Array1<F>,
    pub vt: Array2<F>,
}

pub fn thin_svd<F: Scalar>(a: &ArrayView2<F>) -> Svd<F> {
    let (n, p) = a.dim();
    if n >= p {
        let qr = QrFactor::new(a.to_owned()).expect("tall matrix");
        let r = qr.r();
        let small = jacobi_svd_square(r);
        let u = qr.thin_q().dot(&small.u);
        Svd { u, s: small.s, vt: small.vt }
    } else {
        let at = a.t().to_owned();
        let svd_t = thin_svd(&at.view());
        Svd { u: svd_t.vt.t().to_owned(), s: svd_t.s, vt: svd_t.u.t().to_owned() }
    }
}

/// One-sided Jacobi SVD of a square matrix. High relative accuracy, fine for
/// the small factors this crate produces (`R x R` with `R` in the hundreds).
fn jacobi_svd_square<F: Scalar>(m: Array2<F>) -> Svd<F> {
    let p = m.ncols();
    let mut work = m;
    let mut v = Array2::eye(p);
    let eps = F::epsilon();
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for i in 0..p.saturating_sub(1) {
            for j in i + 1..p {
                let mut aa = F::zero();
                let mut bb = F::zero();
                let mut cc = F::zero();
                for r in 0..p {
                    let x = work[[r, i]];
                    let y = work[[r, j]];
                    aa += x * x;
                    bb += y * y;
                    cc += x * y;
                }
                if cc == F::zero() || cc * cc <= eps * eps * aa * bb {
                    continue;
                }
                let zeta = (bb - aa) / (F::from_f64_lossy(2.0) * cc);
                let t = if zeta >= F::zero() {
                    F::one() / (zeta + (F::one() + zeta * zeta).sqrt())
                } else {
                    -F::one() / (-zeta + (F::one() + zeta * zeta).sqrt())
                };
                let cs = F::one() / (F::one() + t * t).sqrt();
                let sn = cs * t;
                for r in 0..p {
                    let x = work[[r, i]];
                    let y = work[[r, j]];
                    work[[r, i]] = cs * x - sn * y;
                    work[[r, j]] = sn * x + cs * y;
                }
                for r in 0..p {
                    let x = v[[r, i]];
                    let y = v[[r, j]];
                    v[[r, i]] = cs * x - sn * y;
                    v[[r, j]] = sn * x + cs * y;
                }
                rotated = true;
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma: Vec<(F, usize)> = (0..p)
        .map(|j| {
            let nj: F = work.column(j).iter().map(|&x| x * x).sum();
            (nj.sqrt(), j)
        })
        .collect();
    sigma.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut u = Array2::zeros((p, p));
    let mut s = Array1::zeros(p);
    let mut vt = Array2::zeros((p, p));
    let smax = sigma.first().map(|x| x.0).unwrap_or(F::zero());
    let tiny = smax * eps * F::from_f64_lossy(p as f64);
    for (out, &(sv, src)) in sigma.iter().enumerate() {
        s[out] = sv;
        if sv > tiny && sv > F::zero() {
            for r in 0..p {
                u[[r, out]] = work[[r, src]] / sv;
            }
        }
        for r in 0..p {
            vt[[out, r]] = v[[r, src]];
        }
    }
    Svd { u, s, vt }
}

impl<F: Scalar> Svd<F> {
    /// Number of singular values above `rtol * s_max`.
    pub fn rank(&self, rtol: F) -> usize {
        let smax = self.s.first().cloned().unwrap_or(F::zero());
        if smax == F::zero() {
            return 0;
        }
        self.s.iter().filter(|&&x| x > rtol * smax).count()
    }

    /// Moore-Penrose pseudoinverse with singular values below
    /// `rtol * s_max` truncated to zero.
    pub fn pseudoinverse(&self, rtol: F) -> Array2<F> {
        let k = self.rank(rtol);
        let (n, _) = self.u.dim();
        let p = self.vt.ncols();
        if k == 0 {
            return Array2::zeros((p, n));
        }
        // V_k * S_k^{-1} * U_k^T
        let uk = self.u.slice(s![.., ..k]);
        let vtk = self.vt.slice(s![..k, ..]);
        let mut scaled = vtk.t().to_owned(); // p x k
        for j in 0..k {
            let inv = F::one() / self.s[j];
            scaled.column_mut(j).mapv_inplace(|x| x * inv);
        }
        scaled.dot(&uk.t())
    }
}

/// Truncated pseudoinverse of an arbitrary dense matrix.
pub fn pseudoinverse<F: Scalar>(a: &ArrayView2<F>, rtol: F) -> Array2<F> {
    thin_svd(a).pseudoinverse(rtol)
}

/// Weighted inner product `sum_i w_i x_i y_i`.
pub fn weighted_dot<F: Scalar>(x: &ArrayView1<F>, y: &ArrayView1<F>, w: &ArrayView1<F>) -> F {
    debug_assert_eq!(x.len(), y.len());
    debug_assert_eq!(x.len(), w.len());
    let mut acc = F::zero();
    for i in 0..x.len() {
        acc += w[i] * x[i] * y[i];
    }
    acc
}
