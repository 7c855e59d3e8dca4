//! Small dense linear algebra kernels, generic over [`Real`].
//!
//! The designs handled here are tall and skinny (thousands of rows, a handful
//! of controls) or moderately sized square Gram matrices, so plain Householder
//! QR, Cholesky and Jacobi iterations are sufficient.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Hard failure threshold on the (column-equilibrated) condition number.
pub const COND_FAIL: f64 = 1e12;
/// Above this condition number a warning is recorded.
pub const COND_WARN: f64 = 1e8;

/// Householder QR factorisation of an `m x n` matrix with `m >= n`.
#[derive(Debug, Clone)]
pub struct HouseholderQr<T: Real> {
    r: Array2<T>,
    vs: Vec<Array1<T>>,
    betas: Vec<T>,
    m: usize,
}

impl<T: Real> HouseholderQr<T> {
    pub fn new(mut a: Array2<T>) -> Self {
        let (m, n) = a.dim();
        assert!(m >= n, "QR needs at least as many rows as columns");
        let mut vs = Vec::with_capacity(n);
        let mut betas = Vec::with_capacity(n);
        for k in 0..n {
            let x = a.slice(s![k.., k]).to_owned();
            let norm = x.dot(&x).sqrt();
            if norm == T::zero() {
                vs.push(Array1::zeros(m - k));
                betas.push(T::zero());
                continue;
            }
            let alpha = if x[0] >= T::zero() { -norm } else { norm };
            let mut v = x;
            v[0] -= alpha;
            let vv = v.dot(&v);
            let beta = if vv > T::zero() { T::lit(2.0) / vv } else { T::zero() };
            for c in k..n {
                let mut col = a.slice_mut(s![k.., c]);
                let proj = v.dot(&col) * beta;
                col.scaled_add(-proj, &v);
            }
            vs.push(v);
            betas.push(beta);
        }
        let r = a.slice(s![..n, ..n]).to_owned();
        let mut r = r;
        for i in 0..n {
            for j in 0..i {
                r[[i, j]] = T::zero();
            }
        }
        Self { r, vs, betas, m }
    }

    pub fn r(&self) -> &Array2<T> {
        &self.r
    }

    pub fn ncols(&self) -> usize {
        self.r.ncols()
    }

    /// Overwrites `b` with `Q' b`.
    pub fn apply_qt(&self, b: &mut Array1<T>) {
        assert_eq!(b.len(), self.m);
        for (k, (v, &beta)) in self.vs.iter().zip(&self.betas).enumerate() {
            if beta == T::zero() {
                continue;
            }
            let mut tail = b.slice_mut(s![k..]);
            let proj = v.dot(&tail) * beta;
            tail.scaled_add(-proj, v);
        }
    }

    /// Overwrites `b` with `Q b`.
    pub fn apply_q(&self, b: &mut Array1<T>) {
        assert_eq!(b.len(), self.m);
        for (k, (v, &beta)) in self.vs.iter().zip(&self.betas).enumerate().rev() {
            if beta == T::zero() {
                continue;
            }
            let mut tail = b.slice_mut(s![k..]);
            let proj = v.dot(&tail) * beta;
            tail.scaled_add(-proj, v);
        }
    }

    /// Least-squares coefficients `argmin ||A x - b||`.
    pub fn solve(&self, b: ArrayView1<T>) -> Array1<T> {
        let n = self.ncols();
        let mut qtb = b.to_owned();
        self.apply_qt(&mut qtb);
        solve_upper(&self.r, qtb.slice(s![..n]))
    }

    /// `b - A (A'A)^{-1} A' b`, computed by zeroing the leading block of `Q' b`.
    pub fn residual(&self, b: ArrayView1<T>) -> Array1<T> {
        let n = self.ncols();
        let mut qtb = b.to_owned();
        self.apply_qt(&mut qtb);
        qtb.slice_mut(s![..n]).fill(T::zero());
        self.apply_q(&mut qtb);
        qtb
    }
}

/// Back substitution for an upper-triangular system.
pub fn solve_upper<T: Real>(r: &Array2<T>, y: ArrayView1<T>) -> Array1<T> {
    let n = r.ncols();
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let mut acc = y[i];
        for j in i + 1..n {
            acc -= r[[i, j]] * x[j];
        }
        x[i] = acc / r[[i, i]];
    }
    x
}

/// Thin singular value decomposition by one-sided Jacobi rotations.
#[derive(Debug, Clone)]
pub struct Svd<T: Real> {
    pub singular_values: Array1<T>,
    /// Left singular vectors, `m x n` (columns with zero singular value are zero).
    pub u: Array2<T>,
    /// Right singular vectors, `n x n`.
    pub v: Array2<T>,
}

impl<T: Real> Svd<T> {
    pub fn new(a: ArrayView2<T>) -> Self {
        let (m, n) = a.dim();
        let mut u = if m >= n {
            a.to_owned()
        } else {
            let mut padded = Array2::zeros((n, n));
            padded.slice_mut(s![..m, ..]).assign(&a);
            padded
        };
        let rows = u.nrows();
        let mut v = Array2::eye(n);
        let eps = T::epsilon();
        for _sweep in 0..60 {
            let mut rotated = false;
            for p in 0..n {
                for q in p + 1..n {
                    let (mut alpha, mut beta, mut gamma) = (T::zero(), T::zero(), T::zero());
                    for i in 0..rows {
                        let up = u[[i, p]];
                        let uq = u[[i, q]];
                        alpha += up * up;
                        beta += uq * uq;
                        gamma += up * uq;
                    }
                    if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                    let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let sn = c * t;
                    for i in 0..rows {
                        let up = u[[i, p]];
                        let uq = u[[i, q]];
                        u[[i, p]] = c * up - sn * uq;
                        u[[i, q]] = sn * up + c * uq;
                    }
                    for i in 0..n {
                        let vp = v[[i, p]];
                        let vq = v[[i, q]];
                        v[[i, p]] = c * vp - sn * vq;
                        v[[i, q]] = sn * vp + c * vq;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let mut sv = Array1::zeros(n);
        for j in 0..n {
            let norm = u.column(j).dot(&u.column(j)).sqrt();
            sv[j] = norm;
            if norm > T::zero() {
                u.column_mut(j).mapv_inplace(|x| x / norm);
            }
        }
        let u = if m < n { u.slice(s![..m, ..]).to_owned() } else { u };
        Self { singular_values: sv, u, v }
    }

    pub fn condition_number(&self) -> T {
        let smax = self.singular_values.iter().fold(T::zero(), |a, &b| a.max(b));
        let smin = self
            .singular_values
            .iter()
            .fold(T::infinity(), |a, &b| a.min(b));
        if smin == T::zero() {
            T::infinity()
        } else {
            smax / smin
        }
    }

    /// Index of the smallest singular value.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (j, &s) in self.singular_values.iter().enumerate() {
            if s < self.singular_values[best] {
                best = j;
            }
        }
        best
    }
}

/// Minimum-norm least-squares solution of `A x = b` (rank-deficient allowed).
pub fn lstsq_min_norm<T: Real>(a: ArrayView2<T>, b: ArrayView1<T>) -> Array1<T> {
    let svd = Svd::new(a);
    let smax = svd
        .singular_values
        .iter()
        .fold(T::zero(), |acc, &s| acc.max(s));
    let cutoff = smax * T::lit(1e-12);
    let n = a.ncols();
    let mut x = Array1::zeros(n);
    for j in 0..n {
        let s = svd.singular_values[j];
        if s > cutoff && s > T::zero() {
            let coef = svd.u.column(j).dot(&b) / s;
            x.scaled_add(coef, &svd.v.column(j));
        }
    }
    x
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// Fails with the index of the first pivot that drops below
/// `rel_tol * max_diag`.
pub fn cholesky<T: Real>(a: &Array2<T>, rel_tol: T) -> std::result::Result<Array2<T>, usize> {
    let n = a.nrows();
    let max_diag = (0..n).fold(T::zero(), |m, i| m.max(a[[i, i]].abs()));
    let tol = rel_tol * max_diag;
    let mut l = Array2::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > tol) || d <= T::zero() {
            return Err(j);
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in j + 1..n {
            let mut acc = a[[i, j]];
            for k in 0..j {
                acc -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = acc / djj;
        }
    }
    Ok(l)
}

/// Solves `L L' x = b` given the Cholesky factor.
pub fn cholesky_solve<T: Real>(l: &Array2<T>, b: ArrayView1<T>) -> Array1<T> {
    let n = l.nrows();
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let mut acc = b[i];
        for k in 0..i {
            acc -= l[[i, k]] * y[k];
        }
        y[i] = acc / l[[i, i]];
    }
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let mut acc = y[i];
        for k in i + 1..n {
            acc -= l[[k, i]] * x[k];
        }
        x[i] = acc / l[[i, i]];
    }
    x
}

/// Solves the square system `A X = B` by LU with partial pivoting.
pub fn lu_solve<T: Real>(a: ArrayView2<T>, b: ArrayView2<T>) -> Result<Array2<T>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension(format!(
            "lu_solve: A is {:?}, B is {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let mut lu = a.to_owned();
    let mut x = b.to_owned();
    let scale = lu.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let tol = scale * T::epsilon() * T::from_usize_lossy(n.max(1));
    for k in 0..n {
        let mut piv = k;
        for i in k + 1..n {
            if lu[[i, k]].abs() > lu[[piv, k]].abs() {
                piv = i;
            }
        }
        if !(lu[[piv, k]].abs() > tol) {
            return Err(Error::SingularDesign {
                condition: f64::INFINITY,
                columns: vec![format!("column {k}")],
            });
        }
        if piv != k {
            for j in 0..n {
                lu.swap([k, j], [piv, j]);
            }
            for j in 0..x.ncols() {
                x.swap([k, j], [piv, j]);
            }
        }
        let pivot = lu[[k, k]];
        for i in k + 1..n {
            let f = lu[[i, k]] / pivot;
            if f == T::zero() {
                continue;
            }
            for j in k..n {
                let v = lu[[k, j]];
                lu[[i, j]] -= f * v;
            }
            for j in 0..x.ncols() {
                let v = x[[k, j]];
                x[[i, j]] -= f * v;
            }
        }
    }
    for c in 0..x.ncols() {
        for i in (0..n).rev() {
            let mut acc = x[[i, c]];
            for j in i + 1..n {
                acc -= lu[[i, j]] * x[[j, c]];
            }
            x[[i, c]] = acc / lu[[i, i]];
        }
    }
    Ok(x)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (unsorted) and eigenvectors as columns.
pub fn symmetric_eigen<T: Real>(a: ArrayView2<T>) -> (Array1<T>, Array2<T>) {
    let n = a.nrows();
    let mut m = a.to_owned();
    let mut v = Array2::eye(n);
    for _sweep in 0..100 {
        let off: T = ordered_offdiag(&m);
        if off <= T::epsilon() * T::epsilon() * frob2(&m) || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - sn * mkq;
                    m[[k, q]] = sn * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - sn * mqk;
                    m[[q, k]] = sn * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - sn * vkq;
                    v[[k, q]] = sn * vkp + c * vkq;
                }
            }
        }
    }
    (m.diag().to_owned(), v)
}

fn ordered_offdiag<T: Real>(m: &Array2<T>) -> T {
    let n = m.nrows();
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += m[[i, j]] * m[[i, j]];
            }
        }
    }
    acc
}

fn frob2<T: Real>(m: &Array2<T>) -> T {
    m.iter().fold(T::zero(), |a, &v| a + v * v)
}

/// Weighted least squares on a fixed design, factorised once and reused for
/// many right-hand sides.
///
/// Rows are scaled by `sqrt(weight)` and columns are equilibrated to unit
/// norm before factorising, so the reported condition number is insensitive
/// to the units of individual controls.
#[derive(Debug, Clone)]
pub struct WeightedLs<T: Real> {
    design: Array2<T>,
    sqrt_w: Array1<T>,
    col_scale: Array1<T>,
    qr: Option<HouseholderQr<T>>,
    condition: T,
}

impl<T: Real> WeightedLs<T> {
    /// Factorises `design` (rows x d) under `weights`. `names` label the
    /// columns in singular-design errors.
    pub fn new(design: ArrayView2<T>, weights: ArrayView1<T>, names: &[String]) -> Result<Self> {
        let (rows, d) = design.dim();
        if weights.len() != rows {
            return Err(Error::Dimension(format!(
                "{} weights for {} rows",
                weights.len(),
                rows
            )));
        }
        let sqrt_w = weights.mapv(|w| w.sqrt());
        if d == 0 {
            return Ok(Self {
                design: design.to_owned(),
                sqrt_w,
                col_scale: Array1::zeros(0),
                qr: None,
                condition: T::one(),
            });
        }
        if rows < d {
            return Err(Error::SingularDesign {
                condition: f64::INFINITY,
                columns: names.to_vec(),
            });
        }
        let mut scaled = design.to_owned();
        for (mut row, &sw) in scaled.axis_iter_mut(Axis(0)).zip(sqrt_w.iter()) {
            row.mapv_inplace(|v| v * sw);
        }
        let mut col_scale = Array1::from_elem(d, T::one());
        for j in 0..d {
            let norm = scaled.column(j).dot(&scaled.column(j)).sqrt();
            if norm > T::zero() {
                col_scale[j] = T::one() / norm;
                scaled.column_mut(j).mapv_inplace(|v| v / norm);
            }
        }
        let qr = HouseholderQr::new(scaled);
        let svd = Svd::new(qr.r().view());
        let condition = svd.condition_number();
        if !(condition.as_f64() <= COND_FAIL) {
            let vmin = svd.v.column(svd.argmin()).to_owned();
            let columns = (0..d)
                .filter(|&j| vmin[j].abs() >= T::lit(0.1))
                .map(|j| names.get(j).cloned().unwrap_or_else(|| format!("column {j}")))
                .collect();
            return Err(Error::SingularDesign {
                condition: condition.as_f64(),
                columns,
            });
        }
        Ok(Self {
            design: design.to_owned(),
            sqrt_w,
            col_scale,
            qr: Some(qr),
            condition,
        })
    }

    pub fn condition_number(&self) -> T {
        self.condition
    }

    pub fn ncols(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> &Array2<T> {
        &self.design
    }

    /// Weighted regression of `v` on the design: `(coef, v - design * coef)`.
    pub fn fit(&self, v: ArrayView1<T>) -> (Array1<T>, Array1<T>) {
        match &self.qr {
            None => (Array1::zeros(0), v.to_owned()),
            Some(qr) => {
                let b = &v * &self.sqrt_w;
                let coef = qr.solve(b.view()) * &self.col_scale;
                let resid = &v - &self.design.dot(&coef);
                (coef, resid)
            }
        }
    }
}
