use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, HouseholderQr};
use crate::scalar::Real;

/// Pivot threshold, relative to the largest diagonal entry, for an
/// unpenalized Gram matrix to count as singular.
const GRAM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShockResidualMethod {
    Ridge,
    Projection,
}

/// Estimated unpredictable part of the shocks, `[T x p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockResidual<T: Real> {
    pub e_hat: Array2<T>,
    pub method: ShockResidualMethod,
    pub lambda: f64,
    pub q_matrix: Option<Array2<T>>,
}

/// Per-period ridge solve `(sum_i S S' + lambda I) E_t = sum_i S (Z - W' pi)`.
///
/// Uses the native shares and is unweighted.
pub fn ridge_shock_residual<T: Real>(
    ds: &PanelDataset<T>,
    pi_hat: ArrayView1<T>,
    lambda: f64,
) -> Result<ShockResidual<T>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!(
            "ridge penalty must be finite and non-negative, got {lambda}"
        )));
    }
    if pi_hat.len() != ds.d() {
        return Err(Error::Dimension(format!(
            "{} instrument coefficients for {} controls",
            pi_hat.len(),
            ds.d()
        )));
    }
    let (nt, p) = (ds.periods(), ds.p());
    let mut e_hat = Array2::zeros((nt, p));
    for t in 0..nt {
        let s_t = ds.shares().slice(s![.., t, ..]);
        let w_t = ds.controls().slice(s![.., t, ..]);
        let resid: Array1<T> = &ds.instrument().column(t) - &w_t.dot(&pi_hat);
        let rhs = s_t.t().dot(&resid);
        let mut gram = s_t.t().dot(&s_t);
        for j in 0..p {
            gram[[j, j]] += T::lit(lambda);
        }
        let tol = if lambda == 0.0 { T::lit(GRAM_TOL) } else { T::zero() };
        let l = cholesky(&gram, tol).map_err(|_| Error::SingularGram { period: t })?;
        e_hat.row_mut(t).assign(&cholesky_solve(&l, rhs.view()));
    }
    Ok(ShockResidual {
        e_hat,
        method: ShockResidualMethod::Ridge,
        lambda,
        q_matrix: None,
    })
}

/// Residual of each period's shocks after projecting on the columns of `q`.
pub fn projection_shock_residual<T: Real>(
    shock_z: ArrayView2<T>,
    q: ArrayView2<T>,
) -> Result<ShockResidual<T>> {
    let (nt, p) = shock_z.dim();
    if q.nrows() != p {
        return Err(Error::Dimension(format!(
            "projection matrix has {} rows for {} sectors",
            q.nrows(),
            p
        )));
    }
    let k = q.ncols();
    if k > p {
        return Err(Error::RankDeficient);
    }
    let mut e_hat = Array2::zeros((nt, p));
    if k == 0 {
        e_hat.assign(&shock_z);
    } else {
        let qr = HouseholderQr::new(q.to_owned());
        let r = qr.r();
        let max = (0..k).fold(T::zero(), |m, j| m.max(r[[j, j]].abs()));
        if (0..k).any(|j| !(r[[j, j]].abs() > T::lit(1e-10) * max)) {
            return Err(Error::RankDeficient);
        }
        for t in 0..nt {
            e_hat.row_mut(t).assign(&qr.residual(shock_z.row(t)));
        }
    }
    Ok(ShockResidual {
        e_hat,
        method: ShockResidualMethod::Projection,
        lambda: 0.0,
        q_matrix: Some(q.to_owned()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ones_column_demeans() {
        let z = array![[1.0_f64, 2.0, 6.0], [0.0, -3.0, 0.0]];
        let e = projection_shock_residual(z.view(), Array2::ones((3, 1)).view()).unwrap();
        for t in 0..2 {
            let mean = z.row(t).mean().unwrap();
            for j in 0..3 {
                assert!((e.e_hat[[t, j]] - (z[[t, j]] - mean)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn square_q_annihilates() {
        let z = array![[1.0_f64, 2.0], [3.0, -1.0]];
        let q = array![[1.0_f64, 2.0], [0.5, -1.0]];
        let e = projection_shock_residual(z.view(), q.view()).unwrap();
        assert!(e.e_hat.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn collinear_q_is_rank_deficient() {
        let q = array![[1.0_f64, 2.0], [1.0, 2.0], [1.0, 2.0]];
        assert!(matches!(
            projection_shock_residual(Array2::<f64>::zeros((1, 3)).view(), q.view()),
            Err(Error::RankDeficient)
        ));
    }

    #[test]
    fn unpenalized_singular_gram_asks_for_ridge() {
        // two units, two sectors, identical share rows
        let mut p = crate::data::fixtures::tiny().into_parts();
        p.s_z = ndarray::Array3::from_elem((2, 2, 2), 0.5);
        let ds = p.build().unwrap();
        let err = ridge_shock_residual(&ds, array![0.0_f64].view(), 0.0).unwrap_err();
        assert!(matches!(err, Error::SingularGram { period: 0 }));
        assert!(ridge_shock_residual(&ds, array![0.0_f64].view(), 0.1).is_ok());
    }
}
