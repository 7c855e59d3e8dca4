//! Weighted residualization and just-identified TSLS with a Bartik instrument.

use ndarray::{Array1, ArrayView1, ArrayView2, Zip};
use serde::Serialize;

use crate::data::StackedDesign;
use crate::error::{Error, Result};
use crate::linalg::{WeightedLs, COND_WARN};
use crate::scalar::Real;

/// Relative size below which the first-stage covariance counts as zero.
pub const DEGENERATE_FIRST_STAGE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    /// Condition number of the column-equilibrated weighted control matrix.
    pub condition_number: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TslsFit<T: Real> {
    pub beta: T,
    pub gamma_s: Array1<T>,
    /// Coefficients of the instrument regressed on the controls.
    pub pi_hat: Array1<T>,
    pub eps_hat: Array1<T>,
    /// Residualized instrument `Z - W pi_hat`.
    pub z_dot: Array1<T>,
    /// `sum w * z_dot * x`.
    pub first_stage_cov: T,
    pub condition_report: ConditionReport,
}

fn default_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("column {j}")).collect()
}

/// Weighted least squares of `v` on `w`: returns `(coef, v - w coef)`.
pub fn residualize_on_controls<T: Real>(
    v: ArrayView1<T>,
    w: ArrayView2<T>,
    weight: ArrayView1<T>,
) -> Result<(Array1<T>, Array1<T>)> {
    let ls = WeightedLs::new(w, weight, &default_names(w.ncols()))?;
    if v.len() != w.nrows() {
        return Err(Error::Dimension(format!(
            "vector of length {} against {} design rows",
            v.len(),
            w.nrows()
        )));
    }
    Ok(ls.fit(v))
}

pub(crate) fn weighted_dot<T: Real>(w: ArrayView1<T>, a: ArrayView1<T>, b: ArrayView1<T>) -> T {
    let mut acc = T::zero();
    Zip::from(&w).and(&a).and(&b).for_each(|&w, &a, &b| acc += w * a * b);
    acc
}

/// Fits the just-identified weighted TSLS of `y` on `x` and the controls.
pub fn fit_tsls<T: Real>(design: &StackedDesign<T>) -> Result<TslsFit<T>> {
    fit_arrays(
        design.y.view(),
        design.x.view(),
        design.w.view(),
        design.z.view(),
        design.weight.view(),
        &design.control_names,
    )
}

pub(crate) fn fit_arrays<T: Real>(
    y: ArrayView1<T>,
    x: ArrayView1<T>,
    w: ArrayView2<T>,
    z: ArrayView1<T>,
    weight: ArrayView1<T>,
    names: &[String],
) -> Result<TslsFit<T>> {
    let ls = WeightedLs::new(w, weight, names)?;
    let (pi_hat, z_dot) = ls.fit(z);
    let cov = weighted_dot(weight, z_dot.view(), x);
    let zz = weighted_dot(weight, z_dot.view(), z_dot.view()).sqrt();
    let xx = weighted_dot(weight, x, x).sqrt();
    if !(cov.abs() > T::lit(DEGENERATE_FIRST_STAGE) * zz * xx) {
        return Err(Error::DegenerateInstrument { cov: cov.as_f64() });
    }
    let beta = weighted_dot(weight, z_dot.view(), y) / cov;
    let y_net = &y - &x.mapv(|v| v * beta);
    let (gamma_s, eps_hat) = ls.fit(y_net.view());

    let condition = ls.condition_number().as_f64();
    let warning = (condition > COND_WARN).then(|| {
        let msg = format!("control matrix is ill-conditioned (condition number {condition:.3e})");
        log::warn!("{msg}");
        msg
    });

    let fit = TslsFit {
        beta,
        gamma_s,
        pi_hat,
        eps_hat,
        z_dot,
        first_stage_cov: cov,
        condition_report: ConditionReport {
            condition_number: condition,
            warning,
        },
    };
    check_normal_equations(&fit, z, w, weight);
    Ok(fit)
}

fn check_normal_equations<T: Real>(
    fit: &TslsFit<T>,
    z: ArrayView1<T>,
    w: ArrayView2<T>,
    weight: ArrayView1<T>,
) {
    let we = &fit.eps_hat * &weight;
    let scale = |v: ArrayView1<T>| {
        Zip::from(&v)
            .and(&we)
            .fold(T::zero(), |acc, &a, &b| acc + (a * b).abs())
    };
    let tol = T::lit(1e-8);
    let mut worst = (z.dot(&we).abs(), scale(z));
    for col in w.columns() {
        let v = (col.dot(&we).abs(), scale(col));
        if v.0 > tol * v.1 && v.0 * worst.1 > worst.0 * v.1 {
            worst = v;
        }
    }
    if worst.0 > tol * worst.1 {
        log::warn!(
            "weighted normal equations hold only to {:.3e} relative",
            (worst.0 / worst.1).as_f64()
        );
    }
}
