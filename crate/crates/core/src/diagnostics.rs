//! Checks on whether TSLS can be read as a positively weighted average of
//! heterogeneous effects.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{stack_panel, PanelDataset, INTERCEPT};
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, WeightedLs};
use crate::scalar::Real;

/// Default advisory threshold on absolute share correlations.
pub const DEFAULT_CORR_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShareCorrReport {
    pub threshold: f64,
    pub max_abs_corr: f64,
    /// Sector codes of the pair attaining `max_abs_corr`, and its signed value.
    pub max_pair: Option<(String, String, f64)>,
    pub count_above: usize,
    pub pairs: usize,
    pub flagged: bool,
    /// Sectors whose residualized shares have no variation.
    pub constant_sectors: Vec<String>,
}

/// Pairwise correlations of share columns after weighted residualization on
/// the controls.
pub fn share_corr_check<T: Real>(ds: &PanelDataset<T>, threshold: f64) -> Result<ShareCorrReport> {
    let p = ds.p();
    if p < 2 {
        return Err(Error::InvalidData("share correlations need at least two sectors".into()));
    }
    let st = stack_panel(ds);
    let ls = WeightedLs::new(st.w.view(), st.weight.view(), &st.control_names)?;
    let rows = st.rows();
    let mut resid = Array2::zeros((rows, p));
    for j in 0..p {
        let (_, r) = ls.fit(st.s.column(j));
        let mean = r.sum() / T::from_usize_lossy(rows);
        resid.column_mut(j).assign(&r.mapv(|v| v - mean));
    }
    let cross = resid.t().dot(&resid);
    let scale = (0..p).fold(T::zero(), |m, j| m.max(cross[[j, j]]));
    let live: Vec<usize> = (0..p)
        .filter(|&j| cross[[j, j]] > T::lit(1e-24) * scale && cross[[j, j]] > T::zero())
        .collect();
    let constant_sectors = (0..p)
        .filter(|j| !live.contains(j))
        .map(|j| ds.sector_codes()[j].clone())
        .collect();
    let mut report = ShareCorrReport {
        threshold,
        max_abs_corr: 0.0,
        max_pair: None,
        count_above: 0,
        pairs: 0,
        flagged: false,
        constant_sectors,
    };
    for (a, &j) in live.iter().enumerate() {
        for &k in &live[a + 1..] {
            let c = (cross[[j, k]] / (cross[[j, j]] * cross[[k, k]]).sqrt()).as_f64();
            report.pairs += 1;
            if c.abs() > threshold {
                report.count_above += 1;
            }
            if report.max_pair.is_none() || c.abs() > report.max_abs_corr {
                report.max_abs_corr = c.abs();
                report.max_pair = Some((ds.sector_codes()[j].clone(), ds.sector_codes()[k].clone(), c));
            }
        }
    }
    report.flagged = report.count_above > 0;
    Ok(report)
}

/// A positive weighting `f_j(W, S)` applied sector by sector.
pub trait SectorTransform<T: Real>: Send + Sync {
    fn label(&self) -> String;
    fn eval(&self, w: ArrayView1<T>, s: ArrayView1<T>, sector: usize) -> T;
}

/// `f = 1`.
#[derive(Debug, Clone, Copy)]
pub struct Constant;

impl<T: Real> SectorTransform<T> for Constant {
    fn label(&self) -> String {
        "constant".into()
    }
    fn eval(&self, _: ArrayView1<T>, _: ArrayView1<T>, _: usize) -> T {
        T::one()
    }
}

/// `f = exp((W_c - mean) / sd)`.
#[derive(Debug, Clone)]
pub struct ExpStandardized<T: Real> {
    pub name: String,
    pub column: usize,
    pub mean: T,
    pub sd: T,
}

impl<T: Real> SectorTransform<T> for ExpStandardized<T> {
    fn label(&self) -> String {
        format!("exp(std {})", self.name)
    }
    fn eval(&self, w: ArrayView1<T>, _: ArrayView1<T>, _: usize) -> T {
        ((w[self.column] - self.mean) / self.sd).exp()
    }
}

/// `f = 1 + (W_c - min) / (max - min)`, between 1 and 2 on the sample.
#[derive(Debug, Clone)]
pub struct Affine<T: Real> {
    pub name: String,
    pub column: usize,
    pub min: T,
    pub max: T,
}

impl<T: Real> SectorTransform<T> for Affine<T> {
    fn label(&self) -> String {
        format!("affine({})", self.name)
    }
    fn eval(&self, w: ArrayView1<T>, _: ArrayView1<T>, _: usize) -> T {
        T::one() + (w[self.column] - self.min) / (self.max - self.min)
    }
}

/// `f_j = S_j`, optionally times `exp` of a standardized control.
#[derive(Debug, Clone)]
pub struct ShareScaled<T: Real> {
    pub by: Option<ExpStandardized<T>>,
}

impl<T: Real> SectorTransform<T> for ShareScaled<T> {
    fn label(&self) -> String {
        match &self.by {
            None => "shares".into(),
            Some(e) => format!("shares * {}", SectorTransform::<T>::label(e)),
        }
    }
    fn eval(&self, w: ArrayView1<T>, s: ArrayView1<T>, sector: usize) -> T {
        let base = s[sector];
        match &self.by {
            None => base,
            Some(e) => base * e.eval(w, s, sector),
        }
    }
}

/// First control other than the intercept that varies.
fn varying_control<T: Real>(ds: &PanelDataset<T>) -> Option<(usize, Array1<T>)> {
    let st = stack_panel(ds);
    (0..ds.d())
        .filter(|&c| ds.control_names()[c] != INTERCEPT)
        .map(|c| (c, st.w.column(c).to_owned()))
        .find(|(_, col)| {
            let first = col[0];
            col.iter().any(|&v| v != first)
        })
}

fn exp_std<T: Real>(ds: &PanelDataset<T>, c: usize, col: &Array1<T>) -> ExpStandardized<T> {
    let nf = T::from_usize_lossy(col.len());
    let mean = col.sum() / nf;
    let sd = (col.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf).sqrt();
    ExpStandardized {
        name: ds.control_names()[c].clone(),
        column: c,
        mean,
        sd,
    }
}

/// Constant, `exp` of a standardized control and an affine function of it.
pub fn builtin_share_transforms<T: Real>(ds: &PanelDataset<T>) -> Vec<Box<dyn SectorTransform<T>>> {
    let mut out: Vec<Box<dyn SectorTransform<T>>> = vec![Box::new(Constant)];
    if let Some((c, col)) = varying_control(ds) {
        let (min, max) = col
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(a, b), &v| (a.min(v), b.max(v)));
        out.push(Box::new(exp_std(ds, c, &col)));
        out.push(Box::new(Affine {
            name: ds.control_names()[c].clone(),
            column: c,
            min,
            max,
        }));
    }
    out
}

/// The shares, a constant, and the shares scaled by `exp` of a standardized control.
pub fn builtin_shock_transforms<T: Real>(ds: &PanelDataset<T>) -> Vec<Box<dyn SectorTransform<T>>> {
    let mut out: Vec<Box<dyn SectorTransform<T>>> = vec![Box::new(ShareScaled { by: None }), Box::new(Constant)];
    if let Some((c, col)) = varying_control(ds) {
        out.push(Box::new(ShareScaled {
            by: Some(exp_std(ds, c, &col)),
        }));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignEntry {
    pub transform: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignReport {
    pub entries: Vec<SignEntry>,
    /// Every nonzero value has the same sign.
    pub agree: bool,
}

fn sign_report(entries: Vec<SignEntry>) -> SignReport {
    let pos = entries.iter().any(|e| e.value > 0.0);
    let neg = entries.iter().any(|e| e.value < 0.0);
    SignReport {
        entries,
        agree: !(pos && neg),
    }
}

/// `sum_i w X_i sum_j S~_ij f_j(W_i) shock_j` for each transform, where `S~`
/// are the shares residualized on the controls.
pub fn sign_diagnostic_shares<T: Real>(
    ds: &PanelDataset<T>,
    transforms: &[Box<dyn SectorTransform<T>>],
) -> Result<SignReport> {
    if transforms.is_empty() {
        return Err(Error::Config("no transforms supplied".into()));
    }
    let st = stack_panel(ds);
    let ls = WeightedLs::new(st.w.view(), st.weight.view(), &st.control_names)?;
    let (rows, p) = st.s.dim();
    let mut s_tilde = Array2::zeros((rows, p));
    for j in 0..p {
        s_tilde.column_mut(j).assign(&ls.fit(st.s.column(j)).1);
    }
    let shock = ds.shock_z();
    let mut entries = Vec::new();
    for f in transforms {
        let mut acc = T::zero();
        for r in 0..rows {
            let t = st.row_index[r].1;
            let mut inner = T::zero();
            for j in 0..p {
                let fv = f.eval(st.w.row(r), st.s.row(r), j);
                if !(fv > T::zero()) || !fv.is_finite() {
                    return Err(Error::InvalidData(format!(
                        "transform `{}` is not positive at row {r}, sector {j}",
                        f.label()
                    )));
                }
                inner += s_tilde[[r, j]] * fv * shock[[t, j]];
            }
            acc += st.weight[r] * st.x[r] * inner;
        }
        entries.push(SignEntry {
            transform: f.label(),
            value: acc.as_f64(),
        });
    }
    Ok(sign_report(entries))
}

/// `sum_i w X_i sum_j E_tj f_j(S_i, W_i)` for each transform.
pub fn sign_diagnostic_shocks<T: Real>(
    ds: &PanelDataset<T>,
    e_hat: ArrayView2<T>,
    transforms: &[Box<dyn SectorTransform<T>>],
) -> Result<SignReport> {
    if transforms.is_empty() {
        return Err(Error::Config("no transforms supplied".into()));
    }
    if e_hat.dim() != (ds.periods(), ds.p()) {
        return Err(Error::Dimension(format!(
            "shock residual is {:?}, expected {:?}",
            e_hat.dim(),
            (ds.periods(), ds.p())
        )));
    }
    let st = stack_panel(ds);
    let (rows, p) = st.s.dim();
    let mut entries = Vec::new();
    for f in transforms {
        let mut acc = T::zero();
        for r in 0..rows {
            let t = st.row_index[r].1;
            let mut inner = T::zero();
            for j in 0..p {
                let fv = f.eval(st.w.row(r), st.s.row(r), j);
                if fv < T::zero() || !fv.is_finite() {
                    return Err(Error::InvalidData(format!(
                        "transform `{}` is negative at row {r}, sector {j}",
                        f.label()
                    )));
                }
                inner += e_hat[[t, j]] * fv;
            }
            acc += st.weight[r] * st.x[r] * inner;
        }
        entries.push(SignEntry {
            transform: f.label(),
            value: acc.as_f64(),
        });
    }
    Ok(sign_report(entries))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterCov {
    pub cluster: String,
    /// `(sector a, sector b, covariance across periods)`.
    pub pairs: Vec<(String, String, f64)>,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterCovReport {
    pub clusters: Vec<ClusterCov>,
    pub skipped_singletons: Vec<String>,
    pub negative_pairs: usize,
    pub flagged: bool,
}

/// Covariances across periods of `e_hat` columns for sectors sharing a cluster.
pub fn within_cluster_shock_cov<T: Real>(
    e_hat: ArrayView2<T>,
    codes: &[String],
    sector_cluster: &[String],
) -> Result<ClusterCovReport> {
    let (nt, p) = e_hat.dim();
    if nt < 2 {
        return Err(Error::TooFewPeriods {
            needed: 2,
            found: nt,
        });
    }
    if codes.len() != p || sector_cluster.len() != p {
        return Err(Error::Dimension("sector labels do not match the shock residual".into()));
    }
    let ntf = T::from_usize_lossy(nt);
    let means: Vec<T> = (0..p).map(|j| e_hat.column(j).sum() / ntf).collect();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (j, c) in sector_cluster.iter().enumerate() {
        groups.entry(c.as_str()).or_default().push(j);
    }
    let mut report = ClusterCovReport {
        clusters: Vec::new(),
        skipped_singletons: Vec::new(),
        negative_pairs: 0,
        flagged: false,
    };
    for (label, members) in groups {
        if members.len() < 2 {
            report.skipped_singletons.push(label.to_string());
            continue;
        }
        let mut cc = ClusterCov {
            cluster: label.to_string(),
            pairs: Vec::new(),
            negative: 0,
        };
        for (a, &j) in members.iter().enumerate() {
            for &k in &members[a + 1..] {
                let cov = (0..nt)
                    .map(|t| (e_hat[[t, j]] - means[j]) * (e_hat[[t, k]] - means[k]))
                    .sum::<T>()
                    / ntf;
                if cov < T::zero() {
                    cc.negative += 1;
                }
                cc.pairs.push((codes[j].clone(), codes[k].clone(), cov.as_f64()));
            }
        }
        report.negative_pairs += cc.negative;
        report.clusters.push(cc);
    }
    if !report.skipped_singletons.is_empty() {
        log::info!(
            "skipped {} single-sector cluster(s)",
            report.skipped_singletons.len()
        );
    }
    report.flagged = report.negative_pairs > 0;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Identification from shares: quadratic forms in the shock vector.
    Shares,
    /// Identification from shocks: quadratic forms in each unit's shares.
    Shocks,
}

/// First-stage types and the relevant conditional variance.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveSpec<T: Real> {
    /// `[n x p]`, row `i` is the diagonal of `Lambda_i`.
    pub lambdas: Array2<T>,
    /// `[p x p]`: `Var{S | W}` or `Var{shock | G}`.
    pub var_matrix: Array2<T>,
    pub regime: Regime,
}

impl<T: Real> PrimitiveSpec<T> {
    pub fn validate(&self) -> Result<()> {
        let p = self.var_matrix.nrows();
        if self.var_matrix.ncols() != p || self.lambdas.ncols() != p {
            return Err(Error::Dimension(format!(
                "lambdas {:?} and variance {:?} disagree",
                self.lambdas.dim(),
                self.var_matrix.dim()
            )));
        }
        let scale = self.var_matrix.iter().fold(T::zero(), |m, v| m.max(v.abs())).max(T::one());
        let tol = T::lit(1e-10) * scale;
        for i in 0..p {
            for j in 0..i {
                if (self.var_matrix[[i, j]] - self.var_matrix[[j, i]]).abs() > tol {
                    return Err(Error::InvalidData("variance matrix is not symmetric".into()));
                }
            }
        }
        let (vals, _) = symmetric_eigen(self.var_matrix.view());
        if vals.iter().any(|&v| v < -tol) {
            return Err(Error::InvalidData("variance matrix is not positive semi-definite".into()));
        }
        Ok(())
    }
}

/// `omega_i = v_i' Lambda_i V v_i / sum_k v_k' Lambda_k V v_k`.
///
/// `realization` holds the vector `v_i` per unit: the shock vector in the
/// shares regime and unit `i`'s shares in the shocks regime. A single row is
/// shared by every unit.
pub fn weights_from_primitives<T: Real>(spec: &PrimitiveSpec<T>, realization: ArrayView2<T>) -> Result<Array1<T>> {
    spec.validate()?;
    let (n, p) = spec.lambdas.dim();
    let (rn, rp) = realization.dim();
    if rp != p || !(rn == n || rn == 1) {
        return Err(Error::Dimension(format!(
            "realization is {rn} x {rp}, expected {n} x {p} or 1 x {p}"
        )));
    }
    let mut num = Array1::zeros(n);
    for i in 0..n {
        let v = realization.row(if rn == 1 { 0 } else { i });
        let vv = spec.var_matrix.dot(&v);
        num[i] = (0..p).map(|j| v[j] * spec.lambdas[[i, j]] * vv[j]).sum::<T>();
    }
    let total = num.sum();
    let mass = num.iter().map(|v| v.abs()).sum::<T>();
    if !(total.abs() > T::lit(1e-14) * mass) || total == T::zero() {
        return Err(Error::ZeroDenominator(
            "the weights' normalizing sum is zero".into(),
        ));
    }
    Ok(num / total)
}
