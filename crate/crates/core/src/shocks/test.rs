use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::moments::MomentFunctionSet;
use super::residual::{projection_shock_residual, ridge_shock_residual, ShockResidual};
use crate::bootstrap::{cluster_studentize, BootstrapConfig, InfluenceMatrix, Prepared, TestResult};
use crate::data::{stack_panel, ClusterIndex, PanelDataset, StackedDesign};
use crate::error::{Error, Result};
use crate::linalg::WeightedLs;
use crate::scalar::Real;
use crate::tsls::{fit_tsls, TslsFit};

/// Default ridge penalty for the shock residual.
pub const DEFAULT_LAMBDA: f64 = 1e-5;

/// Grouping of the `(sector, period)` influence rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectorClustering {
    /// Every `(sector, period)` row on its own.
    None,
    /// A sector's rows pooled across periods.
    BySector,
    /// Rows pooled by the dataset's sector cluster labels across periods.
    #[default]
    BySectorCluster,
}

/// How `E_hat` is estimated.
#[derive(Debug, Clone, PartialEq)]
pub enum ShockResidualSpec<T: Real> {
    Ridge { lambda: f64 },
    Projection { q: Array2<T> },
}

impl<T: Real> Default for ShockResidualSpec<T> {
    fn default() -> Self {
        ShockResidualSpec::Ridge {
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl<T: Real> ShockResidualSpec<T> {
    pub fn estimate(&self, ds: &PanelDataset<T>, fit: &TslsFit<T>) -> Result<ShockResidual<T>> {
        match self {
            ShockResidualSpec::Ridge { lambda } => ridge_shock_residual(ds, fit.pi_hat.view(), *lambda),
            ShockResidualSpec::Projection { q } => projection_shock_residual(ds.shock_z(), q.view()),
        }
    }

    fn echo(&self) -> serde_json::Value {
        match self {
            ShockResidualSpec::Ridge { lambda } => json!({"method": "ridge", "lambda": lambda}),
            ShockResidualSpec::Projection { q } => {
                json!({"method": "projection", "q_columns": q.ncols()})
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ShocksTestOptions<T: Real> {
    pub e_method: ShockResidualSpec<T>,
    pub clustering: SectorClustering,
    pub bootstrap: BootstrapConfig,
}

/// Corrected moment contributions before aggregation to sectors.
#[derive(Debug, Clone)]
pub struct MomentCorrections<T: Real> {
    /// `g_j` at every stacked row, `rows x q`.
    pub g: Array2<T>,
    /// Weighted regression coefficients of `g_j` on the controls, `d x q`.
    pub delta: Array2<T>,
    pub kappa: Array1<T>,
    /// `g_j - W' delta_j - eps kappa_j`, `rows x q`.
    pub h: Array2<T>,
}

pub fn moment_corrections<T: Real>(
    design: &StackedDesign<T>,
    fit: &TslsFit<T>,
    g: &MomentFunctionSet<T>,
) -> Result<MomentCorrections<T>> {
    let rows = design.rows();
    let q = g.q();
    if fit.eps_hat.len() != rows {
        return Err(Error::Dimension("fit and design disagree on the row count".into()));
    }
    let mut gv = Array2::zeros((rows, q));
    let mut dg = Array2::zeros((rows, q));
    for r in 0..rows {
        let (e, w, sr) = (fit.eps_hat[r], design.w.row(r), design.s.row(r));
        for j in 0..q {
            gv[[r, j]] = g.eval(j, e, w, sr);
            dg[[r, j]] = g.deval(j, e, w, sr);
        }
    }
    if gv.iter().chain(dg.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("moment function returned a non-finite value".into()));
    }
    let cov = fit.first_stage_cov;
    if cov == T::zero() {
        return Err(Error::DegenerateInstrument { cov: 0.0 });
    }
    let wzx = &(&design.weight * &fit.z_dot) * &design.x;
    let kappa = dg.t().dot(&wzx) / cov;
    let ls = WeightedLs::new(design.w.view(), design.weight.view(), &design.control_names)?;
    let mut delta = Array2::zeros((design.d(), q));
    let mut h = Array2::zeros((rows, q));
    for j in 0..q {
        let (coef, resid) = ls.fit(gv.column(j));
        delta.column_mut(j).assign(&coef);
        let hj = &resid - &fit.eps_hat.mapv(|e| e * kappa[j]);
        h.column_mut(j).assign(&hj);
    }
    Ok(MomentCorrections {
        g: gv,
        delta,
        kappa,
        h,
    })
}

/// Influence rows indexed by `(period, sector)`: `E_tk * sum_i w S_itk h_itj`.
///
/// Returns the rows, their magnitude bounds, and the raw moment sums
/// `sum_r w_r g_j(eps_r) z_dot_r`.
pub fn shocks_influence_rows<T: Real>(
    design: &StackedDesign<T>,
    fit: &TslsFit<T>,
    g: &MomentFunctionSet<T>,
    e_hat: &ShockResidual<T>,
) -> Result<(Array2<T>, Array2<T>, Array1<T>)> {
    let (nt, p) = e_hat.e_hat.dim();
    if nt != design.periods || p != design.s.ncols() {
        return Err(Error::Dimension(format!(
            "shock residual is {:?}, design has {} periods and {} sectors",
            e_hat.e_hat.dim(),
            design.periods,
            design.s.ncols()
        )));
    }
    let corr = moment_corrections(design, fit, g)?;
    let q = g.q();
    let mut u = Array2::zeros((nt * p, q));
    let mut abs = Array2::zeros((nt * p, q));
    let abs_h = corr.h.mapv(|v| v.abs());
    for t in 0..nt {
        let idx = design.period_rows(t);
        let mut ws = Array2::zeros((idx.len(), p));
        let mut h_t = Array2::zeros((idx.len(), q));
        let mut ah_t = Array2::zeros((idx.len(), q));
        for (k, &r) in idx.iter().enumerate() {
            ws.row_mut(k).assign(&design.s.row(r).mapv(|v| v * design.weight[r]));
            h_t.row_mut(k).assign(&corr.h.row(r));
            ah_t.row_mut(k).assign(&abs_h.row(r));
        }
        let mut block = ws.t().dot(&h_t);
        let mut ablock = ws.mapv(|v| v.abs()).t().dot(&ah_t);
        for k in 0..p {
            let e = e_hat.e_hat[[t, k]];
            block.row_mut(k).mapv_inplace(|v| v * e);
            ablock.row_mut(k).mapv_inplace(|v| v * e.abs());
        }
        u.slice_mut(s![t * p..(t + 1) * p, ..]).assign(&block);
        abs.slice_mut(s![t * p..(t + 1) * p, ..]).assign(&ablock);
    }
    let wz = &design.weight * &fit.z_dot;
    let raw = corr.g.t().dot(&wz);
    Ok((u, abs, raw))
}

/// Cluster assignment of the `(period, sector)` rows, period-major.
pub fn sector_rows_clusters<T: Real>(ds: &PanelDataset<T>, clustering: SectorClustering) -> ClusterIndex {
    let (nt, p) = (ds.periods(), ds.p());
    let labels: Vec<String> = (0..nt)
        .flat_map(|t| {
            (0..p).map(move |k| match clustering {
                SectorClustering::None => format!("{}@{}", ds.sector_codes()[k], ds.period_labels()[t]),
                SectorClustering::BySector => ds.sector_codes()[k].clone(),
                SectorClustering::BySectorCluster => ds.sector_cluster()[k].clone(),
            })
        })
        .collect();
    ClusterIndex::from_labels(&labels)
}

pub fn shocks_influence<T: Real>(
    ds: &PanelDataset<T>,
    design: &StackedDesign<T>,
    fit: &TslsFit<T>,
    g: &MomentFunctionSet<T>,
    e_hat: &ShockResidual<T>,
    clustering: SectorClustering,
) -> Result<InfluenceMatrix<T>> {
    let (u, abs, raw) = shocks_influence_rows(design, fit, g, e_hat)?;
    let clusters = sector_rows_clusters(ds, clustering);
    cluster_studentize(u.view(), abs.view(), raw.view(), &g.labels(), &clusters)
}

/// Stacks, fits, estimates `E_hat` and builds the clustered influence matrix.
pub fn prepare_shocks_test<T: Real>(
    ds: &PanelDataset<T>,
    g: &MomentFunctionSet<T>,
    opts: &ShocksTestOptions<T>,
) -> Result<Prepared<T>> {
    let design = stack_panel(ds);
    let fit = fit_tsls(&design)?;
    let e_hat = opts.e_method.estimate(ds, &fit)?;
    let res = shocks_influence(ds, &design, &fit, g, &e_hat, opts.clustering);
    Prepared::from_result(res, g.labels())
}

/// Full pipeline: stack, fit, estimate `E_hat`, build influence, bootstrap.
pub fn run_shocks_test<T: Real>(
    ds: &PanelDataset<T>,
    g: &MomentFunctionSet<T>,
    opts: &ShocksTestOptions<T>,
) -> Result<TestResult> {
    opts.bootstrap.validate()?;
    let start = std::time::Instant::now();
    let config = json!({
        "e_method": opts.e_method.echo(),
        "clustering": opts.clustering,
        "moments": g.labels(),
        "bootstrap": opts.bootstrap,
    });
    let mut result = prepare_shocks_test(ds, g, opts)?.into_result(&opts.bootstrap, config)?;
    result.elapsed = start.elapsed();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::tiny;
    use crate::shocks::moments::{MomentFunction, Power};
    use ndarray::{ArrayView1, Axis};

    struct Linear(f64);
    impl MomentFunction<f64> for Linear {
        fn eval(&self, e: f64, _: ArrayView1<f64>, _: ArrayView1<f64>) -> f64 {
            self.0 * e + 1.0
        }
        fn deval(&self, _: f64, _: ArrayView1<f64>, _: ArrayView1<f64>) -> f64 {
            self.0
        }
        fn label(&self) -> String {
            "linear".into()
        }
    }

    #[test]
    fn linear_moment_has_constant_kappa() {
        let ds = tiny();
        let design = stack_panel(&ds);
        let fit = fit_tsls(&design).unwrap();
        let g = MomentFunctionSet::new(vec![Box::new(Linear(2.5)), Box::new(Power(2))]);
        let c = moment_corrections(&design, &fit, &g).unwrap();
        assert!((c.kappa[0] - 2.5).abs() < 1e-12);
        // intercept-only controls: delta is the weighted mean of g
        let wsum = design.weight.sum();
        let mean = design.weight.dot(&c.g.column(1)) / wsum;
        assert!((c.delta[[0, 1]] - mean).abs() < 1e-12);
    }

    #[test]
    fn cluster_labels_pool_periods() {
        let ds = tiny();
        assert_eq!(sector_rows_clusters(&ds, SectorClustering::BySectorCluster).len(), 1);
        assert_eq!(sector_rows_clusters(&ds, SectorClustering::BySector).len(), 2);
        let none = sector_rows_clusters(&ds, SectorClustering::None);
        assert_eq!(none.labels, vec!["3711@1990", "3714@1990", "3711@2000", "3714@2000"]);
    }

    #[test]
    fn row_layout_is_period_major() {
        let ds = tiny();
        let design = stack_panel(&ds);
        let fit = fit_tsls(&design).unwrap();
        let e = ShockResidual {
            e_hat: Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 0.0]).unwrap(),
            method: super::super::residual::ShockResidualMethod::Ridge,
            lambda: 0.0,
            q_matrix: None,
        };
        let g = MomentFunctionSet::new(vec![Box::new(Power(2))]);
        let (u, _, _) = shocks_influence_rows(&design, &fit, &g, &e).unwrap();
        assert_eq!(u.dim(), (4, 1));
        assert!(u.index_axis(Axis(0), 1).iter().all(|&v| v == 0.0));
        assert!(u.slice(s![2.., ..]).iter().all(|&v| v == 0.0));
    }
}
