//! CSV ingestion and export.
//!
//! Observation file: one row per `(unit, period)` with outcome, regressor,
//! controls, weight, cluster label and one share column per sector
//! (`<share_prefix><sector code>`). Shock file: either long (one row per
//! `(period, sector)`) or wide (one row per period, one column per sector).

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{PanelDataset, PanelParts, INTERCEPT};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShockLayout {
    #[default]
    Long,
    Wide,
}

/// Column names of the shock file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShockSchema {
    #[serde(default)]
    pub layout: ShockLayout,
    #[serde(default = "default_period")]
    pub period: String,
    /// Long layout: sector code column.
    #[serde(default = "default_sector")]
    pub sector: String,
    /// Long layout: instrument shock column.
    #[serde(default = "default_shock_z")]
    pub shock_z: String,
    /// Long layout: optional regressor shock column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shock_x: Option<String>,
    /// Long layout: optional per-sector cluster label column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sector_cluster: Option<String>,
    /// Wide layout: instrument shock columns are `<wide_z_prefix><code>`.
    #[serde(default)]
    pub wide_z_prefix: String,
    /// Wide layout: optional regressor shock columns `<wide_x_prefix><code>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wide_x_prefix: Option<String>,
}

impl Default for ShockSchema {
    fn default() -> Self {
        Self {
            layout: ShockLayout::Long,
            period: default_period(),
            sector: default_sector(),
            shock_z: default_shock_z(),
            shock_x: None,
            sector_cluster: None,
            wide_z_prefix: String::new(),
            wide_x_prefix: None,
        }
    }
}

fn default_period() -> String {
    "period".into()
}
fn default_sector() -> String {
    "sector".into()
}
fn default_shock_z() -> String {
    "shock_z".into()
}
fn default_cluster_digits() -> usize {
    3
}

/// Maps logical roles to column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub unit: String,
    pub period: String,
    pub outcome: String,
    pub regressor: String,
    #[serde(default)]
    pub controls: Vec<String>,
    /// Prepend an explicit intercept column to the controls.
    #[serde(default)]
    pub intercept: bool,
    pub weight: String,
    pub cluster: String,
    pub share_prefix: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regressor_share_prefix: Option<String>,
    /// Explicit sector list; defaults to every `<share_prefix>*` column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sector_codes: Option<Vec<String>>,
    /// Sector clusters default to this many leading characters of the code.
    #[serde(default = "default_cluster_digits")]
    pub sector_cluster_digits: usize,
    #[serde(default)]
    pub shocks: ShockSchema,
}

impl Schema {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

struct Table {
    path: String,
    headers: Vec<String>,
    records: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let p = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_err(&p, e))?;
        let headers = rdr
            .headers()
            .map_err(|e| csv_err(&p, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let records = rdr
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| csv_err(&p, e))?;
        Ok(Self {
            path: p,
            headers,
            records,
        })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: self.path.clone(),
                column: name.to_string(),
            })
    }

    fn num<T: Real>(&self, row: usize, col: usize) -> Result<T> {
        let raw = self.records[row].get(col).unwrap_or("");
        match raw.parse::<T>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::NonFinite {
                path: self.path.clone(),
                row: row + 2,
                column: self.headers[col].clone(),
                value: raw.to_string(),
            }),
        }
    }

    fn text(&self, row: usize, col: usize) -> String {
        self.records[row].get(col).unwrap_or("").to_string()
    }
}

fn csv_err(path: &str, e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(_) = e.kind() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: path.to_string(),
                source,
            },
            _ => unreachable!(),
        }
    } else {
        Error::Csv {
            path: path.to_string(),
            message: e.to_string(),
        }
    }
}

/// Periods sort numerically when every label parses as a number.
fn sort_periods(labels: &mut [String]) {
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.parse::<f64>().ok()).collect();
    if numeric.is_some() {
        labels.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .partial_cmp(&b.parse::<f64>().unwrap())
                .unwrap()
        });
    } else {
        labels.sort();
    }
}

/// Loads and validates a panel from an observation file and a shock file.
pub fn load_csv<T: Real>(
    obs_path: impl AsRef<Path>,
    shock_path: impl AsRef<Path>,
    schema: &Schema,
) -> Result<PanelDataset<T>> {
    let obs = Table::read(obs_path.as_ref())?;
    let c_unit = obs.col(&schema.unit)?;
    let c_period = obs.col(&schema.period)?;
    let c_y = obs.col(&schema.outcome)?;
    let c_x = obs.col(&schema.regressor)?;
    let c_w = obs.col(&schema.weight)?;
    let c_cl = obs.col(&schema.cluster)?;
    let c_controls = schema
        .controls
        .iter()
        .map(|c| obs.col(c))
        .collect::<Result<Vec<_>>>()?;

    let sx_prefix = schema.regressor_share_prefix.as_deref();
    let is_sx = |h: &str| {
        sx_prefix
            .map(|px| h.starts_with(px) && px.len() >= schema.share_prefix.len())
            .unwrap_or(false)
    };
    let share_cols: Vec<(String, usize)> = match &schema.sector_codes {
        Some(codes) => codes
            .iter()
            .map(|code| {
                let name = format!("{}{}", schema.share_prefix, code);
                obs.col(&name).map(|c| (code.clone(), c))
            })
            .collect::<Result<_>>()?,
        None => obs
            .headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with(&schema.share_prefix) && !is_sx(h))
            .map(|(c, h)| (h[schema.share_prefix.len()..].to_string(), c))
            .collect(),
    };
    if share_cols.is_empty() {
        return Err(Error::MissingColumn {
            path: obs.path.clone(),
            column: format!("{}<sector code>", schema.share_prefix),
        });
    }
    let sx_cols: Option<Vec<usize>> = match sx_prefix {
        None => None,
        Some(px) => Some(
            share_cols
                .iter()
                .map(|(code, _)| obs.col(&format!("{px}{code}")))
                .collect::<Result<_>>()?,
        ),
    };

    let mut unit_labels: Vec<String> = Vec::new();
    let mut unit_idx: HashMap<String, usize> = HashMap::new();
    let mut period_set: Vec<String> = Vec::new();
    for r in 0..obs.records.len() {
        let u = obs.text(r, c_unit);
        if !unit_idx.contains_key(&u) {
            unit_idx.insert(u.clone(), unit_labels.len());
            unit_labels.push(u);
        }
        let t = obs.text(r, c_period);
        if !period_set.contains(&t) {
            period_set.push(t);
        }
    }
    sort_periods(&mut period_set);
    let period_idx: HashMap<String, usize> = period_set
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), i))
        .collect();

    let (n, nt, np) = (unit_labels.len(), period_set.len(), share_cols.len());
    let d = c_controls.len() + usize::from(schema.intercept);
    let mut y = Array2::zeros((n, nt));
    let mut x = Array2::zeros((n, nt));
    let mut reg_weight = Array2::zeros((n, nt));
    let mut w = Array3::zeros((n, nt, d));
    let mut s_z = Array3::zeros((n, nt, np));
    let mut s_x = sx_cols.as_ref().map(|_| Array3::zeros((n, nt, np)));
    let mut obs_cluster = vec![String::new(); n * nt];
    let mut seen = vec![false; n * nt];

    for r in 0..obs.records.len() {
        let unit = obs.text(r, c_unit);
        let period = obs.text(r, c_period);
        let i = unit_idx[&unit];
        let t = period_idx[&period];
        if seen[i * nt + t] {
            return Err(Error::DuplicateObservation { unit, period });
        }
        seen[i * nt + t] = true;
        y[[i, t]] = obs.num(r, c_y)?;
        x[[i, t]] = obs.num(r, c_x)?;
        reg_weight[[i, t]] = obs.num(r, c_w)?;
        obs_cluster[i * nt + t] = obs.text(r, c_cl);
        let offset = usize::from(schema.intercept);
        if schema.intercept {
            w[[i, t, 0]] = T::one();
        }
        for (k, &c) in c_controls.iter().enumerate() {
            w[[i, t, offset + k]] = obs.num(r, c)?;
        }
        for (j, (code, c)) in share_cols.iter().enumerate() {
            let v: T = obs.num(r, *c)?;
            if v < T::zero() {
                return Err(Error::NegativeShare {
                    unit: unit.clone(),
                    period: period.clone(),
                    sector: code.clone(),
                    value: v.as_f64(),
                });
            }
            s_z[[i, t, j]] = v;
        }
        if let (Some(cols), Some(sx)) = (&sx_cols, s_x.as_mut()) {
            for (j, &c) in cols.iter().enumerate() {
                sx[[i, t, j]] = obs.num(r, c)?;
            }
        }
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::Unbalanced {
            unit: unit_labels[k / nt].clone(),
            period: period_set[k % nt].clone(),
        });
    }

    let codes: Vec<String> = share_cols.iter().map(|(c, _)| c.clone()).collect();
    let code_idx: HashMap<&str, usize> = codes
        .iter()
        .enumerate()
        .map(|(j, c)| (c.as_str(), j))
        .collect();
    let shocks = read_shocks::<T>(shock_path.as_ref(), &schema.shocks, &codes, &code_idx, &period_idx)?;
    let sector_cluster = match shocks.clusters {
        Some(c) => c,
        None => codes
            .iter()
            .map(|c| c.chars().take(schema.sector_cluster_digits).collect())
            .collect(),
    };

    let mut control_names = Vec::with_capacity(d);
    if schema.intercept {
        control_names.push(INTERCEPT.to_string());
    }
    control_names.extend(schema.controls.iter().cloned());

    PanelParts {
        unit_labels,
        period_labels: period_set,
        sector_codes: codes,
        sector_cluster,
        control_names,
        y,
        x,
        w,
        s_z,
        s_x,
        shock_z: shocks.z,
        shock_x: shocks.x,
        reg_weight,
        obs_cluster,
    }
    .build()
}

struct Shocks<T: Real> {
    z: Array2<T>,
    x: Option<Array2<T>>,
    clusters: Option<Vec<String>>,
}

fn read_shocks<T: Real>(
    path: &Path,
    schema: &ShockSchema,
    codes: &[String],
    code_idx: &HashMap<&str, usize>,
    period_idx: &HashMap<String, usize>,
) -> Result<Shocks<T>> {
    let tab = Table::read(path)?;
    let (nt, np) = (period_idx.len(), codes.len());
    let mut z = Array2::zeros((nt, np));
    let c_period = tab.col(&schema.period)?;
    match schema.layout {
        ShockLayout::Long => {
            let c_sector = tab.col(&schema.sector)?;
            let c_z = tab.col(&schema.shock_z)?;
            let c_x = schema.shock_x.as_deref().map(|c| tab.col(c)).transpose()?;
            let c_cl = schema
                .sector_cluster
                .as_deref()
                .map(|c| tab.col(c))
                .transpose()?;
            let mut x = c_x.map(|_| Array2::zeros((nt, np)));
            let mut clusters: Option<Vec<Option<String>>> = c_cl.map(|_| vec![None; np]);
            let mut seen = vec![false; nt * np];
            for r in 0..tab.records.len() {
                let period = tab.text(r, c_period);
                let code = tab.text(r, c_sector);
                let Some(&t) = period_idx.get(&period) else {
                    return Err(Error::InvalidData(format!(
                        "{}: period `{period}` does not appear in the observation file",
                        tab.path
                    )));
                };
                let Some(&j) = code_idx.get(code.as_str()) else {
                    return Err(Error::UnmatchedSector {
                        code,
                        missing_in: "share column in the observation file".into(),
                    });
                };
                if seen[t * np + j] {
                    return Err(Error::DuplicateObservation {
                        unit: format!("sector {code}"),
                        period,
                    });
                }
                seen[t * np + j] = true;
                z[[t, j]] = tab.num(r, c_z)?;
                if let (Some(c), Some(xm)) = (c_x, x.as_mut()) {
                    xm[[t, j]] = tab.num(r, c)?;
                }
                if let (Some(c), Some(cl)) = (c_cl, clusters.as_mut()) {
                    let label = tab.text(r, c);
                    match &cl[j] {
                        Some(prev) if *prev != label => {
                            return Err(Error::InvalidData(format!(
                                "sector `{code}` has more than one cluster label"
                            )))
                        }
                        _ => cl[j] = Some(label),
                    }
                }
            }
            if let Some(k) = seen.iter().position(|s| !s) {
                return Err(Error::UnmatchedSector {
                    code: codes[k % np].clone(),
                    missing_in: format!("shock file row for period index {}", k / np),
                });
            }
            Ok(Shocks {
                z,
                x,
                clusters: clusters.map(|c| c.into_iter().map(|l| l.unwrap_or_default()).collect()),
            })
        }
        ShockLayout::Wide => {
            let col_for = |prefix: &str, code: &str| {
                let name = format!("{prefix}{code}");
                tab.headers
                    .iter()
                    .position(|h| *h == name)
                    .ok_or_else(|| Error::UnmatchedSector {
                        code: code.to_string(),
                        missing_in: format!("shock file column `{name}`"),
                    })
            };
            let z_cols = codes
                .iter()
                .map(|c| col_for(&schema.wide_z_prefix, c))
                .collect::<Result<Vec<_>>>()?;
            let x_cols = schema
                .wide_x_prefix
                .as_deref()
                .map(|px| codes.iter().map(|c| col_for(px, c)).collect::<Result<Vec<_>>>())
                .transpose()?;
            let mut x = x_cols.as_ref().map(|_| Array2::zeros((nt, np)));
            let mut seen = vec![false; nt];
            for r in 0..tab.records.len() {
                let period = tab.text(r, c_period);
                let Some(&t) = period_idx.get(&period) else {
                    return Err(Error::InvalidData(format!(
                        "{}: period `{period}` does not appear in the observation file",
                        tab.path
                    )));
                };
                if seen[t] {
                    return Err(Error::DuplicateObservation {
                        unit: "shock row".into(),
                        period,
                    });
                }
                seen[t] = true;
                for (j, &c) in z_cols.iter().enumerate() {
                    z[[t, j]] = tab.num(r, c)?;
                }
                if let (Some(cols), Some(xm)) = (&x_cols, x.as_mut()) {
                    for (j, &c) in cols.iter().enumerate() {
                        xm[[t, j]] = tab.num(r, c)?;
                    }
                }
            }
            if let Some(t) = seen.iter().position(|s| !s) {
                return Err(Error::InvalidData(format!(
                    "{}: no shock row for period index {t}",
                    tab.path
                )));
            }
            Ok(Shocks {
                z,
                x,
                clusters: None,
            })
        }
    }
}

/// Writes a dataset in the long layout and returns the schema that reads it back.
///
/// Periods are re-sorted on load, so round trips preserve the period order
/// only when the labels are already sorted.
pub fn write_csv<T: Real>(
    ds: &PanelDataset<T>,
    obs_path: impl AsRef<Path>,
    shock_path: impl AsRef<Path>,
) -> Result<Schema> {
    let controls: Vec<(usize, String)> = ds
        .control_names()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.as_str() != INTERCEPT)
        .map(|(k, n)| (k, n.clone()))
        .collect();
    let reserved = ["unit", "period", "outcome", "regressor", "weight", "cluster"];
    if let Some((_, c)) = controls.iter().find(|(_, c)| reserved.contains(&c.as_str())) {
        return Err(Error::Config(format!(
            "control name `{c}` collides with a reserved column"
        )));
    }
    let obs_p = obs_path.as_ref();
    let shock_p = shock_path.as_ref();
    let to_err = |p: &Path| {
        let p = p.display().to_string();
        move |e: csv::Error| csv_err(&p, e)
    };

    let mut wtr = csv::Writer::from_path(obs_p).map_err(to_err(obs_p))?;
    let mut header: Vec<String> = reserved[..4].iter().map(|s| s.to_string()).collect();
    header.extend(controls.iter().map(|(_, c)| c.clone()));
    header.push("weight".into());
    header.push("cluster".into());
    header.extend(ds.sector_codes().iter().map(|c| format!("sz_{c}")));
    if ds.regressor_shares().is_some() {
        header.extend(ds.sector_codes().iter().map(|c| format!("sx_{c}")));
    }
    wtr.write_record(&header).map_err(to_err(obs_p))?;
    for i in 0..ds.n() {
        for t in 0..ds.periods() {
            let mut rec = vec![
                ds.unit_labels()[i].clone(),
                ds.period_labels()[t].clone(),
                ds.y()[[i, t]].to_string(),
                ds.x()[[i, t]].to_string(),
            ];
            rec.extend(controls.iter().map(|(k, _)| ds.controls()[[i, t, *k]].to_string()));
            rec.push(ds.reg_weight()[[i, t]].to_string());
            rec.push(ds.obs_cluster()[i * ds.periods() + t].clone());
            rec.extend((0..ds.p()).map(|j| ds.shares()[[i, t, j]].to_string()));
            if let Some(sx) = ds.regressor_shares() {
                rec.extend((0..ds.p()).map(|j| sx[[i, t, j]].to_string()));
            }
            wtr.write_record(&rec).map_err(to_err(obs_p))?;
        }
    }
    wtr.flush().map_err(|source| Error::Io {
        path: obs_p.display().to_string(),
        source,
    })?;

    let mut wtr = csv::Writer::from_path(shock_p).map_err(to_err(shock_p))?;
    let mut header = vec!["period", "sector", "sector_cluster", "shock_z"];
    if ds.shock_x().is_some() {
        header.push("shock_x");
    }
    wtr.write_record(&header).map_err(to_err(shock_p))?;
    for t in 0..ds.periods() {
        for j in 0..ds.p() {
            let mut rec = vec![
                ds.period_labels()[t].clone(),
                ds.sector_codes()[j].clone(),
                ds.sector_cluster()[j].clone(),
                ds.shock_z()[[t, j]].to_string(),
            ];
            if let Some(zx) = ds.shock_x() {
                rec.push(zx[[t, j]].to_string());
            }
            wtr.write_record(&rec).map_err(to_err(shock_p))?;
        }
    }
    wtr.flush().map_err(|source| Error::Io {
        path: shock_p.display().to_string(),
        source,
    })?;

    Ok(Schema {
        unit: "unit".into(),
        period: "period".into(),
        outcome: "outcome".into(),
        regressor: "regressor".into(),
        controls: controls.into_iter().map(|(_, c)| c).collect(),
        intercept: ds.has_intercept(),
        weight: "weight".into(),
        cluster: "cluster".into(),
        share_prefix: "sz_".into(),
        regressor_share_prefix: ds.regressor_shares().map(|_| "sx_".into()),
        sector_codes: Some(ds.sector_codes().to_vec()),
        sector_cluster_digits: 3,
        shocks: ShockSchema {
            shock_x: ds.shock_x().map(|_| "shock_x".into()),
            sector_cluster: Some("sector_cluster".into()),
            ..ShockSchema::default()
        },
    })
}
