use serde::Serialize;

use super::PanelDataset;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Grouping of native sectors into SIC-prefix groups for share moments.
///
/// Only the moment shares are aggregated; the instrument keeps using the
/// native shares and shocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Aggregation {
    pub level: usize,
    /// Group index of every native sector.
    pub group_of: Vec<usize>,
    /// Prefix code of each group, in order of first appearance.
    pub codes: Vec<String>,
    /// Cluster label of each group (its code truncated to three characters).
    pub clusters: Vec<String>,
}

/// Aggregates share moments to `level`-digit sector-code prefixes.
///
/// Grouping always starts from the native codes, so calling this on an
/// already aggregated dataset regroups rather than compounds.
pub fn aggregate_sic<T: Real>(ds: &PanelDataset<T>, level: usize) -> Result<PanelDataset<T>> {
    if level == 0 {
        return Err(Error::Config("SIC level must be positive".into()));
    }
    let codes = ds.sector_codes();
    if let Some(short) = codes.iter().find(|c| c.chars().count() < level) {
        return Err(Error::AggregationLevel {
            level,
            code: short.clone(),
        });
    }
    let mut out = ds.clone();
    if codes.iter().all(|c| c.chars().count() == level) {
        out.aggregation = None;
        return Ok(out);
    }
    let mut group_codes: Vec<String> = Vec::new();
    let mut lookup = std::collections::HashMap::new();
    let group_of = codes
        .iter()
        .map(|c| {
            let prefix: String = c.chars().take(level).collect();
            *lookup.entry(prefix.clone()).or_insert_with(|| {
                group_codes.push(prefix);
                group_codes.len() - 1
            })
        })
        .collect();
    let clusters = group_codes
        .iter()
        .map(|c| c.chars().take(level.min(3)).collect())
        .collect();
    out.aggregation = Some(Aggregation {
        level,
        group_of,
        codes: group_codes,
        clusters,
    });
    Ok(out)
}
