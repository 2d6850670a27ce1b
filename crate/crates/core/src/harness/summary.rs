use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::ResultRow;
use crate::error::{Error, Result};

/// Relative slack for band containment, absorbing rounding differences.
pub const BAND_TOLERANCE: f64 = 1e-9;

/// Per (app, scenario, platform, seed): how the controller compares to the single techniques.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub app: String,
    pub scenario: String,
    pub platform: String,
    pub seed: u64,
    pub best_technique: String,
    pub best_makespan_s: f64,
    pub band_min_s: f64,
    pub band_max_s: f64,
    pub sil_makespan_s: Option<f64>,
    /// 1 + number of single techniques strictly faster than SIL.
    pub sil_rank: Option<usize>,
    pub sil_ratio: Option<f64>,
    pub sil_outside_band: Option<bool>,
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, String, u64), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.app.clone(), r.scenario.clone(), r.platform.clone(), r.seed))
            .or_default()
            .push(r);
    }
    let mut out = Vec::new();
    for ((app, scenario, platform, seed), group) in groups {
        let singles: Vec<&&ResultRow> = group.iter().filter(|r| r.technique != "SIL").collect();
        let Some(best) = singles
            .iter()
            .min_by(|a, b| a.makespan_s.total_cmp(&b.makespan_s))
        else {
            continue;
        };
        let band_max = singles
            .iter()
            .map(|r| r.makespan_s)
            .fold(f64::NEG_INFINITY, f64::max);
        let band_min = best.makespan_s;
        let sil = group.iter().find(|r| r.technique == "SIL").map(|r| r.makespan_s);
        out.push(SummaryRow {
            app,
            scenario,
            platform,
            seed,
            best_technique: best.technique.clone(),
            best_makespan_s: band_min,
            band_min_s: band_min,
            band_max_s: band_max,
            sil_makespan_s: sil,
            sil_rank: sil.map(|m| 1 + singles.iter().filter(|r| r.makespan_s < m).count()),
            sil_ratio: sil.map(|m| m / band_min),
            sil_outside_band: sil.map(|m| {
                let tol = BAND_TOLERANCE * band_max;
                m < band_min - tol || m > band_max + tol
            }),
        });
    }
    out
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(technique: &str, makespan: f64) -> ResultRow {
        ResultRow {
            app: "constant".into(),
            technique: technique.into(),
            scenario: "np".into(),
            platform: "p696".into(),
            seed: 1,
            makespan_s: makespan,
            total_overhead_s: 0.0,
            chunk_count: 1,
            sil_switch_count: 0,
            selection_timeline: String::new(),
        }
    }

    #[test]
    fn band_is_min_max_of_singles() {
        let s = summarize(&[row("SS", 100.0), row("GSS", 150.0)]);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].band_min_s, s[0].band_max_s), (100.0, 150.0));
        assert_eq!(s[0].best_technique, "SS");
        assert_eq!(s[0].sil_rank, None);
    }

    #[test]
    fn sil_at_minimum_ranks_first() {
        let s = summarize(&[row("SS", 100.0), row("GSS", 150.0), row("SIL", 100.0)]);
        assert_eq!(s[0].sil_rank, Some(1));
        assert_eq!(s[0].sil_ratio, Some(1.0));
        assert_eq!(s[0].sil_outside_band, Some(false));
    }

    #[test]
    fn flags_sil_outside_band() {
        let s = summarize(&[row("SS", 100.0), row("GSS", 150.0), row("SIL", 180.0)]);
        assert_eq!(s[0].sil_rank, Some(3));
        assert_eq!(s[0].sil_outside_band, Some(true));
    }
}
