//! CSV schemas of the report commands. Column order is part of the
//! interface; floats are written in shortest round-trip form.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use expert_pde_core::analysis::{ConvergenceStudy, LocalizationRow, Reference, StrategyReport};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct OptimalityRecord {
    pub strategy_id: u32,
    pub bits: String,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub is_comb: bool,
    pub nodes_evaluated: u64,
    pub nodes_skipped: u64,
}

pub fn optimality_records(report: &StrategyReport) -> Vec<OptimalityRecord> {
    report
        .rows
        .iter()
        .map(|r| OptimalityRecord {
            strategy_id: r.strategy.id(),
            bits: r.strategy.to_string(),
            min: r.min,
            mean: r.mean,
            max: r.max,
            is_comb: r.is_comb,
            nodes_evaluated: report.nodes_evaluated,
            nodes_skipped: report.nodes_skipped,
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct ConvergenceRecord {
    pub h: f64,
    pub m: u32,
    pub sup_error: f64,
    pub local_slope: Option<f64>,
    pub fitted_slope: f64,
    pub reference: &'static str,
    pub iterations: u64,
    pub residual: f64,
}

pub fn convergence_records(study: &ConvergenceStudy) -> Vec<ConvergenceRecord> {
    let reference = match study.reference {
        Reference::Exact => "exact",
        Reference::FinestGrid => "finest_grid",
    };
    study
        .rows
        .iter()
        .map(|r| ConvergenceRecord {
            h: r.h,
            m: r.m,
            sup_error: r.sup_error,
            local_slope: r.local_slope,
            fitted_slope: study.fitted_slope,
            reference,
            iterations: r.iterations,
            residual: r.residual,
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct LocalizationRecord {
    pub half_width: f64,
    pub m: u32,
    pub sup_difference: f64,
}

pub fn localization_records(rows: &[LocalizationRow]) -> Vec<LocalizationRecord> {
    rows.iter()
        .map(|r| LocalizationRecord { half_width: r.half_width, m: r.m, sup_difference: r.sup_difference })
        .collect()
}

pub fn write_csv<T: Serialize>(out: impl Write, records: &[T]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv<T: Serialize>(path: &Path, records: &[T]) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_csv(file, records).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimality_header() {
        let rec = OptimalityRecord {
            strategy_id: 11,
            bits: "01011".into(),
            min: 1.0,
            mean: 1.0,
            max: 1.0,
            is_comb: false,
            nodes_evaluated: 3,
            nodes_skipped: 0,
        };
        let mut out = Vec::new();
        write_csv(&mut out, &[rec]).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "strategy_id,bits,min,mean,max,is_comb,nodes_evaluated,nodes_skipped\n11,01011,1.0,1.0,1.0,false,3,0\n"
        );
    }
}
