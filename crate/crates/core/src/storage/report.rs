use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{io_err, StorageError};
use crate::evolution::{AblationTable, EvolutionReport, ExperimentConfig};
use crate::policy::SRReport;

pub const REPORT_COLUMNS: &str = "round,model,task_id,sr,pool_size,selected_this_round,converged";

fn sr_rows(out: &mut String, r: &SRReport, round: u32, pool: usize, selected: usize, converged: bool) -> Result<(), StorageError> {
    let rates = r.per_task_sr();
    let model = r.model.as_str();
    let c = converged as u8;
    for (t, sr) in rates.iter().enumerate() {
        writeln!(out, "{round},{model},{t},{sr},{pool},{selected},{c}").unwrap();
    }
    let mean = r.mean_sr();
    let check = rates.iter().sum::<f64>() / rates.len() as f64;
    if (mean - check).abs() > 1e-9 {
        return Err(StorageError::Report(format!("round {round} {model}: mean {mean} vs task average {check}")));
    }
    writeln!(out, "{round},{model},mean,{mean},{pool},{selected},{c}").unwrap();
    Ok(())
}

/// Per round: base tasks then base mean, EMA tasks then EMA mean.
pub fn report_csv(report: &EvolutionReport) -> Result<String, StorageError> {
    let mut out = String::from(REPORT_COLUMNS);
    out.push('\n');
    for (i, r) in report.rounds.iter().enumerate() {
        if r.round as usize != i {
            return Err(StorageError::Report(format!("round {} at position {i}", r.round)));
        }
        sr_rows(&mut out, &r.base, r.round, r.pool_size, r.selected, r.converged)?;
        sr_rows(&mut out, &r.ema, r.round, r.pool_size, r.selected, r.converged)?;
    }
    Ok(out)
}

pub fn write_report(path: &Path, report: &EvolutionReport) -> Result<(), StorageError> {
    fs::write(path, report_csv(report)?).map_err(io_err(path))
}

pub fn scored_csv(report: &EvolutionReport) -> String {
    let mut out = String::from("demo_id,task_id,source,round,confidence,selected,scheme\n");
    for s in &report.scored {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.demo_id,
            s.task_id,
            s.source.as_str(),
            s.round,
            s.confidence,
            s.selected as u8,
            s.scheme
        )
        .unwrap();
    }
    out
}

pub fn write_scored(path: &Path, report: &EvolutionReport) -> Result<(), StorageError> {
    fs::write(path, scored_csv(report)).map_err(io_err(path))
}

pub fn ablation_csv(t: &AblationTable) -> String {
    t.to_csv()
}

pub fn write_ablation(path: &Path, t: &AblationTable) -> Result<(), StorageError> {
    fs::write(path, ablation_csv(t)).map_err(io_err(path))
}

/// Every effective setting, defaults included.
pub fn write_config_echo(path: &Path, cfg: &ExperimentConfig) -> Result<(), StorageError> {
    let mut text = cfg.to_json();
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::RoundReport;
    use crate::policy::ModelKind;

    fn sr(model: ModelKind, round: u32, successes: Vec<usize>) -> SRReport {
        SRReport {
            model,
            round,
            episodes: 20,
            successes,
        }
    }

    fn report(rounds: u32) -> EvolutionReport {
        EvolutionReport {
            config: ExperimentConfig::default(),
            rounds: (0..=rounds)
                .map(|r| RoundReport {
                    round: r,
                    base: sr(ModelKind::Base, r, vec![1, 3, 5, 7, 11, 13, 17, 19]),
                    ema: sr(ModelKind::Ema, r, vec![0, 20, 2, 18, 4, 16, 6, 14]),
                    pool_size: 64 + 10 * r as usize,
                    recorded: 0,
                    selected: if r == 0 { 0 } else { 10 },
                    converged: false,
                })
                .collect(),
            convergence_round: None,
            scored: Vec::new(),
        }
    }

    #[test]
    fn layout_and_consistency() {
        let csv = report_csv(&report(0)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], REPORT_COLUMNS);
        assert_eq!(lines.len(), 1 + 18);
        assert_eq!(lines[1], "0,base,0,0.05,64,0,0");
        let mean_row: Vec<&str> = lines[9].split(',').collect();
        assert_eq!(mean_row[2], "mean");
        let avg: f64 = lines[1..9].iter().map(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap()).sum::<f64>() / 8.0;
        assert!((mean_row[3].parse::<f64>().unwrap() - avg).abs() < 1e-9);
        assert_eq!(report_csv(&report(2)).unwrap(), report_csv(&report(2)).unwrap());
    }

    #[test]
    fn gaps_are_rejected() {
        let mut r = report(2);
        r.rounds.remove(1);
        assert!(matches!(report_csv(&r), Err(StorageError::Report(_))));
    }
}
