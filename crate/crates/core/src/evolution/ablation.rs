use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::{heldout_expert_demos, run_seil_with, EvolutionError, EvolutionReport, ExperimentConfig, PoolFilter, Session};
use crate::microsim::{EnvAugConfig, Trajectory};
use crate::rng::{labels, stage_seed};
use crate::selector::{train_selector, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    Components,
    Rollouts,
    Selection,
    Pools,
    SelectorInputs,
}

impl Study {
    pub const ALL: [Study; 5] = [Study::Components, Study::Rollouts, Study::Selection, Study::Pools, Study::SelectorInputs];

    pub fn as_str(self) -> &'static str {
        match self {
            Study::Components => "components",
            Study::Rollouts => "rollouts",
            Study::Selection => "selection",
            Study::Pools => "pools",
            Study::SelectorInputs => "selector_inputs",
        }
    }

    pub fn names() -> String {
        Study::ALL.map(|s| s.as_str()).join(", ")
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Study {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Study::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown study '{s}'; valid studies: {}", Study::names()))
    }
}

/// Rows of strings under named columns, ready for CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub study: Study,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl AblationTable {
    fn new(study: Study, columns: &[&str]) -> Self {
        Self {
            study,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

fn sr(v: f64) -> String {
    format!("{v:.4}")
}

fn flag(b: bool) -> String {
    (b as u8).to_string()
}

/// The rows of the components study: (evolve, m_aug, e_aug, selector).
pub const COMPONENT_ROWS: [(bool, bool, bool, bool); 6] = [
    (false, false, false, false),
    (true, false, false, false),
    (true, true, false, false),
    (true, false, true, false),
    (true, true, true, false),
    (true, true, true, true),
];

pub const ROLLOUT_BUDGETS: [usize; 4] = [10, 20, 50, 100];

pub const POOL_FILTERS: [&str; 6] = ["P1+P2", "P3+P4", "P1+P2+P3+P4", "P1+P2+P4", "P1+P3+P4", "P1+P2+P5"];

fn fixed_rounds(cfg: &ExperimentConfig, rounds: u32) -> ExperimentConfig {
    ExperimentConfig {
        max_rounds: rounds,
        stop_on_convergence: false,
        ..cfg.clone()
    }
}

fn run(cfg: &ExperimentConfig, session: &Session) -> Result<EvolutionReport, EvolutionError> {
    run_seil_with(cfg, session, &mut |_| {})
}

/// Runs one study on top of `cfg`. Studies that evolve a policy share a
/// single round-0 session.
pub fn run_ablation(study: Study, cfg: &ExperimentConfig) -> Result<AblationTable, EvolutionError> {
    cfg.validate()?;
    if study == Study::SelectorInputs {
        return selector_inputs(cfg);
    }
    let session = Session::prepare(cfg)?;
    match study {
        Study::Components => {
            let mut t = AblationTable::new(study, &["evolve", "m_aug", "e_aug", "selector", "sr1_base", "sr4_base", "sr1_ema", "sr4_ema"]);
            for (evolve, m_aug, e_aug, selector) in COMPONENT_ROWS {
                let c = ExperimentConfig {
                    m_aug,
                    e_aug,
                    use_selector: selector,
                    ..fixed_rounds(cfg, if evolve { 4 } else { 0 })
                };
                let r = run(&c, &session)?;
                t.push(vec![
                    flag(evolve),
                    flag(m_aug),
                    flag(e_aug),
                    flag(selector),
                    sr(r.base_sr_at_or_last(1)),
                    sr(r.base_sr_at_or_last(4)),
                    sr(r.ema_sr_at_or_last(1)),
                    sr(r.ema_sr_at_or_last(4)),
                ]);
            }
            Ok(t)
        }
        Study::Rollouts => {
            let rounds = cfg.max_rounds;
            let mut cols = vec!["rollouts".to_string()];
            cols.extend((0..=rounds).map(|r| format!("round{r}")));
            let mut t = AblationTable {
                study,
                columns: cols,
                rows: Vec::new(),
            };
            for budget in ROLLOUT_BUDGETS {
                let c = ExperimentConfig {
                    rollouts: budget,
                    select_k: cfg.select_k.min(2 * budget),
                    m_aug: false,
                    e_aug: true,
                    use_selector: false,
                    ..fixed_rounds(cfg, rounds)
                };
                let r = run(&c, &session)?;
                let mut row = vec![budget.to_string()];
                row.extend(r.rounds.iter().map(|x| sr(x.base.mean_sr())));
                t.push(row);
            }
            Ok(t)
        }
        Study::Selection => {
            let mut t = AblationTable::new(study, &["scheme", "selected", "sr_base", "sr_ema"]);
            for scheme in Scheme::ALL {
                let c = ExperimentConfig {
                    rollouts: 25,
                    select_k: 20,
                    m_aug: true,
                    use_selector: true,
                    scheme,
                    ..fixed_rounds(cfg, 1)
                };
                let r = run(&c, &session)?;
                let last = r.rounds.last().unwrap();
                t.push(vec![scheme.to_string(), last.selected.to_string(), sr(last.base.mean_sr()), sr(last.ema.mean_sr())]);
            }
            Ok(t)
        }
        Study::Pools => {
            let mut t = AblationTable::new(study, &["pools", "added", "sr_base", "sr_ema"]);
            t.push(vec!["baseline".into(), "0".into(), sr(session.round0.0.mean_sr()), sr(session.round0.1.mean_sr())]);
            for f in POOL_FILTERS {
                let filter: PoolFilter = f.parse().expect("static filter");
                let c = ExperimentConfig {
                    pool_filter: Some(filter),
                    use_selector: false,
                    ..fixed_rounds(cfg, 1)
                };
                let r = run(&c, &session)?;
                let last = r.rounds.last().unwrap();
                t.push(vec![f.to_string(), last.selected.to_string(), sr(last.base.mean_sr()), sr(last.ema.mean_sr())]);
            }
            Ok(t)
        }
        Study::SelectorInputs => unreachable!(),
    }
}

/// Held-out accuracy of sequence-only and image+sequence selectors.
pub fn selector_accuracy(cfg: &ExperimentConfig, shots: usize, heldout: &[Trajectory]) -> Result<(f64, f64), EvolutionError> {
    let aug = EnvAugConfig {
        enabled: cfg.expert_aug,
        delta: cfg.delta,
    };
    let expert = super::generate_expert_demos(cfg.master_seed, shots, &aug)?;
    let refs: Vec<&Trajectory> = expert.iter().collect();
    let held: Vec<&Trajectory> = heldout.iter().collect();
    let mut acc = [0.0; 2];
    for (slot, sequence_only) in [true, false].into_iter().enumerate() {
        let spec = crate::selector::SelectorSpec {
            sequence_only,
            ..cfg.selector.clone()
        };
        let (sel, _) = train_selector(
            &spec,
            &refs,
            stage_seed(cfg.master_seed, labels::SELECTOR_INIT, 0),
            stage_seed(cfg.master_seed, labels::SELECTOR_SHUFFLE, 0),
        )?;
        acc[slot] = sel.accuracy(&held);
    }
    Ok((acc[0], acc[1]))
}

fn selector_inputs(cfg: &ExperimentConfig) -> Result<AblationTable, EvolutionError> {
    let mut t = AblationTable::new(Study::SelectorInputs, &["shots", "sequence", "img_sequence"]);
    let heldout = heldout_expert_demos(cfg.master_seed, 20, cfg.delta);
    for shots in [1, 2, 4, 8] {
        let (seq, img) = selector_accuracy(cfg, shots, &heldout)?;
        t.push(vec![shots.to_string(), sr(seq), sr(img)]);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn study_names() {
        for s in Study::ALL {
            assert_eq!(s.as_str().parse::<Study>().unwrap(), s);
        }
        let e = "bogus".parse::<Study>().unwrap_err();
        assert!(e.contains("components") && e.contains("selector_inputs"));
    }

    #[test]
    fn pool_filters_parse() {
        for f in POOL_FILTERS {
            assert_eq!(f.parse::<PoolFilter>().unwrap().to_string(), f);
        }
    }
}
