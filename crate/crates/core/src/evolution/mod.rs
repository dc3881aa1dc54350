//! The self-evolution loop: train on the few-shot expert demos, record
//! rollouts of the base and EMA policies, keep the successes the selector
//! ranks as least expert-like, grow the pool, retrain, repeat.

mod ablation;
mod config;

pub use ablation::{run_ablation, selector_accuracy, AblationTable, Study};
pub use config::{ConfigError, ExperimentConfig, PoolFilter, PoolPart};

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::Serialize;

use crate::microsim::{rollout, EnvAugConfig, ExpertController, Source, Task, TaskSuite, Trajectory};
use crate::nn::{NnError, ParamSet, ParamView};
use crate::policy::{evaluate, train_bc, ModelKind, Policy, PolicyController, SRReport};
use crate::rng::{derive_seed, labels, stage_seed, ModelTag, SplitMix64};
use crate::selector::{select_per_task, train_selector, Scheme, ScoredDemo, Selector, SelectorError, SelectorLog, SelectorSpec};

#[derive(Debug, thiserror::Error)]
pub enum EvolutionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("policy training failed: {0}")]
    Nn(#[from] NnError),
    #[error("selector training failed: {0}")]
    Selector(#[from] SelectorError),
    #[error("scripted expert failed on task {task_id} demo {idx}")]
    ExpertFailed { task_id: usize, idx: usize },
    #[error("prepared session does not match the config: {0}")]
    Incompatible(&'static str),
}

/// `shots` scripted demos per task, seeded per (task, demo index).
pub fn generate_expert_demos(master: u64, shots: usize, aug: &EnvAugConfig) -> Result<Vec<Trajectory>, EvolutionError> {
    let mut out = Vec::with_capacity(shots * Task::all().len());
    for task in Task::all() {
        for i in 0..shots {
            let seed = derive_seed(master, 0, ModelTag::Expert, task.task_id, i);
            let mut c = ExpertController::new(task, seed);
            let t = rollout(&mut c, &task, seed, aug, Source::Expert, 0).with_index(i);
            if !t.success {
                return Err(EvolutionError::ExpertFailed { task_id: task.task_id, idx: i });
            }
            out.push(t);
        }
    }
    Ok(out)
}

/// `n` expert demos on randomly drawn tasks and initial states, from a
/// stream disjoint from the training demos.
pub fn heldout_expert_demos(master: u64, n: usize, delta: f32) -> Vec<Trajectory> {
    let aug = EnvAugConfig { enabled: true, delta };
    let mut rng = SplitMix64::new(stage_seed(master, labels::HELDOUT, 0));
    let tasks = Task::all();
    (0..n)
        .map(|i| {
            let task = tasks[rng.below(tasks.len())];
            let seed = rng.next_u64();
            let mut c = ExpertController::new(task, seed);
            rollout(&mut c, &task, seed, &aug, Source::Expert, 0).with_index(i)
        })
        .collect()
}

/// Expert demos plus every recorded demo kept so far. Append-only.
#[derive(Debug, Clone, Default)]
pub struct DemoPool {
    pub expert: Vec<Trajectory>,
    pub recorded: Vec<Trajectory>,
}

impl DemoPool {
    pub fn new(expert: Vec<Trajectory>) -> Self {
        Self { expert, recorded: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.expert.len() + self.recorded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add(&mut self, demos: Vec<Trajectory>) {
        assert!(demos.iter().all(|d| d.success), "only successful demos enter the pool");
        self.recorded.extend(demos);
    }

    pub fn training_set(&self) -> Vec<&Trajectory> {
        self.expert.iter().chain(&self.recorded).collect()
    }
}

/// True once the best value has gained at most `min_delta` over the last
/// `patience` entries.
pub fn check_convergence(history: &[f64], patience: usize, min_delta: f64) -> bool {
    if patience == 0 || history.len() <= patience {
        return false;
    }
    let split = history.len() - patience;
    let before = history[..split].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let recent = history[split..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    recent - before <= min_delta
}

/// Relative improvement in percent; `None` when the baseline is not
/// positive.
pub fn growth_rate(baseline: f64, final_sr: f64) -> Option<f64> {
    if baseline > 0.0 && baseline.is_finite() && final_sr.is_finite() {
        Some(100.0 * (final_sr - baseline) / baseline)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: u32,
    pub base: SRReport,
    pub ema: SRReport,
    /// Expert plus recorded demos after this round's additions.
    pub pool_size: usize,
    /// Successful rollouts available for selection.
    pub recorded: usize,
    pub selected: usize,
    pub converged: bool,
}

/// One scored candidate, as written to the scored-pool CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredRow {
    pub demo_id: String,
    pub task_id: usize,
    pub source: Source,
    pub round: u32,
    pub confidence: f64,
    pub selected: bool,
    pub scheme: Scheme,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvolutionReport {
    pub config: ExperimentConfig,
    pub rounds: Vec<RoundReport>,
    pub convergence_round: Option<u32>,
    pub scored: Vec<ScoredRow>,
}

impl EvolutionReport {
    pub fn base_sr(&self, round: u32) -> Option<f64> {
        self.rounds.iter().find(|r| r.round == round).map(|r| r.base.mean_sr())
    }

    /// SR of the given round, or of the last round run if the loop
    /// stopped earlier.
    pub fn base_sr_at_or_last(&self, round: u32) -> f64 {
        self.rounds.iter().rev().find(|r| r.round <= round).expect("round 0 always present").base.mean_sr()
    }

    pub fn ema_sr_at_or_last(&self, round: u32) -> f64 {
        self.rounds.iter().rev().find(|r| r.round <= round).expect("round 0 always present").ema.mean_sr()
    }

    pub fn initial_base_sr(&self) -> f64 {
        self.rounds[0].base.mean_sr()
    }

    pub fn final_base_sr(&self) -> f64 {
        self.rounds.last().expect("round 0 always present").base.mean_sr()
    }

    pub fn best_base_sr(&self) -> f64 {
        self.rounds.iter().map(|r| r.base.mean_sr()).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Growth of the best base round over the few-shot baseline.
    pub fn growth_rate(&self) -> Option<f64> {
        growth_rate(self.initial_base_sr(), self.best_base_sr())
    }
}

/// Everything that precedes the first round and depends only on the
/// seed, the shot count and the training recipe: expert demos, the
/// round-0 policy with its evaluations, and (on first use) the selector.
/// Ablations that vary only round-level settings share one session.
pub struct Session {
    key: SessionKey,
    pub suite: TaskSuite,
    pub expert: Vec<Trajectory>,
    pub policy: Policy,
    pub params: ParamSet,
    pub round0: (SRReport, SRReport),
    selector_spec: SelectorSpec,
    selector: OnceLock<(Selector, SelectorLog)>,
}

#[derive(Debug, Clone, PartialEq)]
struct SessionKey {
    master_seed: u64,
    shots: usize,
    tau: f64,
    delta: f32,
    eval_episodes: usize,
    expert_aug: bool,
    init_steps: usize,
    policy: crate::policy::PolicySpec,
}

impl SessionKey {
    fn of(cfg: &ExperimentConfig) -> Self {
        Self {
            master_seed: cfg.master_seed,
            shots: cfg.shots,
            tau: cfg.tau,
            delta: cfg.delta,
            eval_episodes: cfg.eval_episodes,
            expert_aug: cfg.expert_aug,
            init_steps: cfg.init_steps,
            policy: cfg.policy.clone(),
        }
    }
}

fn eval_pair(policy: &Policy, params: &ParamSet, suite: &TaskSuite, cfg: &ExperimentConfig, round: u32) -> (SRReport, SRReport) {
    let base = evaluate(policy, params, suite, cfg.eval_episodes, cfg.delta, ModelKind::Base, round);
    let shadow = params.ema_view().expect("trained policy has a shadow");
    let ema = evaluate(policy, &shadow, suite, cfg.eval_episodes, cfg.delta, ModelKind::Ema, round);
    (base, ema)
}

impl Session {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self, EvolutionError> {
        cfg.validate()?;
        let aug = EnvAugConfig {
            enabled: cfg.expert_aug,
            delta: cfg.delta,
        };
        let expert = generate_expert_demos(cfg.master_seed, cfg.shots, &aug)?;
        let policy = Policy::new(cfg.policy.clone());
        let mut params = policy.init(stage_seed(cfg.master_seed, labels::POLICY_INIT, 0));
        let refs: Vec<&Trajectory> = expert.iter().collect();
        train_bc(&policy, &mut params, &refs, cfg.init_steps, cfg.tau, stage_seed(cfg.master_seed, labels::POLICY_SHUFFLE, 0))?;
        if params.ema.is_none() {
            crate::nn::init_ema(&mut params);
        }
        let suite = TaskSuite::new(cfg.master_seed);
        let round0 = eval_pair(&policy, &params, &suite, cfg, 0);
        log::info!(
            "seed {} round 0: base {:.3} ema {:.3}",
            cfg.master_seed,
            round0.0.mean_sr(),
            round0.1.mean_sr()
        );
        Ok(Self {
            key: SessionKey::of(cfg),
            suite,
            expert,
            policy,
            params,
            round0,
            selector_spec: cfg.selector_spec(),
            selector: OnceLock::new(),
        })
    }

    pub fn compatible(&self, cfg: &ExperimentConfig) -> bool {
        self.key == SessionKey::of(cfg)
    }

    /// The selector trained on this session's expert demos.
    pub fn selector(&self) -> Result<&(Selector, SelectorLog), EvolutionError> {
        if let Some(s) = self.selector.get() {
            return Ok(s);
        }
        let master = self.key.master_seed;
        let refs: Vec<&Trajectory> = self.expert.iter().collect();
        let trained = train_selector(
            &self.selector_spec,
            &refs,
            stage_seed(master, labels::SELECTOR_INIT, 0),
            stage_seed(master, labels::SELECTOR_SHUFFLE, 0),
        )?;
        log::info!("seed {master} selector train accuracy {:.3}", trained.1.final_accuracy);
        Ok(self.selector.get_or_init(|| trained))
    }
}

fn run_jobs<P: ParamView<f32> + Sync>(
    policy: &Policy,
    views: &[(Source, &P)],
    jobs: &[(usize, usize, usize, u64, bool)],
    cfg: &ExperimentConfig,
    round: u32,
) -> Vec<Trajectory> {
    // (view, task, idx, seed, augmented); output keeps job order
    jobs.par_iter()
        .map(|&(v, task_id, idx, seed, augmented)| {
            let (source, params) = views[v];
            let task = Task::new(task_id);
            let aug = EnvAugConfig {
                enabled: augmented,
                delta: cfg.delta,
            };
            let mut c = PolicyController { policy, params };
            rollout(&mut c, &task, seed, &aug, source, round).with_index(idx)
        })
        .collect()
}

enum View<'a> {
    Base(&'a ParamSet),
    Ema(crate::nn::EmaView<'a>),
}

impl ParamView<f32> for View<'_> {
    fn tensor(&self, k: usize) -> &[f32] {
        match self {
            View::Base(p) => p.tensor(k),
            View::Ema(e) => e.tensor(k),
        }
    }
}

fn views(params: &ParamSet) -> [(Source, View<'_>); 2] {
    [
        (Source::Base, View::Base(params)),
        (Source::Ema, View::Ema(params.ema_view().expect("trained policy has a shadow"))),
    ]
}

fn rollouts_of(policy: &Policy, params: &ParamSet, jobs: &[(usize, usize, usize, u64, bool)], cfg: &ExperimentConfig, round: u32) -> Vec<Trajectory> {
    let v = views(params);
    let refs: Vec<(Source, &View<'_>)> = v.iter().map(|(s, p)| (*s, p)).collect();
    run_jobs(policy, &refs, jobs, cfg, round)
}

fn tag_of(source: Source) -> ModelTag {
    match source {
        Source::Expert => ModelTag::Expert,
        Source::Base => ModelTag::Base,
        Source::Ema => ModelTag::Ema,
    }
}

/// R rollouts per task with the base policy and, with model-level
/// augmentation, R more with the EMA shadow. Initial states are randomized
/// iff `e_aug`. Returns the successes in (model, task, rollout) order.
pub fn record_round(policy: &Policy, params: &ParamSet, cfg: &ExperimentConfig, round: u32) -> Vec<Trajectory> {
    assert!(round >= 1, "recording starts at round 1");
    let mut jobs = Vec::new();
    let sources: &[Source] = if cfg.m_aug { &[Source::Base, Source::Ema] } else { &[Source::Base] };
    for (v, &src) in sources.iter().enumerate() {
        for task in 0..Task::all().len() {
            for i in 0..cfg.rollouts {
                let seed = derive_seed(cfg.master_seed, round as u64, tag_of(src), task, i);
                jobs.push((v, task, i, seed, cfg.e_aug));
            }
        }
    }
    rollouts_of(policy, params, &jobs, cfg, round).into_iter().filter(|t| t.success).collect()
}

/// Paired recording for pool-composition studies: base and EMA start from
/// the same non-randomized state for each rollout index; `P5` adds an EMA
/// pass with randomized initial states. Only the requested parts are kept.
pub fn record_partitioned(policy: &Policy, params: &ParamSet, cfg: &ExperimentConfig, round: u32, filter: &PoolFilter) -> Vec<Trajectory> {
    let tasks = Task::all().len();
    let r = cfg.rollouts;
    let mut jobs = Vec::new();
    for v in 0..2 {
        for task in 0..tasks {
            for i in 0..r {
                let seed = derive_seed(cfg.master_seed, round as u64, ModelTag::Base, task, i);
                jobs.push((v, task, i, seed, false));
            }
        }
    }
    if filter.contains(PoolPart::P5) {
        for task in 0..tasks {
            for i in 0..r {
                let seed = derive_seed(cfg.master_seed, round as u64, ModelTag::Ema, task, i);
                jobs.push((1, task, i, seed, true));
            }
        }
    }
    let all = rollouts_of(policy, params, &jobs, cfg, round);
    let (paired, extra) = all.split_at(2 * tasks * r);
    let (base, ema) = paired.split_at(tasks * r);
    let mut out = Vec::new();
    for (b, e) in base.iter().zip(ema) {
        let part_b = match (b.success, e.success) {
            (true, false) => Some(PoolPart::P1),
            (true, true) => Some(PoolPart::P2),
            _ => None,
        };
        if part_b.is_some_and(|p| filter.contains(p)) {
            out.push(b.clone());
        }
    }
    for (b, e) in base.iter().zip(ema) {
        let part_e = match (b.success, e.success) {
            (true, true) => Some(PoolPart::P3),
            (false, true) => Some(PoolPart::P4),
            _ => None,
        };
        if part_e.is_some_and(|p| filter.contains(p)) {
            out.push(e.clone());
        }
    }
    out.extend(extra.iter().filter(|t| t.success).cloned());
    out
}

/// Runs the whole loop with a fresh session.
pub fn run_seil(cfg: &ExperimentConfig) -> Result<EvolutionReport, EvolutionError> {
    let session = Session::prepare(cfg)?;
    run_seil_with(cfg, &session, &mut |_| {})
}

/// Report plus the final policy parameters and demo pool.
pub struct EvolutionOutcome {
    pub report: EvolutionReport,
    pub params: ParamSet,
    pub pool: DemoPool,
}

/// Runs rounds 1..=max_rounds on top of a prepared session. `on_round` sees
/// the report after round 0 and after every later round, so a caller can
/// persist partial progress before an abort.
pub fn run_seil_with(cfg: &ExperimentConfig, session: &Session, on_round: &mut dyn FnMut(&EvolutionReport)) -> Result<EvolutionReport, EvolutionError> {
    run_seil_outcome(cfg, session, on_round).map(|o| o.report)
}

pub fn run_seil_outcome(cfg: &ExperimentConfig, session: &Session, on_round: &mut dyn FnMut(&EvolutionReport)) -> Result<EvolutionOutcome, EvolutionError> {
    cfg.validate()?;
    if !session.compatible(cfg) {
        return Err(EvolutionError::Incompatible("seed, shots or round-0 training recipe differ"));
    }
    if cfg.use_selector && !cfg.retrain_selector && cfg.selector_spec() != session.selector_spec {
        return Err(EvolutionError::Incompatible("selector spec differs"));
    }
    let policy = &session.policy;
    let mut params = session.params.clone();
    let mut pool = DemoPool::new(session.expert.clone());
    let mut report = EvolutionReport {
        config: cfg.clone(),
        rounds: vec![RoundReport {
            round: 0,
            base: session.round0.0.clone(),
            ema: session.round0.1.clone(),
            pool_size: pool.len(),
            recorded: 0,
            selected: 0,
            converged: false,
        }],
        convergence_round: None,
        scored: Vec::new(),
    };
    on_round(&report);
    let mut history = vec![session.round0.0.mean_sr()];
    let master = cfg.master_seed;
    let mut retrained: Option<Selector> = None;

    for round in 1..=cfg.max_rounds {
        let candidates = match &cfg.pool_filter {
            Some(f) => record_partitioned(policy, &params, cfg, round, f),
            None => record_round(policy, &params, cfg, round),
        };
        let recorded = candidates.len();
        let chosen: Vec<Trajectory> = if cfg.use_selector {
            if cfg.retrain_selector {
                let (s, _) = train_selector(
                    &cfg.selector_spec(),
                    &pool.training_set(),
                    stage_seed(master, labels::SELECTOR_INIT, round as u64),
                    stage_seed(master, labels::SELECTOR_SHUFFLE, round as u64),
                )?;
                retrained = Some(s);
            }
            let selector = match &retrained {
                Some(s) => s,
                None => &session.selector()?.0,
            };
            let refs: Vec<&Trajectory> = candidates.iter().collect();
            let conf = selector.confidences(&refs);
            let scored: Vec<ScoredDemo> = refs.iter().zip(&conf).enumerate().map(|(i, (d, &c))| ScoredDemo::of(i, d, c)).collect();
            let mut rng = SplitMix64::new(stage_seed(master, labels::UNIFORM_SELECT, round as u64));
            let picked = select_per_task(&scored, cfg.select_k, cfg.scheme, &mut rng);
            let mut keep = vec![false; candidates.len()];
            for p in &picked {
                keep[p.index] = true;
            }
            for (i, d) in candidates.iter().enumerate() {
                report.scored.push(ScoredRow {
                    demo_id: d.demo_id(),
                    task_id: d.task_id,
                    source: d.source,
                    round,
                    confidence: conf[i],
                    selected: keep[i],
                    scheme: cfg.scheme,
                });
            }
            candidates.into_iter().zip(keep).filter(|(_, k)| *k).map(|(d, _)| d).collect()
        } else {
            candidates
        };
        let selected = chosen.len();
        pool.add(chosen);

        let train = pool.training_set();
        let shuffle = stage_seed(master, labels::POLICY_SHUFFLE, round as u64);
        let result = if cfg.retrain_from_scratch {
            params = policy.init(stage_seed(master, labels::POLICY_INIT, 0));
            train_bc(policy, &mut params, &train, cfg.init_steps, cfg.tau, shuffle)
        } else {
            train_bc(policy, &mut params, &train, cfg.round_steps, cfg.tau, shuffle)
        };
        result?;
        if params.ema.is_none() {
            crate::nn::init_ema(&mut params);
        }
        let (base, ema) = eval_pair(policy, &params, &session.suite, cfg, round);
        history.push(base.mean_sr());
        let converged = check_convergence(&history, cfg.patience, cfg.min_delta);
        log::info!(
            "seed {master} round {round}: recorded {recorded} selected {selected} pool {} base {:.3} ema {:.3}",
            pool.len(),
            base.mean_sr(),
            ema.mean_sr()
        );
        report.rounds.push(RoundReport {
            round,
            base,
            ema,
            pool_size: pool.len(),
            recorded,
            selected,
            converged,
        });
        if converged && report.convergence_round.is_none() {
            report.convergence_round = Some(round);
        }
        on_round(&report);
        if converged && cfg.stop_on_convergence {
            break;
        }
    }
    Ok(EvolutionOutcome { report, params, pool })
}
