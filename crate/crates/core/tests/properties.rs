use proptest::prelude::*;
use seil_core::microsim::{rollout, step, Action, EnvAugConfig, ExpertController, FnController, SimState, Source, Task, NUM_TASKS};
use seil_core::nn::init_ema;
use seil_core::policy::{Policy, PolicySpec};
use seil_core::rng::SplitMix64;
use seil_core::selector::{select, select_per_task, Scheme, ScoredDemo};
use seil_core::storage::{decode_checkpoint, decode_demo, encode_checkpoint, encode_demo};

fn scored(confs: &[f64], tasks: usize) -> Vec<ScoredDemo> {
    confs
        .iter()
        .enumerate()
        .map(|(i, &c)| ScoredDemo {
            index: i,
            key: (Source::Base, 1, i % tasks, i as u32),
            task_id: i % tasks,
            confidence: c,
        })
        .collect()
}

fn scheme() -> impl Strategy<Value = Scheme> {
    prop::sample::select(Scheme::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn selection_size_and_uniqueness(confs in prop::collection::vec(0.0f64..1.0, 0..40), k in 0usize..50, s in scheme(), seed: u64) {
        let pool = scored(&confs, 1);
        let picked = select(&pool, k, s, &mut SplitMix64::new(seed));
        prop_assert_eq!(picked.len(), k.min(pool.len()));
        let mut idx: Vec<usize> = picked.iter().map(|d| d.index).collect();
        idx.sort_unstable();
        idx.dedup();
        prop_assert_eq!(idx.len(), picked.len());
        let again = select(&pool, k, s, &mut SplitMix64::new(seed));
        prop_assert_eq!(picked, again);
    }

    #[test]
    fn ascending_and_descending_are_extremes(confs in prop::collection::vec(0.0f64..1.0, 1..40), k in 1usize..20) {
        let pool = scored(&confs, 1);
        let k = k.min(pool.len() / 2).max(1);
        let mut rng = SplitMix64::new(0);
        let asc = select(&pool, k, Scheme::Ascending, &mut rng);
        let desc = select(&pool, k, Scheme::Descending, &mut rng);
        let disjoint = asc.iter().all(|a| desc.iter().all(|d| d.index != a.index));
        if disjoint && !asc.is_empty() && !desc.is_empty() {
            let hi = asc.iter().map(|d| d.confidence).fold(f64::MIN, f64::max);
            let lo = desc.iter().map(|d| d.confidence).fold(f64::MAX, f64::min);
            prop_assert!(hi <= lo);
        }
    }

    #[test]
    fn per_task_selection_caps_every_task(confs in prop::collection::vec(0.0f64..1.0, 0..80), k in 0usize..12, s in scheme()) {
        let pool = scored(&confs, NUM_TASKS);
        let picked = select_per_task(&pool, k, s, &mut SplitMix64::new(9));
        prop_assert!(picked.len() <= k * NUM_TASKS);
        for t in 0..NUM_TASKS {
            let have = pool.iter().filter(|d| d.task_id == t).count();
            let got = picked.iter().filter(|d| d.task_id == t).count();
            prop_assert_eq!(got, k.min(have));
        }
    }

    #[test]
    fn demo_codec_round_trips(task in 0..NUM_TASKS, seed: u64, aug: bool, idx in 0usize..100) {
        let t = Task::new(task);
        let cfg = if aug { EnvAugConfig::default() } else { EnvAugConfig::disabled() };
        let d = rollout(&mut ExpertController::new(t, seed), &t, seed, &cfg, Source::Expert, 0).with_index(idx);
        prop_assert_eq!(decode_demo(&encode_demo(&d)).unwrap(), d);
    }

    #[test]
    fn random_walks_keep_the_state_valid(seed: u64, task in 0..NUM_TASKS) {
        let t = Task::new(task);
        let mut rng = SplitMix64::new(seed);
        let mut ctl = FnController(move |_: &_| Action::new(rng.symmetric(1.5), rng.symmetric(1.5), rng.symmetric(1.0)));
        let traj = rollout(&mut ctl, &t, seed, &EnvAugConfig::default(), Source::Base, 1);
        let mut s = traj.init_state.clone();
        for (_, a) in &traj.steps {
            prop_assert!(a.0.iter().all(|v| (-1.0..=1.0).contains(v)));
            s = step(&s, a);
            prop_assert!(s.is_consistent());
        }
    }

    #[test]
    fn checkpoint_round_trips(hidden in prop::collection::vec(1usize..12, 0..3), seed: u64, with_ema: bool) {
        let policy = Policy::new(PolicySpec { hidden, ..Default::default() });
        let mut p = policy.init(seed);
        if with_ema {
            init_ema(&mut p);
        }
        prop_assert!(decode_checkpoint(&encode_checkpoint(&p)).unwrap().bit_eq(&p));
    }
}

#[test]
fn canonical_state_is_consistent() {
    assert!(SimState::canonical().is_consistent());
}
