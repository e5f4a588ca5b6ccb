use std::sync::Arc;

use umf_core::baselines::{best_of_n, pair};
use umf_core::denoiser::{DenoiserRegistry, PlantedSkillDenoiser, SkillBand};
use umf_core::reward::ExactMatchReward;
use umf_core::search::{run, StopReason, UnMaskFork, ROOT};
use umf_core::testbed::{brute_force, PlantedTask};
use umf_core::tokmap::{Codec, CodecRegistry, ToyCodec};
use umf_core::{Action, MaskedState, NfeLedger, RatioSchedule, RemaskStrategy, RewardProvider, SearchConfig, SearchEnv};

fn exhaust(task: &PlantedTask, cache: bool) -> umf_core::SearchOutcome {
    let config = SearchConfig { cache, ..SearchConfig::default() };
    run(task.env(), &task.actions, task.root.clone(), config, &NfeLedger::unbounded()).unwrap()
}

#[test]
fn cache_changes_cost_not_results() {
    let task = PlantedTask::new(5, 10, 6, 0.5).unwrap();
    let on = exhaust(&task, true);
    let off = exhaust(&task, false);
    assert_eq!(on.stop_reason, StopReason::TreeExhausted);
    assert_eq!(off.stop_reason, StopReason::TreeExhausted);
    assert_eq!(on.trace.len(), off.trace.len());
    for (a, b) in on.trace.iter().zip(&off.trace) {
        assert_eq!(a.action_path, b.action_path);
        assert_eq!(a.reward, b.reward);
        assert_eq!(a.best_so_far, b.best_so_far);
    }
    assert_eq!(on.best, off.best);
    assert!(on.ledger.cache_hit_rate() > 0.0);
    assert_eq!(off.ledger.cache_hit_rate(), 0.0);
    assert!(on.ledger.consumed < off.ledger.consumed);
}

#[test]
fn cache_equivalence_under_a_fixed_budget() {
    // same iterations replayed: the cached run reaches at least as far
    let task = PlantedTask::new(8, 12, 6, 0.5).unwrap();
    let budget = 20 * 12;
    let go = |cache| {
        let config = SearchConfig { cache, ..SearchConfig::default() };
        run(task.env(), &task.actions, task.root.clone(), config, &NfeLedger::new(budget)).unwrap()
    };
    let on = go(true);
    let off = go(false);
    assert!(on.trace.len() >= off.trace.len());
    for (a, b) in on.trace.iter().zip(&off.trace) {
        assert_eq!((&a.action_path, a.reward), (&b.action_path, b.reward));
    }
    assert!(on.best_reward >= off.best_reward);
}

#[test]
fn exhausted_search_finds_the_brute_force_optimum() {
    for seed in 0..12 {
        let actions = 2 + (seed % 2) as usize;
        let gen_len = 6 + (seed % 4) as usize;
        let task = PlantedTask::random(seed, actions, gen_len, 6).unwrap();
        let config = SearchConfig { schedule: RatioSchedule::new(vec![0.75, 0.5, 0.25]).unwrap(), ..SearchConfig::default() };
        let bf = brute_force(task.env(), &task.actions, &task.root, &config.schedule).unwrap();
        let out = run(task.env(), &task.actions, task.root.clone(), config, &NfeLedger::unbounded()).unwrap();
        assert_eq!(out.stop_reason, StopReason::TreeExhausted, "seed {seed}");
        assert_eq!(out.best_reward, bf.max_reward, "seed {seed}");
        assert_eq!(out.trace.len(), out.tree.len() - 1);
        let leaves = out.tree.nodes().iter().filter(|n| n.depth == out.tree.max_depth()).count();
        assert_eq!(leaves, bf.rewards.len(), "seed {seed}");
    }
}

#[test]
fn best_so_far_and_nfe_never_decrease() {
    let task = PlantedTask::new(2, 16, 8, 0.5).unwrap();
    let out = run(task.env(), &task.actions, task.root.clone(), SearchConfig::default(), &NfeLedger::new(30 * 16)).unwrap();
    for w in out.trace.windows(2) {
        assert!(w[1].best_so_far >= w[0].best_so_far);
        assert!(w[1].nfe_consumed >= w[0].nfe_consumed);
        assert_eq!(w[1].nfe_before, w[0].nfe_consumed);
        assert_eq!(w[1].iteration, w[0].iteration + 1);
    }
    let last = out.trace.last().unwrap();
    assert_eq!(last.best_so_far, out.best_reward);
    assert_eq!(task.reward.score(&out.best).unwrap().reward, out.best_reward);
    assert!(out.overshoot < 16);
}

#[test]
fn tree_stays_consistent_through_manual_iterations() {
    let task = PlantedTask::random(4, 3, 10, 6).unwrap();
    let mut umf = UnMaskFork::new(task.env(), &task.actions, task.root.clone(), SearchConfig::default()).unwrap();
    let ledger = NfeLedger::unbounded();
    for _ in 0..60 {
        let Ok(sel) = umf.tree.select(1.0) else { break };
        let exp = umf.expand(sel.node, &ledger).unwrap();
        umf.tree.backup(exp.child, exp.reward);
        umf.tree.check_consistency().unwrap();
        let child = umf.tree.node(exp.child);
        assert_eq!(child.depth, umf.tree.node(sel.node).depth + 1);
        assert!(child.state.masked_count() < umf.tree.node(sel.node).state.masked_count());
    }
    let root = umf.tree.node(ROOT);
    assert_eq!(root.visits as usize, umf.tree.len() - 1);
}

#[test]
fn search_across_two_vocabularies() {
    let text = "abcdbadc";
    let c1 = ToyCodec::chars("v1", "abcd").unwrap();
    let c2 = ToyCodec::chars("v2", "dcba").unwrap();
    let t1 = c1.encode(text).unwrap();
    let t2 = c2.encode(text).unwrap();
    assert_ne!(t1, t2);
    let a = PlantedSkillDenoiser::new(c1.vocab().clone(), t1.clone(), SkillBand::new(0.5, 1.0), 1).unwrap();
    let b = PlantedSkillDenoiser::new(c2.vocab().clone(), t2, SkillBand::new(0.0, 0.5), 2).unwrap();
    let registry = DenoiserRegistry::new().with("A", Arc::new(a)).with("B", Arc::new(b));
    let actions = vec![
        Action::new("A", "A", 0.0, RemaskStrategy::Entropy),
        Action::new("B", "B", 0.0, RemaskStrategy::Entropy),
    ];
    let reward = ExactMatchReward::fraction(t1.clone());
    let codecs = CodecRegistry::new().with(Arc::new(c1.clone())).with(Arc::new(c2));
    let env = SearchEnv::new(&registry, &reward).with_codecs(&codecs);
    let root = MaskedState::fully_masked(c1.vocab(), vec![], text.len()).unwrap();
    let out = run(env, &actions, root, SearchConfig::default(), &NfeLedger::unbounded()).unwrap();
    assert_eq!(out.best_reward, 1.0);
    assert_eq!(out.best.vocab(), &c1.vocab().tag);
    assert_eq!(out.best.gen(), t1.as_slice());
    assert!(out.trace.iter().any(|r| r.action_path.len() > 1 && r.action_path.contains(&"B".to_string()) && r.action_path[0] == "A"));
}

#[test]
fn planted_search_beats_fixed_strategies() {
    let task = PlantedTask::new(1, 16, 8, 0.5).unwrap();
    let budget = 64 * 16;
    let umf = run(task.env(), &task.actions, task.root.clone(), SearchConfig::default(), &NfeLedger::new(budget)).unwrap();
    let bon = best_of_n(task.env(), &task.actions[0], &task.root, 0, &NfeLedger::new(budget)).unwrap();
    let pr = pair(task.env(), &task.actions[0], &task.actions[1], &task.root, 0, &NfeLedger::new(budget)).unwrap();
    assert_eq!(umf.best_reward, 1.0);
    assert!(umf.best_reward > pr.best_reward);
    assert!(pr.best_reward >= bon.best_reward);
}

#[test]
fn cache_equivalence_at_matched_iterations() {
    let task = PlantedTask::new(8, 12, 6, 0.5).unwrap();
    for budget in [12, 24, 48, 96, 192, 384] {
        let off = run(task.env(), &task.actions, task.root.clone(), SearchConfig { cache: false, ..SearchConfig::default() }, &NfeLedger::new(budget)).unwrap();
        let config = SearchConfig { max_iterations: Some(off.trace.len() as u64), ..SearchConfig::default() };
        let on = run(task.env(), &task.actions, task.root.clone(), config, &NfeLedger::unbounded()).unwrap();
        assert_eq!(on.trace.len(), off.trace.len());
        assert_eq!((&on.best, on.best_reward), (&off.best, off.best_reward), "budget {budget}");
        assert!(on.ledger.consumed <= off.ledger.consumed);
        if budget >= 4 * 12 {
            assert!(on.ledger.cache_hit_rate() > 0.0, "budget {budget}");
        }
        assert_eq!(off.ledger.cache_hit_rate(), 0.0);
    }
}
