mod common;

use divsample::bandit::UpdateMode;
use divsample::kernelmath::{
    log_det_volume, psd_project, quality_modulated_kernel, ridge_leverage_scores, FeatureKernel,
};
use divsample::selection::StrategyKind;
use divsample::simulation::{compute_reward, run_simulation, Simulation, SimulationConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn config(strategy: StrategyKind, seed: u64) -> SimulationConfig {
    SimulationConfig {
        strategy,
        seed,
        rounds: 12,
        batch_size: 4,
        ..SimulationConfig::default()
    }
}

#[test]
fn reward_is_product_of_consecutive_gains() {
    let (emb, test) = common::small();
    for strategy in StrategyKind::ALL {
        let report = run_simulation(&config(strategy, 3), &emb, &test).unwrap();
        let (mut old_v, mut old_r) = (0.0, 0.0);
        for r in &report.rounds {
            assert_eq!(r.delta_volume, r.volume - old_v);
            assert_eq!(r.delta_rls, r.rls_logsum - old_r);
            assert_eq!(r.reward, compute_reward(r.delta_rls, r.delta_volume));
            old_v = r.volume;
            old_r = r.rls_logsum;
        }
    }
}

#[test]
fn leverage_matches_offline_recompute() {
    let (emb, test) = common::small();
    let features: DMatrix<f64> = emb.items().clone();
    let kernel = FeatureKernel::new(&features);
    for strategy in StrategyKind::ALL {
        let report = run_simulation(&config(strategy, 5), &emb, &test).unwrap();
        let mut history: Vec<usize> = Vec::new();
        for r in &report.rounds {
            let mut logsum = 0.0;
            for &l in &r.batch {
                let kappa = ridge_leverage_scores(&history, &[l], &kernel, 0.1).unwrap()[0];
                logsum += kappa.ln();
                history.push(l);
            }
            assert!(
                (logsum - r.rls_logsum).abs() < 1e-9,
                "{strategy} round {}: {logsum} vs {}",
                r.t,
                r.rls_logsum
            );
        }
    }
}

#[test]
fn volume_matches_repaired_quality_kernel() {
    let (emb, test) = common::small();
    let cfg = config(StrategyKind::VMo, 2);
    let report = run_simulation(&cfg, &emb, &test).unwrap();
    for r in &report.rounds {
        let raw = quality_modulated_kernel(&r.batch, &emb, cfg.user, cfg.quality_floor).unwrap();
        let v = log_det_volume(&psd_project(raw.as_matrix(), cfg.jitter).unwrap());
        assert_eq!(v.volume, r.volume);
        assert!(r.volume >= 0.0);
    }
}

#[test]
fn history_grows_by_batch_size() {
    let (emb, _) = common::small();
    let cfg = config(StrategyKind::MO, 1);
    let mut sim = Simulation::new(cfg.clone(), &emb).unwrap();
    for t in 1..=cfg.rounds {
        let rec = sim.run_round().unwrap();
        assert_eq!(rec.t, t);
        assert_eq!(sim.history().len(), t * cfg.batch_size);
        let mut sorted = rec.batch.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), cfg.batch_size, "batch items are distinct");
    }
}

#[test]
fn seeds_change_the_trajectory() {
    let (emb, test) = common::small();
    let a = run_simulation(&config(StrategyKind::VMN, 1), &emb, &test).unwrap();
    let b = run_simulation(&config(StrategyKind::VMN, 2), &emb, &test).unwrap();
    let c = run_simulation(&config(StrategyKind::VMN, 1), &emb, &test).unwrap();
    assert_eq!(a, c);
    assert_ne!(
        a.rounds.iter().map(|r| r.batch.clone()).collect::<Vec<_>>(),
        b.rounds.iter().map(|r| r.batch.clone()).collect::<Vec<_>>()
    );
}

#[test]
fn report_metrics_are_consistent() {
    let (emb, test) = common::small();
    let report = run_simulation(&config(StrategyKind::Unc, 4), &emb, &test).unwrap();
    let pulled: u64 = report.pulls.iter().sum();
    assert_eq!(pulled as usize, 12 * 4);
    assert_eq!(
        report.distinct_items,
        report.pulls.iter().filter(|&&p| p > 0).count()
    );
    assert!((0.0..=1.0).contains(&report.pulls_gini));
    let rel = report.relevance;
    for v in [
        rel.overall_precision,
        rel.overall_recall,
        rel.liked_precision,
        rel.liked_recall,
        rel.disliked_precision,
        rel.disliked_recall,
    ] {
        assert!((0.0..=1.0).contains(&v));
    }
    assert!((rel.overall_precision - rel.liked_precision - rel.disliked_precision).abs() < 1e-12);
    assert_eq!(
        report.cumulative_regret,
        report.final_round().cumulative_regret
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn magnitude_mode_accounts_for_rewards(seed in 0u64..1000, idx in 0usize..6) {
        let (emb, test) = common::small();
        let cfg = SimulationConfig {
            update_mode: UpdateMode::Magnitude,
            rounds: 6,
            ..config(StrategyKind::ALL[idx], seed)
        };
        let report = run_simulation(&cfg, &emb, &test).unwrap();
        let alpha: f64 = report.arms.iter().map(|a| a.alpha - 1.0).sum();
        let beta: f64 = report.arms.iter().map(|a| a.beta - 1.0).sum();
        let k = cfg.batch_size as f64;
        let pos: f64 = report.rounds.iter().map(|r| k * r.reward.max(0.0)).sum();
        let neg: f64 = report.rounds.iter().map(|r| k * (-r.reward).max(0.0)).sum();
        prop_assert!((alpha - pos).abs() <= 1e-9 * (1.0 + pos));
        prop_assert!((beta - neg).abs() <= 1e-9 * (1.0 + neg));
    }

    #[test]
    fn regret_is_monotone(seed in 0u64..1000, idx in 0usize..6, threshold in 0.5f64..100.0) {
        let (emb, test) = common::small();
        let cfg = SimulationConfig {
            regret_threshold: threshold,
            rounds: 8,
            ..config(StrategyKind::ALL[idx], seed)
        };
        let report = run_simulation(&cfg, &emb, &test).unwrap();
        let mut prev = 0.0;
        for r in &report.rounds {
            prop_assert!(r.regret_increment >= 0.0);
            prop_assert!(r.cumulative_regret >= prev);
            prev = r.cumulative_regret;
        }
    }
}
