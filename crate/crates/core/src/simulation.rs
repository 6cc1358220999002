//! The sequential loop: select a batch, score it with ridge leverage and
//! volume, turn the gains into a reward, update the posteriors, grow the
//! history. Also the evaluation metrics and report serialization.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{ArmState, Arms, UpdateMode};
use crate::dataio::{EmbeddingSet, RatingsTable};
use crate::error::{Error, Result};
use crate::kernelmath::{
    log_det_volume, psd_project, quality_factors, quality_modulated_kernel, FeatureRidge,
    DEFAULT_JITTER, DEFAULT_LAMBDA, DEFAULT_QUALITY_FLOOR,
};
use crate::selection::{select_batch, History, LinVariant, StrategyKind};

pub const DEFAULT_REGRET_THRESHOLD: f64 = 50.0;
pub const DEFAULT_LIKED_THRESHOLD: f64 = 4.0;

/// Which kernel a diversity measure is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelChoice {
    /// `φ_iᵀφ_j`.
    Linear,
    /// `q_i φ_iᵀφ_j q_j` with the user's quality factors.
    QualityModulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub strategy: StrategyKind,
    pub batch_size: usize,
    pub rounds: usize,
    pub lambda: f64,
    pub jitter: f64,
    pub update_mode: UpdateMode,
    pub regret_threshold: f64,
    pub liked_threshold: f64,
    pub seed: u64,
    pub user: usize,
    pub quality_floor: f64,
    pub lin_variant: LinVariant,
    pub volume_kernel: KernelChoice,
    pub rls_kernel: KernelChoice,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::VMo,
            batch_size: 5,
            rounds: 100,
            lambda: DEFAULT_LAMBDA,
            jitter: DEFAULT_JITTER,
            update_mode: UpdateMode::Indicator,
            regret_threshold: DEFAULT_REGRET_THRESHOLD,
            liked_threshold: DEFAULT_LIKED_THRESHOLD,
            seed: 0,
            user: 0,
            quality_floor: DEFAULT_QUALITY_FLOOR,
            lin_variant: LinVariant::Aggregate,
            volume_kernel: KernelChoice::QualityModulated,
            rls_kernel: KernelChoice::Linear,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::param(m));
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if self.rounds == 0 {
            return fail("rounds must be at least 1".into());
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return fail(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.jitter >= 0.0) || !self.jitter.is_finite() {
            return fail(format!("jitter must be nonnegative, got {}", self.jitter));
        }
        if !(self.regret_threshold > 0.0) {
            return fail(format!(
                "regret threshold must be positive, got {}",
                self.regret_threshold
            ));
        }
        if !(self.quality_floor > 0.0) {
            return fail(format!(
                "quality floor must be positive, got {}",
                self.quality_floor
            ));
        }
        if !self.liked_threshold.is_finite() {
            return fail("liked threshold must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub batch: Vec<usize>,
    pub volume: f64,
    pub log_volume: f64,
    pub rls_logsum: f64,
    pub delta_volume: f64,
    pub delta_rls: f64,
    pub reward: f64,
    pub feature_variance: f64,
    pub regret_increment: f64,
    pub cumulative_regret: f64,
}

/// Per-round metrics exported in the long-format table, in column order.
pub const ROUND_METRICS: [&str; 6] = [
    "volume",
    "rls_logsum",
    "reward",
    "feature_variance",
    "regret_increment",
    "cumulative_regret",
];

impl RoundRecord {
    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "volume" => self.volume,
            "rls_logsum" => self.rls_logsum,
            "reward" => self.reward,
            "feature_variance" => self.feature_variance,
            "regret_increment" => self.regret_increment,
            "cumulative_regret" => self.cumulative_regret,
            _ => return None,
        })
    }
}

/// Precision and recall against one user's held-out ratings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMetrics {
    pub overall_precision: f64,
    pub overall_recall: f64,
    pub liked_precision: f64,
    pub liked_recall: f64,
    pub disliked_precision: f64,
    pub disliked_recall: f64,
    pub n_liked: usize,
    pub n_disliked: usize,
    pub n_recommended: usize,
    /// Set when the liked set is empty; `liked_recall` is then 0.
    pub liked_empty: bool,
    pub disliked_empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: SimulationConfig,
    pub n_items: usize,
    pub rounds: Vec<RoundRecord>,
    pub pulls: Vec<u64>,
    pub pulls_gini: f64,
    pub distinct_items: usize,
    pub relevance: RelevanceMetrics,
    pub cumulative_regret: f64,
    pub arms: Vec<ArmState>,
}

impl EvaluationReport {
    pub fn final_round(&self) -> &RoundRecord {
        self.rounds.last().expect("a report has at least one round")
    }
}

/// `Δ_RLS · Δ_Volume`.
pub fn compute_reward(delta_rls: f64, delta_volume: f64) -> f64 {
    delta_rls * delta_volume
}

/// Mean over feature dimensions of the population variance of the batch rows.
pub fn batch_feature_variance(batch: &[usize], embeddings: &EmbeddingSet) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let rows = embeddings.items().select_rows(batch);
    let k = batch.len() as f64;
    let d = rows.ncols();
    let total: f64 = rows
        .column_iter()
        .map(|col| {
            let mean = col.sum() / k;
            col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / k
        })
        .sum();
    total / d as f64
}

pub fn regret_increment(volume: f64, threshold: f64) -> f64 {
    (threshold - volume).max(0.0)
}

/// Running sum of `max(0, threshold − volume_t)`.
pub fn cumulative_regret(volumes: &[f64], threshold: f64) -> Result<Vec<f64>> {
    if !(threshold > 0.0) {
        return Err(Error::param(format!(
            "regret threshold must be positive, got {threshold}"
        )));
    }
    let mut acc = 0.0;
    Ok(volumes
        .iter()
        .map(|&v| {
            acc += regret_increment(v, threshold);
            acc
        })
        .collect())
}

/// Per-item number of rounds in which the item was in the batch.
pub fn pulls_histogram(records: &[RoundRecord], n_items: usize) -> Vec<u64> {
    let mut pulls = vec![0u64; n_items];
    for r in records {
        for &i in &r.batch {
            pulls[i] += 1;
        }
    }
    pulls
}

/// Gini coefficient of a nonnegative count vector; 0 for all-equal or all-zero.
pub fn gini(counts: &[u64]) -> f64 {
    let n = counts.len();
    let total: u64 = counts.iter().sum();
    if n == 0 || total == 0 {
        return 0.0;
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * (i as f64 + 1.0) - n as f64 - 1.0) * x as f64)
        .sum();
    weighted / (n as f64 * total as f64)
}

/// Precision/recall of the distinct recommended items against held-out
/// ratings, split into liked (`rating >= liked_threshold`) and disliked.
pub fn precision_recall(
    recommended: &[usize],
    test_ratings: &BTreeMap<usize, f64>,
    liked_threshold: f64,
) -> RelevanceMetrics {
    let distinct: BTreeSet<usize> = recommended.iter().copied().collect();
    let liked: BTreeSet<usize> = test_ratings
        .iter()
        .filter(|(_, &r)| r >= liked_threshold)
        .map(|(&i, _)| i)
        .collect();
    let disliked: BTreeSet<usize> = test_ratings
        .keys()
        .copied()
        .filter(|i| !liked.contains(i))
        .collect();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let hits = |set: &BTreeSet<usize>| distinct.intersection(set).count();
    let (hl, hd) = (hits(&liked), hits(&disliked));
    let all = hl + hd;
    RelevanceMetrics {
        overall_precision: ratio(all, distinct.len()),
        overall_recall: ratio(all, liked.len() + disliked.len()),
        liked_precision: ratio(hl, distinct.len()),
        liked_recall: ratio(hl, liked.len()),
        disliked_precision: ratio(hd, distinct.len()),
        disliked_recall: ratio(hd, disliked.len()),
        n_liked: liked.len(),
        n_disliked: disliked.len(),
        n_recommended: distinct.len(),
        liked_empty: liked.is_empty(),
        disliked_empty: disliked.is_empty(),
    }
}

/// State of one run. Rounds are strictly sequential.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    config: SimulationConfig,
    embeddings: &'a EmbeddingSet,
    arms: Arms,
    history: History,
    ridge: FeatureRidge,
    rls_features: Vec<DVector<f64>>,
    old_volume: f64,
    old_rls: f64,
    cumulative_regret: f64,
    t: usize,
    rng: ChaCha8Rng,
}

impl<'a> Simulation<'a> {
    pub fn new(config: SimulationConfig, embeddings: &'a EmbeddingSet) -> Result<Self> {
        config.validate()?;
        embeddings.check_user(config.user)?;
        let n = embeddings.n_items();
        if config.batch_size > n {
            return Err(Error::param(format!(
                "batch size {} exceeds the {n} available items",
                config.batch_size
            )));
        }
        let all: Vec<usize> = (0..n).collect();
        let rls_features = match config.rls_kernel {
            KernelChoice::Linear => all
                .iter()
                .map(|&i| embeddings.item(i).transpose().into_owned())
                .collect(),
            KernelChoice::QualityModulated => {
                let q = quality_factors(&all, embeddings, config.user, config.quality_floor)?;
                all.iter()
                    .map(|&i| embeddings.item(i).transpose() * q[i])
                    .collect()
            }
        };
        Ok(Self {
            arms: Arms::new(n),
            history: History::new(embeddings.rank()),
            ridge: FeatureRidge::new(embeddings.rank(), config.lambda)?,
            rls_features,
            old_volume: 0.0,
            old_rls: 0.0,
            cumulative_regret: 0.0,
            t: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            embeddings,
        })
    }

    pub fn arms(&self) -> &Arms {
        &self.arms
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    /// Feature rows whose linear kernel is the leverage-score kernel.
    pub fn rls_features(&self) -> &[DVector<f64>] {
        &self.rls_features
    }

    fn batch_volume(&self, batch: &[usize]) -> Result<(f64, f64)> {
        let emb = self.embeddings;
        let raw = match self.config.volume_kernel {
            KernelChoice::QualityModulated => {
                quality_modulated_kernel(batch, emb, self.config.user, self.config.quality_floor)?
                    .into_inner()
            }
            KernelChoice::Linear => {
                let rows = emb.items().select_rows(batch);
                &rows * rows.transpose()
            }
        };
        let v = log_det_volume(&psd_project(&raw, self.config.jitter)?);
        Ok((v.volume, v.log_volume))
    }

    pub fn run_round(&mut self) -> Result<RoundRecord> {
        self.t += 1;
        let cfg = &self.config;
        let selection = select_batch(
            cfg.strategy,
            cfg.batch_size,
            &mut self.arms,
            &self.history,
            self.embeddings,
            cfg.user,
            cfg.lin_variant,
            &mut self.rng,
        )?;
        let batch = selection.batch;

        // each item is scored against the history including earlier batch-mates
        let mut rls_logsum = 0.0;
        for &l in &batch {
            let x = &self.rls_features[l];
            let kappa = self.ridge.score(x)?;
            if !(kappa > 0.0) {
                return Err(Error::Numerical(format!(
                    "non-positive leverage score {kappa} for item {l}"
                )));
            }
            rls_logsum += kappa.ln();
            self.ridge.push(x);
            self.history.push(l, self.embeddings);
        }

        let (volume, log_volume) = self.batch_volume(&batch)?;
        let delta_volume = volume - self.old_volume;
        let delta_rls = rls_logsum - self.old_rls;
        self.old_volume = volume;
        self.old_rls = rls_logsum;
        let reward = compute_reward(delta_rls, delta_volume);
        self.arms
            .record_batch(&batch, reward, self.config.update_mode);

        let regret = regret_increment(volume, self.config.regret_threshold);
        self.cumulative_regret += regret;
        Ok(RoundRecord {
            t: self.t,
            feature_variance: batch_feature_variance(&batch, self.embeddings),
            batch,
            volume,
            log_volume,
            rls_logsum,
            delta_volume,
            delta_rls,
            reward,
            regret_increment: regret,
            cumulative_regret: self.cumulative_regret,
        })
    }
}

/// Runs `config.rounds` rounds for `config.user` and evaluates the pulled
/// items against that user's held-out ratings in `test` (dense ids).
pub fn run_simulation(
    config: &SimulationConfig,
    embeddings: &EmbeddingSet,
    test: &RatingsTable,
) -> Result<EvaluationReport> {
    let mut sim = Simulation::new(config.clone(), embeddings)?;
    let mut rounds = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        rounds.push(sim.run_round()?);
    }
    let n = embeddings.n_items();
    let pulls = pulls_histogram(&rounds, n);
    let test_ratings: BTreeMap<usize, f64> = test
        .user_ratings(config.user as u64)
        .into_iter()
        .map(|(i, r)| (i as usize, r))
        .collect();
    let recommended: Vec<usize> = rounds
        .iter()
        .flat_map(|r| r.batch.iter().copied())
        .collect();
    let relevance = precision_recall(&recommended, &test_ratings, config.liked_threshold);
    Ok(EvaluationReport {
        config: config.clone(),
        n_items: n,
        pulls_gini: gini(&pulls),
        distinct_items: pulls.iter().filter(|&&c| c > 0).count(),
        cumulative_regret: rounds.last().map_or(0.0, |r| r.cumulative_regret),
        pulls,
        relevance,
        arms: sim.arms().as_slice().to_vec(),
        rounds,
    })
}

/// One row per round: `t,volume,rls_logsum,reward,variance,regret,log_regret`,
/// where `regret` is cumulative and `log_regret = ln(1 + regret)`.
pub fn rounds_csv(report: &EvaluationReport) -> String {
    let mut out = String::from("t,volume,rls_logsum,reward,variance,regret,log_regret\n");
    for r in &report.rounds {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.t,
            r.volume,
            r.rls_logsum,
            r.reward,
            r.feature_variance,
            r.cumulative_regret,
            r.cumulative_regret.ln_1p()
        );
    }
    out
}

pub fn summary_json(report: &EvaluationReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-round mean and sample standard deviation of every round metric
/// across runs of one strategy.
pub fn aggregate_csv(reports: &[EvaluationReport]) -> Result<String> {
    let rounds = reports.first().map_or(0, |r| r.rounds.len());
    if reports.iter().any(|r| r.rounds.len() != rounds) {
        return Err(Error::Data(
            "cannot aggregate runs of different lengths".into(),
        ));
    }
    let mut out = String::from("round");
    for m in ROUND_METRICS {
        let _ = write!(out, ",{m}_mean,{m}_std");
    }
    out.push('\n');
    for t in 0..rounds {
        let _ = write!(out, "{}", t + 1);
        for m in ROUND_METRICS {
            let vals: Vec<f64> = reports
                .iter()
                .map(|r| r.rounds[t].metric(m).expect("known metric"))
                .collect();
            let (mean, std) = mean_std(&vals);
            let _ = write!(out, ",{mean},{std}");
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{factorize, synth_dataset, Rating, RatingScale};
    use nalgebra::DMatrix;

    #[test]
    fn reward_examples() {
        assert_eq!(compute_reward(2.0, 3.0), 6.0);
        assert_eq!(compute_reward(0.0, 17.5), 0.0);
        assert_eq!(compute_reward(-2.0, -3.0), 6.0);
    }

    #[test]
    fn variance_examples() {
        let items = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 0.0, 1.0, 0.0]);
        let emb = EmbeddingSet::new(items, DMatrix::from_element(1, 2, 1.0)).unwrap();
        assert_eq!(batch_feature_variance(&[0, 2], &emb), 0.0);
        assert!((batch_feature_variance(&[0, 1], &emb) - 0.5).abs() < 1e-15);
        assert_eq!(
            batch_feature_variance(&[0, 1, 2], &emb),
            batch_feature_variance(&[2, 1, 0], &emb)
        );
    }

    #[test]
    fn regret_examples() {
        assert_eq!(regret_increment(50.0, 50.0), 0.0);
        assert_eq!(regret_increment(30.0, 50.0), 20.0);
        assert_eq!(regret_increment(80.0, 50.0), 0.0);
        let s = cumulative_regret(&[30.0, 60.0, 10.0], 50.0).unwrap();
        assert_eq!(s, vec![20.0, 20.0, 60.0]);
        assert!(cumulative_regret(&[1.0], 0.0).is_err());
    }

    #[test]
    fn pulls_and_gini() {
        let rec = |batch: Vec<usize>| RoundRecord {
            t: 1,
            batch,
            volume: 0.0,
            log_volume: 0.0,
            rls_logsum: 0.0,
            delta_volume: 0.0,
            delta_rls: 0.0,
            reward: 0.0,
            feature_variance: 0.0,
            regret_increment: 0.0,
            cumulative_regret: 0.0,
        };
        let pulls = pulls_histogram(&[rec(vec![1, 3, 4])], 6);
        assert_eq!(pulls, vec![0, 1, 0, 1, 1, 0]);
        assert_eq!(gini(&[3, 3, 3, 3]), 0.0);
        assert_eq!(gini(&[0, 0]), 0.0);
        // one item takes everything: (n-1)/n
        assert!((gini(&[0, 0, 0, 8]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn precision_recall_examples() {
        // a=0, b=1 liked; c=2 disliked; d=3 not in test
        let test: BTreeMap<usize, f64> = [(0, 5.0), (1, 4.0), (2, 2.0)].into_iter().collect();
        let m = precision_recall(&[0, 2, 3], &test, 4.0);
        assert!((m.liked_precision - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.liked_recall - 0.5).abs() < 1e-15);
        assert!((m.disliked_precision - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.disliked_recall, 1.0);
        assert!((m.overall_precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.overall_recall - 2.0 / 3.0).abs() < 1e-15);

        let m = precision_recall(&[0, 1, 1], &test, 4.0);
        assert_eq!((m.liked_precision, m.liked_recall), (1.0, 1.0));

        let m = precision_recall(&[7, 8], &test, 4.0);
        assert_eq!(m.overall_precision, 0.0);
        assert_eq!(m.liked_precision, 0.0);
        assert_eq!(m.disliked_precision, 0.0);

        let only_low: BTreeMap<usize, f64> = [(0, 1.0)].into_iter().collect();
        let m = precision_recall(&[0], &only_low, 4.0);
        assert!(m.liked_empty && m.liked_recall == 0.0);
        assert!(!m.disliked_empty);
    }

    fn single_item_embeddings() -> EmbeddingSet {
        EmbeddingSet::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn first_round_single_item_leverage() {
        let emb = single_item_embeddings();
        let cfg = SimulationConfig {
            batch_size: 1,
            rounds: 1,
            ..SimulationConfig::default()
        };
        let mut sim = Simulation::new(cfg, &emb).unwrap();
        let rec = sim.run_round().unwrap();
        assert!((rec.rls_logsum - (1.0f64 / 1.1).ln()).abs() < 1e-12);
        assert_eq!(sim.history().len(), 1);
    }

    #[test]
    fn positive_reward_bumps_alpha() {
        let emb = single_item_embeddings();
        let cfg = SimulationConfig {
            batch_size: 2,
            rounds: 1,
            ..SimulationConfig::default()
        };
        let mut sim = Simulation::new(cfg, &emb).unwrap();
        let rec = sim.run_round().unwrap();
        // first round: Δvolume = volume > 0 and Δrls = rls_logsum < 0
        assert!(rec.reward < 0.0);
        for &i in &rec.batch {
            assert_eq!(sim.arms().get(i).beta, 2.0);
            assert_eq!(sim.arms().get(i).alpha, 1.0);
        }
        let rec = sim.run_round().unwrap();
        for &i in &rec.batch {
            let arm = sim.arms().get(i);
            let expected_alpha = if rec.reward > 0.0 { 2.0 } else { 1.0 };
            assert_eq!(arm.alpha, expected_alpha);
            assert_eq!(arm.count, 2);
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            SimulationConfig {
                batch_size: 0,
                ..Default::default()
            },
            SimulationConfig {
                rounds: 0,
                ..Default::default()
            },
            SimulationConfig {
                lambda: 0.0,
                ..Default::default()
            },
            SimulationConfig {
                jitter: -1.0,
                ..Default::default()
            },
            SimulationConfig {
                regret_threshold: 0.0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        SimulationConfig::default().validate().unwrap();
        let emb = single_item_embeddings();
        let too_big = SimulationConfig {
            batch_size: 3,
            ..Default::default()
        };
        assert!(Simulation::new(too_big, &emb).is_err());
        let no_user = SimulationConfig {
            user: 4,
            ..Default::default()
        };
        assert!(Simulation::new(no_user, &emb).is_err());
    }

    #[test]
    fn config_json_defaults_and_unknown_fields() {
        let cfg: SimulationConfig =
            serde_json::from_str(r#"{"strategy":"SO","rounds":7}"#).unwrap();
        assert_eq!(cfg.strategy, StrategyKind::SO);
        assert_eq!(cfg.rounds, 7);
        assert_eq!(cfg.batch_size, 5);
        assert!(serde_json::from_str::<SimulationConfig>(r#"{"rownds":7}"#).is_err());
    }

    #[test]
    fn small_run_accounting() {
        let table = synth_dataset(30, 25, 0.4, 3).unwrap();
        let emb = factorize(&table, 4, 0).unwrap();
        let test = RatingsTable::new(
            vec![Rating {
                user: 0,
                item: 2,
                rating: 5.0,
            }],
            RatingScale::default(),
        )
        .unwrap();
        let cfg = SimulationConfig {
            strategy: StrategyKind::Lin,
            rounds: 10,
            batch_size: 5,
            ..SimulationConfig::default()
        };
        let report = run_simulation(&cfg, &emb, &test).unwrap();
        assert_eq!(report.pulls.iter().sum::<u64>(), 50);
        assert_eq!(report.rounds.len(), 10);
        assert!(report.distinct_items <= 25);
        let csv = rounds_csv(&report);
        assert_eq!(csv.lines().count(), 11);
        let agg = aggregate_csv(&[report.clone(), report]).unwrap();
        assert_eq!(agg.lines().count(), 11);
    }
}
