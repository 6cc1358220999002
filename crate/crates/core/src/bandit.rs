//! Per-item Thompson-sampling state.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

/// How a round's reward feeds the Beta posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    /// `α += 1` if reward > 0, else `β += 1`.
    #[default]
    Indicator,
    /// `α += max(0, r)`, `β += max(0, -r)`.
    Magnitude,
}

impl std::str::FromStr for UpdateMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "indicator" => Ok(UpdateMode::Indicator),
            "magnitude" => Ok(UpdateMode::Magnitude),
            other => Err(format!(
                "unknown update mode {other:?} (expected indicator or magnitude)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub alpha: f64,
    pub beta: f64,
    /// Rounds in which the item was part of the selected batch.
    pub count: u64,
    pub theta_prev: f64,
    pub theta_curr: f64,
}

impl Default for ArmState {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            count: 0,
            theta_prev: 0.0,
            theta_curr: 0.0,
        }
    }
}

impl ArmState {
    /// Draws `θ ~ Beta(α, β)` and shifts it into the two-round history.
    pub fn sample_theta<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        // α, β ≥ 1 always, so the distribution is valid
        let theta = Beta::new(self.alpha, self.beta)
            .expect("alpha and beta stay >= 1")
            .sample(rng);
        self.theta_prev = self.theta_curr;
        self.theta_curr = theta;
        theta
    }

    pub fn update_posterior(&mut self, reward: f64, mode: UpdateMode) {
        match mode {
            UpdateMode::Indicator => {
                if reward > 0.0 {
                    self.alpha += 1.0;
                } else {
                    self.beta += 1.0;
                }
            }
            UpdateMode::Magnitude => {
                self.alpha += reward.max(0.0);
                self.beta += (-reward).max(0.0);
            }
        }
    }

    /// `(θ_t − θ_{t−1}) / max(count, 1)`.
    pub fn gain_ratio(&self) -> f64 {
        (self.theta_curr - self.theta_prev) / self.count.max(1) as f64
    }
}

/// Arm states for every item in the catalogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arms {
    arms: Vec<ArmState>,
}

impl Arms {
    pub fn new(n_items: usize) -> Self {
        Self {
            arms: vec![ArmState::default(); n_items],
        }
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn get(&self, i: usize) -> &ArmState {
        &self.arms[i]
    }

    pub fn as_slice(&self) -> &[ArmState] {
        &self.arms
    }

    pub fn as_mut_slice(&mut self) -> &mut [ArmState] {
        &mut self.arms
    }

    /// Samples a fresh θ for every item, in item order.
    pub fn sample_all<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.arms.iter_mut().map(|a| a.sample_theta(rng)).collect()
    }

    /// Gain ratios `b` for every item.
    pub fn gains(&self) -> Vec<f64> {
        self.arms.iter().map(ArmState::gain_ratio).collect()
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.arms.iter().map(|a| a.theta_curr).collect()
    }

    /// Posterior update and pull count for each item of a batch.
    pub fn record_batch(&mut self, batch: &[usize], reward: f64, mode: UpdateMode) {
        for &i in batch {
            let arm = &mut self.arms[i];
            arm.update_posterior(reward, mode);
            arm.count += 1;
        }
    }
}
