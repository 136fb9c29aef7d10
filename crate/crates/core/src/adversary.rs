//! Poisoning attacks.
//!
//! * Rank reversal: colluding malicious FSL clients vote over rankings they
//!   computed honestly on their own data and all submit the reversed result.
//! * Scale: a malicious FedAvg client submits its own update negated and
//!   multiplied by a large factor.
//! * Optimized poisoning: the benign mean is pushed along a malicious
//!   direction by the largest step the target aggregator still accepts,
//!   found by a halving search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{multi_krum_select, AggregatorKind, ModelUpdate};
use crate::data::Dataset;
use crate::error::{invalid, FslError, Result};
use crate::prng::RngStream;
use crate::protocols::FslTask;
use crate::ranking::{vote_network, NetworkRanking};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    RankReversal,
    Scale,
    OptPoison,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaKind {
    /// Negative unit vector of the benign mean.
    NegUnit,
    /// Negative sign of the benign mean.
    NegSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub malicious_fraction: f64,
    pub kind: AttackKind,
    /// Local epochs malicious clients spend computing their honest reference.
    pub malicious_epochs: usize,
    pub scale_factor: f64,
    pub omega: OmegaKind,
    pub gamma_init: f64,
    pub gamma_iters: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            malicious_fraction: 0.0,
            kind: AttackKind::None,
            malicious_epochs: 2,
            scale_factor: 1e6,
            omega: OmegaKind::NegUnit,
            gamma_init: 50.0,
            gamma_iters: 20,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.malicious_fraction) {
            return Err(invalid("malicious_fraction", "must lie in [0, 1)"));
        }
        if self.kind != AttackKind::None && self.malicious_epochs == 0 {
            return Err(invalid("malicious_epochs", "must be at least 1"));
        }
        if !(self.gamma_init > 0.0 && self.gamma_init.is_finite()) {
            return Err(invalid("gamma_init", "must be positive"));
        }
        if self.gamma_iters == 0 {
            return Err(invalid("gamma_iters", "must be at least 1"));
        }
        if !self.scale_factor.is_finite() {
            return Err(invalid("scale_factor", "must be finite"));
        }
        Ok(())
    }

    /// Malicious clients are ids `0..floor(alpha * N)`.
    pub fn malicious_count(&self, total_clients: usize) -> usize {
        if self.kind == AttackKind::None {
            return 0;
        }
        (self.malicious_fraction * total_clients as f64).floor() as usize
    }

    pub fn is_malicious(&self, client: usize, total_clients: usize) -> bool {
        client < self.malicious_count(total_clients)
    }
}

/// Votes over the colluders' rankings and reverses the result layer by layer.
pub fn reverse_vote(rankings: &[NetworkRanking]) -> Result<NetworkRanking> {
    Ok(vote_network(rankings)?.reversed())
}

/// Each malicious client ranks edges honestly on its own data (with the
/// task's epoch count), then all of them submit the reversed vote.
pub fn craft_rank_poison(
    task: &FslTask,
    global: &NetworkRanking,
    malicious: Vec<(&Dataset, RngStream)>,
) -> Result<NetworkRanking> {
    if malicious.is_empty() {
        return Err(invalid("malicious", "at least one malicious client is required"));
    }
    let honest: Vec<NetworkRanking> = malicious
        .into_par_iter()
        .map(|(data, mut rng)| task.client_update(global, data, &mut rng))
        .collect::<Result<_>>()?;
    reverse_vote(&honest)
}

/// `scale_factor * (-benign_delta)`.
pub fn craft_scale_attack(benign: &ModelUpdate, scale_factor: f64) -> ModelUpdate {
    ModelUpdate::new(
        benign
            .delta
            .iter()
            .map(|&x| (-f64::from(x) * scale_factor) as f32)
            .collect(),
        benign.client_id,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptPoison {
    pub update: ModelUpdate,
    pub gamma: f64,
    /// Every `(gamma, accepted)` the search evaluated, in order.
    pub trace: Vec<(f64, bool)>,
}

/// Malicious direction for the benign mean `mean`.
pub fn omega(mean: &[f32], kind: OmegaKind) -> Result<Vec<f32>> {
    match kind {
        OmegaKind::NegUnit => {
            let norm = mean
                .iter()
                .map(|&x| f64::from(x) * f64::from(x))
                .sum::<f64>()
                .sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(FslError::ZeroNormDirection);
            }
            Ok(mean.iter().map(|&x| (-f64::from(x) / norm) as f32).collect())
        }
        OmegaKind::NegSign => Ok(mean
            .iter()
            .map(|&x| if x < 0.0 { 1.0 } else { -1.0 })
            .collect()),
    }
}

fn perturb(mean: &[f32], dir: &[f32], gamma: f64) -> Vec<f32> {
    mean.iter()
        .zip(dir)
        .map(|(&m, &w)| (f64::from(m) + gamma * f64::from(w)) as f32)
        .collect()
}

/// Whether `aggregator` lets the malicious copies through. Average and
/// trimmed mean use every submitted update directly; Multi-Krum accepts when
/// at least one malicious copy is selected.
pub fn accepted(
    aggregator: AggregatorKind,
    benign: &[ModelUpdate],
    malicious: &[ModelUpdate],
) -> Result<bool> {
    match aggregator {
        AggregatorKind::Average | AggregatorKind::TrimmedMean => Ok(true),
        AggregatorKind::MultiKrum => {
            let all: Vec<ModelUpdate> = benign.iter().chain(malicious).cloned().collect();
            let selected = multi_krum_select(&all, malicious.len())?;
            Ok(selected.iter().any(|&i| i >= benign.len()))
        }
    }
}

/// Crafts the update every malicious client submits. `benign` are the
/// deltas visible to the adversary; `malicious_ids` are the colluders in
/// this round, one submitted copy each.
pub fn craft_opt_poison(
    benign: &[ModelUpdate],
    malicious_ids: &[usize],
    aggregator: AggregatorKind,
    omega_kind: OmegaKind,
    gamma_init: f64,
    gamma_iters: usize,
) -> Result<OptPoison> {
    craft_opt_poison_against(
        benign,
        benign,
        malicious_ids,
        aggregator,
        omega_kind,
        gamma_init,
        gamma_iters,
    )
}

/// Like [`craft_opt_poison`], but `∇b` comes from `available` while
/// acceptance is judged against `others`, the honest updates the aggregator
/// will actually see next to the malicious copies.
pub fn craft_opt_poison_against(
    available: &[ModelUpdate],
    others: &[ModelUpdate],
    malicious_ids: &[usize],
    aggregator: AggregatorKind,
    omega_kind: OmegaKind,
    gamma_init: f64,
    gamma_iters: usize,
) -> Result<OptPoison> {
    if available.is_empty() {
        return Err(FslError::EmptyUpdates);
    }
    if malicious_ids.is_empty() {
        return Err(invalid("malicious_ids", "at least one malicious client is required"));
    }
    let mean = crate::aggregation::average(available)?.delta;
    let dir = omega(&mean, omega_kind)?;
    let copies = |gamma: f64| -> Vec<ModelUpdate> {
        let v = perturb(&mean, &dir, gamma);
        malicious_ids
            .iter()
            .map(|&id| ModelUpdate::new(v.clone(), id))
            .collect()
    };
    let mut gamma = gamma_init;
    let mut step = gamma_init / 2.0;
    let mut trace = Vec::with_capacity(gamma_iters);
    for _ in 0..gamma_iters {
        let ok = accepted(aggregator, others, &copies(gamma))?;
        trace.push((gamma, ok));
        if ok {
            gamma += step;
        } else {
            gamma -= step;
        }
        step /= 2.0;
    }
    Ok(OptPoison {
        update: ModelUpdate::new(perturb(&mean, &dir, gamma), malicious_ids[0]),
        gamma,
        trace,
    })
}
