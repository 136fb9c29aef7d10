//! Closed-form robustness bound and per-round communication cost model.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};
use crate::ranking::rank_width;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundQuery {
    /// Clients per round.
    pub n: usize,
    /// Probability that a benign client keeps a good edge.
    pub p: f64,
    /// Malicious fraction.
    pub alpha: f64,
}

/// Cantelli upper bound on the probability that the simplified majority vote
/// drops a good edge:
/// `min(1, 0.5 * sqrt(n p (1-p)) / |n (p + alpha (1 - 2p) - 1/2)|)`.
/// A non-positive margin `p + alpha (1 - 2p) - 1/2` makes the bound vacuous
/// and returns 1.
pub fn failure_upper_bound(q: BoundQuery) -> Result<f64> {
    if !(q.p > 0.0 && q.p < 1.0) {
        return Err(invalid("p", format!("must lie in (0, 1), got {}", q.p)));
    }
    if !(0.0..1.0).contains(&q.alpha) {
        return Err(invalid("alpha", format!("must lie in [0, 1), got {}", q.alpha)));
    }
    if q.n == 0 {
        return Err(invalid("n", "must be positive"));
    }
    let n = q.n as f64;
    let margin = (q.p - 0.5) + q.alpha * (1.0 - 2.0 * q.p);
    if margin <= 0.0 {
        return Ok(1.0);
    }
    let bound = 0.5 * n.sqrt() * (q.p * (1.0 - q.p)).sqrt() / (n * margin).abs();
    Ok(bound.min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRow {
    pub alpha: f64,
    pub p: f64,
    pub bound: f64,
}

/// Bound over the grid, alpha-major.
pub fn sweep_bound(n: usize, p_grid: &[f64], alpha_grid: &[f64]) -> Result<Vec<BoundRow>> {
    let mut rows = Vec::with_capacity(p_grid.len() * alpha_grid.len());
    for &alpha in alpha_grid {
        for &p in p_grid {
            rows.push(BoundRow {
                alpha,
                p,
                bound: failure_upper_bound(BoundQuery { n, p, alpha })?,
            });
        }
    }
    Ok(rows)
}

/// Evenly spaced grid including both ends.
pub fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..steps)
            .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub layer_param_counts: Vec<u64>,
}

impl ArchSpec {
    pub fn new(name: impl Into<String>, counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() || counts.contains(&0) {
            return Err(invalid("arch", "layer parameter counts must be positive and non-empty"));
        }
        Ok(Self {
            name: name.into(),
            layer_param_counts: counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.layer_param_counts.iter().sum()
    }

    /// Architectures with the per-layer parameter counts of the reference models.
    pub fn preset(name: &str) -> Option<Self> {
        let counts: &[u64] = match name {
            "lenet-mnist" => &[288, 18_432, 1_605_632, 1_280],
            "conv8-cifar10" => &[
                1_728, 36_864, 73_728, 147_456, 294_912, 589_824, 1_179_648, 2_359_296, 524_288,
                65_536, 2_560,
            ],
            "lenet-femnist" => &[288, 18_432, 1_605_632, 7_936],
            _ => return None,
        };
        Some(Self {
            name: name.to_string(),
            layer_param_counts: counts.to_vec(),
        })
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["lenet-mnist", "conv8-cifar10", "lenet-femnist"]
    }
}

/// Wire protocol whose cost is being modelled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CostAlgorithm {
    Fsl,
    /// Fraction of ranks sent.
    SparseFsl(f64),
    FedAvg,
    SignSgd,
    /// Fraction of coordinates kept.
    TopK(f64),
}

impl CostAlgorithm {
    pub fn label(&self) -> String {
        match self {
            CostAlgorithm::Fsl => "FSL".into(),
            CostAlgorithm::SparseFsl(s) => format!("SFSL{}", pct(*s)),
            CostAlgorithm::FedAvg => "FedAvg".into(),
            CostAlgorithm::SignSgd => "SignSGD".into(),
            CostAlgorithm::TopK(k) => format!("TopK{}", pct(*k)),
        }
    }
}

fn pct(x: f64) -> String {
    let p = x * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}", p.round() as i64)
    } else {
        format!("{p}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostReport {
    pub upload_bits: f64,
    pub download_bits: f64,
}

pub const BITS_PER_MIB: f64 = 8.0 * 1_048_576.0;

impl CostReport {
    pub fn upload_mib(&self) -> f64 {
        self.upload_bits / BITS_PER_MIB
    }

    pub fn download_mib(&self) -> f64 {
        self.download_bits / BITS_PER_MIB
    }
}

/// `sum_l n_l * ceil(log2 n_l)`.
pub fn fsl_rank_bits(counts: &[u64]) -> f64 {
    counts
        .iter()
        .map(|&n| n as f64 * f64::from(rank_width(n as usize)))
        .sum()
}

/// Per-client, per-round traffic.
pub fn comm_cost(arch: &ArchSpec, algorithm: CostAlgorithm, weight_bits: u32) -> CostReport {
    let params = arch.total() as f64;
    let dense = params * f64::from(weight_bits);
    let ranks = fsl_rank_bits(&arch.layer_param_counts);
    let (upload_bits, download_bits) = match algorithm {
        CostAlgorithm::Fsl => (ranks, ranks),
        CostAlgorithm::SparseFsl(s) => (s * ranks, ranks),
        CostAlgorithm::FedAvg => (dense, dense),
        CostAlgorithm::SignSgd => (params, dense),
        // Kept values plus a one-bit membership mask over every parameter.
        CostAlgorithm::TopK(k) => (k * dense + params, dense),
    };
    CostReport {
        upload_bits,
        download_bits,
    }
}

/// Rows reported by the cost table, in display order.
pub fn standard_algorithms() -> Vec<CostAlgorithm> {
    vec![
        CostAlgorithm::FedAvg,
        CostAlgorithm::Fsl,
        CostAlgorithm::SparseFsl(0.5),
        CostAlgorithm::SparseFsl(0.1),
        CostAlgorithm::SignSgd,
        CostAlgorithm::TopK(0.5),
        CostAlgorithm::TopK(0.1),
    ]
}

/// `sum_l log2(n_l!)`, the information-theoretic size of the ranking message.
pub fn ideal_rank_bits(counts: &[u64]) -> f64 {
    counts
        .iter()
        .map(|&n| ln_gamma(n as f64 + 1.0) / std::f64::consts::LN_2)
        .sum()
}
