//! Round engine for FSL, Sparse-FSL and the weight-based baselines.
//!
//! Every source of randomness is a stream derived from the experiment seed
//! and a purpose tag, so a run depends only on its configuration. Client work
//! within a round may run in parallel; results are collected in client order
//! before the vote or aggregation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    craft_opt_poison_against, craft_rank_poison, craft_scale_attack, AttackConfig, AttackKind,
};
use crate::aggregation::{average, sign_majority, AggregatorKind, ModelUpdate, SignUpdate};
use crate::analytics::{comm_cost, ArchSpec, CostAlgorithm};
use crate::data::{dirichlet_partition, gen_blobs, load_idx, BlobConfig, Dataset};
use crate::dense::DenseNetwork;
use crate::error::{invalid, FslError, Result};
use crate::nn::{edge_popup_train, evaluate, Architecture, SgdConfig, Supernetwork};
use crate::prng::{InitKind, RngStream};
use crate::ranking::{
    argsort, reorder_scores, sparse_count, sparse_vote_network, vote_network, LayerRanking,
    NetworkRanking, SparseLayerRanking,
};

const TAG_DATA: u64 = 0x10;
const TAG_PARTITION: u64 = 0x11;
const TAG_SAMPLING: u64 = 0x20;
const TAG_CLIENT: u64 = 0x30;
const TAG_MALICIOUS: u64 = 0x31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Fsl,
    SparseFsl,
    FedAvg,
    SignSgd,
    TopK,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Fsl => "fsl",
            Algorithm::SparseFsl => "sparse_fsl",
            Algorithm::FedAvg => "fed_avg",
            Algorithm::SignSgd => "sign_sgd",
            Algorithm::TopK => "top_k",
        }
    }

    pub fn is_fsl(self) -> bool {
        matches!(self, Algorithm::Fsl | Algorithm::SparseFsl)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Blobs {
        num_classes: usize,
        dims: usize,
        samples_per_class: usize,
        cluster_std: f64,
        separation: f64,
    },
    Idx {
        images: String,
        labels: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// T
    pub rounds: usize,
    /// N
    pub clients: usize,
    /// n
    pub clients_per_round: usize,
    /// E
    pub local_epochs: usize,
    /// Subnetwork fraction.
    pub k: f64,
    /// Fraction of ranks sent (Sparse-FSL) or of coordinates kept (TopK).
    pub sparsity: f64,
    pub algorithm: Algorithm,
    pub aggregator: AggregatorKind,
    pub attack: AttackConfig,
    pub sgd: SgdConfig,
    pub server_lr: f64,
    pub seed: u32,
    pub architecture: Architecture,
    pub weight_init: InitKind,
    pub dataset: DatasetSpec,
    pub dirichlet_alpha: f64,
    pub eval_every: usize,
}

impl ExperimentConfig {
    /// The desk-scale blob task: 100 clients, 25 per round, 200 rounds,
    /// two local epochs, k = 0.5, a 2-layer MLP and Dirichlet(1) shards.
    pub fn desk_scale() -> Self {
        let dims = 20;
        let classes = 10;
        Self {
            rounds: 200,
            clients: 100,
            clients_per_round: 25,
            local_epochs: 2,
            k: 0.5,
            sparsity: 1.0,
            algorithm: Algorithm::Fsl,
            aggregator: AggregatorKind::Average,
            attack: AttackConfig::default(),
            sgd: SgdConfig {
                learning_rate: 0.2,
                momentum: 0.9,
                weight_decay: 5e-4,
                batch_size: 8,
            },
            server_lr: 0.01,
            seed: 1,
            architecture: Architecture::mlp(&[dims, 128, classes]).expect("valid widths"),
            weight_init: InitKind::KaimingNormal,
            dataset: DatasetSpec::Blobs {
                num_classes: classes,
                dims,
                samples_per_class: 300,
                cluster_std: 1.0,
                separation: 4.0,
            },
            dirichlet_alpha: 1.0,
            eval_every: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(invalid("clients", "must be at least 1"));
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.clients {
            return Err(invalid(
                "clients_per_round",
                format!("must lie in [1, clients = {}]", self.clients),
            ));
        }
        if self.local_epochs == 0 {
            return Err(invalid("local_epochs", "must be at least 1"));
        }
        if !(self.k > 0.0 && self.k <= 1.0) {
            return Err(invalid("k", format!("must lie in (0, 1], got {}", self.k)));
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return Err(invalid(
                "sparsity",
                format!("must lie in (0, 1], got {}", self.sparsity),
            ));
        }
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            return Err(invalid("server_lr", "must be positive"));
        }
        if self.eval_every == 0 {
            return Err(invalid("eval_every", "must be at least 1"));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(invalid("dirichlet_alpha", "must be positive"));
        }
        self.sgd.validate()?;
        self.attack.validate()?;
        match (self.algorithm.is_fsl(), self.attack.kind) {
            (true, AttackKind::Scale | AttackKind::OptPoison) => {
                return Err(invalid(
                    "attack_kind",
                    "FSL clients submit rankings; use rank_reversal",
                ))
            }
            (false, AttackKind::RankReversal) => {
                return Err(invalid(
                    "attack_kind",
                    "rank_reversal only applies to FSL algorithms",
                ))
            }
            _ => {}
        }
        if self.algorithm == Algorithm::TopK && self.aggregator != AggregatorKind::Average {
            return Err(invalid("aggregator", "TopK only supports average aggregation"));
        }
        if let DatasetSpec::Blobs {
            num_classes,
            dims,
            samples_per_class,
            cluster_std,
            separation,
        } = &self.dataset
        {
            if *num_classes == 0 || *dims == 0 || *samples_per_class == 0 {
                return Err(invalid("dataset", "blob sizes must be positive"));
            }
            if cluster_std.is_nan() || *cluster_std < 0.0 || separation.is_nan() || *separation < 0.0 {
                return Err(invalid("dataset", "cluster_std and separation must be non-negative"));
            }
            if *dims != self.architecture.input_dim() {
                return Err(invalid(
                    "architecture",
                    format!("input width {} != dataset dims {dims}", self.architecture.input_dim()),
                ));
            }
            if *num_classes != self.architecture.num_classes() {
                return Err(invalid(
                    "architecture",
                    format!(
                        "output width {} != class count {num_classes}",
                        self.architecture.num_classes()
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn seed64(&self) -> u64 {
        crate::prng::widen_seed(self.seed)
    }

    fn cost_algorithm(&self) -> CostAlgorithm {
        match self.algorithm {
            Algorithm::Fsl => CostAlgorithm::Fsl,
            Algorithm::SparseFsl => CostAlgorithm::SparseFsl(self.sparsity),
            Algorithm::FedAvg => CostAlgorithm::FedAvg,
            Algorithm::SignSgd => CostAlgorithm::SignSgd,
            Algorithm::TopK => CostAlgorithm::TopK(self.sparsity),
        }
    }

    fn fsl_task(&self, epochs: usize) -> FslTask {
        FslTask {
            seed: self.seed64(),
            architecture: self.architecture.clone(),
            weight_init: self.weight_init,
            epochs,
            k: self.k,
            sgd: self.sgd,
        }
    }
}

/// Everything an FSL client needs besides its data and the global ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct FslTask {
    pub seed: u64,
    pub architecture: Architecture,
    pub weight_init: InitKind,
    pub epochs: usize,
    pub k: f64,
    pub sgd: SgdConfig,
}

impl FslTask {
    /// Rebuilds the supernetwork from the seed with scores reordered to
    /// follow `global`.
    pub fn supernetwork(&self, global: &NetworkRanking) -> Result<Supernetwork> {
        let mut net = Supernetwork::from_seed(&self.architecture, self.seed, self.weight_init)?;
        if global.layers.len() != net.layers().len() {
            return Err(FslError::LengthMismatch);
        }
        for (l, ranking) in global.layers.iter().enumerate() {
            let mut sorted = net.layers()[l].scores().as_slice().to_vec();
            sorted.sort_by(f32::total_cmp);
            let reordered = reorder_scores(&sorted, ranking)?;
            net.set_layer_scores(l, reordered)?;
        }
        Ok(net)
    }

    /// One FSL client round: reorder, train with edge-popup, rank.
    pub fn client_update(
        &self,
        global: &NetworkRanking,
        data: &Dataset,
        rng: &mut RngStream,
    ) -> Result<NetworkRanking> {
        let mut net = self.supernetwork(global)?;
        let scores = edge_popup_train(&mut net, data, self.epochs, self.k, &self.sgd, rng)?;
        Ok(NetworkRanking::new(
            scores.iter().map(|s| argsort(s.as_slice())).collect(),
        ))
    }
}

/// Initial global ranking: the argsort of the seed's scores.
pub fn initial_ranking(arch: &Architecture, seed: u64, init: InitKind) -> Result<NetworkRanking> {
    let net = Supernetwork::from_seed(arch, seed, init)?;
    Ok(NetworkRanking::new(
        net.layers()
            .iter()
            .map(|l| argsort(l.scores().as_slice()))
            .collect(),
    ))
}

/// Convenience wrapper over [`FslTask::client_update`].
#[allow(clippy::too_many_arguments)]
pub fn fsl_client_update(
    seed: u64,
    arch: &Architecture,
    weight_init: InitKind,
    global: &NetworkRanking,
    data: &Dataset,
    epochs: usize,
    k: f64,
    sgd: &SgdConfig,
    rng: &mut RngStream,
) -> Result<NetworkRanking> {
    FslTask {
        seed,
        architecture: arch.clone(),
        weight_init,
        epochs,
        k,
        sgd: *sgd,
    }
    .client_update(global, data, rng)
}

/// Local dense training from `theta`; returns `theta_local - theta`.
pub fn fedavg_client_update(
    arch: &Architecture,
    theta: &[f32],
    data: &Dataset,
    epochs: usize,
    sgd: &SgdConfig,
    rng: &mut RngStream,
    client_id: usize,
) -> Result<ModelUpdate> {
    let mut net = DenseNetwork::from_flat(arch, theta)?;
    net.train(data, epochs, sgd, rng)?;
    let delta = net
        .flatten()
        .iter()
        .zip(theta)
        .map(|(&a, &b)| a - b)
        .collect();
    Ok(ModelUpdate::new(delta, client_id))
}

/// Keeps the `ceil(fraction * n_l)` largest-magnitude coordinates of each
/// layer (ties to the lower index) and zeroes the rest.
pub fn top_k_sparsify(update: &ModelUpdate, layer_sizes: &[usize], fraction: f64) -> ModelUpdate {
    let mut out = vec![0.0f32; update.delta.len()];
    let mut start = 0;
    for &n in layer_sizes {
        let layer = &update.delta[start..start + n];
        let keep = sparse_count(n, fraction);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| layer[b].abs().total_cmp(&layer[a].abs()).then(a.cmp(&b)));
        for &i in &order[..keep] {
            out[start + i] = layer[i];
        }
        start += n;
    }
    ModelUpdate::new(out, update.client_id)
}

/// Per-client local data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub id: usize,
    pub train: Dataset,
    pub test: Dataset,
}

/// The population of clients for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Federation {
    pub clients: Vec<ClientData>,
    pub num_classes: usize,
    pub partition_rerolls: usize,
    pub undersized_shards: bool,
}

impl Federation {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let seed = cfg.seed64();
        let dataset = match &cfg.dataset {
            DatasetSpec::Blobs {
                num_classes,
                dims,
                samples_per_class,
                cluster_std,
                separation,
            } => {
                let blob = BlobConfig {
                    num_classes: *num_classes,
                    dims: *dims,
                    samples_per_class: *samples_per_class,
                    cluster_std: *cluster_std,
                    separation: *separation,
                };
                gen_blobs(&blob, &mut RngStream::derive(seed, &[TAG_DATA]))?.0
            }
            DatasetSpec::Idx { images, labels } => {
                load_idx(std::path::Path::new(images), std::path::Path::new(labels))?
            }
        };
        Self::from_dataset(&dataset, cfg.clients, cfg.dirichlet_alpha, seed)
    }

    pub fn from_dataset(dataset: &Dataset, clients: usize, alpha: f64, seed: u64) -> Result<Self> {
        let shards = dirichlet_partition(
            &dataset.labels,
            dataset.num_classes,
            clients,
            alpha,
            &mut RngStream::derive(seed, &[TAG_PARTITION]),
        )?;
        Ok(Self {
            clients: shards
                .clients
                .iter()
                .enumerate()
                .map(|(id, s)| ClientData {
                    id,
                    train: dataset.subset(&s.train),
                    test: dataset.subset(&s.test),
                })
                .collect(),
            num_classes: dataset.num_classes,
            partition_rerolls: shards.rerolls,
            undersized_shards: shards.undersized,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GlobalModel {
    Ranking(NetworkRanking),
    Weights(Vec<f32>),
}

/// Server state entering round `round` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub round: usize,
    pub model: GlobalModel,
}

impl ServerState {
    pub fn initial(cfg: &ExperimentConfig) -> Result<Self> {
        let seed = cfg.seed64();
        let model = if cfg.algorithm.is_fsl() {
            GlobalModel::Ranking(initial_ranking(&cfg.architecture, seed, cfg.weight_init)?)
        } else {
            GlobalModel::Weights(
                DenseNetwork::from_seed(&cfg.architecture, seed, cfg.weight_init)?.flatten(),
            )
        };
        Ok(Self { round: 1, model })
    }

    pub fn ranking(&self) -> Option<&NetworkRanking> {
        match &self.model {
            GlobalModel::Ranking(r) => Some(r),
            GlobalModel::Weights(_) => None,
        }
    }

    pub fn weights(&self) -> Option<&[f32]> {
        match &self.model {
            GlobalModel::Weights(w) => Some(w),
            GlobalModel::Ranking(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl AccuracyStats {
    /// Population statistics.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub selected: Vec<usize>,
    pub accuracy: Option<AccuracyStats>,
    pub upload_bits: f64,
    pub download_bits: f64,
    pub attack_active: bool,
}

/// Drives an experiment. Holds the config, the client population and the
/// worker pool used for per-round client work.
pub struct Simulator {
    cfg: ExperimentConfig,
    federation: Federation,
    arch_spec: ArchSpec,
    pool: rayon::ThreadPool,
}

impl Simulator {
    pub fn new(cfg: ExperimentConfig, workers: usize) -> Result<Self> {
        cfg.validate()?;
        let federation = Federation::build(&cfg)?;
        Self::with_federation(cfg, federation, workers)
    }

    pub fn with_federation(cfg: ExperimentConfig, federation: Federation, workers: usize) -> Result<Self> {
        cfg.validate()?;
        if federation.clients.len() != cfg.clients {
            return Err(invalid("clients", "federation size differs from config"));
        }
        let counts = cfg
            .architecture
            .edge_counts()
            .into_iter()
            .map(|n| n as u64)
            .collect();
        let arch_spec = ArchSpec::new("config", counts)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| invalid("workers", e.to_string()))?;
        Ok(Self {
            cfg,
            federation,
            arch_spec,
            pool,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn federation(&self) -> &Federation {
        &self.federation
    }

    /// Clients sampled for `round`, ascending.
    pub fn sample_clients(&self, round: usize) -> Vec<usize> {
        let mut rng = RngStream::derive(self.cfg.seed64(), &[TAG_SAMPLING, round as u64]);
        let mut ids = rng.sample_distinct(self.cfg.clients, self.cfg.clients_per_round);
        ids.sort_unstable();
        ids
    }

    /// Stream an honest client trains with in `round`.
    pub fn client_stream(&self, round: usize, client: usize) -> RngStream {
        self.client_rng(TAG_CLIENT, round, client)
    }

    fn client_rng(&self, tag: u64, round: usize, client: usize) -> RngStream {
        RngStream::derive(self.cfg.seed64(), &[tag, round as u64, client as u64])
    }

    fn malicious_in(&self, selected: &[usize]) -> Vec<usize> {
        selected
            .iter()
            .copied()
            .filter(|&c| self.cfg.attack.is_malicious(c, self.cfg.clients))
            .collect()
    }

    fn record(&self, round: usize, selected: Vec<usize>, attack_active: bool) -> RoundRecord {
        let cost = comm_cost(&self.arch_spec, self.cfg.cost_algorithm(), 32);
        RoundRecord {
            round,
            selected,
            accuracy: None,
            upload_bits: cost.upload_bits,
            download_bits: cost.download_bits,
            attack_active,
        }
    }

    /// Rankings submitted this round, one per selected client, in order.
    fn fsl_submissions(
        &self,
        global: &NetworkRanking,
        round: usize,
        selected: &[usize],
    ) -> Result<(Vec<NetworkRanking>, bool)> {
        let task = self.cfg.fsl_task(self.cfg.local_epochs);
        let malicious = if self.cfg.attack.kind == AttackKind::RankReversal {
            self.malicious_in(selected)
        } else {
            Vec::new()
        };
        let benign: Vec<usize> = selected
            .iter()
            .copied()
            .filter(|c| !malicious.contains(c))
            .collect();
        let fed = &self.federation;
        let honest: Vec<NetworkRanking> = self.pool.install(|| {
            benign
                .par_iter()
                .map(|&c| {
                    let mut rng = self.client_rng(TAG_CLIENT, round, c);
                    task.client_update(global, &fed.clients[c].train, &mut rng)
                })
                .collect::<Result<_>>()
        })?;
        let poison = if malicious.is_empty() {
            None
        } else {
            let mal_task = self.cfg.fsl_task(self.cfg.attack.malicious_epochs);
            let inputs = malicious
                .iter()
                .map(|&c| (&fed.clients[c].train, self.client_rng(TAG_MALICIOUS, round, c)))
                .collect();
            Some(self.pool.install(|| craft_rank_poison(&mal_task, global, inputs))?)
        };
        let mut honest = honest.into_iter();
        let submissions = selected
            .iter()
            .map(|c| {
                if malicious.contains(c) {
                    poison.clone().expect("poison crafted when malicious present")
                } else {
                    honest.next().expect("one honest ranking per benign client")
                }
            })
            .collect();
        Ok((submissions, poison.is_some()))
    }

    /// One FSL round: sample, collect rankings, vote.
    pub fn fsl_round(&self, state: &ServerState) -> Result<(ServerState, RoundRecord)> {
        let global = state
            .ranking()
            .ok_or_else(|| invalid("state", "FSL round needs a ranking state"))?;
        let selected = self.sample_clients(state.round);
        let (subs, active) = self.fsl_submissions(global, state.round, &selected)?;
        let next = vote_network(&subs)?;
        Ok((
            ServerState {
                round: state.round + 1,
                model: GlobalModel::Ranking(next),
            },
            self.record(state.round, selected, active),
        ))
    }

    /// Sparse-FSL round: clients send only their top `sparsity` share of ranks.
    pub fn sparse_fsl_round(&self, state: &ServerState) -> Result<(ServerState, RoundRecord)> {
        let global = state
            .ranking()
            .ok_or_else(|| invalid("state", "Sparse-FSL round needs a ranking state"))?;
        let selected = self.sample_clients(state.round);
        let (subs, active) = self.fsl_submissions(global, state.round, &selected)?;
        let sparse: Vec<Vec<SparseLayerRanking>> = subs
            .iter()
            .map(|r| truncate_ranking(r, self.cfg.sparsity))
            .collect();
        let next = sparse_vote_network(&sparse)?;
        Ok((
            ServerState {
                round: state.round + 1,
                model: GlobalModel::Ranking(next),
            },
            self.record(state.round, selected, active),
        ))
    }

    /// Deltas submitted this round, one per selected client, in order, and
    /// the number of malicious submissions.
    fn baseline_submissions(
        &self,
        theta: &[f32],
        round: usize,
        selected: &[usize],
    ) -> Result<(Vec<ModelUpdate>, usize)> {
        let fed = &self.federation;
        let arch = &self.cfg.architecture;
        let attack = &self.cfg.attack;
        let honest: Vec<ModelUpdate> = self.pool.install(|| {
            selected
                .par_iter()
                .map(|&c| {
                    let malicious = attack.is_malicious(c, self.cfg.clients);
                    let (tag, epochs) = if malicious {
                        (TAG_MALICIOUS, attack.malicious_epochs)
                    } else {
                        (TAG_CLIENT, self.cfg.local_epochs)
                    };
                    let mut rng = self.client_rng(tag, round, c);
                    fedavg_client_update(arch, theta, &fed.clients[c].train, epochs, &self.cfg.sgd, &mut rng, c)
                })
                .collect::<Result<_>>()
        })?;
        let malicious = self.malicious_in(selected);
        if malicious.is_empty() {
            return Ok((honest, 0));
        }
        let is_mal = |u: &ModelUpdate| malicious.contains(&u.client_id);
        let submissions = match attack.kind {
            AttackKind::Scale => honest
                .iter()
                .map(|u| {
                    if is_mal(u) {
                        craft_scale_attack(u, attack.scale_factor)
                    } else {
                        u.clone()
                    }
                })
                .collect(),
            AttackKind::OptPoison => {
                let own: Vec<ModelUpdate> = honest.iter().filter(|u| is_mal(u)).cloned().collect();
                let benign: Vec<ModelUpdate> = honest.iter().filter(|u| !is_mal(u)).cloned().collect();
                let crafted = craft_opt_poison_against(
                    &own,
                    &benign,
                    &malicious,
                    self.cfg.aggregator,
                    attack.omega,
                    attack.gamma_init,
                    attack.gamma_iters,
                )?
                .update;
                honest
                    .iter()
                    .map(|u| {
                        if is_mal(u) {
                            ModelUpdate::new(crafted.delta.clone(), u.client_id)
                        } else {
                            u.clone()
                        }
                    })
                    .collect()
            }
            AttackKind::None | AttackKind::RankReversal => honest,
        };
        Ok((submissions, malicious.len()))
    }

    /// FedAvg / SignSGD / TopK round.
    pub fn baseline_round(&self, state: &ServerState) -> Result<(ServerState, RoundRecord)> {
        let theta = state
            .weights()
            .ok_or_else(|| invalid("state", "baseline round needs a weight state"))?;
        let selected = self.sample_clients(state.round);
        let (subs, n_mal) = self.baseline_submissions(theta, state.round, &selected)?;
        let mut next = theta.to_vec();
        match self.cfg.algorithm {
            Algorithm::FedAvg => {
                let agg = self.cfg.aggregator.aggregate(&subs, n_mal)?;
                for (t, d) in next.iter_mut().zip(&agg.delta) {
                    *t += d;
                }
            }
            Algorithm::SignSgd => {
                // Clients report the sign of the descent direction's opposite,
                // i.e. of the gradient; the server steps against the majority.
                let signs: Vec<SignUpdate> = subs
                    .iter()
                    .map(|u| ModelUpdate::new(u.delta.iter().map(|&x| -x).collect(), u.client_id).signs())
                    .collect();
                let majority = sign_majority(&signs)?;
                let lr = self.cfg.server_lr as f32;
                for (t, &s) in next.iter_mut().zip(&majority.signs) {
                    *t -= lr * f32::from(s);
                }
            }
            Algorithm::TopK => {
                let sizes = self.cfg.architecture.edge_counts();
                let sparse: Vec<ModelUpdate> = subs
                    .iter()
                    .map(|u| top_k_sparsify(u, &sizes, self.cfg.sparsity))
                    .collect();
                let agg = average(&sparse)?;
                for (t, d) in next.iter_mut().zip(&agg.delta) {
                    *t += d;
                }
            }
            Algorithm::Fsl | Algorithm::SparseFsl => {
                return Err(invalid("algorithm", "not a weight-based baseline"))
            }
        }
        Ok((
            ServerState {
                round: state.round + 1,
                model: GlobalModel::Weights(next),
            },
            self.record(state.round, selected, n_mal > 0),
        ))
    }

    pub fn step(&self, state: &ServerState) -> Result<(ServerState, RoundRecord)> {
        match self.cfg.algorithm {
            Algorithm::Fsl => self.fsl_round(state),
            Algorithm::SparseFsl => self.sparse_fsl_round(state),
            _ => self.baseline_round(state),
        }
    }

    /// Accuracy of the global model on every client's test split.
    pub fn evaluate(&self, state: &ServerState) -> Result<Option<AccuracyStats>> {
        let clients: Vec<&ClientData> = self
            .federation
            .clients
            .iter()
            .filter(|c| !c.test.is_empty())
            .collect();
        let accs: Vec<f64> = match &state.model {
            GlobalModel::Ranking(r) => {
                let net = self.cfg.fsl_task(self.cfg.local_epochs).supernetwork(r)?;
                self.pool.install(|| {
                    clients
                        .par_iter()
                        .map(|c| evaluate(&net, self.cfg.k, &c.test))
                        .collect::<Result<_>>()
                })?
            }
            GlobalModel::Weights(w) => {
                let net = DenseNetwork::from_flat(&self.cfg.architecture, w)?;
                self.pool.install(|| {
                    clients
                        .par_iter()
                        .map(|c| net.evaluate(&c.test))
                        .collect::<Result<_>>()
                })?
            }
        };
        Ok(AccuracyStats::from_values(&accs))
    }

    fn is_eval_round(&self, round: usize) -> bool {
        round.is_multiple_of(self.cfg.eval_every) || round == self.cfg.rounds
    }

    /// Runs all rounds, calling `on_record` for each evaluation point.
    pub fn run_with<F: FnMut(&RoundRecord)>(&self, mut on_record: F) -> Result<(ServerState, Vec<RoundRecord>)> {
        let mut state = ServerState::initial(&self.cfg)?;
        let mut records = Vec::new();
        for _ in 0..self.cfg.rounds {
            let (next, mut rec) = self.step(&state)?;
            state = next;
            if self.is_eval_round(rec.round) {
                rec.accuracy = self.evaluate(&state)?;
                on_record(&rec);
                records.push(rec);
            }
        }
        Ok((state, records))
    }

    pub fn run(&self) -> Result<Vec<RoundRecord>> {
        Ok(self.run_with(|_| {})?.1)
    }
}

/// Top `ceil(fraction * n_l)` ranks of each layer.
pub fn truncate_ranking(r: &NetworkRanking, fraction: f64) -> Vec<SparseLayerRanking> {
    r.layers
        .iter()
        .map(|l: &LayerRanking| l.top(sparse_count(l.len(), fraction)))
        .collect()
}

/// Builds the simulator and runs every round.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<RoundRecord>> {
    Simulator::new(cfg.clone(), workers)?.run()
}
