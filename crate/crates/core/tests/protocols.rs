use fsl_core::adversary::{craft_opt_poison, AttackKind, OmegaKind};
use fsl_core::aggregation::{multi_krum_select, AggregatorKind, ModelUpdate};
use fsl_core::data::{gen_blobs, BlobConfig, Dataset};
use fsl_core::dense::DenseNetwork;
use fsl_core::matrix::Matrix;
use fsl_core::nn::{edge_popup_train, evaluate, Architecture, Minibatch, SgdConfig, Supernetwork};
use fsl_core::prng::{InitKind, RngStream};
use fsl_core::protocols::{
    fedavg_client_update, initial_ranking, Algorithm, DatasetSpec, ExperimentConfig, FslTask,
    GlobalModel, ServerState, Simulator,
};
use fsl_core::ranking::{argsort, LayerRanking, NetworkRanking};

fn small(algorithm: Algorithm) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk_scale();
    cfg.algorithm = algorithm;
    cfg.rounds = 6;
    cfg.clients = 12;
    cfg.clients_per_round = 5;
    cfg.local_epochs = 1;
    cfg.eval_every = 2;
    cfg.architecture = Architecture::mlp(&[8, 16, 4]).unwrap();
    cfg.dataset = DatasetSpec::Blobs {
        num_classes: 4,
        dims: 8,
        samples_per_class: 40,
        cluster_std: 1.0,
        separation: 4.0,
    };
    cfg
}

fn sgd(lr: f64, momentum: f64, batch_size: usize) -> SgdConfig {
    SgdConfig {
        learning_rate: lr,
        momentum,
        weight_decay: 0.0,
        batch_size,
    }
}

#[test]
fn zero_rounds_yield_no_records() {
    let mut cfg = small(Algorithm::Fsl);
    cfg.rounds = 0;
    assert!(Simulator::new(cfg, 1).unwrap().run().unwrap().is_empty());
}

#[test]
fn runs_are_deterministic_across_workers() {
    for alg in [Algorithm::Fsl, Algorithm::SparseFsl, Algorithm::FedAvg, Algorithm::SignSgd, Algorithm::TopK] {
        let mut cfg = small(alg);
        cfg.sparsity = 0.5;
        let a = Simulator::new(cfg.clone(), 1).unwrap().run().unwrap();
        let b = Simulator::new(cfg, 4).unwrap().run().unwrap();
        assert_eq!(a, b, "{alg:?}");
        assert_eq!(a.len(), 3);
    }
}

#[test]
fn sampling_has_no_duplicates() {
    let sim = Simulator::new(small(Algorithm::Fsl), 1).unwrap();
    for t in 1..50 {
        let s = sim.sample_clients(t);
        assert_eq!(s.len(), 5);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn server_and_client_reconstruct_identically() {
    let arch = Architecture::mlp(&[8, 16, 4]).unwrap();
    for seed in [0u64, 7, u64::from(u32::MAX)] {
        let server = Supernetwork::from_seed(&arch, seed, InitKind::KaimingNormal).unwrap();
        let task = FslTask {
            seed,
            architecture: arch.clone(),
            weight_init: InitKind::KaimingNormal,
            epochs: 1,
            k: 0.5,
            sgd: sgd(0.1, 0.9, 8),
        };
        let r0 = initial_ranking(&arch, seed, InitKind::KaimingNormal).unwrap();
        let client = task.supernetwork(&r0).unwrap();
        for (a, b) in server.layers().iter().zip(client.layers()) {
            assert_eq!(a.weights(), b.weights());
            let bits = |m: &Matrix| m.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.scores()), bits(b.scores()));
        }
    }
}

#[test]
fn zero_step_client_returns_global_ranking() {
    let cfg = small(Algorithm::Fsl);
    let sim = Simulator::new(cfg.clone(), 1).unwrap();
    let arch = &cfg.architecture;
    let mut rng = RngStream::new(3);
    let global = NetworkRanking::new(
        arch.edge_counts()
            .iter()
            .map(|&n| {
                let mut p: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut p);
                LayerRanking::new(p).unwrap()
            })
            .collect(),
    );
    let task = FslTask {
        seed: cfg.seed64(),
        architecture: arch.clone(),
        weight_init: cfg.weight_init,
        epochs: 2,
        k: 0.5,
        sgd: sgd(0.0, 0.9, 8),
    };
    let data = &sim.federation().clients[0].train;
    assert_eq!(task.client_update(&global, data, &mut RngStream::new(1)).unwrap(), global);
}

#[test]
fn single_client_fsl_round_adopts_its_ranking() {
    let mut cfg = small(Algorithm::Fsl);
    cfg.clients_per_round = 1;
    let sim = Simulator::new(cfg.clone(), 1).unwrap();
    let state = ServerState::initial(&cfg).unwrap();
    let (next, rec) = sim.fsl_round(&state).unwrap();
    let c = rec.selected[0];
    let task = FslTask {
        seed: cfg.seed64(),
        architecture: cfg.architecture.clone(),
        weight_init: cfg.weight_init,
        epochs: cfg.local_epochs,
        k: cfg.k,
        sgd: cfg.sgd,
    };
    let own = task
        .client_update(
            state.ranking().unwrap(),
            &sim.federation().clients[c].train,
            &mut sim.client_stream(1, c),
        )
        .unwrap();
    assert_eq!(next.model, GlobalModel::Ranking(own));
}

#[test]
fn full_sparsity_matches_fsl_round() {
    let fsl = small(Algorithm::Fsl);
    let mut sparse = fsl.clone();
    sparse.algorithm = Algorithm::SparseFsl;
    sparse.sparsity = 1.0;
    let a = Simulator::new(fsl.clone(), 1).unwrap();
    let b = Simulator::new(sparse, 1).unwrap();
    let mut s = ServerState::initial(&fsl).unwrap();
    for _ in 0..5 {
        let (x, _) = a.fsl_round(&s).unwrap();
        let (y, _) = b.sparse_fsl_round(&s).unwrap();
        assert_eq!(x, y);
        s = x;
    }
}

#[test]
fn sparse_upload_is_scaled() {
    let mut cfg = small(Algorithm::SparseFsl);
    cfg.sparsity = 0.5;
    let sparse = Simulator::new(cfg.clone(), 1).unwrap();
    cfg.algorithm = Algorithm::Fsl;
    cfg.sparsity = 1.0;
    let full = Simulator::new(cfg.clone(), 1).unwrap();
    let s = ServerState::initial(&cfg).unwrap();
    let (_, a) = sparse.sparse_fsl_round(&s).unwrap();
    let (_, b) = full.fsl_round(&s).unwrap();
    assert_eq!(a.upload_bits, 0.5 * b.upload_bits);
    assert_eq!(a.download_bits, b.download_bits);
}

#[test]
fn zero_fraction_attack_is_a_noop() {
    let benign = small(Algorithm::Fsl);
    let mut attacked = benign.clone();
    attacked.attack.kind = AttackKind::RankReversal;
    attacked.attack.malicious_fraction = 0.0;
    let a = Simulator::new(benign, 1).unwrap().run().unwrap();
    let b = Simulator::new(attacked, 1).unwrap().run().unwrap();
    assert_eq!(a, b);
    assert!(b.iter().all(|r| !r.attack_active));

    let benign = small(Algorithm::FedAvg);
    let mut attacked = benign.clone();
    attacked.attack.kind = AttackKind::OptPoison;
    attacked.aggregator = AggregatorKind::TrimmedMean;
    let a = Simulator::new(benign, 1).unwrap().run().unwrap();
    let b = Simulator::new(attacked, 1).unwrap().run().unwrap();
    // f = 0 trimmed mean is the plain average.
    assert_eq!(a, b);
}

#[test]
fn fedavg_one_client_moves_by_its_delta() {
    let mut cfg = small(Algorithm::FedAvg);
    cfg.clients_per_round = 1;
    let sim = Simulator::new(cfg.clone(), 1).unwrap();
    let state = ServerState::initial(&cfg).unwrap();
    let (next, rec) = sim.baseline_round(&state).unwrap();
    let c = rec.selected[0];
    let theta = state.weights().unwrap();
    let delta = fedavg_client_update(
        &cfg.architecture,
        theta,
        &sim.federation().clients[c].train,
        cfg.local_epochs,
        &cfg.sgd,
        &mut sim.client_stream(1, c),
        c,
    )
    .unwrap();
    let want: Vec<f32> = theta.iter().zip(&delta.delta).map(|(t, d)| t + d).collect();
    assert_eq!(next.weights().unwrap(), want.as_slice());
}

#[test]
fn signsgd_single_client_steps_against_gradient_sign() {
    let mut cfg = small(Algorithm::SignSgd);
    cfg.clients_per_round = 1;
    let sim = Simulator::new(cfg.clone(), 1).unwrap();
    let state = ServerState::initial(&cfg).unwrap();
    let (next, rec) = sim.baseline_round(&state).unwrap();
    let c = rec.selected[0];
    let theta = state.weights().unwrap();
    let delta = fedavg_client_update(
        &cfg.architecture,
        theta,
        &sim.federation().clients[c].train,
        cfg.local_epochs,
        &cfg.sgd,
        &mut sim.client_stream(1, c),
        c,
    )
    .unwrap();
    let lr = cfg.server_lr as f32;
    for ((&t0, &t1), &d) in theta.iter().zip(next.weights().unwrap()).zip(&delta.delta) {
        // Gradient sign is the sign of -delta, zero counted as +1.
        let s = if -d < 0.0 { -1.0 } else { 1.0 };
        assert_eq!(t1, t0 - lr * s);
    }
}

#[test]
fn topk_full_equals_fedavg() {
    let mut fedavg = small(Algorithm::FedAvg);
    fedavg.sparsity = 1.0;
    let mut topk = fedavg.clone();
    topk.algorithm = Algorithm::TopK;
    let a = Simulator::new(fedavg.clone(), 1).unwrap();
    let b = Simulator::new(topk, 1).unwrap();
    let s = ServerState::initial(&fedavg).unwrap();
    assert_eq!(a.baseline_round(&s).unwrap().0, b.baseline_round(&s).unwrap().0);
}

#[test]
fn fedavg_single_step_is_negative_gradient() {
    let arch = Architecture::mlp(&[3, 4, 2]).unwrap();
    let net = DenseNetwork::from_seed(&arch, 5, InitKind::KaimingNormal).unwrap();
    let theta = net.flatten();
    let mut rng = RngStream::new(9);
    let x: Vec<f32> = (0..6 * 3).map(|_| rng.normal() as f32).collect();
    let labels = vec![0, 1, 1, 0, 1, 0];
    let data = Dataset::new(Matrix::from_vec(6, 3, x.clone()).unwrap(), labels.clone(), 2).unwrap();
    let lr = 0.05;
    let upd = fedavg_client_update(&arch, &theta, &data, 1, &sgd(lr, 0.0, 6), &mut RngStream::new(1), 0).unwrap();
    // One batch covering every sample: the shuffle only permutes rows, and the
    // mean loss gradient is order-free up to float summation order.
    let batch = Minibatch::new(Matrix::from_vec(6, 3, x).unwrap(), labels, 2).unwrap();
    let (_, grads) = net.gradients(&batch).unwrap();
    let flat: Vec<f32> = grads.iter().flat_map(|g| g.as_slice().to_vec()).collect();
    for (&d, &g) in upd.delta.iter().zip(&flat) {
        assert!((d - (-(lr as f32) * g)).abs() < 1e-6, "{d} vs {}", -(lr as f32) * g);
    }
    let zero = fedavg_client_update(&arch, &theta, &data, 2, &sgd(0.0, 0.9, 2), &mut RngStream::new(1), 0).unwrap();
    assert!(zero.delta.iter().all(|&d| d == 0.0));
}

#[test]
fn edge_popup_learns_separable_blobs() {
    let blob = BlobConfig {
        num_classes: 2,
        dims: 4,
        samples_per_class: 100,
        cluster_std: 0.5,
        separation: 2.0,
    };
    let (data, _) = gen_blobs(&blob, &mut RngStream::new(11)).unwrap();
    let arch = Architecture::mlp(&[4, 32, 2]).unwrap();
    let mut net = Supernetwork::from_seed(&arch, 11, InitKind::KaimingNormal).unwrap();
    edge_popup_train(&mut net, &data, 20, 0.5, &sgd(0.1, 0.9, 16), &mut RngStream::new(12)).unwrap();
    let acc = evaluate(&net, 0.5, &data).unwrap();
    assert!(acc > 0.9, "accuracy {acc}");
}

#[test]
fn noise_feature_edges_rank_low() {
    // Feature 0 is pure noise; features 1..4 carry the class.
    let mut bottom = 0usize;
    let mut total = 0usize;
    for seed in 0..20u64 {
        let mut rng = RngStream::derive(seed, &[77]);
        let blob = BlobConfig {
            num_classes: 3,
            dims: 4,
            samples_per_class: 60,
            cluster_std: 0.7,
            separation: 3.0,
        };
        let (mut data, _) = gen_blobs(&blob, &mut rng).unwrap();
        let dims = 5;
        let mut x = Vec::with_capacity(data.len() * dims);
        for r in 0..data.len() {
            x.push(rng.normal() as f32);
            x.extend_from_slice(data.features.row(r));
        }
        data = Dataset::new(Matrix::from_vec(data.len(), dims, x).unwrap(), data.labels, 3).unwrap();
        let arch = Architecture::mlp(&[dims, 16, 3]).unwrap();
        let r0 = initial_ranking(&arch, seed, InitKind::KaimingNormal).unwrap();
        let task = FslTask {
            seed,
            architecture: arch,
            weight_init: InitKind::KaimingNormal,
            epochs: 5,
            k: 0.5,
            sgd: sgd(0.1, 0.9, 16),
        };
        let r = task.client_update(&r0, &data, &mut rng).unwrap();
        let first = &r.layers[0];
        let reps = first.reputations();
        let n = first.len();
        for v in 0..16 {
            let e = v * dims;
            total += 1;
            if reps[e] < n / 2 {
                bottom += 1;
            }
        }
    }
    let freq = bottom as f64 / total as f64;
    assert!(freq > 0.5, "noise edges in bottom half: {freq}");
}

#[test]
fn multi_krum_gamma_matches_linear_scan() {
    let mut rng = RngStream::new(31);
    let benign: Vec<ModelUpdate> = (0..20)
        .map(|i| {
            // Uniform in the unit disc by rejection.
            loop {
                let x = rng.uniform(-1.0, 1.0);
                let y = rng.uniform(-1.0, 1.0);
                if x * x + y * y <= 1.0 {
                    break ModelUpdate::new(vec![x as f32, y as f32], i);
                }
            }
        })
        .collect();
    let malicious: Vec<usize> = (100..105).collect();
    let gamma_init = 8.0;
    let iters = 20;
    let p = craft_opt_poison(&benign, &malicious, AggregatorKind::MultiKrum, OmegaKind::NegUnit, gamma_init, iters)
        .unwrap();
    let step = gamma_init / 2f64.powi(iters as i32);

    // Reference: the same perturbation built in f64, scanned on a fine grid.
    let mean: Vec<f64> = (0..2)
        .map(|j| benign.iter().map(|u| f64::from(u.delta[j])).sum::<f64>() / 20.0)
        .collect();
    let norm = mean.iter().map(|m| m * m).sum::<f64>().sqrt();
    let accepts = |g: f64| {
        let v: Vec<f32> = mean.iter().map(|m| (m - g * m / norm) as f32).collect();
        let mut all = benign.clone();
        all.extend(malicious.iter().map(|&id| ModelUpdate::new(v.clone(), id)));
        multi_krum_select(&all, malicious.len()).unwrap().iter().any(|&i| i >= 20)
    };
    assert!(accepts(0.0));
    let mut boundary = None;
    let mut g = 0.0;
    while g < 2.0 * gamma_init {
        if !accepts(g) {
            boundary = Some(g);
            break;
        }
        g += step;
    }
    let boundary = boundary.expect("rejection inside the search range");
    assert!(
        (p.gamma - boundary).abs() <= 2.0 * step,
        "search {} vs scan {boundary}",
        p.gamma
    );
}

#[test]
fn argsort_of_trained_scores_is_a_ranking() {
    let cfg = small(Algorithm::Fsl);
    let sim = Simulator::new(cfg.clone(), 1).unwrap();
    let (state, _) = sim.run_with(|_| {}).unwrap();
    let r = state.ranking().unwrap();
    assert_eq!(r.layer_sizes(), cfg.architecture.edge_counts());
    for l in &r.layers {
        assert_eq!(argsort(&l.reputations()), *l);
    }
}
