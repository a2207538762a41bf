use nalgebra::{DMatrix, DVector};
use wonder_core::data::generate;
use wonder_core::protocol::*;
use wonder_core::ridge::{ridge_fit, trace_functionals};
use wonder_core::spectral::{
    equal_split_weights_risk, mp_stieltjes_isotropic, optimal_distributed_risk,
};
use wonder_core::{Dataset, Design, DesignMatrix, SignalNoise, SynthSpec};

fn synth(n: usize, p: usize, design: Design, seed: u64) -> Dataset {
    generate(&SynthSpec {
        n,
        p,
        design,
        alpha2: 1.0,
        sigma2: 1.0,
        seed,
    })
    .unwrap()
}

/// First `n_train` rows for training, the rest for validation; one β for both.
fn train_and_holdout(data: &Dataset, n_train: usize) -> (Dataset, Dataset) {
    let rows: Vec<usize> = (0..data.n()).collect();
    let (a, b) = rows.split_at(n_train);
    (data.select_rows(a), data.select_rows(b))
}

fn oracle_theta() -> Option<SignalNoise<f64>> {
    Some(SignalNoise::new(1.0, 1.0).unwrap())
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn partition_covers_every_row_once() {
    let mut data = synth(103, 3, Design::Isotropic, 0);
    data.y = DVector::from_fn(103, |i, _| i as f64);
    for strategy in [PartitionStrategy::Contiguous, PartitionStrategy::Shuffled { seed: 5 }] {
        let config = WonderConfig {
            k: 7,
            partition: strategy,
            ..WonderConfig::default()
        };
        let shards = partition(&data, &config).unwrap();
        let sizes: Vec<usize> = shards.iter().map(Shard::n).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut rows: Vec<usize> = shards.iter().flat_map(|s| s.data.y.iter().map(|&v| v as usize)).collect();
        rows.sort_unstable();
        assert_eq!(rows, (0..103).collect::<Vec<_>>());
    }
    assert!(partition(&data, &WonderConfig::with_k(104)).is_err());
}

#[test]
fn shuffled_partitions_depend_on_the_seed() {
    let mut data = synth(20, 1, Design::Isotropic, 0);
    data.y = DVector::from_fn(20, |i, _| i as f64);
    let shards_for = |seed| {
        let config = WonderConfig {
            k: 2,
            partition: PartitionStrategy::Shuffled { seed },
            ..WonderConfig::default()
        };
        partition(&data, &config).unwrap()
    };
    assert_eq!(shards_for(1), shards_for(1));
    for seed in 2..12 {
        assert_ne!(shards_for(1)[0].data.y, shards_for(seed)[0].data.y);
    }
}

#[test]
fn zero_response_gives_zero_coefficients() {
    let mut data = synth(60, 8, Design::Isotropic, 1);
    data.y = DVector::zeros(60);
    let shard = &partition(&data, &WonderConfig::with_k(1)).unwrap()[0];
    let s = local_worker(shard, 0.5).unwrap();
    assert!(s.beta_hat.iter().all(|&b| b == 0.0));
    s.validate().unwrap();
    assert_eq!(s.n_i, 60);
}

#[test]
fn local_worker_is_deterministic() {
    let data = synth(80, 10, Design::Isotropic, 2);
    let shard = &partition(&data, &WonderConfig::with_k(1)).unwrap()[0];
    let a = local_worker(shard, 0.3).unwrap();
    let b = local_worker(shard, 0.3).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn local_trace_functional_tracks_the_mp_law() {
    let data = synth(500, 500, Design::Isotropic, 3);
    let shard = &partition(&data, &WonderConfig::with_k(1)).unwrap()[0];
    let s = local_worker(shard, 1.0).unwrap();
    let m = mp_stieltjes_isotropic(1.0, 1.0).unwrap();
    assert!((s.m_hat / m - 1.0).abs() < 0.05, "{} vs {m}", s.m_hat);
    // Only O(p) numbers leave the worker.
    let payload = s.payload();
    assert_eq!((payload.vectors, payload.vector_len), (1, 500));
    assert!(payload.scalars <= 8);
}

#[test]
fn single_machine_single_penalty_scales_the_local_fit() {
    let config = WonderConfig {
        lambda_multipliers: vec![1.0],
        ..WonderConfig::default()
    };
    let mut gain = Vec::new();
    for seed in 0..20 {
        let data = synth(600, 120, Design::Isotropic, 100 + seed);
        let (train, val) = train_and_holdout(&data, 400);
        let shards = partition(&train, &config).unwrap();
        let fit = wonder_general(&shards, &config, None).unwrap();

        let design = DesignMatrix::new(train.x.clone()).unwrap();
        let theta = fit.plan.theta;
        let lambda = initial_lambda(1, 120, 400, theta.alpha2).unwrap();
        assert_eq!(fit.plan.selected_lambda, Some(lambda));
        let local = ridge_fit(&design, &train.y, lambda).unwrap().coefficients;
        let (m, mp) = trace_functionals(&design, lambda).unwrap();
        let (w, _) = equal_split_weights_risk(1, 120.0 / 400.0, lambda, theta, m, mp).unwrap();
        assert!((&fit.beta - &local * w).amax() < 1e-12);

        let mse = |b: &DVector<f64>| (&val.y - &val.x * b).norm_squared() / val.n() as f64;
        gain.push(mse(&fit.beta) - mse(&local));
    }
    let (mean, se) = mean_and_se(&gain);
    assert!(mean <= 2.0 * se, "weighting raised validation MSE by {mean} (se {se})");
}

#[test]
fn general_design_prediction_risk_matches_theory() {
    let (n, p, k) = (4000, 400, 5);
    let data = synth(n + 4000, p, Design::Isotropic, 7);
    let (train, val) = train_and_holdout(&data, n);
    let config = WonderConfig::with_k(k);
    let shards = partition(&train, &config).unwrap();
    let fit = wonder_general(&shards, &config, Some(&val)).unwrap();
    let selected = &fit.report.grid[fit.report.selected];
    let gammas = vec![(p * k) as f64 / n as f64; k];
    let theory = 1.0 + optimal_distributed_risk(&gammas, SignalNoise::new(1.0, 1.0).unwrap()).unwrap();
    let got = selected.validation_mse.unwrap();
    assert!((got / theory - 1.0).abs() < 0.1, "validation MSE {got}, theory {theory}");
}

#[test]
fn correlated_design_prefers_smaller_penalties() {
    let (n, p, k) = (3000, 500, 5);
    let data = synth(n + 3000, p, Design::Ar1 { rho: 0.9 }, 11);
    let (train, val) = train_and_holdout(&data, n);
    let config = WonderConfig {
        theta_override: oracle_theta(),
        ..WonderConfig::with_k(k)
    };
    let shards = partition(&train, &config).unwrap();
    let fit = wonder_general(&shards, &config, Some(&val)).unwrap();
    let curve: Vec<f64> = fit.report.grid.iter().map(|g| g.validation_mse.unwrap()).collect();
    let best = fit.report.selected;
    let multiplier = config.lambda_multipliers[best];
    assert!(best > 0 && best + 1 < curve.len(), "minimum on the grid edge: {curve:?}");
    assert!(multiplier < 1.0, "selected multiplier {multiplier}: {curve:?}");
    // Decreasing up to the minimum, increasing after it.
    assert!(curve[..=best].windows(2).all(|w| w[0] >= w[1]), "{curve:?}");
    assert!(curve[best..].windows(2).all(|w| w[0] <= w[1]), "{curve:?}");
}

#[test]
fn isotropic_weights_single_and_equal_shards() {
    let data = synth(400, 40, Design::Isotropic, 4);
    let one = wonder_isotropic(&partition(&data, &WonderConfig::with_k(1)).unwrap(), &WonderConfig::with_k(1)).unwrap();
    assert!((one.plan.weights[0] - 1.0).abs() < 1e-12);

    let config = WonderConfig::with_k(4);
    let fit = wonder_isotropic(&partition(&data, &config).unwrap(), &config).unwrap();
    let w = &fit.plan.weights;
    assert!(w.iter().all(|&x| (x - w[0]).abs() < 1e-14), "{w:?}");
    assert!(fit.plan.weight_sum() >= 1.0 - 1e-8);
    assert_eq!(fit.plan.kind, PlanKind::Isotropic);
}

#[test]
fn isotropic_estimation_error_matches_theory() {
    let (n, p, k) = (10000, 1000, 10);
    let config = WonderConfig {
        theta_override: oracle_theta(),
        ..WonderConfig::with_k(k)
    };
    let gammas = vec![(p * k) as f64 / n as f64; k];
    let theory = optimal_distributed_risk(&gammas, SignalNoise::new(1.0, 1.0).unwrap()).unwrap();
    let mut realized = Vec::new();
    for seed in 0..2 {
        let data = synth(n, p, Design::Isotropic, 20 + seed);
        let beta = data.beta.clone().unwrap();
        let fit = wonder_isotropic(&partition(&data, &config).unwrap(), &config).unwrap();
        realized.push((&fit.beta - &beta).norm_squared() / beta.norm_squared());
    }
    let (mean, _) = mean_and_se(&realized);
    assert!((mean / theory - 1.0).abs() < 0.1, "realized {mean}, theory {theory}");
}

#[test]
fn single_machine_isotropic_is_tuned_ridge() {
    // With one machine the plan is the ridge fit at λ = γ/α̂².
    let data = synth(500, 100, Design::Isotropic, 5);
    let config = WonderConfig::with_k(1);
    let shards = partition(&data, &config).unwrap();
    let fit = wonder_isotropic(&shards, &config).unwrap();
    let design = DesignMatrix::new(data.x.clone()).unwrap();
    let lambda = 0.2 / fit.plan.theta.alpha2;
    let tuned = ridge_fit(&design, &data.y, lambda).unwrap().coefficients;
    assert!((&fit.beta - &tuned).amax() < 1e-10);
}

#[test]
fn baselines_with_one_machine_coincide() {
    let data = synth(300, 30, Design::Isotropic, 6);
    let config = WonderConfig::with_k(1);
    let (naive, local) = baselines(&partition(&data, &config).unwrap(), &config).unwrap();
    assert_eq!(naive.beta, local.beta);

    let config = WonderConfig::with_k(6);
    let (naive, local) = baselines(&partition(&data, &config).unwrap(), &config).unwrap();
    assert!(naive.plan.weights.iter().all(|&w| w == 1.0 / 6.0));
    assert!((naive.plan.weight_sum() - 1.0).abs() <= 6.0 * f64::EPSILON);
    assert_eq!(local.plan.weights.iter().filter(|&&w| w != 0.0).count(), 1);
    let alpha2 = naive.plan.theta.alpha2;
    assert!((naive.plan.shard_lambdas[0] - 30.0 / (300.0 * alpha2)).abs() < 1e-12);
    assert!((local.plan.shard_lambdas[0] - 6.0 * 30.0 / (300.0 * alpha2)).abs() < 1e-12);
}

fn general_run(shards: &[Shard], config: &WonderConfig, val: &Dataset) -> DistributedFit {
    wonder_general(shards, config, Some(val)).unwrap()
}

#[test]
fn one_vector_and_few_scalars_per_penalty() {
    let data = synth(900, 40, Design::Isotropic, 8);
    let (train, val) = train_and_holdout(&data, 800);
    let config = WonderConfig::with_k(4);
    let shards = partition(&train, &config).unwrap();
    let grid = config.lambda_multipliers.len();

    let general = general_run(&shards, &config, &val);
    let isotropic = wonder_isotropic(&shards, &config).unwrap();
    let (naive, local) = baselines(&shards, &config).unwrap();
    for (fit, points) in [(&general, grid), (&isotropic, 1), (&naive, 1), (&local, 1)] {
        for id in 0..4 {
            let mut total = Payload::default();
            for t in fit.report.messages.transmissions.iter().filter(|t| t.shard_id == id) {
                assert!(t.payload.vector_len == 0 || t.payload.vector_len == 40);
                total += t.payload;
            }
            if fit.plan.kind == PlanKind::Local && id > 0 {
                assert_eq!(total.vectors, 0);
                continue;
            }
            assert_eq!(total.vectors, points, "{:?} shard {id}", fit.plan.kind);
            assert!(total.scalars <= 8 * points + 8, "{:?} shard {id}: {total:?}", fit.plan.kind);
        }
    }
    // The isotropic plan is a single round.
    assert_eq!(isotropic.report.messages.round(ROUND_THETA).count(), 0);
    assert!(general
        .report
        .messages
        .transmissions
        .iter()
        .all(|t| t.payload.scalars <= 8 * grid));
}

#[test]
fn runs_are_bitwise_reproducible() {
    let data = synth(700, 30, Design::Isotropic, 9);
    let (train, val) = split_validation(&data, 0.1, 3).unwrap();
    let config = WonderConfig {
        partition: PartitionStrategy::Shuffled { seed: 42 },
        ..WonderConfig::with_k(3)
    };
    let a = general_run(&partition(&train, &config).unwrap(), &config, &val);
    let b = general_run(&partition(&train, &config).unwrap(), &config, &val);
    assert_eq!(a.beta.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.beta.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(serde_json::to_string(&a.plan).unwrap(), serde_json::to_string(&b.plan).unwrap());
    assert_eq!(a.report, b.report);
}

#[test]
fn shard_processing_order_does_not_matter() {
    let data = synth(600, 25, Design::Isotropic, 10);
    let (train, val) = train_and_holdout(&data, 500);
    let config = WonderConfig::with_k(5);
    let shards = partition(&train, &config).unwrap();
    let mut reversed = shards.clone();
    reversed.reverse();
    let a = general_run(&shards, &config, &val);
    let b = general_run(&reversed, &config, &val);
    assert!((&a.beta - &b.beta).amax() <= 1e-12);
    let ia = wonder_isotropic(&shards, &config).unwrap();
    let ib = wonder_isotropic(&reversed, &config).unwrap();
    assert!((&ia.beta - &ib.beta).amax() <= 1e-12);

    // The combiner itself is order-free as well.
    let cluster = Cluster::new(&shards, &config).unwrap();
    let messages = cluster.theta_messages().to_vec();
    let broadcast = make_broadcast(&messages, &config).unwrap();
    let workers: Vec<LocalWorker> = shards.iter().map(|s| LocalWorker::new(s, false).unwrap()).collect();
    let mut summaries: Vec<ShardSummary> = workers
        .iter()
        .zip(&messages)
        .flat_map(|(w, m)| {
            let t = SignalNoise::new(m.sigma2_hat, m.alpha2_hat).unwrap();
            w.summarize(t, &broadcast.lambdas).unwrap()
        })
        .collect();
    let forward = combine_general(&summaries, &broadcast, Some(&val)).unwrap();
    summaries.reverse();
    let backward = combine_general(&summaries, &broadcast, Some(&val)).unwrap();
    assert!((&forward.beta - &backward.beta).amax() <= 1e-12);
    assert!((&forward.beta - &a.beta).amax() <= 1e-12);
}

#[test]
fn file_exchange_reproduces_the_in_process_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(500, 20, Design::Isotropic, 12);
    let (train, val) = train_and_holdout(&data, 400);
    let config = WonderConfig::with_k(4);
    let shards = partition(&train, &config).unwrap();

    let workers: Vec<LocalWorker> = shards.iter().map(|s| LocalWorker::new(s, false).unwrap()).collect();
    for w in &workers {
        write_json(dir.path().join(format!("theta_{}.json", w.shard_id())), &w.fit_theta(false).unwrap()).unwrap();
    }
    let messages: Vec<ThetaMessage> = (0..4)
        .map(|i| read_json(dir.path().join(format!("theta_{i}.json"))).unwrap())
        .collect();
    let broadcast = make_broadcast(&messages, &config).unwrap();
    write_json(dir.path().join("broadcast.json"), &broadcast).unwrap();

    let received: Broadcast = read_json(dir.path().join("broadcast.json")).unwrap();
    assert_eq!(received, broadcast);
    for (w, m) in workers.iter().zip(&messages) {
        let t = SignalNoise::new(m.sigma2_hat, m.alpha2_hat).unwrap();
        for (j, s) in w.summarize(t, &received.lambdas).unwrap().iter().enumerate() {
            write_json(dir.path().join(format!("summary_{}_{j}.json", w.shard_id())), s).unwrap();
        }
    }
    let mut summaries = Vec::new();
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap().to_string_lossy().starts_with("summary_") {
            summaries.push(read_json::<ShardSummary>(&path).unwrap());
        }
    }
    assert_eq!(summaries.len(), 4 * config.lambda_multipliers.len());
    let from_files = combine_general(&summaries, &received, Some(&val)).unwrap();
    let in_process = general_run(&shards, &config, &val);
    assert_eq!(from_files.beta, in_process.beta);

    // Documents are self-describing.
    let text = std::fs::read_to_string(dir.path().join("summary_0_0.json")).unwrap();
    for field in ["schema", "shard_id", "n_i", "lambda", "beta_hat", "sigma2_hat", "alpha2_hat", "m_hat", "mprime_hat"] {
        assert!(text.contains(&format!("\"{field}\"")), "missing {field}");
    }
}

#[test]
fn zero_signal_points_to_the_null_estimator() {
    let x = DMatrix::from_fn(50, 5, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
    let y = DVector::from_fn(50, |i, _| ((i * 13) % 7) as f64 - 3.0);
    let data = Dataset::new(x, y).unwrap();
    let config = WonderConfig {
        theta_override: Some(SignalNoise::new(1.0, 0.0).unwrap()),
        ..WonderConfig::with_k(2)
    };
    let err = wonder_isotropic(&partition(&data, &config).unwrap(), &config).unwrap_err();
    assert!(err.to_string().contains("null estimator"), "{err}");
}
