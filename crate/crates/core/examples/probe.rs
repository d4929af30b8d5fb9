//! Scratch probe for benchmark behavior (deleted before release).

use ucsl_core::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("gap");
    match which {
        "gap" => gap(),
        "mono" => mono(),
        "traj" => traj(),
        "bench" => bench(),
        _ => panic!("unknown probe"),
    }
}

// bench <act> <lr> <epochs> <hidden> <repr> <batch> <eps> <kmiters>
// criterion-5 style evaluation over 3 seeds, train-set metrics
fn bench() {
    let args: Vec<String> = std::env::args().collect();
    let act = if args.get(2).map(String::as_str) == Some("relu") {
        Activation::Relu
    } else {
        Activation::Tanh
    };
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(600);
    let hidden: Vec<usize> = match args.get(5).map(String::as_str) {
        None => vec![64],
        Some("none") | Some("0") => vec![],
        Some(s) => s.split('-').map(|x| x.parse().unwrap()).collect(),
    };
    let repr: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(64);
    let batch: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(64);
    let eps: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let km_iters: usize = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(10);
    let use_sgd = args.get(10).map(String::as_str) == Some("sgd");
    let n_pos: usize = args.get(11).and_then(|s| s.parse().ok()).unwrap_or(400);
    let n_neg: usize = args.get(12).and_then(|s| s.parse().ok()).unwrap_or(400);
    let restarts: usize = args.get(13).and_then(|s| s.parse().ok()).unwrap_or(1);

    let mut ucsl_sub = Vec::new();
    let mut ucsl_cls = Vec::new();
    let mut base_sub = Vec::new();
    let t0 = std::time::Instant::now();
    for seed in [1u64, 2, 3] {
        let gen_cfg = SynthConfig::new(n_pos, n_neg, 2, seed);
        let train_set = gen_synthetic(&gen_cfg).unwrap();
        let model_cfg =
            ModelConfig::new(train_set.dim(), hidden.clone(), repr, 2, act, seed ^ 7).unwrap();
        let mut cfg = TrainConfig::new(epochs, seed ^ 13);
        cfg.learning_rate = lr;
        cfg.batch_size = batch;
        cfg.sk.epsilon = eps;
        cfg.sk.n_kmeans_iters = km_iters;
        cfg.sk.n_restarts = restarts;
        if use_sgd {
            cfg.optimizer = Optimizer::SgdMomentum;
        }

        let out = train(&train_set, &model_cfg, &cfg).unwrap();
        let pred = predict(&out.params, &out.centroids, &train_set.x).unwrap();
        let m = compute_metrics(&train_set.y, &train_set.c_true, 2, &pred).unwrap();
        ucsl_sub.push(m.subgroup_bacc);
        ucsl_cls.push(m.class_bacc);

        let (bp, bc) = train_baseline_bce_kmeans(&train_set, &model_cfg, &cfg).unwrap();
        let bpred = predict_with(
            &bp,
            &bc,
            &train_set.x,
            ClassifierSource::SingleExpert,
            SubgroupSource::Representations,
        )
        .unwrap();
        let bm = compute_metrics(&train_set.y, &train_set.c_true, 2, &bpred).unwrap();
        base_sub.push(bm.subgroup_bacc);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "ucsl sub {:?} (mean {:.3}) cls {:?} (mean {:.3}) | base sub {:?} (mean {:.3}) | gap {:.3} | {:?}",
        ucsl_sub.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        mean(&ucsl_sub),
        ucsl_cls.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        mean(&ucsl_cls),
        base_sub.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        mean(&base_sub),
        mean(&ucsl_sub) - mean(&base_sub),
        t0.elapsed()
    );
}

fn traj() {
    let args: Vec<String> = std::env::args().collect();
    let act = if args.get(2).map(String::as_str) == Some("relu") {
        Activation::Relu
    } else {
        Activation::Tanh
    };
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(200);
    let hidden: Vec<usize> = match args.get(5).map(String::as_str) {
        None => vec![64, 64],
        Some("none") | Some("0") => vec![],
        Some(s) => s.split('-').map(|x| x.parse().unwrap()).collect(),
    };
    let repr: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(32);
    let batch: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(64);
    let eps: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let km_iters: usize = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(10);
    let seed: u64 = args.get(10).and_then(|s| s.parse().ok()).unwrap_or(1);

    let gen_cfg = SynthConfig::new(400, 400, 2, seed);
    let train_set = gen_synthetic(&gen_cfg).unwrap();
    let model_cfg =
        ModelConfig::new(train_set.dim(), hidden, repr, 2, act, seed ^ 7).unwrap();
    let mut cfg = TrainConfig::new(epochs, seed ^ 13);
    cfg.learning_rate = lr;
    cfg.batch_size = batch;
    cfg.sk.epsilon = eps;
    cfg.sk.n_kmeans_iters = km_iters;

    let pos_c: Vec<usize> = train_set
        .c_true
        .iter()
        .filter(|&&c| c >= 0)
        .map(|&c| c as usize)
        .collect();
    // nuisance mode of each positive, recovered from the unmixed frame
    let rot = rotation_matrix(&gen_cfg).unwrap();
    let raw = train_set.x.dot(&rot);
    let pos_mode: Vec<usize> = (0..train_set.n())
        .filter(|&i| train_set.y[i] == 1)
        .map(|i| usize::from(raw[[i, 0]] > 0.0))
        .collect();

    let mut state = init_state(&train_set, &model_cfg, &cfg).unwrap();
    for t in 0..cfg.epochs {
        state = m_step(&state, &train_set, &cfg).unwrap();
        let (next, _) = e_step(&state, &train_set, &cfg, t + 1, cfg.epochs).unwrap();
        state = next;
        if (t + 1) % (epochs / 20).max(1) == 0 {
            let q_pos: Vec<usize> = train_set
                .y
                .iter()
                .enumerate()
                .filter(|(_, &y)| y == 1)
                .map(|(i, _)| {
                    let row = state.q.q.row(i);
                    (0..2).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap()
                })
                .collect();
            let (sub, _) = subgroup_bacc(&pos_c, &q_pos, 2).unwrap();
            let pred = predict(&state.params, &state.centroids, &train_set.x).unwrap();
            let cls = class_bacc(&train_set.y, &pred.hard_class).unwrap();
            // geometry: separation of centroids by true subgroup vs by
            // nuisance mode, in representation space
            let z = encode(&state.params, &train_set.positive_rows()).unwrap();
            let sep = |labels: &[usize]| -> f64 {
                let mut c0 = vec![0.0; z.ncols()];
                let mut c1 = vec![0.0; z.ncols()];
                let (mut n0, mut n1) = (0.0, 0.0);
                for (i, &l) in labels.iter().enumerate() {
                    for j in 0..z.ncols() {
                        if l == 0 {
                            c0[j] += z[[i, j]];
                        } else {
                            c1[j] += z[[i, j]];
                        }
                    }
                    if l == 0 {
                        n0 += 1.0;
                    } else {
                        n1 += 1.0;
                    }
                }
                (0..z.ncols())
                    .map(|j| (c0[j] / n0 - c1[j] / n1).powi(2))
                    .sum::<f64>()
                    .sqrt()
            };
            let sub_sep = sep(&pos_c);
            let nuis_sep = sep(&pos_mode);
            println!(
                "epoch {:3}: q-sub {:.3} cls {:.3} | z-sep sub {:.2} nuis {:.2} | elbo {:.1}",
                t + 1,
                sub,
                cls,
                sub_sep,
                nuis_sep,
                elbo_lower_bound(&state.params, &train_set, &state.q).unwrap()
            );
        }
    }
}

fn gap() {
    let args: Vec<String> = std::env::args().collect();
    let act = if args.get(2).map(String::as_str) == Some("tanh") {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.005);
    let epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(40);
    for seed in [1u64, 2, 3] {
        let gen_cfg = SynthConfig::new(400, 400, 2, seed);
        let train_set = gen_synthetic(&gen_cfg).unwrap();
        let test_set = gen_synthetic(&gen_cfg.resampled(seed.wrapping_add(1000))).unwrap();

        let model_cfg =
            ModelConfig::new(train_set.dim(), vec![64], 64, 2, act, seed ^ 7).unwrap();
        let mut cfg = TrainConfig::new(epochs, seed ^ 13);
        cfg.learning_rate = lr;

        let t0 = std::time::Instant::now();
        let out = train(&train_set, &model_cfg, &cfg).unwrap();
        let ucsl_pred = predict(&out.params, &out.centroids, &test_set.x).unwrap();
        let ucsl = compute_metrics(&test_set.y, &test_set.c_true, 2, &ucsl_pred).unwrap();

        let (bp, bc) = train_baseline_bce_kmeans(&train_set, &model_cfg, &cfg).unwrap();
        let base_pred = predict_with(
            &bp,
            &bc,
            &test_set.x,
            ClassifierSource::SingleExpert,
            SubgroupSource::Representations,
        )
        .unwrap();
        let base = compute_metrics(&test_set.y, &test_set.c_true, 2, &base_pred).unwrap();

        let first = &out.history.records[0];
        let last = out.history.records.last().unwrap();
        println!(
            "seed {seed}: ucsl sub={:.3} cls={:.3} ovr={:.3} | base sub={:.3} cls={:.3} | ratio {:.3} -> {:.3} | {:?}",
            ucsl.subgroup_bacc,
            ucsl.class_bacc,
            ucsl.overall_bacc,
            base.subgroup_bacc,
            base.class_bacc,
            first.equidistance_ratio,
            last.equidistance_ratio,
            t0.elapsed()
        );
    }
}

fn mono() {
    let args: Vec<String> = std::env::args().collect();
    let act = if args.get(2).map(String::as_str) == Some("tanh") {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    for seed in [1u64, 2, 3] {
        let gen_cfg = SynthConfig::new(400, 400, 2, seed);
        let train_set = gen_synthetic(&gen_cfg).unwrap();
        let model_cfg =
            ModelConfig::new(train_set.dim(), vec![64], 64, 2, act, seed ^ 7).unwrap();
        let mut cfg = TrainConfig::new(30, seed ^ 13);
        cfg.full_batch = true;
        cfg.learning_rate = lr;
        let t0 = std::time::Instant::now();
        let out = train(&train_set, &model_cfg, &cfg).unwrap();
        let elbos: Vec<f64> = out.history.records.iter().map(|r| r.elbo).collect();
        let mut worst: f64 = 0.0;
        for w in elbos.windows(2) {
            worst = worst.min(w[1] - w[0]);
        }
        println!(
            "seed {seed}: elbo {:.4} -> {:.4}, worst step {:+.3e}, ratio {:.3} -> {:.3}, {:?}",
            elbos.first().unwrap(),
            elbos.last().unwrap(),
            worst,
            out.history.records[0].equidistance_ratio,
            out.history.records.last().unwrap().equidistance_ratio,
            t0.elapsed()
        );
    }
}

// appended: sgd variants for bench
