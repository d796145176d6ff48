//! Throwaway profiling harness. Not part of the product; delete before ship.

use std::time::Instant;

use csnn_core::config::{DataKind, RunConfig};
use csnn_core::encoding::poisson_encode;
use csnn_core::topology::UpdateCounter;
use csnn_core::training::{
    load_datasets, run_training, train_unsupervised, Engine, Network, PresentOptions, Session,
};

fn mnist_cfg(kernels: usize, train_pc: usize, test_pc: usize, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.arch = "1C-1S-FC".to_string();
    cfg.input_h = 28;
    cfg.input_w = 28;
    cfg.kernels = vec![kernels];
    cfg.kernel_sizes = vec![5];
    cfg.classes = 10;
    cfg.epochs = epochs;
    cfg.unsup_epochs = Some(1);
    cfg.sup_epochs = Some(epochs.saturating_sub(1).max(1));
    cfg.data_kind = DataKind::Mnist;
    let root = "crates/core/testdata/mnist";
    cfg.train_images = format!("{root}/train-images-idx3-ubyte.gz");
    cfg.train_labels = format!("{root}/train-labels-idx1-ubyte.gz");
    cfg.test_images = format!("{root}/t10k-images-idx3-ubyte.gz");
    cfg.test_labels = format!("{root}/t10k-labels-idx1-ubyte.gz");
    cfg.train_per_class = train_pc;
    cfg.test_per_class = test_pc;
    cfg.validate().unwrap();
    cfg
}

fn breakdown(kernels: usize, v_thresh: f64) {
    let mut cfg = mnist_cfg(kernels, 20, 5, 2);
    cfg.v_thresh = v_thresh;
    let (train, _test, _) = load_datasets(&cfg).unwrap();
    let ses = Session::from_config(&cfg).unwrap();
    let mut net = Network::from_config(&cfg).unwrap();
    let dt = ses.clock.dt_ms();
    let mut engine = Engine::new(&net, dt);
    let input = poisson_encode(&train.images[0], &ses.encoder, dt, train.ids[0]).unwrap();
    let layers = net.spec.layers.len();
    let frozen = vec![false; layers];
    let mut plastic = vec![false; layers];
    plastic[0] = true;

    let reps = 60;
    let t0 = Instant::now();
    for _ in 0..reps {
        engine
            .present(
                &mut net,
                &ses.clock,
                &input,
                &PresentOptions {
                    plastic: &frozen,
                    capture: None,
                    fc_adapt: None,
                    wta_on: true,
                    inhibit_radius: cfg.inhibit_radius,
                    reset: true,
                },
            )
            .unwrap();
    }
    let frozen_ms = 1e3 * t0.elapsed().as_secs_f64() / reps as f64;

    let t0 = Instant::now();
    for _ in 0..reps {
        engine
            .present(
                &mut net,
                &ses.clock,
                &input,
                &PresentOptions {
                    plastic: &plastic,
                    capture: None,
                    fc_adapt: None,
                    wta_on: true,
                    inhibit_radius: cfg.inhibit_radius,
                    reset: true,
                },
            )
            .unwrap();
    }
    let plastic_ms = 1e3 * t0.elapsed().as_secs_f64() / reps as f64;

    let mut counter = UpdateCounter::new(layers);
    let t0 = Instant::now();
    train_unsupervised(&mut net, &train, &ses, &mut counter).unwrap();
    let unsup_ms = 1e3 * t0.elapsed().as_secs_f64() / train.len() as f64;

    println!(
        "K={kernels} vth={v_thresh}: present(frozen)={frozen_ms:.1} ms  present(plastic)={plastic_ms:.1} ms  unsup={unsup_ms:.1} ms  => replay ~{:.1} ms",
        unsup_ms - plastic_ms
    );
}

fn end_to_end(tag: &str, kernels: usize, train_pc: usize, test_pc: usize, epochs: usize) {
    let cfg = mnist_cfg(kernels, train_pc, test_pc, epochs);
    let (train, test, _) = load_datasets(&cfg).unwrap();
    let (n_train, n_test) = (train.len(), test.len());
    let t0 = Instant::now();
    let out = run_training(&cfg, &train, &test).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let pres = n_train + n_train + n_test;
    println!(
        "{tag}: K={kernels} train={n_train} test={n_test} epochs={epochs} wall={dt:.2}s  ~{:.2} ms/presentation  acc={:.3} writes={}",
        1e3 * dt / pres as f64,
        out.report.accuracy,
        out.report.update_counts.writes,
    );
}

fn conv_micro(kernels: usize, v_thresh: f64) {
    use csnn_core::forward::{commit_conv_fires, conv_forward_step, wta_select};
    use csnn_core::sim::{LifState, SimClock};
    use csnn_core::topology::LayerDims;

    let mut cfg = mnist_cfg(kernels, 20, 5, 2);
    cfg.v_thresh = v_thresh;
    let (train, _test, _) = load_datasets(&cfg).unwrap();
    let ses = Session::from_config(&cfg).unwrap();
    let net = Network::from_config(&cfg).unwrap();
    let dt = ses.clock.dt_ms();
    let input = poisson_encode(&train.images[0], &ses.encoder, dt, train.ids[0]).unwrap();
    let steps = ses.clock.steps_total();
    // Re-derive the per-step deliveries like the engine does.
    let mut sched = vec![Vec::new(); steps as usize];
    let mut n_spikes = 0;
    for (i, tr) in input.iter().enumerate() {
        for &s in tr.steps() {
            if s + 1 < steps {
                sched[s as usize + 1].push(i as u32);
                n_spikes += 1;
            }
        }
    }
    let kern = match &net.store.layers[0] {
        csnn_core::topology::LayerWeights::Conv(k) => k.clone(),
        _ => unreachable!(),
    };
    let in_dims = LayerDims { channels: 1, height: 28, width: 28 };
    let out_dims = net.dims[0];
    let lif = net.lif_conv;
    let reps = 60;

    let t0 = Instant::now();
    let mut fires = 0usize;
    let mut cand_total = 0usize;
    for _ in 0..reps {
        let mut states = vec![LifState::rest(&lif); out_dims.len()];
        let mut drive = Vec::new();
        let mut clock = SimClock::new(dt, cfg.presentation_ms).unwrap();
        for n in 0..steps {
            let cands = conv_forward_step(
                &sched[n as usize],
                &kern,
                in_dims,
                out_dims,
                &mut states,
                &lif,
                &clock,
                &mut drive,
            )
            .unwrap();
            cand_total += cands.len();
            let accept = wta_select(&cands, out_dims, cfg.inhibit_radius);
            fires += commit_conv_fires(&cands, &accept, &mut states, &lif, &clock).len();
            clock.advance();
        }
    }
    let dense_ms = 1e3 * t0.elapsed().as_secs_f64() / reps as f64;
    println!(
        "K={kernels} vth={v_thresh}: conv={dense_ms:.2} ms ({} input spikes, {} fires, {} cands/presentation)",
        n_spikes,
        fires / reps,
        cand_total / reps
    );
}

fn grid() {
    for &vth in &[6.0, 10.0, 14.0] {
        for &vfc in &[2.0, 5.0, 10.0] {
            let mut cfg = mnist_cfg(16, 50, 20, 10);
            cfg.unsup_epochs = Some(1);
            cfg.sup_epochs = Some(9);
            cfg.v_thresh = vth;
            cfg.v_thresh_fc = Some(vfc);
            cfg.validate().unwrap();
            let (train, test, _) = load_datasets(&cfg).unwrap();
            let t0 = Instant::now();
            let out = run_training(&cfg, &train, &test).unwrap();
            let curve: Vec<String> =
                out.report.per_epoch_accuracy.iter().map(|a| format!("{a:.2}")).collect();
            println!(
                "vth={vth:<4} vfc={vfc:<4} acc={:.3}  epochs=[{}]  {:.0}s",
                out.report.accuracy,
                curve.join(" "),
                t0.elapsed().as_secs_f64()
            );
        }
    }
}

/// Spike-count vector of each presentation's classifier input, one per sample.
fn count_vectors(
    net: &mut Network,
    engine: &mut Engine,
    ses: &Session,
    ds: &csnn_core::data::Dataset,
) -> Vec<Vec<f64>> {
    let fc_li = net.fc_index();
    let layers = net.spec.layers.len();
    let frozen = vec![false; layers];
    let dt = ses.clock.dt_ms();
    let mut out = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let input = poisson_encode(&ds.images[i], &ses.encoder, dt, ds.ids[i]).unwrap();
        if fc_li == 0 {
            out.push(input.iter().map(|t| t.steps().len() as f64).collect());
            continue;
        }
        let mut pres = engine
            .present(
                net,
                &ses.clock,
                &input,
                &PresentOptions {
                    plastic: &frozen,
                    capture: Some(fc_li - 1),
                    fc_adapt: None,
                    wta_on: ses.tp.wta_on,
                    inhibit_radius: ses.tp.inhibit_radius,
                    reset: true,
                },
            )
            .unwrap();
        let trains = std::mem::take(&mut pres.emit_trains[fc_li - 1]);
        out.push(trains.iter().map(|t| t.steps().len() as f64).collect());
    }
    out
}

fn centroid_accuracy(
    train_vecs: &[Vec<f64>],
    train_labels: &[u8],
    test_vecs: &[Vec<f64>],
    test_labels: &[u8],
    classes: usize,
) -> f64 {
    let dim = train_vecs[0].len();
    let mut centroids = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (v, &l) in train_vecs.iter().zip(train_labels) {
        counts[l as usize] += 1;
        for (c, x) in centroids[l as usize].iter_mut().zip(v) {
            *c += x;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        if n > 0 {
            for x in c.iter_mut() {
                *x /= n as f64;
            }
        }
    }
    let mut correct = 0usize;
    for (v, &l) in test_vecs.iter().zip(test_labels) {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (ci, c) in centroids.iter().enumerate() {
            let d: f64 = c.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = ci;
            }
        }
        if best == l as usize {
            correct += 1;
        }
    }
    correct as f64 / test_vecs.len() as f64
}

fn diag(vth: f64, vfc: f64) {
    let mut cfg = mnist_cfg(16, 50, 20, 10);
    cfg.unsup_epochs = Some(1);
    cfg.sup_epochs = Some(9);
    cfg.v_thresh = vth;
    cfg.v_thresh_fc = Some(vfc);
    cfg.validate().unwrap();
    let (train, test, _) = load_datasets(&cfg).unwrap();
    let ses = Session::from_config(&cfg).unwrap();
    let mut net = Network::from_config(&cfg).unwrap();
    let mut counter = UpdateCounter::new(net.spec.layers.len());

    // Raw-encoding baseline: how separable are the Poisson inputs themselves?
    let dt = ses.clock.dt_ms();
    let enc_vec = |ds: &csnn_core::data::Dataset| -> Vec<Vec<f64>> {
        (0..ds.len())
            .map(|i| {
                poisson_encode(&ds.images[i], &ses.encoder, dt, ds.ids[i])
                    .unwrap()
                    .iter()
                    .map(|t| t.steps().len() as f64)
                    .collect()
            })
            .collect()
    };
    let raw_train = enc_vec(&train);
    let raw_test = enc_vec(&test);
    let raw_acc =
        centroid_accuracy(&raw_train, &train.labels, &raw_test, &test.labels, cfg.classes);
    println!("raw-encoding centroid accuracy: {raw_acc:.3}");

    train_unsupervised(&mut net, &train, &ses, &mut counter).unwrap();
    let mut engine = Engine::new(&net, dt);
    let train_vecs = count_vectors(&mut net, &mut engine, &ses, &train);
    let test_vecs = count_vectors(&mut net, &mut engine, &ses, &test);

    let totals: Vec<f64> = train_vecs.iter().map(|v| v.iter().sum()).collect();
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    let lo = totals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = totals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dim = train_vecs[0].len();
    let mut ever = vec![false; dim];
    for v in &train_vecs {
        for (e, &x) in ever.iter_mut().zip(v) {
            if x > 0.0 {
                *e = true;
            }
        }
    }
    let active = ever.iter().filter(|&&e| e).count();
    println!(
        "pool spikes/sample: mean={mean:.1} min={lo:.0} max={hi:.0}; active pool neurons {active}/{dim}"
    );
    let feat_acc =
        centroid_accuracy(&train_vecs, &train.labels, &test_vecs, &test.labels, cfg.classes);
    println!("post-conv centroid accuracy (vth={vth}): {feat_acc:.3}");

    // Supervised phase as shipped, then inspect what the classifier learned.
    let t0 = Instant::now();
    let per_epoch = csnn_core::training::train_supervised_final(
        &mut net,
        &train,
        Some(&test),
        &ses,
        &mut counter,
        t0,
    )
    .unwrap();
    let curve: Vec<String> = per_epoch.iter().map(|e| format!("{:.2}", e.accuracy)).collect();
    println!("supervised curve: [{}]", curve.join(" "));
    println!("fc theta: {:?}", net.fc_theta().iter().map(|t| (t * 100.0).round() / 100.0).collect::<Vec<_>>());
    let fc = net.fc_weights().clone();
    for class in 0..cfg.classes {
        let row: Vec<f64> = (0..fc.inputs).map(|j| fc.weights[fc.idx(j, class)]).collect();
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let hi = row.iter().filter(|&&w| w > 0.9 * cfg.w_max).count();
        let lo = row.iter().filter(|&&w| w < 1e-6).count();
        println!(
            "  class {class}: mean_w={mean:.4} near_max={hi} near_zero={lo} of {}",
            row.len()
        );
    }
    // Predicted-class distribution on the test set.
    let mut pred_hist = vec![0usize; cfg.classes];
    for i in 0..test.len() {
        let p = csnn_core::training::classify(&mut net, &test.images[i], test.ids[i], &ses)
            .unwrap();
        pred_hist[p] += 1;
    }
    println!("prediction histogram: {pred_hist:?}");
}

fn feature_probe(vth: f64, unsup_epochs: usize) {
    let mut cfg = mnist_cfg(16, 50, 20, 10);
    cfg.unsup_epochs = Some(unsup_epochs.max(1));
    cfg.sup_epochs = Some(1);
    cfg.v_thresh = vth;
    cfg.validate().unwrap();
    let (train, test, _) = load_datasets(&cfg).unwrap();
    let ses = Session::from_config(&cfg).unwrap();
    let mut net = Network::from_config(&cfg).unwrap();
    let mut counter = UpdateCounter::new(net.spec.layers.len());
    if unsup_epochs > 0 {
        train_unsupervised(&mut net, &train, &ses, &mut counter).unwrap();
    }
    let dt = ses.clock.dt_ms();
    let mut engine = Engine::new(&net, dt);
    let train_vecs = count_vectors(&mut net, &mut engine, &ses, &train);
    let test_vecs = count_vectors(&mut net, &mut engine, &ses, &test);
    let acc =
        centroid_accuracy(&train_vecs, &train.labels, &test_vecs, &test.labels, cfg.classes);
    let totals: Vec<f64> = train_vecs.iter().map(|v| v.iter().sum()).collect();
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    println!(
        "vth={vth} unsup_epochs={unsup_epochs}: centroid={acc:.3} pool_spikes/sample={mean:.0}"
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.len() > 1 && args[1] == "e2e" {
        end_to_end("small", 16, 20, 5, 2);
        end_to_end("mid", 16, 50, 10, 3);
    } else if args.len() > 1 && args[1] == "micro" {
        conv_micro(16, 1.0);
        conv_micro(16, 4.0);
        conv_micro(16, 10.0);
        conv_micro(32, 10.0);
    } else if args.len() > 1 && args[1] == "grid" {
        grid();
    } else if args.len() > 1 && args[1] == "diag" {
        let vth = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(6.0);
        let vfc = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5.0);
        diag(vth, vfc);
    } else if args.len() > 1 && args[1] == "features" {
        let vth = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(6.0);
        feature_probe(vth, 0);
        feature_probe(vth, 1);
        feature_probe(vth, 3);
    } else if args.len() > 1 && args[1] == "fcsweep" {
        let vth = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(6.0);
        let vfc = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(160.0);
        for &ti in &[0.05, 2.0, 8.0, 20.0] {
            let mut cfg = mnist_cfg(16, 50, 20, 10);
            cfg.unsup_epochs = Some(1);
            cfg.sup_epochs = Some(9);
            cfg.v_thresh = vth;
            cfg.v_thresh_fc = Some(vfc);
            cfg.theta_increment = ti;
            cfg.validate().unwrap();
            let (train, test, _) = load_datasets(&cfg).unwrap();
            let t0 = Instant::now();
            let out = run_training(&cfg, &train, &test).unwrap();
            let curve: Vec<String> =
                out.report.per_epoch_accuracy.iter().map(|a| format!("{a:.2}")).collect();
            println!(
                "vth={vth:<4} vfc={vfc:<4} theta_inc={ti:<5} acc={:.3}  epochs=[{}]  {:.0}s",
                out.report.accuracy,
                curve.join(" "),
                t0.elapsed().as_secs_f64()
            );
        }
    } else {
        breakdown(16, 10.0);
        breakdown(32, 10.0);
    }
}
