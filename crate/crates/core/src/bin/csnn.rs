//! Command line driver: train, eval, sweep and param-search over the
//! spiking network simulator.
//!
//! Diagnostics go to stderr; stdout carries one summary line per run (the
//! param-search table being the exception). Exit codes: 0 success, 2 bad
//! config, 3 bad data, 4 numeric fault, 5 snapshot mismatch, 1 other I/O.

use clap::{Parser, Subcommand};
use csnn_core::config::RunConfig;
use csnn_core::report::{derive_run_id, join_arch_list, CsvReport, CsvRow};
use csnn_core::snapshot::NetworkSnapshot;
use csnn_core::topology::{count_trainable_params, NetworkSpec, UpdateCounter};
use csnn_core::training::{
    evaluate, load_datasets, run_training, sweep_kernels, Network, Session, TrainOutcome,
};
use csnn_core::{CsnnError, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "csnn",
    version,
    about = "Convolutional spiking network simulator trained with combined pair-based and power-law STDP"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a network and write the weight snapshot and CSV report.
    Train {
        /// Run configuration file (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Override one config key, e.g. --set train.epochs=5 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a saved snapshot on the configured test set (read-only).
    Eval {
        /// Weight snapshot written by a previous train run.
        #[arg(long)]
        snapshot: PathBuf,
        /// The configuration the snapshot was trained under.
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train once per kernel count and merge all reports into one CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated kernel counts, e.g. 4,8,16,32.
        #[arg(long)]
        kernels: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// List (K, k) combinations whose trainable-parameter count comes
    /// closest to a target, over K in [1, 128] and odd k in [3, 11].
    ParamSearch {
        /// Target parameter count.
        #[arg(long)]
        target: u64,
        #[arg(long, default_value = "1C-1S-FC")]
        arch: String,
        /// Input size as HxW, e.g. 28x28.
        #[arg(long, default_value = "28x28")]
        input: String,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        /// Print only the closest N rows (0 prints every combination).
        #[arg(long, default_value_t = 20)]
        top: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let status = match cli.cmd {
        Cmd::Train { config, set } => cmd_train(&config, &set),
        Cmd::Eval { snapshot, config, set } => cmd_eval(&snapshot, &config, &set),
        Cmd::Sweep { config, kernels, set } => cmd_sweep(&config, &kernels, &set),
        Cmd::ParamSearch { target, arch, input, classes, top } => {
            cmd_param_search(target, &arch, &input, classes, top)
        }
    };
    match status {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}

/// Per-epoch rows (epoch "1"..) plus one "final" summary row for one run.
fn push_run_rows(
    report: &mut CsvReport,
    cfg: &RunConfig,
    outcome: &TrainOutcome,
    final_wall_s: f64,
) {
    let run_id = derive_run_id(&cfg.effective_text());
    let kernels = join_arch_list(&cfg.kernels);
    let kernel_sizes = join_arch_list(&cfg.kernel_sizes);
    let params = outcome.report.trainable_params;
    for (i, e) in outcome.per_epoch.iter().enumerate() {
        report.push(CsvRow {
            run_id: run_id.clone(),
            arch: cfg.arch.clone(),
            kernels: kernels.clone(),
            kernel_sizes: kernel_sizes.clone(),
            seed: cfg.seed,
            epoch: (i + 1).to_string(),
            accuracy: e.accuracy,
            trainable_params: params,
            synapse_writes: e.cumulative_writes,
            wall_time_s: e.elapsed_s,
        });
    }
    report.push(CsvRow {
        run_id,
        arch: cfg.arch.clone(),
        kernels,
        kernel_sizes,
        seed: cfg.seed,
        epoch: "final".to_string(),
        accuracy: outcome.report.accuracy,
        trainable_params: params,
        synapse_writes: outcome.counter.writes,
        wall_time_s: final_wall_s,
    });
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("effective_config.txt"), cfg.effective_text())?;
    Ok(dir)
}

fn report_skipped(skipped: &[PathBuf]) {
    if !skipped.is_empty() {
        eprintln!("skipped {} undecodable image file(s):", skipped.len());
        for p in skipped {
            eprintln!("  {}", p.display());
        }
    }
}

fn cmd_train(config: &Path, overrides: &[String]) -> Result<()> {
    let t0 = Instant::now();
    let cfg = RunConfig::from_sources(config, overrides)?;
    cfg.validate()?;
    let (train, test, skipped) = load_datasets(&cfg)?;
    report_skipped(&skipped);
    eprintln!(
        "training {} (K={}, k={}) on {} train / {} test samples, seed {}",
        cfg.arch,
        join_arch_list(&cfg.kernels),
        join_arch_list(&cfg.kernel_sizes),
        train.len(),
        test.len(),
        cfg.seed
    );
    let outcome = run_training(&cfg, &train, &test)?;
    let dir = prepare_out_dir(&cfg)?;
    let snap_path = dir.join("weights.csnn");
    outcome.network.snapshot()?.save(&snap_path)?;
    let mut report = CsvReport::default();
    push_run_rows(&mut report, &cfg, &outcome, t0.elapsed().as_secs_f64());
    report.write(&dir.join("report.csv"))?;
    println!(
        "train arch={} K={} k={} seed={} accuracy={:.4} params={} synapse_writes={} wall_s={:.1} out={}",
        cfg.arch,
        join_arch_list(&cfg.kernels),
        join_arch_list(&cfg.kernel_sizes),
        cfg.seed,
        outcome.report.accuracy,
        outcome.report.trainable_params,
        outcome.counter.writes,
        t0.elapsed().as_secs_f64(),
        dir.display()
    );
    Ok(())
}

fn cmd_eval(snapshot: &Path, config: &Path, overrides: &[String]) -> Result<()> {
    let t0 = Instant::now();
    let cfg = RunConfig::from_sources(config, overrides)?;
    cfg.validate()?;
    let (_, test, skipped) = load_datasets(&cfg)?;
    report_skipped(&skipped);
    let snap = NetworkSnapshot::load(snapshot)?;
    let mut net =
        Network::from_snapshot(&snap, cfg.network_spec()?, cfg.lif_conv(), cfg.lif_fc())?;
    let ses = Session::from_config(&cfg)?;
    let layers = net.spec.layers.len();
    let report = evaluate(&mut net, &test, &ses, UpdateCounter::new(layers), Vec::new())?;
    let dir = prepare_out_dir(&cfg)?;
    let mut csv = CsvReport::default();
    csv.push(CsvRow {
        run_id: derive_run_id(&cfg.effective_text()),
        arch: cfg.arch.clone(),
        kernels: join_arch_list(&cfg.kernels),
        kernel_sizes: join_arch_list(&cfg.kernel_sizes),
        seed: cfg.seed,
        epoch: "final".to_string(),
        accuracy: report.accuracy,
        trainable_params: report.trainable_params,
        synapse_writes: report.update_counts.writes,
        wall_time_s: t0.elapsed().as_secs_f64(),
    });
    csv.write(&dir.join("eval_report.csv"))?;
    println!(
        "eval snapshot={} accuracy={:.4} params={} synapse_writes={} samples={}",
        snapshot.display(),
        report.accuracy,
        report.trainable_params,
        report.update_counts.writes,
        test.len()
    );
    Ok(())
}

fn cmd_sweep(config: &Path, kernels: &str, overrides: &[String]) -> Result<()> {
    let counts: Vec<usize> = kernels
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CsnnError::config(format!("bad kernel count '{s}' in --kernels")))
        })
        .collect::<Result<_>>()?;
    let cfg = RunConfig::from_sources(config, overrides)?;
    cfg.validate()?;
    let (train, test, skipped) = load_datasets(&cfg)?;
    report_skipped(&skipped);
    let dir = prepare_out_dir(&cfg)?;
    let t0 = Instant::now();
    let runs = sweep_kernels(&cfg, &counts, &train, &test)?;
    let mut report = CsvReport::default();
    for (k_count, outcome) in &runs {
        let mut sub = cfg.clone();
        sub.kernels = vec![*k_count];
        let snap_path = dir.join(format!("weights_K{k_count}.csnn"));
        outcome.network.snapshot()?.save(&snap_path)?;
        push_run_rows(&mut report, &sub, outcome, t0.elapsed().as_secs_f64());
        eprintln!(
            "sweep K={k_count}: accuracy={:.4} params={} synapse_writes={}",
            outcome.report.accuracy, outcome.report.trainable_params, outcome.counter.writes
        );
    }
    report.write(&dir.join("report.csv"))?;
    let summary: Vec<String> = runs
        .iter()
        .map(|(k, o)| format!("K={k}:{:.4}", o.report.accuracy))
        .collect();
    println!(
        "sweep arch={} seed={} {} out={}",
        cfg.arch,
        cfg.seed,
        summary.join(" "),
        dir.display()
    );
    Ok(())
}

fn cmd_param_search(
    target: u64,
    arch: &str,
    input: &str,
    classes: usize,
    top: usize,
) -> Result<()> {
    if target == 0 {
        return Err(CsnnError::config("--target must be positive"));
    }
    let (h, w) = input
        .split_once('x')
        .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
        .ok_or_else(|| CsnnError::config(format!("--input '{input}' is not of the form HxW")))?;
    let mut rows: Vec<(usize, usize, u64, u64)> = Vec::new();
    for kernel_count in 1..=128usize {
        for kernel_size in (3..=11usize).step_by(2) {
            // Combinations whose feature maps collapse below 1x1 are skipped.
            let Ok(spec) =
                NetworkSpec::preset(arch, h, w, &[kernel_count], &[kernel_size], 10.0, classes)
            else {
                continue;
            };
            if spec.dims_chain().is_err() {
                continue;
            }
            let params = count_trainable_params(&spec)? as u64;
            rows.push((kernel_count, kernel_size, params, params.abs_diff(target)));
        }
    }
    if rows.is_empty() {
        return Err(CsnnError::config(format!(
            "no feasible (K, k) combination for {arch} on {h}x{w}"
        )));
    }
    rows.sort_by_key(|&(k_count, k_size, _, dist)| (dist, k_count, k_size));
    let shown = if top == 0 { rows.len() } else { top.min(rows.len()) };
    println!("param-search arch={arch} input={h}x{w} classes={classes} target={target}");
    println!("{:>4}  {:>3}  {:>12}  {:>10}", "K", "k", "params", "distance");
    for &(k_count, k_size, params, dist) in rows.iter().take(shown) {
        println!("{k_count:>4}  {k_size:>3}  {params:>12}  {dist:>10}");
    }
    Ok(())
}
