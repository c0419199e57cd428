use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use linformer::channel_sim::{
    add_awgn, generate_sequence, ls_estimate, mmse_estimate, sample_covariance, sample_path_set,
    ChannelSequence, CovSource,
};
use linformer::config::{sub_seed, RunConfig};
use linformer::error::{LabError, Result};
use linformer::eval::{
    bench_inference, linear_extrap_baseline, model_predictions, mrt_capacity, per_frame_mse,
    persistence_baseline, verify_complexity, MetricsReport,
};
use linformer::format::{
    atomic_write, import_csv, read_checkpoint, read_lcp1, write_checkpoint, write_lcp1,
    write_matrix_csv, write_sidecar, DatasetFile,
};
use linformer::model::{count_mults, head_param_count, permute_weights, MixerKind, ModelParams};
use linformer::plot::line_chart;
use linformer::training::{
    build_windows, evaluate_loss, fine_tune, input_statistics, train, AugmentContext, LossKind,
    WindowDataset,
};

#[derive(Parser)]
#[command(name = "linformer", about = "Channel prediction lab: simulate, train, evaluate")]
struct Cli {
    /// Sectioned key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides config file and defaults.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    /// Override a single config key, e.g. --set train.epochs=5 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a channel trajectory and write train/test splits.
    Generate,
    /// Train a predictor on a generated dataset.
    Train {
        /// Directory holding train.lcp1 and test.lcp1.
        #[arg(long)]
        data: PathBuf,
        /// Resume from a checkpoint at a reduced learning rate.
        #[arg(long)]
        fine_tune: Option<PathBuf>,
    },
    /// Evaluate a checkpoint against naive baselines.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corrupt the observed past at this SNR (dB) and re-estimate it.
        #[arg(long)]
        input_snr_db: Option<f64>,
    },
    /// Time-shuffle ablation: prediction error with permuted input frames.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print parameter and multiplication accounting for the configured model.
    Count,
    /// Measure single-sample inference latency.
    Bench {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        reps: usize,
    },
    /// Export checkpoint weights as CSV files.
    DumpWeights {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Convert a measured-CSI CSV trace into the dataset format.
    Import {
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{}", e);
                std::process::exit(0);
            }
            eprintln!("{}", e);
            std::process::exit(1);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e);
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for pair in &cli.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| LabError::Config(format!("--set expects KEY=VALUE, got '{}'", pair)))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cli.out)?;

    let quiet = cli.quiet;
    let say = |msg: &str| {
        if !quiet {
            println!("{}", msg);
        }
    };

    match cli.cmd {
        Cmd::Generate => generate(&cfg, &cli.out, &say),
        Cmd::Train { data, fine_tune } => cmd_train(&cfg, &data, fine_tune.as_deref(), &cli.out, &say),
        Cmd::Eval { data, checkpoint, input_snr_db } => {
            cmd_eval(&cfg, &data, &checkpoint, input_snr_db, &cli.out, &say)
        }
        Cmd::Ablate { data, checkpoint } => cmd_ablate(&cfg, &data, &checkpoint, &say),
        Cmd::Count => cmd_count(&cfg),
        Cmd::Bench { checkpoint, reps } => cmd_bench(&cfg, checkpoint.as_deref(), reps),
        Cmd::DumpWeights { checkpoint } => cmd_dump(&checkpoint, &cli.out, &say),
        Cmd::Import { input } => cmd_import(&cfg, &input, &cli.out, &say),
    }
}

/// One path-set draw per trajectory; the first 10/11 of the frames form the
/// training split, the remainder the test split.
fn generate(cfg: &RunConfig, out: &Path, say: &dyn Fn(&str)) -> Result<()> {
    let sim = &cfg.sim;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "sim"));
    let paths = sample_path_set(sim, &mut rng)?;
    let seq = generate_sequence(sim, &paths)?;

    let rt = sim.r * sim.t;
    let train_frames = (sim.num_frames * 10) / 11;
    let test_frames = sim.num_frames - train_frames;
    if train_frames == 0 || test_frames == 0 {
        return Err(LabError::Config(format!(
            "{} frames cannot be split into train and test",
            sim.num_frames
        )));
    }
    let split = |lo: usize, hi: usize| DatasetFile {
        num_samples: 1,
        frames_per_sample: hi - lo,
        r: sim.r,
        t: sim.t,
        data: seq.data[lo * rt..hi * rt].to_vec(),
    };
    write_lcp1(&out.join("train.lcp1"), &split(0, train_frames))?;
    write_lcp1(&out.join("test.lcp1"), &split(train_frames, sim.num_frames))?;
    write_sidecar(
        &out.join("dataset.json"),
        &[
            ("seed", cfg.seed.to_string()),
            ("r", sim.r.to_string()),
            ("t", sim.t.to_string()),
            ("paths", sim.l.to_string()),
            ("ts_s", sim.ts.to_string()),
            ("fc_hz", sim.fc.to_string()),
            ("speed_kmh", sim.speed_kmh.to_string()),
            ("max_doppler_hz", format!("{:.6}", sim.max_doppler())),
            ("train_frames", train_frames.to_string()),
            ("test_frames", test_frames.to_string()),
        ],
    )?;
    say(&format!(
        "wrote {} train / {} test frames ({}x{}, f_d = {:.2} Hz) to {}",
        train_frames,
        test_frames,
        sim.r,
        sim.t,
        sim.max_doppler(),
        out.display()
    ));
    Ok(())
}

fn dataset_to_sequence(ds: &DatasetFile, sample: usize, cfg: &RunConfig) -> ChannelSequence {
    ChannelSequence {
        data: ds.sample(sample).to_vec(),
        frames: ds.frames_per_sample,
        r: ds.r,
        t: ds.t,
        meta: linformer::channel_sim::SimConfig {
            r: ds.r,
            t: ds.t,
            num_frames: ds.frames_per_sample,
            ..cfg.sim.clone()
        },
    }
}

fn load_windows(path: &Path, cfg: &RunConfig) -> Result<(DatasetFile, WindowDataset)> {
    let file = read_lcp1(path)?;
    if file.r != cfg.model.r || file.t != cfg.model.t {
        return Err(LabError::Shape(format!(
            "{}: dataset is {}x{}, model expects {}x{}",
            path.display(),
            file.r,
            file.t,
            cfg.model.r,
            cfg.model.t
        )));
    }
    let mut samples = Vec::new();
    for s in 0..file.num_samples {
        samples.extend(build_windows(
            file.sample(s),
            file.frames_per_sample,
            file.r,
            file.t,
            cfg.model.n_past,
            cfg.model.n_future,
        )?);
    }
    let ds = WindowDataset {
        n_past: cfg.model.n_past,
        n_future: cfg.model.n_future,
        r: file.r,
        t: file.t,
        samples,
    };
    Ok((file, ds))
}

fn covariance_for(cfg: &RunConfig, train_file: &DatasetFile) -> Result<nalgebra::DMatrix<Complex64>> {
    let dim = train_file.r * train_file.t;
    match cfg.estimation.cov_source {
        CovSource::Identity => Ok(nalgebra::DMatrix::identity(dim, dim)),
        CovSource::Sample => {
            let seqs: Vec<ChannelSequence> = (0..train_file.num_samples)
                .map(|s| dataset_to_sequence(train_file, s, cfg))
                .collect();
            sample_covariance(&seqs)
        }
    }
}

fn cmd_train(
    cfg: &RunConfig,
    data: &Path,
    resume: Option<&Path>,
    out: &Path,
    say: &dyn Fn(&str),
) -> Result<()> {
    let (train_file, train_ds) = load_windows(&data.join("train.lcp1"), cfg)?;
    let (_, test_ds) = load_windows(&data.join("test.lcp1"), cfg)?;
    say(&format!("{} train / {} test windows", train_ds.samples.len(), test_ds.samples.len()));

    let aug_ctx = match cfg.train.aug_snr_range_db {
        Some(_) => Some(AugmentContext { cov: covariance_for(cfg, &train_file)? }),
        None => None,
    };

    let mut tc = cfg.train.clone();
    tc.seed = sub_seed(cfg.seed, "train");
    let outcome = match resume {
        Some(ckpt) => {
            let params = read_checkpoint(ckpt)?;
            say(&format!("fine-tuning from {} at max_lr/10", ckpt.display()));
            fine_tune(params, &train_ds, &test_ds, &tc, aug_ctx.as_ref())?
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "init"));
            let mut params = ModelParams::init(&cfg.model, &mut rng)?;
            let (mean, std) = input_statistics(&train_ds);
            params.input_mean = mean;
            params.input_std = std;
            train(params, &train_ds, &test_ds, &tc, aug_ctx.as_ref())?
        }
    };

    for h in &outcome.history {
        say(&format!(
            "epoch {:>3}  train {:.6e}  test {:.6e}  lr {:.3e}",
            h.epoch, h.train_loss, h.test_loss, h.lr
        ));
    }
    say(&format!("best test loss {:.6e}", outcome.best_test_loss));

    write_checkpoint(&out.join("model.lckp"), &outcome.params)?;
    if !outcome.history.is_empty() {
        let svg = line_chart(
            "training loss",
            cfg.train.loss.as_str(),
            &[
                ("train".into(), outcome.history.iter().map(|h| h.train_loss).collect()),
                ("test".into(), outcome.history.iter().map(|h| h.test_loss).collect()),
            ],
        )?;
        atomic_write(&out.join("loss_curve.svg"), |w| {
            w.write_all(svg.as_bytes())?;
            Ok(())
        })?;
        atomic_write(&out.join("history.csv"), |w| {
            writeln!(w, "epoch,train_loss,test_loss,lr")?;
            for h in &outcome.history {
                writeln!(w, "{},{},{},{}", h.epoch, h.train_loss, h.test_loss, h.lr)?;
            }
            Ok(())
        })?;
    }
    say(&format!("checkpoint written to {}", out.join("model.lckp").display()));
    Ok(())
}

/// Corrupt the past of every window at a fixed SNR and re-estimate it
/// (LS then MMSE), mirroring the receiver's view at evaluation time.
fn corrupt_inputs(
    ds: &WindowDataset,
    snr_db: f64,
    cov: &nalgebra::DMatrix<Complex64>,
    cfg: &RunConfig,
    seed: u64,
) -> Result<WindowDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ds.clone();
    for s in &mut out.samples {
        let seq = ChannelSequence {
            data: s.past.clone(),
            frames: ds.n_past,
            r: ds.r,
            t: ds.t,
            meta: linformer::channel_sim::SimConfig {
                r: ds.r,
                t: ds.t,
                num_frames: ds.n_past,
                ..cfg.sim.clone()
            },
        };
        let noisy = add_awgn(&seq, snr_db, &mut rng)?;
        let est = mmse_estimate(&ls_estimate(&noisy), snr_db, cov)?;
        s.past = est.data;
    }
    Ok(out)
}

fn cmd_eval(
    cfg: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    input_snr_db: Option<f64>,
    out: &Path,
    say: &dyn Fn(&str),
) -> Result<()> {
    let params = read_checkpoint(checkpoint)?;
    let eval_cfg = RunConfig { model: params.cfg.clone(), ..cfg.clone() };
    let (train_file, _) = load_windows(&data.join("train.lcp1"), &eval_cfg)?;
    let (_, clean_ds) = load_windows(&data.join("test.lcp1"), &eval_cfg)?;

    let input_ds = match input_snr_db {
        Some(snr) => {
            let cov = covariance_for(&eval_cfg, &train_file)?;
            say(&format!("corrupting inputs at {} dB, MMSE re-estimated", snr));
            corrupt_inputs(&clean_ds, snr, &cov, &eval_cfg, sub_seed(cfg.seed, "eval-noise"))?
        }
        None => clean_ds.clone(),
    };

    let model_preds = model_predictions(&params, &input_ds)?;
    // Baselines see the same (possibly corrupted) past; targets stay clean.
    let mut scored = input_ds.clone();
    scored.samples = input_ds
        .samples
        .iter()
        .zip(&clean_ds.samples)
        .map(|(noisy, clean)| linformer::training::Sample {
            past: noisy.past.clone(),
            future: clean.future.clone(),
        })
        .collect();

    let mut rows = vec![("model".to_string(), per_frame_mse(&model_preds, &scored)?)];
    rows.push(("persistence".into(), per_frame_mse(&persistence_baseline(&scored), &scored)?));
    rows.push((
        "linear_extrapolation".into(),
        per_frame_mse(&linear_extrap_baseline(&scored)?, &scored)?,
    ));
    let report = MetricsReport { rows, n_future: scored.n_future };

    for (label, vals) in &report.rows {
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        say(&format!("{:<22} mean MSE {:.6e}", label, mean));
    }

    let cap = mrt_capacity(&model_preds, &scored, cfg.estimation.snr_db)?;
    let perfect: Vec<Vec<Complex64>> = scored.samples.iter().map(|s| s.future.clone()).collect();
    let cap_perfect = mrt_capacity(&perfect, &scored, cfg.estimation.snr_db)?;
    say(&format!(
        "MRT capacity at {} dB: {:.4} bits/s/Hz (perfect CSI {:.4}, {} skipped)",
        cfg.estimation.snr_db, cap.mean, cap_perfect.mean, cap.skipped
    ));

    atomic_write(&out.join("report.csv"), |w| {
        w.write_all(report.to_csv().as_bytes())?;
        writeln!(w)?;
        writeln!(w, "capacity_bits_per_hz,{:.6}", cap.mean)?;
        writeln!(w, "capacity_perfect_csi,{:.6}", cap_perfect.mean)?;
        Ok(())
    })?;
    let svg = line_chart("MSE per predicted frame", "mse", &report.rows)?;
    atomic_write(&out.join("mse_per_frame.svg"), |w| {
        w.write_all(svg.as_bytes())?;
        Ok(())
    })?;
    say(&format!("report written to {}", out.join("report.csv").display()));
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, data: &Path, checkpoint: &Path, say: &dyn Fn(&str)) -> Result<()> {
    let params = read_checkpoint(checkpoint)?;
    let eval_cfg = RunConfig { model: params.cfg.clone(), ..cfg.clone() };
    let (_, test_ds) = load_windows(&data.join("test.lcp1"), &eval_cfg)?;

    let loss = LossKind::Mse;
    let base = evaluate_loss(&params, &test_ds, loss)?;

    // one shared permutation of the past frames across every sample
    let (shuffled, perm) = linformer::training::shuffle_ablation(
        &test_ds,
        sub_seed(cfg.seed, "shuffle"),
    );
    let shuffled_loss = evaluate_loss(&params, &shuffled, loss)?;

    say(&format!("clean input MSE      {:.6e}", base));
    say(&format!("shuffled input MSE   {:.6e}", shuffled_loss));

    if params.cfg.mixer == MixerKind::Tmlp {
        // Row-permuting the time-mixing weights restores the original
        // prediction exactly: the mixer has no notion of frame order.
        let permuted = permute_weights(&params, &perm)?;
        let restored = evaluate_loss(&permuted, &shuffled, loss)?;
        say(&format!("shuffled + permuted-weight MSE {:.6e}", restored));
        say(&format!("restoration gap {:.3e}", (restored - base).abs()));
    }
    Ok(())
}

fn cmd_count(cfg: &RunConfig) -> Result<()> {
    let counts = count_mults(&cfg.model);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = ModelParams::init(&cfg.model, &mut rng)?;
    println!("model: {} mixer, {} layers, d_model {}", cfg.model.mixer.as_str(), cfg.model.n_layers, cfg.model.d_model);
    println!("parameters (total):      {}", params.count_params());
    println!("parameters (head):       {}", head_param_count(&cfg.model));
    println!("mults per prediction:    {}", counts.total);
    println!("  mixer per layer:       {}", counts.mixer_per_layer);
    println!("  ffn per layer:         {}", counts.ffn_per_layer);
    println!("  encoder total:         {}", counts.encoder);
    println!("  head:                  {}", counts.head);
    println!("  embedding (excluded):  {}", counts.embedding);
    let report = verify_complexity(&params)?;
    println!(
        "instrumented forward:    {} core + {} embedding ({})",
        report.instrumented_core,
        report.instrumented_embedding,
        if report.matches { "matches closed form" } else { "MISMATCH" }
    );
    if !report.matches {
        return Err(LabError::Numeric("instrumented multiplication count diverges".into()));
    }
    Ok(())
}

fn cmd_bench(cfg: &RunConfig, checkpoint: Option<&Path>, reps: usize) -> Result<()> {
    let params = match checkpoint {
        Some(p) => read_checkpoint(p)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "init"));
            ModelParams::init(&cfg.model, &mut rng)?
        }
    };
    let rep = bench_inference(&params, reps)?;
    println!("reps:             {}", rep.reps);
    println!("median latency:   {:.3} ms", rep.median_ms);
    println!("p95 latency:      {:.3} ms", rep.p95_ms);
    println!("mults/forward:    {}", rep.mults_per_forward);
    println!("mults/ms:         {:.0}", rep.mults_per_ms);
    Ok(())
}

fn cmd_dump(checkpoint: &Path, out: &Path, say: &dyn Fn(&str)) -> Result<()> {
    let params = read_checkpoint(checkpoint)?;
    let mut entries = params.named_trainable();
    entries.push(("input_mean".into(), params.input_mean.clone()));
    entries.push(("input_std".into(), params.input_std.clone()));
    for (name, m) in &entries {
        let fname = format!("{}.csv", name.replace('.', "_"));
        write_matrix_csv(&out.join(&fname), m)?;
    }
    say(&format!("{} weight files written to {}", entries.len(), out.display()));
    Ok(())
}

fn cmd_import(cfg: &RunConfig, input: &Path, out: &Path, say: &dyn Fn(&str)) -> Result<()> {
    let ds = import_csv(input, cfg.sim.r, cfg.sim.t)?;
    let dest = out.join("imported.lcp1");
    write_lcp1(&dest, &ds)?;
    write_sidecar(
        &out.join("imported.json"),
        &[
            ("source", format!("\"{}\"", input.display())),
            ("frames", ds.frames_per_sample.to_string()),
            ("r", ds.r.to_string()),
            ("t", ds.t.to_string()),
        ],
    )?;
    say(&format!("{} frames imported to {}", ds.frames_per_sample, dest.display()));
    Ok(())
}

// keep clap's derived help text exercised in debug builds
#[allow(dead_code)]
fn assert_cli() {
    Cli::command().debug_assert();
}
