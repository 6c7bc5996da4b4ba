use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use flowdet::bench::{
    emit_plot, preset, read_csv, run_sweep, train_flow_for, BenchPlan, FlowKey, FlowRegistry, FlowTraining,
    PlotOptions, SweepAxis, SweepOptions, PRESET_NAMES,
};
use flowdet::channel::{bit_errors, gen_frames, noise_for_sigma, read_frame_file, write_frame_file, MimoScenario};
use flowdet::detect::{Detector, DetectorConfig, ScoreScratch};
use flowdet::flow::{load_checkpoint, save_checkpoint, train, Checkpoint, FlowConfig, FlowEvaluator, TrainOptions, TrainingMetadata};
use flowdet::noise::{sample_noise, sample_noise_in, write_noise_file, NoiseFamily, NoiseSpec};
use flowdet::rng::Domain;

mod config;

#[derive(Parser)]
#[command(name = "flowdet", version, about = "MIMO detection with learned noise densities")]
#[command(arg_required_else_help = true, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a noise flow and write a checkpoint.
    Train(TrainArgs),
    /// Run a BER sweep and write a CSV.
    Bench(BenchArgs),
    /// Detect the frames of a frame file, one JSON line per frame.
    Detect(DetectArgs),
    /// Write noise samples to a binary file.
    NoiseGen(NoiseGenArgs),
    /// Generate a frame file.
    Frames(FramesArgs),
    /// Render a BER CSV as SVG.
    Plot(PlotArgs),
}

#[derive(Args, Clone)]
struct NoiseArgs {
    /// gaussian, sas, mixture or nakagami.
    #[arg(long, visible_alias = "noise-family", default_value = "gaussian")]
    family: String,
    /// SαS characteristic exponent.
    #[arg(long)]
    alpha: Option<f64>,
    /// Scale: per-real std (gaussian), SαS scale (sas), sqrt(power/2) (mixture).
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Nakagami shape.
    #[arg(long, default_value_t = 2.0)]
    m: f64,
    /// Nakagami spread.
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
}

impl NoiseArgs {
    fn spec(&self) -> Result<NoiseSpec> {
        let family: NoiseFamily = self.family.parse()?;
        let spec = match family {
            NoiseFamily::Gaussian => NoiseSpec::Gaussian { sigma: self.sigma },
            NoiseFamily::Sas => NoiseSpec::Sas {
                alpha: self.alpha.ok_or_else(|| anyhow!("--alpha is required for sas noise"))?,
                sigma: self.sigma,
            },
            NoiseFamily::GaussianMixture => noise_for_sigma(&NoiseSpec::two_component_mixture(), self.sigma),
            NoiseFamily::Nakagami => NoiseSpec::Nakagami {
                m: self.m,
                omega: self.omega,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    noise: NoiseArgs,
    /// Scale the noise for this SNR (dB) instead of using --sigma.
    #[arg(long)]
    snr: Option<f64>,
    /// Transmit antennas, used with --snr (default: --nrx).
    #[arg(long)]
    ntx: Option<usize>,
    #[arg(long, default_value_t = 4)]
    nrx: usize,
    #[arg(long)]
    k_steps: Option<usize>,
    /// Hidden width of the coupling networks.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, default_value_t = 1024)]
    batch: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    train_samples: usize,
    #[arg(long, default_value_t = 20_000)]
    holdout_samples: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["preset", "plan", "list"]))]
struct BenchArgs {
    /// Built-in plan name (see --list).
    #[arg(long)]
    preset: Option<String>,
    /// TOML plan file.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Print the preset names.
    #[arg(long)]
    list: bool,
    /// Directory of trained flows.
    #[arg(long, default_value = "checkpoints")]
    checkpoints: PathBuf,
    /// Train and store flows that are missing from --checkpoints.
    #[arg(long)]
    train_missing: bool,
    /// Epochs for flows trained by --train-missing.
    #[arg(long)]
    train_epochs: Option<usize>,
    /// Frames per point.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV (default: <plan name>.csv). Existing rows are reused.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall time per point (otherwise 0, keeping CSVs reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct DetectArgs {
    /// Frame file to read.
    #[arg(long)]
    frames: PathBuf,
    /// Detector label, e.g. E-MLE, MANFE, ML, G-GAMP(30), G-GAMP(30)-MANFE(2).
    #[arg(long)]
    detector: String,
    /// Flow checkpoint for MANFE detectors.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Noise shape for the oracle; its scale comes from the frame file.
    #[command(flatten)]
    noise: NoiseArgs,
    /// Per-real noise variance for GAMP (default: sigma² of the file).
    #[arg(long)]
    noise_var: Option<f64>,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NoiseGenArgs {
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long)]
    count: usize,
    /// Complex entries per sample.
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FramesArgs {
    /// Noise shape; the scale follows from --snr.
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long, default_value_t = 4)]
    ntx: usize,
    #[arg(long, default_value_t = 4)]
    nrx: usize,
    /// SNR in dB; `inf` gives noiseless frames.
    #[arg(long)]
    snr: f64,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Snr,
    Alpha,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    csv: PathBuf,
    /// Sweep axis (default: alpha if the SNR is constant across rows).
    #[arg(long, value_enum)]
    axis: Option<AxisArg>,
    #[arg(long)]
    title: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Bench plan file.
///
/// ```toml
/// name = "my-sweep"
/// ntx = 4
/// nrx = 4
/// noise = { family = "sas", alpha = 1.9, sigma = 1.0 }
/// axis = "snr"
/// values = [10, 15, 20]
/// detectors = ["E-MLE", "MANFE", "G-GAMP(30)-MANFE(1)"]
/// frames = 10000
/// seed = 1
/// ```
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    name: String,
    ntx: usize,
    nrx: usize,
    noise: NoiseSpec,
    axis: SweepAxis,
    values: Vec<f64>,
    /// SNR of an alpha sweep.
    #[serde(default)]
    snr: f64,
    detectors: Vec<String>,
    frames: usize,
    #[serde(default)]
    seed: u64,
}

impl PlanFile {
    fn into_plan(self) -> Result<BenchPlan> {
        let detectors = self
            .detectors
            .iter()
            .map(|d| DetectorConfig::parse(d))
            .collect::<flowdet::Result<Vec<_>>>()?;
        Ok(BenchPlan {
            name: self.name,
            n_tx: self.ntx,
            n_rx: self.nrx,
            noise: self.noise,
            axis: self.axis,
            axis_values: self.values,
            snr_db: self.snr,
            detectors,
            frames: self.frames,
            seed: self.seed,
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut flow = FlowConfig::new(a.nrx);
    if let Some(k) = a.k_steps {
        flow.k_steps = k;
    }
    if let Some(h) = a.hidden {
        flow.hidden_width = h;
    }
    let options = TrainOptions {
        batch_size: a.batch,
        epochs: a.epochs,
        learning_rate: a.lr,
        seed: a.seed,
        ..TrainOptions::default()
    };
    let ckpt = match a.snr {
        Some(snr_db) => {
            let scenario = MimoScenario {
                n_tx: a.ntx.unwrap_or(a.nrx),
                n_rx: a.nrx,
                snr_db,
                noise: a.noise.spec()?,
                seed: a.seed,
            };
            let training = FlowTraining {
                flow,
                train_samples: a.train_samples,
                holdout_samples: a.holdout_samples,
                options,
            };
            train_flow_for(&scenario, &training)?
        }
        None => {
            let spec = a.noise.spec()?;
            let total = a.train_samples + a.holdout_samples;
            let data = sample_noise_in(&spec, total, a.nrx, a.seed, Domain::TrainingData)?;
            let opts = TrainOptions {
                holdout_fraction: a.holdout_samples as f64 / total as f64,
                ..options
            };
            let (params, log) = train(flow, &data, &opts)?;
            Checkpoint {
                params,
                metadata: TrainingMetadata {
                    noise: Some(spec),
                    snr_db: None,
                    n_tx: a.ntx,
                    train_samples: log.train_samples,
                    holdout_samples: log.holdout_samples,
                    epochs: opts.epochs,
                    final_holdout_nll: Some(log.final_holdout_nll()),
                    seed: opts.seed,
                },
            }
        }
    };
    save_checkpoint(&ckpt, &a.out)?;
    println!(
        "wrote {} ({} parameters, held-out NLL {:.4})",
        a.out.display(),
        ckpt.params.parameter_count(),
        ckpt.metadata.final_holdout_nll.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    if a.list {
        for name in PRESET_NAMES {
            println!("{name}");
        }
        return Ok(());
    }
    let mut plan = match (&a.preset, &a.plan) {
        (Some(name), None) => preset(name)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let file: PlanFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            file.into_plan()?
        }
        _ => bail!("give exactly one of --preset and --plan"),
    };
    if let Some(f) = a.frames {
        plan.frames = f;
    }
    if let Some(s) = a.seed {
        plan.seed = s;
    }
    plan.validate()?;
    let mut registry = FlowRegistry::new(&a.checkpoints);
    if a.train_missing && plan.detectors.iter().any(|d| d.kind.needs_flow()) {
        let mut training = FlowTraining::desk(plan.n_rx);
        if let Some(e) = a.train_epochs {
            training.options.epochs = e;
        }
        for p in plan.points() {
            let key = FlowKey::for_scenario(&p.scenario);
            if registry.contains(&key) {
                continue;
            }
            log::info!("training flow for {key}");
            let ckpt = train_flow_for(&p.scenario, &training)?;
            let path = registry.path(&key);
            fs::create_dir_all(&registry.dir)?;
            save_checkpoint(&ckpt, &path)?;
        }
    }
    let out = a.out.unwrap_or_else(|| PathBuf::from(format!("{}.csv", plan.name)));
    let records = run_sweep(
        &plan,
        Some(&mut registry),
        Some(&out),
        SweepOptions {
            record_timing: a.timing,
        },
    )?;
    for r in &records {
        let x = match plan.axis {
            SweepAxis::Snr => format!("snr={}", r.snr_db),
            SweepAxis::Alpha => format!("alpha={}", r.alpha.unwrap_or(f64::NAN)),
        };
        println!("{x:<12} {:<22} ber={:.4e} errors={}", r.detector, r.ber, r.bit_errors);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_detect(a: DetectArgs) -> Result<()> {
    let (frames, sigma) = read_frame_file(File::open(&a.frames).with_context(|| format!("opening {}", a.frames.display()))?)?;
    let config = DetectorConfig::parse(&a.detector)?;
    let flow = match (&a.checkpoint, config.kind.needs_flow()) {
        (Some(path), _) => Some(Arc::new(FlowEvaluator::new(load_checkpoint(path)?.params)?)),
        (None, true) => bail!("{} needs --checkpoint", config.label()),
        (None, false) => None,
    };
    let n_tx = frames.first().map(|f| f.n_tx()).ok_or_else(|| anyhow!("frame file is empty"))?;
    let n_rx = frames[0].n_rx();
    let shape = a.noise.spec()?;
    let detector = if sigma > 0.0 {
        Detector::new(config, n_tx, flow, Some(noise_for_sigma(&shape, sigma)))?
    } else {
        let noiseless = MimoScenario {
            n_tx,
            n_rx,
            snr_db: f64::INFINITY,
            noise: shape,
            seed: 0,
        };
        Detector::for_scenario(config, &noiseless, flow)?
    };
    let noise_var = a.noise_var.unwrap_or(sigma * sigma);
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut scratch = ScoreScratch::default();
    for (i, frame) in frames.iter().enumerate() {
        let r = detector.detect(frame, noise_var, &mut scratch)?;
        let line = serde_json::json!({
            "frame": i,
            "detector": detector.label(),
            "x_hat": r.x_hat,
            "score": r.score,
            "evaluations": r.evaluations,
            "iterations_used": r.iterations_used,
            "diverged": r.diverged,
            "bit_errors": bit_errors(&r.x_hat, &frame.x_indices),
        });
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_noise_gen(a: NoiseGenArgs) -> Result<()> {
    let spec = a.noise.spec()?;
    let batch = sample_noise(&spec, a.count, a.dim, a.seed)?;
    let mut w = create(&a.out)?;
    write_noise_file(&batch, &mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_frames(a: FramesArgs) -> Result<()> {
    let scenario = MimoScenario {
        n_tx: a.ntx,
        n_rx: a.nrx,
        snr_db: a.snr,
        noise: a.noise.spec()?,
        seed: a.seed,
    };
    let frames = gen_frames(&scenario, a.count)?;
    let mut w = create(&a.out)?;
    write_frame_file(&frames, scenario.sigma(), &mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Result<()> {
    let records = read_csv(&a.csv)?;
    let axis = match a.axis {
        Some(AxisArg::Snr) => SweepAxis::Snr,
        Some(AxisArg::Alpha) => SweepAxis::Alpha,
        None => {
            let first = records.first().map(|r| r.snr_db);
            if records.len() > 1 && records.iter().all(|r| Some(r.snr_db) == first) {
                SweepAxis::Alpha
            } else {
                SweepAxis::Snr
            }
        }
    };
    let svg = emit_plot(
        &records,
        axis,
        &PlotOptions {
            title: a.title,
            ..PlotOptions::default()
        },
    )?;
    let mut w = create(&a.out)?;
    w.write_all(svg.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::try_parse_from(argv).unwrap_or_else(|e| e.exit());
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Detect(a) => cmd_detect(a),
        Command::NoiseGen(a) => cmd_noise_gen(a),
        Command::Frames(a) => cmd_frames(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
