//! Monte Carlo BER harness: sweep plans, per-point runs, resumable CSV
//! output, the flow checkpoint registry and desk-scale presets.

mod plot;
mod presets;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{bit_errors, gen_frame, MimoScenario};
use crate::detect::{Detector, DetectorConfig, ScoreScratch};
use crate::error::{Error, Result};
use crate::flow::{load_checkpoint, train, Checkpoint, FlowConfig, FlowEvaluator, TrainOptions, TrainingMetadata};
use crate::noise::{sample_noise_in, NoiseFamily, NoiseSpec};
use crate::rng::Domain;

pub use plot::{emit_plot, PlotOptions};
pub use presets::{preset, PRESET_NAMES};

/// Bits carried by one QPSK frame with `n_tx` antennas.
pub fn bits_per_frame(n_tx: usize) -> u64 {
    2 * n_tx as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Snr,
    Alpha,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Snr => "snr",
            SweepAxis::Alpha => "alpha",
        }
    }
}

/// A BER sweep over SNR or over the SαS characteristic exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPlan {
    pub name: String,
    pub n_tx: usize,
    pub n_rx: usize,
    /// Noise shape; its scale is set from the SNR at each point, and for an
    /// alpha sweep its exponent from the axis value.
    pub noise: NoiseSpec,
    pub axis: SweepAxis,
    pub axis_values: Vec<f64>,
    /// SNR of every point of an alpha sweep.
    pub snr_db: f64,
    pub detectors: Vec<DetectorConfig>,
    pub frames: usize,
    pub seed: u64,
}

/// One grid point of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub scenario: MimoScenario,
}

/// Seed of the frames at point `index` of a plan with base seed `base`.
pub fn point_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

impl BenchPlan {
    /// Minimum frames per point for a sweep.
    pub const MIN_FRAMES: usize = 1000;

    pub fn validate(&self) -> Result<()> {
        if self.detectors.is_empty() {
            return Err(Error::config("plan has no detectors"));
        }
        if self.axis_values.is_empty() {
            return Err(Error::config("plan has no sweep values"));
        }
        if self.frames < Self::MIN_FRAMES {
            return Err(Error::config(format!(
                "plan needs at least {} frames per point, got {}",
                Self::MIN_FRAMES,
                self.frames
            )));
        }
        if self.axis == SweepAxis::Alpha && !matches!(self.noise, NoiseSpec::Sas { .. }) {
            return Err(Error::config("an alpha sweep needs SαS noise"));
        }
        for p in self.points() {
            p.scenario.validate()?;
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        self.axis_values
            .iter()
            .enumerate()
            .map(|(index, &v)| {
                let (snr_db, noise) = match self.axis {
                    SweepAxis::Snr => (v, self.noise.clone()),
                    SweepAxis::Alpha => (
                        self.snr_db,
                        match &self.noise {
                            NoiseSpec::Sas { sigma, .. } => NoiseSpec::Sas { alpha: v, sigma: *sigma },
                            other => other.clone(),
                        },
                    ),
                };
                SweepPoint {
                    index,
                    scenario: MimoScenario {
                        n_tx: self.n_tx,
                        n_rx: self.n_rx,
                        snr_db,
                        noise,
                        seed: point_seed(self.seed, index),
                    },
                }
            })
            .collect()
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerRecord {
    pub detector: String,
    pub family: String,
    /// Empty for families without an exponent.
    pub alpha: Option<f64>,
    /// Nominal per-real-dimension noise scale at this SNR.
    pub sigma: f64,
    pub snr_db: f64,
    pub n_tx: usize,
    pub n_rx: usize,
    pub frames: u64,
    pub bit_errors: u64,
    /// `bit_errors / (frames · 2·n_tx)`; NaN marks a point that failed.
    pub ber: f64,
    pub divergence_count: u64,
    pub seed: u64,
    /// 0 unless timing was requested.
    pub wall_time_s: f64,
}

impl BerRecord {
    pub fn failed(&self) -> bool {
        !self.ber.is_finite()
    }

    /// Same detector, scenario and frame budget (ignores the outcome).
    fn same_job(&self, other: &BerRecord) -> bool {
        self.detector == other.detector
            && self.family == other.family
            && self.alpha.map(f64::to_bits) == other.alpha.map(f64::to_bits)
            && self.snr_db.to_bits() == other.snr_db.to_bits()
            && self.n_tx == other.n_tx
            && self.n_rx == other.n_rx
            && self.frames == other.frames
            && self.seed == other.seed
    }
}

pub const CSV_HEADER: &str =
    "detector,family,alpha,sigma,snr_db,n_tx,n_rx,frames,bit_errors,ber,divergence_count,seed,wall_time_s";

pub fn write_csv(records: &[BerRecord], path: &Path) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        if records.is_empty() {
            w.write_record(CSV_HEADER.split(','))?;
        }
        for r in records {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<BerRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Format {
            offset: 0,
            message: format!("unexpected CSV header {header:?}"),
        });
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Key a trained flow is filed under. The noise scale follows from the SNR
/// and `n_tx`, so it is not stored separately.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowKey {
    pub family: NoiseFamily,
    pub alpha: Option<f64>,
    pub snr_db: f64,
    pub n_tx: usize,
    pub n_rx: usize,
}

impl FlowKey {
    pub fn for_scenario(s: &MimoScenario) -> Self {
        Self {
            family: s.noise.family(),
            alpha: s.noise.alpha(),
            snr_db: s.snr_db,
            n_tx: s.n_tx,
            n_rx: s.n_rx,
        }
    }

    pub fn file_name(&self) -> String {
        let alpha = self.alpha.map(|a| format!("_a{a}")).unwrap_or_default();
        format!(
            "{}{alpha}_snr{}_{}x{}.flow",
            self.family.as_str(),
            self.snr_db,
            self.n_tx,
            self.n_rx
        )
    }
}

impl std::fmt::Display for FlowKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "family={}", self.family.as_str())?;
        if let Some(a) = self.alpha {
            write!(f, " alpha={a}")?;
        }
        write!(f, " snr={} dB {}x{}", self.snr_db, self.n_tx, self.n_rx)
    }
}

/// Directory of checkpoints named by [`FlowKey::file_name`].
#[derive(Debug, Clone)]
pub struct FlowRegistry {
    pub dir: PathBuf,
    cache: HashMap<String, Arc<FlowEvaluator>>,
}

impl FlowRegistry {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            cache: HashMap::new(),
        }
    }

    pub fn path(&self, key: &FlowKey) -> PathBuf {
        self.dir.join(key.file_name())
    }

    pub fn contains(&self, key: &FlowKey) -> bool {
        self.path(key).is_file()
    }

    pub fn resolve(&self, key: &FlowKey) -> Result<PathBuf> {
        let path = self.path(key);
        if path.is_file() {
            Ok(path)
        } else {
            Err(Error::config(format!(
                "no trained flow for {key} (expected {})",
                path.display()
            )))
        }
    }

    pub fn load(&mut self, key: &FlowKey) -> Result<Arc<FlowEvaluator>> {
        let name = key.file_name();
        if let Some(ev) = self.cache.get(&name) {
            return Ok(ev.clone());
        }
        let ckpt = load_checkpoint(&self.resolve(key)?)?;
        if ckpt.params.config.dim != key.n_rx {
            return Err(Error::config(format!(
                "checkpoint for {key} models {} receive antennas",
                ckpt.params.config.dim
            )));
        }
        let ev = Arc::new(FlowEvaluator::new(ckpt.params)?);
        self.cache.insert(name, ev.clone());
        Ok(ev)
    }
}

/// Sample budget and optimiser settings for per-scenario flow training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowTraining {
    pub flow: FlowConfig,
    pub train_samples: usize,
    pub holdout_samples: usize,
    pub options: TrainOptions,
}

impl FlowTraining {
    pub fn desk(n_rx: usize) -> Self {
        Self {
            flow: FlowConfig::new(n_rx),
            train_samples: 100_000,
            holdout_samples: 20_000,
            options: TrainOptions::default(),
        }
    }
}

/// Trains a flow on noise drawn exactly as the scenario draws it, but from
/// an independent random stream.
pub fn train_flow_for(scenario: &MimoScenario, training: &FlowTraining) -> Result<Checkpoint> {
    scenario.validate()?;
    let spec = scenario
        .noise_at_snr()
        .ok_or_else(|| Error::config("cannot train a noise model for a noiseless scenario"))?;
    if training.flow.dim != scenario.n_rx {
        return Err(Error::config("flow dimension must equal n_rx"));
    }
    let total = training.train_samples + training.holdout_samples;
    let data = sample_noise_in(&spec, total, scenario.n_rx, training.options.seed, Domain::TrainingData)?;
    let opts = TrainOptions {
        holdout_fraction: training.holdout_samples as f64 / total as f64,
        ..training.options
    };
    let (params, log) = train(training.flow, &data, &opts)?;
    Ok(Checkpoint {
        params,
        metadata: TrainingMetadata {
            noise: Some(spec),
            snr_db: Some(scenario.snr_db),
            n_tx: Some(scenario.n_tx),
            train_samples: log.train_samples,
            holdout_samples: log.holdout_samples,
            epochs: opts.epochs,
            final_holdout_nll: Some(log.final_holdout_nll()),
            seed: opts.seed,
        },
    })
}

/// Builds the detector for one point, loading its flow when needed.
pub fn detector_for(config: DetectorConfig, scenario: &MimoScenario, registry: Option<&mut FlowRegistry>) -> Result<Detector> {
    let flow = if config.kind.needs_flow() {
        let reg = registry.ok_or_else(|| Error::config(format!("{} needs a checkpoint registry", config.label())))?;
        Some(reg.load(&FlowKey::for_scenario(scenario))?)
    } else {
        None
    };
    Detector::for_scenario(config, scenario, flow)
}

/// Runs `frames` frames of `scenario` through `detector`. Frame `i` always
/// comes from stream `i`, so the counts do not depend on threading.
pub fn run_point(scenario: &MimoScenario, detector: &Detector, frames: usize, record_timing: bool) -> Result<BerRecord> {
    scenario.validate()?;
    let start = Instant::now();
    let noise_var = scenario.sigma().powi(2);
    let (errors, divergences) = (0..frames as u64)
        .into_par_iter()
        .map_init(ScoreScratch::default, |scratch, i| {
            let frame = gen_frame(scenario, i);
            let res = detector.detect(&frame, noise_var, scratch)?;
            Ok::<_, Error>((bit_errors(&res.x_hat, &frame.x_indices), res.diverged as u64))
        })
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    Ok(record(
        scenario,
        &detector.label(),
        frames,
        errors,
        divergences,
        if record_timing { start.elapsed().as_secs_f64() } else { 0.0 },
    ))
}

fn record(s: &MimoScenario, label: &str, frames: usize, bit_errors: u64, divergence_count: u64, wall: f64) -> BerRecord {
    let bits = frames as u64 * bits_per_frame(s.n_tx);
    BerRecord {
        detector: label.to_owned(),
        family: s.noise.family().as_str().to_owned(),
        alpha: s.noise.alpha(),
        sigma: s.sigma(),
        snr_db: s.snr_db,
        n_tx: s.n_tx,
        n_rx: s.n_rx,
        frames: frames as u64,
        bit_errors,
        ber: bit_errors as f64 / bits as f64,
        divergence_count,
        seed: s.seed,
        wall_time_s: wall,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepOptions {
    pub record_timing: bool,
}

/// Runs every (point, detector) pair in canonical order (points outer,
/// detectors inner). Rows already present in `csv_path` with a finite BER
/// are reused; the CSV is rewritten after every point, so an interrupted
/// sweep resumes where it stopped. A failing pair is written with BER NaN
/// and retried on the next run.
pub fn run_sweep(
    plan: &BenchPlan,
    registry: Option<&mut FlowRegistry>,
    csv_path: Option<&Path>,
    opts: SweepOptions,
) -> Result<Vec<BerRecord>> {
    plan.validate()?;
    let mut registry = registry;
    let points = plan.points();
    // fail fast on missing checkpoints
    for p in &points {
        for d in plan.detectors.iter().filter(|d| d.kind.needs_flow()) {
            let reg = registry
                .as_deref()
                .ok_or_else(|| Error::config(format!("{} needs a checkpoint registry", d.label())))?;
            reg.resolve(&FlowKey::for_scenario(&p.scenario))?;
        }
    }
    let previous = match csv_path {
        Some(path) if path.is_file() => read_csv(path)?,
        _ => Vec::new(),
    };

    let mut out: Vec<BerRecord> = Vec::with_capacity(points.len() * plan.detectors.len());
    for p in &points {
        for d in &plan.detectors {
            let template = record(&p.scenario, &d.label(), plan.frames, 0, 0, 0.0);
            if let Some(done) = previous.iter().find(|r| !r.failed() && r.same_job(&template)) {
                out.push(done.clone());
                continue;
            }
            let result =
                detector_for(*d, &p.scenario, registry.as_deref_mut()).and_then(|det| {
                    run_point(&p.scenario, &det, plan.frames, opts.record_timing)
                });
            match result {
                Ok(r) => {
                    log::info!("{} point {}: {} ber {:.3e}", plan.name, p.index, r.detector, r.ber);
                    out.push(r);
                }
                Err(e) => {
                    log::warn!("{} point {} {} failed: {e}", plan.name, p.index, d.label());
                    out.push(BerRecord {
                        ber: f64::NAN,
                        ..template
                    });
                }
            }
        }
        if let Some(path) = csv_path {
            let mut all = out.clone();
            // keep rows of later points from an earlier partial run
            all.extend(previous.iter().filter(|r| !out.iter().any(|o| o.same_job(r))).cloned());
            write_csv(&all, path)?;
        }
    }
    if let Some(path) = csv_path {
        write_csv(&out, path)?;
    }
    Ok(out)
}
