//! Detectors: exhaustive search under Euclidean, flow or exact noise
//! likelihoods, GAMP, and GAMP followed by a neighborhood search.
//!
//! All searches return the highest-scoring candidate; exact score ties go
//! to the candidate that comes first in lexicographic index order, so the
//! result does not depend on the order in which a set is scanned.

pub mod gamp;
mod neighborhood;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{
    all_candidates, qpsk_point, CandidateSet, Frame, MimoScenario, DEFAULT_CANDIDATE_CAP, QPSK_ORDER,
};
use crate::error::{Error, Result};
use crate::flow::{squeeze_into, FlowEvaluator, Scratch};
use crate::noise::{log_pdf_analytic, NoiseSpec};

pub use gamp::{gamp, GampOutput, DAMPING as GAMP_DAMPING, TOLERANCE as GAMP_TOLERANCE};
pub use neighborhood::{neighborhood, neighborhood_size};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub x_hat: Vec<usize>,
    /// Log-likelihood, or `-‖y - Hx̂‖²` for Euclidean scoring.
    pub score: f64,
    /// Candidates scored; 0 for plain GAMP.
    pub evaluations: usize,
    /// GAMP iterations (0 for detectors without GAMP).
    pub iterations_used: usize,
    /// GAMP diverged and fell back to the matched filter.
    pub diverged: bool,
}

/// Candidate scoring rule.
pub enum Scorer<'a> {
    /// `-‖w‖²`.
    Euclidean,
    Flow(&'a FlowEvaluator),
    Analytic(&'a NoiseSpec),
}

/// Per-thread buffers for [`Scorer::score`].
#[derive(Debug, Default, Clone)]
pub struct ScoreScratch {
    flow: Scratch,
    flat: Vec<f64>,
}

impl Scorer<'_> {
    /// Score of residual `w`. A flow evaluation that overflows counts as
    /// `-∞` (the candidate is effectively impossible).
    pub fn score(&self, w: &[Complex64], scratch: &mut ScoreScratch) -> Result<f64> {
        match self {
            Scorer::Euclidean => Ok(-w.iter().map(|z| z.norm_sqr()).sum::<f64>()),
            Scorer::Flow(ev) => {
                squeeze_into(w, &mut scratch.flat);
                match ev.log_prob_flat(&scratch.flat, &mut scratch.flow) {
                    Ok(v) => Ok(v),
                    Err(Error::Numeric { .. }) => Ok(f64::NEG_INFINITY),
                    Err(e) => Err(e),
                }
            }
            Scorer::Analytic(spec) => log_pdf_analytic(spec, w),
        }
    }
}

/// Argmax of `scorer` over `candidates` for `frame`.
pub fn search(frame: &Frame, candidates: &CandidateSet, scorer: &Scorer, scratch: &mut ScoreScratch) -> Result<DetectionResult> {
    let (m, n) = (frame.n_rx(), frame.n_tx());
    if candidates.n_tx != n {
        return Err(Error::config(format!(
            "candidates have {} antennas, frame has {n}",
            candidates.n_tx
        )));
    }
    if let Scorer::Flow(ev) = scorer {
        if ev.config().dim != m {
            return Err(Error::config(format!(
                "flow models {} receive antennas, frame has {m}",
                ev.config().dim
            )));
        }
    }
    if candidates.is_empty() {
        return Err(Error::contract("empty candidate set"));
    }
    // columns of H times each constellation point
    let mut hs = vec![Complex64::new(0.0, 0.0); n * QPSK_ORDER * m];
    for j in 0..n {
        for p in 0..QPSK_ORDER {
            let s = qpsk_point(p);
            for i in 0..m {
                hs[(j * QPSK_ORDER + p) * m + i] = frame.h.get(i, j) * s;
            }
        }
    }
    let mut w = vec![Complex64::new(0.0, 0.0); m];
    let mut best: Option<(usize, f64)> = None;
    for (k, cand) in candidates.iter().enumerate() {
        w.copy_from_slice(&frame.y);
        for (j, &p) in cand.iter().enumerate() {
            let col = &hs[(j * QPSK_ORDER + p) * m..(j * QPSK_ORDER + p + 1) * m];
            for (wi, c) in w.iter_mut().zip(col) {
                *wi -= c;
            }
        }
        let score = scorer.score(&w, scratch)?;
        let better = match best {
            None => true,
            Some((b, bs)) => score > bs || (score == bs && cand < candidates.get(b)),
        };
        if better {
            best = Some((k, score));
        }
    }
    let (b, score) = best.expect("nonempty candidate set");
    Ok(DetectionResult {
        x_hat: candidates.get(b).to_vec(),
        score,
        evaluations: candidates.len(),
        iterations_used: 0,
        diverged: false,
    })
}

pub fn emle_detect(frame: &Frame, candidates: &CandidateSet) -> Result<DetectionResult> {
    search(frame, candidates, &Scorer::Euclidean, &mut ScoreScratch::default())
}

pub fn manfe_detect(frame: &Frame, flow: &FlowEvaluator, candidates: &CandidateSet) -> Result<DetectionResult> {
    search(frame, candidates, &Scorer::Flow(flow), &mut ScoreScratch::default())
}

/// Exhaustive search with the exact noise density.
pub fn oracle_mle_detect(frame: &Frame, noise: &NoiseSpec, candidates: &CandidateSet) -> Result<DetectionResult> {
    // surface unsupported densities as configuration errors up front
    log_pdf_analytic(noise, &frame.w).map_err(|e| match e {
        Error::UnsupportedDensity(msg) => Error::config(format!("oracle ML needs an analytic density: {msg}")),
        other => other,
    })?;
    search(frame, candidates, &Scorer::Analytic(noise), &mut ScoreScratch::default())
}

/// GAMP hard decision; `noise_var` is per real dimension.
pub fn ggamp_detect(frame: &Frame, iterations: usize, noise_var: f64) -> DetectionResult {
    let out = gamp(frame, iterations, noise_var);
    // scored through `search` so the value matches refinement scores bit for bit
    let single = CandidateSet {
        n_tx: out.x_hat.len(),
        indices: out.x_hat.clone(),
    };
    let score = search(frame, &single, &Scorer::Euclidean, &mut ScoreScratch::default())
        .map(|r| r.score)
        .unwrap_or(f64::NEG_INFINITY);
    DetectionResult {
        x_hat: out.x_hat,
        score,
        evaluations: 0,
        iterations_used: out.iterations_used,
        diverged: out.diverged,
    }
}

/// GAMP start point refined over its distance-`e` neighborhood.
pub fn ggamp_refine(
    frame: &Frame,
    iterations: usize,
    e: usize,
    noise_var: f64,
    scorer: &Scorer,
    scratch: &mut ScoreScratch,
) -> Result<DetectionResult> {
    let start = gamp(frame, iterations, noise_var);
    let cands = neighborhood(&start.x_hat, e, QPSK_ORDER)?;
    let mut res = search(frame, &cands, scorer, scratch)?;
    res.iterations_used = start.iterations_used;
    res.diverged = start.diverged;
    Ok(res)
}

pub fn ggamp_manfe_detect(
    frame: &Frame,
    flow: &FlowEvaluator,
    iterations: usize,
    e: usize,
    noise_var: f64,
) -> Result<DetectionResult> {
    ggamp_refine(frame, iterations, e, noise_var, &Scorer::Flow(flow), &mut ScoreScratch::default())
}

pub fn ggamp_emle_detect(frame: &Frame, iterations: usize, e: usize, noise_var: f64) -> Result<DetectionResult> {
    ggamp_refine(frame, iterations, e, noise_var, &Scorer::Euclidean, &mut ScoreScratch::default())
}

/// Detector family, as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    EMle,
    Manfe,
    Ggamp,
    GgampManfe,
    GgampEmle,
    OracleMle,
}

impl DetectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::EMle => "e_mle",
            DetectorKind::Manfe => "manfe",
            DetectorKind::Ggamp => "ggamp",
            DetectorKind::GgampManfe => "ggamp_manfe",
            DetectorKind::GgampEmle => "ggamp_emle",
            DetectorKind::OracleMle => "oracle_mle",
        }
    }

    pub fn needs_flow(self) -> bool {
        matches!(self, DetectorKind::Manfe | DetectorKind::GgampManfe)
    }

    pub fn uses_gamp(self) -> bool {
        matches!(self, DetectorKind::Ggamp | DetectorKind::GgampManfe | DetectorKind::GgampEmle)
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "e_mle" | "emle" => DetectorKind::EMle,
            "manfe" => DetectorKind::Manfe,
            "ggamp" | "g_gamp" => DetectorKind::Ggamp,
            "ggamp_manfe" | "g_gamp_manfe" => DetectorKind::GgampManfe,
            "ggamp_emle" | "ggamp_e_mle" | "g_gamp_e_mle" => DetectorKind::GgampEmle,
            "oracle_mle" | "oracle" | "ml" => DetectorKind::OracleMle,
            _ => return Err(Error::config(format!("unknown detector '{s}'"))),
        })
    }
}

/// Detector kind plus its settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    /// GAMP iterations `T`.
    pub iterations: usize,
    /// Neighborhood radius `E`.
    pub max_errors: usize,
}

impl DetectorConfig {
    pub fn new(kind: DetectorKind) -> Self {
        Self {
            kind,
            iterations: 30,
            max_errors: 1,
        }
    }

    pub fn with_errors(kind: DetectorKind, max_errors: usize) -> Self {
        Self {
            max_errors,
            ..Self::new(kind)
        }
    }

    /// Display label, e.g. `G-GAMP(30)-MANFE(1)`.
    pub fn label(&self) -> String {
        let (t, e) = (self.iterations, self.max_errors);
        match self.kind {
            DetectorKind::EMle => "E-MLE".into(),
            DetectorKind::Manfe => "MANFE".into(),
            DetectorKind::Ggamp => format!("G-GAMP({t})"),
            DetectorKind::GgampManfe => format!("G-GAMP({t})-MANFE({e})"),
            DetectorKind::GgampEmle => format!("G-GAMP({t})-E-MLE({e})"),
            DetectorKind::OracleMle => "ML".into(),
        }
    }

    /// Parses a label produced by [`DetectorConfig::label`] or a plain kind
    /// name (defaults `T = 30`, `E = 1`).
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("cannot parse detector '{s}'"));
        let num = |part: &str, prefix: &str| -> Result<usize> {
            part.strip_prefix(prefix)
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|v| v.parse().ok())
                .ok_or_else(bad)
        };
        match s {
            "E-MLE" => return Ok(Self::new(DetectorKind::EMle)),
            "MANFE" => return Ok(Self::new(DetectorKind::Manfe)),
            "ML" => return Ok(Self::new(DetectorKind::OracleMle)),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("G-GAMP(") {
            let (t_part, tail) = rest.split_once(')').ok_or_else(bad)?;
            let iterations: usize = t_part.parse().map_err(|_| bad())?;
            let (kind, max_errors) = if tail.is_empty() {
                (DetectorKind::Ggamp, 1)
            } else if let Some(e) = tail.strip_prefix("-MANFE") {
                (DetectorKind::GgampManfe, num(e, "(")?)
            } else if let Some(e) = tail.strip_prefix("-E-MLE") {
                (DetectorKind::GgampEmle, num(e, "(")?)
            } else {
                return Err(bad());
            };
            return Ok(Self {
                kind,
                iterations,
                max_errors,
            });
        }
        s.parse().map(Self::new)
    }
}

/// A configured detector with the resources it needs.
#[derive(Clone)]
pub struct Detector {
    pub config: DetectorConfig,
    pub flow: Option<Arc<FlowEvaluator>>,
    /// Exact noise model (oracle only).
    pub noise: Option<NoiseSpec>,
    candidates: Option<Arc<CandidateSet>>,
    noiseless: bool,
}

impl fmt::Debug for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Detector")
            .field("config", &self.config)
            .field("has_flow", &self.flow.is_some())
            .field("noise", &self.noise)
            .finish()
    }
}

impl Detector {
    /// Checks that the resources match the kind and pre-enumerates the
    /// exhaustive candidate set where one is needed.
    pub fn new(
        config: DetectorConfig,
        n_tx: usize,
        flow: Option<Arc<FlowEvaluator>>,
        noise: Option<NoiseSpec>,
    ) -> Result<Self> {
        let kind = config.kind;
        if kind.needs_flow() && flow.is_none() {
            return Err(Error::config(format!("{} needs a trained flow", config.label())));
        }
        if kind == DetectorKind::OracleMle && noise.is_none() {
            return Err(Error::config("oracle ML needs the noise model"));
        }
        if kind.uses_gamp() && config.iterations == 0 {
            return Err(Error::config("GAMP needs T >= 1"));
        }
        if matches!(kind, DetectorKind::GgampManfe | DetectorKind::GgampEmle) && config.max_errors > n_tx {
            return Err(Error::config(format!("E = {} exceeds N = {n_tx}", config.max_errors)));
        }
        let candidates = match kind {
            DetectorKind::EMle | DetectorKind::Manfe | DetectorKind::OracleMle => {
                Some(Arc::new(all_candidates(n_tx, QPSK_ORDER, DEFAULT_CANDIDATE_CAP)?))
            }
            _ => None,
        };
        Ok(Self {
            config,
            flow,
            noise,
            candidates,
            noiseless: false,
        })
    }

    /// Like [`Detector::new`] with the noise model taken from `scenario`.
    /// On a noiseless scenario the oracle has no density to evaluate and
    /// scores by Euclidean distance, which picks the exact zero residual.
    pub fn for_scenario(config: DetectorConfig, scenario: &MimoScenario, flow: Option<Arc<FlowEvaluator>>) -> Result<Self> {
        match scenario.noise_at_snr() {
            Some(spec) => Self::new(config, scenario.n_tx, flow, Some(spec)),
            None => {
                let mut d = Self::new(config, scenario.n_tx, flow, Some(scenario.noise.clone()))?;
                d.noise = None;
                d.noiseless = true;
                Ok(d)
            }
        }
    }

    pub fn label(&self) -> String {
        self.config.label()
    }

    /// `noise_var` is the nominal per-real-dimension variance given to GAMP.
    pub fn detect(&self, frame: &Frame, noise_var: f64, scratch: &mut ScoreScratch) -> Result<DetectionResult> {
        let c = &self.config;
        let flow = || Scorer::Flow(self.flow.as_deref().expect("checked in new"));
        let cands = || self.candidates.as_deref().expect("checked in new");
        match c.kind {
            DetectorKind::EMle => search(frame, cands(), &Scorer::Euclidean, scratch),
            DetectorKind::Manfe => search(frame, cands(), &flow(), scratch),
            DetectorKind::OracleMle if self.noiseless => search(frame, cands(), &Scorer::Euclidean, scratch),
            DetectorKind::OracleMle => search(
                frame,
                cands(),
                &Scorer::Analytic(self.noise.as_ref().expect("checked in new")),
                scratch,
            ),
            DetectorKind::Ggamp => Ok(ggamp_detect(frame, c.iterations, noise_var)),
            DetectorKind::GgampManfe => ggamp_refine(frame, c.iterations, c.max_errors, noise_var, &flow(), scratch),
            DetectorKind::GgampEmle => {
                ggamp_refine(frame, c.iterations, c.max_errors, noise_var, &Scorer::Euclidean, scratch)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{bit_errors, gen_frame, MimoScenario};
    use crate::flow::{FlowConfig, FlowParams};

    fn scenario(n: usize, snr: f64) -> MimoScenario {
        MimoScenario {
            n_tx: n,
            n_rx: n,
            snr_db: snr,
            noise: NoiseSpec::Gaussian { sigma: 1.0 },
            seed: 17,
        }
    }

    #[test]
    fn noiseless_exhaustive_detection_is_exact() {
        let s = scenario(4, f64::INFINITY);
        let cands = all_candidates(4, 4, DEFAULT_CANDIDATE_CAP).unwrap();
        for i in 0..20 {
            let f = gen_frame(&s, i);
            let r = emle_detect(&f, &cands).unwrap();
            assert_eq!(r.x_hat, f.x_indices);
            assert!(r.score.abs() < 1e-20, "score {}", r.score);
            assert_eq!(r.evaluations, 256);
        }
    }

    #[test]
    fn single_antenna_emle_is_slicing() {
        let s = scenario(1, 5.0);
        let cands = all_candidates(1, 4, DEFAULT_CANDIDATE_CAP).unwrap();
        for i in 0..200 {
            let f = gen_frame(&s, i);
            let r = emle_detect(&f, &cands).unwrap();
            // zero-forcing then slicing is ML for one antenna
            let z = f.y[0] / f.h.get(0, 0);
            assert_eq!(r.x_hat, vec![crate::channel::qpsk_slice(z)]);
        }
    }

    #[test]
    fn gaussian_oracle_equals_emle() {
        let s = scenario(3, 8.0);
        let spec = s.noise_at_snr().unwrap();
        let cands = all_candidates(3, 4, DEFAULT_CANDIDATE_CAP).unwrap();
        for i in 0..200 {
            let f = gen_frame(&s, i);
            assert_eq!(
                oracle_mle_detect(&f, &spec, &cands).unwrap().x_hat,
                emle_detect(&f, &cands).unwrap().x_hat
            );
        }
    }

    #[test]
    fn identity_flow_with_gaussian_exact_scale_matches_emle() {
        // a flow whose score is an increasing function of -‖w‖²
        let s = scenario(2, 10.0);
        let flow = FlowEvaluator::new(FlowParams::identity(FlowConfig::new(2)).unwrap()).unwrap();
        let cands = all_candidates(2, 4, DEFAULT_CANDIDATE_CAP).unwrap();
        for i in 0..300 {
            let f = gen_frame(&s, i);
            assert_eq!(
                manfe_detect(&f, &flow, &cands).unwrap().x_hat,
                emle_detect(&f, &cands).unwrap().x_hat
            );
        }
    }

    #[test]
    fn full_neighborhood_equals_exhaustive() {
        let s = scenario(3, 4.0);
        let cands = all_candidates(3, 4, DEFAULT_CANDIDATE_CAP).unwrap();
        let var = s.sigma().powi(2);
        for i in 0..100 {
            let f = gen_frame(&s, i);
            let a = ggamp_emle_detect(&f, 30, 3, var).unwrap();
            let b = emle_detect(&f, &cands).unwrap();
            assert_eq!(a.x_hat, b.x_hat);
            assert_eq!(a.evaluations, 64);
        }
    }

    #[test]
    fn refinement_score_dominates_start() {
        let s = scenario(4, 6.0);
        let var = s.sigma().powi(2);
        for i in 0..100 {
            let f = gen_frame(&s, i);
            let g = ggamp_detect(&f, 30, var);
            let r = ggamp_emle_detect(&f, 30, 1, var).unwrap();
            assert!(r.score >= g.score);
            assert_eq!(r.evaluations, 13);
        }
    }

    #[test]
    fn ggamp_high_snr_is_accurate() {
        let s = scenario(4, 30.0);
        let var = s.sigma().powi(2);
        let mut errors = 0;
        for i in 0..10_000 {
            let f = gen_frame(&s, i);
            let r = ggamp_detect(&f, 30, var);
            assert!(r.iterations_used <= 30);
            errors += r.x_hat.iter().zip(&f.x_indices).filter(|(a, b)| a != b).count();
        }
        assert!((errors as f64) / 40_000.0 < 1e-2, "symbol errors {errors}");
    }

    #[test]
    fn ggamp_noiseless_well_conditioned() {
        // GAMP can settle on a wrong fixed point for a small dense H even
        // without noise, so this is a rate rather than a per-frame check.
        let s = scenario(4, f64::INFINITY);
        let (mut total, mut wrong) = (0, 0);
        for i in 0..3000 {
            let f = gen_frame(&s, i);
            let r = f.realify();
            let sv = nalgebra::DMatrix::from_row_slice(r.rows, r.cols, &r.h).singular_values();
            if sv.max() / sv.min() >= 100.0 {
                continue;
            }
            total += 1;
            if ggamp_detect(&f, 30, 0.0).x_hat != f.x_indices {
                wrong += 1;
            }
        }
        assert!(total > 2800);
        assert!((wrong as f64) < 0.01 * total as f64, "{wrong} of {total} frames");
    }

    #[test]
    fn labels_round_trip() {
        for c in [
            DetectorConfig::new(DetectorKind::EMle),
            DetectorConfig::new(DetectorKind::Manfe),
            DetectorConfig::new(DetectorKind::Ggamp),
            DetectorConfig::with_errors(DetectorKind::GgampManfe, 2),
            DetectorConfig::with_errors(DetectorKind::GgampEmle, 1),
            DetectorConfig::new(DetectorKind::OracleMle),
        ] {
            assert_eq!(DetectorConfig::parse(&c.label()).unwrap(), c);
        }
        assert_eq!(DetectorConfig::new(DetectorKind::GgampManfe).label(), "G-GAMP(30)-MANFE(1)");
        assert!(DetectorConfig::parse("bogus").is_err());
    }

    #[test]
    fn missing_resources_are_config_errors() {
        assert!(matches!(
            Detector::new(DetectorConfig::new(DetectorKind::Manfe), 4, None, None),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            Detector::new(DetectorConfig::new(DetectorKind::OracleMle), 4, None, None),
            Err(Error::Config(_))
        ));
        let sas = NoiseSpec::Sas {
            alpha: 1.5,
            sigma: 1.0,
        };
        let f = gen_frame(&scenario(2, 10.0), 0);
        let cands = all_candidates(2, 4, DEFAULT_CANDIDATE_CAP).unwrap();
        assert!(matches!(oracle_mle_detect(&f, &sas, &cands), Err(Error::Config(_))));
    }

    #[test]
    fn bit_errors_use_gray_distance() {
        assert_eq!(bit_errors(&[0, 3], &[3, 3]), 2);
        assert_eq!(bit_errors(&[1], &[0]), 1);
    }
}
