//! Noise models: symmetric alpha-stable, Gaussian, Gaussian mixture and
//! Nakagami-m, with samplers and (where they exist) exact log-densities.

use std::f64::consts::{LN_2, PI};
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

/// One component of a Gaussian mixture: every entry of the noise vector is
/// `CN(mean, variance)` given the component, and the component is drawn once
/// per vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    /// Mean of each entry (`[re, im]`).
    pub mean: [f64; 2],
    /// Complex variance `E|w - mean|^2` of each entry.
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian,
    Sas,
    GaussianMixture,
    Nakagami,
}

impl NoiseFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::Sas => "sas",
            NoiseFamily::GaussianMixture => "gaussian_mixture",
            NoiseFamily::Nakagami => "nakagami",
        }
    }
}

impl std::str::FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseFamily::Gaussian),
            "sas" => Ok(NoiseFamily::Sas),
            "gaussian_mixture" | "mixture" => Ok(NoiseFamily::GaussianMixture),
            "nakagami" => Ok(NoiseFamily::Nakagami),
            other => Err(Error::param(format!("unknown noise family {other:?}"))),
        }
    }
}

/// Noise family with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// Circular Gaussian; `sigma` is the std of each real component.
    Gaussian { sigma: f64 },
    /// Independent SαS real and imaginary parts with characteristic
    /// function `exp(-sigma^alpha |t|^alpha)`.
    Sas { alpha: f64, sigma: f64 },
    GaussianMixture { components: Vec<MixtureComponent> },
    /// Nakagami(m, omega) amplitude with uniform phase.
    Nakagami { m: f64, omega: f64 },
}

impl NoiseSpec {
    /// `½ CN(-1, 2) + ½ CN(1, 1)` per entry, component shared by the vector.
    pub fn two_component_mixture() -> Self {
        NoiseSpec::GaussianMixture {
            components: vec![
                MixtureComponent {
                    weight: 0.5,
                    mean: [-1.0, 0.0],
                    variance: 2.0,
                },
                MixtureComponent {
                    weight: 0.5,
                    mean: [1.0, 0.0],
                    variance: 1.0,
                },
            ],
        }
    }

    pub fn family(&self) -> NoiseFamily {
        match self {
            NoiseSpec::Gaussian { .. } => NoiseFamily::Gaussian,
            NoiseSpec::Sas { .. } => NoiseFamily::Sas,
            NoiseSpec::GaussianMixture { .. } => NoiseFamily::GaussianMixture,
            NoiseSpec::Nakagami { .. } => NoiseFamily::Nakagami,
        }
    }

    /// Characteristic exponent; Gaussian noise reports 2.
    pub fn alpha(&self) -> Option<f64> {
        match self {
            NoiseSpec::Sas { alpha, .. } => Some(*alpha),
            NoiseSpec::Gaussian { .. } => Some(2.0),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be finite and > 0, got {v}")))
            }
        };
        match self {
            NoiseSpec::Gaussian { sigma } => positive("sigma", *sigma),
            NoiseSpec::Sas { alpha, sigma } => {
                if !(*alpha > 0.0 && *alpha <= 2.0) {
                    return Err(Error::param(format!("alpha must lie in (0, 2], got {alpha}")));
                }
                positive("sigma", *sigma)
            }
            NoiseSpec::GaussianMixture { components } => {
                if components.is_empty() {
                    return Err(Error::param("mixture needs at least one component"));
                }
                for c in components {
                    if !(c.weight >= 0.0) || !c.mean.iter().all(|m| m.is_finite()) {
                        return Err(Error::param(format!("bad mixture component {c:?}")));
                    }
                    positive("mixture variance", c.variance)?;
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::param(format!("mixture weights sum to {total}, not 1")));
                }
                Ok(())
            }
            NoiseSpec::Nakagami { m, omega } => {
                if !(*m >= 0.5) || !m.is_finite() {
                    return Err(Error::param(format!("Nakagami m must be >= 0.5, got {m}")));
                }
                positive("omega", *omega)
            }
        }
    }

    /// `E|w_i|^2` per complex entry; infinite for SαS below alpha = 2.
    pub fn power(&self) -> f64 {
        match self {
            NoiseSpec::Gaussian { sigma } => 2.0 * sigma * sigma,
            NoiseSpec::Sas { alpha, sigma } => {
                if *alpha == 2.0 {
                    4.0 * sigma * sigma
                } else {
                    f64::INFINITY
                }
            }
            NoiseSpec::GaussianMixture { components } => components
                .iter()
                .map(|c| c.weight * (c.mean[0].powi(2) + c.mean[1].powi(2) + c.variance))
                .sum(),
            NoiseSpec::Nakagami { omega, .. } => *omega,
        }
    }

    /// The same shape with every sample multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> NoiseSpec {
        match self {
            NoiseSpec::Gaussian { sigma } => NoiseSpec::Gaussian {
                sigma: sigma * factor,
            },
            NoiseSpec::Sas { alpha, sigma } => NoiseSpec::Sas {
                alpha: *alpha,
                sigma: sigma * factor,
            },
            NoiseSpec::GaussianMixture { components } => NoiseSpec::GaussianMixture {
                components: components
                    .iter()
                    .map(|c| MixtureComponent {
                        weight: c.weight,
                        mean: [c.mean[0] * factor, c.mean[1] * factor],
                        variance: c.variance * factor * factor,
                    })
                    .collect(),
            },
            NoiseSpec::Nakagami { m, omega } => NoiseSpec::Nakagami {
                m: *m,
                omega: omega * factor * factor,
            },
        }
    }

    /// Draws one noise vector of length `dim`.
    pub fn sample_vector<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R, out: &mut Vec<Complex64>) {
        match self {
            NoiseSpec::Gaussian { sigma } => {
                for _ in 0..dim {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    out.push(Complex64::new(sigma * re, sigma * im));
                }
            }
            NoiseSpec::Sas { alpha, sigma } => {
                for _ in 0..dim {
                    let re = standard_sas(*alpha, rng);
                    let im = standard_sas(*alpha, rng);
                    out.push(Complex64::new(sigma * re, sigma * im));
                }
            }
            NoiseSpec::GaussianMixture { components } => {
                let c = &components[pick_component(components, rng.random::<f64>())];
                let sd = (c.variance / 2.0).sqrt();
                for _ in 0..dim {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    out.push(Complex64::new(c.mean[0] + sd * re, c.mean[1] + sd * im));
                }
            }
            NoiseSpec::Nakagami { m, omega } => {
                let power = Gamma::new(*m, omega / m).expect("validated Nakagami parameters");
                for _ in 0..dim {
                    let r = power.sample(rng).sqrt();
                    let phase = 2.0 * PI * rng.random::<f64>();
                    out.push(Complex64::from_polar(r, phase));
                }
            }
        }
    }
}

fn pick_component(components: &[MixtureComponent], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, c) in components.iter().enumerate() {
        acc += c.weight;
        if u < acc {
            return i;
        }
    }
    components.len() - 1
}

/// Uniform draw on the open interval (0, 1).
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Standard (unit scale) symmetric alpha-stable draw by the
/// Chambers–Mallows–Stuck transform.
pub fn standard_sas<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let v = PI * (open_unit(rng) - 0.5);
    let w = -open_unit(rng).ln();
    if alpha == 1.0 {
        return v.tan();
    }
    if alpha == 2.0 {
        // sin(2v)/sqrt(cos v) * sqrt(w / cos v) simplifies to 2 sin(v) sqrt(w)
        return 2.0 * v.sin() * w.sqrt();
    }
    let cos_v = v.cos();
    (alpha * v).sin() / cos_v.powf(1.0 / alpha) * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha)
}

/// `count` i.i.d. noise vectors of length `dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch {
    pub spec: NoiseSpec,
    pub count: usize,
    pub dim: usize,
    pub seed: u64,
    pub samples: Vec<Complex64>,
}

impl NoiseBatch {
    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Complex64]> {
        self.samples.chunks_exact(self.dim)
    }
}

/// Row `i` of a batch is drawn from its own stream `(seed, Noise, 0, i)`, so
/// the result is identical however the rows are split across threads.
pub fn sample_noise(spec: &NoiseSpec, count: usize, dim: usize, seed: u64) -> Result<NoiseBatch> {
    sample_noise_in(spec, count, dim, seed, Domain::Noise)
}

/// [`sample_noise`] drawing from `domain` instead, e.g. to keep flow training
/// data disjoint from the noise of benchmark frames with the same seed.
pub fn sample_noise_in(spec: &NoiseSpec, count: usize, dim: usize, seed: u64, domain: Domain) -> Result<NoiseBatch> {
    spec.validate()?;
    if count == 0 || dim == 0 {
        return Err(Error::param("count and dim must be >= 1"));
    }
    let rows: Vec<Vec<Complex64>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, domain, 0, i as u64);
            let mut row = Vec::with_capacity(dim);
            spec.sample_vector(dim, &mut rng, &mut row);
            row
        })
        .collect();
    Ok(NoiseBatch {
        spec: spec.clone(),
        count,
        dim,
        seed,
        samples: rows.into_iter().flatten().collect(),
    })
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn log_normal(x: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + x * x / var)
}

fn log_cauchy(x: f64, scale: f64) -> f64 {
    scale.ln() - PI.ln() - (scale * scale + x * x).ln()
}

/// Exact log-density of the noise vector `w` under `spec`.
///
/// Supported: Gaussian, Gaussian mixture, Nakagami-m (amplitude/phase
/// factorisation) and SαS at alpha = 1 (Cauchy) or alpha = 2 (Gaussian).
pub fn log_pdf_analytic(spec: &NoiseSpec, w: &[Complex64]) -> Result<f64> {
    spec.validate()?;
    match spec {
        NoiseSpec::Gaussian { sigma } => {
            let var = sigma * sigma;
            Ok(w.iter().map(|z| log_normal(z.re, var) + log_normal(z.im, var)).sum())
        }
        NoiseSpec::Sas { alpha, sigma } if *alpha == 2.0 => {
            let var = 2.0 * sigma * sigma;
            Ok(w.iter().map(|z| log_normal(z.re, var) + log_normal(z.im, var)).sum())
        }
        NoiseSpec::Sas { alpha, sigma } if *alpha == 1.0 => {
            Ok(w.iter().map(|z| log_cauchy(z.re, *sigma) + log_cauchy(z.im, *sigma)).sum())
        }
        NoiseSpec::Sas { alpha, .. } => Err(Error::UnsupportedDensity(format!(
            "SαS density has no closed form at alpha = {alpha}"
        ))),
        NoiseSpec::GaussianMixture { components } => {
            let terms: Vec<f64> = components
                .iter()
                .filter(|c| c.weight > 0.0)
                .map(|c| {
                    let mean = Complex64::new(c.mean[0], c.mean[1]);
                    let per_entry: f64 = w
                        .iter()
                        .map(|z| -(PI * c.variance).ln() - (z - mean).norm_sqr() / c.variance)
                        .sum();
                    c.weight.ln() + per_entry
                })
                .collect();
            Ok(log_sum_exp(&terms))
        }
        NoiseSpec::Nakagami { m, omega } => {
            let norm = LN_2 + m * m.ln() - ln_gamma(*m) - m * omega.ln() - (2.0 * PI).ln();
            Ok(w
                .iter()
                .map(|z| {
                    let r2 = z.norm_sqr();
                    // (2m - 2) ln r = (m - 1) ln r^2
                    let radial = if *m == 1.0 { 0.0 } else { (m - 1.0) * r2.ln() };
                    norm + radial - m * r2 / omega
                })
                .sum())
        }
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Settings for [`sas_pdf_numeric`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Stop when two successive panel refinements differ by less than this.
    pub abs_tol: f64,
    /// Truncate the integral where `exp(-t^alpha)` falls below this.
    pub tail_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-11,
            tail_tol: 1e-18,
            max_panels: 1 << 16,
        }
    }
}

/// 16-point Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration.
fn gauss_legendre_16() -> ([f64; 16], [f64; 16]) {
    const N: usize = 16;
    let mut x = [0.0; N];
    let mut w = [0.0; N];
    for i in 0..N / 2 {
        let mut z = (PI * (i as f64 + 0.75) / (N as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=N {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = N as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[N - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[N - 1 - i] = w[i];
    }
    (x, w)
}

/// Density of a real SαS variable at `w`, by quadrature of the inversion
/// integral `f(w) = 1/π ∫_0^∞ exp(-(σt)^α) cos(wt) dt`.
///
/// Accurate to about `abs_tol / (πσ)` absolute; tail values smaller than
/// that come back as 0.
pub fn sas_pdf_numeric(alpha: f64, sigma: f64, w: f64, cfg: QuadratureConfig) -> Result<f64> {
    NoiseSpec::Sas { alpha, sigma }.validate()?;
    // substitute u = σt: f(w) = 1/(πσ) ∫_0^U exp(-u^α) cos((w/σ) u) du
    let x = w / sigma;
    let upper = (-cfg.tail_tol.ln()).powf(1.0 / alpha);
    let (nodes, weights) = gauss_legendre_16();
    let integrate = |panels: usize| -> f64 {
        let width = upper / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let a = p as f64 * width;
            let mid = a + 0.5 * width;
            let half = 0.5 * width;
            let mut s = 0.0;
            for (&xi, &wi) in nodes.iter().zip(&weights) {
                let u = mid + half * xi;
                s += wi * (-u.powf(alpha)).exp() * (x * u).cos();
            }
            total += s * half;
        }
        total
    };

    // at least a few panels per oscillation period
    let period_panels = (upper * x.abs() / PI).ceil() as usize;
    let mut panels = period_panels.max(8);
    let mut prev = integrate(panels);
    loop {
        panels *= 2;
        if panels > cfg.max_panels {
            return Err(Error::numeric(format!(
                "SαS quadrature did not converge: alpha={alpha}, sigma={sigma}, w={w}, \
                 panels={}, last estimate={prev}",
                panels / 2
            )));
        }
        let next = integrate(panels);
        if (next - prev).abs() < cfg.abs_tol {
            let density = next / (PI * sigma);
            // deep in the tail the true value is below the quadrature accuracy
            if density < -cfg.abs_tol / (PI * sigma) || !density.is_finite() {
                return Err(Error::numeric(format!(
                    "SαS quadrature gave negative density {density} at w={w} (alpha={alpha})"
                )));
            }
            return Ok(density.max(0.0));
        }
        prev = next;
    }
}

/// Noise file magic; see `docs/formats.md`.
pub const NOISE_FILE_MAGIC: [u8; 8] = *b"NOISEF64";
pub const NOISE_FILE_VERSION: u32 = 1;

/// Writes a batch as a 32-byte header followed by interleaved re/im `f64`s.
pub fn write_noise_file<W: Write>(batch: &NoiseBatch, mut out: W) -> Result<()> {
    out.write_all(&NOISE_FILE_MAGIC)?;
    out.write_all(&NOISE_FILE_VERSION.to_le_bytes())?;
    out.write_all(&0u32.to_le_bytes())?;
    out.write_all(&(batch.count as u64).to_le_bytes())?;
    out.write_all(&(batch.dim as u64).to_le_bytes())?;
    for z in &batch.samples {
        out.write_all(&z.re.to_le_bytes())?;
        out.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a noise file back as `(count, dim, samples)`.
pub fn read_noise_file<R: Read>(mut input: R) -> Result<(usize, usize, Vec<Complex64>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 32 {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: "truncated noise header".into(),
        });
    }
    if bytes[..8] != NOISE_FILE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != NOISE_FILE_VERSION {
        return Err(Error::Format {
            offset: 8,
            message: format!("unsupported noise file version {version}"),
        });
    }
    let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
    let expected = 32 + count * dim * 16;
    if bytes.len() != expected {
        return Err(Error::Format {
            offset: bytes.len().min(expected) as u64,
            message: format!("expected {expected} bytes, file has {}", bytes.len()),
        });
    }
    let samples = bytes[32..]
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    Ok((count, dim, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn alpha_out_of_range_rejected() {
        let spec = NoiseSpec::Sas {
            alpha: 2.5,
            sigma: 1.0,
        };
        assert!(matches!(sample_noise(&spec, 10, 1, 0), Err(Error::Parameter(_))));
        let spec = NoiseSpec::Sas {
            alpha: 0.0,
            sigma: 1.0,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn mixture_weights_must_sum_to_one() {
        let mut spec = NoiseSpec::two_component_mixture();
        if let NoiseSpec::GaussianMixture { components } = &mut spec {
            components[0].weight = 0.7;
        }
        assert!(spec.validate().is_err());
        assert!(NoiseSpec::two_component_mixture().validate().is_ok());
    }

    #[test]
    fn unit_complex_gaussian_at_origin() {
        let spec = NoiseSpec::Gaussian {
            sigma: std::f64::consts::FRAC_1_SQRT_2,
        };
        let lp = log_pdf_analytic(&spec, &[Complex64::new(0.0, 0.0)]).unwrap();
        assert_abs_diff_eq!(lp, -PI.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(lp, -1.14473, epsilon = 1e-5);
    }

    #[test]
    fn cauchy_mode_density() {
        let spec = NoiseSpec::Sas {
            alpha: 1.0,
            sigma: 1.0,
        };
        // both components at 0: (1/π)^2
        let lp = log_pdf_analytic(&spec, &[Complex64::new(0.0, 0.0)]).unwrap();
        assert_abs_diff_eq!(lp, 2.0 * (1.0 / PI).ln(), epsilon = 1e-12);
    }

    #[test]
    fn mixture_at_origin_is_average_of_components() {
        let spec = NoiseSpec::two_component_mixture();
        let lp = log_pdf_analytic(&spec, &[Complex64::new(0.0, 0.0)]).unwrap();
        // CN(-1, 2) at 0: exp(-1/2)/(2π); CN(1, 1) at 0: exp(-1)/π
        let expected = 0.5 * ((-0.5f64).exp() / (2.0 * PI) + (-1.0f64).exp() / PI);
        assert_abs_diff_eq!(lp.exp(), expected, epsilon = 1e-14);
    }

    #[test]
    fn unsupported_alpha_density() {
        let spec = NoiseSpec::Sas {
            alpha: 1.5,
            sigma: 1.0,
        };
        assert!(matches!(
            log_pdf_analytic(&spec, &[Complex64::new(0.1, 0.0)]),
            Err(Error::UnsupportedDensity(_))
        ));
    }

    #[test]
    fn numeric_pdf_matches_closed_forms() {
        let cfg = QuadratureConfig::default();
        for &w in &[0.0f64, 0.3, 1.0, 2.5, 7.0] {
            for &sigma in &[0.5f64, 1.0, 2.0] {
                let gauss = (-w * w / (4.0 * sigma * sigma)).exp() / (2.0 * sigma * PI.sqrt());
                let num = sas_pdf_numeric(2.0, sigma, w, cfg).unwrap();
                assert_abs_diff_eq!(num, gauss, epsilon = 1e-6);
                let cauchy = sigma / (PI * (sigma * sigma + w * w));
                let num = sas_pdf_numeric(1.0, sigma, w, cfg).unwrap();
                assert_abs_diff_eq!(num, cauchy, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn numeric_pdf_is_symmetric_and_decreasing() {
        let cfg = QuadratureConfig::default();
        let mut prev = f64::INFINITY;
        for i in 0..30 {
            let w = i as f64 * 0.25;
            let plus = sas_pdf_numeric(1.5, 1.0, w, cfg).unwrap();
            let minus = sas_pdf_numeric(1.5, 1.0, -w, cfg).unwrap();
            assert_eq!(plus, minus);
            assert!(plus < prev, "not decreasing at w={w}");
            prev = plus;
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre_16();
        let integral: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(30)).sum();
        assert_abs_diff_eq!(integral, 2.0 / 31.0, epsilon = 1e-13);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn sampling_is_reproducible() {
        let spec = NoiseSpec::Sas {
            alpha: 1.7,
            sigma: 0.3,
        };
        let a = sample_noise(&spec, 100, 4, 11).unwrap();
        let b = sample_noise(&spec, 100, 4, 11).unwrap();
        let c = sample_noise(&spec, 100, 4, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples, c.samples);
        // rows are prefix-stable
        let d = sample_noise(&spec, 50, 4, 11).unwrap();
        assert_eq!(&a.samples[..200], &d.samples[..]);
    }

    #[test]
    fn noise_file_round_trip_and_truncation() {
        let batch = sample_noise(&NoiseSpec::Gaussian { sigma: 1.0 }, 5, 3, 1).unwrap();
        let mut buf = Vec::new();
        write_noise_file(&batch, &mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 5 * 3 * 16);
        let (count, dim, samples) = read_noise_file(&buf[..]).unwrap();
        assert_eq!((count, dim), (5, 3));
        assert_eq!(samples, batch.samples);
        assert!(matches!(read_noise_file(&buf[..100]), Err(Error::Format { .. })));
    }
}
