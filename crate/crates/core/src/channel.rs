//! QPSK over Rayleigh flat fading: modulation, channel draws, the real-valued
//! decomposition, SNR bookkeeping and frame generation.
//!
//! Bit mapping (Gray): symbol index `i = 2*b0 + b1` maps to
//! `((1 - 2*b0) + j(1 - 2*b1)) / √2`, so `00 → (+1+j)/√2`,
//! `01 → (+1-j)/√2`, `10 → (-1+j)/√2`, `11 → (-1-j)/√2`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::rng::{stream, Domain};

pub const QPSK_ORDER: usize = 4;

/// Default upper bound on exhaustive candidate enumeration.
pub const DEFAULT_CANDIDATE_CAP: usize = 1 << 20;

pub fn qpsk_point(index: usize) -> Complex64 {
    debug_assert!(index < QPSK_ORDER);
    let re = if index & 2 == 0 { 1.0 } else { -1.0 };
    let im = if index & 1 == 0 { 1.0 } else { -1.0 };
    Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
}

pub fn qpsk_constellation() -> [Complex64; QPSK_ORDER] {
    [qpsk_point(0), qpsk_point(1), qpsk_point(2), qpsk_point(3)]
}

/// Nearest constellation index (sign slicing per real dimension).
pub fn qpsk_slice(z: Complex64) -> usize {
    (((z.re < 0.0) as usize) << 1) | (z.im < 0.0) as usize
}

pub fn qpsk_modulate(bits: &[u8]) -> Result<Vec<Complex64>> {
    if bits.len() % 2 != 0 {
        return Err(Error::contract(format!("QPSK needs an even bit count, got {}", bits.len())));
    }
    if bits.iter().any(|&b| b > 1) {
        return Err(Error::contract("bits must be 0 or 1"));
    }
    Ok(bits
        .chunks_exact(2)
        .map(|pair| qpsk_point(((pair[0] as usize) << 1) | pair[1] as usize))
        .collect())
}

pub fn qpsk_demap(symbols: &[Complex64]) -> Vec<u8> {
    symbols
        .iter()
        .flat_map(|&s| {
            let i = qpsk_slice(s);
            [(i >> 1) as u8, (i & 1) as u8]
        })
        .collect()
}

/// Bit errors between two symbol-index vectors under the Gray mapping.
pub fn bit_errors(a: &[usize], b: &[usize]) -> u64 {
    a.iter().zip(b).map(|(&x, &y)| (x ^ y).count_ones() as u64).sum()
}

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl CMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::contract(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.cols, "matrix/vector shape mismatch");
        (0..self.rows)
            .map(|r| {
                self.data[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .map(|(h, v)| h * v)
                    .sum()
            })
            .collect()
    }
}

/// Real `2M×2N` form `[[Re H, -Im H], [Im H, Re H]]`, row-major.
pub fn realify_matrix(h: &CMatrix) -> Vec<f64> {
    let (m, n) = (h.rows, h.cols);
    let mut out = vec![0.0; 4 * m * n];
    let stride = 2 * n;
    for r in 0..m {
        for c in 0..n {
            let z = h.get(r, c);
            out[r * stride + c] = z.re;
            out[r * stride + n + c] = -z.im;
            out[(m + r) * stride + c] = z.im;
            out[(m + r) * stride + n + c] = z.re;
        }
    }
    out
}

/// `[Re v; Im v]`.
pub fn realify_vector(v: &[Complex64]) -> Vec<f64> {
    v.iter().map(|z| z.re).chain(v.iter().map(|z| z.im)).collect()
}

pub fn complexify_vector(v: &[f64]) -> Vec<Complex64> {
    let n = v.len() / 2;
    (0..n).map(|i| Complex64::new(v[i], v[n + i])).collect()
}

/// System parameters of one simulated link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MimoScenario {
    pub n_tx: usize,
    pub n_rx: usize,
    /// `+inf` gives noiseless frames.
    pub snr_db: f64,
    /// Noise shape; rescaled to the SNR by [`MimoScenario::noise_at_snr`].
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl MimoScenario {
    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_rx < self.n_tx {
            return Err(Error::config(format!(
                "need 1 <= n_tx <= n_rx, got {}x{}",
                self.n_tx, self.n_rx
            )));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::config(format!("bad SNR {}", self.snr_db)));
        }
        self.noise.validate()
    }

    /// Nominal per-real-dimension noise scale, see [`sigma_for_snr`].
    pub fn sigma(&self) -> f64 {
        sigma_for_snr(self.n_tx, self.snr_db)
    }

    /// Nominal noise power per complex receive dimension, `2σ²`.
    pub fn nominal_noise_power(&self) -> f64 {
        let s = self.sigma();
        2.0 * s * s
    }

    /// The noise model at this SNR, or `None` for a noiseless scenario.
    pub fn noise_at_snr(&self) -> Option<NoiseSpec> {
        let sigma = self.sigma();
        (sigma > 0.0).then(|| noise_for_sigma(&self.noise, sigma))
    }
}

/// σ with `SNR = E‖Hx‖² / (M·2σ²)`, for unit-energy symbols and unit-variance
/// taps (`E‖Hx‖² = M·N`), i.e. `2σ² = N / 10^(SNR/10)`.
pub fn sigma_for_snr(n_tx: usize, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        return 0.0;
    }
    (n_tx as f64 / (2.0 * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Places a noise shape at nominal scale σ (nominal complex power `2σ²`):
///
/// * Gaussian: σ per real component.
/// * SαS: scale `σ/√2`, so at alpha = 2 the power is exactly `2σ²`.
/// * Nakagami: `Ω = 2σ²`.
/// * Gaussian mixture: the whole mixture is rescaled to power `2σ²`.
pub fn noise_for_sigma(shape: &NoiseSpec, sigma: f64) -> NoiseSpec {
    match shape {
        NoiseSpec::Gaussian { .. } => NoiseSpec::Gaussian { sigma },
        NoiseSpec::Sas { alpha, .. } => NoiseSpec::Sas {
            alpha: *alpha,
            sigma: sigma * FRAC_1_SQRT_2,
        },
        NoiseSpec::Nakagami { m, .. } => NoiseSpec::Nakagami {
            m: *m,
            omega: 2.0 * sigma * sigma,
        },
        mixture @ NoiseSpec::GaussianMixture { .. } => {
            let factor = (2.0 * sigma * sigma / mixture.power()).sqrt();
            mixture.scaled(factor)
        }
    }
}

/// I.i.d. `CN(0, 1)` channel for frame `frame_index`.
pub fn gen_channel(scenario: &MimoScenario, frame_index: u64) -> CMatrix {
    let mut rng = stream(scenario.seed, Domain::Channel, 0, frame_index);
    let (m, n) = (scenario.n_rx, scenario.n_tx);
    let data = (0..m * n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
        })
        .collect();
    CMatrix { rows: m, cols: n, data }
}

/// One channel use.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub h: CMatrix,
    /// Transmitted constellation indices.
    pub x_indices: Vec<usize>,
    pub x: Vec<Complex64>,
    pub w: Vec<Complex64>,
    pub y: Vec<Complex64>,
}

impl Frame {
    /// Builds `y = Hx + w`. The stored `w` is then recomputed as `y - Hx`,
    /// which differs from the input by at most one rounding, so that the
    /// stored frame satisfies `y - Hx == w` exactly.
    pub fn compose(h: CMatrix, x_indices: Vec<usize>, w: Vec<Complex64>) -> Result<Self> {
        if x_indices.len() != h.cols || w.len() != h.rows {
            return Err(Error::contract("frame dimensions do not match the channel"));
        }
        if x_indices.iter().any(|&i| i >= QPSK_ORDER) {
            return Err(Error::contract("symbol index outside the constellation"));
        }
        let x: Vec<Complex64> = x_indices.iter().map(|&i| qpsk_point(i)).collect();
        let hx = h.mul_vec(&x);
        let y: Vec<Complex64> = hx.iter().zip(&w).map(|(a, b)| a + b).collect();
        let w = y.iter().zip(&hx).map(|(a, b)| a - b).collect();
        Ok(Self {
            h,
            x_indices,
            x,
            w,
            y,
        })
    }

    pub fn n_tx(&self) -> usize {
        self.h.cols
    }

    pub fn n_rx(&self) -> usize {
        self.h.rows
    }

    pub fn realify(&self) -> RealizedFrame {
        RealizedFrame {
            h: realify_matrix(&self.h),
            x: realify_vector(&self.x),
            y: realify_vector(&self.y),
            w: realify_vector(&self.w),
            rows: 2 * self.n_rx(),
            cols: 2 * self.n_tx(),
        }
    }
}

/// Real-valued decomposition of a [`Frame`].
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedFrame {
    /// `rows × cols` row-major.
    pub h: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

/// Frame `frame_index` of a scenario; a pure function of both.
pub fn gen_frame(scenario: &MimoScenario, frame_index: u64) -> Frame {
    let h = gen_channel(scenario, frame_index);
    let mut sym_rng = stream(scenario.seed, Domain::Symbols, 0, frame_index);
    let x_indices: Vec<usize> = (0..scenario.n_tx)
        .map(|_| sym_rng.random_range(0..QPSK_ORDER))
        .collect();
    let w = match scenario.noise_at_snr() {
        Some(spec) => {
            let mut noise_rng = stream(scenario.seed, Domain::Noise, 0, frame_index);
            let mut w = Vec::with_capacity(scenario.n_rx);
            spec.sample_vector(scenario.n_rx, &mut noise_rng, &mut w);
            w
        }
        None => vec![Complex64::new(0.0, 0.0); scenario.n_rx],
    };
    Frame::compose(h, x_indices, w).expect("generated frame has consistent shapes")
}

pub fn gen_frames(scenario: &MimoScenario, count: usize) -> Result<Vec<Frame>> {
    scenario.validate()?;
    Ok((0..count as u64)
        .into_par_iter()
        .map(|i| gen_frame(scenario, i))
        .collect())
}

/// All `P^N` index vectors, flattened, in lexicographic order with antenna 0
/// most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub n_tx: usize,
    pub indices: Vec<usize>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        if self.n_tx == 0 {
            0
        } else {
            self.indices.len() / self.n_tx
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.indices[i * self.n_tx..(i + 1) * self.n_tx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.indices.chunks_exact(self.n_tx)
    }
}

pub fn all_candidates(n_tx: usize, order: usize, cap: usize) -> Result<CandidateSet> {
    let total = (order as u128).checked_pow(n_tx as u32).unwrap_or(u128::MAX);
    if total > cap as u128 {
        return Err(Error::config(format!(
            "{order}^{n_tx} = {total} candidates exceeds the enumeration cap {cap}; \
             use a neighborhood detector (ggamp_manfe / ggamp_emle) instead"
        )));
    }
    let total = total as usize;
    let mut indices = Vec::with_capacity(total * n_tx);
    for k in 0..total {
        let mut rem = k;
        let start = indices.len();
        indices.resize(start + n_tx, 0);
        for pos in (0..n_tx).rev() {
            indices[start + pos] = rem % order;
            rem /= order;
        }
    }
    Ok(CandidateSet { n_tx, indices })
}

/// Frame file magic; see `docs/formats.md`.
pub const FRAME_FILE_MAGIC: [u8; 8] = *b"MIMOFRM1";
pub const FRAME_FILE_VERSION: u32 = 1;

/// Writes frames: 32-byte header (magic, version, n_tx, n_rx, count,
/// nominal σ) then per frame H, x, w, y as little-endian re/im `f64` pairs.
pub fn write_frame_file<W: Write>(frames: &[Frame], sigma: f64, mut out: W) -> Result<()> {
    let (n_tx, n_rx) = frames
        .first()
        .map(|f| (f.n_tx(), f.n_rx()))
        .ok_or_else(|| Error::contract("no frames to write"))?;
    out.write_all(&FRAME_FILE_MAGIC)?;
    out.write_all(&FRAME_FILE_VERSION.to_le_bytes())?;
    out.write_all(&(n_tx as u32).to_le_bytes())?;
    out.write_all(&(n_rx as u32).to_le_bytes())?;
    out.write_all(&(frames.len() as u32).to_le_bytes())?;
    out.write_all(&sigma.to_le_bytes())?;
    let mut put = |z: &Complex64| -> std::io::Result<()> {
        out.write_all(&z.re.to_le_bytes())?;
        out.write_all(&z.im.to_le_bytes())
    };
    for f in frames {
        if f.n_tx() != n_tx || f.n_rx() != n_rx {
            return Err(Error::contract("frames in one file must share dimensions"));
        }
        for z in f.h.data.iter().chain(&f.x).chain(&f.w).chain(&f.y) {
            put(z)?;
        }
    }
    Ok(())
}

/// Reads frames written by [`write_frame_file`]; returns them with the
/// nominal σ from the header.
pub fn read_frame_file<R: Read>(mut input: R) -> Result<(Vec<Frame>, f64)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let fmt = |offset: usize, message: String| Error::Format {
        offset: offset as u64,
        message,
    };
    if bytes.len() < 32 {
        return Err(fmt(bytes.len(), "truncated frame header".into()));
    }
    if bytes[..8] != FRAME_FILE_MAGIC {
        return Err(fmt(0, "bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let version = u32_at(8) as u32;
    if version != FRAME_FILE_VERSION {
        return Err(fmt(8, format!("unsupported frame file version {version}")));
    }
    let (n_tx, n_rx, count) = (u32_at(12), u32_at(16), u32_at(20));
    let sigma = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let per_frame = (n_rx * n_tx + n_tx + 2 * n_rx) * 16;
    let expected = 32 + count * per_frame;
    if bytes.len() != expected {
        return Err(fmt(
            bytes.len().min(expected),
            format!("expected {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let mut values = bytes[32..].chunks_exact(16).map(|c| {
        Complex64::new(
            f64::from_le_bytes(c[..8].try_into().unwrap()),
            f64::from_le_bytes(c[8..].try_into().unwrap()),
        )
    });
    let mut frames = Vec::with_capacity(count);
    for k in 0..count {
        let h: Vec<Complex64> = values.by_ref().take(n_rx * n_tx).collect();
        let x: Vec<Complex64> = values.by_ref().take(n_tx).collect();
        let w: Vec<Complex64> = values.by_ref().take(n_rx).collect();
        let y: Vec<Complex64> = values.by_ref().take(n_rx).collect();
        let x_indices = x.iter().map(|&s| qpsk_slice(s)).collect();
        let h = CMatrix::new(n_rx, n_tx, h)?;
        let offset = 32 + k * per_frame;
        if x.iter().zip(&x_indices).any(|(s, &i)| *s != qpsk_point(i)) {
            return Err(fmt(offset, format!("frame {k}: symbol off the QPSK constellation")));
        }
        frames.push(Frame {
            h,
            x_indices,
            x,
            w,
            y,
        });
    }
    Ok((frames, sigma))
}
