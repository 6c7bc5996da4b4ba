use super::{BenchPlan, SweepAxis};
use crate::detect::{DetectorConfig, DetectorKind};
use crate::error::{Error, Result};
use crate::noise::NoiseSpec;

pub const PRESET_NAMES: &[&str] = &[
    "fig3-desk",
    "fig4-desk",
    "fig5-desk",
    "fig6-desk",
    "fig7-desk",
    "fig8-desk",
    "fig9-desk",
    "fig10-desk",
];

const DESK_FRAMES: usize = 100_000;
const DESK_SEED: u64 = 1;

fn sas(alpha: f64) -> NoiseSpec {
    NoiseSpec::Sas { alpha, sigma: 1.0 }
}

fn snr_grid() -> Vec<f64> {
    vec![10.0, 15.0, 20.0, 25.0, 30.0]
}

fn exhaustive_set() -> Vec<DetectorConfig> {
    vec![
        DetectorConfig::new(DetectorKind::EMle),
        DetectorConfig::new(DetectorKind::Manfe),
        DetectorConfig::new(DetectorKind::Ggamp),
        DetectorConfig::with_errors(DetectorKind::GgampManfe, 1),
        DetectorConfig::with_errors(DetectorKind::GgampManfe, 2),
    ]
}

fn neighborhood_set() -> Vec<DetectorConfig> {
    vec![
        DetectorConfig::new(DetectorKind::Ggamp),
        DetectorConfig::with_errors(DetectorKind::GgampEmle, 1),
        DetectorConfig::with_errors(DetectorKind::GgampManfe, 1),
        DetectorConfig::with_errors(DetectorKind::GgampManfe, 2),
    ]
}

fn oracle_set() -> Vec<DetectorConfig> {
    vec![
        DetectorConfig::new(DetectorKind::EMle),
        DetectorConfig::new(DetectorKind::Manfe),
        DetectorConfig::new(DetectorKind::OracleMle),
        DetectorConfig::new(DetectorKind::Ggamp),
        DetectorConfig::with_errors(DetectorKind::GgampManfe, 1),
    ]
}

fn snr_sweep(name: &str, n: usize, noise: NoiseSpec, detectors: Vec<DetectorConfig>) -> BenchPlan {
    BenchPlan {
        name: name.into(),
        n_tx: n,
        n_rx: n,
        noise,
        axis: SweepAxis::Snr,
        axis_values: snr_grid(),
        snr_db: 0.0,
        detectors,
        frames: DESK_FRAMES,
        seed: DESK_SEED,
    }
}

/// Desk-scale plans at 10^5 frames per point.
///
/// | preset | system | noise | axis |
/// |---|---|---|---|
/// | fig3-desk | 4×4 | SαS | alpha 1.0..2.0 at 25 dB |
/// | fig4/5/6-desk | 4×4 | SαS alpha 1.9 / 1.5 / 1.1 | SNR 10..30 dB |
/// | fig7/8-desk | 8×8, neighborhood detectors only | SαS alpha 1.9 / 1.5 | SNR |
/// | fig9-desk | 4×4 | Nakagami m = 2 | SNR |
/// | fig10-desk | 4×4 | two-component Gaussian mixture | SNR |
pub fn preset(name: &str) -> Result<BenchPlan> {
    Ok(match name {
        "fig3-desk" => BenchPlan {
            name: name.into(),
            n_tx: 4,
            n_rx: 4,
            noise: sas(2.0),
            axis: SweepAxis::Alpha,
            axis_values: (10..=20).map(|i| i as f64 / 10.0).collect(),
            snr_db: 25.0,
            detectors: exhaustive_set(),
            frames: DESK_FRAMES,
            seed: DESK_SEED,
        },
        "fig4-desk" => snr_sweep(name, 4, sas(1.9), exhaustive_set()),
        "fig5-desk" => snr_sweep(name, 4, sas(1.5), exhaustive_set()),
        "fig6-desk" => snr_sweep(name, 4, sas(1.1), exhaustive_set()),
        "fig7-desk" => snr_sweep(name, 8, sas(1.9), neighborhood_set()),
        "fig8-desk" => snr_sweep(name, 8, sas(1.5), neighborhood_set()),
        "fig9-desk" => snr_sweep(name, 4, NoiseSpec::Nakagami { m: 2.0, omega: 1.0 }, oracle_set()),
        "fig10-desk" => snr_sweep(name, 4, NoiseSpec::two_component_mixture(), oracle_set()),
        _ => {
            return Err(Error::config(format!(
                "unknown preset '{name}'; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    })
}
