//! Statistical trends under hardware errors, asserted on repeat means with a
//! margin of two standard errors rather than on single runs.

use cim_core::adc::AdcConfig;
use cim_core::charge::InputActivation;
use cim_core::cim_macro::{CimMacro, MacroConfig, WeightTile};
use cim_core::tensor::{exact_matmul, Tensor2};
use cim_core::variation::{substream, DacSigmaTable, NoiseModel};
use rand::Rng;

const REPEATS: u64 = 30;

fn problem() -> (Tensor2<u8>, Tensor2<i8>) {
    let mut rng = substream(77, &[]);
    let x = Tensor2::from_fn(8, 32, |_, _| rng.random_range(0..=15u8));
    let w = Tensor2::from_fn(32, 8, |_, _| rng.random::<i8>());
    (x, w)
}

fn scaled(noise: &NoiseModel, k: f64) -> NoiseModel {
    let d = &noise.dac_sigma;
    NoiseModel {
        enabled: true,
        dac_sigma: DacSigmaTable {
            vdd_anchors: d.vdd_anchors.iter().map(|&(v, s)| (v, s * k)).collect(),
            code_shape: d.code_shape,
        },
        abl_sigma: noise.abl_sigma * k,
        cmp_sigma: noise.cmp_sigma * k,
    }
}

/// Mean and standard error over seeded repeats of the MSE against `reference`.
fn mse_stats(cfg: &MacroConfig, x: &Tensor2<u8>, w: &Tensor2<i8>, reference: &Tensor2<i64>) -> (f64, f64) {
    let exact = reference;
    let samples: Vec<f64> = (0..REPEATS)
        .map(|seed| {
            let engine = CimMacro::new(MacroConfig { seed, ..cfg.clone() }).unwrap();
            let got = engine.matmul(x, w).unwrap();
            let n = got.data().len() as f64;
            got.data()
                .iter()
                .zip(exact.data())
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                / n
        })
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn error_grows_with_noise_scale() {
    let (x, w) = problem();
    // Full-resolution readout, so the only error source is noise.
    let base = MacroConfig {
        adc: AdcConfig {
            ref_mode: "ideal".into(),
            ..AdcConfig::ideal(16).unwrap()
        },
        ..MacroConfig::default()
    };
    let mut prev = (0.0, 0.0);
    for k in [0.0, 1.0, 3.0, 10.0] {
        let cfg = MacroConfig {
            noise: if k == 0.0 {
                NoiseModel::disabled()
            } else {
                scaled(&base.noise, k)
            },
            ..base.clone()
        };
        let (mean, se) = mse_stats(&cfg, &x, &w, &exact_matmul(&x, &w).unwrap());
        if k == 0.0 {
            assert_eq!(mean, 0.0);
        } else {
            assert!(
                mean - 2.0 * se > prev.0 + 2.0 * prev.1,
                "scale {k}: {mean} +- {se} vs {prev:?}"
            );
        }
        prev = (mean, se);
    }
}

/// Noise-induced error of single bit-column readouts (pMAC units squared):
/// noisy vs. noise-off dequantized partial sums over random cycles.
fn readout_error(cfg: &MacroConfig) -> (f64, f64) {
    let quiet = CimMacro::new(MacroConfig {
        noise: NoiseModel::disabled(),
        ..cfg.clone()
    })
    .unwrap();
    let rows = cfg.activated_rows as usize;
    let samples: Vec<f64> = (0..REPEATS)
        .map(|seed| {
            let noisy = CimMacro::new(MacroConfig { seed, ..cfg.clone() }).unwrap();
            let mut rng = substream(seed, &[1]);
            let mut err = 0.0;
            let mut n = 0.0;
            for c in 0..40u64 {
                let inputs: Vec<InputActivation> = (0..rows)
                    .map(|_| InputActivation::new(rng.random_range(0..=15)).unwrap())
                    .collect();
                let mut tile = WeightTile::default();
                for row in tile.values.iter_mut().take(rows) {
                    row.iter_mut().for_each(|v| *v = rng.random());
                }
                let a = noisy.mac_cycle(&inputs, &tile, &[c]).unwrap();
                let b = quiet.mac_cycle(&inputs, &tile, &[c]).unwrap();
                for (sa, sb) in a.samples.iter().zip(&b.samples) {
                    err += (f64::from(sa.dequantized) - f64::from(sb.dequantized)).powi(2);
                    n += 1.0;
                }
            }
            err / n
        })
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn readout_error_grows_with_activated_rows() {
    let mut prev: Option<(f64, f64)> = None;
    for rows in [4, 8, 16] {
        let cfg = MacroConfig {
            activated_rows: rows,
            adc: AdcConfig {
                bits: 4,
                ref_mode: "ideal".into(),
                ..AdcConfig::default()
            },
            ..MacroConfig::default()
        };
        let (mean, se) = readout_error(&cfg);
        if let Some((pm, ps)) = prev {
            let margin = 2.0 * (se * se + ps * ps).sqrt();
            assert!(mean - pm > margin, "{rows} rows: {mean} +- {se} vs {pm} +- {ps}");
        }
        prev = Some((mean, se));
    }
}
