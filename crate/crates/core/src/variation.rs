//! Hardware error models and the DAC Monte-Carlo harness.
//!
//! Noise is placed in three spots: one DAC error per AMU per cycle (shared by
//! all of its CBLs), one ABL error per column conversion, and a static offset
//! per comparator. Every random draw comes from a ChaCha sub-stream keyed by
//! `(seed, path...)`, so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adc::ComparatorOffsets;
use crate::charge::{dac_convert, InputActivation, SupplyVoltage};
use crate::{CimError, Result};

/// Stream domains, so different noise sources never share a sub-stream.
pub mod domain {
    pub const CYCLE: u64 = 0x4359_434c;
    pub const OFFSETS: u64 = 0x4f46_4653;
    pub const MONTECARLO: u64 = 0x4d43_4441;
    pub const COLUMN: u64 = 0x434f_4c53;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, path)`.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for &p in path {
        h = splitmix64(h ^ splitmix64(p));
    }
    let mut key = [0u8; 32];
    let mut s = h;
    for chunk in key.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}

/// DAC error sigma as a function of supply and input code.
///
/// `sigma(vdd, code) = interp(vdd_anchors)(vdd) * code_shape[code]`, with
/// linear interpolation between anchors and clamping outside them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DacSigmaTable {
    /// `(vdd volts, sigma volts at the shape's unit code)`, ascending in vdd.
    pub vdd_anchors: Vec<(f64, f64)>,
    /// Relative sigma per code 0..15.
    pub code_shape: [f64; 16],
}

impl Default for DacSigmaTable {
    /// 1.8 mV at (0.6 V, code 8), scaled as 1/vdd and peaking at mid-code.
    fn default() -> Self {
        let vdd_anchors = vec![(0.6, 1.8e-3), (0.9, 1.2e-3), (1.2, 0.9e-3)];
        let code_shape = std::array::from_fn(|c| {
            let d = (c as f64 - 8.0) / 8.0;
            1.0 - 0.5 * d * d
        });
        DacSigmaTable {
            vdd_anchors,
            code_shape,
        }
    }
}

impl DacSigmaTable {
    pub fn validate(&self) -> Result<()> {
        if self.vdd_anchors.is_empty() {
            return Err(CimError::config("DAC sigma table needs at least one anchor"));
        }
        if self.vdd_anchors.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(CimError::config("DAC sigma anchors must ascend in vdd"));
        }
        let bad = |s: f64| !(s.is_finite() && s >= 0.0);
        if self.vdd_anchors.iter().any(|a| bad(a.1)) || self.code_shape.iter().any(|&s| bad(s)) {
            return Err(CimError::config("DAC sigmas must be finite and >= 0"));
        }
        Ok(())
    }

    /// Sigma in volts.
    pub fn sigma(&self, vdd: SupplyVoltage, code: InputActivation) -> f64 {
        let v = vdd.volts();
        let a = &self.vdd_anchors;
        let base = if v <= a[0].0 {
            a[0].1
        } else if v >= a[a.len() - 1].0 {
            a[a.len() - 1].1
        } else {
            let i = a.iter().position(|&(x, _)| x > v).unwrap_or(a.len() - 1);
            let (x0, y0) = a[i - 1];
            let (x1, y1) = a[i];
            y0 + (y1 - y0) * (v - x0) / (x1 - x0)
        };
        base * self.code_shape[usize::from(code.value())]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub enabled: bool,
    pub dac_sigma: DacSigmaTable,
    /// ABL sampling noise per conversion, volts.
    pub abl_sigma: f64,
    /// Comparator offset sigma, volts.
    pub cmp_sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            enabled: true,
            dac_sigma: DacSigmaTable::default(),
            abl_sigma: 1.0e-3,
            cmp_sigma: 2.0e-3,
        }
    }
}

impl NoiseModel {
    pub fn disabled() -> Self {
        NoiseModel {
            enabled: false,
            ..NoiseModel::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dac_sigma.validate()?;
        for (name, s) in [("abl_sigma", self.abl_sigma), ("cmp_sigma", self.cmp_sigma)] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(CimError::config(format!("{name} must be finite and >= 0, got {s}")));
            }
        }
        Ok(())
    }

    /// One DAC error draw, volts.
    pub fn sample_dac_noise(&self, vdd: SupplyVoltage, code: InputActivation, rng: &mut ChaCha8Rng) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        gaussian(rng, self.dac_sigma.sigma(vdd, code))
    }

    /// One ABL error draw, volts.
    pub fn sample_abl_noise(&self, rng: &mut ChaCha8Rng) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        gaussian(rng, self.abl_sigma)
    }

    /// Static offsets for `count` comparators, normalized to `vdd`.
    pub fn sample_comparator_offsets(
        &self,
        count: usize,
        vdd: SupplyVoltage,
        rng: &mut ChaCha8Rng,
    ) -> ComparatorOffsets {
        if !self.enabled {
            return ComparatorOffsets::zeros(count);
        }
        let offsets = (0..count)
            .map(|_| vdd.normalize(gaussian(rng, self.cmp_sigma)))
            .collect();
        ComparatorOffsets::new(offsets).expect("gaussian draws are finite")
    }
}

/// Summary statistics of a set of trials (volts).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialStatistics {
    pub n: u64,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
}

/// Welford accumulator.
#[derive(Debug, Clone, Copy)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
}

impl Default for RunningStats {
    fn default() -> Self {
        RunningStats {
            n: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    pub fn finish(&self) -> TrialStatistics {
        let var = if self.n > 1 { self.m2 / (self.n - 1) as f64 } else { 0.0 };
        TrialStatistics {
            n: self.n,
            mean: self.mean,
            stddev: var.max(0.0).sqrt(),
            min: self.min,
            max: self.max,
        }
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = RunningStats::default();
        iter.into_iter().for_each(|x| s.push(x));
        s
    }
}

/// Monte-Carlo of the DAC output voltage (absolute volts) for one code.
pub fn run_montecarlo_dac(
    model: &NoiseModel,
    vdd: SupplyVoltage,
    code: InputActivation,
    trials: u64,
    seed: u64,
) -> Result<TrialStatistics> {
    if trials < 2 {
        return Err(CimError::domain(format!("need at least 2 trials, got {trials}")));
    }
    let ideal = vdd.to_volts(dac_convert(code));
    let mut rng = substream(seed, &[domain::MONTECARLO, u64::from(code.value())]);
    let stats: RunningStats = (0..trials)
        .map(|_| ideal + model.sample_dac_noise(vdd, code, &mut rng))
        .collect();
    Ok(stats.finish())
}
