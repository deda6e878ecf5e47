//! Flash ADC models and partial-sum clipping.
//!
//! Reference ladders ([`ReferenceSource`]) and conversion schemes
//! ([`Digitizer`]) are looked up by name, so a configuration chooses e.g.
//! `"in-sram"` + `"coarse-fine"` (the macro's native readout) or `"ideal"` +
//! `"full-flash"` for resolution sweeps.

mod digitizer;
mod ladder;

use std::ops::Index;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use digitizer::{digitizers, CoarseFine, Conversion, Digitizer, FullFlash};
pub use ladder::{reference_sources, IdealReference, InSramReference, ReferenceLadder, ReferenceSource, Registry};

use crate::charge::{Voltage, MAX_PRODUCT};
use crate::{CimError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdcConfig {
    pub bits: u32,
    /// Name of a registered [`ReferenceSource`].
    pub ref_mode: String,
    /// Fraction of the full pMAC code range removed by clipping.
    pub cutoff: f64,
    /// Name of a registered [`Digitizer`].
    pub scheme: String,
}

impl Default for AdcConfig {
    fn default() -> Self {
        AdcConfig {
            bits: 4,
            ref_mode: InSramReference::NAME.into(),
            cutoff: 0.5,
            scheme: CoarseFine::NAME.into(),
        }
    }
}

impl AdcConfig {
    /// Exact readout for `activated_rows`: full resolution, no clipping.
    pub fn ideal(activated_rows: u32) -> Result<Self> {
        Ok(AdcConfig {
            bits: full_resolution_bits(activated_rows)?,
            ref_mode: IdealReference::NAME.into(),
            cutoff: 0.0,
            scheme: FullFlash::NAME.into(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.cutoff) {
            return Err(CimError::config(format!("cutoff {} outside [0, 1)", self.cutoff)));
        }
        if !(1..=12).contains(&self.bits) {
            return Err(CimError::config(format!("unsupported ADC resolution {}", self.bits)));
        }
        reference_sources().get(&self.ref_mode)?;
        digitizers().get(&self.scheme)?;
        if self.ref_mode == InSramReference::NAME && self.bits != 4 {
            return Err(CimError::config(format!(
                "in-sram references require a 4-bit ADC, got {} bits",
                self.bits
            )));
        }
        Ok(())
    }
}

/// Digital output code of one conversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AdcCode(pub u32);

/// Static per-comparator input-referred offsets, as fractions of VDD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparatorOffsets(Vec<f64>);

impl ComparatorOffsets {
    pub fn new(offsets: Vec<f64>) -> Result<Self> {
        if offsets.iter().any(|o| !o.is_finite()) {
            return Err(CimError::domain("comparator offsets must be finite"));
        }
        Ok(ComparatorOffsets(offsets))
    }

    pub fn zeros(n: usize) -> Self {
        ComparatorOffsets(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for ComparatorOffsets {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Resolution needed to read every pMAC level of `activated_rows` rows.
pub fn full_resolution_bits(activated_rows: u32) -> Result<u32> {
    check_rows(activated_rows)?;
    let levels = MAX_PRODUCT * activated_rows + 1;
    Ok(u32::BITS - (levels - 1).leading_zeros())
}

pub(crate) fn check_rows(activated_rows: u32) -> Result<()> {
    if ![4, 8, 16].contains(&activated_rows) {
        return Err(CimError::config(format!(
            "activated rows must be 4, 8 or 16, got {activated_rows}"
        )));
    }
    Ok(())
}

/// `threshold = round((1 - cutoff) * 2^q)`, `q` the full readout resolution.
pub fn cutoff_threshold(cutoff: f64, activated_rows: u32) -> Result<u32> {
    if !(0.0..1.0).contains(&cutoff) {
        return Err(CimError::config(format!("cutoff {cutoff} outside [0, 1)")));
    }
    let q = full_resolution_bits(activated_rows)?;
    let scaled = (1.0 - cutoff) * f64::from(1u32 << q);
    Ok((scaled + 0.5).floor() as u32)
}

/// pMAC values at or above `threshold` read as the top code's value.
pub fn clip_pmac(pmac: u32, threshold: u32) -> u32 {
    pmac.min(threshold.saturating_sub(1))
}

/// Comparator decision: true when the signal is at or below the (offset)
/// reference, i.e. the pMAC is at or above that level's decision point.
pub fn compare(v_signal: Voltage, v_ref: Voltage, offset: f64) -> bool {
    v_signal.value() <= v_ref.value() + offset
}

/// Ones-counting thermometer decoder; tolerant of bubbles.
pub fn thermometer_to_binary(thermometer: &[bool]) -> u32 {
    thermometer.iter().filter(|&&b| b).count() as u32
}

pub fn coarse_fine_digitize(v_abl: Voltage, ladder: &ReferenceLadder, offsets: &ComparatorOffsets) -> Result<AdcCode> {
    Ok(CoarseFine.convert(v_abl, ladder, offsets)?.code)
}

pub fn full_flash_digitize(v_abl: Voltage, ladder: &ReferenceLadder, offsets: &ComparatorOffsets) -> Result<AdcCode> {
    Ok(FullFlash.convert(v_abl, ladder, offsets)?.code)
}

/// Lower edge of the code's pMAC bucket: `code * threshold / 2^bits`.
pub fn dequantize(code: AdcCode, threshold: u32, bits: u32) -> Result<u32> {
    let levels = 1u32 << bits;
    if code.0 >= levels {
        return Err(CimError::domain(format!("code {} exceeds {bits} bits", code.0)));
    }
    if !threshold.is_multiple_of(levels) {
        return Err(CimError::config(format!(
            "threshold {threshold} is not a multiple of 2^{bits}"
        )));
    }
    Ok(code.0 * (threshold / levels))
}

/// A configured ADC: ladder, scheme and operating point.
pub struct Adc {
    digitizer: Arc<dyn Digitizer>,
    ladder: ReferenceLadder,
    bits: u32,
    threshold: u32,
    comparisons: AtomicU64,
}

impl std::fmt::Debug for Adc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Adc")
            .field("scheme", &self.digitizer.name())
            .field("bits", &self.bits)
            .field("threshold", &self.threshold)
            .finish()
    }
}

impl Adc {
    pub fn new(config: &AdcConfig, activated_rows: u32, rho: f64) -> Result<Self> {
        config.validate()?;
        let threshold = cutoff_threshold(config.cutoff, activated_rows)?;
        // Bucket edges must be integers so dequantized pMACs are exact.
        if threshold % (1 << config.bits) != 0 {
            return Err(CimError::config(format!(
                "threshold {threshold} (cutoff {}, {activated_rows} rows) is not a multiple of 2^{}",
                config.cutoff, config.bits
            )));
        }
        let source = reference_sources().get(&config.ref_mode)?;
        let ladder = source.build(config.bits, threshold, rho)?;
        Ok(Adc {
            digitizer: digitizers().get(&config.scheme)?,
            ladder,
            bits: config.bits,
            threshold,
            comparisons: AtomicU64::new(0),
        })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    pub fn ladder(&self) -> &ReferenceLadder {
        &self.ladder
    }

    pub fn scheme(&self) -> &'static str {
        self.digitizer.name()
    }

    pub fn comparator_count(&self) -> usize {
        self.digitizer.comparator_count(self.bits)
    }

    pub fn zero_offsets(&self) -> ComparatorOffsets {
        ComparatorOffsets::zeros(self.comparator_count())
    }

    pub fn convert(&self, v_abl: Voltage, offsets: &ComparatorOffsets) -> Result<AdcCode> {
        let c = self.digitizer.convert(v_abl, &self.ladder, offsets)?;
        self.comparisons.fetch_add(c.comparisons as u64, Ordering::Relaxed);
        Ok(c.code)
    }

    pub fn dequantize(&self, code: AdcCode) -> Result<u32> {
        dequantize(code, self.threshold, self.bits)
    }

    /// Comparator decisions made by this instance so far.
    pub fn comparisons(&self) -> u64 {
        self.comparisons.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charge::pmac_voltage;
    use proptest::prelude::*;

    fn native() -> ReferenceLadder {
        InSramReference.build(4, 128, 1.0).unwrap()
    }

    #[test]
    fn cutoff_threshold_examples() {
        assert_eq!(cutoff_threshold(0.5, 16).unwrap(), 128);
        assert_eq!(cutoff_threshold(0.625, 4).unwrap(), 24);
        assert_eq!(cutoff_threshold(0.0, 16).unwrap(), 256);
        assert_eq!(cutoff_threshold(0.375, 4).unwrap(), 40);
        assert_eq!(cutoff_threshold(0.5, 8).unwrap(), 64);
        assert!(cutoff_threshold(0.5, 12).is_err());
        assert!(cutoff_threshold(1.0, 16).is_err());
        assert!(cutoff_threshold(-0.1, 16).is_err());
    }

    #[test]
    fn full_resolution() {
        assert_eq!(full_resolution_bits(4).unwrap(), 6);
        assert_eq!(full_resolution_bits(8).unwrap(), 7);
        assert_eq!(full_resolution_bits(16).unwrap(), 8);
    }

    #[test]
    fn clipping_at_small_threshold() {
        // R = 4, threshold 24: anything above reads as 23.
        assert_eq!(clip_pmac(30, 24), 23);
        assert_eq!(clip_pmac(24, 24), 23);
        assert_eq!(clip_pmac(23, 24), 23);
        assert_eq!(clip_pmac(5, 24), 5);
    }

    #[test]
    fn compare_examples() {
        let v = |x| Voltage::new(x).unwrap();
        assert!(compare(v(0.70), v(0.75), 0.0));
        assert!(!compare(v(0.80), v(0.75), 0.0));
        assert!(compare(v(0.75), v(0.75), 0.0));
    }

    #[test]
    fn thermometer_decoding() {
        assert_eq!(thermometer_to_binary(&[true, true, false]), 2);
        assert_eq!(thermometer_to_binary(&[true, false, true]), 2);
        assert_eq!(thermometer_to_binary(&[]), 0);
    }

    #[test]
    fn coarse_fine_examples() {
        let ladder = native();
        let z = ComparatorOffsets::zeros(8);
        let code = |p: f64| coarse_fine_digitize(pmac_voltage(p, 1.0), &ladder, &z).unwrap().0;
        assert_eq!(code(0.0), 0);
        assert_eq!(code(64.0), 8);
        assert_eq!(code(150.0), 15);
        let conv = CoarseFine.convert(pmac_voltage(3.0, 1.0), &ladder, &z).unwrap();
        assert_eq!(conv.comparisons, 8);
    }

    #[test]
    fn full_flash_examples() {
        let ladder = native();
        let z = ComparatorOffsets::zeros(15);
        let code = |p: f64| full_flash_digitize(pmac_voltage(p, 1.0), &ladder, &z).unwrap().0;
        assert_eq!(code(0.0), 0);
        assert_eq!(code(127.0), 15);
        let conv = FullFlash.convert(pmac_voltage(3.0, 1.0), &ladder, &z).unwrap();
        assert_eq!(conv.comparisons, 15);
    }

    #[test]
    fn wrong_offset_count_rejected() {
        let ladder = native();
        assert!(coarse_fine_digitize(Voltage::VDD, &ladder, &ComparatorOffsets::zeros(15)).is_err());
        assert!(full_flash_digitize(Voltage::VDD, &ladder, &ComparatorOffsets::zeros(8)).is_err());
    }

    #[test]
    fn staircase_and_scheme_equivalence_exhaustive() {
        for rho in [0.0, 0.5, 1.0, 2.0] {
            let ladder = InSramReference.build(4, 128, rho).unwrap();
            for p in 0..=240u32 {
                let v = pmac_voltage(f64::from(p), rho);
                let cf = coarse_fine_digitize(v, &ladder, &ComparatorOffsets::zeros(8)).unwrap();
                let ff = full_flash_digitize(v, &ladder, &ComparatorOffsets::zeros(15)).unwrap();
                assert_eq!(cf, ff, "p={p} rho={rho}");
                assert_eq!(cf.0, (p / 8).min(15), "p={p} rho={rho}");
            }
        }
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(dequantize(AdcCode(8), 128, 4).unwrap(), 64);
        assert_eq!(dequantize(AdcCode(0), 24, 3).unwrap(), 0);
        assert_eq!(dequantize(AdcCode(15), 128, 4).unwrap(), 120);
        assert!(matches!(dequantize(AdcCode(1), 24, 4), Err(CimError::Config(_))));
        assert!(dequantize(AdcCode(16), 128, 4).is_err());
    }

    #[test]
    fn config_validation() {
        AdcConfig::default().validate().unwrap();
        let mut c = AdcConfig {
            bits: 5,
            ..AdcConfig::default()
        };
        assert!(c.validate().is_err());
        c.ref_mode = "ideal".into();
        c.validate().unwrap();
        c.scheme = "sar".into();
        assert!(c.validate().is_err());
        let c = AdcConfig {
            cutoff: 1.0,
            ..AdcConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn adc_counts_comparisons() {
        let adc = Adc::new(&AdcConfig::default(), 16, 1.0).unwrap();
        let z = adc.zero_offsets();
        for p in 0..10 {
            adc.convert(pmac_voltage(f64::from(p), 1.0), &z).unwrap();
        }
        assert_eq!(adc.comparisons(), 80);
        assert_eq!(adc.threshold(), 128);
    }

    #[test]
    fn adc_rejects_fractional_buckets() {
        let cfg = AdcConfig {
            bits: 6,
            ref_mode: "ideal".into(),
            cutoff: 0.5,
            scheme: "full-flash".into(),
        };
        assert!(Adc::new(&cfg, 4, 1.0).is_err());
        Adc::new(&cfg, 8, 1.0).unwrap();
    }

    proptest! {
        #[test]
        fn codes_monotone_under_offsets(
            offs in prop::collection::vec(-0.01f64..0.01, 15),
            rho in 0.0f64..3.0,
        ) {
            let ladder = InSramReference.build(4, 128, rho).unwrap();
            let ff_off = ComparatorOffsets::new(offs.clone()).unwrap();
            let cf_off = ComparatorOffsets::new(offs[..8].to_vec()).unwrap();
            let mut prev = (0, 0);
            for p in 0..=240u32 {
                let v = pmac_voltage(f64::from(p), rho);
                let cf = coarse_fine_digitize(v, &ladder, &cf_off).unwrap().0;
                let ff = full_flash_digitize(v, &ladder, &ff_off).unwrap().0;
                prop_assert!(cf >= prev.0 && ff >= prev.1);
                prev = (cf, ff);
            }
        }

        #[test]
        fn fine_offset_is_local(
            k in 1usize..8,
            delta in -0.9f64..0.9,
            rho in 0.0f64..3.0,
        ) {
            let ladder = InSramReference.build(4, 128, rho).unwrap();
            // Offsets smaller than one step (8 pMAC).
            let step_v = ladder.level(1).value() - ladder.level(2).value();
            let mut perturbed = vec![0.0; 8];
            perturbed[k] = delta * step_v;
            let perturbed = ComparatorOffsets::new(perturbed).unwrap();
            let zero = ComparatorOffsets::zeros(8);
            for p in 0..=240i64 {
                let v = pmac_voltage(p as f64, rho);
                let a = coarse_fine_digitize(v, &ladder, &zero).unwrap();
                let b = coarse_fine_digitize(v, &ladder, &perturbed).unwrap();
                if a != b {
                    let near = [8 * k as i64, 8 * (8 + k) as i64]
                        .iter()
                        .any(|&lvl| (p - lvl).abs() < 8);
                    prop_assert!(near, "p={} changed with comparator {}", p, k);
                }
            }
        }
    }
}
