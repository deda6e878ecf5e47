//! Calibrated energy, frequency and throughput model.
//!
//! This is a descriptive model: silicon measurements at a few supply
//! voltages are reproduced exactly and interpolated log-linearly in between.
//! Only the comparator count of the ADC comparison is mechanistic.

use serde::{Deserialize, Serialize};

use crate::adc::{CoarseFine, Digitizer, FullFlash};
use crate::charge::SupplyVoltage;
use crate::cim_macro::{MacroConfig, OUTPUTS};
use crate::{CimError, Result};

/// Reported macro area, mm^2.
pub const AREA_MM2: f64 = 0.0324;
/// Signal array (256 x 64 bits) in KB; throughput is normalized per 2 KB.
pub const SIGNAL_ARRAY_KB: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostAnchors {
    /// `(vdd, TOPS/W)` at 16 activated rows.
    pub efficiency: Vec<(f64, f64)>,
    /// `(vdd, Hz)`.
    pub frequency: Vec<(f64, f64)>,
    /// `(vdd, GOPS/2KB)` at 16 activated rows.
    pub throughput: Vec<(f64, f64)>,
    pub amu_energy_share: f64,
    pub adc_delay_share: f64,
    pub adc_saving: f64,
}

impl Default for CostAnchors {
    fn default() -> Self {
        CostAnchors {
            efficiency: vec![(0.6, 50.07), (0.9, 22.19), (1.2, 9.77)],
            frequency: vec![(0.6, 76.9e6), (0.9, 1.0 / 4.4e-9), (1.2, 435e6)],
            throughput: vec![(0.9, 45.54), (1.2, 89.04)],
            amu_energy_share: 0.114,
            // Measured share, not 1/pi.
            #[allow(clippy::approx_constant)]
            adc_delay_share: 0.318,
            adc_saving: 0.439,
        }
    }
}

fn check_vdd(vdd: f64) -> Result<()> {
    if !(SupplyVoltage::MIN..=SupplyVoltage::MAX).contains(&vdd) {
        return Err(CimError::domain(format!(
            "vdd {vdd} V outside the calibrated range [0.6, 1.2] V"
        )));
    }
    Ok(())
}

/// Piecewise log-linear interpolation; clamps to the end anchors.
fn log_interp(anchors: &[(f64, f64)], x: f64) -> f64 {
    let last = anchors.len() - 1;
    if x <= anchors[0].0 {
        return anchors[0].1;
    }
    if x >= anchors[last].0 {
        return anchors[last].1;
    }
    let i = anchors.iter().position(|a| a.0 > x).unwrap_or(last);
    let (x0, y0) = anchors[i - 1];
    let (x1, y1) = anchors[i];
    if x == x0 {
        return y0;
    }
    let t = (x - x0) / (x1 - x0);
    (y0.ln() + t * (y1.ln() - y0.ln())).exp()
}

impl CostAnchors {
    pub fn efficiency_at(&self, vdd: f64) -> Result<f64> {
        check_vdd(vdd)?;
        Ok(log_interp(&self.efficiency, vdd))
    }

    pub fn frequency_at(&self, vdd: f64) -> Result<f64> {
        check_vdd(vdd)?;
        Ok(log_interp(&self.frequency, vdd))
    }

    /// Fraction of the nominal `ops/cycle * f` throughput realized per 2 KB.
    ///
    /// The throughput anchors are not a constant multiple of the frequency
    /// anchors, so the factor is pinned at each anchor and interpolated
    /// linearly, held constant outside the anchored span.
    pub fn throughput_factor(&self, vdd: f64) -> Result<f64> {
        check_vdd(vdd)?;
        let factors: Vec<(f64, f64)> = self
            .throughput
            .iter()
            .map(|&(v, gops)| Ok((v, gops * 1e9 / (ops_per_cycle(16) * self.frequency_at(v)?))))
            .collect::<Result<_>>()?;
        let last = factors.len() - 1;
        if vdd <= factors[0].0 {
            return Ok(factors[0].1);
        }
        if vdd >= factors[last].0 {
            return Ok(factors[last].1);
        }
        let i = factors.iter().position(|a| a.0 > vdd).unwrap_or(last);
        let (x0, y0) = factors[i - 1];
        let (x1, y1) = factors[i];
        Ok(y0 + (y1 - y0) * (vdd - x0) / (x1 - x0))
    }
}

/// Ops per cycle: one multiply and one add per MAC, `rows x 8` MACs.
pub fn ops_per_cycle(activated_rows: u32) -> f64 {
    2.0 * f64::from(activated_rows) * OUTPUTS as f64
}

pub fn efficiency_at(vdd: f64) -> Result<f64> {
    CostAnchors::default().efficiency_at(vdd)
}

pub fn frequency_at(vdd: f64) -> Result<f64> {
    CostAnchors::default().frequency_at(vdd)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub amu: f64,
    pub periphery_adc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayBreakdown {
    pub adc: f64,
    pub other: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub vdd: f64,
    pub activated_rows: u32,
    pub ops_per_cycle: f64,
    pub tops_per_watt: f64,
    pub frequency_hz: f64,
    pub cycle_time_ns: f64,
    pub energy_per_cycle_j: f64,
    pub gops_nominal: f64,
    pub throughput_factor: f64,
    pub gops_per_2kb: f64,
    pub energy_breakdown: EnergyBreakdown,
    pub delay_breakdown: DelayBreakdown,
    pub area_mm2: f64,
}

pub fn throughput_report(config: &MacroConfig) -> Result<CostReport> {
    throughput_report_with(&CostAnchors::default(), config)
}

pub fn throughput_report_with(anchors: &CostAnchors, config: &MacroConfig) -> Result<CostReport> {
    let vdd = config.vdd.volts();
    let rows = config.activated_rows;
    let ops = ops_per_cycle(rows);
    let tops_per_watt = anchors.efficiency_at(vdd)?;
    let frequency_hz = anchors.frequency_at(vdd)?;
    let gops_nominal = ops * frequency_hz * 1e-9 * (2.0 / SIGNAL_ARRAY_KB);
    let throughput_factor = anchors.throughput_factor(vdd)?;
    Ok(CostReport {
        vdd,
        activated_rows: rows,
        ops_per_cycle: ops,
        tops_per_watt,
        frequency_hz,
        cycle_time_ns: 1e9 / frequency_hz,
        energy_per_cycle_j: ops / (tops_per_watt * 1e12),
        gops_nominal,
        throughput_factor,
        gops_per_2kb: gops_nominal * throughput_factor,
        energy_breakdown: EnergyBreakdown {
            amu: anchors.amu_energy_share,
            periphery_adc: 1.0 - anchors.amu_energy_share,
        },
        delay_breakdown: DelayBreakdown {
            adc: anchors.adc_delay_share,
            other: 1.0 - anchors.adc_delay_share,
        },
        area_mm2: AREA_MM2,
    })
}

/// Energy of one 4-bit conversion, in units of one comparator decision:
/// `comparators + reference generation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdcEnergyModel {
    /// Static reference ladder energy of a conventional R-ladder flash.
    pub ladder_reference: f64,
    /// Reference generation energy of the in-SRAM references.
    pub in_sram_reference: f64,
}

impl AdcEnergyModel {
    /// Default R-ladder reference cost, in comparator decisions.
    pub const LADDER_REFERENCE: f64 = 3.0;

    /// Solves the in-SRAM reference cost so the coarse-fine ADC saves
    /// `saving` of the R-ladder flash energy.
    pub fn calibrated(ladder_reference: f64, saving: f64) -> Self {
        let cf = CoarseFine.comparator_count(4) as f64;
        let flash = FullFlash.comparator_count(4) as f64;
        AdcEnergyModel {
            ladder_reference,
            in_sram_reference: (1.0 - saving) * (flash + ladder_reference) - cf,
        }
    }

    /// References cost nothing; only comparators count.
    pub fn comparators_only() -> Self {
        AdcEnergyModel {
            ladder_reference: 0.0,
            in_sram_reference: 0.0,
        }
    }
}

impl Default for AdcEnergyModel {
    fn default() -> Self {
        AdcEnergyModel::calibrated(Self::LADDER_REFERENCE, CostAnchors::default().adc_saving)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdcEnergyComparison {
    pub coarse_fine_comparators: usize,
    pub flash_comparators: usize,
    pub comparator_ratio: f64,
    pub coarse_fine_energy: f64,
    pub flash_energy: f64,
    pub energy_ratio: f64,
    pub saving: f64,
}

pub fn adc_energy_comparison(model: &AdcEnergyModel) -> AdcEnergyComparison {
    let cf = CoarseFine.comparator_count(4);
    let ff = FullFlash.comparator_count(4);
    let cf_e = cf as f64 + model.in_sram_reference;
    let ff_e = ff as f64 + model.ladder_reference;
    AdcEnergyComparison {
        coarse_fine_comparators: cf,
        flash_comparators: ff,
        comparator_ratio: cf as f64 / ff as f64,
        coarse_fine_energy: cf_e,
        flash_energy: ff_e,
        energy_ratio: cf_e / ff_e,
        saving: 1.0 - cf_e / ff_e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round(x: f64, digits: i32) -> f64 {
        let s = 10f64.powi(digits);
        (x * s).round() / s
    }

    fn cfg(vdd: f64, rows: u32) -> MacroConfig {
        MacroConfig {
            vdd: SupplyVoltage::new(vdd).unwrap(),
            activated_rows: rows,
            ..MacroConfig::default()
        }
    }

    #[test]
    fn efficiency_anchors() {
        assert_eq!(efficiency_at(0.6).unwrap(), 50.07);
        assert_eq!(efficiency_at(0.9).unwrap(), 22.19);
        assert_eq!(efficiency_at(1.2).unwrap(), 9.77);
        let mid = efficiency_at(0.75).unwrap();
        assert!(mid > 22.19 && mid < 50.07);
        assert!(efficiency_at(0.5).is_err());
        assert!(efficiency_at(1.3).is_err());
    }

    #[test]
    fn frequency_anchors() {
        assert_eq!(round(frequency_at(0.6).unwrap() / 1e6, 1), 76.9);
        assert_eq!(round(frequency_at(0.9).unwrap() / 1e6, 2), 227.27);
        assert_eq!(round(frequency_at(1.2).unwrap() / 1e6, 0), 435.0);
    }

    #[test]
    fn monotone_over_range() {
        let grid: Vec<f64> = (0..=60).map(|i| 0.6 + 0.01 * f64::from(i)).collect();
        let grid: Vec<f64> = grid.into_iter().map(|v| v.min(1.2)).collect();
        for w in grid.windows(2) {
            if w[0] == w[1] {
                continue;
            }
            assert!(efficiency_at(w[1]).unwrap() < efficiency_at(w[0]).unwrap());
            assert!(frequency_at(w[1]).unwrap() > frequency_at(w[0]).unwrap());
        }
    }

    #[test]
    fn throughput_anchors() {
        let r12 = throughput_report(&cfg(1.2, 16)).unwrap();
        let r09 = throughput_report(&cfg(0.9, 16)).unwrap();
        assert_eq!(round(r12.gops_per_2kb, 2), 89.04);
        assert_eq!(round(r09.gops_per_2kb, 2), 45.54);
        for v in [0.6, 0.75, 0.9, 1.2] {
            let a = throughput_report(&cfg(v, 16)).unwrap().gops_per_2kb;
            let b = throughput_report(&cfg(v, 8)).unwrap().gops_per_2kb;
            assert!((b - a / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn breakdowns_close() {
        let r = throughput_report(&cfg(0.9, 16)).unwrap();
        assert!((r.energy_breakdown.amu + r.energy_breakdown.periphery_adc - 1.0).abs() < 1e-9);
        assert!((r.delay_breakdown.adc + r.delay_breakdown.other - 1.0).abs() < 1e-9);
        assert_eq!(r.energy_breakdown.amu, 0.114);
        assert_eq!(r.delay_breakdown.adc, CostAnchors::default().adc_delay_share);
        assert!((r.energy_per_cycle_j - 256.0 / 22.19e12).abs() < 1e-24);
    }

    #[test]
    fn adc_comparison() {
        let c = adc_energy_comparison(&AdcEnergyModel::default());
        assert_eq!((c.coarse_fine_comparators, c.flash_comparators), (8, 15));
        assert_eq!(round(c.saving * 100.0, 1), 43.9);
        assert!(AdcEnergyModel::default().in_sram_reference < AdcEnergyModel::LADDER_REFERENCE);

        let z = adc_energy_comparison(&AdcEnergyModel::comparators_only());
        assert!((z.saving - (1.0 - 8.0 / 15.0)).abs() < 1e-15);
        assert_eq!(z.energy_ratio, z.comparator_ratio);
    }
}
