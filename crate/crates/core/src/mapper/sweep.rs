//! Design-space sweeps over activated rows, ADC resolution, cutoff and
//! hardware errors.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{error_metrics, ErrorMetrics};
use super::workload::Workload;
use crate::adc::{cutoff_threshold, AdcConfig, IdealReference, InSramReference};
use crate::cim_macro::{CimMacro, MacroConfig, BIT_COLUMNS, SIGNAL_AMU_COLUMNS};
use crate::cost::{efficiency_at, ops_per_cycle};
use crate::variation::NoiseModel;
use crate::{CimError, Result};

pub const GRID_ROWS: [u32; 3] = [4, 8, 16];
pub const GRID_ADC_BITS: [u32; 4] = [3, 4, 5, 6];

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub rows: Vec<u32>,
    pub adc_bits: Vec<u32>,
    pub cutoff: Vec<f64>,
    pub hw_errors: Vec<bool>,
    /// Seeded repeats per point; repeat `r` runs with seed `base + r`.
    #[serde(default = "one")]
    pub repeats: u32,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            rows: vec![16],
            adc_bits: vec![4],
            cutoff: vec![0.5],
            hw_errors: vec![true],
            repeats: 1,
        }
    }
}

impl SweepGrid {
    pub fn from_json(text: &str) -> Result<Self> {
        let g: SweepGrid = serde_json::from_str(text).map_err(|e| CimError::config(format!("grid: {e}")))?;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() || self.adc_bits.is_empty() || self.cutoff.is_empty() || self.hw_errors.is_empty() {
            return Err(CimError::config("sweep grid axes must be non-empty"));
        }
        if self.repeats == 0 {
            return Err(CimError::config("sweep repeats must be at least 1"));
        }
        if let Some(r) = self.rows.iter().find(|r| !GRID_ROWS.contains(r)) {
            return Err(CimError::config(format!("grid rows {r} not in {GRID_ROWS:?}")));
        }
        if let Some(b) = self.adc_bits.iter().find(|b| !GRID_ADC_BITS.contains(b)) {
            return Err(CimError::config(format!("grid adc_bits {b} not in {GRID_ADC_BITS:?}")));
        }
        if let Some(c) = self.cutoff.iter().find(|c| !(0.0..1.0).contains(*c)) {
            return Err(CimError::config(format!("grid cutoff {c} outside [0, 1)")));
        }
        Ok(())
    }

    /// The Cartesian product, in canonical order.
    pub fn points(&self, base_seed: u64) -> Vec<DesignPoint> {
        let mut out = Vec::new();
        for &rows in &self.rows {
            for &adc_bits in &self.adc_bits {
                for &cutoff in &self.cutoff {
                    for &hw_errors in &self.hw_errors {
                        for r in 0..self.repeats {
                            out.push(DesignPoint {
                                rows,
                                adc_bits,
                                cutoff,
                                hw_errors,
                                seed: base_seed.wrapping_add(u64::from(r)),
                            });
                        }
                    }
                }
            }
        }
        sort_points(&mut out, |p| p);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DesignPoint {
    pub rows: u32,
    pub adc_bits: u32,
    pub cutoff: f64,
    pub hw_errors: bool,
    pub seed: u64,
}

impl DesignPoint {
    /// Macro configuration for this point. The in-SRAM ladder is used only
    /// where it exists (4 bits, threshold 128); elsewhere the ideal ladder.
    pub fn macro_config(&self, base: &MacroConfig) -> Result<MacroConfig> {
        let threshold = cutoff_threshold(self.cutoff, self.rows)?;
        let native = self.adc_bits == 4 && threshold == 128;
        let ref_mode = if base.adc.ref_mode == InSramReference::NAME && native {
            InSramReference::NAME
        } else {
            IdealReference::NAME
        };
        let noise = if self.hw_errors {
            NoiseModel {
                enabled: true,
                ..base.noise.clone()
            }
        } else {
            NoiseModel::disabled()
        };
        let cfg = MacroConfig {
            activated_rows: self.rows,
            adc: AdcConfig {
                bits: self.adc_bits,
                ref_mode: ref_mode.into(),
                cutoff: self.cutoff,
                scheme: base.adc.scheme.clone(),
            },
            noise,
            seed: self.seed,
            ..base.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn sort_points<T>(items: &mut [T], key: impl Fn(&T) -> &DesignPoint) {
    items.sort_by(|a, b| {
        let (a, b) = (key(a), key(b));
        a.rows
            .cmp(&b.rows)
            .then(a.adc_bits.cmp(&b.adc_bits))
            .then(a.cutoff.total_cmp(&b.cutoff))
            .then(a.hw_errors.cmp(&b.hw_errors))
            .then(a.seed.cmp(&b.seed))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerMetrics {
    pub name: String,
    #[serde(flatten)]
    pub metrics: ErrorMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub point: DesignPoint,
    pub threshold: u32,
    pub ref_mode: String,
    pub scheme: String,
    pub accuracy: f64,
    pub exact_accuracy: f64,
    pub float_accuracy: f64,
    /// `(float_accuracy - accuracy)` in percentage points.
    pub accuracy_drop_pp: f64,
    /// Bit-column readouts whose exact pMAC reached the threshold.
    pub clipped_fraction: f64,
    pub efficiency_tops_w: f64,
    pub dac_conversions_per_op: f64,
    pub adc_comparisons_per_op: f64,
    pub layers: Vec<LayerMetrics>,
    /// Exact pMAC histogram per layer, levels `0..=15 * rows`.
    #[serde(skip)]
    pub pmac_histograms: Vec<Vec<u64>>,
}

/// Runs the workload through the macro at `config` and compares every layer
/// against the exact integer product of the same layer inputs.
pub fn evaluate_config(config: &MacroConfig, workload: &Workload) -> Result<SweepRecord> {
    let mac = CimMacro::new(config.clone())?;
    let pass = workload.forward(Some(&mac))?;
    let exact_accuracy = workload.exact_accuracy()?;
    let accuracy = pass.accuracy(&workload.labels);
    let layers = workload
        .layers
        .iter()
        .zip(pass.accumulators.iter().zip(&pass.references))
        .map(|(l, (acc, exact))| {
            Ok(LayerMetrics {
                name: l.spec.name.clone(),
                metrics: error_metrics(acc, exact)?,
            })
        })
        .collect::<Result<_>>()?;
    let ops = ops_per_cycle(config.activated_rows);
    let cycles = pass.readouts as f64 / BIT_COLUMNS as f64;
    let record = SweepRecord {
        point: DesignPoint {
            rows: config.activated_rows,
            adc_bits: config.adc.bits,
            cutoff: config.adc.cutoff,
            hw_errors: config.noise.enabled,
            seed: config.seed,
        },
        threshold: mac.adc().threshold(),
        ref_mode: config.adc.ref_mode.clone(),
        scheme: config.adc.scheme.clone(),
        accuracy,
        exact_accuracy,
        float_accuracy: workload.float_accuracy,
        accuracy_drop_pp: (workload.float_accuracy - accuracy) * 100.0,
        clipped_fraction: pass.clipped as f64 / (pass.readouts as f64).max(1.0),
        efficiency_tops_w: efficiency_at(config.vdd.volts())?,
        dac_conversions_per_op: (config.activated_rows as usize * SIGNAL_AMU_COLUMNS) as f64 / ops,
        adc_comparisons_per_op: mac.adc().comparisons() as f64 / (cycles * ops).max(1.0),
        layers,
        pmac_histograms: pass.pmac_histograms,
    };
    check_finite(&record)?;
    Ok(record)
}

fn check_finite(r: &SweepRecord) -> Result<()> {
    let scalars = [
        r.accuracy,
        r.accuracy_drop_pp,
        r.clipped_fraction,
        r.efficiency_tops_w,
        r.dac_conversions_per_op,
        r.adc_comparisons_per_op,
    ];
    let layer_vals = r.layers.iter().flat_map(|l| {
        [
            l.metrics.mse,
            l.metrics.max_abs,
            l.metrics.sqnr_db,
            l.metrics.exact_match,
        ]
    });
    if scalars.into_iter().chain(layer_vals).all(f64::is_finite) {
        Ok(())
    } else {
        Err(CimError::Invariant("sweep record holds a non-finite metric".into()))
    }
}

pub fn evaluate_point(point: &DesignPoint, base: &MacroConfig, workload: &Workload) -> Result<SweepRecord> {
    evaluate_config(&point.macro_config(base)?, workload)
}

/// Evaluates every grid point concurrently; output order is canonical
/// `(rows, adc_bits, cutoff, hw_errors, seed)`.
pub fn run_sweep(grid: &SweepGrid, base: &MacroConfig, workload: &Workload) -> Result<Vec<SweepRecord>> {
    grid.validate()?;
    let points = grid.points(base.seed);
    // Reject the whole grid up front rather than failing half way.
    for p in &points {
        p.macro_config(base)?;
    }
    let mut records: Vec<SweepRecord> = points
        .par_iter()
        .map(|p| evaluate_point(p, base, workload))
        .collect::<Result<_>>()?;
    sort_points(&mut records, |r| &r.point);
    Ok(records)
}

pub fn records_to_csv(records: &[SweepRecord]) -> String {
    let mut header: Vec<String> = [
        "rows",
        "adc_bits",
        "cutoff",
        "hw_errors",
        "seed",
        "threshold",
        "ref_mode",
        "scheme",
        "accuracy",
        "exact_accuracy",
        "float_accuracy",
        "accuracy_drop_pp",
        "clipped_fraction",
        "efficiency_tops_w",
        "dac_conversions_per_op",
        "adc_comparisons_per_op",
    ]
    .map(String::from)
    .to_vec();
    if let Some(first) = records.first() {
        for l in &first.layers {
            for m in ["mse", "max_abs", "sqnr_db", "exact_match"] {
                header.push(format!("{}_{m}", l.name));
            }
        }
    }
    let mut s = header.join(",") + "\n";
    for r in records {
        let p = &r.point;
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.rows,
            p.adc_bits,
            p.cutoff,
            p.hw_errors,
            p.seed,
            r.threshold,
            r.ref_mode,
            r.scheme,
            r.accuracy,
            r.exact_accuracy,
            r.float_accuracy,
            r.accuracy_drop_pp,
            r.clipped_fraction,
            r.efficiency_tops_w,
            r.dac_conversions_per_op,
            r.adc_comparisons_per_op
        );
        for l in &r.layers {
            let m = &l.metrics;
            let _ = write!(s, ",{},{},{},{}", m.mse, m.max_abs, m.sqnr_db, m.exact_match);
        }
        s.push('\n');
    }
    s
}

/// Long-format pMAC histograms: one row per (point, layer, level).
pub fn histograms_to_csv(records: &[SweepRecord], layer_names: &[String]) -> String {
    let mut s = String::from("rows,adc_bits,cutoff,hw_errors,seed,layer,pmac,count\n");
    for r in records {
        let p = &r.point;
        for (name, hist) in layer_names.iter().zip(&r.pmac_histograms) {
            for (level, count) in hist.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{name},{level},{count}",
                    p.rows, p.adc_bits, p.cutoff, p.hw_errors, p.seed
                );
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(SweepGrid::from_json(r#"{"rows":[16],"adc_bits":[4],"cutoff":[0.5],"hw_errors":[true]}"#).is_ok());
        assert!(SweepGrid::from_json(r#"{"rows":[],"adc_bits":[4],"cutoff":[0.5],"hw_errors":[true]}"#).is_err());
        assert!(SweepGrid::from_json(r#"{"rows":[12],"adc_bits":[4],"cutoff":[0.5],"hw_errors":[true]}"#).is_err());
        assert!(SweepGrid::from_json(r#"{"rows":[16],"adc_bits":[9],"cutoff":[0.5],"hw_errors":[true]}"#).is_err());
        assert!(SweepGrid::from_json(r#"{"rows":[16],"adc_bits":[4],"cutoff":[1.0],"hw_errors":[true]}"#).is_err());
        assert!(
            SweepGrid::from_json(r#"{"rows":[16],"adc_bits":[4],"cutoff":[0.5],"hw_errors":[true],"x":1}"#).is_err()
        );
    }

    #[test]
    fn points_are_canonical() {
        let g = SweepGrid {
            rows: vec![16, 8],
            adc_bits: vec![5, 3],
            cutoff: vec![0.5, 0.0],
            hw_errors: vec![true, false],
            repeats: 2,
        };
        let pts = g.points(10);
        assert_eq!(pts.len(), 32);
        assert_eq!(
            (
                pts[0].rows,
                pts[0].adc_bits,
                pts[0].cutoff,
                pts[0].hw_errors,
                pts[0].seed
            ),
            (8, 3, 0.0, false, 10)
        );
        assert_eq!(pts[1].seed, 11);
        assert_eq!(pts.last().unwrap().rows, 16);
    }

    #[test]
    fn native_point_keeps_in_sram_ladder() {
        let base = MacroConfig::default();
        let p = DesignPoint {
            rows: 16,
            adc_bits: 4,
            cutoff: 0.5,
            hw_errors: false,
            seed: 3,
        };
        let c = p.macro_config(&base).unwrap();
        assert_eq!(
            (c.adc.ref_mode.as_str(), c.noise.enabled, c.seed),
            ("in-sram", false, 3)
        );
        let c = DesignPoint { rows: 8, ..p }.macro_config(&base).unwrap();
        assert_eq!(c.adc.ref_mode, "ideal");
    }

    #[test]
    fn fractional_buckets_rejected() {
        let p = DesignPoint {
            rows: 4,
            adc_bits: 6,
            cutoff: 0.5,
            hw_errors: false,
            seed: 1,
        };
        let cfg = p.macro_config(&MacroConfig::default()).unwrap();
        assert!(CimMacro::new(cfg).is_err());
    }
}
