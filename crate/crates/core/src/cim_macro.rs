//! The 256x80 macro: 16 AMU rows by 5 AMU columns (4 signal + 1 reference).
//!
//! Each AMU row receives one 4-bit activation per cycle, broadcast across the
//! row. 8-bit weights are bit-sliced over 64 signal bit-columns, column
//! `n * 8 + b` holding bit `b` of output `n`'s weights. Every bit-column
//! accumulates on its ABL, is digitized by its own ADC, and the 8 codes of
//! an output are recombined by shift-add with bit 7 weighted `-128`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adc::{check_rows, clip_pmac, Adc, AdcCode, AdcConfig, ComparatorOffsets};
use crate::charge::{
    accumulate, dac_convert, multiply, share_with_abl, InputActivation, SupplyVoltage, Voltage, WeightBit, CBLS_PER_ABL,
};
use crate::tensor::Tensor2;
use crate::variation::{domain, substream, NoiseModel};
use crate::{CimError, Result};

pub const AMU_ROWS: usize = 16;
pub const OUTPUTS: usize = 8;
pub const WEIGHT_BITS: usize = 8;
pub const BIT_COLUMNS: usize = OUTPUTS * WEIGHT_BITS;
pub const SIGNAL_AMU_COLUMNS: usize = BIT_COLUMNS / 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroConfig {
    pub vdd: SupplyVoltage,
    pub activated_rows: u32,
    /// C_ABL / C_CBL.
    pub rho: f64,
    pub adc: AdcConfig,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Default for MacroConfig {
    fn default() -> Self {
        MacroConfig {
            vdd: SupplyVoltage::new(0.9).expect("0.9 V is in range"),
            activated_rows: 16,
            rho: 1.0,
            adc: AdcConfig::default(),
            noise: NoiseModel::default(),
            seed: 1,
        }
    }
}

impl MacroConfig {
    /// Noise off, full-resolution clip-free readout.
    pub fn ideal(activated_rows: u32) -> Result<Self> {
        Ok(MacroConfig {
            activated_rows,
            adc: AdcConfig::ideal(activated_rows)?,
            noise: NoiseModel::disabled(),
            ..MacroConfig::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_rows(self.activated_rows)?;
        crate::charge::check_rho(self.rho).map_err(|e| CimError::Config(e.to_string()))?;
        self.adc.validate()?;
        self.noise.validate()
    }

    /// Four activated rows are only used for analysis sweeps; silicon runs 8
    /// or 16.
    pub fn is_analysis_mode(&self) -> bool {
        self.activated_rows == 4
    }
}

/// Signed 8-bit weights for one cycle: 16 input rows by 8 outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WeightTile {
    pub values: [[i8; OUTPUTS]; AMU_ROWS],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitSlicedWeights {
    columns: [[WeightBit; AMU_ROWS]; BIT_COLUMNS],
}

impl BitSlicedWeights {
    pub fn column(&self, output: usize, bit: usize) -> &[WeightBit; AMU_ROWS] {
        &self.columns[output * WEIGHT_BITS + bit]
    }

    pub fn by_index(&self, column: usize) -> &[WeightBit; AMU_ROWS] {
        &self.columns[column]
    }

    /// Two's-complement reassembly.
    pub fn reassemble(&self) -> WeightTile {
        let mut values = [[0i8; OUTPUTS]; AMU_ROWS];
        for (r, row) in values.iter_mut().enumerate() {
            for (n, v) in row.iter_mut().enumerate() {
                let byte = (0..WEIGHT_BITS)
                    .filter(|&b| self.column(n, b)[r].0)
                    .fold(0u8, |acc, b| acc | (1 << b));
                *v = byte as i8;
            }
        }
        WeightTile { values }
    }
}

pub fn bit_slice(weights: &WeightTile) -> BitSlicedWeights {
    let columns = std::array::from_fn(|idx| {
        let (n, b) = (idx / WEIGHT_BITS, idx % WEIGHT_BITS);
        std::array::from_fn(|r| WeightBit((weights.values[r][n] as u8 >> b) & 1 == 1))
    });
    BitSlicedWeights { columns }
}

/// One bit-column readout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PMacSample {
    pub exact: u32,
    pub v_abl: Voltage,
    pub code: AdcCode,
    pub dequantized: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct MacOutput(pub [i64; OUTPUTS]);

/// Shift-add of the 8 dequantized bit-column values of one output.
pub fn recombine(deq: &[u32; WEIGHT_BITS]) -> i64 {
    let low: i64 = (0..WEIGHT_BITS - 1).map(|b| i64::from(deq[b]) << b).sum();
    low - (i64::from(deq[WEIGHT_BITS - 1]) << (WEIGHT_BITS - 1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacCycle {
    pub output: MacOutput,
    /// Indexed by bit-column `n * 8 + b`.
    pub samples: Vec<PMacSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatmulRun {
    pub output: Tensor2<i64>,
    /// Count of exact pMAC values per level, `0..=15 * rows`.
    pub pmac_histogram: Vec<u64>,
    /// Bit-column readouts whose exact pMAC reached the threshold.
    pub clipped: u64,
}

fn shift_add(samples: &[PMacSample; BIT_COLUMNS]) -> [i64; OUTPUTS] {
    std::array::from_fn(|n| {
        let deq = std::array::from_fn(|b| samples[n * WEIGHT_BITS + b].dequantized);
        recombine(&deq)
    })
}

/// A macro instance: configuration, ADC and its static comparator offsets.
#[derive(Debug)]
pub struct CimMacro {
    config: MacroConfig,
    adc: Adc,
    offsets: Vec<ComparatorOffsets>,
}

impl CimMacro {
    pub fn new(config: MacroConfig) -> Result<Self> {
        config.validate()?;
        let adc = Adc::new(&config.adc, config.activated_rows, config.rho)?;
        let offsets = (0..BIT_COLUMNS)
            .map(|c| {
                let mut rng = substream(config.seed, &[domain::OFFSETS, c as u64]);
                config
                    .noise
                    .sample_comparator_offsets(adc.comparator_count(), config.vdd, &mut rng)
            })
            .collect();
        Ok(CimMacro { config, adc, offsets })
    }

    pub fn config(&self) -> &MacroConfig {
        &self.config
    }

    pub fn adc(&self) -> &Adc {
        &self.adc
    }

    pub fn rows(&self) -> usize {
        self.config.activated_rows as usize
    }

    pub fn comparator_offsets(&self, column: usize) -> &ComparatorOffsets {
        &self.offsets[column]
    }

    fn check_inputs(&self, inputs: &[InputActivation]) -> Result<()> {
        if inputs.len() != self.rows() {
            return Err(CimError::shape(format!(
                "{} inputs for {} activated rows",
                inputs.len(),
                self.rows()
            )));
        }
        Ok(())
    }

    fn dac_error(&self, x: InputActivation, rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        let n = &self.config.noise;
        self.config.vdd.normalize(n.sample_dac_noise(self.config.vdd, x, rng))
    }

    fn abl_error(&self, rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        self.config.vdd.normalize(self.config.noise.sample_abl_noise(rng))
    }

    fn readout(&self, exact: u32, cbls: &[Voltage], abl_error: f64, column: usize) -> Result<PMacSample> {
        self.convert(exact, accumulate(cbls, self.config.rho)?, abl_error, column)
    }

    fn convert(&self, exact: u32, v: Voltage, abl_error: f64, column: usize) -> Result<PMacSample> {
        let v_abl = Voltage::saturating(v.value() + abl_error);
        let code = self.adc.convert(v_abl, &self.offsets[column])?;
        Ok(PMacSample {
            exact,
            v_abl,
            code,
            dequantized: self.adc.dequantize(code)?,
        })
    }

    /// Reads one bit-column on its own, with per-row DAC errors drawn from
    /// the `(seed, cycle..., column)` stream.
    pub fn pmac_column(
        &self,
        inputs: &[InputActivation],
        col: &[WeightBit; AMU_ROWS],
        column: usize,
        cycle: &[u64],
    ) -> Result<PMacSample> {
        self.check_inputs(inputs)?;
        if column >= BIT_COLUMNS {
            return Err(CimError::domain(format!("bit-column {column} out of range")));
        }
        let mut path = vec![domain::COLUMN];
        path.extend_from_slice(cycle);
        path.push(column as u64);
        let mut rng = substream(self.config.seed, &path);
        let mut cbls = [Voltage::VDD; CBLS_PER_ABL];
        let mut exact = 0;
        for (r, &x) in inputs.iter().enumerate() {
            let err = self.dac_error(x, &mut rng);
            let v = Voltage::saturating(dac_convert(x).value() + err);
            cbls[r] = multiply(v, col[r]);
            exact += u32::from(x.value()) * col[r].value();
        }
        let abl = self.abl_error(&mut rng);
        self.readout(exact, &cbls, abl, column)
    }

    /// One full cycle: 16 (or fewer) activations against a weight tile,
    /// producing 8 shift-added outputs.
    pub fn mac_cycle(&self, inputs: &[InputActivation], weights: &WeightTile, cycle: &[u64]) -> Result<MacCycle> {
        self.check_inputs(inputs)?;
        let mut path = vec![domain::CYCLE];
        path.extend_from_slice(cycle);
        let samples = self.cycle_samples(inputs, &bit_slice(weights), &path)?;
        Ok(MacCycle {
            output: MacOutput(shift_add(&samples)),
            samples: samples.to_vec(),
        })
    }

    fn cycle_samples(
        &self,
        inputs: &[InputActivation],
        sliced: &BitSlicedWeights,
        path: &[u64],
    ) -> Result<[PMacSample; BIT_COLUMNS]> {
        let mut rng = substream(self.config.seed, path);

        // CBL voltage per (row, AMU, stored bit): a '1' holds the DAC output
        // with that AMU's error, a '0' and idle rows read VDD. Indexing by the
        // bit keeps the column loop free of data-dependent branches.
        let mut select = [[[1.0f64; 2]; SIGNAL_AMU_COLUMNS]; AMU_ROWS];
        let mut values = [0u32; AMU_ROWS];
        for (r, &x) in inputs.iter().enumerate() {
            values[r] = u32::from(x.value());
            for slot in select[r].iter_mut() {
                let err = self.dac_error(x, &mut rng);
                slot[1] = Voltage::saturating(dac_convert(x).value() + err).value();
            }
        }

        let mut samples = [PMacSample {
            exact: 0,
            v_abl: Voltage::VDD,
            code: AdcCode(0),
            dequantized: 0,
        }; BIT_COLUMNS];
        for (column, sample) in samples.iter_mut().enumerate() {
            let bits = sliced.by_index(column);
            let amu = column / CBLS_PER_ABL;
            let mut exact = 0;
            // Same summation order as `accumulate` over rows 0..16.
            let mut sum = 0.0;
            for (r, bit) in bits.iter().enumerate() {
                let b = usize::from(bit.0);
                exact += values[r] * b as u32;
                sum += select[r][amu][b];
            }
            let abl = self.abl_error(&mut rng);
            let v = share_with_abl(sum, self.config.rho);
            *sample = self.convert(exact, v, abl, column)?;
        }
        Ok(samples)
    }

    pub fn matmul(&self, x: &Tensor2<u8>, w: &Tensor2<i8>) -> Result<Tensor2<i64>> {
        Ok(self.matmul_tagged(x, w, 0)?.output)
    }

    /// Tiled matmul. `tag` separates the noise streams of different calls
    /// (e.g. network layers) sharing one macro instance.
    ///
    /// K is cut into chunks of `activated_rows` and N into chunks of 8, with
    /// zero padding; tile results are summed digitally at full precision.
    pub fn matmul_tagged(&self, x: &Tensor2<u8>, w: &Tensor2<i8>, tag: u64) -> Result<MatmulRun> {
        let (m_dim, k_dim) = x.shape();
        let n_dim = w.cols();
        if m_dim == 0 || k_dim == 0 || n_dim == 0 {
            return Err(CimError::shape("matmul dimensions must be non-empty"));
        }
        if w.rows() != k_dim {
            return Err(CimError::shape(format!(
                "activations {:?} do not match weights {:?}",
                x.shape(),
                w.shape()
            )));
        }
        if let Some(&bad) = x.data().iter().find(|&&v| v > InputActivation::MAX) {
            return Err(CimError::domain(format!("activation {bad} exceeds 4 bits")));
        }
        let rows = self.rows();
        let k_tiles = k_dim.div_ceil(rows);
        let n_tiles = n_dim.div_ceil(OUTPUTS);
        let levels = 15 * rows + 1;
        let threshold = self.adc.threshold();
        let mut tiles = Vec::with_capacity(k_tiles * n_tiles);
        for kt in 0..k_tiles {
            for nt in 0..n_tiles {
                let mut tile = WeightTile::default();
                for r in 0..rows.min(k_dim - kt * rows) {
                    for n in 0..OUTPUTS.min(n_dim - nt * OUTPUTS) {
                        tile.values[r][n] = w.get(kt * rows + r, nt * OUTPUTS + n);
                    }
                }
                tiles.push(bit_slice(&tile));
            }
        }

        let per_row: Vec<(Vec<i64>, Vec<u64>, u64)> = (0..m_dim)
            .into_par_iter()
            .map(|m| -> Result<_> {
                let mut acc = vec![0i64; n_dim];
                let mut hist = vec![0u64; levels];
                let mut clipped = 0u64;
                for kt in 0..k_tiles {
                    let inputs: Vec<InputActivation> = (0..rows)
                        .map(|r| {
                            let k = kt * rows + r;
                            let v = if k < k_dim { x.get(m, k) } else { 0 };
                            InputActivation::new(v)
                        })
                        .collect::<Result<_>>()?;
                    for nt in 0..n_tiles {
                        let path = [domain::CYCLE, tag, m as u64, kt as u64, nt as u64];
                        let samples = self.cycle_samples(&inputs, &tiles[kt * n_tiles + nt], &path)?;
                        for s in &samples {
                            hist[s.exact as usize] += 1;
                            clipped += u64::from(s.exact >= threshold);
                        }
                        let output = shift_add(&samples);
                        for (n, v) in output.into_iter().enumerate() {
                            let col = nt * OUTPUTS + n;
                            if col < n_dim {
                                acc[col] += v;
                            }
                        }
                    }
                }
                Ok((acc, hist, clipped))
            })
            .collect::<Result<_>>()?;

        let mut histogram = vec![0u64; levels];
        let mut clipped = 0;
        let mut data = Vec::with_capacity(m_dim * n_dim);
        for (acc, hist, c) in per_row {
            data.extend(acc);
            histogram.iter_mut().zip(hist).for_each(|(h, v)| *h += v);
            clipped += c;
        }
        Ok(MatmulRun {
            output: Tensor2::new(m_dim, n_dim, data)?,
            pmac_histogram: histogram,
            clipped,
        })
    }
}

/// What an ideal analog front end would hand to the shift-adders: each
/// bit-column pMAC clipped below `threshold` and floored to its bucket.
pub fn quantized_pmac(exact: u32, threshold: u32, adc_bits: u32) -> u32 {
    let step = threshold >> adc_bits;
    clip_pmac(exact, threshold) / step * step
}
