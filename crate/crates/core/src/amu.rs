//! Analog multiplication unit (AMU).
//!
//! An AMU is 16 local arrays side by side, each a column of 16 bit-cells with
//! its own computation bit-line (CBL). One multiplication goes through three
//! phases: precharge, DA conversion (grouped discharge followed by charge
//! sharing over the intermediate bit-lines) and per-column multiplication.

use serde::{Deserialize, Serialize};

use crate::charge::{
    self, accumulate, dac_convert, multiply, share_charges, ChargeNode, InputActivation, Voltage, WeightBit,
    CBLS_PER_ABL,
};
use crate::{CimError, Result};

pub const LOCAL_ARRAYS: usize = 16;
pub const CELLS_PER_ARRAY: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PeripheralType {
    TypeA,
    /// Carries the eDAC-controlled pass switch between two iBL segments.
    TypeB,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalArray {
    /// Indexed by cell row.
    pub cells: [WeightBit; CELLS_PER_ARRAY],
    pub peripheral: PeripheralType,
    pub cbl: ChargeNode,
}

/// Partition of the 16 CBL indices into binary-weighted discharge groups.
///
/// `groups[k]` is discharged by input bit `3 - k` and has `2^(3-k)` members;
/// `always_on` keeps its precharge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupMap {
    groups: [Vec<usize>; 4],
    always_on: usize,
}

impl GroupMap {
    pub fn new(groups: [Vec<usize>; 4], always_on: usize) -> Result<Self> {
        let mut seen = [false; LOCAL_ARRAYS];
        for (k, group) in groups.iter().enumerate() {
            let want = 1usize << (3 - k);
            if group.len() != want {
                return Err(CimError::config(format!(
                    "discharge group {k} has {} members, expected {want}",
                    group.len()
                )));
            }
        }
        for &idx in groups.iter().flatten().chain(std::iter::once(&always_on)) {
            if idx >= LOCAL_ARRAYS || seen[idx] {
                return Err(CimError::config(format!(
                    "group map index {idx} out of range or repeated"
                )));
            }
            seen[idx] = true;
        }
        Ok(GroupMap { groups, always_on })
    }

    pub fn groups(&self) -> &[Vec<usize>; 4] {
        &self.groups
    }

    pub fn always_on(&self) -> usize {
        self.always_on
    }

    /// Input bit that discharges CBL `idx`, if any.
    pub fn discharge_bit(&self, idx: usize) -> Option<u32> {
        self.groups.iter().position(|g| g.contains(&idx)).map(|k| 3 - k as u32)
    }

    /// Type-B peripherals sit at the last array of each discharge group,
    /// isolating its iBL segment from the next one until eDAC closes.
    fn peripheral_of(&self, idx: usize) -> PeripheralType {
        if self.groups.iter().any(|g| g.last() == Some(&idx)) {
            PeripheralType::TypeB
        } else {
            PeripheralType::TypeA
        }
    }
}

impl Default for GroupMap {
    /// Contiguous MSB-first grouping: {0-7}, {8-11}, {12, 13}, {14}, 15 always on.
    fn default() -> Self {
        GroupMap {
            groups: [(0..8).collect(), (8..12).collect(), vec![12, 13], vec![14]],
            always_on: 15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Precharged,
    Converted,
    Multiplied,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Idle => "Idle",
            Phase::Precharged => "Precharged",
            Phase::Converted => "Converted",
            Phase::Multiplied => "Multiplied",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmuState {
    local_arrays: Vec<LocalArray>,
    group_map: GroupMap,
    phase: Phase,
}

impl AmuState {
    /// Builds an idle AMU; `weights[row][col]` is the cell at `row` of local
    /// array `col`.
    pub fn new(weights: &[[WeightBit; LOCAL_ARRAYS]; CELLS_PER_ARRAY], group_map: GroupMap) -> Self {
        let local_arrays = (0..LOCAL_ARRAYS)
            .map(|col| LocalArray {
                cells: std::array::from_fn(|row| weights[row][col]),
                peripheral: group_map.peripheral_of(col),
                cbl: ChargeNode::unit(Voltage::GROUND),
            })
            .collect();
        AmuState {
            local_arrays,
            group_map,
            phase: Phase::Idle,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn local_arrays(&self) -> &[LocalArray] {
        &self.local_arrays
    }

    pub fn group_map(&self) -> &GroupMap {
        &self.group_map
    }

    pub fn cbl_voltages(&self) -> [Voltage; LOCAL_ARRAYS] {
        std::array::from_fn(|c| self.local_arrays[c].cbl.voltage())
    }

    fn expect(&self, phase: Phase) -> Result<()> {
        if self.phase != phase {
            return Err(CimError::Phase {
                expected: phase.name(),
                found: self.phase.name(),
            });
        }
        Ok(())
    }

    pub fn precharge(mut self) -> Result<Self> {
        self.expect(Phase::Idle)?;
        for la in &mut self.local_arrays {
            la.cbl.set_voltage(Voltage::VDD);
        }
        self.phase = Phase::Precharged;
        Ok(self)
    }

    pub fn dac_phase(self, x: InputActivation) -> Result<Self> {
        self.dac_phase_with_error(x, 0.0)
    }

    /// DA conversion with an additive error (normalized) on the shared
    /// post-conversion voltage. Every CBL sees the same perturbation.
    pub fn dac_phase_with_error(mut self, x: InputActivation, error: f64) -> Result<Self> {
        self.expect(Phase::Precharged)?;
        for idx in 0..LOCAL_ARRAYS {
            if let Some(bit) = self.group_map.discharge_bit(idx) {
                if x.bit(bit) {
                    self.local_arrays[idx].cbl.set_voltage(Voltage::GROUND);
                }
            }
        }
        let nodes: Vec<ChargeNode> = self.local_arrays.iter().map(|la| la.cbl).collect();
        let shared = share_charges(&nodes)?;
        let shared = Voltage::saturating(shared.value() + error);
        for la in &mut self.local_arrays {
            la.cbl.set_voltage(shared);
        }
        self.phase = Phase::Converted;
        Ok(self)
    }

    pub fn mult_phase(mut self, row: usize) -> Result<Self> {
        self.expect(Phase::Converted)?;
        if row >= CELLS_PER_ARRAY {
            return Err(CimError::domain(format!("row {row} out of range 0..16")));
        }
        for la in &mut self.local_arrays {
            let v = multiply(la.cbl.voltage(), la.cells[row]);
            la.cbl.set_voltage(v);
        }
        self.phase = Phase::Multiplied;
        Ok(self)
    }

    /// Hands the CBL charges to the accumulation bit-lines and returns to
    /// idle, yielding the 16 product voltages.
    pub fn release(mut self) -> Result<(Self, [Voltage; LOCAL_ARRAYS])> {
        self.expect(Phase::Multiplied)?;
        let products = self.cbl_voltages();
        self.phase = Phase::Idle;
        Ok((self, products))
    }
}

/// The 16 product voltages of one AMU for input `x` against one weight row.
pub fn amu_products(x: InputActivation, weight_row: &[WeightBit; LOCAL_ARRAYS]) -> [Voltage; LOCAL_ARRAYS] {
    amu_products_with_error(x, weight_row, 0.0)
}

/// As [`amu_products`] with a DAC error shared by all columns.
pub fn amu_products_with_error(
    x: InputActivation,
    weight_row: &[WeightBit; LOCAL_ARRAYS],
    dac_error: f64,
) -> [Voltage; LOCAL_ARRAYS] {
    let v = Voltage::saturating(dac_convert(x).value() + dac_error);
    std::array::from_fn(|c| multiply(v, weight_row[c]))
}

/// Count of cells storing '1' in the selected row of a reference column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefPattern(u8);

impl RefPattern {
    pub fn new(n_ones: u8) -> Result<Self> {
        if usize::from(n_ones) > CBLS_PER_ABL {
            return Err(CimError::domain(format!("reference pattern {n_ones} > 16")));
        }
        Ok(RefPattern(n_ones))
    }

    pub fn n_ones(self) -> u8 {
        self.0
    }
}

/// Reference voltage of one reference column.
///
/// The reference AMUs all convert input '1000' (half VDD); the `N` arrays
/// storing '1' keep half VDD, the rest return to VDD, and the column shares
/// charge through the same accumulation topology as a signal column.
pub fn ref_column_voltage(pattern: RefPattern, rho: f64) -> Result<Voltage> {
    let half = dac_convert(InputActivation::new(8)?);
    let cbls: Vec<Voltage> = (0..CBLS_PER_ABL)
        .map(|i| multiply(half, WeightBit(i < usize::from(pattern.0))))
        .collect();
    accumulate(&cbls, rho)
}

/// Closed-form `(N/2 + (16 - N) + rho) / (16 + rho)`.
pub fn ref_column_formula(pattern: RefPattern, rho: f64) -> Result<Voltage> {
    charge::check_rho(rho)?;
    let n = f64::from(pattern.0);
    Voltage::new((n / 2.0 + (16.0 - n) + rho) / (16.0 + rho))
}
