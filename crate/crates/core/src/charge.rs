//! Charge-sharing arithmetic.
//!
//! All voltages here are normalized to the supply (VDD = 1.0) and all
//! capacitances to one computation bit-line (C_CBL = 1.0). With those units
//! every noiseless voltage in the macro is a dyadic rational with a small
//! numerator, so sums of them are exact in `f64` and a signal voltage can tie
//! bit-for-bit with a reference voltage built from the same charge.

use serde::{Deserialize, Serialize};

use crate::{CimError, Result};

/// Number of local arrays (and CBLs) sharing one accumulation bit-line.
pub const CBLS_PER_ABL: usize = 16;

/// Largest product of a 4-bit activation and a 1-bit weight.
pub const MAX_PRODUCT: u32 = 15;

/// A bit-line voltage as a fraction of VDD.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Voltage(f64);

impl Voltage {
    pub const VDD: Voltage = Voltage(1.0);
    pub const GROUND: Voltage = Voltage(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(CimError::domain(format!("normalized voltage {value} outside [0, 1]")));
        }
        Ok(Voltage(value))
    }

    /// Clamps to the rails; used after adding noise, which is not a
    /// charge-sharing step and may leave [0, VDD].
    pub fn saturating(value: f64) -> Self {
        Voltage(value.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Supply voltage in volts, within the macro's 0.6 V - 1.2 V operating range.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SupplyVoltage(f64);

impl SupplyVoltage {
    pub const MIN: f64 = 0.6;
    pub const MAX: f64 = 1.2;

    pub fn new(volts: f64) -> Result<Self> {
        if !(Self::MIN..=Self::MAX).contains(&volts) {
            return Err(CimError::domain(format!(
                "supply voltage {volts} V outside [{}, {}] V",
                Self::MIN,
                Self::MAX
            )));
        }
        Ok(SupplyVoltage(volts))
    }

    pub fn volts(self) -> f64 {
        self.0
    }

    /// Absolute volts of a normalized voltage.
    pub fn to_volts(self, v: Voltage) -> f64 {
        v.0 * self.0
    }

    /// Expresses an absolute voltage delta (e.g. a noise sample) as a
    /// fraction of this supply.
    pub fn normalize(self, volts: f64) -> f64 {
        volts / self.0
    }
}

impl TryFrom<f64> for SupplyVoltage {
    type Error = CimError;

    fn try_from(volts: f64) -> Result<Self> {
        SupplyVoltage::new(volts)
    }
}

impl From<SupplyVoltage> for f64 {
    fn from(v: SupplyVoltage) -> f64 {
        v.0
    }
}

/// A capacitor holding a voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargeNode {
    capacitance: f64,
    voltage: Voltage,
}

impl ChargeNode {
    pub fn new(capacitance: f64, voltage: Voltage) -> Result<Self> {
        if !(capacitance.is_finite() && capacitance > 0.0) {
            return Err(CimError::domain(format!(
                "capacitance must be positive, got {capacitance}"
            )));
        }
        Ok(ChargeNode { capacitance, voltage })
    }

    /// A unit (C_CBL) capacitor.
    pub fn unit(voltage: Voltage) -> Self {
        ChargeNode {
            capacitance: 1.0,
            voltage,
        }
    }

    pub fn capacitance(&self) -> f64 {
        self.capacitance
    }

    pub fn voltage(&self) -> Voltage {
        self.voltage
    }

    pub fn set_voltage(&mut self, voltage: Voltage) {
        self.voltage = voltage;
    }

    pub fn charge(&self) -> f64 {
        self.capacitance * self.voltage.0
    }
}

/// A 4-bit input activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct InputActivation(u8);

impl InputActivation {
    pub const MAX: u8 = 15;

    pub fn new(x: u8) -> Result<Self> {
        if x > Self::MAX {
            return Err(CimError::domain(format!("activation {x} exceeds 4 bits")));
        }
        Ok(InputActivation(x))
    }

    pub fn all() -> impl Iterator<Item = InputActivation> {
        (0..=Self::MAX).map(InputActivation)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Bit `i` (0 = LSB) of the activation.
    pub fn bit(self, i: u32) -> bool {
        (self.0 >> i) & 1 == 1
    }
}

impl TryFrom<u8> for InputActivation {
    type Error = CimError;

    fn try_from(x: u8) -> Result<Self> {
        InputActivation::new(x)
    }
}

impl From<InputActivation> for u8 {
    fn from(x: InputActivation) -> u8 {
        x.0
    }
}

/// One stored weight bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct WeightBit(pub bool);

impl WeightBit {
    pub const ZERO: WeightBit = WeightBit(false);
    pub const ONE: WeightBit = WeightBit(true);

    pub fn value(self) -> u32 {
        self.0 as u32
    }
}

impl From<bool> for WeightBit {
    fn from(b: bool) -> Self {
        WeightBit(b)
    }
}

/// Voltage after all `nodes` are shorted together: total charge over total
/// capacitance.
pub fn share_charges(nodes: &[ChargeNode]) -> Result<Voltage> {
    if nodes.is_empty() {
        return Err(CimError::domain("charge sharing needs at least one node"));
    }
    let (charge, capacitance) = nodes
        .iter()
        .fold((0.0, 0.0), |(q, c), n| (q + n.charge(), c + n.capacitance));
    // Rounding can push the mean an ulp outside the span of the inputs.
    let (lo, hi) = nodes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), n| {
        (lo.min(n.voltage.0), hi.max(n.voltage.0))
    });
    Ok(Voltage((charge / capacitance).clamp(lo, hi)))
}

/// In-memory DAC transfer: `(16 - x) / 16` of VDD.
pub fn dac_convert(x: InputActivation) -> Voltage {
    Voltage(f64::from(16 - x.0) / 16.0)
}

/// Bit-cell multiplication: a '1' keeps the CBL voltage, a '0' pulls the CBL
/// to VDD (the zero-product voltage).
pub fn multiply(v_cbl: Voltage, w: WeightBit) -> Voltage {
    if w.0 {
        v_cbl
    } else {
        Voltage::VDD
    }
}

/// Charge sharing of 16 CBLs with the precharged ABL, `rho = C_ABL / C_CBL`.
pub fn accumulate(cbl_voltages: &[Voltage], rho: f64) -> Result<Voltage> {
    if cbl_voltages.len() != CBLS_PER_ABL {
        return Err(CimError::domain(format!(
            "accumulation needs {CBLS_PER_ABL} CBL voltages, got {}",
            cbl_voltages.len()
        )));
    }
    check_rho(rho)?;
    let sum: f64 = cbl_voltages.iter().map(|v| v.0).sum();
    Ok(share_with_abl(sum, rho))
}

/// [`accumulate`] given the in-order sum of the 16 CBL voltages; `rho` must
/// already be validated.
pub(crate) fn share_with_abl(cbl_sum: f64, rho: f64) -> Voltage {
    Voltage(((cbl_sum + rho) / (16.0 + rho)).clamp(0.0, 1.0))
}

/// Noiseless ABL voltage for a (possibly fractional) pMAC value.
///
/// Performs the same floating-point steps as [`accumulate`] on CBLs encoding
/// integer products, so both agree to the bit for integer `pmac`.
pub fn pmac_voltage(pmac: f64, rho: f64) -> Voltage {
    let sum = (256.0 - pmac) / 16.0;
    Voltage(((sum + rho) / (16.0 + rho)).clamp(0.0, 1.0))
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(CimError::domain(format!(
            "capacitance ratio rho must be finite and >= 0, got {rho}"
        )));
    }
    Ok(())
}
