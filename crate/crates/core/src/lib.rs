//! Behavioral simulator of a charge-domain P-8T SRAM compute-in-memory macro.
//!
//! The macro multiplies 4-bit activations by 8-bit weights through bit-line
//! charge sharing. Every analog quantity is modeled in closed form:
//!
//! * [`charge`]: charge-sharing arithmetic, the DAC transfer and the
//!   multiply/accumulate voltage transforms.
//! * [`amu`]: one analog multiplication unit, phase by phase, plus the
//!   reference-column variant used to build ADC references.
//! * [`adc`]: reference ladders, comparator model, coarse-fine and full flash
//!   digitizers (selected by name through a registry), cutoff clipping.
//! * [`cim_macro`]: the 256x80 macro, weight bit-slicing, shift-add
//!   recombination and tiled matmul.
//! * [`variation`]: noise models, reproducible random sub-streams and the
//!   DAC Monte-Carlo harness.
//! * [`cost`]: the calibrated energy / frequency / throughput model.
//! * [`mapper`]: layer lowering, workloads and design-space sweeps.
//!
//! Voltages are normalized so that VDD = 1.0; [`charge::SupplyVoltage`]
//! converts to absolute volts at reporting boundaries.

pub mod adc;
pub mod amu;
pub mod charge;
pub mod cim_macro;
pub mod config;
pub mod cost;
mod error;
pub mod mapper;
pub mod tensor;
pub mod variation;

pub use error::{CimError, Result};
