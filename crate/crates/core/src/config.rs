//! The single JSON document configuring a run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adc::AdcConfig;
use crate::charge::SupplyVoltage;
use crate::cim_macro::MacroConfig;
use crate::variation::NoiseModel;
use crate::{CimError, Result};

/// Environment variable consulted when neither the command line nor the
/// config document sets a seed.
pub const SEED_ENV: &str = "CIM_FORGE_SEED";
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Supply voltage, volts.
    pub vdd: f64,
    pub activated_rows: u32,
    /// C_ABL / C_CBL.
    pub rho: f64,
    pub seed: Option<u64>,
    pub adc: AdcConfig,
    pub noise: NoiseModel,
    /// When set, commands write `<output_dir>/<command>.<ext>` instead of
    /// standard output.
    pub output_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = MacroConfig::default();
        RunConfig {
            vdd: m.vdd.volts(),
            activated_rows: m.activated_rows,
            rho: m.rho,
            seed: None,
            adc: m.adc,
            noise: m.noise,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CimError::config(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CimError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string_pretty(&value).expect("value serializes") + "\n"
    }

    /// Seed precedence: explicit override, then the document, then the
    /// environment value, then [`DEFAULT_SEED`].
    pub fn resolve_seed(&self, cli: Option<u64>, env: Option<&str>) -> Result<u64> {
        if let Some(s) = cli.or(self.seed) {
            return Ok(s);
        }
        match env {
            Some(v) => v
                .trim()
                .parse()
                .map_err(|_| CimError::config(format!("{SEED_ENV}='{v}' is not a u64"))),
            None => Ok(DEFAULT_SEED),
        }
    }

    pub fn macro_config(&self, seed: u64) -> Result<MacroConfig> {
        let cfg = MacroConfig {
            vdd: SupplyVoltage::new(self.vdd).map_err(|e| CimError::Config(e.to_string()))?,
            activated_rows: self.activated_rows,
            rho: self.rho,
            adc: self.adc.clone(),
            noise: self.noise.clone(),
            seed,
        };
        cfg.validate()?;
        // Surface operating-point errors (e.g. fractional ADC buckets) early.
        crate::adc::Adc::new(&cfg.adc, cfg.activated_rows, cfg.rho)?;
        Ok(cfg)
    }
}
