use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use crate::amu::{ref_column_voltage, RefPattern};
use crate::charge::{pmac_voltage, Voltage};
use crate::{CimError, Result};

/// Comparison levels of a flash ADC, strictly decreasing in voltage.
///
/// `level(n)` for `n` in `1..2^bits` is the voltage of pMAC decision point
/// `n`; a larger `n` means a lower voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceLadder {
    bits: u32,
    levels: Vec<Voltage>,
}

impl ReferenceLadder {
    pub fn new(levels: Vec<Voltage>) -> Result<Self> {
        let n = levels.len() + 1;
        if !n.is_power_of_two() || n < 2 {
            return Err(CimError::domain(format!(
                "a ladder needs 2^bits - 1 levels, got {}",
                levels.len()
            )));
        }
        if levels.windows(2).any(|w| w[1] >= w[0]) {
            return Err(CimError::domain("reference ladder is not strictly decreasing"));
        }
        Ok(ReferenceLadder {
            bits: n.trailing_zeros(),
            levels,
        })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Level `n`, 1-based.
    pub fn level(&self, n: usize) -> Voltage {
        self.levels[n - 1]
    }

    pub fn levels(&self) -> &[Voltage] {
        &self.levels
    }
}

/// A way of producing the reference ladder.
pub trait ReferenceSource: Send + Sync {
    fn name(&self) -> &'static str;

    fn build(&self, bits: u32, threshold: u32, rho: f64) -> Result<ReferenceLadder>;
}

/// References generated by the AMU_REF columns: level N stores N ones.
#[derive(Debug, Default)]
pub struct InSramReference;

impl InSramReference {
    pub const NAME: &'static str = "in-sram";
}

impl ReferenceSource for InSramReference {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn build(&self, bits: u32, threshold: u32, rho: f64) -> Result<ReferenceLadder> {
        if bits != 4 {
            return Err(CimError::config(format!(
                "in-SRAM references only provide 4-bit ladders, requested {bits} bits"
            )));
        }
        if threshold != 128 {
            return Err(CimError::config(format!(
                "in-SRAM references sit at pMAC 8N (threshold 128), requested threshold {threshold}"
            )));
        }
        let levels = (1..=15u8)
            .map(|n| ref_column_voltage(RefPattern::new(n)?, rho))
            .collect::<Result<Vec<_>>>()?;
        ReferenceLadder::new(levels)
    }
}

/// Exact references at pMAC `N * threshold / 2^bits`, for any resolution.
#[derive(Debug, Default)]
pub struct IdealReference;

impl IdealReference {
    pub const NAME: &'static str = "ideal";
}

impl ReferenceSource for IdealReference {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn build(&self, bits: u32, threshold: u32, rho: f64) -> Result<ReferenceLadder> {
        if !(1..=12).contains(&bits) {
            return Err(CimError::config(format!("unsupported ADC resolution {bits}")));
        }
        crate::charge::check_rho(rho)?;
        let step = f64::from(threshold) / f64::from(1u32 << bits);
        let levels = (1..(1u32 << bits))
            .map(|n| pmac_voltage(f64::from(n) * step, rho))
            .collect();
        ReferenceLadder::new(levels)
    }
}

/// Name-keyed table of interchangeable implementations.
pub struct Registry<T: ?Sized> {
    entries: BTreeMap<&'static str, Arc<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn empty() -> Self {
        Registry {
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, item: Arc<T>) -> &mut Self {
        self.entries.insert(name, item);
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries.get(name).cloned().ok_or_else(|| {
            CimError::config(format!(
                "unknown name '{name}', expected one of: {}",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}

impl<T: ?Sized> std::fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

pub fn reference_sources() -> &'static Registry<dyn ReferenceSource> {
    static REGISTRY: OnceLock<Registry<dyn ReferenceSource>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut r: Registry<dyn ReferenceSource> = Registry::empty();
        r.register(InSramReference::NAME, Arc::new(InSramReference))
            .register(IdealReference::NAME, Arc::new(IdealReference));
        r
    })
}
