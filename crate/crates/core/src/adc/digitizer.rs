use std::sync::{Arc, OnceLock};

use super::ladder::{ReferenceLadder, Registry};
use super::{compare, AdcCode, ComparatorOffsets};
use crate::charge::Voltage;
use crate::{CimError, Result};

/// Result of one conversion, with the number of comparator decisions spent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conversion {
    pub code: AdcCode,
    pub comparisons: usize,
}

/// A flash conversion scheme.
pub trait Digitizer: Send + Sync {
    fn name(&self) -> &'static str;

    /// Physical comparators (and offsets) needed at `bits` resolution.
    fn comparator_count(&self, bits: u32) -> usize;

    fn convert(&self, v_abl: Voltage, ladder: &ReferenceLadder, offsets: &ComparatorOffsets) -> Result<Conversion>;
}

fn check_offsets(offsets: &ComparatorOffsets, want: usize) -> Result<()> {
    if offsets.len() != want {
        return Err(CimError::domain(format!(
            "expected {want} comparator offsets, got {}",
            offsets.len()
        )));
    }
    Ok(())
}

/// One coarse comparator against the mid level picks a half range, then a
/// thermometer of `2^(bits-1) - 1` fine comparators resolves it. The fine
/// comparators are shared between halves, so fine comparator `k` (offset
/// index `k`) sees level `k` or level `mid + k`.
#[derive(Debug, Default)]
pub struct CoarseFine;

impl CoarseFine {
    pub const NAME: &'static str = "coarse-fine";
}

impl Digitizer for CoarseFine {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn comparator_count(&self, bits: u32) -> usize {
        1 << (bits - 1)
    }

    fn convert(&self, v_abl: Voltage, ladder: &ReferenceLadder, offsets: &ComparatorOffsets) -> Result<Conversion> {
        let mid = self.comparator_count(ladder.bits());
        check_offsets(offsets, mid)?;
        let msb = compare(v_abl, ladder.level(mid), offsets[0]);
        let base = if msb { mid } else { 0 };
        let fine = (1..mid)
            .filter(|&k| compare(v_abl, ladder.level(base + k), offsets[k]))
            .count();
        Ok(Conversion {
            code: AdcCode((base + fine) as u32),
            comparisons: mid,
        })
    }
}

/// One comparator per level, all evaluated.
#[derive(Debug, Default)]
pub struct FullFlash;

impl FullFlash {
    pub const NAME: &'static str = "full-flash";
}

impl Digitizer for FullFlash {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn comparator_count(&self, bits: u32) -> usize {
        (1 << bits) - 1
    }

    fn convert(&self, v_abl: Voltage, ladder: &ReferenceLadder, offsets: &ComparatorOffsets) -> Result<Conversion> {
        check_offsets(offsets, ladder.len())?;
        let ones = ladder
            .levels()
            .iter()
            .zip(offsets.iter())
            .filter(|(&level, &off)| compare(v_abl, level, off))
            .count();
        Ok(Conversion {
            code: AdcCode(ones as u32),
            comparisons: ladder.len(),
        })
    }
}

pub fn digitizers() -> &'static Registry<dyn Digitizer> {
    static REGISTRY: OnceLock<Registry<dyn Digitizer>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut r: Registry<dyn Digitizer> = Registry::empty();
        r.register(CoarseFine::NAME, Arc::new(CoarseFine))
            .register(FullFlash::NAME, Arc::new(FullFlash));
        r
    })
}
