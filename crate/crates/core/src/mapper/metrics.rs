use serde::Serialize;

use crate::tensor::Tensor2;
use crate::{CimError, Result};

/// Reported SQNR when computed and reference agree exactly.
pub const SQNR_CEILING_DB: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorMetrics {
    pub mse: f64,
    pub max_abs: f64,
    /// Reference power over error power, capped at [`SQNR_CEILING_DB`].
    pub sqnr_db: f64,
    pub exact_match: f64,
}

pub fn error_metrics(computed: &Tensor2<i64>, reference: &Tensor2<i64>) -> Result<ErrorMetrics> {
    if computed.shape() != reference.shape() {
        return Err(CimError::shape(format!(
            "metrics over {:?} vs {:?}",
            computed.shape(),
            reference.shape()
        )));
    }
    let n = computed.data().len();
    if n == 0 {
        return Err(CimError::shape("metrics over empty tensors"));
    }
    let (mut err2, mut sig2, mut max_abs, mut matches) = (0.0, 0.0, 0.0f64, 0usize);
    for (&c, &r) in computed.data().iter().zip(reference.data()) {
        let e = (c - r) as f64;
        err2 += e * e;
        sig2 += (r as f64) * (r as f64);
        max_abs = max_abs.max(e.abs());
        matches += usize::from(c == r);
    }
    let sqnr_db = if err2 == 0.0 {
        SQNR_CEILING_DB
    } else if sig2 == 0.0 {
        -SQNR_CEILING_DB
    } else {
        (10.0 * (sig2 / err2).log10()).clamp(-SQNR_CEILING_DB, SQNR_CEILING_DB)
    };
    Ok(ErrorMetrics {
        mse: err2 / n as f64,
        max_abs,
        sqnr_db,
        exact_match: matches as f64 / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical() {
        let t = Tensor2::from_fn(3, 4, |r, c| (r * 4 + c) as i64 - 5);
        let m = error_metrics(&t, &t).unwrap();
        assert_eq!(
            (m.mse, m.max_abs, m.exact_match, m.sqnr_db),
            (0.0, 0.0, 1.0, SQNR_CEILING_DB)
        );
    }

    #[test]
    fn off_by_one() {
        let r = Tensor2::from_fn(3, 4, |r, c| (r * c) as i64);
        let m = error_metrics(&r.map(|v| v + 1), &r).unwrap();
        assert_eq!((m.mse, m.max_abs, m.exact_match), (1.0, 1.0, 0.0));
    }

    #[test]
    fn shape_mismatch() {
        assert!(error_metrics(&Tensor2::filled(2, 2, 0i64), &Tensor2::filled(2, 3, 0i64)).is_err());
    }

    proptest! {
        #[test]
        fn matches_recomputation(pairs in prop::collection::vec((-1000i64..1000, -1000i64..1000), 1..50)) {
            let n = pairs.len();
            let a = Tensor2::new(1, n, pairs.iter().map(|p| p.0).collect()).unwrap();
            let b = Tensor2::new(1, n, pairs.iter().map(|p| p.1).collect()).unwrap();
            let m = error_metrics(&a, &b).unwrap();
            let diffs: Vec<f64> = pairs.iter().map(|(x, y)| (x - y) as f64).collect();
            let mse = diffs.iter().map(|d| d * d).sum::<f64>() / n as f64;
            let power = pairs.iter().map(|p| (p.1 * p.1) as f64).sum::<f64>() / n as f64;
            prop_assert!((m.mse - mse).abs() <= 1e-9 * mse.max(1.0));
            prop_assert_eq!(m.max_abs, diffs.iter().fold(0.0f64, |a, d| a.max(d.abs())));
            prop_assert_eq!(m.exact_match, pairs.iter().filter(|p| p.0 == p.1).count() as f64 / n as f64);
            if mse > 0.0 && power > 0.0 {
                let want = 10.0 * (power / mse).log10();
                prop_assert!((m.sqnr_db - want.clamp(-200.0, 200.0)).abs() < 1e-9);
            }
            prop_assert!(m.sqnr_db.is_finite());
        }
    }
}
