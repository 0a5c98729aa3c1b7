//! Corpus-level value normalization into `[-5, 5]`.
//!
//! Pure scaling fit on the training split only, persisted with the dataset so
//! that evaluation can invert it exactly.

use serde::{Deserialize, Serialize};

use super::{CodecError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub scale: f64,
    pub offset: f64,
}

impl NormalizationSpec {
    pub const IDENTITY: NormalizationSpec = NormalizationSpec {
        scale: 1.0,
        offset: 0.0,
    };

    /// `scale = 5 / max |v - offset|` with offset fixed at 0. An all-zero
    /// corpus gets the identity spec.
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut max_abs = 0.0f64;
        let mut any = false;
        for v in values {
            any = true;
            max_abs = max_abs.max(v.abs());
        }
        if !any {
            return Err(CodecError::EmptyValues);
        }
        let scale = if max_abs == 0.0 { 1.0 } else { 5.0 / max_abs };
        Ok(NormalizationSpec { scale, offset: 0.0 })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.offset) * self.scale
    }

    pub fn invert(&self, u: f64) -> f64 {
        u / self.scale + self.offset
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_to_range() {
        let spec = NormalizationSpec::fit([-10.0, 10.0]).unwrap();
        assert_eq!(spec.scale, 0.5);
        assert_eq!(spec.apply(-10.0), -5.0);
        assert_eq!(spec.apply(10.0), 5.0);
    }

    #[test]
    fn degenerate_all_zero_is_identity() {
        let spec = NormalizationSpec::fit([0.0]).unwrap();
        assert_eq!(spec.scale, 1.0);
        assert_eq!(spec.apply(0.0), 0.0);
    }

    #[test]
    fn empty_errors() {
        assert!(NormalizationSpec::fit([]).is_err());
    }

    #[test]
    fn apply_invert_composition() {
        let spec = NormalizationSpec::fit([3.0, -17.5, 0.2]).unwrap();
        for v in [-17.5, -1.0, 0.0, 0.2, 3.0, 11.0] {
            let rt = spec.invert(spec.apply(v));
            assert!((rt - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }
}
