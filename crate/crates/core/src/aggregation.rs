//! Robust aggregation of one round's client updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_math::{check_dims, elementwise_median, Params};
use crate::scalar::{stable_sum, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    TrimmedMean,
    Mean,
    CoordinateMedian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatorSpec {
    pub kind: AggregatorKind,
    /// Fraction trimmed from each side, in `[0, 0.5)`. Only read by
    /// [`AggregatorKind::TrimmedMean`].
    pub trim_fraction: f64,
}

impl Default for AggregatorSpec {
    fn default() -> Self {
        Self {
            kind: AggregatorKind::TrimmedMean,
            trim_fraction: 0.2,
        }
    }
}

impl AggregatorSpec {
    pub fn trimmed_mean(trim_fraction: f64) -> Self {
        Self {
            kind: AggregatorKind::TrimmedMean,
            trim_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.trim_fraction) {
            return Err(Error::InvalidParameter(format!(
                "trim_fraction must lie in [0, 0.5), got {}",
                self.trim_fraction
            )));
        }
        Ok(())
    }

    /// Values dropped from each side when aggregating `r` updates.
    pub fn trim_count(&self, r: usize) -> usize {
        match self.kind {
            AggregatorKind::TrimmedMean => (self.trim_fraction * r as f64).floor() as usize,
            _ => 0,
        }
    }
}

/// Combines `updates` coordinate by coordinate according to `spec`.
///
/// Trimmed mean sorts each coordinate's `r` values, drops `⌊β·r⌋` from each
/// end and averages the rest.
pub fn aggregate<T: Scalar, V: AsRef<[T]>>(updates: &[V], spec: &AggregatorSpec) -> Result<Params<T>> {
    spec.validate()?;
    let first = updates.first().ok_or(Error::Empty("aggregate"))?;
    let dim = first.as_ref().len();
    for u in updates {
        check_dims(dim, u.as_ref().len())?;
    }
    match spec.kind {
        AggregatorKind::CoordinateMedian => elementwise_median(updates),
        AggregatorKind::Mean => Ok(trimmed(updates, dim, 0)),
        AggregatorKind::TrimmedMean => {
            let r = updates.len();
            let cut = spec.trim_count(r);
            if r <= 2 * cut {
                return Err(Error::InvalidParameter(format!(
                    "trimming {cut} from each side of {r} updates leaves nothing"
                )));
            }
            Ok(trimmed(updates, dim, cut))
        }
    }
}

fn trimmed<T: Scalar, V: AsRef<[T]>>(updates: &[V], dim: usize, cut: usize) -> Params<T> {
    let r = updates.len();
    let keep = T::of_usize(r - 2 * cut);
    let mut column = Vec::with_capacity(r);
    let out = (0..dim)
        .map(|j| {
            column.clear();
            column.extend(updates.iter().map(|u| u.as_ref()[j]));
            if cut > 0 {
                column.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
            }
            stable_sum(column[cut..r - cut].iter().copied()) / keep
        })
        .collect();
    Params::from_vec_unchecked(out)
}
