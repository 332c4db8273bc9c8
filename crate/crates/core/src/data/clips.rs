//! Clip segmentation and train/validation/test splits.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::params::rng_from_seed;

/// Start frames of the length-`t` windows with stride `t − overlap`; the
/// trailing remainder is dropped.
pub fn segment_clips(len: usize, t: usize, overlap: usize) -> Result<Vec<usize>> {
    if t == 0 {
        return Err(Error::config("clip_length", "must be at least 1"));
    }
    if t <= overlap {
        return Err(Error::config("overlap", format!("must be smaller than clip_length {t}, got {overlap}")));
    }
    if len < t {
        return Err(Error::Data(format!("video of {len} frames is shorter than one clip of {t}")));
    }
    let stride = t - overlap;
    Ok((0..=(len - t) / stride).map(|i| i * stride).collect())
}

/// Fractions of videos assigned to (train, validation, test).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitRatios {
    /// 41 validation and 41 test videos out of 538, the rest for training.
    pub const DEFAULT: SplitRatios = SplitRatios {
        train: 456.0 / 538.0,
        validation: 41.0 / 538.0,
        test: 41.0 / 538.0,
    };

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|&r| !(0.0..=1.0).contains(&r)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("split", format!("ratios {parts:?} must be in [0, 1] and sum to 1")));
        }
        Ok(())
    }

    /// Counts for `n` items: validation and test sizes are rounded to the
    /// nearest integer (halves up); training takes the remainder.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let val = (self.validation * n as f64).round() as usize;
        let test = (self.test * n as f64).round() as usize;
        if val + test > n {
            return Err(Error::config("split", format!("{n} items cannot hold {val} validation and {test} test items")));
        }
        Ok((n - val - test, val, test))
    }
}

/// Train, validation and test members.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle of `ids` cut into three disjoint, exhaustive parts.
pub fn split_dataset<T: Clone>(ids: &[T], ratios: SplitRatios, seed: u64) -> Result<Split<T>> {
    if ids.is_empty() {
        return Err(Error::Usage("cannot split an empty set".into()));
    }
    let (tr, va, _) = ratios.counts(ids.len())?;
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let pick = |r: &[usize]| r.iter().map(|&i| ids[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        train: pick(&order[..tr]),
        validation: pick(&order[tr..tr + va]),
        test: pick(&order[tr + va..]),
    })
}
