//! Generalization-regime value restrictions for the size and color spectra.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Spectra;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Neutral,
    Interpolation,
    Extrapolation,
}

/// Allowed size/color spectrum indices for one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttrSets {
    pub sizes: Vec<u8>,
    pub colors: Vec<u8>,
}

impl AttrSets {
    pub fn full(spectra: &Spectra) -> Self {
        AttrSets {
            sizes: (0..spectra.sizes).collect(),
            colors: (0..spectra.colors).collect(),
        }
    }
}

fn even_indices(n: u8) -> Vec<u8> {
    (0..n).filter(|v| v % 2 == 0).collect()
}

fn odd_indices(n: u8) -> Vec<u8> {
    (0..n).filter(|v| v % 2 == 1).collect()
}

fn lower_half(n: u8) -> Vec<u8> {
    (0..n / 2).collect()
}

fn upper_half(n: u8) -> Vec<u8> {
    (n / 2..n).collect()
}

/// Train/test value restrictions per attribute.
///
/// Interpolation trains on even-indexed size/color values and tests on the
/// odd-indexed ones; extrapolation trains on the lower half of each
/// spectrum and tests on the upper half; neutral leaves both splits
/// unrestricted.
pub fn split_regime(spectra: &Spectra, regime: Regime) -> Result<(AttrSets, AttrSets)> {
    if spectra.sizes < 4 || spectra.colors < 4 {
        return Err(Error::Config(
            "regime splits need size/color spectra with at least 4 values".into(),
        ));
    }
    Ok(match regime {
        Regime::Neutral => (AttrSets::full(spectra), AttrSets::full(spectra)),
        Regime::Interpolation => (
            AttrSets { sizes: even_indices(spectra.sizes), colors: even_indices(spectra.colors) },
            AttrSets { sizes: odd_indices(spectra.sizes), colors: odd_indices(spectra.colors) },
        ),
        Regime::Extrapolation => (
            AttrSets { sizes: lower_half(spectra.sizes), colors: lower_half(spectra.colors) },
            AttrSets { sizes: upper_half(spectra.sizes), colors: upper_half(spectra.colors) },
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEN: Spectra = Spectra { types: 5, sizes: 10, colors: 10 };

    #[test]
    fn interpolation_trains_on_even_indices() {
        let (train, test) = split_regime(&TEN, Regime::Interpolation).unwrap();
        assert_eq!(train.sizes, vec![0, 2, 4, 6, 8]);
        assert_eq!(test.sizes, vec![1, 3, 5, 7, 9]);
    }

    #[test]
    fn extrapolation_splits_into_halves() {
        let (train, test) = split_regime(&TEN, Regime::Extrapolation).unwrap();
        assert_eq!(train.sizes, vec![0, 1, 2, 3, 4]);
        assert_eq!(test.sizes, vec![5, 6, 7, 8, 9]);
        assert!(train.colors.iter().all(|v| !test.colors.contains(v)));
    }

    #[test]
    fn neutral_is_identity() {
        let (train, test) = split_regime(&TEN, Regime::Neutral).unwrap();
        assert_eq!(train, test);
        assert_eq!(train.sizes.len(), 10);
    }
}
