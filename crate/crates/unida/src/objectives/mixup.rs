//! Mixup coefficients and feature interpolation.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

/// Which pairs are interpolated for the rejection term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MixupMode {
    /// Source sample `i` with target sample `i`.
    #[default]
    Cross,
    /// Source sample `i` with source sample `(i + 1) mod B`, different classes only.
    Source,
    Off,
}

impl fmt::Display for MixupMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixupMode::Cross => "cross",
            MixupMode::Source => "source",
            MixupMode::Off => "off",
        })
    }
}

impl FromStr for MixupMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" => Ok(MixupMode::Cross),
            "source" => Ok(MixupMode::Source),
            "off" | "none" => Ok(MixupMode::Off),
            _ => Err(Error::config(format!("unknown mixup mode `{s}`"))),
        }
    }
}

/// `λ ~ Beta(α, α)` as `X / (X + Y)` with `X, Y ~ Gamma(α, 1)`.
pub fn sample_mix_coeff<R: Rng + ?Sized>(rng: &mut R, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::domain(format!("Beta shape must be positive, got {alpha}")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::domain(e.to_string()))?;
    let x = gamma.sample(rng);
    let y = gamma.sample(rng);
    let s = x + y;
    // both draws underflowing only happens for tiny alpha
    Ok(if s > 0.0 { x / s } else { 0.5 })
}

/// `λ·z_src + (1 − λ)·z_tgt`.
pub fn mix_features(z_src: ArrayView1<'_, f64>, z_tgt: ArrayView1<'_, f64>, lambda: f64) -> Result<Array1<f64>> {
    if z_src.len() != z_tgt.len() {
        return Err(Error::shape(format!(
            "cannot mix features of dim {} and {}",
            z_src.len(),
            z_tgt.len()
        )));
    }
    Ok(&z_src * lambda + &z_tgt * (1.0 - lambda))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixupSample {
    pub source_index: usize,
    /// Index into the target batch, or into the source batch for
    /// within-source mixup.
    pub target_index: usize,
    pub lambda: f64,
    pub mixed_feature: Array1<f64>,
    pub source_label: usize,
}

/// Pairing and coefficients for one iteration, fixed before the forward pass
/// so that a loss can be re-evaluated at perturbed parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MixPlan {
    /// `(first, second, λ)`: batch positions of the two mixed samples.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl MixPlan {
    /// Draws one plan. Cross mode pairs position `i` of both batches;
    /// source mode pairs source `i` with source `(i + 1) mod B` and skips
    /// same-class pairs.
    pub fn draw<R: Rng + ?Sized>(
        rng: &mut R,
        mode: MixupMode,
        source_labels: &[usize],
        n_target: usize,
        alpha: f64,
    ) -> Result<Self> {
        let ns = source_labels.len();
        let mut pairs = Vec::new();
        match mode {
            MixupMode::Off => {}
            MixupMode::Cross => {
                for i in 0..ns.min(n_target) {
                    pairs.push((i, i, sample_mix_coeff(rng, alpha)?));
                }
            }
            MixupMode::Source => {
                if ns >= 2 {
                    for i in 0..ns {
                        let j = (i + 1) % ns;
                        let lambda = sample_mix_coeff(rng, alpha)?;
                        if source_labels[i] != source_labels[j] {
                            pairs.push((i, j, lambda));
                        }
                    }
                }
            }
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn beta_two_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_mix_coeff(&mut rng, 2.0).unwrap()).collect();
        assert!(draws.iter().all(|l| (0.0..=1.0).contains(l)));
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        assert!((var - 0.05).abs() < 0.005, "var {var}");
    }

    #[test]
    fn seeded_draws_repeat() {
        let a: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            (0..20).map(|_| sample_mix_coeff(&mut r, 2.0).unwrap()).collect()
        };
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let b: Vec<f64> = (0..20).map(|_| sample_mix_coeff(&mut r, 2.0).unwrap()).collect();
        assert_eq!(a, b);
        assert!(matches!(sample_mix_coeff(&mut r, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn mix_cases() {
        let s = array![1.0, 0.0];
        let t = array![0.0, 1.0];
        assert_eq!(mix_features(s.view(), t.view(), 1.0).unwrap(), s);
        assert_eq!(mix_features(s.view(), t.view(), 0.0).unwrap(), t);
        assert_eq!(mix_features(s.view(), t.view(), 0.5).unwrap(), array![0.5, 0.5]);
        assert!(matches!(
            mix_features(s.view(), array![1.0].view(), 0.5),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn plans() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cross = MixPlan::draw(&mut rng, MixupMode::Cross, &[0, 1, 2], 2, 2.0).unwrap();
        assert_eq!(cross.pairs.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>(), vec![(0, 0), (1, 1)]);
        let src = MixPlan::draw(&mut rng, MixupMode::Source, &[0, 0, 1], 3, 2.0).unwrap();
        assert_eq!(src.pairs.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>(), vec![(1, 2), (2, 0)]);
        assert!(MixPlan::draw(&mut rng, MixupMode::Off, &[0, 1], 2, 2.0).unwrap().is_empty());
    }

    #[test]
    fn mode_round_trip() {
        for m in [MixupMode::Cross, MixupMode::Source, MixupMode::Off] {
            assert_eq!(m.to_string().parse::<MixupMode>().unwrap(), m);
        }
        assert!("both".parse::<MixupMode>().is_err());
    }
}
