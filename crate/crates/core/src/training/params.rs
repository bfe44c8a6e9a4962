//! Learning parameters and presentation-count formulas.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ratio::Fraction;

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("ratios must satisfy 0 < r1 < r2 <= 1, got r1={r1}, r2={r2}")]
    Ratios { r1: f64, r2: f64 },
    #[error("r1*k = {0} is an integer")]
    IntegralR1k(f64),
    #[error("r1*k gap {gap} is below sqrt(k)/k^b = {needed} for b={b}")]
    Gap { gap: f64, needed: f64, b: u32 },
    #[error("learning rate {eta} outside (0, 1/(4k)] = (0, {max}]")]
    LearningRate { eta: f64, max: f64 },
    #[error("threshold must be positive, got {0}")]
    Threshold(f64),
    #[error("marking probability {p} outside [r2, 1] = [{r2}, 1]")]
    MarkProbability { p: f64, r2: f64 },
    #[error("noise slack delta must be positive, got {0}")]
    Delta(f64),
    #[error("threshold {tau} does not exceed 1, the potential a fresh neuron gets from a top-level showing")]
    FreshNeuronFires { tau: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LearnMode {
    NoiseFree,
    Noisy { p: Fraction, delta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnParams {
    pub r1: Fraction,
    pub r2: Fraction,
    pub eta: f64,
    pub tau: f64,
    /// `(r2 - r1) / (r1 + r2)`.
    pub epsilon: f64,
    pub b: u32,
    pub mode: LearnMode,
}

/// `r1 k - ceil(r1 k - 1)`, the distance from `r1 k` down to the next smaller integer.
pub fn r1k_gap(k: usize, r1: Fraction) -> f64 {
    let floor = r1.floor_mul(k);
    let prod = r1.numer() as f64 * k as f64 / r1.denom() as f64;
    if r1.mul_is_integer(k) {
        1.0
    } else {
        prod - floor as f64
    }
}

/// Whether `r1 k` is fractional with gap at least `sqrt(k) / k^b`.
///
/// Decided exactly: `gap^2 k^(2b) >= k` on integers, `gap = (num k mod den) / den`.
pub fn satisfies_gap(k: usize, r1: Fraction, b: u32) -> bool {
    if r1.mul_is_integer(k) {
        return false;
    }
    let den = r1.denom() as u128;
    let rem = (r1.numer() as u128 * k as u128) % den;
    // rem^2 k^(2b) >= k den^2, with saturation on overflow (large side wins)
    let lhs = (rem * rem).checked_mul((k as u128).checked_pow(2 * b).unwrap_or(u128::MAX));
    let rhs = k as u128 * den * den;
    lhs.is_none_or(|l| l >= rhs)
}

/// Smallest `b >= 1` meeting the `r1 k` gap condition.
pub fn minimal_gap_exponent(k: usize, r1: Fraction) -> Option<u32> {
    (1..=64).find(|&b| satisfies_gap(k, r1, b))
}

/// Showings per concept sufficient in the noise-free case:
/// `ceil(4/(3 eta k) lmax log2 k + 3/(eta k eps) + b log2 k / log2(16/15))`.
pub fn sigma_noise_free(k: usize, eta: f64, lmax: usize, epsilon: f64, b: u32) -> u64 {
    let k = k as f64;
    let lg = k.log2();
    let growth = 4.0 / (3.0 * eta * k) * (lmax as f64 * lg);
    let approach = 3.0 / (eta * k * epsilon);
    let decay = b as f64 * lg / (16.0f64 / 15.0).log2();
    (growth + approach + decay).ceil() as u64
}

/// Noisy-case showing count with an explicit leading constant `c_prime`:
/// `c' (1/(eta k)) (lmax log2 k + (r2 k + 1 - r2) / (eta r2^(3/2) (r2 - r1))) + log2 k`.
pub fn sigma_noisy(k: usize, eta: f64, lmax: usize, r1: f64, r2: f64, c_prime: f64) -> u64 {
    let kf = k as f64;
    let lg = kf.log2();
    let inner = lmax as f64 * lg + (r2 * kf + 1.0 - r2) / (eta * r2.powf(1.5) * (r2 - r1));
    (c_prime / (eta * kf) * inner + lg).ceil() as u64
}

/// In-set weight target under noisy showings, `1 / sqrt(p k + 1 - p)`.
pub fn noisy_weight_target(k: usize, p: f64) -> f64 {
    1.0 / (p * k as f64 + 1.0 - p).sqrt()
}

/// Default noise slack `((r2 - r1) / r2) / 50`.
pub fn default_delta(r1: f64, r2: f64) -> f64 {
    (r2 - r1) / r2 / 50.0
}

impl LearnParams {
    /// Noise-free learning: `eta = 1/(4k)`, `tau = (r1 + r2) sqrt(k) / 2`,
    /// `b` the smallest exponent meeting the gap condition.
    pub fn noise_free(k: usize, r1: Fraction, r2: Fraction) -> Result<Self, ParamError> {
        check_ratios(r1, r2)?;
        let b = minimal_gap_exponent(k, r1).ok_or(ParamError::IntegralR1k(r1.to_f64() * k as f64))?;
        let params = Self {
            r1,
            r2,
            eta: 1.0 / (4.0 * k as f64),
            tau: (r1.to_f64() + r2.to_f64()) * (k as f64).sqrt() / 2.0,
            epsilon: epsilon(r1, r2),
            b,
            mode: LearnMode::NoiseFree,
        };
        params.validate(k)?;
        Ok(params)
    }

    /// Noisy learning with a directly chosen `eta`; `tau = r2 k wbar / (1 + 10 delta)`.
    pub fn noisy(k: usize, r1: Fraction, r2: Fraction, p: Fraction, eta: f64, delta: Option<f64>) -> Result<Self, ParamError> {
        check_ratios(r1, r2)?;
        let delta = delta.unwrap_or_else(|| default_delta(r1.to_f64(), r2.to_f64()));
        if !(delta > 0.0) {
            return Err(ParamError::Delta(delta));
        }
        let wbar = noisy_weight_target(k, p.to_f64());
        let params = Self {
            r1,
            r2,
            eta,
            tau: r2.to_f64() * k as f64 * wbar / (1.0 + 10.0 * delta),
            epsilon: epsilon(r1, r2),
            b: (100.0 / delta).ceil() as u32,
            mode: LearnMode::Noisy { p, delta },
        };
        params.validate(k)?;
        Ok(params)
    }

    pub fn validate(&self, k: usize) -> Result<(), ParamError> {
        check_ratios(self.r1, self.r2)?;
        let max = 1.0 / (4.0 * k as f64);
        if !(self.eta > 0.0 && self.eta <= max) {
            return Err(ParamError::LearningRate { eta: self.eta, max });
        }
        if !(self.tau > 0.0) {
            return Err(ParamError::Threshold(self.tau));
        }
        match self.mode {
            LearnMode::NoiseFree => {
                if self.r1.mul_is_integer(k) {
                    return Err(ParamError::IntegralR1k(self.r1.to_f64() * k as f64));
                }
                if !satisfies_gap(k, self.r1, self.b) {
                    return Err(ParamError::Gap {
                        gap: r1k_gap(k, self.r1),
                        needed: (k as f64).sqrt() / (k as f64).powi(self.b as i32),
                        b: self.b,
                    });
                }
            }
            LearnMode::Noisy { p, delta } => {
                if p < self.r2 || p > Fraction::ONE {
                    return Err(ParamError::MarkProbability { p: p.to_f64(), r2: self.r2.to_f64() });
                }
                if !(delta > 0.0) {
                    return Err(ParamError::Delta(delta));
                }
            }
        }
        Ok(())
    }

    /// Unbound neurons keep the initial weight `1/k^lmax` on every input, so
    /// a top-level showing gives each fresh layer-1 neuron potential 1. They
    /// stay silent only if `tau > 1`.
    pub fn check_fresh_silence(&self) -> Result<(), ParamError> {
        if self.tau > 1.0 {
            Ok(())
        } else {
            Err(ParamError::FreshNeuronFires { tau: self.tau })
        }
    }

    pub fn is_noisy(&self) -> bool {
        matches!(self.mode, LearnMode::Noisy { .. })
    }

    pub fn mark_probability(&self) -> Option<Fraction> {
        match self.mode {
            LearnMode::Noisy { p, .. } => Some(p),
            LearnMode::NoiseFree => None,
        }
    }

    /// Noise-free showing count for hierarchy depth `lmax`.
    pub fn sigma(&self, k: usize, lmax: usize) -> u64 {
        sigma_noise_free(k, self.eta, lmax, self.epsilon, self.b)
    }
}

fn epsilon(r1: Fraction, r2: Fraction) -> f64 {
    let (a, b) = (r1.to_f64(), r2.to_f64());
    (b - a) / (a + b)
}

fn check_ratios(r1: Fraction, r2: Fraction) -> Result<(), ParamError> {
    if r1 == Fraction::ZERO || r1 >= r2 {
        return Err(ParamError::Ratios { r1: r1.to_f64(), r2: r2.to_f64() });
    }
    Ok(())
}
