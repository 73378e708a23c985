use std::fmt;

use crate::error::{AttnError, Result};
use crate::scalar::{Precision, Scalar};

/// Per-head decay rate λ, validated to lie in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Decay(f64);

impl Decay {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda > 0.0 && lambda <= 1.0 {
            Ok(Decay(lambda))
        } else {
            Err(AttnError::DecayDomain(lambda))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// `[1, λ, λ², …, λ^(len-1)]` by iterated multiplication in `T`.
    ///
    /// Every mask and block-diagonal factor is read out of this one table.
    /// Powers that fall below the smallest normal value of `T` are stored as
    /// zero: they sit far below rounding level, and subnormal operands stall
    /// the arithmetic units on common CPUs.
    pub fn powers<T: Scalar>(self, len: usize) -> Vec<T> {
        let lambda = T::from_f64(self.0);
        let mut out = Vec::with_capacity(len);
        let mut p = T::one();
        for _ in 0..len {
            out.push(p);
            p = p * lambda;
            if p < T::min_positive_value() {
                p = T::zero();
            }
        }
        out
    }
}

impl TryFrom<f64> for Decay {
    type Error = AttnError;

    fn try_from(v: f64) -> Result<Self> {
        Decay::new(v)
    }
}

impl fmt::Display for Decay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Problem size and tiling parameters for one attention head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    /// Sequence length.
    pub n: usize,
    /// Query/key dimension.
    pub d: usize,
    /// Value/output dimension.
    pub dv: usize,
    /// Block size; may exceed `n`.
    pub block: usize,
    pub decay: Decay,
    pub precision: Precision,
}

impl AttentionConfig {
    pub fn new(
        n: usize,
        d: usize,
        dv: usize,
        block: usize,
        lambda: f64,
        precision: Precision,
    ) -> Result<Self> {
        if n == 0 || d == 0 || dv == 0 || block == 0 {
            return Err(AttnError::InvalidArgument(format!(
                "n, d, dv and block must be positive (n={n}, d={d}, dv={dv}, block={block})"
            )));
        }
        Ok(AttentionConfig {
            n,
            d,
            dv,
            block,
            decay: Decay::new(lambda)?,
            precision,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_domain() {
        assert!(Decay::new(0.0).is_err());
        assert!(Decay::new(-0.5).is_err());
        assert!(Decay::new(1.0000001).is_err());
        assert!(Decay::new(f64::NAN).is_err());
        assert!(Decay::new(1.0).is_ok());
        assert!(Decay::new(1e-300).is_ok());
    }

    #[test]
    fn powers_are_iterated() {
        let p: Vec<f64> = Decay::new(0.5).unwrap().powers(4);
        assert_eq!(p, vec![1.0, 0.5, 0.25, 0.125]);
    }

    #[test]
    fn powers_never_go_subnormal() {
        let single: Vec<f32> = Decay::new(0.9).unwrap().powers(2000);
        assert!(single.iter().all(|p| p.is_normal() || *p == 0.0));
        assert!(single[700] > 0.0);
        assert_eq!(single[1999], 0.0);
        let double: Vec<f64> = Decay::new(0.9).unwrap().powers(8192);
        assert!(double.iter().all(|p| p.is_normal() || *p == 0.0));
        assert_eq!(double[8191], 0.0);
        // once zero, stays zero
        let first_zero = single.iter().position(|p| *p == 0.0).unwrap();
        assert!(single[first_zero..].iter().all(|p| *p == 0.0));
    }

    #[test]
    fn config_rejects_zero_sizes() {
        assert!(AttentionConfig::new(0, 1, 1, 1, 0.5, Precision::Double).is_err());
        assert!(AttentionConfig::new(4, 2, 2, 0, 0.5, Precision::Double).is_err());
        assert!(AttentionConfig::new(4, 2, 2, 8, 1.5, Precision::Double).is_err());
        assert!(AttentionConfig::new(4, 2, 2, 8, 0.5, Precision::Double).is_ok());
    }
}
