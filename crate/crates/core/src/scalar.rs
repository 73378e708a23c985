use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::Float;

/// Element precision of a [`Matrix`](crate::Matrix).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::Single => "single",
            Precision::Double => "double",
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            other => Err(format!(
                "unknown precision '{other}' (expected single|double)"
            )),
        }
    }
}

/// Floating-point element type the kernels are generic over (`f32`, `f64`).
pub trait Scalar:
    Float + Sum + Debug + Display + FromStr + Default + Send + Sync + 'static
{
    const PRECISION: Precision;

    /// Decimal text that parses back to the identical value.
    fn to_fixture_text(self) -> String;

    fn from_f64(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;

    fn to_fixture_text(self) -> String {
        format!("{:.8e}", self)
    }

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;

    fn to_fixture_text(self) -> String {
        // 17 significant digits
        format!("{:.16e}", self)
    }

    fn from_f64(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }
}
