use num_traits::{Float, FromPrimitive, NumAssignOps};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Element type for tensors: f32 in training mode, f64 in verification mode.
pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + Sum + Send + Sync + Debug + Display + 'static
{
    /// Lossy conversion from an f64 literal (σ, ε, loss weights, ...).
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("literal converts")
    }

    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn to_f64(self) -> f64 {
        self
    }
}
