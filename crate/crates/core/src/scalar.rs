//! Floating-point abstraction for the numeric kernels.
//!
//! Every model, gradient, and score in this crate is generic over [`Real`],
//! so the whole pipeline can run in `f32` or `f64`. Reporting surfaces
//! (traces, analysis summaries, checkpoints) are always `f64`; the helpers
//! here move values across that boundary.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};

/// Scalar type the numeric core works in.
///
/// The supertraits cover everything the kernels need: IEEE float math,
/// compound assignment, conversions from literals, and the ndarray operand
/// traits used by matrix-vector products.
pub trait Real:
    Float
    + NumAssign
    + FromPrimitive
    + Sum
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Convert an `f64` constant (config value, literal) into the working scalar.
pub fn real<R: Real>(x: f64) -> R {
    R::from_f64(x).expect("finite f64 is representable in every Real type")
}

/// Widen a working scalar to `f64` for traces, reports, and serialization.
pub fn as_f64<R: Real>(x: R) -> f64 {
    x.to_f64().expect("every Real widens to f64")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_both_scalar_types() {
        let x: f32 = real(0.25);
        assert_eq!(as_f64(x), 0.25);
        let y: f64 = real(-1.5e-3);
        assert_eq!(as_f64(y), -1.5e-3);
    }

    #[test]
    fn non_finite_values_survive_widening() {
        let inf: f32 = f32::INFINITY;
        assert!(as_f64(inf).is_infinite());
        let nan: f64 = f64::NAN;
        assert!(as_f64(nan).is_nan());
    }
}
