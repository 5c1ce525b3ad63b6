//! Scalar abstraction shared by the performance models and the numeric
//! tensor-machine executor.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Floating point scalar usable by the models: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumCast + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts to Real")
    }

    fn of_u64(v: u64) -> Self {
        <Self as FromPrimitive>::from_u64(v).expect("u64 converts to Real")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(f32::of_f64(1.5), 1.5f32);
        assert_eq!(f64::of_u64(1 << 40), (1u64 << 40) as f64);
        assert_eq!(2.25f32.as_f64(), 2.25);
    }
}
