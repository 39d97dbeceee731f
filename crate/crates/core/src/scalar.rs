use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the embedding code is generic over: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f64_lossy(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 converts to scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Storage value used by model archives.
    fn to_storage(self) -> f32 {
        self.to_f32().expect("scalar converts to f32")
    }

    fn from_storage(value: f32) -> Self {
        Self::from_f32(value).expect("f32 converts to scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
