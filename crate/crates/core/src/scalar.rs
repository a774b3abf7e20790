use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type for latents, times and schedule tables: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`. Every value used by this crate is representable.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is convertible to every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar is convertible to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
