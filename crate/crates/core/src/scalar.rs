//! Floating point abstraction shared by every grid and image type.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar carried by latent grids and pixel images: `f32` or `f64`.
///
/// The engine runs in `f64`; `f32` exists for the bridge wire format and for
/// callers that want to trade precision for memory.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal or computation.
    fn of(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    fn to_f32_lossy(self) -> f32;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }

            #[inline]
            fn to_f32_lossy(self) -> f32 {
                self as f32
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);
