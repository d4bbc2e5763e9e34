//! Floating-point abstraction used by behavior matrices and statistics kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, NumCast, ToPrimitive};

/// Scalar type for behavior values and statistical accumulators.
///
/// The engine is generic over this trait so that behavior matrices can be kept
/// in `f32` (the on-disk representation) while accumulation runs in `f64`.
/// Concrete aliases live at the crate root.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum<Self> + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy cast from any primitive numeric type.
    fn cast<T: ToPrimitive>(v: T) -> Self {
        NumCast::from(v).expect("numeric cast")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar to f64")
    }

    fn to_f32_lossy(self) -> f32 {
        self.to_f32().expect("scalar to f32")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
