//! Scalar abstraction for the polynomial algebra layer.

/// Floating point scalar usable as a polynomial coefficient and as the
/// element type of evaluated matrices.
///
/// The polynomial algebra in [`crate::polyalg`] and the plant evaluation in
/// [`crate::sysmodel`] are generic over this trait; the solver stack
/// (moment fitting, SDPs, gradient loop) is instantiated at `f64` because
/// its tolerances assume double precision.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + nalgebra::RealField + Copy
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}
