use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating point scalar the numeric core is generic over (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + core::ops::AddAssign
    + core::iter::Sum<Self>
    + core::fmt::Debug
    + core::fmt::Display
    + 'static
{
    /// Lossy conversion from `f64`; panics only for values outside the
    /// scalar's range, which never happens for the constants used here.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("constant representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::NumCast::from(self).unwrap_or(f64::NAN)
    }
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + core::ops::AddAssign
        + core::iter::Sum<T>
        + core::fmt::Debug
        + core::fmt::Display
        + 'static
{
}

#[cfg(test)]
mod tests {
    use super::Real;

    #[test]
    fn both_widths_satisfy_the_trait() {
        fn mean<S: Real>(xs: &[S]) -> S {
            xs.iter().copied().sum::<S>() / S::of(xs.len() as f64)
        }
        assert_eq!(mean(&[1.0f64, 3.0]), 2.0);
        assert_eq!(mean(&[1.0f32, 3.0]), 2.0);
    }
}
