//! Floating-point scalar abstraction used by the numerical code in [`crate::stats`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the model fitters are generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Machine epsilon as `f64`, used to scale tolerances.
    const EPS: f64;

    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize is representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const EPS: f64 = f32::EPSILON as f64;
}

impl Scalar for f64 {
    const EPS: f64 = f64::EPSILON;
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for a single value).
pub fn mean_sd<T: Scalar>(xs: &[T]) -> Option<(T, T)> {
    if xs.is_empty() {
        return None;
    }
    let n = T::of_usize(xs.len());
    let mean = xs.iter().copied().sum::<T>() / n;
    if xs.len() == 1 {
        return Some((mean, T::zero()));
    }
    let ss: T = xs.iter().map(|&x| (x - mean) * (x - mean)).sum();
    Some((mean, (ss / (n - T::one())).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_sd_basic() {
        let (m, s) = mean_sd(&[50.0_f64, 60.0]).unwrap();
        assert_eq!(m, 55.0);
        assert!((s - 7.0710678118654755).abs() < 1e-12);
        assert_eq!(mean_sd(&[3.0_f32]).unwrap(), (3.0, 0.0));
        assert!(mean_sd::<f64>(&[]).is_none());
    }
}
