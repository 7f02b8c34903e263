//! Scalar abstraction shared by the 32-bit training path and the 64-bit
//! verification path.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

pub trait Real:
    Copy
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    /// Lock-free accumulator cell used by the parallel rasterizer.
    type Atomic: Send + Sync;

    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn floor(self) -> Self;
    fn ceil(self) -> Self;
    fn is_finite(self) -> bool;

    fn atomic_zero() -> Self::Atomic;
    fn atomic_add(cell: &Self::Atomic, v: Self);
    fn atomic_load(cell: &Self::Atomic) -> Self;

    #[inline]
    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }

    #[inline]
    fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }

    #[inline]
    fn sigmoid(self) -> Self {
        Self::ONE / (Self::ONE + (-self).exp())
    }
}

macro_rules! impl_real {
    ($t:ty, $atomic:ty) => {
        impl Real for $t {
            type Atomic = $atomic;

            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn floor(self) -> Self {
                <$t>::floor(self)
            }
            #[inline]
            fn ceil(self) -> Self {
                <$t>::ceil(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

            fn atomic_zero() -> Self::Atomic {
                <$atomic>::new(0)
            }

            #[inline]
            fn atomic_add(cell: &Self::Atomic, v: Self) {
                let mut current = cell.load(Ordering::Relaxed);
                loop {
                    let next = (<$t>::from_bits(current) + v).to_bits();
                    match cell.compare_exchange_weak(
                        current,
                        next,
                        Ordering::Relaxed,
                        Ordering::Relaxed,
                    ) {
                        Ok(_) => return,
                        Err(seen) => current = seen,
                    }
                }
            }

            #[inline]
            fn atomic_load(cell: &Self::Atomic) -> Self {
                <$t>::from_bits(cell.load(Ordering::Relaxed))
            }
        }
    };
}

impl_real!(f32, AtomicU32);
impl_real!(f64, AtomicU64);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_add_accumulates() {
        let cell = f32::atomic_zero();
        for _ in 0..10 {
            f32::atomic_add(&cell, 0.5);
        }
        assert_eq!(f32::atomic_load(&cell), 5.0);

        let cell = f64::atomic_zero();
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| {
                    for _ in 0..1000 {
                        f64::atomic_add(&cell, 1.0);
                    }
                });
            }
        });
        assert_eq!(f64::atomic_load(&cell), 4000.0);
    }

    #[test]
    fn sigmoid_of_one_matches_init_opacity() {
        assert!((1.0f64.sigmoid() - 0.731).abs() < 5e-4);
        assert_eq!(0.0f32.sigmoid(), 0.5);
    }
}
