//! Q16.16 fixed-point scalar.
//!
//! `Fx32` is the only numeric currency on the kernel side. All operations are
//! integer-only, saturate at the representable bounds, and round
//! half-away-from-zero.

use core::fmt;
use core::ops::{Add, Neg, Sub};

/// Number of fractional bits.
pub const FRAC_BITS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum FxError {
    #[error("division by zero")]
    DivisionByZero,
}

/// Signed Q16.16 value: `raw / 65536`.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fx32(i32);

impl Fx32 {
    pub const ZERO: Fx32 = Fx32(0);
    pub const ONE: Fx32 = Fx32(1 << FRAC_BITS);
    pub const MAX: Fx32 = Fx32(i32::MAX);
    pub const MIN: Fx32 = Fx32(i32::MIN);

    #[inline]
    pub const fn from_raw(raw: i32) -> Self {
        Fx32(raw)
    }

    #[inline]
    pub const fn raw(self) -> i32 {
        self.0
    }

    /// Integer value, saturated.
    pub const fn from_int(v: i32) -> Self {
        Fx32(saturate((v as i64) << FRAC_BITS))
    }

    /// `num / den` rounded half-away-from-zero and saturated.
    pub fn from_ratio(num: i64, den: i64) -> Result<Self, FxError> {
        if den == 0 {
            return Err(FxError::DivisionByZero);
        }
        let q = div_round_half_away((num as i128) << FRAC_BITS, den as i128);
        Ok(Fx32(saturate_wide(q)))
    }

    /// `num / den` for wide operands; `den` must be nonzero.
    pub(crate) fn from_wide_ratio(num: i128, den: i128) -> Self {
        debug_assert!(den != 0);
        let num = num.clamp(i128::MIN >> 17, i128::MAX >> 17);
        Fx32(saturate_wide(div_round_half_away(num << FRAC_BITS, den)))
    }

    /// Saturating product, 64-bit intermediate.
    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: Fx32) -> Fx32 {
        let p = self.0 as i64 * rhs.0 as i64;
        Fx32(saturate(shr_round_half_away(p, FRAC_BITS)))
    }

    /// Saturating quotient, 64-bit intermediate.
    #[allow(clippy::should_implement_trait)]
    pub fn div(self, rhs: Fx32) -> Result<Fx32, FxError> {
        if rhs.0 == 0 {
            return Err(FxError::DivisionByZero);
        }
        let n = (self.0 as i64) << FRAC_BITS;
        let q = div_round_half_away(n as i128, rhs.0 as i128);
        Ok(Fx32(saturate_wide(q)))
    }

    pub fn saturating_add(self, rhs: Fx32) -> Fx32 {
        Fx32(self.0.saturating_add(rhs.0))
    }

    pub fn saturating_sub(self, rhs: Fx32) -> Fx32 {
        Fx32(self.0.saturating_sub(rhs.0))
    }

    pub fn clamp_to(self, lo: Fx32, hi: Fx32) -> Fx32 {
        if self < lo {
            lo
        } else if self > hi {
            hi
        } else {
            self
        }
    }

    pub fn to_le_bytes(self) -> [u8; 4] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(b: [u8; 4]) -> Self {
        Fx32(i32::from_le_bytes(b))
    }
}

impl Add for Fx32 {
    type Output = Fx32;
    fn add(self, rhs: Fx32) -> Fx32 {
        self.saturating_add(rhs)
    }
}

impl Sub for Fx32 {
    type Output = Fx32;
    fn sub(self, rhs: Fx32) -> Fx32 {
        self.saturating_sub(rhs)
    }
}

impl Neg for Fx32 {
    type Output = Fx32;
    fn neg(self) -> Fx32 {
        Fx32(self.0.saturating_neg())
    }
}

impl fmt::Debug for Fx32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fx32({})", self.0)
    }
}

/// Decimal rendering using integer arithmetic only (5 fractional digits,
/// truncated).
impl fmt::Display for Fx32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let raw = self.0 as i64;
        let mag = raw.unsigned_abs();
        let int = mag >> FRAC_BITS;
        let frac = ((mag & 0xFFFF) * 100_000) >> FRAC_BITS;
        let sign = if raw < 0 { "-" } else { "" };
        write!(f, "{sign}{int}.{frac:05}")
    }
}

#[inline]
const fn saturate(v: i64) -> i32 {
    if v > i32::MAX as i64 {
        i32::MAX
    } else if v < i32::MIN as i64 {
        i32::MIN
    } else {
        v as i32
    }
}

#[inline]
fn saturate_wide(v: i128) -> i32 {
    v.clamp(i32::MIN as i128, i32::MAX as i128) as i32
}

#[inline]
fn div_round_half_away(n: i128, d: i128) -> i128 {
    let q = n / d;
    let r = n % d;
    if 2 * r.abs() >= d.abs() {
        if (n < 0) != (d < 0) {
            q - 1
        } else {
            q + 1
        }
    } else {
        q
    }
}

#[inline]
fn shr_round_half_away(v: i64, bits: u32) -> i64 {
    let half = 1i64 << (bits - 1);
    if v >= 0 {
        (v + half) >> bits
    } else {
        -((-v + half) >> bits)
    }
}
