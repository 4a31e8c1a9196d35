//! Signed fixed-point scalars with an arbitrary-precision mantissa.
//!
//! A [`FixScalar`] represents `mantissa / 2^frac_bits` exactly. Addition,
//! subtraction and multiplication never round: sums keep the common
//! fractional width and products carry the sum of both widths. Rounding only
//! happens in [`FixScalar::div`] and [`FixScalar::truncate`], and always
//! rounds to nearest with ties to even.
//!
//! The fractional width travels with each value so that a working precision
//! (twice the storage precision during elimination) and the storage precision
//! can coexist without a global setting.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use rug::{Assign, Integer};

use crate::error::{Error, Result};

/// Fixed-point number `mantissa / 2^frac_bits`.
#[derive(Clone, Debug)]
pub struct FixScalar {
    mantissa: Integer,
    frac_bits: u32,
}

impl FixScalar {
    /// The integer `n` held with `frac_bits` fractional bits.
    pub fn from_integer(n: impl Into<Integer>, frac_bits: u32) -> Self {
        let mut mantissa: Integer = n.into();
        mantissa <<= frac_bits;
        Self { mantissa, frac_bits }
    }

    /// Wraps a raw mantissa; the value is `mantissa / 2^frac_bits`.
    pub fn from_mantissa(mantissa: Integer, frac_bits: u32) -> Self {
        Self { mantissa, frac_bits }
    }

    pub fn zero(frac_bits: u32) -> Self {
        Self { mantissa: Integer::new(), frac_bits }
    }

    pub fn one(frac_bits: u32) -> Self {
        Self::from_integer(1, frac_bits)
    }

    pub fn mantissa(&self) -> &Integer {
        &self.mantissa
    }

    pub fn into_mantissa(self) -> Integer {
        self.mantissa
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.cmp0() == Ordering::Equal
    }

    /// Sign of the value as an [`Ordering`] against zero.
    pub fn signum(&self) -> Ordering {
        self.mantissa.cmp0()
    }

    pub fn is_positive(&self) -> bool {
        self.signum() == Ordering::Greater
    }

    /// Number of bits in the absolute mantissa, a proxy for storage cost.
    pub fn mantissa_bits(&self) -> u32 {
        self.mantissa.significant_bits()
    }

    /// Quotient `self / rhs` rounded to nearest (ties to even) at
    /// `out_frac_bits` fractional bits.
    pub fn div(&self, rhs: &FixScalar, out_frac_bits: u32) -> Result<FixScalar> {
        if rhs.is_zero() {
            return Err(Error::DivisionByZero);
        }
        // value = (a / 2^fa) / (b / 2^fb); mantissa at F = a * 2^(F + fb - fa) / b
        let shift = out_frac_bits as i64 + rhs.frac_bits as i64 - self.frac_bits as i64;
        let mut num = Integer::from(self.mantissa.abs_ref());
        let mut den = Integer::from(rhs.mantissa.abs_ref());
        if shift >= 0 {
            num <<= shift as u32;
        } else {
            den <<= (-shift) as u32;
        }
        let (mut q, r) = num.div_rem(den.clone());
        let twice_r = Integer::from(&r << 1u32);
        match twice_r.cmp(&den) {
            Ordering::Greater => q += 1,
            Ordering::Equal if q.is_odd() => q += 1,
            _ => {}
        }
        let negative = (self.mantissa.cmp0() == Ordering::Less) != (rhs.mantissa.cmp0() == Ordering::Less);
        if negative {
            q = -q;
        }
        Ok(FixScalar { mantissa: q, frac_bits: out_frac_bits })
    }

    /// Reduces the fractional width to `new_frac_bits`, rounding to nearest
    /// with ties to even.
    ///
    /// Panics if `new_frac_bits` exceeds the current width; use
    /// [`FixScalar::extend`] to widen.
    pub fn truncate(&self, new_frac_bits: u32) -> FixScalar {
        let mut out = self.clone();
        out.truncate_in_place(new_frac_bits);
        out
    }

    pub fn truncate_in_place(&mut self, new_frac_bits: u32) {
        assert!(
            new_frac_bits <= self.frac_bits,
            "truncate cannot widen {} -> {} fractional bits",
            self.frac_bits,
            new_frac_bits
        );
        round_shift(&mut self.mantissa, self.frac_bits - new_frac_bits);
        self.frac_bits = new_frac_bits;
    }

    /// Exact widening to `new_frac_bits` (>= current width).
    pub fn extend(&self, new_frac_bits: u32) -> FixScalar {
        assert!(
            new_frac_bits >= self.frac_bits,
            "extend cannot narrow {} -> {} fractional bits",
            self.frac_bits,
            new_frac_bits
        );
        FixScalar {
            mantissa: Integer::from(&self.mantissa << (new_frac_bits - self.frac_bits)),
            frac_bits: new_frac_bits,
        }
    }

    /// Widens or rounds as needed to land on `frac_bits`.
    pub fn with_frac_bits(&self, frac_bits: u32) -> FixScalar {
        if frac_bits >= self.frac_bits {
            self.extend(frac_bits)
        } else {
            self.truncate(frac_bits)
        }
    }

    /// `self -= round(a * b)`, with the product rounded once to `self`'s
    /// fractional width. `scratch` is reused between calls to avoid
    /// reallocating the product.
    ///
    /// This is the update step of the elimination loops.
    pub fn sub_product_assign(&mut self, a: &FixScalar, b: &FixScalar, scratch: &mut Integer) {
        let prod_bits = a.frac_bits + b.frac_bits;
        debug_assert!(prod_bits >= self.frac_bits);
        scratch.assign(&a.mantissa * &b.mantissa);
        round_shift(scratch, prod_bits - self.frac_bits);
        self.mantissa -= &*scratch;
    }

    /// Nearest binary64 to the exact value. Values beyond the binary64 range
    /// become infinite.
    pub fn to_f64(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let negative = self.mantissa.cmp0() == Ordering::Less;
        let abs = Integer::from(self.mantissa.abs_ref());
        let bits = abs.significant_bits();
        let (top, exp) = if bits <= 64 {
            (abs.to_u64().expect("fits in 64 bits"), 0i64)
        } else {
            let shift = bits - 64;
            let sticky = abs.find_one(0).map_or(false, |p| p < shift);
            let mut top = Integer::from(&abs >> shift).to_u64().expect("64 leading bits");
            // Any discarded 1 bit lands below the binary64 rounding position.
            if sticky {
                top |= 1;
            }
            (top, shift as i64)
        };
        let value = ldexp(top as f64, exp - self.frac_bits as i64);
        if negative {
            -value
        } else {
            value
        }
    }

    fn cmp_aligned(&self, other: &FixScalar) -> Ordering {
        match self.frac_bits.cmp(&other.frac_bits) {
            Ordering::Equal => self.mantissa.cmp(&other.mantissa),
            Ordering::Greater => {
                let widened = Integer::from(&other.mantissa << (self.frac_bits - other.frac_bits));
                self.mantissa.cmp(&widened)
            }
            Ordering::Less => {
                let widened = Integer::from(&self.mantissa << (other.frac_bits - self.frac_bits));
                widened.cmp(&other.mantissa)
            }
        }
    }
}

/// Floor-shift `m` right by `shift` bits, then correct to round-to-nearest,
/// ties to even. Works on the two's-complement view so negative values round
/// symmetrically.
pub(crate) fn round_shift(m: &mut Integer, shift: u32) {
    if shift == 0 {
        return;
    }
    let half = m.get_bit(shift - 1);
    let above_half = half && m.find_one(0).map_or(false, |p| p < shift - 1);
    *m >>= shift;
    if half && (above_half || m.is_odd()) {
        *m += 1u32;
    }
}

/// `x * 2^exp` without overflowing the intermediate power of two.
fn ldexp(mut x: f64, mut exp: i64) -> f64 {
    const STEP: i64 = 1000;
    while exp > STEP {
        x *= 2f64.powi(STEP as i32);
        exp -= STEP;
        if x.is_infinite() {
            return x;
        }
    }
    while exp < -STEP {
        x *= 2f64.powi(-STEP as i32);
        exp += STEP;
        if x == 0.0 {
            return x;
        }
    }
    x * 2f64.powi(exp as i32)
}

fn assert_aligned(a: &FixScalar, b: &FixScalar) {
    assert_eq!(
        a.frac_bits, b.frac_bits,
        "fixed-point operands must share fractional bits ({} vs {})",
        a.frac_bits, b.frac_bits
    );
}

impl PartialEq for FixScalar {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_aligned(other) == Ordering::Equal
    }
}

impl Eq for FixScalar {}

impl PartialOrd for FixScalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FixScalar {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_aligned(other)
    }
}

impl<'a> Add<&'a FixScalar> for &'a FixScalar {
    type Output = FixScalar;

    fn add(self, rhs: &'a FixScalar) -> FixScalar {
        assert_aligned(self, rhs);
        FixScalar { mantissa: Integer::from(&self.mantissa + &rhs.mantissa), frac_bits: self.frac_bits }
    }
}

impl Add for FixScalar {
    type Output = FixScalar;

    fn add(mut self, rhs: FixScalar) -> FixScalar {
        assert_aligned(&self, &rhs);
        self.mantissa += rhs.mantissa;
        self
    }
}

impl<'a> Sub<&'a FixScalar> for &'a FixScalar {
    type Output = FixScalar;

    fn sub(self, rhs: &'a FixScalar) -> FixScalar {
        assert_aligned(self, rhs);
        FixScalar { mantissa: Integer::from(&self.mantissa - &rhs.mantissa), frac_bits: self.frac_bits }
    }
}

impl Sub for FixScalar {
    type Output = FixScalar;

    fn sub(mut self, rhs: FixScalar) -> FixScalar {
        assert_aligned(&self, &rhs);
        self.mantissa -= rhs.mantissa;
        self
    }
}

impl Neg for FixScalar {
    type Output = FixScalar;

    fn neg(self) -> FixScalar {
        FixScalar { mantissa: -self.mantissa, frac_bits: self.frac_bits }
    }
}

impl Neg for &FixScalar {
    type Output = FixScalar;

    fn neg(self) -> FixScalar {
        FixScalar { mantissa: Integer::from(-&self.mantissa), frac_bits: self.frac_bits }
    }
}

impl<'a> Mul<&'a FixScalar> for &'a FixScalar {
    type Output = FixScalar;

    fn mul(self, rhs: &'a FixScalar) -> FixScalar {
        FixScalar {
            mantissa: Integer::from(&self.mantissa * &rhs.mantissa),
            frac_bits: self.frac_bits + rhs.frac_bits,
        }
    }
}

impl Mul for FixScalar {
    type Output = FixScalar;

    fn mul(self, rhs: FixScalar) -> FixScalar {
        &self * &rhs
    }
}

impl fmt::Display for FixScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}
