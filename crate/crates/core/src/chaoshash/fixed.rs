//! Sign-magnitude fixed-point reals with 256 fractional bits.
//!
//! The magnitude is five little-endian `u64` limbs: limbs `0..4` hold the
//! fraction and limb `4` the integer part. Every product is truncated toward
//! zero, so results are bit-identical on every platform.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use super::ChaosError;

pub(crate) const LIMBS: usize = 5;
const FRAC_LIMBS: usize = 4;
/// Number of fractional bits carried by every [`ChaosReal`].
pub const FRAC_BITS: u32 = 256;

type Mag = [u64; LIMBS];

const ONE_MAG: Mag = [0, 0, 0, 0, 1];

/// Fixed-point real used as the chaotic-map state.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChaosReal {
    neg: bool,
    mag: Mag,
}

fn mag_is_zero(m: &Mag) -> bool {
    m.iter().all(|&l| l == 0)
}

fn mag_cmp(a: &Mag, b: &Mag) -> Ordering {
    for i in (0..LIMBS).rev() {
        match a[i].cmp(&b[i]) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

fn mag_add(a: &Mag, b: &Mag) -> Mag {
    let mut out = [0u64; LIMBS];
    let mut carry = false;
    for i in 0..LIMBS {
        let (s1, c1) = a[i].overflowing_add(b[i]);
        let (s2, c2) = s1.overflowing_add(carry as u64);
        out[i] = s2;
        carry = c1 || c2;
    }
    debug_assert!(!carry, "fixed-point magnitude overflow");
    out
}

// Requires a >= b.
fn mag_sub(a: &Mag, b: &Mag) -> Mag {
    let mut out = [0u64; LIMBS];
    let mut borrow = false;
    for i in 0..LIMBS {
        let (d1, b1) = a[i].overflowing_sub(b[i]);
        let (d2, b2) = d1.overflowing_sub(borrow as u64);
        out[i] = d2;
        borrow = b1 || b2;
    }
    debug_assert!(!borrow);
    out
}

/// Full product shifted right by 256 bits, i.e. truncated toward zero.
fn mag_mul(a: &Mag, b: &Mag) -> Mag {
    let mut wide = [0u64; 2 * LIMBS];
    for i in 0..LIMBS {
        if a[i] == 0 {
            continue;
        }
        let mut carry: u128 = 0;
        for j in 0..LIMBS {
            let cur = wide[i + j] as u128 + (a[i] as u128) * (b[j] as u128) + carry;
            wide[i + j] = cur as u64;
            carry = cur >> 64;
        }
        let mut k = i + LIMBS;
        while carry != 0 {
            let cur = wide[k] as u128 + carry;
            wide[k] = cur as u64;
            carry = cur >> 64;
            k += 1;
        }
    }
    debug_assert!(wide[FRAC_LIMBS + LIMBS..].iter().all(|&l| l == 0));
    let mut out = [0u64; LIMBS];
    out.copy_from_slice(&wide[FRAC_LIMBS..FRAC_LIMBS + LIMBS]);
    out
}

fn mag_mul_small(a: &Mag, k: u64) -> Mag {
    let mut out = [0u64; LIMBS];
    let mut carry: u128 = 0;
    for i in 0..LIMBS {
        let cur = (a[i] as u128) * (k as u128) + carry;
        out[i] = cur as u64;
        carry = cur >> 64;
    }
    debug_assert_eq!(carry, 0);
    out
}

fn mag_to_biguint(m: &Mag) -> BigUint {
    let mut digits = Vec::with_capacity(LIMBS * 2);
    for l in m {
        digits.push(*l as u32);
        digits.push((*l >> 32) as u32);
    }
    BigUint::new(digits)
}

fn mag_from_biguint(v: &BigUint) -> Option<Mag> {
    let digits = v.to_u64_digits();
    if digits.len() > LIMBS || digits.get(FRAC_LIMBS).copied().unwrap_or(0) > 3 {
        return None;
    }
    let mut m = [0u64; LIMBS];
    m[..digits.len()].copy_from_slice(&digits);
    Some(m)
}

#[allow(clippy::should_implement_trait)]
impl ChaosReal {
    pub const ZERO: ChaosReal = ChaosReal { neg: false, mag: [0; LIMBS] };
    pub const ONE: ChaosReal = ChaosReal { neg: false, mag: ONE_MAG };

    fn from_parts(neg: bool, mag: Mag) -> Self {
        ChaosReal { neg: neg && !mag_is_zero(&mag), mag }
    }

    /// Builds a value from its raw scaled magnitude (`value · 2^256`).
    ///
    /// Fails when the integer part exceeds 3.
    pub fn from_scaled(negative: bool, scaled: &BigUint) -> Result<Self, ChaosError> {
        let mag = mag_from_biguint(scaled).ok_or(ChaosError::OutOfRange)?;
        Ok(Self::from_parts(negative, mag))
    }

    /// The raw scaled magnitude `|value| · 2^256`.
    pub fn scaled_magnitude(&self) -> BigUint {
        mag_to_biguint(&self.mag)
    }

    pub fn from_int(v: i8) -> Self {
        Self::from_parts(v < 0, [0, 0, 0, 0, v.unsigned_abs() as u64])
    }

    pub fn is_negative(&self) -> bool {
        self.neg
    }

    pub fn is_zero(&self) -> bool {
        mag_is_zero(&self.mag)
    }

    pub fn abs(self) -> Self {
        ChaosReal { neg: false, ..self }
    }

    pub fn neg(self) -> Self {
        Self::from_parts(!self.neg, self.mag)
    }

    /// Compares `|self|` with `|other|`.
    pub fn cmp_abs(&self, other: &Self) -> Ordering {
        mag_cmp(&self.mag, &other.mag)
    }

    pub fn add(self, other: Self) -> Self {
        if self.neg == other.neg {
            return Self::from_parts(self.neg, mag_add(&self.mag, &other.mag));
        }
        match mag_cmp(&self.mag, &other.mag) {
            Ordering::Less => Self::from_parts(other.neg, mag_sub(&other.mag, &self.mag)),
            _ => Self::from_parts(self.neg, mag_sub(&self.mag, &other.mag)),
        }
    }

    pub fn sub(self, other: Self) -> Self {
        self.add(other.neg())
    }

    /// Product truncated toward zero at 256 fractional bits.
    pub fn mul(self, other: Self) -> Self {
        Self::from_parts(self.neg ^ other.neg, mag_mul(&self.mag, &other.mag))
    }

    /// Exact product with a small non-negative integer.
    pub fn mul_int(self, k: u64) -> Self {
        Self::from_parts(self.neg, mag_mul_small(&self.mag, k))
    }

    /// Parses `[-]int.frac` decimal notation or `[-]0x<int>.<hex frac>`,
    /// truncating toward zero at 256 fractional bits.
    pub fn parse(s: &str) -> Result<Self, ChaosError> {
        let bad = || ChaosError::Parse(s.to_string());
        let s = s.trim();
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (radix, body) = match body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
            Some(rest) => (16u32, rest),
            None => (10u32, body),
        };
        let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        let digits_ok = |d: &str| d.chars().all(|c| c.is_digit(radix));
        if !digits_ok(int_part) || !digits_ok(frac_part) {
            return Err(bad());
        }
        let int_val = if int_part.is_empty() {
            BigUint::zero()
        } else {
            BigUint::parse_bytes(int_part.as_bytes(), radix).ok_or_else(bad)?
        };
        let frac_scaled = if frac_part.is_empty() {
            BigUint::zero()
        } else {
            let num = BigUint::parse_bytes(frac_part.as_bytes(), radix).ok_or_else(bad)?;
            let den = BigUint::from(radix).pow(frac_part.len() as u32);
            (num << FRAC_BITS) / den
        };
        let scaled = (int_val << FRAC_BITS) + frac_scaled;
        Self::from_scaled(neg, &scaled)
    }

    /// Exact hexadecimal rendering, `[-]0x<int>.<64 hex digits>`.
    pub fn to_hex_string(&self) -> String {
        let frac = self.mag[..FRAC_LIMBS]
            .iter()
            .rev()
            .map(|l| format!("{l:016x}"))
            .collect::<String>();
        format!("{}0x{:x}.{}", if self.neg { "-" } else { "" }, self.mag[4], frac)
    }

    /// Decimal rendering truncated to `digits` fractional digits.
    pub fn to_decimal_string(&self, digits: usize) -> String {
        let frac_mask = (BigUint::one() << FRAC_BITS) - 1u32;
        let scaled = self.scaled_magnitude();
        let frac = ((&scaled & &frac_mask) * BigUint::from(10u32).pow(digits as u32)) >> FRAC_BITS;
        format!(
            "{}{}.{:0>width$}",
            if self.neg { "-" } else { "" },
            self.mag[4],
            frac.to_str_radix(10),
            width = digits
        )
    }

    /// Nearest-ish `f64`, for diagnostics only.
    pub fn to_f64(&self) -> f64 {
        let v = self.scaled_magnitude().to_f64().unwrap_or(f64::NAN) / 2f64.powi(FRAC_BITS as i32);
        if self.neg {
            -v
        } else {
            v
        }
    }

    /// `floor(((x + 1) / 2) · 2^bits)` clamped to `2^bits − 1`, for `x ∈ [−1, 1]`.
    pub(crate) fn normalize(&self, bits: u32) -> BigUint {
        let shifted = self.add(ChaosReal::ONE);
        debug_assert!(!shifted.neg);
        let v = shifted.scaled_magnitude() >> (FRAC_BITS + 1 - bits);
        let max = (BigUint::one() << bits) - 1u32;
        v.min(max)
    }
}

impl fmt::Debug for ChaosReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChaosReal({})", self.to_decimal_string(20))
    }
}

impl fmt::Display for ChaosReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal_string(f.precision().unwrap_or(20)))
    }
}

impl PartialOrd for ChaosReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ChaosReal {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.neg, other.neg) {
            (false, true) => Ordering::Greater,
            (true, false) => Ordering::Less,
            (false, false) => mag_cmp(&self.mag, &other.mag),
            (true, true) => mag_cmp(&other.mag, &self.mag),
        }
    }
}
