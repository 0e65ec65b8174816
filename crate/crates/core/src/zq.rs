//! Exact arithmetic in Z_q using the central residue-class representation.
//!
//! Elements are stored as integers in {-(q-1)/2, ..., (q-1)/2}. The modulus is
//! an odd prime capped at 63 bits so that products of central representatives
//! always fit in an i128 intermediate.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ZqError {
    #[error("modulus must be an odd prime > 2, got {0}")]
    InvalidModulus(u64),
    #[error("modulus exceeds 63 bits: {0}")]
    ModulusTooLarge(u64),
    #[error("operands have mismatched moduli ({0} vs {1})")]
    ModulusMismatch(u64, u64),
    #[error("vectors have mismatched lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// An odd prime modulus q > 2, at most 63 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Modulus {
    q: u64,
}

impl Modulus {
    pub fn new(q: u64) -> Result<Self, ZqError> {
        if q >= (1u64 << 63) {
            return Err(ZqError::ModulusTooLarge(q));
        }
        if q <= 2 || !is_prime_u64(q) {
            return Err(ZqError::InvalidModulus(q));
        }
        Ok(Modulus { q })
    }

    #[inline]
    pub fn value(&self) -> u64 {
        self.q
    }

    /// (q-1)/2, the largest central representative.
    #[inline]
    pub fn half(&self) -> i64 {
        ((self.q - 1) / 2) as i64
    }
}

/// Deterministic Miller-Rabin with witnesses covering all n < 2^64.
pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == p {
            return true;
        }
        if n % p == 0 {
            return false;
        }
    }
    let mut d = n - 1;
    let mut r = 0u32;
    while d % 2 == 0 {
        d /= 2;
        r += 1;
    }
    // These witnesses are exact below 2^64.
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = pow_mod(a % n, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 0..r - 1 {
            x = mul_mod_u64(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

#[inline]
fn mul_mod_u64(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod_u64(acc, base, m);
        }
        base = mul_mod_u64(base, base, m);
        exp >>= 1;
    }
    acc
}

/// An element of Z_q stored as its central representative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RingElement {
    value: i64,
    modulus: Modulus,
}

/// Reduce a signed integer into the central range of q.
pub fn reduce_central(x: i128, q: Modulus) -> RingElement {
    let m = q.value() as i128;
    let mut r = x % m;
    let half = q.half() as i128;
    if r > half {
        r -= m;
    } else if r < -half {
        r += m;
    }
    RingElement {
        value: r as i64,
        modulus: q,
    }
}

impl RingElement {
    pub fn new(x: i64, q: Modulus) -> Self {
        reduce_central(x as i128, q)
    }

    /// Lift to the signed central representative in Z.
    #[inline]
    pub fn lift(&self) -> i64 {
        self.value
    }

    #[inline]
    pub fn modulus(&self) -> Modulus {
        self.modulus
    }

    /// The canonical non-negative residue in [0, q).
    pub fn residue(&self) -> u64 {
        if self.value >= 0 {
            self.value as u64
        } else {
            (self.value + self.modulus.value() as i64) as u64
        }
    }

    fn check_modulus(&self, other: &RingElement) -> Result<(), ZqError> {
        if self.modulus != other.modulus {
            return Err(ZqError::ModulusMismatch(
                self.modulus.value(),
                other.modulus.value(),
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &RingElement) -> Result<RingElement, ZqError> {
        self.check_modulus(other)?;
        Ok(reduce_central(
            self.value as i128 + other.value as i128,
            self.modulus,
        ))
    }

    pub fn neg(&self) -> RingElement {
        reduce_central(-(self.value as i128), self.modulus)
    }

    pub fn mul(&self, other: &RingElement) -> Result<RingElement, ZqError> {
        self.check_modulus(other)?;
        Ok(reduce_central(
            self.value as i128 * other.value as i128,
            self.modulus,
        ))
    }
}

/// A non-empty vector over Z_q with a uniform modulus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingVector {
    elements: Vec<RingElement>,
    modulus: Modulus,
}

impl RingVector {
    pub fn new(elements: Vec<RingElement>) -> Result<Self, ZqError> {
        let first = elements
            .first()
            .ok_or(ZqError::LengthMismatch(0, 1))?;
        let modulus = first.modulus();
        for e in &elements {
            if e.modulus() != modulus {
                return Err(ZqError::ModulusMismatch(
                    modulus.value(),
                    e.modulus().value(),
                ));
            }
        }
        Ok(RingVector { elements, modulus })
    }

    pub fn from_lifts(values: &[i64], q: Modulus) -> Result<Self, ZqError> {
        Self::new(values.iter().map(|&v| RingElement::new(v, q)).collect())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    #[inline]
    pub fn modulus(&self) -> Modulus {
        self.modulus
    }

    pub fn elements(&self) -> &[RingElement] {
        &self.elements
    }

    pub fn neg(&self) -> RingVector {
        RingVector {
            elements: self.elements.iter().map(|e| e.neg()).collect(),
            modulus: self.modulus,
        }
    }

    pub fn add(&self, other: &RingVector) -> Result<RingVector, ZqError> {
        if self.modulus != other.modulus {
            return Err(ZqError::ModulusMismatch(
                self.modulus.value(),
                other.modulus.value(),
            ));
        }
        if self.len() != other.len() {
            return Err(ZqError::LengthMismatch(self.len(), other.len()));
        }
        let elements = self
            .elements
            .iter()
            .zip(&other.elements)
            .map(|(a, b)| a.add(b))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RingVector {
            elements,
            modulus: self.modulus,
        })
    }
}

/// <u, v> mod q in the central range.
pub fn inner_product(u: &RingVector, v: &RingVector) -> Result<RingElement, ZqError> {
    if u.modulus() != v.modulus() {
        return Err(ZqError::ModulusMismatch(
            u.modulus().value(),
            v.modulus().value(),
        ));
    }
    if u.len() != v.len() {
        return Err(ZqError::LengthMismatch(u.len(), v.len()));
    }
    let q = u.modulus();
    let m = q.value() as i128;
    let mut acc: i128 = 0;
    for (a, b) in u.elements().iter().zip(v.elements()) {
        // |a*b| <= ((q-1)/2)^2 < 2^124; reduce each step to stay well in range.
        acc = (acc + a.lift() as i128 * b.lift() as i128) % m;
    }
    Ok(reduce_central(acc, q))
}
