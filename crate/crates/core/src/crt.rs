//! CRT bases over the first `k` primes, residue decomposition and
//! reconstruction, the signed lower/upper-half encoding into `Z_{P_k}`, and
//! real-to-integer quantization.

use std::sync::Arc;

use num_bigint::BigUint;

use crate::error::{Error, Result};

/// The first sixteen primes. Every supported base is a prefix of this table.
pub const PRIMES: [u16; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Largest supported number of primes in a base.
pub const MAX_PRIMES: usize = PRIMES.len();

/// A composite primal modulus `P_k = 2 * 3 * ... * p_k` together with its CRT
/// reconstruction coefficients.
///
/// The 16-prime modulus is below `2^65`, so besides the arbitrary-precision values the base
/// caches `u128` copies that the hot paths use.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrtBase {
    primes: Vec<u16>,
    modulus: BigUint,
    coeffs: Vec<BigUint>,
    modulus_u128: u128,
    coeffs_u128: Vec<u128>,
    /// `(P_k / p_i)^{-1} mod p_i`; `alpha_i = (P_k / p_i) * inverses[i]`.
    inverses: Vec<u16>,
}

impl CrtBase {
    pub fn new(k: usize) -> Result<Self> {
        if !(1..=MAX_PRIMES).contains(&k) {
            return Err(Error::BaseSize(k));
        }
        let primes = PRIMES[..k].to_vec();
        let modulus: BigUint = primes.iter().map(|&p| BigUint::from(p)).product();
        let mut coeffs = Vec::with_capacity(k);
        let mut inverses = Vec::with_capacity(k);
        for &p in &primes {
            let cofactor = &modulus / BigUint::from(p);
            let residue = (&cofactor % BigUint::from(p))
                .to_u64_digits()
                .first()
                .copied()
                .unwrap_or(0);
            let inv = mod_inverse(residue as u16, p).expect("distinct primes are coprime");
            inverses.push(inv);
            coeffs.push(cofactor * BigUint::from(inv));
        }
        let modulus_u128 = to_u128(&modulus);
        let coeffs_u128 = coeffs.iter().map(to_u128).collect();
        Ok(Self {
            primes,
            modulus,
            coeffs,
            modulus_u128,
            coeffs_u128,
            inverses,
        })
    }

    pub fn k(&self) -> usize {
        self.primes.len()
    }

    pub fn primes(&self) -> &[u16] {
        &self.primes
    }

    /// `P_k` as an arbitrary-precision integer.
    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    pub fn modulus_u128(&self) -> u128 {
        self.modulus_u128
    }

    /// The reconstruction coefficients `alpha_i = A_i * (A_i^{-1} mod p_i)`
    /// with `A_i = P_k / p_i`.
    pub fn crt_coeffs(&self) -> &[BigUint] {
        &self.coeffs
    }

    pub fn crt_coeffs_u128(&self) -> &[u128] {
        &self.coeffs_u128
    }

    /// `(P_k / p_i)^{-1} mod p_i`. The fractional part of `alpha_i * x_i / P_k`
    /// equals `(inverse_i * x_i mod p_i) / p_i`.
    pub fn cofactor_inverses(&self) -> &[u16] {
        &self.inverses
    }

    pub fn decompose(&self, x: u128) -> Result<Vec<u16>> {
        if x >= self.modulus_u128 {
            return Err(Error::OutOfRange(format!(
                "{x} is not below P_{} = {}",
                self.k(),
                self.modulus_u128
            )));
        }
        Ok(self.primes.iter().map(|&p| (x % p as u128) as u16).collect())
    }

    pub fn reconstruct(&self, residues: &[u16]) -> Result<u128> {
        if residues.len() != self.k() {
            return Err(Error::Shape(format!(
                "expected {} residues, got {}",
                self.k(),
                residues.len()
            )));
        }
        let mut acc = 0u128;
        for ((&r, &p), &alpha) in residues.iter().zip(&self.primes).zip(&self.coeffs_u128) {
            if r >= p {
                return Err(Error::OutOfRange(format!("residue {r} is not below {p}")));
            }
            // alpha < 2^65 and r < 2^6, so the product cannot overflow.
            acc = (acc + alpha * r as u128) % self.modulus_u128;
        }
        Ok(acc)
    }

    pub fn encode_signed(&self, v: i128) -> Result<u128> {
        encode_signed(v, self.modulus_u128)
    }

    pub fn decode_signed(&self, x: u128) -> Result<i128> {
        decode_signed(x, self.modulus_u128)
    }

    /// Residues of `encode_signed(v)` without building the ring element.
    pub fn signed_residues(&self, v: i128) -> Result<Vec<u16>> {
        encode_signed(v, self.modulus_u128)?;
        Ok(self.primes.iter().map(|&p| v.rem_euclid(p as i128) as u16).collect())
    }

    /// Bound of the symmetric value range `[-b, b]` used for network values.
    ///
    /// This is the encodable range minus its most negative element: the sign
    /// gadget cannot separate `-floor(P_k/2)` from the positives.
    pub fn value_bound(&self) -> i128 {
        (self.modulus_u128.div_ceil(2) - 1) as i128
    }
}

/// Map a signed value into `Z_modulus`: non-negative values go to the lower
/// half `[0, ceil(m/2))`, negative values to the rest.
pub fn encode_signed(v: i128, modulus: u128) -> Result<u128> {
    let upper = modulus.div_ceil(2) as i128 - 1;
    let lower = -((modulus / 2) as i128);
    if v < lower || v > upper {
        return Err(Error::OutOfRange(format!(
            "{v} is outside the signed range [{lower}, {upper}]"
        )));
    }
    Ok(if v >= 0 {
        v as u128
    } else {
        (modulus as i128 + v) as u128
    })
}

pub fn decode_signed(x: u128, modulus: u128) -> Result<i128> {
    if x >= modulus {
        return Err(Error::OutOfRange(format!("{x} is not below {modulus}")));
    }
    Ok(if x < modulus.div_ceil(2) {
        x as i128
    } else {
        x as i128 - modulus as i128
    })
}

/// Quantization constant shared by inputs and weights.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantParams {
    alpha: f64,
    base: Arc<CrtBase>,
}

impl QuantParams {
    pub fn new(alpha: f64, base: Arc<CrtBase>) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Quantization(format!(
                "quantization constant must be positive, got {alpha}"
            )));
        }
        Ok(Self { alpha, base })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn base(&self) -> &Arc<CrtBase> {
        &self.base
    }

    /// `round(x * alpha)` with ties away from zero, checked against the
    /// signed range of the base.
    pub fn quantize(&self, x: f64) -> Result<i128> {
        quantize_scaled(x, self.alpha, self.base.value_bound())
    }
}

pub fn quantize(x: f64, params: &QuantParams) -> Result<i128> {
    params.quantize(x)
}

pub(crate) fn quantize_scaled(x: f64, scale: f64, bound: i128) -> Result<i128> {
    let scaled = (x * scale).round();
    if !scaled.is_finite() || scaled.abs() > bound as f64 {
        return Err(Error::Quantization(format!(
            "{x} * {scale} leaves the signed range of +-{bound}"
        )));
    }
    Ok(scaled as i128)
}

fn to_u128(x: &BigUint) -> u128 {
    let digits = x.to_u64_digits();
    assert!(digits.len() <= 2, "value exceeds 128 bits");
    digits.iter().rev().fold(0u128, |acc, &d| (acc << 64) | d as u128)
}

/// Inverse of `a` modulo `m` (any modulus, not only primes).
pub fn mod_inverse(a: u16, m: u16) -> Option<u16> {
    let (mut old_r, mut r) = (a as i64 % m as i64, m as i64);
    let (mut old_s, mut s) = (1i64, 0i64);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    (old_r == 1).then(|| old_s.rem_euclid(m as i64) as u16)
}
