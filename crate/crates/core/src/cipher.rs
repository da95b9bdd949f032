//! Label encryption under a fixed-key 128-bit permutation.
//!
//! A key label `k` and a tweak `t` are hashed as `H(K) = pi(K) ^ K` with
//! `K = compress(k1) ^ rotl1(compress(k2)) ^ t` and `pi` = AES-128 under the
//! all-zero key. The hash is read as a label over the output modulus and
//! added to the plaintext digitwise.

use std::sync::OnceLock;

use aes::cipher::{generic_array::GenericArray, BlockEncrypt, KeyInit};
use aes::Aes128;

use crate::error::{Error, Result};
use crate::labels::{add_assign, check_modulus, radix, sub_assign, Label};

fn fixed_key_aes() -> &'static Aes128 {
    static AES: OnceLock<Aes128> = OnceLock::new();
    AES.get_or_init(|| Aes128::new(&GenericArray::from([0u8; 16])))
}

/// The public permutation `pi`.
#[inline]
pub fn permute(x: u128) -> u128 {
    let mut block = GenericArray::from(x.to_le_bytes());
    fixed_key_aes().encrypt_block(&mut block);
    u128::from_le_bytes(block.into())
}

/// Identifies one ciphertext of a garbled circuit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tweak {
    pub gate_id: u64,
    pub row: u32,
    pub slot: u32,
}

impl Tweak {
    pub fn new(gate_id: u64, row: u32, slot: u32) -> Self {
        Tweak { gate_id, row, slot }
    }

    pub fn encode(&self) -> u128 {
        self.gate_id as u128 | (self.row as u128) << 64 | (self.slot as u128) << 96
    }
}

/// One 128-bit ciphertext block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Ciphertext128(pub u128);

impl Ciphertext128 {
    pub fn to_bytes(self) -> [u8; 16] {
        self.0.to_le_bytes()
    }

    pub fn from_bytes(b: [u8; 16]) -> Self {
        Ciphertext128(u128::from_le_bytes(b))
    }
}

/// Davies-Meyer hash of one or two compressed keys under a tweak.
#[inline]
pub fn hash(key: u128, second: Option<u128>, tweak: Tweak) -> u128 {
    let k = key ^ second.map_or(0, |k2| k2.rotate_left(1)) ^ tweak.encode();
    permute(k) ^ k
}

fn keys_to_chunks(keys: &[&Label]) -> Result<(u128, Option<u128>)> {
    match keys {
        [k] => Ok((k.compress(), None)),
        [k1, k2] => Ok((k1.compress(), Some(k2.compress()))),
        _ => Err(Error::Gadget(format!("pad takes one or two keys, got {}", keys.len()))),
    }
}

/// Pseudorandom label over `Z_q` derived from the keys and the tweak.
pub fn pad(keys: &[&Label], tweak: Tweak, q: u16) -> Result<Label> {
    check_modulus(q)?;
    let (k1, k2) = keys_to_chunks(keys)?;
    let mut out = Label::zero(q);
    radix(q).reduce_into(hash(k1, k2, tweak), out.digits_mut());
    Ok(out)
}

pub fn encrypt_label(keys: &[&Label], tweak: Tweak, message: &Label) -> Result<Ciphertext128> {
    let (k1, k2) = keys_to_chunks(keys)?;
    let mut scratch = vec![0u16; message.digits().len()];
    Ok(Ciphertext128(encrypt_digits(
        hash(k1, k2, tweak),
        message.modulus(),
        message.digits(),
        &mut scratch,
    )))
}

pub fn decrypt_label(keys: &[&Label], tweak: Tweak, ct: Ciphertext128, q: u16) -> Result<Label> {
    check_modulus(q)?;
    let (k1, k2) = keys_to_chunks(keys)?;
    let mut out = Label::zero(q);
    let mut scratch = vec![0u16; out.digits().len()];
    decrypt_digits(hash(k1, k2, tweak), q, ct.0, out.digits_mut(), &mut scratch);
    Ok(out)
}

/// `compress(message + pad)` where `pad` is `h` read as a label over `Z_q`.
#[inline]
pub(crate) fn encrypt_digits(h: u128, q: u16, message: &[u16], scratch: &mut [u16]) -> u128 {
    let r = radix(q);
    r.reduce_into(h, scratch);
    add_assign(scratch, message, q);
    r.compress(scratch)
}

/// Inverse of `encrypt_digits`. Out-of-range chunks are reduced rather than
/// rejected; a wrong label surfaces at output decoding.
#[inline]
pub(crate) fn decrypt_digits(h: u128, q: u16, ct: u128, out: &mut [u16], scratch: &mut [u16]) {
    let r = radix(q);
    r.reduce_into(ct, out);
    r.reduce_into(h, scratch);
    sub_assign(out, scratch, q);
}

/// Bits per packed value of `Z_p`.
pub fn short_width(p: u16) -> u32 {
    16 - (p - 1).leading_zeros()
}

/// Pack `values[j]` (each in `Z_p`) into one block, slot `j` masked by bits
/// of `H(keys[j], tweak)`.
pub fn encrypt_short(keys: &[&Label], tweak: Tweak, values: &[u16], p: u16) -> Result<Ciphertext128> {
    let chunks: Vec<u128> = keys.iter().map(|k| k.compress()).collect();
    encrypt_short_chunks(&chunks, tweak, values, p)
}

pub(crate) fn encrypt_short_chunks(keys: &[u128], tweak: Tweak, values: &[u16], p: u16) -> Result<Ciphertext128> {
    check_modulus(p)?;
    let w = short_width(p);
    if keys.len() != values.len() {
        return Err(Error::Gadget(format!(
            "{} keys for {} values",
            keys.len(),
            values.len()
        )));
    }
    if values.len() as u32 * w > 128 {
        return Err(Error::Gadget(format!(
            "{} values of {w} bits exceed one block",
            values.len()
        )));
    }
    let mask = (1u128 << w) - 1;
    let mut ct = 0u128;
    for (j, (&k, &v)) in keys.iter().zip(values).enumerate() {
        if v >= p {
            return Err(Error::OutOfRange(format!("{v} is not below {p}")));
        }
        let shift = j as u32 * w;
        let m = (hash(k, None, tweak) >> shift) & mask;
        ct |= ((v as u128) ^ m) << shift;
    }
    Ok(Ciphertext128(ct))
}

/// Recover the value in slot `index`; a wrong key yields an arbitrary
/// element of `Z_p`.
pub fn decrypt_short(ct: Ciphertext128, key: &Label, tweak: Tweak, index: usize, p: u16) -> u16 {
    decrypt_short_chunk(ct, key.compress(), tweak, index, p)
}

pub(crate) fn decrypt_short_chunk(ct: Ciphertext128, key: u128, tweak: Tweak, index: usize, p: u16) -> u16 {
    let w = short_width(p);
    let shift = index as u32 * w;
    let mask = (1u128 << w) - 1;
    let m = (hash(key, None, tweak) >> shift) & mask;
    ((((ct.0 >> shift) & mask) ^ m) as u16) % p
}
