//! Wire labels over `Z_m`, offset labels, Horner compression into 128-bit
//! chunks, and label-major `LabelTensor`s.
//!
//! Digit 0 of every label is its point-and-permute color and the least
//! significant digit of the compressed chunk.

use std::sync::OnceLock;

use rand::Rng;
use strength_reduce::{StrengthReducedU128, StrengthReducedU64};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

/// Largest wire modulus supported by the label machinery.
pub const MAX_MODULUS: u16 = 1024;

/// Per-modulus constants for label length and chunk (de)compression.
///
/// A non-power-of-two chunk is split into four words of `word_len` digits
/// (each below `2^32`) plus a short top part, and the words are processed
/// side by side so their multiply chains overlap.
#[derive(Clone, Copy, Debug)]
pub struct Radix {
    modulus: u16,
    len: usize,
    /// `log2(m)` when `m` is a power of two.
    shift: Option<u32>,
    /// `m^len`, or `None` when it equals `2^128`.
    limit: Option<u128>,
    word_len: usize,
    word_pow: u32,
    /// `word_pow^2`.
    pair_pow: u64,
    pair_div: StrengthReducedU128,
    word_div: StrengthReducedU64,
    /// `floor((2^64 - 1) / m) + 1`, for division of `u32` values by `m`.
    magic: u64,
}

const WORDS: usize = 4;

impl Radix {
    fn compute(m: u16) -> Self {
        assert!(m >= 2, "modulus must be at least 2");
        let mw = m as u128;
        let (mut acc, mut len, mut limit) = (1u128, 0usize, None);
        loop {
            match acc.checked_mul(mw) {
                Some(v) => {
                    acc = v;
                    len += 1;
                }
                None => {
                    // acc * m == 2^128 exactly is still injective.
                    if m.is_power_of_two() && acc == 1u128 << (128 - m.trailing_zeros()) {
                        len += 1;
                    } else {
                        limit = Some(acc);
                    }
                    break;
                }
            }
        }
        let (mut word_pow, mut word_len) = (1u64, 0usize);
        while word_pow * m as u64 <= u32::MAX as u64 {
            word_pow *= m as u64;
            word_len += 1;
        }
        // m^(4 word_len) <= 2^128, so the words never outnumber the digits
        debug_assert!(WORDS * word_len <= len);
        Radix {
            modulus: m,
            len,
            shift: m.is_power_of_two().then(|| m.trailing_zeros()),
            limit,
            word_len,
            word_pow: word_pow as u32,
            pair_pow: word_pow * word_pow,
            pair_div: StrengthReducedU128::new((word_pow * word_pow) as u128),
            word_div: StrengthReducedU64::new(word_pow),
            magic: u64::MAX / m as u64 + 1,
        }
    }

    pub fn modulus(&self) -> u16 {
        self.modulus
    }

    /// Number of digits per label: the largest `n` with `m^n <= 2^128`,
    /// i.e. `floor(128 / log2 m)`.
    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false: every modulus has at least one digit.
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `m^len` when it is below `2^128`.
    pub fn limit(&self) -> Option<u128> {
        self.limit
    }

    /// Horner evaluation `(...(l_n m + l_{n-1}) m + ...) m + l_1`, where
    /// `l_1 = digits[0]`.
    pub fn compress(&self, digits: &[u16]) -> u128 {
        debug_assert_eq!(digits.len(), self.len);
        if let Some(bits) = self.shift {
            if 64 % bits == 0 {
                let per = 64 / bits as usize;
                let half = |ds: &[u16]| ds.iter().rev().fold(0u64, |acc, &d| acc << bits | d as u64);
                let (lo, hi) = digits.split_at(per.min(digits.len()));
                return (half(hi) as u128) << 64 | half(lo) as u128;
            }
            return digits.iter().rev().fold(0u128, |acc, &d| acc << bits | d as u128);
        }
        let (m, wl) = (self.modulus as u32, self.word_len);
        let mut w = [0u32; WORDS];
        for j in (0..wl).rev() {
            for (k, wk) in w.iter_mut().enumerate() {
                *wk = *wk * m + digits[k * wl + j] as u32;
            }
        }
        let top = digits[WORDS * wl..]
            .iter()
            .rev()
            .fold(0u64, |acc, &d| acc * m as u64 + d as u64);
        let wp = self.word_pow as u64;
        let lo = w[1] as u64 * wp + w[0] as u64;
        let mid = w[3] as u64 * wp + w[2] as u64;
        let hi = top as u128 * self.pair_pow as u128 + mid as u128;
        hi * self.pair_pow as u128 + lo as u128
    }

    /// Base-`m` digits of `chunk`, least significant first.
    pub fn decompress_into(&self, chunk: u128, out: &mut [u16]) -> Result<()> {
        debug_assert_eq!(out.len(), self.len);
        if let Some(limit) = self.limit {
            if chunk >= limit {
                return Err(Error::OutOfRange(format!(
                    "chunk is not below {}^{}",
                    self.modulus, self.len
                )));
            }
        }
        self.digits_into(chunk, out);
        Ok(())
    }

    /// Like `decompress_into` but reduces `value` modulo `m^len` first. The
    /// low `len` base-`m` digits of `value` are exactly those of the
    /// reduction, so no wide modulo is needed.
    pub fn reduce_into(&self, value: u128, out: &mut [u16]) {
        self.digits_into(value, out);
    }

    fn digits_into(&self, v: u128, out: &mut [u16]) {
        debug_assert_eq!(out.len(), self.len);
        if let Some(bits) = self.shift {
            let mask = (1u16 << bits) - 1;
            if 64 % bits == 0 {
                let per = 64 / bits as usize;
                let (lo, hi) = out.split_at_mut(per.min(self.len));
                for (half, mut x) in [(lo, v as u64), (hi, (v >> 64) as u64)] {
                    for o in half {
                        *o = x as u16 & mask;
                        x >>= bits;
                    }
                }
                return;
            }
            let mut v = v;
            for o in out.iter_mut() {
                *o = v as u16 & mask;
                v >>= bits;
            }
            return;
        }
        let pair = self.pair_pow as u128;
        let hi = v / self.pair_div;
        let lo = (v - hi * pair) as u64;
        let top = hi / self.pair_div;
        let mid = (hi - top * pair) as u64;
        let wp = self.word_pow as u64;
        let (lo_hi, mid_hi) = (lo / self.word_div, mid / self.word_div);
        let mut w = [
            (lo - lo_hi * wp) as u32,
            lo_hi as u32,
            (mid - mid_hi * wp) as u32,
            mid_hi as u32,
        ];
        let (m, wl) = (self.modulus as u32, self.word_len);
        for j in 0..wl {
            for (k, wk) in w.iter_mut().enumerate() {
                let q = self.div_u32(*wk);
                out[k * wl + j] = (*wk - q * m) as u16;
                *wk = q;
            }
        }
        // top < m^4 here since word_pow^4 > 2^128 / m^4
        let mut top = top as u64;
        for o in &mut out[WORDS * wl..] {
            *o = (top % m as u64) as u16;
            top /= m as u64;
        }
    }

    /// `w / m` by multiplication (Lemire's fastdiv, exact on all `u32`).
    #[inline(always)]
    fn div_u32(&self, w: u32) -> u32 {
        ((self.magic as u128 * w as u128) >> 64) as u32
    }
}

/// Constants for modulus `m`. Panics if `m` is outside `2..=MAX_MODULUS`.
pub fn radix(m: u16) -> &'static Radix {
    static TABLE: OnceLock<Vec<Radix>> = OnceLock::new();
    assert!((2..=MAX_MODULUS).contains(&m), "unsupported modulus {m}");
    &TABLE.get_or_init(|| (0..=MAX_MODULUS).map(|m| Radix::compute(m.max(2))).collect())[m as usize]
}

pub fn label_len(m: u16) -> usize {
    radix(m).len()
}

pub(crate) fn check_modulus(m: u16) -> Result<()> {
    if (2..=MAX_MODULUS).contains(&m) {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("modulus {m} outside 2..={MAX_MODULUS}")))
    }
}

// Slice kernels. All digits are assumed reduced below `m`.

#[inline]
pub fn add_assign(dst: &mut [u16], src: &[u16], m: u16) {
    for (d, &s) in dst.iter_mut().zip(src) {
        let t = *d + s;
        *d = if t >= m { t - m } else { t };
    }
}

#[inline]
pub fn sub_assign(dst: &mut [u16], src: &[u16], m: u16) {
    for (d, &s) in dst.iter_mut().zip(src) {
        let t = *d + m - s;
        *d = if t >= m { t - m } else { t };
    }
}

#[inline]
pub fn neg_assign(dst: &mut [u16], m: u16) {
    for d in dst {
        *d = if *d == 0 { 0 } else { m - *d };
    }
}

#[inline]
pub fn scale_assign(dst: &mut [u16], c: u16, m: u16) {
    let (c, m) = (c as u32 % m as u32, m as u32);
    for d in dst {
        *d = (*d as u32 * c % m) as u16;
    }
}

/// `dst += c * src`.
#[inline]
pub fn add_scaled_assign(dst: &mut [u16], src: &[u16], c: u16, m: u16) {
    let (c, m) = (c as u32 % m as u32, m as u32);
    if c == 0 {
        return;
    }
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = ((*d as u32 + s as u32 * c) % m) as u16;
    }
}

pub fn random_digits<R: Rng + ?Sized>(rng: &mut R, m: u16, out: &mut [u16]) {
    for d in out {
        *d = rng.gen_range(0..m);
    }
}

/// Most digits any label has (`m = 2`).
pub const MAX_LABEL_LEN: usize = 128;

/// A wire label: `label_len(m)` digits of `Z_m`, stored inline. Unused
/// slots stay zero so derived equality and hashing see only the digits.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Label {
    modulus: u16,
    len: u8,
    digits: [u16; MAX_LABEL_LEN],
}

impl std::fmt::Debug for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Label")
            .field("modulus", &self.modulus)
            .field("digits", &self.digits())
            .finish()
    }
}

impl Label {
    pub fn zero(m: u16) -> Self {
        Label {
            modulus: m,
            len: label_len(m) as u8,
            digits: [0; MAX_LABEL_LEN],
        }
    }

    pub fn random<R: Rng + ?Sized>(m: u16, rng: &mut R) -> Self {
        let mut l = Self::zero(m);
        random_digits(rng, m, l.digits_mut());
        l
    }

    pub fn from_digits(m: u16, digits: Vec<u16>) -> Result<Self> {
        check_modulus(m)?;
        if digits.len() != label_len(m) {
            return Err(Error::Shape(format!(
                "label mod {m} needs {} digits, got {}",
                label_len(m),
                digits.len()
            )));
        }
        if let Some(&d) = digits.iter().find(|&&d| d >= m) {
            return Err(Error::OutOfRange(format!("digit {d} is not below {m}")));
        }
        Ok(Self::from_slice_unchecked(m, &digits))
    }

    pub(crate) fn from_slice_unchecked(m: u16, digits: &[u16]) -> Self {
        let mut l = Label::zero(m);
        l.digits_mut().copy_from_slice(digits);
        l
    }

    pub fn modulus(&self) -> u16 {
        self.modulus
    }

    pub fn digits(&self) -> &[u16] {
        &self.digits[..self.len as usize]
    }

    pub(crate) fn digits_mut(&mut self) -> &mut [u16] {
        &mut self.digits[..self.len as usize]
    }

    pub fn into_digits(self) -> Vec<u16> {
        self.digits().to_vec()
    }

    /// The point-and-permute digit.
    pub fn color(&self) -> u16 {
        self.digits[0]
    }

    fn same_modulus(&self, other: &Label) -> Result<()> {
        if self.modulus != other.modulus {
            return Err(Error::ModulusMismatch(self.modulus, other.modulus));
        }
        Ok(())
    }

    pub fn add(&self, other: &Label) -> Result<Label> {
        self.same_modulus(other)?;
        let mut out = self.clone();
        add_assign(out.digits_mut(), other.digits(), self.modulus);
        Ok(out)
    }

    pub fn sub(&self, other: &Label) -> Result<Label> {
        self.same_modulus(other)?;
        let mut out = self.clone();
        sub_assign(out.digits_mut(), other.digits(), self.modulus);
        Ok(out)
    }

    pub fn neg(&self) -> Label {
        let mut out = self.clone();
        neg_assign(out.digits_mut(), self.modulus);
        out
    }

    pub fn scale(&self, c: u16) -> Label {
        let mut out = self.clone();
        scale_assign(out.digits_mut(), c, self.modulus);
        out
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, other: &Label, c: u16) -> Result<Label> {
        self.same_modulus(other)?;
        let mut out = self.clone();
        add_scaled_assign(out.digits_mut(), other.digits(), c, self.modulus);
        Ok(out)
    }

    pub fn compress(&self) -> u128 {
        radix(self.modulus).compress(self.digits())
    }

    pub fn decompress(chunk: u128, m: u16) -> Result<Label> {
        check_modulus(m)?;
        let mut l = Label::zero(m);
        radix(m).decompress_into(chunk, l.digits_mut())?;
        Ok(l)
    }
}

pub fn color(l: &Label) -> u16 {
    l.color()
}

/// The circuit-wide offset `R_m` for one modulus: a label whose color is 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OffsetLabel(Label);

impl OffsetLabel {
    pub fn random<R: Rng + ?Sized>(m: u16, rng: &mut R) -> Self {
        let mut l = Label::random(m, rng);
        l.digits[0] = 1;
        OffsetLabel(l)
    }

    pub fn from_label(l: Label) -> Result<Self> {
        if l.color() != 1 {
            return Err(Error::OutOfRange(format!(
                "offset label must have color 1, has {}",
                l.color()
            )));
        }
        Ok(OffsetLabel(l))
    }

    pub fn label(&self) -> &Label {
        &self.0
    }

    pub fn modulus(&self) -> u16 {
        self.0.modulus
    }

    pub fn digits(&self) -> &[u16] {
        self.0.digits()
    }

    /// `base + value * R`: the label carrying `value` on a wire with base
    /// label `base`.
    pub fn encode(&self, base: &Label, value: u16) -> Result<Label> {
        base.add_scaled(&self.0, value)
    }
}

pub fn gen_offset<R: Rng + ?Sized>(m: u16, rng: &mut R) -> OffsetLabel {
    OffsetLabel::random(m, rng)
}

/// A shape-carrying array of labels of one modulus, stored label-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelTensor {
    modulus: u16,
    shape: Vec<usize>,
    label_len: usize,
    data: Vec<u16>,
}

impl LabelTensor {
    pub fn zeros(m: u16, shape: &[usize]) -> Self {
        let label_len = label_len(m);
        let n: usize = shape.iter().product();
        LabelTensor {
            modulus: m,
            shape: shape.to_vec(),
            label_len,
            data: vec![0; n * label_len],
        }
    }

    pub fn random<R: Rng + ?Sized>(m: u16, shape: &[usize], rng: &mut R) -> Self {
        let mut t = Self::zeros(m, shape);
        random_digits(rng, m, &mut t.data);
        t
    }

    pub fn from_labels(m: u16, shape: &[usize], labels: &[Label]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} labels, got {}",
                labels.len()
            )));
        }
        let mut t = Self::zeros(m, shape);
        for (i, l) in labels.iter().enumerate() {
            if l.modulus != m {
                return Err(Error::ModulusMismatch(m, l.modulus));
            }
            t.label_mut(i).copy_from_slice(l.digits());
        }
        Ok(t)
    }

    pub(crate) fn from_raw(m: u16, shape: Vec<usize>, data: Vec<u16>) -> Self {
        let label_len = label_len(m);
        debug_assert_eq!(data.len(), shape.iter().product::<usize>() * label_len);
        LabelTensor {
            modulus: m,
            shape,
            label_len,
            data,
        }
    }

    pub fn modulus(&self) -> u16 {
        self.modulus
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn label_len(&self) -> usize {
        self.label_len
    }

    /// Number of labels.
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn label(&self, i: usize) -> &[u16] {
        &self.data[i * self.label_len..(i + 1) * self.label_len]
    }

    pub fn label_mut(&mut self, i: usize) -> &mut [u16] {
        &mut self.data[i * self.label_len..(i + 1) * self.label_len]
    }

    pub fn to_label(&self, i: usize) -> Label {
        Label::from_slice_unchecked(self.modulus, self.label(i))
    }

    pub fn labels(&self) -> impl Iterator<Item = &[u16]> + '_ {
        self.data.chunks_exact(self.label_len)
    }

    fn check_compatible(&self, other: &LabelTensor) -> Result<()> {
        if self.modulus != other.modulus {
            return Err(Error::ModulusMismatch(self.modulus, other.modulus));
        }
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn add(&self, other: &LabelTensor) -> Result<LabelTensor> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        add_assign(&mut out.data, &other.data, self.modulus);
        Ok(out)
    }

    pub fn sub(&self, other: &LabelTensor) -> Result<LabelTensor> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        sub_assign(&mut out.data, &other.data, self.modulus);
        Ok(out)
    }

    pub fn scale(&self, c: u16) -> LabelTensor {
        let mut out = self.clone();
        scale_assign(&mut out.data, c, self.modulus);
        out
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<LabelTensor> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Extract every `filter x filter` window at the given stride from a
    /// `[C, H, W]` (or `[H, W]`) tensor. The result has shape
    /// `[OH, OW, C, filter, filter]`, so each window is contiguous and ordered
    /// like a convolution kernel.
    pub fn gather_windows(&self, filter: usize, stride: usize) -> Result<LabelTensor> {
        let (c, h, w) = match *self.shape.as_slice() {
            [c, h, w] => (c, h, w),
            [h, w] => (1, h, w),
            _ => {
                return Err(Error::Shape(format!(
                    "window gather needs [C,H,W], got {:?}",
                    self.shape
                )))
            }
        };
        let (oh, ow) = conv_output_dims(h, w, filter, stride)?;
        let ll = self.label_len;
        let mut out = Vec::with_capacity(oh * ow * c * filter * filter * ll);
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    for fy in 0..filter {
                        let row = (ch * h + oy * stride + fy) * w + ox * stride;
                        out.extend_from_slice(&self.data[row * ll..(row + filter) * ll]);
                    }
                }
            }
        }
        Ok(LabelTensor::from_raw(
            self.modulus,
            vec![oh, ow, c, filter, filter],
            out,
        ))
    }

    /// Compressed chunks in storage order.
    pub fn chunks(&self) -> Vec<u128> {
        let r = radix(self.modulus);
        self.labels().map(|l| r.compress(l)).collect()
    }

    pub fn from_chunks(m: u16, shape: &[usize], chunks: &[u128]) -> Result<Self> {
        check_modulus(m)?;
        let mut t = Self::zeros(m, shape);
        if chunks.len() != t.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {} labels, got {} chunks",
                t.len(),
                chunks.len()
            )));
        }
        let r = radix(m);
        for (dst, &c) in t.data.chunks_exact_mut(t.label_len).zip(chunks) {
            r.decompress_into(c, dst)?;
        }
        Ok(t)
    }

    /// Header (modulus u16, rank u8, dims u32) followed by the chunks.
    pub fn write_to(&self, w: &mut Writer) {
        w.u16(self.modulus);
        w.u8(u8::try_from(self.shape.len()).expect("rank fits in u8"));
        for &d in &self.shape {
            w.len_u32(d);
        }
        self.write_chunks(w);
    }

    pub fn write_chunks(&self, w: &mut Writer) {
        let r = radix(self.modulus);
        for l in self.labels() {
            w.u128(r.compress(l));
        }
    }

    pub fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        let m = r.u16()?;
        check_modulus(m)?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        Self::read_chunks(r, m, &shape)
    }

    pub fn read_chunks(r: &mut Reader<'_>, m: u16, shape: &[usize]) -> Result<Self> {
        check_modulus(m)?;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        match n {
            Some(n) if n.saturating_mul(16) <= r.remaining() => {}
            _ => {
                return Err(Error::Format(format!(
                    "tensor of shape {shape:?} exceeds the remaining input"
                )))
            }
        }
        let mut t = Self::zeros(m, shape);
        let rad = radix(m);
        for dst in t.data.chunks_exact_mut(t.label_len) {
            rad.decompress_into(r.u128()?, dst)?;
        }
        Ok(t)
    }
}

/// Output spatial dims of an unpadded convolution.
pub fn conv_output_dims(h: usize, w: usize, filter: usize, stride: usize) -> Result<(usize, usize)> {
    if stride == 0 || filter == 0 {
        return Err(Error::Shape("filter and stride must be positive".into()));
    }
    if filter > h || filter > w {
        return Err(Error::Shape(format!("filter {filter} larger than input {h}x{w}")));
    }
    Ok(((h - filter) / stride + 1, (w - filter) / stride + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crt::PRIMES;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(7)
    }

    #[test]
    fn label_len_formula() {
        for &p in &PRIMES {
            let expected = (128.0 / (p as f64).log2()).floor() as usize;
            assert_eq!(label_len(p), expected, "p={p}");
        }
        assert_eq!(label_len(2), 128);
        assert_eq!(label_len(5), 55);
        assert_eq!(label_len(4), 64);
        assert_eq!(label_len(16), 32);
        assert_eq!(label_len(46), 23);
    }

    #[test]
    fn compression_fits_128_bits() {
        for m in 2..=MAX_MODULUS {
            let r = radix(m);
            // m^len <= 2^128 < m^(len+1)
            match r.limit() {
                Some(limit) => assert!(limit.checked_mul(m as u128).is_none(), "m={m}"),
                None => assert!(m.is_power_of_two()),
            }
        }
    }

    #[test]
    fn offset_structure() {
        let mut rng = rng();
        let r2 = gen_offset(2, &mut rng);
        assert_eq!(r2.digits().len(), 128);
        assert_eq!(r2.label().color(), 1);
        let r5 = gen_offset(5, &mut rng);
        assert_eq!(r5.digits().len(), 55);
        assert_eq!(r5.label().color(), 1);
        assert!(r5.digits().iter().all(|&d| d < 5));
        let other = gen_offset(5, &mut ChaCha20Rng::seed_from_u64(8));
        assert_ne!(r5, other);
    }

    #[test]
    fn label_algebra() {
        let mut rng = rng();
        let a = Label::random(7, &mut rng);
        assert_eq!(a.add(&a.neg()).unwrap(), Label::zero(7));
        assert_eq!(a.scale(1), a);
        let b = Label::random(5, &mut rng);
        assert!(matches!(a.add(&b), Err(Error::ModulusMismatch(7, 5))));
    }

    #[test]
    fn free_addition_identity() {
        let mut rng = rng();
        let p = 11;
        let r = gen_offset(p, &mut rng);
        let l0 = Label::random(p, &mut rng);
        let m0 = Label::random(p, &mut rng);
        for a in 0..p {
            for b in 0..p {
                let lhs = r.encode(&l0, a).unwrap().add(&r.encode(&m0, b).unwrap()).unwrap();
                // digitwise oracle
                let expected: Vec<u16> = (0..label_len(p))
                    .map(|i| (l0.digits()[i] + m0.digits()[i] + (a + b) * r.digits()[i]) % p)
                    .collect();
                assert_eq!(lhs.digits(), expected.as_slice());
            }
        }
    }

    #[test]
    fn color_tracks_value() {
        let mut rng = rng();
        for p in [2u16, 3, 5, 7] {
            let r = gen_offset(p, &mut rng);
            let l0 = Label::random(p, &mut rng);
            for a in 0..p {
                assert_eq!(r.encode(&l0, a).unwrap().color(), (l0.color() + a) % p);
            }
            assert_eq!(Label::zero(p).color(), 0);
            assert_eq!(r.label().color(), 1);
        }
    }

    #[test]
    fn compress_examples() {
        assert_eq!(Label::zero(13).compress(), 0);
        let mut rng = rng();
        let l = Label::random(2, &mut rng);
        let packed = l
            .digits()
            .iter()
            .enumerate()
            .fold(0u128, |acc, (i, &b)| acc | (b as u128) << i);
        assert_eq!(l.compress(), packed);
        let l = Label::random(13, &mut rng);
        assert_eq!(Label::decompress(l.compress(), 13).unwrap(), l);
    }

    #[test]
    fn compress_matches_horner() {
        let mut rng = rng();
        for m in [3u16, 5, 19, 46, 53, 100, 127] {
            let l = Label::random(m, &mut rng);
            let horner = l
                .digits()
                .iter()
                .rev()
                .fold(0u128, |acc, &d| acc * m as u128 + d as u128);
            assert_eq!(l.compress(), horner, "m={m}");
        }
    }

    #[test]
    fn decompress_rejects_oversized_chunk() {
        let limit = radix(13).limit().unwrap();
        assert!(Label::decompress(limit, 13).is_err());
        assert!(Label::decompress(limit - 1, 13).is_ok());
        assert!(Label::decompress(u128::MAX, 2).is_ok());
    }

    #[test]
    fn tensor_basics() {
        let mut rng = rng();
        let t = LabelTensor::random(7, &[2, 3], &mut rng);
        assert_eq!(t.add(&LabelTensor::zeros(7, &[2, 3])).unwrap(), t);
        let flat = t.clone().reshape(&[6]).unwrap();
        assert_eq!(flat.data(), t.data());
        assert_eq!(flat.shape(), &[6]);
        assert!(t.clone().reshape(&[7]).is_err());
        assert!(t.add(&LabelTensor::zeros(7, &[3, 2])).is_err());
        assert!(t.add(&LabelTensor::zeros(5, &[2, 3])).is_err());
    }

    #[test]
    fn window_count() {
        let t = LabelTensor::zeros(3, &[1, 8, 8]);
        let g = t.gather_windows(4, 2).unwrap();
        // ((8 - 4) / 2 + 1)^2 windows of 16 labels
        assert_eq!(&g.shape()[..2], &[3, 3]);
        assert_eq!(g.shape()[0] * g.shape()[1], 9);
        assert_eq!(g.len(), 9 * 16);
        assert!(t.gather_windows(9, 1).is_err());
    }

    #[test]
    fn window_contents() {
        let mut rng = rng();
        let t = LabelTensor::random(5, &[2, 5, 4], &mut rng);
        let g = t.gather_windows(3, 1).unwrap();
        assert_eq!(g.shape(), &[3, 2, 2, 3, 3]);
        let (oh, ow, c, f) = (3, 2, 2, 3);
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    for fy in 0..f {
                        for fx in 0..f {
                            let src = (ch * 5 + oy + fy) * 4 + ox + fx;
                            let dst = (((oy * ow + ox) * c + ch) * f + fy) * f + fx;
                            assert_eq!(g.label(dst), t.label(src));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn tensor_serialization() {
        let mut rng = rng();
        let t = LabelTensor::random(19, &[3, 2], &mut rng);
        let mut w = Writer::new();
        t.write_to(&mut w);
        let bytes = w.into_inner();
        assert_eq!(bytes.len(), 2 + 1 + 8 + 6 * 16);
        let mut r = Reader::new(&bytes);
        assert_eq!(LabelTensor::read_from(&mut r).unwrap(), t);
        r.finish().unwrap();
    }

    #[test]
    fn reduction_matches_wide_modulo() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        for m in 2..=MAX_MODULUS {
            let r = radix(m);
            let mut got = vec![0u16; r.len()];
            for v in [0u128, 1, u64::MAX as u128, u128::MAX, u128::MAX - 1]
                .into_iter()
                .chain((0..20).map(|_| rng.gen()))
            {
                r.reduce_into(v, &mut got);
                let mut x = r.limit().map_or(v, |l| v % l);
                for &d in &got {
                    assert_eq!(d as u128, x % m as u128, "m = {m}, v = {v}");
                    x /= m as u128;
                }
            }
        }
    }
}
