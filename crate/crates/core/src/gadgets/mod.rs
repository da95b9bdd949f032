//! Garbled gadgets over arithmetic labels.
//!
//! Garbler-side functions take and return *base labels* (the label carrying
//! value 0); evaluator-side functions take and return *active labels* and
//! never see a plaintext value. A wire with base label `l0` and offset `R`
//! carries `a` as `l0 + a * R`.

mod sign;

pub use sign::{
    choose_mixed_radix, eval_approx_sign, eval_mixed_radix_add, garble_approx_sign, garble_mixed_radix_add,
    measure_sign_accuracy, MixedRadixAdder, MixedRadixSpec, SignAccuracy, SignGadget, SignPlan, SignTables,
};

use std::collections::BTreeMap;
use std::ops::Range;

use rand::{CryptoRng, Rng, RngCore};

use crate::cipher::{decrypt_digits, decrypt_short_chunk, encrypt_digits, encrypt_short_chunks, hash, short_width};
use crate::cipher::{Ciphertext128, Tweak};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::labels::{add_scaled_assign, check_modulus, label_len, radix, sub_assign, Label, OffsetLabel};

/// Exact number of 128-bit blocks a gadget contributes to a garbled circuit.
pub trait CiphertextCount {
    fn ciphertext_count(&self) -> usize;
}

/// Offsets `R_m` and constant-zero wires for every modulus a circuit uses.
#[derive(Clone, Debug)]
pub struct WireKeys {
    offsets: BTreeMap<u16, OffsetLabel>,
    zeros: ZeroWires,
}

impl WireKeys {
    pub fn generate<R: Rng + CryptoRng + ?Sized>(moduli: impl IntoIterator<Item = u16>, rng: &mut R) -> Result<Self> {
        let mut set: Vec<u16> = moduli.into_iter().collect();
        set.sort_unstable();
        set.dedup();
        let mut offsets = BTreeMap::new();
        let mut zeros = BTreeMap::new();
        for m in set {
            check_modulus(m)?;
            offsets.insert(m, OffsetLabel::random(m, rng));
            zeros.insert(m, Label::random(m, rng));
        }
        Ok(WireKeys {
            offsets,
            zeros: ZeroWires(zeros),
        })
    }

    pub fn offset(&self, m: u16) -> Result<&OffsetLabel> {
        self.offsets
            .get(&m)
            .ok_or_else(|| Error::Gadget(format!("no offset label for modulus {m}")))
    }

    pub fn zeros(&self) -> &ZeroWires {
        &self.zeros
    }

    pub fn moduli(&self) -> impl Iterator<Item = u16> + '_ {
        self.offsets.keys().copied()
    }

    /// `base + value * R_m`.
    pub fn encode(&self, base: &Label, value: u16) -> Result<Label> {
        self.offset(base.modulus())?.encode(base, value)
    }

    /// Recover the value carried by `active` on a wire with base label
    /// `base`, or `None` if it is not a valid label of that wire.
    pub fn decode(&self, base: &Label, active: &Label) -> Result<Option<u16>> {
        let m = base.modulus();
        let offset = self.offset(m)?;
        for v in 0..m {
            if offset.encode(base, v)? == *active {
                return Ok(Some(v));
            }
        }
        Ok(None)
    }
}

/// Circuit-wide labels with semantic value 0, one per modulus. They are
/// public: the evaluator holds the same labels as the garbler.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ZeroWires(BTreeMap<u16, Label>);

impl ZeroWires {
    pub fn get(&self, m: u16) -> Result<&Label> {
        self.0
            .get(&m)
            .ok_or_else(|| Error::Gadget(format!("no zero wire for modulus {m}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&u16, &Label)> {
        self.0.iter()
    }

    pub fn write_to(&self, w: &mut Writer) {
        w.len_u32(self.0.len());
        for (&m, l) in &self.0 {
            w.u16(m);
            w.u128(l.compress());
        }
    }

    pub fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        let n = r.len_u32(18)?;
        let mut map = BTreeMap::new();
        for _ in 0..n {
            let m = r.u16()?;
            map.insert(m, Label::decompress(r.u128()?, m)?);
        }
        Ok(ZeroWires(map))
    }
}

/// Per-gadget garbling state: shared keys, a private randomness stream, and
/// an exclusive range of gate ids.
pub struct GateCtx<'a, R> {
    keys: &'a WireKeys,
    rng: R,
    gates: Range<u64>,
}

impl<'a, R: RngCore + CryptoRng> GateCtx<'a, R> {
    pub fn new(keys: &'a WireKeys, rng: R, gates: Range<u64>) -> Self {
        GateCtx { keys, rng, gates }
    }

    pub fn keys(&self) -> &'a WireKeys {
        self.keys
    }

    pub fn next_gate(&mut self) -> Result<u64> {
        let id = self.gates.next().ok_or(Error::DuplicateTweak(self.gates.end))?;
        Ok(id)
    }

    /// Gate ids not yet handed out.
    pub fn remaining_gates(&self) -> Range<u64> {
        self.gates.clone()
    }

    pub fn random_label(&mut self, m: u16) -> Label {
        Label::random(m, &mut self.rng)
    }

    pub fn rng(&mut self) -> &mut R {
        &mut self.rng
    }
}

// ---------------------------------------------------------------------------
// free gadgets

/// Sum of two or more labels of one modulus. Used unchanged by garbler (on
/// base labels) and evaluator (on active labels).
pub fn free_add(inputs: &[&Label]) -> Result<Label> {
    if inputs.len() < 2 {
        return Err(Error::Gadget(format!(
            "addition needs at least two operands, got {}",
            inputs.len()
        )));
    }
    let mut acc = inputs[0].clone();
    for l in &inputs[1..] {
        acc = acc.add(l)?;
    }
    Ok(acc)
}

/// `c * l` for `c` coprime to the modulus.
pub fn const_mult(l: &Label, c: u16) -> Result<Label> {
    let m = l.modulus();
    if gcd(c % m, m) != 1 {
        return Err(Error::Gadget(format!("constant {c} is not coprime to modulus {m}")));
    }
    Ok(l.scale(c % m))
}

/// Garbler side of adding a public constant: the new base label is
/// `l0 - c * R`, so the unchanged physical label carries `a + c`. The
/// evaluator does nothing.
pub fn add_public_constant(base: &Label, c: u16, offset: &OffsetLabel) -> Result<Label> {
    let m = base.modulus();
    if offset.modulus() != m {
        return Err(Error::ModulusMismatch(m, offset.modulus()));
    }
    let neg_c = (m - c % m) % m;
    base.add_scaled(offset.label(), neg_c)
}

pub(crate) fn gcd(mut a: u16, mut b: u16) -> u16 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

// ---------------------------------------------------------------------------
// projection gates

/// Garbled unary gate `Z_p -> Z_q`, rows ordered by input color. A reduced
/// table omits the color-0 row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProjectionTable {
    gate_id: u64,
    in_modulus: u16,
    out_modulus: u16,
    reduced: bool,
    rows: Vec<Ciphertext128>,
}

impl ProjectionTable {
    pub fn gate_id(&self) -> u64 {
        self.gate_id
    }

    pub fn in_modulus(&self) -> u16 {
        self.in_modulus
    }

    pub fn out_modulus(&self) -> u16 {
        self.out_modulus
    }

    pub fn is_reduced(&self) -> bool {
        self.reduced
    }

    pub fn rows(&self) -> &[Ciphertext128] {
        &self.rows
    }

    pub fn write_to(&self, w: &mut Writer) {
        w.u8(if self.reduced {
            TAG_PROJECTION_REDUCED
        } else {
            TAG_PROJECTION
        });
        w.u64(self.gate_id);
        w.u16(self.in_modulus);
        w.u16(self.out_modulus);
        for ct in &self.rows {
            w.u128(ct.0);
        }
    }

    pub fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        let reduced = match r.u8()? {
            TAG_PROJECTION => false,
            TAG_PROJECTION_REDUCED => true,
            t => return Err(Error::Format(format!("expected projection tag, got {t}"))),
        };
        let gate_id = r.u64()?;
        let in_modulus = r.u16()?;
        let out_modulus = r.u16()?;
        check_modulus(in_modulus)?;
        check_modulus(out_modulus)?;
        let n = in_modulus as usize - reduced as usize;
        let rows = read_rows(r, n)?;
        Ok(ProjectionTable {
            gate_id,
            in_modulus,
            out_modulus,
            reduced,
            rows,
        })
    }
}

impl CiphertextCount for ProjectionTable {
    fn ciphertext_count(&self) -> usize {
        self.rows.len()
    }
}

const TAG_PROJECTION: u8 = 1;
const TAG_PROJECTION_REDUCED: u8 = 2;
const TAG_HALF_GATE: u8 = 3;
const TAG_MM_HALF_GATE: u8 = 4;

fn read_rows(r: &mut Reader<'_>, n: usize) -> Result<Vec<Ciphertext128>> {
    (0..n).map(|_| r.u128().map(Ciphertext128)).collect()
}

/// Value carried by the label of color `color` on a wire with base color
/// `base_color`.
#[inline]
fn value_of_color(color: u16, base_color: u16, m: u16) -> u16 {
    (color + m - base_color) % m
}

fn check_table(phi_values: &[u16], q: u16) -> Result<()> {
    match phi_values.iter().find(|&&v| v >= q) {
        Some(v) => Err(Error::Gadget(format!("projection output {v} is not below {q}"))),
        None => Ok(()),
    }
}

/// Garble `phi: Z_p -> Z_q` on the wire with base label `input`. Returns the
/// table and the output wire's base label.
pub fn garble_projection<R, F>(
    ctx: &mut GateCtx<'_, R>,
    input: &Label,
    q: u16,
    phi: F,
) -> Result<(ProjectionTable, Label)>
where
    R: RngCore + CryptoRng,
    F: Fn(u16) -> u16,
{
    garble_projection_impl(ctx, input, q, phi, false)
}

/// Row-reduced projection: the output base label is chosen so the color-0
/// row encrypts to zero and is omitted, leaving `p - 1` rows.
pub fn garble_projection_reduced<R, F>(
    ctx: &mut GateCtx<'_, R>,
    input: &Label,
    q: u16,
    phi: F,
) -> Result<(ProjectionTable, Label)>
where
    R: RngCore + CryptoRng,
    F: Fn(u16) -> u16,
{
    garble_projection_impl(ctx, input, q, phi, true)
}

fn garble_projection_impl<R, F>(
    ctx: &mut GateCtx<'_, R>,
    input: &Label,
    q: u16,
    phi: F,
    reduced: bool,
) -> Result<(ProjectionTable, Label)>
where
    R: RngCore + CryptoRng,
    F: Fn(u16) -> u16,
{
    check_modulus(q)?;
    let p = input.modulus();
    let phi_values: Vec<u16> = (0..p).map(&phi).collect();
    check_table(&phi_values, q)?;
    let in_offset = ctx.keys.offset(p)?;
    let out_offset = ctx.keys.offset(q)?;
    let gate_id = ctx.next_gate()?;
    let base_color = input.color();
    let rin = radix(p);

    let mut key = input.clone();
    let key_for = |key: &mut Label, a: u16| {
        key.digits_mut().copy_from_slice(input.digits());
        add_scaled_assign(key.digits_mut(), in_offset.digits(), a, p);
        rin.compress(key.digits())
    };

    let out_base = if reduced {
        let a0 = value_of_color(0, base_color, p);
        let h0 = hash(key_for(&mut key, a0), None, Tweak::new(gate_id, 0, 0));
        // out_base + phi(a0) R = -pad(h0)
        let mut base = Label::zero(q);
        radix(q).reduce_into(h0, base.digits_mut());
        let mut neg = Label::zero(q);
        sub_assign(neg.digits_mut(), base.digits(), q);
        add_scaled_assign(
            neg.digits_mut(),
            out_offset.digits(),
            (q - phi_values[a0 as usize]) % q,
            q,
        );
        neg
    } else {
        ctx.random_label(q)
    };

    let mut rows = Vec::with_capacity(p as usize);
    let mut msg = Label::zero(q);
    let mut scratch = vec![0u16; label_len(q)];
    for color in reduced as u16..p {
        let a = value_of_color(color, base_color, p);
        let k = key_for(&mut key, a);
        msg.digits_mut().copy_from_slice(out_base.digits());
        add_scaled_assign(msg.digits_mut(), out_offset.digits(), phi_values[a as usize], q);
        let h = hash(k, None, Tweak::new(gate_id, color as u32, 0));
        rows.push(Ciphertext128(encrypt_digits(h, q, msg.digits(), &mut scratch)));
    }
    Ok((
        ProjectionTable {
            gate_id,
            in_modulus: p,
            out_modulus: q,
            reduced,
            rows,
        },
        out_base,
    ))
}

/// Decrypt the row selected by the input label's color.
pub fn eval_projection(table: &ProjectionTable, input: &Label) -> Result<Label> {
    if input.modulus() != table.in_modulus {
        return Err(Error::ModulusMismatch(table.in_modulus, input.modulus()));
    }
    Ok(eval_projection_chunk(table, input.compress(), input.color()))
}

/// `eval_projection` on an input already compressed, for wires feeding
/// several tables.
pub(crate) fn eval_projection_chunk(table: &ProjectionTable, chunk: u128, color: u16) -> Label {
    let q = table.out_modulus;
    let h = hash(chunk, None, Tweak::new(table.gate_id, color as u32, 0));
    let mut out = Label::zero(q);
    let mut pad = Label::zero(q);
    if table.reduced && color == 0 {
        radix(q).reduce_into(h, pad.digits_mut());
        sub_assign(out.digits_mut(), pad.digits(), q);
        return out;
    }
    let row = table.rows[(color - table.reduced as u16) as usize];
    decrypt_digits(h, q, row.0, out.digits_mut(), pad.digits_mut());
    out
}

// ---------------------------------------------------------------------------
// half gates

/// The two half-gate tables of a multiplication, plus the packed block of
/// short ciphertexts in the mixed-modulus case.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HalfGatePair {
    gate_id: u64,
    x_modulus: u16,
    y_modulus: u16,
    garbler_rows: Vec<Ciphertext128>,
    evaluator_rows: Vec<Ciphertext128>,
    short_block: Option<Ciphertext128>,
}

impl HalfGatePair {
    pub fn gate_id(&self) -> u64 {
        self.gate_id
    }

    pub fn garbler_rows(&self) -> &[Ciphertext128] {
        &self.garbler_rows
    }

    pub fn evaluator_rows(&self) -> &[Ciphertext128] {
        &self.evaluator_rows
    }

    pub fn short_block(&self) -> Option<Ciphertext128> {
        self.short_block
    }

    pub fn write_to(&self, w: &mut Writer) {
        w.u8(if self.short_block.is_some() {
            TAG_MM_HALF_GATE
        } else {
            TAG_HALF_GATE
        });
        w.u64(self.gate_id);
        w.u16(self.x_modulus);
        w.u16(self.y_modulus);
        for ct in self
            .garbler_rows
            .iter()
            .chain(&self.evaluator_rows)
            .chain(&self.short_block)
        {
            w.u128(ct.0);
        }
    }

    pub fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        let mixed = match r.u8()? {
            TAG_HALF_GATE => false,
            TAG_MM_HALF_GATE => true,
            t => return Err(Error::Format(format!("expected half-gate tag, got {t}"))),
        };
        let gate_id = r.u64()?;
        let x_modulus = r.u16()?;
        let y_modulus = r.u16()?;
        check_modulus(x_modulus)?;
        check_modulus(y_modulus)?;
        if !mixed && x_modulus != y_modulus {
            return Err(Error::Format("half gate with distinct moduli".into()));
        }
        let garbler_rows = read_rows(r, x_modulus as usize)?;
        let evaluator_rows = read_rows(r, y_modulus as usize)?;
        let short_block = if mixed { Some(Ciphertext128(r.u128()?)) } else { None };
        Ok(HalfGatePair {
            gate_id,
            x_modulus,
            y_modulus,
            garbler_rows,
            evaluator_rows,
            short_block,
        })
    }
}

impl ProjectionTable {
    pub fn prefetch(&self) {
        prefetch(&self.rows);
    }
}

impl CiphertextCount for HalfGatePair {
    fn ciphertext_count(&self) -> usize {
        self.garbler_rows.len() + self.evaluator_rows.len() + self.short_block.is_some() as usize
    }
}

impl HalfGatePair {
    /// Hint the cache to load the rows ahead of evaluation.
    pub fn prefetch(&self) {
        prefetch(&self.garbler_rows);
        prefetch(&self.evaluator_rows);
    }
}

/// Garbler half gate: rows `EN_{x0 + aR}(u0 + a r R)` indexed by the color of
/// the `x` label.
fn garbler_half_rows(gate_id: u64, x: &Label, offset: &OffsetLabel, u0: &Label, r: u16) -> Vec<Ciphertext128> {
    let p = x.modulus();
    let rad = radix(p);
    let mut key = x.clone();
    let mut msg = Label::zero(p);
    let mut scratch = vec![0u16; label_len(p)];
    (0..p)
        .map(|color| {
            let a = value_of_color(color, x.color(), p);
            key.digits_mut().copy_from_slice(x.digits());
            add_scaled_assign(key.digits_mut(), offset.digits(), a, p);
            msg.digits_mut().copy_from_slice(u0.digits());
            add_scaled_assign(
                msg.digits_mut(),
                offset.digits(),
                ((a as u32 * r as u32) % p as u32) as u16,
                p,
            );
            let h = hash(rad.compress(key.digits()), None, Tweak::new(gate_id, color as u32, 0));
            Ciphertext128(encrypt_digits(h, p, msg.digits(), &mut scratch))
        })
        .collect()
}

/// Generalized half gate for `a * b` on two wires of the same modulus.
pub fn garble_half_gate<R: RngCore + CryptoRng>(
    ctx: &mut GateCtx<'_, R>,
    x: &Label,
    y: &Label,
) -> Result<(HalfGatePair, Label)> {
    let p = x.modulus();
    if y.modulus() != p {
        return Err(Error::ModulusMismatch(p, y.modulus()));
    }
    let offset = ctx.keys.offset(p)?;
    let gate_id = ctx.next_gate()?;
    let r = y.color();
    let u0 = ctx.random_label(p);
    let v0 = ctx.random_label(p);
    let garbler_rows = garbler_half_rows(gate_id, x, offset, &u0, r);

    let rad = radix(p);
    let mut key = y.clone();
    let mut msg = Label::zero(p);
    let mut scratch = vec![0u16; label_len(p)];
    let evaluator_rows = (0..p)
        .map(|color| {
            // color = b + r, so the payload is v0 - color * x0
            let b = value_of_color(color, r, p);
            key.digits_mut().copy_from_slice(y.digits());
            add_scaled_assign(key.digits_mut(), offset.digits(), b, p);
            msg.digits_mut().copy_from_slice(v0.digits());
            add_scaled_assign(msg.digits_mut(), x.digits(), (p - color) % p, p);
            let h = hash(rad.compress(key.digits()), None, Tweak::new(gate_id, color as u32, 1));
            Ciphertext128(encrypt_digits(h, p, msg.digits(), &mut scratch))
        })
        .collect();
    let out = v0.sub(&u0)?;
    let pair = HalfGatePair {
        gate_id,
        x_modulus: p,
        y_modulus: p,
        garbler_rows,
        evaluator_rows,
        short_block: None,
    };
    Ok((pair, out))
}

pub fn eval_half_gate(pair: &HalfGatePair, x: &Label, y: &Label) -> Result<Label> {
    if pair.short_block.is_some() {
        return Err(Error::Gadget("mixed-modulus pair passed to eval_half_gate".into()));
    }
    let p = pair.x_modulus;
    if x.modulus() != p || y.modulus() != p {
        return Err(Error::ModulusMismatch(
            p,
            if x.modulus() != p { x.modulus() } else { y.modulus() },
        ));
    }
    let cy = y.color();
    combine_half_gates(pair, x, y, cy)
}

/// `E + s * x - G` with `G`, `E` the decrypted garbler and evaluator rows.
fn combine_half_gates(pair: &HalfGatePair, x: &Label, y: &Label, s: u16) -> Result<Label> {
    let p = pair.x_modulus;
    let (cx, cy) = (x.color(), y.color());
    let mut scratch = Label::zero(p);
    let mut g = Label::zero(p);
    let hx = hash(x.compress(), None, Tweak::new(pair.gate_id, cx as u32, 0));
    decrypt_digits(
        hx,
        p,
        pair.garbler_rows[cx as usize].0,
        g.digits_mut(),
        scratch.digits_mut(),
    );
    let mut out = Label::zero(p);
    let hy = hash(y.compress(), None, Tweak::new(pair.gate_id, cy as u32, 1));
    decrypt_digits(
        hy,
        p,
        pair.evaluator_rows[cy as usize].0,
        out.digits_mut(),
        scratch.digits_mut(),
    );
    add_scaled_assign(out.digits_mut(), x.digits(), s, p);
    sub_assign(out.digits_mut(), g.digits(), p);
    Ok(out)
}

/// Mixed-modulus half gate: `a * b` for `x` over `Z_p` and `y` over `Z_q`,
/// `q <= p`, with `b` read as an integer in `[0, q)`. Costs `p + q + 1`
/// blocks.
pub fn garble_mm_half_gate<R: RngCore + CryptoRng>(
    ctx: &mut GateCtx<'_, R>,
    x: &Label,
    y: &Label,
) -> Result<(HalfGatePair, Label)> {
    let (p, q) = (x.modulus(), y.modulus());
    if q > p {
        return Err(Error::Gadget(format!(
            "mixed-modulus half gate needs q <= p, got q={q} p={p}"
        )));
    }
    if q as u32 * short_width(p) > 128 {
        return Err(Error::Gadget(format!(
            "{q} short ciphertexts mod {p} do not fit one block"
        )));
    }
    let x_offset = ctx.keys.offset(p)?;
    let y_offset = ctx.keys.offset(q)?;
    let gate_id = ctx.next_gate()?;
    let r = x.color();
    let u0 = ctx.random_label(p);
    let v0 = ctx.random_label(p);
    let garbler_rows = garbler_half_rows(gate_id, x, x_offset, &u0, r);

    let rq = radix(q);
    let mut key = y.clone();
    let mut msg = Label::zero(p);
    let mut scratch = vec![0u16; label_len(p)];
    let mut keys = Vec::with_capacity(q as usize);
    let mut shorts = Vec::with_capacity(q as usize);
    let mut evaluator_rows = Vec::with_capacity(q as usize);
    for color in 0..q {
        let b = value_of_color(color, y.color(), q);
        let s = ((r as u32 + b as u32) % p as u32) as u16;
        key.digits_mut().copy_from_slice(y.digits());
        add_scaled_assign(key.digits_mut(), y_offset.digits(), b, q);
        let k = rq.compress(key.digits());
        msg.digits_mut().copy_from_slice(v0.digits());
        add_scaled_assign(msg.digits_mut(), x.digits(), (p - s) % p, p);
        let h = hash(k, None, Tweak::new(gate_id, color as u32, 1));
        evaluator_rows.push(Ciphertext128(encrypt_digits(h, p, msg.digits(), &mut scratch)));
        keys.push(k);
        shorts.push(s);
    }
    let short_block = encrypt_short_chunks(&keys, Tweak::new(gate_id, 0, 2), &shorts, p)?;
    let out = v0.sub(&u0)?;
    let pair = HalfGatePair {
        gate_id,
        x_modulus: p,
        y_modulus: q,
        garbler_rows,
        evaluator_rows,
        short_block: Some(short_block),
    };
    Ok((pair, out))
}

pub fn eval_mm_half_gate(pair: &HalfGatePair, x: &Label, y: &Label) -> Result<Label> {
    let short = pair
        .short_block
        .ok_or_else(|| Error::Gadget("pair has no short block".into()))?;
    if x.modulus() != pair.x_modulus {
        return Err(Error::ModulusMismatch(pair.x_modulus, x.modulus()));
    }
    if y.modulus() != pair.y_modulus {
        return Err(Error::ModulusMismatch(pair.y_modulus, y.modulus()));
    }
    let s = decrypt_short_chunk(
        short,
        y.compress(),
        Tweak::new(pair.gate_id, 0, 2),
        y.color() as usize,
        pair.x_modulus,
    );
    combine_half_gates(pair, x, y, s)
}

// ---------------------------------------------------------------------------
// gadget serialization helpers shared with the layer code

pub(crate) fn write_tables(w: &mut Writer, tables: &[ProjectionTable]) {
    w.len_u32(tables.len());
    for t in tables {
        t.write_to(w);
    }
}

pub(crate) fn read_tables(r: &mut Reader<'_>) -> Result<Vec<ProjectionTable>> {
    let n = r.len_u32(13)?;
    (0..n).map(|_| ProjectionTable::read_from(r)).collect()
}

/// Issue cache prefetches covering `data`. Gadget tables are read once per
/// evaluation at data-dependent rows, so demand misses would serialize.
pub(crate) fn prefetch<T>(data: &[T]) {
    #[cfg(target_arch = "x86_64")]
    {
        use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        let bytes = std::mem::size_of_val(data);
        let start = data.as_ptr() as *const i8;
        for off in (0..bytes).step_by(64).chain((bytes > 0).then(|| bytes - 1)) {
            // SAFETY: prefetching is a hint and never faults; the address
            // lies inside `data`.
            unsafe { _mm_prefetch(start.add(off), _MM_HINT_T0) }
        }
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = data;
}
