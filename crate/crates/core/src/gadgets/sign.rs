//! Approximate sign over CRT residues via a mixed-radix sum of per-residue
//! lookup tables.
//!
//! The gadget tests `x - 1` against half of the CRT ring, so its output bit
//! is 1 exactly when `x` is strictly positive in the symmetric value range.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rand::{CryptoRng, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{
    add_public_constant, eval_projection, eval_projection_chunk, free_add, garble_projection,
    garble_projection_reduced, prefetch, read_tables, write_tables, CiphertextCount, GateCtx, ProjectionTable,
    ZeroWires,
};
use crate::codec::{Reader, Writer};
use crate::crt::CrtBase;
use crate::error::{Error, Result};
use crate::labels::Label;

/// Largest single-digit modulus tried before switching to trailing digits.
const MAX_LEADING: u16 = 128;
const LEADING_RANGE: (u16, u16) = (50, 128);
const TRAILING_FACTORS: [u16; 7] = [2, 3, 4, 5, 6, 7, 8];
/// Rings up to this size are measured exhaustively.
const EXHAUSTIVE_LIMIT: u128 = 1 << 20;
const ACCURACY_SAMPLES: usize = 100_000;

/// Mixed-radix modulus `M = m_1 * m_2 * ... * m_t`, most significant digit
/// first. The leading radix is even.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixedRadixSpec {
    radices: Vec<u16>,
}

impl MixedRadixSpec {
    pub fn new(radices: Vec<u16>) -> Result<Self> {
        if radices.is_empty() {
            return Err(Error::Gadget("mixed radix needs at least one digit".into()));
        }
        if !radices[0].is_multiple_of(2) {
            return Err(Error::Gadget(format!("leading radix {} is odd", radices[0])));
        }
        if radices.iter().any(|&m| !(2..=MAX_LEADING).contains(&m)) {
            return Err(Error::Gadget(format!("radix out of range in {radices:?}")));
        }
        let mut m: u128 = 1;
        for &r in &radices {
            m = m
                .checked_mul(r as u128)
                .ok_or_else(|| Error::Overflow("mixed-radix modulus".into()))?;
        }
        Ok(MixedRadixSpec { radices })
    }

    pub fn radices(&self) -> &[u16] {
        &self.radices
    }

    pub fn len(&self) -> usize {
        self.radices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn modulus(&self) -> u128 {
        self.radices.iter().map(|&r| r as u128).product()
    }

    pub fn leading(&self) -> u16 {
        self.radices[0]
    }

    /// Digits of `v mod M`, most significant first.
    pub fn digits(&self, v: u128) -> Vec<u16> {
        let mut v = v % self.modulus();
        let mut out = vec![0u16; self.radices.len()];
        for (d, &r) in out.iter_mut().zip(&self.radices).rev() {
            *d = (v % r as u128) as u16;
            v /= r as u128;
        }
        out
    }

    /// Per-digit adder stages for `k` summands, least significant first.
    pub(crate) fn stages(&self, k: usize) -> Vec<Stage> {
        let t = self.radices.len();
        let mut stages = Vec::with_capacity(t.saturating_sub(1));
        let mut carry_max = 0u32;
        for j in (1..t).rev() {
            let m = self.radices[j] as u32;
            let sum_max = k as u32 * (m - 1) + carry_max;
            carry_max = sum_max / m;
            stages.push(Stage {
                radix: m as u16,
                sum_modulus: (sum_max + 1) as u16,
                target: 0,
            });
        }
        // Each carry lands directly in the next stage's sum modulus.
        for i in 0..stages.len() {
            stages[i].target = match stages.get(i + 1) {
                Some(next) => next.sum_modulus,
                None => self.radices[0],
            };
        }
        stages
    }

    /// Ciphertexts of the full sign gadget over `primes`.
    pub fn sign_cost(&self, primes: &[u16]) -> usize {
        let k = primes.len();
        let sum_p: usize = primes.iter().map(|&p| p as usize).sum();
        let adder: usize = self
            .stages(k)
            .iter()
            .map(|s| k * s.radix as usize + s.sum_modulus as usize)
            .sum();
        self.len() * sum_p + adder + (self.leading() as usize - 1)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Stage {
    radix: u16,
    pub(crate) sum_modulus: u16,
    target: u16,
}

/// Requested accuracy of the sign approximation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SignAccuracy {
    /// Exact on the whole ring.
    Full,
    /// Smallest modulus on a halving grid whose measured accuracy is at
    /// least the given fraction.
    AtLeast(f64),
}

/// Lookup tables `d_i(y)`: the mixed-radix digits of `round(M * frac(alpha_i y / P))`.
#[derive(Clone, Debug)]
pub struct SignTables {
    base: Arc<CrtBase>,
    spec: MixedRadixSpec,
    tables: Vec<Vec<Vec<u16>>>,
    values: Vec<Vec<u128>>,
}

impl SignTables {
    pub fn new(base: Arc<CrtBase>, spec: MixedRadixSpec) -> Self {
        let m = spec.modulus();
        let mut tables = Vec::with_capacity(base.k());
        let mut values = Vec::with_capacity(base.k());
        for (&p, &inv) in base.primes().iter().zip(base.cofactor_inverses()) {
            let (p, inv) = (p as u128, inv as u128);
            let vals: Vec<u128> = (0..p)
                .map(|y| {
                    let j = inv * y % p;
                    // round(M j / p); M j / p is never a half-integer tie here
                    ((2 * m * j + p) / (2 * p)) % m
                })
                .collect();
            tables.push(vals.iter().map(|&v| spec.digits(v)).collect());
            values.push(vals);
        }
        SignTables {
            base,
            spec,
            tables,
            values,
        }
    }

    pub fn base(&self) -> &Arc<CrtBase> {
        &self.base
    }

    pub fn spec(&self) -> &MixedRadixSpec {
        &self.spec
    }

    /// Digits of `d_i(y)`, most significant first.
    pub fn digits(&self, prime_index: usize, residue: u16) -> &[u16] {
        &self.tables[prime_index][residue as usize]
    }

    pub fn value(&self, prime_index: usize, residue: u16) -> u128 {
        self.values[prime_index][residue as usize]
    }

    /// Plaintext model of the garbled gadget for `x` in `[0, P)`.
    pub fn approx_positive(&self, x: u128) -> bool {
        let p_k = self.base.modulus_u128();
        let y = (x % p_k + p_k - 1) % p_k;
        let m = self.spec.modulus();
        let s = self.base.primes().iter().enumerate().fold(0u128, |acc, (i, &p)| {
            (acc + self.values[i][(y % p as u128) as usize]) % m
        });
        let msd = s / (m / self.spec.leading() as u128);
        msd < (self.spec.leading() / 2) as u128
    }

    /// Exact reference: `x` in `[1, P/2]`.
    pub fn exact_positive(&self, x: u128) -> bool {
        let p_k = self.base.modulus_u128();
        let x = x % p_k;
        x >= 1 && x <= p_k / 2
    }
}

/// Fraction of ring elements where the approximation matches the exact
/// test: exhaustive for small rings, otherwise a fixed-seed sample.
pub fn measure_sign_accuracy(tables: &SignTables) -> f64 {
    let p_k = tables.base.modulus_u128();
    if p_k <= EXHAUSTIVE_LIMIT {
        let ok = (0..p_k)
            .filter(|&x| tables.approx_positive(x) == tables.exact_positive(x))
            .count();
        ok as f64 / p_k as f64
    } else {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let ok = (0..ACCURACY_SAMPLES)
            .filter(|_| {
                let x = rng.gen_range(0..p_k);
                tables.approx_positive(x) == tables.exact_positive(x)
            })
            .count();
        ok as f64 / ACCURACY_SAMPLES as f64
    }
}

/// Pick the mixed-radix modulus for the sign gadget over `base`.
pub fn choose_mixed_radix(base: &Arc<CrtBase>, accuracy: SignAccuracy) -> Result<MixedRadixSpec> {
    let k = base.k() as u128;
    let full_min = k * base.modulus_u128() / 2 + 1;
    let full = spec_for_min_modulus(base, full_min)?;
    let target = match accuracy {
        SignAccuracy::Full => return Ok(full),
        SignAccuracy::AtLeast(f) if !(0.0..=1.0).contains(&f) || f.is_nan() => {
            return Err(Error::Gadget(format!("sign accuracy {f} is not in [0, 1]")))
        }
        SignAccuracy::AtLeast(f) if f >= 1.0 => return Ok(full),
        SignAccuracy::AtLeast(f) => f,
    };
    let full_m = full.modulus();
    let mut best = full;
    let mut last_m = full_m;
    for shift in 1..128u32 {
        let min_m = full_m.div_ceil(1u128 << shift).max(2);
        let candidate = spec_for_min_modulus(base, min_m)?;
        if candidate.modulus() == last_m {
            if min_m == 2 {
                break;
            }
            continue;
        }
        last_m = candidate.modulus();
        let tables = SignTables::new(base.clone(), candidate.clone());
        if measure_sign_accuracy(&tables) < target {
            break;
        }
        best = candidate;
        if min_m == 2 {
            break;
        }
    }
    Ok(best)
}

/// Smallest admissible spec with `M >= min_m`: one even digit when that fits,
/// otherwise an even leading digit in a fixed range times 7-smooth trailing
/// digits. Ties on `M` go to the cheaper gadget.
fn spec_for_min_modulus(base: &CrtBase, min_m: u128) -> Result<MixedRadixSpec> {
    let single = min_m.max(2).div_ceil(2) * 2;
    if single <= MAX_LEADING as u128 {
        return MixedRadixSpec::new(vec![single as u16]);
    }
    let primes = base.primes();
    let mut best: Option<(u128, usize, MixedRadixSpec)> = None;
    for m1 in (LEADING_RANGE.0..=LEADING_RANGE.1).step_by(2) {
        let s0 = min_m.div_ceil(m1 as u128).max(2);
        let s = smallest_smooth_at_least(s0)?;
        let m = s
            .checked_mul(m1 as u128)
            .ok_or_else(|| Error::Overflow("mixed-radix modulus".into()))?;
        let trailing = factor_trailing(s, primes);
        let mut options = Vec::new();
        for order in [false, true] {
            let mut t = trailing.clone();
            t.sort_unstable();
            if order {
                t.reverse();
            }
            let mut radices = vec![m1];
            radices.extend(t);
            let spec = MixedRadixSpec::new(radices)?;
            options.push((spec.sign_cost(primes), spec));
        }
        let (cost, spec) = options.into_iter().min_by_key(|(c, _)| *c).expect("two options");
        let better = match &best {
            None => true,
            Some((bm, bc, _)) => m < *bm || (m == *bm && cost < *bc),
        };
        if better {
            best = Some((m, cost, spec));
        }
    }
    Ok(best.expect("non-empty leading range").2)
}

fn smallest_smooth_at_least(s0: u128) -> Result<u128> {
    let limit = s0
        .checked_mul(2)
        .ok_or_else(|| Error::Overflow("smooth search".into()))?;
    let mut best = u128::MAX;
    let mut p7 = 1u128;
    while p7 <= limit {
        let mut p5 = p7;
        while p5 <= limit {
            let mut p3 = p5;
            while p3 <= limit {
                let mut v = p3;
                while v < s0 {
                    v *= 2;
                }
                best = best.min(v);
                p3 *= 3;
            }
            p5 *= 5;
        }
        p7 *= 7;
    }
    Ok(best)
}

/// Factor a 7-smooth `s` into digits from `{2..8}`, minimizing the per-digit
/// cost `sum(p) + 2 k m` of the adder.
fn factor_trailing(s: u128, primes: &[u16]) -> Vec<u16> {
    fn go(
        s: u128,
        digit_base: u128,
        k2: u128,
        memo: &mut HashMap<u128, Option<(u128, Vec<u16>)>>,
    ) -> Option<(u128, Vec<u16>)> {
        if s == 1 {
            return Some((0, Vec::new()));
        }
        if let Some(v) = memo.get(&s) {
            return v.clone();
        }
        let mut best: Option<(u128, Vec<u16>)> = None;
        for &f in &TRAILING_FACTORS {
            if !s.is_multiple_of(f as u128) {
                continue;
            }
            if let Some((c, mut ds)) = go(s / f as u128, digit_base, k2, memo) {
                let c = c + digit_base + k2 * f as u128;
                if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
                    ds.push(f);
                    best = Some((c, ds));
                }
            }
        }
        memo.insert(s, best.clone());
        best
    }
    let sum_p: u128 = primes.iter().map(|&p| p as u128).sum();
    let k2 = 2 * primes.len() as u128;
    go(s, sum_p, k2, &mut HashMap::new()).expect("7-smooth input").1
}

/// Precomputed sign parameters for one CRT base.
#[derive(Clone, Debug)]
pub struct SignPlan {
    tables: Arc<SignTables>,
}

impl SignPlan {
    pub fn new(base: Arc<CrtBase>, accuracy: SignAccuracy) -> Result<Self> {
        let spec = choose_mixed_radix(&base, accuracy)?;
        Ok(Self::with_spec(base, spec))
    }

    pub fn with_spec(base: Arc<CrtBase>, spec: MixedRadixSpec) -> Self {
        SignPlan {
            tables: Arc::new(SignTables::new(base, spec)),
        }
    }

    pub fn tables(&self) -> &SignTables {
        &self.tables
    }

    pub fn spec(&self) -> &MixedRadixSpec {
        &self.tables.spec
    }

    pub fn base(&self) -> &Arc<CrtBase> {
        &self.tables.base
    }

    /// Every wire modulus a sign gadget and its consumers touch.
    pub fn moduli(&self) -> BTreeSet<u16> {
        let mut set: BTreeSet<u16> = self.base().primes().iter().copied().collect();
        set.insert(2);
        set.extend(self.spec().radices().iter().copied());
        for s in self.spec().stages(self.base().k()) {
            set.insert(s.sum_modulus);
            set.insert(s.target);
        }
        set
    }

    pub fn sign_cost(&self) -> usize {
        self.spec().sign_cost(self.base().primes())
    }

    /// Sign plus one mixed-modulus half gate per residue.
    pub fn relu_cost(&self) -> usize {
        self.sign_cost() + self.base().primes().iter().map(|&p| p as usize + 3).sum::<usize>()
    }

    /// Sign plus a two-row projection per residue.
    pub fn sign_activation_cost(&self) -> usize {
        self.sign_cost() + 2 * self.base().k()
    }

    /// Gate ids one approximate sign consumes.
    pub fn sign_gates(&self) -> usize {
        let k = self.base().k();
        k * self.spec().len() + self.spec().stages(k).len() * (k + 1) + 1
    }
}

/// Garbled mixed-radix addition of `k` digit vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixedRadixAdder {
    /// Per stage (least significant first): `k` casts then the carry.
    stages: Vec<Vec<ProjectionTable>>,
}

impl CiphertextCount for MixedRadixAdder {
    fn ciphertext_count(&self) -> usize {
        self.stages.iter().flatten().map(|t| t.ciphertext_count()).sum()
    }
}

impl MixedRadixAdder {
    pub fn write_to(&self, w: &mut Writer) {
        w.len_u32(self.stages.len());
        for s in &self.stages {
            write_tables(w, s);
        }
    }

    pub fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        let n = r.len_u32(4)?;
        let stages = (0..n).map(|_| read_tables(r)).collect::<Result<Vec<_>>>()?;
        Ok(MixedRadixAdder { stages })
    }
}

fn check_summands(summands: &[Vec<Label>], spec: &MixedRadixSpec) -> Result<()> {
    if summands.is_empty() {
        return Err(Error::Gadget("mixed-radix addition needs a summand".into()));
    }
    for s in summands {
        if s.len() != spec.len() {
            return Err(Error::Gadget(format!(
                "summand has {} digits, expected {}",
                s.len(),
                spec.len()
            )));
        }
        for (l, &m) in s.iter().zip(spec.radices()) {
            if l.modulus() != m {
                return Err(Error::ModulusMismatch(m, l.modulus()));
            }
        }
    }
    Ok(())
}

/// Garble the sum of `summands` (each a digit vector, most significant
/// first) and return the base label of the most significant result digit.
pub fn garble_mixed_radix_add<R: RngCore + CryptoRng>(
    ctx: &mut GateCtx<'_, R>,
    summands: &[Vec<Label>],
    spec: &MixedRadixSpec,
) -> Result<(MixedRadixAdder, Label)> {
    check_summands(summands, spec)?;
    let t = spec.len();
    let mut carry: Option<Label> = None;
    let mut stages = Vec::new();
    for (stage, j) in spec.stages(summands.len()).iter().zip((1..t).rev()) {
        let n = stage.sum_modulus;
        let mut tables = Vec::with_capacity(summands.len() + 1);
        let mut sum = match carry.take() {
            Some(c) => c,
            None => ctx.keys().zeros().get(n)?.clone(),
        };
        for s in summands {
            let (table, cast) = garble_projection(ctx, &s[j], n, |v| v)?;
            sum = sum.add(&cast)?;
            tables.push(table);
        }
        let (m, target) = (stage.radix, stage.target);
        let (table, c) = garble_projection(ctx, &sum, target, |v| (v / m) % target)?;
        tables.push(table);
        carry = Some(c);
        stages.push(tables);
    }
    let mut msd: Vec<&Label> = summands.iter().map(|s| &s[0]).collect();
    msd.extend(carry.as_ref());
    let out = if msd.len() == 1 {
        msd[0].clone()
    } else {
        free_add(&msd)?
    };
    Ok((MixedRadixAdder { stages }, out))
}

pub fn eval_mixed_radix_add(
    adder: &MixedRadixAdder,
    summands: &[Vec<Label>],
    spec: &MixedRadixSpec,
    zeros: &ZeroWires,
) -> Result<Label> {
    check_summands(summands, spec)?;
    let t = spec.len();
    if adder.stages.len() != t - 1 {
        return Err(Error::Circuit(format!(
            "adder has {} stages, expected {}",
            adder.stages.len(),
            t - 1
        )));
    }
    let mut carry: Option<Label> = None;
    for (tables, j) in adder.stages.iter().zip((1..t).rev()) {
        if tables.len() != summands.len() + 1 {
            return Err(Error::Circuit("adder stage has the wrong number of tables".into()));
        }
        let n = tables[0].out_modulus();
        let mut sum = match carry.take() {
            Some(c) => c,
            None => zeros.get(n)?.clone(),
        };
        for (s, table) in summands.iter().zip(tables) {
            sum = sum.add(&eval_projection(table, &s[j])?)?;
        }
        carry = Some(eval_projection(&tables[summands.len()], &sum)?);
    }
    let mut msd: Vec<&Label> = summands.iter().map(|s| &s[0]).collect();
    msd.extend(carry.as_ref());
    if msd.len() == 1 {
        Ok(msd[0].clone())
    } else {
        free_add(&msd)
    }
}

/// Garbled approximate sign of one CRT-encoded value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignGadget {
    /// `k * t` residue-to-digit projections, prime-major.
    digit_tables: Vec<ProjectionTable>,
    adder: MixedRadixAdder,
    compare: ProjectionTable,
}

impl CiphertextCount for SignGadget {
    fn ciphertext_count(&self) -> usize {
        self.digit_tables.iter().map(|t| t.ciphertext_count()).sum::<usize>()
            + self.adder.ciphertext_count()
            + self.compare.ciphertext_count()
    }
}

impl SignGadget {
    /// Ciphertexts per step: residue-to-digit projections, mixed-radix
    /// addition, final comparison.
    pub fn step_counts(&self) -> [usize; 3] {
        [
            self.digit_tables.iter().map(|t| t.ciphertext_count()).sum(),
            self.adder.ciphertext_count(),
            self.compare.ciphertext_count(),
        ]
    }

    /// Every projection table of the gadget.
    pub fn tables(&self) -> impl Iterator<Item = &ProjectionTable> {
        self.digit_tables
            .iter()
            .chain(self.adder.stages.iter().flatten())
            .chain(std::iter::once(&self.compare))
    }

    /// Hint the cache to load every table of the gadget.
    pub fn prefetch(&self) {
        prefetch(&self.digit_tables);
        for stage in &self.adder.stages {
            prefetch(stage);
        }
        for t in self.tables() {
            t.prefetch();
        }
    }

    pub fn write_to(&self, w: &mut Writer) {
        write_tables(w, &self.digit_tables);
        self.adder.write_to(w);
        self.compare.write_to(w);
    }

    pub fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        let digit_tables = read_tables(r)?;
        let adder = MixedRadixAdder::read_from(r)?;
        let compare = ProjectionTable::read_from(r)?;
        Ok(SignGadget {
            digit_tables,
            adder,
            compare,
        })
    }
}

fn check_residues(inputs: &[Label], base: &CrtBase) -> Result<()> {
    if inputs.len() != base.k() {
        return Err(Error::Gadget(format!(
            "expected {} residues, got {}",
            base.k(),
            inputs.len()
        )));
    }
    for (l, &p) in inputs.iter().zip(base.primes()) {
        if l.modulus() != p {
            return Err(Error::ModulusMismatch(p, l.modulus()));
        }
    }
    Ok(())
}

/// Garble the sign test on residue wires `inputs`; the output wire over
/// `Z_2` carries 1 iff the value is strictly positive.
pub fn garble_approx_sign<R: RngCore + CryptoRng>(
    ctx: &mut GateCtx<'_, R>,
    inputs: &[Label],
    plan: &SignPlan,
) -> Result<(SignGadget, Label)> {
    let tables = plan.tables();
    check_residues(inputs, tables.base())?;
    let spec = tables.spec();
    let mut digit_tables = Vec::with_capacity(inputs.len() * spec.len());
    let mut summands = Vec::with_capacity(inputs.len());
    for (i, x) in inputs.iter().enumerate() {
        let p = x.modulus();
        let shifted = add_public_constant(x, p - 1, ctx.keys().offset(p)?)?;
        let mut digits = Vec::with_capacity(spec.len());
        for (j, &m) in spec.radices().iter().enumerate() {
            let (table, d) = garble_projection(ctx, &shifted, m, |y| tables.digits(i, y)[j])?;
            digit_tables.push(table);
            digits.push(d);
        }
        summands.push(digits);
    }
    let (adder, msd) = garble_mixed_radix_add(ctx, &summands, spec)?;
    let half = spec.leading() / 2;
    let (compare, bit) = garble_projection_reduced(ctx, &msd, 2, |d| (d < half) as u16)?;
    Ok((
        SignGadget {
            digit_tables,
            adder,
            compare,
        },
        bit,
    ))
}

pub fn eval_approx_sign(gadget: &SignGadget, inputs: &[Label], plan: &SignPlan, zeros: &ZeroWires) -> Result<Label> {
    check_residues(inputs, plan.base())?;
    let spec = plan.spec();
    let t = spec.len();
    if gadget.digit_tables.len() != inputs.len() * t {
        return Err(Error::Circuit(
            "sign gadget has the wrong number of digit tables".into(),
        ));
    }
    let summands = inputs
        .iter()
        .zip(gadget.digit_tables.chunks(t))
        .map(|(x, tables)| {
            let (chunk, color) = (x.compress(), x.color());
            tables
                .iter()
                .map(|table| match table.in_modulus() == x.modulus() {
                    true => Ok(eval_projection_chunk(table, chunk, color)),
                    false => Err(Error::ModulusMismatch(table.in_modulus(), x.modulus())),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let msd = eval_mixed_radix_add(&gadget.adder, &summands, spec, zeros)?;
    eval_projection(&gadget.compare, &msd)
}
