//! Whole-network garbling: `(gNN, e, d)`, input encoding, evaluation and
//! output decoding, plus the binary formats of every artifact.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use crate::codec::{Reader, Writer};
use crate::crt::{quantize_scaled, CrtBase};
use crate::error::{Error, Result};
use crate::gadgets::{CiphertextCount, MixedRadixSpec, SignAccuracy, SignPlan, WireKeys, ZeroWires};
use crate::labels::{radix, Label, LabelTensor};
use crate::layers::{element_rng, eval_layer, garble_layer, BundleTensor, GarbleEnv, GarbledLayer, IntTensor, Layer};

pub const MAGIC: &[u8; 4] = b"DASH";
pub const FORMAT_VERSION: u16 = 1;

const STREAM_KEYS: u64 = u64::MAX;
const STREAM_INPUTS: u64 = u64::MAX - 1;

/// Artifact kinds in the common header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ArtifactKind {
    GarbledCircuit = 1,
    Encoding = 2,
    Decoding = 3,
    GarbledInput = 4,
    GarbledOutput = 5,
}

fn write_header(w: &mut Writer, kind: ArtifactKind, k: usize) {
    w.bytes(MAGIC);
    w.u16(FORMAT_VERSION);
    w.u8(kind as u8);
    w.u8(k as u8);
}

fn read_header(r: &mut Reader<'_>, kind: ArtifactKind) -> Result<Arc<CrtBase>> {
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let got = r.u8()?;
    if got != kind as u8 {
        return Err(Error::Format(format!(
            "expected artifact kind {}, got {got}",
            kind as u8
        )));
    }
    Ok(Arc::new(CrtBase::new(r.u8()? as usize)?))
}

fn write_shape(w: &mut Writer, shape: &[usize]) {
    w.u8(u8::try_from(shape.len()).expect("rank fits in u8"));
    shape.iter().for_each(|&d| w.len_u32(d));
}

fn read_shape(r: &mut Reader<'_>) -> Result<Vec<usize>> {
    let rank = r.u8()? as usize;
    (0..rank).map(|_| Ok(r.u32()? as usize)).collect()
}

/// A quantized network ready to garble.
#[derive(Clone, Debug)]
pub struct Circuit {
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub base: Arc<CrtBase>,
    /// Quantization constant the integer weights were produced with.
    pub alpha: f64,
    pub sign_accuracy: SignAccuracy,
    /// Hide weights inside projection gates instead of shipping them.
    pub private_weights: bool,
}

impl Circuit {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, base: Arc<CrtBase>, alpha: f64) -> Result<Self> {
        let c = Circuit {
            input_shape,
            layers,
            base,
            alpha,
            sign_accuracy: SignAccuracy::Full,
            private_weights: false,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_sign_accuracy(mut self, accuracy: SignAccuracy) -> Self {
        self.sign_accuracy = accuracy;
        self
    }

    pub fn with_private_weights(mut self, private: bool) -> Self {
        self.private_weights = private;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Circuit("circuit has no layers".into()));
        }
        if self.layers.len() >= u16::MAX as usize {
            return Err(Error::Circuit("too many layers".into()));
        }
        self.layer_shapes().map(|_| ())
    }

    /// Input shape of every layer followed by the output shape.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for l in &self.layers {
            let next = l.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.layer_shapes()?.pop().expect("non-empty"))
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Factor between real and integer outputs under the single-constant
    /// scheme: each linear layer multiplies the scale by `alpha`, a sign
    /// activation resets it to 1.
    pub fn output_scale(&self) -> f64 {
        scales(&self.layers, self.alpha).pop().expect("non-empty")
    }

    /// Integer reference inference.
    pub fn plain_forward(&self, input: &[i128]) -> Result<Vec<i128>> {
        Ok(self.plain_trace(input)?.pop().expect("non-empty").data)
    }

    /// Input and every layer output of the integer reference.
    pub fn plain_trace(&self, input: &[i128]) -> Result<Vec<IntTensor>> {
        let bound = self.base.value_bound();
        if let Some(v) = input.iter().find(|v| v.abs() > bound) {
            return Err(Error::OutOfRange(format!("input {v} leaves the signed range ±{bound}")));
        }
        let mut trace = vec![IntTensor::new(self.input_shape.clone(), input.to_vec())?];
        for l in &self.layers {
            let next = l.plain_forward(trace.last().expect("non-empty"), bound)?;
            trace.push(next);
        }
        Ok(trace)
    }

    pub fn sign_plan(&self) -> Result<SignPlan> {
        SignPlan::new(self.base.clone(), self.sign_accuracy)
    }

    /// Closed-form ciphertext count per layer.
    pub fn closed_form_counts(&self, plan: &SignPlan) -> Result<Vec<usize>> {
        let shapes = self.layer_shapes()?;
        self.layers
            .iter()
            .zip(&shapes)
            .map(|(l, s)| l.ciphertext_count(s, plan, self.private_weights))
            .collect()
    }
}

/// Activation scale after each layer (first entry: the input scale).
pub(crate) fn scales(layers: &[Layer], alpha: f64) -> Vec<f64> {
    let mut s = vec![alpha];
    for l in layers {
        let prev = *s.last().expect("non-empty");
        s.push(match l {
            Layer::Dense(_) | Layer::Conv2d(_) => prev * alpha,
            Layer::Sign => 1.0,
            Layer::Relu | Layer::Flatten => prev,
        });
    }
    s
}

/// The garbled network handed to the evaluator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GarbledCircuit {
    base: Arc<CrtBase>,
    spec: MixedRadixSpec,
    input_shape: Vec<usize>,
    layers: Vec<GarbledLayer>,
    zeros: ZeroWires,
    seed_commitment: [u8; 32],
}

/// Secret input-encoding information.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingInfo {
    base: Arc<CrtBase>,
    alpha: f64,
    offsets: Vec<Label>,
    inputs: BundleTensor,
}

/// Output decoding tables: per output element and prime, the compressed
/// label of every value.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodingInfo {
    base: Arc<CrtBase>,
    shape: Vec<usize>,
    scale: f64,
    /// `[element][lane][value]`, flattened.
    tables: Vec<u128>,
}

/// Commitment to a garbling seed.
pub fn seed_commitment(seed: &[u8; 32]) -> [u8; 32] {
    Sha256::digest(seed).into()
}

/// `En(NN) = (gNN, e, d)`, deterministic in `seed`.
pub fn garble(circuit: &Circuit, seed: &[u8; 32]) -> Result<(GarbledCircuit, EncodingInfo, DecodingInfo)> {
    garble_timed(circuit, seed).map(|(g, e, d, _)| (g, e, d))
}

/// [`garble`] plus the wall time spent on each layer.
pub fn garble_timed(
    circuit: &Circuit,
    seed: &[u8; 32],
) -> Result<(GarbledCircuit, EncodingInfo, DecodingInfo, Vec<Duration>)> {
    circuit.validate()?;
    let plan = circuit.sign_plan()?;
    let base = circuit.base.clone();
    let keys = WireKeys::generate(plan.moduli(), &mut element_rng(seed, STREAM_KEYS))?;
    let mut rng = element_rng(seed, STREAM_INPUTS);
    let lanes = base
        .primes()
        .iter()
        .map(|&p| LabelTensor::random(p, &circuit.input_shape, &mut rng))
        .collect();
    let inputs = BundleTensor::new(lanes)?;

    let mut wires = inputs.clone();
    let mut layers = Vec::with_capacity(circuit.layers.len());
    let mut times = Vec::with_capacity(circuit.layers.len());
    for (i, layer) in circuit.layers.iter().enumerate() {
        let start = Instant::now();
        let env = GarbleEnv {
            keys: &keys,
            plan: &plan,
            seed,
            layer: (i + 1) as u16,
            private: circuit.private_weights,
        };
        let (g, out) = garble_layer(&env, layer, &wires)?;
        layers.push(g);
        wires = out;
        times.push(start.elapsed());
    }

    let mut tables = Vec::new();
    for e in 0..wires.len() {
        for lane in wires.lanes() {
            let p = lane.modulus();
            let base_label = lane.to_label(e);
            let offset = keys.offset(p)?;
            for v in 0..p {
                tables.push(offset.encode(&base_label, v)?.compress());
            }
        }
    }
    let offsets = base
        .primes()
        .iter()
        .map(|&p| Ok(keys.offset(p)?.label().clone()))
        .collect::<Result<_>>()?;
    let gnn = GarbledCircuit {
        base: base.clone(),
        spec: plan.spec().clone(),
        input_shape: circuit.input_shape.clone(),
        layers,
        zeros: keys.zeros().clone(),
        seed_commitment: seed_commitment(seed),
    };
    let e = EncodingInfo {
        base: base.clone(),
        alpha: circuit.alpha,
        offsets,
        inputs,
    };
    let d = DecodingInfo {
        base,
        shape: wires.shape().to_vec(),
        scale: circuit.output_scale(),
        tables,
    };
    Ok((gnn, e, d, times))
}

impl GarbledCircuit {
    pub fn base(&self) -> &Arc<CrtBase> {
        &self.base
    }

    pub fn spec(&self) -> &MixedRadixSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[GarbledLayer] {
        &self.layers
    }

    pub fn zeros(&self) -> &ZeroWires {
        &self.zeros
    }

    pub fn seed_commitment(&self) -> &[u8; 32] {
        &self.seed_commitment
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .try_fold(self.input_shape.clone(), |s, l| l.output_shape(&s))
    }

    pub fn sign_plan(&self) -> SignPlan {
        SignPlan::with_spec(self.base.clone(), self.spec.clone())
    }

    /// Ciphertext blocks per layer.
    pub fn layer_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.ciphertext_count()).collect()
    }

    /// Every `(gate, row, slot)` tweak is unique exactly when gate ids are,
    /// since rows and slots are distinct within a gate.
    pub fn check_tweaks(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for l in &self.layers {
            for id in l.gate_ids() {
                if !seen.insert(id) {
                    return Err(Error::DuplicateTweak(id));
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        write_header(&mut w, ArtifactKind::GarbledCircuit, self.base.k());
        w.u8(self.spec.len() as u8);
        self.spec.radices().iter().for_each(|&m| w.u16(m));
        write_shape(&mut w, &self.input_shape);
        w.bytes(&self.seed_commitment);
        self.zeros.write_to(&mut w);
        w.len_u32(self.layers.len());
        self.layers.iter().for_each(|l| l.write_to(&mut w));
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let base = read_header(&mut r, ArtifactKind::GarbledCircuit)?;
        let t = r.u8()? as usize;
        let spec = MixedRadixSpec::new((0..t).map(|_| r.u16()).collect::<Result<_>>()?)?;
        let input_shape = read_shape(&mut r)?;
        let seed_commitment = r.take(32)?.try_into().expect("32 bytes");
        let zeros = ZeroWires::read_from(&mut r)?;
        let n = r.len_u32(1)?;
        let layers = (0..n)
            .map(|_| GarbledLayer::read_from(&mut r))
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        let g = GarbledCircuit {
            base,
            spec,
            input_shape,
            layers,
            zeros,
            seed_commitment,
        };
        g.output_shape()?;
        Ok(g)
    }
}

/// `Ev(gNN, gIn) = gOut`.
pub fn evaluate(gnn: &GarbledCircuit, input: &BundleTensor) -> Result<BundleTensor> {
    evaluate_timed(gnn, input).map(|(out, _)| out)
}

/// [`evaluate`] plus the wall time spent on each layer.
pub fn evaluate_timed(gnn: &GarbledCircuit, input: &BundleTensor) -> Result<(BundleTensor, Vec<Duration>)> {
    if input.shape() != gnn.input_shape.as_slice() {
        return Err(Error::Shape(format!(
            "garbled input has shape {:?}, expected {:?}",
            input.shape(),
            gnn.input_shape
        )));
    }
    let plan = gnn.sign_plan();
    let mut wires = input.clone();
    let mut times = Vec::with_capacity(gnn.layers.len());
    for l in &gnn.layers {
        let start = Instant::now();
        wires = eval_layer(l, &plan, &gnn.zeros, &wires)?;
        times.push(start.elapsed());
    }
    Ok((wires, times))
}

impl EncodingInfo {
    pub fn base(&self) -> &Arc<CrtBase> {
        &self.base
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn input_shape(&self) -> &[usize] {
        self.inputs.shape()
    }

    pub fn input_len(&self) -> usize {
        self.inputs.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        write_header(&mut w, ArtifactKind::Encoding, self.base.k());
        w.f64(self.alpha);
        write_shape(&mut w, self.inputs.shape());
        self.offsets.iter().for_each(|o| w.u128(o.compress()));
        self.inputs.write_chunks(&mut w);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let base = read_header(&mut r, ArtifactKind::Encoding)?;
        let alpha = r.f64()?;
        let shape = read_shape(&mut r)?;
        let offsets = base
            .primes()
            .iter()
            .map(|&p| Label::decompress(r.u128()?, p))
            .collect::<Result<Vec<_>>>()?;
        if offsets.iter().any(|o| o.color() != 1) {
            return Err(Error::Format("offset label with color other than 1".into()));
        }
        let inputs = BundleTensor::read_chunks(&mut r, &base, &shape)?;
        r.finish()?;
        Ok(EncodingInfo {
            base,
            alpha,
            offsets,
            inputs,
        })
    }
}

/// `En(In, e) = gIn` for quantized inputs.
pub fn garble_inputs(e: &EncodingInfo, values: &[i128]) -> Result<BundleTensor> {
    if values.len() != e.inputs.len() {
        return Err(Error::Shape(format!(
            "expected {} inputs, got {}",
            e.inputs.len(),
            values.len()
        )));
    }
    let bound = e.base.value_bound();
    if let Some(v) = values.iter().find(|v| v.abs() > bound) {
        return Err(Error::OutOfRange(format!("input {v} leaves the signed range ±{bound}")));
    }
    let mut out = e.inputs.clone().into_lanes();
    for (lane, offset) in out.iter_mut().zip(&e.offsets) {
        let p = lane.modulus();
        for (i, &v) in values.iter().enumerate() {
            let a = v.rem_euclid(p as i128) as u16;
            let l = lane.label_mut(i);
            crate::labels::add_scaled_assign(l, offset.digits(), a, p);
        }
    }
    BundleTensor::new(out)
}

/// Quantize real inputs with the circuit's constant, then encode them.
pub fn garble_real_inputs(e: &EncodingInfo, values: &[f64]) -> Result<BundleTensor> {
    let bound = e.base.value_bound();
    let q = values
        .iter()
        .map(|&x| quantize_scaled(x, e.alpha, bound))
        .collect::<Result<Vec<_>>>()?;
    garble_inputs(e, &q)
}

impl DecodingInfo {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Real value of one integer output unit.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        write_header(&mut w, ArtifactKind::Decoding, self.base.k());
        w.f64(self.scale);
        write_shape(&mut w, &self.shape);
        self.tables.iter().for_each(|&c| w.u128(c));
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let base = read_header(&mut r, ArtifactKind::Decoding)?;
        let scale = r.f64()?;
        let shape = read_shape(&mut r)?;
        let per: usize = base.primes().iter().map(|&p| p as usize).sum();
        let n = shape
            .iter()
            .try_fold(per, |a, &d| a.checked_mul(d))
            .filter(|n| n.saturating_mul(16) <= r.remaining())
            .ok_or_else(|| Error::Format("decoding table exceeds the input".into()))?;
        let tables = (0..n).map(|_| r.u128()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(DecodingInfo {
            base,
            shape,
            scale,
            tables,
        })
    }
}

/// `De(gOut, d)`: table lookup per residue; any unknown label is an
/// authenticity failure.
pub fn decode_outputs(d: &DecodingInfo, out: &BundleTensor) -> Result<Vec<i128>> {
    if out.shape() != d.shape.as_slice() || out.lanes().len() != d.base.k() {
        return Err(Error::Shape(format!(
            "garbled output has shape {:?}, expected {:?}",
            out.shape(),
            d.shape
        )));
    }
    let primes = d.base.primes();
    let per: usize = primes.iter().map(|&p| p as usize).sum();
    let mut residues = vec![0u16; primes.len()];
    (0..out.len())
        .map(|e| {
            let mut offset = e * per;
            for (i, (lane, &p)) in out.lanes().iter().zip(primes).enumerate() {
                let chunk = radix(p).compress(lane.label(e));
                let table = &d.tables[offset..offset + p as usize];
                residues[i] = table.iter().position(|&c| c == chunk).ok_or_else(|| {
                    Error::Authenticity(format!(
                        "output {e}, residue mod {p}: label is not a valid output label"
                    ))
                })? as u16;
                offset += p as usize;
            }
            d.base.decode_signed(d.base.reconstruct(&residues)?)
        })
        .collect()
}

/// Serialized garbled input or output: header, shape, raw chunks.
pub fn bundle_to_bytes(kind: ArtifactKind, t: &BundleTensor) -> Vec<u8> {
    let mut w = Writer::new();
    write_header(&mut w, kind, t.lanes().len());
    write_shape(&mut w, t.shape());
    t.write_chunks(&mut w);
    w.into_inner()
}

pub fn bundle_from_bytes(kind: ArtifactKind, bytes: &[u8]) -> Result<BundleTensor> {
    let mut r = Reader::new(bytes);
    let base = read_header(&mut r, kind)?;
    let shape = read_shape(&mut r)?;
    let t = BundleTensor::read_chunks(&mut r, &base, &shape)?;
    r.finish()?;
    Ok(t)
}
