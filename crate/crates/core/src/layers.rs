//! CNN layers: exact integer reference semantics and their garbled
//! counterparts over per-prime label tensors.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::codec::{Reader, Writer};
use crate::crt::CrtBase;
use crate::error::{Error, Result};
use crate::gadgets::{
    eval_approx_sign, eval_mm_half_gate, eval_projection, garble_approx_sign, garble_mm_half_gate, garble_projection,
    read_tables, write_tables, CiphertextCount, GateCtx, HalfGatePair, ProjectionTable, SignGadget, SignPlan, WireKeys,
    ZeroWires,
};
use crate::labels::{conv_output_dims, sub_assign, Label, LabelTensor};

const ELEMENT_BITS: u32 = 28;
const LOCAL_BITS: u32 = 20;

/// Gate ids reserved for one output element of one layer.
pub fn gate_range(layer: u16, element: usize) -> Result<Range<u64>> {
    if element as u64 >= 1 << ELEMENT_BITS {
        return Err(Error::Circuit(format!(
            "layer {layer} has more than 2^{ELEMENT_BITS} elements"
        )));
    }
    let start = (layer as u64) << (ELEMENT_BITS + LOCAL_BITS) | (element as u64) << LOCAL_BITS;
    Ok(start..start + (1 << LOCAL_BITS))
}

/// Randomness for one element, independent of evaluation order.
pub(crate) fn element_rng(seed: &[u8; 32], stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::from_seed(*seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `[outputs][inputs]`.
    pub weights: Vec<i64>,
    pub biases: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub filter: usize,
    pub stride: usize,
    /// `[out][in][filter][filter]`.
    pub weights: Vec<i64>,
    pub biases: Vec<i64>,
}

/// A quantized layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Relu,
    Sign,
    Flatten,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<i64>, biases: Vec<i64>) -> Result<Self> {
        if inputs == 0 {
            return Err(Error::Shape("dense layer needs at least one input".into()));
        }
        if weights.len() != inputs * outputs || biases.len() != outputs {
            return Err(Error::Shape(format!(
                "dense {inputs}->{outputs} needs {} weights and {outputs} biases, got {} and {}",
                inputs * outputs,
                weights.len(),
                biases.len()
            )));
        }
        Ok(Dense {
            inputs,
            outputs,
            weights,
            biases,
        })
    }
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        filter: usize,
        stride: usize,
        weights: Vec<i64>,
        biases: Vec<i64>,
    ) -> Result<Self> {
        let n = out_channels * in_channels * filter * filter;
        if weights.len() != n || biases.len() != out_channels {
            return Err(Error::Shape(format!(
                "conv {in_channels}->{out_channels} f{filter} needs {n} weights and {out_channels} biases, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        if stride == 0 || filter == 0 || in_channels == 0 {
            return Err(Error::Shape(
                "filter, stride and input channels must be positive".into(),
            ));
        }
        Ok(Conv2d {
            in_channels,
            out_channels,
            filter,
            stride,
            weights,
            biases,
        })
    }

    fn window(&self) -> usize {
        self.in_channels * self.filter * self.filter
    }

    fn dims(&self, input: &[usize]) -> Result<(usize, usize)> {
        match *input {
            [c, h, w] if c == self.in_channels => conv_output_dims(h, w, self.filter, self.stride),
            _ => Err(Error::Shape(format!(
                "conv with {} channels got input {input:?}",
                self.in_channels
            ))),
        }
    }
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::Sign => "sign",
            Layer::Flatten => "flatten",
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense(d) => {
                let n: usize = input.iter().product();
                if n != d.inputs {
                    return Err(Error::Shape(format!(
                        "dense expects {} inputs, got shape {input:?}",
                        d.inputs
                    )));
                }
                Ok(vec![d.outputs])
            }
            Layer::Conv2d(c) => {
                let (oh, ow) = c.dims(input)?;
                Ok(vec![c.out_channels, oh, ow])
            }
            Layer::Relu | Layer::Sign => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Exact integer semantics; every output must stay within `±bound`.
    pub fn plain_forward(&self, input: &IntTensor, bound: i128) -> Result<IntTensor> {
        let shape = self.output_shape(&input.shape)?;
        let x = &input.data;
        let data: Vec<i128> = match self {
            Layer::Dense(d) => (0..d.outputs)
                .map(|j| {
                    let row = &d.weights[j * d.inputs..(j + 1) * d.inputs];
                    checked_dot(row, x.iter().copied()).and_then(|s| s.checked_add(d.biases[j] as i128))
                })
                .collect::<Option<_>>()
                .ok_or_else(|| Error::Overflow("dense accumulation".into()))?,
            Layer::Conv2d(c) => {
                let (h, w) = (input.shape[1], input.shape[2]);
                let (oh, ow) = (shape[1], shape[2]);
                let f = c.filter;
                let mut out = Vec::with_capacity(c.out_channels * oh * ow);
                for o in 0..c.out_channels {
                    let kernel = &c.weights[o * c.window()..(o + 1) * c.window()];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let window = (0..c.in_channels).flat_map(|ch| {
                                (0..f).flat_map(move |fy| {
                                    (0..f).map(move |fx| (ch * h + oy * c.stride + fy) * w + ox * c.stride + fx)
                                })
                            });
                            let s = checked_dot(kernel, window.map(|i| x[i]))
                                .and_then(|s| s.checked_add(c.biases[o] as i128))
                                .ok_or_else(|| Error::Overflow("conv accumulation".into()))?;
                            out.push(s);
                        }
                    }
                }
                out
            }
            Layer::Relu => x.iter().map(|&v| v.max(0)).collect(),
            Layer::Sign => x.iter().map(|&v| if v > 0 { 1 } else { -1 }).collect(),
            Layer::Flatten => x.clone(),
        };
        if let Some(v) = data.iter().find(|v| v.abs() > bound) {
            return Err(Error::Overflow(format!(
                "{} output {v} leaves the signed range ±{bound}",
                self.name()
            )));
        }
        Ok(IntTensor { shape, data })
    }

    /// Closed-form ciphertext count of the garbled layer.
    pub fn ciphertext_count(&self, input: &[usize], plan: &SignPlan, private: bool) -> Result<usize> {
        let out = self.output_shape(input)?;
        let n_out: usize = out.iter().product();
        let sum_p: usize = plan.base().primes().iter().map(|&p| p as usize).sum();
        Ok(match self {
            Layer::Dense(d) if private => d.inputs * d.outputs * sum_p,
            Layer::Conv2d(c) if private => n_out * c.window() * sum_p,
            Layer::Dense(_) | Layer::Conv2d(_) | Layer::Flatten => 0,
            Layer::Relu => n_out * plan.relu_cost(),
            Layer::Sign => n_out * plan.sign_activation_cost(),
        })
    }
}

fn checked_dot(weights: &[i64], x: impl Iterator<Item = i128>) -> Option<i128> {
    weights
        .iter()
        .zip(x)
        .try_fold(0i128, |acc, (&w, v)| acc.checked_add((w as i128).checked_mul(v)?))
}

/// Integer tensor for the plaintext reference path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i128>,
}

impl IntTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i128>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        Ok(IntTensor { shape, data })
    }
}

/// One label tensor per CRT prime, all of the same shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BundleTensor {
    lanes: Vec<LabelTensor>,
}

impl BundleTensor {
    pub fn new(lanes: Vec<LabelTensor>) -> Result<Self> {
        if lanes.is_empty() {
            return Err(Error::Shape("bundle tensor needs at least one lane".into()));
        }
        if lanes.iter().any(|l| l.shape() != lanes[0].shape()) {
            return Err(Error::Shape("bundle lanes differ in shape".into()));
        }
        Ok(BundleTensor { lanes })
    }

    pub fn zeros(base: &CrtBase, shape: &[usize]) -> Self {
        BundleTensor {
            lanes: base.primes().iter().map(|&p| LabelTensor::zeros(p, shape)).collect(),
        }
    }

    pub fn lanes(&self) -> &[LabelTensor] {
        &self.lanes
    }

    pub fn into_lanes(self) -> Vec<LabelTensor> {
        self.lanes
    }

    pub fn shape(&self) -> &[usize] {
        self.lanes[0].shape()
    }

    pub fn len(&self) -> usize {
        self.lanes[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let lanes = self
            .lanes
            .into_iter()
            .map(|l| l.reshape(shape))
            .collect::<Result<_>>()?;
        Ok(BundleTensor { lanes })
    }

    /// The `k` residue labels of element `i`.
    pub fn element(&self, i: usize) -> Vec<Label> {
        self.lanes.iter().map(|l| l.to_label(i)).collect()
    }

    fn from_elements(base: &CrtBase, shape: &[usize], elements: &[Vec<Label>]) -> Result<Self> {
        let mut out = Self::zeros(base, shape);
        for (i, e) in elements.iter().enumerate() {
            for (lane, l) in out.lanes.iter_mut().zip(e) {
                lane.label_mut(i).copy_from_slice(l.digits());
            }
        }
        Ok(out)
    }

    fn check_base(&self, base: &CrtBase) -> Result<()> {
        if self.lanes.len() != base.k() || self.lanes.iter().zip(base.primes()).any(|(l, &p)| l.modulus() != p) {
            return Err(Error::Shape("bundle lanes do not match the CRT base".into()));
        }
        Ok(())
    }

    /// Raw 16-byte chunks, lane-major.
    pub fn write_chunks(&self, w: &mut Writer) {
        for l in &self.lanes {
            l.write_chunks(w);
        }
    }

    pub fn read_chunks(r: &mut Reader<'_>, base: &CrtBase, shape: &[usize]) -> Result<Self> {
        let lanes = base
            .primes()
            .iter()
            .map(|&p| LabelTensor::read_chunks(r, p, shape))
            .collect::<Result<Vec<_>>>()?;
        Ok(BundleTensor { lanes })
    }
}

/// Shared read-only state for garbling one layer.
pub struct GarbleEnv<'a> {
    pub keys: &'a WireKeys,
    pub plan: &'a SignPlan,
    pub seed: &'a [u8; 32],
    /// Position of the layer, used as the gate-id prefix; 0 is reserved.
    pub layer: u16,
    pub private: bool,
}

impl GarbleEnv<'_> {
    fn ctx(&self, element: usize) -> Result<GateCtx<'_, ChaCha20Rng>> {
        let gates = gate_range(self.layer, element)?;
        let rng = element_rng(self.seed, gates.start);
        Ok(GateCtx::new(self.keys, rng, gates))
    }
}

/// Weight residues per lane for the public linear kernel.
fn weight_residues(weights: &[i64], p: u16) -> Vec<u16> {
    weights.iter().map(|&w| w.rem_euclid(p as i64) as u16).collect()
}

/// `out = sum_t w_t * src_t`, with zero weights contributing the zero wire.
/// Digit products stay below `2^16` for moduli up to 256, and `acc` is
/// flushed before a `u32` could overflow.
fn dot_labels(src: &[u16], weights: &[u16], zero: &[u16], p: u16, out: &mut [u16], acc: &mut [u32]) {
    let len = out.len();
    // after a flush every entry is below p, so this many products fit
    let flush_every = ((u32::MAX - p as u32) / ((p as u32 - 1) * (p as u32 - 1)).max(1)) as usize;
    let acc = &mut acc[..len];
    acc.fill(0);
    let mut zeros = 0u32;
    let mut pending = 0usize;
    for (t, &w) in weights.iter().enumerate() {
        if w == 0 {
            zeros += 1;
            continue;
        }
        let s = &src[t * len..(t + 1) * len];
        for d in 0..len {
            acc[d] += w as u32 * s[d] as u32;
        }
        pending += 1;
        if pending == flush_every {
            acc.iter_mut().for_each(|a| *a %= p as u32);
            pending = 0;
        }
    }
    let zeros = zeros % p as u32;
    for d in 0..len {
        let v = acc[d] % p as u32 + zeros * zero[d] as u32;
        out[d] = (v % p as u32) as u16;
    }
}

/// Linear map over one lane: `rows` output labels, each the dot product of
/// weight row `r % rows_per_block` with source window `r / rows_per_block`
/// (dense uses one window; conv uses one per output position).
fn linear_lane(src: &LabelTensor, windows: usize, weights: &[u16], window_len: usize, zero: &Label) -> Vec<u16> {
    let p = src.modulus();
    let len = src.label_len();
    let kernels = weights.len() / window_len;
    let mut out = vec![0u16; kernels * windows * len];
    // output layout [kernel][window]
    out.par_chunks_mut(len).enumerate().for_each_init(
        || vec![0u32; len],
        |acc, (i, o)| {
            let (kernel, window) = (i / windows, i % windows);
            let src = &src.data()[window * window_len * len..(window + 1) * window_len * len];
            dot_labels(
                src,
                &weights[kernel * window_len..(kernel + 1) * window_len],
                zero.digits(),
                p,
                o,
                acc,
            );
        },
    );
    out
}

fn linear(
    input: &BundleTensor,
    layer: &Layer,
    zeros: &ZeroWires,
    residues: &[Vec<u16>],
) -> Result<(BundleTensor, Vec<usize>)> {
    let out_shape = layer.output_shape(input.shape())?;
    let lanes = input
        .lanes
        .iter()
        .zip(residues)
        .map(|(lane, w)| {
            let p = lane.modulus();
            let zero = zeros.get(p)?;
            let data = match layer {
                Layer::Dense(d) => linear_lane(lane, 1, w, d.inputs, zero),
                Layer::Conv2d(c) => {
                    let windows = lane.gather_windows(c.filter, c.stride)?;
                    linear_lane(&windows, out_shape[1] * out_shape[2], w, c.window(), zero)
                }
                _ => unreachable!("linear called on a non-linear layer"),
            };
            Ok(LabelTensor::from_raw(p, out_shape.clone(), data))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((BundleTensor { lanes }, out_shape))
}

fn linear_params(layer: &Layer) -> (&[i64], &[i64]) {
    match layer {
        Layer::Dense(d) => (&d.weights, &d.biases),
        Layer::Conv2d(c) => (&c.weights, &c.biases),
        _ => unreachable!("not a linear layer"),
    }
}

/// Subtract `bias * R_p` from every base label of each output channel, so
/// the evaluator's unbiased sum decodes to the biased value.
fn absorb_bias(out: &mut BundleTensor, biases: &[i64], keys: &WireKeys) -> Result<()> {
    if biases.is_empty() {
        return Ok(());
    }
    let per_channel = out.len() / biases.len();
    for lane in &mut out.lanes {
        let p = lane.modulus();
        let offset = keys.offset(p)?;
        let step = offset.label().clone();
        for (ch, &b) in biases.iter().enumerate() {
            let shift = step.scale(b.rem_euclid(p as i64) as u16);
            for i in ch * per_channel..(ch + 1) * per_channel {
                sub_assign(lane.label_mut(i), shift.digits(), p);
            }
        }
    }
    Ok(())
}

/// Input windows of every output element of a linear layer, as (labels per
/// lane, weight index per input).
fn private_inputs(layer: &Layer, input: &BundleTensor, element: usize, out_shape: &[usize]) -> Vec<(usize, usize)> {
    match layer {
        Layer::Dense(d) => (0..d.inputs).map(|i| (i, element * d.inputs + i)).collect(),
        Layer::Conv2d(c) => {
            let (oh, ow) = (out_shape[1], out_shape[2]);
            let (h, w) = (input.shape()[1], input.shape()[2]);
            let o = element / (oh * ow);
            let (oy, ox) = ((element % (oh * ow)) / ow, element % ow);
            let f = c.filter;
            let mut v = Vec::with_capacity(c.window());
            for ch in 0..c.in_channels {
                for fy in 0..f {
                    for fx in 0..f {
                        let src = (ch * h + oy * c.stride + fy) * w + ox * c.stride + fx;
                        v.push((src, ((o * c.in_channels + ch) * f + fy) * f + fx));
                    }
                }
            }
            v
        }
        _ => unreachable!("not a linear layer"),
    }
}

/// A garbled layer as shipped to the evaluator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GarbledLayer {
    /// Public weights (biases stay with the garbler).
    Dense {
        inputs: usize,
        outputs: usize,
        weights: Vec<i64>,
    },
    DensePrivate {
        inputs: usize,
        outputs: usize,
        tables: Vec<ProjectionTable>,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        filter: usize,
        stride: usize,
        weights: Vec<i64>,
    },
    Conv2dPrivate {
        in_channels: usize,
        out_channels: usize,
        filter: usize,
        stride: usize,
        tables: Vec<ProjectionTable>,
    },
    Relu {
        elements: Vec<(SignGadget, Vec<HalfGatePair>)>,
    },
    Sign {
        elements: Vec<(SignGadget, Vec<ProjectionTable>)>,
    },
    Flatten,
}

fn zero_layer(inputs: usize, outputs: usize) -> Layer {
    Layer::Dense(Dense {
        inputs,
        outputs,
        weights: vec![0; inputs * outputs],
        biases: vec![0; outputs],
    })
}

fn zero_conv(in_channels: usize, out_channels: usize, filter: usize, stride: usize) -> Layer {
    let n = out_channels * in_channels * filter * filter;
    Layer::Conv2d(Conv2d {
        in_channels,
        out_channels,
        filter,
        stride,
        weights: vec![0; n],
        biases: vec![0; out_channels],
    })
}

impl GarbledLayer {
    pub fn name(&self) -> &'static str {
        match self {
            GarbledLayer::Dense { .. } | GarbledLayer::DensePrivate { .. } => "dense",
            GarbledLayer::Conv2d { .. } | GarbledLayer::Conv2dPrivate { .. } => "conv2d",
            GarbledLayer::Relu { .. } => "relu",
            GarbledLayer::Sign { .. } => "sign",
            GarbledLayer::Flatten => "flatten",
        }
    }

    /// Every gate id used by this layer's ciphertexts.
    pub fn gate_ids(&self) -> Vec<u64> {
        let mut ids = Vec::new();
        match self {
            GarbledLayer::DensePrivate { tables, .. } | GarbledLayer::Conv2dPrivate { tables, .. } => {
                ids.extend(tables.iter().map(|t| t.gate_id()))
            }
            GarbledLayer::Relu { elements } => {
                for (s, hs) in elements {
                    ids.extend(s.tables().map(|t| t.gate_id()));
                    ids.extend(hs.iter().map(|h| h.gate_id()));
                }
            }
            GarbledLayer::Sign { elements } => {
                for (s, ps) in elements {
                    ids.extend(s.tables().map(|t| t.gate_id()));
                    ids.extend(ps.iter().map(|t| t.gate_id()));
                }
            }
            _ => {}
        }
        ids
    }

    /// Shape-only view of the layer, for output shape inference.
    fn shape_layer(&self) -> Layer {
        match *self {
            GarbledLayer::Dense { inputs, outputs, .. } | GarbledLayer::DensePrivate { inputs, outputs, .. } => {
                zero_layer(inputs, outputs)
            }
            GarbledLayer::Conv2d {
                in_channels,
                out_channels,
                filter,
                stride,
                ..
            }
            | GarbledLayer::Conv2dPrivate {
                in_channels,
                out_channels,
                filter,
                stride,
                ..
            } => zero_conv(in_channels, out_channels, filter, stride),
            GarbledLayer::Relu { .. } => Layer::Relu,
            GarbledLayer::Sign { .. } => Layer::Sign,
            GarbledLayer::Flatten => Layer::Flatten,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.shape_layer().output_shape(input)
    }

    pub fn write_to(&self, w: &mut Writer) {
        match self {
            GarbledLayer::Dense {
                inputs,
                outputs,
                weights,
            } => {
                w.u8(1);
                w.len_u32(*inputs);
                w.len_u32(*outputs);
                weights.iter().for_each(|&x| w.i64(x));
            }
            GarbledLayer::DensePrivate {
                inputs,
                outputs,
                tables,
            } => {
                w.u8(2);
                w.len_u32(*inputs);
                w.len_u32(*outputs);
                write_tables(w, tables);
            }
            GarbledLayer::Conv2d {
                in_channels,
                out_channels,
                filter,
                stride,
                weights,
            } => {
                w.u8(3);
                [*in_channels, *out_channels, *filter, *stride]
                    .iter()
                    .for_each(|&x| w.len_u32(x));
                weights.iter().for_each(|&x| w.i64(x));
            }
            GarbledLayer::Conv2dPrivate {
                in_channels,
                out_channels,
                filter,
                stride,
                tables,
            } => {
                w.u8(4);
                [*in_channels, *out_channels, *filter, *stride]
                    .iter()
                    .for_each(|&x| w.len_u32(x));
                write_tables(w, tables);
            }
            GarbledLayer::Relu { elements } => {
                w.u8(5);
                w.len_u32(elements.len());
                for (s, hs) in elements {
                    s.write_to(w);
                    w.len_u32(hs.len());
                    hs.iter().for_each(|h| h.write_to(w));
                }
            }
            GarbledLayer::Sign { elements } => {
                w.u8(6);
                w.len_u32(elements.len());
                for (s, ps) in elements {
                    s.write_to(w);
                    write_tables(w, ps);
                }
            }
            GarbledLayer::Flatten => w.u8(7),
        }
    }

    pub fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        let read_weights = |r: &mut Reader<'_>, n: usize| -> Result<Vec<i64>> {
            if n.saturating_mul(8) > r.remaining() {
                return Err(Error::Format("weight block exceeds the remaining input".into()));
            }
            (0..n).map(|_| r.i64()).collect()
        };
        let tag = r.u8()?;
        let tag_private = tag % 2 == 0;
        Ok(match tag {
            1 | 2 => {
                let inputs = r.u32()? as usize;
                let outputs = r.u32()? as usize;
                if tag_private {
                    GarbledLayer::DensePrivate {
                        inputs,
                        outputs,
                        tables: read_tables(r)?,
                    }
                } else {
                    let n = inputs
                        .checked_mul(outputs)
                        .ok_or_else(|| Error::Format("dense size".into()))?;
                    GarbledLayer::Dense {
                        inputs,
                        outputs,
                        weights: read_weights(r, n)?,
                    }
                }
            }
            3 | 4 => {
                let (in_channels, out_channels) = (r.u32()? as usize, r.u32()? as usize);
                let (filter, stride) = (r.u32()? as usize, r.u32()? as usize);
                if tag_private {
                    let tables = read_tables(r)?;
                    GarbledLayer::Conv2dPrivate {
                        in_channels,
                        out_channels,
                        filter,
                        stride,
                        tables,
                    }
                } else {
                    let n = [in_channels, out_channels, filter, filter]
                        .iter()
                        .try_fold(1usize, |a, &b| a.checked_mul(b))
                        .ok_or_else(|| Error::Format("conv size".into()))?;
                    let weights = read_weights(r, n)?;
                    GarbledLayer::Conv2d {
                        in_channels,
                        out_channels,
                        filter,
                        stride,
                        weights,
                    }
                }
            }
            5 => {
                let n = r.len_u32(16)?;
                let mut elements = Vec::with_capacity(n);
                for _ in 0..n {
                    let s = SignGadget::read_from(r)?;
                    let m = r.len_u32(16)?;
                    let hs = (0..m).map(|_| HalfGatePair::read_from(r)).collect::<Result<Vec<_>>>()?;
                    elements.push((s, hs));
                }
                GarbledLayer::Relu { elements }
            }
            6 => {
                let n = r.len_u32(16)?;
                let mut elements = Vec::with_capacity(n);
                for _ in 0..n {
                    elements.push((SignGadget::read_from(r)?, read_tables(r)?));
                }
                GarbledLayer::Sign { elements }
            }
            7 => GarbledLayer::Flatten,
            t => return Err(Error::Format(format!("unknown layer tag {t}"))),
        })
    }
}

impl CiphertextCount for GarbledLayer {
    fn ciphertext_count(&self) -> usize {
        match self {
            GarbledLayer::DensePrivate { tables, .. } | GarbledLayer::Conv2dPrivate { tables, .. } => {
                tables.iter().map(|t| t.ciphertext_count()).sum()
            }
            GarbledLayer::Relu { elements } => elements
                .iter()
                .map(|(s, hs)| s.ciphertext_count() + hs.iter().map(|h| h.ciphertext_count()).sum::<usize>())
                .sum(),
            GarbledLayer::Sign { elements } => elements
                .iter()
                .map(|(s, ps)| s.ciphertext_count() + ps.iter().map(|p| p.ciphertext_count()).sum::<usize>())
                .sum(),
            _ => 0,
        }
    }
}

/// Garble `layer` on input base labels; returns the shipped layer and the
/// output base labels.
pub fn garble_layer(env: &GarbleEnv<'_>, layer: &Layer, input: &BundleTensor) -> Result<(GarbledLayer, BundleTensor)> {
    let base = env.plan.base();
    input.check_base(base)?;
    match layer {
        Layer::Dense(_) | Layer::Conv2d(_) if !env.private => {
            let (weights, biases) = linear_params(layer);
            let residues: Vec<Vec<u16>> = base.primes().iter().map(|&p| weight_residues(weights, p)).collect();
            let (mut out, _) = linear(input, layer, env.keys.zeros(), &residues)?;
            absorb_bias(&mut out, biases, env.keys)?;
            let g = match layer {
                Layer::Dense(d) => GarbledLayer::Dense {
                    inputs: d.inputs,
                    outputs: d.outputs,
                    weights: d.weights.clone(),
                },
                Layer::Conv2d(c) => GarbledLayer::Conv2d {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    filter: c.filter,
                    stride: c.stride,
                    weights: c.weights.clone(),
                },
                _ => unreachable!(),
            };
            Ok((g, out))
        }
        Layer::Dense(_) | Layer::Conv2d(_) => garble_private(env, layer, input),
        Layer::Relu | Layer::Sign => garble_activation(env, layer, input),
        Layer::Flatten => {
            let n = input.len();
            Ok((GarbledLayer::Flatten, input.clone().reshape(&[n])?))
        }
    }
}

fn garble_private(env: &GarbleEnv<'_>, layer: &Layer, input: &BundleTensor) -> Result<(GarbledLayer, BundleTensor)> {
    let base = env.plan.base();
    let (weights, biases) = linear_params(layer);
    let out_shape = layer.output_shape(input.shape())?;
    let n_out: usize = out_shape.iter().product();
    let per_channel = n_out / biases.len();
    let results = (0..n_out)
        .into_par_iter()
        .map(|e| {
            let mut ctx = env.ctx(e)?;
            let srcs = private_inputs(layer, input, e, &out_shape);
            let mut tables = Vec::with_capacity(srcs.len() * base.k());
            let mut outs = Vec::with_capacity(base.k());
            for (lane, &p) in input.lanes.iter().zip(base.primes()) {
                let mut acc = Label::zero(p);
                for &(src, wi) in &srcs {
                    let w = weights[wi].rem_euclid(p as i64) as u32;
                    let x = lane.to_label(src);
                    let (t, y) = garble_projection(&mut ctx, &x, p, |a| ((a as u32 * w) % p as u32) as u16)?;
                    acc = acc.add(&y)?;
                    tables.push(t);
                }
                let b = biases[e / per_channel].rem_euclid(p as i64) as u16;
                outs.push(acc.sub(&env.keys.offset(p)?.label().scale(b))?);
            }
            Ok((tables, outs))
        })
        .collect::<Result<Vec<_>>>()?;
    let (tables, outs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let out = BundleTensor::from_elements(base, &out_shape, &outs)?;
    let tables = tables.into_iter().flatten().collect();
    let g = match layer {
        Layer::Dense(d) => GarbledLayer::DensePrivate {
            inputs: d.inputs,
            outputs: d.outputs,
            tables,
        },
        Layer::Conv2d(c) => GarbledLayer::Conv2dPrivate {
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            filter: c.filter,
            stride: c.stride,
            tables,
        },
        _ => unreachable!(),
    };
    Ok((g, out))
}

fn garble_activation(env: &GarbleEnv<'_>, layer: &Layer, input: &BundleTensor) -> Result<(GarbledLayer, BundleTensor)> {
    let base = env.plan.base();
    let relu = matches!(layer, Layer::Relu);
    let results = (0..input.len())
        .into_par_iter()
        .map(|e| {
            let mut ctx = env.ctx(e)?;
            let x = input.element(e);
            let (sign, bit) = garble_approx_sign(&mut ctx, &x, env.plan)?;
            if relu {
                let mut gates = Vec::with_capacity(x.len());
                let mut outs = Vec::with_capacity(x.len());
                for xi in &x {
                    let (g, o) = garble_mm_half_gate(&mut ctx, xi, &bit)?;
                    gates.push(g);
                    outs.push(o);
                }
                Ok((Activation::Relu(sign, gates), outs))
            } else {
                let mut tables = Vec::with_capacity(x.len());
                let mut outs = Vec::with_capacity(x.len());
                for &p in base.primes() {
                    let (t, o) = garble_projection(&mut ctx, &bit, p, |b| if b == 1 { 1 % p } else { p - 1 })?;
                    tables.push(t);
                    outs.push(o);
                }
                Ok((Activation::Sign(sign, tables), outs))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let outs: Vec<Vec<Label>> = results.iter().map(|(_, o)| o.clone()).collect();
    let out = BundleTensor::from_elements(base, input.shape(), &outs)?;
    let g = if relu {
        GarbledLayer::Relu {
            elements: results
                .into_iter()
                .map(|(a, _)| match a {
                    Activation::Relu(s, g) => (s, g),
                    Activation::Sign(..) => unreachable!(),
                })
                .collect(),
        }
    } else {
        GarbledLayer::Sign {
            elements: results
                .into_iter()
                .map(|(a, _)| match a {
                    Activation::Sign(s, t) => (s, t),
                    Activation::Relu(..) => unreachable!(),
                })
                .collect(),
        }
    };
    Ok((g, out))
}

enum Activation {
    Relu(SignGadget, Vec<HalfGatePair>),
    Sign(SignGadget, Vec<ProjectionTable>),
}

/// Evaluate a garbled layer on active labels.
pub fn eval_layer(
    layer: &GarbledLayer,
    plan: &SignPlan,
    zeros: &ZeroWires,
    input: &BundleTensor,
) -> Result<BundleTensor> {
    let base = plan.base();
    input.check_base(base)?;
    let out_shape = layer.output_shape(input.shape())?;
    let n_out: usize = out_shape.iter().product();
    match layer {
        GarbledLayer::Dense { weights, .. } | GarbledLayer::Conv2d { weights, .. } => {
            let residues: Vec<Vec<u16>> = base.primes().iter().map(|&p| weight_residues(weights, p)).collect();
            let shape = layer.shape_layer();
            Ok(linear(input, &shape, zeros, &residues)?.0)
        }
        GarbledLayer::DensePrivate { tables, .. } | GarbledLayer::Conv2dPrivate { tables, .. } => {
            let shape = layer.shape_layer();
            let window = match &shape {
                Layer::Dense(d) => d.inputs,
                Layer::Conv2d(c) => c.window(),
                _ => unreachable!(),
            };
            if tables.len() != n_out * window * base.k() {
                return Err(Error::Circuit(format!("private layer has {} tables", tables.len())));
            }
            let outs = (0..n_out)
                .into_par_iter()
                .map(|e| {
                    let srcs = private_inputs(&shape, input, e, &out_shape);
                    let mut ts = tables[e * window * base.k()..(e + 1) * window * base.k()].iter();
                    input
                        .lanes
                        .iter()
                        .map(|lane| {
                            let mut acc = Label::zero(lane.modulus());
                            for &(src, _) in &srcs {
                                let t = ts.next().expect("length checked");
                                acc = acc.add(&eval_projection(t, &lane.to_label(src))?)?;
                            }
                            Ok(acc)
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            BundleTensor::from_elements(base, &out_shape, &outs)
        }
        GarbledLayer::Relu { elements } => {
            check_elements(elements.len(), n_out)?;
            let outs = elements
                .par_iter()
                .enumerate()
                .map(|(e, (sign, gates))| {
                    if let Some((next, next_gates)) = elements.get(e + 1) {
                        next.prefetch();
                        next_gates.iter().for_each(HalfGatePair::prefetch);
                    }
                    let x = input.element(e);
                    let bit = eval_approx_sign(sign, &x, plan, zeros)?;
                    if gates.len() != x.len() {
                        return Err(Error::Circuit("relu element has the wrong number of half gates".into()));
                    }
                    x.iter()
                        .zip(gates)
                        .map(|(xi, g)| eval_mm_half_gate(g, xi, &bit))
                        .collect()
                })
                .collect::<Result<Vec<_>>>()?;
            BundleTensor::from_elements(base, &out_shape, &outs)
        }
        GarbledLayer::Sign { elements } => {
            check_elements(elements.len(), n_out)?;
            let outs = elements
                .par_iter()
                .enumerate()
                .map(|(e, (sign, tables))| {
                    if let Some((next, _)) = elements.get(e + 1) {
                        next.prefetch();
                    }
                    let bit = eval_approx_sign(sign, &input.element(e), plan, zeros)?;
                    if tables.len() != base.k() {
                        return Err(Error::Circuit(
                            "sign element has the wrong number of projections".into(),
                        ));
                    }
                    tables.iter().map(|t| eval_projection(t, &bit)).collect()
                })
                .collect::<Result<Vec<_>>>()?;
            BundleTensor::from_elements(base, &out_shape, &outs)
        }
        GarbledLayer::Flatten => input.clone().reshape(&out_shape),
    }
}

fn check_elements(got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Shape(format!(
            "activation has {got} gadgets for {expected} elements"
        )));
    }
    Ok(())
}
