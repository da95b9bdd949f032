//! JSON model files, quantization search, and artifact files.
//!
//! A model file is
//!
//! ```json
//! { "input_shape": [1, 28, 28],
//!   "layers": [ {"type": "dense", "inputs": 784, "outputs": 10,
//!                "weights": [...], "biases": [...]}, {"type": "relu"} ],
//!   "metadata": {"name": "demo"} }
//! ```
//!
//! with weights as flat row-major arrays (`[outputs][inputs]` for dense,
//! `[out][in][filter][filter]` for conv2d). An optional
//! `"quantization": {"alpha": 4.0, "k": 8}` block marks the weights as
//! already-quantized integers.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{scales, Circuit, DecodingInfo, EncodingInfo, GarbledCircuit};
use crate::crt::{quantize_scaled, CrtBase, QuantParams};
use crate::error::{Error, Result};
use crate::layers::{Conv2d, Dense, IntTensor, Layer};

const ALPHA_GRID_MAX_EXP: i32 = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantization: Option<QuantBlock>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantBlock {
    pub alpha: f64,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerDef {
    Dense {
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        filter: usize,
        stride: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
    },
    Relu,
    Sign,
    Flatten,
}

impl LayerDef {
    /// Integer layer with weights converted by `wf` and biases by `bf`.
    fn to_layer(
        &self,
        mut wf: impl FnMut(f64) -> Result<i64>,
        mut bf: impl FnMut(f64) -> Result<i64>,
    ) -> Result<Layer> {
        let conv =
            |v: &[f64], f: &mut dyn FnMut(f64) -> Result<i64>| v.iter().map(|&x| f(x)).collect::<Result<Vec<_>>>();
        Ok(match self {
            LayerDef::Dense {
                inputs,
                outputs,
                weights,
                biases,
            } => Layer::Dense(Dense::new(
                *inputs,
                *outputs,
                conv(weights, &mut wf)?,
                conv(biases, &mut bf)?,
            )?),
            LayerDef::Conv2d {
                in_channels,
                out_channels,
                filter,
                stride,
                weights,
                biases,
            } => Layer::Conv2d(Conv2d::new(
                *in_channels,
                *out_channels,
                *filter,
                *stride,
                conv(weights, &mut wf)?,
                conv(biases, &mut bf)?,
            )?),
            LayerDef::Relu => Layer::Relu,
            LayerDef::Sign => Layer::Sign,
            LayerDef::Flatten => Layer::Flatten,
        })
    }

    fn from_layer(l: &Layer) -> Self {
        let f = |v: &[i64]| v.iter().map(|&x| x as f64).collect();
        match l {
            Layer::Dense(d) => LayerDef::Dense {
                inputs: d.inputs,
                outputs: d.outputs,
                weights: f(&d.weights),
                biases: f(&d.biases),
            },
            Layer::Conv2d(c) => LayerDef::Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                filter: c.filter,
                stride: c.stride,
                weights: f(&c.weights),
                biases: f(&c.biases),
            },
            Layer::Relu => LayerDef::Relu,
            Layer::Sign => LayerDef::Sign,
            Layer::Flatten => LayerDef::Flatten,
        }
    }
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: ModelFile = serde_json::from_str(text)
            .map_err(|e| Error::Model(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// Shape consistency along the layer chain, with real weights in place.
    pub fn validate(&self) -> Result<()> {
        let mut shape = self.input_shape.clone();
        if self.layers.is_empty() {
            return Err(Error::Model("model has no layers".into()));
        }
        for (i, def) in self.layers.iter().enumerate() {
            if let LayerDef::Dense { weights, biases, .. } | LayerDef::Conv2d { weights, biases, .. } = def {
                if let Some(v) = weights.iter().chain(biases).find(|v| !v.is_finite()) {
                    return Err(Error::Model(format!("layer {i}: non-finite parameter {v}")));
                }
            }
            let shape_only = def
                .to_layer(|_| Ok(0), |_| Ok(0))
                .map_err(|e| Error::Model(format!("layer {i}: {e}")))?;
            shape = shape_only
                .output_shape(&shape)
                .map_err(|e| Error::Model(format!("layer {i}: {e}")))?;
        }
        if let Some(q) = &self.quantization {
            if !(q.alpha.is_finite() && q.alpha > 0.0) {
                return Err(Error::Model(format!("quantization alpha {} is not positive", q.alpha)));
            }
            CrtBase::new(q.k).map_err(|e| Error::Model(e.to_string()))?;
        }
        Ok(())
    }

    pub fn is_quantized(&self) -> bool {
        self.quantization.is_some()
    }

    /// Integer circuit: pre-quantized weights are taken as-is, real weights
    /// are scaled by `alpha` and biases by the activation scale they are
    /// added to.
    pub fn to_circuit(&self, base: Arc<CrtBase>, alpha: f64) -> Result<Circuit> {
        let bound = base.value_bound();
        let layers = if self.is_quantized() {
            let int = |x: f64| -> Result<i64> {
                if x.fract() != 0.0 || x.abs() > bound as f64 {
                    return Err(Error::Model(format!(
                        "quantized parameter {x} is not an integer in range"
                    )));
                }
                Ok(x as i64)
            };
            self.layers
                .iter()
                .map(|d| d.to_layer(int, int))
                .collect::<Result<Vec<_>>>()?
        } else {
            let shape_layers = self
                .layers
                .iter()
                .map(|d| d.to_layer(|_| Ok(0), |_| Ok(0)))
                .collect::<Result<Vec<_>>>()?;
            let s = scales(&shape_layers, alpha);
            self.layers
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    d.to_layer(
                        |w| quantize_scaled(w, alpha, bound).map(|v| v as i64),
                        |b| quantize_scaled(b, s[i + 1], bound).map(|v| v as i64),
                    )
                })
                .collect::<Result<Vec<_>>>()?
        };
        Circuit::new(self.input_shape.clone(), layers, base, alpha)
    }

    /// Circuit from a pre-quantized file, using its own base and constant.
    pub fn quantized_circuit(&self) -> Result<Circuit> {
        let q = self
            .quantization
            .ok_or_else(|| Error::Model("model is not quantized".into()))?;
        self.to_circuit(Arc::new(CrtBase::new(q.k)?), q.alpha)
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    ModelFile::from_json(&text).map_err(|e| Error::Model(format!("{}: {e}", path.display())))
}

/// Largest `alpha = 2^j`, `j` from 8 down to -8, for which quantized
/// parameters, inputs and every intermediate value of every sample stay
/// within `(P - 1) / 4`.
pub fn optimize_quantization(model: &ModelFile, samples: &[Vec<f64>], base: Arc<CrtBase>) -> Result<QuantParams> {
    if samples.is_empty() {
        return Err(Error::Quantization("need at least one sample input".into()));
    }
    let limit = ((base.modulus_u128() - 1) / 4) as i128;
    let n: usize = model.input_shape.iter().product();
    if let Some(s) = samples.iter().find(|s| s.len() != n) {
        return Err(Error::Quantization(format!(
            "sample has {} values, model expects {n}",
            s.len()
        )));
    }
    for j in (-ALPHA_GRID_MAX_EXP..=ALPHA_GRID_MAX_EXP).rev() {
        let alpha = 2f64.powi(j);
        if quantization_fits(model, samples, &base, alpha, limit) {
            return QuantParams::new(alpha, base);
        }
    }
    Err(Error::Quantization(format!(
        "no quantization constant in [2^-8, 2^8] fits P_{}",
        base.k()
    )))
}

fn quantization_fits(model: &ModelFile, samples: &[Vec<f64>], base: &Arc<CrtBase>, alpha: f64, limit: i128) -> bool {
    let Ok(circuit) = model.to_circuit(base.clone(), alpha) else {
        return false;
    };
    let params_fit = circuit.layers.iter().all(|l| match l {
        Layer::Dense(Dense { weights, biases, .. }) | Layer::Conv2d(Conv2d { weights, biases, .. }) => {
            weights.iter().chain(biases).all(|&v| (v as i128).abs() <= limit)
        }
        _ => true,
    });
    params_fit
        && samples.iter().all(|s| {
            let Ok(x) = s
                .iter()
                .map(|&v| quantize_scaled(v, alpha, limit))
                .collect::<Result<Vec<_>>>()
            else {
                return false;
            };
            let mut t = IntTensor {
                shape: circuit.input_shape.clone(),
                data: x,
            };
            circuit.layers.iter().all(|l| match l.plain_forward(&t, limit) {
                Ok(next) => {
                    t = next;
                    true
                }
                Err(_) => false,
            })
        })
}

/// Model file holding the circuit's integer weights and its base/constant.
pub fn quantized_model(circuit: &Circuit) -> ModelFile {
    ModelFile {
        input_shape: circuit.input_shape.clone(),
        layers: circuit.layers.iter().map(LayerDef::from_layer).collect(),
        quantization: Some(QuantBlock {
            alpha: circuit.alpha,
            k: circuit.base.k(),
        }),
        metadata: BTreeMap::new(),
    }
}

pub fn export_quantized(circuit: &Circuit, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, quantized_model(circuit).to_json())?;
    Ok(())
}

pub fn save_garbled(gnn: &GarbledCircuit, path: impl AsRef<Path>) -> Result<()> {
    Ok(std::fs::write(path, gnn.to_bytes())?)
}

pub fn load_garbled(path: impl AsRef<Path>) -> Result<GarbledCircuit> {
    GarbledCircuit::from_bytes(&std::fs::read(path)?)
}

pub fn save_encoding(e: &EncodingInfo, path: impl AsRef<Path>) -> Result<()> {
    Ok(std::fs::write(path, e.to_bytes())?)
}

pub fn load_encoding(path: impl AsRef<Path>) -> Result<EncodingInfo> {
    EncodingInfo::from_bytes(&std::fs::read(path)?)
}

pub fn save_decoding(d: &DecodingInfo, path: impl AsRef<Path>) -> Result<()> {
    Ok(std::fs::write(path, d.to_bytes())?)
}

pub fn load_decoding(path: impl AsRef<Path>) -> Result<DecodingInfo> {
    DecodingInfo::from_bytes(&std::fs::read(path)?)
}

/// Network shapes from the evaluation table, inputs `[C, H, W]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// D(784,128), R, D(128,128), R, D(128,10)
    A,
    /// C(1,5,4,2), R, D(845,100), R, D(100,10)
    C,
    /// C(1,16,6,2), R, C(16,16,6,2), R, D(256,100), R, D(100,10)
    D,
    /// A small network with the CIFAR-10 input and output dimensions:
    /// C(3,4,4,4), R, D(256,10)
    FDims,
}

/// Layer kinds with dimensions but no parameters yet.
#[derive(Clone, Copy, Debug)]
enum Shape {
    D(usize, usize),
    C(usize, usize, usize, usize),
    R,
}

impl Architecture {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Some(Architecture::A),
            "C" => Some(Architecture::C),
            "D" => Some(Architecture::D),
            "F" | "F-DIMS" | "FDIMS" => Some(Architecture::FDims),
            _ => None,
        }
    }

    pub fn input_shape(self) -> Vec<usize> {
        match self {
            Architecture::FDims => vec![3, 32, 32],
            _ => vec![1, 28, 28],
        }
    }

    /// CRT base size used for this model in the evaluation.
    pub fn base_size(self) -> usize {
        match self {
            Architecture::A | Architecture::D => 8,
            Architecture::C | Architecture::FDims => 9,
        }
    }

    fn shapes(self) -> Vec<Shape> {
        use Shape::*;
        match self {
            Architecture::A => vec![D(784, 128), R, D(128, 128), R, D(128, 10)],
            Architecture::C => vec![C(1, 5, 4, 2), R, D(845, 100), R, D(100, 10)],
            Architecture::D => vec![C(1, 16, 6, 2), R, C(16, 16, 6, 2), R, D(256, 100), R, D(100, 10)],
            Architecture::FDims => vec![C(3, 4, 4, 4), R, D(256, 10)],
        }
    }

    /// Integer layers with weights and biases drawn by `param`.
    pub fn integer_layers(self, mut param: impl FnMut() -> i64) -> Vec<Layer> {
        let mut draw = |n: usize| (0..n).map(|_| param()).collect::<Vec<_>>();
        self.shapes()
            .into_iter()
            .map(|s| match s {
                Shape::D(i, o) => Layer::Dense(Dense {
                    inputs: i,
                    outputs: o,
                    weights: draw(i * o),
                    biases: draw(o),
                }),
                Shape::C(i, o, f, st) => Layer::Conv2d(Conv2d {
                    in_channels: i,
                    out_channels: o,
                    filter: f,
                    stride: st,
                    weights: draw(o * i * f * f),
                    biases: draw(o),
                }),
                Shape::R => Layer::Relu,
            })
            .collect()
    }

    /// Random ternary-weight integer circuit on this architecture's base.
    pub fn random_circuit<R: Rng>(self, rng: &mut R) -> Result<Circuit> {
        let layers = self.integer_layers(|| rng.gen_range(-1..=1));
        Circuit::new(
            self.input_shape(),
            layers,
            Arc::new(CrtBase::new(self.base_size())?),
            1.0,
        )
    }

    /// Real-weight model file with weights uniform in `±scale`.
    pub fn random_model<R: Rng>(self, rng: &mut R, scale: f64) -> ModelFile {
        let layers = self
            .integer_layers(|| 0)
            .iter()
            .map(|l| match LayerDef::from_layer(l) {
                LayerDef::Dense {
                    inputs,
                    outputs,
                    weights,
                    biases,
                } => LayerDef::Dense {
                    inputs,
                    outputs,
                    weights: weights.iter().map(|_| rng.gen_range(-scale..=scale)).collect(),
                    biases: biases.iter().map(|_| rng.gen_range(-scale..=scale)).collect(),
                },
                LayerDef::Conv2d {
                    in_channels,
                    out_channels,
                    filter,
                    stride,
                    weights,
                    biases,
                } => LayerDef::Conv2d {
                    in_channels,
                    out_channels,
                    filter,
                    stride,
                    weights: weights.iter().map(|_| rng.gen_range(-scale..=scale)).collect(),
                    biases: biases.iter().map(|_| rng.gen_range(-scale..=scale)).collect(),
                },
                other => other,
            })
            .collect();
        ModelFile {
            input_shape: self.input_shape(),
            layers,
            quantization: None,
            metadata: BTreeMap::new(),
        }
    }
}
