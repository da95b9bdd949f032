//! Turning command-line model options into a quantized circuit.

use std::sync::Arc;

use dash_core::circuit::Circuit;
use dash_core::crt::CrtBase;
use dash_core::model_io::{load_model, optimize_quantization, Architecture};
use dash_protocol::messages::parse_sign_accuracy;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::args::ModelArgs;
use crate::error::{CliError, CliResult};
use crate::inputs::read_samples;

/// Default base size for real-valued models.
pub const DEFAULT_K: usize = 8;

/// Environment variable fixing all garbling randomness.
pub const SEED_VAR: &str = "DASH_SEED";

/// A circuit plus a display name.
pub struct Resolved {
    pub name: String,
    pub circuit: Circuit,
}

fn base(k: usize) -> CliResult<Arc<CrtBase>> {
    Ok(Arc::new(CrtBase::new(k)?))
}

/// Build the circuit. Real-valued models take their quantization constant
/// from `--alpha`, from `--sample`, or else from `fallback_sample` (the
/// input about to be evaluated).
pub fn resolve(args: &ModelArgs, fallback_sample: Option<&[f64]>) -> CliResult<Resolved> {
    let accuracy = parse_sign_accuracy(&args.sign_accuracy).map_err(|e| CliError::usage(e.to_string()))?;
    let (name, circuit) = if let Some(arch) = &args.arch {
        let a = Architecture::parse(arch)
            .ok_or_else(|| CliError::usage(format!("unknown architecture '{arch}' (expected A, C, D or F)")))?;
        let mut rng = ChaCha20Rng::seed_from_u64(args.weights_seed);
        let mut c = a.random_circuit(&mut rng)?;
        if let Some(k) = args.k {
            c = Circuit::new(c.input_shape, c.layers, base(k)?, c.alpha)?;
        }
        (format!("arch-{}", arch.to_ascii_uppercase()), c)
    } else {
        let path = args.model.as_ref().expect("clap requires --model or --arch");
        let model = load_model(path)?;
        let name = path
            .file_stem()
            .map_or("model".into(), |s| s.to_string_lossy().into_owned());
        let c = if model.is_quantized() {
            let c = model.quantized_circuit()?;
            if args.k.is_some_and(|k| k != c.base.k()) {
                return Err(CliError::usage(format!(
                    "{} is quantized for k = {}; drop -k or pass {}",
                    path.display(),
                    c.base.k(),
                    c.base.k()
                )));
            }
            if args.alpha.is_some() || args.sample.is_some() {
                return Err(CliError::usage(format!(
                    "{} is already quantized; --alpha and --sample do not apply",
                    path.display()
                )));
            }
            c
        } else {
            let b = base(args.k.unwrap_or(DEFAULT_K))?;
            let alpha = match (args.alpha, &args.sample, fallback_sample) {
                (Some(a), _, _) => a,
                (None, Some(s), _) => optimize_quantization(&model, &read_samples(s)?, b.clone())?.alpha(),
                (None, None, Some(x)) => optimize_quantization(&model, &[x.to_vec()], b.clone())?.alpha(),
                (None, None, None) => {
                    return Err(CliError::usage(
                        "a real-valued model needs --alpha or --sample (or real-valued input)",
                    ))
                }
            };
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(CliError::usage(format!(
                    "quantization constant {alpha} must be positive"
                )));
            }
            model.to_circuit(b, alpha)?
        };
        (name, c)
    };
    Ok(Resolved {
        name,
        circuit: circuit
            .with_sign_accuracy(accuracy)
            .with_private_weights(args.private_weights),
    })
}

/// Master seed from the environment, if set.
pub fn master_seed() -> Option<[u8; 32]> {
    std::env::var(SEED_VAR).ok().map(|s| {
        Sha256::new()
            .chain_update(b"dash-seed:")
            .chain_update(s.as_bytes())
            .finalize()
            .into()
    })
}

/// 32 bytes for `purpose`: derived from the master seed when set, else fresh.
pub fn seed_for(purpose: &str) -> [u8; 32] {
    match master_seed() {
        Some(m) => Sha256::new()
            .chain_update(m)
            .chain_update(purpose.as_bytes())
            .finalize()
            .into(),
        None => {
            let mut s = [0u8; 32];
            rand::rngs::OsRng.fill_bytes(&mut s);
            s
        }
    }
}
