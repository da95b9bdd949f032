//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "dash", version, about = "Garbled-circuit inference for small quantized CNNs")]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Garble a model; writes the garbled network plus .enc and .dec files.
    Garble {
        #[command(flatten)]
        model: ModelArgs,
        /// Output path of the garbled network.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Turn an input vector into a garbled input.
    Encode {
        /// Encoding information written by `garble`.
        #[arg(short, long)]
        encoding: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Evaluate a garbled network on a garbled input.
    Evaluate {
        /// Garbled network written by `garble`.
        #[arg(short, long)]
        garbled: PathBuf,
        /// Garbled input written by `encode`.
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Decode and authenticate a garbled output.
    Decode {
        /// Decoding information written by `garble`.
        #[arg(short, long)]
        decoding: PathBuf,
        /// Garbled output written by `evaluate`.
        #[arg(short, long)]
        input: PathBuf,
        /// Print the result as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Garble, encode, evaluate and decode one input, locally or through
    /// running services.
    Infer {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        input: InputArgs,
        /// Run through a garbling-device service at this address.
        #[arg(long)]
        garbler: Option<String>,
        /// Split the input among owners of these sizes (service mode).
        #[arg(long, value_delimiter = ',', requires = "garbler")]
        owners: Option<Vec<usize>>,
        /// Seconds to wait for each service reply.
        #[arg(long, default_value_t = 120)]
        timeout_secs: u64,
        /// Print the result as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run the garbling-device service.
    ServeGarbler {
        #[command(flatten)]
        service: ServiceArgs,
        /// Address of the inference device.
        #[arg(long)]
        evaluator: Option<String>,
        /// Default base size for real-valued models.
        #[arg(short, long)]
        k: Option<usize>,
        /// Default sign accuracy: "full" or a fraction in (0, 1].
        #[arg(long)]
        sign_accuracy: Option<String>,
    },
    /// Run the inference-device service.
    ServeEvaluator {
        #[command(flatten)]
        service: ServiceArgs,
    },
    /// Per-layer garbling and evaluation times and ciphertext counts, as JSON.
    Bench {
        #[command(flatten)]
        model: ModelArgs,
        /// Input to evaluate on; random small integers if absent.
        #[arg(short, long)]
        input: Option<PathBuf>,
        /// Treat the input as pre-quantized integers.
        #[arg(long)]
        integer: bool,
        /// Evaluations to average the online timings over.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        runs: u32,
    },
    /// Closed-form versus measured ciphertext counts per layer.
    Count {
        #[command(flatten)]
        model: ModelArgs,
        /// Print the result as JSON.
        #[arg(long)]
        json: bool,
    },
}

/// Where the network comes from and how it is quantized.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model file (JSON).
    #[arg(short, long, required_unless_present = "arch", conflicts_with = "arch")]
    pub model: Option<PathBuf>,
    /// Built-in architecture with random ternary weights: A, C, D or F.
    #[arg(long)]
    pub arch: Option<String>,
    /// Seed of the random weights of `--arch`.
    #[arg(long, default_value_t = 0)]
    pub weights_seed: u64,
    /// CRT base size (number of primes).
    #[arg(short, long)]
    pub k: Option<usize>,
    /// Quantization constant for real-valued models.
    #[arg(long, conflicts_with = "sample")]
    pub alpha: Option<f64>,
    /// Representative inputs (one per line) to choose the quantization constant.
    #[arg(long)]
    pub sample: Option<PathBuf>,
    /// "full" or a target fraction in (0, 1].
    #[arg(long, default_value = "full")]
    pub sign_accuracy: String,
    /// Hide weights in the garbled network.
    #[arg(long)]
    pub private_weights: bool,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// CSV input file.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Treat the input as pre-quantized integers.
    #[arg(long)]
    pub integer: bool,
}

#[derive(Debug, Args)]
pub struct ServiceArgs {
    /// Listen address, e.g. 127.0.0.1:7001.
    #[arg(long)]
    pub listen: Option<String>,
    /// TOML deployment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seconds to wait on a peer (default: from the config, else 120).
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}
