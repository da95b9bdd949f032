//! The `dash` command: artifact-level garbling, encoding, evaluation and
//! decoding, local end-to-end inference, the two network services, and
//! cost/benchmark reports.

pub mod args;
pub mod commands;
pub mod error;
pub mod inputs;
pub mod model;

use std::time::Duration;

use args::{Cli, Command};
use commands::InferOptions;
use error::{CliError, CliResult};

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Garble { model, output } => commands::garble_cmd(model, output),
        Command::Encode {
            encoding,
            input,
            output,
        } => commands::encode_cmd(encoding, input, output),
        Command::Evaluate { garbled, input, output } => commands::evaluate_cmd(garbled, input, output),
        Command::Decode { decoding, input, json } => commands::decode_cmd(decoding, input, *json),
        Command::Infer {
            model,
            input,
            garbler,
            owners,
            timeout_secs,
            json,
        } => commands::infer_cmd(
            model,
            input,
            &InferOptions {
                garbler: garbler.as_deref(),
                owners: owners.as_deref(),
                timeout: Duration::from_secs((*timeout_secs).max(1)),
                json: *json,
            },
        ),
        Command::ServeGarbler {
            service,
            evaluator,
            k,
            sign_accuracy,
        } => commands::serve_garbler_cmd(service, evaluator.as_deref(), *k, sign_accuracy.as_deref()),
        Command::ServeEvaluator { service } => commands::serve_evaluator_cmd(service),
        Command::Bench {
            model,
            input,
            integer,
            runs,
        } => commands::bench_cmd(model, input.as_deref(), *integer, *runs),
        Command::Count { model, json } => commands::count_cmd(model, *json),
    }
}
