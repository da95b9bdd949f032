//! TOML deployment configuration.
//!
//! ```toml
//! [roles]
//! garbler = "127.0.0.1:7001"
//! evaluator = "127.0.0.1:7002"
//!
//! [circuit]
//! k = 8
//! sign_accuracy = "full"
//!
//! [network]
//! timeout_secs = 120
//! ```

use std::path::Path;
use std::time::Duration;

use dash_core::gadgets::SignAccuracy;
use serde::{Deserialize, Serialize};

use crate::error::{ProtocolError, Result};
use crate::messages::parse_sign_accuracy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub roles: Roles,
    #[serde(default)]
    pub circuit: CircuitSettings,
    #[serde(default)]
    pub network: NetworkSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    pub garbler: String,
    pub evaluator: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitSettings {
    pub k: usize,
    pub sign_accuracy: String,
}

impl Default for CircuitSettings {
    fn default() -> Self {
        CircuitSettings {
            k: 8,
            sign_accuracy: "full".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSettings {
    pub timeout_secs: u64,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        NetworkSettings { timeout_secs: 120 }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| ProtocolError::Config(e.to_string()))?;
        c.sign_accuracy()?;
        dash_core::crt::CrtBase::new(c.circuit.k).map_err(|e| ProtocolError::Config(e.to_string()))?;
        if c.network.timeout_secs == 0 {
            return Err(ProtocolError::Config("timeout_secs must be positive".into()));
        }
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| ProtocolError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn sign_accuracy(&self) -> Result<SignAccuracy> {
        parse_sign_accuracy(&self.circuit.sign_accuracy)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.network.timeout_secs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_and_minimal_configs() {
        let c = Config::parse(
            r#"
            [roles]
            garbler = "127.0.0.1:7001"
            evaluator = "127.0.0.1:7002"
            [circuit]
            k = 9
            sign_accuracy = "0.95"
            [network]
            timeout_secs = 5
            "#,
        )
        .unwrap();
        assert_eq!(c.circuit.k, 9);
        assert_eq!(c.sign_accuracy().unwrap(), SignAccuracy::AtLeast(0.95));
        assert_eq!(c.timeout(), Duration::from_secs(5));
        let m = Config::parse("[roles]\ngarbler = \"a:1\"\nevaluator = \"b:2\"\n").unwrap();
        assert_eq!(m.circuit, CircuitSettings::default());
        let partial = Config::parse("[roles]\ngarbler = \"a:1\"\nevaluator = \"b:2\"\n[circuit]\nk = 5\n").unwrap();
        assert_eq!((partial.circuit.k, partial.circuit.sign_accuracy.as_str()), (5, "full"));
    }

    #[test]
    fn rejects_bad_values() {
        let roles = "[roles]\ngarbler = \"a:1\"\nevaluator = \"b:2\"\n";
        assert!(Config::parse(&format!("{roles}[circuit]\nk = 17\nsign_accuracy = \"full\"\n")).is_err());
        assert!(Config::parse(&format!("{roles}[circuit]\nk = 8\nsign_accuracy = \"lots\"\n")).is_err());
        assert!(Config::parse(&format!("{roles}[network]\ntimeout_secs = 0\n")).is_err());
        assert!(Config::parse("[roles]\ngarbler = \"a:1\"\n").is_err());
    }
}
