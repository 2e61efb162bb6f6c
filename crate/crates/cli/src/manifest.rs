//! The provenance line at the top of every output file.

use std::fmt::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// An input file's text with its SHA-256 digest.
pub struct Input {
    pub role: &'static str,
    pub text: String,
    pub digest: String,
    pub origin: String,
}

impl Input {
    pub fn read(role: &'static str, path: &Path) -> CliResult<Input> {
        let bytes = std::fs::read(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let digest = hex(&Sha256::digest(&bytes));
        let text =
            String::from_utf8(bytes).map_err(|_| CliError::invalid(format!("{}: not valid UTF-8", path.display())))?;
        Ok(Input {
            role,
            text,
            digest,
            origin: path.display().to_string(),
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Subcommand, input digests (by role, never by path) and parameters.
pub struct Manifest {
    subcommand: &'static str,
    inputs: Vec<(&'static str, String)>,
    params: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(subcommand: &'static str) -> Self {
        Manifest {
            subcommand,
            inputs: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn input(mut self, input: &Input) -> Self {
        self.inputs.push((input.role, input.digest.clone()));
        self
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.push((key.to_string(), value.to_string()));
        self
    }

    /// Both the exposed level and its complement, e.g. `alpha_prime` and `alpha`.
    pub fn level(self, prime_key: &str, key: &str, prime: f64, value: f64) -> Self {
        self.param(prime_key, prime).param(key, value)
    }

    /// The manifest as one comment line after `prefix` (`#` or `//`).
    pub fn line(&self, prefix: &str) -> String {
        format!("{prefix} {}\n", self.body())
    }

    pub fn body(&self) -> String {
        let mut out = format!("cshield {VERSION} {}", self.subcommand);
        for (role, digest) in &self.inputs {
            let _ = write!(out, " {role}=sha256:{digest}");
        }
        for (k, v) in &self.params {
            let _ = write!(out, " {k}={v}");
        }
        out
    }
}

pub fn write_output(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
