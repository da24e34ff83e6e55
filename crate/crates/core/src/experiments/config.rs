//! Flat `key = value` experiment configuration.
//!
//! Keys: `eps` (comma-separated list of exact decimals or fractions),
//! `driver`, `seed`, `backend` (`ulam` or `exact`), `bins`, `steps`,
//! `samples`, `depth`, `qr`, `threads`, `out`, `dump_matrix`. Lines starting
//! with `#` are comments. Command-line flags are applied after the file.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::driving::DriverSpec;
use crate::error::{Error, Result};
use crate::lyapunov::{BackendKind, DEFAULT_COARSEN_TOL};
use crate::scalar::{parse_rational, Rational, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Ulam,
    Lyapunov,
    Sweep,
    ConeCheck,
    McCompare,
    Oseledets,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Ulam => "ulam",
            Command::Lyapunov => "lyapunov",
            Command::Sweep => "sweep",
            Command::ConeCheck => "cone-check",
            Command::McCompare => "mc-compare",
            Command::Oseledets => "oseledets",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: Command,
    pub eps: Vec<String>,
    pub driver: String,
    pub seed: u64,
    pub backend: String,
    pub bins: usize,
    pub steps: usize,
    pub samples: usize,
    pub depth: usize,
    pub qr: usize,
    #[serde(skip)]
    pub threads: Option<usize>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub dump_matrix: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn defaults(command: Command) -> Self {
        let eps = match command {
            Command::Sweep | Command::McCompare => "0.04,0.02,0.01,0.005",
            Command::ConeCheck => "0.0004",
            _ => "0.01",
        };
        ExperimentConfig {
            command,
            eps: split_list(eps),
            driver: "constant:a=1;b=1".into(),
            seed: 0,
            backend: if command == Command::Ulam { "ulam".into() } else { "exact".into() },
            bins: 4096,
            steps: 10_000,
            samples: 1000,
            depth: 200,
            qr: 3,
            threads: None,
            out: None,
            dump_matrix: None,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let num = |v: &str| -> Result<usize> {
            v.parse().map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got {v:?}")))
        };
        match key.trim() {
            "eps" => self.eps = split_list(v),
            "driver" => self.driver = v.to_string(),
            "seed" => {
                self.seed = v.parse().map_err(|_| Error::Config(format!("seed: bad value {v:?}")))?
            }
            "backend" => self.backend = v.to_string(),
            "bins" => self.bins = num(v)?,
            "steps" => self.steps = num(v)?,
            "samples" => self.samples = num(v)?,
            "depth" => self.depth = num(v)?,
            "qr" => self.qr = num(v)?,
            "threads" => self.threads = Some(num(v)?),
            "out" => self.out = Some(PathBuf::from(v)),
            "dump_matrix" => self.dump_matrix = Some(PathBuf::from(v)),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn eps_values(&self) -> Result<Vec<Rational>> {
        if self.eps.is_empty() {
            return Err(Error::Config("eps list is empty".into()));
        }
        let vals: Vec<Rational> = self.eps.iter().map(|e| parse_rational(e)).collect::<Result<_>>()?;
        for (s, v) in self.eps.iter().zip(&vals) {
            if v.to_f64() < 0.0 || v.to_f64() > 1.0 {
                return Err(Error::Config(format!("eps {s} outside [0,1]")));
            }
        }
        Ok(vals)
    }

    pub fn driver_spec(&self) -> Result<DriverSpec> {
        DriverSpec::parse(&self.driver, self.seed)
    }

    pub fn backend_kind(&self) -> Result<BackendKind> {
        match self.backend.as_str() {
            "ulam" => Ok(BackendKind::Ulam { n_bins: self.bins }),
            "exact" => Ok(BackendKind::ExactPc { coarsen_tol: DEFAULT_COARSEN_TOL }),
            other => Err(Error::Config(format!("backend must be ulam or exact, got {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.eps_values()?;
        self.driver_spec()?;
        self.backend_kind()?;
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if self.command == Command::ConeCheck && self.samples == 0 {
            return Err(Error::Config("samples must be positive".into()));
        }
        if self.qr == 0 || self.qr > 16 {
            return Err(Error::Config("qr must lie in 1..=16".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        if self.bins < 2 || self.bins % 2 != 0 {
            return Err(Error::Config(format!("bins must be even and >= 2, got {}", self.bins)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of every setting that affects results.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut c = ExperimentConfig::defaults(Command::Sweep);
        c.apply_text("# sweep\neps = 0.02, 0.01\nsteps=500\nbackend = ulam\n").unwrap();
        assert_eq!(c.eps, vec!["0.02", "0.01"]);
        c.set("steps", "700").unwrap();
        assert_eq!(c.steps, 700);
        assert_eq!(c.backend_kind().unwrap(), BackendKind::Ulam { n_bins: 4096 });
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = ExperimentConfig::defaults(Command::Lyapunov);
        assert!(c.apply_text("nonsense").is_err());
        assert!(c.set("colour", "red").is_err());
        assert!(c.set("steps", "-3").is_err());
        c.set("bins", "7").unwrap();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::defaults(Command::Lyapunov);
        c.set("eps", "2").unwrap();
        assert!(c.validate().is_err());
        c.set("eps", "0.01").unwrap();
        c.set("backend", "gpu").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_ignores_output_location() {
        let mut a = ExperimentConfig::defaults(Command::Oseledets);
        let h = a.hash();
        a.set("out", "/tmp/x.txt").unwrap();
        a.set("threads", "2").unwrap();
        assert_eq!(a.hash(), h);
        a.set("seed", "5").unwrap();
        assert_ne!(a.hash(), h);
        assert_eq!(h.len(), 64);
    }
}
