//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use gammacell_core::density::DensitySpec;
use gammacell_core::envelope::LaminateOptions;
use gammacell_core::minimize::SolveOptions;
use gammacell_core::Mat;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable overriding the cache directory.
pub const CACHE_ENV: &str = "GAMMACELL_CACHE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    /// The density `f`, or the nonlinear family `W_δ` for the linearization
    /// experiments.
    pub density: DensitySpec,
    /// The linearized density `V` compared against `W_δ`.
    #[serde(default)]
    pub linearized: Option<DensitySpec>,
    #[serde(default)]
    pub cell: CellSection,
    #[serde(default)]
    pub solve: SolveOptions,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub envelope: EnvelopeSection,
    #[serde(default)]
    pub rigidity: RigiditySection,
    #[serde(default)]
    pub io: IoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellSection {
    /// Macroscopic gradients, each row-major.
    #[serde(rename = "X")]
    pub x: Vec<Mat>,
    pub k: Vec<usize>,
    pub res: usize,
    /// Defaults to true exactly for linearized kinds.
    pub symmetrized: Option<bool>,
    /// Rescaling `δ` for the `cell` command.
    pub delta: f64,
}

impl Default for CellSection {
    fn default() -> Self {
        CellSection {
            x: Vec::new(),
            k: vec![1],
            res: 16,
            symmetrized: None,
            delta: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagonalPoint {
    pub k: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub delta: Vec<f64>,
    #[serde(rename = "T")]
    pub t: Vec<f64>,
    #[serde(rename = "R")]
    pub r: f64,
    /// Relative slack of the monotonicity flags.
    pub slack: f64,
    /// Acceptance threshold for final relative errors.
    pub tol: f64,
    pub lambda: Vec<f64>,
    pub diagonal: Vec<DiagonalPoint>,
    /// Spatial samples per unit length of the equivalence metric.
    pub nx: usize,
    /// Matrix-net points per unit length of the equivalence metric.
    pub n_mat: usize,
    pub sym_only: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            delta: Vec::new(),
            t: vec![1.0],
            r: 1.0,
            slack: 0.1,
            tol: 0.1,
            lambda: Vec::new(),
            diagonal: Vec::new(),
            nx: 4,
            n_mat: 4,
            sym_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvelopeSection {
    pub res: usize,
    pub laminate: Option<LaminateOptions>,
    /// Sampling interval `[lo, hi]` and step of the 1D convexification.
    pub range: [f64; 2],
    pub step: f64,
}

impl Default for EnvelopeSection {
    fn default() -> Self {
        EnvelopeSection {
            res: 64,
            laminate: None,
            range: [-2.0, 2.0],
            step: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigiditySection {
    pub p: f64,
    /// Resolutions of the Korn refinement study on the unit cube.
    pub res: Vec<usize>,
    /// Factor on the right-hand side of the Zhang check.
    pub slack: f64,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub n_fields: usize,
}

impl Default for RigiditySection {
    fn default() -> Self {
        RigiditySection {
            p: 2.0,
            res: vec![16, 32],
            slack: 1.0,
            alpha: None,
            gamma: None,
            n_fields: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub out: PathBuf,
    pub formats: Vec<String>,
    pub cache: Option<PathBuf>,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection {
            out: PathBuf::from("out"),
            formats: vec!["csv".into(), "json".into()],
            cache: None,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Structural checks shared by every command.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let core = |e: gammacell_core::Error| Error::config(e.to_string());
        self.density.validate().map_err(core)?;
        if let Some(v) = &self.linearized {
            v.validate().map_err(core)?;
            if v.n != self.density.n {
                return Err(Error::config("[linearized] must have the same dim as [density]"));
            }
        }
        self.solve.validate().map_err(core)?;
        let n = self.density.n;
        if let Some(x) = self.cell.x.iter().find(|x| x.dim() != n) {
            return Err(Error::config(format!("X entry of dim {} does not match dim {n}", x.dim())));
        }
        if self.cell.k.is_empty() || self.cell.k.contains(&0) || self.cell.k.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("cell.k must be a strictly increasing list of positive sides"));
        }
        if self.cell.res == 0 || self.envelope.res == 0 {
            return Err(Error::config("resolutions must be positive"));
        }
        if !(self.cell.delta >= 0.0) {
            return Err(Error::config("cell.delta must be nonnegative"));
        }
        let s = &self.sweep;
        if s.delta.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::config("sweep.delta entries must be positive"));
        }
        if s.t.iter().any(|t| !(*t > 0.0)) || !(s.r > 0.0) || s.nx == 0 || s.n_mat == 0 {
            return Err(Error::config("sweep.T, sweep.R, sweep.nx and sweep.n_mat must be positive"));
        }
        if !(s.slack >= 0.0) || !(s.tol > 0.0) {
            return Err(Error::config("sweep.slack must be nonnegative and sweep.tol positive"));
        }
        if s.diagonal.iter().any(|d| d.k == 0 || !(d.delta > 0.0)) {
            return Err(Error::config("sweep.diagonal needs k >= 1 and delta > 0"));
        }
        if !(self.envelope.step > 0.0) || !(self.envelope.range[0] < self.envelope.range[1]) {
            return Err(Error::config("envelope.range must be increasing and envelope.step positive"));
        }
        let r = &self.rigidity;
        if !(r.p > 1.0) || r.res.contains(&0) || r.n_fields == 0 || !(r.slack >= 0.0) {
            return Err(Error::config("rigidity needs p > 1, positive res and n_fields, slack >= 0"));
        }
        for f in &self.io.formats {
            if f != "csv" && f != "json" {
                return Err(Error::config(format!("unknown output format {f:?}")));
            }
        }
        Ok(())
    }

    /// Whether the `cell`/`homog` commands evaluate on symmetrized gradients.
    pub fn symmetrized(&self) -> bool {
        self.cell.symmetrized.unwrap_or(self.density.kind.is_linearized())
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Cache directory: the explicit flag, then `GAMMACELL_CACHE`, then
    /// `[io] cache`.
    pub fn cache_dir(&self, flag: Option<&Path>) -> Option<PathBuf> {
        if let Some(f) = flag {
            return Some(f.to_path_buf());
        }
        if let Some(v) = std::env::var_os(CACHE_ENV) {
            if !v.is_empty() {
                return Some(PathBuf::from(v));
            }
        }
        self.io.cache.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1

[density]
kind = "constant-p-norm"
dim = 2
p = 2.0

[cell]
X = [[1.0, 0.0, 0.0, 1.0]]
k = [1, 2]
res = 4
"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = Config::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.cell.x, vec![Mat::identity(2)]);
        assert_eq!(cfg.solve, SolveOptions::default());
        assert!(!cfg.symmetrized());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("res = 4", "res = 4\nresolution = 8");
        assert!(matches!(Config::from_toml(&text), Err(Error::Config(_))));
        let text = MINIMAL.replace("p = 2.0", "p = 2.0\nflavour = 1");
        assert!(Config::from_toml(&text).is_err());
    }

    #[test]
    fn schema_version_is_checked() {
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(Config::from_toml(&text).is_err());
    }

    #[test]
    fn mismatched_dims_are_rejected() {
        let text = MINIMAL.replace("[[1.0, 0.0, 0.0, 1.0]]", "[[1.0]]");
        assert!(Config::from_toml(&text).is_err());
    }

    #[test]
    fn hash_is_stable() {
        let a = Config::from_toml(MINIMAL).unwrap();
        let b = Config::from_toml(&format!("{MINIMAL}\n")).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed = 9;
        assert_ne!(a.hash(), c.hash());
    }
}
