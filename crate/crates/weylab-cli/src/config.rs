//! Run configuration: JSON file -> defaults overlay -> flag overrides, with a
//! content hash over the normalized form so semantically equal configs (same
//! values, different spellings) land on the same hash.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use weylab::{Error, PhaseGrid, Result};

pub const GRID_MIN: usize = 64;
pub const GRID_MAX: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub n_x: usize,
    pub l_x: f64,
    /// Optional explicit frequency half-width; when present it must agree
    /// with the conjugate value n_x·π/(2·l_x) the quantization grid forces.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_xi: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { n_x: 256, l_x: 8.0, l_xi: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Kernel threshold relative to sigma_max in index counts.
    pub rank_tol: f64,
    /// Cap on the two-sided inversion residuals.
    pub residual_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rank_tol: 1e-8, residual_tol: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub grid: GridSpec,
    pub metric: String,
    pub weights: Vec<String>,
    pub tolerances: Tolerances,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Use the one-shot harmonic-mean estimate for the ball-subtracted
    /// distance probe instead of the projection iteration.
    pub fast_delta: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            grid: GridSpec::default(),
            metric: "shubin".into(),
            weights: vec!["one".into(), "bracket".into(), "bracket-sq".into()],
            tolerances: Tolerances::default(),
            seed: 42,
            out_dir: None,
            fast_delta: false,
        }
    }
}

/// Flag values that override whatever the file said.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub grid_n: Option<usize>,
    pub metric: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub fast_delta: bool,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config> {
        let Some(path) = path else { return Ok(Config::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        if text.trim().is_empty() {
            return Ok(Config::default());
        }
        // serde_json reports line/column in its Display output
        serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(n) = o.grid_n {
            self.grid.n_x = n;
        }
        if let Some(m) = &o.metric {
            self.metric = m.clone();
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.out {
            self.out_dir = Some(d.clone());
        }
        if o.fast_delta {
            self.fast_delta = true;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.n_x;
        if !n.is_power_of_two() || n < GRID_MIN || n > GRID_MAX {
            return Err(Error::config(format!(
                "grid.n_x must be a power of two in [{GRID_MIN}, {GRID_MAX}], got {n}"
            )));
        }
        if !(self.grid.l_x.is_finite() && self.grid.l_x > 0.0) {
            return Err(Error::config(format!("grid.l_x must be positive, got {}", self.grid.l_x)));
        }
        if let Some(l_xi) = self.grid.l_xi {
            let conj = self.conjugate_l_xi();
            if !(l_xi.is_finite() && (l_xi - conj).abs() <= 1e-9 * conj) {
                return Err(Error::config(format!(
                    "grid.l_xi = {l_xi} conflicts with the conjugate value {conj} forced by n_x and l_x"
                )));
            }
        }
        for (name, v) in
            [("rank_tol", self.tolerances.rank_tol), ("residual_tol", self.tolerances.residual_tol)]
        {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("tolerances.{name} must be positive, got {v}")));
            }
        }
        weylab::metric::metric_by_id(&self.metric)
            .map_err(|_| Error::config(format!("unknown metric id `{}`", self.metric)))?;
        if self.weights.is_empty() {
            return Err(Error::config("weights must not be empty"));
        }
        for w in &self.weights {
            weylab::metric::weight_by_id(w)
                .map_err(|_| Error::config(format!("unknown weight id `{w}`")))?;
        }
        Ok(())
    }

    fn conjugate_l_xi(&self) -> f64 {
        self.grid.n_x as f64 * std::f64::consts::PI / (2.0 * self.grid.l_x)
    }

    pub fn grid(&self) -> Result<PhaseGrid> {
        PhaseGrid::quantization(self.grid.n_x, self.grid.l_x)
    }

    /// Canonical form: a redundant `l_xi` collapses to absent, and the output
    /// directory is dropped — where the reports land does not change them.
    pub fn normalized(&self) -> Config {
        let mut c = self.clone();
        c.grid.l_xi = None;
        c.out_dir = None;
        c
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.normalized()).expect("config serializes");
        let mut h = Sha256::new();
        h.update(&bytes);
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn empty_file_yields_defaults() {
        let f = write_tmp("  \n");
        let c = Config::load(Some(f.path())).unwrap();
        assert_eq!(c, Config::default());
    }

    #[test]
    fn missing_keys_fill_from_defaults() {
        let f = write_tmp(r#"{"seed": 7, "grid": {"n_x": 128}}"#);
        let c = Config::load(Some(f.path())).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.grid.n_x, 128);
        assert_eq!(c.grid.l_x, 8.0);
        assert_eq!(c.metric, "shubin");
    }

    #[test]
    fn unknown_keys_rejected() {
        let f = write_tmp(r#"{"sed": 7}"#);
        let e = Config::load(Some(f.path())).unwrap_err();
        assert!(e.to_string().contains("sed"), "{e}");
    }

    #[test]
    fn parse_error_carries_line_info() {
        let f = write_tmp("{\n  \"seed\": oops\n}");
        let e = Config::load(Some(f.path())).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }

    #[test]
    fn non_power_of_two_grid_rejected() {
        let mut c = Config::default();
        c.grid.n_x = 100;
        assert!(c.validate().is_err());
        c.grid.n_x = 32;
        assert!(c.validate().is_err());
        c.grid.n_x = 4096;
        assert!(c.validate().is_err());
        c.grid.n_x = 2048;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn explicit_conjugate_l_xi_accepted_and_normalized_away() {
        let mut c = Config::default();
        let conj = 256.0 * std::f64::consts::PI / 16.0;
        c.grid.l_xi = Some(conj);
        c.validate().unwrap();
        assert_eq!(c.hash(), Config::default().hash());
        c.grid.l_xi = Some(conj * 1.5);
        assert!(c.validate().is_err());
    }

    #[test]
    fn round_trip_serialization_is_normal_form() {
        let f = write_tmp(r#"{"grid": {"n_x": 256, "l_x": 8.0}, "seed": 42}"#);
        let loaded = Config::load(Some(f.path())).unwrap();
        let text = serde_json::to_string(&loaded).unwrap();
        let again: Config = serde_json::from_str(&text).unwrap();
        assert_eq!(again, loaded);
        assert_eq!(again.normalized(), Config::default().normalized());
    }

    #[test]
    fn hash_ignores_out_dir() {
        let mut c = Config::default();
        c.out_dir = Some(PathBuf::from("/tmp/somewhere"));
        assert_eq!(c.hash(), Config::default().hash());
        c.seed = 43;
        assert_ne!(c.hash(), Config::default().hash());
    }

    #[test]
    fn overrides_take_precedence() {
        let mut c = Config::default();
        let o = Overrides {
            grid_n: Some(512),
            metric: Some("euclidean".into()),
            seed: Some(9),
            out: Some(PathBuf::from("x")),
            fast_delta: true,
        };
        c.apply(&o);
        assert_eq!(c.grid.n_x, 512);
        assert_eq!(c.metric, "euclidean");
        assert_eq!(c.seed, 9);
        assert!(c.fast_delta);
    }

    #[test]
    fn unknown_metric_or_weight_rejected() {
        let mut c = Config::default();
        c.metric = "nope".into();
        assert!(c.validate().is_err());
        c = Config::default();
        c.weights = vec!["nope".into()];
        assert!(c.validate().is_err());
        c.weights = vec![];
        assert!(c.validate().is_err());
    }
}
