//! Run configuration and reproducibility manifests.
//!
//! A run is one JSON config (every field optional, unknown keys rejected)
//! plus command-line overrides. Overrides are dotted paths applied to the
//! JSON tree before it is deserialized, so precedence is
//! CLI > file > defaults and every override is validated like a file value.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::alignment::AlignmentConfig;
use crate::diagnostics::BenchConfig;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::metrics::ReportParams;
use crate::optimize::OptimizeConfig;
use crate::zernike::ZernikeBasis;

/// Environment variable holding the worker count.
pub const THREADS_ENV: &str = "ZMATCH_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisConfig {
    pub n_max: usize,
    pub l_max: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            n_max: 20,
            l_max: 10,
        }
    }
}

impl BasisConfig {
    pub fn build(&self) -> Result<ZernikeBasis> {
        ZernikeBasis::new(self.n_max, self.l_max)
    }
}

/// Fixture parameters for `gen`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    /// Points of the sphere's Fibonacci shell.
    pub n_shell: usize,
    /// Point count of the other shapes.
    pub n: usize,
    pub semi_axes: [f64; 3],
    pub elongation: f64,
    pub bend_radius: f64,
    pub crescent_variant: crate::fixtures::CrescentVariant,
    pub n_rings: usize,
    pub n_phi: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_shell: 250,
            n: 1000,
            semi_axes: [1.0, 1.0, 2.0],
            elongation: 3.0,
            bend_radius: 2.0,
            crescent_variant: Default::default(),
            n_rings: 16,
            n_phi: 64,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("gen: {m}")));
        if self.n_shell == 0 || self.n == 0 || self.n_rings == 0 || self.n_phi == 0 {
            return bad("counts must be positive");
        }
        if !self.semi_axes.iter().all(|&a| a > 0.0 && a.is_finite()) {
            return bad("semi_axes must be positive");
        }
        if !(self.elongation > 0.0 && self.bend_radius > 0.0) {
            return bad("elongation and bend_radius must be positive");
        }
        Ok(())
    }
}

/// Parameters of the Hessian and gimbal-lock probes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseConfig {
    pub basis: BasisConfig,
    /// Seeds of the sphere study; the reported ratio is their median.
    pub seeds: Vec<u64>,
    pub n_shell: usize,
    pub elongation: f64,
    pub noise_sigma: f64,
    pub n_phis: Vec<usize>,
    pub n_rings: usize,
    pub ring_elongation: f64,
    /// Bunny size for the gimbal-lock runs.
    pub gimbal_points: usize,
    pub path_steps: usize,
    pub alignment: AlignmentConfig,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            basis: BasisConfig {
                n_max: 10,
                l_max: 8,
            },
            seeds: vec![1, 2, 3],
            n_shell: 250,
            elongation: 1.1,
            noise_sigma: 0.05,
            n_phis: vec![32, 64, 128, 256],
            n_rings: 16,
            ring_elongation: 2.0,
            gimbal_points: 2000,
            path_steps: 21,
            alignment: AlignmentConfig::default(),
        }
    }
}

impl DiagnoseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("diagnose: {m}")));
        self.basis.build()?;
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.n_shell == 0
            || self.n_rings == 0
            || self.gimbal_points == 0
            || self.n_phis.contains(&0)
        {
            return bad("counts must be positive");
        }
        if !(self.elongation > 0.0 && self.ring_elongation > 0.0) {
            return bad("elongations must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be nonnegative");
        }
        if self.path_steps < 2 {
            return bad("path_steps must be at least 2");
        }
        self.alignment.validate()
    }
}

/// Everything a command may read. The `alignment` record drives `align`;
/// `loss.alignment` drives the inner problem of `loss`, `grad-check` and
/// `optimize`.
///
/// `seed` is the only seed: [`RunConfig::resolve`] copies it into the
/// `seed` fields of the nested records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub basis: BasisConfig,
    pub gen: GenConfig,
    pub alignment: AlignmentConfig,
    pub loss: LossConfig,
    pub optimize: OptimizeConfig,
    pub metrics: ReportParams,
    pub diagnose: DiagnoseConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            basis: BasisConfig::default(),
            gen: GenConfig::default(),
            alignment: AlignmentConfig::default(),
            loss: LossConfig::default(),
            optimize: OptimizeConfig::default(),
            metrics: ReportParams::default(),
            diagnose: DiagnoseConfig::default(),
            bench: BenchConfig::default(),
        }
        .with_run_seed()
    }
}

impl RunConfig {
    fn with_run_seed(mut self) -> Self {
        self.loss.seed = self.seed;
        self.metrics.seed = self.seed;
        self.metrics.loss.seed = self.seed;
        self.bench.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.basis.build()?;
        self.gen.validate()?;
        self.alignment.validate()?;
        self.loss.validate()?;
        self.optimize.validate()?;
        self.metrics.validate()?;
        self.diagnose.validate()?;
        self.bench.validate()
    }

    /// Defaults, overlaid by `file` (if any), overlaid by `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut tree = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)?;
            let from_file: Value = serde_json::from_str(&text)?;
            // Deserializing alone catches unknown keys and bad types with a
            // precise message before the merge.
            serde_json::from_value::<RunConfig>(from_file.clone())
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
            merge(&mut tree, from_file);
        }
        for (key, value) in overrides {
            set_path(&mut tree, key, value.clone())?;
        }
        let cfg = serde_json::from_value::<RunConfig>(tree)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .with_run_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Parses `key.path=value`. The value is read as JSON when it parses and as
/// a plain string otherwise, so `seed=3`, `optimize.warm_start=fresh` and
/// `basis={"n_max":8,"l_max":4}` all work.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override '{s}' is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "override '{s}' has an empty key"
        )));
    }
    let value =
        serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    Ok((key.to_string(), value))
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = tree;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown config key '{key}'")))?;
    }
    merge(node, value);
    Ok(())
}

/// Input file identity recorded in a manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// What is needed to rerun a command and get the same outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    pub package: String,
    pub version: String,
    pub deterministic: bool,
    pub threads: usize,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(
        command: &str,
        argv: Vec<String>,
        config: &RunConfig,
        deterministic: bool,
        threads: usize,
    ) -> Self {
        Self {
            command: command.to_string(),
            argv,
            config_hash: config.hash(),
            seed: config.seed,
            config: config.clone(),
            package: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            deterministic,
            threads,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }
}

/// Worker count: 1 when deterministic, else `ZMATCH_THREADS`, else 0 (all cores).
pub fn worker_count(deterministic: bool) -> Result<usize> {
    if deterministic {
        return Ok(1);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| {
            Error::InvalidConfig(format!("{THREADS_ENV}='{v}' is not a worker count"))
        }),
        Err(_) => Ok(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(json: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        std::io::Write::write_all(&mut f, json.as_bytes()).unwrap();
        f
    }

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn cli_beats_file_beats_defaults() {
        let f = write(r#"{"seed": 4, "basis": {"l_max": 6}, "loss": {"lambda": 0.5}}"#);
        let over = vec![parse_override("seed=9").unwrap()];
        let cfg = RunConfig::resolve(Some(f.path()), &over).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!((cfg.loss.seed, cfg.metrics.seed, cfg.bench.seed), (9, 9, 9));
        assert_eq!(
            cfg.basis,
            BasisConfig {
                n_max: 20,
                l_max: 6
            }
        );
        assert_eq!(cfg.loss.lambda, 0.5);
        assert_eq!(
            cfg.loss.pinv_threshold,
            LossConfig::default().pinv_threshold
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = write(r#"{"loss": {"lamda": 0.5}}"#);
        assert!(matches!(
            RunConfig::resolve(Some(f.path()), &[]),
            Err(Error::InvalidConfig(_))
        ));
        let over = vec![parse_override("optimize.lr=1").unwrap()];
        assert!(matches!(
            RunConfig::resolve(None, &over),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn invalid_values_fail_at_load() {
        for o in [
            "basis.l_max=30",
            "alignment.learning_rate=-1",
            "loss.pinv_threshold=2",
            "gen.n=0",
        ] {
            let over = vec![parse_override(o).unwrap()];
            assert!(RunConfig::resolve(None, &over).is_err(), "{o}");
        }
    }

    #[test]
    fn string_overrides_fall_back_to_text() {
        let over = vec![parse_override("optimize.warm_start=fresh").unwrap()];
        let cfg = RunConfig::resolve(None, &over).unwrap();
        assert_eq!(cfg.optimize.warm_start, crate::optimize::WarmStart::Fresh);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig {
            seed: 2,
            ..a.clone()
        };
        assert_ne!(a.hash(), b.hash());
    }
}
