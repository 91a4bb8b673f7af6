//! Run configuration: a TOML file with defaults, validation and two
//! environment overrides.
//!
//! ```toml
//! lambda = [-0.8309]
//! y = [0.5, 0.5]
//!
//! [operator]
//! path = "mathieu.toml"
//!
//! [gap]
//! index = 1
//! side = "lower"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bands::GapSide;
use crate::error::{Error, Result};
use crate::operator::{OperatorSpec, PeriodicOperator};

pub const SCHEMA_VERSION: u32 = 1;

/// Overrides the output directory.
pub const ENV_OUTPUT_DIR: &str = "GAPGREEN_OUTPUT_DIR";
/// Overrides the worker count.
pub const ENV_THREADS: &str = "GAPGREEN_THREADS";

/// Where the operator comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OperatorSource {
    /// Operator file, relative to the config file.
    Path { path: PathBuf },
    /// Built-in family.
    Preset(Preset),
    Inline(OperatorSpec),
}

/// Built-in operators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "lowercase", deny_unknown_fields)]
pub enum Preset {
    /// `−Δ`.
    Free { dimension: usize },
    /// `−Δ + 2q Σ_p cos 2πx_p`.
    Mathieu { dimension: usize, q: f64 },
}

/// Which edge to study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GapSelection {
    /// `"bottom"`: the bottom of the spectrum.
    Named(String),
    /// Gap `index` (1-based, in order of energy) and which side of it.
    Gap { index: usize, side: GapSide },
}

impl Default for GapSelection {
    fn default() -> Self {
        GapSelection::Gap { index: 1, side: GapSide::Lower }
    }
}

/// A count of equally spaced directions or an explicit list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Directions {
    Count(usize),
    List(Vec<Vec<f64>>),
}

impl Directions {
    /// Unit vectors; a count means equally spaced angles from `e_1` in
    /// `d = 2` and `±1` in `d = 1`.
    pub fn resolve(&self, d: usize) -> Result<Vec<Vec<f64>>> {
        match self {
            Directions::Count(n) => match d {
                1 => Ok([1.0, -1.0].iter().take(*n).map(|&s| vec![s]).collect()),
                2 => Ok((0..*n)
                    .map(|j| {
                        let t = 2.0 * std::f64::consts::PI * j as f64 / *n as f64;
                        vec![t.cos(), t.sin()]
                    })
                    .collect()),
                _ => Err(Error::Config(format!("a direction count needs d ≤ 2; list directions explicitly for d = {d}"))),
            },
            Directions::List(v) => v
                .iter()
                .map(|s| {
                    if s.len() != d {
                        return Err(Error::Config(format!("direction {s:?} is not {d}-dimensional")));
                    }
                    let n = s.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if !(n > 0.0) {
                        return Err(Error::Config(format!("direction {s:?} has zero length")));
                    }
                    Ok(s.iter().map(|x| x / n).collect())
                })
                .collect(),
        }
    }
}

/// Directions sharing one list of radii.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGroup {
    pub directions: Directions,
    pub r_list: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub tol_real: f64,
    pub tol_gauss: f64,
    pub tol_quad: f64,
    pub tol_f: f64,
    pub tol_sym: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { tol_real: 1e-8, tol_gauss: 1e-11, tol_quad: 1e-6, tol_f: 1e-8, tol_sym: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// `0` uses the edge cutoff.
    pub cutoff: usize,
    /// `0` picks the grid from the largest radius.
    pub grid: usize,
    pub max_doublings: usize,
    pub window_width: f64,
    /// Contour shift fraction for the consistency check.
    pub shift_fraction: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { cutoff: 0, grid: 0, max_doublings: 2, window_width: 0.08, shift_fraction: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsymptoticsConfig {
    /// `0` chooses the patch radius adaptively.
    pub eta_radius: f64,
    pub nodes: usize,
    pub weierstrass_radii: Vec<f64>,
    pub epsilon: f64,
}

impl Default for AsymptoticsConfig {
    fn default() -> Self {
        Self { eta_radius: 0.0, nodes: 64, weierstrass_radii: vec![1e-2, 5e-3, 2.5e-3], epsilon: 0.25 }
    }
}

/// Full run description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    /// `0` picks the cutoff automatically.
    #[serde(default)]
    pub cutoff: usize,
    #[serde(default = "band_resolution")]
    pub band_resolution: usize,
    #[serde(default = "n_bands")]
    pub n_bands: usize,
    #[serde(default)]
    pub gap: GapSelection,
    /// Working energies `σ(λ − e)`, all negative.
    #[serde(default)]
    pub lambda: Vec<f64>,
    /// Alternative to `lambda`: fractions `f` giving `λ = −f·(gap width)`.
    #[serde(default)]
    pub lambda_gap_fraction: Vec<f64>,
    /// Directions for support points and asymptotics.
    #[serde(default = "directions")]
    pub directions: Directions,
    /// Directions for the oracle sweeps.
    #[serde(default = "sweep_directions")]
    pub sweep_directions: Directions,
    #[serde(default = "r_list")]
    pub r_list: Vec<f64>,
    /// Oracle sweeps with their own radii; when given they replace
    /// `sweep_directions` × `r_list` for the oracle stage.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweeps: Vec<SweepGroup>,
    /// Source point of the sweeps.
    #[serde(default)]
    pub y: Vec<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub asymptotics: AsymptoticsConfig,
    #[serde(default = "output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "yes")]
    pub cache: bool,
    /// `0` uses all cores.
    #[serde(default)]
    pub threads: usize,
    pub operator: OperatorSource,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}
fn band_resolution() -> usize {
    17
}
fn n_bands() -> usize {
    4
}
fn directions() -> Directions {
    Directions::Count(64)
}
fn sweep_directions() -> Directions {
    Directions::Count(8)
}
fn r_list() -> Vec<f64> {
    vec![10.0, 20.0, 40.0]
}
fn output_dir() -> PathBuf {
    PathBuf::from("gapgreen-out")
}
fn yes() -> bool {
    true
}

/// Parses and validates a config.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Reads a config file and resolves a relative operator path against
    /// its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = parse_config(&text)?;
        if let OperatorSource::Path { path: p } = &mut cfg.operator {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Checks every field that can be checked without running anything.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        let t = &self.tolerances;
        for (name, v) in [("tol_real", t.tol_real), ("tol_gauss", t.tol_gauss), ("tol_quad", t.tol_quad), ("tol_f", t.tol_f), ("tol_sym", t.tol_sym)] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("tol_* must be positive: {name} = {v}")));
            }
        }
        if self.band_resolution < 3 {
            return Err(Error::Config("band_resolution must be at least 3".into()));
        }
        if self.n_bands == 0 {
            return Err(Error::Config("n_bands must be positive".into()));
        }
        match (&self.lambda.is_empty(), &self.lambda_gap_fraction.is_empty()) {
            (true, true) => return Err(Error::Config("give lambda or lambda_gap_fraction".into())),
            (false, false) => return Err(Error::Config("lambda and lambda_gap_fraction are exclusive".into())),
            _ => {}
        }
        if let Some(l) = self.lambda.iter().find(|l| !(**l < 0.0)) {
            return Err(Error::Config(format!("lambda must be negative relative to the edge, got {l}")));
        }
        if let Some(f) = self.lambda_gap_fraction.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
            return Err(Error::Config(format!("lambda_gap_fraction must lie in (0, 1), got {f}")));
        }
        if let GapSelection::Named(n) = &self.gap {
            if n != "bottom" {
                return Err(Error::Config(format!("gap must be \"bottom\" or {{ index, side }}, got \"{n}\"")));
            }
            if !self.lambda_gap_fraction.is_empty() {
                return Err(Error::Config("lambda_gap_fraction needs a gap, not the bottom of the spectrum".into()));
            }
        }
        if let GapSelection::Gap { index: 0, .. } = self.gap {
            return Err(Error::Config("gap index is 1-based".into()));
        }
        for (name, d) in [("directions", &self.directions), ("sweep_directions", &self.sweep_directions)] {
            if let Directions::Count(0) = d {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for list in std::iter::once(&self.r_list).chain(self.sweeps.iter().map(|g| &g.r_list)) {
            if let Some(r) = list.iter().find(|r| !(**r > 0.0)) {
                return Err(Error::Config(format!("r_list entries must be positive, got {r}")));
            }
        }
        if self.sweeps.iter().any(|g| g.r_list.is_empty() || g.directions == Directions::Count(0)) {
            return Err(Error::Config("sweeps need directions and a nonempty r_list".into()));
        }
        let a = &self.asymptotics;
        if a.nodes < 4 || a.eta_radius < 0.0 || a.weierstrass_radii.iter().any(|r| !(*r > 0.0)) || !(a.epsilon > 0.0) {
            return Err(Error::Config("asymptotics: nodes ≥ 4, eta_radius ≥ 0, radii and epsilon positive".into()));
        }
        if !(self.oracle.window_width > 0.0) || !(self.oracle.shift_fraction > 0.0 && self.oracle.shift_fraction <= 1.0) {
            return Err(Error::Config("oracle: window_width positive and shift_fraction in (0, 1]".into()));
        }
        Ok(())
    }

    /// Applies `GAPGREEN_OUTPUT_DIR` and `GAPGREEN_THREADS` through `get`.
    pub fn apply_overrides<F: Fn(&str) -> Option<String>>(&mut self, get: F) -> Result<()> {
        if let Some(dir) = get(ENV_OUTPUT_DIR) {
            self.output_dir = PathBuf::from(dir);
        }
        if let Some(n) = get(ENV_THREADS) {
            self.threads = n.trim().parse().map_err(|_| Error::Config(format!("{ENV_THREADS} = {n:?} is not a count")))?;
        }
        Ok(())
    }

    /// Applies overrides from the process environment.
    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_overrides(|k| std::env::var(k).ok())
    }

    /// Oracle sweep groups: `sweeps`, or `sweep_directions` with `r_list`.
    pub fn sweep_groups(&self, d: usize) -> Result<Vec<(Vec<Vec<f64>>, Vec<f64>)>> {
        if self.sweeps.is_empty() {
            return Ok(vec![(self.sweep_directions.resolve(d)?, self.r_list.clone())]);
        }
        self.sweeps.iter().map(|g| Ok((g.directions.resolve(d)?, g.r_list.clone()))).collect()
    }

    /// Builds the operator.
    pub fn build_operator(&self) -> Result<PeriodicOperator> {
        match &self.operator {
            OperatorSource::Path { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("operator file {}: {e}", path.display())))?;
                PeriodicOperator::from_toml(&text)
            }
            OperatorSource::Preset(Preset::Free { dimension }) => Ok(PeriodicOperator::free(*dimension)),
            OperatorSource::Preset(Preset::Mathieu { dimension, q }) => Ok(PeriodicOperator::separable_mathieu(*dimension, *q)),
            OperatorSource::Inline(spec) => PeriodicOperator::from_spec(spec),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "lambda = [-0.25]\n[operator]\npath = \"op.toml\"\n";

    #[test]
    fn minimal_config_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.cutoff, 0);
        assert_eq!(c.directions, Directions::Count(64));
        assert_eq!(c.r_list, vec![10.0, 20.0, 40.0]);
        assert_eq!(c.tolerances, Tolerances::default());
        assert_eq!(c.directions.resolve(2).unwrap().len(), 64);
    }

    #[test]
    fn rejects_zero_tolerance_and_unknown_key() {
        let e = parse_config(&format!("{MINIMAL}[tolerances]\ntol_quad = 0.0\n")).unwrap_err().to_string();
        assert!(e.contains("tol_* must be positive"), "{e}");
        let e = parse_config(&format!("foo = 1\n{MINIMAL}")).unwrap_err().to_string();
        assert!(e.contains("foo"), "{e}");
    }

    #[test]
    fn presets_and_inline() {
        let c = parse_config("lambda = [-1.0]\n[operator]\npreset = \"mathieu\"\ndimension = 2\nq = 5.0\n").unwrap();
        assert_eq!(c.operator, OperatorSource::Preset(Preset::Mathieu { dimension: 2, q: 5.0 }));
        let c = parse_config("lambda = [-1.0]\n[operator]\ndimension = 1\n[[operator.metric]]\nindex = [0]\nmatrix = [[1.0]]\n[[operator.potential]]\nindex = [1]\nvalue = 2.0\n[[operator.potential]]\nindex = [-1]\nvalue = 2.0\n").unwrap();
        assert_eq!(c.build_operator().unwrap().dim(), 1);
    }

    #[test]
    fn env_overrides() {
        let mut c = parse_config(MINIMAL).unwrap();
        c.apply_overrides(|k| match k {
            ENV_OUTPUT_DIR => Some("/tmp/x".into()),
            ENV_THREADS => Some("3".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.output_dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.threads, 3);
        assert!(c.apply_overrides(|_| Some("many".into())).is_err());
    }
}
