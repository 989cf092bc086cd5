//! The experiment configuration document and the compact spellings used for
//! targets, schedule families and probe sets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use flowreg::regularity::ProbeSpec;
use flowreg::{Schedule, TargetModel};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Validate,
    Regularity,
    Converge,
    Transport,
    Sphere,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Validate => "validate",
            Experiment::Regularity => "regularity",
            Experiment::Converge => "converge",
            Experiment::Transport => "transport",
            Experiment::Sphere => "sphere",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauRule {
    Paper,
    Explicit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ode,
    Sde,
}

/// One serialized experiment input. Every key has a default so a config
/// file only needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub family: String,
    pub target: String,
    pub dims: Vec<usize>,
    pub steps_list: Vec<usize>,
    pub tau_rule: TauRule,
    pub probes: String,
    pub seed: u64,
    pub output: PathBuf,
    pub mode: Mode,
    /// number of geometric steps of the profile time grid
    pub t_refine: usize,
    /// sphere times; empty means `t = 1 - 2^-j`, `j = 3..=12`
    pub t_grid: Vec<f64>,
    /// initial points of the transport experiment
    pub starts: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            family: "lipman-linear".into(),
            target: "gaussian:s=2".into(),
            dims: vec![1],
            steps_list: (3..=10).map(|k| 1 << k).collect(),
            tau_rule: TauRule::Paper,
            probes: "axis:radius=4,count=401".into(),
            seed: 0,
            output: PathBuf::from("out"),
            mode: Mode::Ode,
            t_refine: 2000,
            t_grid: Vec::new(),
            starts: 100,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn check(&self) -> Result<(), CliError> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(CliError::config("dims must be a non-empty list of positive integers"));
        }
        if self.steps_list.is_empty() || self.steps_list.iter().any(|&n| n < 3) {
            return Err(CliError::config("steps_list entries must be at least 3"));
        }
        if let TauRule::Explicit(tau) = self.tau_rule {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(CliError::config(format!("explicit tau must lie in (0,1), got {tau}")));
            }
        }
        if self.t_refine == 0 || self.starts == 0 {
            return Err(CliError::config("t_refine and starts must be positive"));
        }
        if self.t_grid.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(CliError::config("t_grid entries must lie in (0,1)"));
        }
        family(&self.family)?;
        probes(&self.probes, self.seed)?;
        for &d in &self.dims {
            target(&self.target, d)?;
        }
        Ok(())
    }
}

/// `name` or `name:key=value,key=value`.
fn split_spec(s: &str) -> Result<(&str, BTreeMap<&str, f64>), CliError> {
    let (name, rest) = s.split_once(':').unwrap_or((s, ""));
    let mut keys = BTreeMap::new();
    for kv in rest.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::config(format!("expected key=value in {s:?}, got {kv:?}")))?;
        let v: f64 = v.trim().parse().map_err(|_| CliError::config(format!("not a number in {s:?}: {v:?}")))?;
        keys.insert(k.trim(), v);
    }
    Ok((name.trim(), keys))
}

fn take(keys: &mut BTreeMap<&str, f64>, k: &str, default: f64) -> f64 {
    keys.remove(k).unwrap_or(default)
}

fn no_leftovers(spec: &str, keys: BTreeMap<&str, f64>) -> Result<(), CliError> {
    match keys.keys().next() {
        Some(k) => Err(CliError::config(format!("unknown key {k:?} in {spec:?}"))),
        None => Ok(()),
    }
}

fn count(spec: &str, v: f64) -> Result<usize, CliError> {
    if v >= 1.0 && v.fract() == 0.0 && v < 1e9 {
        Ok(v as usize)
    } else {
        Err(CliError::config(format!("expected a positive integer in {spec:?}, got {v}")))
    }
}

/// Schedule families: `lipman-linear`, `lipman-custom:p=0.5`,
/// `interpolant:delta=0.5,eta=1`, `diffusion`.
pub fn family(spec: &str) -> Result<Schedule, CliError> {
    let (name, mut keys) = split_spec(spec)?;
    let s = match name {
        "lipman-linear" => Schedule::lipman_linear(),
        "lipman-custom" => Schedule::lipman_power(take(&mut keys, "p", 1.0))?,
        "interpolant" => {
            let delta = take(&mut keys, "delta", 0.5);
            let eta = take(&mut keys, "eta", 1.0);
            Schedule::stochastic_interpolant(delta, eta)?
        }
        "diffusion" => Schedule::rescaled_diffusion(),
        _ => return Err(CliError::config(format!("unknown family {name:?}"))),
    };
    no_leftovers(spec, keys)?;
    Ok(s)
}

/// Targets in dimension `d`: `gaussian:s=2`, `mixture:sep=1,var=0.25,w=0.5`
/// (two components at `±sep·e₁`), `holder:k=1` (1-D only), `sphere`.
pub fn target(spec: &str, d: usize) -> Result<TargetModel, CliError> {
    let (name, mut keys) = split_spec(spec)?;
    let t = match name {
        "gaussian" => TargetModel::centered_gaussian(d, take(&mut keys, "s", 1.0))?,
        "mixture" => {
            let sep = take(&mut keys, "sep", 1.0);
            let var = take(&mut keys, "var", 0.25);
            let w = take(&mut keys, "w", 0.5);
            let mut plus = vec![0.0; d];
            plus[0] = sep;
            let minus = plus.iter().map(|v| -v).collect();
            TargetModel::mixture(vec![w, 1.0 - w], vec![minus, plus], var)?
        }
        "holder" => {
            if d != 1 {
                return Err(CliError::config("the holder target is one-dimensional"));
            }
            TargetModel::holder_half(take(&mut keys, "k", 1.0))?
        }
        "sphere" => TargetModel::sphere(d)?,
        _ => return Err(CliError::config(format!("unknown target {name:?}"))),
    };
    no_leftovers(spec, keys)?;
    Ok(t)
}

/// Probe sets: `axis:radius=4,count=401`, `lattice:radius=2,count=11`,
/// `samples:n=64` (drawn with the run seed).
pub fn probes(spec: &str, seed: u64) -> Result<ProbeSpec, CliError> {
    let (name, mut keys) = split_spec(spec)?;
    let p = match name {
        "axis" => {
            let radius = take(&mut keys, "radius", 4.0);
            ProbeSpec::Axis1D { radius, count: count(spec, take(&mut keys, "count", 401.0))? }
        }
        "lattice" => {
            let radius = take(&mut keys, "radius", 2.0);
            ProbeSpec::LatticeBox { radius, count: count(spec, take(&mut keys, "count", 11.0))? }
        }
        "samples" => ProbeSpec::TargetSamples { n: count(spec, take(&mut keys, "n", 64.0))?, seed },
        _ => return Err(CliError::config(format!("unknown probe set {name:?}"))),
    };
    no_leftovers(spec, keys)?;
    Ok(p)
}

/// Comma-separated integers, or a doubling range `lo..hi`.
pub fn int_list(s: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::config(format!("cannot parse integer list {s:?}"));
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        if lo == 0 || hi < lo {
            return Err(bad());
        }
        return Ok(std::iter::successors(Some(lo), |&n| n.checked_mul(2)).take_while(|&n| n <= hi).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

pub fn float_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',').map(|p| p.trim().parse().map_err(|_| CliError::config(format!("cannot parse number list {s:?}")))).collect()
}
