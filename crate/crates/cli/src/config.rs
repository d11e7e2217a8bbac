//! Experiment configuration: one structured text file (TOML, or JSON as an
//! alternative encoding) validated before any computation runs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use bose2d_core::classical::SamplingPlan;
use bose2d_core::compare::{SweepSpec, VerdictSettings};
use bose2d_core::gibbs::TruncationSettings;
use bose2d_core::model::{LambdaRule, ModeSet, Potential};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<String>,
    pub modes: ModesConfig,
    pub potential: PotentialConfig,
    pub schedule: ScheduleConfig,
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub truncation: TruncationConfig,
    #[serde(default)]
    pub comparison: ComparisonConfig,
    #[serde(default)]
    pub verdict: VerdictConfig,
    #[serde(default)]
    pub wick: Option<WickConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesConfig {
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub pairs: Option<Vec<(i32, i32)>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub family: String,
    #[serde(default)]
    pub w0: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub entries: Option<Vec<(i32, i32, f64)>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kappa: f64,
    pub temperatures: Vec<f64>,
    #[serde(default)]
    pub lambda_rule: Option<String>,
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub samples: usize,
    pub streams: u32,
    #[serde(default)]
    pub dump_ensemble: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruncationConfig {
    pub epsilon_z: f64,
    pub epsilon_tail: f64,
    pub max_sector_dim: usize,
    pub max_rounds: u32,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        let d = TruncationSettings::default();
        TruncationConfig {
            epsilon_z: d.epsilon_z,
            epsilon_tail: d.epsilon_tail,
            max_sector_dim: d.max_sector_dim,
            max_rounds: d.max_rounds,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComparisonConfig {
    pub k_list: Vec<u32>,
    pub p_list: Vec<f64>,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig { k_list: vec![1], p_list: vec![2.0] }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct VerdictConfig {
    pub z_crit: Option<f64>,
    pub tolerances: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WickConfig {
    pub radii: Vec<f64>,
    pub samples: usize,
    #[serde(default)]
    pub streams: Option<u32>,
}

/// Raw config bytes plus the parsed structure; the bytes feed the output
/// header hash so artifacts are traceable to their exact input.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub raw: Vec<u8>,
    pub config: ExperimentConfig,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let raw = std::fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&raw)
        .map_err(|e| CliError::Config(format!("{} is not UTF-8: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json")
        || text.trim_start().starts_with('{');
    let config: ExperimentConfig = if is_json {
        serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    };
    Ok(LoadedConfig { raw, config })
}

/// Everything the pipeline stages need, in core types.
#[derive(Debug, Clone)]
pub struct BuiltConfig {
    pub modes: ModeSet,
    pub potential: Potential,
    pub kappa: f64,
    pub temperatures: Vec<f64>,
    pub lambda_rule: LambdaRule,
    pub sampling: SamplingPlan,
    pub dump_ensemble: bool,
    pub truncation: TruncationSettings,
    pub k_list: Vec<u32>,
    pub p_list: Vec<f64>,
    pub verdict: VerdictSettings,
    pub wick: Option<WickConfig>,
    pub out_dir: Option<String>,
}

pub fn build(config: &ExperimentConfig) -> Result<BuiltConfig, CliError> {
    let modes = build_modes(&config.modes)?;
    let potential = build_potential(&config.potential, &modes)?;
    potential
        .covers(&modes)
        .map_err(|e| CliError::Config(format!("potential: {e}")))?;

    let sched = &config.schedule;
    if sched.kappa <= 0.0 || !sched.kappa.is_finite() {
        return Err(CliError::Config(format!(
            "schedule.kappa = {} must be finite and > 0",
            sched.kappa
        )));
    }
    if sched.temperatures.is_empty() {
        return Err(CliError::Config("schedule.temperatures must be non-empty".into()));
    }
    for (i, &t) in sched.temperatures.iter().enumerate() {
        if t <= 0.0 || !t.is_finite() {
            return Err(CliError::Config(format!(
                "schedule.temperatures[{i}] = {t} must be finite and > 0"
            )));
        }
    }
    let lambda_rule = match (&sched.lambda_rule, &sched.lambdas) {
        (Some(rule), None) if rule == "inverse-t" => LambdaRule::InverseT,
        (Some(rule), None) => {
            return Err(CliError::Config(format!(
                "schedule.lambda_rule = {rule:?} (expected \"inverse-t\" or explicit lambdas)"
            )))
        }
        (None, Some(ls)) => {
            if ls.len() != sched.temperatures.len() {
                return Err(CliError::Config(format!(
                    "schedule.lambdas has {} entries for {} temperatures",
                    ls.len(),
                    sched.temperatures.len()
                )));
            }
            LambdaRule::Explicit(ls.clone())
        }
        (None, None) => LambdaRule::InverseT,
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "give either schedule.lambda_rule or schedule.lambdas, not both".into(),
            ))
        }
    };

    if config.sampling.samples == 0 {
        return Err(CliError::Config("sampling.samples must be > 0".into()));
    }
    if config.sampling.streams == 0 {
        return Err(CliError::Config("sampling.streams must be > 0".into()));
    }
    let sampling = SamplingPlan {
        master_seed: config.seed,
        streams: config.sampling.streams,
        samples: config.sampling.samples,
    };

    let t = &config.truncation;
    if t.epsilon_z <= 0.0 || t.epsilon_tail <= 0.0 {
        return Err(CliError::Config(
            "truncation.epsilon_z and epsilon_tail must be > 0".into(),
        ));
    }
    let truncation = TruncationSettings {
        epsilon_z: t.epsilon_z,
        epsilon_tail: t.epsilon_tail,
        max_sector_dim: t.max_sector_dim,
        max_rounds: t.max_rounds,
    };

    for &k in &config.comparison.k_list {
        if k == 0 || k > 4 {
            return Err(CliError::Config(format!(
                "comparison.k_list entry {k} outside the supported range 1..=4"
            )));
        }
    }
    for &p in &config.comparison.p_list {
        if !(p >= 1.0) {
            return Err(CliError::Config(format!(
                "comparison.p_list entry {p} must be >= 1"
            )));
        }
    }

    let mut verdict = VerdictSettings::default();
    if let Some(z) = config.verdict.z_crit {
        if !(z > 0.0) {
            return Err(CliError::Config(format!("verdict.z_crit = {z} must be > 0")));
        }
        verdict.z_crit = z;
    }
    verdict.tolerances = config.verdict.tolerances.clone();

    if let Some(w) = &config.wick {
        if w.radii.is_empty() {
            return Err(CliError::Config("wick.radii must be non-empty".into()));
        }
        for pair in w.radii.windows(2) {
            if pair[1] < pair[0] {
                return Err(CliError::Config(format!(
                    "wick.radii must be non-decreasing, got {} after {}",
                    pair[1], pair[0]
                )));
            }
        }
        if w.samples == 0 {
            return Err(CliError::Config("wick.samples must be > 0".into()));
        }
    }

    Ok(BuiltConfig {
        modes,
        potential,
        kappa: sched.kappa,
        temperatures: sched.temperatures.clone(),
        lambda_rule,
        sampling,
        dump_ensemble: config.sampling.dump_ensemble,
        truncation,
        k_list: config.comparison.k_list.clone(),
        p_list: config.comparison.p_list.clone(),
        verdict,
        wick: config.wick.clone(),
        out_dir: config.out_dir.clone(),
    })
}

fn build_modes(cfg: &ModesConfig) -> Result<ModeSet, CliError> {
    match (&cfg.radius, &cfg.pairs) {
        (Some(r), None) => {
            ModeSet::ball(*r).map_err(|e| CliError::Config(format!("modes.radius: {e}")))
        }
        (None, Some(pairs)) => ModeSet::from_pairs(pairs.iter().copied())
            .map_err(|e| CliError::Config(format!("modes.pairs: {e}"))),
        (Some(_), Some(_)) => {
            Err(CliError::Config("give either modes.radius or modes.pairs, not both".into()))
        }
        (None, None) => Err(CliError::Config("modes needs a radius or explicit pairs".into())),
    }
}

fn build_potential(cfg: &PotentialConfig, modes: &ModeSet) -> Result<Potential, CliError> {
    let result = match cfg.family.as_str() {
        "zero" => Ok(Potential::zero(modes)),
        "constant" => {
            let w0 = cfg.w0.ok_or_else(|| {
                CliError::Config("potential.w0 is required for the constant family".into())
            })?;
            Potential::constant(w0, modes)
        }
        "gaussian" => {
            let w0 = cfg.w0.ok_or_else(|| {
                CliError::Config("potential.w0 is required for the gaussian family".into())
            })?;
            let alpha = cfg.alpha.ok_or_else(|| {
                CliError::Config("potential.alpha is required for the gaussian family".into())
            })?;
            Potential::gaussian(w0, alpha, modes)
        }
        "table" => {
            let entries = cfg.entries.as_ref().ok_or_else(|| {
                CliError::Config("potential.entries is required for the table family".into())
            })?;
            Potential::from_table(entries.iter().map(|&(a, b, v)| ((a, b), v)))
        }
        other => {
            return Err(CliError::Config(format!(
                "potential.family = {other:?} (expected zero | constant | gaussian | table)"
            )))
        }
    };
    result.map_err(|e| CliError::Config(format!("potential: {e}")))
}

/// Re-derive the configured potential family over a different mode set
/// (the wick check works on its own cutoff ball).
pub fn rebuild_potential(cfg: &PotentialConfig, modes: &ModeSet) -> Result<Potential, CliError> {
    build_potential(cfg, modes)
}

/// Build the sweep spec, given a built config.
pub fn sweep_spec(built: &BuiltConfig) -> SweepSpec {
    SweepSpec {
        modes: built.modes.clone(),
        potential: built.potential.clone(),
        kappa: built.kappa,
        temperatures: built.temperatures.clone(),
        lambda_rule: built.lambda_rule.clone(),
        sampling: built.sampling,
        truncation: built.truncation,
        k_list: built.k_list.clone(),
        p_list: built.p_list.clone(),
    }
}
