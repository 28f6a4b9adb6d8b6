//! Scenario configuration files (TOML) and the built-in named scenarios.
//!
//! Rates are cases per person-year, durations are years. A complete file:
//!
//! ```toml
//! design = "accf"            # ni | accf | conservative_accf | single_arm
//!
//! [spec]
//! gamma = 0.5                # preservation fraction under the null
//! gamma_alt = 1.36           # RAE under the alternative
//! alpha = 0.025
//! power = 0.8
//!
//! [scenario]                 # design-time rates
//! lambda_p = 0.03
//! lambda_a = 0.013636363636363636
//! allocation_e = 0.5         # optional, default 0.5
//! tau = 1.0                  # optional, default 1
//!
//! [truth]                    # optional; data-generating rates, default = scenario
//! lambda_p = 0.025
//! lambda_a = 0.013636363636363636
//!
//! [cf_model]                 # required unless design = "ni"
//! kind = "external_follow_up"
//! follow_up_py = 1805.0
//!
//! [historical]               # required for design = "ni"
//! lambda_p0 = 0.05
//! lambda_a0 = 0.023
//! total_py = 3610.0
//! delta_alt_ratio = 0.75
//!
//! [simulation]               # optional
//! seed = 20240601
//! replicates = 10000
//! hypothesis = "null"        # null | alternative
//! threads = 4                # optional
//! trial_py = 5000.0          # optional fixed trial size
//!
//! [grid]                     # required by `sweep`
//! lambda_p = { from = 0.01, to = 0.05, points = 21 }
//! lambda_a = { from = 0.002, to = 0.042, points = 21 }
//! reps_per_cell = 2000
//! ```
//!
//! Other `cf_model` kinds: `recency_screening` (keys `prevalence`,
//! `mdri_years`, `frr`, `cutoff_years`, `se_mdri`, `se_frr`) and
//! `fixed_variance` (keys `c_p0`, `c_p1`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cf::{variance_constants, CfPlaceboModel, RecencyAssay, VarianceConstants};
use crate::error::{Error, Result};
use crate::mc::{linspace, HypothesisState, SimulationPlan};
use crate::procedures::RaeDesignSpec;
use crate::sizing::{DesignKind, HistoricalTrial, IncidenceScenario};

/// Version stamp carried by the built-in scenarios.
pub const SCENARIO_VERSION: &str = "1";

pub const DEFAULT_SEED: u64 = 20_240_601;
pub const DEFAULT_REPLICATES: u64 = 10_000;
pub const DEFAULT_REPS_PER_CELL: u64 = 2_000;

pub const NAMED_SCENARIOS: [&str; 4] = [
    "moderate-efficacy",
    "moderate-efficacy-recency",
    "high-efficacy",
    "single-arm",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    pub design: DesignKind,
    pub spec: RaeDesignSpec,
    pub scenario: IncidenceScenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<IncidenceScenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cf_model: Option<CfPlaceboModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub historical: Option<HistoricalTrial>,
    #[serde(default)]
    pub simulation: SimulationSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSettings {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: u64,
    #[serde(default = "default_hypothesis")]
    pub hypothesis: HypothesisState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial_py: Option<f64>,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_replicates() -> u64 {
    DEFAULT_REPLICATES
}

fn default_hypothesis() -> HypothesisState {
    HypothesisState::Null
}

fn default_reps_per_cell() -> u64 {
    DEFAULT_REPS_PER_CELL
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            replicates: DEFAULT_REPLICATES,
            hypothesis: HypothesisState::Null,
            threads: None,
            trial_py: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

impl GridAxis {
    pub fn values(&self) -> Vec<f64> {
        linspace(self.from, self.to, self.points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSettings {
    pub lambda_p: GridAxis,
    pub lambda_a: GridAxis,
    #[serde(default = "default_reps_per_cell")]
    pub reps_per_cell: u64,
}

fn at(path: &str, e: Error) -> Error {
    match e {
        Error::Invalid { field, reason } => {
            let field = field.rsplit('.').next().unwrap_or(&field).to_string();
            Error::Config {
                path: format!("{path}.{field}"),
                message: reason,
            }
        }
        other => other,
    }
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl ScenarioConfig {
    /// Re-checks every invariant; errors name the offending field path.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate().map_err(|e| at("spec", e))?;
        self.scenario.validate().map_err(|e| at("scenario", e))?;
        if let Some(t) = &self.truth {
            t.validate().map_err(|e| at("truth", e))?;
        }
        if let Some(m) = &self.cf_model {
            m.validate().map_err(|e| at("cf_model", e))?;
        }
        if let Some(h) = &self.historical {
            h.validate().map_err(|e| at("historical", e))?;
        }
        match self.design {
            DesignKind::Ni if self.historical.is_none() => {
                return Err(config_err("historical", "required when design = \"ni\""));
            }
            DesignKind::Accf | DesignKind::ConservativeAccf | DesignKind::SingleArm
                if self.cf_model.is_none() =>
            {
                return Err(config_err(
                    "cf_model",
                    "required for counterfactual designs",
                ));
            }
            _ => {}
        }
        if self.simulation.replicates == 0 {
            return Err(config_err("simulation.replicates", "must be at least 1"));
        }
        if self.simulation.threads == Some(0) {
            return Err(config_err("simulation.threads", "must be at least 1"));
        }
        if let Some(py) = self.simulation.trial_py {
            if !(py > 0.0 && py.is_finite()) {
                return Err(config_err("simulation.trial_py", "must be positive"));
            }
        }
        if let Some(g) = &self.grid {
            for (name, axis) in [
                ("grid.lambda_p", &g.lambda_p),
                ("grid.lambda_a", &g.lambda_a),
            ] {
                if axis.points == 0 {
                    return Err(config_err(
                        &format!("{name}.points"),
                        "grid must be non-empty",
                    ));
                }
                if !(axis.from > 0.0 && axis.to >= axis.from && axis.to.is_finite()) {
                    return Err(config_err(name, "need 0 < from <= to"));
                }
            }
            if g.reps_per_cell == 0 {
                return Err(config_err("grid.reps_per_cell", "must be at least 1"));
            }
        }
        Ok(())
    }

    /// Variance constants of the counterfactual source at the design rates.
    pub fn cf_constants(&self) -> Result<Option<VarianceConstants>> {
        self.cf_model
            .as_ref()
            .map(|m| variance_constants(m, self.scenario.lambda_p, self.scenario.tau))
            .transpose()
    }

    pub fn simulation_plan(&self) -> SimulationPlan {
        SimulationPlan {
            design_kind: self.design,
            spec: self.spec,
            design: self.scenario,
            truth: self.truth.unwrap_or(self.scenario),
            cf_model: self.cf_model,
            historical: self.historical,
            hypothesis: self.simulation.hypothesis,
            trial_py: self.simulation.trial_py,
            n_replicates: self.simulation.replicates,
            seed: self.simulation.seed,
        }
    }

    /// Serializes to TOML; `parse_config` of the result gives back `self`.
    pub fn emit(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| config_err("<emit>", e.to_string()))
    }
}

/// Parses and validates TOML text.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config {
        path: toml_error_path(&e),
        message: e.message().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn toml_error_path(e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => format!("<input> bytes {}..{}", span.start, span.end),
        None => "<input>".to_string(),
    }
}

/// Reads a config file, or a built-in scenario when `path` names one.
pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    if let Some(name) = path.to_str() {
        if NAMED_SCENARIOS.contains(&name) && !path.exists() {
            return named_scenario(name);
        }
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(&path.display().to_string(), e.to_string()))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config { path: p, message } => {
            let line = line_of(&text, &p);
            Error::Config {
                path: match line {
                    Some(l) => format!("{}:{l}", path.display()),
                    None => format!("{}: {p}", path.display()),
                },
                message,
            }
        }
        other => other,
    })
}

fn line_of(text: &str, span_path: &str) -> Option<usize> {
    let start: usize = span_path
        .strip_prefix("<input> bytes ")?
        .split("..")
        .next()?
        .parse()
        .ok()?;
    Some(text[..start.min(text.len())].matches('\n').count() + 1)
}

fn moderate_spec(power: f64) -> RaeDesignSpec {
    RaeDesignSpec {
        gamma: 0.5,
        gamma_alt: 1.36,
        alpha: 0.025,
        power,
    }
}

fn rates(lambda_p: f64, lambda_a: f64, tau: f64) -> IncidenceScenario {
    IncidenceScenario {
        lambda_p,
        lambda_a,
        allocation_e: 0.5,
        tau,
    }
}

/// Historical trial behind the NI margin in the moderate-efficacy setting.
pub fn moderate_historical() -> HistoricalTrial {
    HistoricalTrial {
        lambda_p0: 0.05,
        lambda_a0: 0.023,
        total_py: 3610.0,
        delta_alt_ratio: 0.75,
    }
}

/// Historical trial for the high-efficacy setting: a 90% efficacious control.
pub fn high_efficacy_historical() -> HistoricalTrial {
    HistoricalTrial {
        lambda_p0: 0.05,
        lambda_a0: 0.005,
        total_py: 3610.0,
        delta_alt_ratio: 1.0,
    }
}

pub fn external_follow_up() -> CfPlaceboModel {
    CfPlaceboModel::ExternalFollowUp {
        follow_up_py: 1805.0,
    }
}

fn grid(lambda_a_from: f64, lambda_a_to: f64) -> GridSettings {
    GridSettings {
        lambda_p: GridAxis {
            from: 0.01,
            to: 0.05,
            points: 21,
        },
        lambda_a: GridAxis {
            from: lambda_a_from,
            to: lambda_a_to,
            points: 21,
        },
        reps_per_cell: DEFAULT_REPS_PER_CELL,
    }
}

/// Built-in scenario by name.
pub fn named_scenario(name: &str) -> Result<ScenarioConfig> {
    let base = |design, spec, scenario, cf_model, historical, grid| ScenarioConfig {
        name: Some(name.to_string()),
        version: Some(SCENARIO_VERSION.to_string()),
        design,
        spec,
        scenario,
        truth: None,
        cf_model: Some(cf_model),
        historical: Some(historical),
        simulation: SimulationSettings::default(),
        grid: Some(grid),
    };
    let moderate = rates(0.03, 0.03 / 2.2, 1.0);
    let cfg = match name {
        "moderate-efficacy" => base(
            DesignKind::Accf,
            moderate_spec(0.8),
            moderate,
            external_follow_up(),
            moderate_historical(),
            grid(0.002, 0.042),
        ),
        "moderate-efficacy-recency" => base(
            DesignKind::Accf,
            moderate_spec(0.8),
            moderate,
            CfPlaceboModel::RecencyScreening(RecencyAssay::lag_avidity_subtype_b()),
            moderate_historical(),
            grid(0.002, 0.042),
        ),
        "high-efficacy" => base(
            DesignKind::Accf,
            RaeDesignSpec {
                gamma: 0.5,
                gamma_alt: 1.0,
                alpha: 0.025,
                power: 0.8,
            },
            rates(0.03, 0.003, 1.0),
            external_follow_up(),
            high_efficacy_historical(),
            grid(0.001, 0.021),
        ),
        "single-arm" => base(
            DesignKind::SingleArm,
            moderate_spec(0.8),
            moderate,
            external_follow_up(),
            moderate_historical(),
            grid(0.002, 0.042),
        ),
        other => return Err(Error::UnknownTarget(other.to_string())),
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_moderate_values() {
        let c = named_scenario("moderate-efficacy").unwrap();
        assert_eq!(c.scenario.lambda_p, 0.03);
        assert!((c.scenario.lambda_a - 0.013636).abs() < 1e-6);
        assert_eq!(
            (c.spec.gamma, c.spec.gamma_alt, c.spec.alpha),
            (0.5, 1.36, 0.025)
        );
        assert_eq!(c.version.as_deref(), Some(SCENARIO_VERSION));
        for n in NAMED_SCENARIOS {
            named_scenario(n).unwrap().validate().unwrap();
        }
        assert!(named_scenario("nope").is_err());
    }

    #[test]
    fn round_trip() {
        for n in NAMED_SCENARIOS {
            let c = named_scenario(n).unwrap();
            let text = c.emit().unwrap();
            assert_eq!(parse_config(&text).unwrap(), c, "{text}");
        }
    }

    #[test]
    fn gamma_constraint_named() {
        let mut c = named_scenario("moderate-efficacy").unwrap();
        c.spec.gamma_alt = 0.4;
        let text = c.emit().unwrap();
        match parse_config(&text) {
            Err(Error::Config { path, message }) => {
                assert_eq!(path, "spec.gamma_alt");
                assert!(message.contains("gamma < gamma_alt"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let text = named_scenario("moderate-efficacy").unwrap().emit().unwrap();
        let bad = text.replace("[spec]\n", "[spec]\nbeta = 3\n");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("unknown field `beta`"), "{err}");
    }

    #[test]
    fn missing_block_rejected() {
        let text =
            "design = \"ni\"\n[spec]\ngamma = 0.5\ngamma_alt = 1.36\nalpha = 0.025\npower = 0.8\n\
                    [scenario]\nlambda_p = 0.03\nlambda_a = 0.0136\n";
        match parse_config(text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "historical"),
            other => panic!("{other:?}"),
        }
        let missing = text.replace("power = 0.8\n", "");
        assert!(parse_config(&missing)
            .unwrap_err()
            .to_string()
            .contains("power"));
    }

    #[test]
    fn zero_replicates_and_empty_grid_rejected() {
        let mut c = named_scenario("moderate-efficacy").unwrap();
        c.simulation.replicates = 0;
        assert!(c.validate().is_err());
        let mut c = named_scenario("moderate-efficacy").unwrap();
        c.grid.as_mut().unwrap().lambda_a.points = 0;
        match c.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "grid.lambda_a.points"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn comments_and_recency_block_parse() {
        let text = r#"
# recency-based counterfactual
design = "conservative_accf"
[spec]
gamma = 0.5
gamma_alt = 1.36
alpha = 0.025
power = 0.9
[scenario]
lambda_p = 0.03
lambda_a = 0.013636363636363636
tau = 2.0
[cf_model]
kind = "recency_screening"
prevalence = 0.15
mdri_years = 0.38877481177275836
frr = 0.01
cutoff_years = 2.0
se_mdri = 0.019438740588637918
se_frr = 0.0025
"#;
        let c = parse_config(text).unwrap();
        assert_eq!(c.scenario.tau, 2.0);
        assert!(matches!(
            c.cf_model,
            Some(CfPlaceboModel::RecencyScreening(_))
        ));
        assert_eq!(c.simulation.replicates, DEFAULT_REPLICATES);
    }

    #[test]
    fn load_reports_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        let text = named_scenario("moderate-efficacy").unwrap().emit().unwrap();
        std::fs::write(&path, text.replace("[spec]\n", "[spec]\nbogus = 1\n")).unwrap();
        let err = load_config(&path).unwrap_err().to_string();
        assert!(err.contains("s.toml:"), "{err}");
        assert!(load_config("moderate-efficacy").is_ok());
    }
}
