//! Command implementations shared by the CLI and the Python bindings.
//! Each returns a [`Table`]; rendering and exit codes belong to the caller.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::cf::{screening_counts, CfPlaceboModel};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::mc::{self, sweep_grid, OperatingCharacteristics, SweepCell};
use crate::procedures::ni_margin_95_95;
use crate::report::{num, Table};
use crate::sizing::{
    analytic_power, analytic_type1_conservative_accf, analytic_type1_ni_rae,
    conservative_accf_type1_at, ni_design_expectation, ni_power, size_accf, size_conservative_accf,
    size_ni, size_single_arm, AnalyticDesign, DesignKind, SingleArmHypothesis, SizingResult,
};
use crate::stats::ArmSummary;

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub replicates: Option<u64>,
    pub threads: Option<usize>,
}

impl RunOptions {
    pub fn apply(&self, cfg: &mut ScenarioConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.simulation.seed = s;
        }
        if let Some(r) = self.replicates {
            cfg.simulation.replicates = r;
            if let Some(g) = cfg.grid.as_mut() {
                g.reps_per_cell = r;
            }
        }
        if let Some(t) = self.threads {
            cfg.simulation.threads = Some(t);
        }
        cfg.validate()
    }
}

fn point_margin(cfg: &ScenarioConfig) -> Result<(f64, f64)> {
    let h = cfg.historical.as_ref().ok_or_else(|| Error::Config {
        path: "historical".into(),
        message: "required when design = \"ni\"".into(),
    })?;
    let arm_py = h.arm_py();
    let placebo = ArmSummary::new((h.lambda_p0 * arm_py).floor() as u64, arm_py)?;
    let active = ArmSummary::new((h.lambda_a0 * arm_py).floor() as u64, arm_py)?;
    let raw = ni_margin_95_95(&placebo, &active, cfg.spec.gamma).raw();
    Ok((raw, h.delta_alt_ratio))
}

/// Sizes the configured design. NI sizes are averaged over the sampling
/// distribution of the historical trial; the margin from the expected
/// historical counts (truncated to whole events) is reported alongside.
pub fn size_config(cfg: &ScenarioConfig) -> Result<SizingResult> {
    cfg.validate()?;
    let spec = &cfg.spec;
    let scenario = &cfg.scenario;
    if cfg.design == DesignKind::Ni {
        let h = cfg.historical.expect("validated");
        let exact = ni_design_expectation(spec, scenario, &h)?;
        let (delta, ratio) = point_margin(cfg)?;
        let lambda_e = scenario.lambda_a * ratio;
        let total_py = exact.mean_total_py.ceil();
        let mut auxiliary = BTreeMap::from([
            ("mean_margin".to_string(), exact.mean_margin),
            ("prob_no_margin".to_string(), exact.prob_no_margin),
            ("analytic_type1".to_string(), exact.type1_rae),
            ("expected_power".to_string(), exact.power_rae),
            ("delta_point".to_string(), delta),
            ("delta_alt".to_string(), ratio.ln()),
        ]);
        if let Ok(point) = size_ni(spec, scenario, delta, ratio) {
            auxiliary.insert("total_py_point".to_string(), point.total_py);
        }
        return Ok(SizingResult {
            design: DesignKind::Ni,
            total_py,
            expected_events: total_py
                * (scenario.allocation_e * lambda_e
                    + (1.0 - scenario.allocation_e) * scenario.lambda_a),
            auxiliary,
        });
    }
    let cf = cfg.cf_constants()?.expect("validated");
    let mut result = match cfg.design {
        DesignKind::Accf => size_accf(spec, scenario, &cf)?,
        DesignKind::ConservativeAccf => size_conservative_accf(spec, scenario, &cf)?,
        DesignKind::SingleArm => size_single_arm(
            spec,
            scenario,
            &cf,
            &SingleArmHypothesis::matching_rae(spec, scenario),
        )?,
        DesignKind::Ni => unreachable!(),
    };
    if let Some(CfPlaceboModel::RecencyScreening(assay)) = &cfg.cf_model {
        let c = screening_counts(result.total_py, scenario.tau, assay, scenario.lambda_p)?;
        result
            .auxiliary
            .insert("n_screened".to_string(), c.n_screened as f64);
        result
            .auxiliary
            .insert("n_hiv_pos".to_string(), c.n_hiv_pos as f64);
        result
            .auxiliary
            .insert("expected_recent".to_string(), c.expected_recent);
    }
    Ok(result)
}

/// Sizing record: `design,total_py,expected_events,aux_json`.
pub fn sizing_record(r: &SizingResult) -> Result<Table> {
    let mut t = Table::new(["design", "total_py", "expected_events", "aux_json"]);
    let aux = serde_json::to_string(&r.auxiliary).map_err(|e| Error::Io(e.to_string()))?;
    t.push([
        r.design.to_string(),
        num(r.total_py),
        num(r.expected_events),
        aux,
    ]);
    Ok(t)
}

pub fn cmd_size(cfg: &ScenarioConfig) -> Result<Table> {
    sizing_record(&size_config(cfg)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyzeKind {
    /// Analytic type-1 error and power of the configured design at its size.
    Power,
    /// NI type-1 error against the RAE null as a function of the variance ratio.
    NiCurve,
    /// Conservative two-step type-1 error over `(r_AP, r_EA)`.
    ConservativeSurface,
}

impl std::str::FromStr for AnalyzeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power" => Ok(AnalyzeKind::Power),
            "ni-curve" => Ok(AnalyzeKind::NiCurve),
            "conservative-surface" => Ok(AnalyzeKind::ConservativeSurface),
            other => Err(Error::invalid(
                "which",
                format!("expected power, ni-curve or conservative-surface, got `{other}`"),
            )),
        }
    }
}

fn logspace(from: f64, to: f64, points: usize) -> Vec<f64> {
    mc::linspace(from.log10(), to.log10(), points)
        .into_iter()
        .map(|e| 10f64.powf(e))
        .collect()
}

/// `x,value` curve on a log grid.
pub fn ni_type1_curve(alpha: f64, from: f64, to: f64, points: usize) -> Result<Table> {
    let mut t = Table::new(["x", "value"]);
    for x in logspace(from, to, points) {
        t.push([num(x), num(analytic_type1_ni_rae(x, alpha)?)]);
    }
    Ok(t)
}

/// `r_AP,r_EA,value` surface on an `n x n` log grid over `[from, to]^2`.
pub fn conservative_type1_surface(
    gamma: f64,
    alpha: f64,
    from: f64,
    to: f64,
    n: usize,
) -> Result<Table> {
    let grid = logspace(from, to, n);
    let mut t = Table::new(["r_AP", "r_EA", "value"]);
    for &r_ap in &grid {
        for &r_ea in &grid {
            t.push([
                num(r_ap),
                num(r_ea),
                num(analytic_type1_conservative_accf(r_ap, r_ea, gamma, alpha)?),
            ]);
        }
    }
    Ok(t)
}

pub fn cmd_analyze(cfg: &ScenarioConfig, which: AnalyzeKind) -> Result<Table> {
    cfg.validate()?;
    let spec = &cfg.spec;
    match which {
        AnalyzeKind::NiCurve => ni_type1_curve(spec.alpha, 1e-3, 1e3, 121),
        AnalyzeKind::ConservativeSurface => {
            conservative_type1_surface(spec.gamma, spec.alpha, 0.05, 20.0, 50)
        }
        AnalyzeKind::Power => {
            let sized = size_config(cfg)?;
            let n = sized.total_py;
            let (power, type1) = match cfg.design {
                DesignKind::Ni => {
                    let (delta, ratio) = point_margin(cfg)?;
                    let n_point = sized.auxiliary.get("total_py_point").copied().unwrap_or(n);
                    (
                        ni_power(spec, &cfg.scenario, delta, ratio.ln(), n_point),
                        sized.auxiliary["analytic_type1"],
                    )
                }
                kind => {
                    let cf = cfg.cf_constants()?.expect("validated");
                    let design = match kind {
                        DesignKind::Accf => AnalyticDesign::Accf,
                        DesignKind::ConservativeAccf => AnalyticDesign::ConservativeAccf,
                        _ => AnalyticDesign::SingleArm(SingleArmHypothesis::matching_rae(
                            spec,
                            &cfg.scenario,
                        )),
                    };
                    let type1 = if kind == DesignKind::ConservativeAccf {
                        conservative_accf_type1_at(spec, &cfg.scenario, &cf, n)?
                    } else {
                        spec.alpha
                    };
                    (analytic_power(&design, spec, &cfg.scenario, &cf, n), type1)
                }
            };
            Ok(Table::key_values([
                ("design", cfg.design.to_string()),
                ("total_py", num(n)),
                ("analytic_power", num(power)),
                ("analytic_type1", num(type1)),
            ]))
        }
    }
}

/// Runs the configured simulation; also returns the elapsed seconds.
pub fn simulate_config(cfg: &ScenarioConfig) -> Result<(OperatingCharacteristics, f64)> {
    cfg.validate()?;
    let start = Instant::now();
    let oc = mc::operating_characteristics(&cfg.simulation_plan(), cfg.simulation.threads)?;
    Ok((oc, start.elapsed().as_secs_f64()))
}

pub fn cmd_simulate(cfg: &ScenarioConfig) -> Result<Table> {
    let (oc, secs) = simulate_config(cfg)?;
    let opt = |x: Option<f64>| x.map(num).unwrap_or_else(|| "NA".to_string());
    Ok(Table::key_values([
        ("design", cfg.design.to_string()),
        (
            "hypothesis",
            format!("{:?}", cfg.simulation.hypothesis).to_lowercase(),
        ),
        ("seed", cfg.simulation.seed.to_string()),
        ("replicates", oc.n_replicates.to_string()),
        ("rejections", oc.rejections.to_string()),
        ("rejection_rate", num(oc.rejection_rate)),
        ("mc_std_err", num(oc.mc_std_err)),
        ("trial_py", opt(oc.trial_py)),
        ("mean_sized_py", opt(oc.mean_sized_py)),
        ("mean_margin", opt(oc.mean_margin)),
        ("n_no_margin", oc.n_no_margin.to_string()),
        ("n_step1_fail", oc.n_step1_fail.to_string()),
        (
            "n_estimator_undefined",
            oc.n_estimator_undefined.to_string(),
        ),
        ("runtime_s", format!("{secs:.3}")),
    ]))
}

/// Sweep table: `lambda_P,lambda_A,rejection_rate,mc_std_err,status`.
pub fn sweep_table(cells: &[SweepCell]) -> Table {
    let mut t = Table::new([
        "lambda_P",
        "lambda_A",
        "rejection_rate",
        "mc_std_err",
        "status",
    ]);
    for c in cells {
        t.push([
            num(c.lambda_p),
            num(c.lambda_a),
            num(c.rejection_rate),
            num(c.mc_std_err),
            c.status.as_str().to_string(),
        ]);
    }
    t
}

pub fn cmd_sweep(cfg: &ScenarioConfig) -> Result<Table> {
    cfg.validate()?;
    let grid = cfg.grid.as_ref().ok_or_else(|| Error::Config {
        path: "grid".into(),
        message: "the sweep command needs a [grid] block".into(),
    })?;
    let cells = sweep_grid(
        &cfg.simulation_plan(),
        &grid.lambda_p.values(),
        &grid.lambda_a.values(),
        grid.reps_per_cell,
        cfg.simulation.threads,
    )?;
    Ok(sweep_table(&cells))
}
