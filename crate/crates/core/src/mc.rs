//! Seeded Monte Carlo evaluation of operating characteristics and grid sweeps.
//!
//! Every replicate draws from its own ChaCha stream selected by the replicate
//! index, and results are reduced in index order, so tallies do not depend on
//! the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cf::{simulate_cf_estimate, variance_constants, CfDraw, CfPlaceboModel};
use crate::error::{Error, Result};
use crate::procedures::{
    accf_two_step_test, conservative_accf_two_step_test, ni_margin_95_95, ni_test, single_arm_test,
    RaeDesignSpec, StepReached,
};
use crate::sizing::{
    size_accf, size_conservative_accf, size_ni, size_single_arm, DesignKind, HistoricalTrial,
    IncidenceScenario, SingleArmHypothesis,
};
use crate::stats::{derive_seed, poisson_draw, replicate_rng, ArmSummary, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisState {
    Null,
    Alternative,
}

impl std::str::FromStr for HypothesisState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "null" => Ok(HypothesisState::Null),
            "alternative" | "alt" => Ok(HypothesisState::Alternative),
            other => Err(Error::invalid(
                "hypothesis",
                format!("unknown state `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub design_kind: DesignKind,
    pub spec: RaeDesignSpec,
    /// Rates the trial was designed under.
    pub design: IncidenceScenario,
    /// Rates that generate the data.
    pub truth: IncidenceScenario,
    pub cf_model: Option<CfPlaceboModel>,
    pub historical: Option<HistoricalTrial>,
    pub hypothesis: HypothesisState,
    /// Fixed trial size; sized from `design` when absent. Ignored by NI plans.
    pub trial_py: Option<f64>,
    pub n_replicates: u64,
    pub seed: u64,
}

impl SimulationPlan {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.design.validate()?;
        self.truth.validate()?;
        if self.n_replicates == 0 {
            return Err(Error::invalid(
                "simulation.replicates",
                "must be at least 1",
            ));
        }
        if let Some(py) = self.trial_py {
            if !(py > 0.0 && py.is_finite()) {
                return Err(Error::invalid("simulation.trial_py", "must be positive"));
            }
        }
        match self.design_kind {
            DesignKind::Ni => match &self.historical {
                Some(h) => h.validate(),
                None => Err(Error::invalid("historical", "required for the ni design")),
            },
            _ => match &self.cf_model {
                Some(m) => m.validate(),
                None => Err(Error::invalid(
                    "cf_model",
                    "required for counterfactual designs",
                )),
            },
        }
    }

    /// Truth-side RAE generating the new-agent rate.
    pub fn truth_gamma(&self) -> f64 {
        match self.hypothesis {
            HypothesisState::Null => self.spec.gamma,
            HypothesisState::Alternative => self.spec.gamma_alt,
        }
    }

    /// Resolves trial size and fixed design constants once, outside the replicate loop.
    pub fn prepare(&self) -> Result<PreparedPlan> {
        self.validate()?;
        let mut trial_py = None;
        let mut single_arm = None;
        if self.design_kind != DesignKind::Ni {
            let cf_model = self.cf_model.as_ref().expect("validated");
            let hyp = SingleArmHypothesis::matching_rae(&self.spec, &self.design);
            let py = match self.trial_py {
                Some(py) => py,
                None => {
                    let cf = variance_constants(cf_model, self.design.lambda_p, self.design.tau)?;
                    match self.design_kind {
                        DesignKind::Accf => size_accf(&self.spec, &self.design, &cf)?,
                        DesignKind::ConservativeAccf => {
                            size_conservative_accf(&self.spec, &self.design, &cf)?
                        }
                        DesignKind::SingleArm => {
                            size_single_arm(&self.spec, &self.design, &cf, &hyp)?
                        }
                        DesignKind::Ni => unreachable!(),
                    }
                    .total_py
                }
            };
            trial_py = Some(py);
            if self.design_kind == DesignKind::SingleArm {
                single_arm = Some(hyp);
            }
        }
        Ok(PreparedPlan {
            plan: self.clone(),
            lambda_e: truth_lambda_e(self, single_arm.as_ref()),
            trial_py,
            single_arm,
        })
    }
}

/// New-agent incidence generating the data. Two-arm designs sit on the RAE
/// null or alternative of the true rates; the single-arm design sits on its
/// own absolute-efficacy hypothesis, which is fixed at design time.
fn truth_lambda_e(plan: &SimulationPlan, single_arm: Option<&SingleArmHypothesis>) -> f64 {
    match single_arm {
        Some(h) => {
            let g = match plan.hypothesis {
                HypothesisState::Null => h.gamma_e,
                HypothesisState::Alternative => h.gamma_e_alt,
            };
            plan.truth.lambda_p * (-g).exp()
        }
        None => plan.truth.lambda_e_at(plan.truth_gamma()),
    }
}

/// A plan with its trial size and truth-side rates resolved.
#[derive(Debug, Clone)]
pub struct PreparedPlan {
    pub plan: SimulationPlan,
    pub lambda_e: f64,
    pub trial_py: Option<f64>,
    single_arm: Option<SingleArmHypothesis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicateStatus {
    Rejected,
    Accepted,
    Step1Fail,
    NoMargin,
    EstimatorUndefined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub status: ReplicateStatus,
    /// NI only: the trial size and margin this replicate used.
    pub sized_py: Option<f64>,
    pub margin: Option<f64>,
}

impl ReplicateOutcome {
    pub fn reject(&self) -> bool {
        self.status == ReplicateStatus::Rejected
    }

    fn bare(status: ReplicateStatus) -> Self {
        Self {
            status,
            sized_py: None,
            margin: None,
        }
    }
}

fn arm(events: u64, py: f64) -> Result<ArmSummary> {
    ArmSummary::new(events, py)
}

fn classify(reject: bool, step: StepReached) -> ReplicateStatus {
    match (reject, step) {
        (true, _) => ReplicateStatus::Rejected,
        (false, StepReached::Step1Fail) => ReplicateStatus::Step1Fail,
        (false, StepReached::NoMargin) => ReplicateStatus::NoMargin,
        (false, _) => ReplicateStatus::Accepted,
    }
}

impl PreparedPlan {
    /// One replicate, deterministic in `(seed, replicate_index)`.
    pub fn run_replicate(&self, replicate_index: u64) -> Result<ReplicateOutcome> {
        let mut rng = replicate_rng(self.plan.seed, replicate_index);
        match self.plan.design_kind {
            DesignKind::Ni => self.run_ni(&mut rng),
            _ => self.run_cf(&mut rng),
        }
    }

    fn run_ni(&self, rng: &mut SimRng) -> Result<ReplicateOutcome> {
        let p = &self.plan;
        let hist = p.historical.as_ref().expect("validated");
        let arm_py = hist.arm_py();
        let placebo0 = arm(poisson_draw(hist.lambda_p0 * arm_py, rng), arm_py)?;
        let active0 = arm(poisson_draw(hist.lambda_a0 * arm_py, rng), arm_py)?;
        let margin = ni_margin_95_95(&placebo0, &active0, p.spec.gamma);
        let Some(delta) = margin.usable() else {
            return Ok(ReplicateOutcome::bare(ReplicateStatus::NoMargin));
        };
        let n = match size_ni(&p.spec, &p.design, delta, hist.delta_alt_ratio) {
            Ok(s) => s.total_py,
            Err(Error::Infeasible { .. }) => {
                return Ok(ReplicateOutcome::bare(ReplicateStatus::NoMargin))
            }
            Err(e) => return Err(e),
        };
        let (py_e, py_a) = self.arm_py(n);
        let e = arm(poisson_draw(self.lambda_e * py_e, rng), py_e)?;
        let a = arm(poisson_draw(p.truth.lambda_a * py_a, rng), py_a)?;
        let out = ni_test(&e, &a, &margin, p.spec.alpha)?;
        Ok(ReplicateOutcome {
            status: classify(out.reject, out.step_reached),
            sized_py: Some(n),
            margin: Some(delta),
        })
    }

    fn run_cf(&self, rng: &mut SimRng) -> Result<ReplicateOutcome> {
        let p = &self.plan;
        let n = self.trial_py.expect("prepared");
        let cf_model = p.cf_model.as_ref().expect("validated");
        // The counterfactual source reflects the design-time placebo rate.
        let draw = simulate_cf_estimate(cf_model, p.design.lambda_p, n, p.design.tau, rng)?;
        let CfDraw::Estimate(cf) = draw else {
            return Ok(ReplicateOutcome::bare(ReplicateStatus::EstimatorUndefined));
        };
        let out = if let Some(hyp) = &self.single_arm {
            let e = arm(poisson_draw(self.lambda_e * n, rng), n)?;
            single_arm_test(&cf, &e, hyp.gamma_e, p.spec.alpha)?
        } else {
            let (py_e, py_a) = self.arm_py(n);
            let e = arm(poisson_draw(self.lambda_e * py_e, rng), py_e)?;
            let a = arm(poisson_draw(p.truth.lambda_a * py_a, rng), py_a)?;
            if p.design_kind == DesignKind::ConservativeAccf {
                conservative_accf_two_step_test(&cf, &e, &a, p.spec.gamma, p.spec.alpha)?
            } else {
                accf_two_step_test(&cf, &e, &a, p.spec.gamma, p.spec.alpha)?
            }
        };
        Ok(ReplicateOutcome::bare(classify(
            out.reject,
            out.step_reached,
        )))
    }

    fn arm_py(&self, n: f64) -> (f64, f64) {
        let alloc = self.plan.truth.allocation_e;
        (n * alloc, n * (1.0 - alloc))
    }

    /// Aggregates all replicates; `threads` caps parallelism (None uses the global pool).
    pub fn operating_characteristics(
        &self,
        threads: Option<usize>,
    ) -> Result<OperatingCharacteristics> {
        let n = self.plan.n_replicates;
        let outcomes: Vec<ReplicateOutcome> = with_threads(threads, || {
            (0..n)
                .into_par_iter()
                .map(|i| self.run_replicate(i))
                .collect::<Result<Vec<_>>>()
        })??;
        Ok(OperatingCharacteristics::from_outcomes(
            &outcomes,
            self.trial_py,
        ))
    }
}

/// Runs `f` inside a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::invalid("threads", e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub n_replicates: u64,
    pub rejections: u64,
    pub rejection_rate: f64,
    pub mc_std_err: f64,
    pub n_estimator_undefined: u64,
    pub n_no_margin: u64,
    pub n_step1_fail: u64,
    /// Fixed trial size for counterfactual designs.
    pub trial_py: Option<f64>,
    /// NI: mean sized PYs over replicates with a usable margin.
    pub mean_sized_py: Option<f64>,
    pub mean_margin: Option<f64>,
}

impl OperatingCharacteristics {
    pub fn from_outcomes(outcomes: &[ReplicateOutcome], trial_py: Option<f64>) -> Self {
        let n = outcomes.len() as u64;
        let count = |s: ReplicateStatus| outcomes.iter().filter(|o| o.status == s).count() as u64;
        let rejections = count(ReplicateStatus::Rejected);
        let rate = if n == 0 {
            0.0
        } else {
            rejections as f64 / n as f64
        };
        let mean = |f: fn(&ReplicateOutcome) -> Option<f64>| {
            let vals: Vec<f64> = outcomes.iter().filter_map(f).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        Self {
            n_replicates: n,
            rejections,
            rejection_rate: rate,
            mc_std_err: mc_std_err(rate, n),
            n_estimator_undefined: count(ReplicateStatus::EstimatorUndefined),
            n_no_margin: count(ReplicateStatus::NoMargin),
            n_step1_fail: count(ReplicateStatus::Step1Fail),
            trial_py,
            mean_sized_py: mean(|o| o.sized_py),
            mean_margin: mean(|o| o.margin),
        }
    }
}

/// `sqrt(r (1 - r) / n)`.
pub fn mc_std_err(rate: f64, n: u64) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (rate * (1.0 - rate) / n as f64).sqrt()
}

/// Prepares and evaluates a plan.
pub fn operating_characteristics(
    plan: &SimulationPlan,
    threads: Option<usize>,
) -> Result<OperatingCharacteristics> {
    plan.prepare()?.operating_characteristics(threads)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    /// `lambda_a > lambda_p`: the active control would raise incidence.
    Excluded,
    Infeasible,
}

impl CellStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Excluded => "excluded",
            CellStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda_p: f64,
    pub lambda_a: f64,
    pub rejection_rate: f64,
    pub mc_std_err: f64,
    pub n_replicates: u64,
    pub status: CellStatus,
}

impl SweepCell {
    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }
}

/// Evenly spaced grid including both endpoints.
pub fn linspace(from: f64, to: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![from],
        _ => (0..points)
            .map(|i| from + (to - from) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Evaluates every `(lambda_p, lambda_a)` cell with the base plan's design
/// held fixed. Cells are returned in row-major order (`lambda_p` outer).
pub fn sweep_grid(
    base: &SimulationPlan,
    lambda_p_grid: &[f64],
    lambda_a_grid: &[f64],
    reps_per_cell: u64,
    threads: Option<usize>,
) -> Result<Vec<SweepCell>> {
    if lambda_p_grid.is_empty() || lambda_a_grid.is_empty() {
        return Err(Error::invalid(
            "grid",
            "lambda_p and lambda_a grids must be non-empty",
        ));
    }
    if reps_per_cell == 0 {
        return Err(Error::invalid("grid.reps_per_cell", "must be at least 1"));
    }
    for &l in lambda_p_grid.iter().chain(lambda_a_grid) {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::invalid("grid", "rates must be positive"));
        }
    }
    // Resolve the design-side trial size once.
    let base_prepared = base.prepare()?;
    let cells: Vec<(usize, f64, f64)> = lambda_p_grid
        .iter()
        .flat_map(|&lp| lambda_a_grid.iter().map(move |&la| (lp, la)))
        .enumerate()
        .map(|(i, (lp, la))| (i, lp, la))
        .collect();

    with_threads(threads, || {
        cells
            .par_iter()
            .map(|&(i, lp, la)| run_cell(&base_prepared, i as u64, lp, la, reps_per_cell))
            .collect::<Result<Vec<_>>>()
    })?
}

fn run_cell(
    base: &PreparedPlan,
    cell_index: u64,
    lambda_p: f64,
    lambda_a: f64,
    reps: u64,
) -> Result<SweepCell> {
    let mut cell = SweepCell {
        lambda_p,
        lambda_a,
        rejection_rate: f64::NAN,
        mc_std_err: f64::NAN,
        n_replicates: 0,
        status: CellStatus::Excluded,
    };
    if lambda_a > lambda_p * (1.0 + 1e-12) {
        return Ok(cell);
    }
    let mut plan = base.plan.clone();
    plan.truth.lambda_p = lambda_p;
    plan.truth.lambda_a = lambda_a;
    plan.n_replicates = reps;
    plan.seed = derive_seed(base.plan.seed, cell_index);
    let prepared = PreparedPlan {
        lambda_e: truth_lambda_e(&plan, base.single_arm.as_ref()),
        plan,
        trial_py: base.trial_py,
        single_arm: base.single_arm,
    };
    let mut outcomes = Vec::with_capacity(reps as usize);
    for i in 0..reps {
        match prepared.run_replicate(i) {
            Ok(o) => outcomes.push(o),
            Err(Error::Infeasible { .. }) | Err(Error::InfeasibleScenario { .. }) => {
                cell.status = CellStatus::Infeasible;
                return Ok(cell);
            }
            Err(e) => return Err(e),
        }
    }
    let oc = OperatingCharacteristics::from_outcomes(&outcomes, base.trial_py);
    cell.rejection_rate = oc.rejection_rate;
    cell.mc_std_err = oc.mc_std_err;
    cell.n_replicates = reps;
    cell.status = CellStatus::Ok;
    Ok(cell)
}
