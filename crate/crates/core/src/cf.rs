//! Counterfactual placebo incidence models.
//!
//! Three sources are supported: prospective follow-up of an external cohort,
//! cross-sectional recency testing of the trial's own screenees, and a
//! pass-through model with fixed variance constants. Each model yields the
//! variance decomposition `sigma_P^2 = c_p0 / N + c_p1` used by the sizing
//! equations, where `N` is total trial person-years.

use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{estimate_log_incidence, poisson_draw, ArmSummary, LogIncidenceEstimate};

pub const DAYS_PER_YEAR: f64 = 365.25;

/// Parameters of a cross-sectional recency testing design at screening.
///
/// `se_mdri` and `se_frr` are the standard errors of the calibrated MDRI and
/// FRR. They are not published for the reference assay; the defaults in
/// [`RecencyAssay::lag_avidity_subtype_b`] are a 5% relative error on the MDRI
/// and 0.25 percentage points on the FRR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecencyAssay {
    /// HIV prevalence among screenees.
    pub prevalence: f64,
    /// Mean duration of recent infection, in years.
    pub mdri_years: f64,
    /// False recency rate.
    pub frr: f64,
    /// Recency cutoff time T, in years.
    pub cutoff_years: f64,
    pub se_mdri: f64,
    pub se_frr: f64,
}

impl RecencyAssay {
    /// LAg-Avidity (ODn <= 1.5, viral load > 1000) in a subtype B epidemic at
    /// 15% prevalence: MDRI 142 days, FRR 1%, T = 2 years.
    pub fn lag_avidity_subtype_b() -> Self {
        let mdri_years = 142.0 / DAYS_PER_YEAR;
        Self {
            prevalence: 0.15,
            mdri_years,
            frr: 0.01,
            cutoff_years: 2.0,
            se_mdri: 0.05 * mdri_years,
            se_frr: 0.0025,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::invalid("prevalence", "must lie in (0, 1)"));
        }
        if !(self.frr >= 0.0 && self.frr < 1.0) {
            return Err(Error::invalid("frr", "must lie in [0, 1)"));
        }
        if !(self.mdri_years > 0.0 && self.cutoff_years > 0.0) {
            return Err(Error::invalid(
                "mdri_years",
                "MDRI and cutoff must be positive",
            ));
        }
        if self.mdri_years >= self.cutoff_years {
            return Err(Error::invalid(
                "mdri_years",
                "MDRI must be shorter than the cutoff",
            ));
        }
        if self.recency_window() <= 0.0 {
            return Err(Error::invalid(
                "frr",
                "MDRI - FRR * cutoff must be positive",
            ));
        }
        if !(self.se_mdri >= 0.0 && self.se_frr >= 0.0) {
            return Err(Error::invalid(
                "se_mdri",
                "standard errors must be non-negative",
            ));
        }
        Ok(())
    }

    /// `Omega_T - beta_T * T`, the FRR-adjusted window.
    pub fn recency_window(&self) -> f64 {
        self.mdri_years - self.frr * self.cutoff_years
    }

    /// Per-screenee leading variance term, evaluated at probability-recent `prob_recent`.
    fn per_screenee_c_p0(prevalence: f64, prob_recent: f64, frr: f64, se_frr: f64) -> f64 {
        let gap2 = (prob_recent - frr).powi(2);
        (prob_recent * (1.0 - prob_recent) / gap2
            + 1.0 / (1.0 - prevalence)
            + (1.0 - prevalence) * se_frr * se_frr / gap2)
            / prevalence
    }

    /// Constant variance term from assay calibration error. The FRR part
    /// appears as `se_frr^2 (W)^2 / ((P_R - beta)^2 W^2)` with `W` the window;
    /// the window cancels and the simplified form is used here.
    fn c_p1(se_mdri: f64, se_frr: f64, window: f64, prob_recent: f64, frr: f64) -> f64 {
        se_mdri * se_mdri / (window * window) + se_frr * se_frr / (prob_recent - frr).powi(2)
    }
}

/// How the counterfactual placebo incidence estimate arises.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CfPlaceboModel {
    /// Prospective follow-up of an external cohort for `follow_up_py` person-years.
    ExternalFollowUp {
        follow_up_py: f64,
    },
    /// Recency testing of HIV-positive screenees; every HIV-negative screenee enrolls.
    RecencyScreening(RecencyAssay),
    FixedVariance {
        c_p0: f64,
        c_p1: f64,
    },
}

impl CfPlaceboModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            CfPlaceboModel::ExternalFollowUp { follow_up_py } => {
                if !(*follow_up_py > 0.0 && follow_up_py.is_finite()) {
                    return Err(Error::invalid("follow_up_py", "must be positive"));
                }
                Ok(())
            }
            CfPlaceboModel::RecencyScreening(assay) => assay.validate(),
            CfPlaceboModel::FixedVariance { c_p0, c_p1 } => {
                VarianceConstants::new(*c_p0, *c_p1).map(|_| ())
            }
        }
    }
}

/// Decomposition `sigma_P^2 = c_p0 / N + c_p1` of the counterfactual log-incidence variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceConstants {
    pub c_p0: f64,
    pub c_p1: f64,
}

impl VarianceConstants {
    pub fn new(c_p0: f64, c_p1: f64) -> Result<Self> {
        let ok = |c: f64| c >= 0.0 && c.is_finite();
        if !ok(c_p0) || !ok(c_p1) {
            return Err(Error::invalid(
                "c_p0",
                "variance constants must be finite and >= 0",
            ));
        }
        if c_p0 == 0.0 && c_p1 == 0.0 {
            return Err(Error::invalid(
                "c_p0",
                "variance constants cannot both be zero",
            ));
        }
        Ok(Self { c_p0, c_p1 })
    }

    /// Variance of the log counterfactual estimate for a trial of `n` person-years.
    pub fn variance_at(&self, n: f64) -> f64 {
        self.c_p0 / n + self.c_p1
    }
}

/// Screening-phase sample sizes for a recency design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningCounts {
    pub n_screened: u64,
    pub n_hiv_pos: u64,
    pub expected_recent: f64,
}

/// Probability that an HIV-positive screenee tests recent:
/// `P_R = beta + lambda (1 - p)(Omega - beta T) / p`.
pub fn recency_prob_recent(lambda_p: f64, assay: &RecencyAssay) -> Result<f64> {
    assay.validate()?;
    if !(lambda_p >= 0.0 && lambda_p.is_finite()) {
        return Err(Error::invalid("lambda_p", "must be non-negative"));
    }
    let p = assay.prevalence;
    let prob = assay.frr + lambda_p * (1.0 - p) * assay.recency_window() / p;
    if prob >= 1.0 {
        return Err(Error::InfeasibleScenario { prob_recent: prob });
    }
    Ok(prob)
}

/// Variance constants in trial person-year units.
///
/// For recency screening the per-screenee term is multiplied by `(1 - p) tau`
/// because a trial of `N` person-years screens `N / ((1 - p) tau)` people.
pub fn variance_constants(
    model: &CfPlaceboModel,
    lambda_p: f64,
    tau: f64,
) -> Result<VarianceConstants> {
    model.validate()?;
    if !(lambda_p > 0.0) {
        return Err(Error::invalid("lambda_p", "must be positive"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("tau", "must be positive"));
    }
    match model {
        CfPlaceboModel::ExternalFollowUp { follow_up_py } => Ok(VarianceConstants {
            c_p0: 0.0,
            c_p1: 1.0 / (lambda_p * follow_up_py),
        }),
        CfPlaceboModel::RecencyScreening(assay) => {
            let prob_recent = recency_prob_recent(lambda_p, assay)?;
            let p = assay.prevalence;
            let per_screenee =
                RecencyAssay::per_screenee_c_p0(p, prob_recent, assay.frr, assay.se_frr);
            Ok(VarianceConstants {
                c_p0: per_screenee * (1.0 - p) * tau,
                c_p1: RecencyAssay::c_p1(
                    assay.se_mdri,
                    assay.se_frr,
                    assay.recency_window(),
                    prob_recent,
                    assay.frr,
                ),
            })
        }
        CfPlaceboModel::FixedVariance { c_p0, c_p1 } => VarianceConstants::new(*c_p0, *c_p1),
    }
}

fn round_count(x: f64) -> u64 {
    x.round().max(0.0) as u64
}

/// Screenees needed to enroll `trial_py` person-years at `tau` years each.
pub fn screening_counts(
    trial_py: f64,
    tau: f64,
    assay: &RecencyAssay,
    lambda_p: f64,
) -> Result<ScreeningCounts> {
    if !(trial_py > 0.0 && tau > 0.0) {
        return Err(Error::invalid(
            "trial_py",
            "trial person-years and tau must be positive",
        ));
    }
    let prob_recent = recency_prob_recent(lambda_p, assay)?;
    let n_screened = round_count(trial_py / ((1.0 - assay.prevalence) * tau));
    let n_hiv_pos = round_count(assay.prevalence * n_screened as f64);
    Ok(ScreeningCounts {
        n_screened,
        n_hiv_pos,
        expected_recent: n_hiv_pos as f64 * prob_recent,
    })
}

/// Result of one simulated counterfactual estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CfDraw {
    Estimate(LogIncidenceEstimate),
    /// The incidence estimator was non-positive or undefined for this draw.
    EstimatorUndefined,
}

impl CfDraw {
    pub fn estimate(self) -> Option<LogIncidenceEstimate> {
        match self {
            CfDraw::Estimate(e) => Some(e),
            CfDraw::EstimatorUndefined => None,
        }
    }
}

fn normal_draw<R: rand::Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    if sd > 0.0 {
        Normal::new(mean, sd).map(|d| d.sample(rng)).unwrap_or(mean)
    } else {
        mean
    }
}

fn binomial_draw<R: rand::Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    Binomial::new(n, p.clamp(0.0, 1.0))
        .map(|d| d.sample(rng))
        .unwrap_or(0)
}

/// Simulates the counterfactual placebo log-incidence estimate when the true
/// placebo incidence is `true_lambda_p`.
///
/// Recency draws: screenees `round(N / ((1 - p) tau))`, HIV-positives
/// `Binomial(screened, p)`, recents `Binomial(positives, P_R)`, and calibrated
/// MDRI/FRR perturbed by their standard errors (a negative FRR draw is
/// truncated at zero). The standard error is the delta-method variance at the
/// observed quantities.
pub fn simulate_cf_estimate<R: rand::Rng + ?Sized>(
    model: &CfPlaceboModel,
    true_lambda_p: f64,
    trial_py: f64,
    tau: f64,
    rng: &mut R,
) -> Result<CfDraw> {
    if !(true_lambda_p > 0.0 && true_lambda_p.is_finite()) {
        return Err(Error::invalid("true_lambda_p", "must be positive"));
    }
    match model {
        CfPlaceboModel::ExternalFollowUp { follow_up_py } => {
            let events = poisson_draw(true_lambda_p * follow_up_py, rng);
            let arm = ArmSummary::new(events, *follow_up_py)?;
            Ok(CfDraw::Estimate(estimate_log_incidence(&arm)))
        }
        CfPlaceboModel::FixedVariance { c_p0, c_p1 } => {
            let constants = VarianceConstants::new(*c_p0, *c_p1)?;
            let sd = constants.variance_at(trial_py).sqrt();
            let log_rate = normal_draw(true_lambda_p.ln(), sd, rng);
            Ok(CfDraw::Estimate(LogIncidenceEstimate {
                log_rate,
                std_err: sd,
            }))
        }
        CfPlaceboModel::RecencyScreening(assay) => {
            let counts = screening_counts(trial_py, tau, assay, true_lambda_p)?;
            let prob_recent = recency_prob_recent(true_lambda_p, assay)?;
            let n = counts.n_screened;
            let positives = binomial_draw(n, assay.prevalence, rng);
            let recents = binomial_draw(positives, prob_recent, rng);
            let mdri = normal_draw(assay.mdri_years, assay.se_mdri, rng);
            let frr = normal_draw(assay.frr, assay.se_frr, rng).max(0.0);
            Ok(recency_estimate(n, positives, recents, mdri, frr, assay))
        }
    }
}

/// Cross-sectional incidence estimate from screening counts.
fn recency_estimate(
    screened: u64,
    positives: u64,
    recents: u64,
    mdri: f64,
    frr: f64,
    assay: &RecencyAssay,
) -> CfDraw {
    if positives == 0 || positives >= screened {
        return CfDraw::EstimatorUndefined;
    }
    let prevalence = positives as f64 / screened as f64;
    let prob_recent = recents as f64 / positives as f64;
    let window = mdri - frr * assay.cutoff_years;
    if prob_recent <= frr || window <= 0.0 {
        return CfDraw::EstimatorUndefined;
    }
    let rate = prevalence * (prob_recent - frr) / ((1.0 - prevalence) * window);
    let variance = RecencyAssay::per_screenee_c_p0(prevalence, prob_recent, frr, assay.se_frr)
        / screened as f64
        + RecencyAssay::c_p1(assay.se_mdri, assay.se_frr, window, prob_recent, frr);
    match LogIncidenceEstimate::new(rate.ln(), variance.sqrt()) {
        Ok(est) => CfDraw::Estimate(est),
        Err(_) => CfDraw::EstimatorUndefined,
    }
}
