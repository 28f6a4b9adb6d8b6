//! Sample sizes and analytic operating characteristics.
//!
//! Trial size `N` is total prospective person-years. Arm variances follow
//! `sigma^2 = c / N` with `c_E = 1 / (allocation * lambda_E)` and
//! `c_A = 1 / ((1 - allocation) * lambda_A)`, i.e. `1 / (lambda * arm PY)`.
//! Two-arm sizes use `lambda_E` at the design alternative.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cf::VarianceConstants;
use crate::error::{Error, Result};
use crate::procedures::{ni_margin_95_95, RaeDesignSpec, CONFIDENCE_TAIL};
use crate::stats::{normal_cdf, normal_quantile, ArmSummary};

/// Smallest trial size the solvers consider.
pub const MIN_TRIAL_PY: f64 = 10.0;
/// Largest trial size the solvers consider.
pub const MAX_TRIAL_PY: f64 = 1e8;

/// True incidence rates (cases/PY) and allocation for a two-arm trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncidenceScenario {
    pub lambda_p: f64,
    pub lambda_a: f64,
    /// Fraction of trial person-years on the new agent.
    #[serde(default = "default_allocation")]
    pub allocation_e: f64,
    /// Individual follow-up duration in years.
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_allocation() -> f64 {
    0.5
}

fn default_tau() -> f64 {
    1.0
}

impl IncidenceScenario {
    pub fn new(lambda_p: f64, lambda_a: f64) -> Result<Self> {
        let s = Self {
            lambda_p,
            lambda_a,
            allocation_e: default_allocation(),
            tau: default_tau(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.lambda_p) {
            return Err(Error::invalid("lambda_p", "must be positive"));
        }
        if !positive(self.lambda_a) {
            return Err(Error::invalid("lambda_a", "must be positive"));
        }
        if !(self.allocation_e > 0.0 && self.allocation_e < 1.0) {
            return Err(Error::invalid("allocation_e", "must lie in (0, 1)"));
        }
        if !positive(self.tau) {
            return Err(Error::invalid("tau", "must be positive"));
        }
        Ok(())
    }

    /// Active-control effect on the log scale, `log lambda_P - log lambda_A`.
    pub fn log_effect(&self) -> f64 {
        self.lambda_p.ln() - self.lambda_a.ln()
    }

    pub fn lambda_e_at(&self, g: f64) -> f64 {
        lambda_e_at_gamma(self.lambda_p, self.lambda_a, g)
    }
}

/// `lambda_A^g lambda_P^(1 - g)`: the new-agent incidence with RAE equal to `g`.
pub fn lambda_e_at_gamma(lambda_p: f64, lambda_a: f64, g: f64) -> f64 {
    (lambda_p.ln() - g * (lambda_p.ln() - lambda_a.ln())).exp()
}

/// `(c_E, c_A)` for a trial where `N` counts total person-years.
pub fn variance_coefficients(scenario: &IncidenceScenario, lambda_e: f64) -> (f64, f64) {
    (
        1.0 / (scenario.allocation_e * lambda_e),
        1.0 / ((1.0 - scenario.allocation_e) * scenario.lambda_a),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Ni,
    Accf,
    #[serde(alias = "conservative-accf")]
    ConservativeAccf,
    #[serde(alias = "single-arm")]
    SingleArm,
}

impl DesignKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DesignKind::Ni => "ni",
            DesignKind::Accf => "accf",
            DesignKind::ConservativeAccf => "conservative_accf",
            DesignKind::SingleArm => "single_arm",
        }
    }
}

impl std::fmt::Display for DesignKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "ni" => Ok(DesignKind::Ni),
            "accf" => Ok(DesignKind::Accf),
            "conservative_accf" => Ok(DesignKind::ConservativeAccf),
            "single_arm" => Ok(DesignKind::SingleArm),
            other => Err(Error::invalid(
                "design",
                format!("unknown design `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizingResult {
    pub design: DesignKind,
    /// Total prospective person-years, rounded up.
    pub total_py: f64,
    /// Expected events at the design alternative.
    pub expected_events: f64,
    pub auxiliary: BTreeMap<String, f64>,
}

/// Single-arm hypothesis on the absolute scale: null `log P - log E <= gamma_e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleArmHypothesis {
    pub gamma_e: f64,
    pub gamma_e_alt: f64,
}

impl SingleArmHypothesis {
    /// The absolute-efficacy hypothesis matching an RAE hypothesis:
    /// `gamma_e = gamma * effect`, `gamma_e_alt = gamma_alt * effect`.
    pub fn matching_rae(spec: &RaeDesignSpec, scenario: &IncidenceScenario) -> Self {
        let effect = scenario.log_effect();
        Self {
            gamma_e: spec.gamma * effect,
            gamma_e_alt: spec.gamma_alt * effect,
        }
    }
}

/// Historical placebo-controlled trial behind a "95%-95%" margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoricalTrial {
    pub lambda_p0: f64,
    pub lambda_a0: f64,
    /// Total person-years, split equally between the two arms.
    pub total_py: f64,
    /// NI alternative `delta*` on the rate-ratio scale (E vs A).
    pub delta_alt_ratio: f64,
}

impl HistoricalTrial {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.lambda_p0) || !positive(self.lambda_a0) {
            return Err(Error::invalid(
                "historical.lambda_p0",
                "rates must be positive",
            ));
        }
        if !positive(self.total_py) {
            return Err(Error::invalid("historical.total_py", "must be positive"));
        }
        if !positive(self.delta_alt_ratio) {
            return Err(Error::invalid(
                "historical.delta_alt_ratio",
                "must be positive",
            ));
        }
        Ok(())
    }

    pub fn arm_py(&self) -> f64 {
        self.total_py / 2.0
    }

    pub fn delta_alt(&self) -> f64 {
        self.delta_alt_ratio.ln()
    }
}

/// Which design an analytic power evaluation refers to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticDesign {
    /// NI test with a fixed margin `delta`; `delta_alt` is on the log scale.
    Ni {
        delta: f64,
        delta_alt: f64,
    },
    Accf,
    ConservativeAccf,
    SingleArm(SingleArmHypothesis),
}

/// Power lower bound `max(0, Phi(a) + Phi(b) - 1)` of the two-step AC-CF test at `n` PYs.
pub fn accf_power_bound(
    spec: &RaeDesignSpec,
    scenario: &IncidenceScenario,
    cf: &VarianceConstants,
    n: f64,
) -> f64 {
    let z = spec.z_alpha();
    let g = spec.gamma;
    let effect = scenario.log_effect();
    let (c_e, c_a) = variance_coefficients(scenario, scenario.lambda_e_at(spec.gamma_alt));
    let step2_sd = (((1.0 - g).powi(2) * cf.c_p0 + c_e + g * g * c_a) / n
        + (1.0 - g).powi(2) * cf.c_p1)
        .sqrt();
    let step1_sd = ((cf.c_p0 + c_a) / n + cf.c_p1).sqrt();
    (normal_cdf(z + (spec.gamma_alt - g) * effect / step2_sd) + normal_cdf(z + effect / step1_sd)
        - 1.0)
        .max(0.0)
}

/// Power lower bound of the conservative two-step test at `n` PYs.
pub fn conservative_accf_power_bound(
    spec: &RaeDesignSpec,
    scenario: &IncidenceScenario,
    cf: &VarianceConstants,
    n: f64,
) -> f64 {
    let z = spec.z_alpha();
    let g = spec.gamma;
    let effect = scenario.log_effect();
    let (c_e, c_a) = variance_coefficients(scenario, scenario.lambda_e_at(spec.gamma_alt));
    let var_p = cf.variance_at(n);
    let var_a = c_a / n;
    let v_prime = (c_e + g * g * c_a) / n;

    let den2 = (v_prime + (1.0 - g).powi(2) * var_p).sqrt();
    let step2 =
        ((v_prime.sqrt() + (1.0 - g) * var_p.sqrt()) * z + (spec.gamma_alt - g) * effect) / den2;
    let den1 = (var_a + var_p).sqrt();
    let step1 = ((var_p.sqrt() + var_a.sqrt()) * z + effect) / den1;
    (normal_cdf(step2) + normal_cdf(step1) - 1.0).max(0.0)
}

/// Power of the single-arm test with all `n` PYs on the new agent.
pub fn single_arm_power(
    spec: &RaeDesignSpec,
    scenario: &IncidenceScenario,
    cf: &VarianceConstants,
    hypothesis: &SingleArmHypothesis,
    n: f64,
) -> f64 {
    let lambda_e = scenario.lambda_p * (-hypothesis.gamma_e_alt).exp();
    let sd = (1.0 / (lambda_e * n) + cf.variance_at(n)).sqrt();
    normal_cdf(spec.z_alpha() + (hypothesis.gamma_e_alt - hypothesis.gamma_e) / sd)
}

/// Power of the NI test with fixed margin `delta` against `delta_alt` (log scale).
pub fn ni_power(
    spec: &RaeDesignSpec,
    scenario: &IncidenceScenario,
    delta: f64,
    delta_alt: f64,
    n: f64,
) -> f64 {
    let (c_e, c_a) = variance_coefficients(scenario, scenario.lambda_a * delta_alt.exp());
    normal_cdf(spec.z_alpha() + (delta - delta_alt) / ((c_e + c_a) / n).sqrt())
}

/// Analytic power (or its lower bound, for the two-step designs) at `n` PYs.
pub fn analytic_power(
    design: &AnalyticDesign,
    spec: &RaeDesignSpec,
    scenario: &IncidenceScenario,
    cf: &VarianceConstants,
    n: f64,
) -> f64 {
    match design {
        AnalyticDesign::Ni { delta, delta_alt } => ni_power(spec, scenario, *delta, *delta_alt, n),
        AnalyticDesign::Accf => accf_power_bound(spec, scenario, cf, n),
        AnalyticDesign::ConservativeAccf => conservative_accf_power_bound(spec, scenario, cf, n),
        AnalyticDesign::SingleArm(h) => single_arm_power(spec, scenario, cf, h, n),
    }
}

/// Smallest whole number of PYs in `[MIN_TRIAL_PY, MAX_TRIAL_PY]` at which the
/// increasing `power` reaches `target`: doubling bracket, then bisection.
pub fn solve_min_size(power: impl Fn(f64) -> f64, target: f64) -> Result<f64> {
    if power(MIN_TRIAL_PY) >= target {
        return Ok(MIN_TRIAL_PY);
    }
    let mut lo = MIN_TRIAL_PY;
    let mut hi = 2.0 * MIN_TRIAL_PY;
    while power(hi) < target {
        if hi >= MAX_TRIAL_PY {
            return Err(Error::Infeasible {
                limiting_power: power(1e15),
            });
        }
        lo = hi;
        hi = (2.0 * hi).min(MAX_TRIAL_PY);
    }
    while hi - lo > 1e-6 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if power(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut n = hi.ceil();
    while n > MIN_TRIAL_PY && power(n - 1.0) >= target {
        n -= 1.0;
    }
    while power(n) < target {
        n += 1.0;
    }
    Ok(n)
}

fn two_arm_expected_events(scenario: &IncidenceScenario, lambda_e: f64, n: f64) -> f64 {
    n * (scenario.allocation_e * lambda_e + (1.0 - scenario.allocation_e) * scenario.lambda_a)
}

fn check_positive_effect(scenario: &IncidenceScenario) -> Result<()> {
    scenario.validate()?;
    if scenario.log_effect() <= 0.0 {
        return Err(Error::invalid(
            "lambda_a",
            "the active control must lower incidence (lambda_a < lambda_p)",
        ));
    }
    Ok(())
}

fn cf_aux(cf: &VarianceConstants) -> BTreeMap<String, f64> {
    BTreeMap::from([("c_p0".to_string(), cf.c_p0), ("c_p1".to_string(), cf.c_p1)])
}

/// Size of the two-step AC-CF design.
pub fn size_accf(
    spec: &RaeDesignSpec,
    scenario: &IncidenceScenario,
    cf: &VarianceConstants,
) -> Result<SizingResult> {
    spec.validate()?;
    check_positive_effect(scenario)?;
    let n = solve_min_size(|n| accf_power_bound(spec, scenario, cf, n), spec.power)?;
    let lambda_e = scenario.lambda_e_at(spec.gamma_alt);
    Ok(SizingResult {
        design: DesignKind::Accf,
        total_py: n,
        expected_events: two_arm_expected_events(scenario, lambda_e, n),
        auxiliary: cf_aux(cf),
    })
}

/// Size of the conservative two-step AC-CF design.
pub fn size_conservative_accf(
    spec: &RaeDesignSpec,
    scenario: &IncidenceScenario,
    cf: &VarianceConstants,
) -> Result<SizingResult> {
    spec.validate()?;
    check_positive_effect(scenario)?;
    let n = solve_min_size(
        |n| conservative_accf_power_bound(spec, scenario, cf, n),
        spec.power,
    )?;
    let lambda_e = scenario.lambda_e_at(spec.gamma_alt);
    Ok(SizingResult {
        design: DesignKind::ConservativeAccf,
        total_py: n,
        expected_events: two_arm_expected_events(scenario, lambda_e, n),
        auxiliary: cf_aux(cf),
    })
}

/// Closed-form NI size for margin `delta` against `delta_alt_ratio` (rate-ratio scale).
pub fn size_ni(
    spec: &RaeDesignSpec,
    scenario: &IncidenceScenario,
    delta: f64,
    delta_alt_ratio: f64,
) -> Result<SizingResult> {
    spec.validate()?;
    scenario.validate()?;
    if !(delta_alt_ratio > 0.0) {
        return Err(Error::invalid("delta_alt_ratio", "must be positive"));
    }
    let delta_alt = delta_alt_ratio.ln();
    if !(delta > delta_alt) {
        return Err(Error::Infeasible {
            limiting_power: spec.alpha,
        });
    }
    let lambda_e = scenario.lambda_a * delta_alt_ratio;
    let (c_e, c_a) = variance_coefficients(scenario, lambda_e);
    let n = ((c_e + c_a) * (spec.z_power() - spec.z_alpha()).powi(2) / (delta - delta_alt).powi(2))
        .ceil();
    if !(n <= MAX_TRIAL_PY) {
        return Err(Error::Infeasible {
            limiting_power: ni_power(spec, scenario, delta, delta_alt, MAX_TRIAL_PY),
        });
    }
    Ok(SizingResult {
        design: DesignKind::Ni,
        total_py: n,
        expected_events: two_arm_expected_events(scenario, lambda_e, n),
        auxiliary: BTreeMap::from([
            ("delta".to_string(), delta),
            ("delta_alt".to_string(), delta_alt),
        ]),
    })
}

/// Size of a single-arm trial compared with the counterfactual placebo.
pub fn size_single_arm(
    spec: &RaeDesignSpec,
    scenario: &IncidenceScenario,
    cf: &VarianceConstants,
    hypothesis: &SingleArmHypothesis,
) -> Result<SizingResult> {
    spec.validate()?;
    scenario.validate()?;
    if !(hypothesis.gamma_e_alt > hypothesis.gamma_e) {
        return Err(Error::Infeasible {
            limiting_power: spec.alpha,
        });
    }
    let n = solve_min_size(
        |n| single_arm_power(spec, scenario, cf, hypothesis, n),
        spec.power,
    )?;
    let lambda_e = scenario.lambda_p * (-hypothesis.gamma_e_alt).exp();
    let mut auxiliary = cf_aux(cf);
    auxiliary.insert("gamma_e".to_string(), hypothesis.gamma_e);
    auxiliary.insert("gamma_e_alt".to_string(), hypothesis.gamma_e_alt);
    Ok(SizingResult {
        design: DesignKind::SingleArm,
        total_py: n,
        expected_events: n * lambda_e,
        auxiliary,
    })
}

/// Type-1 error of the NI test against the RAE null when
/// `x = sigma_EA^2 / ((1 - gamma)^2 sigma_PA0^2)`:
/// `Phi(z_alpha (1 + sqrt x) / sqrt(1 + x))`.
pub fn analytic_type1_ni_rae(x: f64, alpha: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::invalid("x", "variance ratio must be non-negative"));
    }
    let z = normal_quantile(alpha)?;
    if x.is_infinite() {
        return Ok(alpha);
    }
    Ok(normal_cdf(z * (1.0 + x.sqrt()) / (1.0 + x).sqrt()))
}

/// Type-1 error of the conservative two-step test with mutually independent
/// estimates, `max(alpha_1, alpha_2)`, where `r_ap = sigma_A / sigma_P` and
/// `r_ea = sigma_E / sigma_A`.
pub fn analytic_type1_conservative_accf(
    r_ap: f64,
    r_ea: f64,
    gamma: f64,
    alpha: f64,
) -> Result<f64> {
    if !(r_ap > 0.0 && r_ea > 0.0) {
        return Err(Error::invalid("r_ap", "ratios must be positive"));
    }
    let z = normal_quantile(alpha)?;
    let s = (r_ea * r_ea + gamma * gamma).sqrt();
    let alpha1 = normal_cdf(
        z * (s * r_ap + (1.0 - gamma)) / ((s * r_ap).powi(2) + (1.0 - gamma).powi(2)).sqrt(),
    );
    let alpha2 = normal_cdf(z * (r_ap + 1.0) / (r_ap * r_ap + 1.0).sqrt());
    Ok(alpha1.max(alpha2))
}

/// Conservative-design type-1 error at trial size `n`, with `lambda_E` on the null boundary.
pub fn conservative_accf_type1_at(
    spec: &RaeDesignSpec,
    scenario: &IncidenceScenario,
    cf: &VarianceConstants,
    n: f64,
) -> Result<f64> {
    let (c_e, c_a) = variance_coefficients(scenario, scenario.lambda_e_at(spec.gamma));
    let sd_p = cf.variance_at(n).sqrt();
    let sd_a = (c_a / n).sqrt();
    let sd_e = (c_e / n).sqrt();
    analytic_type1_conservative_accf(sd_a / sd_p, sd_e / sd_a, spec.gamma, spec.alpha)
}

/// Expected NI-design quantities over the sampling distribution of the
/// historical trial, computed by enumerating Poisson event counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NiDesignExpectation {
    /// Mean sized PYs among historical outcomes that yield a positive margin.
    pub mean_total_py: f64,
    pub mean_margin: f64,
    pub prob_no_margin: f64,
    /// Type-1 error against the RAE null, averaged over the same outcomes.
    pub type1_rae: f64,
    /// Unconditional power at the RAE alternative; outcomes without a usable
    /// margin count as non-rejections.
    pub power_rae: f64,
}

fn poisson_pmf(k: u64, mean: f64) -> f64 {
    let k = k as f64;
    (k * mean.ln() - mean - libm::lgamma(k + 1.0)).exp()
}

fn poisson_support(mean: f64) -> std::ops::RangeInclusive<u64> {
    let spread = 12.0 * mean.sqrt() + 10.0;
    let lo = (mean - spread).max(0.0).floor() as u64;
    let hi = (mean + spread).ceil() as u64;
    lo..=hi
}

/// Enumerates every historical outcome with non-negligible probability.
pub fn ni_design_expectation(
    spec: &RaeDesignSpec,
    design: &IncidenceScenario,
    historical: &HistoricalTrial,
) -> Result<NiDesignExpectation> {
    spec.validate()?;
    design.validate()?;
    historical.validate()?;
    let arm_py = historical.arm_py();
    let mean_p = historical.lambda_p0 * arm_py;
    let mean_a = historical.lambda_a0 * arm_py;
    let sd_pa0 = (1.0 / mean_p + 1.0 / mean_a).sqrt();
    let delta_alt = historical.delta_alt();
    let z_gap = spec.z_power() - spec.z_alpha();

    let pmf_a: Vec<(u64, f64)> = poisson_support(mean_a)
        .map(|k| (k, poisson_pmf(k, mean_a)))
        .collect();
    let true_effect = design.log_effect() * (1.0 - spec.gamma_alt);
    let (c_e, c_a) = variance_coefficients(design, design.lambda_e_at(spec.gamma_alt));
    let (mut mass_ok, mut sum_py, mut sum_margin, mut type1, mut power) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for kp in poisson_support(mean_p) {
        let wp = poisson_pmf(kp, mean_p);
        let placebo = ArmSummary::new(kp, arm_py)?;
        for &(ka, wa) in &pmf_a {
            let w = wp * wa;
            let active = ArmSummary::new(ka, arm_py)?;
            let Some(delta) = ni_margin_95_95(&placebo, &active, spec.gamma).usable() else {
                continue;
            };
            let Ok(sized) = size_ni(spec, design, delta, historical.delta_alt_ratio) else {
                continue;
            };
            mass_ok += w;
            sum_py += w * sized.total_py;
            sum_margin += w * delta;
            let sd_ea = (delta - delta_alt) / z_gap;
            let x = sd_ea.powi(2) / ((1.0 - spec.gamma) * sd_pa0).powi(2);
            type1 += w * analytic_type1_ni_rae(x, spec.alpha)?;
            let sd = ((c_e + c_a) / sized.total_py).sqrt();
            power += w * normal_cdf(spec.z_alpha() + (delta - true_effect) / sd);
        }
    }
    Ok(NiDesignExpectation {
        mean_total_py: sum_py / mass_ok,
        mean_margin: sum_margin / mass_ok,
        prob_no_margin: 1.0 - mass_ok,
        type1_rae: type1 / mass_ok,
        power_rae: power,
    })
}

/// Lower confidence bound multiplier used by the conservative procedures.
pub fn confidence_z() -> f64 {
    normal_quantile(CONFIDENCE_TAIL).expect("constant tail")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cf::{variance_constants, CfPlaceboModel};

    fn moderate() -> (RaeDesignSpec, IncidenceScenario, VarianceConstants) {
        let spec = RaeDesignSpec::new(0.5, 1.36, 0.025, 0.8).unwrap();
        let scenario = IncidenceScenario::new(0.03, 0.03 / 2.2).unwrap();
        let cf = variance_constants(
            &CfPlaceboModel::ExternalFollowUp {
                follow_up_py: 1805.0,
            },
            0.03,
            1.0,
        )
        .unwrap();
        (spec, scenario, cf)
    }

    /// First grid point N in {step, 2 step, ...} meeting the target.
    fn scan(power: impl Fn(f64) -> f64, target: f64, step: f64) -> f64 {
        let mut n = step;
        while power(n) < target {
            n += step;
        }
        n
    }

    #[test]
    fn lambda_e_examples() {
        let lp = 0.03;
        let la = 0.03 / 2.2;
        assert!((lambda_e_at_gamma(lp, la, 0.5) - (lp * la).sqrt()).abs() < 1e-15);
        assert!((lambda_e_at_gamma(lp, la, 0.5) - 0.020226).abs() < 1e-6);
        assert!((lambda_e_at_gamma(lp, la, 1.36) - 0.010266).abs() < 1e-6);
        assert!((lambda_e_at_gamma(lp, la, 0.0) - lp).abs() < 1e-15);
        assert!((lambda_e_at_gamma(lp, la, 1.0) - la).abs() < 1e-15);
    }

    #[test]
    fn coefficient_examples() {
        let s = IncidenceScenario::new(0.03, 0.013636).unwrap();
        let (c_e, c_a) = variance_coefficients(&s, 0.010266);
        assert!((c_e - 194.8).abs() < 0.1);
        assert!((c_a - 146.7).abs() < 0.1);
        let (c_e, c_a) = variance_coefficients(&s, s.lambda_a);
        assert_eq!(c_e, c_a);
        let s = IncidenceScenario {
            allocation_e: 2.0 / 3.0,
            ..s
        };
        assert!((variance_coefficients(&s, 0.01).0 - 150.0).abs() < 1e-9);
    }

    #[test]
    fn accf_power_at_reference_size() {
        let (spec, scenario, cf) = moderate();
        let p = accf_power_bound(&spec, &scenario, &cf, 4942.0);
        assert!((0.797..=0.803).contains(&p), "{p}");
    }

    #[test]
    fn sizes_are_tight() {
        let (spec, scenario, cf) = moderate();
        let hyp = SingleArmHypothesis::matching_rae(&spec, &scenario);
        let checks: Vec<(f64, Box<dyn Fn(f64) -> f64>)> = vec![
            (
                size_accf(&spec, &scenario, &cf).unwrap().total_py,
                Box::new(move |n| accf_power_bound(&spec, &scenario, &cf, n)),
            ),
            (
                size_conservative_accf(&spec, &scenario, &cf)
                    .unwrap()
                    .total_py,
                Box::new(move |n| conservative_accf_power_bound(&spec, &scenario, &cf, n)),
            ),
            (
                size_single_arm(&spec, &scenario, &cf, &hyp)
                    .unwrap()
                    .total_py,
                Box::new(move |n| single_arm_power(&spec, &scenario, &cf, &hyp, n)),
            ),
        ];
        for (n, power) in checks {
            assert!(power(n) >= 0.8);
            assert!(power(n - 1.0) < 0.8);
            assert_eq!(n, n.round());
        }
    }

    #[test]
    fn bisection_agrees_with_scan() {
        let (spec, scenario, cf) = moderate();
        let n = size_accf(&spec, &scenario, &cf).unwrap().total_py;
        let grid = scan(|n| accf_power_bound(&spec, &scenario, &cf, n), 0.8, 10.0);
        assert!(grid - 10.0 < n && n <= grid, "{n} vs {grid}");
    }

    #[test]
    fn infeasible_when_counterfactual_too_noisy() {
        let (spec, scenario, _) = moderate();
        let cf = VarianceConstants::new(0.0, 5.0).unwrap();
        match size_accf(&spec, &scenario, &cf) {
            Err(Error::Infeasible { limiting_power }) => assert!(limiting_power < 0.8),
            other => panic!("expected infeasible, got {other:?}"),
        }
        let hyp = SingleArmHypothesis {
            gamma_e: 0.4,
            gamma_e_alt: 0.4,
        };
        assert!(matches!(
            size_single_arm(&spec, &scenario, &cf, &hyp),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn conservative_size_converges_to_plain_without_cf_error() {
        let (spec, scenario, _) = moderate();
        let cf = VarianceConstants::new(0.0, 1e-12).unwrap();
        let plain = size_accf(&spec, &scenario, &cf).unwrap().total_py;
        let cons = size_conservative_accf(&spec, &scenario, &cf)
            .unwrap()
            .total_py;
        assert!((cons - plain).abs() <= 0.01 * plain, "{plain} vs {cons}");
    }

    #[test]
    fn ni_size_examples() {
        let (spec, scenario, _) = moderate();
        let delta = 0.5 * ((90.0f64 / 41.0).ln() - 1.959964 * (1.0 / 90.0 + 1.0 / 41.0f64).sqrt());
        let n = size_ni(&spec, &scenario, delta, 0.75).unwrap().total_py;
        // (c_E + c_A)(z_0.8 - z_0.025)^2 / (delta - log 0.75)^2 with c at lambda_E = 0.75 lambda_A.
        let c = 2.0 / (0.75 * 0.03 / 2.2) + 2.0 / (0.03 / 2.2);
        let expected = c * (0.841621 + 1.959964f64).powi(2) / (delta - 0.75f64.ln()).powi(2);
        assert!((n - expected).abs() <= 1.0, "{n} vs {expected}");

        assert!(matches!(
            size_ni(&spec, &scenario, 0.75f64.ln(), 0.75),
            Err(Error::Infeasible { .. })
        ));
        let near = size_ni(&spec, &scenario, 0.75f64.ln() + 1e-2, 0.75)
            .unwrap()
            .total_py;
        assert!(near > 1e6);
    }

    #[test]
    fn ni_inverse_square_law() {
        let (spec, scenario, _) = moderate();
        let d_alt = 0.75f64.ln();
        let n1 = size_ni(&spec, &scenario, d_alt + 0.3, 0.75)
            .unwrap()
            .total_py;
        let n2 = size_ni(&spec, &scenario, d_alt + 0.6, 0.75)
            .unwrap()
            .total_py;
        assert!((n1 / n2 - 4.0).abs() < 4.0 * 2.0 / n2);
    }

    #[test]
    fn single_arm_standard_form_without_cf_error() {
        let (spec, scenario, _) = moderate();
        let cf = VarianceConstants::new(1e-12, 0.0).unwrap();
        let hyp = SingleArmHypothesis::matching_rae(&spec, &scenario);
        let n = size_single_arm(&spec, &scenario, &cf, &hyp)
            .unwrap()
            .total_py;
        let lambda_e = 0.03 * (-hyp.gamma_e_alt).exp();
        let closed = ((spec.z_power() - spec.z_alpha()) / (hyp.gamma_e_alt - hyp.gamma_e)).powi(2)
            / lambda_e;
        assert!((n - closed.ceil()).abs() <= 1.0, "{n} vs {closed}");
    }

    #[test]
    fn type1_ni_curve() {
        let min = analytic_type1_ni_rae(1.0, 0.025).unwrap();
        assert!((min - 0.0027873).abs() < 1e-6);
        assert!((analytic_type1_ni_rae(1e-12, 0.025).unwrap() - 0.025).abs() < 1e-4);
        assert!((analytic_type1_ni_rae(1e12, 0.025).unwrap() - 0.025).abs() < 1e-4);
        let quarter = analytic_type1_ni_rae(0.25, 0.025).unwrap();
        let z = normal_quantile(0.025).unwrap();
        assert!((quarter - normal_cdf(z * 1.5 / 1.25f64.sqrt())).abs() < 1e-15);
        assert!((quarter - 0.0042747).abs() < 1e-6);
        assert!(analytic_type1_ni_rae(-1.0, 0.025).is_err());
    }

    #[test]
    fn type1_conservative_examples() {
        let z = normal_quantile(0.025).unwrap();
        let alpha2 = normal_cdf(z * 2f64.sqrt());
        assert!((alpha2 - 0.0027873).abs() < 1e-6);
        for gamma in [0.2, 0.5, 0.8] {
            let t = analytic_type1_conservative_accf(1.0, 1e-3, gamma, 0.025).unwrap();
            assert!(t >= alpha2 - 1e-15);
        }
        assert!(
            (analytic_type1_conservative_accf(1e-9, 1.0, 0.5, 0.025).unwrap() - 0.025).abs() < 1e-6
        );
        assert!(
            (analytic_type1_conservative_accf(1e9, 1.0, 0.5, 0.025).unwrap() - 0.025).abs() < 1e-6
        );
    }

    #[test]
    fn analytic_power_limits() {
        let (spec, scenario, _) = moderate();
        let cf = VarianceConstants::new(1.0, 0.0).unwrap();
        for d in [AnalyticDesign::Accf, AnalyticDesign::ConservativeAccf] {
            assert!(analytic_power(&d, &spec, &scenario, &cf, 1e12) > 0.999_999);
        }
        let hyp = SingleArmHypothesis::matching_rae(&spec, &scenario);
        assert!(
            analytic_power(&AnalyticDesign::SingleArm(hyp), &spec, &scenario, &cf, 1e12)
                > 0.999_999
        );
        let ni = AnalyticDesign::Ni {
            delta: 0.2,
            delta_alt: 0.75f64.ln(),
        };
        assert!(analytic_power(&ni, &spec, &scenario, &cf, 1e12) > 0.999_999);
    }

    #[test]
    fn size_monotone_in_effect_size_and_noise() {
        let (spec, scenario, cf) = moderate();
        let base = size_accf(&spec, &scenario, &cf).unwrap().total_py;
        let wider = RaeDesignSpec {
            gamma_alt: 1.5,
            ..spec
        };
        assert!(size_accf(&wider, &scenario, &cf).unwrap().total_py < base);
        let quieter = VarianceConstants::new(0.0, cf.c_p1 * 0.8).unwrap();
        assert!(size_accf(&spec, &scenario, &quieter).unwrap().total_py < base);
        let higher = IncidenceScenario::new(0.04, 0.04 / 2.2).unwrap();
        assert!(size_accf(&spec, &higher, &cf).unwrap().total_py < base);
    }

    #[test]
    fn non_positive_effect_rejected() {
        let (spec, _, cf) = moderate();
        let flat = IncidenceScenario::new(0.02, 0.03).unwrap();
        assert!(size_accf(&spec, &flat, &cf).is_err());
    }

    #[test]
    fn ni_expectation_moderate() {
        let (spec, scenario, _) = moderate();
        let hist = HistoricalTrial {
            lambda_p0: 0.05,
            lambda_a0: 0.023,
            total_py: 3610.0,
            delta_alt_ratio: 0.75,
        };
        let e = ni_design_expectation(&spec, &scenario, &hist).unwrap();
        assert!((e.mean_total_py - 12_006.0).abs() < 5.0, "{e:?}");
        assert!((e.type1_rae - 0.00408).abs() < 2e-5, "{e:?}");
        assert!((e.power_rae - 0.78716).abs() < 1e-3, "{e:?}");
        assert!(e.prob_no_margin > 0.0 && e.prob_no_margin < 0.05);
    }

    #[test]
    fn design_kind_parses() {
        assert_eq!(
            "conservative-accf".parse::<DesignKind>().unwrap(),
            DesignKind::ConservativeAccf
        );
        assert_eq!("ni".parse::<DesignKind>().unwrap(), DesignKind::Ni);
        assert!("foo".parse::<DesignKind>().is_err());
    }
}
