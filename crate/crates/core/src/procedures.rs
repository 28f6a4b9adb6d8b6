//! Hypothesis tests for the relative absolute efficacy (RAE) of a new agent E
//! against an active control A:
//!
//! `RAE = (log lambda_P - log lambda_E) / (log lambda_P - log lambda_A)`,
//! with null `RAE <= gamma`.
//!
//! Quantiles follow the lower-tail convention, so `z_alpha` is negative and
//! "reject when T >= -z_alpha" means T exceeds the upper critical value.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{estimate_log_incidence, normal_quantile, ArmSummary, LogIncidenceEstimate};

/// Level used for the lower confidence bounds in the "95%-95%" style procedures.
pub const CONFIDENCE_TAIL: f64 = 0.025;

/// Hypothesis parameters for the RAE test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaeDesignSpec {
    /// Preservation fraction under the null.
    pub gamma: f64,
    /// RAE under the design alternative.
    pub gamma_alt: f64,
    pub alpha: f64,
    pub power: f64,
}

impl RaeDesignSpec {
    pub fn new(gamma: f64, gamma_alt: f64, alpha: f64, power: f64) -> Result<Self> {
        let spec = Self {
            gamma,
            gamma_alt,
            alpha,
            power,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::invalid("gamma", "must be positive"));
        }
        if !(self.gamma_alt > self.gamma) {
            return Err(Error::invalid(
                "gamma_alt",
                "must exceed gamma (gamma < gamma_alt)",
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::invalid("alpha", "must lie in (0, 0.5)"));
        }
        if !(self.power > 0.5 && self.power < 1.0) {
            return Err(Error::invalid("power", "must lie in (0.5, 1)"));
        }
        Ok(())
    }

    /// `z_alpha`, negative for alpha < 0.5.
    pub fn z_alpha(&self) -> f64 {
        normal_quantile(self.alpha).expect("alpha validated")
    }

    pub fn z_power(&self) -> f64 {
        normal_quantile(self.power).expect("power validated")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepReached {
    /// The assay-sensitivity step did not reject; the second statistic was not computed.
    Step1Fail,
    /// Both steps were evaluated.
    Step2,
    /// Single-statistic test.
    Single,
    /// The non-inferiority margin was non-positive; no test was run.
    NoMargin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistics: BTreeMap<String, f64>,
    pub reject: bool,
    pub step_reached: StepReached,
}

impl TestOutcome {
    pub fn statistic(&self, name: &str) -> Option<f64> {
        self.statistics.get(name).copied()
    }
}

/// Margin chosen by the "95%-95%" rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NiMargin {
    Usable {
        delta: f64,
    },
    /// The historical lower bound left no positive margin.
    NoMargin {
        raw: f64,
    },
}

impl NiMargin {
    pub fn raw(&self) -> f64 {
        match *self {
            NiMargin::Usable { delta } => delta,
            NiMargin::NoMargin { raw } => raw,
        }
    }

    pub fn usable(&self) -> Option<f64> {
        match *self {
            NiMargin::Usable { delta } => Some(delta),
            NiMargin::NoMargin { .. } => None,
        }
    }
}

/// `delta = (1 - gamma)(log P0 - log A0 + z_0.025 * se)` from a historical
/// placebo-controlled trial. Non-positive values are reported as [`NiMargin::NoMargin`].
pub fn ni_margin_95_95(
    hist_placebo: &ArmSummary,
    hist_active: &ArmSummary,
    gamma: f64,
) -> NiMargin {
    let p = estimate_log_incidence(hist_placebo);
    let a = estimate_log_incidence(hist_active);
    let se = (p.variance() + a.variance()).sqrt();
    let z = normal_quantile(CONFIDENCE_TAIL).expect("constant tail");
    let delta = (1.0 - gamma) * (p.log_rate - a.log_rate + z * se);
    if delta > 0.0 {
        NiMargin::Usable { delta }
    } else {
        NiMargin::NoMargin { raw: delta }
    }
}

fn z_for(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::invalid("alpha", "must lie in (0, 0.5)"));
    }
    normal_quantile(alpha)
}

/// Non-inferiority test: `T_NI = (log E - log A - delta) / se_EA`, reject when `T_NI <= z_alpha`.
pub fn ni_test(
    trial_e: &ArmSummary,
    trial_a: &ArmSummary,
    margin: &NiMargin,
    alpha: f64,
) -> Result<TestOutcome> {
    let z = z_for(alpha)?;
    let Some(delta) = margin.usable() else {
        return Ok(TestOutcome {
            statistics: BTreeMap::from([("delta".to_string(), margin.raw())]),
            reject: false,
            step_reached: StepReached::NoMargin,
        });
    };
    if !delta.is_finite() {
        return Err(Error::invalid("delta", "must be finite"));
    }
    let e = estimate_log_incidence(trial_e);
    let a = estimate_log_incidence(trial_a);
    let t = (e.log_rate - a.log_rate - delta) / (e.variance() + a.variance()).sqrt();
    Ok(TestOutcome {
        statistics: BTreeMap::from([("T_NI".to_string(), t), ("delta".to_string(), delta)]),
        reject: t <= z,
        step_reached: StepReached::Single,
    })
}

/// Shared two-step logic: assay sensitivity first, then the RAE contrast.
#[allow(clippy::too_many_arguments)]
fn two_step(
    z: f64,
    names: (&str, &str),
    placebo_log: f64,
    step1_var: f64,
    step2_var: f64,
    e: LogIncidenceEstimate,
    a: LogIncidenceEstimate,
    gamma: f64,
) -> TestOutcome {
    let t_pa = (placebo_log - a.log_rate) / step1_var.sqrt();
    let mut statistics = BTreeMap::from([(names.0.to_string(), t_pa)]);
    if t_pa < -z {
        return TestOutcome {
            statistics,
            reject: false,
            step_reached: StepReached::Step1Fail,
        };
    }
    let t_cf = ((1.0 - gamma) * placebo_log - e.log_rate + gamma * a.log_rate) / step2_var.sqrt();
    statistics.insert(names.1.to_string(), t_cf);
    TestOutcome {
        statistics,
        reject: t_cf >= -z,
        step_reached: StepReached::Step2,
    }
}

/// Two-step AC-CF test. The counterfactual estimate is external to the trial,
/// so its variance adds to the trial-arm variances.
pub fn accf_two_step_test(
    cf: &LogIncidenceEstimate,
    trial_e: &ArmSummary,
    trial_a: &ArmSummary,
    gamma: f64,
    alpha: f64,
) -> Result<TestOutcome> {
    let z = z_for(alpha)?;
    let e = estimate_log_incidence(trial_e);
    let a = estimate_log_incidence(trial_a);
    let vp = cf.variance();
    Ok(two_step(
        z,
        ("T_PA", "T_CF"),
        cf.log_rate,
        vp + a.variance(),
        (1.0 - gamma).powi(2) * vp + e.variance() + gamma * gamma * a.variance(),
        e,
        a,
        gamma,
    ))
}

/// Conservative two-step AC-CF test: the counterfactual is replaced by the
/// lower 95% bound `log P + z_0.025 se_P`, treated as a known constant.
pub fn conservative_accf_two_step_test(
    cf: &LogIncidenceEstimate,
    trial_e: &ArmSummary,
    trial_a: &ArmSummary,
    gamma: f64,
    alpha: f64,
) -> Result<TestOutcome> {
    let z = z_for(alpha)?;
    let e = estimate_log_incidence(trial_e);
    let a = estimate_log_incidence(trial_a);
    let lower = cf.log_rate + normal_quantile(CONFIDENCE_TAIL)? * cf.std_err;
    let mut outcome = two_step(
        z,
        ("T_PA_cons", "T_CF_cons"),
        lower,
        a.variance(),
        e.variance() + gamma * gamma * a.variance(),
        e,
        a,
        gamma,
    );
    outcome
        .statistics
        .insert("log_lambda_P_lower".to_string(), lower);
    Ok(outcome)
}

/// Single-arm test of absolute efficacy against the counterfactual:
/// `T_E = (log E - log P + gamma_E) / se_PE`, reject when `T_E <= z_alpha`.
/// The null is `log P - log E <= gamma_E`, so `T_E` is zero on its boundary.
pub fn single_arm_test(
    cf: &LogIncidenceEstimate,
    trial_e: &ArmSummary,
    gamma_e: f64,
    alpha: f64,
) -> Result<TestOutcome> {
    let z = z_for(alpha)?;
    if !(gamma_e >= 0.0 && gamma_e.is_finite()) {
        return Err(Error::invalid("gamma_e", "must be finite and non-negative"));
    }
    let e = estimate_log_incidence(trial_e);
    let t = (e.log_rate - cf.log_rate + gamma_e) / (cf.variance() + e.variance()).sqrt();
    Ok(TestOutcome {
        statistics: BTreeMap::from([("T_E".to_string(), t)]),
        reject: t <= z,
        step_reached: StepReached::Single,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arm(events: u64, py: f64) -> ArmSummary {
        ArmSummary::new(events, py).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(RaeDesignSpec::new(0.5, 1.36, 0.025, 0.8).is_ok());
        assert!(RaeDesignSpec::new(0.5, 0.5, 0.025, 0.8).is_err());
        assert!(RaeDesignSpec::new(0.5, 1.0, 0.5, 0.8).is_err());
        assert!(RaeDesignSpec::new(0.5, 1.0, 0.025, 0.4).is_err());
        assert!(RaeDesignSpec::new(0.0, 1.0, 0.025, 0.8).is_err());
    }

    #[test]
    fn margin_from_historical_counts() {
        let m = ni_margin_95_95(&arm(90, 1805.0), &arm(41, 1805.0), 0.5);
        let expected =
            0.5 * ((90.0f64 / 41.0).ln() - 1.959964 * (1.0 / 90.0 + 1.0 / 41.0f64).sqrt());
        assert!((m.usable().unwrap() - expected).abs() < 1e-5);
        assert!((m.usable().unwrap() - 0.20840).abs() < 1e-4);
    }

    #[test]
    fn margin_edge_cases() {
        let m = ni_margin_95_95(&arm(50, 1000.0), &arm(50, 1000.0), 0.5);
        assert!(matches!(m, NiMargin::NoMargin { raw } if raw < 0.0));
        let m = ni_margin_95_95(&arm(90, 1805.0), &arm(41, 1805.0), 1.0);
        assert!(matches!(m, NiMargin::NoMargin { raw } if raw == 0.0));
    }

    #[test]
    fn ni_test_examples() {
        let delta = NiMargin::Usable { delta: 0.2084 };
        let out = ni_test(&arm(50, 5000.0), &arm(70, 5000.0), &delta, 0.025).unwrap();
        let t = out.statistic("T_NI").unwrap();
        assert!((t + 2.943).abs() < 2e-3, "{t}");
        assert!(out.reject);

        let out = ni_test(&arm(60, 5000.0), &arm(60, 5000.0), &delta, 0.025).unwrap();
        let se = (2.0f64 / 60.0).sqrt();
        assert!((out.statistic("T_NI").unwrap() + 0.2084 / se).abs() < 1e-12);
        assert!(!out.reject);

        let out = ni_test(
            &arm(1, 5000.0),
            &arm(70, 5000.0),
            &NiMargin::NoMargin { raw: -0.1 },
            0.025,
        )
        .unwrap();
        assert!(!out.reject);
        assert_eq!(out.step_reached, StepReached::NoMargin);
    }

    #[test]
    fn accf_without_assay_sensitivity_stops_at_step1() {
        let a = arm(67, 2471.0);
        let cf = LogIncidenceEstimate::new(estimate_log_incidence(&a).log_rate, 1e-6).unwrap();
        let out = accf_two_step_test(&cf, &arm(51, 2471.0), &a, 0.5, 0.025).unwrap();
        assert!(out.statistic("T_PA").unwrap().abs() < 1e-9);
        assert_eq!(out.step_reached, StepReached::Step1Fail);
        assert!(!out.reject);
        assert!(out.statistic("T_CF").is_none());
    }

    #[test]
    fn accf_rejects_at_expected_alternative_counts() {
        let cf = LogIncidenceEstimate::new(0.03f64.ln(), 0.018466f64.sqrt()).unwrap();
        // Expected counts at the moderate-efficacy alternative for N = 4942.
        let out = accf_two_step_test(&cf, &arm(25, 2471.0), &arm(34, 2471.0), 0.5, 0.025).unwrap();
        assert!(out.statistic("T_PA").unwrap() > 1.96);
        assert!(out.statistic("T_CF").unwrap() > 1.96);
        assert!(out.reject);

        // Same rates with every arm carrying the full 4942 PY.
        let out = accf_two_step_test(&cf, &arm(51, 4942.0), &arm(67, 4942.0), 0.5, 0.025).unwrap();
        assert!(out.reject);
    }

    #[test]
    fn accf_gamma_zero_is_direct_contrast() {
        let cf = LogIncidenceEstimate::new(0.03f64.ln(), 0.1).unwrap();
        let e = arm(20, 2000.0);
        let out = accf_two_step_test(&cf, &e, &arm(30, 2000.0), 1e-300, 0.025).unwrap();
        let est = estimate_log_incidence(&e);
        let direct = (cf.log_rate - est.log_rate) / (cf.variance() + est.variance()).sqrt();
        assert!((out.statistic("T_CF").unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn conservative_lower_bound() {
        let cf = LogIncidenceEstimate::new(0.03f64.ln(), 0.018466f64.sqrt()).unwrap();
        let out =
            conservative_accf_two_step_test(&cf, &arm(25, 2471.0), &arm(34, 2471.0), 0.5, 0.025)
                .unwrap();
        let lower = out.statistic("log_lambda_P_lower").unwrap();
        assert!((lower + 3.7729).abs() < 1e-3, "{lower}");
    }

    #[test]
    fn conservative_matches_plain_as_cf_error_vanishes() {
        let cf = LogIncidenceEstimate::new(0.03f64.ln(), 1e-12).unwrap();
        let (e, a) = (arm(25, 2471.0), arm(34, 2471.0));
        let plain = accf_two_step_test(&cf, &e, &a, 0.5, 0.025).unwrap();
        let cons = conservative_accf_two_step_test(&cf, &e, &a, 0.5, 0.025).unwrap();
        assert_eq!(plain.reject, cons.reject);
        assert!(
            (plain.statistic("T_PA").unwrap() - cons.statistic("T_PA_cons").unwrap()).abs() < 1e-9
        );
        assert!(
            (plain.statistic("T_CF").unwrap() - cons.statistic("T_CF_cons").unwrap()).abs() < 1e-9
        );
    }

    #[test]
    fn single_arm_examples() {
        let cf = LogIncidenceEstimate::new(0.03f64.ln(), 0.018466f64.sqrt()).unwrap();
        let out = single_arm_test(&cf, &arm(25, 2398.0), 0.39, 0.025).unwrap();
        assert!(out.statistic("T_E").unwrap() <= -1.96);
        assert!(out.reject);

        // E exactly on the null boundary.
        let gamma_e: f64 = 0.39;
        let py = 2000.0;
        let events = 30u64;
        let log_p = (events as f64 / py).ln() + gamma_e;
        let cf = LogIncidenceEstimate::new(log_p, 0.1).unwrap();
        let out = single_arm_test(&cf, &arm(events, py), gamma_e, 0.025).unwrap();
        assert!(out.statistic("T_E").unwrap().abs() < 1e-12);
        assert!(!out.reject);
    }

    #[test]
    fn bad_alpha_is_rejected() {
        let cf = LogIncidenceEstimate::new(-3.5, 0.1).unwrap();
        assert!(single_arm_test(&cf, &arm(3, 100.0), 0.3, 0.0).is_err());
        assert!(accf_two_step_test(&cf, &arm(3, 100.0), &arm(3, 100.0), 0.5, 0.7).is_err());
    }

    fn dataset() -> impl Strategy<Value = (f64, f64, u64, u64, f64, f64)> {
        (
            -5.0f64..-2.0,
            0.01f64..0.5,
            0u64..200,
            0u64..200,
            100.0f64..10_000.0,
            0.01f64..0.99,
        )
    }

    proptest! {
        #[test]
        fn rejection_implies_both_statistics_clear((lp, sp, ee, ea, py, gamma) in dataset()) {
            let cf = LogIncidenceEstimate::new(lp, sp).unwrap();
            let out = accf_two_step_test(&cf, &arm(ee, py), &arm(ea, py), gamma, 0.025).unwrap();
            if out.reject {
                prop_assert!(out.statistic("T_PA").unwrap() >= 1.959963984540054);
                prop_assert!(out.statistic("T_CF").unwrap() >= 1.959963984540054);
            }
        }

        #[test]
        fn conservative_rejection_implies_plain_rejection(
            (lp, sp, ee, ea, py, gamma) in dataset(), alpha in 0.025f64..0.1
        ) {
            let cf = LogIncidenceEstimate::new(lp, sp).unwrap();
            let (e, a) = (arm(ee, py), arm(ea, py));
            if conservative_accf_two_step_test(&cf, &e, &a, gamma, alpha).unwrap().reject {
                prop_assert!(accf_two_step_test(&cf, &e, &a, gamma, alpha).unwrap().reject);
            }
        }

        #[test]
        fn more_events_on_e_never_creates_a_rejection(
            (lp, sp, ee, ea, py, gamma) in dataset(), extra in 1u64..50
        ) {
            let cf = LogIncidenceEstimate::new(lp, sp).unwrap();
            let a = arm(ea, py);
            let lo = arm(ee.max(1), py);
            let hi = arm(ee.max(1) + extra, py);
            for test in [accf_two_step_test, conservative_accf_two_step_test] {
                let before = test(&cf, &lo, &a, gamma, 0.025).unwrap().reject;
                let after = test(&cf, &hi, &a, gamma, 0.025).unwrap().reject;
                prop_assert!(before || !after);
            }
            let before = single_arm_test(&cf, &lo, gamma, 0.025).unwrap().reject;
            let after = single_arm_test(&cf, &hi, gamma, 0.025).unwrap().reject;
            prop_assert!(before || !after);
        }
    }

    #[test]
    fn statistics_scale_with_root_k() {
        let cf = LogIncidenceEstimate::new(0.03f64.ln(), 0.05).unwrap();
        let cf4 = LogIncidenceEstimate::new(0.03f64.ln(), 0.025).unwrap();
        let base = accf_two_step_test(&cf, &arm(40, 4000.0), &arm(55, 4000.0), 0.5, 0.025).unwrap();
        let big =
            accf_two_step_test(&cf4, &arm(160, 16000.0), &arm(220, 16000.0), 0.5, 0.025).unwrap();
        for name in ["T_PA", "T_CF"] {
            let (b, k) = (base.statistic(name).unwrap(), big.statistic(name).unwrap());
            assert_eq!(b.signum(), k.signum());
            assert!((k / b - 2.0).abs() < 1e-9, "{name}: {b} -> {k}");
        }
    }
}
