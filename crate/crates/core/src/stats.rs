//! Scalar statistical primitives shared by every other module: the standard
//! normal distribution, log-incidence estimation from arm counts, and the
//! seeded random streams used by the simulators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Events substituted for an arm with no observed events.
pub const ZERO_EVENT_CORRECTION: f64 = 0.5;

/// Standard normal CDF, computed from `erfc` so both tails keep full precision.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// The `p`-quantile of the standard normal (Wichura's AS 241).
///
/// Lower-tail convention: `normal_quantile(0.025)` is about -1.96.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile needs 0 < p < 1, got {p}"
        )));
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5)
            * q;
        let den = ((((((5.226_495_278_852_854_5e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return Ok(num / den);
    }

    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_8e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_049e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    Ok(if q < 0.0 { -x } else { x })
}

/// Observed events and exposure for one trial arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub events: u64,
    pub person_years: f64,
}

impl ArmSummary {
    pub fn new(events: u64, person_years: f64) -> Result<Self> {
        if !(person_years > 0.0 && person_years.is_finite()) {
            return Err(Error::invalid(
                "person_years",
                format!("must be positive and finite, got {person_years}"),
            ));
        }
        Ok(Self {
            events,
            person_years,
        })
    }

    /// Event count used for estimation, with the zero-event correction applied.
    pub fn effective_events(&self) -> f64 {
        if self.events == 0 {
            ZERO_EVENT_CORRECTION
        } else {
            self.events as f64
        }
    }
}

/// A log incidence rate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogIncidenceEstimate {
    pub log_rate: f64,
    pub std_err: f64,
}

impl LogIncidenceEstimate {
    pub fn new(log_rate: f64, std_err: f64) -> Result<Self> {
        if !log_rate.is_finite() {
            return Err(Error::invalid("log_rate", "must be finite"));
        }
        if !(std_err > 0.0 && std_err.is_finite()) {
            return Err(Error::invalid(
                "std_err",
                format!("must be positive and finite, got {std_err}"),
            ));
        }
        Ok(Self { log_rate, std_err })
    }

    pub fn variance(&self) -> f64 {
        self.std_err * self.std_err
    }

    pub fn rate(&self) -> f64 {
        self.log_rate.exp()
    }
}

/// Log incidence `log(events / PY)` with the observed-information standard
/// error `1 / sqrt(events)`. Zero-event arms use [`ZERO_EVENT_CORRECTION`].
pub fn estimate_log_incidence(arm: &ArmSummary) -> LogIncidenceEstimate {
    let events = arm.effective_events();
    LogIncidenceEstimate {
        log_rate: (events / arm.person_years).ln(),
        std_err: events.recip().sqrt(),
    }
}

/// Deterministic random stream used everywhere a simulator needs randomness.
pub type SimRng = ChaCha8Rng;

/// Root stream for a seed.
pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sub-stream for one replicate: the root seed selects the key and the
/// replicate index selects the ChaCha stream, so replicate `i` sees the same
/// numbers no matter how replicates are scheduled.
pub fn replicate_rng(seed: u64, replicate: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Derives an independent root seed for a labelled child (e.g. a sweep cell)
/// with the SplitMix64 finalizer.
pub fn derive_seed(seed: u64, child: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(child.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One Poisson variate. Non-positive means yield zero.
pub fn poisson_draw<R: rand::Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    match Poisson::new(mean) {
        Ok(dist) => {
            let x: f64 = dist.sample(rng);
            x as u64
        }
        // Means beyond the sampler's range only arise for absurd trial sizes.
        Err(_) => mean.round() as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson integration of the normal density from -12 to x.
    fn cdf_by_quadrature(x: f64) -> f64 {
        let lo = -12.0;
        let n = 200_000;
        let h = (x - lo) / n as f64;
        let mut acc = normal_pdf(lo) + normal_pdf(x);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * normal_pdf(lo + i as f64 * h);
        }
        acc * h / 3.0
    }

    fn quantile_by_bisection(p: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if normal_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn cdf_reference_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(-1.959964) - 0.025).abs() < 1e-6);
        let oracle = cdf_by_quadrature(1.0452);
        assert!((oracle - 0.8520).abs() < 1e-3);
        assert!((normal_cdf(1.0452) - oracle).abs() < 1e-10);
    }

    #[test]
    fn cdf_matches_quadrature_across_range() {
        for &x in &[-6.0, -3.3, -1.0, -0.2, 0.7, 2.5, 5.0] {
            assert!(
                (normal_cdf(x) - cdf_by_quadrature(x)).abs() < 1e-12,
                "x = {x}"
            );
        }
    }

    #[test]
    fn quantile_reference_values() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert!((normal_quantile(0.025).unwrap() + 1.959964).abs() < 1e-5);
        let oracle = quantile_by_bisection(0.8);
        assert!((oracle - 0.841621).abs() < 1e-5);
        assert!((normal_quantile(0.8).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn quantile_rejects_boundaries() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(normal_quantile(p), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[
            1e-300,
            1e-20,
            1e-10,
            1e-4,
            0.02,
            0.3,
            0.5,
            0.9,
            0.999,
            1.0 - 1e-12,
        ] {
            let x = normal_quantile(p).unwrap();
            let back = normal_cdf(x);
            assert!((back - p).abs() <= 1e-9 * p.max(1e-3), "p = {p}");
        }
    }

    #[test]
    fn log_incidence_examples() {
        let est = estimate_log_incidence(&ArmSummary::new(90, 1805.0).unwrap());
        assert!((est.log_rate - (90.0f64 / 1805.0).ln()).abs() < 1e-12);
        assert!((est.log_rate + 2.998).abs() < 1e-3);
        assert!((est.std_err - 0.10541).abs() < 1e-5);

        let one = estimate_log_incidence(&ArmSummary::new(1, 1.0).unwrap());
        assert_eq!(one.log_rate, 0.0);
        assert_eq!(one.std_err, 1.0);

        let zero = estimate_log_incidence(&ArmSummary::new(0, 100.0).unwrap());
        assert!((zero.log_rate - 0.005f64.ln()).abs() < 1e-12);
        assert!((zero.std_err - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn arm_rejects_non_positive_exposure() {
        assert!(ArmSummary::new(3, 0.0).is_err());
        assert!(ArmSummary::new(3, -1.0).is_err());
        assert!(ArmSummary::new(3, f64::INFINITY).is_err());
    }

    #[test]
    fn poisson_moments() {
        let mut rng = seeded_rng(11);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| poisson_draw(54.15, &mut rng) as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - 54.15).abs() < 0.1, "mean {mean}");

        let draws: Vec<f64> = (0..n)
            .map(|_| poisson_draw(41.4, &mut rng) as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 41.4).abs() < 1.0, "var {var}");
    }

    #[test]
    fn poisson_tiny_mean_is_zero() {
        let mut rng = seeded_rng(3);
        assert!((0..1000).all(|_| poisson_draw(1e-12, &mut rng) == 0));
        assert_eq!(poisson_draw(0.0, &mut rng), 0);
    }

    #[test]
    fn replicate_streams_are_reproducible_and_distinct() {
        use rand::Rng;
        let mut r1 = replicate_rng(42, 7);
        let mut r2 = replicate_rng(42, 7);
        let mut r3 = replicate_rng(42, 8);
        let x: u64 = r1.random();
        assert_eq!(x, r2.random::<u64>());
        assert_ne!(x, r3.random::<u64>());
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
    }
}
