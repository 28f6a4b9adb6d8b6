use cfplacebo::config::{named_scenario, parse_config, NAMED_SCENARIOS};
use cfplacebo::sizing::DesignKind;
use cfplacebo::Error;

#[test]
fn named_scenarios_round_trip_through_toml() {
    for name in NAMED_SCENARIOS {
        let cfg = named_scenario(name).unwrap();
        let text = cfg.emit().unwrap();
        let back = parse_config(&text).unwrap();
        assert_eq!(back.emit().unwrap(), text, "{name}");
    }
}

#[test]
fn minimal_config_uses_defaults() {
    let text = r#"
design = "conservative-accf"
[spec]
gamma = 0.5
gamma_alt = 1.36
alpha = 0.025
power = 0.8
[scenario]
lambda_p = 0.03
lambda_a = 0.0136
[cf_model]
kind = "external_follow_up"
follow_up_py = 1805.0
[simulation]
seed = 1
replicates = 100
hypothesis = "null"
"#;
    let cfg = parse_config(text).unwrap();
    assert_eq!(cfg.design, DesignKind::ConservativeAccf);
    assert_eq!(cfg.scenario.allocation_e, 0.5);
    assert_eq!(cfg.scenario.tau, 1.0);
}

#[test]
fn out_of_domain_values_name_their_field() {
    let base = named_scenario("moderate-efficacy").unwrap().emit().unwrap();
    for (from, to, field) in [
        ("alpha = 0.025", "alpha = 0.7", "spec.alpha"),
        ("lambda_p = 0.03", "lambda_p = -0.03", "scenario.lambda_p"),
        (
            "replicates = 10000",
            "replicates = 0",
            "simulation.replicates",
        ),
    ] {
        assert!(base.contains(from), "{from}");
        let err = parse_config(&base.replacen(from, to, 1)).unwrap_err();
        assert!(
            matches!(err, Error::Config { .. } | Error::Invalid { .. }),
            "{err:?}"
        );
        assert!(err.to_string().contains(field), "{field}: {err}");
    }
}

#[test]
fn ni_config_requires_historical_trial() {
    let base = named_scenario("moderate-efficacy").unwrap().emit().unwrap();
    let ni = base.replacen("design = \"accf\"", "design = \"ni\"", 1);
    let start = ni.find("[historical]").unwrap();
    let end = ni[start..].find("\n\n").map(|i| start + i).unwrap();
    let without = format!("{}{}", &ni[..start], &ni[end..]);
    assert!(parse_config(&without).is_err());
}
