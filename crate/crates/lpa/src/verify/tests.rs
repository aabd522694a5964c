use super::*;

#[test]
fn suite_names_round_trip() {
    for suite in [
        Suite::Grad,
        Suite::Jacobian,
        Suite::Equivalence,
        Suite::Accounting,
        Suite::All,
    ] {
        assert_eq!(Suite::parse(suite.as_str()), Some(suite));
    }
    assert_eq!(Suite::parse("gradd"), None);
    assert_eq!(Suite::parse(""), None);
}

#[test]
fn every_suite_is_nonempty_and_passes() {
    for (suite, expected_len) in [
        (Suite::Grad, 8),
        (Suite::Jacobian, 2),
        (Suite::Equivalence, 4),
        (Suite::Accounting, 12),
    ] {
        let outcomes = run_suite(suite);
        assert_eq!(outcomes.len(), expected_len, "suite {}", suite.as_str());
        for outcome in &outcomes {
            assert_eq!(outcome.suite, suite.as_str());
            assert!(!outcome.detail.is_empty(), "{} has no detail", outcome.check);
            assert!(
                outcome.passed,
                "{}/{} failed: {}",
                outcome.suite, outcome.check, outcome.detail
            );
        }
        assert!(all_passed(&outcomes));
    }
}

#[test]
fn combined_suite_concatenates_all_four() {
    let all = run_suite(Suite::All);
    assert_eq!(all.len(), 8 + 2 + 4 + 12);
    let suites: Vec<&str> = all.iter().map(|o| o.suite).collect();
    for expected in ["grad", "jacobian", "equivalence", "accounting"] {
        assert!(suites.contains(&expected));
    }
    // Check names are unique within the combined run.
    let mut names: Vec<String> = all
        .iter()
        .map(|o| format!("{}/{}", o.suite, o.check))
        .collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), all.len());
}

#[test]
fn grad_suite_covers_both_families_and_every_placement() {
    let names: Vec<String> = run_suite(Suite::Grad)
        .into_iter()
        .map(|o| o.check)
        .collect();
    for family in ["postnorm", "prenorm"] {
        for placement in ["dense", "low-attn", "low-ffn", "low-all"] {
            let expected = format!("{family}-{placement}");
            assert!(names.contains(&expected), "missing {expected}");
        }
    }
}

#[test]
fn outcome_lines_are_single_line_json_with_fixed_fields() {
    let outcomes = run_suite(Suite::Jacobian);
    for outcome in outcomes {
        let line = outcome.render_line();
        assert!(!line.contains('\n'));
        let parsed: serde_json::Value = serde_json::from_str(&line).unwrap();
        let object = parsed.as_object().unwrap();
        assert_eq!(object.len(), 4);
        assert_eq!(object["suite"], outcome.suite);
        assert_eq!(object["check"], outcome.check.as_str());
        assert_eq!(object["passed"], outcome.passed);
        assert_eq!(object["detail"], outcome.detail.as_str());
    }
}

#[test]
fn failed_outcomes_are_reported_not_panicked() {
    let outcome = check("accounting", "impossible", || {
        Ok((false, "deliberately failing".to_string()))
    });
    assert!(!outcome.passed);
    assert!(!all_passed(&[outcome]));
    let aborted = check("accounting", "erroring", || {
        Err(Error::Config("synthetic".into()))
    });
    assert!(!aborted.passed);
    assert!(aborted.detail.contains("synthetic"));
}
