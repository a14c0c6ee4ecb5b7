use robust_sos_web::*;

#[test]
fn parses_mixed_separators() {
    assert_eq!(parse_points("1, 2\n-3.5  4").unwrap(), vec![vec![1.0], vec![2.0], vec![-3.5], vec![4.0]]);
    assert!(parse_points("1 two").is_err());
}

#[test]
fn resilience_of_three_points() {
    let v: serde_json::Value = serde_json::from_str(&resilience_json("-1 0 1", 1.0 / 3.0).unwrap()).unwrap();
    assert!((v["first_moment"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn kurtosis_four_sample_is_not_certified() {
    assert!(!certify_points("0 0 0 1", 0.5).unwrap());
}

#[test]
fn small_estimate_round_trips() {
    let v: serde_json::Value = serde_json::from_str(&estimate_json(12, 1, 0.0, 1, "far-cluster").unwrap()).unwrap();
    let mu = v["mu_hat"][0].as_f64().unwrap();
    let mean = v["sample_mean"][0].as_f64().unwrap();
    assert!((mu - mean).abs() < 1e-6);
    assert_eq!(v["status"], "solved");
    assert!(estimate_json(400, 1, 0.1, 0, "far-cluster").is_err());
}
