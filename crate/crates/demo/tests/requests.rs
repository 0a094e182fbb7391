use ipg_demo::{bounds_json, simulate_json, spectrum_json, MAX_POINTS};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn simulate_returns_one_curve_per_method() {
    let out =
        simulate_json(r#"{"dataset":"synthetic:40,6,3,1","methods":["ipg","gd","nag"],"tuning":"rate","agents":4}"#)
            .unwrap();
    let v = parse(&out);
    assert_eq!(v["dataset"], "synthetic_40x6_c3_s1");
    let curves = v["curves"].as_array().unwrap();
    assert_eq!(curves.len(), 3);
    for c in curves {
        let rows = c["rows"].as_array().unwrap();
        assert!(!rows.is_empty() && rows.len() <= MAX_POINTS);
        assert!(c["summary"]["final_error"].as_f64().unwrap() < 1e-3);
    }
}

#[test]
fn long_runs_are_thinned() {
    let out = simulate_json(
        r#"{"dataset":"synthetic:40,6,50,2","methods":["gd"],"max_iterations":4000,"params":{"alpha":1e-4}}"#,
    )
    .unwrap();
    let v = parse(&out);
    let c = &v["curves"][0];
    assert_eq!(c["summary"]["iterations"], 4000);
    assert!(c["rows"].as_array().unwrap().len() <= MAX_POINTS);
    assert_eq!(c["rows"].as_array().unwrap().last().unwrap()["t"], 4000);
}

#[test]
fn divergence_is_reported_as_inf() {
    let out = simulate_json(r#"{"dataset":"synthetic:30,5,4,3","methods":["gd"],"params":{"alpha":10.0}}"#).unwrap();
    let v = parse(&out);
    assert_eq!(v["curves"][0]["summary"]["stop"], "diverged");
    assert_eq!(v["curves"][0]["summary"]["final_error"], "inf");
}

#[test]
fn bad_requests_are_errors_not_panics() {
    assert!(simulate_json("not json").is_err());
    assert!(simulate_json(r#"{"dataset":"ash608","methods":[]}"#).is_err());
    assert!(simulate_json(r#"{"dataset":"no_such_set","methods":["ipg"]}"#).is_err());
    assert!(spectrum_json(r#"{"dataset":"ash608","agents":0}"#).is_err());
}

#[test]
fn spectrum_reports_builtin_values() {
    let v = parse(&spectrum_json(r#"{"dataset":"ash608"}"#).unwrap());
    assert!((v["lambda_1"].as_f64().unwrap() - 15.3816).abs() < 1e-3);
    assert_eq!(v["params"].as_array().unwrap().len(), 6);
}

#[test]
fn bounds_trace_has_the_requested_horizon() {
    let v = parse(&bounds_json(r#"{"dataset":"synthetic:30,5,2,4","noise":"process","horizon":50}"#).unwrap());
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 51);
    assert!(rows[50]["bound_t2"].as_f64().unwrap().is_finite());
}
