use curbflow_web::{colour, heatmap, improve, preset_json};

fn scenario() -> String {
    let mut s: curbflow::Scenario = serde_json::from_str(&preset_json("ride_hailing").unwrap()).unwrap();
    s.horizon = 300.0;
    s.vehicles.truncate(4);
    serde_json::to_string(&s).unwrap()
}

#[test]
fn heatmap_matches_core_simulation() {
    let s = scenario();
    let x = [56.0, 308.0, 210.0, 126.0];
    let h = heatmap(&s, &x).unwrap();
    let parsed: curbflow::Scenario = serde_json::from_str(&s).unwrap();
    let sol = curbflow::evaluate(&x, &parsed).unwrap();
    assert_eq!(h.objective(), sol.objective);
    assert_eq!(h.steps(), 301);
    assert_eq!(h.cells() as f64, (h.length() / parsed.fd.v_f()).ceil());
    let px = h.rgba();
    assert_eq!(px.len(), h.steps() * h.cells() * 4);
    assert!(px.chunks(4).all(|p| p[3] == 255));
    // initial state is uniform
    let first: Vec<f64> = (0..h.cells()).map(|j| h.density(0, j)).collect();
    assert!(first.iter().all(|&r| (r - 0.02).abs() < 1e-9), "{first:?}");
    assert_eq!(h.probe(0.5, 3.0), h.density(0, 0));
    assert!(h.probe(-1.0, 3.0).is_nan());
    let summary: serde_json::Value = serde_json::from_str(&h.summary()).unwrap();
    assert_eq!(summary["solution"]["objective"].as_f64().unwrap(), sol.objective);
}

#[test]
fn bad_scenarios_are_errors() {
    assert!(heatmap("{}", &[]).is_err());
    assert!(preset_json("nowhere").is_err());
    let s = scenario();
    assert!(heatmap(&s, &[1.0, 2.0]).is_err());
}

#[test]
fn short_ga_never_worsens_the_start() {
    let s = scenario();
    let start = [56.0, 308.0, 210.0, 126.0];
    let parsed: curbflow::Scenario = serde_json::from_str(&s).unwrap();
    let x = improve(&s, &start, 8, 4, 1).unwrap();
    let f = |x: &[f64]| curbflow::evaluate(x, &parsed).unwrap().objective;
    assert!(f(&x) <= f(&start));
    assert_eq!(x, improve(&s, &start, 8, 4, 1).unwrap());
}

#[test]
fn colour_scale_ends() {
    assert_eq!(colour(0.0), [247, 251, 255]);
    assert_eq!(colour(1.0), [90, 0, 20]);
    assert_eq!(colour(7.0), colour(1.0));
    assert_eq!(colour(f64::NAN), colour(0.0));
}
