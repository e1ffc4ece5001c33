use womble_wasm::ops;

#[test]
fn layout_has_52_locations_and_two_blind_spots() {
    let v: serde_json::Value = serde_json::from_str(&ops::layout()).unwrap();
    assert_eq!(v["locations"].as_array().unwrap().len(), 52);
    assert_eq!(v["blind_spots"].as_array().unwrap().len(), 2);
    let edges = v["edges"].as_array().unwrap();
    assert!(!edges.is_empty());
    for e in edges {
        assert!(e[0].as_u64().unwrap() < e[1].as_u64().unwrap());
    }
}

#[test]
fn weights_fall_with_alpha_and_threshold_is_binary() {
    let lo = ops::weights(-3.0, false).unwrap();
    let hi = ops::weights(3.0, false).unwrap();
    for (a, b) in lo.weights.iter().zip(&hi.weights) {
        assert!(b <= a);
        assert!(*a <= 1.0 && *b >= 0.0);
    }
    assert!(hi.n_boundary >= lo.n_boundary);
    let t = ops::weights(1.0, true).unwrap();
    assert!(t.weights.iter().all(|&w| w == 0.0 || w == 1.0));
}

#[test]
fn correlation_endpoints_hit_the_bound_targets() {
    let days = [0.0, 30.0, 200.0, 365.0];
    let at_lower = ops::correlation(&days, 0.0, 11).unwrap();
    // Weakest decay keeps the full span at correlation 0.95.
    assert!((at_lower.corr[10] - 0.95).abs() < 1e-12);
    let at_upper = ops::correlation(&days, 1.0, 11).unwrap();
    // Strongest decay drops the 30-day gap to 0.01.
    assert!((at_upper.consecutive[0] - 0.01).abs() < 1e-12);
    assert_eq!(at_upper.corr[0], 1.0);
    assert!(ops::correlation(&days, 1.5, 11).is_err());
}

#[test]
fn field_draws_are_seeded_and_floored() {
    let a = ops::field(5.0, 8.0, 0.5, 0.99, false, 7).unwrap();
    let b = ops::field(5.0, 8.0, 0.5, 0.99, false, 7).unwrap();
    assert_eq!(a.latent, b.latent);
    assert_eq!(a.latent.len(), 52);
    for (l, o) in a.latent.iter().zip(&a.observed) {
        assert_eq!(*o, l.max(0.0));
    }
    assert_eq!(a.n_censored, a.latent.iter().filter(|&&v| v <= 0.0).count());
    assert!(ops::field(5.0, -1.0, 0.5, 0.99, false, 7).is_err());
}

#[test]
fn weights_use_dissimilarity_in_hundreds_of_degrees() {
    let g = womble_core::graph::ArealGraph::vf24_2();
    let w = ops::weights(0.97, false).unwrap();
    for (e, got) in g.edges().iter().zip(&w.weights) {
        let expected = (-(0.97f64.exp()) * e.z[0] / 100.0).exp();
        assert!((got - expected).abs() < 1e-12);
    }
}
