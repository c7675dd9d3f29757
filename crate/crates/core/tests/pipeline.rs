mod common;

use aisport::synth::{builtin_port, generate, ErrorModel, Scenario, VisitSpec};
use aisport::validate::{summarize, validate_stream, Method, ValidationContext};
use aisport::ValidationConfig;
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn scenario(error_rate: f64) -> Scenario {
    Scenario { seed: 21, duration_h: 36.0, arrivals_per_day: 40.0, error_rate, ..Default::default() }
}

#[test]
fn clean_stream_keeps_reported_statuses() {
    let out = generate(&scenario(0.0)).unwrap();
    let decoded = common::decode_synth(&out);
    for method in [Method::Ensemble, Method::Geofence] {
        let p = common::run_builtin(&decoded, method);
        let disagreements: Vec<_> = p.validated.iter().filter(|m| !m.agreed_with_reported).collect();
        assert!(disagreements.is_empty(), "{method}: {} changed, first {:?}", disagreements.len(), disagreements.first());
    }
}

#[test]
fn agreement_tracks_error_rate() {
    let out = generate(&scenario(0.3)).unwrap();
    let p = common::run_builtin(&common::decode_synth(&out), Method::Ensemble);
    let s = summarize(&p.validated);
    assert!((s.agreement_rate - 0.7).abs() < 0.02, "{}", s.agreement_rate);
    let (acc, n) = common::accuracy(&p.validated, &out.truth, |_| true);
    assert!(n == p.validated.len() && acc > 0.99, "{acc}");
}

#[test]
fn stuck_transponders_are_corrected() {
    let sc = Scenario { error_model: ErrorModel::Stuck, ..scenario(0.5) };
    let out = generate(&sc).unwrap();
    let p = common::run_builtin(&common::decode_synth(&out), Method::Ensemble);
    let (acc, _) = common::accuracy(&p.validated, &out.truth, |_| true);
    assert!(acc > 0.99, "{acc}");
}

#[test]
fn input_order_does_not_matter() {
    let out = generate(&scenario(0.3)).unwrap();
    let decoded = common::decode_synth(&out);
    let port = builtin_port();
    let cfg = ValidationConfig::default();
    let ctx = ValidationContext { port: Some(&port), ..Default::default() };
    let sorted = validate_stream(&decoded.positions, &ctx, &cfg).unwrap();
    let mut idx: Vec<usize> = (0..decoded.positions.len()).collect();
    idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
    let shuffled: Vec<_> = idx.iter().map(|&i| decoded.positions[i].clone()).collect();
    let again = validate_stream(&shuffled, &ctx, &cfg).unwrap();
    for (k, &i) in idx.iter().enumerate() {
        assert_eq!(again[k], sorted[i]);
    }
}

#[test]
fn explicit_visits_become_voyages() {
    let visits = (0..3)
        .map(|i| VisitSpec {
            mmsi: Some(241_000_000 + i),
            ship_type: 71,
            arrival_h: 1.0 + i as f64 * 2.0,
            anchor_h: if i == 1 { vec![3.5] } else { vec![] },
            berth_h: 5.0,
            terminal: None,
        })
        .collect();
    let sc = Scenario { seed: 5, duration_h: 30.0, arrivals_per_day: 0.0, visits, error_rate: 0.3, ..Default::default() };
    let out = generate(&sc).unwrap();
    let p = common::run_builtin(&common::decode_synth(&out), Method::Ensemble);
    assert_eq!(p.voyages.len(), 3);
    for (v, truth) in p.voyages.iter().zip(&out.truth.visits) {
        assert_eq!((v.mmsi, v.arrival, v.departure), (truth.mmsi, truth.arrival, truth.departure));
        let kinds: Vec<_> = v.phases.iter().map(|ph| ph.kind).collect();
        let expected: Vec<_> = truth.phases.iter().map(|ph| ph.kind).collect();
        assert_eq!(kinds, expected);
        assert_eq!(v.phases.iter().find(|ph| ph.terminal.is_some()).and_then(|ph| ph.terminal.as_deref()), Some("container"));
    }
    assert_eq!(p.report.anchorage_wait[&aisport::metrics::VesselCategory::Cargo].count, 3);
}

#[test]
fn outage_flags_voyages_in_transit() {
    let visits = vec![VisitSpec { mmsi: Some(1), ship_type: 80, arrival_h: 1.0, anchor_h: vec![], berth_h: 6.0, terminal: None }];
    // Global silence while the vessel approaches its berth.
    let sc = Scenario {
        seed: 6,
        duration_h: 12.0,
        arrivals_per_day: 0.0,
        visits,
        outages: vec![aisport::synth::OutageSpec { start_h: 1.2, duration_h: 0.5, mmsi: None }],
        ..Default::default()
    };
    let out = generate(&sc).unwrap();
    let p = common::run_builtin(&common::decode_synth(&out), Method::Ensemble);
    assert_eq!(p.outages.len(), 1);
    assert_eq!(p.voyages.len(), 1);
    assert!(p.voyages[0].gap_flagged);
    assert!(p.validated.iter().any(|m| m.gap_flag));
}

#[test]
fn kinematic_only_degrades_on_short_anchorages() {
    let sc = Scenario {
        seed: 8,
        duration_h: 72.0,
        anchorage_h: [0.25, 0.75],
        anchorage_probability: 1.0,
        error_rate: 0.3,
        ..Default::default()
    };
    let out = generate(&sc).unwrap();
    let decoded = common::decode_synth(&out);
    let short = common::in_stop(&out.truth, |s| s < 3600);
    let kin = common::run_builtin(&decoded, Method::Kinematic);
    let ens = common::run_builtin(&decoded, Method::Ensemble);
    let (k, n) = common::accuracy(&kin.validated, &out.truth, &short);
    let (e, _) = common::accuracy(&ens.validated, &out.truth, &short);
    assert!(n > 100);
    // The ensemble recovers short stops through the anchorage polygon.
    assert!(e > k && e > 0.95, "ensemble {e}, kinematic {k}");
}
