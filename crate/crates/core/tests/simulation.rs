use std::path::Path;

use tlight_core::decision::{write_trace, TraceRecord};
use tlight_core::hdmap::{MapDocument, SignalState};
use tlight_core::ingest::{load_scenario, parse_scenario, MapSource, Nanos, PhaseInterval};
use tlight_core::scenarios::{minimal, route, step_change, two_light_offset, RouteConfig};
use tlight_core::simulator::{compute_metrics, run_scenario, write_associations, write_metrics, NoiseModel, SimParams};
use tlight_core::{Error, ErrorKind};

const TICK: Nanos = 50_000_000;
const CHANGE: Nanos = 2_000_000_000;

fn noisy(seed: u64) -> NoiseModel {
    NoiseModel {
        miss_rate: 0.05,
        false_positive_rate: 0.2,
        state_confusion: 0.1,
        pictogram_confusion: 0.1,
        pixel_sigma: 2.0,
        seed,
        ..Default::default()
    }
}

fn trace(group: &str, until: Nanos, state_at: impl Fn(Nanos) -> SignalState) -> Vec<TraceRecord> {
    (0..=until / TICK)
        .map(|k| TraceRecord {
            t: k * TICK,
            group: group.into(),
            state: state_at(k * TICK),
            confidence: 1.0,
            determining_light: Some("L1".into()),
        })
        .collect()
}

#[test]
fn runs_are_deterministic() {
    let mut s = step_change(CHANGE, false);
    s.noise = noisy(5);
    let a = run_scenario(&s, &SimParams::default()).unwrap();
    let b = run_scenario(&s, &SimParams::default()).unwrap();
    assert_eq!(write_trace(&a.trace), write_trace(&b.trace));
    assert_eq!(write_metrics(&a.metrics), write_metrics(&b.metrics));
    assert_eq!(write_associations(&a.associations), write_associations(&b.associations));

    s.noise.seed = 6;
    let c = run_scenario(&s, &SimParams::default()).unwrap();
    assert_ne!(write_associations(&a.associations), write_associations(&c.associations));
}

#[test]
fn zero_noise_minimal_is_exact() {
    let out = run_scenario(&minimal(), &SimParams::default()).unwrap();
    let m = &out.metrics;
    assert_eq!(m.accuracy_within_range, Some(1.0));
    assert_eq!(m.flicker_count, 0);
    assert_eq!(m.misassociations + m.spurious_associations + m.unassociated_detections, 0);
    assert!(out.trace.iter().all(|r| r.state == SignalState::Red));
}

#[test]
fn zero_noise_step_change_recovers() {
    for single in [true, false] {
        let m = run_scenario(&step_change(CHANGE, single), &SimParams::default()).unwrap().metrics;
        assert_eq!(m.state_changes, 1);
        assert_eq!(m.unconfirmed_changes, 0);
        assert_eq!(m.accuracy_outside_transitions, Some(1.0));
        assert_eq!(m.flicker_count, 0);
        let latency = m.mean_state_change_latency_ms.unwrap();
        assert!(latency > 0.0 && latency <= 250.0, "{latency}");
    }
}

#[test]
fn zero_noise_route_is_sound() {
    let s = route(&RouteConfig::default(), NoiseModel::default()).unwrap();
    let m = run_scenario(&s, &SimParams::default()).unwrap().metrics;
    assert_eq!(m.accuracy_outside_transitions, Some(1.0));
    assert_eq!(m.flicker_count, 0);
    assert_eq!(m.misassociations, 0);
    assert!(m.state_changes > 0);
    assert_eq!(m.unconfirmed_changes, 0);
    for d in m.first_association_distance.values() {
        assert!(*d > 120.0 && *d <= 180.0, "{d}");
    }
}

#[test]
fn latency_offset_shifts_every_change() {
    let s = step_change(CHANGE, true);
    let base = run_scenario(&s, &SimParams::default()).unwrap().metrics;
    let params = SimParams { latency_offset_ms: 81.0, ..Default::default() };
    let shifted = run_scenario(&s, &params).unwrap().metrics;
    let (a, b) = (base.mean_state_change_latency_ms.unwrap(), shifted.mean_state_change_latency_ms.unwrap());
    assert!((b - a - 81.0).abs() < 1e-9);
    assert_eq!(base.accuracy_within_range, shifted.accuracy_within_range);
}

#[test]
fn more_confusion_lowers_accuracy() {
    // sign test: 30 seeds, all but a handful must get worse
    let accuracy = |confusion: f64, seed: u64| {
        let mut s = step_change(CHANGE, false);
        s.noise = NoiseModel { miss_rate: 0.1, state_confusion: confusion, seed, ..Default::default() };
        run_scenario(&s, &SimParams::default()).unwrap().metrics.accuracy_within_range.unwrap()
    };
    let (mut worse, mut better) = (0, 0);
    for seed in 0..30 {
        let (low, high) = (accuracy(0.05, seed), accuracy(0.5, seed));
        if high < low {
            worse += 1;
        } else if high > low {
            better += 1;
        }
    }
    assert!(worse >= 20 && better <= 3, "worse {worse}, better {better}");
}

#[test]
fn global_matching_beats_nearest_under_offset() {
    let s = two_light_offset(1.5, 1.0, 7);
    let global = run_scenario(&s, &SimParams::default()).unwrap().metrics;
    let nearest = run_scenario(&s, &SimParams { mode: tlight_core::association::AssociationMode::Nearest, ..Default::default() }).unwrap().metrics;
    assert_eq!(global.misassociations, 0);
    assert!(nearest.misassociations > 0);
}

#[test]
fn shifted_trace_latency_and_no_flicker() {
    let s = step_change(CHANGE, true);
    let t = trace("G1", 10_000_000_000, |t| if t < CHANGE + 150_000_000 { SignalState::Red } else { SignalState::Green });
    let m = compute_metrics(&t, &s, &[], 0.0);
    assert_eq!(m.state_changes, 1);
    assert_eq!(m.mean_state_change_latency_ms, Some(150.0));
    assert_eq!(m.flicker_count, 0);
    assert_eq!(m.accuracy_within_range, Some(198.0 / 201.0));
}

#[test]
fn single_tick_blip_is_one_flicker() {
    let s = minimal();
    let t = trace("G1", 10_000_000_000, |t| if t == 5_000_000_000 { SignalState::Green } else { SignalState::Red });
    let m = compute_metrics(&t, &s, &[], 0.0);
    assert_eq!(m.flicker_count, 1);
    assert_eq!(m.state_changes, 0);
}

#[test]
fn blip_near_a_real_change_is_not_flicker() {
    let s = step_change(CHANGE, true);
    let t = trace("G1", 10_000_000_000, |t| {
        if t == CHANGE - 300_000_000 || t >= CHANGE {
            SignalState::Green
        } else {
            SignalState::Red
        }
    });
    assert_eq!(compute_metrics(&t, &s, &[], 0.0).flicker_count, 0);
}

#[test]
fn missing_map_file_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = minimal().to_document();
    doc.map = MapSource::Path("maps/nowhere.json".into());
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    let err = load_scenario(&path).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Io);
    assert!(err.to_string().contains("nowhere.json"), "{err}");
}

#[test]
fn map_path_resolves_against_scenario_dir() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = minimal();
    let map_doc: MapDocument = scenario.map.to_document();
    std::fs::write(dir.path().join("map.json"), serde_json::to_string(&map_doc).unwrap()).unwrap();
    let mut doc = scenario.to_document();
    doc.map = MapSource::Path("map.json".into());
    let path = dir.path().join("s.json");
    std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    assert_eq!(load_scenario(&path).unwrap(), scenario);
}

#[test]
fn schedule_gap_rejected() {
    let mut doc = minimal().to_document();
    let end = doc.phases[0].intervals[0].to;
    doc.phases[0].intervals = vec![
        PhaseInterval { from: 0, to: 4_000_000_000, state: SignalState::Red },
        PhaseInterval { from: 4_500_000_000, to: end, state: SignalState::Green },
    ];
    let err = parse_scenario(&serde_json::to_string(&doc).unwrap(), "gap", Path::new(".")).unwrap_err();
    assert!(matches!(err, Error::ScheduleGap { ref group, at: 4_000_000_000 } if group == "G1"), "{err}");
}

#[test]
fn unparseable_scenario_is_parse_error() {
    let err = parse_scenario("{\"map\": 3}", "bad", Path::new(".")).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Parse);
}

#[test]
fn scenario_document_round_trips() {
    let s = two_light_offset(1.5, 1.0, 7);
    let text = serde_json::to_string(&s.to_document()).unwrap();
    assert_eq!(parse_scenario(&text, "rt", Path::new(".")).unwrap(), s);
}
