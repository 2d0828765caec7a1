use std::sync::OnceLock;

use canids::attackgen::{AttackEvent, Scenario, SynthTrace};
use canids::pipeline::{self, Artifacts, Detector, RunConfig, TimedVerdict};

struct Trained {
    artifacts: Artifacts,
    thresholds: canids::detect::ThresholdSet,
    traces: Vec<SynthTrace>,
}

/// Trained once and shared by the tests in this file.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(train_small)
}

fn train_small() -> Trained {
    let scenario = Scenario::desk(60_000, 40_000, 0, 2, 21);
    let traces = scenario.generate().unwrap();
    let mut cfg = RunConfig { seed: 4, ..RunConfig::default() };
    cfg.ae.epochs = 6;
    cfg.sampling.max_train_windows = 1_500;
    cfg.sampling.max_calibration_windows = 8_000;
    let artifacts = pipeline::train(&cfg, &traces[0].records, &scenario.traffic.signal_names()).unwrap();
    let thresholds = pipeline::calibrate(&cfg, &artifacts, &traces[1].records).unwrap().thresholds;
    Trained { artifacts, thresholds, traces }
}

/// Longest run of consecutive positive windows whose steps intersect `event`.
fn longest_overlapping_run(verdicts: &[TimedVerdict], event: &AttackEvent) -> usize {
    let mut best = 0;
    let mut run = 0;
    let mut touches = false;
    for v in verdicts {
        if v.verdict.attack {
            run += 1;
            let s = v.verdict.origin_step;
            touches |= s >= event.start_step && s <= event.end_step;
            if touches {
                best = best.max(run);
            }
        } else {
            run = 0;
            touches = false;
        }
    }
    best
}

#[test]
fn plateau_gives_a_contiguous_alarm_and_streaming_matches_batch() {
    let t = trained();
    let plateau = t.traces.iter().find(|tr| tr.name == "plateau").unwrap();
    let verdicts = pipeline::detect(&t.artifacts, &t.thresholds, &plateau.records, 1, 64).unwrap();
    for event in &plateau.events {
        let run = longest_overlapping_run(&verdicts, event);
        assert!(run >= 500, "event {event:?}: longest positive run {run}");
    }

    // record-at-a-time streaming with another batch size gives the same rows
    let mut detector = Detector::new(&t.artifacts, &t.thresholds, 1, 7).unwrap();
    let mut streamed = Vec::new();
    for r in &plateau.records {
        streamed.extend(detector.push(r).unwrap());
    }
    streamed.extend(detector.flush().unwrap());
    assert_eq!(pipeline::timed_to_rows(&streamed), pipeline::timed_to_rows(&verdicts));
}

#[test]
fn saved_artifacts_score_identically() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    t.artifacts.save(dir.path()).unwrap();
    let loaded = Artifacts::load(dir.path()).unwrap();
    let trace = &t.traces[2];
    let head = &trace.records[..6_000];
    let a = pipeline::detect(&t.artifacts, &t.thresholds, head, 3, 64).unwrap();
    let b = pipeline::detect(&loaded, &t.thresholds, head, 3, 64).unwrap();
    assert!(!a.is_empty());
    assert_eq!(pipeline::timed_to_rows(&a), pipeline::timed_to_rows(&b));
}
