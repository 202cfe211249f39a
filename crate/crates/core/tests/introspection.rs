mod common;

use common::*;
use proptest::prelude::*;
use workbench::docs::DocStore;
use workbench::error::ErrorCode;
use workbench::graph::NodeKind;
use workbench::introspection::*;
use workbench::runlog::{RunLog, RunMeta};
use workbench::taxonomy;

fn meta() -> RunMeta {
    RunMeta {
        run_id: "run".into(),
        created_at: "2026-01-01T00:00:00Z".into(),
        dataset_id: "bars8".into(),
        graph_fingerprint: "g".into(),
        source_state: None,
        final_state: None,
        diverged: false,
    }
}

/// Run whose `logits` weights take the given values at consecutive checkpoints
/// and whose logged summaries follow the same values.
fn run_with(dir: &std::path::Path, checkpoints: &[Vec<f64>]) -> RunLog {
    let mut log = RunLog::create(dir.join("run"), &meta()).unwrap();
    for (step, w) in checkpoints.iter().enumerate() {
        let s = linear_model(&w.iter().map(|v| vec![*v]).collect::<Vec<_>>(), &[0.0]);
        log.log_step(&s, step as u64 * 10).unwrap();
        log.save_checkpoint(&s, step as u64 * 10).unwrap();
    }
    RunLog::open(dir.join("run")).unwrap()
}

fn scan(r: &IntrospectionResult) -> (f64, Vec<usize>) {
    match &r.payload {
        IntrospectionPayload::WeightScan {
            fraction,
            flagged_indices,
            ..
        } => (*fraction, flagged_indices.clone()),
        other => panic!("not a scan: {other:?}"),
    }
}

#[test]
fn minmax_passes_through_logged_extremes() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_with(dir.path(), &[vec![-1.0, 0.5, 3.0], vec![0.0, 2.0, 5.0]]);
    let r = minmax(&run, "logits/weights").unwrap();
    assert_eq!(
        r.payload,
        IntrospectionPayload::MinMaxSeries {
            points: vec![(0, -1.0, 3.0), (10, 0.0, 5.0)]
        }
    );
    assert_eq!(minmax(&run, "missing").unwrap_err().code(), ErrorCode::NotFound);
}

#[test]
fn dead_weight_fractions() {
    let dir = tempfile::tempdir().unwrap();
    let zeros = run_with(dir.path(), &[vec![0.0; 4], vec![0.0; 4]]);
    assert_eq!(scan(&dead_weight(&zeros, "logits", ScanParams::DEAD).unwrap()), (1.0, vec![0, 1, 2, 3]));

    let dir = tempfile::tempdir().unwrap();
    let half = run_with(dir.path(), &[vec![0.5; 4], vec![0.5; 4]]);
    assert_eq!(scan(&dead_weight(&half, "logits", ScanParams::DEAD).unwrap()), (0.0, vec![]));

    let dir = tempfile::tempdir().unwrap();
    let mixed = run_with(
        dir.path(),
        &[vec![0.0, 0.3, 0.0, -0.2], vec![0.0, 0.4, 0.0, -0.1]],
    );
    assert_eq!(scan(&dead_weight(&mixed, "logits", ScanParams::DEAD).unwrap()), (0.5, vec![0, 2]));
}

#[test]
fn dead_weight_needs_small_and_frozen() {
    // index 0 small but moving by more than delta; index 1 small and frozen
    let dir = tempfile::tempdir().unwrap();
    let run = run_with(dir.path(), &[vec![0.0, 5e-4], vec![9e-4, 5e-4], vec![0.0, 5e-4]]);
    assert_eq!(scan(&dead_weight(&run, "logits", ScanParams::DEAD).unwrap()), (0.5, vec![1]));
}

#[test]
fn window_uses_only_the_latest_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_with(dir.path(), &[vec![1.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.0]]);
    let p = ScanParams { window: 2, ..ScanParams::DEAD };
    assert_eq!(scan(&dead_weight(&run, "logits", p).unwrap()), (0.5, vec![0]));
    let all = ScanParams { window: 3, ..ScanParams::DEAD };
    assert_eq!(scan(&dead_weight(&run, "logits", all).unwrap()), (0.0, vec![]));
}

#[test]
fn saturated_weight_fractions() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_with(dir.path(), &[vec![2.0; 3], vec![2.0; 3]]);
    assert_eq!(scan(&saturated_weight(&run, "logits", ScanParams::SATURATED).unwrap()).0, 1.0);

    let dir = tempfile::tempdir().unwrap();
    let run = run_with(dir.path(), &[vec![0.0; 3], vec![0.0; 3]]);
    assert_eq!(scan(&saturated_weight(&run, "logits", ScanParams::SATURATED).unwrap()).0, 0.0);

    let dir = tempfile::tempdir().unwrap();
    let run = run_with(
        dir.path(),
        &[vec![-3.0, 0.2, 1.0, 1.5], vec![-3.0, 0.2, 1.0, 2.5]],
    );
    assert_eq!(
        scan(&saturated_weight(&run, "logits", ScanParams::SATURATED).unwrap()),
        (0.5, vec![0, 2])
    );
}

#[test]
fn scans_need_two_checkpoints_and_a_real_window() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_with(dir.path(), &[vec![0.0; 2]]);
    let err = dead_weight(&run, "logits", ScanParams::DEAD).unwrap_err();
    assert_eq!(err.code(), ErrorCode::InsufficientCheckpoints);
    assert_eq!(
        saturated_weight(&run, "logits", ScanParams::SATURATED).unwrap_err().code(),
        ErrorCode::InsufficientCheckpoints
    );
    let dir = tempfile::tempdir().unwrap();
    let run = run_with(dir.path(), &[vec![0.0; 2], vec![0.0; 2]]);
    let p = ScanParams { window: 1, ..ScanParams::DEAD };
    assert_eq!(dead_weight(&run, "logits", p).unwrap_err().code(), ErrorCode::InvalidParam);
    assert_eq!(dead_weight(&run, "nope", ScanParams::DEAD).unwrap_err().code(), ErrorCode::NotFound);
}

#[test]
fn histo_trend_identity_and_single_step() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_with(dir.path(), &[vec![0.0, 0.1, 0.4, 1.0], vec![1.0, 0.3, 0.3, 0.0]]);
    let stored = run.read_histo_series("logits/weights").unwrap();
    let IntrospectionPayload::HistoTrendMatrix { edges, steps, counts } =
        histo_trend(&run, "logits/weights").unwrap().payload
    else {
        panic!()
    };
    assert_eq!(edges, stored[0].1.edges);
    assert_eq!(steps, vec![0, 10]);
    for (row, (_, h)) in counts.iter().zip(&stored) {
        for (a, b) in row.iter().zip(&h.counts) {
            assert!((a - *b as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn histo_trend_disjoint_ranges_stay_in_their_bins() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_with(dir.path(), &[vec![0.0, 0.25, 1.0], vec![10.0, 10.5, 11.0]]);
    let IntrospectionPayload::HistoTrendMatrix { edges, counts, .. } =
        histo_trend(&run, "logits/weights").unwrap().payload
    else {
        panic!()
    };
    // common bins are 11/30 wide, so [0,1] lies inside bins 0..=2 and [10,11]
    // inside bins 27..=29
    let width = 11.0 / 30.0;
    assert!((edges[1] - width).abs() < 1e-12);
    let (a, b) = (&counts[0], &counts[1]);
    assert!(a[3..].iter().all(|c| *c == 0.0));
    assert!(b[..27].iter().all(|c| *c == 0.0));
    // the source [0,1] histogram has 1 count in bin 0, 1 in bin 7, 1 in bin 29;
    // overlap fractions with the common bins give the row below
    let src_w = 1.0 / 30.0;
    let mut expected = [0.0; 3];
    for (lo, c) in [(0.0, 1.0), (7.0 * src_w, 1.0), (29.0 * src_w, 1.0)] {
        let hi: f64 = lo + src_w;
        for (t, e) in expected.iter_mut().enumerate() {
            let (tlo, thi) = (t as f64 * width, (t + 1) as f64 * width);
            let ov = hi.min(thi) - f64::max(lo, tlo);
            if ov > 0.0 {
                *e += c * ov / src_w;
            }
        }
    }
    for (got, want) in a[..3].iter().zip(expected) {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
    assert!((a.iter().sum::<f64>() - 3.0).abs() < 1e-9);
    assert!((b.iter().sum::<f64>() - 3.0).abs() < 1e-9);
}

#[test]
fn dead_and_saturated_sets_are_disjoint() {
    let mut r = rng(31);
    for _ in 0..20 {
        let n = 12;
        let base: Vec<f64> = (0..n)
            .map(|_| match rand::Rng::random_range(&mut r, 0..3) {
                0 => 0.0,
                1 => 2.0,
                _ => rand::Rng::random_range(&mut r, -3.0..3.0),
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let run = run_with(dir.path(), &[base.clone(), base]);
        let (_, dead) = scan(&dead_weight(&run, "logits", ScanParams::DEAD).unwrap());
        let (_, sat) = scan(&saturated_weight(&run, "logits", ScanParams::SATURATED).unwrap());
        assert!(dead.iter().all(|i| !sat.contains(i)));
    }
}

#[test]
fn doc_lookup() {
    let docs = DocStore::bundled();
    let conv = docs.lookup("conv2d").unwrap();
    assert_eq!(conv.title, "Convolution layer");
    assert!(!conv.references.is_empty());
    let lime = docs.lookup("lime").unwrap();
    assert!(lime
        .references
        .iter()
        .any(|r| r.contains("Local Interpretable Model-Agnostic Explanations (LIME)")));
    assert_eq!(docs.lookup("frobnicate").unwrap_err().code(), ErrorCode::NotFound);
    for kind in NodeKind::ALL {
        docs.lookup(kind.as_str()).unwrap();
    }
    for d in taxonomy::registry() {
        assert_eq!(docs.lookup(d.id).unwrap().key, d.id);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn histo_trend_conserves_row_mass(
        steps in prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 1..40), -50.0f64..50.0, 0.01f64..20.0), 1..6)
    ) {
        let dir = tempfile::tempdir().unwrap();
        let tensors: Vec<Vec<f64>> = steps
            .iter()
            .map(|(v, shift, scale)| v.iter().map(|x| x * scale + shift).collect())
            .collect();
        let mut log = RunLog::create(dir.path().join("run"), &meta()).unwrap();
        for (i, t) in tensors.iter().enumerate() {
            log.log_scalar(i as u64, "t", 0.0).unwrap();
            let rec = workbench::runlog::SummaryRecord::of(i as u64, "w", t);
            let path = dir.path().join("run").join(format!("log.{i}.jsonl"));
            std::fs::write(path, serde_json::to_string(&rec).unwrap() + "\n").unwrap();
        }
        let run = RunLog::open(dir.path().join("run")).unwrap();
        let r = histo_trend(&run, "w").unwrap();
        let mm = minmax(&run, "w").unwrap();
        let IntrospectionPayload::HistoTrendMatrix { counts, edges, .. } = r.payload else { panic!() };
        prop_assert_eq!(counts.len(), tensors.len());
        prop_assert!(edges.windows(2).all(|w| w[0] < w[1]));
        for (row, t) in counts.iter().zip(&tensors) {
            let n = t.len() as f64;
            prop_assert!((row.iter().sum::<f64>() - n).abs() <= 1e-9 * n);
        }
        let IntrospectionPayload::MinMaxSeries { points } = mm.payload else { panic!() };
        for ((_, lo, hi), t) in points.iter().zip(&tensors) {
            prop_assert!(lo <= hi);
            prop_assert_eq!(*lo, t.iter().copied().fold(f64::INFINITY, f64::min));
            prop_assert_eq!(*hi, t.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
    }
}
