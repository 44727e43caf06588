mod common;

use std::fs;
use std::sync::Arc;

use common::{flat, hills, imagery, session, H, W};
use floodmap_core::aggregate::{mean_map, soft_labels, variance_map, AnnotationSet};
use floodmap_core::raster::{normalize, AnnotationMask, Dims, Label};
use floodmap_core::topo::build_multiscale;
use floodmap_gateway::pipeline::{
    aggregate_dataset, aggregate_masks, append_thresholds, load_bundle, load_submission, metrics, preprocess_dataset,
    save_correction, submission_ids, submit_annotation, PreprocessParams, ReplayData, Verification,
};
use floodmap_core::select::Connectivity;
use floodmap_core::session::replay;
use floodmap_gateway::Store;

fn store() -> (tempfile::TempDir, Store) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    (dir, store)
}

fn snapshot(store: &Store, id: &str) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![store.dataset_dir(id)];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn defaults_give_six_levels_and_rerun_is_idempotent() {
    let (_d, store) = store();
    let b = preprocess_dataset(&store, &hills(W, H), &imagery(W, H), &PreprocessParams::default()).unwrap();
    assert!(b.computed);
    assert_eq!(b.multiscale.levels.len(), 6);
    assert_eq!(b.meta.thresholds, vec![0.0, 0.01, 0.02, 0.04, 0.08, 0.16]);
    assert!(!b.meta.degenerate);
    let expected = build_multiscale(&normalize(&hills(W, H)), &b.meta.thresholds).unwrap();
    assert_eq!(b.multiscale, expected);

    let before = snapshot(&store, &b.meta.id);
    let again = preprocess_dataset(&store, &hills(W, H), &imagery(W, H), &PreprocessParams::default()).unwrap();
    assert!(!again.computed);
    assert_eq!(again.meta, b.meta);
    assert_eq!(again.multiscale, b.multiscale);
    assert_eq!(again.mesh, b.mesh);
    assert_eq!(again.dem, b.dem);
    assert_eq!(snapshot(&store, &b.meta.id), before);

    let loaded = load_bundle(&store, &b.meta.id).unwrap();
    assert_eq!(loaded.imagery, b.imagery);
}

#[test]
fn params_change_the_id() {
    let (_d, store) = store();
    let a = preprocess_dataset(&store, &hills(W, H), &imagery(W, H), &PreprocessParams::default()).unwrap();
    let params = PreprocessParams { mesh_max_error: 0.1, ..PreprocessParams::default() };
    let b = preprocess_dataset(&store, &hills(W, H), &imagery(W, H), &params).unwrap();
    assert_ne!(a.meta.id, b.meta.id);
    assert!(b.meta.mesh.vertices >= a.meta.mesh.vertices);
}

#[test]
fn constant_dem_is_degenerate() {
    let (_d, store) = store();
    let b = preprocess_dataset(&store, &flat(W, H), &imagery(W, H), &PreprocessParams::default()).unwrap();
    assert!(b.meta.degenerate);
    assert_eq!(b.meta.segment_counts, vec![1; 6]);
    assert_eq!(b.mesh.triangles.len(), 2);
    let ids = append_thresholds(&store, &b.meta.id, &[0.5]).unwrap();
    assert_eq!(ids.segment_counts, vec![1; 7]);
}

#[test]
fn input_errors_are_named() {
    let (_d, store) = store();
    let e = preprocess_dataset(&store, &hills(W, H), &imagery(W + 1, H), &PreprocessParams::default()).unwrap_err();
    assert_eq!(e.name(), "DimensionMismatch");
    let params = PreprocessParams { thresholds: vec![0.0, 0.2, 0.1], ..PreprocessParams::default() };
    let e = preprocess_dataset(&store, &hills(W, H), &imagery(W, H), &params).unwrap_err();
    assert_eq!(e.name(), "BadThresholds");
    let params = PreprocessParams { mesh_max_error: -1.0, ..PreprocessParams::default() };
    let e = preprocess_dataset(&store, &hills(W, H), &imagery(W, H), &params).unwrap_err();
    assert_eq!(e.name(), "BadParams");
}

#[test]
fn quota_gives_storage_full() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap().with_quota(1000);
    let e = preprocess_dataset(&store, &hills(W, H), &imagery(W, H), &PreprocessParams::default()).unwrap_err();
    assert_eq!(e.name(), "StorageFull");
    assert_eq!(fs::read_dir(dir.path().join("datasets")).unwrap().count(), 0);
}

#[test]
fn submissions_are_replay_verified() {
    let (_d, store) = store();
    let id = preprocess_dataset(&store, &hills(W, H), &imagery(W, H), &PreprocessParams::default()).unwrap().meta.id;
    let (mask, log) = session(&store, &id, 4);
    assert!(mask.labeled_count() > 0);
    let rec = submit_annotation(&store, &id, &mask, &log, Verification::Enforce).unwrap();
    assert!(rec.meta.verified);
    let back = load_submission(&store, &id, &rec.meta.id).unwrap();
    assert_eq!(back.mask, mask);
    assert_eq!(back.log, log);
    // Same pair again: same record.
    let again = submit_annotation(&store, &id, &mask, &log, Verification::Enforce).unwrap();
    assert_eq!(again.meta, rec.meta);

    let mut tampered = mask.clone();
    let i = (0..mask.labels().len()).find(|&i| mask.get(i) == Label::Unlabeled).unwrap();
    tampered.set(i, Label::Dry);
    let e = submit_annotation(&store, &id, &tampered, &log, Verification::Enforce).unwrap_err();
    assert_eq!(e.name(), "ReplayMismatch");
    assert_eq!(submission_ids(&store, &id).unwrap().len(), 1);

    let e = submit_annotation(&store, "00ff", &mask, &log, Verification::Enforce).unwrap_err();
    assert_eq!(e.name(), "UnknownDataset");
    let small = AnnotationMask::empty(Dims::new(W - 1, H));
    let e = submit_annotation(&store, &id, &small, &log, Verification::Enforce).unwrap_err();
    assert_eq!(e.name(), "DimensionMismatch");

    let legacy = submit_annotation(&store, &id, &tampered, &log, Verification::Warn).unwrap();
    assert!(!legacy.meta.verified);
    assert!(legacy.meta.warnings[0].starts_with("ReplayMismatch"));
    assert_eq!(submission_ids(&store, &id).unwrap().len(), 2);
}

#[test]
fn log_for_another_dataset_is_rejected() {
    let (_d, store) = store();
    let a = preprocess_dataset(&store, &hills(W, H), &imagery(W, H), &PreprocessParams::default()).unwrap().meta.id;
    let params = PreprocessParams { mesh_max_error: 0.25, ..PreprocessParams::default() };
    let b = preprocess_dataset(&store, &hills(W, H), &imagery(W, H), &params).unwrap().meta.id;
    let (mask, log) = session(&store, &a, 1);
    let e = submit_annotation(&store, &b, &mask, &log, Verification::Enforce).unwrap_err();
    assert_eq!(e.name(), "HeaderMismatch");
}

#[test]
fn aggregation_composes_the_module_laws() {
    let (_d, store) = store();
    let id = preprocess_dataset(&store, &hills(W, H), &imagery(W, H), &PreprocessParams::default()).unwrap().meta.id;
    let e = aggregate_dataset(&store, &id, None, 0.0).unwrap_err();
    assert_eq!(e.name(), "NoSubmissions");

    let (mask, log) = session(&store, &id, 2);
    submit_annotation(&store, &id, &mask, &log, Verification::Enforce).unwrap();
    let agg = aggregate_dataset(&store, &id, None, 0.0).unwrap();
    for i in 0..mask.labels().len() {
        if mask.get(i).is_labeled() {
            assert_eq!(agg.binarized.get(i), mask.get(i));
        }
    }
    let all = AnnotationMask::filled(mask.dims(), Label::Flooded);
    let corrected = aggregate_dataset(&store, &id, Some(&all), 0.0).unwrap();
    assert!(corrected.binarized.labels().iter().all(|&l| l == Label::Flooded));
    let wrong = AnnotationMask::empty(Dims::new(2, 2));
    assert_eq!(aggregate_dataset(&store, &id, Some(&wrong), 0.0).unwrap_err().name(), "DimensionMismatch");
}

#[test]
fn forty_five_submissions_match_direct_recomputation() {
    let (_d, store) = store();
    let id = preprocess_dataset(&store, &hills(W, H), &imagery(W, H), &PreprocessParams::default()).unwrap().meta.id;
    for k in 0..45 {
        let (mask, log) = session(&store, &id, k * 11 + 1);
        submit_annotation(&store, &id, &mask, &log, Verification::Enforce).unwrap();
    }
    // Identical sessions collapse to one record.
    let stored = submission_ids(&store, &id).unwrap().len();
    assert!(stored <= 45 && stored > 1);

    let agg = aggregate_dataset(&store, &id, None, 0.0).unwrap();
    let stored_masks: Vec<AnnotationMask> = submission_ids(&store, &id)
        .unwrap()
        .iter()
        .map(|s| load_submission(&store, &id, s).unwrap().mask)
        .collect();
    let n = stored_masks.len() as f64;
    for p in 0..W * H {
        let vals: Vec<f64> = stored_masks
            .iter()
            .map(|m| match m.get(p) {
                Label::Flooded => -1.0,
                Label::Dry => 1.0,
                Label::Unlabeled => 0.0,
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((agg.mean.values[p] - mean).abs() < 1e-12);
        assert!((agg.variance.values[p] - var).abs() < 1e-12);
    }
    let set = AnnotationSet::new(stored_masks.clone()).unwrap();
    assert_eq!(agg.variance, variance_map(&set));
    assert_eq!(agg.soft, soft_labels(&set));
    assert_eq!(aggregate_masks(stored_masks, None, 0.0).unwrap().mean, mean_map(&set));
}

#[test]
fn correction_and_metrics() {
    let (_d, store) = store();
    let id = preprocess_dataset(&store, &hills(W, H), &imagery(W, H), &PreprocessParams::default()).unwrap().meta.id;
    let mut ids = Vec::new();
    for k in [1, 8, 20] {
        let (mask, log) = session(&store, &id, k);
        ids.push(submit_annotation(&store, &id, &mask, &log, Verification::Enforce).unwrap().meta.id);
    }
    let report = metrics(&store, &id, &ids[0], 0.0).unwrap();
    assert_eq!(report.submissions.len(), 2);
    assert!(report.submissions.iter().all(|s| s.id != ids[0]));
    let dims = Dims::new(W, H);
    save_correction(&store, &id, &AnnotationMask::filled(dims, Label::Flooded)).unwrap();
    let report = metrics(&store, &id, &ids[0], 0.0).unwrap();
    assert_eq!(report.aggregate.td, 0);
    assert_eq!(report.aggregate.fd, 0);
    assert_eq!(metrics(&store, &id, "abcdef", 0.0).unwrap_err().name(), "UnknownSubmission");
}

#[test]
fn appended_levels_match_direct_build_and_old_logs_still_replay() {
    let (_d, store) = store();
    let id = preprocess_dataset(&store, &hills(W, H), &imagery(W, H), &PreprocessParams::default()).unwrap().meta.id;
    let (mask, log) = session(&store, &id, 3);

    let meta = append_thresholds(&store, &id, &[0.16, 0.32, 0.64]).unwrap();
    assert_eq!(meta.thresholds.len(), 8);
    let direct = build_multiscale(&normalize(&hills(W, H)), &meta.thresholds).unwrap();
    let data = ReplayData::load(&store, &id).unwrap();
    assert_eq!(data.segmentation, direct);
    assert_eq!(replay(&log, &data.context(Connectivity::Four)).unwrap().mask, mask);
    submit_annotation(&store, &id, &mask, &log, Verification::Enforce).unwrap();

    let e = append_thresholds(&store, &id, &[0.5]).unwrap_err();
    assert_eq!(e.name(), "BadThresholds");
    assert_eq!(append_thresholds(&store, &id, &[0.32]).unwrap(), meta);

    // A fresh store handle has no cached tree and recomputes it.
    let reopened = Store::open(store.root()).unwrap();
    let meta = append_thresholds(&reopened, &id, &[0.9]).unwrap();
    let direct = build_multiscale(&normalize(&hills(W, H)), &meta.thresholds).unwrap();
    assert_eq!(ReplayData::load(&reopened, &id).unwrap().segmentation, direct);
}

#[test]
fn concurrent_submissions_all_land() {
    let (_d, store) = store();
    let store = Arc::new(store);
    let id = preprocess_dataset(&store, &hills(W, H), &imagery(W, H), &PreprocessParams::default()).unwrap().meta.id;
    let pairs: Vec<_> = (0..8).map(|k| session(&store, &id, k * 13 + 2)).collect();
    let handles: Vec<_> = pairs
        .clone()
        .into_iter()
        .map(|(mask, log)| {
            let (store, id) = (store.clone(), id.clone());
            std::thread::spawn(move || submit_annotation(&store, &id, &mask, &log, Verification::Enforce).unwrap().meta.id)
        })
        .collect();
    let mut got: Vec<String> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    got.sort();
    got.dedup();
    assert_eq!(submission_ids(&store, &id).unwrap(), got);
}
