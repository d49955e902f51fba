use std::collections::BTreeMap;

use hypno_core::dataset::{balance_classes, make_windows, stage_histogram, RecordingIds, SequenceWindow};
use hypno_core::folds::split_subjects;
use hypno_core::model::{ArchitectureConfig, Model};
use hypno_core::smoothing::{build_conditional_matrix, SmoothingConfig};
use hypno_core::synth::synth_night;
use hypno_core::train::{
    batch_ranges, run_cross_validation, train_fold, CvConfig, IterationRecord, NoHooks, RecordingData, StopReason,
    TrainConfig, TrainHooks,
};
use hypno_core::NUM_STAGES;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FS: usize = 16;

fn architecture() -> ArchitectureConfig {
    ArchitectureConfig::for_sample_rate(FS).narrowed(16)
}

fn recording(subject: usize, epochs: usize) -> RecordingData {
    let ids = RecordingIds {
        subject_id: format!("s{subject}"),
        recording_id: format!("s{subject}_n1"),
    };
    // short nights can miss a stage; draw until all five appear
    let (hyp, windows) = (0..)
        .map(|attempt| {
            let mut rng = ChaCha8Rng::seed_from_u64(subject as u64 * 1000 + attempt);
            let (signal, hyp) = synth_night(epochs, FS, &mut rng);
            let windows = make_windows(&signal, &hyp, 0..hyp.len(), &ids).unwrap();
            (hyp, windows)
        })
        .find(|(_, w)| stage_histogram(w).iter().all(|&c| c > 0))
        .unwrap();
    RecordingData {
        subject_id: ids.subject_id,
        recording_id: ids.recording_id,
        labels: hyp.aasm_labels(),
        windows,
    }
}

fn quick(max_iterations: usize, patience: usize) -> TrainConfig {
    let mut cfg = TrainConfig {
        max_iterations,
        patience,
        smoothing: SmoothingConfig::conditional(),
        ..Default::default()
    };
    cfg.optimizer.lr = 1e-3;
    cfg.optimizer.batch_size = 32;
    cfg
}

fn balanced(rec: &RecordingData, seed: u64) -> Vec<SequenceWindow> {
    balance_classes(&rec.windows, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[derive(Default)]
struct Recorder {
    batches: BTreeMap<usize, Vec<usize>>,
    iterations: Vec<IterationRecord>,
}

impl TrainHooks for Recorder {
    fn on_batch(&mut self, iteration: usize, indices: &[usize]) {
        self.batches.entry(iteration).or_default().extend_from_slice(indices);
    }
    fn on_iteration(&mut self, record: &IterationRecord) {
        self.iterations.push(record.clone());
    }
}

#[test]
fn zero_patience_stops_at_the_first_flat_pass() {
    let rec = recording(0, 120);
    let train = balanced(&rec, 1);
    let mut arch = architecture();
    // frozen model: running statistics never move and steps are below one ulp
    arch.bn_decay = 1.0;
    let model = Model::<f64>::build(arch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut cfg = quick(10, 0);
    cfg.optimizer.lr = 1e-30;
    let m = build_conditional_matrix([rec.labels.as_slice()]);
    let out = train_fold(model, &train, &rec.windows, &cfg, Some(&m), &mut NoHooks).unwrap();
    assert_eq!(out.log.records.len(), 2);
    assert_eq!(out.log.best_iteration, 1);
    assert!(out.log.records[0].improved && !out.log.records[1].improved);
    assert_eq!(out.log.stop_reason, StopReason::Patience);
}

#[test]
fn every_pass_visits_each_window_once_and_stopping_is_consistent() {
    let rec = recording(1, 100);
    let train = balanced(&rec, 2);
    let model = Model::<f32>::build(architecture(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let cfg = quick(4, 1);
    let m = build_conditional_matrix([rec.labels.as_slice()]);
    let mut hooks = Recorder::default();
    let out = train_fold(model, &train, &rec.windows, &cfg, Some(&m), &mut hooks).unwrap();
    for seen in hooks.batches.values() {
        let mut s = seen.clone();
        s.sort();
        assert_eq!(s, (0..train.len()).collect::<Vec<_>>());
    }
    assert_eq!(hooks.iterations, out.log.records);
    let last = out.log.records.last().unwrap().iteration;
    match out.log.stop_reason {
        StopReason::Patience => assert_eq!(last - out.log.best_iteration, cfg.patience + 1),
        StopReason::MaxIterations => {
            assert_eq!(last, cfg.max_iterations);
            assert!(last - out.log.best_iteration <= cfg.patience);
        }
    }
    let best = out.log.records[out.log.best_iteration - 1].val_macro_f1;
    assert!(out.log.records.iter().all(|r| r.val_macro_f1 <= best));
    assert_eq!(out.log.best_score, best);
    assert!(out.log.records.iter().all(|r| r.train_loss.is_finite()));
}

#[test]
fn training_is_deterministic() {
    let rec = recording(2, 90);
    let train = balanced(&rec, 3);
    let cfg = quick(2, 2);
    let m = build_conditional_matrix([rec.labels.as_slice()]);
    let run = || {
        let model = Model::<f32>::build(architecture(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        train_fold(model, &train, &rec.windows, &cfg, Some(&m), &mut NoHooks).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.log, b.log);
    for (pa, pb) in a.best.params().iter().zip(b.best.params().iter()) {
        assert_eq!(pa.value.data(), pb.value.data(), "{}", pa.name);
    }
    let sa: Vec<_> = a
        .best
        .batchnorm_states()
        .map(|(n, s)| (n.to_string(), format!("{s:?}")))
        .collect();
    let sb: Vec<_> = b
        .best
        .batchnorm_states()
        .map(|(n, s)| (n.to_string(), format!("{s:?}")))
        .collect();
    assert_eq!(sa, sb);
}

#[test]
fn cross_validation_tests_every_subject_once() {
    let recordings: Vec<RecordingData> = (0..4).map(|s| recording(s, 60)).collect();
    let subjects: Vec<String> = recordings.iter().map(|r| r.subject_id.clone()).collect();
    let plan = split_subjects(&subjects, 2, 1, 7).unwrap();
    let cfg = CvConfig {
        train: quick(1, 0),
        architecture: architecture(),
        mc: None,
    };
    let mut seen_folds = Vec::new();
    let cv = run_cross_validation::<f32>(&plan, &recordings, &cfg, |f| {
        seen_folds.push(f.fold_id);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen_folds, vec![0, 1]);
    let total: usize = recordings.iter().map(|r| r.windows.len()).sum();
    assert_eq!(cv.pooled.len(), total);
    assert_eq!(cv.pooled_confusion().total(), total as u64);
    let mut tested: Vec<&str> = cv.pooled.iter().map(|p| p.recording_id.as_str()).collect();
    tested.dedup();
    tested.sort();
    tested.dedup();
    assert_eq!(tested.len(), 4);
    for (fold, result) in plan.folds.iter().zip(&cv.folds) {
        let train_labels: Vec<&[_]> = recordings
            .iter()
            .filter(|r| fold.train.contains(&r.subject_id))
            .map(|r| r.labels.as_slice())
            .collect();
        assert_eq!(result.matrix.as_ref().unwrap(), &build_conditional_matrix(train_labels));
        for p in &result.predictions {
            let subject = p.recording_id.split('_').next().unwrap();
            assert!(fold.test.iter().any(|s| s == subject));
        }
        let counts = result.outcome.log.train_counts;
        assert!(counts.iter().all(|&c| c == counts[0]));
    }
}

proptest! {
    #[test]
    fn batches_partition_the_range(n in 1usize..1000, size in 2usize..150) {
        let ranges = batch_ranges(n, size);
        let mut next = 0;
        for r in &ranges {
            prop_assert_eq!(r.start, next);
            prop_assert!(r.len() >= 2 || n == 1);
            prop_assert!(r.len() <= size + 1);
            next = r.end;
        }
        prop_assert_eq!(next, n);
    }

    #[test]
    fn folds_cover_subjects(n in 3usize..30, k_raw in 2usize..30, v in 0usize..3, seed in any::<u64>()) {
        let k = k_raw.min(n);
        let subjects: Vec<String> = (0..n).map(|i| format!("s{i:02}")).collect();
        let Ok(plan) = split_subjects(&subjects, k, v, seed) else {
            // only rejected when nobody would be left to train
            prop_assert!(n.div_ceil(k) + v >= n);
            return Ok(());
        };
        let mut tested: Vec<&String> = plan.folds.iter().flat_map(|f| &f.test).collect();
        tested.sort();
        prop_assert_eq!(tested, subjects.iter().collect::<Vec<_>>());
        let sizes: Vec<usize> = plan.folds.iter().map(|f| f.test.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in &plan.folds {
            prop_assert_eq!(f.validation.len(), v);
            prop_assert_eq!(f.train.len() + f.validation.len() + f.test.len(), n);
        }
        prop_assert_eq!(split_subjects(&subjects, k, v, seed).unwrap(), plan);
    }

    #[test]
    fn balancing_equalizes_and_keeps_originals(counts in prop::collection::vec(1usize..40, NUM_STAGES), seed in any::<u64>()) {
        let mut windows = Vec::new();
        for (k, &c) in counts.iter().enumerate() {
            for i in 0..c {
                windows.push(SequenceWindow {
                    samples: vec![(k * 100 + i) as f32 + 1.0; 3].into(),
                    center_label: hypno_core::SleepStage::ALL[k],
                    prev_label: hypno_core::SleepStage::W,
                    next_label: hypno_core::SleepStage::W,
                    subject_id: "s".into(),
                    recording_id: "r".into(),
                    epoch_index: i,
                });
            }
        }
        let out = balance_classes(&windows, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let max = *counts.iter().max().unwrap();
        prop_assert_eq!(stage_histogram(&out), [max; NUM_STAGES]);
        for w in &windows {
            prop_assert!(out.contains(w));
        }
        // anything added is an original or its negation
        for w in &out {
            let v = w.samples[0].abs();
            prop_assert!(windows.iter().any(|o| o.samples[0] == v && o.center_label == w.center_label));
        }
    }
}
