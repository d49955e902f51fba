//! Sequence-to-epoch training windows and class balancing.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypnogram::Hypnogram;
use crate::model::{EPOCH_SECONDS, WINDOW_EPOCHS};
use crate::stage::{SleepStage, NUM_STAGES};

/// One channel of samples in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBuffer {
    pub values: Vec<f32>,
    pub sample_rate: f64,
}

impl SampleBuffer {
    /// Samples per 30 s epoch, if the rate gives a whole number.
    pub fn epoch_len(&self) -> Option<usize> {
        let n = self.sample_rate * EPOCH_SECONDS as f64;
        (n >= 1.0 && num_traits::Float::fract(n) == 0.0).then_some(n as usize)
    }
}

/// Three consecutive epochs of signal labelled with the stage of the
/// central one.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceWindow {
    pub samples: Arc<[f32]>,
    pub center_label: SleepStage,
    pub prev_label: SleepStage,
    pub next_label: SleepStage,
    pub subject_id: String,
    pub recording_id: String,
    pub epoch_index: usize,
}

/// Identifiers stamped on every window cut from one recording.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingIds {
    pub subject_id: String,
    pub recording_id: String,
}

/// Cuts one window per AASM-labelled epoch in `range`. At the edges of the
/// range the missing neighbour is replaced by a copy of the edge epoch
/// (samples and label). Windows whose neighbour is a movement/unknown epoch
/// are dropped. Samples are copied verbatim.
pub fn make_windows(
    signal: &SampleBuffer,
    hypnogram: &Hypnogram,
    range: Range<usize>,
    ids: &RecordingIds,
) -> Result<Vec<SequenceWindow>> {
    let epoch_len = signal.epoch_len().ok_or_else(|| {
        Error::InvalidArgument(format!("sample rate {} gives a fractional epoch", signal.sample_rate))
    })?;
    let signal_epochs = signal.values.len() / epoch_len;
    if !signal.values.len().is_multiple_of(epoch_len) || signal_epochs != hypnogram.len() {
        return Err(Error::Alignment {
            signal_epochs,
            hypnogram_epochs: hypnogram.len(),
        });
    }
    if range.end > hypnogram.len() || range.start > range.end {
        return Err(Error::InvalidArgument(format!(
            "epoch range {range:?} outside 0..{}",
            hypnogram.len()
        )));
    }
    let labels = hypnogram.aasm_labels();
    let epoch = |i: usize| &signal.values[i * epoch_len..(i + 1) * epoch_len];
    let mut out = Vec::new();
    for t in range.clone() {
        let Some(center) = labels[t] else { continue };
        let prev = if t == range.start { t } else { t - 1 };
        let next = if t + 1 == range.end { t } else { t + 1 };
        let (Some(prev_label), Some(next_label)) = (labels[prev], labels[next]) else {
            continue;
        };
        let mut samples = Vec::with_capacity(WINDOW_EPOCHS * epoch_len);
        samples.extend_from_slice(epoch(prev));
        samples.extend_from_slice(epoch(t));
        samples.extend_from_slice(epoch(next));
        out.push(SequenceWindow {
            samples: samples.into(),
            center_label: center,
            prev_label,
            next_label,
            subject_id: ids.subject_id.clone(),
            recording_id: ids.recording_id.clone(),
            epoch_index: t,
        });
    }
    Ok(out)
}

/// Same window with every sample negated.
pub fn vertical_flip(w: &SequenceWindow) -> SequenceWindow {
    SequenceWindow {
        samples: w.samples.iter().map(|v| -v).collect::<Vec<_>>().into(),
        ..w.clone()
    }
}

pub fn stage_histogram<'a, I: IntoIterator<Item = &'a SequenceWindow>>(windows: I) -> [usize; NUM_STAGES] {
    let mut counts = [0usize; NUM_STAGES];
    for w in windows {
        counts[w.center_label.index()] += 1;
    }
    counts
}

/// Equalizes stage counts at the largest stage count. Stages below that
/// count first gain a sign-flipped copy of each of their windows; the pool
/// of originals and flips is then sampled with replacement up to the
/// target. If the pool already exceeds the target, all originals are kept
/// and a random subset of the flips fills the rest. Stages at the maximum
/// pass through untouched. Output is grouped by stage in index order.
pub fn balance_classes<R: RngCore + ?Sized>(windows: &[SequenceWindow], rng: &mut R) -> Result<Vec<SequenceWindow>> {
    let mut by_stage: [Vec<&SequenceWindow>; NUM_STAGES] = Default::default();
    for w in windows {
        by_stage[w.center_label.index()].push(w);
    }
    if let Some(i) = by_stage.iter().position(|v| v.is_empty()) {
        return Err(Error::EmptyClass(SleepStage::ALL[i]));
    }
    let target = by_stage.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::with_capacity(target * NUM_STAGES);
    for group in &by_stage {
        let n = group.len();
        out.extend(group.iter().map(|w| (*w).clone()));
        if n == target {
            continue;
        }
        let mut flips: Vec<SequenceWindow> = group.iter().map(|w| vertical_flip(w)).collect();
        if 2 * n >= target {
            let (chosen, _) = flips.partial_shuffle(rng, target - n);
            out.extend(chosen.iter().cloned());
        } else {
            let pool: Vec<&SequenceWindow> = group.iter().copied().chain(flips.iter()).collect();
            out.extend(flips.iter().cloned());
            for _ in 0..target - 2 * n {
                out.push(pool[rng.random_range(0..pool.len())].clone());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage::RawStage;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ids() -> RecordingIds {
        RecordingIds {
            subject_id: "s0".into(),
            recording_id: "r0".into(),
        }
    }

    fn buffer(epochs: usize) -> SampleBuffer {
        SampleBuffer {
            values: (0..epochs * 3000).map(|i| i as f32).collect(),
            sample_rate: 100.0,
        }
    }

    #[test]
    fn three_epoch_recording_gives_three_windows() {
        let sig = buffer(3);
        let h = Hypnogram::new(vec![RawStage::W, RawStage::N1, RawStage::N2]);
        let w = make_windows(&sig, &h, 0..3, &ids()).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(&w[1].samples[..], &sig.values[..]);
        assert_eq!(w[1].prev_label, SleepStage::W);
        assert_eq!(w[1].next_label, SleepStage::N2);
        // edge replication
        assert_eq!(w[0].samples[0..3000], w[0].samples[3000..6000]);
        assert_eq!(w[0].prev_label, SleepStage::W);
        assert_eq!(w[2].samples[6000..9000], w[2].samples[3000..6000]);
        assert_eq!(w[2].next_label, SleepStage::N2);
    }

    #[test]
    fn windows_touching_excluded_epochs_are_dropped() {
        let sig = buffer(5);
        let h = Hypnogram::new(vec![
            RawStage::W,
            RawStage::N1,
            RawStage::Movement,
            RawStage::N2,
            RawStage::N2,
        ]);
        let w = make_windows(&sig, &h, 0..5, &ids()).unwrap();
        let idx: Vec<usize> = w.iter().map(|w| w.epoch_index).collect();
        assert_eq!(idx, vec![0, 4]);
    }

    #[test]
    fn misaligned_signal_is_rejected() {
        let sig = buffer(4);
        let h = Hypnogram::new(vec![RawStage::W; 3]);
        assert!(matches!(
            make_windows(&sig, &h, 0..3, &ids()),
            Err(Error::Alignment { .. })
        ));
    }

    #[test]
    fn flip_is_an_involution() {
        let sig = buffer(3);
        let h = Hypnogram::new(vec![RawStage::W; 3]);
        let w = make_windows(&sig, &h, 0..3, &ids()).unwrap().remove(1);
        assert_eq!(vertical_flip(&vertical_flip(&w)), w);
        let zero = SequenceWindow {
            samples: vec![0.0f32; 9000].into(),
            ..w.clone()
        };
        assert!(vertical_flip(&zero).samples.iter().all(|v| *v == 0.0));
    }

    fn labelled(stage: SleepStage, tag: f32) -> SequenceWindow {
        SequenceWindow {
            samples: vec![tag, tag + 0.5, -tag].into(),
            center_label: stage,
            prev_label: stage,
            next_label: stage,
            subject_id: "s".into(),
            recording_id: "r".into(),
            epoch_index: 0,
        }
    }

    #[test]
    fn balancing_reaches_the_majority_count() {
        let mut ws = Vec::new();
        for (stage, n) in [
            (SleepStage::W, 10),
            (SleepStage::N1, 2),
            (SleepStage::N2, 10),
            (SleepStage::N3, 10),
            (SleepStage::R, 10),
        ] {
            for i in 0..n {
                ws.push(labelled(stage, (stage.index() * 100 + i) as f32 + 1.0));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = balance_classes(&ws, &mut rng).unwrap();
        assert_eq!(stage_histogram(&out), [10; 5]);
        let n1: Vec<_> = out.iter().filter(|w| w.center_label == SleepStage::N1).collect();
        // both originals and both flips are in the pool
        for orig in ws.iter().filter(|w| w.center_label == SleepStage::N1) {
            assert!(n1.iter().any(|w| w.samples == orig.samples));
            assert!(n1.iter().any(|w| w.samples == vertical_flip(orig).samples));
        }
        // majority classes are untouched
        let w_out: Vec<_> = out.iter().filter(|w| w.center_label == SleepStage::W).collect();
        let w_in: Vec<_> = ws.iter().filter(|w| w.center_label == SleepStage::W).collect();
        assert_eq!(w_out.len(), w_in.len());
        assert!(w_out.iter().zip(&w_in).all(|(a, b)| a == b));
    }

    #[test]
    fn already_balanced_input_is_unchanged() {
        let ws: Vec<_> = SleepStage::ALL.iter().map(|&s| labelled(s, 1.0)).collect();
        let out = balance_classes(&ws, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out, ws);
    }

    #[test]
    fn missing_stage_is_an_error() {
        let ws: Vec<_> = SleepStage::ALL[..4].iter().map(|&s| labelled(s, 1.0)).collect();
        assert_eq!(
            balance_classes(&ws, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::EmptyClass(SleepStage::R))
        );
    }
}
