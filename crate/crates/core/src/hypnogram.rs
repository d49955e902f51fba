//! Per-epoch stage sequences: annotation expansion, R&K → AASM mapping and
//! in-bed trimming.

use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EPOCH_SECONDS;
use crate::stage::{RawStage, SleepStage};

/// 30 minutes of 30 s epochs.
pub const PAD_EPOCHS_30_MIN: usize = 60;

/// One scored interval from an annotation stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub onset: f64,
    pub duration: f64,
    pub stage: RawStage,
}

/// Raw per-epoch labels as scored, before AASM mapping.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Hypnogram {
    pub stages: Vec<RawStage>,
}

impl Hypnogram {
    pub fn new(stages: Vec<RawStage>) -> Self {
        Self { stages }
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Expands `(onset, duration, stage)` triples into one label per 30 s
    /// epoch. Annotations must tile time without gaps or overlaps, starting
    /// at the first onset.
    pub fn from_annotations(annotations: &[Annotation]) -> Result<Self> {
        let epoch = EPOCH_SECONDS as f64;
        let mut stages = Vec::new();
        let mut expected: Option<f64> = None;
        for a in annotations {
            if let Some(t) = expected {
                if (a.onset - t).abs() > 1e-6 {
                    return Err(Error::NonContiguousAnnotations { onset: a.onset });
                }
            }
            let n = a.duration / epoch;
            if a.duration < 0.0 || (n - num_traits::Float::round(n)).abs() > 1e-9 {
                return Err(Error::PartialEpoch { duration: a.duration });
            }
            stages.extend(core::iter::repeat_n(a.stage, num_traits::Float::round(n) as usize));
            expected = Some(a.onset + a.duration);
        }
        Ok(Self { stages })
    }

    /// AASM labels aligned with the raw epochs (`None` where excluded).
    pub fn aasm_labels(&self) -> Vec<Option<SleepStage>> {
        self.stages.iter().map(|s| s.to_aasm()).collect()
    }

    /// Per-stage counts of AASM-mappable epochs inside `range`.
    pub fn stage_counts(&self, range: Range<usize>) -> [usize; 5] {
        let mut counts = [0usize; 5];
        for s in self.stages[range].iter().filter_map(|s| s.to_aasm()) {
            counts[s.index()] += 1;
        }
        counts
    }
}

/// N4 merges into N3; movement and unknown epochs are removed and their raw
/// indices returned. `|mapped| + |excluded| = |input|`.
pub fn map_rk_to_aasm(h: &Hypnogram) -> (Vec<SleepStage>, Vec<usize>) {
    let mut mapped = Vec::with_capacity(h.len());
    let mut excluded = Vec::new();
    for (i, s) in h.stages.iter().enumerate() {
        match s.to_aasm() {
            Some(stage) => mapped.push(stage),
            None => excluded.push(i),
        }
    }
    (mapped, excluded)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimPolicy {
    /// From the first to the last sleep epoch.
    InBedOnly,
    /// In-bed interval widened by 30 minutes on each side.
    InBedPlus30Min,
}

/// Half-open epoch index range kept under `policy`. The in-bed interval
/// runs from the first to the last sleep epoch (any stage other than wake,
/// movement or unknown).
pub fn trim(h: &Hypnogram, policy: TrimPolicy) -> Result<Range<usize>> {
    let first = h.stages.iter().position(|s| s.is_sleep()).ok_or(Error::NoSleepFound)?;
    let end = h.stages.iter().rposition(|s| s.is_sleep()).ok_or(Error::NoSleepFound)? + 1;
    Ok(match policy {
        TrimPolicy::InBedOnly => first..end,
        TrimPolicy::InBedPlus30Min => first.saturating_sub(PAD_EPOCHS_30_MIN)..(end + PAD_EPOCHS_30_MIN).min(h.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ann(onset: f64, duration: f64, stage: RawStage) -> Annotation {
        Annotation { onset, duration, stage }
    }

    #[test]
    fn expands_annotations_per_epoch() {
        let h = Hypnogram::from_annotations(&[ann(0.0, 60.0, RawStage::W)]).unwrap();
        assert_eq!(h.stages, vec![RawStage::W, RawStage::W]);
        let h = Hypnogram::from_annotations(&[ann(0.0, 30.0, RawStage::W), ann(30.0, 30.0, RawStage::N4)]).unwrap();
        assert_eq!(h.stages, vec![RawStage::W, RawStage::N4]);
    }

    #[test]
    fn rejects_gaps_overlaps_and_partial_epochs() {
        let gap = [ann(0.0, 30.0, RawStage::W), ann(60.0, 30.0, RawStage::W)];
        assert!(matches!(
            Hypnogram::from_annotations(&gap),
            Err(Error::NonContiguousAnnotations { .. })
        ));
        let overlap = [ann(0.0, 60.0, RawStage::W), ann(30.0, 30.0, RawStage::W)];
        assert!(Hypnogram::from_annotations(&overlap).is_err());
        assert!(matches!(
            Hypnogram::from_annotations(&[ann(0.0, 45.0, RawStage::W)]),
            Err(Error::PartialEpoch { .. })
        ));
    }

    #[test]
    fn maps_rk_to_aasm() {
        let h = Hypnogram::new(vec![RawStage::W, RawStage::N4, RawStage::Movement, RawStage::R]);
        let (mapped, excluded) = map_rk_to_aasm(&h);
        assert_eq!(mapped, vec![SleepStage::W, SleepStage::N3, SleepStage::R]);
        assert_eq!(excluded, vec![2]);
        let h = Hypnogram::new(vec![RawStage::Unknown; 4]);
        let (mapped, excluded) = map_rk_to_aasm(&h);
        assert!(mapped.is_empty());
        assert_eq!(excluded, vec![0, 1, 2, 3]);
    }

    #[test]
    fn trims_to_sleep_period() {
        let mut stages = vec![RawStage::W; 100];
        stages.push(RawStage::N1);
        stages.extend(vec![RawStage::N2; 50]);
        stages.extend(vec![RawStage::W; 200]);
        let h = Hypnogram::new(stages);
        assert_eq!(trim(&h, TrimPolicy::InBedOnly).unwrap(), 100..151);
        assert_eq!(trim(&h, TrimPolicy::InBedPlus30Min).unwrap(), 40..211);
    }

    #[test]
    fn trim_clamps_and_requires_sleep() {
        let h = Hypnogram::new(vec![RawStage::W, RawStage::N2, RawStage::W]);
        assert_eq!(trim(&h, TrimPolicy::InBedPlus30Min).unwrap(), 0..3);
        let awake = Hypnogram::new(vec![RawStage::W; 10]);
        assert_eq!(trim(&awake, TrimPolicy::InBedOnly), Err(Error::NoSleepFound));
    }
}
