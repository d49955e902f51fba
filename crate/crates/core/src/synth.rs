//! Synthetic single-channel recordings with stage-specific spectra, for
//! tests and demos.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_traits::Float;
use rand::{Rng, RngCore};

use crate::dataset::SampleBuffer;
use crate::hypnogram::Hypnogram;
use crate::model::EPOCH_SECONDS;
use crate::stage::{RawStage, SleepStage};

/// Frequency band (Hz) and amplitude (µV) of the dominant rhythm per stage.
pub fn stage_band(stage: SleepStage) -> (f64, f64, f64) {
    match stage {
        SleepStage::W => (18.0, 25.0, 20.0),
        SleepStage::N1 => (4.0, 7.0, 30.0),
        SleepStage::N2 => (11.0, 15.0, 35.0),
        SleepStage::N3 => (0.5, 2.0, 75.0),
        SleepStage::R => (7.5, 10.0, 25.0),
    }
}

/// One 30 s epoch at `fs` Hz: four sinusoids drawn from the stage band with
/// random phases, plus white noise of a fifth of the rhythm amplitude.
pub fn synth_epoch<R: RngCore + ?Sized>(stage: SleepStage, fs: usize, rng: &mut R) -> Vec<f32> {
    let (lo, hi, amp) = stage_band(stage);
    let tones: Vec<(f64, f64)> = (0..4)
        .map(|_| (rng.random_range(lo..hi), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let n = fs * EPOCH_SECONDS;
    (0..n)
        .map(|i| {
            let t = i as f64 / fs as f64;
            let s: f64 = tones.iter().map(|(f, ph)| (2.0 * PI * f * t + ph).sin()).sum::<f64>() * amp / 2.0;
            let noise = rng.random_range(-1.0..1.0) * amp * 0.2 * 3.0.sqrt();
            (s + noise) as f32
        })
        .collect()
}

/// Stage sequence for a night of `epochs` epochs: a wake margin at both
/// ends and a sleep period whose stage persists for random runs.
pub fn synth_stages<R: RngCore + ?Sized>(epochs: usize, rng: &mut R) -> Vec<SleepStage> {
    let margin = epochs / 10;
    let mut out = Vec::with_capacity(epochs);
    out.extend(core::iter::repeat_n(SleepStage::W, margin.min(epochs)));
    let mut current = SleepStage::N1;
    while out.len() < epochs.saturating_sub(margin) {
        let run = rng.random_range(2..12);
        for _ in 0..run {
            if out.len() >= epochs.saturating_sub(margin) {
                break;
            }
            out.push(current);
        }
        current = SleepStage::ALL[rng.random_range(0..SleepStage::ALL.len())];
    }
    out.resize(epochs, SleepStage::W);
    out
}

/// A full synthetic recording and its hypnogram.
pub fn synth_night<R: RngCore + ?Sized>(epochs: usize, fs: usize, rng: &mut R) -> (SampleBuffer, Hypnogram) {
    let stages = synth_stages(epochs, rng);
    let mut values = Vec::with_capacity(epochs * fs * EPOCH_SECONDS);
    for &s in &stages {
        values.extend(synth_epoch(s, fs, rng));
    }
    (
        SampleBuffer {
            values,
            sample_rate: fs as f64,
        },
        Hypnogram::new(stages.into_iter().map(RawStage::from).collect()),
    )
}
