//! Plain-text and binary side formats: CSV hypnograms, the window cache,
//! fold files and line-delimited exports.

use std::io::Write;
use std::sync::Arc;

use hypno_core::dataset::SequenceWindow;
use hypno_core::folds::{Fold, FoldPlan};
use hypno_core::hypnogram::Hypnogram;
use hypno_core::{RawStage, SleepStage};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parses `epoch_index,stage` lines. A header line starting with
/// `epoch_index` is optional; indices must run 0, 1, 2, ... in order.
pub fn parse_hypnogram_csv(text: &str) -> Result<Hypnogram> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut stages = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::Data(format!(
                "hypnogram CSV row {}: expected 2 fields",
                line + 1
            )));
        }
        if line == 0 && &record[0] == "epoch_index" {
            continue;
        }
        let index: usize = record[0].parse().map_err(|_| {
            Error::Data(format!(
                "hypnogram CSV row {}: bad epoch index {:?}",
                line + 1,
                &record[0]
            ))
        })?;
        if index != stages.len() {
            return Err(Error::Data(format!(
                "hypnogram CSV row {}: epoch {index} out of order (expected {})",
                line + 1,
                stages.len()
            )));
        }
        stages.push(RawStage::from_token(&record[1])?);
    }
    Ok(Hypnogram::new(stages))
}

pub fn hypnogram_to_csv(h: &Hypnogram) -> String {
    let mut out = String::from("epoch_index,stage\n");
    for (i, s) in h.stages.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", s.as_str()));
    }
    out
}

const WINDOW_MAGIC: &[u8; 8] = b"HYPNOWIN";
const WINDOW_VERSION: u32 = 1;

/// Window samples: 16-byte header (magic, version, samples per window, all
/// little-endian) followed by each window's samples as little-endian f32.
pub fn write_window_samples(windows: &[SequenceWindow]) -> Result<Vec<u8>> {
    let n = windows.first().map_or(0, |w| w.samples.len());
    if windows.iter().any(|w| w.samples.len() != n) {
        return Err(Error::Data("windows differ in length".into()));
    }
    let mut out = Vec::with_capacity(16 + 4 * n * windows.len());
    out.extend_from_slice(WINDOW_MAGIC);
    out.extend_from_slice(&WINDOW_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for w in windows {
        for v in w.samples.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Inverse of [`write_window_samples`].
pub fn read_window_samples(bytes: &[u8]) -> Result<Vec<Arc<[f32]>>> {
    if bytes.len() < 16 || &bytes[..8] != WINDOW_MAGIC {
        return Err(Error::CorruptCache("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != WINDOW_VERSION {
        return Err(Error::CorruptCache(format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if n == 0 {
        return if body.is_empty() {
            Ok(Vec::new())
        } else {
            Err(Error::CorruptCache("data after an empty header".into()))
        };
    }
    if !body.len().is_multiple_of(4 * n) {
        return Err(Error::CorruptCache(format!(
            "{} data bytes is not a whole number of windows",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(4 * n)
        .map(|w| {
            w.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect::<Vec<_>>()
                .into()
        })
        .collect())
}

/// Labels and position of a cached window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowMeta {
    pub epoch: usize,
    pub label: SleepStage,
    pub prev: SleepStage,
    pub next: SleepStage,
}

impl WindowMeta {
    pub fn of(w: &SequenceWindow) -> Self {
        Self {
            epoch: w.epoch_index,
            label: w.center_label,
            prev: w.prev_label,
            next: w.next_label,
        }
    }
}

fn ids(list: &[String]) -> String {
    list.join(",")
}

/// One line per fold: `fold_id;train=ids;val=ids;test=ids`, ids separated
/// by commas.
pub fn write_fold_file(plan: &FoldPlan) -> String {
    let mut out = String::new();
    for f in &plan.folds {
        out.push_str(&format!(
            "{};train={};val={};test={}\n",
            f.id,
            ids(&f.train),
            ids(&f.validation),
            ids(&f.test)
        ));
    }
    out
}

pub fn parse_fold_file(text: &str) -> Result<FoldPlan> {
    let mut folds = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |why: &str| Error::Data(format!("fold file line {}: {why}", n + 1));
        let mut parts = line.split(';');
        let id: usize = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("missing fold id"))?;
        let mut field = |key: &str| -> Result<Vec<String>> {
            let part = parts.next().ok_or_else(|| bad(&format!("missing {key}=")))?;
            let list = part
                .trim()
                .strip_prefix(key)
                .and_then(|s| s.strip_prefix('='))
                .ok_or_else(|| bad(&format!("expected {key}=")))?;
            Ok(list
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .collect())
        };
        let train = field("train")?;
        let validation = field("val")?;
        let test = field("test")?;
        if parts.next().is_some() {
            return Err(bad("trailing fields"));
        }
        folds.push(Fold {
            id,
            train,
            validation,
            test,
        });
    }
    Ok(FoldPlan::from_folds(folds)?)
}

/// Line-delimited JSON: one compact object per line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").expect("writing to a Vec cannot fail");
    }
    Ok(out)
}

pub fn from_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_hypnogram() {
        let h = parse_hypnogram_csv("epoch_index,stage\n0,W\n1,N4\n2,?\n3, R \n").unwrap();
        assert_eq!(
            h.stages,
            vec![RawStage::W, RawStage::N4, RawStage::Unknown, RawStage::R]
        );
        assert_eq!(parse_hypnogram_csv(&hypnogram_to_csv(&h)).unwrap(), h);
        assert!(parse_hypnogram_csv("0,W\n2,W\n").is_err());
        assert!(parse_hypnogram_csv("0,N9\n").is_err());
    }

    #[test]
    fn window_cache_round_trip() {
        let w = SequenceWindow {
            samples: vec![1.5f32, -0.0, f32::MIN_POSITIVE].into(),
            center_label: SleepStage::N2,
            prev_label: SleepStage::N2,
            next_label: SleepStage::R,
            subject_id: "s".into(),
            recording_id: "r".into(),
            epoch_index: 7,
        };
        let bytes = write_window_samples(&[w.clone(), w.clone()]).unwrap();
        assert_eq!(bytes.len(), 16 + 2 * 12);
        let back = read_window_samples(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(
            back[1].iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            w.samples.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(read_window_samples(&bytes[..bytes.len() - 1]).is_err());
        assert!(read_window_samples(b"HYPNOWIX\x01\0\0\0\x03\0\0\0").is_err());
    }

    #[test]
    fn fold_file_round_trip() {
        let s: Vec<String> = (0..6).map(|i| format!("s{i}")).collect();
        let plan = hypno_core::folds::split_subjects(&s, 3, 1, 9).unwrap();
        let text = write_fold_file(&plan);
        let back = parse_fold_file(&text).unwrap();
        assert_eq!(back.folds, plan.folds);
        assert!(parse_fold_file("0;train=a;val=;test=a\n").is_err());
        assert!(parse_fold_file("0;train=a;test=b\n").is_err());
    }
}
