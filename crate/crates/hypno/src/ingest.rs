//! Recording discovery, window extraction and the on-disk window cache.

use std::path::{Path, PathBuf};

use hypno_core::dataset::{make_windows, RecordingIds, SampleBuffer, SequenceWindow};
use hypno_core::hypnogram::{trim, Hypnogram, TrimPolicy};
use hypno_core::train::RecordingData;
use hypno_core::{SleepStage, NUM_STAGES};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::edf::{parse_edf, parse_hypnogram};
use crate::error::{read, write, Error, Result};
use crate::formats::{parse_hypnogram_csv, read_window_samples, write_window_samples, WindowMeta};

const PSG_SUFFIX: &str = "-PSG.edf";
const HYP_EDF_SUFFIX: &str = "-Hypnogram.edf";
const HYP_CSV_SUFFIX: &str = "-Hypnogram.csv";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingSource {
    pub recording_id: String,
    pub subject_id: String,
    pub psg: PathBuf,
    pub hypnogram: PathBuf,
}

/// Subject of a recording id. Sleep-EDF names (`SC4ssN..`, `ST7ssN..`)
/// keep their first five characters; other ids drop everything from the
/// last underscore, so `subj03_n2` belongs to `subj03`.
pub fn subject_of(recording_id: &str) -> String {
    let b = recording_id.as_bytes();
    if b.len() >= 6
        && (recording_id.starts_with("SC4") || recording_id.starts_with("ST7"))
        && b[3..5].iter().all(u8::is_ascii_digit)
    {
        return recording_id[..5].to_owned();
    }
    match recording_id.rsplit_once('_') {
        Some((s, _)) if !s.is_empty() => s.to_owned(),
        _ => recording_id.to_owned(),
    }
}

/// Pairs every `<id>-PSG.edf` with its hypnogram: `<id>-Hypnogram.edf`,
/// `<id>-Hypnogram.csv`, or the single `-Hypnogram.edf` whose name differs
/// from the id only in its last character (the Sleep-EDF scorer suffix).
pub fn discover(dir: &Path) -> Result<Vec<RecordingSource>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    let mut out = Vec::new();
    for name in names.iter().filter(|n| n.ends_with(PSG_SUFFIX)) {
        let id = &name[..name.len() - PSG_SUFFIX.len()];
        let exact = [format!("{id}{HYP_EDF_SUFFIX}"), format!("{id}{HYP_CSV_SUFFIX}")]
            .into_iter()
            .find(|n| names.contains(n));
        let hyp = match exact {
            Some(n) => n,
            None => {
                let stem = &id[..id.len().saturating_sub(1)];
                let candidates: Vec<&String> = names
                    .iter()
                    .filter(|n| {
                        n.ends_with(HYP_EDF_SUFFIX) && n.len() == id.len() + HYP_EDF_SUFFIX.len() && n.starts_with(stem)
                    })
                    .collect();
                match candidates.as_slice() {
                    [one] => (*one).clone(),
                    [] => return Err(Error::Data(format!("{name}: no hypnogram found"))),
                    _ => return Err(Error::Data(format!("{name}: several hypnograms match"))),
                }
            }
        };
        out.push(RecordingSource {
            recording_id: id.to_owned(),
            subject_id: subject_of(id),
            psg: dir.join(name),
            hypnogram: dir.join(hyp),
        });
    }
    Ok(out)
}

/// Stage counts for one recording, in the layout of a dataset summary
/// table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingReport {
    pub recording_id: String,
    pub subject_id: String,
    pub epochs_in_file: usize,
    /// Kept epoch range `[start, end)`.
    pub range: (usize, usize),
    /// AASM-labelled epochs per stage inside the range.
    pub stage_counts: [usize; NUM_STAGES],
    /// Movement/unknown epochs inside the range.
    pub excluded: usize,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub dataset: String,
    pub channel: String,
    pub trim: TrimPolicy,
    pub input_hash: String,
    pub recordings: Vec<RecordingReport>,
    pub stage_counts: [usize; NUM_STAGES],
    pub total_epochs: usize,
    pub excluded: usize,
    pub windows: usize,
}

impl IngestReport {
    /// Per-stage totals with percentages, one stage per line.
    pub fn table(&self) -> String {
        let mut out = format!("{} ({:?}, channel {})\n", self.dataset, self.trim, self.channel);
        out.push_str(&format!("{:<6}{:>9}{:>9}\n", "stage", "epochs", "%"));
        for s in SleepStage::ALL {
            let n = self.stage_counts[s.index()];
            let pct = if self.total_epochs == 0 {
                0.0
            } else {
                100.0 * n as f64 / self.total_epochs as f64
            };
            out.push_str(&format!("{:<6}{:>9}{:>8.1}%\n", s.as_str(), n, pct));
        }
        out.push_str(&format!("{:<6}{:>9}\n", "total", self.total_epochs));
        out.push_str(&format!(
            "{} recordings, {} windows, {} excluded epochs\n",
            self.recordings.len(),
            self.windows,
            self.excluded
        ));
        out
    }
}

/// Signal and hypnogram cut to their common length. A hypnogram that
/// scores epochs beyond the end of the signal is an alignment error; an
/// unscored tail on either side is dropped.
pub fn align(mut signal: SampleBuffer, mut h: Hypnogram) -> Result<(SampleBuffer, Hypnogram)> {
    let epoch_len = signal
        .epoch_len()
        .ok_or_else(|| Error::Data(format!("sample rate {} gives a fractional epoch", signal.sample_rate)))?;
    let signal_epochs = signal.values.len() / epoch_len;
    if h.stages[signal_epochs.min(h.len())..]
        .iter()
        .any(|s| s.to_aasm().is_some())
    {
        return Err(hypno_core::Error::Alignment {
            signal_epochs,
            hypnogram_epochs: h.len(),
        }
        .into());
    }
    let n = signal_epochs.min(h.len());
    signal.values.truncate(n * epoch_len);
    h.stages.truncate(n);
    Ok((signal, h))
}

pub fn read_hypnogram(path: &Path) -> Result<Hypnogram> {
    let bytes = read(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let text = String::from_utf8(bytes).map_err(|_| Error::Data(format!("{}: not UTF-8", path.display())))?;
        parse_hypnogram_csv(&text)
    } else {
        parse_hypnogram(&bytes)
    }
}

/// One recording after trimming and window extraction.
pub struct Ingested {
    pub data: RecordingData,
    pub report: RecordingReport,
    pub sample_rate: f64,
    pub range_start: usize,
}

pub fn ingest_recording(src: &RecordingSource, channel: &str, policy: TrimPolicy) -> Result<Ingested> {
    let run = || -> Result<Ingested> {
        let edf = parse_edf(&read(&src.psg)?)?;
        let ch = edf
            .header
            .channel(channel)
            .ok_or_else(|| Error::Data(format!("no channel '{channel}'")))?;
        let signal = edf.physical(ch)?;
        if signal.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite sample".into()));
        }
        let (signal, h) = align(signal, read_hypnogram(&src.hypnogram)?)?;
        if h.is_empty() {
            return Err(Error::Data("empty hypnogram".into()));
        }
        let range = trim(&h, policy)?;
        let ids = RecordingIds {
            subject_id: src.subject_id.clone(),
            recording_id: src.recording_id.clone(),
        };
        let windows = make_windows(&signal, &h, range.clone(), &ids)?;
        let labels = h.aasm_labels()[range.clone()].to_vec();
        let report = RecordingReport {
            recording_id: src.recording_id.clone(),
            subject_id: src.subject_id.clone(),
            epochs_in_file: h.len(),
            range: (range.start, range.end),
            stage_counts: h.stage_counts(range.clone()),
            excluded: labels.iter().filter(|l| l.is_none()).count(),
            windows: windows.len(),
        };
        Ok(Ingested {
            data: RecordingData {
                subject_id: src.subject_id.clone(),
                recording_id: src.recording_id.clone(),
                labels,
                windows,
            },
            report,
            sample_rate: signal.sample_rate,
            range_start: range.start,
        })
    };
    run().map_err(|e| match e {
        Error::Io { .. } => e,
        other => Error::Data(format!("{}: {other}", src.psg.display())),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedRecording {
    pub recording_id: String,
    pub subject_id: String,
    pub sample_rate: f64,
    pub range: (usize, usize),
    /// AASM labels over the range; `null` marks excluded epochs.
    pub labels: Vec<Option<SleepStage>>,
    pub windows: Vec<WindowMeta>,
    /// Window sample file, relative to the cache directory.
    pub samples_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub version: u32,
    pub input_hash: String,
    pub recordings: Vec<CachedRecording>,
}

/// SHA-256 over the ingest settings and every input file (name and bytes).
pub fn input_hash(sources: &[RecordingSource], channel: &str, policy: TrimPolicy) -> Result<String> {
    let mut h = Sha256::new();
    h.update(CACHE_VERSION.to_le_bytes());
    h.update(channel.as_bytes());
    h.update(serde_json::to_vec(&policy)?);
    for s in sources {
        for p in [&s.psg, &s.hypnogram] {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            let bytes = read(p)?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    }
    Ok(hex::encode(h.finalize()))
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "ingest_report.json";

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSettings<'a> {
    pub input_dir: &'a Path,
    pub cache_dir: &'a Path,
    pub channel: &'a str,
    pub trim: TrimPolicy,
    pub dataset: &'a str,
}

/// Ingests every recording under `input_dir` into `cache_dir`. Returns the
/// report and whether an up-to-date cache was reused untouched.
pub fn run_ingest(s: &IngestSettings) -> Result<(IngestReport, bool)> {
    let sources = discover(s.input_dir)?;
    if sources.is_empty() {
        return Err(Error::Data(format!(
            "{}: no *{PSG_SUFFIX} recordings",
            s.input_dir.display()
        )));
    }
    let hash = input_hash(&sources, s.channel, s.trim)?;
    if let Ok(manifest) = read_manifest(s.cache_dir) {
        if manifest.input_hash == hash {
            if let Ok(bytes) = read(&s.cache_dir.join(REPORT_FILE)) {
                if let Ok(report) = serde_json::from_slice::<IngestReport>(&bytes) {
                    if report.dataset == s.dataset {
                        return Ok((report, true));
                    }
                }
            }
        }
    }
    let mut ingested = Vec::with_capacity(sources.len());
    for src in &sources {
        ingested.push(ingest_recording(src, s.channel, s.trim)?);
    }
    let mut recordings = Vec::new();
    let mut reports = Vec::new();
    for ing in &ingested {
        let file = format!("{}.win", ing.data.recording_id);
        write(&s.cache_dir.join(&file), &write_window_samples(&ing.data.windows)?)?;
        recordings.push(CachedRecording {
            recording_id: ing.data.recording_id.clone(),
            subject_id: ing.data.subject_id.clone(),
            sample_rate: ing.sample_rate,
            range: ing.report.range,
            labels: ing.data.labels.clone(),
            windows: ing.data.windows.iter().map(WindowMeta::of).collect(),
            samples_file: file,
        });
        reports.push(ing.report.clone());
    }
    let mut stage_counts = [0; NUM_STAGES];
    for r in &reports {
        for (t, c) in stage_counts.iter_mut().zip(r.stage_counts) {
            *t += c;
        }
    }
    let report = IngestReport {
        dataset: s.dataset.to_owned(),
        channel: s.channel.to_owned(),
        trim: s.trim,
        input_hash: hash.clone(),
        stage_counts,
        total_epochs: stage_counts.iter().sum(),
        excluded: reports.iter().map(|r| r.excluded).sum(),
        windows: reports.iter().map(|r| r.windows).sum(),
        recordings: reports,
    };
    write(&s.cache_dir.join(REPORT_FILE), &serde_json::to_vec_pretty(&report)?)?;
    let manifest = CacheManifest {
        version: CACHE_VERSION,
        input_hash: hash,
        recordings,
    };
    // manifest last: its presence marks a complete cache
    write(&s.cache_dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok((report, false))
}

pub fn read_manifest(cache_dir: &Path) -> Result<CacheManifest> {
    let m: CacheManifest = serde_json::from_slice(&read(&cache_dir.join(MANIFEST_FILE))?)
        .map_err(|e| Error::CorruptCache(e.to_string()))?;
    if m.version != CACHE_VERSION {
        return Err(Error::CorruptCache(format!("unsupported cache version {}", m.version)));
    }
    Ok(m)
}

/// Rebuilds one recording's windows from the cache.
pub fn load_recording(cache_dir: &Path, rec: &CachedRecording) -> Result<RecordingData> {
    let samples = read_window_samples(&read(&cache_dir.join(&rec.samples_file))?)?;
    if samples.len() != rec.windows.len() {
        return Err(Error::CorruptCache(format!(
            "{}: {} windows in the sample file, {} in the manifest",
            rec.recording_id,
            samples.len(),
            rec.windows.len()
        )));
    }
    let windows = samples
        .into_iter()
        .zip(&rec.windows)
        .map(|(samples, m)| SequenceWindow {
            samples,
            center_label: m.label,
            prev_label: m.prev,
            next_label: m.next,
            subject_id: rec.subject_id.clone(),
            recording_id: rec.recording_id.clone(),
            epoch_index: m.epoch,
        })
        .collect();
    Ok(RecordingData {
        subject_id: rec.subject_id.clone(),
        recording_id: rec.recording_id.clone(),
        labels: rec.labels.clone(),
        windows,
    })
}

pub fn load_cache(cache_dir: &Path) -> Result<(CacheManifest, Vec<RecordingData>)> {
    let manifest = read_manifest(cache_dir)?;
    let data = manifest
        .recordings
        .iter()
        .map(|r| load_recording(cache_dir, r))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use hypno_core::RawStage;

    #[test]
    fn subject_ids() {
        assert_eq!(subject_of("SC4001E0"), "SC400");
        assert_eq!(subject_of("SC4012E0"), "SC401");
        assert_eq!(subject_of("subj03_n2"), "subj03");
        assert_eq!(subject_of("night"), "night");
    }

    #[test]
    fn unscored_tails_are_dropped() {
        let sig = SampleBuffer {
            values: vec![0.0; 4 * 30],
            sample_rate: 1.0,
        };
        let h = Hypnogram::new(vec![
            RawStage::W,
            RawStage::N1,
            RawStage::N2,
            RawStage::W,
            RawStage::Unknown,
        ]);
        let (s, h2) = align(sig.clone(), h).unwrap();
        assert_eq!(h2.len(), 4);
        assert_eq!(s.values.len(), 120);
        let short = Hypnogram::new(vec![RawStage::W, RawStage::N1]);
        let (s, _) = align(sig.clone(), short).unwrap();
        assert_eq!(s.values.len(), 60);
        let long = Hypnogram::new(vec![RawStage::W; 5]);
        assert!(align(sig, long).is_err());
    }
}
