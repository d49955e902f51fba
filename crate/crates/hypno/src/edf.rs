//! EDF/EDF+ reading and writing.
//!
//! Files are kept as digital samples so that writing a parsed file
//! reproduces it byte for byte. Physical values are derived on demand.

use hypno_core::dataset::SampleBuffer;
use hypno_core::hypnogram::{Annotation, Hypnogram};
use hypno_core::RawStage;

use crate::error::{Error, Result};

const FIXED_HEADER: usize = 256;
const CHANNEL_HEADER: usize = 256;
/// Label of the EDF+ annotation signal.
pub const ANNOTATIONS_LABEL: &str = "EDF Annotations";

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
    pub reserved: String,
}

impl ChannelSpec {
    pub fn is_annotations(&self) -> bool {
        self.label == ANNOTATIONS_LABEL
    }

    /// Maps a digital value to physical units. The interpolation form
    /// `pmin·(1−t) + pmax·t` hits both endpoints exactly.
    pub fn to_physical(&self, digital: i16) -> f64 {
        let t = (f64::from(digital) - f64::from(self.digital_min))
            / (f64::from(self.digital_max) - f64::from(self.digital_min));
        self.physical_min * (1.0 - t) + self.physical_max * t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    /// `dd.mm.yy`.
    pub start_date: String,
    /// `hh.mm.ss`.
    pub start_time: String,
    /// `EDF+C`, `EDF+D` or blank for plain EDF.
    pub reserved: String,
    pub data_record_count: usize,
    pub data_record_duration: f64,
    pub channels: Vec<ChannelSpec>,
}

impl RecordingHeader {
    pub fn header_bytes(&self) -> usize {
        FIXED_HEADER + CHANNEL_HEADER * self.channels.len()
    }

    pub fn record_samples(&self) -> usize {
        self.channels.iter().map(|c| c.samples_per_record).sum()
    }

    pub fn channel(&self, label: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.label == label)
    }

    pub fn sample_rate(&self, channel: usize) -> f64 {
        self.channels[channel].samples_per_record as f64 / self.data_record_duration
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfFile {
    pub header: RecordingHeader,
    /// Digital samples per channel, all data records concatenated.
    pub samples: Vec<Vec<i16>>,
    /// Header bytes as read, reused on write while `header` is unchanged.
    raw_header: Option<Vec<u8>>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn field(&mut self, width: usize, name: &str) -> Result<&'a str> {
        let raw = self
            .bytes
            .get(self.pos..self.pos + width)
            .ok_or_else(|| Error::MalformedHeader(format!("header ends inside field '{name}'")))?;
        self.pos += width;
        let text = std::str::from_utf8(raw)
            .ok()
            .filter(|s| s.is_ascii())
            .ok_or_else(|| Error::MalformedHeader(format!("field '{name}' is not ASCII")))?;
        Ok(text.trim_end_matches(' '))
    }

    fn text(&mut self, width: usize, name: &str) -> Result<String> {
        self.field(width, name).map(str::to_owned)
    }

    fn number<T: std::str::FromStr>(&mut self, width: usize, name: &str) -> Result<T> {
        let s = self.field(width, name)?;
        s.trim()
            .parse()
            .map_err(|_| Error::MalformedHeader(format!("field '{name}' is not a number: {s:?}")))
    }
}

fn parse_header(bytes: &[u8]) -> Result<RecordingHeader> {
    let mut c = Cursor { bytes, pos: 0 };
    let version = c.text(8, "version")?;
    let patient_id = c.text(80, "patient")?;
    let recording_id = c.text(80, "recording")?;
    let start_date = c.text(8, "start date")?;
    let start_time = c.text(8, "start time")?;
    let header_bytes: usize = c.number(8, "header bytes")?;
    let reserved = c.text(44, "reserved")?;
    let records: i64 = c.number(8, "data records")?;
    let data_record_duration: f64 = c.number(8, "record duration")?;
    let ns: usize = c.number(4, "signal count")?;
    if records < 0 {
        return Err(Error::MalformedHeader(format!("data record count {records}")));
    }
    if header_bytes != FIXED_HEADER + CHANNEL_HEADER * ns {
        return Err(Error::MalformedHeader(format!(
            "header size {header_bytes} does not match {ns} signals"
        )));
    }
    if !(data_record_duration >= 0.0 && data_record_duration.is_finite()) {
        return Err(Error::MalformedHeader(format!(
            "record duration {data_record_duration}"
        )));
    }
    let texts = |c: &mut Cursor, width, name| (0..ns).map(|_| c.text(width, name)).collect::<Result<Vec<_>>>();
    let labels = texts(&mut c, 16, "label")?;
    let transducers = texts(&mut c, 80, "transducer")?;
    let dims = texts(&mut c, 8, "physical dimension")?;
    let pmin = (0..ns)
        .map(|_| c.number::<f64>(8, "physical min"))
        .collect::<Result<Vec<_>>>()?;
    let pmax = (0..ns)
        .map(|_| c.number::<f64>(8, "physical max"))
        .collect::<Result<Vec<_>>>()?;
    let dmin = (0..ns)
        .map(|_| c.number::<i32>(8, "digital min"))
        .collect::<Result<Vec<_>>>()?;
    let dmax = (0..ns)
        .map(|_| c.number::<i32>(8, "digital max"))
        .collect::<Result<Vec<_>>>()?;
    let prefilter = texts(&mut c, 80, "prefiltering")?;
    let spr = (0..ns)
        .map(|_| c.number::<usize>(8, "samples per record"))
        .collect::<Result<Vec<_>>>()?;
    let chan_reserved = texts(&mut c, 32, "signal reserved")?;
    let mut channels = Vec::with_capacity(ns);
    for i in 0..ns {
        let ch = ChannelSpec {
            label: labels[i].clone(),
            transducer: transducers[i].clone(),
            physical_dimension: dims[i].clone(),
            physical_min: pmin[i],
            physical_max: pmax[i],
            digital_min: dmin[i],
            digital_max: dmax[i],
            prefiltering: prefilter[i].clone(),
            samples_per_record: spr[i],
            reserved: chan_reserved[i].clone(),
        };
        if ch.physical_max.partial_cmp(&ch.physical_min) != Some(std::cmp::Ordering::Greater)
            || ch.digital_max <= ch.digital_min
        {
            return Err(Error::MalformedHeader(format!(
                "channel '{}' has an empty range",
                ch.label
            )));
        }
        if ch.digital_min < i32::from(i16::MIN) || ch.digital_max > i32::from(i16::MAX) {
            return Err(Error::MalformedHeader(format!(
                "channel '{}' digital range exceeds 16 bits",
                ch.label
            )));
        }
        if ch.samples_per_record == 0 {
            return Err(Error::MalformedHeader(format!("channel '{}' has no samples", ch.label)));
        }
        channels.push(ch);
    }
    Ok(RecordingHeader {
        version,
        patient_id,
        recording_id,
        start_date,
        start_time,
        reserved,
        data_record_count: records as usize,
        data_record_duration,
        channels,
    })
}

/// Parses a complete EDF file. Any inconsistency rejects the whole file.
pub fn parse_edf(bytes: &[u8]) -> Result<EdfFile> {
    if bytes.len() < FIXED_HEADER {
        return Err(Error::MalformedHeader(format!(
            "{} bytes is shorter than the fixed header",
            bytes.len()
        )));
    }
    let header = parse_header(bytes)?;
    let header_len = header.header_bytes();
    if bytes.len() < header_len {
        return Err(Error::MalformedHeader("file ends inside the signal headers".into()));
    }
    let record_samples = header.record_samples();
    let expected = header_len + 2 * record_samples * header.data_record_count;
    if bytes.len() != expected {
        return Err(Error::TruncatedRecord {
            expected,
            actual: bytes.len(),
        });
    }
    let mut samples: Vec<Vec<i16>> = header
        .channels
        .iter()
        .map(|c| Vec::with_capacity(c.samples_per_record * header.data_record_count))
        .collect();
    let mut words = bytes[header_len..]
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]));
    for _ in 0..header.data_record_count {
        for (ch, out) in header.channels.iter().zip(samples.iter_mut()) {
            out.extend(words.by_ref().take(ch.samples_per_record));
        }
    }
    Ok(EdfFile {
        raw_header: Some(bytes[..header_len].to_vec()),
        header,
        samples,
    })
}

fn put(out: &mut Vec<u8>, text: &str, width: usize, name: &str) -> Result<()> {
    if !text.is_ascii() || text.len() > width {
        return Err(Error::MalformedHeader(format!(
            "field '{name}' value {text:?} does not fit {width} ASCII bytes"
        )));
    }
    out.extend_from_slice(text.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - text.len()));
    Ok(())
}

/// Shortest decimal text of `v` that fits in `width` characters.
pub fn format_number(v: f64, width: usize) -> Result<String> {
    let plain = format!("{v}");
    if plain.len() <= width {
        return Ok(plain);
    }
    for decimals in (0..width).rev() {
        let s = format!("{v:.decimals$}");
        if s.len() <= width {
            return Ok(s);
        }
    }
    Err(Error::MalformedHeader(format!("{v} does not fit {width} characters")))
}

fn format_header(h: &RecordingHeader) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(h.header_bytes());
    put(&mut out, &h.version, 8, "version")?;
    put(&mut out, &h.patient_id, 80, "patient")?;
    put(&mut out, &h.recording_id, 80, "recording")?;
    put(&mut out, &h.start_date, 8, "start date")?;
    put(&mut out, &h.start_time, 8, "start time")?;
    put(&mut out, &h.header_bytes().to_string(), 8, "header bytes")?;
    put(&mut out, &h.reserved, 44, "reserved")?;
    put(&mut out, &h.data_record_count.to_string(), 8, "data records")?;
    put(
        &mut out,
        &format_number(h.data_record_duration, 8)?,
        8,
        "record duration",
    )?;
    put(&mut out, &h.channels.len().to_string(), 4, "signal count")?;
    let chans = &h.channels;
    for c in chans {
        put(&mut out, &c.label, 16, "label")?;
    }
    for c in chans {
        put(&mut out, &c.transducer, 80, "transducer")?;
    }
    for c in chans {
        put(&mut out, &c.physical_dimension, 8, "physical dimension")?;
    }
    for c in chans {
        put(&mut out, &format_number(c.physical_min, 8)?, 8, "physical min")?;
    }
    for c in chans {
        put(&mut out, &format_number(c.physical_max, 8)?, 8, "physical max")?;
    }
    for c in chans {
        put(&mut out, &c.digital_min.to_string(), 8, "digital min")?;
    }
    for c in chans {
        put(&mut out, &c.digital_max.to_string(), 8, "digital max")?;
    }
    for c in chans {
        put(&mut out, &c.prefiltering, 80, "prefiltering")?;
    }
    for c in chans {
        put(&mut out, &c.samples_per_record.to_string(), 8, "samples per record")?;
    }
    for c in chans {
        put(&mut out, &c.reserved, 32, "signal reserved")?;
    }
    Ok(out)
}

impl EdfFile {
    pub fn new(header: RecordingHeader, samples: Vec<Vec<i16>>) -> Result<Self> {
        let file = Self {
            header,
            samples,
            raw_header: None,
        };
        file.check_lengths()?;
        Ok(file)
    }

    fn check_lengths(&self) -> Result<()> {
        let h = &self.header;
        if self.samples.len() != h.channels.len() {
            return Err(Error::MalformedHeader(format!(
                "{} sample vectors for {} channels",
                self.samples.len(),
                h.channels.len()
            )));
        }
        for (c, s) in h.channels.iter().zip(&self.samples) {
            if s.len() != c.samples_per_record * h.data_record_count {
                return Err(Error::TruncatedRecord {
                    expected: c.samples_per_record * h.data_record_count,
                    actual: s.len(),
                });
            }
        }
        Ok(())
    }

    /// Serializes to EDF bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_lengths()?;
        let mut out = match &self.raw_header {
            Some(raw) if parse_header(raw).is_ok_and(|h| h == self.header) => raw.clone(),
            _ => format_header(&self.header)?,
        };
        let h = &self.header;
        out.reserve(2 * h.record_samples() * h.data_record_count);
        for r in 0..h.data_record_count {
            for (c, s) in h.channels.iter().zip(&self.samples) {
                let n = c.samples_per_record;
                for v in &s[r * n..(r + 1) * n] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    /// Physical samples of one signal channel.
    pub fn physical(&self, channel: usize) -> Result<SampleBuffer> {
        let c = &self.header.channels[channel];
        if c.is_annotations() || self.header.data_record_duration <= 0.0 {
            return Err(Error::Data(format!("channel '{}' carries no signal", c.label)));
        }
        Ok(SampleBuffer {
            values: self.samples[channel].iter().map(|&d| c.to_physical(d) as f32).collect(),
            sample_rate: self.header.sample_rate(channel),
        })
    }

    /// Bytes of one data record of the annotation channel.
    fn annotation_records(&self, channel: usize) -> impl Iterator<Item = Vec<u8>> + '_ {
        let n = self.header.channels[channel].samples_per_record;
        self.samples[channel]
            .chunks(n)
            .map(|words| words.iter().flat_map(|w| w.to_le_bytes()).collect())
    }
}

/// One time-stamped annotation list entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Tal {
    pub onset: f64,
    pub duration: Option<f64>,
    pub texts: Vec<String>,
}

fn parse_seconds(s: &str, what: &str) -> Result<f64> {
    let ok = s.len() > 1
        && (s.starts_with('+') || s.starts_with('-'))
        && s[1..].chars().all(|c| c.is_ascii_digit() || c == '.');
    if !ok && !(what == "duration" && s.chars().all(|c| c.is_ascii_digit() || c == '.') && !s.is_empty()) {
        return Err(Error::MalformedAnnotation(format!("{what} {s:?}")));
    }
    s.parse()
        .map_err(|_| Error::MalformedAnnotation(format!("{what} {s:?}")))
}

/// Splits one annotation data record into TALs. Trailing zero padding is
/// ignored.
pub fn parse_tals(record: &[u8]) -> Result<Vec<Tal>> {
    let mut out = Vec::new();
    for raw in record.split(|&b| b == 0).filter(|s| !s.is_empty()) {
        let text = std::str::from_utf8(raw).map_err(|_| Error::MalformedAnnotation("not UTF-8".into()))?;
        let mut parts = text.split('\u{14}');
        let stamp = parts.next().unwrap_or_default();
        let (onset, duration) = match stamp.split_once('\u{15}') {
            Some((o, d)) => (parse_seconds(o, "onset")?, Some(parse_seconds(d, "duration")?)),
            None => (parse_seconds(stamp, "onset")?, None),
        };
        let texts: Vec<String> = parts.filter(|s| !s.is_empty()).map(str::to_owned).collect();
        out.push(Tal { onset, duration, texts });
    }
    Ok(out)
}

/// All annotations (with text) of an EDF+ file, sorted by onset.
pub fn annotations(file: &EdfFile) -> Result<Vec<Tal>> {
    let mut out = Vec::new();
    for (i, c) in file.header.channels.iter().enumerate() {
        if !c.is_annotations() {
            continue;
        }
        for record in file.annotation_records(i) {
            out.extend(parse_tals(&record)?.into_iter().filter(|t| !t.texts.is_empty()));
        }
    }
    out.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    Ok(out)
}

/// Reads a sleep-stage hypnogram from an EDF+ annotation file. Entries
/// whose text is not a stage token are skipped only if they carry no
/// duration; a stage annotation must have one.
pub fn parse_hypnogram(bytes: &[u8]) -> Result<Hypnogram> {
    let file = parse_edf(bytes)?;
    let mut scored = Vec::new();
    for tal in annotations(&file)? {
        for text in &tal.texts {
            let stage = RawStage::from_token(text)?;
            let duration = tal.duration.ok_or_else(|| {
                Error::MalformedAnnotation(format!("stage '{text}' at {} has no duration", tal.onset))
            })?;
            scored.push(Annotation {
                onset: tal.onset,
                duration,
                stage,
            });
        }
    }
    if let Some(first) = scored.first() {
        if first.onset != 0.0 {
            return Err(Error::Core(hypno_core::Error::NonContiguousAnnotations {
                onset: first.onset,
            }));
        }
    }
    Ok(Hypnogram::from_annotations(&scored)?)
}

fn tal_bytes(onset: f64, duration: Option<f64>, texts: &[&str]) -> Vec<u8> {
    let mut s = format!("{onset:+}");
    if let Some(d) = duration {
        s.push('\u{15}');
        s.push_str(&format!("{d}"));
    }
    s.push('\u{14}');
    for t in texts {
        s.push_str(t);
        s.push('\u{14}');
    }
    let mut b = s.into_bytes();
    b.push(0);
    b
}

fn blank_header(channels: Vec<ChannelSpec>, records: usize, duration: f64, reserved: &str) -> RecordingHeader {
    RecordingHeader {
        version: "0".into(),
        patient_id: "X X X X".into(),
        recording_id: "Startdate X X X X".into(),
        start_date: "01.01.85".into(),
        start_time: "00.00.00".into(),
        reserved: reserved.into(),
        data_record_count: records,
        data_record_duration: duration,
        channels,
    }
}

/// EDF+ file holding one annotation record that lists scored stages as
/// consecutive 30 s runs.
pub fn hypnogram_to_edf(h: &Hypnogram) -> Result<EdfFile> {
    let mut bytes = tal_bytes(0.0, None, &[]);
    let mut i = 0;
    while i < h.stages.len() {
        let run = h.stages[i..].iter().take_while(|s| **s == h.stages[i]).count();
        bytes.extend(tal_bytes(
            (i * 30) as f64,
            Some((run * 30) as f64),
            &[h.stages[i].edf_token()],
        ));
        i += run;
    }
    if bytes.len() % 2 == 1 {
        bytes.push(0);
    }
    let words: Vec<i16> = bytes
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect();
    let channel = ChannelSpec {
        label: ANNOTATIONS_LABEL.into(),
        transducer: String::new(),
        physical_dimension: String::new(),
        physical_min: -1.0,
        physical_max: 1.0,
        digital_min: -32768,
        digital_max: 32767,
        prefiltering: String::new(),
        samples_per_record: words.len(),
        reserved: String::new(),
    };
    EdfFile::new(blank_header(vec![channel], 1, 0.0, "EDF+C"), vec![words])
}

/// Single-channel EDF file with 30 s data records, quantized to 16 bits over
/// `[physical_min, physical_max]`. Values outside the range are clipped.
pub fn signal_to_edf(label: &str, signal: &SampleBuffer, physical_min: f64, physical_max: f64) -> Result<EdfFile> {
    let spr = signal
        .epoch_len()
        .ok_or_else(|| Error::Data("sample rate gives a fractional epoch".into()))?;
    if !signal.values.len().is_multiple_of(spr) {
        return Err(Error::Data("signal is not a whole number of 30 s records".into()));
    }
    let (dmin, dmax) = (-32768i32, 32767i32);
    let scale = f64::from(dmax - dmin) / (physical_max - physical_min);
    let digital: Vec<i16> = signal
        .values
        .iter()
        .map(|&v| {
            let d = (f64::from(v) - physical_min) * scale + f64::from(dmin);
            d.round().clamp(f64::from(dmin), f64::from(dmax)) as i16
        })
        .collect();
    let channel = ChannelSpec {
        label: label.into(),
        transducer: "synthetic".into(),
        physical_dimension: "uV".into(),
        physical_min,
        physical_max,
        digital_min: dmin,
        digital_max: dmax,
        prefiltering: String::new(),
        samples_per_record: spr,
        reserved: String::new(),
    };
    EdfFile::new(
        blank_header(vec![channel], signal.values.len() / spr, 30.0, ""),
        vec![digital],
    )
}

/// Stage token as written in Sleep-EDF hypnograms.
trait EdfToken {
    fn edf_token(self) -> &'static str;
}

impl EdfToken for RawStage {
    fn edf_token(self) -> &'static str {
        match self {
            RawStage::W => "Sleep stage W",
            RawStage::N1 => "Sleep stage 1",
            RawStage::N2 => "Sleep stage 2",
            RawStage::N3 => "Sleep stage 3",
            RawStage::N4 => "Sleep stage 4",
            RawStage::R => "Sleep stage R",
            RawStage::Movement => "Movement time",
            RawStage::Unknown => "Sleep stage ?",
        }
    }
}
