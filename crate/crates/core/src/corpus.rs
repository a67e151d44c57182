//! Corpus ingestion: manifest CSV, WAV decoding, and peak normalization.
//!
//! Every clip leaves this module as 16 kHz mono `f64` samples. Multi-channel
//! audio is averaged to mono and other sample rates are converted by linear
//! interpolation, which is adequate for speech-band content but attenuates
//! nothing above the target Nyquist.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
/// Shortest clip accepted anywhere in the pipeline (one analysis window).
pub const MIN_CLIP_SAMPLES: usize = 512;

pub const MANIFEST_HEADER: [&str; 6] = [
    "path",
    "label",
    "position",
    "direction",
    "environment",
    "device",
];

/// Who produced the voice command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceLabel {
    Human,
    Loudspeaker,
    Ipod,
    Headphone,
}

impl SourceLabel {
    pub const ALL: [SourceLabel; 4] = [
        SourceLabel::Human,
        SourceLabel::Loudspeaker,
        SourceLabel::Ipod,
        SourceLabel::Headphone,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceLabel::Human => "human",
            SourceLabel::Loudspeaker => "loudspeaker",
            SourceLabel::Ipod => "ipod",
            SourceLabel::Headphone => "headphone",
        }
    }

    pub fn is_playback(self) -> bool {
        self != SourceLabel::Human
    }
}

impl fmt::Display for SourceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        SourceLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| {
                format!("unknown label {s:?} (expected human, loudspeaker, ipod or headphone)")
            })
    }
}

/// Recording position tag `P1`..`P22`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Position(u8);

impl Position {
    pub fn new(n: u8) -> Option<Self> {
        (1..=22).contains(&n).then_some(Position(n))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

impl FromStr for Position {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.strip_prefix('P')
            .and_then(|n| n.parse::<u8>().ok())
            .and_then(Position::new)
            .ok_or_else(|| format!("invalid position {s:?} (expected P1..P22)"))
    }
}

/// Speaker facing direction tag `1`..`5`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Direction(u8);

impl Direction {
    pub fn new(n: u8) -> Option<Self> {
        (1..=5).contains(&n).then_some(Direction(n))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.parse::<u8>()
            .ok()
            .and_then(Direction::new)
            .ok_or_else(|| format!("invalid direction {s:?} (expected 1..5)"))
    }
}

/// One manifest row.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    /// The path exactly as written in the manifest; doubles as the clip id.
    pub id: String,
    /// `id` resolved against the manifest's directory.
    pub path: PathBuf,
    pub label: SourceLabel,
    pub position: Option<Position>,
    pub direction: Option<Direction>,
    pub environment: Option<String>,
    pub device: Option<String>,
}

impl SampleRecord {
    pub fn new(id: impl Into<String>, label: SourceLabel) -> Self {
        let id = id.into();
        SampleRecord {
            path: PathBuf::from(&id),
            id,
            label,
            position: None,
            direction: None,
            environment: None,
            device: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CorpusManifest {
    pub records: Vec<SampleRecord>,
}

impl CorpusManifest {
    pub fn class_counts(&self) -> BTreeMap<SourceLabel, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.label).or_insert(0) += 1;
        }
        counts
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn optional(field: Option<&str>) -> Option<&str> {
    field.map(str::trim).filter(|s| !s.is_empty())
}

/// Parses manifest CSV text. Relative paths are resolved against `base_dir`;
/// file existence is not checked here.
pub fn parse_manifest<R: Read>(reader: R, base_dir: &Path) -> Result<CorpusManifest> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);

    let header = csv.headers()?.clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != MANIFEST_HEADER {
        return Err(Error::Row {
            row: 0,
            message: format!(
                "expected header {:?}, found {:?}",
                MANIFEST_HEADER.join(","),
                got.join(",")
            ),
        });
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in csv.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Row {
            row: row_no,
            message: e.to_string(),
        })?;
        let bad = |message: String| Error::Row {
            row: row_no,
            message,
        };

        let id = row.get(0).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(bad("empty path".into()));
        }
        if !seen.insert(id.clone()) {
            return Err(bad(format!("duplicate path {id:?}")));
        }
        let label = row.get(1).unwrap_or("").trim().parse().map_err(bad)?;
        let position = optional(row.get(2))
            .map(str::parse)
            .transpose()
            .map_err(bad)?;
        let direction = optional(row.get(3))
            .map(str::parse)
            .transpose()
            .map_err(bad)?;

        let written = PathBuf::from(&id);
        let path = if written.is_absolute() {
            written
        } else {
            base_dir.join(written)
        };
        records.push(SampleRecord {
            id,
            path,
            label,
            position,
            direction,
            environment: optional(row.get(4)).map(String::from),
            device: optional(row.get(5)).map(String::from),
        });
    }
    Ok(CorpusManifest { records })
}

/// Loads a manifest file and checks that every referenced audio file exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let manifest = parse_manifest(BufReader::new(file), base)?;
    for (i, r) in manifest.records.iter().enumerate() {
        if !r.path.is_file() {
            return Err(Error::Row {
                row: i + 1,
                message: format!("audio file not found: {}", r.path.display()),
            });
        }
    }
    Ok(manifest)
}

/// Writes the manifest using each record's `id` as the path column.
pub fn write_manifest<W: Write>(manifest: &CorpusManifest, writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(MANIFEST_HEADER)?;
    for r in &manifest.records {
        let position = r.position.map(|p| p.to_string()).unwrap_or_default();
        let direction = r.direction.map(|d| d.to_string()).unwrap_or_default();
        csv.write_record([
            r.id.as_str(),
            r.label.as_str(),
            position.as_str(),
            direction.as_str(),
            r.environment.as_deref().unwrap_or(""),
            r.device.as_deref().unwrap_or(""),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<manifest>", e))?;
    Ok(())
}

/// Mono PCM audio at [`SAMPLE_RATE`].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub id: String,
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: Option<SourceLabel>,
}

impl AudioClip {
    pub fn new(id: impl Into<String>, samples: Vec<f64>) -> Self {
        AudioClip {
            id: id.into(),
            samples,
            sample_rate: SAMPLE_RATE,
            label: None,
        }
    }

    pub fn with_label(mut self, label: SourceLabel) -> Self {
        self.label = Some(label);
        self
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Decodes a PCM WAV into interleaved-averaged mono samples and its native rate.
pub fn decode_wav<R: Read>(reader: R) -> Result<(Vec<f64>, u32)> {
    let mut wav = hound::WavReader::new(reader)?;
    let spec = wav.spec();
    if spec.channels == 0 {
        return Err(Error::UnsupportedAudio("zero channels".into()));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            if !matches!(spec.bits_per_sample, 8 | 16 | 24 | 32) {
                return Err(Error::UnsupportedAudio(format!(
                    "{}-bit integer PCM",
                    spec.bits_per_sample
                )));
            }
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            wav.samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
        hound::SampleFormat::Float => wav
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
    };

    let channels = spec.channels as usize;
    let mono = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok((mono, spec.sample_rate))
}

/// Linear-interpolation resampler.
pub fn resample_linear(samples: &[f64], from_rate: u32, to_rate: u32) -> Vec<f64> {
    if from_rate == to_rate || samples.is_empty() {
        return samples.to_vec();
    }
    let n_out = (samples.len() as u64 * to_rate as u64 / from_rate as u64) as usize;
    let step = from_rate as f64 / to_rate as f64;
    let last = samples.len() - 1;
    (0..n_out)
        .map(|i| {
            let t = i as f64 * step;
            let j = t.floor() as usize;
            if j >= last {
                return samples[last];
            }
            let frac = t - j as f64;
            samples[j] + frac * (samples[j + 1] - samples[j])
        })
        .collect()
}

/// Decodes the record's WAV file into a 16 kHz mono clip. No normalization.
pub fn load_clip(record: &SampleRecord) -> Result<AudioClip> {
    let mut clip = load_wav(&record.path)?;
    clip.id = record.id.clone();
    clip.label = Some(record.label);
    Ok(clip)
}

/// Decodes an unlabelled WAV file into a 16 kHz mono clip identified by its path.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (mono, rate) = decode_wav(BufReader::new(file))?;
    if rate == 0 {
        return Err(Error::UnsupportedAudio("sample rate 0".into()));
    }
    let samples = resample_linear(&mono, rate, SAMPLE_RATE);
    if samples.len() < MIN_CLIP_SAMPLES {
        return Err(Error::TooShort {
            len: samples.len(),
            min: MIN_CLIP_SAMPLES,
        });
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::UnsupportedAudio("non-finite sample values".into()));
    }
    Ok(AudioClip {
        id: path.display().to_string(),
        samples,
        sample_rate: SAMPLE_RATE,
        label: None,
    })
}

/// Scales the clip so its largest absolute sample is exactly 1.
pub fn normalize_peak(clip: &AudioClip) -> Result<AudioClip> {
    let peak = clip.peak();
    if peak == 0.0 || !peak.is_finite() {
        return Err(Error::Degenerate(format!(
            "clip {:?} is silent and cannot be peak-normalized",
            clip.id
        )));
    }
    let gain = 1.0 / peak;
    let samples = clip
        .samples
        .iter()
        .map(|s| (s * gain).clamp(-1.0, 1.0))
        .collect();
    Ok(AudioClip {
        samples,
        ..clip.clone()
    })
}

/// [`load_clip`] followed by [`normalize_peak`].
pub fn ingest(record: &SampleRecord) -> Result<AudioClip> {
    normalize_peak(&load_clip(record)?)
}

/// Writes a clip as 16-bit mono PCM. Samples are clamped to [-1, 1].
pub fn write_wav_i16<W: Write + std::io::Seek>(clip: &AudioClip, writer: W) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut wav = hound::WavWriter::new(writer, spec)?;
    for &s in &clip.samples {
        wav.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    wav.finalize()?;
    Ok(())
}
