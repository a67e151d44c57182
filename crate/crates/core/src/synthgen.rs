//! Seeded synthetic wake-word corpus with per-class playback colorations.
//!
//! Every clip starts from the same kind of voice-like source (a jittered harmonic
//! series through two fixed formant resonators) and is then passed through the
//! channel profile of its class:
//!
//! 1. second-order Butterworth high-pass
//! 2. second-order Butterworth low-pass
//! 3. memoryless cubic nonlinearity `y = x - g x^3`
//! 4. exponentially decaying noise reverberation tail
//! 5. additive white noise at a fixed SNR
//! 6. peak renormalization
//!
//! A high-pass cutoff at or below 1 Hz and a low-pass cutoff at Nyquist disable
//! the respective filter, which is how the live-human profile is expressed.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::corpus::{self, AudioClip, CorpusManifest, SampleRecord, SourceLabel, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const NYQUIST: f64 = SAMPLE_RATE as f64 / 2.0;
pub const NEUTRAL_HIGHPASS_HZ: f64 = 1.0;
pub const FORMANTS_HZ: [f64; 2] = [700.0, 1200.0];
pub const FORMANT_BANDWIDTH_HZ: f64 = 100.0;
/// Amplitude of the reverberation tail relative to the direct path.
pub const REVERB_TAIL_GAIN: f64 = 0.03;
pub const MANIFEST_FILE: &str = "manifest.csv";

const F0_LIMITS: (f64, f64) = (60.0, 400.0);
const DURATION_LIMITS: (f64, f64) = (0.4, 2.0);
/// Harmonics are kept below this to stay clear of aliasing under jitter.
const HARMONIC_CEILING_HZ: f64 = 7800.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelProfile {
    pub highpass_cutoff: f64,
    pub lowpass_cutoff: f64,
    pub nonlinearity_gain: f64,
    pub reverb_rt60: f64,
    /// dB; `f64::INFINITY` adds no noise.
    pub noise_snr: f64,
}

impl ChannelProfile {
    pub const NEUTRAL: ChannelProfile = ChannelProfile {
        highpass_cutoff: NEUTRAL_HIGHPASS_HZ,
        lowpass_cutoff: NYQUIST,
        nonlinearity_gain: 0.0,
        reverb_rt60: 0.0,
        noise_snr: f64::INFINITY,
    };

    pub fn default_for(label: SourceLabel) -> Self {
        let room = ChannelProfile {
            reverb_rt60: 0.15,
            noise_snr: 35.0,
            ..ChannelProfile::NEUTRAL
        };
        match label {
            SourceLabel::Human => room,
            SourceLabel::Headphone => ChannelProfile {
                highpass_cutoff: 300.0,
                ..room
            },
            SourceLabel::Ipod => ChannelProfile {
                highpass_cutoff: 200.0,
                nonlinearity_gain: 0.2,
                ..room
            },
            SourceLabel::Loudspeaker => ChannelProfile {
                lowpass_cutoff: 4000.0,
                nonlinearity_gain: 0.4,
                reverb_rt60: 0.4,
                ..room
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.highpass_cutoff > 0.0
            && self.highpass_cutoff < self.lowpass_cutoff
            && self.lowpass_cutoff <= NYQUIST
            && self.nonlinearity_gain >= 0.0
            && self.nonlinearity_gain.is_finite()
            && self.reverb_rt60 >= 0.0
            && self.reverb_rt60.is_finite()
            && self.noise_snr > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid channel profile {self:?}"
            )))
        }
    }

    /// No filtering or distortion: only reverberation and noise.
    pub fn is_room_only(&self) -> bool {
        self.highpass_cutoff <= NEUTRAL_HIGHPASS_HZ
            && self.lowpass_cutoff >= NYQUIST
            && self.nonlinearity_gain == 0.0
    }
}

/// Controls for the voice source.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoiceParams {
    /// Maximum relative F0 deviation, redrawn every 10 ms.
    pub jitter: f64,
    /// Aspiration noise level relative to the voiced signal RMS, in dB.
    /// `f64::NEG_INFINITY` disables it.
    pub aspiration_db: f64,
}

impl Default for VoiceParams {
    fn default() -> Self {
        VoiceParams {
            jitter: 0.02,
            aspiration_db: -30.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_per_class: usize,
    pub seed: u64,
    pub f0_range: (f64, f64),
    pub duration_range: (f64, f64),
    pub profiles: BTreeMap<SourceLabel, ChannelProfile>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_per_class: 60,
            seed: 42,
            f0_range: (90.0, 250.0),
            duration_range: (0.8, 1.4),
            profiles: SourceLabel::ALL
                .into_iter()
                .map(|l| (l, ChannelProfile::default_for(l)))
                .collect(),
        }
    }
}

const PROFILE_KEYS: [&str; 5] = [
    "highpass_cutoff",
    "lowpass_cutoff",
    "nonlinearity_gain",
    "reverb_rt60",
    "noise_snr",
];

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_per_class == 0 {
            return bad("n_per_class must be at least 1".into());
        }
        let (f_lo, f_hi) = self.f0_range;
        if !(F0_LIMITS.0 <= f_lo && f_lo <= f_hi && f_hi <= F0_LIMITS.1) {
            return bad(format!(
                "f0 range {f_lo}..{f_hi} must lie within 60..400 Hz"
            ));
        }
        let (d_lo, d_hi) = self.duration_range;
        if !(DURATION_LIMITS.0 <= d_lo && d_lo <= d_hi && d_hi <= DURATION_LIMITS.1) {
            return bad(format!(
                "duration range {d_lo}..{d_hi} must lie within 0.4..2.0 s"
            ));
        }
        for label in SourceLabel::ALL {
            let Some(p) = self.profiles.get(&label) else {
                return bad(format!("missing channel profile for {label}"));
            };
            p.validate()?;
            if label == SourceLabel::Human && !p.is_room_only() {
                return bad("the human profile may only add reverberation and noise".into());
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SynthSpec::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Row {
                row: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected `key = value`, found {line:?}")))?;
            let number = || {
                value
                    .parse::<f64>()
                    .map_err(|_| err(format!("{key}: invalid number {value:?}")))
            };
            match key {
                "n_per_class" => {
                    spec.n_per_class = value
                        .parse()
                        .map_err(|_| err(format!("n_per_class: invalid count {value:?}")))?
                }
                "seed" => {
                    spec.seed = value
                        .parse()
                        .map_err(|_| err(format!("seed: invalid integer {value:?}")))?
                }
                "f0_min" => spec.f0_range.0 = number()?,
                "f0_max" => spec.f0_range.1 = number()?,
                "duration_min" => spec.duration_range.0 = number()?,
                "duration_max" => spec.duration_range.1 = number()?,
                _ => {
                    let (label, field) = key
                        .split_once('.')
                        .ok_or_else(|| err(format!("unknown key {key:?}")))?;
                    let label: SourceLabel = label.parse().map_err(err)?;
                    let v = number()?;
                    let p = spec
                        .profiles
                        .get_mut(&label)
                        .expect("defaults cover all labels");
                    match field {
                        "highpass_cutoff" => p.highpass_cutoff = v,
                        "lowpass_cutoff" => p.lowpass_cutoff = v,
                        "nonlinearity_gain" => p.nonlinearity_gain = v,
                        "reverb_rt60" => p.reverb_rt60 = v,
                        "noise_snr" => p.noise_snr = v,
                        _ => return Err(err(format!("unknown profile field {field:?}"))),
                    }
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Renders every key, so `parse(to_text())` reproduces the spec.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "n_per_class = {}\nseed = {}\nf0_min = {}\nf0_max = {}\nduration_min = {}\nduration_max = {}\n",
            self.n_per_class,
            self.seed,
            self.f0_range.0,
            self.f0_range.1,
            self.duration_range.0,
            self.duration_range.1
        );
        for (label, p) in &self.profiles {
            let values = [
                p.highpass_cutoff,
                p.lowpass_cutoff,
                p.nonlinearity_gain,
                p.reverb_rt60,
                p.noise_snr,
            ];
            for (key, v) in PROFILE_KEYS.iter().zip(values) {
                out.push_str(&format!("{label}.{key} = {v}\n"));
            }
        }
        out
    }
}

/// Second-order IIR section, direct form I.
#[derive(Clone, Copy, Debug)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn butterworth(cutoff: f64, highpass: bool) -> Self {
        let w0 = 2.0 * PI * cutoff / SAMPLE_RATE as f64;
        let alpha = w0.sin() / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
        let cos = w0.cos();
        let a0 = 1.0 + alpha;
        let b = if highpass {
            [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0]
        } else {
            [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0]
        };
        Biquad {
            b: b.map(|v| v / a0),
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    fn run(&self, x: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&x0| {
                let y0 = self.b[0] * x0 + self.b[1] * x1 + self.b[2] * x2
                    - self.a[0] * y1
                    - self.a[1] * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }
}

/// Second-order Butterworth high-pass; identity at or below 1 Hz.
pub fn highpass(x: &[f64], cutoff: f64) -> Vec<f64> {
    if cutoff <= NEUTRAL_HIGHPASS_HZ {
        return x.to_vec();
    }
    Biquad::butterworth(cutoff, true).run(x)
}

/// Second-order Butterworth low-pass; identity at Nyquist and above.
pub fn lowpass(x: &[f64], cutoff: f64) -> Vec<f64> {
    if cutoff >= NYQUIST {
        return x.to_vec();
    }
    Biquad::butterworth(cutoff, false).run(x)
}

pub fn cubic_distortion(x: &[f64], gain: f64) -> Vec<f64> {
    x.iter()
        .map(|&v| (v - gain * v * v * v).clamp(-1.0, 1.0))
        .collect()
}

/// Two-pole formant resonator with unit gain at DC.
fn resonate(x: &[f64], freq: f64, bandwidth: f64) -> Vec<f64> {
    let t = 1.0 / SAMPLE_RATE as f64;
    let c = -(-2.0 * PI * bandwidth * t).exp();
    let b = 2.0 * (-PI * bandwidth * t).exp() * (2.0 * PI * freq * t).cos();
    let a = 1.0 - b - c;
    let (mut y1, mut y2) = (0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = a * v + b * y1 + c * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

fn gaussian_noise<R: Rng + ?Sized>(rng: &mut R, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Linear convolution truncated to the length of `x`.
fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let full = x.len() + h.len() - 1;
    let size = full.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let pad = |v: &[f64]| {
        let mut buf: Vec<Complex64> = v.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        buf.resize(size, Complex64::new(0.0, 0.0));
        buf
    };
    let mut xa = pad(x);
    let mut ha = pad(h);
    fwd.process(&mut xa);
    fwd.process(&mut ha);
    for (a, b) in xa.iter_mut().zip(&ha) {
        *a *= b;
    }
    inv.process(&mut xa);
    xa.truncate(x.len());
    xa.iter().map(|c| c.re / size as f64).collect()
}

/// Direct path plus a Gaussian-noise tail decaying 60 dB over `rt60` seconds.
pub fn reverberate<R: Rng + ?Sized>(x: &[f64], rt60: f64, rng: &mut R) -> Vec<f64> {
    let tail_len = (rt60 * SAMPLE_RATE as f64).round() as usize;
    if tail_len == 0 || x.is_empty() {
        return x.to_vec();
    }
    let decay = (10f64.powf(-3.0)).ln() / tail_len as f64;
    let mut h = Vec::with_capacity(tail_len + 1);
    h.push(1.0);
    for n in 1..=tail_len {
        let g: f64 = rng.sample(StandardNormal);
        h.push(REVERB_TAIL_GAIN * g * (decay * n as f64).exp());
    }
    convolve_truncated(x, &h)
}

/// Harmonic voice source through two formant resonators plus aspiration noise,
/// peak-normalized.
pub fn synth_voice<R: Rng + ?Sized>(
    rng: &mut R,
    f0: f64,
    duration: f64,
    params: &VoiceParams,
) -> Result<AudioClip> {
    if !(F0_LIMITS.0..=F0_LIMITS.1).contains(&f0) {
        return Err(Error::InvalidParameter(format!(
            "f0 {f0} Hz outside 60..400"
        )));
    }
    if !(DURATION_LIMITS.0..=DURATION_LIMITS.1).contains(&duration) {
        return Err(Error::InvalidParameter(format!(
            "duration {duration} s outside 0.4..2.0"
        )));
    }
    let fs = SAMPLE_RATE as f64;
    let n = (duration * fs).round() as usize;
    let block = SAMPLE_RATE as usize / 100;
    let n_harmonics = (HARMONIC_CEILING_HZ / (f0 * (1.0 + params.jitter)))
        .floor()
        .max(1.0) as usize;

    let mut source = Vec::with_capacity(n);
    let mut phase = 0.0f64;
    let mut freq = f0;
    for i in 0..n {
        if i % block == 0 && params.jitter > 0.0 {
            freq = f0 * (1.0 + params.jitter * rng.random_range(-1.0..=1.0));
        }
        let s: f64 = (1..=n_harmonics)
            .map(|k| (k as f64 * phase).sin() / k as f64)
            .sum();
        source.push(s);
        phase = (phase + 2.0 * PI * freq / fs).rem_euclid(2.0 * PI);
    }

    let mut voiced = source;
    for formant in FORMANTS_HZ {
        voiced = resonate(&voiced, formant, FORMANT_BANDWIDTH_HZ);
    }
    if params.aspiration_db.is_finite() {
        let std = (mean_power(&voiced) * 10f64.powf(params.aspiration_db / 10.0)).sqrt();
        let noise = gaussian_noise(rng, n, std);
        voiced.iter_mut().zip(noise).for_each(|(v, e)| *v += e);
    }
    corpus::normalize_peak(&AudioClip::new("voice", voiced))
}

/// Applies the playback coloration chain and renormalizes the peak.
pub fn apply_channel<R: Rng + ?Sized>(
    clip: &AudioClip,
    profile: &ChannelProfile,
    rng: &mut R,
) -> Result<AudioClip> {
    profile.validate()?;
    if clip.sample_rate != SAMPLE_RATE {
        return Err(Error::InvalidParameter(format!(
            "channel simulation expects {SAMPLE_RATE} Hz, got {}",
            clip.sample_rate
        )));
    }
    let mut x = highpass(&clip.samples, profile.highpass_cutoff);
    x = lowpass(&x, profile.lowpass_cutoff);
    if profile.nonlinearity_gain > 0.0 {
        x = cubic_distortion(&x, profile.nonlinearity_gain);
    }
    x = reverberate(&x, profile.reverb_rt60, rng);
    if profile.noise_snr.is_finite() {
        let std = (mean_power(&x) / 10f64.powf(profile.noise_snr / 10.0)).sqrt();
        let noise = gaussian_noise(rng, x.len(), std);
        x.iter_mut().zip(noise).for_each(|(v, e)| *v += e);
    }
    corpus::normalize_peak(&AudioClip {
        samples: x,
        ..clip.clone()
    })
}

/// Per-record seeds, drawn sequentially from the master seed in class order.
pub fn record_seeds(spec: &SynthSpec) -> Vec<(SourceLabel, usize, u64)> {
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    SourceLabel::ALL
        .into_iter()
        .flat_map(|label| (0..spec.n_per_class).map(move |i| (label, i)))
        .map(|(label, i)| (label, i, master.next_u64()))
        .collect()
}

/// One labelled clip, fully determined by its record seed.
pub fn synth_clip(spec: &SynthSpec, label: SourceLabel, record_seed: u64) -> Result<AudioClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(record_seed);
    let f0 = rng.random_range(spec.f0_range.0..=spec.f0_range.1);
    let duration = rng.random_range(spec.duration_range.0..=spec.duration_range.1);
    let voice = synth_voice(&mut rng, f0, duration, &VoiceParams::default())?;
    let profile = spec
        .profiles
        .get(&label)
        .ok_or_else(|| Error::InvalidParameter(format!("missing channel profile for {label}")))?;
    Ok(apply_channel(&voice, profile, &mut rng)?.with_label(label))
}

pub fn clip_file_name(label: SourceLabel, index: usize) -> String {
    format!("{label}_{index:03}.wav")
}

/// Writes `n_per_class` WAVs per class plus `manifest.csv` into `out_dir`.
pub fn generate_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<CorpusManifest> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let records = record_seeds(spec)
        .into_par_iter()
        .map(|(label, index, seed)| {
            let mut clip = synth_clip(spec, label, seed)?;
            let name = clip_file_name(label, index);
            clip.id = name.clone();
            let path = out_dir.join(&name);
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            corpus::write_wav_i16(&clip, BufWriter::new(file))?;
            let mut record = SampleRecord::new(name, label);
            record.path = path;
            record.environment = Some("synthetic".into());
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = CorpusManifest { records };
    let path = out_dir.join(MANIFEST_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    corpus::write_manifest(&manifest, BufWriter::new(file))?;
    Ok(manifest)
}
