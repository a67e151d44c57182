//! Per-frame acoustic features.
//!
//! Each 10 ms frame yields a fixed 68-slot vector:
//!
//! | slots   | feature                                   |
//! |---------|-------------------------------------------|
//! | 0       | F0 in Hz (0 when unvoiced)                |
//! | 1       | voiced/unvoiced flag                      |
//! | 2       | log energy                                |
//! | 3       | H1-H2 in dB                               |
//! | 4       | peak slope                                |
//! | 5..30   | MFCC 0-24                                 |
//! | 30..55  | harmonic phase distortion mean 0-24       |
//! | 55..68  | harmonic phase distortion deviation 0-12  |
//!
//! Harmonic slots (H1-H2 and the phase distortion statistics) are exactly zero on
//! unvoiced frames so every vector keeps the same width.

use std::f64::consts::SQRT_2;
use std::io::Write;
use std::ops::{Index, Range};
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::corpus::{AudioClip, SAMPLE_RATE};
use crate::dsp::{self, Spectrum, BIN_WIDTH, FFT_SIZE, LOG_FLOOR, NYQUIST, N_BINS};
use crate::error::{Error, Result};

pub const FRAME_DIM: usize = 68;
/// Frame width of the full 74-feature toolkit layout this one is derived from.
pub const REFERENCE_FRAME_DIM: usize = 74;

pub const F0: usize = 0;
pub const VUV: usize = 1;
pub const LOG_ENERGY: usize = 2;
pub const H1H2: usize = 3;
pub const PEAK_SLOPE: usize = 4;
pub const MFCC: Range<usize> = 5..30;
pub const HMPDM: Range<usize> = 30..55;
pub const HMPDD: Range<usize> = 55..68;

pub const F0_MIN: f64 = 50.0;
pub const F0_MAX: f64 = 500.0;
pub const VOICING_THRESHOLD: f64 = 0.45;
pub const RMS_FLOOR: f64 = 1e-4;
/// Frames on each side of the centre frame in the phase-statistics window.
const HMPD_HALF_WINDOW: usize = 2;

const PEAK_SLOPE_CENTERS: [f64; 6] = [125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0];

/// Human-readable name for a frame slot, e.g. `mfcc3` or `hmpdd0`.
pub fn slot_name(slot: usize) -> String {
    match slot {
        F0 => "f0".into(),
        VUV => "vuv".into(),
        LOG_ENERGY => "log_energy".into(),
        H1H2 => "h1h2".into(),
        PEAK_SLOPE => "peak_slope".into(),
        s if MFCC.contains(&s) => format!("mfcc{}", s - MFCC.start),
        s if HMPDM.contains(&s) => format!("hmpdm{}", s - HMPDM.start),
        s if HMPDD.contains(&s) => format!("hmpdd{}", s - HMPDD.start),
        s => panic!("frame slot {s} out of range"),
    }
}

/// Slots that are only meaningful on voiced frames.
pub fn is_voiced_only(slot: usize) -> bool {
    slot == F0 || slot == H1H2 || HMPDM.contains(&slot) || HMPDD.contains(&slot)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatureVector(pub [f64; FRAME_DIM]);

impl FrameFeatureVector {
    pub fn zeros() -> Self {
        FrameFeatureVector([0.0; FRAME_DIM])
    }

    pub fn voiced(&self) -> bool {
        self.0[VUV] == 1.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for FrameFeatureVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PitchEstimate {
    /// Hz; 0 when unvoiced.
    pub f0: f64,
    pub voiced: bool,
}

impl PitchEstimate {
    const UNVOICED: PitchEstimate = PitchEstimate {
        f0: 0.0,
        voiced: false,
    };
}

/// Autocorrelation pitch tracker over 50-500 Hz.
///
/// The frame is voiced when its RMS is at least 1e-4 and the normalized
/// autocorrelation peak reaches 0.45. The chosen lag is the first local maximum
/// within 90% of the global peak, which avoids picking period multiples, refined
/// by parabolic interpolation.
pub fn estimate_f0_vuv(frame: &[f64]) -> PitchEstimate {
    if dsp::rms(frame) < RMS_FLOOR {
        return PitchEstimate::UNVOICED;
    }
    let fs = SAMPLE_RATE as f64;
    let min_lag = (fs / F0_MAX).ceil() as usize;
    let max_lag = (fs / F0_MIN).floor() as usize;
    let r = dsp::normalized_autocorrelation(frame, min_lag, max_lag);

    let peak = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if peak.is_nan() || peak < VOICING_THRESHOLD {
        return PitchEstimate::UNVOICED;
    }
    let is_local_max =
        |i: usize| (i == 0 || r[i] >= r[i - 1]) && (i + 1 == r.len() || r[i] >= r[i + 1]);
    let Some(best) = (0..r.len()).find(|&i| r[i] >= 0.9 * peak && is_local_max(i)) else {
        return PitchEstimate::UNVOICED;
    };

    let mut lag = (best + min_lag) as f64;
    if best > 0 && best + 1 < r.len() {
        let (a, b, c) = (r[best - 1], r[best], r[best + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            lag += (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    PitchEstimate {
        f0: (fs / lag).clamp(F0_MIN, F0_MAX),
        voiced: true,
    }
}

/// MFCC 0-24 of a pre-emphasized, windowed 512-sample frame.
pub fn mfcc(frame: &[f64]) -> Result<Vec<f64>> {
    let spec = dsp::fft_spectrum(frame)?;
    Ok(dsp::dct_ii(
        &dsp::mel_filterbank_energies(&spec),
        dsp::N_CEPSTRA,
    ))
}

/// Peak magnitude near `freq`: the largest bin within one bin of it, refined by a
/// parabola through the log magnitudes of that bin and its neighbours.
fn harmonic_amplitude(spec: &Spectrum, freq: f64) -> f64 {
    let center = (freq / BIN_WIDTH).round() as isize;
    let lo = (center - 1).max(1) as usize;
    let hi = ((center + 1).max(1) as usize).min(N_BINS - 1);
    let Some(k) = (lo..=hi).max_by(|&a, &b| spec.magnitude(a).total_cmp(&spec.magnitude(b))) else {
        return 0.0;
    };
    let peak = spec.magnitude(k);
    if peak <= 0.0 || k == 0 || k + 1 >= N_BINS {
        return peak;
    }
    let (a, c) = (spec.magnitude(k - 1), spec.magnitude(k + 1));
    if a <= 0.0 || c <= 0.0 || a > peak || c > peak {
        return peak;
    }
    let (la, lb, lc) = (a.ln(), peak.ln(), c.ln());
    let denom = la - 2.0 * lb + lc;
    if denom >= 0.0 {
        return peak;
    }
    let delta = 0.5 * (la - lc) / denom;
    (lb - 0.25 * (la - lc) * delta).exp()
}

/// First-to-second harmonic amplitude ratio in dB. Zero when the second harmonic
/// lies beyond Nyquist.
pub fn h1h2(spec: &Spectrum, f0: f64) -> f64 {
    if f0 <= 0.0 || 2.0 * f0 > NYQUIST {
        return 0.0;
    }
    let a1 = harmonic_amplitude(spec, f0);
    let a2 = harmonic_amplitude(spec, 2.0 * f0);
    if a1 <= 0.0 || a2 <= 0.0 {
        return 0.0;
    }
    20.0 * (a1 / a2).log10()
}

fn inverse_plan() -> &'static Arc<dyn Fft<f64>> {
    static PLAN: OnceLock<Arc<dyn Fft<f64>>> = OnceLock::new();
    PLAN.get_or_init(|| FftPlanner::new().plan_fft_inverse(FFT_SIZE))
}

/// Octave band bins `[fc/sqrt2, fc*sqrt2)` for each peak-slope band.
fn octave_bands() -> &'static [Range<usize>; 6] {
    static BANDS: OnceLock<[Range<usize>; 6]> = OnceLock::new();
    BANDS.get_or_init(|| {
        PEAK_SLOPE_CENTERS.map(|fc| {
            let lo = (fc / SQRT_2 / BIN_WIDTH).ceil() as usize;
            let hi = (fc * SQRT_2 / BIN_WIDTH).ceil() as usize;
            lo..hi.min(N_BINS)
        })
    })
}

/// Spectral tilt from octave-band waveform peaks.
///
/// The windowed frame is split into six octave bands (centres 125-4000 Hz) by
/// masking its spectrum. Each band signal is gain-normalized to equal white-noise
/// power, its maximum absolute amplitude is taken, and the slope of
/// `log10(peak)` against `log2(centre)` is fitted by least squares.
pub fn peak_slope_from_spectrum(spec: &Spectrum) -> f64 {
    let mut peaks = [0.0; 6];
    let mut buf = vec![Complex64::new(0.0, 0.0); FFT_SIZE];
    for (band, range) in octave_bands().iter().enumerate() {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for k in range.clone() {
            buf[k] = spec.bins[k];
            if k != 0 && k != FFT_SIZE / 2 {
                buf[FFT_SIZE - k] = spec.bins[k].conj();
            }
        }
        inverse_plan().process(&mut buf);
        let gain = 1.0 / (FFT_SIZE as f64 * (range.len() as f64).sqrt());
        peaks[band] = buf.iter().fold(0.0, |m: f64, c| m.max(c.re.abs())) * gain;
    }
    if peaks.iter().all(|&p| p == 0.0) {
        return 0.0;
    }

    let xs = PEAK_SLOPE_CENTERS.map(f64::log2);
    let ys = peaks.map(|p| p.max(LOG_FLOOR).log10());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Peak slope of a windowed 512-sample frame.
pub fn peak_slope(frame: &[f64]) -> Result<f64> {
    Ok(peak_slope_from_spectrum(&dsp::fft_spectrum(frame)?))
}

/// Harmonic phase distortion statistics for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseDistortion {
    pub mean: [f64; 25],
    pub deviation: [f64; 13],
}

impl PhaseDistortion {
    fn zeros() -> Self {
        PhaseDistortion {
            mean: [0.0; 25],
            deviation: [0.0; 13],
        }
    }
}

/// Relative phase of consecutive harmonics for one frame:
/// `PD[j] = wrap(phi[j+2] - phi[j+1] - phi[1])`, where `phi[k]` is the DFT phase
/// at `k * f0`. Removing the first-harmonic phase cancels the linear-phase term,
/// so the values do not depend on where the frame starts within a period.
fn phase_distortion(frame: &[f64], f0: f64) -> [Option<f64>; 25] {
    let mut pd = [None; 25];
    let n_harmonics = ((NYQUIST / f0).floor() as usize).min(26);
    if n_harmonics < 2 {
        return pd;
    }
    let phases: Vec<f64> = (1..=n_harmonics)
        .map(|k| dsp::dft_at(frame, k as f64 * f0).arg())
        .collect();
    let phi1 = phases[0];
    for (j, slot) in pd.iter_mut().enumerate() {
        if j + 2 > n_harmonics {
            break;
        }
        *slot = Some(dsp::wrap_phase(phases[j + 1] - phases[j] - phi1));
    }
    pd
}

/// Circular mean and standard deviation `sqrt(-2 ln R)`.
fn circular_stats(angles: &[f64]) -> (f64, f64) {
    if angles.is_empty() {
        return (0.0, 0.0);
    }
    let n = angles.len() as f64;
    let s = angles.iter().map(|a| a.sin()).sum::<f64>() / n;
    let c = angles.iter().map(|a| a.cos()).sum::<f64>() / n;
    let r = (s * s + c * c).sqrt().clamp(1e-12, 1.0);
    let mean = if s == 0.0 && c == 0.0 {
        0.0
    } else {
        s.atan2(c)
    };
    (dsp::wrap_phase(mean), (-2.0 * r.ln()).max(0.0).sqrt())
}

/// Phase distortion mean (0-24) and deviation (0-12) for every frame.
///
/// `frames` are windowed frames and `f0` the matching pitch track (0 = unvoiced).
/// Statistics use the voiced frames within two frames of the centre; unvoiced
/// frames and harmonics above Nyquist yield zeros.
pub fn hmpd(frames: &[Vec<f64>], f0: &[f64]) -> Result<Vec<PhaseDistortion>> {
    if frames.len() != f0.len() {
        return Err(Error::DimensionMismatch {
            expected: frames.len(),
            got: f0.len(),
        });
    }
    let pds: Vec<[Option<f64>; 25]> = frames
        .iter()
        .zip(f0)
        .map(|(frame, &f)| {
            if f > 0.0 {
                phase_distortion(frame, f)
            } else {
                [None; 25]
            }
        })
        .collect();

    let n = frames.len();
    let mut out = Vec::with_capacity(n);
    let mut window_values = Vec::with_capacity(2 * HMPD_HALF_WINDOW + 1);
    for t in 0..n {
        let mut stats = PhaseDistortion::zeros();
        if f0[t] > 0.0 {
            let lo = t.saturating_sub(HMPD_HALF_WINDOW);
            let hi = (t + HMPD_HALF_WINDOW).min(n - 1);
            for (j, pd) in pds[t].iter().enumerate() {
                if pd.is_none() {
                    continue;
                }
                window_values.clear();
                window_values.extend((lo..=hi).filter_map(|u| pds[u][j]));
                let (mean, dev) = circular_stats(&window_values);
                stats.mean[j] = mean;
                if j < stats.deviation.len() {
                    stats.deviation[j] = dev;
                }
            }
        }
        out.push(stats);
    }
    Ok(out)
}

/// Computes the frame feature sequence of a (normalized) 16 kHz clip.
pub fn extract_frame_features(clip: &AudioClip) -> Result<Vec<FrameFeatureVector>> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(Error::InvalidParameter(format!(
            "clip {:?} is at {} Hz, expected {SAMPLE_RATE}",
            clip.id, clip.sample_rate
        )));
    }
    let (segments, grid) = dsp::frame_segments(&clip.samples)?;
    let emphasized = dsp::pre_emphasize(&clip.samples);
    let (emph_frames, _) = dsp::frame(&emphasized)?;
    let windowed: Vec<Vec<f64>> = segments.iter().map(|s| dsp::apply_window(s)).collect();

    let mut vectors = Vec::with_capacity(grid.n_frames);
    let mut f0_track = Vec::with_capacity(grid.n_frames);
    for t in 0..grid.n_frames {
        let mut v = FrameFeatureVector::zeros();
        let pitch = estimate_f0_vuv(segments[t]);
        let energy: f64 = segments[t].iter().map(|x| x * x).sum();
        let spec = dsp::fft_spectrum(&windowed[t])?;

        v.0[F0] = pitch.f0;
        v.0[VUV] = if pitch.voiced { 1.0 } else { 0.0 };
        v.0[LOG_ENERGY] = energy.max(LOG_FLOOR).ln();
        if pitch.voiced {
            v.0[H1H2] = h1h2(&spec, pitch.f0);
        }
        v.0[PEAK_SLOPE] = peak_slope_from_spectrum(&spec);
        v.0[MFCC].copy_from_slice(&mfcc(&emph_frames[t])?);

        f0_track.push(pitch.f0);
        vectors.push(v);
    }

    for (v, pd) in vectors.iter_mut().zip(hmpd(&windowed, &f0_track)?) {
        v.0[HMPDM].copy_from_slice(&pd.mean);
        v.0[HMPDD].copy_from_slice(&pd.deviation);
    }

    if let Some(bad) = vectors
        .iter()
        .position(|v| v.0.iter().any(|x| !x.is_finite()))
    {
        return Err(Error::Invariant(format!(
            "non-finite feature in frame {bad} of clip {:?}",
            clip.id
        )));
    }
    Ok(vectors)
}

/// Writes a frame feature matrix: `clip_id,frame,<68 slot names>`.
pub fn write_frame_csv<W: Write>(writer: W, clips: &[(&str, &[FrameFeatureVector])]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["clip_id".to_string(), "frame".to_string()];
    header.extend((0..FRAME_DIM).map(slot_name));
    csv.write_record(&header)?;
    for (id, frames) in clips {
        for (i, f) in frames.iter().enumerate() {
            let mut row = vec![id.to_string(), i.to_string()];
            row.extend(f.0.iter().map(|x| x.to_string()));
            csv.write_record(&row)?;
        }
    }
    csv.flush().map_err(|e| Error::io("<frame features>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn tone(freq: f64, amp: f64, len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| amp * (2.0 * PI * freq * n as f64 / SAMPLE_RATE as f64).sin())
            .collect()
    }

    fn noise(seed: u64, len: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn slot_layout() {
        assert_eq!(MFCC.len(), 25);
        assert_eq!(HMPDM.len(), 25);
        assert_eq!(HMPDD.len(), 13);
        assert_eq!(HMPDD.end, FRAME_DIM);
        assert_eq!(slot_name(5), "mfcc0");
        assert_eq!(slot_name(67), "hmpdd12");
        assert!(is_voiced_only(F0) && is_voiced_only(40) && !is_voiced_only(LOG_ENERGY));
    }

    #[test]
    fn pitch_of_200hz_sine() {
        let p = estimate_f0_vuv(&tone(200.0, 0.8, 512));
        assert!(p.voiced);
        assert!((p.f0 - 200.0).abs() <= 2.0, "{}", p.f0);
    }

    #[test]
    fn noise_and_silence_unvoiced() {
        for seed in 0..20 {
            let p = estimate_f0_vuv(&noise(seed, 512));
            assert_eq!(p, PitchEstimate::UNVOICED, "seed {seed}");
        }
        assert_eq!(estimate_f0_vuv(&[0.0; 512]), PitchEstimate::UNVOICED);
        assert_eq!(
            estimate_f0_vuv(&tone(200.0, 1e-5, 512)),
            PitchEstimate::UNVOICED
        );
    }

    #[test]
    fn mfcc_of_silence() {
        let c = mfcc(&[0.0; 512]).unwrap();
        assert!((c[0] - 26f64.sqrt() * LOG_FLOOR.ln()).abs() < 1e-9);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn mfcc_power_scaling_moves_only_c0() {
        let x = dsp::apply_window(&noise(3, 512));
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let a = mfcc(&x).unwrap();
        let b = mfcc(&x2).unwrap();
        assert!((b[0] - a[0] - 26f64.sqrt() * 4f64.ln()).abs() < 1e-9);
        for k in 1..25 {
            assert!((a[k] - b[k]).abs() < 1e-9, "coefficient {k}");
        }
    }

    #[test]
    fn h1h2_equal_harmonics_and_out_of_band() {
        let f0 = 220.0;
        let x: Vec<f64> = tone(f0, 1.0, 512)
            .iter()
            .zip(tone(2.0 * f0, 1.0, 512))
            .map(|(a, b)| a + b)
            .collect();
        let spec = dsp::fft_spectrum(&dsp::apply_window(&x)).unwrap();
        assert!(h1h2(&spec, f0).abs() < 0.5);
        assert_eq!(h1h2(&spec, 4500.0), 0.0);
    }

    #[test]
    fn peak_slope_of_silence_is_zero() {
        assert_eq!(peak_slope(&[0.0; 512]).unwrap(), 0.0);
    }

    #[test]
    fn unvoiced_frames_have_zero_phase_stats() {
        let frames = vec![dsp::apply_window(&tone(200.0, 1.0, 512)); 3];
        let out = hmpd(&frames, &[0.0, 0.0, 0.0]).unwrap();
        assert!(out.iter().all(|p| *p == PhaseDistortion::zeros()));
        assert!(hmpd(&frames, &[0.0]).is_err());
    }

    #[test]
    fn silent_clip_features() {
        let clip = AudioClip::new("silence", vec![0.0; 16000]);
        let feats = extract_frame_features(&clip).unwrap();
        assert_eq!(feats.len(), 97);
        for f in &feats {
            assert_eq!(f[VUV], 0.0);
            assert_eq!(f[F0], 0.0);
            assert_eq!(f[H1H2], 0.0);
            assert!(f.0[HMPDM.start..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn short_clip_rejected() {
        let clip = AudioClip::new("short", vec![0.1; 400]);
        assert!(matches!(
            extract_frame_features(&clip),
            Err(Error::TooShort { .. })
        ));
    }
}
