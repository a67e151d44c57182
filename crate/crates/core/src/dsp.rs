//! Signal-processing primitives shared by the feature extractors.
//!
//! All analysis runs on one grid: 512-sample (32 ms) Hamming windows every
//! 160 samples (10 ms) at 16 kHz.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::corpus::SAMPLE_RATE;
use crate::error::{Error, Result};

pub const WINDOW_LENGTH: usize = 512;
pub const HOP_LENGTH: usize = 160;
pub const FFT_SIZE: usize = WINDOW_LENGTH;
pub const N_BINS: usize = FFT_SIZE / 2 + 1;
pub const BIN_WIDTH: f64 = SAMPLE_RATE as f64 / FFT_SIZE as f64;
pub const NYQUIST: f64 = SAMPLE_RATE as f64 / 2.0;

pub const N_MEL_FILTERS: usize = 26;
pub const N_CEPSTRA: usize = 25;
pub const PRE_EMPHASIS: f64 = 0.97;
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameGrid {
    pub window_length: usize,
    pub hop_length: usize,
    pub n_frames: usize,
}

impl FrameGrid {
    pub fn for_len(len: usize) -> Result<Self> {
        if len < WINDOW_LENGTH {
            return Err(Error::TooShort {
                len,
                min: WINDOW_LENGTH,
            });
        }
        Ok(FrameGrid {
            window_length: WINDOW_LENGTH,
            hop_length: HOP_LENGTH,
            n_frames: (len - WINDOW_LENGTH) / HOP_LENGTH + 1,
        })
    }

    pub fn start(&self, frame: usize) -> usize {
        frame * self.hop_length
    }
}

pub fn hamming_window() -> &'static [f64] {
    static WINDOW: OnceLock<Vec<f64>> = OnceLock::new();
    WINDOW.get_or_init(|| {
        let denom = (WINDOW_LENGTH - 1) as f64;
        (0..WINDOW_LENGTH)
            .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / denom).cos())
            .collect()
    })
}

/// First-order pre-emphasis `y[n] = x[n] - 0.97 x[n-1]`, with `y[0] = x[0]`.
pub fn pre_emphasize(samples: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    let mut prev = 0.0;
    for &s in samples {
        out.push(s - PRE_EMPHASIS * prev);
        prev = s;
    }
    out
}

/// Raw (unwindowed) 512-sample segments on the frame grid.
pub fn frame_segments(samples: &[f64]) -> Result<(Vec<&[f64]>, FrameGrid)> {
    let grid = FrameGrid::for_len(samples.len())?;
    let segments = (0..grid.n_frames)
        .map(|i| &samples[grid.start(i)..grid.start(i) + WINDOW_LENGTH])
        .collect();
    Ok((segments, grid))
}

pub fn apply_window(segment: &[f64]) -> Vec<f64> {
    segment
        .iter()
        .zip(hamming_window())
        .map(|(s, w)| s * w)
        .collect()
}

/// Hamming-windowed frames on the frame grid.
pub fn frame(samples: &[f64]) -> Result<(Vec<Vec<f64>>, FrameGrid)> {
    let (segments, grid) = frame_segments(samples)?;
    Ok((segments.into_iter().map(apply_window).collect(), grid))
}

/// One-sided spectrum of a 512-point frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn magnitude(&self, bin: usize) -> f64 {
        self.bins[bin].norm()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm()).collect()
    }

    pub fn powers(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm_sqr()).collect()
    }

    /// Phase in (-pi, pi].
    pub fn phase(&self, bin: usize) -> f64 {
        wrap_phase(self.bins[bin].arg())
    }

    pub fn phases(&self) -> Vec<f64> {
        (0..self.bins.len()).map(|k| self.phase(k)).collect()
    }

    pub fn bin_frequency(bin: usize) -> f64 {
        bin as f64 * BIN_WIDTH
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_phase(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

fn fft_plan() -> &'static Arc<dyn Fft<f64>> {
    static PLAN: OnceLock<Arc<dyn Fft<f64>>> = OnceLock::new();
    PLAN.get_or_init(|| FftPlanner::new().plan_fft_forward(FFT_SIZE))
}

pub fn fft_spectrum(frame: &[f64]) -> Result<Spectrum> {
    if frame.len() != FFT_SIZE {
        return Err(Error::DimensionMismatch {
            expected: FFT_SIZE,
            got: frame.len(),
        });
    }
    let mut buf: Vec<Complex64> = frame.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft_plan().process(&mut buf);
    buf.truncate(N_BINS);
    Ok(Spectrum { bins: buf })
}

/// DFT of `frame` evaluated at an arbitrary frequency (Hz), with time origin at sample 0.
pub fn dft_at(frame: &[f64], freq: f64) -> Complex64 {
    let w = -2.0 * PI * freq / SAMPLE_RATE as f64;
    let step = Complex64::from_polar(1.0, w);
    let mut rot = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for (n, &x) in frame.iter().enumerate() {
        // Re-anchor periodically so the recurrence does not drift.
        if n % 64 == 0 {
            rot = Complex64::from_polar(1.0, w * n as f64);
        }
        acc += rot * x;
        rot *= step;
    }
    acc
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters spanning 0..Nyquist with unit peak, sampled at FFT bin centers.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    pub centers: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
}

impl MelFilterbank {
    pub fn new(n_filters: usize) -> Self {
        let top = hz_to_mel(NYQUIST);
        let edges: Vec<f64> = (0..n_filters + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_filters + 1) as f64))
            .collect();
        let weights = (0..n_filters)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..N_BINS)
                    .map(|k| {
                        let f = Spectrum::bin_frequency(k);
                        if f <= lo || f >= hi {
                            0.0
                        } else if f <= mid {
                            (f - lo) / (mid - lo)
                        } else {
                            (hi - f) / (hi - mid)
                        }
                    })
                    .collect()
            })
            .collect();
        MelFilterbank {
            centers: edges[1..=n_filters].to_vec(),
            weights,
        }
    }

    pub fn standard() -> &'static MelFilterbank {
        static BANK: OnceLock<MelFilterbank> = OnceLock::new();
        BANK.get_or_init(|| MelFilterbank::new(N_MEL_FILTERS))
    }

    /// Sum of each filter's weights.
    pub fn areas(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.iter().sum()).collect()
    }

    /// Weighted power in each band.
    pub fn band_energies(&self, spec: &Spectrum) -> Vec<f64> {
        let power = spec.powers();
        self.weights
            .iter()
            .map(|w| w.iter().zip(&power).map(|(a, p)| a * p).sum())
            .collect()
    }
}

/// Natural-log mel band energies, floored at [`LOG_FLOOR`].
pub fn mel_filterbank_energies(spec: &Spectrum) -> Vec<f64> {
    MelFilterbank::standard()
        .band_energies(spec)
        .into_iter()
        .map(|e| e.max(LOG_FLOOR).ln())
        .collect()
}

/// Orthonormal DCT-II, returning the first `keep` coefficients.
pub fn dct_ii(input: &[f64], keep: usize) -> Vec<f64> {
    let n = input.len();
    let nf = n as f64;
    (0..keep.min(n))
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / nf).sqrt()
            } else {
                (2.0 / nf).sqrt()
            };
            scale
                * input
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * nf)).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Normalized autocorrelation `r(lag)` for `lag` in `min_lag..=max_lag`.
///
/// Each lag is normalized by the energies of the two overlapping segments, so a
/// periodic signal with period `lag` scores 1 regardless of amplitude. Lags whose
/// overlap carries no energy score 0.
pub fn normalized_autocorrelation(x: &[f64], min_lag: usize, max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v * v;
    }
    (min_lag..=max_lag)
        .map(|lag| {
            if lag >= n {
                return 0.0;
            }
            let m = n - lag;
            let dot: f64 = x[..m].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum();
            let e0 = prefix[m];
            let e1 = prefix[n] - prefix[lag];
            let denom = (e0 * e1).sqrt();
            if denom > 0.0 {
                dot / denom
            } else {
                0.0
            }
        })
        .collect()
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}
