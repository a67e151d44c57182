mod common;

use std::f64::consts::PI;

use common::{add, hamming, tone, FS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use voxsource::corpus::AudioClip;
use voxsource::dsp::{self, FFT_SIZE, HOP_LENGTH};
use voxsource::features::{self, FRAME_DIM, H1H2, HMPDD, HMPDM};
use voxsource::synthgen::{self, VoiceParams};

fn windowed(x: &[f64]) -> Vec<f64> {
    x.iter().zip(hamming(x.len())).map(|(a, w)| a * w).collect()
}

#[test]
fn pitch_of_pure_tones_within_two_percent() {
    let mut f = 80.0;
    while f <= 400.0 {
        let est = features::estimate_f0_vuv(&tone(f, 0.5, 0.4, FFT_SIZE));
        assert!(est.voiced, "{f} Hz unvoiced");
        assert!((est.f0 - f).abs() <= 0.02 * f, "{f} Hz -> {}", est.f0);
        f += 7.5;
    }
}

#[test]
fn noise_and_silence_are_unvoiced() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise: Vec<f64> = (0..FFT_SIZE)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect::<Vec<f64>>();
    assert!(!features::estimate_f0_vuv(&noise).voiced);
    let silent = features::estimate_f0_vuv(&[0.0; FFT_SIZE]);
    assert!(!silent.voiced);
    assert_eq!(silent.f0, 0.0);
}

#[test]
fn h1h2_of_two_harmonics_is_six_db() {
    let want = 20.0 * 2f64.log10();
    for f0 in [110.0, 143.7, 200.0, 251.3, 333.0] {
        let x = add(
            &tone(f0, 1.0, 0.2, FFT_SIZE),
            &tone(2.0 * f0, 0.5, 1.1, FFT_SIZE),
        );
        let spec = dsp::fft_spectrum(&windowed(&x)).unwrap();
        let got = features::h1h2(&spec, f0);
        assert!((got - want).abs() < 0.5, "f0 {f0}: {got}");
    }
}

#[test]
fn h1h2_is_zero_when_second_harmonic_exceeds_nyquist() {
    let x = tone(300.0, 1.0, 0.0, FFT_SIZE);
    let spec = dsp::fft_spectrum(&windowed(&x)).unwrap();
    assert_eq!(features::h1h2(&spec, 4500.0), 0.0);
}

#[test]
fn white_noise_has_flat_peak_slope() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut total = 0.0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..FFT_SIZE)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        total += features::peak_slope(&windowed(&x)).unwrap();
    }
    let mean = total / 100.0;
    assert!(mean.abs() < 0.15, "mean slope {mean}");
}

#[test]
fn lowpassed_noise_slopes_down() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let long: Vec<f64> = (0..FFT_SIZE * 40)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let dull = synthgen::lowpass(&long, 1000.0);
    let (mut flat, mut tilted) = (0.0, 0.0);
    for i in 2..40 {
        let r = i * FFT_SIZE..(i + 1) * FFT_SIZE;
        flat += features::peak_slope(&windowed(&long[r.clone()])).unwrap();
        tilted += features::peak_slope(&windowed(&dull[r])).unwrap();
    }
    assert!(tilted < flat - 0.5, "{tilted} vs {flat}");
}

#[test]
fn silent_frame_peak_slope_is_zero() {
    assert_eq!(features::peak_slope(&[0.0; FFT_SIZE]).unwrap(), 0.0);
}

const PULSE_F0: f64 = 200.0;
const PULSE_HARMONICS: usize = 20;

/// Windowed frames of a zero-phase harmonic pulse train whose third harmonic
/// receives an extra phase `jitter[t]` in frame `t`.
fn pulse_frames(jitter: &[f64]) -> Vec<Vec<f64>> {
    jitter
        .iter()
        .enumerate()
        .map(|(t, &extra)| {
            let start = t * HOP_LENGTH;
            let x: Vec<f64> = (0..FFT_SIZE)
                .map(|n| {
                    let time = (start + n) as f64 / FS;
                    (1..=PULSE_HARMONICS)
                        .map(|k| {
                            let ph = if k == 3 { extra } else { 0.0 };
                            (2.0 * PI * k as f64 * PULSE_F0 * time + ph).cos()
                        })
                        .sum::<f64>()
                        / PULSE_HARMONICS as f64
                })
                .collect();
            windowed(&x)
        })
        .collect()
}

fn mean_deviation(frames: &[Vec<f64>], slot: usize) -> f64 {
    let f0 = vec![PULSE_F0; frames.len()];
    let pd = features::hmpd(frames, &f0).unwrap();
    pd.iter().map(|p| p.deviation[slot]).sum::<f64>() / pd.len() as f64
}

#[test]
fn periodic_pulse_train_has_no_phase_deviation() {
    let frames = pulse_frames(&[0.0; 20]);
    let f0 = vec![PULSE_F0; frames.len()];
    for p in features::hmpd(&frames, &f0).unwrap() {
        for (j, d) in p.deviation.iter().enumerate() {
            assert!(*d < 0.05, "slot {j}: {d}");
        }
    }
}

#[test]
fn third_harmonic_jitter_raises_deviation() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let jitter: Vec<f64> = (0..20)
        .map(|_| if rng.random_bool(0.5) { 0.5 } else { -0.5 })
        .collect();
    let clean = pulse_frames(&[0.0; 20]);
    let jittered = pulse_frames(&jitter);
    let rise2 = mean_deviation(&jittered, 2) - mean_deviation(&clean, 2);
    let rise3 = mean_deviation(&jittered, 3) - mean_deviation(&clean, 3);
    assert!(rise2 > 0.2 || rise3 > 0.2, "rises {rise2} {rise3}");
    // Harmonics not adjacent to the third are untouched.
    let rise8 = mean_deviation(&jittered, 8) - mean_deviation(&clean, 8);
    assert!(rise8.abs() < 0.05);
}

#[test]
fn unvoiced_frames_have_zero_phase_slots() {
    let frames = pulse_frames(&[0.0; 6]);
    let f0 = [PULSE_F0, 0.0, PULSE_F0, 0.0, 0.0, PULSE_F0];
    let pd = features::hmpd(&frames, &f0).unwrap();
    for t in [1, 3, 4] {
        assert!(pd[t].mean.iter().all(|v| *v == 0.0));
        assert!(pd[t].deviation.iter().all(|v| *v == 0.0));
    }
    assert!(features::hmpd(&frames, &f0[..2]).is_err());
}

fn plain_voice(f0: f64, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synthgen::synth_voice(&mut rng, f0, 1.0, &VoiceParams::default()).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn synthetic_voice_pitch_is_recovered() {
    let clip = plain_voice(150.0, 3);
    let (segments, _) = dsp::frame_segments(&clip.samples).unwrap();
    let f0s: Vec<f64> = segments
        .iter()
        .map(|s| features::estimate_f0_vuv(s))
        .filter(|p| p.voiced)
        .map(|p| p.f0)
        .collect();
    assert!((median(f0s) - 150.0).abs() <= 3.0);
}

#[test]
fn voice_clip_is_mostly_voiced() {
    let clip = plain_voice(150.0, 4);
    let frames = features::extract_frame_features(&clip).unwrap();
    let voiced: Vec<f64> = frames
        .iter()
        .filter(|f| f.voiced())
        .map(|f| f[features::F0])
        .collect();
    assert!(voiced.len() as f64 > 0.7 * frames.len() as f64);
    assert!((median(voiced) - 150.0).abs() <= 5.0);
}

#[test]
fn frame_invariants_hold() {
    let clip = plain_voice(210.0, 5);
    let mut samples = clip.samples.clone();
    // Append a silent tail so some frames are unvoiced.
    samples.extend(std::iter::repeat_n(0.0, 3000));
    let frames = features::extract_frame_features(&AudioClip::new("v", samples)).unwrap();
    let mut unvoiced = 0;
    for f in &frames {
        assert_eq!(f.0.len(), FRAME_DIM);
        assert_eq!(f[features::F0] == 0.0, f[features::VUV] == 0.0);
        if !f.voiced() {
            unvoiced += 1;
            assert_eq!(f[H1H2], 0.0);
            assert!(f.0[HMPDM].iter().chain(&f.0[HMPDD]).all(|v| *v == 0.0));
        }
    }
    assert!(unvoiced > 0);
}

#[test]
fn amplitude_scaling_leaves_shape_features_unchanged() {
    let clip = plain_voice(170.0, 6);
    let quiet = AudioClip::new("q", clip.samples.iter().map(|x| x * 0.25).collect());
    let a = features::extract_frame_features(&clip).unwrap();
    let b = features::extract_frame_features(&quiet).unwrap();
    for (fa, fb) in a.iter().zip(&b) {
        assert_eq!(fa[features::VUV], fb[features::VUV]);
        assert!((fa[features::F0] - fb[features::F0]).abs() < 1e-6);
        assert!((fa[H1H2] - fb[H1H2]).abs() < 1e-6);
        assert!((fa[features::PEAK_SLOPE] - fb[features::PEAK_SLOPE]).abs() < 1e-6);
        // Log energy shifts by ln(1/16).
        let shift = fa[features::LOG_ENERGY] - fb[features::LOG_ENERGY];
        assert!((shift - 16f64.ln()).abs() < 1e-6);
    }
}

#[test]
fn slot_names_cover_layout() {
    assert_eq!(features::slot_name(0), "f0");
    assert_eq!(features::slot_name(HMPDD.start), "hmpdd0");
    assert!(features::is_voiced_only(features::F0));
    assert!(!features::is_voiced_only(features::LOG_ENERGY));
    let names: std::collections::BTreeSet<String> =
        (0..FRAME_DIM).map(features::slot_name).collect();
    assert_eq!(names.len(), FRAME_DIM);
}
