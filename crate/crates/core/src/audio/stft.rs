use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::AudioClip;
use crate::error::{Error, Result};

/// Offset inside the log of the spectral distance.
pub const SPECTRAL_EPS: f64 = 1e-5;

/// Frame sizes of the multiscale spectral distance, each with hop = size / 4.
pub const DEFAULT_SPECTRAL_SCALES: [usize; 3] = [256, 512, 1024];

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n).map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos()).collect()
}

/// One-sided complex spectrogram, row-major `frames × bins`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub frame_size: usize,
    pub hop: usize,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn frame(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.bins..(i + 1) * self.bins]
    }

    pub fn magnitude(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.bins + k].norm()
    }

    /// Energy of frame `i` recovered from the one-sided spectrum: interior
    /// bins count twice, DC and Nyquist once, scaled by `1 / frame_size`.
    pub fn frame_energy(&self, i: usize) -> f64 {
        let n = self.frame_size;
        let row = self.frame(i);
        let mut e = 0.0;
        for (k, x) in row.iter().enumerate() {
            let w = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
            e += w * x.norm_sqr();
        }
        e / n as f64
    }

    /// Center frequency of bin `k` in Hz.
    pub fn bin_frequency(&self, k: usize, sample_rate: u32) -> f64 {
        k as f64 * sample_rate as f64 / self.frame_size as f64
    }
}

/// Hann-windowed short-time Fourier transform. Frames start at multiples of
/// `hop` and no padding is added past the last full frame.
pub fn stft(clip: &AudioClip, frame_size: usize, hop: usize) -> Result<Spectrogram> {
    if hop == 0 || frame_size < hop {
        return Err(Error::InvalidArgument(format!(
            "stft requires frame_size >= hop >= 1 (got frame_size={frame_size}, hop={hop})"
        )));
    }
    let samples = clip.samples();
    if samples.len() < frame_size {
        return Err(Error::InputTooShort(format!(
            "{} samples is shorter than one {frame_size}-sample frame",
            samples.len()
        )));
    }
    let frames = (samples.len() - frame_size) / hop + 1;
    let bins = frame_size / 2 + 1;
    let window = hann_window(frame_size);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_size];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let start = f * hop;
        for (j, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(samples[start + j] as f64 * window[j], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram { frames, bins, frame_size, hop, data })
}

/// Sum over `scales` of the mean absolute log-magnitude difference, plus the
/// mean absolute waveform difference.
pub fn multiscale_spectral_distance(a: &AudioClip, b: &AudioClip, scales: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.sample_rate() != b.sample_rate() {
        return Err(Error::ShapeMismatch(format!(
            "clips differ: {} samples @ {} Hz vs {} samples @ {} Hz",
            a.len(),
            a.sample_rate(),
            b.len(),
            b.sample_rate()
        )));
    }
    let mut total = 0.0;
    for &size in scales {
        let hop = (size / 4).max(1);
        let sa = stft(a, size, hop)?;
        let sb = stft(b, size, hop)?;
        let sum: f64 = sa
            .data
            .iter()
            .zip(&sb.data)
            .map(|(x, y)| ((x.norm() + SPECTRAL_EPS).ln() - (y.norm() + SPECTRAL_EPS).ln()).abs())
            .sum();
        total += sum / sa.data.len() as f64;
    }
    let l1: f64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .sum::<f64>()
        / a.len().max(1) as f64;
    Ok(total + l1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(freq: f64, len: usize, sr: u32) -> AudioClip {
        AudioClip::from_fn(len, sr, |t| 0.5 * (2.0 * PI * freq * t).sin()).unwrap()
    }

    /// Direct O(N²) DFT of a windowed frame.
    fn dft_oracle(frame: &[f64]) -> Vec<Complex64> {
        let n = frame.len();
        (0..n / 2 + 1)
            .map(|k| {
                frame.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (j, &x)| {
                    let ang = -2.0 * PI * (k * j) as f64 / n as f64;
                    acc + Complex64::new(x * ang.cos(), x * ang.sin())
                })
            })
            .collect()
    }

    #[test]
    fn silence_gives_zero_magnitudes() {
        let s = stft(&AudioClip::silence(2048, 8000), 512, 128).unwrap();
        assert!(s.data.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn too_short_input_is_rejected() {
        let err = stft(&AudioClip::silence(100, 8000), 256, 64).unwrap_err();
        assert!(matches!(err, Error::InputTooShort(_)));
        assert!(stft(&AudioClip::silence(1000, 8000), 128, 256).is_err());
    }

    #[test]
    fn frame_count_and_bins() {
        let s = stft(&AudioClip::silence(1000, 8000), 256, 64).unwrap();
        assert_eq!(s.frames, (1000 - 256) / 64 + 1);
        assert_eq!(s.bins, 129);
    }

    #[test]
    fn bin_center_tone_peaks_at_its_bin() {
        let (sr, n, k) = (8000u32, 512usize, 37usize);
        let clip = tone(k as f64 * sr as f64 / n as f64, 4096, sr);
        let s = stft(&clip, n, 128).unwrap();
        let window = hann_window(n);
        for f in 0..s.frames {
            let row = s.frame(f);
            let argmax = (0..s.bins).max_by(|&a, &b| row[a].norm().total_cmp(&row[b].norm())).unwrap();
            assert_eq!(argmax, k, "frame {f}");
            let frame: Vec<f64> = (0..n).map(|j| clip.samples()[f * 128 + j] as f64 * window[j]).collect();
            let oracle = dft_oracle(&frame);
            for (x, y) in row.iter().zip(&oracle) {
                assert!((x - y).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn parseval_matches_windowed_energy() {
        let clip = AudioClip::from_fn(3000, 8000, |t| (t * 1234.5).sin() * 0.3 + (t * 97.0).cos() * 0.2).unwrap();
        let (n, hop) = (256, 100);
        let s = stft(&clip, n, hop).unwrap();
        let w = hann_window(n);
        for f in 0..s.frames {
            let direct: f64 = (0..n).map(|j| (clip.samples()[f * hop + j] as f64 * w[j]).powi(2)).sum();
            let rel = (s.frame_energy(f) - direct).abs() / direct;
            assert!(rel < 1e-6, "frame {f}: rel {rel}");
        }
    }

    /// Straight-line reimplementation with a naive DFT.
    fn spectral_distance_oracle(a: &[f32], b: &[f32], scales: &[usize]) -> f64 {
        let mut total = 0.0;
        for &n in scales {
            let hop = n / 4;
            let w = hann_window(n);
            let frames = (a.len() - n) / hop + 1;
            let mut acc = 0.0;
            for f in 0..frames {
                let fa: Vec<f64> = (0..n).map(|j| a[f * hop + j] as f64 * w[j]).collect();
                let fb: Vec<f64> = (0..n).map(|j| b[f * hop + j] as f64 * w[j]).collect();
                for (x, y) in dft_oracle(&fa).iter().zip(dft_oracle(&fb).iter()) {
                    acc += ((x.norm() + 1e-5).ln() - (y.norm() + 1e-5).ln()).abs();
                }
            }
            total += acc / (frames * (n / 2 + 1)) as f64;
        }
        let mut l1 = 0.0;
        for i in 0..a.len() {
            l1 += (a[i] as f64 - b[i] as f64).abs();
        }
        total + l1 / a.len() as f64
    }

    #[test]
    fn spectral_distance_sine_vs_silence_matches_oracle() {
        let a = tone(440.0, 1024, 8000);
        let b = AudioClip::silence(1024, 8000);
        let scales = [64, 128, 256];
        let got = multiscale_spectral_distance(&a, &b, &scales).unwrap();
        let want = spectral_distance_oracle(a.samples(), b.samples(), &scales);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn spectral_distance_identity_and_errors() {
        let a = tone(300.0, 2048, 8000);
        assert_eq!(multiscale_spectral_distance(&a, &a, &DEFAULT_SPECTRAL_SCALES).unwrap(), 0.0);
        let b = AudioClip::silence(2000, 8000);
        assert!(matches!(
            multiscale_spectral_distance(&a, &b, &DEFAULT_SPECTRAL_SCALES),
            Err(Error::ShapeMismatch(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        // Power-of-two gains are exact in f32 storage, so the 1e-9 bound is
        // checked there; arbitrary gains are limited by f32 rounding of the
        // scaled samples.
        fn magnitude_scales_linearly(k in -3i32..3, neg in any::<bool>(), alpha in -4.0f32..4.0, seed in 0u64..1000) {
            let clip = AudioClip::from_fn(600, 8000, |t| ((t * 8000.0 + seed as f64) * 0.37).sin() * 0.2).unwrap();
            let a = stft(&clip, 128, 64).unwrap();
            let exact = if neg { -(2f32.powi(k)) } else { 2f32.powi(k) };
            let peak = a.data.iter().map(|x| x.norm()).fold(0.0, f64::max);
            for (gain, tol) in [(exact, 1e-9), (alpha, 1e-6)] {
                let b = stft(&clip.scaled(gain), 128, 64).unwrap();
                for (x, y) in a.data.iter().zip(&b.data) {
                    let want = x.norm() * gain.abs() as f64;
                    prop_assert!((y.norm() - want).abs() <= tol * peak * gain.abs() as f64);
                }
            }
        }

        #[test]
        fn spectral_distance_is_a_pseudometric(s1 in 0u64..500, s2 in 0u64..500) {
            let a = AudioClip::from_fn(512, 8000, |t| (t * 8000.0 * 0.11 + s1 as f64).sin() * 0.4).unwrap();
            let b = AudioClip::from_fn(512, 8000, |t| (t * 8000.0 * 0.07 + s2 as f64).cos() * 0.3).unwrap();
            let ab = multiscale_spectral_distance(&a, &b, &[128, 256]).unwrap();
            let ba = multiscale_spectral_distance(&b, &a, &[128, 256]).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
        }
    }
}
