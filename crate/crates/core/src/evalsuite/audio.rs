//! Spectral attributes of generated audio.

use std::f64::consts::TAU;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::assembler::AudioClip;
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 2048;
pub const DEFAULT_HOP: usize = 512;
pub const DEFAULT_SPLIT_HZ: f64 = 1000.0;

pub const MODE_WINDOW: usize = 4096;
pub const MODE_HOP: usize = 2048;
pub const CHROMA_LOW_HZ: f64 = 110.0;
pub const CHROMA_HIGH_HZ: f64 = 880.0;

/// Krumhansl-Schmuckler key profiles, tonic first.
pub const KS_MAJOR: [f64; 12] = [6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88];
pub const KS_MINOR: [f64; 12] = [6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17];

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (TAU * i as f64 / n as f64).cos())
        .collect()
}

/// One-sided spectra (bins 0..=n/2) of Hann-windowed frames starting at
/// 0, hop, 2*hop, ... that fit inside the signal. A signal shorter than the
/// window yields a single zero-padded frame when `pad_short` is set.
fn frame_spectra(samples: &[f64], window: usize, hop: usize, pad_short: bool) -> Vec<Vec<Complex<f64>>> {
    let w = hann(window);
    let fft = FftPlanner::new().plan_fft_forward(window);
    let mut starts: Vec<usize> = if samples.len() >= window {
        (0..=samples.len() - window).step_by(hop).collect()
    } else {
        Vec::new()
    };
    if starts.is_empty() && pad_short {
        starts.push(0);
    }
    starts
        .into_iter()
        .map(|s| {
            let mut buf: Vec<Complex<f64>> = (0..window)
                .map(|i| Complex::new(samples.get(s + i).copied().unwrap_or(0.0) * w[i], 0.0))
                .collect();
            fft.process(&mut buf);
            buf.truncate(window / 2 + 1);
            buf
        })
        .collect()
}

fn check_frames(window: usize, hop: usize) -> Result<()> {
    if window < 2 || hop == 0 {
        return Err(Error::invalid("window must be at least 2 and hop positive"));
    }
    Ok(())
}

/// Magnitude-weighted mean frequency, averaged over frames that carry
/// energy. Silence is 0 Hz.
pub fn spectral_centroid(clip: &AudioClip, window: usize, hop: usize) -> Result<f64> {
    check_frames(window, hop)?;
    if clip.len() < window {
        return Err(Error::invalid(format!(
            "clip has {} samples, window needs {window}",
            clip.len()
        )));
    }
    let bin_hz = clip.sample_rate_hz() as f64 / window as f64;
    let (mut total, mut frames) = (0.0, 0usize);
    for spec in frame_spectra(clip.samples(), window, hop, false) {
        let (mut num, mut den) = (0.0, 0.0);
        for (k, x) in spec.iter().enumerate() {
            let m = x.norm();
            num += k as f64 * bin_hz * m;
            den += m;
        }
        if den > 0.0 {
            total += num / den;
            frames += 1;
        }
    }
    Ok(if frames == 0 { 0.0 } else { total / frames as f64 })
}

pub fn rms_intensity(clip: &AudioClip) -> Result<f64> {
    if clip.is_empty() {
        return Err(Error::invalid("empty clip"));
    }
    let ss: f64 = clip.samples().iter().map(|v| v * v).sum();
    Ok((ss / clip.len() as f64).sqrt())
}

/// Energy of the whole-clip two-sided spectrum split at `split_hz`:
/// bins with `|f| >= split_hz` count as high.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandEnergy {
    pub low: f64,
    pub high: f64,
}

impl BandEnergy {
    pub fn total(&self) -> f64 {
        self.low + self.high
    }

    pub fn ratio(&self) -> Result<f64> {
        if self.low == 0.0 {
            return Err(Error::Undefined(
                "band energy ratio: no energy below the split".into(),
            ));
        }
        Ok(self.high / self.low)
    }
}

pub fn band_energy(clip: &AudioClip, split_hz: f64) -> Result<BandEnergy> {
    if clip.is_empty() {
        return Err(Error::invalid("empty clip"));
    }
    let rate = clip.sample_rate_hz() as f64;
    if !(split_hz > 0.0 && split_hz < rate / 2.0) {
        return Err(Error::invalid(format!(
            "split {split_hz} Hz must lie in (0, {} Hz)",
            rate / 2.0
        )));
    }
    let n = clip.len();
    let mut buf: Vec<Complex<f64>> = clip.samples().iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mut e = BandEnergy { low: 0.0, high: 0.0 };
    for (k, x) in buf.iter().enumerate() {
        let f = k.min(n - k) as f64 * rate / n as f64;
        if f >= split_hz {
            e.high += x.norm_sqr();
        } else {
            e.low += x.norm_sqr();
        }
    }
    Ok(e)
}

pub fn band_energy_ratio(clip: &AudioClip, split_hz: f64) -> Result<f64> {
    band_energy(clip, split_hz)?.ratio()
}

/// Power per pitch class (index 0 = C) over bins in
/// [`CHROMA_LOW_HZ`, `CHROMA_HIGH_HZ`), summed over frames.
pub fn chroma(clip: &AudioClip) -> Result<[f64; 12]> {
    if clip.is_empty() {
        return Err(Error::invalid("empty clip"));
    }
    let bin_hz = clip.sample_rate_hz() as f64 / MODE_WINDOW as f64;
    let mut out = [0.0; 12];
    for spec in frame_spectra(clip.samples(), MODE_WINDOW, MODE_HOP, true) {
        for (k, x) in spec.iter().enumerate().skip(1) {
            let f = k as f64 * bin_hz;
            if !(CHROMA_LOW_HZ..CHROMA_HIGH_HZ).contains(&f) {
                continue;
            }
            let semis = (12.0 * (f / CHROMA_LOW_HZ).log2()).round() as i64;
            out[(9 + semis).rem_euclid(12) as usize] += x.norm_sqr();
        }
    }
    Ok(out)
}

fn pearson_plain(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeEstimate {
    /// Best major correlation minus best minor correlation.
    pub score: f64,
    pub major_r: f64,
    pub major_tonic: usize,
    pub minor_r: f64,
    pub minor_tonic: usize,
}

fn best_rotation(chroma: &[f64; 12], profile: &[f64; 12]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for tonic in 0..12 {
        let rotated: Vec<f64> = (0..12).map(|pc| profile[(pc + 12 - tonic) % 12]).collect();
        let r = pearson_plain(chroma, &rotated).expect("profile and chroma vary");
        if r > best.0 {
            best = (r, tonic);
        }
    }
    best
}

pub fn estimate_mode(clip: &AudioClip) -> Result<ModeEstimate> {
    let c = chroma(clip)?;
    let max = c.iter().cloned().fold(0.0, f64::max);
    let min = c.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == min {
        return Err(Error::Undefined("mode: flat or empty chroma".into()));
    }
    let (major_r, major_tonic) = best_rotation(&c, &KS_MAJOR);
    let (minor_r, minor_tonic) = best_rotation(&c, &KS_MINOR);
    Ok(ModeEstimate {
        score: major_r - minor_r,
        major_r,
        major_tonic,
        minor_r,
        minor_tonic,
    })
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Log-power mel spectrogram for plotting; `data` is `[n_mels, n_frames]`
/// in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub center_hz: Vec<f64>,
    pub frame_times_s: Vec<f64>,
    pub data: Array2<f64>,
}

pub fn mel_spectrogram(clip: &AudioClip, window: usize, hop: usize, n_mels: usize) -> Result<MelSpectrogram> {
    check_frames(window, hop)?;
    if n_mels == 0 || clip.is_empty() {
        return Err(Error::invalid("mel spectrogram needs audio and at least one band"));
    }
    let rate = clip.sample_rate_hz() as f64;
    let top = hz_to_mel(rate / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = rate / window as f64;
    let spectra = frame_spectra(clip.samples(), window, hop, true);
    let mut data = Array2::zeros((n_mels, spectra.len()));
    for (t, spec) in spectra.iter().enumerate() {
        for m in 0..n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut p = 0.0;
            for (k, x) in spec.iter().enumerate() {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                p += w * x.norm_sqr();
            }
            data[[m, t]] = 10.0 * p.max(1e-10).log10();
        }
    }
    Ok(MelSpectrogram {
        center_hz: edges[1..=n_mels].to_vec(),
        frame_times_s: (0..spectra.len()).map(|t| (t * hop) as f64 / rate).collect(),
        data,
    })
}
