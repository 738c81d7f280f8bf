//! Desk-scale motor-imagery stand-in.
//!
//! Each trial carries a class-specific oscillation (8 + 2c Hz) whose sign is
//! drawn at random per trial, so the class-conditional mean in raw-sample
//! space is zero and no linear read-out of the samples separates the
//! classes. Rectifying nonlinearities (a CNN) recover the band power. The
//! oscillation is projected onto the scalp with a class-specific Gaussian
//! weighting. Background activity comes from sources at random scalp
//! locations, each with its own spatial extent and a mix of 1/f noise and a
//! narrowband rhythm, rescaled to a fixed level per channel, plus white
//! sensor noise.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::montage::{channel_position, BIOSEMI32};
use super::{segment_epochs, Epoch, Marker, Recording};
use crate::error::{bail, Result};

/// Generator knobs. [`Default`] is the calibrated desk configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub sampling_rate_hz: f64,
    pub epoch_len: usize,
    /// Background between trials, in samples.
    pub gap_len: usize,
    pub class_amplitude: f64,
    /// Relative per-trial amplitude jitter.
    pub amplitude_jitter: f64,
    pub class_spread: f64,
    pub n_background_sources: usize,
    /// Spatial extent of each background source, drawn uniformly per source.
    pub background_spread: (f64, f64),
    /// Per-channel standard deviation of the summed background.
    pub background_amplitude: f64,
    /// Weight of each source's own narrowband rhythm relative to its 1/f
    /// component.
    pub rhythm_weight: f64,
    /// Range the rhythm centre frequencies are drawn from.
    pub rhythm_band_hz: (f64, f64),
    /// Resonator pole radius; closer to 1 is narrower.
    pub rhythm_pole: f64,
    pub sensor_noise: f64,
    /// Log-normal spread of the per-electrode noise level (contact
    /// impedance varies from electrode to electrode).
    pub sensor_noise_spread: f64,
    /// Overall scale, brings the output into microvolt range.
    pub scale_uv: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            sampling_rate_hz: 512.0,
            epoch_len: 512,
            gap_len: 256,
            class_amplitude: 2.5,
            amplitude_jitter: 0.15,
            class_spread: 0.55,
            n_background_sources: 10,
            background_spread: (0.2, 0.6),
            background_amplitude: 1.0,
            rhythm_weight: 2.0,
            rhythm_band_hz: (8.0, 28.0),
            rhythm_pole: 0.985,
            sensor_noise: 0.25,
            sensor_noise_spread: 0.0,
            scale_uv: 10.0,
        }
    }
}

fn channel_names(n_channels: usize) -> Vec<String> {
    (0..n_channels)
        .map(|i| match BIOSEMI32.get(i) {
            Some(name) => name.to_string(),
            None => format!("E{}", i + 1),
        })
        .collect()
}

fn position(name: &str, index: usize) -> (f64, f64) {
    channel_position(name).unwrap_or_else(|| {
        let a = index as f64 * 2.399_963; // golden angle
        (1.1 * a.cos(), 1.1 * a.sin())
    })
}

fn class_center(class: usize) -> (f64, f64) {
    match class {
        0 => (0.5, 0.0),  // right sensorimotor (left hand)
        1 => (-0.5, 0.0), // left sensorimotor (right hand)
        2 => (0.0, 0.0),  // vertex (feet)
        3 => (0.0, 0.6),  // frontal midline (tongue)
        c => {
            let a = c as f64 * 2.399_963;
            (0.6 * a.cos(), 0.6 * a.sin())
        }
    }
}

fn gauss_weight(a: (f64, f64), b: (f64, f64), spread: f64) -> f64 {
    let d2 = (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
    (-d2 / (2.0 * spread * spread)).exp()
}

/// 1/f-shaped noise: white noise through a bank of leaky integrators with
/// corners spread over the EEG band (3 Hz and 35 Hz at 512 Hz), plus a flat
/// component. Normalised to unit variance empirically.
fn pink_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (mut b1, mut b2) = (0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    // burn in so the slow state is stationary
    for i in 0..n + 512 {
        let w: f64 = StandardNormal.sample(rng);
        b1 = 0.963 * b1 + w * 0.296_516_4;
        b2 = 0.57 * b2 + w * 1.052_691_3;
        if i >= 512 {
            out.push(b1 + b2 + w * 0.184_8);
        }
    }
    normalise(out)
}

fn normalise(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    v
}

/// Narrowband oscillation: white noise through a two-pole resonator at
/// `freq_hz`, unit variance.
fn resonator(n: usize, freq_hz: f64, fs: f64, pole: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w = std::f64::consts::TAU * freq_hz / fs;
    let (a1, a2) = (2.0 * pole * w.cos(), -pole * pole);
    let (mut y1, mut y2) = (0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    for i in 0..n + 1024 {
        let e: f64 = StandardNormal.sample(rng);
        let y = a1 * y1 + a2 * y2 + e;
        y2 = y1;
        y1 = y;
        if i >= 1024 {
            out.push(y);
        }
    }
    normalise(out)
}

/// A continuous recording with `n_per_class * n_classes` back-to-back trials
/// in shuffled order, and their onset markers.
pub fn synthetic_recording(
    params: &SynthParams,
    n_per_class: usize,
    n_classes: usize,
    n_channels: usize,
    seed: u64,
) -> Result<(Recording, Vec<Marker>)> {
    if n_per_class == 0 || n_classes == 0 || n_channels == 0 {
        bail!(InvalidArgument, "synthetic dataset counts must all be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = channel_names(n_channels);
    let positions: Vec<(f64, f64)> = names.iter().enumerate().map(|(i, n)| position(n, i)).collect();

    let mut labels: Vec<usize> = (0..n_classes)
        .flat_map(|c| std::iter::repeat_n(c, n_per_class))
        .collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);

    let fs = params.sampling_rate_hz;
    let stride = params.epoch_len + params.gap_len;
    let total = labels.len() * stride + params.gap_len;
    let mut data = Array2::<f64>::zeros((n_channels, total));

    // Source mixing sets the spatial correlations; each channel's summed
    // background is then rescaled so the per-channel level does not depend
    // on where the sources happened to land.
    for _ in 0..params.n_background_sources {
        let r = 1.1 * rng.random::<f64>().sqrt();
        let a = rng.random::<f64>() * std::f64::consts::TAU;
        let src_pos = (r * a.cos(), r * a.sin());
        let (lo, hi) = params.background_spread;
        let spread = lo + (hi - lo) * rng.random::<f64>();
        let (f_lo, f_hi) = params.rhythm_band_hz;
        let freq = f_lo + (f_hi - f_lo) * rng.random::<f64>();
        let mut wave = pink_noise(total, &mut rng);
        if params.rhythm_weight > 0.0 {
            let rhythm = resonator(total, freq, fs, params.rhythm_pole, &mut rng);
            for (w, r) in wave.iter_mut().zip(&rhythm) {
                *w += params.rhythm_weight * r;
            }
            wave = normalise(wave);
        }
        for (ch, &pos) in positions.iter().enumerate() {
            let g = gauss_weight(pos, src_pos, spread);
            let mut row = data.row_mut(ch);
            for (d, w) in row.iter_mut().zip(&wave) {
                *d += g * w;
            }
        }
    }
    if params.n_background_sources > 0 {
        for mut row in data.rows_mut() {
            let sd = row.std(0.0).max(1e-12);
            row.mapv_inplace(|v| params.background_amplitude * v / sd);
        }
    }

    let taper_len = params.epoch_len / 10;
    let taper = |i: usize| -> f64 {
        let edge = i.min(params.epoch_len - 1 - i);
        if edge >= taper_len {
            1.0
        } else {
            0.5 * (1.0 - (std::f64::consts::PI * edge as f64 / taper_len as f64).cos())
        }
    };
    let mut markers = Vec::with_capacity(labels.len());
    for (trial, &label) in labels.iter().enumerate() {
        let start = params.gap_len + trial * stride;
        markers.push(Marker {
            start_sample: start,
            label,
        });
        let freq = 8.0 + 2.0 * label as f64;
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let amp = sign
            * params.class_amplitude
            * (1.0 + params.amplitude_jitter * (2.0 * rng.random::<f64>() - 1.0));
        let center = class_center(label);
        for (ch, &pos) in positions.iter().enumerate() {
            let w = amp * gauss_weight(pos, center, params.class_spread);
            let mut row = data.row_mut(ch);
            for i in 0..params.epoch_len {
                let phase = std::f64::consts::TAU * freq * i as f64 / fs;
                row[start + i] += w * taper(i) * phase.sin();
            }
        }
    }

    let noise_sd: Vec<f64> = (0..n_channels)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            params.sensor_noise * (params.sensor_noise_spread * z).exp()
        })
        .collect();
    for (mut row, sd) in data.rows_mut().into_iter().zip(&noise_sd) {
        for v in row.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v = params.scale_uv * (*v + sd * n);
        }
    }

    let rec = Recording::new(names, fs, data)?.with_ids("synthetic", format!("seed{seed}"));
    Ok((rec, markers))
}

/// `n_epochs_per_class * n_classes` labelled 1 s epochs at 512 Hz.
pub fn make_synthetic_dataset(
    n_epochs_per_class: usize,
    n_classes: usize,
    n_channels: usize,
    seed: u64,
) -> Result<Vec<Epoch>> {
    let params = SynthParams::default();
    let (rec, markers) = synthetic_recording(&params, n_epochs_per_class, n_classes, n_channels, seed)?;
    segment_epochs(&rec, &markers, params.epoch_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_labels() {
        let epochs = make_synthetic_dataset(2, 4, 4, 7).unwrap();
        assert_eq!(epochs.len(), 8);
        let mut labels: Vec<usize> = epochs.iter().map(|e| e.label).collect();
        labels.sort_unstable();
        assert_eq!(labels, vec![0, 0, 1, 1, 2, 2, 3, 3]);
        assert!(epochs.iter().all(|e| e.samples.dim() == (4, 512)));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = make_synthetic_dataset(3, 2, 8, 11).unwrap();
        let b = make_synthetic_dataset(3, 2, 8, 11).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic_dataset(3, 2, 8, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_zero_counts() {
        assert!(make_synthetic_dataset(0, 4, 4, 1).is_err());
        assert!(make_synthetic_dataset(1, 0, 4, 1).is_err());
        assert!(make_synthetic_dataset(1, 4, 0, 1).is_err());
    }

    fn band_power(x: ndarray::ArrayView1<f64>, fs: f64, hz: f64) -> f64 {
        let w = std::f64::consts::TAU * hz / fs;
        let (re, im) = x.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, v)| {
            (re + v * (w * n as f64).cos(), im - v * (w * n as f64).sin())
        });
        re * re + im * im
    }

    #[test]
    fn class_rhythm_peaks_at_its_frequency() {
        let epochs = make_synthetic_dataset(100, 4, 32, 3).unwrap();
        let fs = SynthParams::default().sampling_rate_hz;
        for c in 0..4 {
            let centre = class_center(c);
            let ch = (0..32)
                .min_by(|&a, &b| {
                    let d = |i: usize| {
                        let p = position(BIOSEMI32[i], i);
                        (p.0 - centre.0).powi(2) + (p.1 - centre.1).powi(2)
                    };
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            // class-specific excess over the other classes, 1 Hz bins
            let excess: Vec<f64> = (4..=40)
                .map(|hz| {
                    let mean = |own: bool| {
                        let sel: Vec<_> = epochs.iter().filter(|e| (e.label == c) == own).collect();
                        sel.iter().map(|e| band_power(e.samples.row(ch), fs, hz as f64)).sum::<f64>() / sel.len() as f64
                    };
                    mean(true) - mean(false)
                })
                .collect();
            let peak = 4 + excess.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            let want = 8 + 2 * c;
            assert!(peak.abs_diff(want) <= 1, "class {c}: peak {peak} Hz, want {want} Hz");
        }
    }
}
