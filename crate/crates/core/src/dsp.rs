//! Band-pass filtering, per-channel standardisation and muscle-artifact
//! annotation.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;

use crate::data::{Marker, Recording};
use crate::error::{bail, Error, Result};

/// Butterworth band-pass design parameters. `order` is the order of the
/// low-pass prototype; the band-pass has `2 * order` poles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandpassSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
    pub sampling_rate_hz: f64,
}

impl BandpassSpec {
    pub fn new(low_hz: f64, high_hz: f64, order: usize, sampling_rate_hz: f64) -> Result<Self> {
        let spec = Self {
            low_hz,
            high_hz,
            order,
            sampling_rate_hz,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The motor-imagery band: 8-30 Hz, order 4.
    pub fn mu_beta(sampling_rate_hz: f64) -> Result<Self> {
        Self::new(8.0, 30.0, 4, sampling_rate_hz)
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sampling_rate_hz / 2.0;
        if !(self.sampling_rate_hz > 0.0) {
            bail!(InvalidArgument, "sampling rate must be positive");
        }
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz) {
            bail!(
                InvalidArgument,
                "band edges must satisfy 0 < low_hz < high_hz, got {} and {}",
                self.low_hz,
                self.high_hz
            );
        }
        if self.high_hz >= nyquist {
            bail!(
                InvalidArgument,
                "high_hz {} must be below the Nyquist frequency {nyquist}",
                self.high_hz
            );
        }
        if self.order < 2 || self.order % 2 != 0 {
            bail!(InvalidArgument, "filter order must be even and >= 2, got {}", self.order);
        }
        Ok(())
    }
}

/// Cascade of second-order sections, each `[b0, b1, b2, a1, a2]` with a0 = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<[f64; 5]>,
}

/// Butterworth band-pass via analog prototype, low-pass to band-pass
/// transform and bilinear transform with pre-warped edges.
pub fn design_butterworth_bandpass(spec: &BandpassSpec) -> Result<Sos> {
    spec.validate()?;
    let fs = spec.sampling_rate_hz;
    let n = spec.order;
    let fs2 = 2.0 * fs;
    let warp = |f: f64| fs2 * (PI * f / fs).tan();
    let (wl, wh) = (warp(spec.low_hz), warp(spec.high_hz));
    let bw = wh - wl;
    let w0_sq = wl * wh;

    let mut poles = Vec::with_capacity(2 * n);
    for k in 0..n {
        let m = -(n as f64) + 1.0 + 2.0 * k as f64;
        let p = -Complex64::from_polar(1.0, PI * m / (2.0 * n as f64));
        let half = p * bw / 2.0;
        let root = (half * half - w0_sq).sqrt();
        poles.push(half + root);
        poles.push(half - root);
    }
    // Analog gain bw^n, n zeros at s = 0 and n at infinity.
    let mut gain = Complex64::new(bw.powi(n as i32) * fs2.powi(n as i32), 0.0);
    let mut zpoles = Vec::with_capacity(2 * n);
    for p in &poles {
        gain /= fs2 - p;
        zpoles.push((fs2 + p) / (fs2 - p));
    }

    let mut upper: Vec<Complex64> = zpoles.iter().copied().filter(|z| z.im > 1e-12).collect();
    let mut real: Vec<f64> = zpoles.iter().filter(|z| z.im.abs() <= 1e-12).map(|z| z.re).collect();
    upper.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap());
    real.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut sections = Vec::with_capacity(n);
    for z in &upper {
        sections.push([1.0, 0.0, -1.0, -2.0 * z.re, z.norm_sqr()]);
    }
    for pair in real.chunks(2) {
        let (r1, r2) = (pair[0], pair.get(1).copied().unwrap_or(0.0));
        sections.push([1.0, 0.0, -1.0, -(r1 + r2), r1 * r2]);
    }
    if sections.len() != n {
        return Err(Error::InvalidArgument(format!(
            "pole pairing produced {} sections for order {n}",
            sections.len()
        )));
    }
    let g = gain.re;
    for c in &mut sections[0][..3] {
        *c *= g;
    }
    Ok(Sos { sections })
}

impl Sos {
    /// Complex response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, sampling_rate_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / sampling_rate_hz;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| {
            acc * (s[0] + s[1] * z1 + s[2] * z2) / (1.0 + s[3] * z1 + s[4] * z2)
        })
    }

    /// Steady-state section states for a unit step input.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut level = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let h = (s[0] + s[1] + s[2]) / (1.0 + s[3] + s[4]);
                let y = h * level;
                let z2 = s[2] * level - s[4] * y;
                let z1 = s[1] * level - s[3] * y + z2;
                level = y;
                [z1, z2]
            })
            .collect()
    }

    /// Transposed direct form II, states initialised to `initial * x[0]`.
    fn run(&self, x: &mut [f64], initial: &[[f64; 2]]) {
        let x0 = x.first().copied().unwrap_or(0.0);
        for (s, zi) in self.sections.iter().zip(initial) {
            let (mut z1, mut z2) = (zi[0] * x0, zi[1] * x0);
            for v in x.iter_mut() {
                let input = *v;
                let y = s[0] * input + z1;
                z1 = s[1] * input - s[3] * y + z2;
                z2 = s[2] * input - s[4] * y;
                *v = y;
            }
        }
    }

    /// Forward-backward (zero-phase) filtering with odd reflection of
    /// `pad_len` samples at both ends.
    pub fn filtfilt(&self, x: &[f64], pad_len: usize) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = pad_len.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let zi = self.step_states();
        self.run(&mut ext, &zi);
        ext.reverse();
        self.run(&mut ext, &zi);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

fn map_channels(rec: &Recording, f: impl Fn(usize, &[f64]) -> Result<Vec<f64>>) -> Result<Recording> {
    let (n_ch, n) = rec.samples().dim();
    let mut out = Array2::zeros((n_ch, n));
    for ch in 0..n_ch {
        let row = rec.channel(ch).to_vec();
        let filtered = f(ch, &row)?;
        out.row_mut(ch).assign(&ndarray::ArrayView1::from(&filtered));
    }
    rec.with_samples(out)
}

/// Zero-phase Butterworth band-pass of every channel.
pub fn butterworth_bandpass(rec: &Recording, spec: &BandpassSpec) -> Result<Recording> {
    if (spec.sampling_rate_hz - rec.sampling_rate_hz()).abs() > 1e-9 {
        bail!(
            InvalidArgument,
            "filter designed for {} Hz applied to a {} Hz recording",
            spec.sampling_rate_hz,
            rec.sampling_rate_hz()
        );
    }
    if rec.n_samples() <= 3 * spec.order {
        bail!(
            InvalidArgument,
            "recording of {} samples is too short for an order-{} filter",
            rec.n_samples(),
            spec.order
        );
    }
    let sos = design_butterworth_bandpass(spec)?;
    let pad = 3 * spec.order;
    map_channels(rec, |_, x| Ok(sos.filtfilt(x, pad)))
}

fn mean_and_population_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardises every channel to mean 0 and population sd 1.
pub fn zscore_channels(rec: &Recording) -> Result<Recording> {
    map_channels(rec, |ch, x| {
        let (mean, sd) = mean_and_population_sd(x);
        if !(sd > 1e-12 * (1.0 + mean.abs())) {
            bail!(InvalidArgument, "channel `{}` has zero variance", rec.channel_names()[ch]);
        }
        Ok(x.iter().map(|v| (v - mean) / sd).collect())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Muscle,
}

impl ArtifactKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Muscle => "muscle",
        }
    }
}

/// A flagged span `[start_sample, end_sample)` on one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactAnnotation {
    pub channel: String,
    pub start_sample: usize,
    pub end_sample: usize,
    pub kind: ArtifactKind,
    pub zscore_peak: f64,
}

pub const MUSCLE_BAND_HZ: (f64, f64) = (20.0, 140.0);
pub const DEFAULT_MUSCLE_Z: f64 = 4.0;
pub const ENVELOPE_SECONDS: f64 = 0.1;

/// Centred moving average; windows shrink at the edges.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    let w = window.max(1);
    let before = (w - 1) / 2;
    let after = w - 1 - before;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Maximal runs where `z > threshold`, as `(start, end_exclusive, peak)`.
pub fn exceedance_runs(z: &[f64], threshold: f64) -> Vec<(usize, usize, f64)> {
    let mut runs = Vec::new();
    let mut current: Option<(usize, f64)> = None;
    for (i, &v) in z.iter().enumerate() {
        match (&mut current, v > threshold) {
            (None, true) => current = Some((i, v)),
            (Some((_, peak)), true) => *peak = peak.max(v),
            (Some((start, peak)), false) => {
                runs.push((*start, i, *peak));
                current = None;
            }
            (None, false) => {}
        }
    }
    if let Some((start, peak)) = current {
        runs.push((start, z.len(), peak));
    }
    runs
}

/// High-frequency envelope z-score detector. Per channel: 20-140 Hz band-pass,
/// rectify, 0.1 s moving average, z-score, report runs above `z_threshold`.
pub fn annotate_muscle_artifacts(rec: &Recording, z_threshold: f64) -> Result<Vec<ArtifactAnnotation>> {
    let fs = rec.sampling_rate_hz();
    if !(fs > 2.0 * MUSCLE_BAND_HZ.1) {
        bail!(
            InvalidArgument,
            "muscle detection needs a sampling rate above {} Hz, got {fs}",
            2.0 * MUSCLE_BAND_HZ.1
        );
    }
    if !(z_threshold > 0.0) {
        bail!(InvalidArgument, "z threshold must be positive, got {z_threshold}");
    }
    let spec = BandpassSpec::new(MUSCLE_BAND_HZ.0, MUSCLE_BAND_HZ.1, 4, fs)?;
    let sos = design_butterworth_bandpass(&spec)?;
    let window = (ENVELOPE_SECONDS * fs).round() as usize;
    let pad = window.max(3 * spec.order);
    let mut out = Vec::new();
    for (ch, name) in rec.channel_names().iter().enumerate() {
        let x = rec.channel(ch).to_vec();
        let hf = sos.filtfilt(&x, pad);
        let rectified: Vec<f64> = hf.iter().map(|v| v.abs()).collect();
        let env = moving_average(&rectified, window);
        let (mean, sd) = mean_and_population_sd(&env);
        if !(sd > 0.0) {
            continue;
        }
        let z: Vec<f64> = env.iter().map(|v| (v - mean) / sd).collect();
        for (start, end, peak) in exceedance_runs(&z, z_threshold) {
            out.push(ArtifactAnnotation {
                channel: name.clone(),
                start_sample: start,
                end_sample: end,
                kind: ArtifactKind::Muscle,
                zscore_peak: peak,
            });
        }
    }
    Ok(out)
}

/// Markers whose `[start, start + epoch_len)` window touches no annotation.
pub fn drop_contaminated(markers: &[Marker], epoch_len: usize, annotations: &[ArtifactAnnotation]) -> Vec<Marker> {
    markers
        .iter()
        .copied()
        .filter(|m| {
            let end = m.start_sample + epoch_len;
            !annotations
                .iter()
                .any(|a| a.start_sample < end && m.start_sample < a.end_sample)
        })
        .collect()
}

/// csv export: `channel,start_sample,end_sample,kind,zscore_peak`.
pub fn save_annotations(path: &Path, annotations: &[ArtifactAnnotation]) -> Result<()> {
    let mut s = String::from("channel,start_sample,end_sample,kind,zscore_peak\n");
    for a in annotations {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            a.channel,
            a.start_sample,
            a.end_sample,
            a.kind.as_str(),
            a.zscore_peak
        ));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FS: f64 = 512.0;

    fn sine(freq: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / FS).sin()).collect()
    }

    fn rec(rows: Vec<Vec<f64>>) -> Recording {
        let n = rows[0].len();
        let names = (0..rows.len()).map(|i| format!("ch{i}")).collect();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Recording::new(names, FS, Array2::from_shape_vec((flat.len() / n, n), flat).unwrap()).unwrap()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    /// Analog Butterworth band-pass magnitude at a pre-warped frequency; the
    /// bilinear transform maps it exactly onto the digital response.
    fn analog_gain(f: f64, spec: &BandpassSpec) -> f64 {
        let warp = |f: f64| 2.0 * FS * (PI * f / FS).tan();
        let (w, wl, wh) = (warp(f), warp(spec.low_hz), warp(spec.high_hz));
        let x = (w * w - wl * wh) / (w * (wh - wl));
        1.0 / (1.0 + x.powi(2 * spec.order as i32)).sqrt()
    }

    #[test]
    fn design_matches_analog_magnitude() {
        let spec = BandpassSpec::mu_beta(FS).unwrap();
        let sos = design_butterworth_bandpass(&spec).unwrap();
        for f in [2.0, 5.0, 8.0, 12.0, 20.0, 30.0, 45.0, 100.0] {
            let got = sos.response(f, FS).norm();
            assert!((got - analog_gain(f, &spec)).abs() < 1e-9, "f={f}: {got}");
        }
        assert!((sos.response(8.0, FS).norm() - 0.5f64.sqrt()).abs() < 1e-9);
        assert!(sos.response(0.0, FS).norm() < 1e-12);
    }

    #[test]
    fn passband_tone_kept() {
        let spec = BandpassSpec::mu_beta(FS).unwrap();
        let x = sine(20.0, 4096);
        let y = butterworth_bandpass(&rec(vec![x.clone()]), &spec).unwrap();
        let y = y.channel(0).to_vec();
        let mid = 512..4096 - 512;
        let ratio = rms(&y[mid.clone()]) / rms(&x[mid]);
        let expected = analog_gain(20.0, &spec).powi(2);
        assert!((ratio - expected).abs() < 0.01, "{ratio} vs {expected}");
        assert!((ratio - 1.0).abs() < 0.05);
    }

    #[test]
    fn stopband_tone_removed() {
        let spec = BandpassSpec::mu_beta(FS).unwrap();
        let x = sine(2.0, 4096);
        let y = butterworth_bandpass(&rec(vec![x.clone()]), &spec).unwrap();
        let y = y.channel(0).to_vec();
        let mid = 512..4096 - 512;
        assert!(rms(&y[mid.clone()]) < 0.05 * rms(&x[mid]));
        // 40 dB or more of DC rejection
        assert!(analog_gain(0.01, &spec).powi(2) < 1e-2);
    }

    #[test]
    fn zero_in_zero_out() {
        let spec = BandpassSpec::mu_beta(FS).unwrap();
        let y = butterworth_bandpass(&rec(vec![vec![0.0; 1000]]), &spec).unwrap();
        assert!(y.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_phase_tone() {
        let spec = BandpassSpec::mu_beta(FS).unwrap();
        let x = sine(15.0, 4096);
        let y = butterworth_bandpass(&rec(vec![x.clone()]), &spec).unwrap();
        let y = y.channel(0).to_vec();
        let mid = 512..4096 - 512;
        let best = (-20i64..=20)
            .max_by(|&a, &b| {
                let cc = |lag: i64| -> f64 {
                    mid.clone()
                        .map(|i| x[i] * y[(i as i64 + lag) as usize])
                        .sum()
                };
                cc(a).partial_cmp(&cc(b)).unwrap()
            })
            .unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn nyquist_violation_names_high_edge() {
        let err = BandpassSpec::new(8.0, 300.0, 4, FS).unwrap_err().to_string();
        assert!(err.contains("high_hz"), "{err}");
        assert!(BandpassSpec::new(8.0, 30.0, 3, FS).is_err());
        assert!(BandpassSpec::new(30.0, 8.0, 4, FS).is_err());
    }

    #[test]
    fn zscore_hand_values() {
        let r = rec(vec![vec![1.0, 2.0, 3.0]]);
        let z = zscore_channels(&r).unwrap();
        let expected = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        for (a, b) in z.channel(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zscore_constant_channel_rejected() {
        let r = rec(vec![vec![1.0, 2.0, 3.0], vec![5.0, 5.0, 5.0]]);
        let err = zscore_channels(&r).unwrap_err().to_string();
        assert!(err.contains("ch1"), "{err}");
    }

    #[test]
    fn zscore_moments_and_idempotence() {
        let x: Vec<f64> = (0..777).map(|i| ((i * 37 % 101) as f64).sin() * 13.0 + 4.0).collect();
        let z = zscore_channels(&rec(vec![x])).unwrap();
        let (m, sd) = mean_and_population_sd(&z.channel(0).to_vec());
        assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
        let zz = zscore_channels(&z).unwrap();
        for (a, b) in z.samples().iter().zip(zz.samples().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    fn noise(n: usize, seed: u64, scale: f64) -> Vec<f64> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| { let v: f64 = StandardNormal.sample(&mut rng); scale * v }).collect()
    }

    #[test]
    fn clean_signal_has_no_muscle_annotation() {
        let s = sine(10.0, 4096);
        let n = noise(4096, 1, 0.01);
        let x: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + b).collect();
        assert!(annotate_muscle_artifacts(&rec(vec![x]), 4.0).unwrap().is_empty());
    }

    #[test]
    fn burst_is_annotated_once() {
        let base = noise(4096, 2, 0.1);
        let burst = noise(4096, 3, 1.0);
        let len = (0.2 * FS) as usize;
        let mut x = base.clone();
        for i in 1000..1000 + len {
            x[i] += burst[i];
        }
        let ann = annotate_muscle_artifacts(&rec(vec![x]), 4.0).unwrap();
        assert_eq!(ann.len(), 1, "{ann:?}");
        let a = &ann[0];
        assert!(a.start_sample < 1000 + len && 1000 < a.end_sample);
        assert!(a.zscore_peak > 4.0);
    }

    #[test]
    fn muscle_preconditions() {
        let r = rec(vec![sine(10.0, 1024)]);
        assert!(annotate_muscle_artifacts(&r, 0.0).is_err());
        let low = Recording::new(vec!["a".into()], 256.0, Array2::zeros((1, 1024))).unwrap();
        assert!(annotate_muscle_artifacts(&low, 4.0).is_err());
    }

    /// Direct scan oracle for run detection.
    fn scan_runs(z: &[f64], thr: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < z.len() {
            if z[i] > thr {
                let s = i;
                while i < z.len() && z[i] > thr {
                    i += 1;
                }
                out.push((s, i));
            } else {
                i += 1;
            }
        }
        out
    }

    #[test]
    fn contaminated_epochs_dropped() {
        let ann = vec![ArtifactAnnotation {
            channel: "C3".into(),
            start_sample: 600,
            end_sample: 700,
            kind: ArtifactKind::Muscle,
            zscore_peak: 5.0,
        }];
        let markers = [
            Marker { start_sample: 0, label: 0 },
            Marker { start_sample: 512, label: 1 },
            Marker { start_sample: 1024, label: 0 },
        ];
        let kept = drop_contaminated(&markers, 512, &ann);
        assert_eq!(kept, vec![markers[0], markers[2]]);
    }

    proptest! {
        #[test]
        fn runs_match_scan(z in proptest::collection::vec(-3.0f64..6.0, 0..200), thr in 0.5f64..4.0) {
            let runs = exceedance_runs(&z, thr);
            let spans: Vec<(usize, usize)> = runs.iter().map(|r| (r.0, r.1)).collect();
            prop_assert_eq!(&spans, &scan_runs(&z, thr));
            for w in spans.windows(2) {
                prop_assert!(w[0].1 < w[1].0);
            }
        }

        #[test]
        fn filtering_is_linear(seed in 0u64..50, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let spec = BandpassSpec::mu_beta(FS).unwrap();
            let sos = design_butterworth_bandpass(&spec).unwrap();
            let x = noise(700, seed, 1.0);
            let y = noise(700, seed + 1000, 1.0);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let fx = sos.filtfilt(&x, 12);
            let fy = sos.filtfilt(&y, 12);
            let fm = sos.filtfilt(&mix, 12);
            let scale = fm.iter().map(|v| v.abs()).fold(1e-12, f64::max);
            for i in 0..mix.len() {
                let lin = a * fx[i] + b * fy[i];
                prop_assert!((fm[i] - lin).abs() <= 1e-6 * scale);
            }
        }
    }
}
