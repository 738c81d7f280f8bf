//! Plot-data export and the artifact manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Recording;
use crate::dsp::moving_average;
use crate::error::{bail, Error, Result};

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 240.0;
const MARGIN: f64 = 30.0;

fn polyline(t: &[f64], y: &[f64], lo: f64, hi: f64, style: &str) -> String {
    let (t0, t1) = (t[0], *t.last().unwrap());
    let span_t = (t1 - t0).max(f64::EPSILON);
    let span_y = (hi - lo).max(f64::EPSILON);
    let mut pts = String::new();
    for (a, b) in t.iter().zip(y) {
        let x = MARGIN + (a - t0) / span_t * (SVG_W - 2.0 * MARGIN);
        let yy = SVG_H - MARGIN - (b - lo) / span_y * (SVG_H - 2.0 * MARGIN);
        let _ = write!(pts, "{x:.2},{yy:.2} ");
    }
    format!("<polyline fill=\"none\" {style} points=\"{}\"/>\n", pts.trim_end())
}

fn render_svg(channel: &str, t: &[f64], real: &[f64], synth: &[f64], provenance: &str) -> String {
    let lo = real.iter().chain(synth).cloned().fold(f64::INFINITY, f64::min);
    let hi = real.iter().chain(synth).cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = String::new();
    let _ = writeln!(s, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\">");
    let _ = writeln!(s, "<!-- {provenance} -->");
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{MARGIN}\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">{channel}: real (solid) vs synthetic (dashed), {:.1}-{:.1} s</text>",
        t[0],
        t[t.len() - 1]
    );
    s.push_str(&polyline(t, real, lo, hi, "stroke=\"#1f4e9c\" stroke-width=\"1.2\""));
    s.push_str(&polyline(t, synth, lo, hi, "stroke=\"#c0392b\" stroke-width=\"1.2\" stroke-dasharray=\"5,3\""));
    s.push_str("</svg>\n");
    s
}

/// For each channel writes `signal_<ch>.csv` (`time_s,real,synthetic`) and
/// `signal_<ch>.svg` over `[start_s, end_s)`, after a centred moving average
/// of `smoothing_s` seconds. Returns the written paths.
pub fn export_signal_comparison(
    real: &Recording,
    synthetic: &Recording,
    channels: &[String],
    window_s: (f64, f64),
    smoothing_s: f64,
    out_dir: &Path,
    provenance: &str,
) -> Result<Vec<PathBuf>> {
    let fs = real.sampling_rate_hz();
    if synthetic.sampling_rate_hz() != fs {
        bail!(InvalidArgument, "real and synthetic sampling rates differ");
    }
    let (a, b) = window_s;
    let start = (a * fs).round() as isize;
    let end = (b * fs).round() as isize;
    let n = real.n_samples().min(synthetic.n_samples()) as isize;
    if !(a >= 0.0 && start < end && end <= n) {
        bail!(InvalidArgument, "window ({a}, {b}) s is outside the {:.2} s recordings", n as f64 / fs);
    }
    let (start, end) = (start as usize, end as usize);
    if smoothing_s < 0.0 {
        bail!(InvalidArgument, "smoothing must be non-negative, got {smoothing_s}");
    }
    let w = ((smoothing_s * fs).round() as usize).max(1);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for ch in channels {
        let r = moving_average(&real.channel(real.channel_index(ch)?).to_vec(), w);
        let s = moving_average(&synthetic.channel(synthetic.channel_index(ch)?).to_vec(), w);
        let t: Vec<f64> = (start..end).map(|i| i as f64 / fs).collect();
        let (r, s) = (&r[start..end], &s[start..end]);
        let mut csv = String::from("time_s,real,synthetic\n");
        for ((ti, ri), si) in t.iter().zip(r).zip(s) {
            let _ = writeln!(csv, "{ti:.6},{ri:.6},{si:.6}");
        }
        let csv_path = out_dir.join(format!("signal_{ch}.csv"));
        write(&csv_path, &csv)?;
        let svg_path = out_dir.join(format!("signal_{ch}.svg"));
        write(&svg_path, &render_svg(ch, &t, r, s, provenance))?;
        written.push(csv_path);
        written.push(svg_path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Hashes every file under `dirs` (except `manifest` itself) into a sorted
/// list and writes it as JSON to `manifest`.
pub fn write_manifest(manifest: &Path, dirs: &[&Path]) -> Result<Vec<ManifestEntry>> {
    let mut files = Vec::new();
    for d in dirs {
        collect_files(d, &mut files)?;
    }
    files.sort();
    files.dedup();
    let mut entries = Vec::with_capacity(files.len());
    for f in files {
        if f == manifest {
            continue;
        }
        let bytes = std::fs::read(&f).map_err(|e| Error::io(&f, e))?;
        entries.push(ManifestEntry {
            path: f.display().to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
    }
    let json = serde_json::to_string_pretty(&entries).map_err(|e| Error::Format(e.to_string()))?;
    write(manifest, &json)?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn rec(n: usize) -> Recording {
        let names = vec!["C3".to_string(), "C4".to_string()];
        let data = Array2::from_shape_fn((2, n), |(c, i)| ((i as f64) * 0.01 + c as f64).sin());
        Recording::new(names, 512.0, data).unwrap()
    }

    #[test]
    fn identical_inputs_give_equal_columns() {
        let dir = tempfile::tempdir().unwrap();
        let r = rec(512 * 13);
        let files = export_signal_comparison(&r, &r, &["C3".into()], (6.0, 12.0), 0.05, dir.path(), "test").unwrap();
        assert_eq!(files.len(), 2);
        let csv = std::fs::read_to_string(dir.path().join("signal_C3.csv")).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 3072);
        for row in rows {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols[1], cols[2]);
        }
        let svg = std::fs::read_to_string(dir.path().join("signal_C3.svg")).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("<!-- test -->"));
    }

    #[test]
    fn bad_window_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = rec(512 * 4);
        assert!(export_signal_comparison(&r, &r, &["C3".into()], (6.0, 12.0), 0.05, dir.path(), "").is_err());
        assert!(export_signal_comparison(&r, &r, &["C3".into()], (2.0, 1.0), 0.05, dir.path(), "").is_err());
        assert!(export_signal_comparison(&r, &r, &["Cz".into()], (0.0, 1.0), 0.05, dir.path(), "").is_err());
    }

    #[test]
    fn manifest_lists_hashes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"abc").unwrap();
        let m = dir.path().join("manifest.json");
        let entries = write_manifest(&m, &[dir.path()]).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert!(m.exists());
    }
}
