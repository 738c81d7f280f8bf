//! `eegb` v1 binary recordings, csv import and marker files.
//!
//! eegb layout, all integers little-endian:
//!
//! ```text
//! "EEGB" | u16 version=1 | u16 n_channels | u32 n_samples | f32 sampling_rate_hz
//! per channel: u8 name_len | name bytes (ASCII)
//! f32 samples, channel-major: ch0[0..n], ch1[0..n], ...
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{Marker, Recording};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EEGB";
const VERSION: u16 = 1;

/// On-disk recording formats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecordingFormat {
    Eegb,
    /// Header row of channel names after a time column; the rate is not in
    /// the file.
    Csv { sampling_rate_hz: f64 },
}

pub fn load_recording(path: &Path, format: RecordingFormat) -> Result<Recording> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let rec = match format {
        RecordingFormat::Eegb => read_eegb(BufReader::new(file)),
        RecordingFormat::Csv { sampling_rate_hz } => read_csv(BufReader::new(file), sampling_rate_hz),
    };
    rec.map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_recording(path: &Path, rec: &Recording) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_eegb(&mut w, rec)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_eegb<W: Write>(mut w: W, rec: &Recording) -> Result<()> {
    let n_channels = u16::try_from(rec.n_channels())
        .map_err(|_| Error::Format("more than 65535 channels".into()))?;
    let n_samples = u32::try_from(rec.n_samples())
        .map_err(|_| Error::Format("more than u32::MAX samples".into()))?;
    let mut buf = Vec::with_capacity(16 + rec.n_channels() * (rec.n_samples() * 4 + 8));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&n_channels.to_le_bytes());
    buf.extend_from_slice(&n_samples.to_le_bytes());
    buf.extend_from_slice(&(rec.sampling_rate_hz() as f32).to_le_bytes());
    for name in rec.channel_names() {
        if !name.is_ascii() || name.len() > u8::MAX as usize {
            return Err(Error::Format(format!(
                "channel name `{name}` must be ASCII and at most 255 bytes"
            )));
        }
        buf.push(name.len() as u8);
        buf.extend_from_slice(name.as_bytes());
    }
    for v in rec.samples().iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)
        .map_err(|e| Error::io("<eegb writer>", e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated at byte {} while reading {what}",
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_eegb<R: Read>(mut r: R) -> Result<Recording> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::io("<eegb reader>", e))?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic at byte 0".into()));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version} at byte 4")));
    }
    let n_channels = c.u16("channel count")? as usize;
    let n_samples = c.u32("sample count")? as usize;
    let rate = c.f32("sampling rate")?;
    if n_channels == 0 || n_samples == 0 {
        return Err(Error::Format(format!(
            "header declares {n_channels} channels x {n_samples} samples"
        )));
    }
    let mut names = Vec::with_capacity(n_channels);
    for ch in 0..n_channels {
        let offset = c.pos;
        let len = c.u8("channel name length")? as usize;
        let bytes = c.take(len, "channel name")?;
        let name = std::str::from_utf8(bytes)
            .ok()
            .filter(|s| s.is_ascii())
            .ok_or_else(|| Error::Format(format!("channel {ch} name at byte {offset} is not ASCII")))?;
        names.push(name.to_string());
    }
    let data_start = c.pos;
    let expected = n_channels * n_samples * 4;
    if buf.len() - data_start != expected {
        return Err(Error::Format(format!(
            "channel-count mismatch: header implies {expected} sample bytes after byte {data_start}, file has {}",
            buf.len() - data_start
        )));
    }
    let mut samples = Vec::with_capacity(n_channels * n_samples);
    for i in 0..n_channels * n_samples {
        let at = c.pos;
        let v = c.f32("samples")?;
        if !v.is_finite() {
            return Err(Error::Format(format!(
                "non-finite sample at byte {at} (channel {}, sample {})",
                i / n_samples,
                i % n_samples
            )));
        }
        samples.push(v as f64);
    }
    let arr = Array2::from_shape_vec((n_channels, n_samples), samples).unwrap();
    Recording::new(names, rate as f64, arr)
}

fn read_csv<R: Read>(r: R, sampling_rate_hz: f64) -> Result<Recording> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("csv header: {e}")))?
        .clone();
    if headers.len() < 2 {
        return Err(Error::Format("csv needs a time column and at least one channel".into()));
    }
    let names: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 2; // 1-based, after the header
        let record = record.map_err(|e| Error::Format(format!("row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(Error::Format(format!(
                "row {row}: channel-count mismatch, {} fields for {} columns",
                record.len(),
                headers.len()
            )));
        }
        for (ch, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Format(format!("row {row}, column `{}`: cannot parse `{field}`", names[ch]))
            })?;
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "row {row}, column `{}`: non-finite sample",
                    names[ch]
                )));
            }
            columns[ch].push(v);
        }
    }
    let n_samples = columns[0].len();
    let flat: Vec<f64> = columns.into_iter().flatten().collect();
    let arr = Array2::from_shape_vec((names.len(), n_samples), flat)
        .map_err(|e| Error::Format(e.to_string()))?;
    Recording::new(names, sampling_rate_hz, arr)
}

/// Reads a `start_sample,label` csv.
pub fn load_markers(path: &Path) -> Result<Vec<Marker>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["start_sample", "label"] {
        return Err(Error::Format(format!(
            "{}: marker header must be `start_sample,label`",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Format(format!("{} row {row}: {e}", path.display())))?;
        let parse = |idx: usize| -> Result<usize> {
            rec.get(idx)
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("{} row {row}: bad integer", path.display())))
        };
        out.push(Marker {
            start_sample: parse(0)?,
            label: parse(1)?,
        });
    }
    Ok(out)
}

pub fn save_markers(path: &Path, markers: &[Marker]) -> Result<()> {
    let mut s = String::from("start_sample,label\n");
    for m in markers {
        s.push_str(&format!("{},{}\n", m.start_sample, m.label));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Recording {
        let arr = Array2::from_shape_vec((2, 4), vec![1.0, -2.5, 3.25, 0.0, 7.0, 8.5, -9.0, 1e-3])
            .unwrap();
        Recording::new(vec!["C3".into(), "C4".into()], 512.0, arr).unwrap()
    }

    #[test]
    fn eegb_round_trip_small() {
        let rec = small();
        let mut bytes = Vec::new();
        write_eegb(&mut bytes, &rec).unwrap();
        let back = read_eegb(bytes.as_slice()).unwrap();
        assert_eq!(back.channel_names(), rec.channel_names());
        assert_eq!(back.samples().dim(), (2, 4));
        for (a, b) in back.samples().iter().zip(rec.samples().iter()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn eegb_bad_magic() {
        let mut bytes = Vec::new();
        write_eegb(&mut bytes, &small()).unwrap();
        bytes[0] = b'X';
        let err = read_eegb(bytes.as_slice()).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn eegb_truncated_and_non_finite() {
        let mut bytes = Vec::new();
        write_eegb(&mut bytes, &small()).unwrap();
        let short = &bytes[..bytes.len() - 3];
        assert!(read_eegb(short).unwrap_err().to_string().contains("mismatch"));
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = read_eegb(bytes.as_slice()).unwrap_err().to_string();
        assert!(err.contains("byte") && err.contains("non-finite"), "{err}");
    }

    #[test]
    fn csv_import() {
        let text = "t,C3,C4\n0,1.0,2.0\n1,3.0,4.0\n2,5.0,6.0\n";
        let rec = read_csv(text.as_bytes(), 256.0).unwrap();
        assert_eq!(rec.channel_names(), ["C3", "C4"]);
        assert_eq!(rec.samples().dim(), (2, 3));
        assert_eq!(rec.samples()[[1, 2]], 6.0);
        assert_eq!(rec.sampling_rate_hz(), 256.0);
    }

    #[test]
    fn csv_errors_name_row() {
        let text = "t,C3,C4\n0,1.0,2.0\n1,3.0\n";
        let err = read_csv(text.as_bytes(), 256.0).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
        let text = "t,C3\n0,abc\n";
        let err = read_csv(text.as_bytes(), 256.0).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
    }

    #[test]
    fn markers_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let markers = vec![
            Marker { start_sample: 0, label: 1 },
            Marker { start_sample: 512, label: 3 },
        ];
        save_markers(&path, &markers).unwrap();
        assert_eq!(load_markers(&path).unwrap(), markers);
    }
}
