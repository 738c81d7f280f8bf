//! EEG containers, the 10-20 montage, dataset splitting and a synthetic
//! motor-imagery generator.

mod io;
mod montage;
mod split;
mod synth;

pub use io::{
    load_markers, load_recording, read_eegb, save_markers, save_recording, write_eegb,
    RecordingFormat,
};
pub use montage::{channel_position, AdjacencyRow, AdjacencyTable, BIOSEMI32, CLASS_NAMES};
pub use split::{split_dataset, split_labels, stratified_counts, DatasetSplit};
pub use synth::{make_synthetic_dataset, synthetic_recording, SynthParams};

use ndarray::{s, Array2, ArrayView1};

use crate::error::{bail, Error, Result};

/// A continuous multichannel recording, samples in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    channel_names: Vec<String>,
    sampling_rate_hz: f64,
    samples: Array2<f64>,
    pub subject_id: String,
    pub session_id: String,
}

impl Recording {
    /// Builds a recording from a `[n_channels, n_samples]` array.
    pub fn new(
        channel_names: Vec<String>,
        sampling_rate_hz: f64,
        samples: Array2<f64>,
    ) -> Result<Self> {
        let (n_channels, n_samples) = samples.dim();
        if channel_names.len() != n_channels {
            bail!(
                Shape,
                "{} channel names for {} sample rows",
                channel_names.len(),
                n_channels
            );
        }
        if !(sampling_rate_hz.is_finite() && sampling_rate_hz > 0.0) {
            bail!(InvalidArgument, "sampling rate must be positive, got {sampling_rate_hz}");
        }
        if n_samples == 0 || n_channels == 0 {
            bail!(InvalidArgument, "recording must have at least one channel and one sample");
        }
        for (i, name) in channel_names.iter().enumerate() {
            if channel_names[..i].contains(name) {
                bail!(InvalidArgument, "duplicate channel name `{name}`");
            }
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            bail!(
                NonFinite,
                "channel {} sample {}",
                channel_names[pos / n_samples],
                pos % n_samples
            );
        }
        Ok(Self {
            channel_names,
            sampling_rate_hz,
            samples: samples.as_standard_layout().into_owned(),
            subject_id: String::new(),
            session_id: String::new(),
        })
    }

    pub fn with_ids(mut self, subject_id: impl Into<String>, session_id: impl Into<String>) -> Self {
        self.subject_id = subject_id.into();
        self.session_id = session_id.into();
        self
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn sampling_rate_hz(&self) -> f64 {
        self.sampling_rate_hz
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        channel_index(&self.channel_names, name)
    }

    pub fn channel(&self, index: usize) -> ArrayView1<'_, f64> {
        self.samples.row(index)
    }

    /// Returns a copy with the sample matrix replaced; shape must match.
    pub fn with_samples(&self, samples: Array2<f64>) -> Result<Self> {
        if samples.dim() != self.samples.dim() {
            bail!(
                Shape,
                "replacement samples {:?} do not match recording {:?}",
                samples.dim(),
                self.samples.dim()
            );
        }
        let mut out = Recording::new(self.channel_names.clone(), self.sampling_rate_hz, samples)?;
        out.subject_id = self.subject_id.clone();
        out.session_id = self.session_id.clone();
        Ok(out)
    }
}

pub(crate) fn channel_index(names: &[String], name: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::MissingChannel(name.to_string()))
}

/// Where an epoch was cut from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EpochSource {
    pub subject_id: String,
    pub session_id: String,
    pub start_sample: usize,
}

/// A fixed-length labelled segment `[n_channels, epoch_len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub samples: Array2<f64>,
    pub label: usize,
    pub source: EpochSource,
}

impl Epoch {
    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Epoch length in samples for one second of data.
pub fn one_second_epoch_len(sampling_rate_hz: f64) -> usize {
    (sampling_rate_hz * 1.0).round() as usize
}

/// A trial onset marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Marker {
    pub start_sample: usize,
    pub label: usize,
}

/// Cuts one epoch per marker, copying `[start, start + epoch_len)`.
pub fn segment_epochs(rec: &Recording, markers: &[Marker], epoch_len: usize) -> Result<Vec<Epoch>> {
    if epoch_len == 0 {
        bail!(InvalidArgument, "epoch length must be positive");
    }
    markers
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let end = m.start_sample + epoch_len;
            if end > rec.n_samples() {
                bail!(
                    InvalidArgument,
                    "marker {i} (start {}) overruns recording end: {} > {}",
                    m.start_sample,
                    end,
                    rec.n_samples()
                );
            }
            Ok(Epoch {
                samples: rec.samples.slice(s![.., m.start_sample..end]).to_owned(),
                label: m.label,
                source: EpochSource {
                    subject_id: rec.subject_id.clone(),
                    session_id: rec.session_id.clone(),
                    start_sample: m.start_sample,
                },
            })
        })
        .collect()
}

/// A labelled epoch collection sharing one channel layout.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    pub channel_names: Vec<String>,
    pub sampling_rate_hz: f64,
    pub n_classes: usize,
    pub epochs: Vec<Epoch>,
}

impl EpochSet {
    pub fn new(
        channel_names: Vec<String>,
        sampling_rate_hz: f64,
        n_classes: usize,
        epochs: Vec<Epoch>,
    ) -> Result<Self> {
        if n_classes == 0 {
            bail!(InvalidArgument, "n_classes must be at least 1");
        }
        let shape = epochs.first().map(|e| e.samples.dim());
        for (i, e) in epochs.iter().enumerate() {
            if e.label >= n_classes {
                bail!(InvalidArgument, "epoch {i} has label {} >= n_classes {n_classes}", e.label);
            }
            if Some(e.samples.dim()) != shape {
                bail!(Shape, "epoch {i} has shape {:?}, expected {:?}", e.samples.dim(), shape);
            }
            if e.n_channels() != channel_names.len() {
                bail!(
                    Shape,
                    "epoch {i} has {} channels for {} names",
                    e.n_channels(),
                    channel_names.len()
                );
            }
        }
        Ok(Self {
            channel_names,
            sampling_rate_hz,
            n_classes,
            epochs,
        })
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.epochs.iter().map(|e| e.label).collect()
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        channel_index(&self.channel_names, name)
    }

    /// Clones the epochs at `indices` into a new set.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            channel_names: self.channel_names.clone(),
            sampling_rate_hz: self.sampling_rate_hz,
            n_classes: self.n_classes,
            epochs: indices.iter().map(|&i| self.epochs[i].clone()).collect(),
        }
    }

    /// Epoch length in samples (0 for an empty set).
    pub fn epoch_len(&self) -> usize {
        self.epochs.first().map_or(0, Epoch::len)
    }
}
