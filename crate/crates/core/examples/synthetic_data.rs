//! Generates a synthetic motor-imagery recording, runs the preprocessing
//! chain (muscle-artifact rejection, 8-30 Hz band-pass, z-scoring) and
//! prints a short summary per class.
//!
//! cargo run --release --example synthetic_data

use eegdiff::data::{segment_epochs, synthetic_recording, EpochSet, SynthParams, CLASS_NAMES};
use eegdiff::dsp::{annotate_muscle_artifacts, butterworth_bandpass, drop_contaminated, zscore_channels, BandpassSpec, DEFAULT_MUSCLE_Z};

fn main() -> eegdiff::Result<()> {
    let params = SynthParams::default();
    let (raw, markers) = synthetic_recording(&params, 20, 4, 32, 7)?;
    println!(
        "{} channels, {} samples at {} Hz, {} trials",
        raw.n_channels(),
        raw.n_samples(),
        raw.sampling_rate_hz(),
        markers.len()
    );

    let artifacts = annotate_muscle_artifacts(&raw, DEFAULT_MUSCLE_Z)?;
    let kept = drop_contaminated(&markers, params.epoch_len, &artifacts);
    println!("{} muscle-artifact spans, {} of {} trials kept", artifacts.len(), kept.len(), markers.len());

    let filtered = zscore_channels(&butterworth_bandpass(&raw, &BandpassSpec::mu_beta(raw.sampling_rate_hz())?)?)?;
    let epochs = segment_epochs(&filtered, &kept, params.epoch_len)?;
    let set = EpochSet::new(filtered.channel_names().to_vec(), filtered.sampling_rate_hz(), 4, epochs)?;

    // mean power at C3 / Cz / C4 per class: the class rhythms are
    // lateralised, so the ratios differ by class
    let chans = ["C3", "Cz", "C4"].map(|c| set.channel_index(c).unwrap());
    for (c, name) in CLASS_NAMES.iter().enumerate() {
        let of_class: Vec<_> = set.epochs.iter().filter(|e| e.label == c).collect();
        let power: Vec<f64> = chans
            .iter()
            .map(|&ch| {
                of_class.iter().map(|e| e.samples.row(ch).iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sum::<f64>()
                    / of_class.len() as f64
            })
            .collect();
        println!("{name:>10}: {} epochs, power C3 {:.2} Cz {:.2} C4 {:.2}", of_class.len(), power[0], power[1], power[2]);
    }
    Ok(())
}
