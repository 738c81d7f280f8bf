use eegdiff::data::AdjacencyTable;
use eegdiff::gan::{train_wgan, GanConfig, GanPair};
use eegdiff::pipeline::{synthetic_epoch_set, PipelineConfig};

/// The critic first pulls ahead (the Wasserstein estimate climbs), then the
/// generator catches up and the estimate falls back.
#[test]
fn wasserstein_estimate_rises_then_falls() {
    let set = synthetic_epoch_set(&PipelineConfig::default(), 2, 1).unwrap();
    let table = AdjacencyTable::default();
    let cfg = GanConfig {
        epochs: 500,
        batch_size: 8,
        seed: 0,
        ..GanConfig::desk()
    };
    let mut pair = GanPair::new(&table.entries()[0], set.epoch_len(), cfg, 0).unwrap();
    let all: Vec<usize> = (0..set.len()).collect();
    let (x0, cond) = pair.tensors(&set, &all).unwrap();
    let hist = train_wgan(&mut pair, &x0, &cond, |_, _| {}).unwrap();
    assert_eq!(hist.wasserstein.len(), 500);
    assert!(hist.critic_losses.iter().chain(&hist.generator_losses).all(|v| v.is_finite()));
    let peak = hist.wasserstein.iter().copied().fold(f64::MIN, f64::max);
    let start = hist.wasserstein[0];
    let tail = hist.wasserstein[450..].iter().sum::<f64>() / 50.0;
    assert!(peak > start + 1.0, "estimate never rose: start {start}, peak {peak}");
    assert!(tail < 0.5 * peak, "estimate stayed high: tail mean {tail}, peak {peak}");
}
