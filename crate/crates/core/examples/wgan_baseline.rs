//! Trains the WGAN-GP baseline for one electrode and prints how the
//! critic's Wasserstein estimate evolves.
//!
//! cargo run --release --example wgan_baseline

use eegdiff::data::AdjacencyTable;
use eegdiff::gan::{train_wgan, GanConfig, GanPair};
use eegdiff::pipeline::{synthetic_epoch_set, PipelineConfig};
use rand::SeedableRng;

fn main() -> eegdiff::Result<()> {
    let set = synthetic_epoch_set(&PipelineConfig::default(), 2, 1)?;
    let table = AdjacencyTable::default();
    let config = GanConfig {
        epochs: 300,
        batch_size: 8,
        ..GanConfig::desk()
    };
    let mut pair = GanPair::new(&table.entries()[0], set.epoch_len(), config, 0)?;
    let all: Vec<usize> = (0..set.len()).collect();
    let (x0, cond) = pair.tensors(&set, &all)?;
    let hist = train_wgan(&mut pair, &x0, &cond, |e, w| {
        if e % 25 == 0 {
            println!("epoch {e:3}  wasserstein estimate {w:8.3}");
        }
    })?;
    let last = hist.wasserstein.last().copied().unwrap_or(f64::NAN);
    println!("final estimate {last:.3}");

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let fake = pair.generate(&cond, &mut rng)?;
    println!("generated {:?}, critic gap {:.3}", fake.shape(), pair.mean_score(&x0, &cond)? - pair.mean_score(&fake, &cond)?);
    Ok(())
}
