//! Trains a conditional diffusion model for one electrode (T7 from C3 and
//! CP1) and reconstructs it on held-out epochs, comparing with the average
//! of the two input channels.
//!
//! cargo run --release --example ddpm_reconstruction [epochs]

use std::collections::BTreeMap;

use eegdiff::data::{split_labels, AdjacencyTable};
use eegdiff::diffusion::{reconstruct_channels, train_ddpm, ReconstructionJob, SamplingVariant};
use eegdiff::eval::pearson;
use eegdiff::pipeline::{synthetic_epoch_set, PipelineConfig};

fn main() -> eegdiff::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(40);
    let cfg = PipelineConfig::desk();
    let set = synthetic_epoch_set(&cfg, 30, 0)?;
    let split = split_labels(&set.labels(), 0.8, 0)?;
    let table = AdjacencyTable::default().restricted_to(&["T7".to_string()])?;
    let row = &table.entries()[0];

    let mut job = ReconstructionJob::new(row, cfg.ddpm.schedule()?, cfg.ddpm.unet(), 0)?;
    println!("{} parameters, T = {}", job.model.store.total_numel(), job.schedule.len());
    let (x0, cond) = job.tensors(&set, &split.train_indices)?;
    let train = eegdiff::diffusion::DdpmTrainConfig {
        epochs,
        ..cfg.ddpm.train(0)
    };
    train_ddpm(&mut job, &x0, &cond, &train, |e, loss| {
        if e % 10 == 0 || e + 1 == epochs {
            println!("epoch {e:3}  loss {loss:.4}");
        }
    })?;

    let test = set.subset(&split.test_indices);
    let mut models = BTreeMap::from([(row.target.clone(), job)]);
    let hybrid = reconstruct_channels(&test, &table, &mut models, 0, SamplingVariant::PaperDeterministic)?;

    let [t, a, b] = [&row.target, &row.inputs[0], &row.inputs[1]].map(|c| test.channel_index(c).unwrap());
    let (mut real, mut base, mut rec) = (Vec::new(), Vec::new(), Vec::new());
    for (e, h) in test.epochs.iter().zip(&hybrid.epochs) {
        real.extend(e.samples.row(t).iter());
        base.extend(e.samples.row(a).iter().zip(e.samples.row(b).iter()).map(|(x, y)| 0.5 * (x + y)));
        rec.extend(h.samples.row(t).iter());
    }
    println!(
        "{} on {} test epochs: PCC reconstruction {:.3}, mean of inputs {:.3}",
        row.target,
        test.len(),
        pearson(&real, &rec)?,
        pearson(&real, &base)?
    );
    Ok(())
}
