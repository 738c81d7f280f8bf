use eegdiff::data::AdjacencyTable;
use eegdiff::diffusion::{
    ddpm_sample_batch, forward_diffuse_closed, train_ddpm, DdpmTrainConfig, NoiseSchedule, ReconstructionJob,
    SamplingVariant, UnetConfig,
};
use eegdiff::nn::Tensor;
use eegdiff::pipeline::{synthetic_epoch_set, PipelineConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

#[test]
fn last_step_is_standard_normal() {
    let s = NoiseSchedule::standard();
    let t = s.len() - 1;
    // product oracle for alpha_bar[T-1]
    let ab: f64 = s.beta().iter().map(|b| 1.0 - b).product();
    assert!((s.alpha_bar()[t] - ab).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 10_000;
    // unit-scaled data, far from Gaussian: a +-1 square wave
    let x0 = Tensor::from_fn(&[n], |i| if (i / 7) % 2 == 0 { 1.0 } else { -1.0 });
    let noise = Tensor::randn(&[n], &mut rng);
    let xt = forward_diffuse_closed(&x0, t, &s, &noise).unwrap();
    let mut v = xt.into_data();
    v.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    let ks = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.02, "KS statistic {ks}");
}

#[test]
fn denoiser_depends_on_condition_order() {
    let cfg = PipelineConfig::default();
    let set = synthetic_epoch_set(&cfg, 5, 4).unwrap();
    let table = AdjacencyTable::default();
    let row = &table.entries()[6];
    let mut job = ReconstructionJob::new(row, NoiseSchedule::compressed(50).unwrap(), UnetConfig::desk(), 1).unwrap();
    let all: Vec<usize> = (0..set.len()).collect();
    let (x0, cond) = job.tensors(&set, &all).unwrap();
    let train = DdpmTrainConfig {
        epochs: 10,
        batch_size: 10,
        lr: 1e-3,
        halve_every: 100,
        seed: 1,
    };
    train_ddpm(&mut job, &x0, &cond, &train, |_, _| {}).unwrap();

    let (n, l) = (cond.dim(0), cond.dim(2));
    let mut swapped = cond.clone();
    for i in 0..n {
        let base = i * 2 * l;
        let (a, b) = swapped.data_mut()[base..base + 2 * l].split_at_mut(l);
        a.swap_with_slice(b);
    }
    let rngs = |k: u64| -> Vec<ChaCha8Rng> { (0..n).map(|i| ChaCha8Rng::seed_from_u64(k + i as u64)).collect() };
    let schedule = job.schedule.clone();
    let variant = SamplingVariant::PaperDeterministic;
    let a = ddpm_sample_batch(&mut job.model, &schedule, &cond, &mut rngs(3), variant).unwrap();
    let b = ddpm_sample_batch(&mut job.model, &schedule, &swapped, &mut rngs(3), variant).unwrap();
    let changed = (0..n)
        .filter(|&i| {
            a.data()[i * l..(i + 1) * l]
                .iter()
                .zip(&b.data()[i * l..(i + 1) * l])
                .any(|(x, y)| (x - y).abs() > 1e-6)
        })
        .count();
    assert!(changed as f64 >= 0.95 * n as f64, "only {changed} of {n} epochs changed");
}
