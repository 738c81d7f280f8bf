//! The autodiff graph on its own: fits a small conv net to a sine wave
//! with Adam, then checks one gradient against a central difference.
//!
//! cargo run --release --example autodiff

use eegdiff::nn::{adam_step, AdamState, Conv1d, Graph, ParamStore, Tensor};
use rand::SeedableRng;

fn main() -> eegdiff::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let conv1 = Conv1d::new(&mut store, "c1", 1, 8, 5, 1, 2, &mut rng);
    let conv2 = Conv1d::new(&mut store, "c2", 8, 1, 5, 1, 2, &mut rng);
    let x = Tensor::from_fn(&[4, 1, 64], |i| ((i % 64) as f64 * 0.2).sin());
    let y = Tensor::from_fn(&[4, 1, 64], |i| ((i % 64) as f64 * 0.2).cos());

    let loss_of = |store: &ParamStore| -> eegdiff::Result<(Graph, eegdiff::nn::Var)> {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let h = conv1.forward(&mut g, store, xi)?;
        let h = g.relu(h);
        let out = conv2.forward(&mut g, store, h)?;
        let target = g.input(y.clone());
        let loss = g.mse_loss(out, target)?;
        Ok((g, loss))
    };

    let mut adam = AdamState::new(&store, store.trainable_ids(), 1e-2);
    for step in 0..300 {
        store.zero_grad();
        let (g, loss) = loss_of(&store)?;
        g.backward(loss, &mut store)?;
        adam_step(&mut store, &mut adam)?;
        if step % 50 == 0 {
            println!("step {step:3}  mse {:.5}", g.value(loss).item());
        }
    }

    store.zero_grad();
    let (g, loss) = loss_of(&store)?;
    g.backward(loss, &mut store)?;
    let id = store.find("c1.weight").expect("registered");
    let analytic = store.grad(id).expect("has gradient").data()[3];
    let h = 1e-6;
    let mut eval = |delta: f64| -> eegdiff::Result<f64> {
        store.value_mut(id).data_mut()[3] += delta;
        let (g, l) = loss_of(&store)?;
        store.value_mut(id).data_mut()[3] -= delta;
        Ok(g.value(l).item())
    };
    let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
    println!("d loss / d c1.weight[3]: autodiff {analytic:.8}, central difference {numeric:.8}");
    Ok(())
}
