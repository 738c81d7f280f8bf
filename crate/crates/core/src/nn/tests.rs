use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Result;

const H: f64 = 1e-5;
const REL: f64 = 1e-4;

fn close(a: f64, n: f64) -> bool {
    (a - n).abs() <= REL * a.abs().max(n.abs()) + 1e-8
}

/// Contracts the op output with a fixed random tensor so every output
/// component contributes to a scalar.
fn scalarise(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = Tensor::randn(g.value(out).shape(), &mut rng);
    let p = g.mul_const(out, r)?;
    Ok(g.sum(p))
}

/// Central-difference check of every input component.
fn grad_check<F>(inputs: &[Tensor], seed: u64, build: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars).unwrap();
        let l = scalarise(&mut g, out, seed).unwrap();
        g.value(l).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input_with_grad(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let loss = scalarise(&mut g, out, seed).unwrap();
    let grads = g.backward(loss, &mut ParamStore::new()).unwrap();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = analytic.data()[i];
            assert!(close(a, numeric), "input {k} component {i}: autodiff {a} vs fd {numeric}");
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn conv1d_hand_example() {
    let mut g = Graph::new();
    let x = g.input(Tensor::new(vec![1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let w = g.input(Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap());
    let y = g.conv1d(x, w, None, 1, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 3]);
    assert_eq!(g.value(y).data(), &[3.0, 5.0, 7.0]);
    let y2 = g.conv1d(x, w, None, 2, 0).unwrap();
    assert_eq!(g.value(y2).shape(), &[1, 1, 2]);
}

#[test]
fn conv1d_identity_kernel() {
    let mut r = rng(1);
    let xt = Tensor::randn(&[2, 3, 7], &mut r);
    let mut wt = Tensor::zeros(&[3, 3, 1]);
    for c in 0..3 {
        wt.data_mut()[c * 3 + c] = 1.0;
    }
    let mut g = Graph::new();
    let x = g.input(xt.clone());
    let w = g.input(wt);
    let b = g.input(Tensor::zeros(&[3]));
    let y = g.conv1d(x, w, Some(b), 1, 0).unwrap();
    assert_eq!(g.value(y), &xt);
}

#[test]
fn conv1d_rejects_shape_mismatch() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[1, 2, 4]));
    let w = g.input(Tensor::zeros(&[1, 3, 2]));
    let msg = g.conv1d(x, w, None, 1, 0).unwrap_err().to_string();
    assert!(msg.contains("2 channels") && msg.contains("3"), "{msg}");
    let w = g.input(Tensor::zeros(&[1, 2, 9]));
    assert!(g.conv1d(x, w, None, 1, 0).is_err());
}

#[test]
fn conv_transpose_hand_upsampling() {
    let mut g = Graph::new();
    let x = g.input(Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap());
    let w = g.input(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
    let y = g.conv_transpose1d(x, w, None, 2, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 3]);
    assert_eq!(g.value(y).data(), &[1.0, 0.0, 1.0]);
    let id = g.conv_transpose1d(x, w, None, 1, 0).unwrap();
    assert_eq!(g.value(id).data(), &[1.0, 1.0]);
}

#[test]
fn conv_adjoint_identity() {
    let mut r = rng(2);
    for _ in 0..50 {
        let ci = r.random_range(1..4);
        let co = r.random_range(1..4);
        let k = r.random_range(1..5);
        let stride = r.random_range(1..4);
        let pad = r.random_range(0..k);
        let len = r.random_range(k.max(1)..=8);
        let lo = (len + 2 * pad - k) / stride + 1;
        let xt = Tensor::randn(&[2, ci, len], &mut r);
        let yt = Tensor::randn(&[2, co, lo], &mut r);
        let wt = Tensor::randn(&[co, ci, k], &mut r);
        let mut g = Graph::new();
        let x = g.input(xt.clone());
        let y = g.input(yt.clone());
        let w = g.input(wt);
        let cx = g.conv1d(x, w, None, stride, pad).unwrap();
        let ty = g.conv_transpose1d_to_len(y, w, None, stride, pad, len).unwrap();
        let lhs = g.value(cx).dot(&yt);
        let rhs = xt.dot(g.value(ty));
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}

#[test]
fn gradcheck_conv1d() {
    let mut r = rng(3);
    for trial in 0..20 {
        let ci = r.random_range(1..4);
        let co = r.random_range(1..4);
        let k = r.random_range(1..4);
        let stride = r.random_range(1..3);
        let pad = r.random_range(0..k);
        let len = r.random_range(k..=7);
        let inputs = [
            Tensor::randn(&[2, ci, len], &mut r),
            Tensor::randn(&[co, ci, k], &mut r),
            Tensor::randn(&[co], &mut r),
        ];
        grad_check(&inputs, trial, |g, v| g.conv1d(v[0], v[1], Some(v[2]), stride, pad));
    }
}

#[test]
fn gradcheck_conv_transpose1d() {
    let mut r = rng(4);
    for trial in 0..20 {
        let ci = r.random_range(1..4);
        let co = r.random_range(1..4);
        let k: usize = r.random_range(1..5);
        let stride = r.random_range(1..3);
        let pad = r.random_range(0..k.div_ceil(2));
        let len = r.random_range(2..=6);
        let inputs = [
            Tensor::randn(&[2, ci, len], &mut r),
            Tensor::randn(&[ci, co, k], &mut r),
            Tensor::randn(&[co], &mut r),
        ];
        grad_check(&inputs, trial, |g, v| g.conv_transpose1d(v[0], v[1], Some(v[2]), stride, pad));
    }
}

#[test]
fn gradcheck_linear_and_matmul() {
    let mut r = rng(5);
    for trial in 0..20 {
        let (b, i, o) = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..4));
        let inputs = [
            Tensor::randn(&[b, i], &mut r),
            Tensor::randn(&[o, i], &mut r),
            Tensor::randn(&[o], &mut r),
        ];
        grad_check(&inputs, trial, |g, v| g.linear(v[0], v[1], Some(v[2])));
        let inputs = [Tensor::randn(&[b, i], &mut r), Tensor::randn(&[i, o], &mut r)];
        grad_check(&inputs, trial, |g, v| {
            let m = g.matmul(v[0], v[1])?;
            g.transpose(m)
        });
    }
}

#[test]
fn gradcheck_batchnorm() {
    let mut r = rng(6);
    for trial in 0..20 {
        let (b, c, l) = (r.random_range(1..4), r.random_range(1..4), r.random_range(2..6));
        let inputs = [
            Tensor::randn(&[b, c, l], &mut r),
            Tensor::randn(&[c], &mut r),
            Tensor::randn(&[c], &mut r),
        ];
        grad_check(&inputs, trial, |g, v| Ok(g.batchnorm_train(v[0], v[1], v[2], 1e-5)?.0));
        let mean: Vec<f64> = (0..c).map(|_| r.random_range(-1.0..1.0)).collect();
        let var: Vec<f64> = (0..c).map(|_| r.random_range(0.5..2.0)).collect();
        grad_check(&inputs, trial, |g, v| g.batchnorm_eval(v[0], v[1], v[2], &mean, &var, 1e-5));
    }
}

#[test]
fn gradcheck_activations_and_losses() {
    let mut r = rng(7);
    for trial in 0..20 {
        let (b, c) = (r.random_range(1..4), r.random_range(2..5));
        let x = [Tensor::randn(&[b, c, 3], &mut r)];
        grad_check(&x, trial, |g, v| Ok(g.relu(v[0])));
        grad_check(&x, trial, |g, v| Ok(g.leaky_relu(v[0], 0.2)));
        grad_check(&x, trial, |g, v| g.max_pool1d(v[0], 2));
        grad_check(&x, trial, |g, v| g.global_avg_pool(v[0]));
        grad_check(&x, trial, |g, v| g.sum_per_item(v[0]));
        grad_check(&x, trial, |g, v| Ok(g.square(v[0])));
        let pos = [Tensor::randn(&[b, c], &mut r).map(|v| v.abs() + 0.5)];
        grad_check(&pos, trial, |g, v| Ok(g.sqrt(v[0])));
        let logits = [Tensor::randn(&[b, c], &mut r)];
        grad_check(&logits, trial, |g, v| g.softmax(v[0]));
        let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..c)).collect();
        grad_check(&logits, trial, |g, v| g.softmax_cross_entropy(v[0], &labels));
        let pair = [Tensor::randn(&[b, c], &mut r), Tensor::randn(&[b, c], &mut r)];
        grad_check(&pair, trial, |g, v| g.mse_loss(v[0], v[1]));
        grad_check(&pair, trial, |g, v| g.mul(v[0], v[1]));
        grad_check(&pair, trial, |g, v| {
            let s = g.sub(v[0], v[1])?;
            let a = g.add(s, v[1])?;
            let m = g.mean(a);
            g.broadcast(m, &[2, 2])
        });
    }
}

#[test]
fn gradcheck_channel_plumbing() {
    let mut r = rng(8);
    for trial in 0..20 {
        let (b, l) = (r.random_range(1..3), r.random_range(1..5));
        let inputs = [
            Tensor::randn(&[b, 2, l], &mut r),
            Tensor::randn(&[b, 3, l], &mut r),
            Tensor::randn(&[b, 5], &mut r),
        ];
        grad_check(&inputs, trial, |g, v| {
            let c = g.concat_channels(&[v[0], v[1]])?;
            let c = g.add_channel(c, v[2])?;
            let s = g.slice_channels(c, 1, 3)?;
            g.reshape(s, &[b, 3 * l])
        });
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut r = rng(9);
    let mut g = Graph::new();
    let x = g.input(Tensor::randn(&[16, 7], &mut r).scale(30.0));
    let y = g.softmax(x).unwrap();
    for row in g.value(y).data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn backward_square_sum_is_two_w() {
    let mut store = ParamStore::new();
    let wt = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
    let id = store.add("w", wt.clone());
    let mut g = Graph::new();
    let w = g.param(&store, id);
    let sq = g.mul(w, w).unwrap();
    let loss = g.sum(sq);
    g.backward(loss, &mut store).unwrap();
    assert_eq!(store.grad(id).unwrap(), &wt.scale(2.0));
    // a second call accumulates
    g.backward(loss, &mut store).unwrap();
    assert_eq!(store.grad(id).unwrap(), &wt.scale(4.0));
}

#[test]
fn backward_zero_path_and_non_scalar() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::ones(&[2]));
    let mut g = Graph::new();
    let w = g.param(&store, id);
    let z = g.scale(w, 0.0);
    let loss = g.sum(z);
    g.backward(loss, &mut store).unwrap();
    assert_eq!(store.grad(id).unwrap(), &Tensor::zeros(&[2]));
    let msg = g.backward(w, &mut store).unwrap_err().to_string();
    assert!(msg.contains("scalar"), "{msg}");
}

#[test]
fn symbolic_grad_matches_numeric_and_is_differentiable() {
    let mut r = rng(10);
    for trial in 0..20 {
        let xt = Tensor::randn(&[2, 2, 6], &mut r);
        let w1 = Tensor::randn(&[3, 2, 3], &mut r);
        let w2 = Tensor::randn(&[1, 18], &mut r);
        let critic = |g: &mut Graph, x: Var, w1: Var, w2: Var| -> Result<Var> {
            let h = g.conv1d(x, w1, None, 1, 1)?;
            let h = g.leaky_relu(h, 0.2);
            let h = g.reshape(h, &[2, 18])?;
            g.linear(h, w2, None)
        };
        // first-order: symbolic equals numeric
        let mut g = Graph::new();
        let x = g.input_with_grad(xt.clone());
        let (a, b) = (g.input(w1.clone()), g.input(w2.clone()));
        let out = critic(&mut g, x, a, b).unwrap();
        let sym = g.grad(out, &[x]).unwrap()[0];
        let s = g.sum(out);
        let num = g.backward(s, &mut ParamStore::new()).unwrap();
        assert!(g.value(sym).max_abs_diff(num.get(x).unwrap()) < 1e-12);
        // second-order: d/dw of ||grad_x||^2, checked by finite differences
        let inputs = [w1, w2];
        grad_check(&inputs, trial, |g, v| {
            let x = g.input(xt.clone());
            let out = critic(g, x, v[0], v[1])?;
            let gx = g.grad(out, &[x])?[0];
            let sq = g.square(gx);
            g.sum_per_item(sq)
        });
    }
}

#[test]
fn batchnorm_train_normalises_and_affine_transports() {
    let mut r = rng(11);
    let xt = Tensor::randn(&[8, 2, 64], &mut r).map(|v| 3.0 + 2.0 * v);
    let mut store = ParamStore::new();
    let bn = BatchNorm1d::new(&mut store, "bn", 2);
    let mut g = Graph::new();
    let x = g.input(xt.clone());
    let y = bn.forward(&mut g, &mut store, x, Mode::Train).unwrap();
    let stats = |t: &Tensor, ch: usize| {
        let v: Vec<f64> = t.data().chunks(64).enumerate().filter(|(i, _)| i % 2 == ch).flat_map(|(_, r)| r.to_vec()).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64;
        (m, var)
    };
    for ch in 0..2 {
        let (m, v) = stats(g.value(y), ch);
        assert!(m.abs() < 1e-6 && (v - 1.0).abs() < 1e-4, "{m} {v}");
    }
    *store.value_mut(bn.gamma) = Tensor::full(&[2], 2.0);
    *store.value_mut(bn.beta) = Tensor::full(&[2], 5.0);
    let mut g = Graph::new();
    let x = g.input(xt.clone());
    let y = bn.forward(&mut g, &mut store, x, Mode::Train).unwrap();
    for ch in 0..2 {
        let (m, v) = stats(g.value(y), ch);
        assert!((m - 5.0).abs() < 1e-6 && (v.sqrt() - 2.0).abs() < 1e-4);
    }
    // running stats moved towards (3, 4)
    assert!(store.value(bn.running_mean).data().iter().all(|&m| m > 0.3));
    let eval = |store: &mut ParamStore| {
        let mut g = Graph::new();
        let x = g.input(xt.clone());
        let y = bn.forward(&mut g, store, x, Mode::Eval).unwrap();
        g.value(y).clone()
    };
    let before = store.clone();
    assert_eq!(eval(&mut store), eval(&mut store));
    assert_eq!(store, before, "eval mode must not touch running stats");
}

#[test]
fn batchnorm_rejects_single_element_channels() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[1, 2, 1]));
    let gm = g.input(Tensor::ones(&[2]));
    let bt = g.input(Tensor::zeros(&[2]));
    assert!(g.batchnorm_train(x, gm, bt, 1e-5).is_err());
}

#[test]
fn embedding_examples() {
    assert_eq!(sinusoidal_embedding(0, 4, 10_000.0).unwrap().data(), &[0.0, 0.0, 1.0, 1.0]);
    assert!(sinusoidal_embedding(3, 5, 10_000.0).is_err());
    let all: Vec<Tensor> = (0..1000).map(|t| sinusoidal_embedding(t, 64, 10_000.0).unwrap()).collect();
    let mut min = f64::INFINITY;
    for i in 0..all.len() {
        assert!(all[i].data().iter().all(|v| (-1.0..=1.0).contains(v)));
        for j in 0..i {
            let d = all[i].zip_map(&all[j], |a, b| (a - b).powi(2)).unwrap().sum().sqrt();
            min = min.min(d);
        }
    }
    assert!(min > 0.0);
}

#[test]
fn adam_first_step_and_zero_grad() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::scalar(0.0));
    let mut adam = AdamState::new(&store, vec![id], 0.1);
    store.accumulate_grad(id, &Tensor::scalar(1.0));
    adam_step(&mut store, &mut adam).unwrap();
    assert!((store.value(id).item() + 0.1).abs() < 1e-8);
    assert_eq!(adam.step_count, 1);
    assert_eq!(store.grad(id).unwrap().item(), 1.0, "gradients left in place");

    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::scalar(0.7));
    let mut adam = AdamState::new(&store, vec![id], 0.1);
    store.accumulate_grad(id, &Tensor::scalar(0.0));
    adam_step(&mut store, &mut adam).unwrap();
    assert_eq!(store.value(id).item(), 0.7);
    assert_eq!(adam.step_count, 1);
}

#[test]
fn adam_missing_gradient_names_param() {
    let mut store = ParamStore::new();
    let id = store.add("enc.weight", Tensor::zeros(&[2]));
    let mut adam = AdamState::new(&store, vec![id], 0.1);
    let msg = adam_step(&mut store, &mut adam).unwrap_err().to_string();
    assert!(msg.contains("enc.weight"), "{msg}");
    assert_eq!(adam.step_count, 0);
}

fn tiny_training_run(seed: u64) -> (Vec<f64>, ParamStore) {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let conv = Conv1d::new(&mut store, "c", 2, 4, 3, 1, 1, &mut r);
    let bn = BatchNorm1d::new(&mut store, "bn", 4);
    let head = Linear::new(&mut store, "head", 4 * 8, 3, &mut r);
    let mut adam = AdamState::new(&store, store.trainable_ids(), 1e-2);
    let x = Tensor::randn(&[6, 2, 8], &mut r);
    let labels = [0, 1, 2, 0, 1, 2];
    let mut losses = Vec::new();
    for _ in 0..25 {
        store.zero_grad();
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let h = conv.forward(&mut g, &store, xv).unwrap();
        let h = bn.forward(&mut g, &mut store, h, Mode::Train).unwrap();
        let h = g.relu(h);
        let h = g.reshape(h, &[6, 32]).unwrap();
        let logits = head.forward(&mut g, &store, h).unwrap();
        let loss = g.softmax_cross_entropy(logits, &labels).unwrap();
        losses.push(g.value(loss).item());
        g.backward(loss, &mut store).unwrap();
        adam_step(&mut store, &mut adam).unwrap();
    }
    (losses, store)
}

#[test]
fn training_is_deterministic_and_learns() {
    let (a, sa) = tiny_training_run(42);
    let (b, sb) = tiny_training_run(42);
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    assert!(a.last().unwrap() < &(a[0] * 0.5), "{a:?}");
}

#[test]
fn lr_schedule_examples() {
    assert_eq!(lr_schedule(1e-4, 0, 20), 1e-4);
    assert_eq!(lr_schedule(1e-4, 19, 20), 1e-4);
    assert_eq!(lr_schedule(1e-4, 20, 20), 5e-5);
    assert_eq!(lr_schedule(1e-4, 199, 20), 1e-4 * 0.5f64.powi(9));
}

#[test]
fn checkpoint_round_trip_with_optimizer() {
    let (_, store) = tiny_training_run(3);
    let adam = AdamState::new(&store, store.trainable_ids(), 1e-3);
    let bytes = encode_checkpoint(&store, Some(&adam)).unwrap();
    assert_eq!(&bytes[..4], b"EDNN");
    let ck = decode_checkpoint(&bytes).unwrap();
    let mut fresh = tiny_training_run(4).1;
    fresh.load_named(&ck.tensors).unwrap();
    for (p, q) in fresh.iter().zip(store.iter()) {
        assert_eq!(p.name, q.name);
        let expect = q.value.map(|v| v as f32 as f64);
        assert_eq!(p.value, expect);
    }
    let restored = ck.optimizer.unwrap().restore(&fresh).unwrap();
    assert_eq!(restored.params, adam.params);
    assert_eq!(restored.step_count, 0);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("byte 0"));
    assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
}

proptest! {
    #[test]
    fn lr_schedule_halves(epoch in 0usize..400, every in 1usize..50) {
        let lr = lr_schedule(1.0, epoch, every);
        prop_assert_eq!(lr, 0.5f64.powi((epoch / every) as i32));
        prop_assert!(lr_schedule(1.0, epoch + every, every) == lr / 2.0);
    }

    #[test]
    fn conv_output_length_formula(len in 1usize..20, k in 1usize..6, s in 1usize..4, p in 0usize..3) {
        prop_assume!(len + 2 * p >= k);
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 1, len]));
        let w = g.input(Tensor::zeros(&[1, 1, k]));
        let y = g.conv1d(x, w, None, s, p).unwrap();
        prop_assert_eq!(g.value(y).dim(2), (len + 2 * p - k) / s + 1);
    }
}
