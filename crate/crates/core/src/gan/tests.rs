use super::*;
use rand::SeedableRng;

fn row() -> AdjacencyRow {
    AdjacencyRow {
        target: "AF3".into(),
        inputs: ["Fp1".into(), "F3".into()],
    }
}

fn tiny() -> GanConfig {
    GanConfig {
        width: 4,
        n_critic: 2,
        batch_size: 4,
        epochs: 2,
        ..GanConfig::default()
    }
}

/// Linear critic `<w, x> + 0.5` over a flattened `[B, 1, n]` batch.
fn linear_penalty(w: &[f64]) -> f64 {
    let n = w.len();
    let mut store = ParamStore::new();
    let wid = store.add("w", Tensor::new(vec![1, n], w.to_vec()).unwrap());
    let bid = store.add("b", Tensor::full(&[1], 0.5));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let real = Tensor::randn(&[5, 1, n], &mut rng);
    let fake = Tensor::randn(&[5, 1, n], &mut rng);
    let mut g = Graph::new();
    let critic = |g: &mut Graph, x: Var| {
        let flat = g.reshape(x, &[5, n])?;
        let w = g.param(&store, wid);
        let b = g.param(&store, bid);
        g.linear(flat, w, Some(b))
    };
    let gp = gradient_penalty(&mut g, critic, &real, &fake, &mut rng).unwrap();
    g.value(gp).item()
}

#[test]
fn linear_critic_penalties() {
    let zero = linear_penalty(&[0.0; 6]);
    let unit = linear_penalty(&[0.6, 0.0, 0.8, 0.0, 0.0, 0.0]);
    let three = linear_penalty(&[3.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    assert!((zero - 1.0).abs() < 1e-8, "{zero}");
    assert!(unit.abs() < 1e-10, "{unit}");
    assert!((three - 4.0).abs() < 1e-8, "{three}");
}

#[test]
fn penalty_rejects_mismatched_batches() {
    let mut g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = gradient_penalty(&mut g, |_, x| Ok(x), &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[3, 3]), &mut rng);
    assert!(r.is_err());
}

#[test]
fn penalty_gradient_reaches_critic_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pair = GanPair::new(&row(), 32, tiny(), 0).unwrap();
    let real = Tensor::randn(&[3, 1, 32], &mut rng);
    let fake = Tensor::randn(&[3, 1, 32], &mut rng);
    let cond = Tensor::randn(&[3, 2, 32], &mut rng);
    let mut g = Graph::new();
    let c = g.input(cond);
    let (critic, store) = (&pair.critic, &pair.store);
    let gp = gradient_penalty(&mut g, |g, x| critic.forward(g, store, x, c), &real, &fake, &mut rng).unwrap();
    g.backward(gp, &mut pair.store).unwrap();
    let id = pair.store.find("critic.conv1.weight").unwrap();
    assert!(pair.store.grad(id).unwrap().data().iter().any(|v| v.abs() > 0.0));
    let gen = pair.store.find("generator.conv1.weight").unwrap();
    assert!(pair.store.grad(gen).is_none_or(|t| t.data().iter().all(|v| *v == 0.0)));
}

#[test]
fn shapes_and_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let real = Tensor::randn(&[4, 1, 64], &mut rng);
    let cond = Tensor::randn(&[4, 2, 64], &mut rng);
    let run = || {
        let mut pair = GanPair::new(&row(), 64, tiny(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let losses = pair.train_step(&real, &cond, &mut rng).unwrap();
        let out = pair.generate(&cond, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (losses, out)
    };
    let (a, out_a) = run();
    let (b, out_b) = run();
    assert_eq!(a, b);
    assert_eq!(out_a, out_b);
    assert_eq!(out_a.shape(), &[4, 1, 64]);
    assert!(out_a.is_finite());
}

#[test]
fn constant_critic_gives_no_generator_gradient() {
    let mut pair = GanPair::new(&row(), 32, tiny(), 0).unwrap();
    for id in pair.store.trainable_with_prefix("critic.") {
        let v = pair.store.value_mut(id);
        v.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let head_b = pair.store.find("critic.head.bias").unwrap();
    pair.store.value_mut(head_b).data_mut()[0] = 2.5;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cond = Tensor::randn(&[2, 2, 32], &mut rng);
    let before = pair.store.clone();
    let loss = pair.generator_step(&cond, &mut rng).unwrap();
    assert_eq!(loss, -2.5);
    for id in pair.store.trainable_with_prefix("generator.") {
        assert!(pair.store.grad(id).unwrap().data().iter().all(|v| *v == 0.0));
        assert_eq!(pair.store.value(id), before.value(id));
    }
}

#[test]
fn checkpoint_round_trip() {
    let a = GanPair::new(&row(), 32, tiny(), 1).unwrap();
    let mut b = GanPair::new(&row(), 32, tiny(), 2).unwrap();
    assert_ne!(a.store, b.store);
    b.load_bytes(&a.to_bytes().unwrap()).unwrap();
    let cond = Tensor::full(&[1, 2, 32], 0.3);
    let ga = a.generate(&cond, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let gb = b.generate(&cond, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(ga.max_abs_diff(&gb) < 1e-5);
    assert_eq!(GanPair::checkpoint_name("T7"), "wgan_T7.ednn");
}

#[test]
fn critic_rejects_wrong_length() {
    let pair = GanPair::new(&row(), 32, tiny(), 0).unwrap();
    assert!(pair.mean_score(&Tensor::zeros(&[1, 1, 16]), &Tensor::zeros(&[1, 2, 16])).is_err());
}
