use cyclebnn::data::{encode_idx, load_idx, parse_idx_pair, synth_dataset, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
use cyclebnn::nn::checkpoint::{load_checkpoint, save_checkpoint};
use cyclebnn::nn::{convnet_small, softmax_cross_entropy, LayerSpec, Network, PrecisionContext};
use cyclebnn::optim::AdamWConfig;
use cyclebnn::rng::Prng;
use cyclebnn::schedule::{CycleConfig, ScheduleMode};
use cyclebnn::train::{accuracy, predict, TrainOptions, Trainer};
use cyclebnn::Tensor;

fn options(cycle: CycleConfig, lr: f64, batch_size: usize) -> TrainOptions {
    TrainOptions {
        cycle,
        lr,
        min_lr: 0.0,
        batch_size,
        adamw: AdamWConfig::default(),
        shuffle_seed: 3,
        grad_bits: Some(8),
        plain_ste: false,
    }
}

#[test]
fn identity_linear_network_returns_input() {
    let specs = [LayerSpec::FpLinear { in_features: 3, out_features: 3 }];
    let mut net = Network::new(&specs, &[3], 0, false).unwrap();
    for (name, t) in net.state_mut() {
        let fill: Vec<f32> = match name.ends_with("weight") {
            true => (0..9).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect(),
            false => vec![0.0; 3],
        };
        t.data_mut().copy_from_slice(&fill);
    }
    let x = Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 0.0, 3.0, -0.25]).unwrap();
    assert_eq!(net.infer(&x).unwrap(), x);
}

#[test]
fn binary_network_logits_are_finite() {
    let specs = convnet_small([1, 8, 8], 2, false);
    let mut net = Network::new(&specs, &[1, 8, 8], 4, false).unwrap();
    let mut rng = Prng::new(4);
    let x = Tensor::new(&[3, 1, 8, 8], (0..192).map(|_| rng.uniform_in(-1.0, 1.0) as f32).collect()).unwrap();
    let logits = net.forward(&x, &PrecisionContext::new(3).unwrap()).unwrap();
    assert_eq!(logits.dims(), &[3, 2]);
    assert!(logits.all_finite());
}

#[test]
fn separability_oracle() {
    // A full-precision linear classifier must fit the synthetic task.
    let data = synth_dataset(200, 1).unwrap();
    let specs = [LayerSpec::Flatten, LayerSpec::FpLinear { in_features: 64, out_features: 2 }];
    let net = Network::new(&specs, &[1, 8, 8], 1, false).unwrap();
    let cycle = CycleConfig::new(10, 1, 8, 8, ScheduleMode::Anchored).unwrap();
    let mut trainer = Trainer::new(net, options(cycle, 1e-2, 20), data.len()).unwrap();
    let mut steps = 0;
    for epoch in 0..10 {
        trainer.train_epoch(&data, epoch).unwrap();
        steps += trainer.steps_per_epoch();
    }
    assert_eq!(steps, 100);
    let acc = accuracy(&predict(trainer.network(), &data, 64).unwrap(), &data.labels);
    assert_eq!(acc, 1.0);
}

#[test]
fn smoke_loss_falls_within_fifty_steps() {
    let data = synth_dataset(400, 2).unwrap();
    let specs = convnet_small([1, 8, 8], 2, false);
    let net = Network::new(&specs, &[1, 8, 8], 2, false).unwrap();
    let cycle = CycleConfig::new(2, 1, 2, 6, ScheduleMode::Anchored).unwrap();
    let mut trainer = Trainer::new(net, options(cycle, 1e-3, 16), data.len()).unwrap();
    let (_, ctx) = trainer.context(0).unwrap();
    let idx: Vec<usize> = (0..16).collect();
    let (x, y) = data.gather(&idx).unwrap();
    let mut losses = Vec::new();
    for _ in 0..50 {
        losses.push(trainer.step(&x, &y, &ctx).unwrap().0);
    }
    let head: f64 = losses[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = losses[45..].iter().sum::<f64>() / 5.0;
    assert!(tail < 0.5 * head, "loss {head} -> {tail}");
}

fn first_step_grads(ctx: &PrecisionContext) -> Vec<(String, Tensor)> {
    let data = synth_dataset(32, 5).unwrap();
    let specs = convnet_small([1, 8, 8], 2, false);
    let mut net = Network::new(&specs, &[1, 8, 8], 5, false).unwrap();
    let idx: Vec<usize> = (0..32).collect();
    let (x, y) = data.gather(&idx).unwrap();
    let logits = net.forward(&x, ctx).unwrap();
    let (_, grad) = softmax_cross_entropy(&logits, &y).unwrap();
    net.backward(&grad, ctx).unwrap();
    net.params().into_iter().map(|p| (p.name.clone(), p.grad.clone())).collect()
}

#[test]
fn eight_bit_backward_tracks_plain_ste() {
    let plain = first_step_grads(&PrecisionContext::plain_ste());
    let eight = first_step_grads(&PrecisionContext::new(8).unwrap().with_grad_bits(None).unwrap());
    // Layers from the last binary conv onward see identical upstream gradients.
    let last_binary = plain.iter().rposition(|(n, _)| n.contains("binary_conv")).unwrap();
    for ((name, a), (_, b)) in plain.iter().zip(&eight).skip(last_binary) {
        assert_eq!(a, b, "{name}");
    }
    // Earlier layers differ only through the 8-bit activation lattice in the surrogate.
    for ((name, a), (_, b)) in plain.iter().zip(&eight) {
        let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| ((x - y) as f64).powi(2)).sum();
        let norm: f64 = a.data().iter().map(|x| (*x as f64).powi(2)).sum();
        assert!(diff.sqrt() <= 0.05 * norm.sqrt().max(1e-12), "{name}: {}", (diff / norm).sqrt());
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let specs = convnet_small([1, 8, 8], 2, false);
    let net = Network::new(&specs, &[1, 8, 8], 9, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.cbnn");
    save_checkpoint(&path, &net, false).unwrap();
    let (back, arch) = load_checkpoint(&path).unwrap();
    assert_eq!(arch.layers, specs);
    assert_eq!(back.state(), net.state());
    let data = synth_dataset(20, 9).unwrap();
    assert_eq!(predict(&back, &data, 8).unwrap(), predict(&net, &data, 8).unwrap());
}

#[test]
fn idx_file_round_trip() {
    let (n, h, w) = (5u32, 3u32, 4u32);
    let mut rng = Prng::new(21);
    let mut img = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [n, h, w] {
        img.extend(d.to_be_bytes());
    }
    img.extend((0..n * h * w).map(|_| rng.below(256) as u8));
    let mut lbl = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
    lbl.extend(n.to_be_bytes());
    lbl.extend((0..n).map(|_| rng.below(10) as u8));

    let first = parse_idx_pair(&img, &lbl).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("i.idx"), dir.path().join("l.idx"));
    write_idx(&first, &ip, &lp).unwrap();
    let second = load_idx(&ip, &lp).unwrap();
    assert_eq!(second, first);
    assert_eq!(encode_idx(&second).unwrap(), (img, lbl));
}
