use diffcore::Tensor;
use ivus_core::losses::{LossWeights, RecMode};
use ivus_core::nets::{DiscriminatorConfig, GeneratorConfig, GeneratorVariant};
use ivus_core::phantom::{generate_phantom, PhantomSpec, Sample};
use ivus_core::train::{
    checkpoint_bytes, load_checkpoint, load_checkpoint_expecting, save_checkpoint, train, train_with, Adam,
    AdamConfig, History, TrainConfig,
};
use ivus_core::CoreError;

fn tiny_spec() -> PhantomSpec {
    PhantomSpec {
        image_size: 16,
        center_jitter: 0.0,
        ..Default::default()
    }
}

fn samples(n: u64) -> Vec<Sample> {
    (0..n).map(|i| generate_phantom(&tiny_spec(), i).unwrap()).collect()
}

fn tiny_gen() -> GeneratorConfig {
    GeneratorConfig {
        variant: GeneratorVariant::UNet,
        image_size: 16,
        depth: 3,
        base_channels: 4,
        ..Default::default()
    }
}

fn tiny_disc() -> DiscriminatorConfig {
    DiscriminatorConfig {
        image_size: 16,
        n_down: 2,
        base_channels: 4,
        ..Default::default()
    }
}

fn tiny_train(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        seed,
        ..Default::default()
    }
}

fn bits(h: &History) -> Vec<u64> {
    h.records
        .iter()
        .flat_map(|r| [r.d_loss, r.g_adv, r.g_rec])
        .map(f64::to_bits)
        .collect()
}

#[test]
fn adam_matches_hand_computed_steps() {
    let cfg = AdamConfig {
        lr: 0.1,
        beta1: 0.5,
        beta2: 0.75,
        eps: 1e-8,
    };
    let mut params = vec![Tensor::new(vec![2], vec![1.0f64, -2.0]).unwrap()];
    let mut opt = Adam::new(cfg, &params);
    opt.step(&mut params, &[Tensor::new(vec![2], vec![0.5, -4.0]).unwrap()]).unwrap();
    // First step: bias-corrected moments are g and g^2.
    let p1 = [1.0 - 0.1 * 0.5 / (0.5 + 1e-8), -2.0 + 0.1 * 4.0 / (4.0 + 1e-8)];
    for (a, b) in params[0].data().iter().zip(p1) {
        assert!((a - b).abs() < 1e-12);
    }
    opt.step(&mut params, &[Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()]).unwrap();
    // Second step: m = 0.25 g1 + 0.5 g2 over 0.75, v = 0.1875 g1^2 + 0.25 g2^2 over 0.4375.
    let p2: Vec<f64> = [(0.5, 1.0), (-4.0, 2.0)]
        .iter()
        .zip(p1)
        .map(|(&(g1, g2), p): (&(f64, f64), f64)| {
            let m_hat = (0.25 * g1 + 0.5 * g2) / 0.75;
            let v_hat = (0.1875 * g1 * g1 + 0.25 * g2 * g2) / 0.4375;
            p - 0.1 * m_hat / (v_hat.sqrt() + 1e-8)
        })
        .collect();
    for (a, b) in params[0].data().iter().zip(p2) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(opt.steps(), 2);
}

#[test]
fn one_epoch_smoke() {
    let data = samples(3);
    let out = train(&tiny_gen(), &tiny_disc(), &tiny_train(1, 0), &data[..2], &data[2..]).unwrap();
    let h = &out.history;
    assert_eq!(h.records.len(), 1);
    let r = &h.records[0];
    for v in [r.d_loss, r.g_adv, r.g_rec] {
        assert!(v.is_finite() && v >= 0.0);
    }
    let val = r.val.as_ref().expect("validation after the last epoch");
    assert_eq!(val.n, 1);
    assert_eq!(h.to_csv().lines().count(), 2);
}

#[test]
fn training_is_bitwise_deterministic() {
    let data = samples(4);
    let run = |seed| train(&tiny_gen(), &tiny_disc(), &tiny_train(2, seed), &data[..3], &data[3..]).unwrap();
    let (a, b, c) = (run(5), run(5), run(6));
    assert_eq!(bits(&a.history), bits(&b.history));
    assert_eq!(a.history.to_csv(), b.history.to_csv());
    assert_eq!(a.generator.weights, b.generator.weights);
    assert_ne!(bits(&a.history), bits(&c.history));
}

#[test]
fn adversarial_only_reports_zero_reconstruction() {
    let data = samples(2);
    let cfg = TrainConfig {
        weights: LossWeights::new(1.0, 0.0, RecMode::L1),
        ..tiny_train(2, 1)
    };
    let out = train(&tiny_gen(), &tiny_disc(), &cfg, &data, &[]).unwrap();
    assert!(out.history.records.iter().all(|r| r.g_rec == 0.0 && r.g_adv > 0.0));
    assert!(out.history.records.iter().all(|r| r.val.is_none()));

    let cfg = TrainConfig {
        weights: LossWeights::new(0.0, 100.0, RecMode::L2),
        ..tiny_train(1, 1)
    };
    let out = train(&tiny_gen(), &tiny_disc(), &cfg, &data, &[]).unwrap();
    assert!(out.history.records.iter().all(|r| r.g_adv == 0.0 && r.g_rec > 0.0));
}

#[test]
fn batches_and_hourglass_train() {
    let data = samples(5);
    let gen = GeneratorConfig {
        variant: GeneratorVariant::HourglassReinject,
        base_channels: 2,
        ..tiny_gen()
    };
    let cfg = TrainConfig {
        batch_size: 2,
        eval_every: 1,
        d_steps_per_g: 2,
        ..tiny_train(2, 3)
    };
    let out = train(&gen, &tiny_disc(), &cfg, &data[..3], &data[3..]).unwrap();
    assert!(out.history.records.iter().all(|r| r.val.is_some()));
}

#[test]
fn empty_training_set_is_rejected() {
    assert!(train(&tiny_gen(), &tiny_disc(), &tiny_train(1, 0), &[], &[]).is_err());
}

#[test]
fn non_finite_input_names_the_step() {
    let mut data = samples(2);
    data[1].condition.data_mut()[5] = f32::NAN;
    let err = train(&tiny_gen(), &tiny_disc(), &tiny_train(1, 0), &data, &[]).unwrap_err();
    match &err {
        CoreError::NonFinite { step, .. } => assert!(*step <= 1),
        other => panic!("expected NonFinite, got {other:?}"),
    }
    assert!(err.to_string().contains("step"));
}

#[test]
fn checkpoint_roundtrip_is_bitwise() {
    let data = samples(2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/model.ivck");
    let cfg = TrainConfig {
        checkpoint_path: Some(path.clone()),
        ..tiny_train(1, 2)
    };
    let out = train(&tiny_gen(), &tiny_disc(), &cfg, &data, &[]).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    let gbits = |t: &[Tensor<f32>]| t.iter().flat_map(|x| x.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    assert_eq!(gbits(&ck.generator.weights.params), gbits(&out.generator.weights.params));
    assert_eq!(ck.generator.weights.stats, out.generator.weights.stats);
    assert_eq!(ck.discriminator.weights, out.discriminator.weights);
    assert_eq!(ck.generator.net.config(), &tiny_gen());
    save_checkpoint(&dir.path().join("again.ivck"), &ck.generator, &ck.discriminator).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("again.ivck")).unwrap(),
        std::fs::read(&path).unwrap()
    );
}

#[test]
fn damaged_checkpoints_are_refused() {
    let data = samples(2);
    let out = train(&tiny_gen(), &tiny_disc(), &tiny_train(1, 0), &data, &[]).unwrap();
    let bytes = checkpoint_bytes(&out.generator, &out.discriminator).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        let p = dir.path().join(format!("cut{cut}.ivck"));
        std::fs::write(&p, &bytes[..cut]).unwrap();
        assert!(
            matches!(load_checkpoint(&p), Err(CoreError::Checkpoint { .. })),
            "cut at {cut}"
        );
    }
    let mut extra = bytes.clone();
    extra.push(0);
    let p = dir.path().join("extra.ivck");
    std::fs::write(&p, &extra).unwrap();
    assert!(matches!(load_checkpoint(&p), Err(CoreError::Checkpoint { .. })));
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    std::fs::write(&p, &bad_magic).unwrap();
    assert!(matches!(load_checkpoint(&p), Err(CoreError::Checkpoint { .. })));
    let mut bad_version = bytes;
    bad_version[4] = 99;
    std::fs::write(&p, &bad_version).unwrap();
    assert!(matches!(load_checkpoint(&p), Err(CoreError::Checkpoint { .. })));
}

#[test]
fn config_mismatch_names_the_field() {
    let data = samples(2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ivck");
    let cfg = TrainConfig {
        checkpoint_path: Some(path.clone()),
        ..tiny_train(1, 0)
    };
    train(&tiny_gen(), &tiny_disc(), &cfg, &data, &[]).unwrap();
    assert!(load_checkpoint_expecting(&path, &tiny_gen(), &tiny_disc()).is_ok());
    let other = GeneratorConfig {
        base_channels: 8,
        ..tiny_gen()
    };
    match load_checkpoint_expecting(&path, &other, &tiny_disc()) {
        Err(CoreError::ConfigMismatch { network, field, .. }) => {
            assert_eq!(network, "generator");
            assert_eq!(field, "base_channels");
        }
        other => panic!("expected ConfigMismatch, got {other:?}"),
    }
    let other = DiscriminatorConfig {
        n_down: 3,
        ..tiny_disc()
    };
    match load_checkpoint_expecting(&path, &tiny_gen(), &other) {
        Err(CoreError::ConfigMismatch { network, field, .. }) => {
            assert_eq!(network, "discriminator");
            assert_eq!(field, "n_down");
        }
        other => panic!("expected ConfigMismatch, got {other:?}"),
    }
}

#[test]
fn resumed_training_is_deterministic() {
    let data = samples(3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.ivck");
    let cfg = TrainConfig {
        checkpoint_path: Some(path.clone()),
        ..tiny_train(1, 0)
    };
    train(&tiny_gen(), &tiny_disc(), &cfg, &data, &[]).unwrap();
    let resume = || {
        let ck = load_checkpoint(&path).unwrap();
        train_with(
            &tiny_gen(),
            &tiny_disc(),
            &tiny_train(2, 77),
            &data,
            &[],
            Some((ck.generator.weights, ck.discriminator.weights)),
            &mut |_| {},
        )
        .unwrap()
    };
    let (a, b) = (resume(), resume());
    assert_eq!(bits(&a.history), bits(&b.history));
    assert_eq!(a.generator.weights, b.generator.weights);
}

#[test]
fn epoch_callback_sees_every_record() {
    let data = samples(2);
    let mut seen = Vec::new();
    let out = train_with(
        &tiny_gen(),
        &tiny_disc(),
        &tiny_train(3, 0),
        &data,
        &data,
        None,
        &mut |r| seen.push(r.epoch),
    )
    .unwrap();
    assert_eq!(seen, vec![0, 1, 2]);
    assert_eq!(out.history.records.iter().filter(|r| r.val.is_some()).count(), 1);
}
