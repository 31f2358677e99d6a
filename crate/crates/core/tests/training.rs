use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crosssrn::gradcheck::{corrupted_check, run_check, GradCheckConfig};
use crosssrn::imaging::{synthetic_scene, FloatImage};
use crosssrn::model::{Model, ModelConfig};
use crosssrn::params::ParamStore;
use crosssrn::tensor::{Shape, Tensor};
use crosssrn::training::{
    lr_schedule, sample_patch, Adam, Augment, Checkpoint, Dataset, TrainConfig, TrainPair, Trainer,
};
use crosssrn::Error;

fn random_image(w: usize, h: usize, seed: u64) -> FloatImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FloatImage::from_fn(w, h, 3, |_, _, _| rng.gen_range(0..256) as f64)
}

fn tiny() -> ModelConfig {
    ModelConfig { scale: 2, channels: 8, groups: 1, ..ModelConfig::default() }
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        patch_size: 8,
        batch_size: 2,
        iterations_per_epoch: 3,
        total_epochs: 2,
        seed: 7,
        ..TrainConfig::default()
    }
}

#[test]
fn augmentations_form_the_square_symmetry_group() {
    let img = random_image(5, 3, 1);
    let all: Vec<_> = Augment::all().map(|a| a.apply(&img)).collect();
    for i in 0..8 {
        for j in i + 1..8 {
            assert_ne!(all[i], all[j], "{i} and {j} coincide");
        }
    }
    let flip = Augment { flip: true, quarter_turns: 0 };
    assert_eq!(flip.apply(&flip.apply(&img)), img);
    let turn = Augment { flip: false, quarter_turns: 1 };
    let mut t = img.clone();
    for _ in 0..4 {
        t = turn.apply(&t);
    }
    assert_eq!(t, img);
    let quarter = turn.apply(&img);
    assert_eq!((quarter.width(), quarter.height()), (3, 5));
}

/// Find the LR offset and symmetry that produced a sampled patch.
fn locate(pair: &TrainPair, lr: &FloatImage, hr: &FloatImage, scale: usize, patch: usize) -> Option<(usize, usize)> {
    for y in 0..=pair.lr.height() - patch {
        for x in 0..=pair.lr.width() - patch {
            let lr_crop = pair.lr.crop(x, y, patch, patch).unwrap();
            for a in Augment::all() {
                if a.apply(&lr_crop) == *lr {
                    let hr_crop = pair.hr.crop(x * scale, y * scale, patch * scale, patch * scale).unwrap();
                    if a.apply(&hr_crop) == *hr {
                        return Some((x, y));
                    }
                }
            }
        }
    }
    None
}

#[test]
fn patches_are_aligned_and_cover_every_position() {
    let (scale, patch) = (2, 4);
    // LR is 7x7, so there are 4x4 possible offsets.
    let pair = TrainPair::new("r", &random_image(14, 14, 2), scale).unwrap();
    assert_eq!((pair.lr.width(), pair.lr.height()), (7, 7));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut counts = [0usize; 16];
    let draws = 1600;
    for _ in 0..draws {
        let (lr, hr) = sample_patch(&pair, scale, patch, &mut rng).unwrap();
        let (x, y) = locate(&pair, &lr, &hr, scale, patch).expect("patch pair must be aligned");
        counts[y * 4 + x] += 1;
    }
    let expected = draws as f64 / 16.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 15 degrees of freedom, p = 0.001.
    assert!(chi2 < 37.7, "chi2 {chi2}, counts {counts:?}");
}

#[test]
fn undersized_images_are_rejected_with_their_id() {
    let err = Dataset::from_images(&[("tiny".into(), random_image(10, 10, 4))], 2, 8).unwrap_err();
    assert!(err.to_string().contains("tiny"), "{err}");
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::full(Shape::scalar(), -2.0));
    let mut adam = Adam::new(&store);
    for _ in 0..3000 {
        let w = store.get(id).data()[0];
        let grad = Tensor::full(Shape::scalar(), 2.0 * (w - 3.0));
        adam.step(&mut store, &[grad], 0.01).unwrap();
    }
    let w = store.get(id).data()[0];
    assert!((w - 3.0).abs() < 1e-3, "{w}");
    assert_eq!(adam.step_count(), 3000);
}

#[test]
fn adam_first_step_moves_by_lr_and_zero_gradient_is_a_no_op() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::full(Shape::new(1, 2, 1, 1), 1.0));
    let mut adam = Adam::new(&store);
    adam.step(&mut store, &[Tensor::zeros(Shape::new(1, 2, 1, 1))], 0.1).unwrap();
    assert_eq!(store.get(id).data(), &[1.0, 1.0]);
    let mut adam = Adam::new(&store);
    let g = Tensor::new(Shape::new(1, 2, 1, 1), vec![5.0, -0.01]).unwrap();
    adam.step(&mut store, &[g], 0.1).unwrap();
    // Bias correction makes the first update exactly lr · sign(g), up to epsilon.
    let w = store.get(id).data();
    assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] - 1.1).abs() < 1e-5, "{w:?}");
}

#[test]
fn step_decay_halves_on_schedule() {
    assert_eq!(lr_schedule(0, 1e-4, 200), 1e-4);
    assert_eq!(lr_schedule(199, 1e-4, 200), 1e-4);
    assert_eq!(lr_schedule(200, 1e-4, 200), 5e-5);
    assert_eq!(lr_schedule(650, 1e-4, 200), 1.25e-5);
}

fn trained() -> (Trainer, Dataset) {
    let cfg = tiny_train();
    let data = Dataset::from_images(
        &[("a".into(), synthetic_scene(40, 40, &mut ChaCha8Rng::seed_from_u64(1)))],
        2,
        cfg.patch_size,
    )
    .unwrap();
    let mut trainer = Trainer::new(&tiny(), &cfg).unwrap();
    trainer.run_epoch(&data, &mut |_| {}).unwrap();
    (trainer, data)
}

#[test]
fn checkpoint_bytes_round_trip() {
    let (trainer, _) = trained();
    let ckpt = trainer.checkpoint();
    let bytes = ckpt.to_bytes();
    assert_eq!(&bytes[..4], b"XSRN");
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.model_config().unwrap(), tiny());
    let restored = back.to_model().unwrap();
    for (a, b) in restored.params().tensors().iter().zip(trainer.model().params().tensors()) {
        assert_eq!(a.data(), b.data());
    }
    assert_eq!(back.meta_value::<usize>("epoch").unwrap(), 1);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let (trainer, _) = trained();
    let bytes = trainer.checkpoint().to_bytes();
    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'Y';
    assert!(matches!(Checkpoint::from_bytes(&wrong_magic), Err(Error::Checkpoint(_))));
    for cut in [3, 12, bytes.len() / 2, bytes.len() - 1] {
        assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(Checkpoint::from_bytes(&trailing).is_err());
}

#[test]
fn loading_into_a_different_width_names_the_tensor() {
    let wide = Model::<f32>::new(&ModelConfig { channels: 64, groups: 1, ..ModelConfig::default() }, 0).unwrap();
    let ckpt = Checkpoint::from_model(&wide);
    let mut narrow = Model::<f32>::new(&ModelConfig { channels: 32, groups: 1, ..ModelConfig::default() }, 0).unwrap();
    let err = ckpt.load_into(&mut narrow).unwrap_err().to_string();
    assert!(err.contains("`head.weight`"), "{err}");
}

#[test]
fn resume_needs_optimizer_state() {
    let model = Model::<f32>::new(&tiny(), 0).unwrap();
    assert!(Trainer::resume(&Checkpoint::from_model(&model), &tiny_train()).is_err());
}

#[test]
fn repeated_steps_on_one_batch_reduce_the_loss() {
    let (mut trainer, data) = trained();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (x, y) = data.batch::<f32, _>(2, 8, &mut rng).unwrap();
    let first = trainer.step_on(&x, &y).unwrap().loss;
    let mut last = first;
    for _ in 0..40 {
        last = trainer.step_on(&x, &y).unwrap().loss;
    }
    assert!(last < 0.7 * first, "{first} -> {last}");
}

#[test]
fn non_finite_loss_aborts_with_context() {
    let (mut trainer, data) = trained();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (x, y) = data.batch::<f32, _>(1, 8, &mut rng).unwrap();
    let mut bad = x.clone();
    bad.data_mut()[0] = f32::NAN;
    let before: Vec<Vec<f32>> = trainer.model().params().tensors().iter().map(|t| t.data().to_vec()).collect();
    let err = trainer.step_on(&bad, &y).unwrap_err();
    assert!(matches!(err, Error::Diverged(_)));
    let msg = err.to_string();
    assert!(msg.contains("iteration 4") && msg.contains("lr"), "{msg}");
    let after: Vec<Vec<f32>> = trainer.model().params().tensors().iter().map(|t| t.data().to_vec()).collect();
    assert_eq!(before, after, "a diverged step must not touch the weights");
}

#[test]
fn corrupted_gradient_rule_is_reported_by_name() {
    let outcome = run_check(&corrupted_check(), &GradCheckConfig { trials: 5, ..Default::default() });
    assert!(!outcome.passed);
    assert!(outcome.name.contains("corrupted"));
    assert!(outcome.max_rel_err > 1e-3);
}
