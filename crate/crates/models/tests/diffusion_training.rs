use candle_core::DType;
use handmotion_core::layout::FRAME_WIDTH;
use handmotion_models::diffusion::{
    batch_loss, q_sample, sample, train_diffusion, Denoiser, DiffusionConfig, DiffusionExample, NoiseSchedule,
    ScheduleKind,
};
use handmotion_models::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn q_sample_moments_within_three_standard_errors() {
    let s = NoiseSchedule::build(100, ScheduleKind::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 100_000;
    for (t, x0) in [(1usize, 0.8f64), (30, -1.2), (70, 0.5), (100, 2.0)] {
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                q_sample(&[x0], t, &[z], &s)[0]
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let want_mean = s.alpha_bar(t).sqrt() * x0;
        let want_var = 1.0 - s.alpha_bar(t);
        let se_mean = (want_var / n as f64).sqrt();
        let se_var = want_var * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((mean - want_mean).abs() < 3.0 * se_mean, "t={t}: mean {mean} vs {want_mean}");
        assert!((var - want_var).abs() < 3.0 * se_var, "t={t}: var {var} vs {want_var}");
    }
}

fn tiny() -> DiffusionConfig {
    DiffusionConfig {
        feature_dim: 5,
        text_dim: 3,
        width: 8,
        heads: 2,
        depth: 2,
        ff: 12,
        max_len: 4,
        steps: 10,
        batch_size: 3,
        epochs: 3,
        learning_rate: 1e-3,
        ..Default::default()
    }
}

fn examples(n: usize, frames: usize, seed: u64) -> Vec<DiffusionExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| DiffusionExample {
            motion: (0..frames * 5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            frames,
            conditions: vec![(0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()],
        })
        .collect()
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let model = Denoiser::new(tiny(), DType::F64).unwrap();
    let mut data = examples(3, 3, 4);
    data[2].frames = 2;
    data[2].motion.truncate(10);
    let batch: Vec<&DiffusionExample> = data.iter().collect();
    let loss_at = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        batch_loss(&model, &batch, &mut rng).unwrap()
    };
    let grads = loss_at().backward().unwrap();
    let mut checked = 0;
    for name in ["motion.input.weight", "encoder.layers.1.ff2.weight", "text.proj.weight", "motion.output.bias", "text.null"] {
        let var = model.store().named().get(name).unwrap_or_else(|| panic!("{name}")).clone();
        let g = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let base = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let shape = var.as_tensor().shape().clone();
        for i in [0, base.len() / 2, base.len() - 1] {
            let h = 1e-6;
            let eval = |delta: f64| {
                let mut p = base.clone();
                p[i] += delta;
                var.set(&candle_core::Tensor::from_vec(p, shape.clone(), &candle_core::Device::Cpu).unwrap()).unwrap();
                loss_at().to_scalar::<f64>().unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            eval(0.0);
            let err = (fd - g[i]).abs();
            assert!(err < 1e-4 * fd.abs().max(g[i].abs()) || err < 1e-9, "{name}[{i}]: fd {fd} analytic {}", g[i]);
            checked += 1;
        }
    }
    assert_eq!(checked, 15);
}

#[test]
fn training_is_seed_reproducible() {
    let data = examples(5, 3, 1);
    let (a, la) = train_diffusion(&data, &tiny()).unwrap();
    let (b, lb) = train_diffusion(&data, &tiny()).unwrap();
    assert_eq!(la, lb);
    let c = [0.1, 0.2, 0.3];
    assert_eq!(
        sample(&a, Some(&c), 3, 15.0, &a.schedule, 4).unwrap(),
        sample(&b, Some(&c), 3, 15.0, &b.schedule, 4).unwrap()
    );
    let too_long = vec![DiffusionExample { motion: vec![0.0; 25], frames: 5, conditions: vec![c.to_vec()] }];
    assert!(matches!(train_diffusion(&too_long, &tiny()), Err(Error::LengthExceedsMax { len: 5, max: 4 })));
    assert!(matches!(train_diffusion(&[], &tiny()), Err(Error::EmptyDataset)));
}

#[test]
fn generated_blocks_are_rotations() {
    let cfg = DiffusionConfig {
        text_dim: 4,
        width: 16,
        heads: 2,
        depth: 1,
        ff: 16,
        max_len: 8,
        steps: 5,
        ..Default::default()
    };
    let model = Denoiser::new(cfg, DType::F32).unwrap();
    let m = model.generate(&[1.0, 0.0, 0.0, 0.0], 3, 15.0, 0, "g").unwrap();
    assert_eq!(m.data().len(), 3 * FRAME_WIDTH);
    m.validate_rotations().unwrap();
    let again = model.generate(&[1.0, 0.0, 0.0, 0.0], 3, 15.0, 0, "g").unwrap();
    assert_eq!(handmotion_core::motion::encode_motion(&m), handmotion_core::motion::encode_motion(&again));
}

#[test]
fn config_bounds() {
    assert!(DiffusionConfig { p_drop: 1.0, ..tiny() }.validate().is_err());
    assert!(DiffusionConfig { guidance: f64::NAN, ..tiny() }.validate().is_err());
    let small = DiffusionConfig::small_dataset();
    assert_eq!((small.epochs, small.guidance), (2000, 5.0));
    let main = DiffusionConfig::default();
    assert_eq!((main.epochs, main.guidance, main.steps, main.p_drop, main.max_len), (300, 15.0, 100, 0.05, 128));
}
