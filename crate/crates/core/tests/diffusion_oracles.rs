use std::sync::Arc;

use gvd_core::dataset::VideoDataset;
use gvd_core::denoiser::{noise_example, train_denoiser, DenoiserTrainConfig, NoiseExample, TrainedDenoiser};
use gvd_core::diffusion::{
    forward_diffuse, oracle_denoise, oracle_posterior, predict_x0, Denoiser, DenoiserSpec, DiffusionSchedule,
};
use gvd_core::latent::LatentVideo;
use gvd_core::seed::rng_from;
use gvd_core::world::{build_world, sample_dataset, ClassSpec, ModeSpec, WorldSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn default_schedule() -> DiffusionSchedule {
    DiffusionSchedule::linear(1000, 1e-4, 2e-2).unwrap()
}

// Double-double helpers: value = hi + lo.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn dd_mul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let p = a.0 * b.0;
    let e = a.0.mul_add(b.0, -p);
    two_sum(p, e + a.0 * b.1 + a.1 * b.0)
}

fn dd_sub_from_one(b: (f64, f64)) -> (f64, f64) {
    let (s, e) = two_sum(1.0, -b.0);
    two_sum(s, e - b.1)
}

#[test]
fn alpha_bar_matches_extended_precision_product() {
    let (t_max, lo, hi) = (1000usize, 1e-4, 2e-2);
    let s = DiffusionSchedule::linear(t_max, lo, hi).unwrap();
    let mut acc = (1.0, 0.0);
    for step in 1..=t_max {
        // beta = lo + (hi - lo) * (step - 1) / (T - 1), carried in double-double.
        let frac = (step - 1) as f64 / (t_max - 1) as f64;
        let frac_err = ((step - 1) as f64 - frac * (t_max - 1) as f64) / (t_max - 1) as f64;
        let span = two_sum(hi, -lo);
        let scaled = dd_mul(span, (frac, frac_err));
        let beta = two_sum(lo + scaled.0, scaled.1);
        acc = dd_mul(acc, dd_sub_from_one(beta));
        let rel = (s.alpha_bar(step) - acc.0).abs() / acc.0;
        assert!(rel < 1e-12, "t = {step}: {} vs {} (rel {rel:e})", s.alpha_bar(step), acc.0);
    }
    assert!(s.alpha_bar(t_max) > 0.0 && s.alpha_bar(t_max) < 1e-4);
}

#[test]
fn forward_diffuse_monte_carlo_moments() {
    let s = default_schedule();
    let t = 300;
    let ab = s.alpha_bar(t);
    let x0 = LatentVideo::new(1, 2, vec![1.5, -0.7]).unwrap();
    let mut rng = rng_from(5);
    let n = 100_000;
    let (mut sum, mut sq) = ([0.0; 2], [0.0; 2]);
    for _ in 0..n {
        let noise = LatentVideo::new(1, 2, (0..2).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
        let z = forward_diffuse(&x0, t, &noise, &s).unwrap();
        for i in 0..2 {
            sum[i] += z.as_slice()[i];
            sq[i] += z.as_slice()[i].powi(2);
        }
    }
    for i in 0..2 {
        let mean = sum[i] / n as f64;
        let var = sq[i] / n as f64 - mean * mean;
        let want_mean = ab.sqrt() * x0.as_slice()[i];
        assert!((mean - want_mean).abs() <= 0.01 * want_mean.abs(), "mean {mean} vs {want_mean}");
        assert!((var - (1.0 - ab)).abs() <= 0.01 * (1.0 - ab), "var {var} vs {}", 1.0 - ab);
    }
}

fn rotation(theta: f64, r: f64) -> Vec<Vec<f64>> {
    vec![
        vec![r * theta.cos(), -r * theta.sin()],
        vec![r * theta.sin(), r * theta.cos()],
    ]
}

/// Two modes with different dynamics at F = 4, D = 2, so each joint
/// covariance is full.
fn two_mode_spec() -> WorldSpec {
    let mode = |w: f64, m: [f64; 2], theta: f64, drift: [f64; 2]| ModeSpec {
        weight: w,
        init_mean: m.to_vec(),
        init_cov_scale: 0.6,
        dynamics: rotation(theta, 0.9),
        drift: drift.to_vec(),
        process_noise_scale: 0.35,
    };
    let class = ClassSpec {
        modes: vec![
            mode(0.4, [1.2, -0.4], 0.3, [0.2, 0.1]),
            mode(0.6, [-0.8, 0.9], -0.5, [-0.1, 0.25]),
        ],
    };
    WorldSpec {
        classes: vec![class.clone(), class],
        frames: 4,
        dim: 2,
        seed: 0,
    }
}

/// Rolls the recursion forward directly from the spec.
fn rollout<R: Rng>(spec: &WorldSpec, class: usize, rng: &mut R) -> Vec<f64> {
    let modes = &spec.classes[class].modes;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut mode = &modes[modes.len() - 1];
    for m in modes {
        acc += m.weight;
        if u < acc {
            mode = m;
            break;
        }
    }
    let d = spec.dim;
    let mut z: Vec<f64> = (0..d)
        .map(|i| {
            let e: f64 = StandardNormal.sample(rng);
            mode.init_mean[i] + mode.init_cov_scale * e
        })
        .collect();
    let mut out = z.clone();
    for _ in 1..spec.frames {
        z = (0..d)
            .map(|r| {
                let az: f64 = (0..d).map(|k| mode.dynamics[r][k] * z[k]).sum();
                let e: f64 = StandardNormal.sample(rng);
                az + mode.drift[r] + mode.process_noise_scale * e
            })
            .collect();
        out.extend_from_slice(&z);
    }
    out
}

fn monte_carlo_eps(samples: &[Vec<f64>], z: &[f64], t: usize, s: &DiffusionSchedule) -> Vec<f64> {
    let ab = s.alpha_bar(t);
    let (sa, sn2) = (ab.sqrt(), 1.0 - ab);
    let logw: Vec<f64> = samples
        .iter()
        .map(|x| {
            -z.iter().zip(x).map(|(zi, xi)| (zi - sa * xi).powi(2)).sum::<f64>() / (2.0 * sn2)
        })
        .collect();
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut post = vec![0.0; z.len()];
    for (x, lw) in samples.iter().zip(&logw) {
        let w = (lw - m).exp();
        total += w;
        post.iter_mut().zip(x).for_each(|(p, xi)| *p += w * xi);
    }
    post.iter()
        .zip(z)
        .map(|(p, zi)| (zi - sa * p / total) / sn2.sqrt())
        .collect()
}

#[test]
fn oracle_matches_importance_weighted_posterior() {
    let spec = two_mode_spec();
    let world = build_world(&spec).unwrap();
    let s = default_schedule();
    let mut rng = rng_from(2024);
    let samples: Vec<Vec<f64>> = (0..1_000_000).map(|_| rollout(&spec, 0, &mut rng)).collect();
    for t in [250, 500, 750] {
        let x0 = LatentVideo::new(4, 2, rollout(&spec, 0, &mut rng)).unwrap();
        let noise = LatentVideo::new(4, 2, (0..8).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
        let z = forward_diffuse(&x0, t, &noise, &s).unwrap();
        let exact = oracle_denoise(&world, 0, &z, t, &s).unwrap();
        let mc = monte_carlo_eps(&samples, z.as_slice(), t, &s);
        let err: f64 = exact.as_slice().iter().zip(&mc).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = exact.as_slice().iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err / scale < 1e-2, "t = {t}: relative error {}", err / scale);
    }
}

#[test]
fn built_moments_match_rollouts() {
    let mut spec = two_mode_spec();
    for c in &mut spec.classes {
        c.modes.truncate(1);
        c.modes[0].weight = 1.0;
    }
    let world = build_world(&spec).unwrap();
    let mode = &world.modes(0).unwrap()[0];
    let mut rng = rng_from(77);
    let n = 100_000;
    let samples: Vec<DVector<f64>> = (0..n)
        .map(|_| DVector::from_vec(rollout(&spec, 0, &mut rng)))
        .collect();
    let mean = samples.iter().fold(DVector::zeros(8), |a, x| a + x) / n as f64;
    let cov = samples
        .iter()
        .fold(DMatrix::zeros(8, 8), |a, x| a + (x - &mean) * (x - &mean).transpose())
        / (n - 1) as f64;
    assert!((&mean - &mode.mean).norm() / mode.mean.norm() < 0.02);
    assert!((&cov - &mode.cov).norm() / mode.cov.norm() < 0.02);
}

#[test]
fn sampled_class_means_match_mixture_mean() {
    let world = build_world(&two_mode_spec()).unwrap();
    let ds = sample_dataset(&world, 100_000, 3).unwrap();
    for c in 0..2u32 {
        let feats = ds.class_flat(c);
        let mut m = vec![0.0; 8];
        for f in &feats {
            m.iter_mut().zip(f).for_each(|(a, b)| *a += b / feats.len() as f64);
        }
        let want = world.class_mean(c as usize).unwrap();
        let err: f64 = m.iter().zip(want.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err / want.norm() < 0.01, "class {c}: relative error {}", err / want.norm());
    }
}

#[test]
fn isotropic_oracle_is_exact_shrinkage() {
    let world = gvd_core::world::GaussianWorld::from_mixtures(
        4,
        2,
        vec![
            vec![(1.0, DVector::zeros(8), DMatrix::identity(8, 8))],
            vec![(1.0, DVector::zeros(8), DMatrix::identity(8, 8))],
        ],
    )
    .unwrap();
    let s = default_schedule();
    let mut rng = rng_from(9);
    for t in [1, 100, 250, 500, 750, 1000] {
        let z = LatentVideo::new(4, 2, (0..8).map(|_| 3.0 * rng.random::<f64>() - 1.5).collect()).unwrap();
        let eps = oracle_denoise(&world, 1, &z, t, &s).unwrap();
        let k = (1.0 - s.alpha_bar(t)).sqrt();
        for (e, zv) in eps.as_slice().iter().zip(z.as_slice()) {
            assert!((e - k * zv).abs() < 1e-8, "t = {t}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedules_are_strictly_decreasing(t in 1usize..2000, lo in 1e-5f64..1e-2, extra in 0.0f64..0.05) {
        let s = DiffusionSchedule::linear(t, lo, lo + extra).unwrap();
        prop_assert_eq!(s.alpha_bar(0), 1.0);
        for w in s.alpha_bars().windows(2) {
            prop_assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn diffuse_then_predict_round_trips(
        t in 1usize..=1000,
        x in prop::collection::vec(-5.0f64..5.0, 6),
        n in prop::collection::vec(-3.0f64..3.0, 6),
    ) {
        let s = default_schedule();
        let x0 = LatentVideo::new(3, 2, x).unwrap();
        let noise = LatentVideo::new(3, 2, n).unwrap();
        let z = forward_diffuse(&x0, t, &noise, &s).unwrap();
        let back = predict_x0(&z, &gvd_core::NoisePrediction::new(noise), t, &s).unwrap();
        // Recovering x0 divides by √ᾱ_t, which amplifies the rounding of z.
        let amp = 1.0 / s.alpha_bar(t).sqrt();
        for (a, b) in back.as_slice().iter().zip(x0.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-10 * amp * b.abs().max(1.0), "{} vs {}", a, b);
        }
    }

    #[test]
    fn responsibilities_form_a_distribution(
        t in 1usize..=1000,
        z in prop::collection::vec(-20.0f64..20.0, 8),
    ) {
        let world = build_world(&two_mode_spec()).unwrap();
        let s = default_schedule();
        let post = oracle_posterior(&world, 1, &LatentVideo::new(4, 2, z).unwrap(), t, &s).unwrap();
        prop_assert!(post.responsibilities.iter().all(|r| *r >= 0.0));
        let total: f64 = post.responsibilities.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }
}

/// 1×1 latents, 4 classes, one hidden unit: (1 + 4 + 2)·1 + 1 + 1·1 + 1 = 10 parameters.
fn tiny_denoiser() -> (TrainedDenoiser, Vec<NoiseExample>, DiffusionSchedule) {
    let s = DiffusionSchedule::linear(50, 1e-3, 0.05).unwrap();
    let mut rng = rng_from(31);
    let mut den = TrainedDenoiser::init(1, 1, 4, &[1], &mut rng).unwrap();
    assert_eq!(den.net().param_count(), 10);
    let p: Vec<f64> = den.net().params().iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
    den.net_mut().set_params(&p);
    let batch = (0..6)
        .map(|i| {
            let x0 = LatentVideo::new(1, 1, vec![rng.random_range(-2.0..2.0)]).unwrap();
            noise_example(i % 4, &x0, &s, &mut rng).unwrap()
        })
        .collect();
    (den, batch, s)
}

#[test]
fn noise_matching_gradient_matches_finite_differences() {
    let (den, batch, s) = tiny_denoiser();
    let (_, grads) = den.loss_and_grad(&batch, &s);
    let analytic = grads.flatten();
    let p = den.net().params();
    let h = 1e-6;
    for i in 0..p.len() {
        let mut probe = den.clone();
        let mut q = p.clone();
        q[i] += h;
        probe.net_mut().set_params(&q);
        let plus = probe.loss_and_grad(&batch, &s).0;
        q[i] -= 2.0 * h;
        probe.net_mut().set_params(&q);
        let minus = probe.loss_and_grad(&batch, &s).0;
        let fd = (plus - minus) / (2.0 * h);
        let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-8);
        assert!(rel < 1e-5, "param {i}: fd {fd} vs analytic {} (rel {rel:e})", analytic[i]);
    }
}

#[test]
fn trained_denoiser_approaches_oracle_on_single_mode_world() {
    let mut spec = two_mode_spec();
    for c in &mut spec.classes {
        c.modes.truncate(1);
        c.modes[0].weight = 1.0;
    }
    spec.classes[1].modes[0].init_mean = vec![-1.5, -1.0];
    let world = Arc::new(build_world(&spec).unwrap());
    let train: VideoDataset = sample_dataset(&world, 400, 8).unwrap();
    let s = default_schedule();
    let oracle = DenoiserSpec::Oracle(world.clone());
    let mut rng = rng_from(12);
    let probes: Vec<(usize, LatentVideo, usize)> = (0..200)
        .map(|i| {
            let c = i % 2;
            let x0 = world.sample_video(c, &mut rng).unwrap();
            let t = rng.random_range(1..=1000);
            let noise = LatentVideo::new(4, 2, (0..8).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
            (c, forward_diffuse(&x0, t, &noise, &s).unwrap(), t)
        })
        .collect();
    let gap = |d: &TrainedDenoiser| -> f64 {
        probes
            .iter()
            .map(|(c, z, t)| {
                let a = d.predict_noise(*c, z, *t, &s).unwrap();
                let b = oracle.predict_noise(*c, z, *t, &s).unwrap();
                a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / probes.len() as f64
    };
    let cfg = DenoiserTrainConfig {
        hidden: vec![32, 32],
        epochs: 25,
        ..Default::default()
    };
    let mut checkpoints = Vec::new();
    train_denoiser(&train, &s, &cfg, |epoch, d| {
        if epoch % 5 == 0 {
            checkpoints.push(gap(d));
        }
    })
    .unwrap();
    assert_eq!(checkpoints.len(), 5);
    for w in checkpoints.windows(2) {
        assert!(w[1] < w[0], "gap did not shrink: {checkpoints:?}");
    }
}
