//! Synthetic labeled latent-video world.
//!
//! Every class is a weighted mixture of linear-Gaussian trajectories
//! `z_{f+1} = A z_f + b + η_f` with `η_f ~ N(0, q² I)` and
//! `z_0 ~ N(m, s² I)`. The joint law of a whole video is Gaussian, so each
//! mode is stored as a flattened mean and covariance over `F·D` values.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::VideoDataset;
use crate::error::{GvdError, Result};
use crate::latent::LatentVideo;
use crate::linalg;
use crate::seed;

/// Dynamics whose spectral radius exceeds this are rejected.
pub const MAX_SPECTRAL_RADIUS: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub weight: f64,
    pub init_mean: Vec<f64>,
    /// Standard deviation `s` of the isotropic first-frame spread.
    pub init_cov_scale: f64,
    /// Row-major `D × D` transition matrix.
    pub dynamics: Vec<Vec<f64>>,
    pub drift: Vec<f64>,
    /// Standard deviation `q` of the per-frame process noise.
    pub process_noise_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub modes: Vec<ModeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub classes: Vec<ClassSpec>,
    pub frames: usize,
    pub dim: usize,
    pub seed: u64,
}

/// Knobs of the procedurally generated benchmark world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkParams {
    pub classes: usize,
    pub modes_per_class: usize,
    pub frames: usize,
    pub dim: usize,
    /// Contraction factor of every transition matrix.
    pub damping: f64,
    /// Rotation per frame of class 0, in radians.
    pub base_rotation: f64,
    /// Additional rotation per frame for each subsequent class.
    pub rotation_step: f64,
    /// Magnitude of the per-class drift vector.
    pub drift_scale: f64,
    /// Radius on which class centers are placed.
    pub class_radius: f64,
    /// Distance of mode starting points from their class center.
    pub init_radius: f64,
    pub init_cov_scale: f64,
    pub process_noise_scale: f64,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        Self {
            classes: 5,
            modes_per_class: 4,
            frames: 16,
            dim: 2,
            damping: 0.95,
            base_rotation: 0.12,
            rotation_step: 0.1,
            drift_scale: 0.15,
            class_radius: 1.5,
            init_radius: 2.0,
            init_cov_scale: 0.4,
            process_noise_scale: 0.25,
        }
    }
}

impl WorldSpec {
    /// The pinned benchmark world generated from `params` and `seed`.
    ///
    /// Classes differ in rotation speed and drift direction; the modes of a
    /// class share dynamics and only differ in where trajectories start.
    pub fn benchmark(params: &BenchmarkParams, seed: u64) -> Self {
        let mut rng = seed::task_rng(seed, "world-spec", 0, 0);
        let d = params.dim;
        let tau = std::f64::consts::TAU;
        // Point at `radius` in direction `angle`, repeated over dimension pairs.
        let on_circle = |radius: f64, angle: f64| -> Vec<f64> {
            (0..d)
                .map(|i| radius * (angle - (i % 2) as f64 * std::f64::consts::FRAC_PI_2).cos())
                .collect()
        };
        let class_offset: f64 = rng.random::<f64>() * tau;
        let classes = (0..params.classes)
            .map(|c| {
                let omega = params.base_rotation + params.rotation_step * c as f64;
                let dynamics = rotation_block(d, omega, params.damping);
                let center = on_circle(
                    params.class_radius,
                    class_offset + tau * c as f64 / params.classes as f64,
                );
                let phase: f64 = rng.random::<f64>() * tau;
                // Trajectories orbit the class center: b = (I − A) μ + drift.
                let drift: Vec<f64> = on_circle(params.drift_scale, phase)
                    .iter()
                    .enumerate()
                    .map(|(r, v)| {
                        let a_mu: f64 = (0..d).map(|k| dynamics[r][k] * center[k]).sum();
                        v + center[r] - a_mu
                    })
                    .collect();
                let offset: f64 = rng.random::<f64>() * tau;
                let modes = (0..params.modes_per_class)
                    .map(|k| {
                        let angle = offset + tau * k as f64 / params.modes_per_class as f64;
                        let init_mean = on_circle(params.init_radius, angle)
                            .iter()
                            .zip(&center)
                            .map(|(a, b)| a + b)
                            .collect();
                        ModeSpec {
                            weight: 1.0 / params.modes_per_class as f64,
                            init_mean,
                            init_cov_scale: params.init_cov_scale,
                            dynamics: dynamics.clone(),
                            drift: drift.clone(),
                            process_noise_scale: params.process_noise_scale,
                        }
                    })
                    .collect();
                ClassSpec { modes }
            })
            .collect();
        WorldSpec {
            classes,
            frames: params.frames,
            dim: params.dim,
            seed,
        }
    }

    pub fn default_benchmark(seed: u64) -> Self {
        Self::benchmark(&BenchmarkParams::default(), seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(GvdError::config("classes", "at least 2 classes required"));
        }
        if self.frames < 2 {
            return Err(GvdError::config("frames", "at least 2 frames required"));
        }
        if self.dim < 1 {
            return Err(GvdError::config("dim", "must be >= 1"));
        }
        let d = self.dim;
        for (c, class) in self.classes.iter().enumerate() {
            if class.modes.is_empty() {
                return Err(GvdError::config(
                    format!("classes[{c}].modes"),
                    "each class needs at least one mode",
                ));
            }
            let mut total = 0.0;
            for (k, mode) in class.modes.iter().enumerate() {
                let at = |f: &str| format!("classes[{c}].modes[{k}].{f}");
                if !(mode.weight > 0.0 && mode.weight.is_finite()) {
                    return Err(GvdError::config(at("weight"), "must be positive"));
                }
                total += mode.weight;
                if mode.init_mean.len() != d {
                    return Err(GvdError::config(at("init_mean"), format!("length must be {d}")));
                }
                if mode.drift.len() != d {
                    return Err(GvdError::config(at("drift"), format!("length must be {d}")));
                }
                if mode.dynamics.len() != d || mode.dynamics.iter().any(|r| r.len() != d) {
                    return Err(GvdError::config(at("dynamics"), format!("must be {d}x{d}")));
                }
                if !(mode.init_cov_scale > 0.0) {
                    return Err(GvdError::config(at("init_cov_scale"), "must be > 0"));
                }
                if !(mode.process_noise_scale > 0.0) {
                    return Err(GvdError::config(at("process_noise_scale"), "must be > 0"));
                }
                let all_finite = mode
                    .init_mean
                    .iter()
                    .chain(&mode.drift)
                    .chain(mode.dynamics.iter().flatten())
                    .all(|v| v.is_finite());
                if !all_finite {
                    return Err(GvdError::config(at("*"), "non-finite parameter"));
                }
                let radius = spectral_radius(&dynamics_matrix(mode));
                if radius > MAX_SPECTRAL_RADIUS {
                    return Err(GvdError::config(
                        at("dynamics"),
                        format!("spectral radius {radius:.4} exceeds {MAX_SPECTRAL_RADIUS}"),
                    ));
                }
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(GvdError::config(
                    format!("classes[{c}].modes[*].weight"),
                    format!("weights sum to {total}, expected 1"),
                ));
            }
        }
        Ok(())
    }
}

fn rotation_block(d: usize, omega: f64, damping: f64) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; d]; d];
    let mut i = 0;
    while i + 1 < d {
        a[i][i] = damping * omega.cos();
        a[i][i + 1] = -damping * omega.sin();
        a[i + 1][i] = damping * omega.sin();
        a[i + 1][i + 1] = damping * omega.cos();
        i += 2;
    }
    if i < d {
        a[i][i] = damping;
    }
    a
}

fn dynamics_matrix(mode: &ModeSpec) -> DMatrix<f64> {
    let d = mode.dynamics.len();
    DMatrix::from_fn(d, d, |r, c| mode.dynamics[r][c])
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// One mixture component over flattened videos.
#[derive(Debug, Clone)]
pub struct GaussianMode {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Lower Cholesky factor of `cov`, computed once for sampling.
    pub factor: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct GaussianWorld {
    frames: usize,
    dim: usize,
    classes: Vec<Vec<GaussianMode>>,
}

impl GaussianWorld {
    /// Builds a world directly from flattened mixtures.
    pub fn from_mixtures(
        frames: usize,
        dim: usize,
        classes: Vec<Vec<(f64, DVector<f64>, DMatrix<f64>)>>,
    ) -> Result<Self> {
        let n = frames * dim;
        let mut out = Vec::with_capacity(classes.len());
        for (c, modes) in classes.into_iter().enumerate() {
            if modes.is_empty() {
                return Err(GvdError::config(format!("classes[{c}]"), "no modes"));
            }
            let total: f64 = modes.iter().map(|m| m.0).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(GvdError::config(
                    format!("classes[{c}].weight"),
                    format!("weights sum to {total}"),
                ));
            }
            let mut built = Vec::with_capacity(modes.len());
            for (k, (weight, mean, cov)) in modes.into_iter().enumerate() {
                if mean.len() != n || cov.nrows() != n || cov.ncols() != n {
                    return Err(GvdError::dimension(
                        format!("class {c} mode {k}"),
                        n,
                        format!("mean {} / cov {}x{}", mean.len(), cov.nrows(), cov.ncols()),
                    ));
                }
                let sym = (&cov + cov.transpose()) * 0.5;
                let factor = linalg::cholesky_with_jitter(&sym, &format!("class {c} mode {k}"))?
                    .l();
                built.push(GaussianMode {
                    weight,
                    mean,
                    cov: sym,
                    factor,
                });
            }
            out.push(built);
        }
        if out.is_empty() {
            return Err(GvdError::config("classes", "world has no classes"));
        }
        Ok(Self {
            frames,
            dim,
            classes: out,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn flat_dim(&self) -> usize {
        self.frames * self.dim
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn modes(&self, class: usize) -> Result<&[GaussianMode]> {
        self.classes
            .get(class)
            .map(Vec::as_slice)
            .ok_or_else(|| {
                GvdError::Precondition(format!(
                    "class {class} not in world ({} classes)",
                    self.classes.len()
                ))
            })
    }

    /// Mean of the class mixture, flattened.
    pub fn class_mean(&self, class: usize) -> Result<DVector<f64>> {
        let modes = self.modes(class)?;
        Ok(modes
            .iter()
            .fold(DVector::zeros(self.flat_dim()), |acc, m| acc + &m.mean * m.weight))
    }

    /// Draws one flattened video of `class`.
    pub fn sample_video<R: Rng + ?Sized>(&self, class: usize, rng: &mut R) -> Result<LatentVideo> {
        let modes = self.modes(class)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = modes.len() - 1;
        for (k, m) in modes.iter().enumerate() {
            acc += m.weight;
            if u < acc {
                chosen = k;
                break;
            }
        }
        let mode = &modes[chosen];
        let n = self.flat_dim();
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let x = &mode.mean + &mode.factor * z;
        Ok(LatentVideo::from_parts(
            self.frames,
            self.dim,
            x.iter().copied().collect(),
        ))
    }
}

/// Computes the joint Gaussian of every mode by the forward moment recursion.
pub fn build_world(spec: &WorldSpec) -> Result<GaussianWorld> {
    spec.validate()?;
    let (f_count, d) = (spec.frames, spec.dim);
    let n = f_count * d;
    let classes = spec
        .classes
        .iter()
        .map(|class| {
            class
                .modes
                .iter()
                .map(|mode| {
                    let a = dynamics_matrix(mode);
                    let b = DVector::from_column_slice(&mode.drift);
                    let q2 = mode.process_noise_scale * mode.process_noise_scale;
                    let s2 = mode.init_cov_scale * mode.init_cov_scale;

                    let mut means = Vec::with_capacity(f_count);
                    let mut covs = Vec::with_capacity(f_count);
                    means.push(DVector::from_column_slice(&mode.init_mean));
                    covs.push(DMatrix::<f64>::identity(d, d) * s2);
                    for f in 1..f_count {
                        let m = &a * &means[f - 1] + &b;
                        let c = &a * &covs[f - 1] * a.transpose()
                            + DMatrix::<f64>::identity(d, d) * q2;
                        means.push(m);
                        covs.push(c);
                    }

                    let mut mean = DVector::zeros(n);
                    let mut cov = DMatrix::zeros(n, n);
                    for f in 0..f_count {
                        mean.rows_mut(f * d, d).copy_from(&means[f]);
                        // Cov(z_g, z_f) = A^{g-f} Cov(z_f) for g >= f.
                        let mut block = covs[f].clone();
                        for g in f..f_count {
                            if g > f {
                                block = &a * block;
                            }
                            cov.view_mut((g * d, f * d), (d, d)).copy_from(&block);
                            cov.view_mut((f * d, g * d), (d, d))
                                .copy_from(&block.transpose());
                        }
                    }
                    (mode.weight, mean, cov)
                })
                .collect()
        })
        .collect();
    GaussianWorld::from_mixtures(f_count, d, classes)
}

/// Draws `n_per_class` videos for every class, labels in class order.
///
/// Record `i` of class `c` uses its own seed derived from `(seed, c, i)`, so
/// the result is independent of the rayon thread count.
pub fn sample_dataset(world: &GaussianWorld, n_per_class: usize, seed: u64) -> Result<VideoDataset> {
    if n_per_class == 0 {
        return Err(GvdError::config("n_per_class", "must be >= 1"));
    }
    let classes = world.class_count();
    let records: Vec<(u32, LatentVideo)> = (0..classes * n_per_class)
        .into_par_iter()
        .map(|idx| {
            let class = idx / n_per_class;
            let i = idx % n_per_class;
            let mut rng = seed::task_rng(seed, "sample-dataset", class as u64, i as u64);
            world
                .sample_video(class, &mut rng)
                .map(|v| (class as u32, v))
        })
        .collect::<Result<_>>()?;
    let mut ds = VideoDataset::new(world.frames(), world.dim(), classes);
    for (c, v) in records {
        ds.push(c, v)?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_mode_spec(a: Vec<Vec<f64>>, b: Vec<f64>, s: f64, q: f64, frames: usize) -> WorldSpec {
        let d = b.len();
        let mode = ModeSpec {
            weight: 1.0,
            init_mean: vec![0.5; d],
            init_cov_scale: s,
            dynamics: a,
            drift: b,
            process_noise_scale: q,
        };
        WorldSpec {
            classes: vec![ClassSpec { modes: vec![mode.clone()] }, ClassSpec { modes: vec![mode] }],
            frames,
            dim: d,
            seed: 0,
        }
    }

    #[test]
    fn zero_dynamics_collapse_to_drift() {
        let spec = single_mode_spec(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![0.7, -0.3], 1.0, 1e-6, 5);
        let world = build_world(&spec).unwrap();
        let mode = &world.modes(0).unwrap()[0];
        for f in 1..5 {
            assert!((mode.mean[f * 2] - 0.7).abs() < 1e-12);
            assert!((mode.mean[f * 2 + 1] + 0.3).abs() < 1e-12);
            assert!(mode.cov[(f * 2, f * 2)] < 1e-11);
        }
    }

    #[test]
    fn random_walk_variance_accumulates() {
        let (s, q) = (0.5, 0.2);
        let spec = single_mode_spec(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0], s, q, 6);
        let world = build_world(&spec).unwrap();
        let mode = &world.modes(1).unwrap()[0];
        for f in 0..6 {
            for i in 0..2 {
                let var = mode.cov[(f * 2 + i, f * 2 + i)];
                assert!((var - (s * s + f as f64 * q * q)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn explosive_dynamics_rejected() {
        let spec = single_mode_spec(vec![vec![1.3, 0.0], vec![0.0, 0.5]], vec![0.0, 0.0], 1.0, 0.1, 3);
        let err = build_world(&spec).unwrap_err();
        assert!(matches!(err, GvdError::Config { ref field, .. } if field.contains("dynamics")));
    }

    #[test]
    fn bad_weights_rejected() {
        let mut spec = WorldSpec::default_benchmark(1);
        spec.classes[0].modes[0].weight = 0.9;
        assert!(matches!(build_world(&spec), Err(GvdError::Config { .. })));
    }

    #[test]
    fn single_frame_world_rejected() {
        let mut spec = WorldSpec::default_benchmark(1);
        spec.frames = 1;
        assert!(build_world(&spec).is_err());
    }

    #[test]
    fn default_benchmark_is_valid() {
        let spec = WorldSpec::default_benchmark(2024);
        let world = build_world(&spec).unwrap();
        assert_eq!(world.class_count(), 5);
        assert_eq!(world.flat_dim(), 32);
        for c in 0..5 {
            assert_eq!(world.modes(c).unwrap().len(), 4);
        }
    }

    #[test]
    fn tiny_dataset_has_one_record_per_class() {
        let world = build_world(&WorldSpec::default_benchmark(3)).unwrap();
        let spec2 = WorldSpec {
            classes: WorldSpec::default_benchmark(3).classes[..2].to_vec(),
            ..WorldSpec::default_benchmark(3)
        };
        let world2 = build_world(&spec2).unwrap();
        let ds = sample_dataset(&world2, 1, 9).unwrap();
        assert_eq!(ds.len(), 2);
        assert_ne!(ds.records()[0].0, ds.records()[1].0);
        let a = sample_dataset(&world, 3, 5).unwrap();
        let b = sample_dataset(&world, 3, 5).unwrap();
        assert_eq!(a, b);
    }
}
