use crate::error::{GvdError, Result};

/// An `frames × dim` latent sequence stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl LatentVideo {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(GvdError::dimension(
                "latent video",
                "frames >= 1 and dim >= 1",
                format!("{frames}x{dim}"),
            ));
        }
        if data.len() != frames * dim {
            return Err(GvdError::dimension(
                "latent video",
                frames * dim,
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GvdError::numerical("latent video", "non-finite entry"));
        }
        Ok(Self { frames, dim, data })
    }

    pub fn zeros(frames: usize, dim: usize) -> Self {
        Self {
            frames,
            dim,
            data: vec![0.0; frames * dim],
        }
    }

    /// Builds a video without the finiteness scan; callers guarantee the shape.
    pub(crate) fn from_parts(frames: usize, dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), frames * dim);
        Self { frames, dim, data }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.dim)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        &self.data[f * self.dim..(f + 1) * self.dim]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [f64] {
        &mut self.data[f * self.dim..(f + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rounds every entry to the nearest binary32 value, the on-disk precision.
    pub fn to_f32_precision(&self) -> Self {
        Self {
            frames: self.frames,
            dim: self.dim,
            data: self.data.iter().map(|&v| f64::from(v as f32)).collect(),
        }
    }

    pub fn ensure_same_shape(&self, other: &LatentVideo, context: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(GvdError::dimension(
                context,
                format!("{}x{}", self.frames, self.dim),
                format!("{}x{}", other.frames, other.dim),
            ));
        }
        Ok(())
    }

    pub fn distance(&self, other: &LatentVideo) -> f64 {
        euclidean(&self.data, &other.data)
    }
}

/// Noise predicted for a latent; always shaped like its source latent.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePrediction(LatentVideo);

impl NoisePrediction {
    pub fn new(eps: LatentVideo) -> Self {
        Self(eps)
    }

    pub fn latent(&self) -> &LatentVideo {
        &self.0
    }

    pub fn into_latent(self) -> LatentVideo {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_euclidean(a, b).sqrt()
}

pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
