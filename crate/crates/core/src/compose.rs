//! Multi-video instance composition: each final video is stitched from
//! frames of `U` generated instances of one class.

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::VideoDataset;
use crate::error::{GvdError, Result};
use crate::latent::LatentVideo;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionStrategy {
    /// Video `j` supplies the `j`-th temporal segment.
    Continuous,
    /// Video `j` supplies `n_j` sorted frames sampled without replacement.
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompositionPlan {
    pub pattern: Vec<usize>,
    pub strategy: CompositionStrategy,
    pub seed: u64,
}

impl Default for CompositionPlan {
    fn default() -> Self {
        Self {
            pattern: vec![4, 4, 4, 4],
            strategy: CompositionStrategy::Random,
            seed: 0,
        }
    }
}

impl CompositionPlan {
    /// Single-source plan that leaves videos untouched.
    pub fn identity(frames: usize) -> Self {
        Self {
            pattern: vec![frames],
            strategy: CompositionStrategy::Continuous,
            seed: 0,
        }
    }

    /// `U`, the number of instances per composed video.
    pub fn group_size(&self) -> usize {
        self.pattern.len()
    }

    pub fn validate(&self, frames: usize) -> Result<()> {
        if self.pattern.is_empty() || self.pattern.contains(&0) {
            return Err(GvdError::config("pattern", "entries must be >= 1"));
        }
        let total: usize = self.pattern.iter().sum();
        if total != frames {
            return Err(GvdError::config(
                "pattern",
                format!("sums to {total}, videos have {frames} frames"),
            ));
        }
        Ok(())
    }
}

/// Source frame indices contributed by each group member, in group order.
pub fn frame_selection(plan: &CompositionPlan, frames: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    plan.validate(frames)?;
    let mut rng = seed::rng_from(seed);
    let mut offset = 0;
    Ok(plan
        .pattern
        .iter()
        .map(|&n| match plan.strategy {
            CompositionStrategy::Continuous => {
                let sel = (offset..offset + n).collect();
                offset += n;
                sel
            }
            CompositionStrategy::Random => {
                let mut sel = index::sample(&mut rng, frames, n).into_vec();
                sel.sort_unstable();
                sel
            }
        })
        .collect())
}

/// Composes one video from `group`; `seed` drives random frame sampling.
pub fn mvic_compose(group: &[&LatentVideo], plan: &CompositionPlan, seed: u64) -> Result<LatentVideo> {
    Ok(compose_with_sources(group, plan, seed)?.0)
}

fn compose_with_sources(
    group: &[&LatentVideo],
    plan: &CompositionPlan,
    seed: u64,
) -> Result<(LatentVideo, Vec<Vec<usize>>)> {
    if group.len() != plan.group_size() {
        return Err(GvdError::config(
            "pattern",
            format!("has {} entries for a group of {}", plan.group_size(), group.len()),
        ));
    }
    let (frames, dim) = group[0].shape();
    for v in &group[1..] {
        group[0].ensure_same_shape(v, "composition group")?;
    }
    let sel = frame_selection(plan, frames, seed)?;
    let mut data = Vec::with_capacity(frames * dim);
    for (v, idx) in group.iter().zip(&sel) {
        for &f in idx {
            data.extend_from_slice(v.frame(f));
        }
    }
    Ok((LatentVideo::new(frames, dim, data)?, sel))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFrames {
    /// Record index in the raw dataset.
    pub raw_id: usize,
    pub frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub composed_id: usize,
    pub class: u32,
    pub sources: Vec<SourceFrames>,
}

/// Splits each class's raw instances into seeded random groups of `U` and
/// composes one video per group. Output is class-major.
pub fn compose_dataset(raw: &VideoDataset, plan: &CompositionPlan) -> Result<(VideoDataset, Vec<ProvenanceEntry>)> {
    plan.validate(raw.frames())?;
    let u = plan.group_size();
    let mut jobs = Vec::new();
    for c in 0..raw.class_count() {
        let mut ids: Vec<usize> = raw
            .records()
            .iter()
            .enumerate()
            .filter(|(_, (l, _))| *l as usize == c)
            .map(|(i, _)| i)
            .collect();
        if ids.len() % u != 0 {
            return Err(GvdError::config(
                "pattern",
                format!("class {c} has {} instances, not divisible by U = {u}", ids.len()),
            ));
        }
        ids.shuffle(&mut seed::task_rng(plan.seed, "compose-group", c as u64, 0));
        for (g, chunk) in ids.chunks(u).enumerate() {
            jobs.push((c as u32, g, chunk.to_vec()));
        }
    }

    let composed: Vec<(LatentVideo, Vec<Vec<usize>>)> = jobs
        .par_iter()
        .map(|(c, g, ids)| {
            let group: Vec<&LatentVideo> = ids.iter().map(|&i| &raw.records()[i].1).collect();
            let s = seed::mix(plan.seed, "compose-frames", *c as u64, *g as u64);
            compose_with_sources(&group, plan, s)
        })
        .collect::<Result<_>>()?;

    let mut out = VideoDataset::new(raw.frames(), raw.dim(), raw.class_count());
    let mut prov = Vec::with_capacity(jobs.len());
    for (id, ((c, _, ids), (video, sel))) in jobs.into_iter().zip(composed).enumerate() {
        out.push(c, video)?;
        prov.push(ProvenanceEntry {
            composed_id: id,
            class: c,
            sources: ids
                .into_iter()
                .zip(sel)
                .map(|(raw_id, frames)| SourceFrames { raw_id, frames })
                .collect(),
        });
    }
    Ok((out, prov))
}
