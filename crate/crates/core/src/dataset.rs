//! Labeled latent-video datasets and their binary file format.
//!
//! Layout (little-endian):
//!
//! | field          | type                         |
//! |----------------|------------------------------|
//! | magic          | `b"GVDS"`                    |
//! | version        | u32 = 1                      |
//! | frames `F`     | u32                          |
//! | dim `D`        | u32                          |
//! | class_count    | u32                          |
//! | record_count   | u64                          |
//! | records        | `u32 class_id` + `F·D` × f32 |
//!
//! An optional soft-label block may follow: `b"SLBL"`, u32 class_count, then
//! `record_count × class_count` f32 probabilities.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{GvdError, Result};
use crate::latent::LatentVideo;

pub const MAGIC: [u8; 4] = *b"GVDS";
pub const SOFT_LABEL_MAGIC: [u8; 4] = *b"SLBL";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_BYTES: u64 = 4 + 4 + 4 + 4 + 4 + 8;

/// Records are stored at binary32 precision; `push` rounds on insert so the
/// in-memory dataset always equals what a save/load round trip returns.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoDataset {
    frames: usize,
    dim: usize,
    class_count: usize,
    records: Vec<(u32, LatentVideo)>,
}

impl VideoDataset {
    pub fn new(frames: usize, dim: usize, class_count: usize) -> Self {
        Self {
            frames,
            dim,
            class_count,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, class: u32, video: LatentVideo) -> Result<()> {
        if video.shape() != (self.frames, self.dim) {
            return Err(GvdError::dimension(
                "dataset record",
                format!("{}x{}", self.frames, self.dim),
                format!("{}x{}", video.frames(), video.dim()),
            ));
        }
        if class as usize >= self.class_count {
            return Err(GvdError::Precondition(format!(
                "class id {class} out of range for {} classes",
                self.class_count
            )));
        }
        self.records.push((class, video.to_f32_precision()));
        Ok(())
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
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[(u32, LatentVideo)] {
        &self.records
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|(c, _)| *c as usize).collect()
    }

    /// Videos of one class in dataset order.
    pub fn class_videos(&self, class: u32) -> Vec<&LatentVideo> {
        self.records
            .iter()
            .filter(|(c, _)| *c == class)
            .map(|(_, v)| v)
            .collect()
    }

    /// Flattened latents of one class, frame-major.
    pub fn class_flat(&self, class: u32) -> Vec<Vec<f64>> {
        self.class_videos(class)
            .into_iter()
            .map(|v| v.as_slice().to_vec())
            .collect()
    }

    pub fn flat_features(&self) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .map(|(_, v)| v.as_slice().to_vec())
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            frames: self.frames,
            dim: self.dim,
            class_count: self.class_count,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// File size in bytes for `records` records without a soft-label block.
    pub fn encoded_len(frames: usize, dim: usize, records: usize) -> u64 {
        HEADER_BYTES + records as u64 * (4 + 4 * (frames * dim) as u64)
    }
}

/// A distilled dataset with optional per-record soft labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DistilledDataset {
    pub videos: VideoDataset,
    pub soft_labels: Option<Vec<Vec<f64>>>,
}

impl DistilledDataset {
    pub fn hard(videos: VideoDataset) -> Self {
        Self {
            videos,
            soft_labels: None,
        }
    }

    /// Attaches soft labels, rounded to the stored binary32 precision.
    pub fn with_soft_labels(videos: VideoDataset, labels: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != videos.len() {
            return Err(GvdError::dimension("soft labels", videos.len(), labels.len()));
        }
        if let Some(row) = labels.iter().find(|r| r.len() != videos.class_count()) {
            return Err(GvdError::dimension(
                "soft label row",
                videos.class_count(),
                row.len(),
            ));
        }
        let labels = labels
            .into_iter()
            .map(|r| r.into_iter().map(|p| f64::from(p as f32)).collect())
            .collect();
        Ok(Self {
            videos,
            soft_labels: Some(labels),
        })
    }
}

pub fn write_dataset<W: Write>(w: &mut W, d: &DistilledDataset) -> Result<()> {
    let v = &d.videos;
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(v.frames as u32).to_le_bytes())?;
    w.write_all(&(v.dim as u32).to_le_bytes())?;
    w.write_all(&(v.class_count as u32).to_le_bytes())?;
    w.write_all(&(v.records.len() as u64).to_le_bytes())?;
    for (class, video) in &v.records {
        w.write_all(&class.to_le_bytes())?;
        for &x in video.as_slice() {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    if let Some(labels) = &d.soft_labels {
        w.write_all(&SOFT_LABEL_MAGIC)?;
        w.write_all(&(v.class_count as u32).to_le_bytes())?;
        for row in labels {
            for &p in row {
                w.write_all(&(p as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        let mut filled = 0;
        while filled < N {
            let n = self.inner.read(&mut buf[filled..])?;
            if n == 0 {
                return Err(GvdError::Format {
                    offset: self.offset + filled as u64,
                    reason: format!("truncated while reading {what}"),
                });
            }
            filled += n;
        }
        self.offset += N as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes::<4>(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes::<8>(what)?))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes::<4>(what)?))
    }

    /// Returns `None` on a clean end of stream.
    fn optional_magic(&mut self) -> Result<Option<[u8; 4]>> {
        let mut buf = [0u8; 4];
        let mut filled = 0;
        while filled < 4 {
            let n = self.inner.read(&mut buf[filled..])?;
            if n == 0 {
                if filled == 0 {
                    return Ok(None);
                }
                return Err(GvdError::Format {
                    offset: self.offset + filled as u64,
                    reason: "truncated trailing block magic".into(),
                });
            }
            filled += n;
        }
        self.offset += 4;
        Ok(Some(buf))
    }
}

pub fn read_dataset<R: Read>(r: R) -> Result<DistilledDataset> {
    let mut cur = Cursor { inner: r, offset: 0 };
    let magic = cur.bytes::<4>("magic")?;
    if magic != MAGIC {
        return Err(GvdError::Format {
            offset: 0,
            reason: format!("bad magic {magic:02x?}, expected \"GVDS\""),
        });
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(GvdError::Format {
            offset: 4,
            reason: format!("unsupported version {version}, expected {FORMAT_VERSION}"),
        });
    }
    let frames = cur.u32("frames")? as usize;
    let dim = cur.u32("dim")? as usize;
    let class_count = cur.u32("class_count")? as usize;
    let record_count = cur.u64("record_count")?;
    if frames == 0 || dim == 0 {
        return Err(GvdError::Format {
            offset: 8,
            reason: format!("degenerate shape {frames}x{dim}"),
        });
    }
    let mut ds = VideoDataset::new(frames, dim, class_count);
    let n = frames * dim;
    for _ in 0..record_count {
        let at = cur.offset;
        let class = cur.u32("class id")?;
        if class as usize >= class_count {
            return Err(GvdError::Format {
                offset: at,
                reason: format!("class id {class} >= class_count {class_count}"),
            });
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let at = cur.offset;
            let x = cur.f32("latent value")?;
            if !x.is_finite() {
                return Err(GvdError::Format {
                    offset: at,
                    reason: "non-finite latent value".into(),
                });
            }
            data.push(f64::from(x));
        }
        ds.records
            .push((class, LatentVideo::from_parts(frames, dim, data)));
    }
    let soft_labels = match cur.optional_magic()? {
        None => None,
        Some(m) if m == SOFT_LABEL_MAGIC => {
            let at = cur.offset;
            let k = cur.u32("soft-label class_count")? as usize;
            if k != class_count {
                return Err(GvdError::Format {
                    offset: at,
                    reason: format!("soft-label class_count {k} != header {class_count}"),
                });
            }
            let mut rows = Vec::with_capacity(record_count as usize);
            for _ in 0..record_count {
                let mut row = Vec::with_capacity(k);
                for _ in 0..k {
                    row.push(f64::from(cur.f32("soft label")?));
                }
                rows.push(row);
            }
            if cur.optional_magic()?.is_some() {
                return Err(GvdError::Format {
                    offset: cur.offset - 4,
                    reason: "trailing bytes after soft-label block".into(),
                });
            }
            Some(rows)
        }
        Some(m) => {
            return Err(GvdError::Format {
                offset: cur.offset - 4,
                reason: format!("unknown trailing block magic {m:02x?}"),
            })
        }
    };
    Ok(DistilledDataset {
        videos: ds,
        soft_labels,
    })
}

pub fn save_distilled(d: &DistilledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, d)?;
    w.flush()?;
    Ok(())
}

pub fn load_distilled(path: impl AsRef<Path>) -> Result<DistilledDataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn save_dataset(d: &VideoDataset, path: impl AsRef<Path>) -> Result<()> {
    save_distilled(&DistilledDataset::hard(d.clone()), path)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<VideoDataset> {
    Ok(load_distilled(path)?.videos)
}
