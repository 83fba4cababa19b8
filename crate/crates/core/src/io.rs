//! Dataset and checkpoint container format, normalization, splitting.
//!
//! File layout (all little-endian):
//!
//! ```text
//! magic   "MDPT"                4 bytes
//! version u32                   4 bytes
//! dtype   u8 (0 = f32 LE)       1 byte
//! rank    u8                    1 byte
//! extents u64 x rank            8 bytes each
//! payload f32 LE row-major      4 * product(extents) bytes
//! ```
//!
//! A 2x3 f32 array therefore carries 4 + 4 + 1 + 1 + 16 = 26 header bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::DataError;
use crate::pde::Trajectory;
use crate::rng;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;

pub const MAGIC: [u8; 4] = *b"MDPT";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32_LE: u8 = 0;

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn bad_file(path: &Path, reason: impl Into<String>) -> DataError {
    DataError::BadFile {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Serialize one tensor to a container file.
pub fn write_tensor_file(path: &Path, shape: &[usize], data: &[f32]) -> Result<(), DataError> {
    let n: usize = shape.iter().product();
    assert_eq!(n, data.len(), "shape/payload mismatch");
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&MAGIC).map_err(|e| io_err(path, e))?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())
        .map_err(|e| io_err(path, e))?;
    w.write_all(&[DTYPE_F32_LE]).map_err(|e| io_err(path, e))?;
    w.write_all(&[shape.len() as u8]).map_err(|e| io_err(path, e))?;
    for &ext in shape {
        w.write_all(&(ext as u64).to_le_bytes())
            .map_err(|e| io_err(path, e))?;
    }
    for &v in data {
        w.write_all(&v.to_le_bytes()).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Read a container file back into (shape, payload).
pub fn read_tensor_file(path: &Path) -> Result<(Vec<usize>, Vec<f32>), DataError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if magic != MAGIC {
        return Err(bad_file(path, format!("bad magic {magic:?}")));
    }
    let mut v4 = [0u8; 4];
    r.read_exact(&mut v4).map_err(|e| io_err(path, e))?;
    let version = u32::from_le_bytes(v4);
    if version != FORMAT_VERSION {
        return Err(bad_file(path, format!("unsupported version {version}")));
    }
    let mut b1 = [0u8; 1];
    r.read_exact(&mut b1).map_err(|e| io_err(path, e))?;
    if b1[0] != DTYPE_F32_LE {
        return Err(bad_file(path, format!("unsupported dtype code {}", b1[0])));
    }
    r.read_exact(&mut b1).map_err(|e| io_err(path, e))?;
    let rank = b1[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut b8 = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut b8).map_err(|e| io_err(path, e))?;
        shape.push(u64::from_le_bytes(b8) as usize);
    }
    let n: usize = shape.iter().product();
    let mut payload = vec![0.0f32; n];
    for slot in payload.iter_mut() {
        r.read_exact(&mut v4).map_err(|e| io_err(path, e))?;
        *slot = f32::from_le_bytes(v4);
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(bad_file(path, "trailing bytes after payload")),
        Err(e) => return Err(io_err(path, e)),
    }
    Ok((shape, payload))
}

/// In-memory dataset of homogeneous trajectories, shape `[n, t, c, h, w]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub shape: [usize; 5],
    pub data: Vec<f32>,
}

impl Dataset {
    pub fn n_traj(&self) -> usize {
        self.shape[0]
    }

    pub fn n_steps(&self) -> usize {
        self.shape[1]
    }

    pub fn snapshot_shape(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    /// Copy out one `[c, h, w]` snapshot.
    pub fn snapshot(&self, traj: usize, t: usize) -> Tensor {
        let [_, _, c, h, w] = self.shape;
        let stride = c * h * w;
        let off = (traj * self.shape[1] + t) * stride;
        Tensor::new(&[c, h, w], self.data[off..off + stride].to_vec())
            .expect("dataset slice shape")
    }

    pub fn from_trajectories(trajs: &[Trajectory]) -> Result<Self, DataError> {
        if trajs.is_empty() {
            return Err(DataError::Empty);
        }
        let first = trajs[0].states[0].shape().to_vec();
        let t_len = trajs[0].states.len();
        let mut data = Vec::new();
        for traj in trajs {
            if traj.states.len() != t_len {
                return Err(DataError::HeterogeneousShapes(
                    vec![t_len],
                    vec![traj.states.len()],
                ));
            }
            for s in &traj.states {
                if s.shape() != first.as_slice() {
                    return Err(DataError::HeterogeneousShapes(
                        first.clone(),
                        s.shape().to_vec(),
                    ));
                }
                data.extend_from_slice(s.data());
            }
        }
        Ok(Self {
            shape: [trajs.len(), t_len, first[0], first[1], first[2]],
            data,
        })
    }

    /// Restrict to a subset of trajectory indices.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let [_, t, c, h, w] = self.shape;
        let stride = t * c * h * w;
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        Self {
            shape: [indices.len(), t, c, h, w],
            data,
        }
    }
}

/// Write trajectories as one `[n, t, c, h, w]` container plus a text manifest.
pub fn write_dataset(
    trajs: &[Trajectory],
    path: &Path,
    manifest: &str,
) -> Result<Dataset, DataError> {
    let ds = Dataset::from_trajectories(trajs)?;
    write_tensor_file(path, &ds.shape, &ds.data)?;
    let mpath = manifest_path(path);
    std::fs::write(&mpath, manifest).map_err(|e| io_err(&mpath, e))?;
    Ok(ds)
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DataError> {
    let (shape, data) = read_tensor_file(path)?;
    if shape.len() != 5 {
        return Err(bad_file(
            path,
            format!("expected rank-5 dataset, got rank {}", shape.len()),
        ));
    }
    Ok(Dataset {
        shape: [shape[0], shape[1], shape[2], shape[3], shape[4]],
        data,
    })
}

/// Sidecar manifest path: `<stem>.manifest.txt` next to the container.
pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    path.with_file_name(format!("{stem}.manifest.txt"))
}

/// Per-channel min/max over a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
}

impl NormStats {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let [n, t, c, h, w] = ds.shape;
        let hw = h * w;
        let mut min = vec![f32::INFINITY; c];
        let mut max = vec![f32::NEG_INFINITY; c];
        for s in 0..n * t {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for &v in &ds.data[base..base + hw] {
                    min[ch] = min[ch].min(v);
                    max[ch] = max[ch].max(v);
                }
            }
        }
        Self { min, max }
    }
}

/// Min-max normalize per channel. With `stats` given the provided statistics
/// are reused (validation/test path); otherwise statistics are computed from
/// the input and returned. Constant channels map to 0.5.
pub fn minmax_normalize(ds: &mut Dataset, stats: Option<&NormStats>) -> NormStats {
    let stats = match stats {
        Some(s) => s.clone(),
        None => NormStats::from_dataset(ds),
    };
    let [n, t, c, h, w] = ds.shape;
    let hw = h * w;
    for s in 0..n * t {
        for ch in 0..c {
            let (lo, hi) = (stats.min[ch], stats.max[ch]);
            let base = (s * c + ch) * hw;
            if hi > lo {
                let inv = 1.0 / (hi - lo);
                for v in &mut ds.data[base..base + hw] {
                    *v = (*v - lo) * inv;
                }
            } else {
                for v in &mut ds.data[base..base + hw] {
                    *v = 0.5;
                }
            }
        }
    }
    stats
}

/// Invert [`minmax_normalize`].
pub fn denormalize(ds: &mut Dataset, stats: &NormStats) {
    let [n, t, c, h, w] = ds.shape;
    let hw = h * w;
    for s in 0..n * t {
        for ch in 0..c {
            let (lo, hi) = (stats.min[ch], stats.max[ch]);
            let base = (s * c + ch) * hw;
            if hi > lo {
                for v in &mut ds.data[base..base + hw] {
                    *v = *v * (hi - lo) + lo;
                }
            } else {
                for v in &mut ds.data[base..base + hw] {
                    *v = lo;
                }
            }
        }
    }
}

/// Seeded shuffle then split at `floor(0.8 n)`: disjoint and exhaustive.
pub fn split_train_valid(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if n < 5 {
        return Err(DataError::TooFewTrajectories { min: 5, got: n });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = rng::substream(seed, 0x53_50_4c_49_54); // "SPLIT"
    indices.shuffle(&mut rng);
    let cut = (n as f64 * 0.8).floor() as usize;
    let valid = indices.split_off(cut);
    Ok((indices, valid))
}
