//! Synthetic student-teacher regression data and IDX-format image dataset
//! ingestion, with deterministic splitting and minibatching.

use crate::error::{Error, Result};
use crate::network::{forward_pass, ActivationKind, NetworkParams};
use crate::numerics::Matrix;
use crate::testutil::glorot_normal;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Regression,
    Classification,
}

/// Row-per-sample inputs and targets. Classification targets are one-hot.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Matrix,
    pub kind: DatasetKind,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn target(&self, i: usize) -> &[f64] {
        self.targets.row(i)
    }

    fn from_rows(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, kind: DatasetKind) -> Result<Self> {
        Ok(Self {
            inputs: Matrix::from_rows(&inputs)?,
            targets: Matrix::from_rows(&targets)?,
            kind,
        })
    }
}

/// Generator network for synthetic regression data. The teacher must be
/// strictly larger than the student it generates data for, in depth or
/// width, so a lucky initialization cannot trivialize the task.
#[derive(Debug, Clone)]
pub struct TeacherSpec {
    /// `[n_0, hidden..., n_L]`.
    pub layer_sizes: Vec<usize>,
    pub seed: u64,
}

impl TeacherSpec {
    pub fn build(&self) -> NetworkParams {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let l = self.layer_sizes.len() - 1;
        let layers = (0..l)
            .map(|i| crate::network::Layer {
                weight: glorot_normal(&mut rng, self.layer_sizes[i + 1], self.layer_sizes[i]),
                bias: vec![0.0; self.layer_sizes[i + 1]],
                activation: if i + 1 == l { ActivationKind::Linear } else { ActivationKind::Tanh },
            })
            .collect();
        let n_l = *self.layer_sizes.last().unwrap();
        let feedback = (0..l)
            .map(|i| Matrix::zeros(self.layer_sizes[i + 1], n_l))
            .collect();
        NetworkParams { layers, feedback }
    }
}

/// Samples inputs uniformly on [-1, 1] per entry and labels them with the
/// teacher's feedforward outputs. Deterministic for a fixed seed.
pub fn generate_student_teacher(spec: &TeacherSpec, n_train: usize, n_test: usize) -> Result<(Dataset, Dataset)> {
    let teacher = spec.build();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let mut make = |n: usize| -> Result<Dataset> {
        let mut inputs = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..spec.layer_sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = forward_pass(&teacher, &x)?.output().to_vec();
            inputs.push(x);
            targets.push(y);
        }
        Dataset::from_rows(inputs, targets, DatasetKind::Regression)
    };
    Ok((make(n_train)?, make(n_test)?))
}

/// Deterministic 10-class 28x28 image set: per-class mixtures of Gaussian
/// bumps with random shifts and pixel noise, quantized to byte levels so
/// an IDX round trip is exact. A stand-in classification task with the
/// same geometry and container format as the common digit benchmarks.
pub fn generate_synthetic_images(n: usize, seed: u64) -> Dataset {
    const SIDE: usize = 28;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prototypes = Vec::with_capacity(NUM_CLASSES);
    for _ in 0..NUM_CLASSES {
        let bumps: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(7.0..21.0),
                    rng.random_range(7.0..21.0),
                    rng.random_range(2.5..5.5),
                    rng.random_range(0.45..0.85),
                )
            })
            .collect();
        let proto: Vec<f64> = (0..SIDE * SIDE)
            .map(|p| {
                let (x, y) = ((p % SIDE) as f64, (p / SIDE) as f64);
                bumps
                    .iter()
                    .map(|(cx, cy, w, a)| {
                        let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                        a * (-d2 / (2.0 * w * w)).exp()
                    })
                    .sum::<f64>()
                    .min(1.0)
            })
            .collect();
        prototypes.push(proto);
    }
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.random_range(0..NUM_CLASSES);
        let dx = rng.random_range(-5i64..=5);
        let dy = rng.random_range(-5i64..=5);
        let pixels: Vec<f64> = (0..SIDE * SIDE)
            .map(|p| {
                let (x, y) = ((p % SIDE) as i64 - dx, (p / SIDE) as i64 - dy);
                let base = if (0..SIDE as i64).contains(&x) && (0..SIDE as i64).contains(&y) {
                    prototypes[class][y as usize * SIDE + x as usize]
                } else {
                    0.0
                };
                let noisy: f64 = base + rng.random_range(-0.3..0.3);
                (noisy.clamp(0.0, 1.0) * 255.0).round() / 255.0
            })
            .collect();
        let mut one_hot = vec![0.0; NUM_CLASSES];
        one_hot[class] = 1.0;
        inputs.push(pixels);
        targets.push(one_hot);
    }
    Dataset::from_rows(inputs, targets, DatasetKind::Classification).expect("consistent rows")
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const NUM_CLASSES: usize = 10;

fn read_u32_be(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    let slice = bytes.get(offset..offset + 4).ok_or_else(|| Error::Parse {
        path: path.into(),
        offset: offset as u64,
        details: "truncated header".into(),
    })?;
    Ok(u32::from_be_bytes(slice.try_into().expect("4 bytes")))
}

/// Loads an IDX image/label pair into a classification dataset: pixels
/// scaled to [0, 1], images flattened row-major, labels one-hot over 10
/// classes. `limit` caps the number of samples (0 loads nothing).
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: usize) -> Result<Dataset> {
    let img_name = images_path.display().to_string();
    let lbl_name = labels_path.display().to_string();
    let img_bytes = fs::read(images_path)?;
    let lbl_bytes = fs::read(labels_path)?;

    let magic = read_u32_be(&img_bytes, 0, &img_name)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            path: img_name,
            offset: 0,
            details: format!("bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        });
    }
    let count = read_u32_be(&img_bytes, 4, &img_name)? as usize;
    let rows = read_u32_be(&img_bytes, 8, &img_name)? as usize;
    let cols = read_u32_be(&img_bytes, 12, &img_name)? as usize;
    let pixel_count = rows * cols;
    let expected = 16 + count * pixel_count;
    if img_bytes.len() < expected {
        return Err(Error::Parse {
            path: img_name,
            offset: img_bytes.len() as u64,
            details: format!("truncated pixel data: need {expected} bytes, have {}", img_bytes.len()),
        });
    }

    let lbl_magic = read_u32_be(&lbl_bytes, 0, &lbl_name)?;
    if lbl_magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse {
            path: lbl_name,
            offset: 0,
            details: format!("bad label magic 0x{lbl_magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        });
    }
    let lbl_count = read_u32_be(&lbl_bytes, 4, &lbl_name)? as usize;
    if lbl_count != count {
        return Err(Error::Parse {
            path: lbl_name,
            offset: 4,
            details: format!("{lbl_count} labels for {count} images"),
        });
    }
    if lbl_bytes.len() < 8 + count {
        return Err(Error::Parse {
            path: lbl_name,
            offset: lbl_bytes.len() as u64,
            details: "truncated label data".into(),
        });
    }

    let take = count.min(limit);
    let mut inputs = Vec::with_capacity(take);
    let mut targets = Vec::with_capacity(take);
    for i in 0..take {
        let start = 16 + i * pixel_count;
        let pixels: Vec<f64> = img_bytes[start..start + pixel_count]
            .iter()
            .map(|&p| f64::from(p) / 255.0)
            .collect();
        let label = lbl_bytes[8 + i] as usize;
        if label >= NUM_CLASSES {
            return Err(Error::Parse {
                path: lbl_name,
                offset: (8 + i) as u64,
                details: format!("label {label} out of range"),
            });
        }
        let mut one_hot = vec![0.0; NUM_CLASSES];
        one_hot[label] = 1.0;
        inputs.push(pixels);
        targets.push(one_hot);
    }
    Dataset::from_rows(inputs, targets, DatasetKind::Classification)
}

/// Writes a classification dataset as an IDX image/label pair with the
/// given image geometry; inputs are rescaled back to bytes.
pub fn write_idx(ds: &Dataset, rows: usize, cols: usize, images_path: &Path, labels_path: &Path) -> Result<()> {
    if ds.kind != DatasetKind::Classification {
        return Err(Error::Config("write_idx needs a classification dataset".into()));
    }
    if rows * cols != ds.inputs.cols() {
        return Err(Error::Shape {
            op: "write_idx",
            details: format!("{rows}x{cols} geometry vs {} pixels", ds.inputs.cols()),
        });
    }
    let n = ds.len();
    let mut img = Vec::with_capacity(16 + n * rows * cols);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    let mut lbl = Vec::with_capacity(8 + n);
    lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(n as u32).to_be_bytes());
    for i in 0..n {
        for &p in ds.input(i) {
            img.push((p * 255.0).round().clamp(0.0, 255.0) as u8);
        }
        let class = ds
            .target(i)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        lbl.push(class as u8);
    }
    fs::write(images_path, img)?;
    fs::write(labels_path, lbl)?;
    Ok(())
}

/// Removes the last `val_count` samples as a validation set.
pub fn split_validation(ds: &Dataset, val_count: usize) -> Result<(Dataset, Dataset)> {
    if val_count > ds.len() {
        return Err(Error::Config(format!(
            "validation split of {} from {} samples",
            val_count,
            ds.len()
        )));
    }
    let train_n = ds.len() - val_count;
    let take = |from: usize, to: usize, kind| -> Result<Dataset> {
        let inputs: Vec<Vec<f64>> = (from..to).map(|i| ds.input(i).to_vec()).collect();
        let targets: Vec<Vec<f64>> = (from..to).map(|i| ds.target(i).to_vec()).collect();
        Dataset::from_rows(inputs, targets, kind)
    };
    Ok((take(0, train_n, ds.kind)?, take(train_n, ds.len(), ds.kind)?))
}

/// Index batches for one epoch: a seeded shuffle partitioned into
/// `batch_size` chunks, keeping the final partial batch.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size > 0);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    // Fisher-Yates with the per-epoch stream.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
