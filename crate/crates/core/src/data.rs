//! Synthetic datasets, Dirichlet non-iid client partitioning and IDX loading.

use std::io::{BufRead, Write};
use std::path::Path;

use rand_distr::{Distribution, Gamma};

use crate::error::{invalid, FslError, Result};
use crate::matrix::Matrix;
use crate::prng::RngStream;

/// Fraction of each client's shard used for training.
pub const TRAIN_FRACTION: f64 = 0.8;
/// Shards smaller than this trigger a re-roll of the whole partition.
pub const MIN_SHARD: usize = 5;
pub const MAX_REROLLS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(FslError::ShapeMismatch {
                expected: format!("{} labels", features.rows()),
                actual: format!("{} labels", labels.len()),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(FslError::LabelOutOfRange { label, num_classes });
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// CSV with header `f0,..,f{d-1},label`. Floats use shortest round-trip form.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (0..self.dims())
            .map(|j| format!("f{j}"))
            .chain(std::iter::once("label".to_string()))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (i, &label) in self.labels.iter().enumerate() {
            let row: Vec<String> = self.features.row(i).iter().map(|x| x.to_string()).collect();
            writeln!(w, "{},{label}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, num_classes: usize) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| invalid("csv", "missing header"))??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.last() != Some(&"label") {
            return Err(invalid("csv", "last column must be `label`"));
        }
        let dims = cols.len() - 1;
        for (j, c) in cols[..dims].iter().enumerate() {
            if *c != format!("f{j}") {
                return Err(invalid("csv", format!("unexpected column `{c}`")));
            }
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dims + 1 {
                return Err(invalid("csv", format!("row has {} fields", fields.len())));
            }
            for f in &fields[..dims] {
                data.push(f.parse::<f32>().map_err(|e| invalid("csv", e.to_string()))?);
            }
            labels.push(
                fields[dims]
                    .parse::<usize>()
                    .map_err(|e| invalid("csv", e.to_string()))?,
            );
        }
        Dataset::new(Matrix::from_vec(labels.len(), dims, data)?, labels, num_classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobConfig {
    pub num_classes: usize,
    pub dims: usize,
    pub samples_per_class: usize,
    pub cluster_std: f64,
    /// Norm of each class center.
    pub separation: f64,
}

impl BlobConfig {
    /// Centers at `4 * cluster_std` from the origin.
    pub fn new(num_classes: usize, dims: usize, samples_per_class: usize, cluster_std: f64) -> Self {
        Self {
            num_classes,
            dims,
            samples_per_class,
            cluster_std,
            separation: 4.0 * cluster_std,
        }
    }
}

/// Gaussian blobs. Class `c` is centered at a random unit direction scaled by
/// `separation`; samples are laid out class by class.
pub fn gen_blobs(cfg: &BlobConfig, rng: &mut RngStream) -> Result<(Dataset, Matrix)> {
    if cfg.num_classes == 0 || cfg.dims == 0 || cfg.samples_per_class == 0 {
        return Err(invalid("blobs", "class count, dims and samples per class must be positive"));
    }
    if cfg.cluster_std.is_nan() || cfg.cluster_std < 0.0 || cfg.separation.is_nan() || cfg.separation < 0.0 {
        return Err(invalid("blobs", "cluster_std and separation must be non-negative"));
    }
    let mut centers = Matrix::zeros(cfg.num_classes, cfg.dims);
    for c in 0..cfg.num_classes {
        let mut dir: Vec<f64> = (0..cfg.dims).map(|_| rng.normal()).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            dir[c % cfg.dims] = 1.0;
        } else {
            dir.iter_mut().for_each(|x| *x /= norm);
        }
        for (o, d) in centers.row_mut(c).iter_mut().zip(&dir) {
            *o = (d * cfg.separation) as f32;
        }
    }
    let total = cfg.num_classes * cfg.samples_per_class;
    let mut data = Vec::with_capacity(total * cfg.dims);
    let mut labels = Vec::with_capacity(total);
    for c in 0..cfg.num_classes {
        for _ in 0..cfg.samples_per_class {
            for &m in centers.row(c) {
                let noise = if cfg.cluster_std > 0.0 {
                    rng.normal() * cfg.cluster_std
                } else {
                    0.0
                };
                data.push((f64::from(m) + noise) as f32);
            }
            labels.push(c);
        }
    }
    let ds = Dataset::new(Matrix::from_vec(total, cfg.dims, data)?, labels, cfg.num_classes)?;
    Ok((ds, centers))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientShard {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientShards {
    pub clients: Vec<ClientShard>,
    pub rerolls: usize,
    /// Set when some client still holds fewer than [`MIN_SHARD`] samples
    /// after the re-roll budget ran out.
    pub undersized: bool,
}

fn dirichlet(n: usize, alpha: f64, rng: &mut RngStream) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter().map(|d| d / sum).collect()
    } else {
        vec![1.0 / n as f64; n]
    }
}

/// Integer counts summing to `total`, proportional to `props`. Leftover units
/// go to the largest fractional parts, lower index first on ties.
pub fn largest_remainder(props: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn partition_once(
    labels: &[usize],
    num_classes: usize,
    clients: usize,
    alpha: f64,
    rng: &mut RngStream,
) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut shards = vec![Vec::new(); clients];
    for mut idx in by_class {
        rng.shuffle(&mut idx);
        let props = dirichlet(clients, alpha, rng);
        let counts = largest_remainder(&props, idx.len());
        let mut start = 0;
        for (shard, count) in shards.iter_mut().zip(counts) {
            shard.extend_from_slice(&idx[start..start + count]);
            start += count;
        }
    }
    shards
}

/// Splits samples across `clients` with per-class Dirichlet(`alpha`)
/// proportions, then splits each shard 80/20 into train and test.
pub fn dirichlet_partition(
    labels: &[usize],
    num_classes: usize,
    clients: usize,
    alpha: f64,
    rng: &mut RngStream,
) -> Result<ClientShards> {
    if clients == 0 {
        return Err(invalid("clients", "must be at least 1"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid("dirichlet_alpha", "must be positive"));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(FslError::LabelOutOfRange { label, num_classes });
    }
    let mut rerolls = 0;
    let mut shards = partition_once(labels, num_classes, clients, alpha, rng);
    let min_needed = MIN_SHARD.min(labels.len() / clients);
    while shards.iter().any(|s| s.len() < min_needed) && rerolls < MAX_REROLLS {
        rerolls += 1;
        shards = partition_once(labels, num_classes, clients, alpha, rng);
    }
    let undersized = shards.iter().any(|s| s.len() < MIN_SHARD);
    let clients = shards
        .into_iter()
        .enumerate()
        .map(|(c, mut s)| {
            s.sort_unstable();
            let mut local = rng.fork(&[c as u64]);
            local.shuffle(&mut s);
            let n_train = (TRAIN_FRACTION * s.len() as f64).round() as usize;
            let test = s.split_off(n_train);
            ClientShard { train: s, test }
        })
        .collect();
    Ok(ClientShards {
        clients,
        rerolls,
        undersized,
    })
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| FslError::IdxFormat("truncated header".into()))
}

/// Parses an IDX image file into `(count, rows * cols)` pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Matrix> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(FslError::IdxFormat(format!(
            "expected image magic {IDX_IMAGES_MAGIC:#010x}, found {magic:#010x}"
        )));
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let pixels = count * rows * cols;
    let body = bytes
        .get(16..16 + pixels)
        .ok_or_else(|| FslError::IdxFormat(format!("expected {pixels} pixel bytes")))?;
    let data = body.iter().map(|&p| f32::from(p) / 255.0).collect();
    Matrix::from_vec(count, rows * cols, data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(FslError::IdxFormat(format!(
            "expected label magic {IDX_LABELS_MAGIC:#010x}, found {magic:#010x}"
        )));
    }
    let count = read_u32(bytes, 4)? as usize;
    let body = bytes
        .get(8..8 + count)
        .ok_or_else(|| FslError::IdxFormat(format!("expected {count} label bytes")))?;
    Ok(body.iter().map(|&l| usize::from(l)).collect())
}

/// Loads an IDX image/label file pair. The class count is `max(label) + 1`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let features = parse_idx_images(&std::fs::read(images)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels)?)?;
    if features.rows() != labels.len() {
        return Err(FslError::IdxFormat(format!(
            "{} images but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, num_classes)
}
