//! Image datasets: IDX and CIFAR binary loaders, variance scaling, synthetic
//! blobs and seeded splits. Pixels live in `[-1, 1]` via `x / 127.5 - 1`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid_arg, shape_err, Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `[N, C, H, W]`
    pub images: Tensor,
    pub labels: Option<Vec<usize>>,
}

/// `u8` pixel to `[-1, 1]`.
pub fn normalize_pixel(p: u8) -> f64 {
    p as f64 / 127.5 - 1.0
}

/// Inverse of [`normalize_pixel`] for values in `[-1, 1]`: `round((x + 1) * 127.5)`.
pub fn denormalize_pixel(x: f64) -> u8 {
    ((x.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Tensor, labels: Option<Vec<usize>>) -> Result<Dataset> {
        let name = name.into();
        let [n, ..] = images.dims4().map_err(|e| shape_err!("dataset {name:?}: {e}"))?;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::CountMismatch { images: n, labels: l.len() });
            }
        }
        if let Some(v) = images.data().iter().find(|v| !(v.is_finite() && (-1.0..=1.0).contains(*v))) {
            return Err(invalid_arg!("dataset {name:?} has pixel {v} outside [-1, 1]"));
        }
        Ok(Dataset { name, images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[C, H, W]`
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Sample `i` as `[1, C, H, W]`.
    pub fn image(&self, i: usize) -> Tensor {
        self.images.sample(i)
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let per: usize = self.sample_shape().iter().product();
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(invalid_arg!("index {i} out of range for dataset {:?} of {}", self.name, self.len()));
            }
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let [c, h, w] = self.sample_shape();
        Tensor::new(vec![indices.len(), c, h, w], data)
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Result<Dataset> {
        let labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        Ok(Dataset { name: name.into(), images: self.batch(indices)?, labels })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Dataset {
        self.name = name.into();
        self
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Truncated(format!("{what} header ends at byte {}", bytes.len())))
}

fn check_payload(bytes: &[u8], start: usize, expected: usize, what: &str) -> Result<()> {
    let have = bytes.len() - start;
    if have < expected {
        return Err(Error::Truncated(format!("{what} payload has {have} bytes, expected {expected}")));
    }
    if have > expected {
        return Err(Error::Malformed(format!("{what} has {} trailing bytes", have - expected)));
    }
    Ok(())
}

/// Parses an IDX image file (`0x00000803`) into `[N, 1, rows, cols]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let magic = be_u32(bytes, 0, "IDX image")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic { expected: IDX_IMAGES_MAGIC, found: magic });
    }
    let n = be_u32(bytes, 4, "IDX image")? as usize;
    let rows = be_u32(bytes, 8, "IDX image")? as usize;
    let cols = be_u32(bytes, 12, "IDX image")? as usize;
    check_payload(bytes, 16, n * rows * cols, "IDX image")?;
    Tensor::new(vec![n, 1, rows, cols], bytes[16..].iter().map(|&p| normalize_pixel(p)).collect())
}

/// Parses an IDX label file (`0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, "IDX label")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic { expected: IDX_LABELS_MAGIC, found: magic });
    }
    let n = be_u32(bytes, 4, "IDX label")? as usize;
    check_payload(bytes, 8, n, "IDX label")?;
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: Option<&Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let images = parse_idx_images(&read(images_path)?)?;
    let labels = labels_path.map(|p| read(p).and_then(|b| parse_idx_labels(&b))).transpose()?;
    Dataset::new(file_stem(images_path), images, labels)
}

/// Reads CIFAR binary batches: 3073-byte records of one label byte and three
/// channel-major 32x32 planes.
pub fn parse_cifar_binary(bytes: &[u8]) -> Result<(Vec<f64>, Vec<usize>)> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Truncated(format!(
            "CIFAR batch of {} bytes is not a multiple of {CIFAR_RECORD}",
            bytes.len()
        )));
    }
    let mut pixels = Vec::with_capacity(bytes.len() / CIFAR_RECORD * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    for record in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(record[0] as usize);
        pixels.extend(record[1..].iter().map(|&p| normalize_pixel(p)));
    }
    Ok((pixels, labels))
}

pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let (p, l) = parse_cifar_binary(&read(path.as_ref())?)?;
        pixels.extend(p);
        labels.extend(l);
    }
    let name = paths.first().map(|p| file_stem(p.as_ref())).unwrap_or_default();
    Dataset::new(name, Tensor::new(vec![labels.len(), 3, 32, 32], pixels)?, Some(labels))
}

/// Writes an IDX image file (single-channel datasets only) and, when the
/// dataset is labelled, a label file.
pub fn write_idx(ds: &Dataset, images_path: impl AsRef<Path>, labels_path: Option<&Path>) -> Result<()> {
    let [n, c, h, w] = ds.images.dims4()?;
    if c != 1 {
        return Err(invalid_arg!("IDX images are single-channel; dataset {:?} has {c}", ds.name));
    }
    let mut bytes = Vec::with_capacity(16 + n * h * w);
    for v in [IDX_IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    bytes.extend(ds.images.data().iter().map(|&x| denormalize_pixel(x)));
    let images_path = images_path.as_ref();
    fs::write(images_path, bytes).map_err(|e| Error::io(images_path, e))?;
    if let Some(path) = labels_path {
        let labels = ds.labels.as_ref().ok_or_else(|| invalid_arg!("dataset {:?} has no labels", ds.name))?;
        let mut bytes = Vec::with_capacity(8 + n);
        bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(n as u32).to_be_bytes());
        for &l in labels {
            bytes.push(u8::try_from(l).map_err(|_| invalid_arg!("label {l} does not fit a byte"))?);
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Multiplies every pixel by `factor` in `(0, 1]`.
pub fn variance_scale(ds: &Dataset, factor: f64) -> Result<Dataset> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(invalid_arg!("variance scale factor must lie in (0, 1], got {factor}"));
    }
    Ok(Dataset { name: ds.name.clone(), images: ds.images.scale(factor), labels: ds.labels.clone() })
}

/// Replicates a single-channel dataset to `channels` channels.
pub fn expand_channels(ds: &Dataset, channels: usize) -> Result<Dataset> {
    let [n, c, h, w] = ds.images.dims4()?;
    if c == channels {
        return Ok(ds.clone());
    }
    if c != 1 {
        return Err(shape_err!("cannot expand {c} channels of {:?} to {channels}", ds.name));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * channels * plane);
    for img in ds.images.data().chunks_exact(plane) {
        for _ in 0..channels {
            data.extend_from_slice(img);
        }
    }
    Ok(Dataset { name: ds.name.clone(), images: Tensor::new(vec![n, channels, h, w], data)?, labels: ds.labels.clone() })
}

/// Class templates in `[-0.7, 0.7]` on a zero background: per channel, two
/// to four Gaussian bumps of random sign at seeded positions.
pub fn blob_templates(classes: usize, shape: [usize; 3], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [c, h, w] = shape;
    let scale = h.min(w) as f64;
    (0..classes)
        .map(|_| {
            let mut t = vec![0.0; c * h * w];
            for plane in t.chunks_exact_mut(h * w) {
                let bumps = rng.random_range(2..=4);
                for _ in 0..bumps {
                    let (cy, cx) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
                    let r = scale * rng.random_range(0.12..0.25);
                    let mut amp = rng.random_range(0.6..1.0);
                    if rng.random_bool(0.5) {
                        amp = -amp;
                    }
                    for (i, v) in plane.iter_mut().enumerate() {
                        let (y, x) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
                        let d2 = (y - cy).powi(2) + (x - cx).powi(2);
                        *v += amp * (-d2 / (2.0 * r * r)).exp();
                    }
                }
            }
            t.iter().map(|&v| 0.7 * v.clamp(-1.0, 1.0)).collect()
        })
        .collect()
}

/// `n` samples cycling through `classes` seeded templates, plus Gaussian
/// pixel noise, clipped to `[-1, 1]`.
pub fn synthetic_blobs(n: usize, classes: usize, shape: [usize; 3], noise_std: f64, seed: u64) -> Result<Dataset> {
    if classes == 0 || shape.contains(&0) {
        return Err(invalid_arg!("synthetic blobs need a positive class count and shape"));
    }
    let noise = Normal::new(0.0, noise_std).map_err(|e| invalid_arg!("noise_std {noise_std}: {e}"))?;
    let templates = blob_templates(classes, shape, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut data = Vec::with_capacity(n * templates[0].len());
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes;
        labels.push(y);
        data.extend(templates[y].iter().map(|&t| (t + noise.sample(&mut rng)).clamp(-1.0, 1.0)));
    }
    let [c, h, w] = shape;
    Dataset::new(format!("blobs-{seed}"), Tensor::new(vec![n, c, h, w], data)?, Some(labels))
}

/// Shuffles from `seed` and cuts into parts of `round(f * N)` samples; the
/// last part takes the remainder.
pub fn split(ds: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(invalid_arg!("split fractions must be non-negative: {fractions:?}"));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid_arg!("split fractions must sum to 1: {fractions:?}"));
    }
    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = Vec::with_capacity(fractions.len());
    let mut start = 0;
    for (i, f) in fractions.iter().enumerate() {
        let end = if i + 1 == fractions.len() { n } else { (start + (f * n as f64).round() as usize).min(n) };
        parts.push(ds.subset(format!("{}.{i}", ds.name), &order[start..end])?);
        start = end;
    }
    Ok(parts)
}
