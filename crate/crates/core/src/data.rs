//! Datasets with known mode structure, the MNIST IDX format, and the ways
//! a dataset is split between users.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::SimRng;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Matrix,
    labels: Option<Vec<usize>>,
    mode_centers: Option<Matrix>,
}

impl Dataset {
    pub fn new(samples: Matrix, labels: Option<Vec<usize>>, mode_centers: Option<Matrix>) -> Result<Self> {
        if !samples.is_finite() {
            return Err(Error::Dataset("samples contain non-finite values".into()));
        }
        if let Some(l) = &labels {
            if l.len() != samples.rows() {
                return Err(Error::Dataset(format!(
                    "{} labels for {} samples",
                    l.len(),
                    samples.rows()
                )));
            }
        }
        if let Some(c) = &mode_centers {
            if c.cols() != samples.cols() {
                return Err(Error::Dataset("mode centers do not match sample width".into()));
            }
            if let Some(l) = &labels {
                if let Some(&bad) = l.iter().find(|&&x| x >= c.rows()) {
                    return Err(Error::Dataset(format!("label {bad} has no mode center")));
                }
            }
        }
        Ok(Self {
            samples,
            labels,
            mode_centers,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn mode_centers(&self) -> Option<&Matrix> {
        self.mode_centers.as_ref()
    }

    /// Rows at `indices`, keeping labels and centers.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: self.samples.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            mode_centers: self.mode_centers.clone(),
        }
    }

    /// CSV with columns `x0..x{d-1},label` (label empty when unlabeled).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_samples_csv(&self.samples, self.labels(), out)
    }
}

pub fn write_samples_csv<W: Write>(samples: &Matrix, labels: Option<&[usize]>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..samples.cols()).map(|c| format!("x{c}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (r, row) in samples.iter_rows().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(labels.map(|l| l[r].to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Centers of an `modes`-point ring of radius `radius`, mode `m` at angle `2πm/M`.
pub fn ring_centers(modes: usize, radius: f64) -> Matrix {
    let mut c = Matrix::zeros(modes, 2);
    for m in 0..modes {
        let angle = 2.0 * std::f64::consts::PI * m as f64 / modes as f64;
        c.set(m, 0, radius * libm::cos(angle));
        c.set(m, 1, radius * libm::sin(angle));
    }
    c
}

/// `modes · per_mode` isotropic Gaussian samples around the ring centers,
/// grouped by mode. Labels are mode indices.
pub fn make_ring(modes: usize, radius: f64, sigma: f64, per_mode: usize, seed: u64) -> Result<Dataset> {
    if modes == 0 || per_mode == 0 {
        return Err(Error::Dataset("ring needs at least one mode and one sample per mode".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite() && radius.is_finite()) {
        return Err(Error::Dataset(format!("invalid ring radius {radius} / sigma {sigma}")));
    }
    let centers = ring_centers(modes, radius);
    let mut rng: SimRng = rand::SeedableRng::seed_from_u64(seed);
    let mut samples = Matrix::zeros(modes * per_mode, 2);
    let mut labels = Vec::with_capacity(modes * per_mode);
    for m in 0..modes {
        for i in 0..per_mode {
            let r = m * per_mode + i;
            for c in 0..2 {
                let z: f64 = StandardNormal.sample(&mut rng);
                samples.set(r, c, centers.get(m, c) + sigma * z);
            }
            labels.push(m);
        }
    }
    Dataset::new(samples, Some(labels), Some(centers))
}

fn idx_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Idx {
        offset,
        message: message.into(),
    }
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| idx_error(offset, "truncated header"))
}

/// Parsed IDX image file: `count` images of `rows × cols` unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(idx_error(0, format!("bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")));
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;
    let need = count
        .checked_mul(rows)
        .and_then(|n| n.checked_mul(cols))
        .ok_or_else(|| idx_error(4, "image dimensions overflow"))?;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(idx_error(
            bytes.len(),
            format!("truncated image data: expected {need} bytes after header, found {}", body.len()),
        ));
    }
    if body.len() > need {
        return Err(idx_error(16 + need, "trailing bytes after image data"));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(idx_error(0, format!("bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")));
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(idx_error(
            bytes.len(),
            format!("truncated label data: expected {count} bytes after header, found {}", body.len()),
        ));
    }
    if body.len() > count {
        return Err(idx_error(8 + count, "trailing bytes after label data"));
    }
    Ok(body.to_vec())
}

#[inline]
pub fn pixel_to_unit(p: u8) -> f64 {
    f64::from(p) / 127.5 - 1.0
}

/// Inverse of [`pixel_to_unit`], if `x` is exactly on the pixel grid.
pub fn unit_to_pixel(x: f64) -> Option<u8> {
    let p = ((x + 1.0) * 127.5).round();
    if (0.0..=255.0).contains(&p) && pixel_to_unit(p as u8).to_bits() == x.to_bits() {
        Some(p as u8)
    } else {
        None
    }
}

/// Images become rows of `rows·cols` values scaled to `[-1, 1]` by `p / 127.5 - 1`.
pub fn decode_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let img = parse_idx_images(images)?;
    let lab = parse_idx_labels(labels)?;
    if lab.len() != img.count {
        return Err(Error::Dataset(format!(
            "image/label count mismatch: {} images, {} labels",
            img.count,
            lab.len()
        )));
    }
    let data = img.pixels.iter().map(|&p| pixel_to_unit(p)).collect();
    let samples = Matrix::new(img.count, img.rows * img.cols, data)?;
    Dataset::new(samples, Some(lab.into_iter().map(usize::from).collect()), None)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let read = |p: &Path| -> Result<Vec<u8>> {
        std::fs::read(p).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(p.to_path_buf()),
            _ => Error::Io(e),
        })
    };
    decode_idx(&read(images_path)?, &read(labels_path)?)
}

/// Encodes a labeled dataset whose values lie on the pixel grid as IDX
/// image and label files. `shape` is `(rows, cols)` per image.
pub fn encode_idx(ds: &Dataset, shape: (usize, usize)) -> Result<(Vec<u8>, Vec<u8>)> {
    if shape.0 * shape.1 != ds.dim() {
        return Err(Error::Dataset(format!("image shape {shape:?} does not match width {}", ds.dim())));
    }
    let labels = ds
        .labels()
        .ok_or_else(|| Error::Dataset("IDX export needs labels".into()))?;
    let mut images = Vec::with_capacity(16 + ds.len() * ds.dim());
    for word in [IDX_IMAGES_MAGIC, ds.len() as u32, shape.0 as u32, shape.1 as u32] {
        images.extend_from_slice(&word.to_be_bytes());
    }
    for &x in ds.samples().as_slice() {
        images.push(unit_to_pixel(x).ok_or_else(|| Error::Dataset(format!("value {x} is not a pixel level")))?);
    }
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        lab.push(u8::try_from(l).map_err(|_| Error::Dataset(format!("label {l} exceeds 255")))?);
    }
    Ok((images, lab))
}

pub fn write_idx(ds: &Dataset, shape: (usize, usize), images_path: &Path, labels_path: &Path) -> Result<()> {
    let (images, labels) = encode_idx(ds, shape)?;
    std::fs::write(images_path, images)?;
    std::fs::write(labels_path, labels)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionScheme {
    /// User `u` owns every sample whose label is in `groups[u]`. Groups must be
    /// disjoint; labels in no group are an error unless `allow_unassigned`.
    ByLabel {
        groups: Vec<Vec<usize>>,
        #[serde(default)]
        allow_unassigned: bool,
    },
    /// Like `ByLabel`, but a label may appear in several groups; its samples
    /// are then dealt in turn to the claiming users (ascending user id), so
    /// index sets stay disjoint while label sets overlap.
    SharedLabels {
        groups: Vec<Vec<usize>>,
        #[serde(default)]
        allow_unassigned: bool,
    },
    /// Random permutation split into `users` contiguous chunks whose sizes
    /// differ by at most one.
    Shard { users: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub owner: usize,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionSet {
    pub parts: Vec<Partition>,
}

impl PartitionSet {
    pub fn users(&self) -> usize {
        self.parts.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.parts.iter().map(|p| p.indices.len()).collect()
    }
}

pub fn partition(ds: &Dataset, scheme: &PartitionScheme) -> Result<PartitionSet> {
    let parts = match scheme {
        PartitionScheme::ByLabel {
            groups,
            allow_unassigned,
        } => by_label(ds, groups, *allow_unassigned, false)?,
        PartitionScheme::SharedLabels {
            groups,
            allow_unassigned,
        } => by_label(ds, groups, *allow_unassigned, true)?,
        PartitionScheme::Shard { users, seed } => shard(ds.len(), *users, *seed)?,
    };
    Ok(PartitionSet { parts })
}

fn by_label(ds: &Dataset, groups: &[Vec<usize>], allow_unassigned: bool, shared: bool) -> Result<Vec<Partition>> {
    let labels = ds
        .labels()
        .ok_or_else(|| Error::Partition("label partition requires a labeled dataset".into()))?;
    if groups.is_empty() {
        return Err(Error::Partition("no label groups given".into()));
    }
    let mut claimants: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (u, g) in groups.iter().enumerate() {
        for &label in g {
            let owners = claimants.entry(label).or_default();
            if owners.contains(&u) {
                return Err(Error::Partition(format!("label {label} listed twice for user {u}")));
            }
            if !shared && !owners.is_empty() {
                return Err(Error::Partition(format!(
                    "overlapping groups: label {label} assigned to users {} and {u}",
                    owners[0]
                )));
            }
            owners.push(u);
        }
    }
    let mut parts: Vec<Partition> = (0..groups.len())
        .map(|owner| Partition {
            owner,
            indices: Vec::new(),
        })
        .collect();
    let mut dealt: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        match claimants.get(&label) {
            Some(owners) => {
                let turn = dealt.entry(label).or_default();
                parts[owners[*turn % owners.len()]].indices.push(i);
                *turn += 1;
            }
            None if allow_unassigned => {}
            None => return Err(Error::Partition(format!("label {label} is not assigned to any user"))),
        }
    }
    if let Some(p) = parts.iter().find(|p| p.indices.is_empty()) {
        return Err(Error::Partition(format!("user {} receives no samples", p.owner)));
    }
    Ok(parts)
}

fn shard(n: usize, users: usize, seed: u64) -> Result<Vec<Partition>> {
    if users == 0 {
        return Err(Error::Partition("shard needs at least one user".into()));
    }
    if users > n {
        return Err(Error::Partition(format!("{users} users for {n} samples")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng: SimRng = rand::SeedableRng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let base = n / users;
    let extra = n % users;
    let mut start = 0;
    let mut parts = Vec::with_capacity(users);
    for owner in 0..users {
        let size = base + usize::from(owner < extra);
        let mut indices = perm[start..start + size].to_vec();
        indices.sort_unstable();
        parts.push(Partition { owner, indices });
        start += size;
    }
    Ok(parts)
}
