//! Dataset ingestion: MNIST IDX files (optionally gzipped) and image
//! directories with one subdirectory per class, plus deterministic
//! per-class splits.

use crate::encoding::{log_filter, resize_bilinear, to_grayscale, GrayImage, LogFilterSpec};
use crate::error::{CsnnError, Result};
use crate::rng::{derive_rng, stream};
use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};
use std::io::Read;
use std::path::{Path, PathBuf};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled image collection. `ids` are stable per-sample identifiers,
/// assigned at load and preserved through splits, so the spike encoder's
/// per-image randomness does not depend on how the set was partitioned.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<GrayImage>,
    pub labels: Vec<u8>,
    pub class_names: Vec<String>,
    pub source_checksums: Vec<String>,
    pub ids: Vec<u64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.len() || self.images.len() != self.ids.len() {
            return Err(CsnnError::data("images, labels and ids must have equal length"));
        }
        let classes = self.class_count();
        if let Some(bad) = self.labels.iter().find(|&&l| usize::from(l) >= classes) {
            return Err(CsnnError::data(format!(
                "label {bad} outside the {classes}-class range"
            )));
        }
        Ok(())
    }

    pub fn per_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_count()];
        for &l in &self.labels {
            counts[usize::from(l)] += 1;
        }
        counts
    }

    fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            source_checksums: self.source_checksums.clone(),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
        }
    }
}

/// Per-class split request: `train_per_class` samples drawn without
/// replacement into the training set, remainder to test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_per_class: usize,
    pub seed: u64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write;
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn read_file_sniff_gz(path: &Path) -> Result<(Vec<u8>, String)> {
    let raw = std::fs::read(path)
        .map_err(|e| CsnnError::data(format!("cannot read {}: {e}", path.display())))?;
    let checksum = format!("{} {}", file_name(path), sha256_hex(&raw));
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| CsnnError::data(format!("bad gzip stream in {}: {e}", path.display())))?;
        Ok((out, checksum))
    } else {
        Ok((raw, checksum))
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

struct IdxReader<'a> {
    buf: &'a [u8],
    pos: usize,
    name: String,
}

impl<'a> IdxReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CsnnError::data(format!("{}: truncated while reading {what}", self.name)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32_be(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(CsnnError::data(format!(
                "{}: {} trailing bytes after payload",
                self.name,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn parse_idx_images(bytes: &[u8], name: &str) -> Result<Vec<GrayImage>> {
    let mut r = IdxReader { buf: bytes, pos: 0, name: name.to_string() };
    let magic = r.u32_be("magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(CsnnError::data(format!(
            "{name}: bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n = r.u32_be("image count")? as usize;
    let h = r.u32_be("image height")? as usize;
    let w = r.u32_be("image width")? as usize;
    if h == 0 || w == 0 || h > 4096 || w > 4096 {
        return Err(CsnnError::data(format!("{name}: implausible image size {h}x{w}")));
    }
    let mut images = Vec::with_capacity(n);
    for _ in 0..n {
        let px = r.take(h * w, "pixel data")?;
        let data: Vec<f64> = px.iter().map(|&b| f64::from(b) / 255.0).collect();
        images.push(GrayImage::new(w, h, data)?);
    }
    r.finish()?;
    Ok(images)
}

fn parse_idx_labels(bytes: &[u8], name: &str) -> Result<Vec<u8>> {
    let mut r = IdxReader { buf: bytes, pos: 0, name: name.to_string() };
    let magic = r.u32_be("magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(CsnnError::data(format!(
            "{name}: bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n = r.u32_be("label count")? as usize;
    let labels = r.take(n, "label data")?.to_vec();
    r.finish()?;
    Ok(labels)
}

/// Load an MNIST-style IDX image/label pair. Files may be raw or gzipped
/// (sniffed from the stream, not the extension).
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (img_bytes, img_sum) = read_file_sniff_gz(images_path)?;
    let (lab_bytes, lab_sum) = read_file_sniff_gz(labels_path)?;
    let images = parse_idx_images(&img_bytes, &file_name(images_path))?;
    let labels = parse_idx_labels(&lab_bytes, &file_name(labels_path))?;
    if images.len() != labels.len() {
        return Err(CsnnError::data(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let ds = Dataset {
        ids: (0..images.len() as u64).collect(),
        images,
        labels,
        class_names: (0..10).map(|d| d.to_string()).collect(),
        source_checksums: vec![img_sum, lab_sum],
    };
    ds.validate()?;
    Ok(ds)
}

/// Serialize images to the IDX format (raw, not gzipped). All images must
/// share one size. Intensities are quantized back to bytes.
pub fn write_idx_images(path: &Path, images: &[GrayImage]) -> Result<()> {
    let (w, h) = match images.first() {
        Some(img) => (img.width(), img.height()),
        None => return Err(CsnnError::data("cannot write an empty IDX image file")),
    };
    let mut out = Vec::with_capacity(16 + images.len() * w * h);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(h as u32).to_be_bytes());
    out.extend_from_slice(&(w as u32).to_be_bytes());
    for img in images {
        if img.width() != w || img.height() != h {
            return Err(CsnnError::data("IDX images must all share one size"));
        }
        out.extend_from_slice(&img.to_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out)?;
    Ok(())
}

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "pgm", "pnm"];

/// Load `root/<class>/*.{png,jpg,pgm}` directories, one class per listed
/// subdirectory. Each decodable image runs through grayscale conversion,
/// LoG filtering at native size, then bilinear resize to `out_w` x `out_h`.
/// Undecodable files are skipped and returned for the caller to report.
pub fn load_image_dir(
    root: &Path,
    class_subdirs: &[String],
    log: &LogFilterSpec,
    out_w: usize,
    out_h: usize,
) -> Result<(Dataset, Vec<PathBuf>)> {
    if class_subdirs.is_empty() {
        return Err(CsnnError::data("no class subdirectories given"));
    }
    log.validate()?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut checksums = Vec::new();
    let mut skipped = Vec::new();
    for (class_idx, class) in class_subdirs.iter().enumerate() {
        let dir = root.join(class);
        let entries = std::fs::read_dir(&dir)
            .map_err(|e| CsnnError::data(format!("cannot read class directory {}: {e}", dir.display())))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        files.sort_by_key(|p| file_name(p));
        let before = images.len();
        for path in files {
            let gray = match decode_image(&path) {
                Ok(g) => g,
                Err(_) => {
                    skipped.push(path);
                    continue;
                }
            };
            let filtered = log_filter(&gray, log)?;
            images.push(resize_bilinear(&filtered, out_w, out_h)?);
            labels.push(class_idx as u8);
            checksums.push(format!(
                "{}/{} {}",
                class,
                file_name(&path),
                sha256_hex(&std::fs::read(&path)?)
            ));
        }
        if images.len() == before {
            return Err(CsnnError::data(format!(
                "class directory {} holds no decodable images",
                dir.display()
            )));
        }
    }
    let ds = Dataset {
        ids: (0..images.len() as u64).collect(),
        images,
        labels,
        class_names: class_subdirs.to_vec(),
        source_checksums: checksums,
    };
    ds.validate()?;
    Ok((ds, skipped))
}

fn decode_image(path: &Path) -> Result<GrayImage> {
    let dynamic = image::open(path).map_err(|e| CsnnError::data(format!("{}: {e}", path.display())))?;
    to_grayscale(&dynamic)
}

/// Replace every image with its LoG-filtered version at native size. Used
/// for datasets that are already spatially normalized.
pub fn apply_log_filter(ds: &mut Dataset, log: &LogFilterSpec) -> Result<()> {
    log.validate()?;
    for img in &mut ds.images {
        *img = log_filter(img, log)?;
    }
    Ok(())
}

/// Seeded per-class split without replacement: `train_per_class` samples per
/// class go to train, the rest to test. Within each output the original
/// sample order is preserved, so determinism is independent of shuffle
/// internals beyond the selection itself.
pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    ds.validate()?;
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in 0..ds.class_count() {
        let mut members: Vec<usize> =
            (0..ds.len()).filter(|&i| usize::from(ds.labels[i]) == class).collect();
        if members.len() < spec.train_per_class {
            return Err(CsnnError::data(format!(
                "class '{}' has {} samples, cannot take {} for training",
                ds.class_names[class],
                members.len(),
                spec.train_per_class
            )));
        }
        let mut rng = derive_rng(spec.seed, stream::SPLIT, class as u64);
        members.shuffle(&mut rng);
        let (take, rest) = members.split_at(spec.train_per_class);
        train_idx.extend_from_slice(take);
        test_idx.extend_from_slice(rest);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((ds.select(&train_idx), ds.select(&test_idx)))
}

/// Class-stratified subset: the first `per_class` samples of each class
/// under the seeded shuffle. Used to carve desk-scale sets reproducibly.
pub fn take_per_class(ds: &Dataset, per_class: usize, seed: u64) -> Result<Dataset> {
    Ok(split(ds, SplitSpec { train_per_class: per_class, seed })?.0)
}
