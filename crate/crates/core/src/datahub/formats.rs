//! Readers for the upstream binary dataset layouts.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::Split;
use crate::error::{Error, Result};

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// CIFAR binary records: `label_bytes` label bytes (the last one is used),
/// then a 32×32×3 channel-planar image.
pub fn read_cifar(paths: &[std::path::PathBuf], label_bytes: usize) -> Result<Split> {
    const PIX: usize = 32 * 32;
    let record = label_bytes + 3 * PIX;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let bytes = read(p)?;
        if bytes.len() % record != 0 {
            return Err(Error::Format(format!(
                "{}: size {} is not a multiple of the {record}-byte record",
                p.display(),
                bytes.len()
            )));
        }
        for rec in bytes.chunks_exact(record) {
            labels.push(rec[label_bytes - 1] as u16);
            let img = &rec[label_bytes..];
            for i in 0..PIX {
                images.extend_from_slice(&[img[i], img[PIX + i], img[2 * PIX + i]]);
            }
        }
    }
    Ok(Split {
        images,
        labels,
        height: 32,
        width: 32,
        channels: 3,
    })
}

fn gunzip(path: &Path) -> Result<Vec<u8>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    GzDecoder::new(file)
        .read_to_end(&mut out)
        .map_err(|e| Error::io(path, e))?;
    Ok(out)
}

fn be_u32(b: &[u8], at: usize) -> usize {
    u32::from_be_bytes(b[at..at + 4].try_into().unwrap()) as usize
}

/// IDX (MNIST-family) images and labels, gzip-compressed. Images are
/// zero-padded by `pad` pixels per side and kept single-channel.
pub fn read_idx(images: &Path, labels: &Path, pad: usize) -> Result<Split> {
    let img = gunzip(images)?;
    let lab = gunzip(labels)?;
    if img.len() < 16 || be_u32(&img, 0) != 0x0803 {
        return Err(Error::Format(format!("{}: not an IDX image file", images.display())));
    }
    if lab.len() < 8 || be_u32(&lab, 0) != 0x0801 {
        return Err(Error::Format(format!("{}: not an IDX label file", labels.display())));
    }
    let (n, rows, cols) = (be_u32(&img, 4), be_u32(&img, 8), be_u32(&img, 12));
    if be_u32(&lab, 4) != n || img.len() != 16 + n * rows * cols || lab.len() != 8 + n {
        return Err(Error::Format("IDX image/label counts disagree".into()));
    }
    let (h, w) = (rows + 2 * pad, cols + 2 * pad);
    let mut out = vec![0u8; n * h * w];
    for i in 0..n {
        for y in 0..rows {
            let src = 16 + (i * rows + y) * cols;
            let dst = (i * h + y + pad) * w + pad;
            out[dst..dst + cols].copy_from_slice(&img[src..src + cols]);
        }
    }
    Ok(Split {
        images: out,
        labels: lab[8..].iter().map(|&l| l as u16).collect(),
        height: h,
        width: w,
        channels: 1,
    })
}

/// STL-10 binary: 96×96×3 column-major planes, labels 1..=10; images are
/// resized to `size × size`.
pub fn read_stl10(images: &Path, labels: &Path, size: usize) -> Result<Split> {
    const S: usize = 96;
    let img = read(images)?;
    let lab = read(labels)?;
    let per = S * S * 3;
    if img.len() % per != 0 || img.len() / per != lab.len() {
        return Err(Error::Format("STL-10 image/label counts disagree".into()));
    }
    let mut out = Vec::with_capacity(lab.len() * size * size * 3);
    for rec in img.chunks_exact(per) {
        let mut buf = image::RgbImage::new(S as u32, S as u32);
        for c in 0..3 {
            for x in 0..S {
                for y in 0..S {
                    buf.get_pixel_mut(x as u32, y as u32).0[c] = rec[c * S * S + x * S + y];
                }
            }
        }
        let small = image::imageops::resize(&buf, size as u32, size as u32, image::imageops::FilterType::Triangle);
        out.extend_from_slice(small.as_raw());
    }
    Ok(Split {
        images: out,
        labels: lab.iter().map(|&l| l.saturating_sub(1) as u16).collect(),
        height: size,
        width: size,
        channels: 3,
    })
}
