//! Loading user-supplied RGB images from binary (P6) or ASCII (P3) PPM files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::bench::LabeledImages;
use crate::nn::Tensor;
use crate::{Error, Result};

/// Decodes a PPM file into a `3 × h × w` planar buffer scaled to [0, 1].
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated ppm header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token(bytes)?;
    let mut num = |bytes: &[u8]| -> Result<usize> {
        let t = token(bytes)?;
        t.parse().map_err(|_| Error::Parse(format!("bad ppm number {t:?}")))
    };
    let w = num(bytes)?;
    let h = num(bytes)?;
    let max = num(bytes)?;
    if max == 0 || max > 255 {
        return Err(Error::Parse(format!("unsupported ppm maxval {max}")));
    }
    let n = w * h * 3;
    let interleaved: Vec<usize> = match magic.as_str() {
        "P6" => {
            let start = pos + 1;
            let raw = bytes
                .get(start..start + n)
                .ok_or_else(|| Error::Parse("truncated ppm pixel data".into()))?;
            raw.iter().map(|&b| b as usize).collect()
        }
        "P3" => (0..n).map(|_| num(bytes)).collect::<Result<_>>()?,
        other => return Err(Error::Parse(format!("unsupported image format {other:?}"))),
    };
    let plane = w * h;
    let mut out = vec![0.0f32; n];
    for (i, &v) in interleaved.iter().enumerate() {
        out[(i % 3) * plane + i / 3] = v.min(max) as f32 / max as f32;
    }
    Ok((h, w, out))
}

/// Stacks PPM files of identical size into an `n × 3 × h × w` tensor.
pub fn load_image_batch(paths: &[PathBuf]) -> Result<Tensor<f32>> {
    let mut dims = None;
    let mut data = Vec::new();
    for p in paths {
        let (h, w, px) = decode_ppm(&fs::read(p)?)?;
        if *dims.get_or_insert((h, w)) != (h, w) {
            return Err(Error::Parse(format!("{} is {h}x{w}, expected {:?}", p.display(), dims)));
        }
        data.extend(px);
    }
    let (h, w) = dims.ok_or_else(|| Error::InvalidSpec("no images given".into()))?;
    Tensor::from_vec(&[paths.len(), 3, h, w], data)
}

/// PPM files of `dir` in name order.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")));
    paths.sort();
    Ok(paths)
}

/// The first `b` images of `dir` in name order.
pub fn load_image_dir(dir: &Path, b: usize) -> Result<Tensor<f32>> {
    let paths = list_images(dir)?;
    if paths.len() < b {
        return Err(Error::InvalidSpec(format!("{} holds {} images, need {b}", dir.display(), paths.len())));
    }
    load_image_batch(&paths[..b])
}

/// A labeled split described by `labels.csv` (`file,label` rows, files
/// relative to the CSV) with labels below `classes`.
pub fn load_labeled(csv_path: &Path, classes: usize) -> Result<LabeledImages> {
    let base = csv_path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(csv_path)?;
    let mut paths = Vec::new();
    let mut labels = Vec::new();
    for row in reader.records() {
        let row = row?;
        let (file, label) = match (row.get(0), row.get(1)) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::Parse(format!("{}: expected file,label rows", csv_path.display()))),
        };
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad label {label:?}")))?;
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        paths.push(base.join(file.trim()));
        labels.push(label);
    }
    Ok(LabeledImages {
        images: load_image_batch(&paths)?,
        labels,
    })
}
