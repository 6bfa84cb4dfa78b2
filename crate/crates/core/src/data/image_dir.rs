use std::path::Path;

use super::{DataError, DatasetDescriptor, LabeledDataset};
use crate::diffcore::Tensor;

/// Box-filter resize with fractional edge coverage. `src` is row-major
/// `[h, w, c]`; returns `[oh, ow, c]`.
pub fn area_resize(src: &[f64], h: usize, w: usize, c: usize, oh: usize, ow: usize) -> Vec<f64> {
    let weights = |n: usize, on: usize| -> Vec<Vec<(usize, f64)>> {
        let step = n as f64 / on as f64;
        (0..on)
            .map(|o| {
                let (lo, hi) = (o as f64 * step, (o + 1) as f64 * step);
                let first = lo.floor() as usize;
                let last = (hi.ceil() as usize).min(n);
                (first..last)
                    .filter_map(|i| {
                        let cover = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                        (cover > 0.0).then_some((i, cover / step))
                    })
                    .collect()
            })
            .collect()
    };
    let wy = weights(h, oh);
    let wx = weights(w, ow);
    let mut out = vec![0.0; oh * ow * c];
    for (oy, ys) in wy.iter().enumerate() {
        for (ox, xs) in wx.iter().enumerate() {
            let dst = (oy * ow + ox) * c;
            for &(y, fy) in ys {
                for &(x, fx) in xs {
                    let s = (y * w + x) * c;
                    for ch in 0..c {
                        out[dst + ch] += fy * fx * src[s + ch];
                    }
                }
            }
        }
    }
    out
}

/// Loads images listed in a label file into a `[n, scale, scale, channels]`
/// dataset normalized to `[-1, 1]`.
///
/// The label file has a header (`filename,<label names...>`) and one row per
/// image with binary label columns. Row numbers in errors count the header
/// as row 1.
pub fn load_image_dataset(
    dir: &Path,
    label_file: &Path,
    scale: usize,
    channels: usize,
) -> Result<LabeledDataset, DataError> {
    let has_files = std::fs::read_dir(dir)?
        .filter_map(Result::ok)
        .any(|e| e.path().is_file());
    if !has_files {
        return Err(DataError::EmptyDirectory(dir.display().to_string()));
    }
    if !matches!(channels, 1 | 3) {
        return Err(DataError::InvalidSpec(format!(
            "channels must be 1 or 3, got {channels}"
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(label_file)
        .map_err(|e| DataError::BadRow {
            row: 1,
            detail: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| DataError::BadRow {
            row: 1,
            detail: e.to_string(),
        })?
        .clone();
    if headers.len() < 2 {
        return Err(DataError::BadRow {
            row: 1,
            detail: "header needs a filename column and at least one label".into(),
        });
    }
    let label_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let k = label_names.len();
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    let mut count = 0;
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| DataError::BadRow {
            row,
            detail: e.to_string(),
        })?;
        if rec.len() != k + 1 {
            return Err(DataError::BadRow {
                row,
                detail: format!("expected {} columns, found {}", k + 1, rec.len()),
            });
        }
        for (j, field) in rec.iter().skip(1).enumerate() {
            match field.trim() {
                "0" => labels.push(0.0),
                "1" => labels.push(1.0),
                other => {
                    return Err(DataError::BadRow {
                        row,
                        detail: format!("label `{}` is `{other}`, expected 0 or 1", label_names[j]),
                    })
                }
            }
        }
        let path = dir.join(rec[0].trim());
        if !path.is_file() {
            return Err(DataError::MissingImage {
                row,
                path: path.display().to_string(),
            });
        }
        let img = image::open(&path).map_err(|e| DataError::Decode {
            row,
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let raw: Vec<f64> = if channels == 1 {
            img.to_luma8()
                .into_raw()
                .into_iter()
                .map(f64::from)
                .collect()
        } else {
            img.to_rgb8()
                .into_raw()
                .into_iter()
                .map(f64::from)
                .collect()
        };
        let resized = area_resize(&raw, h, w, channels, scale, scale);
        samples.extend(
            resized
                .into_iter()
                .map(|v| (v / 127.5 - 1.0).clamp(-1.0, 1.0)),
        );
        count += 1;
    }
    if count == 0 {
        return Err(DataError::NoRows);
    }
    Ok(LabeledDataset {
        samples: Tensor::new(vec![count, scale, scale, channels], samples)
            .expect("consistent shape"),
        labels: Tensor::new(vec![count, k], labels).expect("consistent shape"),
        descriptor: DatasetDescriptor::ImageDir {
            dir: dir.display().to_string(),
            label_file: label_file.display().to_string(),
            scale,
            channels,
            label_names,
        },
    })
}
