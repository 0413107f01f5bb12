use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use super::{
    check_size, decode_labels, encode_labels, ClassPalette, DatasetSplit, Image, ImagePair, Sample,
    SemanticLabelPair,
};
use crate::{Error, Result};

const DIRS: [&str; 4] = ["im1", "im2", "label1", "label2"];

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads an 8-bit PNG as interleaved RGB, returning `(height, width, rgb)`.
/// Gray and alpha channels are expanded or dropped.
pub fn read_png_rgb(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let mut buf = vec![
        0;
        reader
            .output_buffer_size()
            .ok_or_else(|| png_err(path, "image too large"))?
    ];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let px = h * w;
    let rgb = match info.color_type {
        png::ColorType::Rgb => {
            buf.truncate(px * 3);
            buf
        }
        png::ColorType::Rgba => buf
            .chunks_exact(4)
            .take(px)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
        png::ColorType::Grayscale => buf.iter().take(px).flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf
            .chunks_exact(2)
            .take(px)
            .flat_map(|p| [p[0], p[0], p[0]])
            .collect(),
        png::ColorType::Indexed => return Err(png_err(path, "indexed color was not expanded")),
    };
    Ok((h, w, rgb))
}

pub fn write_png_rgb(path: &Path, height: usize, width: usize, rgb: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let w = BufWriter::new(file);
    let mut encoder = png::Encoder::new(w, width as u32, height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(rgb).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

fn sample_path(root: &Path, dir: &str, scene_id: &str) -> PathBuf {
    root.join(dir).join(format!("{scene_id}.png"))
}

/// Loads `im1/`, `im2/`, `label1/`, `label2/` entries of one scene.
pub fn load_sample(root: &Path, scene_id: &str, palette: &ClassPalette) -> Result<Sample> {
    let paths = DIRS.map(|d| sample_path(root, d, scene_id));
    if let Some(missing) = paths.iter().find(|p| !p.is_file()) {
        return Err(Error::MissingFile(missing.clone()));
    }
    let [im1, im2, lab1, lab2] = paths;
    let (h, w, rgb1) = read_png_rgb(&im1)?;
    check_size(h, w)?;
    let t1 = Image::from_rgb8(h, w, &rgb1)?;
    let read_same = |path: &Path| -> Result<Vec<u8>> {
        let (hh, ww, rgb) = read_png_rgb(path)?;
        if (hh, ww) != (h, w) {
            return Err(Error::DimensionMismatch(format!(
                "{} is {hh}x{ww}, expected {h}x{w}",
                path.display()
            )));
        }
        Ok(rgb)
    };
    let t2 = Image::from_rgb8(h, w, &read_same(&im2)?)?;
    let l1 = decode_labels(h, w, &read_same(&lab1)?, palette)?;
    let l2 = decode_labels(h, w, &read_same(&lab2)?, palette)?;
    let images = ImagePair::new(t1, t2, scene_id)?;
    let labels = SemanticLabelPair::new(l1, l2, palette.num_classes())?;
    Sample::new(images, labels)
}

/// Writes a sample in the layout read by [`load_sample`].
pub fn write_sample(root: &Path, sample: &Sample, palette: &ClassPalette) -> Result<()> {
    let (h, w) = (sample.images.height(), sample.images.width());
    let id = sample.scene_id();
    write_png_rgb(
        &sample_path(root, "im1", id),
        h,
        w,
        &sample.images.t1.to_rgb8(),
    )?;
    write_png_rgb(
        &sample_path(root, "im2", id),
        h,
        w,
        &sample.images.t2.to_rgb8(),
    )?;
    write_png_rgb(
        &sample_path(root, "label1", id),
        h,
        w,
        &encode_labels(&sample.labels.l1, palette)?,
    )?;
    write_png_rgb(
        &sample_path(root, "label2", id),
        h,
        w,
        &encode_labels(&sample.labels.l2, palette)?,
    )?;
    Ok(())
}

/// Scene ids present under `root/im1`, sorted.
pub fn list_scene_ids(root: &Path) -> Result<Vec<String>> {
    let dir = root.join("im1");
    let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// One scene id per line; blank lines ignored.
pub fn read_split_file(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Writes `train.txt` and `test.txt` into `dir`.
pub fn write_split(dir: &Path, split: &DatasetSplit) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, ids) in [
        ("train.txt", &split.train_ids),
        ("test.txt", &split.test_ids),
    ] {
        let path = dir.join(name);
        let mut text = ids.join("\n");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
