//! Dataset-facing types, SECOND-layout ingestion, label codecs, splits,
//! augmentation and the procedural synthetic dataset.

mod augment;
mod io;
mod palette;
mod split;
mod synth;

pub use augment::{augment, augment_with, Dihedral};
pub use io::{
    list_scene_ids, load_sample, read_png_rgb, read_split_file, write_png_rgb, write_sample,
    write_split,
};
pub use palette::{decode_labels, encode_labels, ClassPalette, PaletteEntry};
pub use split::{make_split, DatasetSplit};
pub use synth::{synth_generate, synth_samples, SynthConfig};

use crate::{Error, Result};

/// Encoder downsampling factor; image sides must be multiples of it.
pub const SIZE_MULTIPLE: usize = 32;

/// RGB image stored channel-major (`3 × H × W`) with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    /// From interleaved 8-bit RGB.
    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != height * width * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{} bytes for a {height}x{width} RGB image",
                rgb.len()
            )));
        }
        let plane = height * width;
        let mut data = vec![0.0; 3 * plane];
        for (p, px) in rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + p] = f64::from(px[c]) / 255.0;
            }
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Interleaved 8-bit RGB, rounding to the nearest level.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.height * self.width;
        let mut out = vec![0u8; plane * 3];
        for p in 0..plane {
            for c in 0..3 {
                out[p * 3 + c] = (self.data[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        out
    }
}

/// Per-pixel class indices, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

/// Co-registered bi-temporal images of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub t1: Image,
    pub t2: Image,
    pub scene_id: String,
}

impl ImagePair {
    pub fn new(t1: Image, t2: Image, scene_id: impl Into<String>) -> Result<Self> {
        if (t1.height, t1.width) != (t2.height, t2.width) {
            return Err(Error::DimensionMismatch(format!(
                "t1 is {}x{} but t2 is {}x{}",
                t1.height, t1.width, t2.height, t2.width
            )));
        }
        check_size(t1.height, t1.width)?;
        Ok(Self {
            t1,
            t2,
            scene_id: scene_id.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.t1.height
    }

    pub fn width(&self) -> usize {
        self.t1.width
    }
}

pub(crate) fn check_size(height: usize, width: usize) -> Result<()> {
    if height < SIZE_MULTIPLE
        || width < SIZE_MULTIPLE
        || height % SIZE_MULTIPLE != 0
        || width % SIZE_MULTIPLE != 0
    {
        return Err(Error::DimensionMismatch(format!(
            "{height}x{width} is not a positive multiple of {SIZE_MULTIPLE}"
        )));
    }
    Ok(())
}

/// Per-date class maps; 0 marks no-change, `1..=num_classes` the classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticLabelPair {
    pub l1: LabelMap,
    pub l2: LabelMap,
    pub num_classes: usize,
}

impl SemanticLabelPair {
    pub fn new(l1: LabelMap, l2: LabelMap, num_classes: usize) -> Result<Self> {
        if (l1.height, l1.width) != (l2.height, l2.width) {
            return Err(Error::DimensionMismatch(format!(
                "label maps are {}x{} and {}x{}",
                l1.height, l1.width, l2.height, l2.width
            )));
        }
        for &v in l1.data.iter().chain(&l2.data) {
            if usize::from(v) > num_classes {
                return Err(Error::LabelOutOfRange {
                    label: v,
                    num_classes,
                });
            }
        }
        Ok(Self {
            l1,
            l2,
            num_classes,
        })
    }

    pub fn height(&self) -> usize {
        self.l1.height
    }

    pub fn width(&self) -> usize {
        self.l1.width
    }
}

/// Binary change map; always derived from a label pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChangeMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl ChangeMask {
    pub fn changed_count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }
}

/// A pixel is changed when either date carries a class. Also returns the
/// number of pixels where exactly one date is labelled no-change, which the
/// SECOND convention does not allow.
pub fn derive_change_mask(labels: &SemanticLabelPair) -> (ChangeMask, usize) {
    let mut one_sided = 0;
    let data = labels
        .l1
        .data
        .iter()
        .zip(&labels.l2.data)
        .map(|(&a, &b)| {
            if (a == 0) != (b == 0) {
                one_sided += 1;
            }
            a != 0 || b != 0
        })
        .collect();
    let mask = ChangeMask {
        height: labels.height(),
        width: labels.width(),
        data,
    };
    (mask, one_sided)
}

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub images: ImagePair,
    pub labels: SemanticLabelPair,
    mask: ChangeMask,
    /// Pixels violating the both-or-neither labelling convention.
    pub label_warnings: usize,
}

impl Sample {
    pub fn new(images: ImagePair, labels: SemanticLabelPair) -> Result<Self> {
        if (images.height(), images.width()) != (labels.height(), labels.width()) {
            return Err(Error::DimensionMismatch(format!(
                "scene {}: images are {}x{} but labels are {}x{}",
                images.scene_id,
                images.height(),
                images.width(),
                labels.height(),
                labels.width()
            )));
        }
        let (mask, label_warnings) = derive_change_mask(&labels);
        Ok(Self {
            images,
            labels,
            mask,
            label_warnings,
        })
    }

    pub fn mask(&self) -> &ChangeMask {
        &self.mask
    }

    pub fn scene_id(&self) -> &str {
        &self.images.scene_id
    }
}
