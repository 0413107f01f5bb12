use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Image, ImagePair, LabelMap, Sample, SemanticLabelPair};
use crate::Result;

/// Element of the symmetry group of the square: an optional horizontal flip
/// followed by `quarter_turns` clockwise rotations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Dihedral {
    pub flip: bool,
    pub quarter_turns: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        flip: false,
        quarter_turns: 0,
    };

    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            flip: rng.gen(),
            quarter_turns: rng.gen_range(0..4),
        }
    }

    fn output_dims(self, h: usize, w: usize) -> (usize, usize) {
        if self.quarter_turns % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Source pixel `(y, x)` for output pixel `(oy, ox)` of an `h × w` input.
    fn source(self, oy: usize, ox: usize, h: usize, w: usize) -> (usize, usize) {
        // Undo the rotations, innermost last.
        let (mut y, mut x) = (oy, ox);
        let (mut ch, mut cw) = self.output_dims(h, w);
        for _ in 0..self.quarter_turns % 4 {
            // clockwise: out(y, x) = in(h_in - 1 - x, y) where h_in = cw
            let (ny, nx) = (cw - 1 - x, y);
            y = ny;
            x = nx;
            std::mem::swap(&mut ch, &mut cw);
        }
        if self.flip {
            x = cw - 1 - x;
        }
        debug_assert!(y < ch && x < cw);
        (y, x)
    }

    pub fn apply_plane<T: Copy + Default>(
        self,
        data: &[T],
        h: usize,
        w: usize,
    ) -> (usize, usize, Vec<T>) {
        let (oh, ow) = self.output_dims(h, w);
        let mut out = vec![T::default(); oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let (y, x) = self.source(oy, ox, h, w);
                out[oy * ow + ox] = data[y * w + x];
            }
        }
        (oh, ow, out)
    }

    pub fn apply_image(self, img: &Image) -> Image {
        let plane = img.height * img.width;
        let mut data = Vec::with_capacity(3 * plane);
        let mut dims = (img.height, img.width);
        for c in 0..3 {
            let (oh, ow, p) =
                self.apply_plane(&img.data[c * plane..(c + 1) * plane], img.height, img.width);
            dims = (oh, ow);
            data.extend(p);
        }
        Image {
            height: dims.0,
            width: dims.1,
            data,
        }
    }

    pub fn apply_labels(self, map: &LabelMap) -> LabelMap {
        let (height, width, data) = self.apply_plane(&map.data, map.height, map.width);
        LabelMap {
            height,
            width,
            data,
        }
    }
}

/// Applies one transform identically to both images and both label maps;
/// the change mask is re-derived.
pub fn augment_with(sample: &Sample, t: Dihedral) -> Result<Sample> {
    let images = ImagePair::new(
        t.apply_image(&sample.images.t1),
        t.apply_image(&sample.images.t2),
        sample.images.scene_id.clone(),
    )?;
    let labels = SemanticLabelPair::new(
        t.apply_labels(&sample.labels.l1),
        t.apply_labels(&sample.labels.l2),
        sample.labels.num_classes,
    )?;
    Sample::new(images, labels)
}

/// Draws a transform from `seed` and applies it.
pub fn augment(sample: &Sample, seed: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    augment_with(sample, Dihedral::random(&mut rng))
}
