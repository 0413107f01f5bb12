use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LabelMap;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub index: u8,
    pub name: String,
    pub rgb: [u8; 3],
}

/// Bijection between class indices `0..=K` and label colors. Index 0 is the
/// no-change class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassPalette {
    entries: Vec<PaletteEntry>,
    lookup: HashMap<[u8; 3], u8>,
}

impl ClassPalette {
    pub fn new(mut entries: Vec<PaletteEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.index);
        if entries.len() < 3 {
            return Err(Error::Palette(format!(
                "need no-change plus at least 2 classes, got {} entries",
                entries.len()
            )));
        }
        if entries.len() > 256 {
            return Err(Error::Palette("more than 256 entries".into()));
        }
        let mut lookup = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if usize::from(e.index) != i {
                return Err(Error::Palette(format!(
                    "indices must be 0..={} without gaps or repeats; found {} at position {i}",
                    entries.len() - 1,
                    e.index
                )));
            }
            if let Some(prev) = lookup.insert(e.rgb, e.index) {
                return Err(Error::Palette(format!(
                    "color {:?} used by both {prev} and {}",
                    e.rgb, e.index
                )));
            }
        }
        Ok(Self { entries, lookup })
    }

    /// Number of semantic classes (entries minus no-change).
    pub fn num_classes(&self) -> usize {
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn color(&self, index: u8) -> Option<[u8; 3]> {
        self.entries.get(usize::from(index)).map(|e| e.rgb)
    }

    pub fn index_of(&self, rgb: [u8; 3]) -> Option<u8> {
        self.lookup.get(&rgb).copied()
    }

    /// Parses `index<TAB>name<TAB>R,G,B` lines; blank lines and `#` comments
    /// are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let bad = |what: &str| Error::Palette(format!("line {}: {what}: {line:?}", lineno + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            let [index, name, rgb] = fields[..] else {
                return Err(bad("expected three tab-separated fields"));
            };
            let index: u8 = index.trim().parse().map_err(|_| bad("bad index"))?;
            let channels: Vec<u8> = rgb
                .split(',')
                .map(|c| c.trim().parse::<u8>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("bad color"))?;
            let [r, g, b] = channels[..] else {
                return Err(bad("color needs three components"));
            };
            entries.push(PaletteEntry {
                index,
                name: name.to_string(),
                rgb: [r, g, b],
            });
        }
        Self::new(entries)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let [r, g, b] = e.rgb;
            let _ = writeln!(s, "{}\t{}\t{r},{g},{b}", e.index, e.name);
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Evenly spaced hues for classes `1..=num_classes`; white marks no-change.
    pub fn generated(num_classes: usize) -> Result<Self> {
        let mut entries = vec![PaletteEntry {
            index: 0,
            name: "no-change".into(),
            rgb: [255, 255, 255],
        }];
        for k in 1..=num_classes {
            let hue = (k - 1) as f64 / num_classes as f64;
            let index = u8::try_from(k).map_err(|_| Error::Palette("too many classes".into()))?;
            entries.push(PaletteEntry {
                index,
                name: format!("class{k}"),
                rgb: hsv_to_rgb8(hue, 0.85, 0.8),
            });
        }
        Self::new(entries)
    }
}

pub(crate) fn hsv_to_rgb8(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = (h.fract() * 6.0).min(5.999_999);
    let sector = h6.floor();
    let f = h6 - sector;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match sector as u8 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| (c * 255.0).round() as u8)
}

/// Maps an interleaved RGB label image to class indices.
pub fn decode_labels(
    height: usize,
    width: usize,
    rgb: &[u8],
    palette: &ClassPalette,
) -> Result<LabelMap> {
    if rgb.len() != height * width * 3 {
        return Err(Error::DimensionMismatch(format!(
            "{} bytes for a {height}x{width} label image",
            rgb.len()
        )));
    }
    let data = rgb
        .chunks_exact(3)
        .enumerate()
        .map(|(p, px)| {
            let color = [px[0], px[1], px[2]];
            palette.index_of(color).ok_or(Error::UnknownColor {
                y: p / width,
                x: p % width,
                rgb: color,
            })
        })
        .collect::<Result<_>>()?;
    Ok(LabelMap {
        height,
        width,
        data,
    })
}

/// Maps class indices to interleaved RGB.
pub fn encode_labels(map: &LabelMap, palette: &ClassPalette) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(map.data.len() * 3);
    for &v in &map.data {
        let rgb = palette.color(v).ok_or(Error::IndexOutOfRange {
            index: usize::from(v),
            palette_len: palette.len(),
        })?;
        out.extend_from_slice(&rgb);
    }
    Ok(out)
}
