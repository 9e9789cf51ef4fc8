//! Glyph atlas for the mock world.
//!
//! Every concept gets a distinct solid colour. The compositor paints glyphs
//! in that colour and the mock detector/encoder recover concept identity
//! from pixel colour alone, so metric tests carry no vision uncertainty.

use std::collections::{BTreeMap, HashMap};
use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};

use crate::registry::ConceptRegistry;

pub const BACKGROUND: [u8; 3] = [255, 255, 255];

/// Pixel-space box, `x1`/`y1` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Region {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Region {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }
}

#[derive(Debug, Clone)]
pub struct GlyphAtlas {
    ids: Vec<String>,
    labels: Vec<String>,
    by_id: BTreeMap<String, usize>,
    by_color: HashMap<[u8; 3], usize>,
}

fn color_for(index: usize) -> [u8; 3] {
    [
        (16 * (index % 15)) as u8,
        (16 * ((index / 15) % 15)) as u8,
        (16 * ((index / 225) % 15)) as u8,
    ]
}

impl GlyphAtlas {
    /// 3375 distinct colours; none of them is the background.
    pub const CAPACITY: usize = 15 * 15 * 15;

    pub fn from_registry(registry: &ConceptRegistry) -> Self {
        assert!(registry.len() <= Self::CAPACITY, "glyph atlas full");
        let mut atlas = Self {
            ids: Vec::new(),
            labels: Vec::new(),
            by_id: BTreeMap::new(),
            by_color: HashMap::new(),
        };
        for (i, c) in registry.iter().enumerate() {
            atlas.ids.push(c.id.clone());
            // Lowest detector label is the one the mock detector emits.
            atlas.labels.push(
                c.detector_labels
                    .iter()
                    .next()
                    .cloned()
                    .unwrap_or_else(|| c.id.clone()),
            );
            atlas.by_id.insert(c.id.clone(), i);
            atlas.by_color.insert(color_for(i), i);
        }
        atlas
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, concept_id: &str) -> Option<usize> {
        self.by_id.get(concept_id).copied()
    }

    pub fn color_of(&self, concept_id: &str) -> Option<[u8; 3]> {
        self.index_of(concept_id).map(color_for)
    }

    pub fn concept_id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn detector_label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    /// Every glyph visible in a decoded canvas with its bounding box,
    /// ordered by atlas index.
    pub fn scan(&self, canvas: &RgbImage) -> Vec<(usize, Region)> {
        let mut boxes: BTreeMap<usize, Region> = BTreeMap::new();
        for (x, y, px) in canvas.enumerate_pixels() {
            if px.0 == BACKGROUND {
                continue;
            }
            if let Some(&i) = self.by_color.get(&px.0) {
                boxes
                    .entry(i)
                    .and_modify(|r| {
                        r.x0 = r.x0.min(x);
                        r.y0 = r.y0.min(y);
                        r.x1 = r.x1.max(x + 1);
                        r.y1 = r.y1.max(y + 1);
                    })
                    .or_insert(Region {
                        x0: x,
                        y0: y,
                        x1: x + 1,
                        y1: y + 1,
                    });
            }
        }
        boxes.into_iter().collect()
    }
}

pub fn blank_canvas(width: u32, height: u32) -> RgbImage {
    RgbImage::from_pixel(width, height, Rgb(BACKGROUND))
}

pub fn fill(canvas: &mut RgbImage, region: Region, color: [u8; 3]) {
    for y in region.y0..region.y1.min(canvas.height()) {
        for x in region.x0..region.x1.min(canvas.width()) {
            canvas.put_pixel(x, y, Rgb(color));
        }
    }
}

pub fn encode_png(canvas: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    canvas
        .write_to(&mut out, ImageFormat::Png)
        .expect("png encoding to memory");
    out.into_inner()
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, image::ImageError> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8())
}
