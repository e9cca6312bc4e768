use std::fmt;
use std::str::FromStr;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::EngineError;

pub const DEFAULT_WIDTH: usize = 64;
pub const DEFAULT_HEIGHT: usize = 64;

pub type Rgb = [u8; 3];

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Raster {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        Self { width, height, pixels: vec![color; width * height] }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self, EngineError> {
        if pixels.len() != width * height {
            return Err(EngineError::Dimensions { expected: (width, height), found: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, color: Rgb) {
        self.pixels[y * self.width + x] = color;
    }

    /// FNV-1a over dimensions and pixel bytes.
    pub fn checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |b: u8| {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        };
        for b in (self.width as u32).to_le_bytes().into_iter().chain((self.height as u32).to_le_bytes()) {
            feed(b);
        }
        for px in &self.pixels {
            px.iter().copied().for_each(&mut feed);
        }
        hash
    }

    pub fn to_png(&self) -> Vec<u8> {
        let data: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        super::codec::encode_png(self.width, self.height, png::ColorType::Rgb, &data)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, EngineError> {
        let (width, height, data) = super::codec::decode_png(bytes, png::ColorType::Rgb)?;
        let pixels = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self::from_pixels(width, height, pixels)
    }

    pub fn to_base64_png(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(self.to_png())
    }
}

/// Binary pixel selection over an image, optionally labelled with the object
/// it came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    label: Option<String>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height], label: None }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits, label: None }
    }

    /// Axis-aligned box clipped to the canvas.
    pub fn rect(width: usize, height: usize, x: usize, y: usize, w: usize, h: usize) -> Self {
        Self::from_fn(width, height, |px, py| px >= x && px < x + w && py >= y && py < y + h)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    /// True when both masks select exactly the same pixels (labels ignored).
    pub fn same_region(&self, other: &Mask) -> bool {
        self.width == other.width && self.height == other.height && self.bits == other.bits
    }

    /// Intersection over union; zero when either mask is empty or the
    /// dimensions differ.
    pub fn iou(&self, other: &Mask) -> f64 {
        if self.width != other.width || self.height != other.height {
            return 0.0;
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.bits.iter().zip(&other.bits) {
            inter += usize::from(*a && *b);
            union += usize::from(*a || *b);
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn to_png(&self) -> Vec<u8> {
        let data: Vec<u8> = self.bits.iter().map(|b| if *b { 255 } else { 0 }).collect();
        super::codec::encode_png(self.width, self.height, png::ColorType::Grayscale, &data)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, EngineError> {
        let (width, height, data) = super::codec::decode_png(bytes, png::ColorType::Grayscale)?;
        Ok(Self { width, height, bits: data.iter().map(|v| *v >= 128).collect(), label: None })
    }

    /// Base64 PNG, the wire form of `object_mask_str` values.
    pub fn to_base64_png(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(self.to_png())
    }

    pub fn from_base64_png(text: &str) -> Result<Self, EngineError> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(text.trim())
            .map_err(|e| EngineError::Codec(e.to_string()))?;
        Self::from_png(&bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Brightness,
    Saturation,
    Contrast,
}

impl Attribute {
    pub fn name(self) -> &'static str {
        match self {
            Attribute::Brightness => "brightness",
            Attribute::Saturation => "saturation",
            Attribute::Contrast => "contrast",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "brightness" => Ok(Attribute::Brightness),
            "saturation" => Ok(Attribute::Saturation),
            "contrast" => Ok(Attribute::Contrast),
            other => Err(EngineError::UnknownAttribute(other.to_string())),
        }
    }
}

/// `n / d` rounded half away from zero, in exact integer arithmetic.
fn round_div(n: i64, d: i64) -> i64 {
    debug_assert!(d > 0);
    let q = n.abs() / d;
    let r = n.abs() % d;
    let q = if 2 * r >= d { q + 1 } else { q };
    if n < 0 {
        -q
    } else {
        q
    }
}

fn clip(v: i64) -> u8 {
    v.clamp(0, 255) as u8
}

fn adjust_pixel(px: Rgb, attribute: Attribute, value: i32) -> Rgb {
    let v = i64::from(value);
    let scale = 100 + v;
    match attribute {
        Attribute::Brightness => {
            let shift = round_div(255 * v, 100);
            px.map(|c| clip(i64::from(c) + shift))
        }
        Attribute::Saturation => {
            let sum: i64 = px.iter().map(|c| i64::from(*c)).sum();
            let gray = round_div(sum, 3);
            px.map(|c| clip(gray + round_div((i64::from(c) - gray) * scale, 100)))
        }
        Attribute::Contrast => px.map(|c| clip(128 + round_div((i64::from(c) - 128) * scale, 100))),
    }
}

/// Apply an attribute adjustment to the pixels selected by `mask`.
pub fn apply_adjust(image: &Raster, mask: &Mask, attribute: Attribute, value: i32) -> Result<Raster, EngineError> {
    if mask.width != image.width || mask.height != image.height {
        return Err(EngineError::MaskMismatch {
            image: (image.width, image.height),
            mask: (mask.width, mask.height),
        });
    }
    let mut out = image.clone();
    for (px, selected) in out.pixels.iter_mut().zip(&mask.bits) {
        if *selected {
            *px = adjust_pixel(*px, attribute, value);
        }
    }
    Ok(out)
}
