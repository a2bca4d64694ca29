//! Labeled RGB images, conversion to model tensors, and binary PPM/PGM I/O.

use std::fs;
use std::path::Path;

use diffcore::{Elem, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Real,
    Synthetic,
    Augmented,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Synthetic => "synthetic",
            Provenance::Augmented => "augmented",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "real" => Some(Provenance::Real),
            "synthetic" => Some(Provenance::Synthetic),
            "augmented" => Some(Provenance::Augmented),
            _ => None,
        }
    }
}

/// Where a generated image came from, enough to regenerate it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticOrigin {
    pub class: usize,
    pub index: u64,
    pub z_seed: u64,
}

/// H×W×3 image with values in [0, 1], stored row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    pub label: usize,
    pub patient: u32,
    provenance: Provenance,
    origin: Option<SyntheticOrigin>,
}

impl LabeledImage {
    pub fn new(
        height: usize,
        width: usize,
        pixels: Vec<f32>,
        label: usize,
        patient: u32,
        provenance: Provenance,
    ) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::Data(format!(
                "{} pixel values for a {height}x{width}x3 image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("pixel values must lie in [0, 1]".into()));
        }
        Ok(LabeledImage {
            height,
            width,
            pixels,
            label,
            patient,
            provenance,
            origin: None,
        })
    }

    pub fn synthetic(
        height: usize,
        width: usize,
        pixels: Vec<f32>,
        origin: SyntheticOrigin,
    ) -> Result<Self> {
        let mut img = Self::new(height, width, pixels, origin.class, 0, Provenance::Synthetic)?;
        img.origin = Some(origin);
        Ok(img)
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn origin(&self) -> Option<SyntheticOrigin> {
        self.origin
    }

    /// Derived copy with new pixels, marked as augmented.
    pub fn augmented(&self, pixels: Vec<f32>) -> Self {
        LabeledImage {
            pixels,
            provenance: Provenance::Augmented,
            ..self.clone()
        }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * 3 + c]
    }
}

/// [0,1] HWC pixels → [−1,1] CHW values.
pub fn to_model_range(img: &LabeledImage) -> Vec<f32> {
    let plane = img.height * img.width;
    let mut out = vec![0.0; plane * 3];
    for (i, px) in img.pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + i] = px[c] * 2.0 - 1.0;
        }
    }
    out
}

/// [−1,1] CHW values → [0,1] HWC pixels (clamped).
pub fn from_model_range(chw: &[f32], height: usize, width: usize) -> Vec<f32> {
    let plane = height * width;
    let mut out = vec![0.0; plane * 3];
    for i in 0..plane {
        for c in 0..3 {
            out[i * 3 + c] = ((chw[c * plane + i] + 1.0) * 0.5).clamp(0.0, 1.0);
        }
    }
    out
}

/// Stacks images into an N×3×H×W tensor in model range.
pub fn batch_tensor<T: Elem>(images: &[&LabeledImage]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Data("empty image batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if (img.height, img.width) != (h, w) {
            return Err(Error::Data("images in a batch must share dimensions".into()));
        }
        data.extend(to_model_range(img).into_iter().map(|v| T::lit(v as f64)));
    }
    Ok(Tensor::from_vec(data, &[images.len(), 3, h, w])?)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_netpbm(magic: &str, width: usize, height: usize, body: &[u8]) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(body);
    out
}

/// Raw contents of a binary netpbm file.
struct Netpbm<'a> {
    width: usize,
    height: usize,
    maxval: usize,
    body: &'a [u8],
}

fn parse_netpbm<'a>(bytes: &'a [u8], magic: &[u8; 2], channels: usize) -> Result<Netpbm<'a>> {
    let err = |offset: usize, msg: String| Error::ImageFormat { offset, msg };
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(err(
            0,
            format!("expected magic {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments before each header field
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(err(pos, format!("expected header field {}", i + 1)));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| err(start, format!("header value {text} out of range")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(err(pos, "expected whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(err(pos, "zero image dimension".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(err(pos, format!("unsupported maxval {maxval}")));
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| err(pos, format!("image {width}x{height} is too large")))?;
    let body = &bytes[pos..];
    if body.len() < need {
        return Err(err(
            bytes.len(),
            format!("truncated pixel data: need {need} bytes, found {}", body.len()),
        ));
    }
    if body.len() > need {
        return Err(err(pos + need, "trailing bytes after pixel data".into()));
    }
    Ok(Netpbm {
        width,
        height,
        maxval,
        body,
    })
}

pub fn encode_ppm(img: &LabeledImage) -> Vec<u8> {
    let body: Vec<u8> = img.pixels.iter().map(|&v| quantize(v)).collect();
    encode_netpbm("P6", img.width, img.height, &body)
}

/// Decodes a binary PPM (P6) into a real image with the given label/patient.
pub fn decode_ppm(bytes: &[u8], label: usize, patient: u32) -> Result<LabeledImage> {
    let p = parse_netpbm(bytes, b"P6", 3)?;
    let scale = p.maxval as f32;
    let pixels = p.body.iter().map(|&b| (b as f32 / scale).min(1.0)).collect();
    LabeledImage::new(p.height, p.width, pixels, label, patient, Provenance::Real)
}

pub fn save_image(img: &LabeledImage, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn load_image(path: &Path, label: usize, patient: u32) -> Result<LabeledImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, label, patient)
}

/// Binary foreground mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

pub fn encode_pgm(mask: &Mask) -> Vec<u8> {
    let body: Vec<u8> = mask.data.iter().map(|&v| if v { 255 } else { 0 }).collect();
    encode_netpbm("P5", mask.width, mask.height, &body)
}

/// Decodes a binary PGM (P5); values above half of maxval are foreground.
pub fn decode_pgm(bytes: &[u8]) -> Result<Mask> {
    let p = parse_netpbm(bytes, b"P5", 1)?;
    let data = p.body.iter().map(|&b| b as usize * 2 > p.maxval).collect();
    Ok(Mask {
        height: p.height,
        width: p.width,
        data,
    })
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(mask)).map_err(|e| Error::io(path, e))
}
