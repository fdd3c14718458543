//! Tensor container, binary mask PNGs, heatmap PNGs and dataset manifests.
//!
//! Tensor container layout (all integers little-endian):
//!
//! | offset | size | field                               |
//! |--------|------|-------------------------------------|
//! | 0      | 4    | magic `RUNC`                        |
//! | 4      | 2    | format version (`1`)                |
//! | 6      | 2    | dtype code (`1` = float32)          |
//! | 8      | 24   | dims `T`, `H`, `W` as u64           |
//! | 32     | 32   | reserved, zero                      |
//! | 64     | 4·THW| float32 payload, row-major, `T` outermost |

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat};

pub use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc_agg::UncertaintyMap;

pub const MAGIC: &[u8; 4] = b"RUNC";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F32: u16 = 1;
pub const HEADER_LEN: usize = 64;

/// Dense `(T, H, W)` float32 tensor, iteration-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    shape: [usize; 3],
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn new(shape: [usize; 3], data: Vec<f32>) -> Result<Self> {
        let expected = checked_volume(shape)?;
        if data.len() != expected {
            return Err(Error::LengthMismatch(expected, data.len()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Plane `t` as a row-major `H·W` slice.
    pub fn plane(&self, t: usize) -> &[f32] {
        let hw = self.shape[1] * self.shape[2];
        &self.data[t * hw..(t + 1) * hw]
    }

    pub fn get(&self, t: usize, y: usize, x: usize) -> f32 {
        let [_, h, w] = self.shape;
        self.data[(t * h + y) * w + x]
    }
}

fn checked_volume(shape: [usize; 3]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::MalformedHeader(format!("shape {shape:?} overflows")))
}

pub fn encode_tensor(tensor: &Tensor3) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * tensor.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for d in tensor.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.resize(HEADER_LEN, 0);
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor3> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::MalformedHeader("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::MalformedHeader(format!(
            "unsupported version {version}"
        )));
    }
    let dtype = u16::from_le_bytes([bytes[6], bytes[7]]);
    if dtype != DTYPE_F32 {
        return Err(Error::MalformedHeader(format!("unsupported dtype {dtype}")));
    }
    let mut shape = [0usize; 3];
    for (i, d) in shape.iter_mut().enumerate() {
        let off = 8 + 8 * i;
        let raw = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        *d = usize::try_from(raw)
            .map_err(|_| Error::MalformedHeader(format!("dimension {raw} too large")))?;
    }
    if bytes[32..HEADER_LEN].iter().any(|&b| b != 0) {
        return Err(Error::MalformedHeader("reserved bytes are not zero".into()));
    }
    let expected = checked_volume(shape)?
        .checked_mul(4)
        .ok_or_else(|| Error::MalformedHeader(format!("shape {shape:?} overflows")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::PayloadLength {
            expected,
            found: payload.len(),
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor3::new(shape, data)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor3> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor3) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(tensor)).map_err(|e| Error::io(path, e))
}

/// Binary `(H, W)` mask with values in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask2 {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask2 {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::LengthMismatch(height * width, data.len()));
        }
        if let Some(&v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::NonBinaryMask(v));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![u8::from(value); height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, false)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.data[y * self.width + x] = u8::from(value);
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn ensure_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape,
                found: self.shape(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &Mask2, f: impl Fn(u8, u8) -> u8) -> Result<Mask2> {
        other.ensure_shape(self.shape())?;
        Ok(Mask2 {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn and(&self, other: &Mask2) -> Result<Mask2> {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn or(&self, other: &Mask2) -> Result<Mask2> {
        self.zip_with(other, |a, b| a | b)
    }

    /// `self ∧ ¬other`.
    pub fn difference(&self, other: &Mask2) -> Result<Mask2> {
        self.zip_with(other, |a, b| a & (1 - b))
    }

    pub fn complement(&self) -> Mask2 {
        Mask2 {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.iter().map(|&v| v * 255).collect(),
        )
        .expect("mask buffer matches its shape")
    }
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask2> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    mask_from_image(&img)
}

/// Converts an 8-bit single-channel image with values {0, 255} into a mask.
pub fn mask_from_image(img: &DynamicImage) -> Result<Mask2> {
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::ChannelCount {
                expected: 1,
                found: other.color().channel_count(),
            })
        }
    };
    let (w, h) = gray.dimensions();
    let mut data = Vec::with_capacity((w * h) as usize);
    for &v in gray.as_raw() {
        data.push(match v {
            0 => 0,
            255 => 1,
            other => return Err(Error::NonBinaryMask(other)),
        });
    }
    Mask2::new(h as usize, w as usize, data)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask2) -> Result<()> {
    let path = path.as_ref();
    mask.to_gray_image()
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    match image::open(path).map_err(|e| Error::image(path, e))? {
        DynamicImage::ImageRgb8(rgb) => Ok(rgb),
        other => Err(Error::ChannelCount {
            expected: 3,
            found: other.color().channel_count(),
        }),
    }
}

pub fn write_rgb(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

/// Diverging blue → white → red ramp. 0 is pure blue, `vmax / 2` white,
/// `vmax` and above pure red.
pub fn colormap(value: f64, vmax: f64) -> [u8; 3] {
    let half = vmax / 2.0;
    let v = if value.is_nan() {
        0.0
    } else {
        value.clamp(0.0, vmax)
    };
    if v <= half {
        let c = (255.0 * (v / half)).round() as u8;
        [c, c, 255]
    } else {
        let c = (255.0 * (1.0 - (v - half) / half)).round() as u8;
        [255, c, c]
    }
}

pub fn render_heatmap(map: &UncertaintyMap, vmax: f64) -> Result<RgbImage> {
    if !(vmax > 0.0 && vmax.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "vmax must be positive and finite, got {vmax}"
        )));
    }
    let (h, w) = map.shape();
    let mut img = RgbImage::new(w as u32, h as u32);
    for (px, &v) in img.pixels_mut().zip(map.values()) {
        px.0 = colormap(v, vmax);
    }
    Ok(img)
}

pub fn write_heatmap(map: &UncertaintyMap, path: impl AsRef<Path>, vmax: f64) -> Result<()> {
    write_rgb(path, &render_heatmap(map, vmax)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub stack_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb_path: Option<PathBuf>,
    pub gt_path: PathBuf,
    pub has_tumor: bool,
}

/// Ordered list of images. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    root: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.image_id.is_empty() {
                return Err(Error::Manifest("empty image_id".into()));
            }
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate image_id {:?}",
                    e.image_id
                )));
            }
        }
        Ok(Self {
            entries,
            root: root.into(),
        })
    }

    pub fn from_json(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let entries: Vec<ManifestEntry> = serde_json::from_str(text)?;
        Self::new(entries, root)
    }

    /// Parses the manifest. File existence is checked per entry with
    /// [`Manifest::missing_files`] so one bad entry does not reject the cohort.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, root)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(&self.entries)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn missing_files(&self, entry: &ManifestEntry) -> Vec<PathBuf> {
        std::iter::once(&entry.stack_path)
            .chain(entry.rgb_path.as_ref())
            .chain(std::iter::once(&entry.gt_path))
            .map(|p| self.resolve(p))
            .filter(|p| !p.is_file())
            .collect()
    }

    pub fn validate_files(&self) -> Result<()> {
        for e in &self.entries {
            let missing = self.missing_files(e);
            if !missing.is_empty() {
                return Err(Error::Manifest(format!(
                    "{}: missing {}",
                    e.image_id,
                    missing
                        .iter()
                        .map(|p| p.display().to_string())
                        .collect::<Vec<_>>()
                        .join(", ")
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(shape: [u64; 3]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"RUNC");
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        for d in shape {
            b.extend_from_slice(&d.to_le_bytes());
        }
        b.resize(64, 0);
        b
    }

    #[test]
    fn zero_tensor_from_handwritten_header() {
        let mut bytes = header([1, 2, 2]);
        bytes.extend_from_slice(&[0u8; 16]);
        let t = decode_tensor(&bytes).unwrap();
        assert_eq!(t.shape(), [1, 2, 2]);
        assert_eq!(t.data(), &[0.0; 4]);
        assert_eq!(encode_tensor(&t), bytes);
    }

    #[test]
    fn short_payload_is_rejected() {
        let mut bytes = header([1, 2, 2]);
        bytes.extend_from_slice(&[0u8; 12]);
        let err = decode_tensor(&bytes).unwrap_err();
        assert!(err.to_string().contains("payload length mismatch"), "{err}");
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(
            decode_tensor(b"RUNC"),
            Err(Error::MalformedHeader(_))
        ));
        let mut bad_magic = header([1, 1, 1]);
        bad_magic[0] = b'X';
        bad_magic.extend_from_slice(&[0; 4]);
        assert!(matches!(
            decode_tensor(&bad_magic),
            Err(Error::MalformedHeader(_))
        ));
        let mut bad_dtype = header([1, 1, 1]);
        bad_dtype[6] = 2;
        bad_dtype.extend_from_slice(&[0; 4]);
        assert!(matches!(
            decode_tensor(&bad_dtype),
            Err(Error::MalformedHeader(_))
        ));
        let huge = header([u64::MAX, 2, 2]);
        assert!(matches!(
            decode_tensor(&huge),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let mut bytes = header([1, 1, 2]);
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_tensor(&bytes), Err(Error::NonFinite(1))));
    }

    #[test]
    fn mask_png_values() {
        let dir = tempfile::tempdir().unwrap();
        let black = dir.path().join("black.png");
        GrayImage::new(3, 2).save(&black).unwrap();
        assert_eq!(read_mask(&black).unwrap(), Mask2::zeros(2, 3));

        let white = dir.path().join("white.png");
        GrayImage::from_pixel(3, 2, image::Luma([255]))
            .save(&white)
            .unwrap();
        assert_eq!(read_mask(&white).unwrap(), Mask2::filled(2, 3, true));

        let grey = dir.path().join("grey.png");
        let mut g = GrayImage::new(3, 2);
        g.put_pixel(1, 1, image::Luma([128]));
        g.save(&grey).unwrap();
        let err = read_mask(&grey).unwrap_err();
        assert!(err.to_string().contains("non-binary mask value"), "{err}");

        let rgb = dir.path().join("rgb.png");
        RgbImage::new(2, 2).save(&rgb).unwrap();
        assert!(matches!(
            read_mask(&rgb),
            Err(Error::ChannelCount {
                expected: 1,
                found: 3
            })
        ));
    }

    #[test]
    fn colormap_anchors() {
        assert_eq!(colormap(0.0, 0.2), [0, 0, 255]);
        assert_eq!(colormap(0.1, 0.2), [255, 255, 255]);
        assert_eq!(colormap(0.2, 0.2), [255, 0, 0]);
        assert_eq!(colormap(5.0, 0.2), [255, 0, 0]);
        assert_eq!(colormap(-1.0, 0.2), [0, 0, 255]);
    }

    #[test]
    fn heatmap_rejects_bad_vmax() {
        let map = UncertaintyMap::from_values(1, 1, vec![0.0]).unwrap();
        assert!(render_heatmap(&map, 0.0).is_err());
        assert!(render_heatmap(&map, f64::NAN).is_err());
    }

    #[test]
    fn heatmap_writes_blue_for_zero_map() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.png");
        let map = UncertaintyMap::from_values(3, 4, vec![0.0; 12]).unwrap();
        write_heatmap(&map, &path, 1.0).unwrap();
        let img = read_rgb(&path).unwrap();
        assert!(img.pixels().all(|p| p.0 == [0, 0, 255]));
    }

    #[test]
    fn heatmap_to_unwritable_path_fails() {
        let map = UncertaintyMap::from_values(1, 1, vec![0.0]).unwrap();
        assert!(write_heatmap(&map, "/nonexistent-dir/x/h.png", 1.0).is_err());
    }

    #[test]
    fn manifest_rejects_duplicates_and_resolves_paths() {
        let json = r#"[
            {"image_id": "a", "stack_path": "a.runc", "gt_path": "a_gt.png", "has_tumor": true},
            {"image_id": "a", "stack_path": "b.runc", "gt_path": "b_gt.png", "has_tumor": false}
        ]"#;
        assert!(Manifest::from_json(json, "/data").is_err());

        let json = r#"[
            {"image_id": "a", "stack_path": "a.runc", "rgb_path": "a.png", "gt_path": "/abs/a_gt.png", "has_tumor": true}
        ]"#;
        let m = Manifest::from_json(json, "/data").unwrap();
        let e = &m.entries[0];
        assert_eq!(m.resolve(&e.stack_path), PathBuf::from("/data/a.runc"));
        assert_eq!(m.resolve(&e.gt_path), PathBuf::from("/abs/a_gt.png"));
        assert_eq!(m.missing_files(e).len(), 3);
        assert!(m.validate_files().is_err());
    }

    proptest! {
        #[test]
        fn tensor_round_trip_is_bit_exact(
            t in 1usize..4, h in 1usize..6, w in 1usize..6,
            seed in any::<u64>(),
        ) {
            let rng = crate::rng::CounterRng::new(seed);
            let data: Vec<f32> = (0..(t * h * w) as u64)
                .map(|c| (rng.normal_at(c) * 10.0) as f32)
                .collect();
            let tensor = Tensor3::new([t, h, w], data).unwrap();
            let back = decode_tensor(&encode_tensor(&tensor)).unwrap();
            prop_assert_eq!(&back, &tensor);
            let bits: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            let orig: Vec<u32> = tensor.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits, orig);
        }

        #[test]
        fn mask_png_round_trip(h in 1usize..9, w in 1usize..9, bits in proptest::collection::vec(any::<bool>(), 64)) {
            let mask = Mask2::from_fn(h, w, |y, x| bits[(y * w + x) % bits.len()]);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.png");
            write_mask(&path, &mask).unwrap();
            prop_assert_eq!(read_mask(&path).unwrap(), mask);
        }

        #[test]
        fn colormap_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, vmax in 0.01f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (c_lo, c_hi) = (colormap(lo, vmax), colormap(hi, vmax));
            prop_assert!(c_lo[0] <= c_hi[0]);
            prop_assert!(c_lo[2] >= c_hi[2]);
        }
    }
}
