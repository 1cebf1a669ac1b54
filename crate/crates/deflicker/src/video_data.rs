//! Frame sequences, dense flow fields and their on-disk formats.
//!
//! A video is a directory of PNG frames; a frame in memory is a
//! `(3, height, width)` array of `f64` RGB values in `[0, 1]`. Sequences are
//! indexed 1-based to match the temporal notation used by the losses
//! (frame 1 is special: it is passed through unchanged).
//!
//! Flow fields use the Middlebury `.flo` layout: a little-endian `f32` magic
//! (202021.25), `i32` width and height, then row-major interleaved `(u, v)`
//! pairs of `f32`. Reading and writing are bit-exact round trips.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One RGB frame: shape `(3, height, width)`, values nominally in `[0, 1]`.
pub type Frame = Array3<f64>;

/// A soft or hard per-pixel weight map in `[0, 1]`, shape `(height, width)`.
pub type Mask = Array2<f64>;

/// Sample depth of the PNG files a sequence came from (and is written with).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BitDepth {
    Eight,
    Sixteen,
}

const FLO_MAGIC: f32 = 202021.25;
const MAX_FLOW_DIM: usize = 50_000;

/// Dense displacement field. `u` is horizontal, `v` vertical, both
/// `(height, width)`. Stored as `f32` so `.flo` round trips are bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Array2<f32>,
    pub v: Array2<f32>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField {
            u: Array2::zeros((height, width)),
            v: Array2::zeros((height, width)),
        }
    }

    pub fn from_uv(u: Array2<f32>, v: Array2<f32>) -> Result<Self> {
        if u.dim() != v.dim() {
            return Err(Error::DimensionMismatch {
                context: "flow field".into(),
                expected: format!("{:?}", u.dim()),
                actual: format!("{:?}", v.dim()),
            });
        }
        Ok(FlowField { u, v })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.u.dim()
    }

    /// Packs the field into the `(2, h, w)` `f64` layout the warp ops use.
    pub fn to_tensor(&self) -> Array3<f64> {
        let (h, w) = self.dims();
        let mut t = Array3::zeros((2, h, w));
        for y in 0..h {
            for x in 0..w {
                t[[0, y, x]] = self.u[[y, x]] as f64;
                t[[1, y, x]] = self.v[[y, x]] as f64;
            }
        }
        t
    }
}

/// An ordered run of equally sized frames, indexed 1-based.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    pub bit_depth: BitDepth,
}

impl FrameSequence {
    /// Validates that all frames share the `(3, h, w)` shape and are finite.
    pub fn new(frames: Vec<Frame>, bit_depth: BitDepth) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::SequenceTooShort { needed: 1, got: 0 });
        }
        let dim = frames[0].dim();
        if dim.0 != 3 {
            return Err(Error::DimensionMismatch {
                context: "frame channels".into(),
                expected: "3".into(),
                actual: dim.0.to_string(),
            });
        }
        for (i, f) in frames.iter().enumerate() {
            if f.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: format!("frame {}", i + 1),
                    expected: format!("{dim:?}"),
                    actual: format!("{:?}", f.dim()),
                });
            }
            if !f.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("frame {}", i + 1),
                });
            }
        }
        Ok(FrameSequence { frames, bit_depth })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame `t` with `1 <= t <= len()`.
    pub fn frame(&self, t: usize) -> &Frame {
        assert!(
            (1..=self.frames.len()).contains(&t),
            "frame index {t} outside 1..={}",
            self.frames.len()
        );
        &self.frames[t - 1]
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn height(&self) -> usize {
        self.frames[0].dim().1
    }

    pub fn width(&self) -> usize {
        self.frames[0].dim().2
    }
}

// ----------------------------------------------------------------------
// PNG frame directories
// ----------------------------------------------------------------------

/// Loads every `.png` in `dir` (sorted by file name) as one sequence.
///
/// Frame order is the lexicographic order of the file names, so frame
/// numbers must be zero-padded (the `frame_00001.png` style this crate
/// writes sorts correctly).
pub fn load_frame_sequence(dir: &Path) -> Result<FrameSequence> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::SequenceTooShort { needed: 1, got: 0 });
    }

    let mut frames = Vec::with_capacity(paths.len());
    let mut bit_depth = BitDepth::Eight;
    for (i, path) in paths.iter().enumerate() {
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        let depth = match &img {
            image::DynamicImage::ImageLuma16(_)
            | image::DynamicImage::ImageLumaA16(_)
            | image::DynamicImage::ImageRgb16(_)
            | image::DynamicImage::ImageRgba16(_) => BitDepth::Sixteen,
            _ => BitDepth::Eight,
        };
        if i == 0 {
            bit_depth = depth;
        }
        frames.push(decode_frame(&img, depth));
    }
    FrameSequence::new(frames, bit_depth)
}

fn decode_frame(img: &image::DynamicImage, depth: BitDepth) -> Frame {
    match depth {
        BitDepth::Eight => {
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
                rgb.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0
            })
        }
        BitDepth::Sixteen => {
            let rgb = img.to_rgb16();
            let (w, h) = rgb.dimensions();
            Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
                rgb.get_pixel(x as u32, y as u32).0[c] as f64 / 65535.0
            })
        }
    }
}

/// Writes a sequence as `frame_00001.png`, `frame_00002.png`, ... in `dir`,
/// clamping to `[0, 1]` and quantizing at the sequence's own bit depth so a
/// load/save round trip of untouched frames is byte-identical.
pub fn save_frame_sequence(dir: &Path, seq: &FrameSequence) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in seq.frames().iter().enumerate() {
        let path = dir.join(format!("frame_{:05}.png", i + 1));
        save_frame(&path, frame, seq.bit_depth)?;
    }
    Ok(())
}

/// Writes one frame as a PNG, clamping to `[0, 1]` before quantization.
pub fn save_frame(path: &Path, frame: &Frame, depth: BitDepth) -> Result<()> {
    let (c, h, w) = frame.dim();
    assert_eq!(c, 3, "frames are RGB");
    match depth {
        BitDepth::Eight => {
            let mut buf = image::RgbImage::new(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    let px = [
                        quantize_u8(frame[[0, y, x]]),
                        quantize_u8(frame[[1, y, x]]),
                        quantize_u8(frame[[2, y, x]]),
                    ];
                    buf.put_pixel(x as u32, y as u32, image::Rgb(px));
                }
            }
            buf.save(path).map_err(|e| Error::image(path, e))
        }
        BitDepth::Sixteen => {
            let mut buf = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::new(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    let px = [
                        quantize_u16(frame[[0, y, x]]),
                        quantize_u16(frame[[1, y, x]]),
                        quantize_u16(frame[[2, y, x]]),
                    ];
                    buf.put_pixel(x as u32, y as u32, image::Rgb(px));
                }
            }
            buf.save(path).map_err(|e| Error::image(path, e))
        }
    }
}

fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn quantize_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

// ----------------------------------------------------------------------
// Middlebury .flo files
// ----------------------------------------------------------------------

/// Reads a `.flo` flow field, validating magic, dimensions and data length.
pub fn read_flo(path: &Path) -> Result<FlowField> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 12];
    file.read_exact(&mut header).map_err(|e| Error::io(path, e))?;

    let magic = f32::from_le_bytes(header[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(Error::BadFlowMagic {
            path: path.to_path_buf(),
            got: magic,
        });
    }
    let width = i32::from_le_bytes(header[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(header[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 || width as usize > MAX_FLOW_DIM || height as usize > MAX_FLOW_DIM
    {
        return Err(Error::Contract(format!(
            "implausible flow dimensions {width}x{height} in {}",
            path.display()
        )));
    }
    let (w, h) = (width as usize, height as usize);

    let expected = h * w * 2 * 4;
    let mut data = Vec::with_capacity(expected);
    file.read_to_end(&mut data).map_err(|e| Error::io(path, e))?;
    if data.len() != expected {
        return Err(Error::TruncatedFlow {
            path: path.to_path_buf(),
            expected,
            got: data.len(),
        });
    }

    let mut u = Array2::zeros((h, w));
    let mut v = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let off = (y * w + x) * 8;
            u[[y, x]] = f32::from_le_bytes(data[off..off + 4].try_into().unwrap());
            v[[y, x]] = f32::from_le_bytes(data[off + 4..off + 8].try_into().unwrap());
        }
    }
    Ok(FlowField { u, v })
}

/// Writes a flow field in the `.flo` layout read back by [`read_flo`].
pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let (h, w) = flow.dims();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let werr = |e| Error::io(path, e);
    out.write_all(&FLO_MAGIC.to_le_bytes()).map_err(werr)?;
    out.write_all(&(w as i32).to_le_bytes()).map_err(werr)?;
    out.write_all(&(h as i32).to_le_bytes()).map_err(werr)?;
    for y in 0..h {
        for x in 0..w {
            out.write_all(&flow.u[[y, x]].to_le_bytes()).map_err(werr)?;
            out.write_all(&flow.v[[y, x]].to_le_bytes()).map_err(werr)?;
        }
    }
    out.flush().map_err(werr)
}
