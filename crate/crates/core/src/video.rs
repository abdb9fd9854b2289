//! RGB frame containers and PNG I/O.
//!
//! Frames are `H x W x 3` arrays of `f32` in `[0, 1]`. A video on disk is a
//! directory of PNG files whose lexicographic order is the frame order.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use thiserror::Error;

pub type Frame = Array3<f32>;

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png decode error on {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: png::DecodingError,
    },
    #[error("png encode error on {path}: {source}")]
    Encode {
        path: PathBuf,
        #[source]
        source: png::EncodingError,
    },
    #[error("{path}: unsupported png layout ({detail})")]
    Unsupported { path: PathBuf, detail: String },
    #[error("video directory {0} contains no png frames")]
    Empty(PathBuf),
    #[error("frame {index} is {got_h}x{got_w}, expected {want_h}x{want_w}")]
    Dimensions {
        index: usize,
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VideoError + '_ {
    move |source| VideoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Quantizes a `[0, 1]` value to 8 bits.
#[inline]
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read_rgb_png(path: &Path) -> Result<Frame, VideoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|source| VideoError::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|source| VideoError::Decode {
            path: path.to_path_buf(),
            source,
        })?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        other => {
            return Err(VideoError::Unsupported {
                path: path.to_path_buf(),
                detail: format!("{other:?}"),
            })
        }
    };
    let mut frame = Array3::<f32>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * channels;
            for c in 0..3 {
                let src = if channels >= 3 { base + c } else { base };
                frame[[y, x, c]] = buf[src] as f32 / 255.0;
            }
        }
    }
    Ok(frame)
}

pub fn write_rgb_png(path: &Path, frame: ArrayView3<f32>) -> Result<(), VideoError> {
    let (h, w, _) = frame.dim();
    let mut data = Vec::with_capacity(h * w * 3);
    for px in frame.iter() {
        data.push(to_u8(*px));
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let encode = |source| VideoError::Encode {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = encoder.write_header().map_err(encode)?;
    writer.write_image_data(&data).map_err(encode)?;
    writer.finish().map_err(encode)
}

/// Writes a binary mask as a 1-bit grayscale PNG.
pub fn write_mask_png(path: &Path, mask: ArrayView2<bool>) -> Result<(), VideoError> {
    let (h, w) = mask.dim();
    let stride = w.div_ceil(8);
    let mut data = vec![0u8; stride * h];
    for ((y, x), &on) in mask.indexed_iter() {
        if on {
            data[y * stride + x / 8] |= 0x80 >> (x % 8);
        }
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::One);
    encoder.set_compression(png::Compression::Best);
    let encode = |source| VideoError::Encode {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = encoder.write_header().map_err(encode)?;
    writer.write_image_data(&data).map_err(encode)?;
    writer.finish().map_err(encode)
}

pub fn read_mask_png(path: &Path) -> Result<Array2<bool>, VideoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|source| VideoError::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|source| VideoError::Decode {
            path: path.to_path_buf(),
            source,
        })?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::One {
        return Err(VideoError::Unsupported {
            path: path.to_path_buf(),
            detail: format!("{:?}/{:?}, expected 1-bit grayscale", info.color_type, info.bit_depth),
        });
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        buf[y * stride + x / 8] & (0x80 >> (x % 8)) != 0
    }))
}

/// Lists the PNG files of a frame directory in frame order.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>, VideoError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads every frame of a video directory; all frames must share one size.
pub fn load_video(dir: &Path) -> Result<Vec<Frame>, VideoError> {
    let paths = frame_paths(dir)?;
    if paths.is_empty() {
        return Err(VideoError::Empty(dir.to_path_buf()));
    }
    let mut frames: Vec<Frame> = Vec::with_capacity(paths.len());
    for (index, p) in paths.iter().enumerate() {
        let frame = read_rgb_png(p)?;
        if let Some(first) = frames.first() {
            let (want_h, want_w, _) = first.dim();
            let (got_h, got_w, _) = frame.dim();
            if (got_h, got_w) != (want_h, want_w) {
                return Err(VideoError::Dimensions {
                    index,
                    got_h,
                    got_w,
                    want_h,
                    want_w,
                });
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

pub fn save_video(dir: &Path, frames: &[Frame]) -> Result<(), VideoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, f) in frames.iter().enumerate() {
        write_rgb_png(&dir.join(format!("{i:05}.png")), f.view())?;
    }
    Ok(())
}
