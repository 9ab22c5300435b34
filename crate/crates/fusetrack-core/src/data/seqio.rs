//! Sequence directory IO: ordered PNG frames plus a `groundtruth.txt`
//! with one `x,y,w,h` line per frame.

use std::path::Path;

use super::Sequence;
use crate::bbox::BBox;
use crate::image::Image;

#[derive(Debug, thiserror::Error)]
pub enum SeqIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: String,
        source: image::ImageError,
    },
    #[error("missing groundtruth.txt in {0}")]
    MissingGt(String),
    #[error("malformed ground truth at line {line}: {text:?}")]
    BadGtLine { line: usize, text: String },
    #[error("{frames} frames but {gt_lines} ground-truth lines")]
    CountMismatch { frames: usize, gt_lines: usize },
    #[error("no frames found in {0}")]
    NoFrames(String),
}

fn io_err(path: &Path, source: std::io::Error) -> SeqIoError {
    SeqIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Tolerates CRLF line endings, surrounding whitespace and blank trailing
/// lines; anything else malformed reports its 1-based line number.
pub fn parse_groundtruth(text: &str) -> Result<Vec<BBox>, SeqIoError> {
    let mut boxes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || SeqIoError::BadGtLine {
            line: i + 1,
            text: raw.to_string(),
        };
        if parts.len() != 4 {
            return Err(bad());
        }
        let vals: Vec<f64> = parts
            .iter()
            .map(|p| p.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        boxes.push(BBox::new(vals[0], vals[1], vals[2], vals[3]));
    }
    Ok(boxes)
}

/// Load a sequence directory: PNG files in name order, one gt line each.
pub fn load_sequence_dir(dir: &Path) -> Result<Sequence, SeqIoError> {
    let gt_path = dir.join("groundtruth.txt");
    if !gt_path.exists() {
        return Err(SeqIoError::MissingGt(dir.display().to_string()));
    }
    let gt_text = std::fs::read_to_string(&gt_path).map_err(|e| io_err(&gt_path, e))?;
    let gt = parse_groundtruth(&gt_text)?;

    let mut frame_paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    frame_paths.sort();
    if frame_paths.is_empty() {
        return Err(SeqIoError::NoFrames(dir.display().to_string()));
    }
    if frame_paths.len() != gt.len() {
        return Err(SeqIoError::CountMismatch {
            frames: frame_paths.len(),
            gt_lines: gt.len(),
        });
    }
    let mut frames = Vec::with_capacity(frame_paths.len());
    for p in &frame_paths {
        let img = image::open(p)
            .map_err(|e| SeqIoError::Image {
                path: p.display().to_string(),
                source: e,
            })?
            .to_rgb8();
        frames.push(Image::from_u8_rgb(
            img.width() as usize,
            img.height() as usize,
            img.as_raw(),
        ));
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());
    Ok(Sequence { name, frames, gt })
}

/// Write a sequence out in the same layout [`load_sequence_dir`] reads.
pub fn save_sequence_dir(seq: &Sequence, dir: &Path) -> Result<(), SeqIoError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut gt_text = String::new();
    for (i, frame) in seq.frames.iter().enumerate() {
        let path = dir.join(format!("{:05}.png", i + 1));
        let buf = frame.to_u8_rgb();
        image::save_buffer(
            &path,
            &buf,
            frame.width as u32,
            frame.height as u32,
            image::ColorType::Rgb8,
        )
        .map_err(|e| SeqIoError::Image {
            path: path.display().to_string(),
            source: e,
        })?;
        let b = &seq.gt[i];
        gt_text.push_str(&format!("{},{},{},{}\n", b.x, b.y, b.w, b.h));
    }
    let gt_path = dir.join("groundtruth.txt");
    std::fs::write(&gt_path, gt_text).map_err(|e| io_err(&gt_path, e))?;
    Ok(())
}
