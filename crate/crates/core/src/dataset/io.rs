use std::fs;
use std::path::{Path, PathBuf};

use super::FrameSequence;
use crate::colorspace::RgbFrame;
use crate::error::{Error, Result};

const FRAME_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];

/// `frame_%06d.png`, numbered from 1.
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{:06}.png", index + 1)
}

pub fn is_frame_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Loads every image in `dir` in lexicographic filename order. Non-image
/// files are skipped.
pub fn load_frame_sequence(dir: &Path) -> Result<FrameSequence> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if is_frame_file(&path) {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::NoFrames(dir.to_path_buf()));
    }
    paths.sort();
    let mut frames = Vec::with_capacity(paths.len());
    for path in &paths {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?
            .into_rgb8();
        let (w, h) = img.dimensions();
        frames.push(RgbFrame::new(w as usize, h as usize, img.into_raw())?);
    }
    let source_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    FrameSequence::new(frames, 10.0, source_id).map_err(|e| match e {
        Error::Dimension(msg) => Error::Dimension(format!("{}: {msg}", dir.display())),
        other => other,
    })
}

/// Writes the sequence as `frame_%06d.png` files, creating `dir` if needed.
pub fn write_frame_sequence(seq: &FrameSequence, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    seq.frames
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            let path = dir.join(frame_file_name(i));
            let buf = image::RgbImage::from_raw(frame.width() as u32, frame.height() as u32, frame.data().to_vec())
                .expect("frame buffer length matches its dimensions");
            buf.save(&path).map_err(|source| match source {
                image::ImageError::IoError(e) => Error::io(&path, e),
                source => Error::Image {
                    path: path.clone(),
                    source,
                },
            })?;
            Ok(path)
        })
        .collect()
}
