//! Frame-sequence directories.
//!
//! A rendered take can be exchanged as a directory of flat binary
//! frames next to a text manifest:
//!
//! * `manifest.txt` — one line per frame: `<filename> <timestamp_us>`,
//!   in time order.
//! * `shape.txt` — a single `<width> <height>` line.
//! * `<stem>.gray` — row-major `f32` little-endian linear brightness,
//!   `width * height` values.
//! * `<stem>.mask` — row-major `u8` ownership labels (class indices)
//!   for the same frame; optional as a set — either every frame has a
//!   mask or none does.
//!
//! Brightness is stored linear; the event simulator's log mapping is
//! applied by whoever consumes the frames. Values pass through `f32`,
//! so a write/read cycle quantizes brightness accordingly.

use crate::container::FormatError;
use evpose_core::event::SegLabel;
use evpose_core::sim::{Frame, GrayImage};
use std::io::Write;
use std::path::Path;

/// Writes a take as a frames directory, masks included.
pub fn write_frames_dir(dir: &Path, frames: &[Frame]) -> Result<(), FormatError> {
    let io = |e: std::io::Error| FormatError::Io { path: dir.display().to_string(), source: e };
    std::fs::create_dir_all(dir).map_err(io)?;
    let (w, h) = match frames.first() {
        Some(f) => (f.values.width, f.values.height),
        None => (0, 0),
    };
    std::fs::write(dir.join("shape.txt"), format!("{w} {h}\n")).map_err(io)?;
    let mut manifest = String::new();
    for (i, frame) in frames.iter().enumerate() {
        let stem = format!("{i:06}");
        manifest.push_str(&format!("{stem}.gray {}\n", frame.t_us));
        let mut bytes = Vec::with_capacity(frame.values.data.len() * 4);
        for v in &frame.values.data {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        std::fs::write(dir.join(format!("{stem}.gray")), &bytes).map_err(io)?;
        let mask: Vec<u8> = frame.ownership.iter().map(|l| l.index() as u8).collect();
        std::fs::write(dir.join(format!("{stem}.mask")), &mask).map_err(io)?;
    }
    let mut f = std::fs::File::create(dir.join("manifest.txt")).map_err(io)?;
    f.write_all(manifest.as_bytes()).map_err(io)?;
    Ok(())
}

/// Reads a frames directory back into frames.
///
/// Masks are read when present; frames without one get all-background
/// ownership.
pub fn read_frames_dir(dir: &Path) -> Result<Vec<Frame>, FormatError> {
    let p = |path: &Path| path.display().to_string();
    let io = |path: &Path| {
        let shown = p(path);
        move |e: std::io::Error| FormatError::Io { path: shown.clone(), source: e }
    };
    let shape_path = dir.join("shape.txt");
    let shape = std::fs::read_to_string(&shape_path).map_err(io(&shape_path))?;
    let mut parts = shape.split_whitespace();
    let bad_shape = || FormatError::BadHeader { path: p(&shape_path), line: shape.trim().to_string() };
    let w: u16 = parts.next().ok_or_else(bad_shape)?.parse().map_err(|_| bad_shape())?;
    let h: u16 = parts.next().ok_or_else(bad_shape)?.parse().map_err(|_| bad_shape())?;
    if parts.next().is_some() {
        return Err(bad_shape());
    }
    let pixels = w as usize * h as usize;

    let manifest_path = dir.join("manifest.txt");
    let manifest = std::fs::read_to_string(&manifest_path).map_err(io(&manifest_path))?;
    let mut frames = Vec::new();
    for (lineno, line) in manifest.lines().enumerate() {
        let bad = || FormatError::BadHeader { path: p(&manifest_path), line: line.to_string() };
        let (name, t) = line.split_once(' ').ok_or_else(bad)?;
        let t_us: u64 = t.trim().parse().map_err(|_| bad())?;
        let frame_path = dir.join(name);
        let bytes = std::fs::read(&frame_path).map_err(io(&frame_path))?;
        if bytes.len() != pixels * 4 {
            return Err(FormatError::BadValue {
                path: p(&frame_path),
                index: lineno,
                message: format!("expected {} brightness bytes, found {}", pixels * 4, bytes.len()),
            });
        }
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        let mask_path = dir.join(name.replace(".gray", ".mask"));
        let ownership = if mask_path.exists() {
            let mask = std::fs::read(&mask_path).map_err(io(&mask_path))?;
            if mask.len() != pixels {
                return Err(FormatError::BadValue {
                    path: p(&mask_path),
                    index: lineno,
                    message: format!("expected {pixels} mask bytes, found {}", mask.len()),
                });
            }
            mask.iter()
                .enumerate()
                .map(|(i, b)| {
                    SegLabel::from_index(*b).ok_or_else(|| FormatError::BadValue {
                        path: p(&mask_path),
                        index: i,
                        message: format!("mask byte {b} is not a class index"),
                    })
                })
                .collect::<Result<Vec<SegLabel>, FormatError>>()?
        } else {
            vec![SegLabel::Background; pixels]
        };
        frames.push(Frame {
            t_us,
            values: GrayImage { width: w, height: h, data },
            ownership,
        });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn take_fixture() -> Vec<Frame> {
        (0..3)
            .map(|k| {
                let data: Vec<f64> = (0..12).map(|i| 0.25 + 0.03125 * (i + k) as f64).collect();
                let ownership = (0..12)
                    .map(|i| SegLabel::from_index(((i + k as usize) % 4) as u8).unwrap())
                    .collect();
                Frame {
                    t_us: 5000 * k as u64,
                    values: GrayImage { width: 4, height: 3, data },
                    ownership,
                }
            })
            .collect()
    }

    #[test]
    fn frame_directory_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let frames = take_fixture();
        write_frames_dir(dir.path(), &frames).unwrap();
        let back = read_frames_dir(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in back.iter().zip(&frames) {
            assert_eq!(a.t_us, b.t_us);
            assert_eq!(a.ownership, b.ownership);
            // Brightness passed through f32 exactly for these values.
            assert_eq!(a.values.data, b.values.data);
        }
        let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert_eq!(manifest, "000000.gray 0\n000001.gray 5000\n000002.gray 10000\n");
    }

    #[test]
    fn missing_masks_read_as_background() {
        let dir = tempfile::tempdir().unwrap();
        write_frames_dir(dir.path(), &take_fixture()).unwrap();
        std::fs::remove_file(dir.path().join("000001.mask")).unwrap();
        let back = read_frames_dir(dir.path()).unwrap();
        assert!(back[1].ownership.iter().all(|l| *l == SegLabel::Background));
        assert!(back[0].ownership.iter().any(|l| *l != SegLabel::Background));
    }

    #[test]
    fn wrong_sizes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_frames_dir(dir.path(), &take_fixture()).unwrap();
        let frame = dir.path().join("000000.gray");
        let mut bytes = std::fs::read(&frame).unwrap();
        bytes.pop();
        std::fs::write(&frame, &bytes).unwrap();
        assert!(matches!(read_frames_dir(dir.path()), Err(FormatError::BadValue { .. })));
    }
}
