//! Binary file containers.
//!
//! Three on-disk formats share this module:
//!
//! * **Event streams** (`EVST`): a 16-byte header — magic, `u16`
//!   sensor width, `u16` height, `u32` record-count hint, 4 reserved
//!   zero bytes — followed by packed little-endian records of
//!   `(u16 x, u16 y, u64 t_us, i8 polarity)`, 13 bytes each.
//! * **Event clouds** (`EVCL`): the same 16-byte header with its own
//!   magic, then a 16-byte window descriptor (`u64` start, `u64`
//!   length, microseconds) and the cloud body: `count` rows of five
//!   `f32` features `(x, y, t_mean, pos_frac, neg_frac)`, then `count`
//!   label bytes (class index, `255` for an unlabeled cloud), then
//!   `count` padding flags.
//! * **Named arrays** (`EVPA`): a line-oriented text header — format
//!   tag, `meta` key/value lines, one `array <name> <rows> <cols>`
//!   line per array, a lone `DATA` line — followed by the arrays'
//!   `f32` little-endian payloads in declared order. Checkpoints and
//!   hand assets are both stored this way.
//!
//! All multi-byte values are little-endian. Readers validate magics,
//! counts and enum ranges and fail with a [`FormatError`] naming file
//! and offence rather than guessing.

use evpose_core::event::{EventCloud, EventPoint, EventRecord, SegLabel};
use evpose_core::net::NamedArray;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC_EVENTS: [u8; 4] = *b"EVST";
const MAGIC_CLOUD: [u8; 4] = *b"EVCL";
const ARRAYS_TAG: &str = "EVPA 1";
const HEADER_LEN: usize = 16;
const RECORD_LEN: usize = 13;
const FEATURES: usize = 5;
const NO_LABELS: u8 = 255;

/// A malformed or inconsistent container file.
#[derive(Debug)]
pub enum FormatError {
    /// The underlying read or write failed.
    Io {
        /// File involved.
        path: String,
        /// OS error.
        source: std::io::Error,
    },
    /// The file does not start with the expected magic.
    BadMagic {
        /// File involved.
        path: String,
        /// Expected magic bytes.
        expected: [u8; 4],
        /// Bytes actually found.
        got: [u8; 4],
    },
    /// The file ends mid-structure.
    Truncated {
        /// File involved.
        path: String,
        /// What was being read.
        what: &'static str,
    },
    /// A value fell outside its domain.
    BadValue {
        /// File involved.
        path: String,
        /// Index of the offending record or row.
        index: usize,
        /// What was wrong.
        message: String,
    },
    /// A text header line could not be parsed.
    BadHeader {
        /// File involved.
        path: String,
        /// The offending line.
        line: String,
    },
}

impl FormatError {
    fn io(path: &Path, source: std::io::Error) -> FormatError {
        FormatError::Io { path: path.display().to_string(), source }
    }
}

impl core::fmt::Display for FormatError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            FormatError::Io { path, source } => write!(f, "{path}: {source}"),
            FormatError::BadMagic { path, expected, got } => write!(
                f,
                "{path}: expected magic {:?}, found {:?}",
                core::str::from_utf8(expected).unwrap_or("?"),
                got
            ),
            FormatError::Truncated { path, what } => {
                write!(f, "{path}: file ends inside {what}")
            }
            FormatError::BadValue { path, index, message } => {
                write!(f, "{path}: entry {index}: {message}")
            }
            FormatError::BadHeader { path, line } => {
                write!(f, "{path}: cannot parse header line {line:?}")
            }
        }
    }
}

impl std::error::Error for FormatError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            FormatError::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

fn write_header(out: &mut impl Write, magic: [u8; 4], w: u16, h: u16, count: u32) -> std::io::Result<()> {
    out.write_all(&magic)?;
    out.write_all(&w.to_le_bytes())?;
    out.write_all(&h.to_le_bytes())?;
    out.write_all(&count.to_le_bytes())?;
    out.write_all(&[0u8; 4])
}

fn read_header(
    data: &[u8],
    path: &Path,
    magic: [u8; 4],
) -> Result<(u16, u16, u32), FormatError> {
    let p = || path.display().to_string();
    if data.len() < HEADER_LEN {
        return Err(FormatError::Truncated { path: p(), what: "header" });
    }
    if data[0..4] != magic {
        return Err(FormatError::BadMagic {
            path: p(),
            expected: magic,
            got: [data[0], data[1], data[2], data[3]],
        });
    }
    let w = u16::from_le_bytes([data[4], data[5]]);
    let h = u16::from_le_bytes([data[6], data[7]]);
    let count = u32::from_le_bytes([data[8], data[9], data[10], data[11]]);
    Ok((w, h, count))
}

/// An event stream with the sensor geometry it was recorded on.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamFile {
    /// Sensor width in pixels.
    pub width: u16,
    /// Sensor height in pixels.
    pub height: u16,
    /// Events in file order.
    pub events: Vec<EventRecord>,
}

/// Writes an event stream file.
pub fn write_events(
    path: &Path,
    width: u16,
    height: u16,
    events: &[EventRecord],
) -> Result<(), FormatError> {
    let file = std::fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let run = |out: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
        write_header(out, MAGIC_EVENTS, width, height, events.len().min(u32::MAX as usize) as u32)?;
        for e in events {
            out.write_all(&e.x.to_le_bytes())?;
            out.write_all(&e.y.to_le_bytes())?;
            out.write_all(&e.t_us.to_le_bytes())?;
            out.write_all(&e.polarity.to_le_bytes())?;
        }
        out.flush()
    };
    run(&mut out).map_err(|e| FormatError::io(path, e))
}

/// Reads an event stream file.
pub fn read_events(path: &Path) -> Result<StreamFile, FormatError> {
    let data = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    let (width, height, _hint) = read_header(&data, path, MAGIC_EVENTS)?;
    let body = &data[HEADER_LEN..];
    if body.len() % RECORD_LEN != 0 {
        return Err(FormatError::Truncated { path: path.display().to_string(), what: "event record" });
    }
    let mut events = Vec::with_capacity(body.len() / RECORD_LEN);
    for (i, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let x = u16::from_le_bytes([rec[0], rec[1]]);
        let y = u16::from_le_bytes([rec[2], rec[3]]);
        let t_us = u64::from_le_bytes(rec[4..12].try_into().expect("8 bytes"));
        let polarity = rec[12] as i8;
        if polarity != 1 && polarity != -1 {
            return Err(FormatError::BadValue {
                path: path.display().to_string(),
                index: i,
                message: format!("polarity must be +1 or -1, got {polarity}"),
            });
        }
        if x >= width || y >= height {
            return Err(FormatError::BadValue {
                path: path.display().to_string(),
                index: i,
                message: format!("pixel ({x}, {y}) outside {width}x{height} sensor"),
            });
        }
        events.push(EventRecord { x, y, t_us, polarity });
    }
    Ok(StreamFile { width, height, events })
}

/// Writes an event cloud file.
pub fn write_cloud(
    path: &Path,
    width: u16,
    height: u16,
    cloud: &EventCloud,
) -> Result<(), FormatError> {
    let file = std::fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let run = |out: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
        write_header(out, MAGIC_CLOUD, width, height, cloud.points.len() as u32)?;
        out.write_all(&cloud.window_start_us.to_le_bytes())?;
        out.write_all(&cloud.window_length_us.to_le_bytes())?;
        for p in &cloud.points {
            for v in [p.x as f32, p.y as f32, p.t_mean as f32, p.pos_frac as f32, p.neg_frac as f32]
            {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        match &cloud.labels {
            Some(labels) => {
                for l in labels {
                    out.write_all(&[l.index() as u8])?;
                }
            }
            None => {
                for _ in &cloud.points {
                    out.write_all(&[NO_LABELS])?;
                }
            }
        }
        for padded in &cloud.padded {
            out.write_all(&[u8::from(*padded)])?;
        }
        out.flush()
    };
    run(&mut out).map_err(|e| FormatError::io(path, e))
}

/// Reads an event cloud file, returning the sensor geometry it was
/// built on alongside the cloud.
pub fn read_cloud(path: &Path) -> Result<(u16, u16, EventCloud), FormatError> {
    let p = || path.display().to_string();
    let data = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    let (width, height, count) = read_header(&data, path, MAGIC_CLOUD)?;
    let count = count as usize;
    let body = &data[HEADER_LEN..];
    let need = 16 + count * (FEATURES * 4 + 2);
    if body.len() != need {
        return Err(FormatError::Truncated { path: p(), what: "cloud body" });
    }
    let window_start_us = u64::from_le_bytes(body[0..8].try_into().expect("8 bytes"));
    let window_length_us = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes"));
    let rows = &body[16..16 + count * FEATURES * 4];
    let labels_at = 16 + count * FEATURES * 4;
    let label_bytes = &body[labels_at..labels_at + count];
    let padded_bytes = &body[labels_at + count..];

    let mut points = Vec::with_capacity(count);
    for (i, row) in rows.chunks_exact(FEATURES * 4).enumerate() {
        let f = |k: usize| f32::from_le_bytes(row[k * 4..k * 4 + 4].try_into().expect("4 bytes"));
        let (x, y) = (f(0), f(1));
        let bad_pixel = |axis: &str, v: f32| FormatError::BadValue {
            path: p(),
            index: i,
            message: format!("{axis} coordinate {v} is not a pixel index"),
        };
        if !(x.fract() == 0.0 && (0.0..=u16::MAX as f32).contains(&x)) {
            return Err(bad_pixel("x", x));
        }
        if !(y.fract() == 0.0 && (0.0..=u16::MAX as f32).contains(&y)) {
            return Err(bad_pixel("y", y));
        }
        points.push(EventPoint {
            x: x as u16,
            y: y as u16,
            t_mean: f64::from(f(2)),
            pos_frac: f64::from(f(3)),
            neg_frac: f64::from(f(4)),
        });
    }
    let labels = if label_bytes.first().copied() == Some(NO_LABELS) || count == 0 {
        if label_bytes.iter().any(|b| *b != NO_LABELS) {
            return Err(FormatError::BadValue {
                path: p(),
                index: 0,
                message: String::from("mixed labeled and unlabeled rows"),
            });
        }
        None
    } else {
        let mut labels = Vec::with_capacity(count);
        for (i, b) in label_bytes.iter().enumerate() {
            let label = SegLabel::from_index(*b).ok_or_else(|| FormatError::BadValue {
                path: p(),
                index: i,
                message: format!("label byte {b} is not a class index"),
            })?;
            labels.push(label);
        }
        Some(labels)
    };
    let padded = padded_bytes.iter().map(|b| *b != 0).collect();
    Ok((width, height, EventCloud { window_start_us, window_length_us, points, labels, padded }))
}

/// A named-array container: free-form metadata plus `f32` arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArraysFile {
    /// Key/value pairs from the text header, in file order.
    pub meta: Vec<(String, String)>,
    /// Arrays in file order.
    pub arrays: Vec<NamedArray>,
}

impl ArraysFile {
    /// First value stored under `key`.
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Writes a named-array container.
pub fn write_arrays(path: &Path, file: &ArraysFile) -> Result<(), FormatError> {
    let out = std::fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut out = BufWriter::new(out);
    let run = |out: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
        writeln!(out, "{ARRAYS_TAG}")?;
        for (key, value) in &file.meta {
            writeln!(out, "meta {key} {value}")?;
        }
        for a in &file.arrays {
            writeln!(out, "array {} {} {}", a.name, a.rows, a.cols)?;
        }
        writeln!(out, "DATA")?;
        for a in &file.arrays {
            for v in &a.data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()
    };
    run(&mut out).map_err(|e| FormatError::io(path, e))
}

/// Reads a named-array container.
pub fn read_arrays(path: &Path) -> Result<ArraysFile, FormatError> {
    let p = || path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header = Vec::new();
    // The header is text up to the DATA line; read byte-wise so the
    // binary payload position stays exact.
    loop {
        let mut byte = [0u8; 1];
        match reader.read_exact(&mut byte) {
            Ok(()) => {}
            Err(_) => return Err(FormatError::Truncated { path: p(), what: "text header" }),
        }
        header.push(byte[0]);
        if header.ends_with(b"\nDATA\n") || header == b"DATA\n" {
            break;
        }
        if header.len() > 1 << 20 {
            return Err(FormatError::Truncated { path: p(), what: "unterminated text header" });
        }
    }
    let text = core::str::from_utf8(&header[..header.len() - 5])
        .map_err(|_| FormatError::BadHeader { path: p(), line: String::from("<non-utf8>") })?;
    let mut lines = text.lines();
    match lines.next() {
        Some(tag) if tag == ARRAYS_TAG => {}
        other => {
            return Err(FormatError::BadHeader {
                path: p(),
                line: other.unwrap_or("<empty>").to_string(),
            })
        }
    }
    let mut out = ArraysFile::default();
    for line in lines {
        if let Some(rest) = line.strip_prefix("meta ") {
            let (key, value) = rest.split_once(' ').unwrap_or((rest, ""));
            out.meta.push((key.to_string(), value.to_string()));
        } else if let Some(rest) = line.strip_prefix("array ") {
            let mut parts = rest.split_whitespace();
            let bad = || FormatError::BadHeader { path: p(), line: line.to_string() };
            let name = parts.next().ok_or_else(bad)?.to_string();
            let rows: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let cols: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if parts.next().is_some() {
                return Err(bad());
            }
            out.arrays.push(NamedArray { name, rows, cols, data: Vec::new() });
        } else {
            return Err(FormatError::BadHeader { path: p(), line: line.to_string() });
        }
    }
    for i in 0..out.arrays.len() {
        let len = out.arrays[i].rows * out.arrays[i].cols;
        let mut bytes = vec![0u8; len * 4];
        reader
            .read_exact(&mut bytes)
            .map_err(|_| FormatError::Truncated { path: p(), what: "array payload" })?;
        out.arrays[i].data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
    }
    let mut rest = [0u8; 1];
    if reader.read(&mut rest).map_err(|e| FormatError::io(path, e))? != 0 {
        return Err(FormatError::BadValue {
            path: p(),
            index: out.arrays.len(),
            message: String::from("trailing bytes after the last declared array"),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn events_fixture() -> Vec<EventRecord> {
        vec![
            EventRecord { x: 0, y: 0, t_us: 0, polarity: 1 },
            EventRecord { x: 345, y: 239, t_us: 17, polarity: -1 },
            EventRecord { x: 12, y: 200, t_us: 1_000_000_000, polarity: 1 },
        ]
    }

    #[test]
    fn event_stream_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("take.evst");
        let events = events_fixture();
        write_events(&path, 346, 240, &events).unwrap();
        let back = read_events(&path).unwrap();
        assert_eq!(back, StreamFile { width: 346, height: 240, events });
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 + 3 * 13);
    }

    #[test]
    fn stream_header_is_pinned_byte_for_byte() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("take.evst");
        write_events(&path, 0x0102, 0x0304, &events_fixture()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"EVST");
        assert_eq!(&bytes[4..8], &[0x02, 0x01, 0x04, 0x03]);
        assert_eq!(&bytes[8..12], &[3, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[0, 0, 0, 0]);
    }

    #[test]
    fn corrupt_streams_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("take.evst");
        write_events(&path, 346, 240, &events_fixture()).unwrap();

        let mut bad_magic = std::fs::read(&path).unwrap();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(read_events(&path), Err(FormatError::BadMagic { .. })));

        let mut truncated = std::fs::read(&path).unwrap();
        truncated[0] = b'E';
        truncated.pop();
        std::fs::write(&path, &truncated).unwrap();
        assert!(matches!(read_events(&path), Err(FormatError::Truncated { .. })));

        let mut zero_polarity = std::fs::read(&path).unwrap();
        zero_polarity.push(0); // completes the cut record with polarity 0
        std::fs::write(&path, &zero_polarity).unwrap();
        assert!(matches!(read_events(&path), Err(FormatError::BadValue { .. })));
    }

    #[test]
    fn labeled_cloud_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.evcl");
        let cloud = EventCloud {
            window_start_us: 5000,
            window_length_us: 2000,
            points: vec![
                EventPoint { x: 3, y: 7, t_mean: 812.5, pos_frac: 0.75, neg_frac: 0.25 },
                EventPoint { x: 40, y: 1, t_mean: 0.0, pos_frac: 0.0, neg_frac: 1.0 },
            ],
            labels: Some(vec![SegLabel::LeftHand, SegLabel::NoClass]),
            padded: vec![false, true],
        };
        write_cloud(&path, 346, 240, &cloud).unwrap();
        let (w, h, back) = read_cloud(&path).unwrap();
        assert_eq!((w, h), (346, 240));
        assert_eq!(back, cloud);
    }

    #[test]
    fn unlabeled_cloud_stays_unlabeled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.evcl");
        let cloud = EventCloud {
            window_start_us: 0,
            window_length_us: 1000,
            points: vec![EventPoint { x: 1, y: 2, t_mean: 3.0, pos_frac: 1.0, neg_frac: 0.0 }],
            labels: None,
            padded: vec![false],
        };
        write_cloud(&path, 64, 64, &cloud).unwrap();
        let (_, _, back) = read_cloud(&path).unwrap();
        assert!(back.labels.is_none());
    }

    #[test]
    fn cloud_fractions_survive_as_f32() {
        // The container stores f32; fractions with small denominators
        // are exact, and t_mean keeps sub-microsecond resolution.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.evcl");
        let cloud = EventCloud {
            window_start_us: 123,
            window_length_us: 2000,
            points: vec![EventPoint {
                x: 345,
                y: 239,
                t_mean: 1999.875,
                pos_frac: 2.0 / 3.0,
                neg_frac: 1.0 / 3.0,
            }],
            labels: Some(vec![SegLabel::Background]),
            padded: vec![false],
        };
        write_cloud(&path, 346, 240, &cloud).unwrap();
        let (_, _, back) = read_cloud(&path).unwrap();
        let p = back.points[0];
        assert_eq!(p.t_mean, 1999.875);
        assert_eq!(p.pos_frac, f64::from(2.0f32 / 3.0));
        assert!((p.pos_frac - 2.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn arrays_file_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        let file = ArraysFile {
            meta: vec![
                (String::from("seed"), String::from("7")),
                (String::from("note"), String::from("two words")),
            ],
            arrays: vec![
                NamedArray {
                    name: String::from("layer.w"),
                    rows: 2,
                    cols: 3,
                    data: vec![1.0, -2.5, 3.25, 0.0, 5.0, -6.75],
                },
                NamedArray { name: String::from("layer.b"), rows: 1, cols: 3, data: vec![0.0; 3] },
            ],
        };
        write_arrays(&path, &file).unwrap();
        let back = read_arrays(&path).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.meta("note"), Some("two words"));
    }

    #[test]
    fn arrays_reject_malformed_headers_and_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");

        std::fs::write(&path, b"EVPB 1\nDATA\n").unwrap();
        assert!(matches!(read_arrays(&path), Err(FormatError::BadHeader { .. })));

        std::fs::write(&path, b"EVPA 1\narray w 2 2\nDATA\n\x00\x00\x00\x00").unwrap();
        assert!(matches!(read_arrays(&path), Err(FormatError::Truncated { .. })));

        std::fs::write(&path, b"EVPA 1\nDATA\n\x00").unwrap();
        assert!(matches!(read_arrays(&path), Err(FormatError::BadValue { .. })));

        std::fs::write(&path, b"EVPA 1\nnoise here\nDATA\n").unwrap();
        assert!(matches!(read_arrays(&path), Err(FormatError::BadHeader { .. })));
    }
}
