//! Frame sources and per-second windowing.
//!
//! A clip of `T` frames at `f` fps yields `S = floor(T / f)` whole seconds.
//! Second `s` (1-based) owns frames `(s-1)f+1 ..= sf`; trailing frames past
//! `S*f` belong to no window.
//!
//! Two source layouts are supported: a directory of `frame_%06d.png` files
//! numbered from 1, and a headerless RGB24 stream `<name>.rgb24` with a JSON
//! sidecar `<name>.json`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One decoded RGB image. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    index: usize,
    width: u32,
    height: u32,
    timestamp_s: f64,
    pixels: Vec<u8>,
}

impl Frame {
    /// Builds a frame, checking that the buffer is exactly `width * height * 3` bytes.
    pub fn new(index: usize, width: u32, height: u32, timestamp_s: f64, pixels: Vec<u8>) -> Result<Self> {
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::BadParameter(format!(
                "frame {index}: pixel buffer has {} bytes, {width}x{height} RGB needs {expected}",
                pixels.len()
            )));
        }
        if index == 0 {
            return Err(Error::BadParameter("frame indices are 1-based".into()));
        }
        Ok(Self {
            index,
            width,
            height,
            timestamp_s,
            pixels,
        })
    }

    /// Frame at position `index` of a clip running at `fps`, timestamped `(index-1)/fps`.
    pub fn at_rate(index: usize, fps: u32, width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        let ts = (index.saturating_sub(1)) as f64 / fps.max(1) as f64;
        Self::new(index, width, height, ts, pixels)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn timestamp_s(&self) -> f64 {
        self.timestamp_s
    }

    /// Row-major interleaved RGB bytes.
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }
}

/// Frame rate and length of a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub fps: u32,
    pub total_frames: usize,
}

impl ClipMeta {
    pub fn new(fps: u32, total_frames: usize) -> Result<Self> {
        if fps == 0 {
            return Err(Error::BadParameter("fps must be greater than zero".into()));
        }
        Ok(Self { fps, total_frames })
    }

    /// Number of whole seconds, `floor(T / f)`.
    pub fn seconds(&self) -> usize {
        self.total_frames / self.fps as usize
    }

    /// Frames past the last whole second; these are never pooled.
    pub fn dropped_frames(&self) -> usize {
        self.total_frames - self.seconds() * self.fps as usize
    }
}

/// The `f` consecutive frames of one wall-clock second.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondWindow {
    second_index: usize,
    frames: Vec<Frame>,
}

impl SecondWindow {
    /// Validates that `frames` are exactly indices `(s-1)f+1 ..= sf` with `f = frames.len()`,
    /// all of one size.
    pub fn new(second_index: usize, frames: Vec<Frame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptyWindow);
        }
        if second_index == 0 {
            return Err(Error::BadParameter("second indices are 1-based".into()));
        }
        let f = frames.len();
        let first = (second_index - 1) * f + 1;
        let (w, h) = frames[0].dims();
        for (offset, frame) in frames.iter().enumerate() {
            if frame.index() != first + offset {
                return Err(Error::SourceGap {
                    expected: first + offset,
                    found: frame.index(),
                });
            }
            if frame.dims() != (w, h) {
                return Err(Error::DimensionMismatch {
                    index: frame.index(),
                    want_w: w,
                    want_h: h,
                    got_w: frame.width(),
                    got_h: frame.height(),
                });
            }
        }
        Ok(Self { second_index, frames })
    }

    pub fn second_index(&self) -> usize {
        self.second_index
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn fps(&self) -> usize {
        self.frames.len()
    }

    pub fn dims(&self) -> (u32, u32) {
        self.frames[0].dims()
    }

    /// The frame with index `s*f`.
    pub fn last(&self) -> &Frame {
        self.frames.last().expect("window is never empty")
    }
}

/// JSON sidecar describing a raw RGB24 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    pub frames: usize,
}

enum SourceKind {
    Directory { files: Vec<PathBuf> },
    Raw { reader: BufReader<File>, path: PathBuf },
}

/// Sequential reader yielding frames in index order.
pub struct FrameStream {
    kind: SourceKind,
    meta: ClipMeta,
    dims: Option<(u32, u32)>,
    next_index: usize,
    readable: usize,
}

/// Opens an image directory or a `.rgb24` stream.
///
/// For directories `fps` is required. For raw streams the sidecar's fps is
/// used, and a conflicting `fps` argument is rejected.
pub fn open_frame_source(path: &Path, fps: Option<u32>) -> Result<FrameStream> {
    if path.is_dir() {
        let fps =
            fps.ok_or_else(|| Error::MetaMissing(format!("fps must be given for image directory {}", path.display())))?;
        let files = numbered_frames(path)?;
        let meta = ClipMeta::new(fps, files.len())?;
        Ok(FrameStream {
            readable: files.len(),
            kind: SourceKind::Directory { files },
            meta,
            dims: None,
            next_index: 1,
        })
    } else {
        let sidecar_path = path.with_extension("json");
        let sidecar = read_sidecar(&sidecar_path)?;
        if let Some(f) = fps {
            if f != sidecar.fps {
                return Err(Error::BadParameter(format!(
                    "requested fps {f} conflicts with sidecar fps {}",
                    sidecar.fps
                )));
            }
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len() as usize;
        let frame_bytes = sidecar.width as usize * sidecar.height as usize * 3;
        if frame_bytes == 0 {
            return Err(Error::BadParameter("raw stream frames have zero area".into()));
        }
        if !len.is_multiple_of(frame_bytes) {
            return Err(Error::PartialFrame {
                trailing: len % frame_bytes,
            });
        }
        let available = len / frame_bytes;
        if available < sidecar.frames {
            log::warn!(
                "{} holds {available} frames but its sidecar declares {}",
                path.display(),
                sidecar.frames
            );
        }
        let meta = ClipMeta::new(sidecar.fps, sidecar.frames)?;
        Ok(FrameStream {
            kind: SourceKind::Raw {
                reader: BufReader::new(file),
                path: path.to_path_buf(),
            },
            meta,
            dims: Some((sidecar.width, sidecar.height)),
            next_index: 1,
            readable: available.min(sidecar.frames),
        })
    }
}

fn read_sidecar(path: &Path) -> Result<RawSidecar> {
    if !path.exists() {
        return Err(Error::MetaMissing(format!("sidecar {} not found", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Lists `frame_NNNNNN.png` files, requiring contiguous numbering from 1.
fn numbered_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut numbered = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(digits) = name.strip_prefix("frame_").and_then(|n| n.strip_suffix(".png")) else {
            continue;
        };
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let n: usize = digits
            .parse()
            .map_err(|_| Error::BadParameter(format!("bad frame name {name}")))?;
        numbered.push((n, entry.path()));
    }
    numbered.sort();
    for (pos, (n, _)) in numbered.iter().enumerate() {
        if *n != pos + 1 {
            return Err(Error::SourceGap {
                expected: pos + 1,
                found: *n,
            });
        }
    }
    Ok(numbered.into_iter().map(|(_, p)| p).collect())
}

impl FrameStream {
    pub fn meta(&self) -> ClipMeta {
        self.meta
    }

    fn read_next(&mut self) -> Result<Frame> {
        let index = self.next_index;
        let fps = self.meta.fps;
        let frame = match &mut self.kind {
            SourceKind::Directory { files } => {
                let path = &files[index - 1];
                let (w, h, pixels) = load_png(path)?;
                if let Some((dw, dh)) = self.dims {
                    if (w, h) != (dw, dh) {
                        return Err(Error::DimensionMismatch {
                            index,
                            want_w: dw,
                            want_h: dh,
                            got_w: w,
                            got_h: h,
                        });
                    }
                } else {
                    self.dims = Some((w, h));
                }
                Frame::at_rate(index, fps, w, h, pixels)?
            }
            SourceKind::Raw { reader, path } => {
                let (w, h) = self.dims.expect("raw streams carry dimensions");
                let mut buf = vec![0u8; w as usize * h as usize * 3];
                reader.read_exact(&mut buf).map_err(|e| Error::io(path.as_path(), e))?;
                Frame::at_rate(index, fps, w, h, buf)?
            }
        };
        self.next_index += 1;
        Ok(frame)
    }
}

impl Iterator for FrameStream {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next_index > self.readable {
            return None;
        }
        let item = self.read_next();
        if item.is_err() {
            // stop after the first failure
            self.next_index = self.readable + 1;
        }
        Some(item)
    }
}

/// Groups a frame iterator into consecutive [`SecondWindow`]s.
///
/// Yields exactly `meta.seconds()` windows and never reads past frame `S*f`.
pub struct Windows<I> {
    frames: I,
    fps: usize,
    seconds: usize,
    emitted: usize,
    consumed: usize,
    failed: bool,
}

impl<I> Windows<I>
where
    I: Iterator<Item = Result<Frame>>,
{
    pub fn new(frames: I, meta: ClipMeta) -> Self {
        Self {
            frames,
            fps: meta.fps as usize,
            seconds: meta.seconds(),
            emitted: 0,
            consumed: 0,
            failed: false,
        }
    }
}

impl<I> Iterator for Windows<I>
where
    I: Iterator<Item = Result<Frame>>,
{
    type Item = Result<SecondWindow>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.emitted == self.seconds {
            return None;
        }
        let mut frames = Vec::with_capacity(self.fps);
        while frames.len() < self.fps {
            match self.frames.next() {
                Some(Ok(frame)) => {
                    self.consumed += 1;
                    frames.push(frame);
                }
                Some(Err(e)) => {
                    self.failed = true;
                    return Some(Err(e));
                }
                None => {
                    self.failed = true;
                    return Some(Err(Error::TruncatedClip {
                        needed: self.seconds * self.fps,
                        got: self.consumed,
                        seconds: self.seconds,
                    }));
                }
            }
        }
        self.emitted += 1;
        let window = SecondWindow::new(self.emitted, frames);
        if window.is_err() {
            self.failed = true;
        }
        Some(window)
    }
}

/// Collects all `S` windows of a stream.
pub fn windows<I>(stream: I, meta: ClipMeta) -> Result<Vec<SecondWindow>>
where
    I: IntoIterator<Item = Result<Frame>>,
{
    Windows::new(stream.into_iter(), meta).collect()
}

pub fn load_png(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok((w, h, rgb.into_raw()))
}

pub fn save_png(path: &Path, width: u32, height: u32, pixels: &[u8]) -> Result<()> {
    image::save_buffer_with_format(
        path,
        pixels,
        width,
        height,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// File name of frame `index` inside an image directory source.
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

/// Writes frames as a `.rgb24` stream plus sidecar. Frames must share dimensions.
pub fn write_raw_stream(path: &Path, fps: u32, frames: &[Frame]) -> Result<()> {
    let (width, height) = frames.first().map(Frame::dims).unwrap_or((0, 0));
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for frame in frames {
        if frame.dims() != (width, height) {
            return Err(Error::DimensionMismatch {
                index: frame.index(),
                want_w: width,
                want_h: height,
                got_w: frame.width(),
                got_h: frame.height(),
            });
        }
        out.write_all(frame.pixels()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    let sidecar = RawSidecar {
        width,
        height,
        fps,
        frames: frames.len(),
    };
    let sidecar_path = path.with_extension("json");
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::json("sidecar", e))?;
    std::fs::write(&sidecar_path, text).map_err(|e| Error::io(&sidecar_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(index: usize, fps: u32, value: u8) -> Frame {
        Frame::at_rate(index, fps, 2, 2, vec![value; 12]).unwrap()
    }

    fn clip(total: usize, fps: u32) -> Vec<Result<Frame>> {
        (1..=total).map(|i| Ok(solid(i, fps, (i % 256) as u8))).collect()
    }

    #[test]
    fn buffer_length_checked() {
        assert!(Frame::new(1, 2, 2, 0.0, vec![0; 11]).is_err());
        assert!(Frame::new(0, 1, 1, 0.0, vec![0; 3]).is_err());
    }

    #[test]
    fn seconds_floor() {
        assert_eq!(ClipMeta::new(24, 48).unwrap().seconds(), 2);
        assert_eq!(ClipMeta::new(24, 1440).unwrap().seconds(), 60);
        let m = ClipMeta::new(24, 25).unwrap();
        assert_eq!(m.seconds(), 1);
        assert_eq!(m.dropped_frames(), 1);
        assert!(ClipMeta::new(0, 10).is_err());
    }

    #[test]
    fn window_ranges() {
        let meta = ClipMeta::new(24, 48).unwrap();
        let ws = windows(clip(48, 24), meta).unwrap();
        assert_eq!(ws.len(), 2);
        assert_eq!(ws[0].frames().first().unwrap().index(), 1);
        assert_eq!(ws[0].frames().last().unwrap().index(), 24);
        assert_eq!(ws[1].frames().first().unwrap().index(), 25);
        assert_eq!(ws[1].last().index(), 48);
    }

    #[test]
    fn five_minute_clip_has_300_windows() {
        let meta = ClipMeta::new(24, 300 * 24).unwrap();
        let ws = windows(clip(300 * 24, 24), meta).unwrap();
        assert_eq!(ws.len(), 300);
        assert_eq!(ws[299].second_index(), 300);
    }

    #[test]
    fn empty_clip_has_no_windows() {
        let meta = ClipMeta::new(24, 0).unwrap();
        assert!(windows(Vec::new(), meta).unwrap().is_empty());
    }

    #[test]
    fn trailing_frame_dropped() {
        let meta = ClipMeta::new(24, 25).unwrap();
        let ws = windows(clip(25, 24), meta).unwrap();
        assert_eq!(ws.len(), 1);
        assert!(ws.iter().all(|w| w.frames().iter().all(|f| f.index() <= 24)));
    }

    #[test]
    fn short_stream_is_truncated() {
        let meta = ClipMeta::new(24, 48).unwrap();
        let err = windows(clip(30, 24), meta).unwrap_err();
        assert!(matches!(
            err,
            Error::TruncatedClip {
                needed: 48,
                got: 30,
                ..
            }
        ));
    }

    #[test]
    fn window_rejects_out_of_place_frames() {
        let frames = vec![solid(2, 2, 0), solid(3, 2, 0)];
        assert!(matches!(SecondWindow::new(1, frames), Err(Error::SourceGap { .. })));
    }

    #[test]
    fn directory_source_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for i in 1..=48 {
            let px = vec![i as u8; 12];
            save_png(&dir.path().join(frame_file_name(i)), 2, 2, &px).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let stream = open_frame_source(dir.path(), Some(24)).unwrap();
        let meta = stream.meta();
        assert_eq!(meta.total_frames, 48);
        assert_eq!(meta.seconds(), 2);
        let frames: Vec<Frame> = stream.collect::<Result<_>>().unwrap();
        assert_eq!(frames.len(), 48);
        assert_eq!(frames[47].pixels(), &[48u8; 12][..]);
        assert!((frames[24].timestamp_s() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn directory_gap_detected() {
        let dir = tempfile::tempdir().unwrap();
        for i in [1usize, 2, 4] {
            save_png(&dir.path().join(frame_file_name(i)), 1, 1, &[0, 0, 0]).unwrap();
        }
        let err = open_frame_source(dir.path(), Some(1)).err().unwrap();
        assert!(matches!(err, Error::SourceGap { expected: 3, found: 4 }));
    }

    #[test]
    fn directory_needs_fps() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            open_frame_source(dir.path(), None),
            Err(Error::MetaMissing(_))
        ));
    }

    #[test]
    fn directory_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save_png(&dir.path().join(frame_file_name(1)), 1, 1, &[0; 3]).unwrap();
        save_png(&dir.path().join(frame_file_name(2)), 2, 1, &[0; 6]).unwrap();
        let res: Result<Vec<Frame>> = open_frame_source(dir.path(), Some(2)).unwrap().collect();
        assert!(matches!(res, Err(Error::DimensionMismatch { index: 2, .. })));
    }

    #[test]
    fn raw_stream_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.rgb24");
        let frames: Vec<Frame> = (1..=1440).map(|i| solid(i, 24, (i % 251) as u8)).collect();
        write_raw_stream(&path, 24, &frames).unwrap();
        let stream = open_frame_source(&path, None).unwrap();
        let meta = stream.meta();
        assert_eq!(meta.seconds(), 60);
        let ws = windows(stream, meta).unwrap();
        assert_eq!(ws.len(), 60);
        assert_eq!(ws[59].last().pixels(), frames[1439].pixels());
    }

    #[test]
    fn raw_stream_shorter_than_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.rgb24");
        let frames: Vec<Frame> = (1..=30).map(|i| solid(i, 24, 1)).collect();
        write_raw_stream(&path, 24, &frames).unwrap();
        let mut sidecar: RawSidecar =
            serde_json::from_str(&std::fs::read_to_string(path.with_extension("json")).unwrap()).unwrap();
        sidecar.frames = 48;
        std::fs::write(path.with_extension("json"), serde_json::to_string(&sidecar).unwrap()).unwrap();
        let stream = open_frame_source(&path, None).unwrap();
        let meta = stream.meta();
        assert!(matches!(
            windows(stream, meta),
            Err(Error::TruncatedClip {
                needed: 48,
                got: 30,
                ..
            })
        ));
    }

    #[test]
    fn raw_stream_without_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.rgb24");
        std::fs::write(&path, [0u8; 12]).unwrap();
        assert!(matches!(open_frame_source(&path, None), Err(Error::MetaMissing(_))));
    }

    #[test]
    fn raw_stream_partial_frame_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.rgb24");
        write_raw_stream(&path, 1, &[solid(1, 1, 7)]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(1);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            open_frame_source(&path, None),
            Err(Error::PartialFrame { trailing: 1 })
        ));
    }

    #[test]
    fn raw_stream_fps_conflict() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.rgb24");
        write_raw_stream(&path, 24, &[solid(1, 24, 7)]).unwrap();
        assert!(open_frame_source(&path, Some(30)).is_err());
        assert!(open_frame_source(&path, Some(24)).is_ok());
    }
}
