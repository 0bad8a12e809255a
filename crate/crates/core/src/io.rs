//! Reading and writing videos: YUV4MPEG2, numbered image sequences and a
//! lossless raw `f64` container.
//!
//! Raw layout: magic `TDVV`, then five little-endian `u32` (version, rows,
//! cols, frames, channels), then the samples as little-endian `f64`, channel
//! by channel, each channel frame-major and row-major within a frame.

use std::cell::Cell;
use std::ffi::OsStr;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;

use crate::error::{Result, VideoError};
use crate::volume::{Dims, MultiChannelVideo, Volume, PEAK};

pub const RAW_MAGIC: &[u8; 4] = b"TDVV";
pub const RAW_VERSION: u32 = 1;
const RAW_HEADER_LEN: usize = 4 + 5 * 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VideoFormat {
    Y4m,
    Raw,
    /// Directory of `frame_NNNN.png`.
    PngSequence,
    /// Directory of `frame_NNNN.pgm` (or `.ppm` for colour).
    PnmSequence,
}

impl VideoFormat {
    /// Parses a name as accepted on the command line.
    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "y4m" => Some(Self::Y4m),
            "raw" | "tdv" | "f64" => Some(Self::Raw),
            "png" => Some(Self::PngSequence),
            "pgm" | "ppm" | "pnm" => Some(Self::PnmSequence),
            _ => None,
        }
    }

    /// Guesses the format from the extension; paths without one are image
    /// sequence directories.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(OsStr::to_str) {
            Some(ext) => Self::from_name(ext).ok_or_else(|| {
                VideoError::Unsupported(format!("unknown extension .{ext} ({})", path.display())).into()
            }),
            None => Ok(Self::PngSequence),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> VideoError + '_ {
    move |source| VideoError::Io { path: path.to_path_buf(), source }
}

fn malformed(path: &Path, reason: impl Into<String>) -> VideoError {
    VideoError::MalformedHeader { path: path.to_path_buf(), reason: reason.into() }
}

/// Rounds to the nearest integer (halves away from zero) and clamps to
/// `[0, 255]`.
pub fn quantize_u8(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.round().clamp(0.0, PEAK) as u8
}

/// Reads a video, choosing the decoder from the path: directories are image
/// sequences, files are dispatched on their extension.
pub fn read_video(path: &Path) -> Result<MultiChannelVideo> {
    if !path.exists() {
        return Err(VideoError::MissingFile(path.to_path_buf()).into());
    }
    if path.is_dir() {
        return read_image_sequence(path);
    }
    match path.extension().and_then(OsStr::to_str).map(str::to_ascii_lowercase).as_deref() {
        Some("y4m") => read_y4m(path),
        Some("raw" | "tdv" | "f64") => read_raw(path),
        Some("png" | "pgm" | "ppm" | "pnm") => read_image_files(&[path.to_path_buf()]),
        _ => Err(VideoError::Unsupported(format!("cannot infer format of {}", path.display())).into()),
    }
}

/// Writes a video; `format` overrides the guess from the path.
pub fn write_video(path: &Path, video: &MultiChannelVideo, format: Option<VideoFormat>) -> Result<()> {
    let format = match format {
        Some(f) => f,
        None => VideoFormat::from_path(path)?,
    };
    match format {
        VideoFormat::Y4m => write_y4m(path, video),
        VideoFormat::Raw => write_raw(path, video),
        VideoFormat::PngSequence => write_image_sequence(path, video, "png"),
        VideoFormat::PnmSequence => {
            let ext = if video.num_channels() == 1 { "pgm" } else { "ppm" };
            write_image_sequence(path, video, ext)
        }
    }
}

struct CountingReader<R> {
    inner: R,
    count: Rc<Cell<u64>>,
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.count.set(self.count.get() + n as u64);
        Ok(n)
    }
}

enum Chroma {
    None,
    Full,
    /// Horizontal and vertical subsampling factors.
    Sub(usize, usize),
}

fn chroma_layout(cs: y4m::Colorspace) -> Option<Chroma> {
    use y4m::Colorspace as C;
    match cs {
        C::Cmono => Some(Chroma::None),
        C::C420 | C::C420jpeg | C::C420paldv | C::C420mpeg2 => Some(Chroma::Sub(2, 2)),
        C::C422 => Some(Chroma::Sub(2, 1)),
        C::C444 => Some(Chroma::Full),
        _ => None,
    }
}

/// Decodes an 8-bit YUV4MPEG2 file. Mono gives one channel; otherwise Y, U
/// and V are returned as three full-resolution channels, subsampled chroma
/// being replicated to the luma grid.
pub fn read_y4m(path: &Path) -> Result<MultiChannelVideo> {
    let file = File::open(path).map_err(io_err(path))?;
    let count = Rc::new(Cell::new(0u64));
    let reader = CountingReader { inner: BufReader::new(file), count: Rc::clone(&count) };
    let mut dec = y4m::decode(reader).map_err(|e| match e {
        y4m::Error::IoError(source) => VideoError::Io { path: path.to_path_buf(), source },
        other => malformed(path, other.to_string()),
    })?;
    let (w, h) = (dec.get_width(), dec.get_height());
    let cs = dec.get_colorspace();
    let layout = chroma_layout(cs)
        .filter(|_| cs.get_bit_depth() == 8)
        .ok_or_else(|| VideoError::Unsupported(format!("colorspace {cs:?} in {}", path.display())))?;
    let n_ch = if matches!(layout, Chroma::None) { 1 } else { 3 };
    let mut planes: Vec<Vec<f64>> = vec![Vec::new(); n_ch];
    let mut frames = 0usize;
    loop {
        let start = count.get();
        let frame = match dec.read_frame() {
            Ok(f) => f,
            Err(y4m::Error::EOF) if count.get() == start => break,
            Err(y4m::Error::EOF) => return Err(VideoError::Truncated { frame: frames }.into()),
            Err(y4m::Error::IoError(source)) => return Err(VideoError::Io { path: path.to_path_buf(), source }.into()),
            Err(e) => return Err(VideoError::InconsistentFrame { frame: frames, reason: e.to_string() }.into()),
        };
        planes[0].extend(frame.get_y_plane().iter().map(|&b| f64::from(b)));
        match layout {
            Chroma::None => {}
            Chroma::Full => {
                planes[1].extend(frame.get_u_plane().iter().map(|&b| f64::from(b)));
                planes[2].extend(frame.get_v_plane().iter().map(|&b| f64::from(b)));
            }
            Chroma::Sub(sx, sy) => {
                let cw = w.div_ceil(sx);
                for (c, src) in [(1, frame.get_u_plane()), (2, frame.get_v_plane())] {
                    for i in 0..h {
                        for j in 0..w {
                            planes[c].push(f64::from(src[(i / sy) * cw + j / sx]));
                        }
                    }
                }
            }
        }
        frames += 1;
    }
    if frames == 0 {
        return Err(malformed(path, "no frames").into());
    }
    let dims = Dims::new(h, w, frames);
    let channels = planes.into_iter().map(|p| Volume::new(dims, p)).collect::<Result<Vec<_>>>()?;
    MultiChannelVideo::new(channels)
}

/// Writes 8-bit YUV4MPEG2: `Cmono` for one channel, `C444` for three.
pub fn write_y4m(path: &Path, video: &MultiChannelVideo) -> Result<()> {
    let d = video.dims();
    let cs = match video.num_channels() {
        1 => y4m::Colorspace::Cmono,
        _ => y4m::Colorspace::C444,
    };
    let file = File::create(path).map_err(io_err(path))?;
    let to_y4m_err = |e: y4m::Error| match e {
        y4m::Error::IoError(source) => VideoError::Io { path: path.to_path_buf(), source },
        other => VideoError::Unsupported(other.to_string()),
    };
    let mut enc = y4m::encode(d.cols, d.rows, y4m::Ratio::new(30, 1))
        .with_colorspace(cs)
        .write_header(BufWriter::new(file))
        .map_err(to_y4m_err)?;
    let empty: Vec<u8> = Vec::new();
    for k in 0..d.frames {
        let planes: Vec<Vec<u8>> =
            video.channels().iter().map(|ch| ch.frame(k).iter().map(|&v| quantize_u8(v)).collect()).collect();
        let refs = match planes.len() {
            1 => [&planes[0][..], &empty[..], &empty[..]],
            _ => [&planes[0][..], &planes[1][..], &planes[2][..]],
        };
        enc.write_frame(&y4m::Frame::new(refs, None)).map_err(to_y4m_err)?;
    }
    Ok(())
}

/// Writes the lossless raw container.
pub fn write_raw(path: &Path, video: &MultiChannelVideo) -> Result<()> {
    let d = video.dims();
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> io::Result<()> {
        out.write_all(RAW_MAGIC)?;
        for v in [RAW_VERSION, d.rows as u32, d.cols as u32, d.frames as u32, video.num_channels() as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        for ch in video.channels() {
            for v in ch.as_slice() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()
    };
    write(&mut out).map_err(io_err(path))?;
    Ok(())
}

pub fn read_raw(path: &Path) -> Result<MultiChannelVideo> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < RAW_HEADER_LEN || &bytes[..4] != RAW_MAGIC {
        return Err(malformed(path, "missing TDVV magic").into());
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if field(0) != RAW_VERSION as usize {
        return Err(malformed(path, format!("unsupported version {}", field(0))).into());
    }
    let dims = Dims::new(field(1), field(2), field(3));
    let n_ch = field(4);
    if dims.is_empty() || !(n_ch == 1 || n_ch == 3) {
        return Err(malformed(path, format!("bad shape {dims} with {n_ch} channels")).into());
    }
    let payload = &bytes[RAW_HEADER_LEN..];
    let available = payload.len() / 8;
    let needed = dims.len() * n_ch;
    if available < needed {
        let frame = (available / dims.frame_len()) % dims.frames;
        return Err(VideoError::Truncated { frame }.into());
    }
    let values: Vec<f64> =
        payload.chunks_exact(8).take(needed).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let channels = values
        .chunks_exact(dims.len())
        .map(|c| Volume::new(dims, c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    MultiChannelVideo::new(channels)
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(OsStr::to_str).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "pgm" | "ppm" | "pnm")
    )
}

/// Trailing decimal digits of the file stem, if any.
fn numeric_suffix(p: &Path) -> Option<u64> {
    let stem = p.file_stem()?.to_str()?;
    let digits: String = stem.chars().rev().take_while(char::is_ascii_digit).collect();
    if digits.is_empty() {
        return None;
    }
    digits.chars().rev().collect::<String>().parse().ok()
}

/// Image files of a directory ordered by their numeric suffix, so that
/// `frame_2` precedes `frame_10`.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort_by_key(|p| (numeric_suffix(p).unwrap_or(u64::MAX), p.file_name().map(OsStr::to_os_string)));
    Ok(files)
}

pub fn read_image_sequence(dir: &Path) -> Result<MultiChannelVideo> {
    let files = list_frames(dir)?;
    if files.is_empty() {
        return Err(VideoError::MissingFile(dir.join("frame_0000.png")).into());
    }
    read_image_files(&files)
}

fn read_image_files(files: &[PathBuf]) -> Result<MultiChannelVideo> {
    let mut shape: Option<(u32, u32, usize)> = None;
    let mut planes: Vec<Vec<f64>> = Vec::new();
    for (k, f) in files.iter().enumerate() {
        let img = image::open(f).map_err(|e| match e {
            image::ImageError::IoError(source) => VideoError::Io { path: f.clone(), source },
            other => malformed(f, other.to_string()),
        })?;
        let n_ch = if img.color().has_color() { 3 } else { 1 };
        let (w, h) = (img.width(), img.height());
        match shape {
            None => {
                shape = Some((w, h, n_ch));
                planes = vec![Vec::new(); n_ch];
            }
            Some(s) if s != (w, h, n_ch) => {
                return Err(VideoError::InconsistentFrame {
                    frame: k,
                    reason: format!("{w}x{h} with {n_ch} channels, expected {}x{} with {}", s.0, s.1, s.2),
                }
                .into());
            }
            Some(_) => {}
        }
        if n_ch == 1 {
            planes[0].extend(img.to_luma8().into_raw().into_iter().map(f64::from));
        } else {
            for px in img.to_rgb8().pixels() {
                for c in 0..3 {
                    planes[c].push(f64::from(px.0[c]));
                }
            }
        }
    }
    let (w, h, _) = shape.expect("at least one frame");
    let dims = Dims::new(h as usize, w as usize, files.len());
    let channels = planes.into_iter().map(|p| Volume::new(dims, p)).collect::<Result<Vec<_>>>()?;
    MultiChannelVideo::new(channels)
}

/// Writes `frame_NNNN.<ext>` files into `dir`, creating it if needed.
pub fn write_image_sequence(dir: &Path, video: &MultiChannelVideo, ext: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let d = video.dims();
    let (w, h) = (d.cols as u32, d.rows as u32);
    for k in 0..d.frames {
        let path = dir.join(format!("frame_{k:04}.{ext}"));
        let saved = if video.num_channels() == 1 {
            let buf = video.channel(0).frame(k).iter().map(|&v| quantize_u8(v)).collect();
            image::GrayImage::from_raw(w, h, buf).expect("frame size").save(&path)
        } else {
            let frames: Vec<&[f64]> = video.channels().iter().map(|c| c.frame(k)).collect();
            let buf = (0..d.frame_len()).flat_map(|p| frames.iter().map(move |f| quantize_u8(f[p]))).collect();
            image::RgbImage::from_raw(w, h, buf).expect("frame size").save(&path)
        };
        saved.map_err(|e| match e {
            image::ImageError::IoError(source) => VideoError::Io { path: path.clone(), source },
            other => VideoError::Unsupported(other.to_string()),
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::TdvError;

    fn mono_fixture() -> Vec<u8> {
        let mut b = b"YUV4MPEG2 W4 H4 F30:1 Ip A1:1 Cmono\n".to_vec();
        for k in 0..2u8 {
            b.extend_from_slice(b"FRAME\n");
            b.extend((0..16u8).map(|p| p * 10 + k));
        }
        b
    }

    #[test]
    fn reads_hand_built_mono_y4m() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.y4m");
        fs::write(&p, mono_fixture()).unwrap();
        let v = read_video(&p).unwrap();
        assert_eq!(v.dims(), Dims::new(4, 4, 2));
        assert_eq!(v.num_channels(), 1);
        assert_eq!(v.channel(0).get(0, 0, 0), 0.0);
        assert_eq!(v.channel(0).get(1, 2, 1), 61.0);
        assert_eq!(v.channel(0).get(3, 3, 0), 150.0);
    }

    #[test]
    fn truncated_y4m_reports_frame() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.y4m");
        let mut b = mono_fixture();
        b.truncate(b.len() - 5);
        fs::write(&p, b).unwrap();
        match read_video(&p) {
            Err(TdvError::Video(VideoError::Truncated { frame })) => assert_eq!(frame, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.y4m");
        fs::write(&p, b"NOTY4M W4 H4\n").unwrap();
        assert!(matches!(read_video(&p), Err(TdvError::Video(VideoError::MalformedHeader { .. }))));
        let missing = dir.path().join("nope.y4m");
        assert!(matches!(read_video(&missing), Err(TdvError::Video(VideoError::MissingFile(_)))));
    }

    #[test]
    fn y4m_420_upsamples_chroma() {
        let mut b = b"YUV4MPEG2 W3 H2 F30:1 C420jpeg\n".to_vec();
        for _ in 0..2 {
            b.extend_from_slice(b"FRAME\n");
            b.extend([1u8, 2, 3, 4, 5, 6]);
            b.extend([100u8, 110]);
            b.extend([200u8, 210]);
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.y4m");
        fs::write(&p, b).unwrap();
        let v = read_video(&p).unwrap();
        assert_eq!(v.num_channels(), 3);
        assert_eq!(v.channel(1).frame(0), &[100.0, 100.0, 110.0, 100.0, 100.0, 110.0]);
        assert_eq!(v.channel(2).get(1, 2, 0), 210.0);
    }

    #[test]
    fn y4m_round_trip_mono_and_colour() {
        let dir = tempfile::tempdir().unwrap();
        let dims = Dims::new(3, 5, 2);
        let base = Volume::from_fn(dims, |i, j, k| (i * 40 + j * 7 + k) as f64).unwrap();
        for n in [1usize, 3] {
            let v = MultiChannelVideo::new(vec![base.clone(); n]).unwrap();
            let p = dir.path().join(format!("r{n}.y4m"));
            write_video(&p, &v, None).unwrap();
            assert_eq!(read_video(&p).unwrap(), v);
        }
    }

    #[test]
    fn export_clamps_and_rounds() {
        assert_eq!(quantize_u8(-3.2), 0);
        assert_eq!(quantize_u8(255.7), 255);
        assert_eq!(quantize_u8(12.5), 13);
        assert_eq!(quantize_u8(12.49), 12);
        let dir = tempfile::tempdir().unwrap();
        let fixture = vec![-3.2, 255.7, 12.5, 100.0, -0.4, 254.5, 0.5, 7.0];
        let v = MultiChannelVideo::grey(Volume::new(Dims::new(2, 2, 2), fixture).unwrap());
        let p = dir.path().join("q.y4m");
        write_video(&p, &v, None).unwrap();
        let back = read_video(&p).unwrap();
        assert_eq!(back.channel(0).as_slice(), &[0.0, 255.0, 13.0, 100.0, 0.0, 255.0, 1.0, 7.0]);
    }

    #[test]
    fn raw_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let dims = Dims::new(4, 3, 2);
        let a = Volume::from_fn(dims, |i, j, k| -300.25 + (i * 31 + j * 7 + k) as f64 * 1.1).unwrap();
        let v = MultiChannelVideo::new(vec![a.clone(), a.map(|x| x * 2.0), a.map(|x| -x)]).unwrap();
        let p = dir.path().join("v.tdv");
        write_video(&p, &v, None).unwrap();
        assert_eq!(read_video(&p).unwrap(), v);

        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], RAW_MAGIC);
        assert_eq!(bytes.len(), RAW_HEADER_LEN + 8 * 3 * dims.len());
        let cut = dir.path().join("cut.tdv");
        fs::write(&cut, &bytes[..RAW_HEADER_LEN + 8 * (dims.frame_len() + 1)]).unwrap();
        assert!(matches!(read_video(&cut), Err(TdvError::Video(VideoError::Truncated { frame: 1 }))));
    }

    #[test]
    fn frames_sorted_numerically() {
        let dir = tempfile::tempdir().unwrap();
        let dims = Dims::new(2, 2, 2);
        for k in [10usize, 1, 2, 9] {
            let v = MultiChannelVideo::grey(Volume::filled(dims, k as f64).unwrap());
            let sub = dir.path().join(format!("tmp{k}"));
            write_video(&sub, &v, Some(VideoFormat::PngSequence)).unwrap();
            fs::rename(sub.join("frame_0000.png"), dir.path().join(format!("frame_{k:03}.png"))).unwrap();
        }
        let names: Vec<_> =
            list_frames(dir.path()).unwrap().iter().map(|p| p.file_name().unwrap().to_owned()).collect();
        assert_eq!(names, ["frame_001.png", "frame_002.png", "frame_009.png", "frame_010.png"]);
        let v = read_video(dir.path()).unwrap();
        let firsts: Vec<f64> = (0..4).map(|k| v.channel(0).get(0, 0, k)).collect();
        assert_eq!(firsts, [1.0, 2.0, 9.0, 10.0]);
    }

    #[test]
    fn image_sequences_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dims = Dims::new(3, 4, 3);
        let a = Volume::from_fn(dims, |i, j, k| (i * 50 + j * 11 + k * 3) as f64).unwrap();
        let grey = MultiChannelVideo::grey(a.clone());
        let colour = MultiChannelVideo::new(vec![a.clone(), a.map(|x| 255.0 - x), a.map(|x| x / 2.0)]).unwrap();
        for (name, v, fmt) in [
            ("g_png", &grey, VideoFormat::PngSequence),
            ("g_pgm", &grey, VideoFormat::PnmSequence),
            ("c_png", &colour, VideoFormat::PngSequence),
        ] {
            let p = dir.path().join(name);
            write_video(&p, v, Some(fmt)).unwrap();
            let back = read_video(&p).unwrap();
            assert_eq!(back.dims(), dims, "{name}");
            for c in 0..v.num_channels() {
                let want = v.channel(c).map(|x| quantize_u8(x) as f64);
                assert_eq!(back.channel(c), &want, "{name}");
            }
        }
    }

    #[test]
    fn format_detection() {
        assert_eq!(VideoFormat::from_path(Path::new("a.y4m")).unwrap(), VideoFormat::Y4m);
        assert_eq!(VideoFormat::from_path(Path::new("a.tdv")).unwrap(), VideoFormat::Raw);
        assert_eq!(VideoFormat::from_path(Path::new("frames")).unwrap(), VideoFormat::PngSequence);
        assert!(VideoFormat::from_path(Path::new("a.mp4")).is_err());
        assert_eq!(VideoFormat::from_name("PGM"), Some(VideoFormat::PnmSequence));
    }
}
