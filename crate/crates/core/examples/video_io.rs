//! Write a colour video in every supported format and read it back.

use tdv::{franke_video, read_video, write_video, MultiChannelVideo, VideoFormat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let y = franke_video(16, 20, 4, 0.1)?;
    let video = MultiChannelVideo::new(vec![y.clone(), y.map(|v| 255.0 - v), y.map(|v| 0.5 * v)])?;
    let dir = std::env::temp_dir().join(format!("tdv_video_io_{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;

    for (name, format) in [
        ("clip.y4m", VideoFormat::Y4m),
        ("clip.tdv", VideoFormat::Raw),
        ("png_frames", VideoFormat::PngSequence),
        ("ppm_frames", VideoFormat::PnmSequence),
    ] {
        let path = dir.join(name);
        write_video(&path, &video, Some(format))?;
        let back = read_video(&path)?;
        let err = (0..3).map(|c| back.channel(c).max_abs_diff(video.channel(c))).fold(0.0, f64::max);
        let d = back.dims();
        println!("{name:<11} {}x{}x{} channels={} max error {err:.3}", d.rows, d.cols, d.frames, back.num_channels());
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
