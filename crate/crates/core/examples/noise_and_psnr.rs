//! Seeded Gaussian noise and PSNR: reproducibility and the noise floor
//! `20·log10(255/std)`.

use tdv::{add_gaussian_noise, franke_video, psnr, psnr_per_frame, NoiseSpec, PEAK};

fn main() -> tdv::Result<()> {
    let clean = franke_video(64, 64, 16, 0.1)?;
    for std in [10.0, 20.0, 50.0, 90.0] {
        let noisy = add_gaussian_noise(&clean, &NoiseSpec::new(std, 1)?);
        println!("std {std:>4}: {:.3} dB (floor {:.3} dB)", psnr(&noisy, &clean, PEAK)?, 20.0 * (PEAK / std).log10());
    }

    let spec = NoiseSpec::new(25.0, 42)?;
    let (a, b) = (add_gaussian_noise(&clean, &spec), add_gaussian_noise(&clean, &spec));
    println!("same seed reproduces: {}", a == b);
    let frames = psnr_per_frame(&a, &clean, PEAK)?;
    println!("per-frame: {}", frames.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>().join(" "));
    println!("self psnr: {}", psnr(&clean, &clean, PEAK)?);
    Ok(())
}
