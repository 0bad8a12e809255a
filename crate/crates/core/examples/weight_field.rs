//! Inspect the anisotropy weights estimated from a noisy video: the mean
//! confidence per plane and a CSV dump of the first few cells.

use tdv::diff_ops::Plane;
use tdv::structure_tensor::{cell_tensors, plane_frames, structure_tensor3, write_weight_csv};
use tdv::{add_gaussian_noise, franke_video, NoiseSpec, SmoothingParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let clean = franke_video(32, 32, 8, 0.1)?;
    let noisy = add_gaussian_noise(&clean, &NoiseSpec::new(20.0, 3)?);
    let params = SmoothingParams::with_default_epsilon(0.9, 0.9)?;

    let tensors = cell_tensors(&structure_tensor3(&noisy, params.sigma, params.rho)?);
    let frames = plane_frames(&tensors, params.epsilon);
    for (p, plane) in Plane::ALL.iter().enumerate() {
        let mean = frames.iter().map(|f| f[p].confidence).sum::<f64>() / frames.len() as f64;
        println!("{plane:?}: mean confidence {mean:.3}");
    }

    let weights = tdv::build_weight_field(&noisy, &params)?;
    let mut csv = Vec::new();
    write_weight_csv(&weights, &mut csv)?;
    for line in String::from_utf8_lossy(&csv).lines().take(4) {
        println!("{line}");
    }
    Ok(())
}
