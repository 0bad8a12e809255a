//! Estimate `‖K‖²` by power iteration for identity and data-driven weights
//! and compare with the plain gradient.

use tdv::diff_ops::{power_iteration_norm_sq, AveragedGradientOperator, GradientOperator};
use tdv::{add_gaussian_noise, build_weight_field, franke_video, operator_norm_sq, Dims, NoiseSpec};
use tdv::{SmoothingParams, WeightField};

fn main() -> tdv::Result<()> {
    let dims = Dims::new(12, 12, 6);
    let noisy = add_gaussian_noise(&franke_video(12, 12, 6, 0.1)?, &NoiseSpec::new(35.0, 2)?);
    let data = build_weight_field(&noisy, &SmoothingParams::with_default_epsilon(1.19, 1.19)?)?;

    println!("gradient          {:.4}", power_iteration_norm_sq(&GradientOperator::new(dims), 1e-8)?);
    println!("averaged gradient {:.4}", power_iteration_norm_sq(&AveragedGradientOperator::new(dims), 1e-8)?);
    println!("K, identity       {:.4}", operator_norm_sq(&WeightField::identity(dims), dims)?);
    println!("K, data weights   {:.4}", operator_norm_sq(&data, dims)?);
    println!("default bound     {:.1}", tdv::SolverConfig::default().l_sq);
    Ok(())
}
