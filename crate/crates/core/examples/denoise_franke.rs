//! Denoise a synthetic moving Franke video with TDV and the frame-wise ROF
//! baseline, using the rule-of-thumb parameters.
//!
//! ```text
//! cargo run --release --example denoise_franke -- 20
//! ```

use tdv::{
    add_gaussian_noise, franke_video, psnr, rof2dt_denoise, rule_of_thumb, tdv_denoise, MultiChannelVideo, NoiseSpec,
    SolverConfig, PEAK,
};

fn main() -> tdv::Result<()> {
    let std: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20.0);
    let clean = franke_video(48, 48, 12, 0.1)?;
    let noisy = add_gaussian_noise(&clean, &NoiseSpec::new(std, 1)?);
    let video = MultiChannelVideo::grey(noisy.clone());

    let params = rule_of_thumb(std)?;
    let cfg = SolverConfig::default();
    let (tdv_out, reports) = tdv_denoise(&video, &params, &cfg)?;
    let (rof_out, _) = rof2dt_denoise(&video, params.eta, &cfg)?;

    println!("sigma={:.3} rho={:.3} eta={:.3}", params.sigma, params.rho, params.eta);
    println!("tdv iterations={} converged={}", reports[0].iterations, reports[0].converged);
    println!("input  {:.2} dB", psnr(&noisy, &clean, PEAK)?);
    println!("tdv    {:.2} dB", psnr(tdv_out.channel(0), &clean, PEAK)?);
    println!("rof2dt {:.2} dB", psnr(rof_out.channel(0), &clean, PEAK)?);
    Ok(())
}
