//! Refine the rule-of-thumb parameters with the coordinate line search,
//! scored by PSNR against the clean video.

use tdv::{
    add_gaussian_noise, franke_video, line_search_params, rule_of_thumb, MultiChannelVideo, NoiseSpec, SearchConfig,
    SolverConfig,
};

fn main() -> tdv::Result<()> {
    let std = 35.0;
    let clean = franke_video(20, 20, 6, 0.1)?;
    let noisy = add_gaussian_noise(&clean, &NoiseSpec::new(std, 5)?);
    let init = rule_of_thumb(std)?;

    let search = SearchConfig::new(0.5, 0.5, 16)?;
    let state = line_search_params(
        &MultiChannelVideo::grey(noisy),
        &MultiChannelVideo::grey(clean),
        &init,
        &search,
        &SolverConfig::default(),
    )?;
    for (n, (p, score)) in state.log.iter().enumerate() {
        println!("{n:>2}: sigma={:.3} rho={:.3} eta={:.3} -> {score:.3} dB", p.sigma, p.rho, p.eta);
    }
    let b = state.best;
    println!("best sigma={:.3} rho={:.3} eta={:.3} at {:.3} dB", b.sigma, b.rho, b.eta, state.best_psnr);
    if let Some(r) = state.rescored_psnr {
        println!("rescored at solver tolerance: {r:.3} dB");
    }
    Ok(())
}
