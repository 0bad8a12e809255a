//! End-to-end denoising: the weighted TDV model, the ROF 2D+t baseline,
//! parameter selection and PSNR reporting.
//!
//! Both models solve on intensities divided by [`PEAK`], so `η` keeps the
//! meaning it has for unit-range video (`η = 255/ς` is a sensible value);
//! inputs and outputs stay on the `[0, 255]` scale. The weight field is
//! estimated on the original scale, where [`DEFAULT_EPSILON`] applies.

use std::cmp::Ordering;
use std::io::{self, Write};

use rayon::prelude::*;

use crate::diff_ops::{AveragedGradientOperator, GradientOperator, LinearOperator, TdvOperator, WeightField};
use crate::error::{Result, TdvError};
use crate::solver::{solve_accelerated_pd, SolveReport, SolverConfig};
use crate::structure_tensor::{build_weight_field, SmoothingParams, DEFAULT_EPSILON};
use crate::volume::{psnr, psnr_per_frame, MultiChannelVideo, Volume, PEAK};

/// Model parameters `(σ, ρ, η)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenoiseParams {
    pub sigma: f64,
    pub rho: f64,
    pub eta: f64,
}

impl DenoiseParams {
    pub fn new(sigma: f64, rho: f64, eta: f64) -> Result<Self> {
        let p = Self { sigma, rho, eta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(TdvError::invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.sigma <= self.rho) {
            return Err(TdvError::invalid(format!(
                "sigma must not exceed rho (sigma <= rho), got sigma={}, rho={}",
                self.sigma, self.rho
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(TdvError::invalid(format!("eta must be positive, got {}", self.eta)));
        }
        Ok(())
    }

    pub fn smoothing(&self) -> Result<SmoothingParams> {
        SmoothingParams::new(self.sigma, self.rho, DEFAULT_EPSILON)
    }

    fn key(&self) -> [f64; 3] {
        [self.sigma, self.rho, self.eta]
    }

    /// Lexicographic order on `(σ, ρ, η)`.
    pub fn lexicographic_cmp(&self, other: &Self) -> Ordering {
        self.key()
            .iter()
            .zip(other.key().iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

/// `η = 255/ς`, `σ = ρ = 3.2/√η`.
pub fn rule_of_thumb(noise_std: f64) -> Result<DenoiseParams> {
    if !(noise_std > 0.0 && noise_std.is_finite()) {
        return Err(TdvError::invalid(format!("noise std-dev must be positive, got {noise_std}")));
    }
    let eta = PEAK / noise_std;
    let s = 3.2 * eta.powf(-0.5);
    DenoiseParams::new(s, s, eta)
}

/// Solves one channel with a given operator on the unit intensity scale.
pub fn denoise_channel(
    op: &impl LinearOperator,
    noisy: &Volume,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<(Volume, SolveReport)> {
    let scaled = noisy.map(|v| v / PEAK);
    let (u, report) = solve_accelerated_pd(op, &scaled, &scaled, eta, cfg)?;
    Ok((u.map(|v| v * PEAK), report))
}

fn per_channel<F>(video: &MultiChannelVideo, f: F) -> Result<(MultiChannelVideo, Vec<SolveReport>)>
where
    F: Fn(&Volume) -> Result<(Volume, SolveReport)> + Sync + Send,
{
    let results: Vec<_> = video.channels().par_iter().map(f).collect::<Result<_>>()?;
    let (channels, reports): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((MultiChannelVideo::new(channels)?, reports))
}

/// TDV denoising of one channel with a precomputed weight field.
pub fn tdv_denoise_with_weights(
    noisy: &Volume,
    weights: &WeightField,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<(Volume, SolveReport)> {
    denoise_channel(&TdvOperator::new(weights), noisy, eta, cfg)
}

/// Weight estimation followed by the primal-dual solve, independently for
/// every colour channel.
pub fn tdv_denoise(
    noisy: &MultiChannelVideo,
    params: &DenoiseParams,
    cfg: &SolverConfig,
) -> Result<(MultiChannelVideo, Vec<SolveReport>)> {
    params.validate()?;
    noisy.dims().validate()?;
    let smoothing = params.smoothing()?;
    per_channel(noisy, |ch| {
        let weights = build_weight_field(ch, &smoothing)?;
        tdv_denoise_with_weights(ch, &weights, params.eta, cfg)
    })
}

/// Gradient discretisation for the ROF 2D+t baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RofGrid {
    /// Staggered forward differences, one 3-vector per voxel.
    #[default]
    Staggered,
    /// Cell-averaged differences, the grid the weighted model uses.
    CellAveraged,
}

const ROF_L_SQ: f64 = 12.0;

pub fn rof2dt_denoise_with(
    noisy: &MultiChannelVideo,
    eta: f64,
    cfg: &SolverConfig,
    grid: RofGrid,
) -> Result<(MultiChannelVideo, Vec<SolveReport>)> {
    if !(eta > 0.0) {
        return Err(TdvError::invalid(format!("eta must be positive, got {eta}")));
    }
    let dims = noisy.dims();
    dims.validate()?;
    let cfg = cfg.with_l_sq(cfg.l_sq.min(ROF_L_SQ));
    match grid {
        RofGrid::Staggered => {
            let op = GradientOperator::new(dims);
            per_channel(noisy, |ch| denoise_channel(&op, ch, eta, &cfg))
        }
        RofGrid::CellAveraged => {
            let op = AveragedGradientOperator::new(dims);
            per_channel(noisy, |ch| denoise_channel(&op, ch, eta, &cfg))
        }
    }
}

/// Spatio-temporal total variation with the classical staggered gradient.
pub fn rof2dt_denoise(
    noisy: &MultiChannelVideo,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<(MultiChannelVideo, Vec<SolveReport>)> {
    rof2dt_denoise_with(noisy, eta, cfg, RofGrid::Staggered)
}

/// Progress of the parameter search.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchState {
    pub best: DenoiseParams,
    pub best_psnr: f64,
    pub radius: f64,
    /// Every evaluation in order.
    pub log: Vec<(DenoiseParams, f64)>,
    /// Winner re-evaluated at the final solver tolerance, when requested.
    pub rescored_psnr: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchConfig {
    pub radius: f64,
    /// Radius factor applied when no neighbour improves.
    pub shrink: f64,
    /// Maximum number of objective evaluations.
    pub budget: usize,
    pub min_radius: f64,
}

impl SearchConfig {
    pub fn new(radius: f64, shrink: f64, budget: usize) -> Result<Self> {
        let c = Self { radius, shrink, budget, min_radius: 0.01 };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(TdvError::invalid("search budget must be at least 1"));
        }
        if !(self.radius > 0.0) {
            return Err(TdvError::invalid("search radius must be positive"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(TdvError::invalid("shrink factor must lie in (0, 1)"));
        }
        Ok(())
    }
}

fn neighbours(p: &DenoiseParams, r: f64) -> Vec<DenoiseParams> {
    let mut out = Vec::with_capacity(6);
    for axis in 0..3 {
        for step in [r, -r] {
            let mut k = p.key();
            k[axis] += step;
            let q = DenoiseParams { sigma: k[0], rho: k[1], eta: k[2] };
            if q.validate().is_ok() {
                out.push(q);
            }
        }
    }
    out
}

/// Pattern search maximising `objective`: evaluate the `±radius` neighbour
/// along each coordinate, move to the best strict improvement, otherwise
/// shrink the radius. Stops when the radius falls below
/// [`SearchConfig::min_radius`] or the evaluation budget is spent.
pub fn line_search_with<F>(init: &DenoiseParams, cfg: &SearchConfig, mut objective: F) -> Result<SearchState>
where
    F: FnMut(&DenoiseParams) -> Result<f64>,
{
    cfg.validate()?;
    init.validate()?;
    let first = objective(init)?;
    let mut state = SearchState {
        best: *init,
        best_psnr: first,
        radius: cfg.radius,
        log: vec![(*init, first)],
        rescored_psnr: None,
    };
    while state.log.len() < cfg.budget && state.radius >= cfg.min_radius {
        let mut round_best: Option<(DenoiseParams, f64)> = None;
        for q in neighbours(&state.best, state.radius) {
            let score = match state.log.iter().find(|(p, _)| *p == q) {
                Some(&(_, s)) => s,
                None => {
                    if state.log.len() >= cfg.budget {
                        break;
                    }
                    let s = objective(&q)?;
                    state.log.push((q, s));
                    s
                }
            };
            let better = match round_best {
                None => true,
                Some((bp, bs)) => score > bs || (score == bs && q.lexicographic_cmp(&bp).is_lt()),
            };
            if better {
                round_best = Some((q, score));
            }
        }
        match round_best {
            Some((q, s)) if s > state.best_psnr => {
                state.best = q;
                state.best_psnr = s;
            }
            _ => state.radius *= cfg.shrink,
        }
    }
    Ok(state)
}

/// Solver tolerance used while exploring parameters.
pub const SEARCH_TOL: f64 = 1e-3;

/// PSNR-maximising search for TDV parameters against a ground truth. The
/// winner is re-scored at `cfg.tol`.
pub fn line_search_params(
    noisy: &MultiChannelVideo,
    clean: &MultiChannelVideo,
    init: &DenoiseParams,
    search: &SearchConfig,
    cfg: &SolverConfig,
) -> Result<SearchState> {
    let fast = cfg.with_tol(cfg.tol.max(SEARCH_TOL));
    let score = |p: &DenoiseParams, c: &SolverConfig| -> Result<f64> {
        let (out, _) = tdv_denoise(noisy, p, c)?;
        psnr(&out, clean, PEAK)
    };
    let mut state = line_search_with(init, search, |p| score(p, &fast))?;
    state.rescored_psnr = Some(score(&state.best, cfg)?);
    Ok(state)
}

/// One line of the comparison report; `frame == -1` marks the global value.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub frame: i64,
    pub psnr_db: f64,
}

/// Global and per-frame PSNR of each named video against `clean`. The noisy
/// input, when given, is listed first as method `input`.
pub fn compare_report(
    clean: &MultiChannelVideo,
    noisy: Option<&MultiChannelVideo>,
    outputs: &[(String, MultiChannelVideo)],
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    let entries = noisy.map(|n| ("input", n)).into_iter().chain(outputs.iter().map(|(m, v)| (m.as_str(), v)));
    for (method, video) in entries {
        rows.push(ReportRow { method: method.to_string(), frame: -1, psnr_db: psnr(video, clean, PEAK)? });
        for (k, p) in psnr_per_frame(video, clean, PEAK)?.into_iter().enumerate() {
            rows.push(ReportRow { method: method.to_string(), frame: k as i64, psnr_db: p });
        }
    }
    Ok(rows)
}

/// CSV with header `method,frame,psnr_db`; infinite PSNR prints as `inf`.
pub fn write_report_csv<W: Write>(rows: &[ReportRow], mut out: W) -> io::Result<()> {
    writeln!(out, "method,frame,psnr_db")?;
    for r in rows {
        writeln!(out, "{},{},{:.4}", r.method, r.frame, r.psnr_db)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{add_gaussian_noise, franke_video, Dims, NoiseSpec};

    fn round2(x: f64) -> f64 {
        (x * 100.0).round() / 100.0
    }

    #[test]
    fn rule_of_thumb_reference_rows() {
        let rows = [
            (10.0, 0.63, 25.50),
            (20.0, 0.90, 12.75),
            (35.0, 1.19, 7.29),
            (50.0, 1.42, 5.10),
            (70.0, 1.68, 3.64),
            (90.0, 1.90, 2.83),
        ];
        for (std, s, eta) in rows {
            let p = rule_of_thumb(std).unwrap();
            assert_eq!((round2(p.sigma), round2(p.rho), round2(p.eta)), (s, s, eta), "std {std}");
        }
        assert!(rule_of_thumb(0.0).is_err());
        assert!(rule_of_thumb(-3.0).is_err());
    }

    #[test]
    fn params_enforce_sigma_le_rho() {
        assert!(DenoiseParams::new(2.0, 1.0, 5.0).is_err());
        assert!(DenoiseParams::new(1.0, 1.0, 0.0).is_err());
        assert!(DenoiseParams::new(1.0, 2.0, 5.0).is_ok());
    }

    #[test]
    fn constant_video_is_unchanged() {
        let v = MultiChannelVideo::grey(Volume::filled(Dims::new(6, 5, 4), 77.0).unwrap());
        let p = DenoiseParams::new(1.0, 1.5, 10.0).unwrap();
        let (out, reps) = tdv_denoise(&v, &p, &SolverConfig::default()).unwrap();
        assert!(out.channel(0).max_abs_diff(v.channel(0)) < 1e-6);
        assert!(reps[0].converged);
        let (rof, _) = rof2dt_denoise(&v, 10.0, &SolverConfig::default()).unwrap();
        assert!(rof.channel(0).max_abs_diff(v.channel(0)) < 1e-6);
    }

    #[test]
    fn huge_eta_returns_input() {
        let clean = franke_video(10, 10, 4, 0.1).unwrap();
        let noisy = MultiChannelVideo::grey(add_gaussian_noise(&clean, &NoiseSpec::new(20.0, 3).unwrap()));
        let p = DenoiseParams::new(1.0, 1.0, 1e6).unwrap();
        let (out, _) = tdv_denoise(&noisy, &p, &SolverConfig::default()).unwrap();
        assert!(out.channel(0).max_abs_diff(noisy.channel(0)) <= 1e-3);
    }

    #[test]
    fn identical_colour_channels_stay_identical() {
        let clean = franke_video(8, 9, 4, 0.1).unwrap();
        let noisy = add_gaussian_noise(&clean, &NoiseSpec::new(15.0, 8).unwrap());
        let v = MultiChannelVideo::new(vec![noisy.clone(), noisy.clone(), noisy]).unwrap();
        let (out, reps) = tdv_denoise(&v, &rule_of_thumb(15.0).unwrap(), &SolverConfig::default()).unwrap();
        assert_eq!(reps.len(), 3);
        assert_eq!(out.channel(0), out.channel(1));
        assert_eq!(out.channel(1), out.channel(2));
    }

    fn stub_objective(p: &DenoiseParams) -> Result<f64> {
        Ok(50.0 - (p.sigma - 1.3).powi(2) - 2.0 * (p.rho - 1.7).powi(2) - 0.1 * (p.eta - 8.2).powi(2))
    }

    #[test]
    fn search_with_unit_budget_returns_init() {
        let init = DenoiseParams::new(1.0, 1.0, 10.0).unwrap();
        let s = line_search_with(&init, &SearchConfig::new(0.5, 0.5, 1).unwrap(), stub_objective).unwrap();
        assert_eq!(s.best, init);
        assert_eq!(s.log.len(), 1);
        assert_eq!(s.best_psnr, stub_objective(&init).unwrap());
        assert!(SearchConfig::new(0.5, 0.5, 0).is_err());
    }

    #[test]
    fn search_finds_quadratic_maximiser() {
        let init = DenoiseParams::new(1.0, 1.0, 10.0).unwrap();
        let s = line_search_with(&init, &SearchConfig::new(1.0, 0.5, 2000).unwrap(), stub_objective).unwrap();
        let d = ((s.best.sigma - 1.3).powi(2) + (s.best.rho - 1.7).powi(2) + (s.best.eta - 8.2).powi(2)).sqrt();
        assert!(d < 0.05, "landed at {:?}", s.best);
        assert!(s.radius < 0.01);
        let max_logged = s.log.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(s.best_psnr, max_logged);
    }

    #[test]
    fn search_respects_sigma_le_rho() {
        // From sigma == rho the optimum is only reachable by raising rho first.
        let obj = |p: &DenoiseParams| Ok(-(p.sigma - 2.0).powi(2) - (p.rho - 2.5).powi(2) - (p.eta - 5.0).powi(2));
        let init = DenoiseParams::new(1.0, 1.0, 5.0).unwrap();
        let s = line_search_with(&init, &SearchConfig::new(0.5, 0.5, 500).unwrap(), obj).unwrap();
        assert!(s.log.iter().all(|(p, _)| p.sigma <= p.rho));
        assert!((s.best.sigma - 2.0).abs() < 0.05 && (s.best.rho - 2.5).abs() < 0.05);
    }

    #[test]
    fn search_breaks_ties_lexicographically() {
        let flat = |_: &DenoiseParams| Ok(1.0);
        let init = DenoiseParams::new(1.0, 2.0, 5.0).unwrap();
        let s = line_search_with(&init, &SearchConfig::new(0.5, 0.5, 100).unwrap(), flat).unwrap();
        assert_eq!(s.best, init);
    }

    #[test]
    fn report_rows_and_csv() {
        let clean = MultiChannelVideo::grey(franke_video(6, 6, 3, 0.1).unwrap());
        let rows = compare_report(&clean, None, &[("clean".into(), clean.clone())]).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.psnr_db.is_infinite()));
        let mut buf = Vec::new();
        write_report_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("method,frame,psnr_db"));
        assert_eq!(text.lines().nth(1), Some("clean,-1,inf"));

        let noisy = MultiChannelVideo::grey(add_gaussian_noise(clean.channel(0), &NoiseSpec::new(5.0, 1).unwrap()));
        let rows = compare_report(&clean, Some(&noisy), &[("a".into(), clean.clone()), ("b".into(), noisy.clone())]).unwrap();
        assert_eq!(rows.len(), 3 * 4);
        assert_eq!(rows[0].method, "input");
        assert_eq!(rows.iter().filter(|r| r.frame == -1).count(), 3);
    }
}
