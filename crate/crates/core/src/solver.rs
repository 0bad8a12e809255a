//! Accelerated primal-dual solver for
//! `min_u Σ_groups ‖(K u)_g‖₂ + (η/2) ‖u - u◇‖²`.
//!
//! The dual variable lives in the product of unit Euclidean balls, one per
//! group of [`LinearOperator::group_size`] components. Since the fidelity is
//! `η`-strongly convex the step sizes follow the accelerated schedule
//! `θ = 1/√(1 + 2ητ)`, `τ ← θτ`, `σ ← σ/θ`.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::diff_ops::{CellField6, LinearOperator};
use crate::error::{Result, TdvError};
use crate::volume::Volume;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    /// Bound on `‖K‖²`; initial steps are `τ₀ = σ₀ = 1/√l_sq`.
    pub l_sq: f64,
    /// Stop once the RMS change of the dual iterate drops to this value.
    pub tol: f64,
    pub maxiter: usize,
    /// `false` keeps `θ = 1` and constant steps.
    pub accelerated: bool,
    /// Record residual, energy and step sizes after every iteration.
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { l_sq: 24.0, tol: 1e-4, maxiter: 1000, accelerated: true, record_trace: false }
    }
}

impl SolverConfig {
    pub fn new(l_sq: f64, tol: f64, maxiter: usize) -> Result<Self> {
        let cfg = Self { l_sq, tol, maxiter, ..Self::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l_sq > 0.0 && self.l_sq.is_finite()) {
            return Err(TdvError::invalid(format!("l_sq must be positive, got {}", self.l_sq)));
        }
        if !(self.tol >= 0.0) {
            return Err(TdvError::invalid(format!("tol must be >= 0, got {}", self.tol)));
        }
        if self.maxiter == 0 {
            return Err(TdvError::invalid("maxiter must be at least 1"));
        }
        Ok(())
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_maxiter(mut self, maxiter: usize) -> Self {
        self.maxiter = maxiter;
        self
    }

    pub fn with_l_sq(mut self, l_sq: f64) -> Self {
        self.l_sq = l_sq;
        self
    }

    pub fn with_trace(mut self, record: bool) -> Self {
        self.record_trace = record;
        self
    }

    pub fn initial_step(&self) -> f64 {
        1.0 / self.l_sq.sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub residual: f64,
    pub energy: f64,
    /// Steps used during this iteration.
    pub tau: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// RMS difference of the last two dual iterates.
    pub final_residual: f64,
    pub final_energy: f64,
    pub converged: bool,
    /// Empty unless [`SolverConfig::record_trace`] is set.
    pub trace: Vec<IterationRecord>,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub primal: Volume,
    pub dual: Vec<f64>,
    pub report: SolveReport,
}

/// Scales every group of `group` components into the closed unit ball.
pub fn project_unit_balls(y: &mut [f64], group: usize) {
    y.par_chunks_mut(group).for_each(|g| {
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1.0 {
            g.iter_mut().for_each(|v| *v /= norm);
        }
    });
}

/// `prox_{σf*}(y) = y / max(1, ‖y‖₂)` per cell.
pub fn prox_dual(y: &CellField6) -> CellField6 {
    let mut out = y.clone();
    project_unit_balls(out.as_mut_slice(), 6);
    out
}

/// `prox_{τg}(u) = (u + τη u◇) / (1 + τη)` voxelwise.
pub fn prox_primal(u: &Volume, tau: f64, eta: f64, u_noisy: &Volume) -> Result<Volume> {
    if u.dims() != u_noisy.dims() {
        return Err(TdvError::DimensionMismatch { expected: u_noisy.dims(), actual: u.dims() });
    }
    if !(tau > 0.0 && eta > 0.0) {
        return Err(TdvError::invalid(format!("tau and eta must be positive, got {tau}, {eta}")));
    }
    let mut out = u.clone();
    prox_primal_in_place(out.as_mut_slice(), tau * eta, u_noisy.as_slice());
    Ok(out)
}

fn prox_primal_in_place(u: &mut [f64], tau_eta: f64, u_noisy: &[f64]) {
    let inv = 1.0 / (1.0 + tau_eta);
    u.par_iter_mut().zip(u_noisy.par_iter()).for_each(|(v, &d)| *v = (*v + tau_eta * d) * inv);
}

// Reductions run over fixed-size chunks whose partial sums are added in
// order, so results do not depend on the thread schedule.
const REDUCE_CHUNK: usize = 4096;

fn ordered_sum(partials: Vec<f64>) -> f64 {
    partials.into_iter().sum()
}

fn sum_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    ordered_sum(
        a.par_chunks(REDUCE_CHUNK)
            .zip(b.par_chunks(REDUCE_CHUNK))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum())
            .collect(),
    )
}

fn group_norm_sum(y: &[f64], group: usize) -> f64 {
    ordered_sum(
        y.par_chunks(group * REDUCE_CHUNK)
            .map(|c| c.chunks(group).map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt()).sum())
            .collect(),
    )
}

fn fidelity(u: &Volume, u_noisy: &Volume, eta: f64) -> f64 {
    0.5 * eta * sum_sq_diff(u.as_slice(), u_noisy.as_slice())
}

/// Primal objective `Σ_groups ‖(K u)_g‖₂ + (η/2) ‖u - u◇‖²`.
pub fn energy(u: &Volume, u_noisy: &Volume, op: &impl LinearOperator, eta: f64) -> Result<f64> {
    if u.dims() != u_noisy.dims() || u.dims() != op.domain() {
        return Err(TdvError::DimensionMismatch { expected: op.domain(), actual: u.dims() });
    }
    Ok(group_norm_sum(&op.apply(u), op.group_size()) + fidelity(u, u_noisy, eta))
}

/// Dual objective of a feasible `y`:
/// `min_u ⟨K u, y⟩ + (η/2)‖u - u◇‖² = ⟨u◇, K*y⟩ - ‖K*y‖² / (2η)`.
/// Never exceeds [`energy`] at any `u`.
pub fn dual_value(y: &[f64], u_noisy: &Volume, op: &impl LinearOperator, eta: f64) -> f64 {
    let kty = op.apply_adjoint(y);
    u_noisy.dot(&kty) - kty.dot(&kty) / (2.0 * eta)
}

fn rms_difference(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (sum_sq_diff(a, b) / a.len() as f64).sqrt()
}

/// Runs the primal-dual iteration from `u₀ = u_init`, `y₀ = 0`, `ū₀ = u₀`
/// and returns both final iterates.
pub fn solve_primal_dual(
    op: &impl LinearOperator,
    u_init: &Volume,
    u_noisy: &Volume,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<SolveOutcome> {
    cfg.validate()?;
    let dims = op.domain();
    for d in [u_init.dims(), u_noisy.dims()] {
        if d != dims {
            return Err(TdvError::DimensionMismatch { expected: dims, actual: d });
        }
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(TdvError::invalid(format!("eta must be positive, got {eta}")));
    }

    let group = op.group_size();
    let mut u = u_init.clone();
    let mut u_bar = u.clone();
    let mut y = vec![0.0; op.codomain_len()];
    let mut tau = cfg.initial_step();
    let mut sigma = tau;
    let mut trace = Vec::new();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    for n in 1..=cfg.maxiter {
        iterations = n;
        let k_bar = op.apply(&u_bar);
        let mut y_next: Vec<f64> =
            y.par_iter().zip(k_bar.par_iter()).map(|(a, b)| a + sigma * b).collect();
        project_unit_balls(&mut y_next, group);
        residual = rms_difference(&y_next, &y);

        let kty = op.apply_adjoint(&y_next);
        let mut u_next = u.clone();
        u_next
            .as_mut_slice()
            .par_iter_mut()
            .zip(kty.as_slice().par_iter())
            .for_each(|(v, g)| *v -= tau * g);
        prox_primal_in_place(u_next.as_mut_slice(), tau * eta, u_noisy.as_slice());

        if !residual.is_finite() || !u_next.is_finite() {
            return Err(TdvError::NumericalFailure { iteration: n });
        }

        let (step_tau, step_sigma) = (tau, sigma);
        let theta = if cfg.accelerated { 1.0 / (1.0 + 2.0 * eta * tau).sqrt() } else { 1.0 };
        tau *= theta;
        sigma /= theta;
        u_bar
            .as_mut_slice()
            .par_iter_mut()
            .zip(u_next.as_slice().par_iter().zip(u.as_slice().par_iter()))
            .for_each(|(b, (new, old))| *b = new + theta * (new - old));

        u = u_next;
        y = y_next;

        if cfg.record_trace {
            trace.push(IterationRecord {
                iteration: n,
                residual,
                energy: energy(&u, u_noisy, op, eta)?,
                tau: step_tau,
                sigma: step_sigma,
            });
        }
        if residual <= cfg.tol {
            break;
        }
    }

    let final_energy = energy(&u, u_noisy, op, eta)?;
    let report = SolveReport {
        iterations,
        final_residual: residual,
        final_energy,
        converged: residual <= cfg.tol,
        trace,
    };
    Ok(SolveOutcome { primal: u, dual: y, report })
}

/// [`solve_primal_dual`] without the dual iterate.
pub fn solve_accelerated_pd(
    op: &impl LinearOperator,
    u_init: &Volume,
    u_noisy: &Volume,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<(Volume, SolveReport)> {
    let out = solve_primal_dual(op, u_init, u_noisy, eta, cfg)?;
    Ok((out.primal, out.report))
}

/// Writes `iteration,residual,energy` rows for convergence plots.
pub fn write_trace_csv<W: Write>(trace: &[IterationRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "iteration,residual,energy")?;
    for r in trace {
        writeln!(out, "{},{:e},{:.10e}", r.iteration, r.residual, r.energy)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff_ops::{GradientOperator, TdvOperator, WeightField};
    use crate::volume::{Dims, Volume};

    fn pseudo_random(dims: Dims, seed: u64, scale: f64) -> Volume {
        let mut s = seed;
        Volume::from_fn(dims, |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 * scale
        })
        .unwrap()
    }

    #[test]
    fn prox_dual_cases() {
        let cells = Dims::new(1, 1, 2);
        let y = CellField6::new(
            cells,
            vec![0.3, 0.4, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let p = prox_dual(&y);
        assert_eq!(&p.as_slice()[..6], &y.as_slice()[..6]);
        assert_eq!(&p.as_slice()[6..], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn prox_dual_is_idempotent() {
        let cells = Dims::new(3, 2, 2);
        let y = CellField6::new(cells, pseudo_random(Dims::new(6, 6, 2), 4, 3.0).into_vec()).unwrap();
        let once = prox_dual(&y);
        assert_eq!(prox_dual(&once), once);
        for c in once.as_slice().chunks(6) {
            assert!(c.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1.0 + 1e-15);
        }
    }

    #[test]
    fn prox_primal_cases() {
        let d = Dims::new(2, 2, 2);
        let zero = Volume::zeros(d).unwrap();
        let one = Volume::filled(d, 1.0).unwrap();
        let half = prox_primal(&zero, 1.0, 1.0, &one).unwrap();
        assert!(half.as_slice().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert_eq!(prox_primal(&one, 3.0, 7.0, &one).unwrap(), one);
        let tiny = prox_primal(&zero, 1e-12, 1.0, &one).unwrap();
        assert!(tiny.as_slice().iter().all(|&v| v.abs() <= 1e-9));
        assert!(prox_primal(&zero, 0.0, 1.0, &one).is_err());
    }

    #[test]
    fn energy_cases() {
        let d = Dims::new(3, 4, 2);
        let w = WeightField::identity(d);
        let op = TdvOperator::new(&w);
        let c = Volume::filled(d, 5.0).unwrap();
        assert_eq!(energy(&c, &c, &op, 3.0).unwrap(), 0.0);
        let c1 = Volume::filled(d, 6.0).unwrap();
        assert!((energy(&c, &c1, &op, 2.0).unwrap() - d.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn constant_data_is_a_fixed_point() {
        let d = Dims::new(5, 4, 3);
        let w = WeightField::identity(d);
        let c = Volume::filled(d, 0.4).unwrap();
        let (u, rep) = solve_accelerated_pd(&TdvOperator::new(&w), &c, &c, 10.0, &SolverConfig::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        assert!(u.max_abs_diff(&c) < 1e-15);
    }

    #[test]
    fn strong_fidelity_returns_data() {
        let d = Dims::new(6, 6, 4);
        let noisy = pseudo_random(d, 12, 1.0);
        let op = GradientOperator::new(d);
        let (u, _) = solve_accelerated_pd(&op, &noisy, &noisy, 1e6, &SolverConfig::default()).unwrap();
        assert!(u.max_abs_diff(&noisy) <= 1e-3);
    }

    #[test]
    fn dual_stays_feasible_and_steps_keep_product() {
        let d = Dims::new(8, 8, 4);
        let noisy = pseudo_random(d, 21, 1.0);
        let w = WeightField::identity(d);
        let op = TdvOperator::new(&w);
        let cfg = SolverConfig::default().with_tol(0.0).with_maxiter(100).with_trace(true);
        let out = solve_primal_dual(&op, &noisy, &noisy, 5.0, &cfg).unwrap();
        for g in out.dual.chunks(6) {
            assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1.0 + 1e-12);
        }
        let tr = &out.report.trace;
        assert_eq!(tr.len(), 100);
        let p0 = tr[0].tau * tr[0].sigma;
        assert!((p0 - 1.0 / 24.0).abs() < 1e-15);
        for pair in tr.windows(2) {
            assert!(pair[1].tau < pair[0].tau);
            assert!(pair[1].sigma > pair[0].sigma);
            assert!((pair[1].tau * pair[1].sigma - p0).abs() <= 1e-12 * p0);
        }
    }

    #[test]
    fn energy_bounded_below_by_dual_value() {
        let d = Dims::new(6, 5, 4);
        let noisy = pseudo_random(d, 33, 1.0);
        let w = WeightField::identity(d);
        let op = TdvOperator::new(&w);
        let eta = 8.0;
        let out = solve_primal_dual(&op, &noisy, &noisy, eta, &SolverConfig::default()).unwrap();
        let dual = dual_value(&out.dual, &noisy, &op, eta);
        let primal = energy(&out.primal, &noisy, &op, eta).unwrap();
        assert!(primal >= dual);
        assert!(energy(&noisy, &noisy, &op, eta).unwrap() >= dual);
        assert!(primal <= energy(&noisy, &noisy, &op, eta).unwrap());
        // Near-optimal pair: small duality gap relative to the energy.
        assert!((primal - dual) / primal < 1e-2, "gap {}", primal - dual);
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = Dims::new(3, 3, 3);
        let u = Volume::zeros(d).unwrap();
        let other = Volume::zeros(Dims::new(3, 3, 4)).unwrap();
        let op = GradientOperator::new(d);
        let cfg = SolverConfig::default();
        assert!(solve_accelerated_pd(&op, &u, &other, 1.0, &cfg).is_err());
        assert!(solve_accelerated_pd(&op, &u, &u, 0.0, &cfg).is_err());
        assert!(SolverConfig::new(0.0, 1e-4, 10).is_err());
        assert!(SolverConfig::new(24.0, 1e-4, 0).is_err());
    }

    /// Behaves like the plain gradient but emits NaN from the third forward
    /// application on.
    struct Poisoned {
        inner: GradientOperator,
        calls: std::sync::atomic::AtomicUsize,
    }

    impl LinearOperator for Poisoned {
        fn domain(&self) -> Dims {
            self.inner.domain()
        }
        fn group_size(&self) -> usize {
            3
        }
        fn codomain_len(&self) -> usize {
            self.inner.codomain_len()
        }
        fn apply(&self, u: &Volume) -> Vec<f64> {
            let n = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            let mut out = self.inner.apply(u);
            if n >= 2 {
                out[0] = f64::NAN;
            }
            out
        }
        fn apply_adjoint(&self, y: &[f64]) -> Volume {
            self.inner.apply_adjoint(y)
        }
        fn norm_sq_bound(&self) -> f64 {
            12.0
        }
    }

    #[test]
    fn non_finite_iterate_is_reported() {
        let d = Dims::new(4, 4, 4);
        let noisy = pseudo_random(d, 5, 1.0);
        let op = Poisoned { inner: GradientOperator::new(d), calls: 0.into() };
        let cfg = SolverConfig::default().with_tol(0.0);
        let err = solve_accelerated_pd(&op, &noisy, &noisy, 1.0, &cfg).unwrap_err();
        assert!(matches!(err, TdvError::NumericalFailure { iteration: 3 }), "{err}");
    }

    #[test]
    fn trace_csv_format() {
        let rec = IterationRecord { iteration: 3, residual: 0.5, energy: 2.0, tau: 0.1, sigma: 0.2 };
        let mut buf = Vec::new();
        write_trace_csv(&[rec], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("iteration,residual,energy"));
        assert!(text.lines().nth(1).unwrap().starts_with("3,5e-1,"));
    }
}
