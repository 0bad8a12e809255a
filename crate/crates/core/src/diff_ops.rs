//! Staggered-grid derivative operators and the weighted gradient `K = M W ∇̃`.
//!
//! Voxel values sit on grid vertices. Forward differences along axis `p`
//! live on edge midpoints (`+0.5` along `p`) and vanish on the last grid
//! line (Neumann). The averaging step `W` moves each edge sample to the
//! centres of the `(M-1) × (N-1) × (T-1)` cells, where the per-cell weight
//! blocks of `M` act on the stacked channels
//! `(∂₁u, ∂₂u, ∂₁u, ∂₃u, ∂₂u, ∂₃u)`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, TdvError};
use crate::volume::{Dims, Volume};

/// Differencing axis of each stacked channel.
pub const CHANNEL_AXIS: [usize; 6] = [0, 1, 0, 2, 1, 2];

/// Row-major 2×2 matrix.
pub type Mat2 = [[f64; 2]; 2];

pub const IDENTITY2: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

/// Coordinate plane of one weight block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    XY,
    XT,
    YT,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::XY, Plane::XT, Plane::YT];

    /// The two axes spanning the plane.
    pub const fn axes(self) -> (usize, usize) {
        match self {
            Plane::XY => (0, 1),
            Plane::XT => (0, 2),
            Plane::YT => (1, 2),
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            Plane::XY => "xy",
            Plane::XT => "xt",
            Plane::YT => "yt",
        }
    }
}

/// Forward differences along the three axes, each on the full voxel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient3 {
    dims: Dims,
    pub channels: [Vec<f64>; 3],
}

impl Gradient3 {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn get(&self, axis: usize, i: usize, j: usize, k: usize) -> f64 {
        self.channels[axis][self.dims.index(i, j, k)]
    }
}

/// The six stacked channels of `∇̃u`, located on grid edges.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeField6 {
    dims: Dims,
    pub channels: [Vec<f64>; 6],
}

impl EdgeField6 {
    pub fn new(dims: Dims, channels: [Vec<f64>; 6]) -> Result<Self> {
        dims.validate()?;
        if channels.iter().any(|c| c.len() != dims.len()) {
            return Err(TdvError::invalid("edge channel length does not match dims"));
        }
        Ok(Self { dims, channels })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn get(&self, c: usize, i: usize, j: usize, k: usize) -> f64 {
        self.channels[c][self.dims.index(i, j, k)]
    }
}

/// Six values per cell centre, interleaved as `data[6 * cell + channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellField6 {
    cells: Dims,
    data: Vec<f64>,
}

impl CellField6 {
    pub fn zeros(cells: Dims) -> Self {
        Self { cells, data: vec![0.0; 6 * cells.len()] }
    }

    pub fn new(cells: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != 6 * cells.len() {
            return Err(TdvError::invalid(format!(
                "cell field of {cells} needs {} values, got {}",
                6 * cells.len(),
                data.len()
            )));
        }
        Ok(Self { cells, data })
    }

    pub fn cells(&self) -> Dims {
        self.cells
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn cell(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let c = self.cells.index(i, j, k);
        &self.data[6 * c..6 * c + 6]
    }

    pub fn cell_mut(&mut self, i: usize, j: usize, k: usize) -> &mut [f64] {
        let c = self.cells.index(i, j, k);
        &mut self.data[6 * c..6 * c + 6]
    }

    pub fn dot(&self, other: &CellField6) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Orthonormal frame and confidence of one plane: the block
/// `diag(confidence, 1) · [gradient; tangent]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneFrame {
    pub confidence: f64,
    pub gradient: [f64; 2],
    pub tangent: [f64; 2],
}

impl PlaneFrame {
    pub const CANONICAL: PlaneFrame =
        PlaneFrame { confidence: 1.0, gradient: [1.0, 0.0], tangent: [0.0, 1.0] };

    pub fn matrix(&self) -> Mat2 {
        let a = self.confidence;
        [[a * self.gradient[0], a * self.gradient[1]], self.tangent]
    }
}

/// Per-cell weight blocks for the planes `{x,y}`, `{x,t}`, `{y,t}`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightField {
    cells: Dims,
    blocks: Vec<[Mat2; 3]>,
}

impl WeightField {
    pub fn from_blocks(cells: Dims, blocks: Vec<[Mat2; 3]>) -> Result<Self> {
        if blocks.len() != cells.len() {
            return Err(TdvError::invalid(format!(
                "weight field of {cells} needs {} blocks, got {}",
                cells.len(),
                blocks.len()
            )));
        }
        Ok(Self { cells, blocks })
    }

    pub fn from_frames(cells: Dims, frames: &[[PlaneFrame; 3]]) -> Result<Self> {
        let blocks = frames.iter().map(|f| f.map(|p| p.matrix())).collect();
        Self::from_blocks(cells, blocks)
    }

    /// Identity blocks for a volume of `dims`: `K` reduces to `W ∇̃`.
    pub fn identity(dims: Dims) -> Self {
        Self::uniform(dims, [IDENTITY2; 3])
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::uniform(dims, [[[0.0; 2]; 2]; 3])
    }

    pub fn uniform(dims: Dims, block: [Mat2; 3]) -> Self {
        let cells = dims.cells();
        Self { cells, blocks: vec![block; cells.len()] }
    }

    pub fn cells(&self) -> Dims {
        self.cells
    }

    /// Dimensions of the voxel grid the field belongs to.
    pub fn volume_dims(&self) -> Dims {
        Dims::new(self.cells.rows + 1, self.cells.cols + 1, self.cells.frames + 1)
    }

    pub fn blocks(&self) -> &[[Mat2; 3]] {
        &self.blocks
    }

    pub fn block(&self, i: usize, j: usize, k: usize) -> &[Mat2; 3] {
        &self.blocks[self.cells.index(i, j, k)]
    }

    pub fn block_mut(&mut self, i: usize, j: usize, k: usize) -> &mut [Mat2; 3] {
        let idx = self.cells.index(i, j, k);
        &mut self.blocks[idx]
    }

    fn check_volume(&self, dims: Dims) -> Result<()> {
        if self.volume_dims() != dims {
            return Err(TdvError::DimensionMismatch { expected: self.volume_dims(), actual: dims });
        }
        Ok(())
    }

    fn check_cells(&self, cells: Dims) -> Result<()> {
        if self.cells != cells {
            return Err(TdvError::DimensionMismatch { expected: self.cells, actual: cells });
        }
        Ok(())
    }
}

fn axis_len(dims: Dims, axis: usize) -> usize {
    dims.as_array()[axis]
}

fn axis_stride(dims: Dims, axis: usize) -> usize {
    match axis {
        0 => dims.cols,
        1 => 1,
        _ => dims.frame_len(),
    }
}

/// Forward differences with zero on the last line of each axis (h = 1).
pub fn gradient3(u: &Volume) -> Gradient3 {
    let dims = u.dims();
    let data = u.as_slice();
    let channels = [0, 1, 2].map(|axis| {
        let stride = axis_stride(dims, axis);
        let last = axis_len(dims, axis) - 1;
        let mut out = vec![0.0; dims.len()];
        for k in 0..dims.frames {
            for i in 0..dims.rows {
                for j in 0..dims.cols {
                    let pos = [i, j, k][axis];
                    if pos < last {
                        let idx = dims.index(i, j, k);
                        out[idx] = data[idx + stride] - data[idx];
                    }
                }
            }
        }
        out
    });
    Gradient3 { dims, channels }
}

/// `∇̃u`: the three axis differences restacked as `(1, 2, 1, 3, 2, 3)`.
pub fn stacked_gradient(u: &Volume) -> EdgeField6 {
    let g = gradient3(u);
    let [d1, d2, d3] = g.channels;
    EdgeField6 { dims: g.dims, channels: [d1.clone(), d2.clone(), d1, d3.clone(), d2, d3] }
}

/// `W`: averages the four edge samples of each channel surrounding a cell
/// centre in the two axes orthogonal to the channel's differencing axis.
pub fn cell_average(g: &EdgeField6) -> CellField6 {
    let dims = g.dims;
    let cells = dims.cells();
    let mut out = CellField6::zeros(cells);
    for k in 0..cells.frames {
        for i in 0..cells.rows {
            for j in 0..cells.cols {
                let cell = out.cell_mut(i, j, k);
                for (c, &axis) in CHANNEL_AXIS.iter().enumerate() {
                    let ch = &g.channels[c];
                    let mut sum = 0.0;
                    for a in 0..2 {
                        for b in 0..2 {
                            let (ii, jj, kk) = match axis {
                                0 => (i, j + a, k + b),
                                1 => (i + a, j, k + b),
                                _ => (i + a, j + b, k),
                            };
                            sum += ch[dims.index(ii, jj, kk)];
                        }
                    }
                    cell[c] = 0.25 * sum;
                }
            }
        }
    }
    out
}

#[inline]
fn mat_vec(m: &Mat2, x: f64, y: f64) -> (f64, f64) {
    (m[0][0] * x + m[0][1] * y, m[1][0] * x + m[1][1] * y)
}

#[inline]
fn mat_t_vec(m: &Mat2, x: f64, y: f64) -> (f64, f64) {
    (m[0][0] * x + m[1][0] * y, m[0][1] * x + m[1][1] * y)
}

/// Applies the three weight blocks of one cell to its stacked channels.
#[inline]
fn weight_cell(block: &[Mat2; 3], input: &[f64], out: &mut [f64]) {
    for p in 0..3 {
        let (a, b) = mat_vec(&block[p], input[2 * p], input[2 * p + 1]);
        out[2 * p] = a;
        out[2 * p + 1] = b;
    }
}

/// `M`: per cell, `(out₂ₚ, out₂ₚ₊₁) = Wₚ (in₂ₚ, in₂ₚ₊₁)` for each plane `p`.
pub fn apply_m(c: &CellField6, w: &WeightField) -> Result<CellField6> {
    w.check_cells(c.cells)?;
    let mut out = CellField6::zeros(c.cells);
    out.data
        .par_chunks_mut(6)
        .zip(c.data.par_chunks(6))
        .zip(w.blocks.par_iter())
        .for_each(|((o, x), block)| weight_cell(block, x, o));
    Ok(out)
}

/// Averaged axis derivatives `(g₁, g₂, g₃)` at every cell centre, read off
/// the eight corners of the cell. Equals `W ∇̃` with duplicates removed.
fn cell_gradients(u: &Volume) -> Vec<[f64; 3]> {
    let dims = u.dims();
    let cells = dims.cells();
    let data = u.as_slice();
    let (sj, si, sk) = (1, dims.cols, dims.frame_len());
    let mut out = vec![[0.0; 3]; cells.len()];
    out.par_chunks_mut(cells.frame_len()).enumerate().for_each(|(k, frame)| {
        for i in 0..cells.rows {
            for j in 0..cells.cols {
                let o = dims.index(i, j, k);
                let c000 = data[o];
                let c010 = data[o + sj];
                let c100 = data[o + si];
                let c110 = data[o + si + sj];
                let c001 = data[o + sk];
                let c011 = data[o + sk + sj];
                let c101 = data[o + sk + si];
                let c111 = data[o + sk + si + sj];
                frame[i * cells.cols + j] = [
                    0.25 * ((c100 - c000) + (c110 - c010) + (c101 - c001) + (c111 - c011)),
                    0.25 * ((c010 - c000) + (c110 - c100) + (c011 - c001) + (c111 - c101)),
                    0.25 * ((c001 - c000) + (c011 - c010) + (c101 - c100) + (c111 - c110)),
                ];
            }
        }
    });
    out
}

/// Transpose of [`cell_gradients`]: every voxel gathers from the up to eight
/// cells it is a corner of, so the reduction order is fixed.
fn cell_gradients_adjoint(h: &[[f64; 3]], dims: Dims) -> Volume {
    let cells = dims.cells();
    let mut out = vec![0.0; dims.len()];
    out.par_chunks_mut(dims.frame_len()).enumerate().for_each(|(k, frame)| {
        for i in 0..dims.rows {
            for j in 0..dims.cols {
                let mut acc = 0.0;
                // Corner offset 1 means this voxel is the `+` end along that axis.
                for (ck, ok) in [(k.wrapping_sub(1), 1), (k, 0)] {
                    if ck >= cells.frames {
                        continue;
                    }
                    for (ci, oi) in [(i.wrapping_sub(1), 1), (i, 0)] {
                        if ci >= cells.rows {
                            continue;
                        }
                        for (cj, oj) in [(j.wrapping_sub(1), 1), (j, 0)] {
                            if cj >= cells.cols {
                                continue;
                            }
                            let g = &h[cells.index(ci, cj, ck)];
                            let sign = |o: i32| if o == 1 { 1.0 } else { -1.0 };
                            acc += sign(oi) * g[0] + sign(oj) * g[1] + sign(ok) * g[2];
                        }
                    }
                }
                frame[i * dims.cols + j] = 0.25 * acc;
            }
        }
    });
    Volume::from_raw(dims, out)
}

/// `K u = M W ∇̃ u`, evaluated cell by cell.
pub fn apply_k(u: &Volume, w: &WeightField) -> Result<CellField6> {
    w.check_volume(u.dims())?;
    let grads = cell_gradients(u);
    let mut out = CellField6::zeros(w.cells);
    out.data
        .par_chunks_mut(6)
        .zip(grads.par_iter())
        .zip(w.blocks.par_iter())
        .for_each(|((o, g), block)| {
            weight_cell(block, &[g[0], g[1], g[0], g[2], g[1], g[2]], o);
        });
    Ok(out)
}

/// Exact transpose of [`apply_k`]: `Mᵀ` per cell, summation of duplicated
/// channels, then the transposed averaging/difference stencil.
pub fn apply_k_adjoint(y: &CellField6, w: &WeightField) -> Result<Volume> {
    w.check_cells(y.cells)?;
    let h: Vec<[f64; 3]> = y
        .data
        .par_chunks(6)
        .zip(w.blocks.par_iter())
        .map(|(v, block)| {
            let (a0, a1) = mat_t_vec(&block[0], v[0], v[1]);
            let (b0, b1) = mat_t_vec(&block[1], v[2], v[3]);
            let (c0, c1) = mat_t_vec(&block[2], v[4], v[5]);
            [a0 + b0, a1 + c0, b1 + c1]
        })
        .collect();
    Ok(cell_gradients_adjoint(&h, w.volume_dims()))
}

/// A linear map from a volume to a field of fixed-size groups, together with
/// its transpose. The primal-dual solver projects each group onto the unit
/// Euclidean ball.
pub trait LinearOperator: Sync {
    fn domain(&self) -> Dims;
    /// Components per dual group.
    fn group_size(&self) -> usize;
    fn codomain_len(&self) -> usize;
    fn apply(&self, u: &Volume) -> Vec<f64>;
    fn apply_adjoint(&self, y: &[f64]) -> Volume;
    /// An a-priori upper bound on `‖K‖²`.
    fn norm_sq_bound(&self) -> f64;
}

/// The weighted gradient `M W ∇̃` of a fixed weight field.
#[derive(Clone, Copy, Debug)]
pub struct TdvOperator<'a> {
    weights: &'a WeightField,
}

impl<'a> TdvOperator<'a> {
    pub fn new(weights: &'a WeightField) -> Self {
        Self { weights }
    }

    pub fn weights(&self) -> &WeightField {
        self.weights
    }
}

impl LinearOperator for TdvOperator<'_> {
    fn domain(&self) -> Dims {
        self.weights.volume_dims()
    }
    fn group_size(&self) -> usize {
        6
    }
    fn codomain_len(&self) -> usize {
        6 * self.weights.cells.len()
    }
    fn apply(&self, u: &Volume) -> Vec<f64> {
        apply_k(u, self.weights).expect("volume matches weight field").into_vec()
    }
    fn apply_adjoint(&self, y: &[f64]) -> Volume {
        let y = CellField6 { cells: self.weights.cells, data: y.to_vec() };
        apply_k_adjoint(&y, self.weights).expect("dual matches weight field")
    }
    fn norm_sq_bound(&self) -> f64 {
        24.0
    }
}

/// The plain staggered gradient `∇ = (∂₁, ∂₂, ∂₃)` with one 3-vector per
/// voxel; the classical ROF 2D+t discretisation.
#[derive(Clone, Copy, Debug)]
pub struct GradientOperator {
    dims: Dims,
}

impl GradientOperator {
    pub fn new(dims: Dims) -> Self {
        Self { dims }
    }
}

impl LinearOperator for GradientOperator {
    fn domain(&self) -> Dims {
        self.dims
    }
    fn group_size(&self) -> usize {
        3
    }
    fn codomain_len(&self) -> usize {
        3 * self.dims.len()
    }
    fn apply(&self, u: &Volume) -> Vec<f64> {
        let g = gradient3(u);
        let mut out = vec![0.0; 3 * self.dims.len()];
        for (idx, o) in out.chunks_mut(3).enumerate() {
            o[0] = g.channels[0][idx];
            o[1] = g.channels[1][idx];
            o[2] = g.channels[2][idx];
        }
        out
    }
    fn apply_adjoint(&self, y: &[f64]) -> Volume {
        let dims = self.dims;
        let mut out = vec![0.0; dims.len()];
        out.par_chunks_mut(dims.frame_len()).enumerate().for_each(|(k, frame)| {
            for i in 0..dims.rows {
                for j in 0..dims.cols {
                    let pos = [i, j, k];
                    let idx = dims.index(i, j, k);
                    let mut acc = 0.0;
                    for axis in 0..3 {
                        let stride = axis_stride(dims, axis);
                        if pos[axis] > 0 {
                            acc += y[3 * (idx - stride) + axis];
                        }
                        if pos[axis] + 1 < axis_len(dims, axis) {
                            acc -= y[3 * idx + axis];
                        }
                    }
                    frame[i * dims.cols + j] = acc;
                }
            }
        });
        Volume::from_raw(dims, out)
    }
    fn norm_sq_bound(&self) -> f64 {
        12.0
    }
}

/// `W ∇` with one averaged 3-vector per cell. Used to compare the identity
/// weighted operator against ROF on the same grid.
#[derive(Clone, Copy, Debug)]
pub struct AveragedGradientOperator {
    dims: Dims,
}

impl AveragedGradientOperator {
    pub fn new(dims: Dims) -> Self {
        Self { dims }
    }
}

impl LinearOperator for AveragedGradientOperator {
    fn domain(&self) -> Dims {
        self.dims
    }
    fn group_size(&self) -> usize {
        3
    }
    fn codomain_len(&self) -> usize {
        3 * self.dims.cells().len()
    }
    fn apply(&self, u: &Volume) -> Vec<f64> {
        cell_gradients(u).into_iter().flatten().collect()
    }
    fn apply_adjoint(&self, y: &[f64]) -> Volume {
        let h: Vec<[f64; 3]> = y.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        cell_gradients_adjoint(&h, self.dims)
    }
    fn norm_sq_bound(&self) -> f64 {
        12.0
    }
}

/// Iteration cap for [`power_iteration_norm_sq`].
pub const POWER_ITERATION_CAP: usize = 20_000;

/// Largest eigenvalue of `K*K` by power iteration from a fixed pseudo-random
/// start, stopping once the Rayleigh quotient changes by less than
/// `rel_tol` relative.
pub fn power_iteration_norm_sq(op: &impl LinearOperator, rel_tol: f64) -> Result<f64> {
    let dims = op.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let start: Vec<f64> =
        (0..dims.len()).map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5).collect();
    let mut v = Volume::from_raw(dims, start);
    let mut lambda = 0.0;
    let mut change = f64::INFINITY;
    for _ in 0..POWER_ITERATION_CAP {
        let n = v.norm();
        if n == 0.0 {
            return Ok(0.0);
        }
        v.as_mut_slice().iter_mut().for_each(|x| *x /= n);
        let kv = op.apply(&v);
        let next = kv.iter().map(|x| x * x).sum::<f64>();
        if next == 0.0 {
            return Ok(0.0);
        }
        change = (next - lambda).abs() / next;
        lambda = next;
        if change <= rel_tol {
            return Ok(lambda);
        }
        v = op.apply_adjoint(&kv);
    }
    Err(TdvError::NoConvergence { iterations: POWER_ITERATION_CAP, change })
}

/// `‖K‖²` estimate for the weighted gradient of `w` on a volume of `dims`.
pub fn operator_norm_sq(w: &WeightField, dims: Dims) -> Result<f64> {
    w.check_volume(dims)?;
    power_iteration_norm_sq(&TdvOperator::new(w), 1e-6)
}
