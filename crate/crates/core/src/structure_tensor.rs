//! Directional structure from the volumetric structure tensor.
//!
//! The tensor `S = K_ρ * (∇u_σ ⊗ ∇u_σ)` is assembled at voxels, moved to cell
//! centres by averaging its components over the eight cell corners, and
//! split into the 2×2 sub-tensors of the planes `{x,y}`, `{x,t}`, `{y,t}`.
//! Each sub-tensor's eigenpairs give a gradient/tangent frame and the
//! confidence `λ_lo / (λ_hi + ε)` that make up one weight block.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::diff_ops::{Plane, PlaneFrame, WeightField};
use crate::error::{Result, TdvError};
use crate::volume::{Dims, Volume};

/// Confidence regulariser on the `[0, 255]` intensity scale.
pub const DEFAULT_EPSILON: f64 = 1e-4;

/// Component order of [`TensorField3`].
pub const S11: usize = 0;
pub const S12: usize = 1;
pub const S13: usize = 2;
pub const S22: usize = 3;
pub const S23: usize = 4;
pub const S33: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothingParams {
    pub sigma: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl SmoothingParams {
    pub fn new(sigma: f64, rho: f64, epsilon: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma <= rho && rho.is_finite()) {
            return Err(TdvError::invalid(format!(
                "smoothing requires 0 < sigma <= rho, got sigma={sigma}, rho={rho}"
            )));
        }
        if !(epsilon > 0.0) {
            return Err(TdvError::invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { sigma, rho, epsilon })
    }

    pub fn with_default_epsilon(sigma: f64, rho: f64) -> Result<Self> {
        Self::new(sigma, rho, DEFAULT_EPSILON)
    }
}

/// The six unique components `(s11, s12, s13, s22, s23, s33)` per grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField3 {
    dims: Dims,
    pub components: [Vec<f64>; 6],
}

impl TensorField3 {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn at(&self, idx: usize) -> [f64; 6] {
        std::array::from_fn(|c| self.components[c][idx])
    }

    pub fn matrix(&self, idx: usize) -> [[f64; 3]; 3] {
        let s = self.at(idx);
        [[s[S11], s[S12], s[S13]], [s[S12], s[S22], s[S23]], [s[S13], s[S23], s[S33]]]
    }
}

/// `(a, b, c)` of the plane's sub-tensor `[[a, b], [b, c]]`.
pub fn plane_subtensor(s: &[f64; 6], plane: Plane) -> (f64, f64, f64) {
    match plane {
        Plane::XY => (s[S11], s[S12], s[S22]),
        Plane::XT => (s[S11], s[S13], s[S33]),
        Plane::YT => (s[S22], s[S23], s[S33]),
    }
}

/// Normalised 1D Gaussian truncated at radius `⌈3s⌉`.
pub fn gaussian_kernel(s: f64) -> Vec<f64> {
    if s <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * s).ceil() as i64;
    let mut k: Vec<f64> =
        (-radius..=radius).map(|x| (-(x * x) as f64 / (2.0 * s * s)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn convolve_axis(data: &[f64], dims: Dims, axis: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as i64;
    let len = dims.as_array()[axis] as i64;
    let mut out = vec![0.0; dims.len()];
    out.par_chunks_mut(dims.frame_len()).enumerate().for_each(|(k, frame)| {
        for i in 0..dims.rows {
            for j in 0..dims.cols {
                let pos = [i, j, k];
                let mut acc = 0.0;
                for (t, w) in kernel.iter().enumerate() {
                    let mut p = pos;
                    p[axis] = (pos[axis] as i64 + t as i64 - radius).clamp(0, len - 1) as usize;
                    acc += w * data[dims.index(p[0], p[1], p[2])];
                }
                frame[i * dims.cols + j] = acc;
            }
        }
    });
    out
}

fn smooth_slice(data: &[f64], dims: Dims, s: f64) -> Vec<f64> {
    if s == 0.0 {
        return data.to_vec();
    }
    let kernel = gaussian_kernel(s);
    let a = convolve_axis(data, dims, 0, &kernel);
    let b = convolve_axis(&a, dims, 1, &kernel);
    convolve_axis(&b, dims, 2, &kernel)
}

/// Separable isotropic 3D Gaussian with replicate padding; `s = 0` is the
/// identity.
pub fn gaussian_smooth(u: &Volume, s: f64) -> Result<Volume> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(TdvError::invalid(format!("smoothing std-dev must be >= 0, got {s}")));
    }
    Volume::new(u.dims(), smooth_slice(u.as_slice(), u.dims(), s))
}

/// Gradient at voxels: mean of the two half-step differences around each
/// voxel, the missing one at a border counting as zero.
fn voxel_gradient(u: &Volume) -> [Vec<f64>; 3] {
    let dims = u.dims();
    let d = u.as_slice();
    [0, 1, 2].map(|axis| {
        let stride = match axis {
            0 => dims.cols,
            1 => 1,
            _ => dims.frame_len(),
        };
        let len = dims.as_array()[axis];
        let mut g = vec![0.0; dims.len()];
        for k in 0..dims.frames {
            for i in 0..dims.rows {
                for j in 0..dims.cols {
                    let pos = [i, j, k][axis];
                    let idx = dims.index(i, j, k);
                    let fwd = if pos + 1 < len { d[idx + stride] - d[idx] } else { 0.0 };
                    let bwd = if pos > 0 { d[idx] - d[idx - stride] } else { 0.0 };
                    g[idx] = 0.5 * (fwd + bwd);
                }
            }
        }
        g
    })
}

/// `S = K_ρ * (∇u_σ ⊗ ∇u_σ)` at every voxel.
pub fn structure_tensor3(u: &Volume, sigma: f64, rho: f64) -> Result<TensorField3> {
    if !(sigma >= 0.0 && sigma <= rho) {
        return Err(TdvError::invalid(format!(
            "structure tensor requires 0 <= sigma <= rho, got sigma={sigma}, rho={rho}"
        )));
    }
    let dims = u.dims();
    let smoothed = gaussian_smooth(u, sigma)?;
    let [gx, gy, gt] = voxel_gradient(&smoothed);
    let pairs = [(&gx, &gx), (&gx, &gy), (&gx, &gt), (&gy, &gy), (&gy, &gt), (&gt, &gt)];
    let components = pairs.map(|(a, b)| {
        let prod: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
        smooth_slice(&prod, dims, rho)
    });
    Ok(TensorField3 { dims, components })
}

/// Mean of each component over the eight corners of every cell.
pub fn cell_tensors(t: &TensorField3) -> TensorField3 {
    let dims = t.dims;
    let cells = dims.cells();
    let components = std::array::from_fn(|c| {
        let src = &t.components[c];
        let mut out = vec![0.0; cells.len()];
        out.par_chunks_mut(cells.frame_len()).enumerate().for_each(|(k, frame)| {
            for i in 0..cells.rows {
                for j in 0..cells.cols {
                    let mut acc = 0.0;
                    for dk in 0..2 {
                        for di in 0..2 {
                            for dj in 0..2 {
                                acc += src[dims.index(i + di, j + dj, k + dk)];
                            }
                        }
                    }
                    frame[i * cells.cols + j] = 0.125 * acc;
                }
            }
        });
        out
    });
    TensorField3 { dims: cells, components }
}

/// Eigenpairs of a symmetric 2×2 matrix, `hi` belonging to the larger value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenPair2 {
    pub lambda_hi: f64,
    pub lambda_lo: f64,
    pub e_hi: [f64; 2],
    pub e_lo: [f64; 2],
}

/// Flips `v` so that its first nonzero component is positive.
fn canonical_sign(v: [f64; 2]) -> [f64; 2] {
    let lead = if v[0] != 0.0 { v[0] } else { v[1] };
    if lead < 0.0 {
        [-v[0], -v[1]]
    } else {
        v
    }
}

/// Closed-form eigendecomposition of `[[a, b], [b, c]]`. Exact isotropy
/// (`b = 0`, `a = c`) yields the canonical basis.
pub fn eig2x2_symmetric(a: f64, b: f64, c: f64) -> EigenPair2 {
    let mean = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    let radius = half_diff.hypot(b);
    let (lambda_hi, lambda_lo) = (mean + radius, mean - radius);
    if radius == 0.0 {
        return EigenPair2 { lambda_hi, lambda_lo, e_hi: [1.0, 0.0], e_lo: [0.0, 1.0] };
    }
    // Pick the better-conditioned of the two null-space expressions.
    let v = if a >= c { [half_diff + radius, b] } else { [b, radius - half_diff] };
    let n = v[0].hypot(v[1]);
    let e_hi = canonical_sign([v[0] / n, v[1] / n]);
    let e_lo = canonical_sign([-e_hi[1], e_hi[0]]);
    EigenPair2 { lambda_hi, lambda_lo, e_hi, e_lo }
}

/// `λ_lo / (λ_hi + ε)`, with small negative eigenvalues clamped to zero.
pub fn confidence(lambda_hi: f64, lambda_lo: f64, epsilon: f64) -> f64 {
    let hi = lambda_hi.max(0.0);
    let lo = lambda_lo.max(0.0).min(hi);
    lo / (hi + epsilon)
}

fn plane_frame(s: &[f64; 6], plane: Plane, epsilon: f64) -> PlaneFrame {
    let (a, b, c) = plane_subtensor(s, plane);
    let eig = eig2x2_symmetric(a, b, c);
    PlaneFrame {
        confidence: confidence(eig.lambda_hi, eig.lambda_lo, epsilon),
        gradient: eig.e_hi,
        tangent: eig.e_lo,
    }
}

/// Per-cell frames and confidences of all three planes.
pub fn plane_frames(cell_tensor: &TensorField3, epsilon: f64) -> Vec<[PlaneFrame; 3]> {
    (0..cell_tensor.dims.len())
        .into_par_iter()
        .map(|idx| {
            let s = cell_tensor.at(idx);
            Plane::ALL.map(|p| plane_frame(&s, p, epsilon))
        })
        .collect()
}

/// The weight field `M` of a (noisy) channel.
pub fn build_weight_field(u_noisy: &Volume, params: &SmoothingParams) -> Result<WeightField> {
    let tensor = structure_tensor3(u_noisy, params.sigma, params.rho)?;
    let cells = cell_tensors(&tensor);
    WeightField::from_frames(cells.dims, &plane_frames(&cells, params.epsilon))
}

/// Dumps cell-centre confidences and tangent directions as CSV, one row per
/// cell: `x,y,t,a_xy,e2_x,e2_y,a_xt,e4_x,e4_t,a_yt,e6_y,e6_t`.
pub fn write_weight_csv<W: Write>(w: &WeightField, mut out: W) -> io::Result<()> {
    writeln!(out, "x,y,t,a_xy,e2_x,e2_y,a_xt,e4_x,e4_t,a_yt,e6_y,e6_t")?;
    let cells = w.cells();
    for k in 0..cells.frames {
        for i in 0..cells.rows {
            for j in 0..cells.cols {
                write!(out, "{},{},{}", i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5)?;
                for m in w.block(i, j, k) {
                    let a = m[0][0].hypot(m[0][1]);
                    write!(out, ",{a},{},{}", m[1][0], m[1][1])?;
                }
                writeln!(out)?;
            }
        }
    }
    Ok(())
}
