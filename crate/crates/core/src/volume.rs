//! Scalar video volumes, quality metrics and synthetic data.
//!
//! A [`Volume`] is one colour channel of an `rows × cols × frames` video
//! stored frame-major: voxel `(i, j, k)` lives at `(k * rows + i) * cols + j`,
//! so each frame is a contiguous row-major slice.

use std::f64::consts::PI;
use std::fmt;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, TdvError};

/// Nominal intensity peak of 8-bit video.
pub const PEAK: f64 = 255.0;

/// Grid extent along the three axes `(i, j, k)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub rows: usize,
    pub cols: usize,
    pub frames: usize,
}

impl Dims {
    pub const fn new(rows: usize, cols: usize, frames: usize) -> Self {
        Self { rows, cols, frames }
    }

    pub const fn len(&self) -> usize {
        self.rows * self.cols * self.frames
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn frame_len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub const fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.rows + i) * self.cols + j
    }

    /// Dimensions of the cell-centre grid, one fewer along every axis.
    pub const fn cells(&self) -> Dims {
        Dims::new(self.rows - 1, self.cols - 1, self.frames - 1)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.rows, self.cols, self.frames]
    }

    /// Every axis must hold at least two samples so that one cell exists.
    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 || self.frames < 2 {
            return Err(TdvError::invalid(format!(
                "volume must be at least 2x2x2, got {self}"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.rows, self.cols, self.frames)
    }
}

fn ensure_same(expected: Dims, actual: Dims) -> Result<()> {
    if expected != actual {
        return Err(TdvError::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// One channel of a video as double-precision intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: Dims,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(TdvError::invalid(format!(
                "data length {} does not match {dims} = {}",
                data.len(),
                dims.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(TdvError::invalid(format!("non-finite value at index {pos}")));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f64) -> Result<Self> {
        Self::new(dims, vec![value; dims.len()])
    }

    /// Builds a volume by evaluating `f(i, j, k)` at every voxel.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for k in 0..dims.frames {
            for i in 0..dims.rows {
                for j in 0..dims.cols {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(dims, data)
    }

    /// Wraps data produced internally; callers guarantee the invariants.
    pub(crate) fn from_raw(dims: Dims, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.len());
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
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

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.dims.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let idx = self.dims.index(i, j, k);
        self.data[idx] = value;
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        let n = self.dims.frame_len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Volume {
        Volume::from_raw(self.dims, self.data.par_iter().map(|&v| f(v)).collect())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn dot(&self, other: &Volume) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs_diff(&self, other: &Volume) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A video of one (grey) or three (colour) channels sharing dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiChannelVideo {
    channels: Vec<Volume>,
}

impl MultiChannelVideo {
    pub fn new(channels: Vec<Volume>) -> Result<Self> {
        if channels.len() != 1 && channels.len() != 3 {
            return Err(TdvError::invalid(format!(
                "a video has 1 or 3 channels, got {}",
                channels.len()
            )));
        }
        let dims = channels[0].dims();
        for c in &channels[1..] {
            ensure_same(dims, c.dims())?;
        }
        Ok(Self { channels })
    }

    pub fn grey(volume: Volume) -> Self {
        Self { channels: vec![volume] }
    }

    pub fn dims(&self) -> Dims {
        self.channels[0].dims()
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[Volume] {
        &self.channels
    }

    pub fn channel(&self, c: usize) -> &Volume {
        &self.channels[c]
    }

    pub fn into_channels(self) -> Vec<Volume> {
        self.channels
    }
}

impl From<Volume> for MultiChannelVideo {
    fn from(v: Volume) -> Self {
        Self::grey(v)
    }
}

/// Anything made of equally shaped channels; lets the metrics accept both
/// single volumes and colour videos.
pub trait Channels {
    fn dims(&self) -> Dims;
    fn channel_data(&self) -> Vec<&[f64]>;
}

impl Channels for Volume {
    fn dims(&self) -> Dims {
        self.dims
    }
    fn channel_data(&self) -> Vec<&[f64]> {
        vec![&self.data]
    }
}

impl Channels for MultiChannelVideo {
    fn dims(&self) -> Dims {
        MultiChannelVideo::dims(self)
    }
    fn channel_data(&self) -> Vec<&[f64]> {
        self.channels.iter().map(|c| c.as_slice()).collect()
    }
}

fn check_pair<V: Channels + ?Sized>(u: &V, reference: &V, peak: f64) -> Result<()> {
    ensure_same(reference.dims(), u.dims())?;
    if u.channel_data().len() != reference.channel_data().len() {
        return Err(TdvError::invalid("channel count mismatch"));
    }
    if !(peak > 0.0) {
        return Err(TdvError::invalid(format!("peak must be positive, got {peak}")));
    }
    Ok(())
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Squared-error sum over voxels `range` of every channel.
fn sse(u: &[&[f64]], r: &[&[f64]], range: std::ops::Range<usize>) -> f64 {
    u.iter()
        .zip(r)
        .map(|(a, b)| {
            a[range.clone()]
                .iter()
                .zip(&b[range.clone()])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
        })
        .sum()
}

/// Peak signal-to-noise ratio in dB from the pooled MSE over all voxels and
/// channels. Identical inputs give `f64::INFINITY`.
pub fn psnr<V: Channels + ?Sized>(u: &V, reference: &V, peak: f64) -> Result<f64> {
    check_pair(u, reference, peak)?;
    let (a, b) = (u.channel_data(), reference.channel_data());
    let n = u.dims().len();
    let mse = sse(&a, &b, 0..n) / (n * a.len()) as f64;
    Ok(psnr_from_mse(mse, peak))
}

/// PSNR of each frame separately, pooled over channels.
pub fn psnr_per_frame<V: Channels + ?Sized>(u: &V, reference: &V, peak: f64) -> Result<Vec<f64>> {
    check_pair(u, reference, peak)?;
    let (a, b) = (u.channel_data(), reference.channel_data());
    let n = u.dims().frame_len();
    Ok((0..u.dims().frames)
        .map(|k| {
            let mse = sse(&a, &b, k * n..(k + 1) * n) / (n * a.len()) as f64;
            psnr_from_mse(mse, peak)
        })
        .collect())
}

/// Zero-mean i.i.d. Gaussian noise parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub std_dev: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(std_dev: f64, seed: u64) -> Result<Self> {
        if !(std_dev >= 0.0) || !std_dev.is_finite() {
            return Err(TdvError::invalid(format!(
                "noise standard deviation must be >= 0, got {std_dev}"
            )));
        }
        Ok(Self { std_dev, seed })
    }
}

// Each sample consumes exactly four 32-bit ChaCha words, so the stream
// position of voxel `n` is `4 n` whatever the chunking.
const WORDS_PER_SAMPLE: u128 = 4;

fn fill_gaussian(out: &mut [f64], seed: u64, first_index: u64, std_dev: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(first_index as u128 * WORDS_PER_SAMPLE);
    for v in out {
        // Box-Muller; u1 in (0, 1] keeps the log finite.
        let u1 = ((rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
        let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        *v += std_dev * (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos();
    }
}

fn noise_into(data: &mut [f64], frame_len: usize, spec: &NoiseSpec, offset: u64) {
    if spec.std_dev == 0.0 {
        return;
    }
    data.par_chunks_mut(frame_len).enumerate().for_each(|(k, chunk)| {
        fill_gaussian(chunk, spec.seed, offset + (k * frame_len) as u64, spec.std_dev);
    });
}

/// Returns `u + n` with `n ~ N(0, std_dev²)` per voxel. The result is not
/// clipped, and the noise field depends only on the seed and voxel index.
pub fn add_gaussian_noise(u: &Volume, spec: &NoiseSpec) -> Volume {
    let mut out = u.clone();
    noise_into(&mut out.data, u.dims.frame_len(), spec, 0);
    out
}

/// Channel `c` draws from the stream positions following channel `c - 1`.
pub fn add_gaussian_noise_video(video: &MultiChannelVideo, spec: &NoiseSpec) -> MultiChannelVideo {
    let len = video.dims().len() as u64;
    let channels = video
        .channels()
        .iter()
        .enumerate()
        .map(|(c, vol)| {
            let mut out = vol.clone();
            noise_into(&mut out.data, vol.dims.frame_len(), spec, c as u64 * len);
            out
        })
        .collect();
    MultiChannelVideo { channels }
}

/// Franke's bivariate test function on the unit square.
pub fn franke(x: f64, y: f64) -> f64 {
    let (x9, y9) = (9.0 * x, 9.0 * y);
    0.75 * (-((x9 - 2.0).powi(2) + (y9 - 2.0).powi(2)) / 4.0).exp()
        + 0.75 * (-(x9 + 1.0).powi(2) / 49.0 - (y9 + 1.0) / 10.0).exp()
        + 0.5 * (-((x9 - 7.0).powi(2) + (y9 - 3.0).powi(2)) / 4.0).exp()
        - 0.2 * (-(x9 - 4.0).powi(2) - (y9 - 7.0).powi(2)).exp()
}

/// Synthetic video: Franke's surface sampled on a grid whose origin moves
/// along `(a sin(2πk/T), a cos(2πk/T))`, rescaled to `[0, 255]` over the
/// whole volume.
pub fn franke_video(rows: usize, cols: usize, frames: usize, motion_amplitude: f64) -> Result<Volume> {
    let dims = Dims::new(rows, cols, frames);
    dims.validate()?;
    let mut v = Volume::from_fn(dims, |i, j, k| {
        let phase = 2.0 * PI * k as f64 / frames as f64;
        let x = i as f64 / (rows - 1) as f64 + motion_amplitude * phase.sin();
        let y = j as f64 / (cols - 1) as f64 + motion_amplitude * phase.cos();
        franke(x, y)
    })?;
    let (lo, hi) = v.min_max();
    let scale = if hi > lo { PEAK / (hi - lo) } else { 0.0 };
    for x in v.as_mut_slice() {
        *x = ((*x - lo) * scale).clamp(0.0, PEAK);
    }
    Ok(v)
}
