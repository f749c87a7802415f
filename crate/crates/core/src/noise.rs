//! Seeded noise sources: the Gaussian initial noise `V` and Brownian
//! increments on a fixed grid.
//!
//! One master seed is split into labelled streams ("brownian",
//! "initial-noise", "data-shuffle", ...). Each stream is a ChaCha20
//! generator keyed by `SHA-256(master, label, indices)`. Gaussians come
//! from the Box-Muller transform applied to 53-bit uniforms on (0, 1).

use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const STREAM_INITIAL: &str = "initial-noise";
pub const STREAM_BROWNIAN: &str = "brownian";
pub const STREAM_SHUFFLE: &str = "data-shuffle";
pub const STREAM_PENALTY: &str = "penalty-interpolant";
pub const STREAM_INIT: &str = "parameter-init";

/// Master seed from which all labelled streams of a run are derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedSequence {
    master: u64,
}

impl SeedSequence {
    pub fn new(master: u64) -> Self {
        SeedSequence { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Independent stream for `label`, further keyed by `index` (e.g. step
    /// number and batch chunk).
    pub fn stream(&self, label: &str, index: &[u64]) -> RandomStream {
        let mut h = Sha256::new();
        h.update(b"sdegan/stream/v1");
        h.update(self.master.to_le_bytes());
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        for i in index {
            h.update(i.to_le_bytes());
        }
        let seed: [u8; 32] = h.finalize().into();
        RandomStream {
            rng: ChaCha20Rng::from_seed(seed),
            spare: None,
        }
    }
}

pub struct RandomStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl RandomStream {
    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller; the sine branch is cached for the
    /// next call.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        (self.uniform() * n as f64) as usize % n.max(1)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Brownian increments `dW_i ~ N(0, dt_i I_w)` for a batch of independent
/// paths on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianSample {
    pub grid: Vec<f64>,
    pub dim: usize,
    pub batch: usize,
    /// `increments[i]` is the row-major `batch x dim` step from `grid[i]`
    /// to `grid[i + 1]`.
    pub increments: Vec<Vec<f64>>,
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidArgument(
            "a time grid needs at least two points".into(),
        ));
    }
    if let Some(i) = grid.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(format!(
            "time grid is not strictly increasing at index {}",
            i + 1
        )));
    }
    Ok(())
}

impl BrownianSample {
    /// Draws `batch` paths. Each path's increments are drawn in time
    /// order, path after path, so path `b` does not depend on `batch`.
    pub fn draw(stream: &mut RandomStream, grid: &[f64], dim: usize, batch: usize) -> Result<Self> {
        check_grid(grid)?;
        if dim == 0 {
            return Err(Error::InvalidArgument("Brownian dimension must be >= 1".into()));
        }
        let steps = grid.len() - 1;
        let mut increments = vec![vec![0.0; batch * dim]; steps];
        for b in 0..batch {
            for (i, inc) in increments.iter_mut().enumerate() {
                let sd = (grid[i + 1] - grid[i]).sqrt();
                for d in 0..dim {
                    inc[b * dim + d] = sd * stream.normal();
                }
            }
        }
        Ok(BrownianSample {
            grid: grid.to_vec(),
            dim,
            batch,
            increments,
        })
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    /// Per-step `[batch, dim]` tensors.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.increments
            .iter()
            .map(|inc| Tensor::new(vec![self.batch, self.dim], inc.clone()).expect("sized"))
            .collect()
    }

    /// Merges every `factor` consecutive steps by summing their increments.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps() % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps()
            )));
        }
        let grid = self.grid.iter().step_by(factor).copied().collect();
        let increments = self
            .increments
            .chunks(factor)
            .map(|chunk| {
                let mut acc = vec![0.0; self.batch * self.dim];
                for inc in chunk {
                    for (a, v) in acc.iter_mut().zip(inc) {
                        *a += v;
                    }
                }
                acc
            })
            .collect();
        Ok(BrownianSample {
            grid,
            dim: self.dim,
            batch: self.batch,
            increments,
        })
    }

    /// `W_T - W_0` per path, row-major `batch x dim`.
    pub fn total(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.batch * self.dim];
        for inc in &self.increments {
            for (a, v) in acc.iter_mut().zip(inc) {
                *a += v;
            }
        }
        acc
    }
}

/// One Brownian path on `grid`, reproducible from `seed`.
pub fn sample_brownian(seed: u64, grid: &[f64], w: usize) -> Result<BrownianSample> {
    let mut s = SeedSequence::new(seed).stream(STREAM_BROWNIAN, &[]);
    BrownianSample::draw(&mut s, grid, w, 1)
}

/// Initial noise `V ~ N(0, I_v)` for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialNoise {
    pub dim: usize,
    pub batch: usize,
    pub values: Vec<f64>,
}

impl InitialNoise {
    pub fn draw(stream: &mut RandomStream, dim: usize, batch: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("initial noise dimension must be >= 1".into()));
        }
        let values = (0..dim * batch).map(|_| stream.normal()).collect();
        Ok(InitialNoise { dim, batch, values })
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::new(vec![self.batch, self.dim], self.values.clone()).expect("sized")
    }
}

/// One draw of `V`, reproducible from `seed`.
pub fn sample_initial(seed: u64, v: usize) -> Result<InitialNoise> {
    let mut s = SeedSequence::new(seed).stream(STREAM_INITIAL, &[]);
    InitialNoise::draw(&mut s, v, 1)
}
