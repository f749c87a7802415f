//! Synthetic datasets.

use crate::error::{Error, Result};
use crate::noise::SeedSequence;
use crate::paths::TimeSeries;

pub const STREAM_OU: &str = "ou";

/// Time-dependent Ornstein-Uhlenbeck process
/// `dz = (mu t - theta z) dt + sigma o dW`, `z_0 = z0`.
#[derive(Clone, Debug, PartialEq)]
pub struct OUParams {
    pub mu: f64,
    pub theta: f64,
    pub sigma: f64,
    pub samples: usize,
    /// Output times are `0, spacing, ..., horizon`.
    pub horizon: f64,
    pub spacing: f64,
    /// Internal solver steps per output step.
    pub substeps: usize,
    pub z0: f64,
    pub seed: u64,
}

impl Default for OUParams {
    fn default() -> Self {
        OUParams {
            mu: 0.02,
            theta: 0.1,
            sigma: 0.4,
            samples: 8192,
            horizon: 63.0,
            spacing: 1.0,
            substeps: 10,
            z0: 0.0,
            seed: 0,
        }
    }
}

impl OUParams {
    pub fn output_times(&self) -> Vec<f64> {
        let n = (self.horizon / self.spacing).round() as usize;
        (0..=n).map(|i| i as f64 * self.spacing).collect()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.samples == 0 || self.substeps == 0 {
            return bad("sample and substep counts must be positive".into());
        }
        if !(self.theta >= 0.0) || !(self.sigma >= 0.0) {
            return bad(format!("theta and sigma must be >= 0, got {} and {}", self.theta, self.sigma));
        }
        if !(self.spacing > 0.0) || !(self.horizon >= self.spacing) {
            return bad(format!("need 0 < spacing <= horizon, got {} and {}", self.spacing, self.horizon));
        }
        let n = self.horizon / self.spacing;
        if (n - n.round()).abs() > 1e-9 {
            return bad("horizon must be a whole number of output steps".into());
        }
        Ok(())
    }
}

/// Simulates the process with the midpoint scheme on a grid `substeps`
/// times finer than the output grid. Sample `k` uses its own noise stream.
pub fn generate_ou(p: &OUParams) -> Result<Vec<TimeSeries>> {
    p.validate()?;
    let times = p.output_times();
    let dt = p.spacing / p.substeps as f64;
    let sd = dt.sqrt();
    let drift = |t: f64, z: f64| p.mu * t - p.theta * z;
    let seq = SeedSequence::new(p.seed);
    (0..p.samples)
        .map(|k| {
            let mut rng = seq.stream(STREAM_OU, &[k as u64]);
            let mut z = p.z0;
            let mut vals = Vec::with_capacity(times.len());
            vals.push(z);
            for i in 0..times.len() - 1 {
                for j in 0..p.substeps {
                    let t = times[i] + j as f64 * dt;
                    let dw = sd * rng.normal();
                    let mid = z + 0.5 * (drift(t, z) * dt + p.sigma * dw);
                    z += drift(t + 0.5 * dt, mid) * dt + p.sigma * dw;
                }
                vals.push(z);
            }
            TimeSeries::new(times.clone(), vec![vals])
        })
        .collect()
}
