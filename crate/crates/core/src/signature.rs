//! Truncated signatures of piecewise-linear paths and the signature MMD.

use crate::error::{Error, Result};
use crate::paths::{interpolate_linear, TimeSeries};

/// Levels `1..=depth` of a truncated signature; level `k` holds `c^k`
/// entries, row-major. Level 0 is the implicit scalar 1.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedSignature {
    pub channels: usize,
    pub depth: usize,
    pub levels: Vec<Vec<f64>>,
}

impl TruncatedSignature {
    /// The signature of a constant path.
    pub fn identity(channels: usize, depth: usize) -> Self {
        TruncatedSignature {
            channels,
            depth,
            levels: (1..=depth).map(|k| vec![0.0; channels.pow(k as u32)]).collect(),
        }
    }

    /// Signature of one straight segment with increment `delta`:
    /// level `k` is `delta^{(x)k} / k!`.
    pub fn segment(delta: &[f64], depth: usize) -> Self {
        let mut levels: Vec<Vec<f64>> = Vec::with_capacity(depth);
        if depth > 0 {
            levels.push(delta.to_vec());
        }
        for k in 2..=depth {
            let prev = &levels[k - 2];
            let mut next = Vec::with_capacity(prev.len() * delta.len());
            for p in prev {
                next.extend(delta.iter().map(|d| p * d / k as f64));
            }
            levels.push(next);
        }
        TruncatedSignature {
            channels: delta.len(),
            depth,
            levels,
        }
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.levels[k - 1]
    }

    /// Levels `1..=depth` concatenated.
    pub fn flatten(&self) -> Vec<f64> {
        self.levels.concat()
    }
}

/// Level `k` of `a (x) b` is `sum_{i+j=k} a_i (x) b_j`.
pub fn chen_product(a: &TruncatedSignature, b: &TruncatedSignature) -> Result<TruncatedSignature> {
    if a.channels != b.channels || a.depth != b.depth {
        return Err(Error::InvalidArgument(format!(
            "signature mismatch: (c={}, d={}) vs (c={}, d={})",
            a.channels, a.depth, b.channels, b.depth
        )));
    }
    let mut out = Vec::with_capacity(a.depth);
    for k in 1..=a.depth {
        let mut level = a.levels[k - 1].clone();
        for (l, bv) in level.iter_mut().zip(&b.levels[k - 1]) {
            *l += bv;
        }
        for i in 1..k {
            let (ai, bj) = (&a.levels[i - 1], &b.levels[k - i - 1]);
            let n = bj.len();
            for (p, av) in ai.iter().enumerate() {
                for (q, bv) in bj.iter().enumerate() {
                    level[p * n + q] += av * bv;
                }
            }
        }
        out.push(level);
    }
    Ok(TruncatedSignature {
        channels: a.channels,
        depth: a.depth,
        levels: out,
    })
}

/// Signature of the piecewise-linear path through `points`.
pub fn points_signature(points: &[Vec<f64>], depth: usize) -> Result<TruncatedSignature> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(
            "a signature needs a path of at least two points".into(),
        ));
    }
    if depth == 0 {
        return Err(Error::InvalidArgument("signature depth must be >= 1".into()));
    }
    let c = points[0].len();
    let mut sig = TruncatedSignature::identity(c, depth);
    for w in points.windows(2) {
        let delta: Vec<f64> = w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect();
        sig = chen_product(&sig, &TruncatedSignature::segment(&delta, depth))?;
    }
    Ok(sig)
}

/// Signature of a series, linearly interpolated through missing values.
/// With `time_augment`, the time stamp is channel 0.
pub fn signature(series: &TimeSeries, depth: usize, time_augment: bool) -> Result<TruncatedSignature> {
    let values = if series.is_complete() {
        series.values.clone()
    } else {
        interpolate_linear(series)?.values
    };
    let points: Vec<Vec<f64>> = (0..series.len())
        .map(|i| {
            let mut p = Vec::with_capacity(values.len() + 1);
            if time_augment {
                p.push(series.times[i]);
            }
            p.extend(values.iter().map(|v| v[i]));
            p
        })
        .collect();
    points_signature(&points, depth)
}

fn mean_signature(set: &[TimeSeries], depth: usize, time_augment: bool) -> Result<Vec<f64>> {
    let mut acc: Vec<f64> = Vec::new();
    for s in set {
        let f = signature(s, depth, time_augment)?.flatten();
        if acc.is_empty() {
            acc = f;
        } else if acc.len() != f.len() {
            return Err(Error::InvalidArgument("paths differ in channel count".into()));
        } else {
            for (a, v) in acc.iter_mut().zip(&f) {
                *a += v;
            }
        }
    }
    let n = set.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Squared MMD with the time-augmented truncated signature as feature map:
/// `|mean_A sig - mean_B sig|^2`.
pub fn signature_mmd(a: &[TimeSeries], b: &[TimeSeries], depth: usize) -> Result<f64> {
    signature_mmd_with(a, b, depth, true)
}

pub fn signature_mmd_with(a: &[TimeSeries], b: &[TimeSeries], depth: usize, time_augment: bool) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("MMD needs two non-empty collections".into()));
    }
    let ma = mean_signature(a, depth, time_augment)?;
    let mb = mean_signature(b, depth, time_augment)?;
    if ma.len() != mb.len() {
        return Err(Error::InvalidArgument("collections differ in channel count".into()));
    }
    Ok(ma.iter().zip(&mb).map(|(x, y)| (x - y) * (x - y)).sum())
}
