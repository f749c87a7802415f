use crate::error::{Error, Result};
use crate::paths::GridData;

/// Exact Wasserstein-1 distance between two empirical distributions on
/// the line.
pub fn w1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("W1 needs two non-empty samples".into()));
    }
    let sorted = |x: &[f64]| {
        let mut v = x.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (a, b) = (sorted(a), sorted(b));
    if a.len() == b.len() {
        let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(s / a.len() as f64);
    }
    // integral of |F_a - F_b| between consecutive points of the merged sample
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// W1 between the marginals of `a` and `b` at each grid index, averaged
/// over channels.
pub fn marginal_w1(a: &GridData, b: &GridData, indices: &[usize]) -> Result<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("marginal W1 needs two non-empty collections".into()));
    }
    if a.channels != b.channels {
        return Err(Error::InvalidArgument(format!(
            "collections have {} and {} channels",
            a.channels, b.channels
        )));
    }
    let n = a.times.len().min(b.times.len());
    indices
        .iter()
        .map(|&i| {
            if i >= n {
                return Err(Error::InvalidArgument(format!("time index {i} is outside a grid of {n} points")));
            }
            let mut s = 0.0;
            for c in 0..a.channels {
                s += w1(&a.marginal(i, c), &b.marginal(i, c))?;
            }
            Ok(s / a.channels as f64)
        })
        .collect()
}

/// Histogram of real and generated values over shared, equal-width bins.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalHistogram {
    pub index: usize,
    pub time: f64,
    pub channel: usize,
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub real: Vec<usize>,
    pub fake: Vec<usize>,
}

pub fn marginal_histograms(
    real: &GridData,
    fake: &GridData,
    indices: &[usize],
    bins: usize,
) -> Result<Vec<MarginalHistogram>> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histograms need at least one bin".into()));
    }
    let mut out = Vec::new();
    for &i in indices {
        if i >= real.times.len() || i >= fake.times.len() {
            return Err(Error::InvalidArgument(format!("time index {i} is outside the grid")));
        }
        for c in 0..real.channels {
            let (r, f) = (real.marginal(i, c), fake.marginal(i, c));
            let lo = r.iter().chain(&f).copied().fold(f64::INFINITY, f64::min);
            let mut hi = r.iter().chain(&f).copied().fold(f64::NEG_INFINITY, f64::max);
            if !(hi > lo) {
                hi = lo + 1.0;
            }
            let width = (hi - lo) / bins as f64;
            let edges = (0..=bins).map(|k| lo + k as f64 * width).collect();
            let count = |xs: &[f64]| {
                let mut h = vec![0; bins];
                for &x in xs {
                    h[(((x - lo) / width) as usize).min(bins - 1)] += 1;
                }
                h
            };
            out.push(MarginalHistogram {
                index: i,
                time: real.times[i],
                channel: c,
                edges,
                real: count(&r),
                fake: count(&f),
            });
        }
    }
    Ok(out)
}

pub fn histograms_csv(hists: &[MarginalHistogram]) -> String {
    let mut s = String::from("index,t,channel,bin_lo,bin_hi,real,fake\n");
    for h in hists {
        for k in 0..h.real.len() {
            s.push_str(&format!(
                "{},{},{},{:e},{:e},{},{}\n",
                h.index,
                h.time,
                h.channel,
                h.edges[k],
                h.edges[k + 1],
                h.real[k],
                h.fake[k]
            ));
        }
    }
    s
}
