//! Time-series containers, linear interpolation, normalisation and CSV
//! ingestion.
//!
//! CSV layout: header `sample_id,t,ch0,...,ch{y-1}`, one row per
//! (sample, time), rows of a sample contiguous with strictly increasing
//! `t`. An empty value field marks a missing observation.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Observations of `y` channels at strictly increasing times.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    /// `values[c][i]` is channel `c` at `times[i]`; meaningless where
    /// `observed[c][i]` is false.
    pub values: Vec<Vec<f64>>,
    pub observed: Vec<Vec<bool>>,
}

impl TimeSeries {
    /// A fully observed series.
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let observed = values.iter().map(|v| vec![true; v.len()]).collect();
        Self::with_mask(times, values, observed)
    }

    pub fn with_mask(times: Vec<f64>, values: Vec<Vec<f64>>, observed: Vec<Vec<bool>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::data(None, "a time series needs at least one channel"));
        }
        if values.len() != observed.len()
            || values
                .iter()
                .zip(&observed)
                .any(|(v, o)| v.len() != times.len() || o.len() != times.len())
        {
            return Err(Error::data(None, "channel lengths disagree with the time stamps"));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::data(
                None,
                format!("times not strictly increasing at index {}", i + 1),
            ));
        }
        Ok(TimeSeries {
            times,
            values,
            observed,
        })
    }

    pub fn channels(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn get(&self, channel: usize, i: usize) -> Option<f64> {
        self.observed[channel][i].then(|| self.values[channel][i])
    }

    pub fn is_complete(&self) -> bool {
        self.observed.iter().all(|o| o.iter().all(|&b| b))
    }
}

/// Piecewise-linear path through fully specified knots. Outside the knot
/// range it is held constant.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolatedPath {
    pub knots: Vec<f64>,
    /// `values[c][i]` at `knots[i]`.
    pub values: Vec<Vec<f64>>,
}

impl InterpolatedPath {
    pub fn channels(&self) -> usize {
        self.values.len()
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.knots.len();
        if n == 1 || t <= self.knots[0] {
            return (0, 0.0);
        }
        if t >= self.knots[n - 1] {
            return (n - 2, 1.0);
        }
        // first knot strictly greater than t
        let hi = self.knots.partition_point(|&k| k <= t);
        let lo = hi - 1;
        let w = (t - self.knots[lo]) / (self.knots[hi] - self.knots[lo]);
        (lo, w)
    }

    pub fn evaluate(&self, t: f64) -> Vec<f64> {
        let (lo, w) = self.locate(t);
        self.values
            .iter()
            .map(|v| {
                if v.len() == 1 {
                    v[0]
                } else if w == 0.0 {
                    v[lo]
                } else if w == 1.0 {
                    v[lo + 1]
                } else {
                    v[lo] + w * (v[lo + 1] - v[lo])
                }
            })
            .collect()
    }

    /// Samples the path at `grid`.
    pub fn sample(&self, grid: &[f64]) -> Result<TimeSeries> {
        let mut values = vec![Vec::with_capacity(grid.len()); self.channels()];
        for &t in grid {
            for (c, v) in self.evaluate(t).into_iter().enumerate() {
                values[c].push(v);
            }
        }
        TimeSeries::new(grid.to_vec(), values)
    }

    /// The same path with an extra knot at `t` (which lies on the path).
    pub fn with_knot(&self, t: f64) -> InterpolatedPath {
        if self.knots.contains(&t) {
            return self.clone();
        }
        let at = self.evaluate(t);
        let pos = self.knots.partition_point(|&k| k < t);
        let mut knots = self.knots.clone();
        knots.insert(pos, t);
        let values = self
            .values
            .iter()
            .zip(at)
            .map(|(v, x)| {
                let mut v = v.clone();
                v.insert(pos, x);
                v
            })
            .collect();
        InterpolatedPath { knots, values }
    }
}

/// Linear interpolation through the observed entries of each channel.
///
/// Interior gaps are filled along the line between the nearest observed
/// neighbours; leading and trailing gaps take the nearest observation.
pub fn interpolate_linear(series: &TimeSeries) -> Result<InterpolatedPath> {
    let mut values = Vec::with_capacity(series.channels());
    for c in 0..series.channels() {
        let obs: Vec<usize> = (0..series.len()).filter(|&i| series.observed[c][i]).collect();
        if obs.len() < 2 {
            return Err(Error::data(
                None,
                format!("channel {c} has {} observations, need at least 2", obs.len()),
            ));
        }
        let mut filled = series.values[c].clone();
        for (i, slot) in filled.iter_mut().enumerate() {
            if series.observed[c][i] {
                continue;
            }
            let hi = obs.partition_point(|&j| j < i);
            *slot = if hi == 0 {
                series.values[c][obs[0]]
            } else if hi == obs.len() {
                series.values[c][obs[obs.len() - 1]]
            } else {
                let (a, b) = (obs[hi - 1], obs[hi]);
                let (ta, tb) = (series.times[a], series.times[b]);
                let w = (series.times[i] - ta) / (tb - ta);
                series.values[c][a] + w * (series.values[c][b] - series.values[c][a])
            };
        }
        values.push(filled);
    }
    Ok(InterpolatedPath {
        knots: series.times.clone(),
        values,
    })
}

/// Per-channel affine statistics used by [`normalize`].
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        NormStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn apply(&self, s: &TimeSeries) -> TimeSeries {
        self.map(s, |c, v| (v - self.mean[c]) / self.std[c])
    }

    pub fn inverse(&self, s: &TimeSeries) -> TimeSeries {
        self.map(s, |c, v| v * self.std[c] + self.mean[c])
    }

    fn map(&self, s: &TimeSeries, f: impl Fn(usize, f64) -> f64) -> TimeSeries {
        let mut out = s.clone();
        for (c, vals) in out.values.iter_mut().enumerate() {
            for (i, v) in vals.iter_mut().enumerate() {
                if s.observed[c][i] {
                    *v = f(c, *v);
                }
            }
        }
        out
    }
}

/// Normalises to pooled per-channel zero mean and unit (population)
/// variance over all observed entries.
pub fn normalize(dataset: &[TimeSeries]) -> Result<(Vec<TimeSeries>, NormStats)> {
    let stats = fit_norm_stats(dataset)?;
    Ok((dataset.iter().map(|s| stats.apply(s)).collect(), stats))
}

pub fn fit_norm_stats(dataset: &[TimeSeries]) -> Result<NormStats> {
    let channels = check_channels(dataset)?;
    let mut mean = vec![0.0; channels];
    let mut std = vec![0.0; channels];
    for c in 0..channels {
        let vals = || {
            dataset.iter().flat_map(move |s| {
                s.values[c]
                    .iter()
                    .zip(&s.observed[c])
                    .filter(|(_, &o)| o)
                    .map(|(v, _)| *v)
            })
        };
        let n = vals().count();
        if n == 0 {
            return Err(Error::data(None, format!("channel ch{c} has no observations")));
        }
        let m = vals().sum::<f64>() / n as f64;
        let var = vals().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        if !(var > 0.0) {
            return Err(Error::data(None, format!("channel ch{c} has zero variance")));
        }
        mean[c] = m;
        std[c] = var.sqrt();
    }
    Ok(NormStats { mean, std })
}

fn check_channels(dataset: &[TimeSeries]) -> Result<usize> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::data(None, "empty dataset"))?;
    let y = first.channels();
    if let Some(i) = dataset.iter().position(|s| s.channels() != y) {
        return Err(Error::data(
            None,
            format!("sample {i} has {} channels, expected {y}", dataset[i].channels()),
        ));
    }
    Ok(y)
}

/// Samples on one shared grid, each flattened time-major: entry
/// `i * channels + c` is channel `c` at `times[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridData {
    pub times: Vec<f64>,
    pub channels: usize,
    pub rows: Vec<Vec<f64>>,
}

impl GridData {
    /// Dense regime: every sample must already share one time grid.
    /// Missing entries are filled by linear interpolation.
    pub fn from_common_grid(dataset: &[TimeSeries]) -> Result<Self> {
        let channels = check_channels(dataset)?;
        let times = dataset[0].times.clone();
        if times.len() < 2 {
            return Err(Error::data(None, "samples need at least two time points"));
        }
        let mut rows = Vec::with_capacity(dataset.len());
        for (k, s) in dataset.iter().enumerate() {
            if s.times != times {
                return Err(Error::data(
                    None,
                    format!("sample {k} is not on the shared time grid; use the sparse regime"),
                ));
            }
            let filled = if s.is_complete() {
                s.values.clone()
            } else {
                interpolate_linear(s)?.values
            };
            rows.push(flatten(&filled, times.len()));
        }
        Ok(GridData {
            times,
            channels,
            rows,
        })
    }

    /// Sparse regime: linearly interpolates every sample onto `grid`.
    pub fn resample(dataset: &[TimeSeries], grid: &[f64]) -> Result<Self> {
        let channels = check_channels(dataset)?;
        crate::noise::check_grid(grid)?;
        let rows = dataset
            .iter()
            .map(|s| {
                let p = interpolate_linear(s)?.sample(grid)?;
                Ok(flatten(&p.values, grid.len()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GridData {
            times: grid.to_vec(),
            channels,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.times.len() * self.channels
    }

    /// `[indices.len(), width]` constant tensor of the selected samples.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.width());
        for &i in indices {
            data.extend_from_slice(&self.rows[i]);
        }
        Tensor::new(vec![indices.len(), self.width()], data).expect("sized")
    }

    pub fn from_flat(times: Vec<f64>, channels: usize, flat: &[f64]) -> Result<Self> {
        let width = times.len() * channels;
        if width == 0 || flat.len() % width != 0 {
            return Err(Error::shape("GridData::from_flat", "length is not a multiple of the row width"));
        }
        Ok(GridData {
            rows: flat.chunks(width).map(<[f64]>::to_vec).collect(),
            times,
            channels,
        })
    }

    /// Channel `c` of every sample at grid index `i`.
    pub fn marginal(&self, i: usize, c: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[i * self.channels + c]).collect()
    }

    pub fn to_series(&self) -> Vec<TimeSeries> {
        let n = self.times.len();
        self.rows
            .iter()
            .map(|r| {
                let values = (0..self.channels)
                    .map(|c| (0..n).map(|i| r[i * self.channels + c]).collect())
                    .collect();
                TimeSeries::new(self.times.clone(), values).expect("grid is valid")
            })
            .collect()
    }

    pub fn map_values(&self, stats: &NormStats, inverse: bool) -> GridData {
        let mut out = self.clone();
        for r in &mut out.rows {
            for (k, v) in r.iter_mut().enumerate() {
                let c = k % self.channels;
                *v = if inverse {
                    *v * stats.std[c] + stats.mean[c]
                } else {
                    (*v - stats.mean[c]) / stats.std[c]
                };
            }
        }
        out
    }
}

fn flatten(values: &[Vec<f64>], n: usize) -> Vec<f64> {
    let y = values.len();
    let mut out = vec![0.0; n * y];
    for (c, v) in values.iter().enumerate() {
        for (i, x) in v.iter().enumerate() {
            out[i * y + c] = *x;
        }
    }
    out
}

pub fn read_csv(path: &Path) -> Result<Vec<TimeSeries>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file)
}

pub fn parse_csv(input: impl std::io::Read) -> Result<Vec<TimeSeries>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| Error::data(Some(1), e.to_string()))?
        .clone();
    if header.len() < 3 || &header[0] != "sample_id" || &header[1] != "t" {
        return Err(Error::data(
            Some(1),
            "header must be `sample_id,t,ch0,...`",
        ));
    }
    for (c, h) in header.iter().skip(2).enumerate() {
        if h != format!("ch{c}") {
            return Err(Error::data(Some(1), format!("expected column `ch{c}`, found `{h}`")));
        }
    }
    let y = header.len() - 2;

    struct Pending {
        id: String,
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
        observed: Vec<Vec<bool>>,
    }
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut cur: Option<Pending> = None;
    let finish = |p: Pending, out: &mut Vec<TimeSeries>| -> Result<()> {
        out.push(TimeSeries::with_mask(p.times, p.values, p.observed)?);
        Ok(())
    };

    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            Error::data(e.position().map(|p| p.line()), format!("malformed row: {e}"))
        })?;
        let line = rec.position().map(|p| p.line());
        if rec.len() != y + 2 {
            return Err(Error::data(
                line,
                format!("expected {} fields, found {}", y + 2, rec.len()),
            ));
        }
        let id = &rec[0];
        let t: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::data(line, format!("bad time `{}`", &rec[1])))?;
        if cur.as_ref().is_none_or(|p| p.id != id) {
            if let Some(p) = cur.take() {
                finish(p, &mut out)?;
            }
            if !seen.insert(id.to_string()) {
                return Err(Error::data(line, format!("rows of sample `{id}` are not contiguous")));
            }
            cur = Some(Pending {
                id: id.to_string(),
                times: Vec::new(),
                values: vec![Vec::new(); y],
                observed: vec![Vec::new(); y],
            });
        }
        let p = cur.as_mut().expect("set above");
        if p.times.last().is_some_and(|&last| !(t > last)) {
            return Err(Error::data(
                line,
                format!("time {t} does not increase within sample `{id}`"),
            ));
        }
        p.times.push(t);
        for c in 0..y {
            let field = rec[c + 2].trim();
            if field.is_empty() {
                p.values[c].push(0.0);
                p.observed[c].push(false);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::data(line, format!("bad value `{field}` in ch{c}")))?;
                p.values[c].push(v);
                p.observed[c].push(true);
            }
        }
    }
    if let Some(p) = cur.take() {
        finish(p, &mut out)?;
    }
    Ok(out)
}

pub fn write_csv(collection: &[TimeSeries], path: &Path) -> Result<()> {
    let text = format_csv(collection)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// CSV text for `collection`; sample ids are the collection indices.
pub fn format_csv(collection: &[TimeSeries]) -> Result<String> {
    let y = check_channels(collection)?;
    let mut s = String::from("sample_id,t");
    for c in 0..y {
        s.push_str(&format!(",ch{c}"));
    }
    s.push('\n');
    for (k, ts) in collection.iter().enumerate() {
        for i in 0..ts.len() {
            s.push_str(&format!("{k},{}", ts.times[i]));
            for c in 0..y {
                s.push(',');
                if let Some(v) = ts.get(c, i) {
                    s.push_str(&format!("{v}"));
                }
            }
            s.push('\n');
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(times: &[f64], vals: &[f64]) -> TimeSeries {
        TimeSeries::new(times.to_vec(), vec![vals.to_vec()]).unwrap()
    }

    #[test]
    fn midpoint_of_a_line() {
        let p = interpolate_linear(&series(&[0.0, 2.0], &[0.0, 4.0])).unwrap();
        assert_eq!(p.evaluate(1.0), vec![2.0]);
        assert_eq!(p.evaluate(2.0), vec![4.0]);
        assert_eq!(p.evaluate(0.0), vec![0.0]);
    }

    #[test]
    fn missing_interior_is_filled_linearly() {
        let s = TimeSeries::with_mask(
            vec![0.0, 1.0, 2.0],
            vec![vec![0.0, 123.0, 4.0]],
            vec![vec![true, false, true]],
        )
        .unwrap();
        let p = interpolate_linear(&s).unwrap();
        assert_eq!(p.values[0], vec![0.0, 2.0, 4.0]);
    }

    #[test]
    fn missing_ends_take_nearest_observation() {
        let s = TimeSeries::with_mask(
            vec![0.0, 1.0, 2.0, 3.0],
            vec![vec![9.0, 1.0, 3.0, 9.0]],
            vec![vec![false, true, true, false]],
        )
        .unwrap();
        assert_eq!(interpolate_linear(&s).unwrap().values[0], vec![1.0, 1.0, 3.0, 3.0]);
    }

    #[test]
    fn too_few_observations_is_an_error() {
        let s = TimeSeries::with_mask(
            vec![0.0, 1.0],
            vec![vec![1.0, 2.0]],
            vec![vec![true, false]],
        )
        .unwrap();
        assert!(interpolate_linear(&s).is_err());
    }

    #[test]
    fn normalize_three_values() {
        let (out, stats) = normalize(&[series(&[0., 1., 2.], &[1., 2., 3.])]).unwrap();
        let k = 1.224744871391589;
        for (a, b) in out[0].values[0].iter().zip([-k, 0.0, k]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(stats.mean, vec![2.0]);
        let back = stats.inverse(&out[0]);
        for (a, b) in back.values[0].iter().zip([1., 2., 3.]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_is_idempotent() {
        let (once, _) = normalize(&[series(&[0., 1., 2., 3.], &[5., -1., 2., 7.])]).unwrap();
        let (twice, stats) = normalize(&once).unwrap();
        assert!(stats.mean[0].abs() < 1e-12 && (stats.std[0] - 1.0).abs() < 1e-12);
        for (a, b) in once[0].values[0].iter().zip(&twice[0].values[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_variance_names_channel() {
        let s = TimeSeries::new(vec![0., 1.], vec![vec![1., 2.], vec![3., 3.]]).unwrap();
        let err = normalize(&[s]).unwrap_err().to_string();
        assert!(err.contains("ch1"), "{err}");
    }

    #[test]
    fn csv_basics_and_round_trip() {
        let text = "sample_id,t,ch0\n0,0,1.5\n0,1,\n0,2,2.5\n";
        let c = parse_csv(text.as_bytes()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].len(), 3);
        assert!(!c[0].observed[0][1]);
        let again = parse_csv(format_csv(&c).unwrap().as_bytes()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let err = parse_csv("sample_id,t,ch0\n0,0,1\n0,x,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Data { line: Some(3), .. }), "{err}");
        let err = parse_csv("sample_id,t,ch0\n0,0,1\n0,0,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Data { line: Some(3), .. }), "{err}");
        let err = parse_csv("sample_id,t,ch0\n0,0,1\n0,1,2,3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Data { line: Some(3), .. }), "{err}");
        assert!(parse_csv("id,t,ch0\n".as_bytes()).is_err());
        let err = parse_csv("sample_id,t,ch0\n0,0,1\n1,0,1\n0,1,1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("contiguous"));
    }

    #[test]
    fn dense_grid_requires_shared_times() {
        let a = series(&[0., 1.], &[0., 1.]);
        let b = series(&[0., 2.], &[0., 1.]);
        assert!(GridData::from_common_grid(&[a.clone(), b.clone()]).is_err());
        let g = GridData::resample(&[a, b], &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(g.rows[1], vec![0.0, 0.5, 1.0]);
        assert_eq!(g.rows[0], vec![0.0, 1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn interpolation_exact_and_collinear_knot_invariant(
            vals in proptest::collection::vec(-10.0f64..10.0, 2..12),
            gaps in proptest::collection::vec(0.1f64..3.0, 12),
            insert in 0.0f64..1.0,
            queries in proptest::collection::vec(-1.0f64..40.0, 20),
        ) {
            let mut times = vec![0.0];
            for g in gaps.iter().take(vals.len() - 1) {
                times.push(times.last().unwrap() + g);
            }
            let p = interpolate_linear(&series(&times, &vals)).unwrap();
            for (t, v) in times.iter().zip(&vals) {
                prop_assert_eq!(p.evaluate(*t)[0], *v);
            }
            let t_new = insert * times[times.len() - 1];
            let q = p.with_knot(t_new);
            for t in queries {
                prop_assert!((p.evaluate(t)[0] - q.evaluate(t)[0]).abs() < 1e-12);
            }
        }

        #[test]
        fn normalize_inverse_round_trip(vals in proptest::collection::vec(-1e3f64..1e3, 3..20)) {
            let times: Vec<f64> = (0..vals.len()).map(|i| i as f64).collect();
            let s = series(&times, &vals);
            if let Ok((out, stats)) = normalize(std::slice::from_ref(&s)) {
                let back = stats.inverse(&out[0]);
                for (a, b) in back.values[0].iter().zip(&vals) {
                    prop_assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
                }
            }
        }
    }
}
