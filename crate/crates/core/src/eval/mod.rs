//! Metrics comparing generated paths with real data.

mod auxiliary;
mod marginal;

pub use auxiliary::{classification_metric, prediction_metric, AuxConfig, PredictionLoss};
pub use marginal::{histograms_csv, marginal_histograms, marginal_w1, w1, MarginalHistogram};

use crate::error::{Error, Result};
use crate::gan::TrainedModel;
use crate::paths::{fit_norm_stats, GridData, TimeSeries};
use crate::signature::signature_mmd;

/// Grid indices at which marginals are compared by default.
pub const MARGINAL_INDICES: [usize; 5] = [6, 19, 32, 44, 57];

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub indices: Vec<usize>,
    pub mmd_depth: usize,
    /// Train the auxiliary classifier and predictor. They dominate the
    /// running time.
    pub auxiliary: bool,
    pub aux: AuxConfig,
    pub bins: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            indices: MARGINAL_INDICES.to_vec(),
            mmd_depth: 5,
            auxiliary: true,
            aux: AuxConfig::default(),
            bins: 30,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub indices: Vec<usize>,
    pub marginal_w1: Vec<f64>,
    /// W1 between the two halves of the real data at the same indices.
    pub baseline_w1: Vec<f64>,
    pub mmd: f64,
    pub mmd_depth: usize,
    pub classification: Option<f64>,
    pub prediction: Option<PredictionLoss>,
    /// Settings echoed into the report.
    pub config: Vec<(String, String)>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

impl MetricReport {
    pub fn mean_w1(&self) -> f64 {
        mean(&self.marginal_w1)
    }

    pub fn mean_baseline_w1(&self) -> f64 {
        mean(&self.baseline_w1)
    }

    /// Flat `key = value` text.
    pub fn to_text(&self) -> String {
        let mut lines = Vec::new();
        for (i, (w, b)) in self.indices.iter().zip(self.marginal_w1.iter().zip(&self.baseline_w1)) {
            lines.push(format!("w1.t{i} = {w:e}"));
            lines.push(format!("baseline_w1.t{i} = {b:e}"));
        }
        lines.push(format!("w1.mean = {:e}", self.mean_w1()));
        lines.push(format!("baseline_w1.mean = {:e}", self.mean_baseline_w1()));
        lines.push(format!("mmd = {:e}", self.mmd));
        lines.push(format!("mmd_depth = {}", self.mmd_depth));
        if let Some(c) = self.classification {
            lines.push(format!("classification = {c:e}"));
        }
        if let Some(p) = self.prediction {
            lines.push(format!("prediction = {:e}", p.test));
            lines.push(format!("prediction_train = {:e}", p.train));
        }
        for (k, v) in &self.config {
            lines.push(format!("config.{k} = {v}"));
        }
        lines.join("\n") + "\n"
    }
}

/// Real data on `times`: used directly when every series is complete on
/// exactly that grid, otherwise linearly interpolated onto it.
pub fn real_on_grid(real: &[TimeSeries], times: &[f64]) -> Result<GridData> {
    if real.iter().all(|s| s.is_complete() && s.times == times) {
        GridData::from_common_grid(real)
    } else {
        GridData::resample(real, times)
    }
}

/// Signature MMD after mapping values with the real data's statistics and
/// time onto `[0, 1]`, so that no one channel dominates the feature map.
pub fn scaled_mmd(real: &GridData, fake: &GridData, depth: usize) -> Result<f64> {
    let stats = fit_norm_stats(&real.to_series())?;
    let scaled = |g: &GridData| -> GridData {
        let mut out = g.map_values(&stats, false);
        let (t0, t1) = (g.times[0], *g.times.last().expect("non-empty grid"));
        let span = if t1 > t0 { t1 - t0 } else { 1.0 };
        out.times = g.times.iter().map(|t| (t - t0) / span).collect();
        out
    };
    signature_mmd(&scaled(real).to_series(), &scaled(fake).to_series(), depth)
}

/// Compares `fake` against `real` on every configured metric.
pub fn compare(real: &GridData, fake: &GridData, opts: &EvalOptions) -> Result<MetricReport> {
    if real.len() < 2 {
        return Err(Error::InvalidArgument("evaluation needs at least two real samples".into()));
    }
    let half = real.len() / 2;
    let first = GridData { rows: real.rows[..half].to_vec(), ..real.clone() };
    let second = GridData { rows: real.rows[half..2 * half].to_vec(), ..real.clone() };
    let (classification, prediction) = if opts.auxiliary {
        (
            Some(classification_metric(real, fake, &opts.aux, opts.seed)?),
            Some(prediction_metric(real, fake, &opts.aux, opts.seed)?),
        )
    } else {
        (None, None)
    };
    let mut config: Vec<(String, String)> = vec![
        ("seed".into(), opts.seed.to_string()),
        ("samples".into(), real.len().to_string()),
        ("auxiliary".into(), opts.auxiliary.to_string()),
        ("bins".into(), opts.bins.to_string()),
    ];
    config.extend(opts.aux.entries().into_iter().map(|(k, v)| (format!("aux.{k}"), v)));
    Ok(MetricReport {
        indices: opts.indices.clone(),
        marginal_w1: marginal_w1(real, fake, &opts.indices)?,
        baseline_w1: marginal_w1(&first, &second, &opts.indices)?,
        mmd: scaled_mmd(real, fake, opts.mmd_depth)?,
        mmd_depth: opts.mmd_depth,
        classification,
        prediction,
        config,
    })
}

/// Samples as many paths as there are real series from `model` and
/// compares them. Also returns the marginal histograms.
pub fn evaluate(
    real: &[TimeSeries],
    model: &TrainedModel,
    opts: &EvalOptions,
) -> Result<(MetricReport, Vec<MarginalHistogram>)> {
    if real.is_empty() {
        return Err(Error::InvalidArgument("no real data to evaluate against".into()));
    }
    let real = real_on_grid(real, model.grid.times())?;
    if real.channels != model.config.channels {
        return Err(Error::InvalidArgument(format!(
            "data has {} channels, model generates {}",
            real.channels, model.config.channels
        )));
    }
    let fake = model.sample(real.len(), opts.seed)?;
    let mut report = compare(&real, &fake, opts)?;
    report.config.push(("model.kind".into(), model.kind.clone()));
    report.config.push(("model.config_hash".into(), model.config.hash()));
    let hists = marginal_histograms(&real, &fake, &opts.indices, opts.bins)?;
    Ok((report, hists))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_ou, OUParams};
    use crate::gan::{train, TrainConfig};

    fn ou(samples: usize) -> Vec<TimeSeries> {
        generate_ou(&OUParams { samples, ..Default::default() }).unwrap()
    }

    #[test]
    fn halves_of_real_data_beat_zero_paths() {
        let real = GridData::from_common_grid(&ou(400)).unwrap();
        let zero = GridData { rows: vec![vec![0.0; real.width()]; 400], ..real.clone() };
        let opts = EvalOptions { auxiliary: false, ..Default::default() };
        let half = GridData { rows: real.rows[..200].to_vec(), ..real.clone() };
        let other = GridData { rows: real.rows[200..].to_vec(), ..real.clone() };
        let near = compare(&half, &other, &opts).unwrap();
        let far = compare(&real, &zero, &opts).unwrap();
        assert!(near.mmd < far.mmd, "{} vs {}", near.mmd, far.mmd);
        assert!(near.mean_w1() < far.mean_w1());
        assert!(far.baseline_w1.iter().all(|b| *b < far.mean_w1()));
    }

    #[test]
    fn report_text_and_histograms() {
        let data = ou(64);
        let cfg = TrainConfig {
            batch_size: 8,
            generator_steps: 0,
            ..TrainConfig::preset("ou-desk").unwrap()
        };
        let model = train(&cfg, &data).unwrap().final_model;
        let opts = EvalOptions { auxiliary: false, bins: 5, ..Default::default() };
        let (report, hists) = evaluate(&data, &model, &opts).unwrap();
        let text = report.to_text();
        for key in ["w1.t6 =", "baseline_w1.t57 =", "w1.mean =", "mmd =", "mmd_depth = 5", "config.seed = 0"] {
            assert!(text.contains(key), "{key} missing from\n{text}");
        }
        assert!(report.mmd >= 0.0 && report.marginal_w1.iter().all(|w| w.is_finite() && *w >= 0.0));
        assert_eq!(hists.len(), 5);
        assert!(hists.iter().all(|h| h.real.iter().sum::<usize>() == 64 && h.fake.iter().sum::<usize>() == 64));
        let (again, _) = evaluate(&data, &model, &opts).unwrap();
        assert_eq!(report, again);
    }
}
