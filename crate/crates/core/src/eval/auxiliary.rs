//! Auxiliary models trained from scratch to score generated data: a
//! neural CDE classifier and a CDE-encoder / ODE-decoder predictor.

use crate::autodiff::{gradient, Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, Linear, Mlp, Parameterized};
use crate::noise::{RandomStream, SeedSequence};
use crate::paths::{fit_norm_stats, GridData};
use crate::sdesolve::{cde_terminal, solve_cde, split_path, with_time, DiscriminatorDims, DiscriminatorParams, Method, TimeGrid};

/// Training settings shared by both auxiliary models.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxConfig {
    pub hidden: usize,
    pub width: usize,
    pub depth: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a lower training loss.
    pub patience: usize,
    pub lr: f64,
    /// Train share of the combined real-and-fake set for classification.
    pub train_fraction: f64,
    /// Share of the grid seen by the predictor's encoder.
    pub split: f64,
    pub method: Method,
}

impl Default for AuxConfig {
    fn default() -> Self {
        AuxConfig {
            hidden: 32,
            width: 32,
            depth: 2,
            batch_size: 256,
            epochs: 50,
            patience: 20,
            lr: 1e-4,
            train_fraction: 0.8,
            split: 0.8,
            method: Method::Midpoint,
        }
    }
}

impl AuxConfig {
    pub fn entries(&self) -> Vec<(String, String)> {
        [
            ("hidden", self.hidden.to_string()),
            ("width", self.width.to_string()),
            ("depth", self.depth.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("lr", format!("{:e}", self.lr)),
            ("train_fraction", self.train_fraction.to_string()),
            ("split", self.split.to_string()),
            ("method", self.method.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn validate(&self) -> Result<()> {
        if [self.hidden, self.width, self.batch_size, self.epochs].contains(&0) {
            return Err(Error::InvalidArgument(format!("auxiliary sizes must be positive: {self:?}")));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument("auxiliary learning rate must be positive".into()));
        }
        Ok(())
    }
}

fn check_pair(real: &GridData, fake: &GridData) -> Result<()> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::InvalidArgument("auxiliary metrics need non-empty data".into()));
    }
    if real.times != fake.times || real.channels != fake.channels {
        return Err(Error::InvalidArgument("real and generated data are on different grids".into()));
    }
    Ok(())
}

/// Scalar loss of the minibatch with the given training indices.
type BatchFn<'a, M> = dyn Fn(&M, &[usize]) -> Result<Tensor> + 'a;

/// Minibatch Adam over `train` for up to `epochs`, stopping early when the
/// epoch-mean training loss has not improved for `patience` epochs.
/// Returns the trained model and its last epoch-mean loss.
fn fit<M: Parameterized>(mut model: M, n: usize, cfg: &AuxConfig, rng: &mut RandomStream, loss: &BatchFn<M>) -> Result<(M, f64)> {
    let mut opt = AdamState::for_params(&model.param_tensors());
    let mut order: Vec<usize> = (0..n).collect();
    let (mut best, mut stale, mut last) = (f64::INFINITY, 0, f64::NAN);
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let m = model.attach(&tape);
            let l = loss(&m, idx)?;
            let value = l.item()?;
            if !value.is_finite() {
                return Err(Error::Numerical {
                    step: 0,
                    msg: format!("auxiliary training loss is {value}"),
                });
            }
            let grads = gradient(&l, &m.param_tensors(), false)?;
            drop(m);
            adam_step(&mut model.params_mut(), &grads, &mut opt, cfg.lr)?;
            total += value * idx.len() as f64;
        }
        last = total / n as f64;
        if last < best {
            best = last;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok((model.detached(), last))
}

/// Mean of `per_batch` over all of `0..n`, weighted by batch size.
fn evaluate_mean(n: usize, batch: usize, per_batch: impl Fn(&[usize]) -> Result<f64>) -> Result<f64> {
    let idx: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    for b in idx.chunks(batch) {
        total += per_batch(b)? * b.len() as f64;
    }
    Ok(total / n as f64)
}

fn rows_tensor(rows: &[&Vec<f64>], idx: &[usize], from: usize, to: usize) -> Result<Tensor> {
    let mut flat = Vec::with_capacity(idx.len() * (to - from));
    for &i in idx {
        flat.extend_from_slice(&rows[i][from..to]);
    }
    Tensor::new(vec![idx.len(), to - from], flat)
}

#[derive(Clone, Debug)]
struct Classifier {
    cde: DiscriminatorParams,
    bias: Tensor,
}

impl Parameterized for Classifier {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.cde.params();
        out.push(("bias".into(), &self.bias));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.cde.params_mut();
        out.push(&mut self.bias);
        out
    }
}

impl Classifier {
    fn logits(&self, x: &Tensor, grid: &TimeGrid, channels: usize, method: Method) -> Result<Tensor> {
        let s = solve_cde(&self.cde, &split_path(x, channels)?, grid, method)?;
        s.add(&self.bias.broadcast_to(s.shape())?)
    }
}

/// Mean binary cross-entropy of logits `z` against labels `y`, as
/// `softplus(z) - y z`.
fn cross_entropy(z: &Tensor, y: &Tensor) -> Result<Tensor> {
    z.softplus().sub(&y.mul(z)?)?.mean()
}

fn labels(idx: &[usize], is_real: &[bool]) -> Result<Tensor> {
    let y = idx.iter().map(|&i| if is_real[i] { 1.0 } else { 0.0 }).collect();
    Tensor::new(vec![idx.len(), 1], y)
}

/// Test cross-entropy of a fresh classifier separating `real` from `fake`.
/// Both sets are normalised with the real data's statistics. Higher is
/// better for the generator; `ln 2` is chance level.
pub fn classification_metric(real: &GridData, fake: &GridData, cfg: &AuxConfig, seed: u64) -> Result<f64> {
    cfg.validate()?;
    check_pair(real, fake)?;
    if real.len() != fake.len() {
        return Err(Error::InvalidArgument(format!(
            "classification needs equal-sized sets, got {} real and {} generated",
            real.len(),
            fake.len()
        )));
    }
    let stats = fit_norm_stats(&real.to_series())?;
    let (r, f) = (real.map_values(&stats, false), fake.map_values(&stats, false));
    let grid = TimeGrid::new(real.times.clone())?;
    let c = real.channels;

    let seeds = SeedSequence::new(seed);
    let mut all: Vec<(&Vec<f64>, bool)> = r.rows.iter().map(|x| (x, true)).chain(f.rows.iter().map(|x| (x, false))).collect();
    seeds.stream("classify/split", &[]).shuffle(&mut all);
    let n_train = ((all.len() as f64 * cfg.train_fraction).round() as usize).clamp(1, all.len() - 1);
    let (train, test) = all.split_at(n_train);
    let (train_rows, train_real): (Vec<&Vec<f64>>, Vec<bool>) = train.iter().copied().unzip();
    let (test_rows, test_real): (Vec<&Vec<f64>>, Vec<bool>) = test.iter().copied().unzip();
    let width = r.width();

    let dims = DiscriminatorDims {
        y: c,
        h: cfg.hidden,
        width: cfg.width,
        depth: cfg.depth,
    };
    let mut init = seeds.stream("classify/init", &[]);
    let model = Classifier {
        cde: DiscriminatorParams::new(dims, &mut init)?,
        bias: Tensor::zeros(vec![1, 1]),
    };
    let loss = |m: &Classifier, idx: &[usize]| {
        let x = rows_tensor(&train_rows, idx, 0, width)?;
        cross_entropy(&m.logits(&x, &grid, c, cfg.method)?, &labels(idx, &train_real)?)
    };
    let (model, _) = fit(model, train_rows.len(), cfg, &mut seeds.stream("classify/shuffle", &[]), &loss)?;
    evaluate_mean(test_rows.len(), cfg.batch_size, |idx| {
        let x = rows_tensor(&test_rows, idx, 0, width)?;
        cross_entropy(&model.logits(&x, &grid, c, cfg.method)?, &labels(idx, &test_real)?)?.item()
    })
}

#[derive(Clone, Debug)]
struct Predictor {
    encoder: DiscriminatorParams,
    decoder: Mlp,
    readout: Linear,
}

impl Parameterized for Predictor {
    fn params(&self) -> Vec<(String, &Tensor)> {
        // the encoder's score vector is unused
        let mut out: Vec<_> = self.encoder.params().into_iter().filter(|(n, _)| n != "m").collect();
        out.extend(crate::nn::prefixed("decoder", self.decoder.params()));
        out.push(("readout.weight".into(), &self.readout.weight));
        out.push(("readout.bias".into(), &self.readout.bias));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.xi.params_mut();
        out.extend(self.encoder.f.params_mut());
        out.extend(self.encoder.g.params_mut());
        out.extend(self.decoder.params_mut());
        out.push(&mut self.readout.weight);
        out.push(&mut self.readout.bias);
        out
    }
}

impl Predictor {
    /// Predicted `[batch, (points - split) * y]` continuation from the
    /// observed prefix `[batch, split * y]`.
    fn predict(&self, prefix: &Tensor, times: &[f64], split: usize, channels: usize, method: Method) -> Result<Tensor> {
        let enc_grid = TimeGrid::new(times[..split].to_vec())?;
        let mut z = cde_terminal(&self.encoder, &split_path(prefix, channels)?, &enc_grid, method)?;
        let field = |t: f64, z: &Tensor| self.decoder.forward(&with_time(t, z)?);
        let mut out = Vec::with_capacity(times.len() - split);
        for i in split - 1..times.len() - 1 {
            let (t, dt) = (times[i], times[i + 1] - times[i]);
            let k1 = field(t, &z)?;
            z = match method {
                Method::Euler => z.add(&k1.scale(dt))?,
                Method::Midpoint => {
                    let mid = z.add(&k1.scale(0.5 * dt))?;
                    z.add(&field(t + 0.5 * dt, &mid)?.scale(dt))?
                }
            };
            out.push(self.readout.forward(&z)?);
        }
        let parts: Vec<&Tensor> = out.iter().collect();
        Tensor::concat(&parts)
    }
}

/// Result of train-on-synthetic, test-on-real prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionLoss {
    /// Mean squared error on the real data. Lower is better.
    pub test: f64,
    /// Final epoch-mean training loss on the generated data.
    pub train: f64,
}

/// Trains a predictor of the last part of each path from the first
/// `cfg.split` share on `fake`, then scores it on `real`. Errors are in
/// units normalised by the real data's statistics.
pub fn prediction_metric(real: &GridData, fake: &GridData, cfg: &AuxConfig, seed: u64) -> Result<PredictionLoss> {
    cfg.validate()?;
    check_pair(real, fake)?;
    let points = real.times.len();
    let split = (cfg.split * points as f64).floor() as usize;
    if split < 2 || split >= points {
        return Err(Error::InvalidArgument(format!(
            "split {} of a {points}-point grid leaves nothing to encode or predict",
            cfg.split
        )));
    }
    let stats = fit_norm_stats(&real.to_series())?;
    let (r, f) = (real.map_values(&stats, false), fake.map_values(&stats, false));
    let c = real.channels;
    let (cut, width) = (split * c, points * c);
    let times = &real.times;

    let seeds = SeedSequence::new(seed);
    let mut init = seeds.stream("predict/init", &[]);
    let dims = DiscriminatorDims {
        y: c,
        h: cfg.hidden,
        width: cfg.width,
        depth: cfg.depth,
    };
    let model = Predictor {
        encoder: DiscriminatorParams::new(dims, &mut init)?,
        decoder: Mlp::with_depth(1 + cfg.hidden, cfg.width, cfg.depth, cfg.hidden, true, &mut init)?,
        readout: Linear::init(cfg.hidden, c, &mut init),
    };
    let mse = |m: &Predictor, rows: &[&Vec<f64>], idx: &[usize]| {
        let prefix = rows_tensor(rows, idx, 0, cut)?;
        let target = rows_tensor(rows, idx, cut, width)?;
        m.predict(&prefix, times, split, c, cfg.method)?.sub(&target)?.square().mean()
    };
    let fake_rows: Vec<&Vec<f64>> = f.rows.iter().collect();
    let (model, train) = fit(
        model,
        fake_rows.len(),
        cfg,
        &mut seeds.stream("predict/shuffle", &[]),
        &|m, idx| mse(m, &fake_rows, idx),
    )?;
    let real_rows: Vec<&Vec<f64>> = r.rows.iter().collect();
    let test = evaluate_mean(real_rows.len(), cfg.batch_size, |idx| mse(&model, &real_rows, idx)?.item())?;
    Ok(PredictionLoss { test, train })
}
