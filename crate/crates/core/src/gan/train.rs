use std::fmt;
use std::time::Instant;

use rayon::prelude::*;

use super::config::{Regime, TrainConfig};
use super::loss::{discriminator_loss, generator_loss, penalty_terms};
use super::model::{Model, TrainedModel};
use crate::autodiff::{gradient, Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{adadelta_step, AdadeltaState, Parameterized, SwaAccumulator};
use crate::noise::{
    BrownianSample, InitialNoise, SeedSequence, STREAM_BROWNIAN, STREAM_INITIAL, STREAM_PENALTY, STREAM_SHUFFLE,
};
use crate::paths::{fit_norm_stats, GridData, NormStats, TimeSeries};
use crate::sdesolve::{flatten_path, generate_path, solve_cde, split_path, TimeGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Discriminator,
    Generator,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::Discriminator => "disc",
            Phase::Generator => "gen",
        })
    }
}

/// One optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based count over all optimizer steps.
    pub step: usize,
    pub phase: Phase,
    pub loss: f64,
    /// Gradient penalty, for discriminator steps.
    pub penalty: Option<f64>,
}

/// Shuffled mini-batches of real samples. Counts every batch handed out.
pub struct RealSampler {
    data: GridData,
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seeds: SeedSequence,
    accesses: usize,
}

impl RealSampler {
    pub fn new(data: GridData, seeds: SeedSequence) -> Self {
        let mut s = RealSampler {
            order: (0..data.len()).collect(),
            data,
            pos: 0,
            epoch: 0,
            seeds,
            accesses: 0,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.data.len()).collect();
        self.seeds
            .stream(STREAM_SHUFFLE, &[self.epoch])
            .shuffle(&mut self.order);
        self.pos = 0;
    }

    /// `size` samples, flat and row-major. A new epoch starts once fewer
    /// than `size` samples remain.
    pub fn next_batch(&mut self, size: usize) -> Vec<f64> {
        self.accesses += 1;
        if self.pos + size > self.order.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        let idx = &self.order[self.pos..self.pos + size];
        self.pos += size;
        let mut out = Vec::with_capacity(size * self.data.width());
        for &i in idx {
            out.extend_from_slice(&self.data.rows[i]);
        }
        out
    }

    pub fn accesses(&self) -> usize {
        self.accesses
    }

    pub fn data(&self) -> &GridData {
        &self.data
    }
}

/// Loss, penalty and parameter gradient of one optimizer step.
#[derive(Clone, Debug)]
pub struct Objective {
    pub loss: f64,
    pub penalty: f64,
    pub grads: Vec<Tensor>,
}

struct ChunkResult {
    loss: f64,
    penalty: f64,
    grads: Vec<Vec<f64>>,
}

fn reduce(chunks: Vec<Result<ChunkResult>>, shapes: &[Vec<usize>]) -> Result<Objective> {
    let mut loss = 0.0;
    let mut penalty = 0.0;
    let mut acc: Vec<Vec<f64>> = shapes.iter().map(|s| vec![0.0; s.iter().product()]).collect();
    for c in chunks {
        let c = c?;
        loss += c.loss;
        penalty += c.penalty;
        for (a, g) in acc.iter_mut().zip(&c.grads) {
            for (x, y) in a.iter_mut().zip(g) {
                *x += y;
            }
        }
    }
    let grads = acc
        .into_iter()
        .zip(shapes)
        .map(|(v, s)| Tensor::new(s.clone(), v))
        .collect::<Result<Vec<_>>>()?;
    Ok(Objective { loss, penalty, grads })
}

fn all_finite<P: Parameterized>(p: &P) -> bool {
    p.param_tensors().iter().all(|t| t.all_finite())
}

/// The alternating optimisation loop over one dataset.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub grid: TimeGrid,
    gen_opt: AdadeltaState,
    disc_opt: AdadeltaState,
    pub gen_swa: SwaAccumulator,
    pub disc_swa: SwaAccumulator,
    sampler: RealSampler,
    seeds: SeedSequence,
    step: usize,
    gen_step: usize,
    pub records: Vec<StepRecord>,
    pool: Option<rayon::ThreadPool>,
}

impl Trainer {
    /// `data` must be normalised and on the training grid.
    pub fn new(config: TrainConfig, data: GridData) -> Result<Self> {
        config.validate()?;
        if data.channels != config.channels {
            return Err(Error::Data {
                line: None,
                msg: format!(
                    "data has {} channels but config `channels` is {}",
                    data.channels, config.channels
                ),
            });
        }
        if data.len() < config.batch_size {
            return Err(Error::config(
                "batch_size",
                format!("{} exceeds the {} available samples", config.batch_size, data.len()),
            ));
        }
        let grid = TimeGrid::new(data.times.clone())?;
        let model = Model::init(&config)?;
        let (rho, eps) = (config.adadelta_rho, config.adadelta_eps);
        let gen_opt = AdadeltaState::for_params(&model.gen.param_tensors(), rho, eps);
        let disc_opt = AdadeltaState::for_params(&model.disc.param_tensors(), rho, eps);
        let seeds = SeedSequence::new(config.seed);
        let pool = if config.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.workers)
                    .build()
                    .map_err(|e| Error::config("workers", e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Trainer {
            gen_swa: SwaAccumulator::new(config.swa_start),
            disc_swa: SwaAccumulator::new(config.swa_start),
            sampler: RealSampler::new(data, seeds),
            config,
            model,
            grid,
            gen_opt,
            disc_opt,
            seeds,
            step: 0,
            gen_step: 0,
            records: Vec::new(),
            pool,
        })
    }

    pub fn data_accesses(&self) -> usize {
        self.sampler.accesses()
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn generator_steps_taken(&self) -> usize {
        self.gen_step
    }

    fn chunks(&self) -> Vec<(usize, usize)> {
        let b = self.config.batch_size;
        (0..b)
            .step_by(self.config.chunk_size)
            .map(|s| (s, (s + self.config.chunk_size).min(b)))
            .collect()
    }

    fn map_chunks<F>(&self, f: F) -> Vec<Result<ChunkResult>>
    where
        F: Fn(usize, usize, usize) -> Result<ChunkResult> + Sync + Send,
    {
        let chunks = self.chunks();
        let run = |(k, &(s, e)): (usize, &(usize, usize))| f(k, s, e);
        match &self.pool {
            Some(pool) => pool.install(|| chunks.par_iter().enumerate().map(run).collect()),
            None => chunks.iter().enumerate().map(run).collect(),
        }
    }

    fn fake_chunk(&self, gen: &crate::sdesolve::GeneratorParams, key: u64, chunk: usize, n: usize) -> Result<Vec<Tensor>> {
        let idx = [key, chunk as u64];
        let d = &gen.dims;
        let v = InitialNoise::draw(&mut self.seeds.stream(STREAM_INITIAL, &idx), d.v, n)?;
        let w = BrownianSample::draw(&mut self.seeds.stream(STREAM_BROWNIAN, &idx), self.grid.times(), d.w, n)?;
        generate_path(gen, &v.tensor(), &w.tensors(), &self.grid, self.config.method)
    }

    /// Discriminator loss and gradient on a given real batch, with fake
    /// samples and penalty weights drawn from noise keyed by `key`.
    pub fn discriminator_objective(&self, real: &[f64], key: u64) -> Result<Objective> {
        let b = self.config.batch_size;
        let width = self.grid.points() * self.config.channels;
        if real.len() != b * width {
            return Err(Error::shape("discriminator_objective", "real batch has the wrong size"));
        }
        let gen = self.model.gen.detached();
        let disc = self.model.disc.detached();
        let (method, lambda, c) = (self.config.method, self.config.lambda_gp, self.config.channels);
        let results = self.map_chunks(|k, s, e| {
            let n = e - s;
            let frac = n as f64 / b as f64;
            let fake = flatten_path(&self.fake_chunk(&gen, key, k, n)?)?;
            let real = Tensor::new(vec![n, width], real[s * width..e * width].to_vec())?;
            let tape = Tape::new();
            let d = disc.attach(&tape);
            let d_real = solve_cde(&d, &split_path(&real, c)?, &self.grid, method)?;
            let d_fake = solve_cde(&d, &split_path(&fake, c)?, &self.grid, method)?;
            let mut eps_rng = self.seeds.stream(STREAM_PENALTY, &[key, k as u64]);
            let eps: Vec<f64> = (0..n).map(|_| eps_rng.uniform()).collect();
            let pen = penalty_terms(&d, &real, &fake, &self.grid, method, &eps)?.mean()?;
            let loss = discriminator_loss(&d_fake, &d_real, &pen, lambda)?.scale(frac);
            let grads = gradient(&loss, &d.param_tensors(), false)?;
            Ok(ChunkResult {
                loss: loss.item()?,
                penalty: pen.item()? * frac,
                grads: grads.iter().map(Tensor::to_vec).collect(),
            })
        });
        reduce(results, &shapes(&disc))
    }

    /// Generator loss and gradient, with noise keyed by `key`. Never
    /// touches real data.
    pub fn generator_objective(&self, key: u64) -> Result<Objective> {
        let b = self.config.batch_size;
        let gen = self.model.gen.detached();
        let disc = self.model.disc.detached();
        let method = self.config.method;
        let results = self.map_chunks(|k, _, _| {
            let (s, e) = self.chunks()[k];
            let n = e - s;
            let tape = Tape::new();
            let g = gen.attach(&tape);
            let path = self.fake_chunk(&g, key, k, n)?;
            let d = solve_cde(&disc, &path, &self.grid, method)?;
            let loss = generator_loss(&d)?.scale(n as f64 / b as f64);
            let grads = gradient(&loss, &g.param_tensors(), false)?;
            Ok(ChunkResult {
                loss: loss.item()?,
                penalty: 0.0,
                grads: grads.iter().map(Tensor::to_vec).collect(),
            })
        });
        reduce(results, &shapes(&gen))
    }

    fn update<P: Parameterized>(params: &mut P, opt: &mut AdadeltaState, grads: &[Tensor], lr: f64, wd: f64) -> Result<()> {
        let mut ps = params.params_mut();
        adadelta_step(&mut ps, grads, opt, lr, wd)
    }

    fn watchdog(&self, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Numerical {
                step: self.step,
                msg: format!("loss is {loss}"),
            });
        }
        if !all_finite(&self.model.gen) || !all_finite(&self.model.disc) {
            return Err(Error::Numerical {
                step: self.step,
                msg: "non-finite parameter after update".into(),
            });
        }
        Ok(())
    }

    pub fn discriminator_step(&mut self, phase: Phase) -> Result<StepRecord> {
        self.step += 1;
        let real = self.sampler.next_batch(self.config.batch_size);
        let obj = self.discriminator_objective(&real, self.step as u64)?;
        let (lr, wd) = (self.config.lr, self.config.weight_decay);
        Self::update(&mut self.model.disc, &mut self.disc_opt, &obj.grads, lr, wd)?;
        self.watchdog(obj.loss)?;
        let rec = StepRecord {
            step: self.step,
            phase,
            loss: obj.loss,
            penalty: Some(obj.penalty),
        };
        self.records.push(rec.clone());
        Ok(rec)
    }

    /// One generator update followed by the weight-average snapshot.
    pub fn generator_step(&mut self) -> Result<StepRecord> {
        self.step += 1;
        self.gen_step += 1;
        let obj = self.generator_objective(self.step as u64)?;
        let (lr, wd) = (self.config.lr, self.config.weight_decay);
        Self::update(&mut self.model.gen, &mut self.gen_opt, &obj.grads, lr, wd)?;
        self.watchdog(obj.loss)?;
        self.gen_swa.update(self.gen_step, &self.model.gen.flat_values())?;
        self.disc_swa.update(self.gen_step, &self.model.disc.flat_values())?;
        let rec = StepRecord {
            step: self.step,
            phase: Phase::Generator,
            loss: obj.loss,
            penalty: None,
        };
        self.records.push(rec.clone());
        Ok(rec)
    }

    /// Pretraining, then `disc_steps_per_gen` discriminator steps before
    /// every generator step.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepRecord)) -> Result<()> {
        for _ in 0..self.config.pretrain_steps {
            let r = self.discriminator_step(Phase::Pretrain)?;
            on_step(&r);
        }
        while self.gen_step < self.config.generator_steps {
            for _ in 0..self.config.disc_steps_per_gen {
                let r = self.discriminator_step(Phase::Discriminator)?;
                on_step(&r);
            }
            let r = self.generator_step()?;
            on_step(&r);
        }
        Ok(())
    }

    /// The averaged model, if any snapshot was taken.
    pub fn swa_model(&self) -> Result<Option<Model>> {
        if self.gen_swa.count == 0 {
            return Ok(None);
        }
        let mut m = self.model.clone();
        m.gen.load_flat(&self.gen_swa.average()?)?;
        m.disc.load_flat(&self.disc_swa.average()?)?;
        Ok(Some(m))
    }
}

fn shapes<P: Parameterized>(p: &P) -> Vec<Vec<usize>> {
    p.param_tensors().iter().map(|t| t.shape().to_vec()).collect()
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    pub wall_clock_secs: f64,
    pub initial: TrainedModel,
    pub final_model: TrainedModel,
    pub swa_model: Option<TrainedModel>,
}

impl TrainReport {
    /// `step,phase,loss,penalty`; the penalty is empty on generator steps.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,phase,loss,penalty\n");
        for r in &self.records {
            let pen = r.penalty.map(|p| format!("{p:e}")).unwrap_or_default();
            s.push_str(&format!("{},{},{:e},{}\n", r.step, r.phase, r.loss, pen));
        }
        s
    }
}

/// Normalises `data` and places it on the training grid.
pub fn prepare_data(config: &TrainConfig, data: &[TimeSeries]) -> Result<(GridData, NormStats)> {
    let stats = fit_norm_stats(data)?;
    let normalized: Vec<TimeSeries> = data.iter().map(|s| stats.apply(s)).collect();
    let grid = match config.regime {
        Regime::Dense => GridData::from_common_grid(&normalized)?,
        Regime::Sparse => {
            let lo = data.iter().map(|s| s.times[0]).fold(f64::INFINITY, f64::min);
            let hi = data
                .iter()
                .map(|s| s.times[s.len() - 1])
                .fold(f64::NEG_INFINITY, f64::max);
            let n = (config.sparse_points - 1) as f64;
            let times: Vec<f64> = (0..config.sparse_points)
                .map(|i| lo + (hi - lo) * i as f64 / n)
                .collect();
            GridData::resample(&normalized, &times)?
        }
    };
    Ok((grid, stats))
}

pub fn train(config: &TrainConfig, data: &[TimeSeries]) -> Result<TrainReport> {
    train_with(config, data, |_| {})
}

/// [`train`] with a callback after every optimizer step.
pub fn train_with(config: &TrainConfig, data: &[TimeSeries], on_step: impl FnMut(&StepRecord)) -> Result<TrainReport> {
    config.validate()?;
    if let Some(s) = data.iter().find(|s| s.channels() != config.channels) {
        return Err(Error::Data {
            line: None,
            msg: format!(
                "data has {} channels but config `channels` is {}",
                s.channels(),
                config.channels
            ),
        });
    }
    let (grid_data, stats) = prepare_data(config, data)?;
    let started = Instant::now();
    let mut trainer = Trainer::new(config.clone(), grid_data)?;
    let grid = trainer.grid.clone();
    let wrap = |model: Model, kind: &str, steps: usize| TrainedModel {
        model,
        config: config.clone(),
        stats: stats.clone(),
        grid: grid.clone(),
        kind: kind.into(),
        generator_steps: steps,
    };
    let initial = wrap(trainer.model.clone(), "initial", 0);
    trainer.run(on_step)?;
    let steps = trainer.generator_steps_taken();
    let final_model = wrap(trainer.model.clone(), "final", steps);
    let swa_model = trainer.swa_model()?.map(|m| wrap(m, "swa", steps));
    Ok(TrainReport {
        records: trainer.records.clone(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        initial,
        final_model,
        swa_model,
    })
}
