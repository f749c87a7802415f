use super::config::TrainConfig;
use crate::autodiff::Tensor;
use crate::config::{format_floats, parse_floats};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, NamedParam, Parameterized};
use crate::noise::{BrownianSample, InitialNoise, SeedSequence, STREAM_INIT};
use crate::paths::{GridData, NormStats};
use crate::sdesolve::{generate_path, flatten_path, DiscriminatorParams, GeneratorParams, Method, TimeGrid};

/// A generator and its discriminator.
#[derive(Clone, Debug)]
pub struct Model {
    pub gen: GeneratorParams,
    pub disc: DiscriminatorParams,
}

impl Model {
    /// Fresh weights drawn from the configured seed.
    pub fn init(config: &TrainConfig) -> Result<Self> {
        let seq = SeedSequence::new(config.seed);
        let gen = GeneratorParams::new(config.generator_dims(), &mut seq.stream(STREAM_INIT, &[0]))?;
        let disc = DiscriminatorParams::new(config.discriminator_dims(), &mut seq.stream(STREAM_INIT, &[1]))?;
        Ok(Model { gen, disc })
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .gen
            .params()
            .into_iter()
            .map(|(n, t)| (format!("gen.{n}"), t))
            .collect();
        out.extend(self.disc.params().into_iter().map(|(n, t)| (format!("disc.{n}"), t)));
        out
    }
}

/// A model together with what is needed to sample it in data units.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: Model,
    pub config: TrainConfig,
    pub stats: NormStats,
    pub grid: TimeGrid,
    /// `final`, `swa` or `initial`.
    pub kind: String,
    pub generator_steps: usize,
}

impl TrainedModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.config.hash());
        // thread count never changes results, so it stays out of the file
        for (k, v) in self.config.entries().into_iter().filter(|(k, _)| *k != "workers") {
            ck.meta.insert(format!("config.{k}"), v);
        }
        ck.meta.insert("norm.mean".into(), format_floats(&self.stats.mean));
        ck.meta.insert("norm.std".into(), format_floats(&self.stats.std));
        ck.meta.insert("grid".into(), format_floats(self.grid.times()));
        ck.meta.insert("kind".into(), self.kind.clone());
        ck.meta.insert("generator_steps".into(), self.generator_steps.to_string());
        for (name, t) in self.model.named_params() {
            ck.params.push(NamedParam {
                name,
                shape: t.shape().to_vec(),
                values: t.to_vec(),
            });
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let bad = |field: &str, msg: String| Error::Checkpoint {
            field: field.to_string(),
            msg,
        };
        let mut config = TrainConfig::default();
        for (k, v) in &ck.meta {
            if let Some(key) = k.strip_prefix("config.") {
                config.set(key, v).map_err(|e| bad(k, e.to_string()))?;
            }
        }
        if config.hash() != ck.config_hash {
            return Err(bad("config_hash", "does not match the stored configuration".into()));
        }
        let floats = |key: &str| -> Result<Vec<f64>> {
            parse_floats(key, ck.meta(key)?).map_err(|e| bad(key, e.to_string()))
        };
        let stats = NormStats {
            mean: floats("norm.mean")?,
            std: floats("norm.std")?,
        };
        if stats.mean.len() != config.channels || stats.std.len() != config.channels {
            return Err(bad("norm.mean", format!("expected {} channels", config.channels)));
        }
        let grid = TimeGrid::new(floats("grid")?).map_err(|e| bad("grid", e.to_string()))?;
        let generator_steps = ck
            .meta("generator_steps")?
            .parse()
            .map_err(|_| bad("generator_steps", "not an integer".into()))?;

        let mut model = Model::init(&config)?;
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        let values = names
            .iter()
            .zip(model.named_params())
            .map(|(name, (_, t))| {
                let p = ck.param(name)?;
                if p.shape != t.shape() {
                    return Err(bad(name, format!("shape {:?}, expected {:?}", p.shape, t.shape())));
                }
                Ok(p.values.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        let ng = model.gen.params().len();
        model.gen.load_flat(&values[..ng])?;
        model.disc.load_flat(&values[ng..])?;
        Ok(TrainedModel {
            model,
            config,
            stats,
            grid,
            kind: ck.meta("kind")?.to_string(),
            generator_steps,
        })
    }

    /// `count` generated paths in data units.
    pub fn sample(&self, count: usize, seed: u64) -> Result<GridData> {
        let g = generate_normalized(&self.model.gen, &self.grid, count, seed, self.config.method)?;
        Ok(g.map_values(&self.stats, true))
    }
}

const SAMPLE_CHUNK: usize = 256;

/// Generated paths in the model's (normalised) units, drawn in chunks
/// with per-chunk noise streams.
pub fn generate_normalized(
    gen: &GeneratorParams,
    grid: &TimeGrid,
    count: usize,
    seed: u64,
    method: Method,
) -> Result<GridData> {
    let gen = gen.detached();
    let seq = SeedSequence::new(seed);
    let mut flat = Vec::with_capacity(count * grid.points() * gen.dims.y);
    for (k, start) in (0..count).step_by(SAMPLE_CHUNK).enumerate() {
        let n = SAMPLE_CHUNK.min(count - start);
        let v = InitialNoise::draw(&mut seq.stream("sample/initial-noise", &[k as u64]), gen.dims.v, n)?;
        let w = BrownianSample::draw(&mut seq.stream("sample/brownian", &[k as u64]), grid.times(), gen.dims.w, n)?;
        let path = generate_path(&gen, &v.tensor(), &w.tensors(), grid, method)?;
        flat.extend_from_slice(flatten_path(&path)?.data());
    }
    if count == 0 {
        return Ok(GridData {
            times: grid.times().to_vec(),
            channels: gen.dims.y,
            rows: Vec::new(),
        });
    }
    GridData::from_flat(grid.times().to_vec(), gen.dims.y, &flat)
}
