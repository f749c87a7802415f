//! Fixed-grid SDE/CDE solvers and the generator and discriminator vector
//! fields.
//!
//! A system is a list of state blocks, each `[batch, width]`. The driving
//! increment of step `i` is a `[batch, k]` tensor: Brownian increments for
//! the generator, path increments `Y_{i+1} - Y_i` for the discriminator.
//! Vector fields see time as an extra first input column.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::{prefixed, Mlp, Parameterized};
use crate::noise::{check_grid, BrownianSample, InitialNoise, RandomStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Method {
    /// Converges to the Stratonovich solution.
    #[default]
    Midpoint,
    /// Euler-Maruyama; converges to the Itô solution.
    Euler,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "midpoint" => Ok(Method::Midpoint),
            "euler" => Ok(Method::Euler),
            _ => Err(Error::InvalidArgument(format!(
                "unknown solver method `{s}` (expected midpoint or euler)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Midpoint => "midpoint",
            Method::Euler => "euler",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        check_grid(&times)?;
        Ok(TimeGrid { times })
    }

    /// `points` equally spaced times on `[0, horizon]`.
    pub fn uniform(points: usize, horizon: f64) -> Result<Self> {
        if points < 2 || !(horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "uniform grid needs >= 2 points and a positive horizon, got {points} and {horizon}"
            )));
        }
        let n = (points - 1) as f64;
        Self::new((0..points).map(|i| horizon * i as f64 / n).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn points(&self) -> usize {
        self.times.len()
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Inserts `factor - 1` equally spaced points inside every step.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidArgument("refinement factor must be >= 1".into()));
        }
        let mut t = Vec::with_capacity(self.steps() * factor + 1);
        for i in 0..self.steps() {
            for j in 0..factor {
                t.push(self.times[i] + self.dt(i) * j as f64 / factor as f64);
            }
        }
        t.push(self.horizon());
        Self::new(t)
    }
}

/// A system `dZ = drift(t, Z) dt + diffusion(t, Z) dU` over block states.
pub trait Sde {
    fn drift(&self, t: f64, state: &[Tensor]) -> Result<Vec<Tensor>>;
    /// The diffusion applied to the increment, `diffusion(t, Z) dU`.
    fn diffusion(&self, t: f64, state: &[Tensor], du: &Tensor) -> Result<Vec<Tensor>>;
}

fn axpy(x: &[Tensor], a: f64, dx: &[Tensor], b: f64, dz: &[Tensor]) -> Result<Vec<Tensor>> {
    x.iter()
        .zip(dx)
        .zip(dz)
        .map(|((x, d), z)| {
            let step = d.scale(a).add(&z.scale(b))?;
            x.add(&step)
        })
        .collect()
}

/// Integrates `sde` from `init` across `grid`, with `increments[i]` the
/// driving increment over step `i`. `observe` sees the state at every grid
/// point, starting with the initial one. Returns the terminal state.
pub fn integrate<S: Sde + ?Sized>(
    sde: &S,
    init: Vec<Tensor>,
    grid: &TimeGrid,
    increments: &[Tensor],
    method: Method,
    mut observe: impl FnMut(usize, &[Tensor]) -> Result<()>,
) -> Result<Vec<Tensor>> {
    if increments.len() != grid.steps() {
        return Err(Error::InvalidArgument(format!(
            "{} increments for a grid of {} steps",
            increments.len(),
            grid.steps()
        )));
    }
    let mut state = init;
    observe(0, &state)?;
    for (i, du) in increments.iter().enumerate() {
        let t = grid.times[i];
        let dt = grid.dt(i);
        let mu = sde.drift(t, &state)?;
        let sdu = sde.diffusion(t, &state, du)?;
        state = match method {
            Method::Euler => axpy(&state, dt, &mu, 1.0, &sdu)?,
            Method::Midpoint => {
                let mid = axpy(&state, 0.5 * dt, &mu, 0.5, &sdu)?;
                let tm = t + 0.5 * dt;
                let mu = sde.drift(tm, &mid)?;
                let sdu = sde.diffusion(tm, &mid, du)?;
                axpy(&state, dt, &mu, 1.0, &sdu)?
            }
        };
        observe(i + 1, &state)?;
    }
    Ok(state)
}

pub(crate) fn with_time(t: f64, x: &Tensor) -> Result<Tensor> {
    let tc = Tensor::full(vec![x.rows(), 1], t);
    Tensor::concat(&[&tc, x])
}

/// Sizes of the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorDims {
    /// Initial noise.
    pub v: usize,
    /// Brownian motion.
    pub w: usize,
    /// Hidden state.
    pub x: usize,
    /// Output channels.
    pub y: usize,
    pub width: usize,
    pub depth: usize,
}

/// Neural SDE generator: `X_0 = zeta(V)`,
/// `dX = mu(t, X) dt + sigma(t, X) o dW`, `Y = alpha X + beta`.
#[derive(Clone, Debug)]
pub struct GeneratorParams {
    pub zeta: Mlp,
    pub mu: Mlp,
    /// Output is the row-major `x * w` diffusion matrix.
    pub sigma: Mlp,
    /// `[y, x]`
    pub alpha: Tensor,
    /// `[1, y]`
    pub beta: Tensor,
    pub dims: GeneratorDims,
}

fn uniform_tensor(shape: Vec<usize>, bound: f64, rng: &mut RandomStream) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| bound * (2.0 * rng.uniform() - 1.0)).collect();
    Tensor::new(shape, data).expect("sized")
}

impl GeneratorParams {
    pub fn new(d: GeneratorDims, rng: &mut RandomStream) -> Result<Self> {
        if [d.v, d.w, d.x, d.y, d.width].contains(&0) {
            return Err(Error::InvalidArgument(format!("generator dims must be positive: {d:?}")));
        }
        Ok(GeneratorParams {
            zeta: Mlp::with_depth(d.v, d.width, d.depth, d.x, true, rng)?,
            mu: Mlp::with_depth(1 + d.x, d.width, d.depth, d.x, true, rng)?,
            sigma: Mlp::with_depth(1 + d.x, d.width, d.depth, d.x * d.w, true, rng)?,
            alpha: uniform_tensor(vec![d.y, d.x], (1.0 / d.x as f64).sqrt(), rng),
            beta: Tensor::zeros(vec![1, d.y]),
            dims: d,
        })
    }

    pub fn initial_state(&self, v: &Tensor) -> Result<Tensor> {
        if v.rank() != 2 || v.cols() != self.dims.v {
            return Err(Error::shape(
                "solve_generator",
                format!("initial noise {:?}, generator expects width {}", v.shape(), self.dims.v),
            ));
        }
        self.zeta.forward(v)
    }

    /// `Y = X alpha^T + beta` for a `[batch, x]` state.
    pub fn readout(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.alpha.transpose()?)?;
        y.add(&self.beta.broadcast_to(y.shape())?)
    }

    /// `alpha v` for each row of a `[batch, x]` tensor.
    fn linear_part(&self, v: &Tensor) -> Result<Tensor> {
        v.matmul(&self.alpha.transpose()?)
    }

    fn mu_at(&self, t: f64, x: &Tensor) -> Result<Tensor> {
        self.mu.forward(&with_time(t, x)?)
    }

    fn sigma_dw(&self, t: f64, x: &Tensor, dw: &Tensor) -> Result<Tensor> {
        if dw.rank() != 2 || dw.cols() != self.dims.w || dw.rows() != x.rows() {
            return Err(Error::shape(
                "solve_generator",
                format!("Brownian increment {:?} for state {:?}", dw.shape(), x.shape()),
            ));
        }
        let s = self.sigma.forward(&with_time(t, x)?)?;
        s.bmv(dw, self.dims.x, self.dims.w)
    }
}

impl Parameterized for GeneratorParams {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = prefixed("zeta", self.zeta.params());
        out.extend(prefixed("mu", self.mu.params()));
        out.extend(prefixed("sigma", self.sigma.params()));
        out.push(("alpha".into(), &self.alpha));
        out.push(("beta".into(), &self.beta));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.zeta.params_mut();
        out.extend(self.mu.params_mut());
        out.extend(self.sigma.params_mut());
        out.push(&mut self.alpha);
        out.push(&mut self.beta);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscriminatorDims {
    pub y: usize,
    /// Hidden state.
    pub h: usize,
    pub width: usize,
    pub depth: usize,
}

/// Neural CDE discriminator: `H_0 = xi(Y_0)`,
/// `dH = f(t, H) dt + g(t, H) o dY`, `D = m . H_T`.
#[derive(Clone, Debug)]
pub struct DiscriminatorParams {
    pub xi: Mlp,
    pub f: Mlp,
    /// Output is the row-major `h * y` matrix.
    pub g: Mlp,
    /// `[h, 1]`
    pub m: Tensor,
    pub dims: DiscriminatorDims,
}

impl DiscriminatorParams {
    pub fn new(d: DiscriminatorDims, rng: &mut RandomStream) -> Result<Self> {
        if [d.y, d.h, d.width].contains(&0) {
            return Err(Error::InvalidArgument(format!("discriminator dims must be positive: {d:?}")));
        }
        Ok(DiscriminatorParams {
            xi: Mlp::with_depth(d.y, d.width, d.depth, d.h, false, rng)?,
            f: Mlp::with_depth(1 + d.h, d.width, d.depth, d.h, true, rng)?,
            g: Mlp::with_depth(1 + d.h, d.width, d.depth, d.h * d.y, true, rng)?,
            m: uniform_tensor(vec![d.h, 1], (1.0 / d.h as f64).sqrt(), rng),
            dims: d,
        })
    }

    fn check_path_value(&self, y: &Tensor) -> Result<()> {
        if y.rank() != 2 || y.cols() != self.dims.y {
            return Err(Error::shape(
                "solve_cde",
                format!("path values {:?}, discriminator expects {} channels", y.shape(), self.dims.y),
            ));
        }
        Ok(())
    }

    pub fn initial_state(&self, y0: &Tensor) -> Result<Tensor> {
        self.check_path_value(y0)?;
        self.xi.forward(y0)
    }

    /// `[batch, 1]` scores from terminal hidden states.
    pub fn score(&self, h: &Tensor) -> Result<Tensor> {
        h.matmul(&self.m)
    }

    fn f_at(&self, t: f64, h: &Tensor) -> Result<Tensor> {
        self.f.forward(&with_time(t, h)?)
    }

    fn g_dy(&self, t: f64, h: &Tensor, dy: &Tensor) -> Result<Tensor> {
        self.check_path_value(dy)?;
        let g = self.g.forward(&with_time(t, h)?)?;
        g.bmv(dy, self.dims.h, self.dims.y)
    }
}

impl Parameterized for DiscriminatorParams {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = prefixed("xi", self.xi.params());
        out.extend(prefixed("f", self.f.params()));
        out.extend(prefixed("g", self.g.params()));
        out.push(("m".into(), &self.m));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.xi.params_mut();
        out.extend(self.f.params_mut());
        out.extend(self.g.params_mut());
        out.push(&mut self.m);
        out
    }
}

struct GeneratorField<'a>(&'a GeneratorParams);

impl Sde for GeneratorField<'_> {
    fn drift(&self, t: f64, s: &[Tensor]) -> Result<Vec<Tensor>> {
        Ok(vec![self.0.mu_at(t, &s[0])?])
    }

    fn diffusion(&self, t: f64, s: &[Tensor], dw: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![self.0.sigma_dw(t, &s[0], dw)?])
    }
}

struct CdeField<'a>(&'a DiscriminatorParams);

impl Sde for CdeField<'_> {
    fn drift(&self, t: f64, s: &[Tensor]) -> Result<Vec<Tensor>> {
        Ok(vec![self.0.f_at(t, &s[0])?])
    }

    fn diffusion(&self, t: f64, s: &[Tensor], dy: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![self.0.g_dy(t, &s[0], dy)?])
    }
}

struct CombinedField<'a> {
    gen: &'a GeneratorParams,
    disc: &'a DiscriminatorParams,
}

impl Sde for CombinedField<'_> {
    fn drift(&self, t: f64, s: &[Tensor]) -> Result<Vec<Tensor>> {
        let mu = self.gen.mu_at(t, &s[0])?;
        let dy = self.gen.linear_part(&mu)?;
        let g = self.disc.g.forward(&with_time(t, &s[1])?)?;
        let fh = self.disc.f_at(t, &s[1])?;
        let h = fh.add(&g.bmv(&dy, self.disc.dims.h, self.disc.dims.y)?)?;
        Ok(vec![mu, h])
    }

    fn diffusion(&self, t: f64, s: &[Tensor], dw: &Tensor) -> Result<Vec<Tensor>> {
        let sdw = self.gen.sigma_dw(t, &s[0], dw)?;
        let dy = self.gen.linear_part(&sdw)?;
        let h = self.disc.g_dy(t, &s[1], &dy)?;
        Ok(vec![sdw, h])
    }
}

fn check_noise(gen: &GeneratorParams, v: &InitialNoise, w: &BrownianSample, grid: &TimeGrid) -> Result<()> {
    if w.grid != grid.times {
        return Err(Error::InvalidArgument(
            "Brownian sample grid differs from the solver grid".into(),
        ));
    }
    if v.dim != gen.dims.v || w.dim != gen.dims.w {
        return Err(Error::shape(
            "solve_generator",
            format!(
                "noise dims (v={}, w={}) vs generator (v={}, w={})",
                v.dim, w.dim, gen.dims.v, gen.dims.w
            ),
        ));
    }
    if v.batch != w.batch {
        return Err(Error::shape(
            "solve_generator",
            format!("initial noise batch {} vs Brownian batch {}", v.batch, w.batch),
        ));
    }
    Ok(())
}

/// Generator output `Y` at every grid point, each `[batch, y]`.
pub fn solve_generator(
    gen: &GeneratorParams,
    v: &InitialNoise,
    w: &BrownianSample,
    grid: &TimeGrid,
    method: Method,
) -> Result<Vec<Tensor>> {
    check_noise(gen, v, w, grid)?;
    generate_path(gen, &v.tensor(), &w.tensors(), grid, method)
}

/// [`solve_generator`] on raw `[batch, v]` noise and `[batch, w]`
/// per-step increments.
pub fn generate_path(
    gen: &GeneratorParams,
    v: &Tensor,
    dw: &[Tensor],
    grid: &TimeGrid,
    method: Method,
) -> Result<Vec<Tensor>> {
    let x0 = gen.initial_state(v)?;
    let mut ys = Vec::with_capacity(grid.points());
    integrate(&GeneratorField(gen), vec![x0], grid, dw, method, |_, s| {
        ys.push(gen.readout(&s[0])?);
        Ok(())
    })?;
    Ok(ys)
}

/// Discriminator scores `[batch, 1]` for a path given by its values at
/// every grid point. Between grid points the path is linear, so the step
/// increment is `Y_{i+1} - Y_i`.
pub fn solve_cde(
    disc: &DiscriminatorParams,
    path: &[Tensor],
    grid: &TimeGrid,
    method: Method,
) -> Result<Tensor> {
    disc.score(&cde_terminal(disc, path, grid, method)?)
}

/// Terminal hidden state `[batch, h]` of the CDE driven by `path`.
pub fn cde_terminal(
    disc: &DiscriminatorParams,
    path: &[Tensor],
    grid: &TimeGrid,
    method: Method,
) -> Result<Tensor> {
    if path.len() != grid.points() {
        return Err(Error::shape(
            "solve_cde",
            format!("{} path values for {} grid points", path.len(), grid.points()),
        ));
    }
    let h0 = disc.initial_state(&path[0])?;
    let dy = path
        .windows(2)
        .map(|p| p[1].sub(&p[0]))
        .collect::<Result<Vec<_>>>()?;
    let mut h = integrate(&CdeField(disc), vec![h0], grid, &dy, method, |_, _| Ok(()))?;
    Ok(h.remove(0))
}

/// Generator and discriminator solved as one stacked system. Returns the
/// generated path and its scores.
pub fn solve_combined(
    gen: &GeneratorParams,
    disc: &DiscriminatorParams,
    v: &InitialNoise,
    w: &BrownianSample,
    grid: &TimeGrid,
    method: Method,
) -> Result<(Vec<Tensor>, Tensor)> {
    check_noise(gen, v, w, grid)?;
    combined_tensors(gen, disc, &v.tensor(), &w.tensors(), grid, method)
}

pub fn combined_tensors(
    gen: &GeneratorParams,
    disc: &DiscriminatorParams,
    v: &Tensor,
    dw: &[Tensor],
    grid: &TimeGrid,
    method: Method,
) -> Result<(Vec<Tensor>, Tensor)> {
    if gen.dims.y != disc.dims.y {
        return Err(Error::shape(
            "solve_combined",
            format!("generator emits {} channels, discriminator reads {}", gen.dims.y, disc.dims.y),
        ));
    }
    let x0 = gen.initial_state(v)?;
    let h0 = disc.initial_state(&gen.readout(&x0)?)?;
    let field = CombinedField { gen, disc };
    let mut ys = Vec::with_capacity(grid.points());
    let end = integrate(&field, vec![x0, h0], grid, dw, method, |_, s| {
        ys.push(gen.readout(&s[0])?);
        Ok(())
    })?;
    Ok((ys, disc.score(&end[1])?))
}

/// Per-time `[batch, y]` values joined into `[batch, points * y]`,
/// time-major.
pub fn flatten_path(path: &[Tensor]) -> Result<Tensor> {
    let parts: Vec<&Tensor> = path.iter().collect();
    Tensor::concat(&parts)
}

/// Inverse of [`flatten_path`].
pub fn split_path(flat: &Tensor, channels: usize) -> Result<Vec<Tensor>> {
    if channels == 0 || flat.rank() != 2 || flat.cols() % channels != 0 {
        return Err(Error::shape(
            "split_path",
            format!("{:?} is not a whole number of {channels}-channel points", flat.shape()),
        ));
    }
    (0..flat.cols() / channels)
        .map(|i| flat.slice(i * channels, (i + 1) * channels))
        .collect()
}
