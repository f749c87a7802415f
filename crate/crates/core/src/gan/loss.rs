use crate::autodiff::{gradient, Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::Parameterized;
use crate::noise::RandomStream;
use crate::sdesolve::{solve_cde, split_path, DiscriminatorParams, Method, TimeGrid};

/// Anything that scores a batch of grid-sampled paths.
pub trait Discriminator: Parameterized {
    /// Path values per grid point, each `[batch, channels]`, to `[batch, 1]`.
    fn score(&self, path: &[Tensor], grid: &TimeGrid, method: Method) -> Result<Tensor>;
    fn channels(&self) -> usize;
}

impl Discriminator for DiscriminatorParams {
    fn score(&self, path: &[Tensor], grid: &TimeGrid, method: Method) -> Result<Tensor> {
        solve_cde(self, path, grid, method)
    }

    fn channels(&self) -> usize {
        self.dims.y
    }
}

fn nonempty(op: &'static str, d: &Tensor) -> Result<()> {
    if d.numel() == 0 {
        return Err(Error::InvalidArgument(format!("{op}: empty batch")));
    }
    Ok(())
}

/// Mean score of generated paths; the generator minimises it.
pub fn generator_loss(d_fake: &Tensor) -> Result<Tensor> {
    nonempty("generator_loss", d_fake)?;
    d_fake.mean()
}

/// `-(mean(d_fake) - mean(d_real)) + lambda * penalty`.
pub fn discriminator_loss(d_fake: &Tensor, d_real: &Tensor, penalty: &Tensor, lambda: f64) -> Result<Tensor> {
    nonempty("discriminator_loss", d_fake)?;
    nonempty("discriminator_loss", d_real)?;
    let gap = d_real.mean()?.sub(&d_fake.mean()?)?;
    gap.add(&penalty.scale(lambda))
}

/// Per-sample penalty terms `(|grad_y D(y_hat)| - 1)^2`, `[batch, 1]`, at
/// `y_hat = eps real + (1 - eps) fake`. Paths are flat
/// `[batch, points * channels]`, time-major. The terms stay differentiable
/// with respect to the discriminator's parameters.
pub fn penalty_terms<D: Discriminator>(
    disc: &D,
    real: &Tensor,
    fake: &Tensor,
    grid: &TimeGrid,
    method: Method,
    eps: &[f64],
) -> Result<Tensor> {
    let c = disc.channels();
    if real.shape() != fake.shape() || real.rank() != 2 || real.cols() != grid.points() * c {
        return Err(Error::shape(
            "gradient_penalty",
            format!(
                "real {:?} and fake {:?} on a {}-point grid with {c} channels",
                real.shape(),
                fake.shape(),
                grid.points()
            ),
        ));
    }
    if eps.len() != real.rows() {
        return Err(Error::InvalidArgument(format!(
            "{} interpolation weights for {} pairs",
            eps.len(),
            real.rows()
        )));
    }
    let width = real.cols();
    let mut mixed = Vec::with_capacity(real.numel());
    for (r, &e) in eps.iter().enumerate() {
        let a = &real.data()[r * width..(r + 1) * width];
        let b = &fake.data()[r * width..(r + 1) * width];
        mixed.extend(a.iter().zip(b).map(|(x, y)| e * x + (1.0 - e) * y));
    }
    let tape = disc
        .param_tensors()
        .first()
        .and_then(|t| t.tape().cloned())
        .unwrap_or_else(Tape::new);
    let y_hat = tape.leaf(&Tensor::new(real.shape().to_vec(), mixed)?);
    let d = disc.score(&split_path(&y_hat, c)?, grid, method)?;
    let g = gradient(&d.sum(), &[&y_hat], true)?.remove(0);
    let norm = g.square().sum_to(&[g.rows(), 1])?.sqrt();
    Ok(norm.offset(-1.0).square())
}

/// Gradient penalty: mean of [`penalty_terms`] with one `eps ~ U(0, 1)`
/// per (real, fake) pair, paired by batch index.
pub fn gradient_penalty<D: Discriminator>(
    disc: &D,
    real: &Tensor,
    fake: &Tensor,
    grid: &TimeGrid,
    method: Method,
    eps_stream: &mut RandomStream,
) -> Result<Tensor> {
    let eps: Vec<f64> = (0..real.rows().min(fake.rows())).map(|_| eps_stream.uniform()).collect();
    penalty_terms(disc, real, fake, grid, method, &eps)?.mean()
}
