use super::{prefixed, Parameterized};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::noise::RandomStream;

#[derive(Clone, Debug)]
pub struct Linear {
    /// `[in, out]`, applied as `x W`.
    pub weight: Tensor,
    /// `[1, out]`
    pub bias: Tensor,
}

impl Linear {
    /// Weights uniform in `±sqrt(1/fan_in)`, zero bias.
    pub fn init(input: usize, output: usize, rng: &mut RandomStream) -> Self {
        let bound = (1.0 / input.max(1) as f64).sqrt();
        let w = (0..input * output)
            .map(|_| bound * (2.0 * rng.uniform() - 1.0))
            .collect();
        Linear {
            weight: Tensor::new(vec![input, output], w).expect("sized"),
            bias: Tensor::zeros(vec![1, output]),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_width(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let xw = x.matmul(&self.weight)?;
        let b = self.bias.broadcast_to(xw.shape())?;
        xw.add(&b)
    }
}

/// Feedforward network: softplus between layers, optional tanh on output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub final_tanh: bool,
}

impl Mlp {
    /// `widths` lists input, hidden widths and output, e.g. `[33, 16, 32]`.
    pub fn new(widths: &[usize], final_tanh: bool, rng: &mut RandomStream) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "MLP widths must list at least input and output, all positive: {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], rng))
            .collect();
        Ok(Mlp { layers, final_tanh })
    }

    /// `depth` hidden layers of `width` units.
    pub fn with_depth(
        input: usize,
        width: usize,
        depth: usize,
        output: usize,
        final_tanh: bool,
        rng: &mut RandomStream,
    ) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(width, depth));
        widths.push(output);
        Mlp::new(&widths, final_tanh, rng)
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").output_width()
    }

    /// Maps a `[batch, in]` input to `[batch, out]`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.rank() != 2 || input.cols() != self.input_width() {
            return Err(Error::shape(
                "mlp_forward",
                format!(
                    "network takes width {}, input has shape {:?}",
                    self.input_width(),
                    input.shape()
                ),
            ));
        }
        let last = self.layers.len() - 1;
        let mut h = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                h = h.softplus();
            } else if self.final_tanh {
                h = h.tanh();
            }
        }
        Ok(h)
    }
}

impl Parameterized for Mlp {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.weight"), &l.weight));
            out.push((format!("layers.{i}.bias"), &l.bias));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

impl Mlp {
    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        prefixed(prefix, self.params())
    }
}
