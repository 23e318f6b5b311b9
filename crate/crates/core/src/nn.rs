//! Parameterized layers and the [`Module`] interface shared by blocks and
//! networks.

use std::ops::{Add, AddAssign};

use drsnet_tensor::ops::{self, BatchNormConfig, Conv2dGeometry};
use drsnet_tensor::{Param, ParamKind, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Forward-pass mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode {
    /// Batch normalization uses batch statistics and updates running ones.
    pub training: bool,
    /// Parameters are recorded on the graph so `backward` reaches them.
    pub grad: bool,
}

impl Mode {
    pub const TRAIN: Mode = Mode {
        training: true,
        grad: true,
    };
    pub const EVAL: Mode = Mode {
        training: false,
        grad: false,
    };
}

/// Analytic operation count of one forward pass on a single image.
///
/// `conv_mult_adds` counts one per multiply-accumulate of every convolution
/// (bias additions are not counted). `elementwise` counts one per output
/// element of normalization, activations, additions, pooling and channel
/// scaling, and four per output element of bilinear resampling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopTally {
    pub conv_mult_adds: u64,
    pub elementwise: u64,
}

impl FlopTally {
    pub fn conv(macs: usize) -> Self {
        Self {
            conv_mult_adds: macs as u64,
            elementwise: 0,
        }
    }

    pub fn elementwise(ops: usize) -> Self {
        Self {
            conv_mult_adds: 0,
            elementwise: ops as u64,
        }
    }

    /// Bilinear resampling of `channels` planes to `height x width`.
    pub fn resize(channels: usize, height: usize, width: usize) -> Self {
        Self::elementwise(4 * channels * height * width)
    }

    /// Total with `flops_per_mult_add` operations per multiply-accumulate.
    pub fn total(&self, flops_per_mult_add: u64) -> u64 {
        self.conv_mult_adds * flops_per_mult_add + self.elementwise
    }
}

impl Add for FlopTally {
    type Output = FlopTally;
    fn add(self, rhs: FlopTally) -> FlopTally {
        FlopTally {
            conv_mult_adds: self.conv_mult_adds + rhs.conv_mult_adds,
            elementwise: self.elementwise + rhs.elementwise,
        }
    }
}

impl AddAssign for FlopTally {
    fn add_assign(&mut self, rhs: FlopTally) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for FlopTally {
    fn sum<I: Iterator<Item = FlopTally>>(iter: I) -> FlopTally {
        iter.fold(FlopTally::default(), Add::add)
    }
}

pub trait Module {
    fn forward(&self, x: &Var, mode: Mode) -> Result<Var>;

    /// Visits every parameter, running statistics included.
    fn visit_params(&self, f: &mut dyn FnMut(&Param));

    /// Operation count for a single `height x width` input.
    fn flops(&self, height: usize, width: usize) -> FlopTally;

    fn params(&self) -> Vec<Param> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push(p.clone()));
        out
    }

    /// Number of trainable scalars.
    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| {
            if p.kind().trainable() {
                n += p.numel();
            }
        });
        n
    }
}

/// Deterministic parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He-normal weights with fan-in `shape[1..]`.
    fn kaiming(&mut self, name: String, shape: [usize; 4]) -> Param {
        let fan_in = (shape[1] * shape[2] * shape[3]).max(1);
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        let t = Tensor::from_fn(shape, |_| normal.sample(&mut self.rng));
        Param::new(name, ParamKind::Weight, t)
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Stride-1 convolution with same-size zero padding.
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub geometry: Conv2dGeometry,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Init,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        dilation: usize,
        bias: bool,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Config(format!("{name}: channel counts must be positive")));
        }
        if kernel.0 % 2 == 0 || kernel.1 % 2 == 0 {
            return Err(Error::Config(format!("{name}: kernel sizes must be odd")));
        }
        let weight = init.kaiming(join(name, "weight"), [out_channels, in_channels, kernel.0, kernel.1]);
        let bias = bias.then(|| Param::new(join(name, "bias"), ParamKind::Bias, Tensor::zeros([out_channels])));
        Ok(Self {
            weight,
            bias,
            geometry: Conv2dGeometry::same(kernel.0, kernel.1, (dilation, dilation)),
            in_channels,
            out_channels,
            kernel,
        })
    }

    pub fn pointwise(init: &mut Init, name: &str, cin: usize, cout: usize, bias: bool) -> Result<Self> {
        Self::new(init, name, cin, cout, (1, 1), 1, bias)
    }
}

impl Module for Conv2d {
    fn forward(&self, x: &Var, mode: Mode) -> Result<Var> {
        if x.shape().get(1) != Some(&self.in_channels) {
            return Err(Error::Shape(format!(
                "convolution {} expects {} input channels, got shape {:?}",
                self.weight.name(),
                self.in_channels,
                x.shape()
            )));
        }
        let bias = self.bias.as_ref().map(|b| b.var(mode.grad));
        Ok(ops::conv2d(x, &self.weight.var(mode.grad), bias.as_ref(), self.geometry)?)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn flops(&self, height: usize, width: usize) -> FlopTally {
        FlopTally::conv(height * width * self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1)
    }
}

pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(join(name, "weight"), ParamKind::NormScale, Tensor::full([channels], 1.0)),
            beta: Param::new(join(name, "bias"), ParamKind::NormShift, Tensor::zeros([channels])),
            running_mean: Param::new(join(name, "running_mean"), ParamKind::RunningMean, Tensor::zeros([channels])),
            running_var: Param::new(join(name, "running_var"), ParamKind::RunningVar, Tensor::full([channels], 1.0)),
            channels,
        }
    }
}

impl Module for BatchNorm2d {
    fn forward(&self, x: &Var, mode: Mode) -> Result<Var> {
        Ok(ops::batch_norm(
            x,
            &self.gamma.var(mode.grad),
            &self.beta.var(mode.grad),
            &self.running_mean,
            &self.running_var,
            mode.training,
            BatchNormConfig::default(),
        )?)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn flops(&self, height: usize, width: usize) -> FlopTally {
        FlopTally::elementwise(height * width * self.channels)
    }
}
