//! Convolutional building blocks: factorized (asymmetric) convolutions,
//! squeeze-and-excitation attention, the multi-scale SE encoder blocks,
//! the DoubleConv/NeckConv pair and residual units used by the ablations.

use drsnet_tensor::ops;
use drsnet_tensor::{Param, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, BatchNorm2d, Conv2d, FlopTally, Init, Mode, Module};

/// Convolution description for [`AsymConv`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    /// `n x 1` followed by `1 x n` instead of a full `n x n` kernel.
    pub factorized: bool,
    pub bias: bool,
}

impl ConvSpec {
    pub fn factorized(in_channels: usize, out_channels: usize, kernel_size: usize, dilation: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size,
            dilation,
            factorized: true,
            bias: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![1, 3, 5].contains(&self.kernel_size) {
            return Err(Error::Config(format!("kernel size {} not in {{1, 3, 5}}", self.kernel_size)));
        }
        if self.dilation == 0 {
            return Err(Error::Config("dilation must be at least 1".into()));
        }
        if self.factorized && self.kernel_size == 1 {
            return Err(Error::Config("a factorized convolution needs kernel size > 1".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }
}

/// `n x 1` convolution followed by `1 x n` convolution at the same dilation.
///
/// The intermediate width is `min(in, out)`. Only the second convolution
/// carries a bias when `spec.bias` is set.
pub struct AsymConv {
    pub vertical: Conv2d,
    pub horizontal: Conv2d,
    pub spec: ConvSpec,
}

impl AsymConv {
    pub fn new(init: &mut Init, name: &str, spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        if !spec.factorized {
            return Err(Error::Config("AsymConv requires a factorized spec".into()));
        }
        let n = spec.kernel_size;
        let mid = spec.in_channels.min(spec.out_channels);
        Ok(Self {
            vertical: Conv2d::new(init, &join(name, "vertical"), spec.in_channels, mid, (n, 1), spec.dilation, false)?,
            horizontal: Conv2d::new(init, &join(name, "horizontal"), mid, spec.out_channels, (1, n), spec.dilation, spec.bias)?,
            spec,
        })
    }

    pub fn mid_channels(&self) -> usize {
        self.vertical.out_channels
    }
}

impl Module for AsymConv {
    fn forward(&self, x: &Var, mode: Mode) -> Result<Var> {
        let y = self.vertical.forward(x, mode)?;
        self.horizontal.forward(&y, mode)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.vertical.visit_params(f);
        self.horizontal.visit_params(f);
    }

    fn flops(&self, h: usize, w: usize) -> FlopTally {
        self.vertical.flops(h, w) + self.horizontal.flops(h, w)
    }
}

/// Convolution (no bias), batch normalization, ReLU.
pub struct ConvBnRelu<C> {
    pub conv: C,
    pub bn: BatchNorm2d,
    pub relu: bool,
}

impl<C: Module> ConvBnRelu<C> {
    fn new(conv: C, name: &str, channels: usize, relu: bool) -> Self {
        Self {
            conv,
            bn: BatchNorm2d::new(&join(name, "bn"), channels),
            relu,
        }
    }
}

impl<C: Module> Module for ConvBnRelu<C> {
    fn forward(&self, x: &Var, mode: Mode) -> Result<Var> {
        let y = self.bn.forward(&self.conv.forward(x, mode)?, mode)?;
        Ok(if self.relu { ops::relu(&y) } else { y })
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.conv.visit_params(f);
        self.bn.visit_params(f);
    }

    fn flops(&self, h: usize, w: usize) -> FlopTally {
        let relu = if self.relu { h * w * self.bn.channels } else { 0 };
        self.conv.flops(h, w) + self.bn.flops(h, w) + FlopTally::elementwise(relu)
    }
}

fn asym_unit(init: &mut Init, name: &str, cin: usize, cout: usize, n: usize, dilation: usize) -> Result<ConvBnRelu<AsymConv>> {
    let conv = AsymConv::new(init, &join(name, "conv"), ConvSpec::factorized(cin, cout, n, dilation))?;
    Ok(ConvBnRelu::new(conv, name, cout, true))
}

fn pointwise_unit(init: &mut Init, name: &str, cin: usize, cout: usize) -> Result<ConvBnRelu<Conv2d>> {
    let conv = Conv2d::pointwise(init, &join(name, "conv"), cin, cout, false)?;
    Ok(ConvBnRelu::new(conv, name, cout, true))
}

fn square_unit(init: &mut Init, name: &str, cin: usize, cout: usize, k: usize, relu: bool) -> Result<ConvBnRelu<Conv2d>> {
    let conv = Conv2d::new(init, &join(name, "conv"), cin, cout, (k, k), 1, false)?;
    Ok(ConvBnRelu::new(conv, name, cout, relu))
}

/// Squeeze-and-excitation channel gate:
/// `x * sigmoid(W2 relu(W1 avgpool(x)))` with biased 1x1 convolutions.
pub struct SeAttention {
    pub squeeze: Conv2d,
    pub excite: Conv2d,
    pub channels: usize,
}

impl SeAttention {
    pub fn new(init: &mut Init, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::Config(format!(
                "SE reduction {reduction} does not divide {channels} channels"
            )));
        }
        let hidden = channels / reduction;
        Ok(Self {
            squeeze: Conv2d::pointwise(init, &join(name, "squeeze"), channels, hidden, true)?,
            excite: Conv2d::pointwise(init, &join(name, "excite"), hidden, channels, true)?,
            channels,
        })
    }

    /// The per-sample channel gate, shape (N, C, 1, 1).
    pub fn gate(&self, x: &Var, mode: Mode) -> Result<Var> {
        let pooled = ops::global_avg_pool(x)?;
        let hidden = ops::relu(&self.squeeze.forward(&pooled, mode)?);
        Ok(ops::sigmoid(&self.excite.forward(&hidden, mode)?))
    }
}

impl Module for SeAttention {
    fn forward(&self, x: &Var, mode: Mode) -> Result<Var> {
        Ok(ops::mul_channel(x, &self.gate(x, mode)?)?)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.squeeze.visit_params(f);
        self.excite.visit_params(f);
    }

    fn flops(&self, h: usize, w: usize) -> FlopTally {
        let c = self.channels;
        let hidden = self.squeeze.out_channels;
        // pool + scale over the map, relu and sigmoid on the gate vectors
        self.squeeze.flops(1, 1)
            + self.excite.flops(1, 1)
            + FlopTally::elementwise(2 * h * w * c + hidden + c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockVariant {
    A,
    B,
    C,
}

impl BlockVariant {
    pub fn branches(self) -> usize {
        match self {
            BlockVariant::A | BlockVariant::B => 2,
            BlockVariant::C => 3,
        }
    }
}

impl std::fmt::Display for BlockVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for BlockVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(BlockVariant::A),
            "B" => Ok(BlockVariant::B),
            "C" => Ok(BlockVariant::C),
            _ => Err(Error::Config(format!("unknown variant '{s}' (expected A, B or C)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub variant: BlockVariant,
    pub in_channels: usize,
    pub out_channels: usize,
    pub se_reduction: usize,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.variant.branches();
        if self.out_channels == 0 || self.out_channels % k != 0 {
            return Err(Error::Config(format!(
                "variant {} needs output channels divisible by {k}, got {}",
                self.variant, self.out_channels
            )));
        }
        if self.variant == BlockVariant::C && self.in_channels % 3 != 0 {
            return Err(Error::Config(format!(
                "variant C splits its input in three; {} channels do not divide",
                self.in_channels
            )));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("input channels must be positive".into()));
        }
        if self.se_reduction == 0 || self.out_channels % self.se_reduction != 0 {
            return Err(Error::Config(format!(
                "SE reduction {} does not divide {} channels",
                self.se_reduction, self.out_channels
            )));
        }
        Ok(())
    }
}

enum Branches {
    /// 1x1 reduction, then a dilated 3x1/1x3 pair on the reduced map;
    /// both the reduced map and the pair's output are concatenated.
    A {
        reduce: ConvBnRelu<Conv2d>,
        dilated: ConvBnRelu<AsymConv>,
    },
    /// Two branches on the input: a 1x1 convolution, and an extra 1x1
    /// followed by the dilated 3x1/1x3 pair.
    B {
        left: ConvBnRelu<Conv2d>,
        right_reduce: ConvBnRelu<Conv2d>,
        right: ConvBnRelu<AsymConv>,
    },
    /// The input is split into channel thirds feeding a 1x1 branch and
    /// dilated factorized 3x3 and 5x5 branches.
    C {
        one: ConvBnRelu<Conv2d>,
        three: ConvBnRelu<AsymConv>,
        five: ConvBnRelu<AsymConv>,
    },
}

/// Multi-branch block: branch outputs are concatenated, batch-normalized and
/// gated by SE attention. Spatial size is preserved.
pub struct MultiScaleSeBlock {
    branches: Branches,
    pub bn: BatchNorm2d,
    pub se: SeAttention,
    pub config: BlockConfig,
}

const BRANCH_DILATION: usize = 2;

impl MultiScaleSeBlock {
    pub fn new(init: &mut Init, name: &str, config: BlockConfig) -> Result<Self> {
        config.validate()?;
        let cin = config.in_channels;
        let cout = config.out_channels;
        let branches = match config.variant {
            BlockVariant::A => {
                let h = cout / 2;
                Branches::A {
                    reduce: pointwise_unit(init, &join(name, "reduce"), cin, h)?,
                    dilated: asym_unit(init, &join(name, "dilated3"), h, h, 3, BRANCH_DILATION)?,
                }
            }
            BlockVariant::B => {
                let h = cout / 2;
                Branches::B {
                    left: pointwise_unit(init, &join(name, "left"), cin, h)?,
                    right_reduce: pointwise_unit(init, &join(name, "right_reduce"), cin, h)?,
                    right: asym_unit(init, &join(name, "right_dilated3"), h, h, 3, BRANCH_DILATION)?,
                }
            }
            BlockVariant::C => {
                let (ti, t) = (cin / 3, cout / 3);
                Branches::C {
                    one: pointwise_unit(init, &join(name, "branch1"), ti, t)?,
                    three: asym_unit(init, &join(name, "branch3"), ti, t, 3, BRANCH_DILATION)?,
                    five: asym_unit(init, &join(name, "branch5"), ti, t, 5, BRANCH_DILATION)?,
                }
            }
        };
        Ok(Self {
            branches,
            bn: BatchNorm2d::new(&join(name, "bn"), cout),
            se: SeAttention::new(init, &join(name, "se"), cout, config.se_reduction)?,
            config,
        })
    }

    /// Output channel count of each branch.
    pub fn branch_channels(&self) -> Vec<usize> {
        match &self.branches {
            Branches::A { reduce, dilated } => vec![reduce.bn.channels, dilated.bn.channels],
            Branches::B { left, right, .. } => vec![left.bn.channels, right.bn.channels],
            Branches::C { one, three, five } => vec![one.bn.channels, three.bn.channels, five.bn.channels],
        }
    }

    fn visit_branches(&self, f: &mut dyn FnMut(&dyn Module)) {
        match &self.branches {
            Branches::A { reduce, dilated } => {
                f(reduce);
                f(dilated);
            }
            Branches::B {
                left,
                right_reduce,
                right,
            } => {
                f(left);
                f(right_reduce);
                f(right);
            }
            Branches::C { one, three, five } => {
                f(one);
                f(three);
                f(five);
            }
        }
    }
}

impl Module for MultiScaleSeBlock {
    fn forward(&self, x: &Var, mode: Mode) -> Result<Var> {
        if x.shape().get(1) != Some(&self.config.in_channels) {
            return Err(Error::Shape(format!(
                "block expects {} input channels, got shape {:?}",
                self.config.in_channels,
                x.shape()
            )));
        }
        let parts = match &self.branches {
            Branches::A { reduce, dilated } => {
                let r = reduce.forward(x, mode)?;
                let d = dilated.forward(&r, mode)?;
                vec![r, d]
            }
            Branches::B {
                left,
                right_reduce,
                right,
            } => {
                let l = left.forward(x, mode)?;
                let r = right.forward(&right_reduce.forward(x, mode)?, mode)?;
                vec![l, r]
            }
            Branches::C { one, three, five } => {
                let t = self.config.in_channels / 3;
                vec![
                    one.forward(&ops::slice_channels(x, 0, t)?, mode)?,
                    three.forward(&ops::slice_channels(x, t, t)?, mode)?,
                    five.forward(&ops::slice_channels(x, 2 * t, t)?, mode)?,
                ]
            }
        };
        let merged = self.bn.forward(&ops::concat_channels(&parts)?, mode)?;
        self.se.forward(&merged, mode)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.visit_branches(&mut |m| m.visit_params(f));
        self.bn.visit_params(f);
        self.se.visit_params(f);
    }

    fn flops(&self, h: usize, w: usize) -> FlopTally {
        let mut total = FlopTally::default();
        self.visit_branches(&mut |m| total += m.flops(h, w));
        total + self.bn.flops(h, w) + self.se.flops(h, w)
    }
}

/// Two factorized 3x3 convolutions, each followed by batch normalization and
/// ReLU. DoubleConv uses an intermediate width of `C_out / 2`, NeckConv one
/// of `C_in / 2`.
pub struct ConvPair {
    pub first: ConvBnRelu<AsymConv>,
    pub second: ConvBnRelu<AsymConv>,
}

impl ConvPair {
    pub fn double_conv(init: &mut Init, name: &str, cin: usize, cout: usize) -> Result<Self> {
        if cout % 2 != 0 {
            return Err(Error::Config(format!("DoubleConv needs an even output width, got {cout}")));
        }
        Self::with_mid(init, name, cin, cout / 2, cout)
    }

    pub fn neck_conv(init: &mut Init, name: &str, cin: usize, cout: usize) -> Result<Self> {
        if cin % 2 != 0 {
            return Err(Error::Config(format!("NeckConv needs an even input width, got {cin}")));
        }
        Self::with_mid(init, name, cin, cin / 2, cout)
    }

    fn with_mid(init: &mut Init, name: &str, cin: usize, mid: usize, cout: usize) -> Result<Self> {
        Ok(Self {
            first: asym_unit(init, &join(name, "first"), cin, mid, 3, 1)?,
            second: asym_unit(init, &join(name, "second"), mid, cout, 3, 1)?,
        })
    }

    pub fn mid_channels(&self) -> usize {
        self.first.bn.channels
    }

    pub fn out_channels(&self) -> usize {
        self.second.bn.channels
    }
}

impl Module for ConvPair {
    fn forward(&self, x: &Var, mode: Mode) -> Result<Var> {
        self.second.forward(&self.first.forward(x, mode)?, mode)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.first.visit_params(f);
        self.second.visit_params(f);
    }

    fn flops(&self, h: usize, w: usize) -> FlopTally {
        self.first.flops(h, w) + self.second.flops(h, w)
    }
}

/// Biased 1x1 convolution changing the channel count.
pub fn pointwise_conv(init: &mut Init, name: &str, cin: usize, cout: usize) -> Result<Conv2d> {
    Conv2d::pointwise(init, name, cin, cout, true)
}

fn projection(init: &mut Init, name: &str, cin: usize, cout: usize) -> Result<Option<ConvBnRelu<Conv2d>>> {
    if cin == cout {
        return Ok(None);
    }
    let conv = Conv2d::pointwise(init, &join(name, "conv"), cin, cout, false)?;
    Ok(Some(ConvBnRelu::new(conv, name, cout, false)))
}

fn residual_merge(
    body: Var,
    x: &Var,
    shortcut: &Option<ConvBnRelu<Conv2d>>,
    mode: Mode,
) -> Result<Var> {
    let skip = match shortcut {
        Some(p) => p.forward(x, mode)?,
        None => x.clone(),
    };
    Ok(ops::relu(&ops::add(&body, &skip)?))
}

/// ResNet basic block (two 3x3 convolutions) with SE attention on the
/// residual branch.
pub struct SeBasicBlock {
    pub conv1: ConvBnRelu<Conv2d>,
    pub conv2: ConvBnRelu<Conv2d>,
    pub se: SeAttention,
    pub shortcut: Option<ConvBnRelu<Conv2d>>,
}

impl SeBasicBlock {
    pub fn new(init: &mut Init, name: &str, cin: usize, cout: usize, se_reduction: usize) -> Result<Self> {
        Ok(Self {
            conv1: square_unit(init, &join(name, "conv1"), cin, cout, 3, true)?,
            conv2: square_unit(init, &join(name, "conv2"), cout, cout, 3, false)?,
            se: SeAttention::new(init, &join(name, "se"), cout, se_reduction)?,
            shortcut: projection(init, &join(name, "shortcut"), cin, cout)?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.bn.channels
    }
}

impl Module for SeBasicBlock {
    fn forward(&self, x: &Var, mode: Mode) -> Result<Var> {
        let body = self.se.forward(&self.conv2.forward(&self.conv1.forward(x, mode)?, mode)?, mode)?;
        residual_merge(body, x, &self.shortcut, mode)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.conv1.visit_params(f);
        self.conv2.visit_params(f);
        self.se.visit_params(f);
        if let Some(s) = &self.shortcut {
            s.visit_params(f);
        }
    }

    fn flops(&self, h: usize, w: usize) -> FlopTally {
        let c = self.out_channels();
        let short = self.shortcut.as_ref().map_or(FlopTally::default(), |s| s.flops(h, w));
        self.conv1.flops(h, w)
            + self.conv2.flops(h, w)
            + self.se.flops(h, w)
            + short
            + FlopTally::elementwise(2 * h * w * c)
    }
}

pub const BOTTLENECK_EXPANSION: usize = 4;

/// ResNet bottleneck unit: 1x1 reduce, 3x3, 1x1 expand by four.
pub struct Bottleneck {
    pub reduce: ConvBnRelu<Conv2d>,
    pub conv: ConvBnRelu<Conv2d>,
    pub expand: ConvBnRelu<Conv2d>,
    pub shortcut: Option<ConvBnRelu<Conv2d>>,
}

impl Bottleneck {
    pub fn new(init: &mut Init, name: &str, cin: usize, width: usize) -> Result<Self> {
        let cout = width * BOTTLENECK_EXPANSION;
        Ok(Self {
            reduce: square_unit(init, &join(name, "reduce"), cin, width, 1, true)?,
            conv: square_unit(init, &join(name, "conv"), width, width, 3, true)?,
            expand: square_unit(init, &join(name, "expand"), width, cout, 1, false)?,
            shortcut: projection(init, &join(name, "shortcut"), cin, cout)?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.expand.bn.channels
    }
}

impl Module for Bottleneck {
    fn forward(&self, x: &Var, mode: Mode) -> Result<Var> {
        let body = self
            .expand
            .forward(&self.conv.forward(&self.reduce.forward(x, mode)?, mode)?, mode)?;
        residual_merge(body, x, &self.shortcut, mode)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.reduce.visit_params(f);
        self.conv.visit_params(f);
        self.expand.visit_params(f);
        if let Some(s) = &self.shortcut {
            s.visit_params(f);
        }
    }

    fn flops(&self, h: usize, w: usize) -> FlopTally {
        let c = self.out_channels();
        let short = self.shortcut.as_ref().map_or(FlopTally::default(), |s| s.flops(h, w));
        self.reduce.flops(h, w)
            + self.conv.flops(h, w)
            + self.expand.flops(h, w)
            + short
            + FlopTally::elementwise(2 * h * w * c)
    }
}
