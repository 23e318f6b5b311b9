//! Encoder-decoder assembly.
//!
//! Encoder: DoubleConv stem at full resolution, bilinear downsampling to 1/4,
//! 1/8 and 1/16 scale with a stack of encoder blocks after each step.
//! Decoder: at each step a biased pointwise convolution halves the channels
//! and the map is bilinearly upsampled (x2, x2, then x4 back to full size),
//! followed by a DoubleConv. Skip connections merge encoder features into
//! the 1/8 and 1/4 decoder stages. A NeckConv and a pointwise head produce
//! one logit per pixel.
//!
//! Pointwise convolutions commute exactly with bilinear resampling (the
//! interpolation weights of every output sample sum to one), so they are
//! evaluated on the coarser side of each resampling step.

use drsnet_tensor::ops;
use drsnet_tensor::{Param, Var};
use serde::{Deserialize, Serialize};

use crate::blocks::{BlockConfig, BlockVariant, Bottleneck, ConvPair, MultiScaleSeBlock, SeBasicBlock};
use crate::error::{Error, Result};
use crate::nn::{join, Conv2d, FlopTally, Init, Mode, Module};

/// Deepest encoder scale; input sides must be multiples of it.
pub const SIZE_DIVISOR: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipMode {
    /// Deeper encoder scale, pointwise-projected and upsampled x2, added to
    /// the shallower decoder scale.
    Asymmetric,
    /// Same-scale encoder features added directly.
    Symmetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    MultiscaleSe,
    Seresnet18,
    Resnet18Bottleneck,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    Seresnet18Encoder,
    Resnet18Bottleneck,
    SymmetricSkip,
}

impl AblationKind {
    pub const ALL: [AblationKind; 3] = [
        AblationKind::Seresnet18Encoder,
        AblationKind::SymmetricSkip,
        AblationKind::Resnet18Bottleneck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationKind::Seresnet18Encoder => "seresnet18_encoder",
            AblationKind::Resnet18Bottleneck => "resnet18_bottleneck",
            AblationKind::SymmetricSkip => "symmetric_skip",
        }
    }
}

impl std::str::FromStr for AblationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown ablation '{s}' (expected seresnet18_encoder, resnet18_bottleneck or symmetric_skip)"
                ))
            })
    }
}

/// Bottleneck widths of the four stages (full, 1/4, 1/8, 1/16 scale) of the
/// bottleneck-ResNet ablation encoder; stage outputs are four times wider.
pub const BOTTLENECK_WIDTHS: [usize; 4] = [64, 64, 128, 256];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub variant: BlockVariant,
    pub stem_channels: usize,
    /// Encoder widths at 1/4, 1/8 and 1/16 scale.
    pub channel_schedule: Vec<usize>,
    /// Encoder blocks per scale (multi-scale SE encoder only).
    pub stage_depths: Vec<usize>,
    /// (width, height)
    pub input_size: (usize, usize),
    pub skip_mode: SkipMode,
    pub encoder_mode: EncoderMode,
    pub se_reduction: usize,
}

impl NetworkConfig {
    pub fn new(variant: BlockVariant) -> Self {
        let stage_depths = match variant {
            BlockVariant::A | BlockVariant::B => vec![1, 1, 4],
            BlockVariant::C => vec![1, 1, 3],
        };
        Self {
            variant,
            stem_channels: 24,
            channel_schedule: vec![48, 96, 192],
            stage_depths,
            input_size: (192, 128),
            skip_mode: SkipMode::Asymmetric,
            encoder_mode: EncoderMode::MultiscaleSe,
            se_reduction: 4,
        }
    }

    /// Ablation builds derived from variant A.
    pub fn ablation(kind: AblationKind) -> Self {
        let mut cfg = Self::new(BlockVariant::A);
        match kind {
            AblationKind::SymmetricSkip => cfg.skip_mode = SkipMode::Symmetric,
            AblationKind::Seresnet18Encoder => cfg.encoder_mode = EncoderMode::Seresnet18,
            AblationKind::Resnet18Bottleneck => cfg.encoder_mode = EncoderMode::Resnet18Bottleneck,
        }
        cfg
    }

    pub fn with_input_size(mut self, width: usize, height: usize) -> Self {
        self.input_size = (width, height);
        self
    }

    /// Encoder output widths at 1/4, 1/8, 1/16 scale.
    pub fn encoder_channels(&self) -> [usize; 3] {
        match self.encoder_mode {
            EncoderMode::MultiscaleSe | EncoderMode::Seresnet18 => [
                self.channel_schedule[0],
                self.channel_schedule[1],
                self.channel_schedule[2],
            ],
            EncoderMode::Resnet18Bottleneck => {
                let e = crate::blocks::BOTTLENECK_EXPANSION;
                [BOTTLENECK_WIDTHS[1] * e, BOTTLENECK_WIDTHS[2] * e, BOTTLENECK_WIDTHS[3] * e]
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_input_size(self.input_size.0, self.input_size.1)?;
        if self.stem_channels == 0 || self.stem_channels % 4 != 0 {
            return Err(Error::Config(format!(
                "stem width must be a positive multiple of 4, got {}",
                self.stem_channels
            )));
        }
        if self.channel_schedule.len() != 3 {
            return Err(Error::Config(format!(
                "channel schedule needs three scales (1/4, 1/8, 1/16), got {}",
                self.channel_schedule.len()
            )));
        }
        let mut prev = self.stem_channels;
        for &c in &self.channel_schedule {
            if c != 2 * prev {
                return Err(Error::Config(format!(
                    "channel schedule must double per downsampling step: {} -> {c}",
                    prev
                )));
            }
            prev = c;
        }
        if self.stage_depths.len() != 3 || self.stage_depths.contains(&0) {
            return Err(Error::Config("stage depths need three positive entries".into()));
        }
        if self.skip_mode == SkipMode::Symmetric {
            let enc = self.encoder_channels();
            if enc[0] != self.channel_schedule[0] || enc[1] != self.channel_schedule[1] {
                return Err(Error::Config(
                    "symmetric skips need encoder and decoder widths to match".into(),
                ));
            }
        }
        Ok(())
    }
}

pub fn check_input_size(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || width % SIZE_DIVISOR != 0 || height % SIZE_DIVISOR != 0 {
        return Err(Error::Config(format!(
            "input size {width}x{height} must have both sides divisible by {SIZE_DIVISOR}"
        )));
    }
    Ok(())
}

/// Per-pixel foreground prediction.
pub struct SegmentationOutput {
    pub logits: Var,
    pub probabilities: Var,
}

type DynModule = Box<dyn Module + Send + Sync>;

fn run(stack: &[DynModule], x: Var, mode: Mode) -> Result<Var> {
    stack.iter().try_fold(x, |x, m| m.forward(&x, mode))
}

fn stack_flops(stack: &[DynModule], h: usize, w: usize) -> FlopTally {
    stack.iter().map(|m| m.flops(h, w)).sum()
}

fn visit_stack(stack: &[DynModule], f: &mut dyn FnMut(&Param)) {
    for m in stack {
        m.visit_params(f);
    }
}

/// Upsamples `encoder_feat` x2, projects it to the decoder width with a
/// biased pointwise convolution and adds it to `decoder_feat`.
pub struct AsymmetricSkip {
    pub project: Conv2d,
}

impl AsymmetricSkip {
    pub fn new(init: &mut Init, name: &str, encoder_channels: usize, decoder_channels: usize) -> Result<Self> {
        Ok(Self {
            project: Conv2d::pointwise(init, &join(name, "project"), encoder_channels, decoder_channels, true)?,
        })
    }

    pub fn forward(&self, encoder_feat: &Var, decoder_feat: &Var, mode: Mode) -> Result<Var> {
        let [_, _, eh, ew] = encoder_feat.value().dims4("asymmetric_skip")?;
        let [_, _, dh, dw] = decoder_feat.value().dims4("asymmetric_skip")?;
        if dh != 2 * eh || dw != 2 * ew {
            return Err(Error::Shape(format!(
                "asymmetric skip needs the encoder map at half the decoder size: {eh}x{ew} vs {dh}x{dw}"
            )));
        }
        let projected = self.project.forward(encoder_feat, mode)?;
        let up = ops::resize_bilinear(&projected, dh, dw)?;
        Ok(ops::add(decoder_feat, &up)?)
    }

    /// Counted at the decoder size `h x w`.
    pub fn flops(&self, h: usize, w: usize) -> FlopTally {
        let c = self.project.out_channels;
        self.project.flops(h / 2, w / 2) + FlopTally::resize(c, h, w) + FlopTally::elementwise(c * h * w)
    }
}

/// Same-scale elementwise merge.
pub fn symmetric_skip(encoder_feat: &Var, decoder_feat: &Var) -> Result<Var> {
    if encoder_feat.shape() != decoder_feat.shape() {
        return Err(Error::Shape(format!(
            "symmetric skip needs matching shapes: {:?} vs {:?}",
            encoder_feat.shape(),
            decoder_feat.shape()
        )));
    }
    Ok(ops::add(decoder_feat, encoder_feat)?)
}

enum Skip {
    Asymmetric(AsymmetricSkip),
    Symmetric,
}

impl Skip {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        if let Skip::Asymmetric(s) = self {
            s.project.visit_params(f);
        }
    }
}

/// Pointwise projection evaluated before an upsampling step.
struct UpProject {
    conv: Conv2d,
    factor: usize,
}

impl UpProject {
    fn forward(&self, x: &Var, mode: Mode) -> Result<Var> {
        let y = self.conv.forward(x, mode)?;
        let [_, _, h, w] = y.value().dims4("decoder")?;
        Ok(ops::resize_bilinear(&y, h * self.factor, w * self.factor)?)
    }

    /// Counted at the coarse input size.
    fn flops(&self, h: usize, w: usize) -> FlopTally {
        let (ho, wo) = (h * self.factor, w * self.factor);
        self.conv.flops(h, w) + FlopTally::resize(self.conv.out_channels, ho, wo)
    }
}

struct DecoderStage {
    up: UpProject,
    conv: ConvPair,
    skip: Option<Skip>,
}

pub struct DrsNet {
    config: NetworkConfig,
    stem: ConvPair,
    /// Encoder units at full resolution (residual ablations only).
    full_res: Vec<DynModule>,
    /// Encoder stacks at 1/4, 1/8 and 1/16 scale.
    stages: [Vec<DynModule>; 3],
    decoder: [DecoderStage; 3],
    neck: ConvPair,
    head: Conv2d,
}

impl DrsNet {
    /// Builds a freshly initialized network.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(seed);
        let init = &mut init;
        let stem_c = config.stem_channels;
        let stem = ConvPair::double_conv(init, "stem", 3, stem_c)?;
        let (full_res, stages) = build_encoder(init, &config)?;
        let enc = config.encoder_channels();
        let [d4, d8, _] = [config.channel_schedule[0], config.channel_schedule[1], config.channel_schedule[2]];

        let skip = |init: &mut Init, name: &str, enc_c: usize, dec_c: usize| -> Result<Skip> {
            Ok(match config.skip_mode {
                SkipMode::Asymmetric => Skip::Asymmetric(AsymmetricSkip::new(init, name, enc_c, dec_c)?),
                SkipMode::Symmetric => Skip::Symmetric,
            })
        };
        let up = |init: &mut Init, name: &str, cin: usize, cout: usize, factor: usize| -> Result<UpProject> {
            Ok(UpProject {
                conv: Conv2d::pointwise(init, name, cin, cout, true)?,
                factor,
            })
        };
        let decoder = [
            DecoderStage {
                up: up(init, "decoder8.project", enc[2], d8, 2)?,
                conv: ConvPair::double_conv(init, "decoder8.conv", d8, d8)?,
                skip: Some(skip(init, "decoder8.skip", enc[2], d8)?),
            },
            DecoderStage {
                up: up(init, "decoder4.project", d8, d4, 2)?,
                conv: ConvPair::double_conv(init, "decoder4.conv", d4, d4)?,
                skip: Some(skip(init, "decoder4.skip", enc[1], d4)?),
            },
            DecoderStage {
                up: up(init, "decoder1.project", d4, stem_c, 4)?,
                conv: ConvPair::double_conv(init, "decoder1.conv", stem_c, stem_c)?,
                skip: None,
            },
        ];
        let neck = ConvPair::neck_conv(init, "neck", stem_c, stem_c / 2)?;
        let head = Conv2d::pointwise(init, "head", stem_c / 2, 1, true)?;
        Ok(Self {
            config,
            stem,
            full_res,
            stages,
            decoder,
            neck,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Runs the network on an (N, 3, H, W) batch.
    pub fn segment(&self, x: &Var, mode: Mode) -> Result<SegmentationOutput> {
        let [_, c, h, w] = x.value().dims4("forward").map_err(|_| {
            Error::Shape(format!("expected an (N, 3, H, W) batch, got shape {:?}", x.shape()))
        })?;
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 input channels, got {c}")));
        }
        check_input_size(w, h)?;

        let x = run(&self.full_res, self.stem.forward(x, mode)?, mode)?;
        let e4 = run(&self.stages[0], ops::resize_bilinear(&x, h / 4, w / 4)?, mode)?;
        drop(x);
        let e8 = run(&self.stages[1], ops::resize_bilinear(&e4, h / 8, w / 8)?, mode)?;
        let e16 = run(&self.stages[2], ops::resize_bilinear(&e8, h / 16, w / 16)?, mode)?;

        // Skip sources: deeper scale for asymmetric merges, same scale otherwise.
        let sources = match self.config.skip_mode {
            SkipMode::Asymmetric => [&e16, &e8],
            SkipMode::Symmetric => [&e8, &e4],
        };
        let mut d = e16.clone();
        for (i, stage) in self.decoder.iter().enumerate() {
            d = stage.conv.forward(&stage.up.forward(&d, mode)?, mode)?;
            d = match &stage.skip {
                Some(Skip::Asymmetric(s)) => s.forward(sources[i], &d, mode)?,
                Some(Skip::Symmetric) => symmetric_skip(sources[i], &d)?,
                None => d,
            };
        }
        let logits = self.head.forward(&self.neck.forward(&d, mode)?, mode)?;
        let probabilities = ops::sigmoid(&logits);
        Ok(SegmentationOutput {
            logits,
            probabilities,
        })
    }

    /// Trainable parameters grouped by top-level component.
    pub fn component_params(&self) -> Vec<(&'static str, usize)> {
        let count = |f: &dyn Fn(&mut dyn FnMut(&Param))| {
            let mut n = 0;
            f(&mut |p: &Param| {
                if p.kind().trainable() {
                    n += p.numel()
                }
            });
            n
        };
        vec![
            ("stem", count(&|f| self.stem.visit_params(f))),
            ("encoder", count(&|f| {
                visit_stack(&self.full_res, f);
                for s in &self.stages {
                    visit_stack(s, f);
                }
            })),
            ("decoder", count(&|f| {
                for s in &self.decoder {
                    s.up.conv.visit_params(f);
                    s.conv.visit_params(f);
                    if let Some(k) = &s.skip {
                        k.visit_params(f);
                    }
                }
            })),
            ("neck", count(&|f| self.neck.visit_params(f))),
            ("head", count(&|f| self.head.visit_params(f))),
        ]
    }
}

impl Module for DrsNet {
    /// Returns the logits.
    fn forward(&self, x: &Var, mode: Mode) -> Result<Var> {
        Ok(self.segment(x, mode)?.logits)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.stem.visit_params(f);
        visit_stack(&self.full_res, f);
        for s in &self.stages {
            visit_stack(s, f);
        }
        for s in &self.decoder {
            s.up.conv.visit_params(f);
            s.conv.visit_params(f);
            if let Some(k) = &s.skip {
                k.visit_params(f);
            }
        }
        self.neck.visit_params(f);
        self.head.visit_params(f);
    }

    fn flops(&self, h: usize, w: usize) -> FlopTally {
        let enc = self.config.encoder_channels();
        let scales = [(h / 4, w / 4), (h / 8, w / 8), (h / 16, w / 16)];
        let mut t = self.stem.flops(h, w) + stack_flops(&self.full_res, h, w);
        let mut prev_c = self.full_res_channels();
        for (i, stack) in self.stages.iter().enumerate() {
            let (sh, sw) = scales[i];
            t += FlopTally::resize(prev_c, sh, sw) + stack_flops(stack, sh, sw);
            prev_c = enc[i];
        }
        let coarse = [scales[2], scales[1], scales[0]];
        let fine = [scales[1], scales[0], (h, w)];
        for (i, stage) in self.decoder.iter().enumerate() {
            let (fh, fw) = fine[i];
            t += stage.up.flops(coarse[i].0, coarse[i].1) + stage.conv.flops(fh, fw);
            t += match &stage.skip {
                Some(Skip::Asymmetric(s)) => s.flops(fh, fw),
                Some(Skip::Symmetric) => FlopTally::elementwise(stage.conv.out_channels() * fh * fw),
                None => FlopTally::default(),
            };
        }
        t + self.neck.flops(h, w) + self.head.flops(h, w) + FlopTally::elementwise(h * w)
    }
}

impl DrsNet {
    fn full_res_channels(&self) -> usize {
        match self.config.encoder_mode {
            EncoderMode::Resnet18Bottleneck => BOTTLENECK_WIDTHS[0] * crate::blocks::BOTTLENECK_EXPANSION,
            _ => self.config.stem_channels,
        }
    }
}

fn build_encoder(init: &mut Init, cfg: &NetworkConfig) -> Result<(Vec<DynModule>, [Vec<DynModule>; 3])> {
    let mut full: Vec<DynModule> = Vec::new();
    let mut stages: [Vec<DynModule>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let stem_c = cfg.stem_channels;
    match cfg.encoder_mode {
        EncoderMode::MultiscaleSe => {
            let mut cin = stem_c;
            for (s, (&cout, &depth)) in cfg.channel_schedule.iter().zip(&cfg.stage_depths).enumerate() {
                for b in 0..depth {
                    let block = MultiScaleSeBlock::new(
                        init,
                        &format!("encoder.stage{}.block{b}", s + 1),
                        BlockConfig {
                            variant: cfg.variant,
                            in_channels: cin,
                            out_channels: cout,
                            se_reduction: cfg.se_reduction,
                        },
                    )?;
                    stages[s].push(Box::new(block));
                    cin = cout;
                }
            }
        }
        EncoderMode::Seresnet18 => {
            // Four layers of two SE basic blocks, widths matched to the
            // multi-scale encoder; the first layer runs at full resolution.
            let r = cfg.se_reduction;
            for b in 0..2 {
                full.push(Box::new(SeBasicBlock::new(init, &format!("encoder.layer1.block{b}"), stem_c, stem_c, r)?));
            }
            let mut cin = stem_c;
            for (s, &cout) in cfg.channel_schedule.iter().enumerate() {
                for b in 0..2 {
                    let name = format!("encoder.layer{}.block{b}", s + 2);
                    stages[s].push(Box::new(SeBasicBlock::new(init, &name, cin, cout, r)?));
                    cin = cout;
                }
            }
        }
        EncoderMode::Resnet18Bottleneck => {
            let mut cin = stem_c;
            for (s, &width) in BOTTLENECK_WIDTHS.iter().enumerate() {
                for b in 0..2 {
                    let unit = Bottleneck::new(init, &format!("encoder.layer{}.block{b}", s + 1), cin, width)?;
                    cin = unit.out_channels();
                    if s == 0 {
                        full.push(Box::new(unit));
                    } else {
                        stages[s - 1].push(Box::new(unit));
                    }
                }
            }
        }
    }
    Ok((full, stages))
}
