//! Parameter counts, analytic operation counts and inference timing.

use std::sync::OnceLock;
use std::time::Instant;

use drsnet_tensor::{counter, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::blocks::BlockVariant;
use crate::error::{Error, Result};
use crate::model::{check_input_size, AblationKind, DrsNet, NetworkConfig};
use crate::nn::{FlopTally, Mode, Module};

/// Operations counted per multiply-accumulate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlopConvention {
    #[serde(rename = "mult-add=1")]
    MultAddOne,
    #[serde(rename = "mult-add=2")]
    MultAddTwo,
}

impl FlopConvention {
    pub fn ops_per_mult_add(self) -> u64 {
        match self {
            FlopConvention::MultAddOne => 1,
            FlopConvention::MultAddTwo => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FlopConvention::MultAddOne => "mult-add=1",
            FlopConvention::MultAddTwo => "mult-add=2",
        }
    }
}

/// Published budget of variant A at 192x128 (GFLOPs) that fixes the
/// convention.
pub const CALIBRATION_GFLOPS: f64 = 0.20;
pub const CALIBRATION_SIZE: (usize, usize) = (192, 128);

/// Picks the convention under which variant A at 192x128 lands nearest
/// [`CALIBRATION_GFLOPS`]. Computed once per process.
pub fn calibrated_convention() -> FlopConvention {
    static CONVENTION: OnceLock<FlopConvention> = OnceLock::new();
    *CONVENTION.get_or_init(|| {
        let model = DrsNet::new(NetworkConfig::new(BlockVariant::A), 0).expect("default config is valid");
        let (w, h) = CALIBRATION_SIZE;
        let tally = model.flops(h, w);
        [FlopConvention::MultAddOne, FlopConvention::MultAddTwo]
            .into_iter()
            .min_by(|a, b| {
                let da = (tally.total(a.ops_per_mult_add()) as f64 / 1e9 - CALIBRATION_GFLOPS).abs();
                let db = (tally.total(b.ops_per_mult_add()) as f64 / 1e9 - CALIBRATION_GFLOPS).abs();
                da.total_cmp(&db)
            })
            .expect("two candidates")
    })
}

/// Trainable scalar parameters.
pub fn count_params(module: &dyn Module) -> usize {
    module.num_params()
}

/// Analytic operation count for one `width x height` image.
pub fn count_flops(model: &DrsNet, width: usize, height: usize) -> Result<FlopTally> {
    check_input_size(width, height)?;
    Ok(model.flops(height, width))
}

/// Multiply-accumulates actually executed by the convolution kernels in one
/// inference pass, for cross-checking [`count_flops`].
pub fn measured_conv_mult_adds(model: &DrsNet, width: usize, height: usize) -> Result<u64> {
    let x = Var::constant(Tensor::zeros([1, 3, height, width]));
    counter::reset_conv_macs();
    model.segment(&x, Mode::EVAL)?;
    Ok(counter::conv_macs())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub runs: usize,
}

impl Timing {
    pub fn fps(&self) -> f64 {
        1000.0 / self.mean_ms
    }
}

/// Wall-clock time of single-image inference after `n_warmup` discarded runs.
pub fn time_inference(model: &DrsNet, width: usize, height: usize, n_warmup: usize, n_runs: usize) -> Result<Timing> {
    if n_runs < 10 {
        return Err(Error::Config(format!("timing needs at least 10 runs, got {n_runs}")));
    }
    check_input_size(width, height)?;
    let x = Var::constant(Tensor::full([1, 3, height, width], 0.5));
    for _ in 0..n_warmup {
        model.segment(&x, Mode::EVAL)?;
    }
    let mut samples = Vec::with_capacity(n_runs);
    for _ in 0..n_runs {
        let t = Instant::now();
        model.segment(&x, Mode::EVAL)?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean = samples.iter().sum::<f64>() / n_runs as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n_runs - 1) as f64;
    Ok(Timing {
        mean_ms: mean,
        std_ms: var.sqrt(),
        runs: n_runs,
    })
}

/// CPU model and logical core count, best effort.
pub fn hardware_id() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{cpu} ({cores} threads, f64 CPU backend)")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub model: String,
    pub params: usize,
    pub input_size: (usize, usize),
    pub flops: u64,
    pub gflops: f64,
    pub flop_convention: FlopConvention,
    pub conv_mult_adds: u64,
    pub elementwise_ops: u64,
    pub mean_ms: Option<f64>,
    pub std_ms: Option<f64>,
    pub fps: Option<f64>,
    pub hardware: Option<String>,
}

/// Builds a report; `timing` is `(n_warmup, n_runs)` when wall-clock numbers
/// are wanted.
pub fn profile(name: &str, model: &DrsNet, width: usize, height: usize, timing: Option<(usize, usize)>) -> Result<ProfileReport> {
    let tally = count_flops(model, width, height)?;
    let convention = calibrated_convention();
    let flops = tally.total(convention.ops_per_mult_add());
    let t = timing
        .map(|(warm, runs)| time_inference(model, width, height, warm, runs))
        .transpose()?;
    Ok(ProfileReport {
        model: name.to_string(),
        params: count_params(model),
        input_size: (width, height),
        flops,
        gflops: flops as f64 / 1e9,
        flop_convention: convention,
        conv_mult_adds: tally.conv_mult_adds,
        elementwise_ops: tally.elementwise,
        mean_ms: t.map(|t| t.mean_ms),
        std_ms: t.map(|t| t.std_ms),
        fps: t.map(|t| t.fps()),
        hardware: t.map(|_| hardware_id()),
    })
}

/// Every built model: the three variants followed by the ablations.
pub fn model_zoo() -> Vec<(String, NetworkConfig)> {
    let mut out: Vec<(String, NetworkConfig)> = [BlockVariant::A, BlockVariant::B, BlockVariant::C]
        .into_iter()
        .map(|v| (format!("DRSNet({v})"), NetworkConfig::new(v)))
        .collect();
    out.extend(AblationKind::ALL.into_iter().map(|k| (k.name().to_string(), NetworkConfig::ablation(k))));
    out
}

/// Reports for every model of [`model_zoo`] at every size.
pub fn profile_table(sizes: &[(usize, usize)], timing: Option<(usize, usize)>) -> Result<Vec<ProfileReport>> {
    let mut rows = Vec::new();
    for (name, cfg) in model_zoo() {
        let model = DrsNet::new(cfg, 0)?;
        for &(w, h) in sizes {
            rows.push(profile(&name, &model, w, h, timing)?);
        }
    }
    Ok(rows)
}
