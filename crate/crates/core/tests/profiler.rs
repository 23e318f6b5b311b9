use drsnet::blocks::{pointwise_conv, BlockVariant, ConvPair};
use drsnet::model::{AblationKind, DrsNet, NetworkConfig};
use drsnet::nn::{Init, Module};
use drsnet::profiler::*;

fn variant_a() -> DrsNet {
    DrsNet::new(NetworkConfig::new(BlockVariant::A), 0).unwrap()
}

#[test]
fn pointwise_head_parameter_count() {
    let conv = pointwise_conv(&mut Init::new(0), "head", 24, 1).unwrap();
    assert_eq!(count_params(&conv), 25);
}

#[test]
fn calibrated_convention_is_single_count() {
    assert_eq!(calibrated_convention(), FlopConvention::MultAddOne);
    assert_eq!(calibrated_convention().label(), "mult-add=1");
}

#[test]
fn conv_cost_scales_with_area() {
    let model = variant_a();
    let pair = ConvPair::double_conv(&mut Init::new(0), "dc", 24, 48).unwrap();
    assert_eq!(pair.flops(256, 384).conv_mult_adds, 4 * pair.flops(128, 192).conv_mult_adds);
    // Whole model: spatial convolutions scale with area, the SE gate layers
    // run on pooled vectors and do not, so the count is affine in area.
    let macs = |w, h| count_flops(&model, w, h).unwrap().conv_mult_adds;
    let (f1, f2, f3) = (macs(192, 128), macs(384, 256), macs(768, 512));
    assert_eq!(f3 - f2, 4 * (f2 - f1));
    let mut prev = 0;
    for (w, h) in [(64, 32), (64, 48), (96, 64), (192, 128), (384, 256)] {
        let total = count_flops(&model, w, h).unwrap().total(1);
        assert!(total > prev);
        prev = total;
    }
    assert!(count_flops(&model, 100, 100).is_err());
}

#[test]
fn flops_ordering_across_encoders() {
    let a = profile("A", &variant_a(), 192, 128, None).unwrap();
    let se = DrsNet::new(NetworkConfig::ablation(AblationKind::Seresnet18Encoder), 0).unwrap();
    let bot = DrsNet::new(NetworkConfig::ablation(AblationKind::Resnet18Bottleneck), 0).unwrap();
    let se = profile("se", &se, 192, 128, None).unwrap();
    let bot = profile("bot", &bot, 192, 128, None).unwrap();
    assert!(a.flops < se.flops && se.flops < bot.flops);
}

#[test]
fn report_fields_are_consistent() {
    let model = variant_a();
    let r = profile("DRSNet(A)", &model, 64, 64, Some((1, 10))).unwrap();
    assert_eq!(r.params, count_params(&model));
    assert_eq!(r.flops, r.conv_mult_adds + r.elementwise_ops);
    assert!((r.gflops - r.flops as f64 / 1e9).abs() < 1e-15);
    let (mean, fps) = (r.mean_ms.unwrap(), r.fps.unwrap());
    assert!((fps - 1000.0 / mean).abs() < 1e-9);
    assert!(r.std_ms.unwrap() >= 0.0);
    assert!(r.hardware.is_some());
    let json = serde_json::to_value(&r).unwrap();
    assert_eq!(json["flop_convention"], "mult-add=1");
    // Parameters do not depend on the input size.
    assert_eq!(profile("A", &model, 384, 256, None).unwrap().params, r.params);
}

#[test]
fn timing_needs_ten_runs() {
    assert!(time_inference(&variant_a(), 32, 32, 0, 9).is_err());
}

#[test]
fn executed_conv_work_matches_analytic_count() {
    for (name, cfg) in model_zoo() {
        let model = DrsNet::new(cfg, 0).unwrap();
        let analytic = count_flops(&model, 64, 32).unwrap().conv_mult_adds;
        assert_eq!(measured_conv_mult_adds(&model, 64, 32).unwrap(), analytic, "{name}");
        assert_eq!(model.flops(32, 64).conv_mult_adds, analytic);
    }
}

#[test]
fn table_covers_every_model_and_size() {
    let rows = profile_table(&[(64, 32), (128, 64)], None).unwrap();
    assert_eq!(rows.len(), 12);
    assert_eq!(rows[0].model, "DRSNet(A)");
}
