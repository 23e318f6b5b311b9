mod common;

use drsnet::blocks::*;
use drsnet::nn::{Init, Mode, Module};
use drsnet::profiler::count_params;
use drsnet_tensor::{counter, Tensor, Var};
use proptest::prelude::*;

fn input(c: usize, h: usize, w: usize, seed: u64) -> Var {
    Var::constant(common::random_tensor(&[1, c, h, w], seed))
}

fn block(variant: BlockVariant, cin: usize, cout: usize) -> MultiScaleSeBlock {
    let cfg = BlockConfig {
        variant,
        in_channels: cin,
        out_channels: cout,
        se_reduction: 4,
    };
    MultiScaleSeBlock::new(&mut Init::new(1), "b", cfg).unwrap()
}

#[test]
fn factorized_conv_preserves_size() {
    let conv = AsymConv::new(&mut Init::new(0), "a", ConvSpec::factorized(3, 8, 3, 2)).unwrap();
    let y = conv.forward(&input(3, 128, 192, 1), Mode::EVAL).unwrap();
    assert_eq!(y.shape(), &[1, 8, 128, 192]);
}

#[test]
fn factorized_conv_rejects_pointwise_kernel_and_bad_sizes() {
    let mut init = Init::new(0);
    assert!(AsymConv::new(&mut init, "a", ConvSpec::factorized(3, 8, 1, 1)).is_err());
    assert!(AsymConv::new(&mut init, "a", ConvSpec::factorized(3, 8, 7, 1)).is_err());
    assert!(AsymConv::new(&mut init, "a", ConvSpec::factorized(3, 8, 3, 0)).is_err());
}

#[test]
fn channel_mismatch_is_an_error() {
    let conv = AsymConv::new(&mut Init::new(0), "a", ConvSpec::factorized(3, 8, 3, 2)).unwrap();
    assert!(conv.forward(&input(4, 8, 8, 1), Mode::EVAL).is_err());
    assert!(block(BlockVariant::A, 24, 48).forward(&input(12, 8, 8, 1), Mode::EVAL).is_err());
}

#[test]
fn factorized_parameter_arithmetic() {
    for (cin, cout, n) in [(24, 48, 3), (48, 24, 5), (96, 96, 5), (12, 24, 3)] {
        let spec = ConvSpec {
            bias: true,
            ..ConvSpec::factorized(cin, cout, n, 2)
        };
        let conv = AsymConv::new(&mut Init::new(0), "a", spec).unwrap();
        let mid = cin.min(cout);
        assert_eq!(count_params(&conv), cin * mid * n + mid * cout * n + cout);
        assert!(count_params(&conv) < cin * cout * n * n + cout);
    }
}

#[test]
fn se_gate_scales_into_unit_interval() {
    let se = SeAttention::new(&mut Init::new(3), "se", 4, 4).unwrap();
    let x = Var::constant(Tensor::full([1, 4, 3, 3], 2.5));
    let y = se.forward(&x, Mode::EVAL).unwrap();
    assert_eq!(y.shape(), x.shape());
    for (o, i) in y.value().data().iter().zip(x.value().data()) {
        let s = o / i;
        assert!(s > 0.0 && s < 1.0);
    }
}

#[test]
fn se_rejects_indivisible_reduction() {
    assert!(SeAttention::new(&mut Init::new(0), "se", 6, 4).is_err());
}

#[test]
fn se_matches_hand_computation() {
    let se = SeAttention::new(&mut Init::new(0), "se", 4, 2).unwrap();
    let w1 = [0.5, -0.25, 0.1, 0.3, -0.2, 0.4, 0.6, -0.1];
    let b1 = [0.05, -0.02];
    let w2 = [0.7, -0.3, 0.2, 0.9, -0.5, 0.4, 0.1, 0.1];
    let b2 = [0.0, 0.1, -0.1, 0.2];
    se.squeeze.weight.set_value(Tensor::new([2, 4, 1, 1], w1.to_vec()).unwrap());
    se.squeeze.bias.as_ref().unwrap().set_value(Tensor::new([2], b1.to_vec()).unwrap());
    se.excite.weight.set_value(Tensor::new([4, 2, 1, 1], w2.to_vec()).unwrap());
    se.excite.bias.as_ref().unwrap().set_value(Tensor::new([4], b2.to_vec()).unwrap());
    let x: Vec<f64> = (0..16).map(|i| (i as f64 - 5.0) * 0.3).collect();
    let y = se.forward(&Var::constant(Tensor::new([1, 4, 2, 2], x.clone()).unwrap()), Mode::EVAL).unwrap();

    let pooled: Vec<f64> = (0..4).map(|c| x[c * 4..c * 4 + 4].iter().sum::<f64>() / 4.0).collect();
    let hidden: Vec<f64> = (0..2)
        .map(|j| (b1[j] + (0..4).map(|c| w1[j * 4 + c] * pooled[c]).sum::<f64>()).max(0.0))
        .collect();
    for c in 0..4 {
        let z = b2[c] + (0..2).map(|j| w2[c * 2 + j] * hidden[j]).sum::<f64>();
        let s = 1.0 / (1.0 + (-z).exp());
        for k in 0..4 {
            assert!((y.value().data()[c * 4 + k] - x[c * 4 + k] * s).abs() < 1e-12);
        }
    }
}

#[test]
fn multiscale_blocks_honour_shape_contract() {
    for v in [BlockVariant::A, BlockVariant::B, BlockVariant::C] {
        let b = block(v, 24, 48);
        let y = b.forward(&input(24, 32, 48, 2), Mode::TRAIN).unwrap();
        assert_eq!(y.shape(), &[1, 48, 32, 48], "variant {v}");
        let split = b.branch_channels();
        assert_eq!(split.iter().sum::<usize>(), 48);
        assert!(split.iter().all(|&c| c == 48 / v.branches()));
    }
    assert_eq!(block(BlockVariant::C, 24, 48).branch_channels(), vec![16, 16, 16]);
}

#[test]
fn block_config_divisibility() {
    let cfg = |variant, cin, cout, se_reduction| BlockConfig {
        variant,
        in_channels: cin,
        out_channels: cout,
        se_reduction,
    };
    assert!(cfg(BlockVariant::A, 24, 47, 1).validate().is_err());
    assert!(cfg(BlockVariant::C, 24, 50, 2).validate().is_err());
    assert!(cfg(BlockVariant::C, 25, 48, 4).validate().is_err());
    assert!(cfg(BlockVariant::B, 24, 48, 5).validate().is_err());
    assert!(cfg(BlockVariant::B, 24, 48, 4).validate().is_ok());
}

#[test]
fn variant_c_block_is_smallest() {
    for (cin, cout) in [(24, 48), (48, 96), (96, 192), (192, 192)] {
        let a = count_params(&block(BlockVariant::A, cin, cout));
        let b = count_params(&block(BlockVariant::B, cin, cout));
        let c = count_params(&block(BlockVariant::C, cin, cout));
        assert!(c < a && a <= b, "{cin}->{cout}: A={a} B={b} C={c}");
    }
}

#[test]
fn double_and_neck_conv_widths() {
    let mut init = Init::new(0);
    let dc = ConvPair::double_conv(&mut init, "dc", 3, 24).unwrap();
    assert_eq!((dc.mid_channels(), dc.out_channels()), (12, 24));
    let y = dc.forward(&input(3, 16, 16, 3), Mode::TRAIN).unwrap();
    assert_eq!(y.shape(), &[1, 24, 16, 16]);
    let nc = ConvPair::neck_conv(&mut init, "nc", 24, 24).unwrap();
    assert_eq!(nc.mid_channels(), 12);
    assert!(ConvPair::double_conv(&mut init, "x", 4, 7).is_err());
    assert!(ConvPair::neck_conv(&mut init, "x", 7, 4).is_err());
}

#[test]
fn double_and_neck_conv_coincide_when_widths_match() {
    let mut init = Init::new(0);
    let dc = ConvPair::double_conv(&mut init, "p", 24, 24).unwrap();
    let nc = ConvPair::neck_conv(&mut init, "p", 24, 24).unwrap();
    let shapes = |m: &ConvPair| m.params().iter().map(|p| (p.name().to_string(), p.shape())).collect::<Vec<_>>();
    assert_eq!(shapes(&dc), shapes(&nc));
}

#[test]
fn pointwise_conv_halves_channels() {
    let pw = pointwise_conv(&mut Init::new(0), "pw", 192, 96).unwrap();
    assert_eq!(count_params(&pw), 192 * 96 + 96);
    let y = pw.forward(&input(192, 4, 6, 1), Mode::EVAL).unwrap();
    assert_eq!(y.shape(), &[1, 96, 4, 6]);
}

#[test]
fn residual_blocks_keep_spatial_size() {
    let mut init = Init::new(0);
    let sb = SeBasicBlock::new(&mut init, "sb", 8, 16, 4).unwrap();
    assert_eq!(sb.forward(&input(8, 10, 12, 1), Mode::TRAIN).unwrap().shape(), &[1, 16, 10, 12]);
    let bt = Bottleneck::new(&mut init, "bt", 8, 4).unwrap();
    assert_eq!(bt.forward(&input(8, 10, 12, 1), Mode::TRAIN).unwrap().shape(), &[1, 16, 10, 12]);
}

#[test]
fn analytic_conv_cost_matches_execution() {
    let mut init = Init::new(0);
    let modules: Vec<Box<dyn Module>> = vec![
        Box::new(block(BlockVariant::A, 24, 48)),
        Box::new(block(BlockVariant::B, 24, 48)),
        Box::new(block(BlockVariant::C, 24, 48)),
        Box::new(ConvPair::double_conv(&mut init, "dc", 24, 48).unwrap()),
        Box::new(SeBasicBlock::new(&mut init, "sb", 24, 48, 4).unwrap()),
        Box::new(Bottleneck::new(&mut init, "bt", 24, 16).unwrap()),
    ];
    for m in &modules {
        counter::reset_conv_macs();
        m.forward(&input(24, 16, 20, 4), Mode::EVAL).unwrap();
        assert_eq!(counter::conv_macs(), m.flops(16, 20).conv_mult_adds);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn blocks_preserve_spatial_dims(h in 1usize..14, w in 1usize..14, vi in 0usize..3, seed in any::<u64>()) {
        let v = [BlockVariant::A, BlockVariant::B, BlockVariant::C][vi];
        let b = block(v, 12, 24);
        let y = b.forward(&input(12, h, w, seed), Mode::TRAIN).unwrap();
        prop_assert_eq!(y.shape(), &[1, 24, h, w]);
        let dc = ConvPair::double_conv(&mut Init::new(seed), "dc", 12, 8).unwrap();
        let z = dc.forward(&input(12, h, w, seed), Mode::EVAL).unwrap();
        prop_assert_eq!(z.shape(), &[1, 8, h, w]);
    }
}
