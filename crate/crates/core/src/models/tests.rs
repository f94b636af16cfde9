use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Tape, Tensor};
use crate::nn::init::normal_tensor;
use crate::nn::{ConvLayer, GruLayer, Mode, NormKind};

fn small(skip: SkipKind, recurrence: Recurrence, norm: NormKind) -> ModelConfig {
    let mut cfg = ModelConfig::with_channels(6, 2, [8, 6, 4]);
    cfg.skip_kind = skip;
    cfg.recurrence = recurrence;
    cfg.norm = norm;
    cfg
}

fn random_input(shape: [usize; 3], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    normal_tensor(&shape, 1.0, &mut rng).map(|v: f64| v.abs())
}

fn variants() -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for skip in SkipKind::ALL {
        for norm in [NormKind::WeightNorm, NormKind::BatchNorm] {
            for rec in [Recurrence::Skips, Recurrence::AfterTconv4] {
                out.push(small(skip, rec, norm));
            }
        }
    }
    out
}

/// Parameter count from layer arithmetic alone.
fn expected_params(cfg: &ModelConfig) -> usize {
    // Bias plus scale under weight norm; shift and scale replace the bias
    // under batch norm.
    let norm_extra = |out: usize, bn_allowed: bool| match cfg.norm {
        NormKind::WeightNorm => 2 * out,
        NormKind::BatchNorm if bn_allowed => 2 * out,
        _ => out,
    };
    let mut total = 0;
    let mut c = cfg.input_channels();
    for s in &cfg.encoder {
        total += s.out_channels * c * s.kernel + norm_extra(s.out_channels, true);
        c = s.out_channels;
    }
    for (j, s) in cfg.decoder.iter().enumerate() {
        total += s.out_channels * c * s.kernel + norm_extra(s.out_channels, j < 2);
        c = s.out_channels;
    }
    if cfg.recurrence == Recurrence::AfterTconv4 {
        let h = cfg.decoder[0].out_channels;
        total += 3 * h * (h + h + 1);
    }
    for (from, to) in [
        (cfg.encoder[0].out_channels, cfg.decoder[1].out_channels),
        (cfg.encoder[1].out_channels, cfg.decoder[0].out_channels),
    ] {
        total += match cfg.skip_kind {
            SkipKind::None | SkipKind::Identity => 0,
            SkipKind::Conv => to * from + norm_extra(to, false),
            SkipKind::Gru => 3 * to * (from + to + 1),
        };
    }
    total
}

#[test]
fn parameter_count_matches_layer_arithmetic() {
    for cfg in variants() {
        let model = Separator::<f64>::new(cfg.clone(), 0).unwrap();
        assert_eq!(model.num_params(), expected_params(&cfg), "{cfg:?}");
    }
    let cfg = ModelConfig::default();
    let model = Separator::<f32>::new(cfg.clone(), 0).unwrap();
    assert_eq!(model.num_params(), expected_params(&cfg));
}

#[test]
fn parameter_count_ordering_across_skip_kinds() {
    let count = |skip| Separator::<f64>::new(small(skip, Recurrence::Skips, NormKind::WeightNorm), 0)
        .unwrap()
        .num_params();
    let none = count(SkipKind::None);
    assert_eq!(count(SkipKind::Identity), none);
    assert!(count(SkipKind::Conv) > none);
    assert!(count(SkipKind::Gru) > count(SkipKind::Conv));
    // The closed forms of the two projections agree with the layer helpers.
    let (a, b) = ((8usize, 8usize), (6usize, 6usize));
    assert_eq!(
        count(SkipKind::Conv) - none,
        ConvLayer::<f64>::num_params(a.0, a.1, 1, NormKind::WeightNorm)
            + ConvLayer::<f64>::num_params(b.0, b.1, 1, NormKind::WeightNorm)
    );
    assert_eq!(
        count(SkipKind::Gru) - none,
        GruLayer::num_params(a.0, a.1) + GruLayer::num_params(b.0, b.1)
    );
}

#[test]
fn every_variant_has_the_same_output_shape() {
    let x = random_input([2, 6, 13], 1);
    for cfg in variants() {
        let model = Separator::<f64>::new(cfg.clone(), 3).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let y = model.forward(&mut tape, v, Mode::Train).unwrap();
        assert_eq!(tape.shape(y), &[2, 12, 13], "{cfg:?}");
    }
}

#[test]
fn odd_and_tiny_lengths_are_preserved() {
    let model = Separator::<f64>::new(small(SkipKind::Gru, Recurrence::Skips, NormKind::WeightNorm), 0).unwrap();
    for t in [1, 2, 3, 5, 7, 8, 9, 31] {
        let y = model.separate(&random_input([1, 6, t], t as u64).reshape([6, t]).unwrap()).unwrap();
        assert_eq!(y.shape(), &[2, 6, t]);
    }
}

#[test]
fn full_size_shape_contract() {
    let model = Separator::<f32>::new(ModelConfig::default(), 0).unwrap();
    let x = Tensor::<f32>::from_fn([1025, 64], |i| ((i % 17) as f32) * 0.1);
    let y = model.separate(&x).unwrap();
    assert_eq!(y.shape(), &[4, 1025, 64]);
    assert!(y.all_finite());
}

#[test]
fn zero_input_gives_finite_output() {
    for cfg in variants() {
        let model = Separator::<f64>::new(cfg, 0).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 6, 10]));
        let y = model.forward(&mut tape, x, Mode::Train).unwrap();
        assert!(tape.value(y).all_finite());
    }
}

#[test]
fn eval_mode_is_deterministic() {
    let model = Separator::<f64>::new(small(SkipKind::Gru, Recurrence::Skips, NormKind::WeightNorm), 5).unwrap();
    let x = random_input([1, 6, 20], 2).reshape([6, 20]).unwrap();
    let a = model.separate(&x).unwrap();
    let b = model.separate(&x).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn same_seed_same_weights() {
    let cfg = small(SkipKind::Conv, Recurrence::AfterTconv4, NormKind::BatchNorm);
    let a = Separator::<f32>::new(cfg.clone(), 9).unwrap();
    let b = Separator::<f32>::new(cfg.clone(), 9).unwrap();
    let c = Separator::<f32>::new(cfg, 10).unwrap();
    assert_eq!(a.store().checksum(), b.store().checksum());
    assert_ne!(a.store().checksum(), c.store().checksum());
}

#[test]
fn wrong_bins_rejected() {
    let model = Separator::<f64>::new(small(SkipKind::None, Recurrence::Skips, NormKind::WeightNorm), 0).unwrap();
    let err = model.separate(&Tensor::zeros([5, 10])).unwrap_err();
    assert!(matches!(err, ModelError::WrongInput { expected: 6, .. }));
}

#[test]
fn inconsistent_configs_name_the_layer() {
    let mut cfg = small(SkipKind::Identity, Recurrence::Skips, NormKind::WeightNorm);
    cfg.decoder[0].out_channels = 5;
    let msg = Separator::<f64>::new(cfg, 0).unwrap_err().to_string();
    assert!(msg.contains("skip.2"), "{msg}");

    let mut cfg = small(SkipKind::Gru, Recurrence::Skips, NormKind::WeightNorm);
    cfg.decoder[2].out_channels = 11;
    assert!(Separator::<f64>::new(cfg, 0).unwrap_err().to_string().contains("dec.2"));

    let mut cfg = small(SkipKind::Gru, Recurrence::Skips, NormKind::WeightNorm);
    cfg.decoder[1].stride = 3;
    assert!(Separator::<f64>::new(cfg, 0).unwrap_err().to_string().contains("dec.1"));

    let mut cfg = small(SkipKind::Gru, Recurrence::Skips, NormKind::WeightNorm);
    cfg.encoder.pop();
    assert!(Separator::<f64>::new(cfg, 0).is_err());

    let cfg = small(SkipKind::Gru, Recurrence::None, NormKind::WeightNorm);
    assert!(Separator::<f64>::new(cfg, 0).is_err());

    let mut cfg = small(SkipKind::Gru, Recurrence::Skips, NormKind::WeightNorm);
    cfg.residual = Some(ResidualConfig { iterations: 0 });
    assert!(Separator::<f64>::new(cfg, 0).is_err());
}

#[test]
fn gradient_reaches_every_parameter() {
    let x = random_input([2, 6, 12], 4);
    for cfg in variants() {
        let model = Separator::<f64>::new(cfg.clone(), 11).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let y = model.forward(&mut tape, v, Mode::Train).unwrap();
        let sq = tape.square(y);
        let loss = tape.mean_all(sq);
        let grads = tape.backward(loss).unwrap();
        for id in model.store().ids() {
            let name = &model.store().get(id).name;
            let g = grads.param(model.store().key(id)).unwrap_or_else(|| panic!("{name} has no gradient"));
            assert!(g.iter().any(|&v| v != 0.0), "{name} gradient is all zero in {cfg:?}");
        }
    }
}

#[test]
fn norm_swap_changes_only_norm_parameters() {
    let names = |norm| {
        let m = Separator::<f64>::new(small(SkipKind::Gru, Recurrence::Skips, norm), 0).unwrap();
        m.store()
            .iter()
            .map(|p| (p.name.clone(), p.tensor.shape().to_vec()))
            .collect::<Vec<_>>()
    };
    // Conv biases of the pyramid are folded into the batch-norm shift.
    let is_norm = |n: &str| {
        n.ends_with(".weight_g") || n.contains(".bn.") || (n.ends_with(".bias") && n.starts_with("enc."))
            || matches!(n, "dec.0.bias" | "dec.1.bias")
    };
    let strip = |n: &str| n.replace(".weight_v", ".weight");
    let wn: Vec<_> = names(NormKind::WeightNorm)
        .into_iter()
        .filter(|(n, _)| !is_norm(n))
        .map(|(n, s)| (strip(&n), s))
        .collect();
    let bn: Vec<_> = names(NormKind::BatchNorm)
        .into_iter()
        .filter(|(n, _)| !is_norm(n))
        .map(|(n, s)| (strip(&n), s))
        .collect();
    assert_eq!(wn, bn);
}

#[test]
fn batch_norm_variant_needs_statistics_before_eval() {
    let model = Separator::<f64>::new(small(SkipKind::Conv, Recurrence::Skips, NormKind::BatchNorm), 0).unwrap();
    let x = random_input([1, 6, 8], 0);
    assert!(model.infer(&x).is_err());
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    model.forward(&mut tape, v, Mode::Train).unwrap();
    assert!(model.infer(&x).unwrap().all_finite());
    assert_eq!(model.batch_norms().len(), 5);
}

#[test]
fn inference_tape_records_no_gradients() {
    let model = Separator::<f64>::new(small(SkipKind::Gru, Recurrence::Skips, NormKind::WeightNorm), 0).unwrap();
    let mut tape = Tape::inference();
    let x = tape.constant(random_input([1, 6, 8], 0));
    let y = model.forward(&mut tape, x, Mode::Eval).unwrap();
    assert!(!tape.requires_grad(y));
}

fn residual_model(iterations: usize) -> Separator<f64> {
    let mut cfg = small(SkipKind::Gru, Recurrence::Skips, NormKind::WeightNorm);
    cfg.residual = Some(ResidualConfig { iterations });
    Separator::new(cfg, 21).unwrap()
}

#[test]
fn residual_input_is_doubled_by_concatenation() {
    let model = residual_model(3);
    assert_eq!(model.config().input_channels(), 6 + 2 * 6);
    assert_eq!(model.store().tensor(model.store().find("enc.0.weight_v").unwrap()).shape(), &[8, 18, 5]);
}

#[test]
fn residual_single_iteration_is_the_base_case() {
    let model = residual_model(1);
    let x = random_input([1, 6, 10], 8);
    let mut tape = Tape::new();
    let mix = tape.constant(x.clone());
    let p = model.predict(&mut tape, mix, Mode::Train).unwrap();
    assert_eq!(p.totals.len(), 1);
    let zeros = tape.constant(Tensor::zeros([1, 12, 10]));
    let input = tape.concat(&[mix, zeros], 1).unwrap();
    let direct = model.forward(&mut tape, input, Mode::Train).unwrap();
    let direct = tape.quantize(direct, residual_grid::<f64>());
    assert_eq!(tape.value(p.output()).data(), tape.value(direct).data());
}

#[test]
fn residual_totals_telescope() {
    let model = residual_model(3);
    let x = random_input([2, 6, 9], 9);
    let mut tape = Tape::new();
    let mix = tape.constant(x);
    let p = model.predict(&mut tape, mix, Mode::Train).unwrap();
    assert_eq!(p.totals.len(), 3);
    let zeros = vec![0.0; tape.value(p.totals[0]).len()];
    let mut running = zeros.clone();
    for i in 0..3 {
        let prev = if i == 0 { &zeros } else { tape.value(p.totals[i - 1]).data() };
        let r = tape.value(p.residuals[i]).data();
        let total = tape.value(p.totals[i]).data();
        for k in 0..total.len() {
            assert_eq!(total[k].to_bits(), (prev[k] + r[k]).to_bits());
            assert_eq!((total[k] - prev[k]).to_bits(), r[k].to_bits());
            running[k] += r[k];
        }
    }
    let last = tape.value(p.output()).data();
    assert!(last.iter().zip(&running).all(|(a, b)| a.to_bits() == b.to_bits()));
    // Later iterations see the earlier totals.
    assert_ne!(tape.value(p.residuals[0]).data(), tape.value(p.residuals[1]).data());
}

#[test]
fn enhancers_map_each_source_block() {
    let cfg = small(SkipKind::Gru, Recurrence::Skips, NormKind::WeightNorm);
    let set = EnhancerSet::<f64>::new(&cfg, 4).unwrap();
    assert_eq!(set.len(), 2);
    let ecfg = set.models()[0].config();
    assert_eq!((ecfg.input_channels(), ecfg.output_channels()), (6, 6));
    assert_eq!(ecfg.skip_kind, SkipKind::Conv);
    assert!(set.models()[0].store().find("skip.1.weight_v").is_some());
    assert_ne!(set.models()[0].store().checksum(), set.models()[1].store().checksum());
    let y = set.infer(&random_input([1, 12, 10], 2)).unwrap();
    assert_eq!(y.shape(), &[1, 12, 10]);
}

#[test]
fn config_text_round_trip() {
    let mut cfg = small(SkipKind::Identity, Recurrence::AfterTconv4, NormKind::BatchNorm);
    cfg.residual = Some(ResidualConfig { iterations: 3 });
    cfg.leaky_slope = 0.02;
    let mut back = ModelConfig::default();
    for (k, v) in cfg.entries() {
        back.set(k, &v).unwrap();
    }
    assert_eq!(back, cfg);
    assert!(back.set("skip_kind", "lstm").is_err());
    assert!(back.set("encoder", "1:2").is_err());
    assert!(back.set("colour", "red").is_err());
    back.set("channels", "16,8,4").unwrap();
    assert_eq!(format_specs(&back.encoder), "16:5:2,8:5:2,4:3:2");
    assert_eq!(back.decoder[2].out_channels, 12);
}

#[test]
fn composite_gradient_check() {
    // Kink exclusion is only needed at this step size; a smaller one
    // checks every coordinate.
    let cfg = ModelConfig::with_channels(4, 2, [8, 6, 4]);
    let target = random_input([2, 8, 16], 30);
    let x = random_input([2, 4, 16], 31);
    let mut model = Separator::<f64>::new(cfg, 40).unwrap();
    let report = gradient_check_model(
        &mut model,
        |m, tape| {
            let xv = tape.constant(x.clone());
            let tv = tape.constant(target.clone());
            let y = m.predict(tape, xv, Mode::Train)?.output();
            let d = tape.sub(y, tv)?;
            let sq = tape.square(d);
            Ok(tape.mean_all(sq))
        },
        1e-7,
        Some(4),
        None,
    )
    .unwrap();
    assert!(report.relative_error() < 1e-6, "{report:?}");

    // Mean squared error of the full network against a fixed target.
    let mut cfg = ModelConfig::with_channels(4, 2, [8, 6, 4]);
    let target = random_input([2, 8, 16], 30);
    let x = random_input([2, 4, 16], 31);
    for skip in SkipKind::ALL {
        for norm in [NormKind::WeightNorm, NormKind::BatchNorm] {
            cfg.skip_kind = skip;
            cfg.norm = norm;
            let mut model = Separator::<f64>::new(cfg.clone(), 40).unwrap();
            let report = gradient_check_model(
                &mut model,
                |m, tape| {
                    let xv = tape.constant(x.clone());
                    let tv = tape.constant(target.clone());
                    let y = m.predict(tape, xv, Mode::Train)?.output();
                    let d = tape.sub(y, tv)?;
                    let sq = tape.square(d);
                    Ok(tape.mean_all(sq))
                },
                1e-5,
                Some(6),
                Some(1e-5),
            )
            .unwrap();
            assert!(report.relative_error() < 1e-4, "{skip:?} {norm:?}: {report:?}");
            assert!(report.kinks * 10 < report.checked, "{report:?}");
        }
    }
}
