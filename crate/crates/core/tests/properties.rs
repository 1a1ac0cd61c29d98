mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mindts::alignment::loss_ma_value;
use mindts::condenser::{loss_cc_value, sample_mask, MaskMode};
use mindts::data::{make_windows, synth_multimodal, SeriesDataset, SynthConfig};
use mindts::exec::Execution;
use mindts::metrics::{evaluate, EvalOptions};
use mindts::model::{Gate, MindTs, StepOptions};
use mindts::recon::threshold_labels;
use mindts::tensor::{Graph, ParamStore, Tensor};
use mindts::text_branch::{gen_endotext, EndoTextOptions, Tokenizer};
use mindts::time_branch::{instance_norm, patchify, unpatch, TimeEncoder, TimeEncoderDims};

fn series(values: Vec<f64>) -> SeriesDataset {
    let ts = (0..values.len() as i64).map(|t| 1_000 + 60 * t).collect();
    SeriesDataset::new(values, 1, ts, None).unwrap()
}

fn opts() -> StepOptions {
    StepOptions {
        mask_ratio: 0.5,
        gate: Gate::Hard,
        mu: 0.5,
        rec_raw_sum: false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reuse_sums_branch_gradients(x in prop::collection::vec(-3.0f64..3.0, 1..12)) {
        // y = x·x + 3x, so dy/dx = 2x + 3.
        let mut g = Graph::new();
        let v = g.input(Tensor::col_vector(x.clone()));
        let sq = g.mul(v, v).unwrap();
        let lin = g.scale(v, 3.0).unwrap();
        let y = g.add(sq, lin).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        let got = grads.wrt(v).unwrap();
        for (gx, x) in got.iter().zip(&x) {
            prop_assert!((gx - (2.0 * x + 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn instance_norm_round_trips(
        w in prop::collection::vec(-1e3f64..1e3, 8..64),
        d in 1usize..3,
    ) {
        let n = w.len() / d * d;
        let (x, stats) = instance_norm(&w[..n], d);
        let back = stats.denormalize(&x);
        for (a, b) in back.iter().zip(&w[..n]) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn unpatch_inverts_non_overlapping_patches(
        p in 1usize..8,
        n in 1usize..10,
        d in 1usize..3,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::uniform(&[p * n * d], 5.0, &mut rng).into_data();
        let ps = patchify(&x, d, p, p).unwrap();
        prop_assert_eq!(unpatch(&ps), x);
    }

    #[test]
    fn windows_at_full_stride_reproduce_the_prefix(len in 10usize..200, w in 2usize..10) {
        let values: Vec<f64> = (0..len).map(|t| (t as f64 * 0.37).sin()).collect();
        let ds = series(values.clone());
        let joined: Vec<f64> = make_windows(&ds, w, w)
            .unwrap()
            .iter()
            .flat_map(|win| win.values(&ds).to_vec())
            .collect();
        prop_assert_eq!(&joined[..], &values[..joined.len()]);
        prop_assert!(values.len() - joined.len() < w);
    }

    #[test]
    fn alignment_loss_ignores_joint_permutation(
        n in 2usize..6,
        seed in any::<u64>(),
        rows in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = Tensor::uniform(&[n, n], 1.0, &mut rng);
        let perm: Vec<usize> = (0..n).map(|i| (i * 3 + 1) % n).collect();
        prop_assume!({ let mut p = perm.clone(); p.sort(); p.dedup(); p.len() == n });
        let mut kp = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                kp[i * n + j] = k.get(perm[i], perm[j]);
            }
        }
        let kp = Tensor::from_rows(n, n, kp).unwrap();
        let a = loss_ma_value(&k, 0.1, rows).unwrap();
        let b = loss_ma_value(&kp, 0.1, rows).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn retention_loss_is_convex_with_minimum_at_prior(mu in 0.05f64..0.95, psi in 0.02f64..0.98) {
        let h = 1e-3;
        let f = |p: f64| loss_cc_value(&[p], mu).unwrap();
        prop_assert!(f(psi + h) + f(psi - h) - 2.0 * f(psi) > 0.0);
        prop_assert!(f(psi) >= f(mu) - 1e-15);
    }

    #[test]
    fn kept_fraction_tracks_mean_retention(psi in prop::collection::vec(0.0f64..1.0, 1..20), seed in any::<u64>()) {
        let reps = 5000;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kept = 0.0;
        for _ in 0..reps {
            kept += sample_mask(&psi, &mut rng, MaskMode::Train).iter().sum::<f64>();
        }
        let mean: f64 = psi.iter().sum::<f64>() / psi.len() as f64;
        prop_assert!((kept / (reps * psi.len()) as f64 - mean).abs() < 0.01);
    }

    #[test]
    fn tokenizer_is_pure_and_bounded(text in "[a-z0-9.-]{1,12}( [a-z0-9 .:-]{0,60})?", size in 256usize..5000) {
        let tok = Tokenizer::new(size).unwrap();
        let a = tok.encode(&text).unwrap();
        prop_assert_eq!(&a, &tok.encode(&text).unwrap());
        prop_assert!(a.iter().all(|&id| (id as usize) < size));
    }

    #[test]
    fn endogenous_text_is_pure(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::uniform(&[24], 2.0, &mut rng).into_data();
        let ps = patchify(&x, 1, 6, 6).unwrap();
        let o = EndoTextOptions::default();
        prop_assert_eq!(gen_endotext(&ps, &o), gen_endotext(&ps, &o));
    }

    #[test]
    fn threshold_flags_ceil_of_ratio(scores in prop::collection::vec(0.0f64..1.0, 1..300), r in 0.01f64..0.99) {
        let labels = threshold_labels(&scores, r).unwrap();
        let want = (r * scores.len() as f64).ceil() as usize;
        prop_assert_eq!(labels.iter().filter(|&&l| l == 1).count(), want);
    }

    #[test]
    fn score_metrics_ignore_monotone_maps(seed in any::<u64>(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = Tensor::uniform(&[150], 1.0, &mut rng).into_data();
        let mut truth = vec![0u8; 150];
        truth[40..46].iter_mut().for_each(|v| *v = 1);
        truth[100] = 1;
        let o = EvalOptions::default();
        let base = evaluate(&scores, &truth, &o, Execution::Sequential).unwrap();
        for mapped in [
            scores.iter().map(|s| a * s + b).collect::<Vec<_>>(),
            scores.iter().map(|s| s.exp()).collect(),
        ] {
            let m = evaluate(&mapped, &truth, &o, Execution::Sequential).unwrap();
            for (x, y) in base.values().iter().zip(m.values()) {
                match (x, y) {
                    (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                    _ => prop_assert_eq!(x.is_some(), y.is_some()),
                }
            }
        }
        for v in base.values().iter().flatten() {
            prop_assert!((0.0..=1.0).contains(v));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn scores_ignore_affine_rescaling(a in 0.01f64..100.0, b in -1e3f64..1e3, seed in 0u64..1000) {
        let data = synth_multimodal(seed, &SynthConfig { n_points: 240, ..SynthConfig::default() }).unwrap();
        let model = MindTs::new(&common::suites::tiny_model_config(), 1, seed).unwrap();
        let scaled = data.series.map_values(|v| a * v + b);
        let s0 = model.score_series(&data.series, &data.docs, 4, &opts(), seed, Execution::Sequential).unwrap();
        let s1 = model.score_series(&scaled, &data.docs, 4, &opts(), seed, Execution::Sequential).unwrap();
        for (x, y) in s0.scores.iter().zip(&s1.scores) {
            prop_assert!((x - y).abs() <= 1e-9, "{} vs {}", x, y);
        }
        prop_assert!(s0.scores.iter().all(|s| *s >= 0.0));
        prop_assert!(s0.coverage.iter().all(|c| *c >= 1));
    }

    #[test]
    fn encoder_commutes_with_patch_order_without_positions(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let dims = TimeEncoderDims { patches: 4, patch_width: 3, d_model: 8, layers: 2, heads: 2, ff_hidden: 16 };
        let enc = TimeEncoder::new(&mut store, dims, &mut rng).unwrap();
        store.get_mut(enc.positions).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let x = Tensor::uniform(&[12], 1.0, &mut rng).into_data();
        let perm = [2usize, 0, 3, 1];
        let xp: Vec<f64> = perm.iter().flat_map(|&i| x[3 * i..3 * i + 3].to_vec()).collect();
        let run = |x: &[f64]| {
            let mut g = Graph::with_params(&store);
            let h = enc.forward(&mut g, &patchify(x, 1, 3, 3).unwrap()).unwrap();
            g.value(h).clone()
        };
        let (h, hp) = (run(&x), run(&xp));
        for (k, &i) in perm.iter().enumerate() {
            for (a, b) in hp.row(k).iter().zip(h.row(i)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn both_time_branches_read_one_parameter_set() {
    let cfg = common::suites::tiny_model_config();
    let model = MindTs::new(&cfg, 1, 3).unwrap();
    let mut fresh = ParamStore::new();
    let dims = TimeEncoderDims {
        patches: cfg.num_patches(),
        patch_width: cfg.patch,
        d_model: cfg.d_model,
        layers: cfg.layers,
        heads: cfg.heads,
        ff_hidden: cfg.d_model * cfg.ff_mult,
    };
    TimeEncoder::new(&mut fresh, dims, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let in_model = model.store.iter().filter(|(_, n, _)| n.starts_with("time.")).count();
    assert_eq!(in_model, fresh.len());
}

#[test]
fn repeated_forward_and_backward_are_bit_identical() {
    let data = synth_multimodal(2, &SynthConfig { n_points: 200, ..SynthConfig::default() }).unwrap();
    let model = MindTs::new(&common::suites::tiny_model_config(), 1, 2).unwrap();
    let w = &make_windows(&data.series, 24, 24).unwrap()[3];
    let prep = model.prepare(&data.series, w, &data.docs).unwrap();
    let pass = || {
        let mut g = Graph::with_params(&model.store);
        let mut rng = mindts::model::stream_rng(2, 0, 0);
        let f = model.forward(&mut g, &prep, &opts(), &mut rng).unwrap();
        let loss = g.value(f.total).item().to_bits();
        let grads = g.backward(f.total).unwrap().into_param_grads(&model.store);
        (loss, grads.concat().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(pass(), pass());
}
