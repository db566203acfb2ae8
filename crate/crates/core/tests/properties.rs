mod common;

use std::collections::BTreeSet;

use common::{random_model, rel_err, rng, strongest, uniform};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use relprop::fv::sift::LocalDescriptor;
use relprop::fv::{encode_fv, fv_index, gmm_posterior, FvModel, GmmModel, LinearClassifier, Moment, PcaModel, SiftConfig};
use relprop::fv_lrp::{explain_descriptors, redistribute_bins, redistribute_uniform, Mode, PixelRelevance};
use relprop::heatmap::{render, ColorMap};
use relprop::image::{decode_ppm, encode_ppm, RgbImage};
use relprop::lrp::{
    layer_contributions, propagate_alphabeta, propagate_basic, propagate_epsilon, Contributions,
};
use relprop::{explain_nn, CutoffConfig, Layer, Model, Rule, Tensor};

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| r.random_range(lo..hi)).collect()).collect()
}

fn random_gmm(r: &mut ChaCha8Rng, k: usize, d: usize) -> GmmModel {
    let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    GmmModel::new(
        raw.iter().map(|p| p / total).collect(),
        random_matrix(r, k, d, -1.0, 1.0),
        random_matrix(r, k, d, 0.3, 2.0),
    )
    .unwrap()
}

fn toy_fv(r: &mut ChaCha8Rng, n_desc: usize) -> (FvModel, Vec<LocalDescriptor>) {
    let (k, d) = (2, 4);
    let pca = PcaModel::new((0..128).map(|_| r.random_range(0.0..0.2)).collect(), random_matrix(r, d, 128, -0.2, 0.2))
        .unwrap();
    let g = GmmModel::new(vec![0.4, 0.6], random_matrix(r, k, d, -0.3, 0.3), random_matrix(r, k, d, 0.2, 0.6)).unwrap();
    let clf = LinearClassifier::new(random_matrix(r, 2, 2 * k * d, -1.0, 1.0), vec![0.3, -0.2]).unwrap();
    let model =
        FvModel::new(SiftConfig { sizes: vec![8, 16], stride: 8 }, pca, g, true, clf, vec!["a".into(), "b".into()])
            .unwrap();
    let descs = (0..n_desc)
        .map(|_| {
            let size = if r.random_bool(0.5) { 8 } else { 16 };
            let (x, y) = (4 * r.random_range(0..=(32 - size) / 4), 4 * r.random_range(0..=(32 - size) / 4));
            LocalDescriptor::new((0..128).map(|_| r.random_range(0.0..1.0)).collect(), x, y, size).unwrap()
        })
        .collect();
    (model, descs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_is_deterministic_and_trace_is_faithful(seed in any::<u64>()) {
        let mut r = rng(seed);
        let model = random_model(&mut r, 3);
        let x = uniform(&mut r, model.input_shape(), -1.0, 1.0);
        let (a, trace) = model.forward(&x).unwrap();
        let (b, _) = model.forward(&x).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        for (layer, step) in model.layers().iter().zip(&trace.layers) {
            prop_assert_eq!(&layer.apply(&step.input).unwrap(), &step.output);
        }
    }

    #[test]
    fn pooling_fields_partition_input(c in 1usize..3, blocks in 1usize..5, window in 1usize..4) {
        let side = blocks * window;
        let fields = Layer::sum_pool(window, window).unwrap().receptive_fields(&[c, side, side]).unwrap();
        let mut seen = vec![0usize; c * side * side];
        for f in &fields {
            for &(i, _) in f {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&n| n == 1));
    }

    #[test]
    fn basic_rule_conserves_at_every_layer(seed in any::<u64>()) {
        let mut r = rng(seed);
        let model = random_model(&mut r, 3);
        let x = uniform(&mut r, model.input_shape(), -1.0, 1.0);
        let (scores, trace) = model.forward(&x).unwrap();
        let class = strongest(&scores);
        prop_assume!(scores.data()[class].abs() > 1e-3);
        let rel = explain_nn(&model, &trace, class, Rule::Basic, CutoffConfig::none()).unwrap();
        let sums = rel.layer_sums();
        for w in sums.windows(2) {
            prop_assert!(rel_err(w[0], w[1]) <= 1e-9, "layer sums {:?}", sums);
        }
    }

    #[test]
    fn epsilon_absorption_grows_with_epsilon(seed in any::<u64>()) {
        let mut r = rng(seed);
        let c = Contributions::from_matrix(&random_matrix(&mut r, 6, 4, 0.01, 1.0)).unwrap();
        let totals = c.totals(None);
        let upper: Vec<f64> = (0..4).map(|_| r.random_range(0.0..1.0)).collect();
        let top: f64 = upper.iter().sum();
        let mut last = 0.0;
        for eps in [0.0, 0.01, 0.1, 1.0, 10.0, 100.0] {
            let lost = (propagate_epsilon(&c, &totals, &upper, eps).unwrap().iter().sum::<f64>() - top).abs();
            if eps == 0.0 {
                prop_assert!(lost <= 1e-12 * top.max(1.0));
            }
            prop_assert!(lost >= last - 1e-12);
            last = lost;
        }
    }

    #[test]
    fn alphabeta_conserves_with_mixed_signs(seed in any::<u64>(), alpha in 1.0f64..4.0) {
        let mut r = rng(seed);
        let mut z = random_matrix(&mut r, 5, 3, -1.0, 1.0);
        for j in 0..3 {
            z[0][j] = r.random_range(0.1..1.0);
            z[1][j] = -r.random_range(0.1..1.0);
        }
        let c = Contributions::from_matrix(&z).unwrap();
        let (pos, neg) = c.signed_totals(None);
        let upper: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let lower = propagate_alphabeta(&c, &pos, &neg, &upper, alpha, alpha - 1.0).unwrap();
        prop_assert!(rel_err(lower.iter().sum(), upper.iter().sum()) <= 1e-9);
    }

    #[test]
    fn flat_equals_basic_then_average_for_sum_pooling(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (c, k) = (r.random_range(1..=2), r.random_range(2..=3));
        let side = 2 * k;
        let n = c * 4;
        let model = Model::new(
            vec![c, side, side],
            vec![
                Layer::sum_pool(k, k).unwrap(),
                Layer::dense(uniform(&mut r, &[n, 2], -1.0, 1.0), Tensor::zeros(vec![2]).unwrap()).unwrap(),
            ],
        )
        .unwrap();
        let x = uniform(&mut r, &[c, side, side], 0.1, 1.0);
        let (scores, trace) = model.forward(&x).unwrap();
        let class = strongest(&scores);
        let flat = explain_nn(&model, &trace, class, Rule::Basic, CutoffConfig::at(0)).unwrap();
        let basic = explain_nn(&model, &trace, class, Rule::Basic, CutoffConfig::none()).unwrap();
        let fields = model.layers()[0].receptive_fields(&[c, side, side]).unwrap();
        for f in fields {
            let mean = f.iter().map(|&(i, _)| basic.input_relevance().data()[i]).sum::<f64>() / f.len() as f64;
            for (i, _) in f {
                prop_assert!((flat.input_relevance().data()[i] - mean).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn basic_rule_is_scale_equivariant(seed in any::<u64>(), exp in -8i32..8) {
        let mut r = rng(seed);
        let c = Contributions::from_matrix(&random_matrix(&mut r, 5, 4, -1.0, 1.0)).unwrap();
        let totals = c.totals(None);
        let upper: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        let scale = 2f64.powi(exp);
        let a = propagate_basic(&c, &totals, &upper).unwrap();
        let scaled: Vec<f64> = upper.iter().map(|u| u * scale).collect();
        let b = propagate_basic(&c, &totals, &scaled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x * scale, *y);
        }
    }

    #[test]
    fn w2_ignores_activations(seed in any::<u64>()) {
        let mut r = rng(seed);
        let layer = Layer::dense(uniform(&mut r, &[6, 3], -1.0, 1.0), Tensor::zeros(vec![3]).unwrap()).unwrap();
        let upper: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let model = Model::new(vec![1, 2, 3], vec![layer]).unwrap();
        let (_, t1) = model.forward(&uniform(&mut r, &[1, 2, 3], -1.0, 1.0)).unwrap();
        let (_, t2) = model.forward(&uniform(&mut r, &[1, 2, 3], -1.0, 1.0)).unwrap();
        let a = relprop::lrp::propagate_layer(&model.layers()[0], &t1.layers[0].input, &upper, Rule::WSquared, false).unwrap();
        let b = relprop::lrp::propagate_layer(&model.layers()[0], &t2.layers[0].input, &upper, Rule::WSquared, false).unwrap();
        prop_assert_eq!(a, b);
        // the contributions do depend on the input
        prop_assert_ne!(layer_contributions(&model.layers()[0], &t1.layers[0].input).unwrap(),
            layer_contributions(&model.layers()[0], &t2.layers[0].input).unwrap());
    }

    #[test]
    fn bins_tile_the_field(x in 0usize..20, y in 0usize..20, quarter in 1usize..8) {
        let size = 4 * quarter;
        let d = LocalDescriptor::new(vec![0.0; 128], x, y, size).unwrap();
        let field = d.field();
        for py in field.y..field.y + field.height {
            for px in field.x..field.x + field.width {
                prop_assert_eq!(d.bin_rects.iter().filter(|b| b.contains(px, py)).count(), 1);
            }
        }
        prop_assert_eq!(d.bin_rects.iter().map(|b| b.area()).sum::<usize>(), size * size);
    }

    #[test]
    fn fv_length_and_index_bijection(k in 1usize..6) {
        let d = 80;
        let mut seen = BTreeSet::new();
        for c in 0..k {
            for m in [Moment::Mean, Moment::Sigma] {
                for i in 0..d {
                    seen.insert(fv_index(c, m, i, d));
                }
            }
        }
        prop_assert_eq!(seen.len(), 2 * k * d);
        prop_assert_eq!(*seen.iter().last().unwrap(), 2 * k * d - 1);
    }

    #[test]
    fn encoding_is_additive_over_multisets(seed in any::<u64>(), na in 1usize..6, nb in 1usize..6) {
        let mut r = rng(seed);
        let g = random_gmm(&mut r, 3, 5);
        let a = random_matrix(&mut r, na, 5, -2.0, 2.0);
        let b = random_matrix(&mut r, nb, 5, -2.0, 2.0);
        let both: Vec<Vec<f64>> = a.iter().chain(&b).cloned().collect();
        let (fa, fb, fab) = (encode_fv(&g, &a).unwrap(), encode_fv(&g, &b).unwrap(), encode_fv(&g, &both).unwrap());
        prop_assert_eq!(fab.len(), 2 * 3 * 5);
        for ((x, y), z) in fa.values.iter().zip(&fb.values).zip(&fab.values) {
            prop_assert!((x + y - z).abs() <= 1e-12 * (1.0 + z.abs()));
        }
    }

    #[test]
    fn posteriors_sum_to_one(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_gmm(&mut r, 4, 6);
        for _ in 0..20 {
            let x: Vec<f64> = (0..6).map(|_| r.random_range(-5.0..5.0)).collect();
            prop_assert!((gmm_posterior(&g, &x).unwrap().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn fv_stages_conserve_without_epsilon(seed in any::<u64>(), n in 1usize..6) {
        let mut r = rng(seed);
        let (model, descs) = toy_fv(&mut r, n);
        let (map, d) = explain_descriptors(&model, descs, 32, 32, 1, Mode::Fine, 0.0).unwrap();
        let target = d.score - d.bias;
        prop_assert!(rel_err(d.fv_sum, target) <= 1e-9);
        prop_assert!(rel_err(d.descriptor_sum, d.fv_sum) <= 1e-9);
        prop_assert!(rel_err(d.backprojected_sum.unwrap(), d.descriptor_sum) <= 1e-9);
        prop_assert!(rel_err(map.sum(), target) <= 1e-9);
    }

    #[test]
    fn descriptor_order_does_not_matter(seed in any::<u64>(), n in 2usize..6, coarse in any::<bool>()) {
        let mut r = rng(seed);
        let (model, mut descs) = toy_fv(&mut r, n);
        let mode = if coarse { Mode::Coarse } else { Mode::Fine };
        let (a, da) = explain_descriptors(&model, descs.clone(), 32, 32, 0, mode, 100.0).unwrap();
        descs.shuffle(&mut r);
        let (b, db) = explain_descriptors(&model, descs, 32, 32, 0, mode, 100.0).unwrap();
        prop_assert!(a.map.data().iter().zip(b.map.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert_eq!(da, db);
    }

    #[test]
    fn coarse_is_field_mean_of_fine(seed in any::<u64>()) {
        let mut r = rng(seed);
        let geom = LocalDescriptor::new(vec![0.0; 128], 4 * r.random_range(0..4), 4 * r.random_range(0..4), 16).unwrap();
        let rel: Vec<f64> = (0..128).map(|_| f64::from(r.random_range(-256..256)) / 256.0).collect();
        let mut fine = PixelRelevance::zeros(32, 32, Mode::Fine).unwrap();
        redistribute_bins(&rel, &geom, &mut fine).unwrap();
        let mut coarse = PixelRelevance::zeros(32, 32, Mode::Coarse).unwrap();
        redistribute_uniform(rel.iter().sum(), &geom, &mut coarse).unwrap();
        let f = geom.field();
        let mean = fine.sum() / f.area() as f64;
        for y in f.y..f.y + f.height {
            for x in f.x..f.x + f.width {
                prop_assert_eq!(coarse.map.data()[y * 32 + x], mean);
            }
        }
    }

    #[test]
    fn render_is_scale_invariant(seed in any::<u64>(), c in 1e-3f64..1e3) {
        let mut r = rng(seed);
        let map = uniform(&mut r, &[9, 7], -2.0, 2.0);
        let cmap = ColorMap::default();
        prop_assert_eq!(render(&map.scale(c), &cmap).unwrap(), render(&map, &cmap).unwrap());
    }

    #[test]
    fn colormap_is_continuous(v in -1.0f64..1.0, step in 0.0f64..(1.0 / 512.0)) {
        let w = (v + step).min(1.0);
        let (a, b) = (ColorMap::default().color(v), ColorMap::default().color(w));
        for ch in 0..3 {
            prop_assert!((i32::from(a[ch]) - i32::from(b[ch])).abs() <= 1);
        }
    }

    #[test]
    fn ppm_round_trips(w in 1usize..24, h in 1usize..24, seed in any::<u64>()) {
        let mut r = rng(seed);
        let img = RgbImage::new(w, h, (0..3 * w * h).map(|_| r.random()).collect()).unwrap();
        let bytes = encode_ppm(&img);
        let back = decode_ppm(&bytes).unwrap();
        prop_assert_eq!(encode_ppm(&back), bytes);
        prop_assert_eq!(back, img);
    }
}
