mod common;

use apac_core::augment::{Image, ValueDomain};
use apac_core::dataio::{DatasetKind, LabeledDataset, Provenance};
use apac_core::decision::{
    apac_distinctive_predict, apac_predict, combine, evaluate, evaluate_sweep, non_apac_predict, softmax_sum_predict,
    sweep_predict, ApacAccumulator, DecisionConfig, Rule,
};
use apac_core::nn::Network;
use apac_core::rng::{domain, RngStream};
use apac_core::sampler::{
    default_spec, identity_spec, sample_theta, DeformSet, DeformSpec, ElasticSpec, MnistDeform, Pdf,
};
use common::{layers, random_image};
use rand::Rng;

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[test]
fn log_mean_argmax_equals_product_argmax() {
    let mut rng = RngStream::new(1, 1);
    for _ in 0..1000 {
        let m = rng.random_range(1..=8);
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| log_softmax(&(0..10).map(|_| rng.random_range(-4.0..4.0)).collect::<Vec<_>>()))
            .collect();
        let product: Vec<f64> = (0..10).map(|c| rows.iter().map(|r| r[c].exp()).product()).collect();
        let scores = combine(Rule::ApacLogMean, &rows).unwrap();
        assert_eq!(scores.predicted, first_argmax(&product));
    }
}

#[test]
fn incremental_accumulation_matches_flat_recomputation() {
    let mut rng = RngStream::new(2, 2);
    let rows: Vec<Vec<f64>> = (0..300)
        .map(|_| log_softmax(&(0..10).map(|_| rng.random_range(-8.0..8.0)).collect::<Vec<_>>()))
        .collect();
    let mut acc = ApacAccumulator::new(10);
    for m in 1..=rows.len() {
        acc.push(&rows[m - 1]);
        let inc = acc.means();
        for c in 0..10 {
            let flat = rows[..m].iter().map(|r| r[c]).sum::<f64>() / m as f64;
            assert!((inc[c] - flat).abs() <= 1e-10);
        }
    }
}

fn mlp(seed: u64) -> Network {
    Network::new([1, 28, 28], layers("fc24 relu fc10 softmax"), &mut RngStream::new(seed, 0)).unwrap()
}

fn apac_cfg(spec: DeformSpec, m: usize, seed: u64) -> DecisionConfig {
    DecisionConfig {
        rule: Rule::ApacLogMean,
        m,
        deform: Some(spec),
        seed,
    }
}

/// Forward each virtual sample separately and average the logs.
fn flat_scores(net: &Network, x: &Image, sample_id: u64, spec: &DeformSpec, m: usize, seed: u64) -> Vec<f64> {
    let mut sums = vec![0.0f64; net.class_count()];
    for l in 0..m as u64 {
        let mut rng = RngStream::derive(seed, domain::DECISION_THETA, &[sample_id, l]);
        let theta = sample_theta(spec, &mut rng, None).unwrap();
        let img = spec.apply(&theta, None, x).unwrap();
        let lp = net.forward_cache(&img.to_tensor()).unwrap().log_probs().to_vec();
        for (s, v) in sums.iter_mut().zip(lp) {
            *s += v;
        }
    }
    sums.into_iter().map(|s| s / m as f64).collect()
}

#[test]
fn sweep_snapshots_match_flat_recomputation() {
    let net = mlp(3);
    let spec = default_spec(DatasetKind::Mnist);
    let x = random_image(28, 28, 1, 4);
    let cfg = apac_cfg(spec.clone(), 40, 9);
    let snaps = sweep_predict(&net, &x, 17, &cfg, &[1, 2, 3, 16, 33, 40]).unwrap();
    for s in &snaps {
        let flat = flat_scores(&net, &x, 17, &spec, s.m_used, 9);
        for (a, b) in s.scores.iter().zip(&flat) {
            assert!((a - b).abs() <= 1e-10, "M={}: {a} vs {b}", s.m_used);
        }
    }
}

#[test]
fn identity_m1_apac_equals_non_apac() {
    let net = mlp(5);
    let cfg = apac_cfg(identity_spec(DatasetKind::Mnist), 1, 3);
    for k in 0..100 {
        let x = random_image(28, 28, 1, 1000 + k);
        let a = apac_predict(&net, &x, k, &cfg).unwrap();
        let b = non_apac_predict(&net, &x).unwrap();
        assert_eq!(a.predicted, b.predicted);
        assert_eq!(a.scores, b.scores);
    }
}

#[test]
fn toy_three_class_matches_flat_recomputation() {
    let mut net = Network::zeroed([1, 28, 28], layers("fc3 softmax")).unwrap();
    {
        let p = net.params_mut();
        for (i, w) in p[0].data_mut().iter_mut().enumerate() {
            let (row, px) = (i / 784, i % 784);
            *w = match row {
                0 => if px < 392 { 0.02 } else { -0.01 },
                1 => if (px % 28) < 14 { 0.015 } else { -0.005 },
                _ => 0.001 * ((px % 7) as f32 - 3.0),
            };
        }
        p[1].data_mut().copy_from_slice(&[0.1, -0.2, 0.05]);
    }
    let spec = default_spec(DatasetKind::Mnist);
    let x = random_image(28, 28, 1, 8);
    let got = apac_predict(&net, &x, 2, &apac_cfg(spec.clone(), 4, 77)).unwrap();
    let flat = flat_scores(&net, &x, 2, &spec, 4, 77);
    for (a, b) in got.scores.iter().zip(&flat) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert_eq!(got.virtual_samples, 4);
}

fn delta_set(h: [f64; 8], morph: [f64; 3]) -> DeformSet {
    DeformSet::Mnist(MnistDeform {
        homography: h.map(Pdf::delta),
        elastic: ElasticSpec { sigma: 1.0, alpha: 0.0 },
        morphology: Pdf::Categorical { probs: morph.to_vec() },
    })
}

const ID: [f64; 8] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];

#[test]
fn distinctive_two_class_hand_computation() {
    // logit 0 = sum of pixels, logit 1 = 0.
    let mut net = Network::zeroed([1, 4, 4], layers("fc2 softmax")).unwrap();
    net.params_mut()[0].data_mut()[..16].fill(1.0);
    let mut x = Image::zeros(4, 4, 1);
    x.set(0, 1, 1, 0.5);
    // Class 0 sees the input as is; class 1 sees it dilated (a 3×3 block).
    let spec = DeformSpec::class_distinctive(
        vec![delta_set(ID, [0.0, 0.0, 1.0]), delta_set(ID, [1.0, 0.0, 0.0])],
        vec![0, 1],
    )
    .unwrap();
    let s = apac_distinctive_predict(&net, &x, 0, &apac_cfg(spec, 3, 1)).unwrap();
    let want0 = 0.5 - (0.5f64.exp() + 1.0).ln();
    let want1 = -(4.5f64.exp() + 1.0).ln();
    assert!((s.scores[0] - want0).abs() <= 1e-12, "{} vs {want0}", s.scores[0]);
    assert!((s.scores[1] - want1).abs() <= 1e-12, "{} vs {want1}", s.scores[1]);
    assert_eq!(s.predicted, 0);
    assert_eq!(s.virtual_samples, 6);
}

#[test]
fn distinctive_counts_nd_times_m() {
    let net = mlp(6);
    let sets: Vec<DeformSet> = (0..10)
        .map(|c| {
            let mut h = ID;
            h[2] = 0.01 * c as f64;
            delta_set(h, [0.25, 0.25, 0.5])
        })
        .collect();
    let spec = DeformSpec::class_distinctive(sets, (0..10).collect()).unwrap();
    let x = random_image(28, 28, 1, 3);
    for m in [1, 4, 7] {
        let s = apac_distinctive_predict(&net, &x, 5, &apac_cfg(spec.clone(), m, 2)).unwrap();
        assert_eq!(s.virtual_samples, 10 * m);
        assert_eq!(s.m_used, m);
    }
    let shared = DeformSpec::class_distinctive(vec![delta_set(ID, [0.25, 0.25, 0.5])], vec![0; 10]).unwrap();
    let s = apac_distinctive_predict(&net, &x, 5, &apac_cfg(shared, 4, 2)).unwrap();
    assert_eq!(s.virtual_samples, 4);
}

#[test]
fn distinctive_with_shared_pdfs_equals_indistinctive() {
    let net = mlp(7);
    let spec = default_spec(DatasetKind::Mnist);
    let replicated = spec.replicate_per_class(10);
    for k in 0..10 {
        let x = random_image(28, 28, 1, 50 + k);
        let a = apac_predict(&net, &x, k, &apac_cfg(spec.clone(), 5, 4)).unwrap();
        let b = apac_distinctive_predict(&net, &x, k, &apac_cfg(replicated.clone(), 5, 4)).unwrap();
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.ranking, b.ranking);
    }
}

fn rows(probs: &[[f64; 2]]) -> Vec<Vec<f64>> {
    probs.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect()
}

#[test]
fn softmax_sum_arithmetic() {
    let cases: [(&[[f64; 2]], usize, usize); 3] = [
        (&[[0.6, 0.4], [0.1, 0.9]], 1, 1),
        (&[[0.51, 0.49], [0.04, 0.96]], 1, 1),
        (&[[0.9, 0.1], [0.35, 0.65]], 0, 0),
    ];
    for (probs, want_sum, want_log) in cases {
        let r = rows(probs);
        let sum = combine(Rule::SoftmaxSum, &r).unwrap();
        let log = combine(Rule::ApacLogMean, &r).unwrap();
        let mean0 = (probs[0][0] + probs[1][0]) / 2.0;
        assert!((sum.scores[0] - mean0).abs() < 1e-12);
        assert_eq!(sum.predicted, want_sum);
        assert_eq!(log.predicted, want_log);
    }
    let div = combine(Rule::SoftmaxSum, &rows(&[[0.9, 0.1], [0.35, 0.65]])).unwrap();
    assert!((div.scores[0] - 0.625).abs() < 1e-12);
    let log = combine(Rule::ApacLogMean, &rows(&[[0.9, 0.1], [0.35, 0.65]])).unwrap();
    assert!((2.0 * log.scores[0] - (0.9f64.ln() + 0.35f64.ln())).abs() < 1e-12);
    assert!((2.0 * log.scores[0] + 1.155).abs() < 1e-3 && (2.0 * log.scores[1] + 2.733).abs() < 1e-3);

    // The two rules can disagree: one near-zero vote sinks the product.
    let r = rows(&[[0.9, 0.1], [0.9, 0.1], [0.001, 0.999]]);
    assert_eq!(combine(Rule::SoftmaxSum, &r).unwrap().predicted, 0);
    assert_eq!(combine(Rule::ApacLogMean, &r).unwrap().predicted, 1);
}

#[test]
fn uniform_scores_tie_to_lowest_index() {
    let uniform = vec![(0.1f64).ln(); 10];
    for rule in [Rule::SoftmaxSum, Rule::ApacLogMean] {
        let s = combine(rule, &vec![uniform.clone(); 4]).unwrap();
        assert_eq!(s.predicted, 0);
        assert_eq!(s.ranking, (0..10).collect::<Vec<_>>());
    }
}

#[test]
fn softmax_sum_m1_ranks_like_apac_m1() {
    let net = mlp(8);
    let spec = default_spec(DatasetKind::Mnist);
    for k in 0..10 {
        let x = random_image(28, 28, 1, 300 + k);
        let a = apac_predict(&net, &x, k, &apac_cfg(spec.clone(), 1, 6)).unwrap();
        let b = softmax_sum_predict(&net, &x, k, &apac_cfg(spec.clone(), 1, 6)).unwrap();
        assert_eq!(a.ranking, b.ranking);
    }
}

fn dataset(images: Vec<Image>, labels: Vec<usize>) -> LabeledDataset {
    LabeledDataset::new(images, labels, 10, Provenance::Test).unwrap()
}

#[test]
fn uniform_classifier_error_is_one_minus_class_zero_rate() {
    let net = Network::zeroed([1, 28, 28], layers("fc10 softmax")).unwrap();
    let n = 2000;
    let mut rng = RngStream::new(12, 12);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
    let images = (0..n).map(|k| random_image(28, 28, 1, k as u64)).collect();
    let ds = dataset(images, labels.clone());
    let ev = evaluate(&net, &ds, &DecisionConfig::non_apac(), &[1]).unwrap();
    let err = ev.error(1).unwrap();
    let zeros = labels.iter().filter(|&&l| l == 0).count();
    assert_eq!(err, (n - zeros) as f64 / n as f64);
    let sd = (0.9f64 * 0.1 / n as f64).sqrt();
    assert!((err - 0.9).abs() <= 3.0 * sd, "{err}");
}

#[test]
fn perfect_classifier_has_zero_error() {
    let mut net = Network::zeroed([1, 1, 10], layers("fc10 softmax")).unwrap();
    for c in 0..10 {
        net.params_mut()[0].data_mut()[c * 10 + c] = 10.0;
    }
    let images = (0..30)
        .map(|k| {
            let mut px = vec![0.0; 10];
            px[k % 10] = 1.0;
            Image::new(1, 10, 1, px, ValueDomain::UnitInterval).unwrap()
        })
        .collect();
    let ds = dataset(images, (0..30).map(|k| k % 10).collect());
    for cfg in [DecisionConfig::non_apac(), apac_cfg(identity_spec(DatasetKind::Mnist), 3, 1)] {
        let ev = evaluate(&net, &ds, &cfg, &[1, 2, 5]).unwrap();
        assert!(ev.top_k.iter().all(|&(_, e)| e == 0.0), "{:?}", ev.top_k);
    }
}

#[test]
fn top_k_error_is_non_increasing() {
    let net = mlp(9);
    let images = (0..100).map(|k| random_image(28, 28, 1, 500 + k)).collect();
    let ds = dataset(images, (0..100).map(|k| (k * 7) % 10).collect());
    let ks: Vec<usize> = (1..=10).collect();
    for cfg in [DecisionConfig::non_apac(), apac_cfg(default_spec(DatasetKind::Mnist), 4, 1)] {
        let ev = evaluate(&net, &ds, &cfg, &ks).unwrap();
        for w in ev.top_k.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
        assert_eq!(ev.error(10), Some(0.0));
        for o in &ev.outcomes {
            assert_eq!(o.predicted, o.top2[0].0);
            assert!(o.top2[0].1 >= o.top2[1].1);
        }
    }
}

#[test]
fn non_apac_ignores_m_and_seed() {
    let net = mlp(10);
    let images = (0..20).map(|k| random_image(28, 28, 1, 700 + k)).collect();
    let ds = dataset(images, vec![3; 20]);
    let base = evaluate(&net, &ds, &DecisionConfig::non_apac(), &[1, 2]).unwrap();
    for (m, seed) in [(1, 0), (64, 5), (7, 99)] {
        let cfg = DecisionConfig {
            rule: Rule::NonApac,
            m,
            deform: Some(default_spec(DatasetKind::Mnist)),
            seed,
        };
        assert_eq!(evaluate(&net, &ds, &cfg, &[1, 2]).unwrap(), base);
    }
}

#[test]
fn evaluate_sweep_prefix_matches_single_evaluations() {
    let net = mlp(11);
    let images = (0..12).map(|k| random_image(28, 28, 1, 900 + k)).collect();
    let ds = dataset(images, (0..12).map(|k| k % 10).collect());
    let cfg = apac_cfg(default_spec(DatasetKind::Mnist), 16, 3);
    let sweep = evaluate_sweep(&net, &ds, &cfg, &[1, 4, 16], &[1, 2]).unwrap();
    for ev in &sweep {
        let single = evaluate(&net, &ds, &DecisionConfig { m: ev.m, ..cfg.clone() }, &[1, 2]).unwrap();
        assert_eq!(&single, ev);
    }
}

#[test]
fn m_zero_and_missing_spec_are_rejected() {
    let net = mlp(12);
    let x = random_image(28, 28, 1, 1);
    assert!(apac_predict(&net, &x, 0, &apac_cfg(default_spec(DatasetKind::Mnist), 0, 1)).is_err());
    let cfg = DecisionConfig { rule: Rule::SoftmaxSum, m: 2, deform: None, seed: 0 };
    assert!(softmax_sum_predict(&net, &x, 0, &cfg).is_err());
}
