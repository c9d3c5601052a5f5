use diffmn_core::metrics::*;
use diffmn_core::synthgen::{drop_dataset, eval_cubic, gen_cubic, gen_sines, unit_grid, CubicSpec, DropMode, SineSpec};
use diffmn_core::IrregularSeries;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn sines(n: usize, seed: u64) -> Vec<IrregularSeries> {
    gen_sines(&SineSpec::default(), n, seed).unwrap()
}

fn map_values(data: &[IrregularSeries], f: impl Fn(f64) -> f64) -> Vec<IrregularSeries> {
    data.iter()
        .map(|s| {
            let values = s.values().iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect();
            IrregularSeries::new(s.id(), s.times().to_vec(), values, s.mask().to_vec()).unwrap()
        })
        .collect()
}

fn from_rows(rows: Vec<Vec<Vec<f64>>>) -> Vec<IrregularSeries> {
    rows.into_iter()
        .enumerate()
        .map(|(i, v)| IrregularSeries::fully_observed(format!("s{i}"), unit_grid(v.len()), v).unwrap())
        .collect()
}

fn gaussian_set(n: usize, len: usize, mean: f64, seed: u64) -> Vec<IrregularSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    from_rows(
        (0..n)
            .map(|_| {
                (0..len)
                    .map(|_| vec![mean + rng.sample::<f64, _>(StandardNormal)])
                    .collect()
            })
            .collect(),
    )
}

#[test]
fn ds_of_a_shuffled_copy_is_near_chance() {
    let real = sines(400, 1);
    let mut synthetic = real.clone();
    synthetic.reverse();
    let ds = discriminative_score(&real, &synthetic, &MetricsConfig::default(), 0).unwrap();
    assert!((0.0..=0.1).contains(&ds), "DS {ds}");
}

#[test]
fn ds_of_an_offset_copy_is_maximal() {
    let real = sines(200, 2);
    let synthetic = map_values(&real, |v| v + 10.0);
    let ds = discriminative_score(&real, &synthetic, &MetricsConfig::default(), 0).unwrap();
    assert!((0.45..=0.5).contains(&ds), "DS {ds}");
}

#[test]
fn ds_is_bounded_and_reproducible() {
    let real = sines(60, 3);
    let synthetic = map_values(&sines(60, 4), |v| 0.8 * v);
    let cfg = MetricsConfig::default();
    let a = discriminative_score(&real, &synthetic, &cfg, 5).unwrap();
    let b = discriminative_score(&real, &synthetic, &cfg, 5).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert!((0.0..=0.5).contains(&a));
}

#[test]
fn ds_rejects_degenerate_splits() {
    let real = sines(1, 3);
    assert!(discriminative_score(&real, &sines(50, 4), &MetricsConfig::default(), 0).is_err());
    let short = drop_dataset(&sines(5, 3), 0.0, DropMode::Timestep, 0).unwrap();
    let other = from_rows(vec![vec![vec![0.0]; 5]; 5]);
    assert!(discriminative_score(&short, &other, &MetricsConfig::default(), 0).is_err());
}

#[test]
fn mdd_identical_and_disjoint() {
    let a = sines(50, 1);
    assert_eq!(mdd(&a, &a, 50).unwrap(), 0.0);
    let unit = map_values(&a, |v| 0.5 + 0.4 * v);
    let far = map_values(&a, |v| 5.5 + 0.4 * v);
    assert!((mdd(&unit, &far, 50).unwrap() - 2.0).abs() < 1e-12);
}

/// Bin index found by scanning explicit edges.
fn oracle_histogram(xs: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let edges: Vec<f64> = (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect();
    let mut h = vec![0.0; bins];
    for &x in xs {
        let k = (0..bins).rev().find(|&k| x >= edges[k]).unwrap_or(0);
        h[k] += 1.0;
    }
    h.iter().map(|v| v / xs.len() as f64).collect()
}

#[test]
fn mdd_matches_independent_histograms() {
    let (n, len, bins) = (2000, 6, 50);
    let a = gaussian_set(n, len, 0.0, 10);
    let b = gaussian_set(n, len, 0.5, 11);
    let mut total = 0.0;
    for t in 0..len {
        let xa: Vec<f64> = a.iter().map(|s| s.values()[t][0]).collect();
        let xb: Vec<f64> = b.iter().map(|s| s.values()[t][0]).collect();
        let lo = xa.iter().chain(&xb).copied().fold(f64::INFINITY, f64::min);
        let hi = xa.iter().chain(&xb).copied().fold(f64::NEG_INFINITY, f64::max);
        let (p, q) = (oracle_histogram(&xa, lo, hi, bins), oracle_histogram(&xb, lo, hi, bins));
        total += p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum::<f64>();
    }
    let want = total / len as f64;
    let got = mdd(&a, &b, bins).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    assert!(got > 0.1);
}

#[test]
fn mdd_skips_unobserved_marginals() {
    let full = sines(30, 5);
    let dropped = drop_dataset(&full, 0.5, DropMode::Timestep, 1).unwrap();
    let d = mdd(&full, &dropped, 20).unwrap();
    assert!(d.is_finite() && d >= 0.0);
}

#[test]
fn kl_identical_is_zero_and_discrete_case_matches() {
    let a = sines(40, 1);
    let kl = kl_divergence(&a, &a, 50, 1e-6).unwrap();
    assert!(kl.abs() < 1e-4, "{kl}");

    let real = from_rows(vec![vec![vec![0.0], vec![0.0], vec![0.0], vec![1.0]]]);
    let syn = from_rows(vec![vec![vec![0.0], vec![1.0], vec![1.0], vec![1.0]]]);
    let (p, q) = ([0.75f64, 0.25], [0.25f64, 0.75]);
    let want: f64 = p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum();
    let got = kl_divergence(&real, &syn, 2, 1e-6).unwrap();
    assert!((got - want).abs() < 1e-5, "{got} vs {want}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn kl_and_mdd_are_nonnegative(seed in 0u64..1000, shift in -2.0f64..2.0, bins in 1usize..60) {
        let a = gaussian_set(20, 4, 0.0, seed);
        let b = gaussian_set(20, 4, shift, seed + 1);
        prop_assert!(kl_divergence(&a, &b, bins, 1e-6).unwrap() >= 0.0);
        let m = mdd(&a, &b, bins).unwrap();
        prop_assert!((0.0..=2.0 + 1e-12).contains(&m));
    }

    #[test]
    fn histograms_are_probability_vectors(xs in proptest::collection::vec(-5.0f64..5.0, 1..50), bins in 1usize..20) {
        let (p, q) = histogram(&xs, &xs[..1], bins).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn mir_detects_copies_and_ignores_fresh_noise() {
    let train = sines(100, 1);
    let holdout = sines(100, 2);
    let copy = mir(&train, &holdout, &train).unwrap();
    assert!(copy >= 0.9, "copy MIR {copy}");
    let fresh = mir(&train, &holdout, &sines(100, 3)).unwrap();
    assert!((fresh - 0.5).abs() <= 0.1, "fresh MIR {fresh}");
    assert!((0.0..=1.0).contains(&fresh));
    assert!(mir(&train, &[], &train).is_err());
}

#[test]
fn forecast_of_constant_series_is_nearly_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = from_rows(
        (0..300)
            .map(|_| {
                let v = rng.random_range(-1.0..1.0);
                vec![vec![v]; 12]
            })
            .collect(),
    );
    let s = downstream_forecast(&data, &MetricsConfig::default(), 0).unwrap();
    assert!(s.mse < 1e-2 * (1.0 / 3.0), "{s:?}");
    assert!(s.mae <= s.mse.sqrt() + 1e-15);
}

#[test]
fn forecast_without_information_hits_the_variance_floor() {
    let data = gaussian_set(1000, 8, 0.0, 9);
    let s = downstream_forecast(&data, &MetricsConfig::default(), 1).unwrap();
    assert!((0.8..=1.25).contains(&s.mse), "{s:?}");
    assert!(s.mae <= s.mse.sqrt());
}

#[test]
fn forecast_contracts() {
    let short = from_rows(vec![vec![vec![0.0], vec![1.0]]; 20]);
    assert!(downstream_forecast(&short, &MetricsConfig::default(), 0).is_err());
    assert!(downstream_forecast(&sines(2, 0), &MetricsConfig::default(), 0).is_err());
    let data = sines(40, 1);
    let cfg = MetricsConfig {
        forecaster: SequenceConfig {
            epochs: 3,
            ..MetricsConfig::default().forecaster
        },
        ..MetricsConfig::default()
    };
    assert_eq!(
        downstream_forecast(&data, &cfg, 2).unwrap(),
        downstream_forecast(&data, &cfg, 2).unwrap()
    );
}

#[test]
fn cubic_refit_of_truth_is_exact() {
    let spec = CubicSpec::default();
    let (data, truth) = gen_cubic(&spec, 3).unwrap();
    let rec = cubic_recovery(&data, &spec, 10_000, 0).unwrap();
    for (r, t) in rec.refits.iter().zip(&truth) {
        for k in 0..4 {
            assert!((r[k] - t[k]).abs() < 1e-9);
        }
    }
    for (k, p) in spec.coefficients().iter().enumerate() {
        let n = truth.len() as f64;
        let mean = truth.iter().map(|c| c[k]).sum::<f64>() / n;
        assert!((rec.mean_error[k] - (mean - p.mean).abs()).abs() < 1e-9);
        assert!(rec.w1[k] < 0.05 * p.std, "W1[{k}] {}", rec.w1[k]);
    }
}

#[test]
fn cubic_refit_tolerates_small_noise() {
    let spec = CubicSpec::default();
    let (data, _) = gen_cubic(&spec, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noisy: Vec<IrregularSeries> = data
        .iter()
        .map(|s| {
            let values = s
                .values()
                .iter()
                .map(|r| vec![r[0] + 0.01 * rng.sample::<f64, _>(StandardNormal)])
                .collect();
            IrregularSeries::fully_observed(s.id(), s.times().to_vec(), values).unwrap()
        })
        .collect();
    let rec = cubic_recovery(&noisy, &spec, 10_000, 0).unwrap();
    assert!(rec.mean_error.iter().all(|&e| e < 0.05), "{:?}", rec.mean_error);
}

#[test]
fn refit_residual_is_orthogonal_to_the_design() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|&v| v.sin() * 3.0 + rng.random_range(-0.2..0.2)).collect();
    let coef = refit_cubic(&x, &y).unwrap();
    for k in 0..4 {
        let dot: f64 = x
            .iter()
            .zip(&y)
            .map(|(&xi, &yi)| (yi - eval_cubic(&coef, xi)) * xi.powi(k))
            .sum();
        assert!(dot.abs() < 1e-9, "column {k}: {dot}");
    }
    assert!(refit_cubic(&[0.0, 0.5, 0.5, 1.0], &[1.0; 4]).is_err());
}

#[test]
fn wasserstein_matches_sorted_pairing() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut a: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
    let mut b: Vec<f64> = (0..200)
        .map(|_| 0.3 + 2.0 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let got = wasserstein1(&a, &b);
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let want = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 200.0;
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    let shifted: Vec<f64> = a.iter().map(|v| v + 0.7).collect();
    assert!((wasserstein1(&a, &shifted) - 0.7).abs() < 1e-12);
    assert_eq!(wasserstein1(&[1.0, 2.0], &[2.0, 1.0]), 0.0);
}

#[test]
fn report_rejects_non_finite_values_and_writes_csv() {
    let mut r = MetricsReport::new(MetricsConfig::default(), 7, "abc".into(), "def".into());
    r.insert("mdd", 0.25).unwrap();
    assert!(r.insert("kl", f64::NAN).is_err());
    assert_eq!(
        r.to_csv(),
        "metric,value,seed,config_hash,dataset_hash\nmdd,0.25,7,abc,def\n"
    );
    assert_eq!("forecast".parse::<Metric>().unwrap(), Metric::Forecast);
    assert!("tsne".parse::<Metric>().is_err());
}
