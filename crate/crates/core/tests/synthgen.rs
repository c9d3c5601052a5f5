#![allow(clippy::needless_range_loop)]

use diffmn_core::synthgen::*;
use diffmn_core::IrregularSeries;
use proptest::prelude::*;

/// Least-squares cubic through `(x, y)` via normal equations and Gaussian
/// elimination with partial pivoting.
fn refit(x: &[f64], y: &[f64]) -> [f64; 4] {
    let mut a = [[0.0f64; 5]; 4];
    for (&xi, &yi) in x.iter().zip(y) {
        let row = [xi.powi(3), xi.powi(2), xi, 1.0];
        for r in 0..4 {
            for c in 0..4 {
                a[r][c] += row[r] * row[c];
            }
            a[r][4] += row[r] * yi;
        }
    }
    for col in 0..4 {
        let p = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, p);
        for r in 0..4 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..5 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    [0, 1, 2, 3].map(|i| a[i][4] / a[i][i])
}

fn small_cubic() -> CubicSpec {
    CubicSpec {
        samples: 50,
        ..CubicSpec::default()
    }
}

#[test]
fn constant_cubic_gives_constant_series() {
    let spec = CubicSpec {
        a: NormalParam::new(0.0, 0.0),
        b: NormalParam::new(0.0, 0.0),
        c: NormalParam::new(0.0, 0.0),
        d: NormalParam::new(2.5, 0.0),
        samples: 3,
        grid: 24,
    };
    let (data, _) = gen_cubic(&spec, 0).unwrap();
    for s in &data {
        assert!(s.values().iter().all(|r| r[0] == 2.5));
    }
}

#[test]
fn odd_cubic_endpoints() {
    let c = [1.0, 0.0, 0.0, 0.0];
    assert_eq!(eval_cubic(&c, -1.0), -1.0);
    assert_eq!(eval_cubic(&c, 0.0), 0.0);
    assert_eq!(eval_cubic(&c, 1.0), 1.0);
    assert_eq!(cubic_abscissa(0.0), -1.0);
    assert_eq!(cubic_abscissa(1.0), 1.0);
}

#[test]
fn cubic_grid_spans_minus_one_to_one() {
    let x = CubicSpec::default().abscissae();
    assert_eq!(x.len(), 24);
    assert_eq!(x[0], -1.0);
    assert_eq!(x[23], 1.0);
    let h = x[1] - x[0];
    assert!(x.windows(2).all(|w| ((w[1] - w[0]) - h).abs() < 1e-12));
}

#[test]
fn least_squares_refit_recovers_coefficients() {
    let (data, truth) = gen_cubic(&small_cubic(), 3).unwrap();
    for (s, coef) in data.iter().zip(&truth) {
        let x: Vec<f64> = s.times().iter().map(|&t| cubic_abscissa(t)).collect();
        let y: Vec<f64> = s.values().iter().map(|r| r[0]).collect();
        let fit = refit(&x, &y);
        for k in 0..4 {
            assert!((fit[k] - coef[k]).abs() < 1e-9, "{fit:?} vs {coef:?}");
        }
    }
}

#[test]
fn stored_coefficients_reproduce_series() {
    let (data, truth) = gen_cubic(&small_cubic(), 11).unwrap();
    for (s, coef) in data.iter().zip(&truth) {
        for (t, row) in s.times().iter().zip(s.values()) {
            let x = 2.0 * t - 1.0;
            let direct = coef[0] * x * x * x + coef[1] * x * x + coef[2] * x + coef[3];
            assert!((row[0] - direct).abs() < 1e-12);
        }
    }
}

#[test]
fn cubic_coefficients_follow_their_normals() {
    let (_, truth) = gen_cubic(&CubicSpec::default(), 5).unwrap();
    let spec = CubicSpec::default().coefficients();
    let n = truth.len() as f64;
    for k in 0..4 {
        let mean = truth.iter().map(|c| c[k]).sum::<f64>() / n;
        let se = spec[k].std / n.sqrt();
        assert!((mean - spec[k].mean).abs() < 4.0 * se, "coefficient {k}: {mean}");
    }
}

#[test]
fn sawtooth_matches_modulo_arithmetic() {
    let (amp, period, phase) = (0.8, 0.37, 0.11);
    for i in 0..100 {
        let t = i as f64 / 99.0;
        let frac = ((t + phase) % period) / period;
        let oracle = -amp + 2.0 * amp * frac;
        assert!((sawtooth(t, amp, period, phase) - oracle).abs() < 1e-12);
    }
}

#[test]
fn signals_stay_within_amplitude() {
    let spec = SignalSpec::default();
    for kind in [SignalKind::Sawtooth, SignalKind::Piecewise, SignalKind::SineMix] {
        let data = gen_signals(kind, &spec, 20, 4).unwrap();
        assert_eq!(data.len(), 20);
        for s in &data {
            assert_eq!(s.len(), spec.length);
            assert!(s.values().iter().flatten().all(|v| v.abs() <= spec.amplitude.1 + 1e-12));
        }
    }
}

#[test]
fn sine_values_are_bounded() {
    let data = gen_sines(&SineSpec::default(), 30, 2).unwrap();
    assert!(data
        .iter()
        .flat_map(|s| s.values().iter().flatten())
        .all(|v| v.abs() <= 1.0));
    assert!(data.iter().all(|s| s.channels() == 2 && s.len() == 24));
}

#[test]
fn generators_are_deterministic() {
    let spec = SineSpec::default();
    assert_eq!(gen_sines(&spec, 10, 9).unwrap(), gen_sines(&spec, 10, 9).unwrap());
    assert_ne!(gen_sines(&spec, 10, 9).unwrap(), gen_sines(&spec, 10, 10).unwrap());
    let c = small_cubic();
    assert_eq!(gen_cubic(&c, 1).unwrap(), gen_cubic(&c, 1).unwrap());
    let s = SignalSpec::default();
    assert_eq!(gen_mixed(&s, 8, 2).unwrap(), gen_mixed(&s, 8, 2).unwrap());
    let data = gen_sines(&spec, 10, 9).unwrap();
    assert_eq!(
        drop_dataset(&data, 0.5, DropMode::Timestep, 3).unwrap(),
        drop_dataset(&data, 0.5, DropMode::Timestep, 3).unwrap()
    );
}

#[test]
fn mixed_set_alternates_kinds() {
    let data = gen_mixed(&SignalSpec::default(), 4, 0).unwrap();
    let ids: Vec<&str> = data.iter().map(IrregularSeries::id).collect();
    assert_eq!(ids, ["mixed-0", "mixed-1", "mixed-2", "mixed-3"]);
}

#[test]
fn timestep_dropping_masks_whole_rows() {
    let data = gen_sines(&SineSpec::default(), 5, 1).unwrap();
    let dropped = drop_dataset(&data, 0.3, DropMode::Timestep, 8).unwrap();
    for s in &dropped {
        let missing = s.mask().iter().filter(|r| !r[0]).count();
        assert_eq!(missing, 7);
        assert!(s.mask().iter().all(|r| r.iter().all(|&m| m == r[0])));
    }
}

#[test]
fn entry_dropping_masks_each_channel() {
    let data = gen_sines(&SineSpec::default(), 5, 1).unwrap();
    let dropped = drop_dataset(&data, 0.5, DropMode::Entry, 8).unwrap();
    for s in &dropped {
        for c in 0..2 {
            assert_eq!(s.mask().iter().filter(|r| !r[c]).count(), 12);
        }
    }
}

fn series_strategy() -> impl Strategy<Value = IrregularSeries> {
    (2usize..30, 1usize..4).prop_map(|(len, channels)| {
        let times = unit_grid(len);
        let values = (0..len)
            .map(|i| (0..channels).map(|c| (i * c) as f64).collect())
            .collect();
        IrregularSeries::fully_observed("p", times, values).unwrap()
    })
}

proptest! {
    #[test]
    fn dropping_keeps_two_observations_per_channel(
        s in series_strategy(),
        rate in 0.0f64..0.95,
        seed in 0u64..1000,
        entry in any::<bool>(),
    ) {
        let mode = if entry { DropMode::Entry } else { DropMode::Timestep };
        let mut rng = diffmn_core::rng::stream(seed, 0);
        if let Ok(d) = drop_observations_with(&s, rate, mode, &mut rng) {
            for c in 0..d.channels() {
                prop_assert!(d.mask().iter().filter(|r| r[c]).count() >= 2);
            }
            prop_assert_eq!(d.values(), s.values());
        }
    }

    #[test]
    fn feasible_timestep_drops_always_succeed(len in 4usize..40, seed in 0u64..500) {
        let s = IrregularSeries::fully_observed("f", unit_grid(len), vec![vec![0.0]; len]).unwrap();
        let rate = 0.7;
        let d = drop_observations(&s, rate, seed).unwrap();
        let kept = d.mask().iter().filter(|r| r[0]).count();
        prop_assert_eq!(kept, len - (rate * len as f64).floor() as usize);
    }
}
