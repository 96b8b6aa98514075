use proptest::prelude::*;
use robdiff_core::estimators::{fixed_point_residual, RESIDUAL_TOL};
use robdiff_core::{
    mm_estimate, trimmed_mean, weighted_mad, weighted_median, weiszfeld, IrlsSettings, LossSpec,
    ModelVector, WeightedSample,
};

/// Tukey ψ written out independently of the library.
fn tukey_psi(u: f64, c: f64) -> f64 {
    if u.abs() >= c {
        0.0
    } else {
        u * (1.0 - (u / c) * (u / c)).powi(2)
    }
}

/// Root of `Σ a ψ((v − w)/s)` near `start` by dense scan then bisection.
fn dense_fixed_point(values: &[f64], weights: &[f64], scale: f64, c: f64, lo: f64, hi: f64) -> f64 {
    let f = |w: f64| -> f64 {
        values
            .iter()
            .zip(weights)
            .map(|(v, a)| a * tukey_psi((v - w) / scale, c))
            .sum()
    };
    let steps = 200_000;
    let h = (hi - lo) / steps as f64;
    let mut bracket = None;
    for i in 0..steps {
        let (x0, x1) = (lo + i as f64 * h, lo + (i + 1) as f64 * h);
        if f(x0) >= 0.0 && f(x1) <= 0.0 {
            bracket = Some((x0, x1));
            break;
        }
    }
    let (mut a, mut b) = bracket.expect("sign change");
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if f(mid) >= 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

#[test]
fn outlier_sample_matches_dense_oracle() {
    let values = [0.9, 1.0, 1.1, 1.2, 0.8, 100.0];
    let weights = [1.0 / 6.0; 6];
    let s = WeightedSample::uniform(values.to_vec()).unwrap();
    // median is the midpoint of 1.0 and 1.1; |dev| median is midpoint of 0.15 and 0.15
    let scale = 1.4826 * 0.15;
    let oracle = dense_fixed_point(&values, &weights, scale, 4.685, 0.8, 1.2);
    let r = mm_estimate(&s, LossSpec::tukey(), &IrlsSettings::default()).unwrap();
    assert!(r.converged);
    assert!((r.scale - scale).abs() < 1e-12);
    assert!(
        (r.location - oracle).abs() < 1e-9,
        "{} vs {}",
        r.location,
        oracle
    );
    assert!((r.location - 1.0).abs() < 1e-3);
    assert_eq!(r.final_weights[5], 0.0);
}

fn sample_strategy(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_len)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0..100.0f64, n),
                prop::collection::vec(0.05..1.0f64, n),
            )
        })
        .prop_map(|(v, raw)| {
            let total: f64 = raw.iter().sum();
            (v, raw.iter().map(|w| w / total).collect())
        })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

type Estimator = fn(&WeightedSample) -> Option<f64>;

fn estimators() -> Vec<(&'static str, Estimator)> {
    vec![
        ("median", |s| Some(weighted_median(s))),
        ("trimmed", |s| trimmed_mean(s, 0.1).ok()),
        ("mm_tukey", |s| {
            mm_estimate(s, LossSpec::tukey(), &IrlsSettings::default())
                .ok()
                .filter(|r| r.converged)
                .map(|r| r.location)
        }),
        ("mm_huber", |s| {
            mm_estimate(s, LossSpec::huber(), &IrlsSettings::default())
                .ok()
                .filter(|r| r.converged)
                .map(|r| r.location)
        }),
        ("mean", |s| Some(s.weighted_mean())),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn translation_equivariance((v, w) in sample_strategy(25), c in -100.0..100.0f64) {
        let s = WeightedSample::new(v.clone(), w.clone()).unwrap();
        let shifted = WeightedSample::new(v.iter().map(|x| x + c).collect(), w).unwrap();
        for (name, e) in estimators() {
            if let (Some(a), Some(b)) = (e(&s), e(&shifted)) {
                prop_assert!(close(a + c, b), "{name}: {} vs {}", a + c, b);
            }
        }
    }

    #[test]
    fn scale_equivariance((v, w) in sample_strategy(25), alpha in 0.1..10.0f64) {
        let s = WeightedSample::new(v.clone(), w.clone()).unwrap();
        let scaled = WeightedSample::new(v.iter().map(|x| x * alpha).collect(), w).unwrap();
        for (name, e) in estimators() {
            if let (Some(a), Some(b)) = (e(&s), e(&scaled)) {
                prop_assert!(close(a * alpha, b), "{name}: {} vs {}", a * alpha, b);
            }
        }
    }

    #[test]
    fn permutation_invariance_is_exact((v, w) in sample_strategy(25), seed in any::<u64>()) {
        let n = v.len();
        let mut perm: Vec<usize> = (0..n).collect();
        // Fisher-Yates from the seed
        let mut x = seed;
        for i in (1..n).rev() {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (x >> 33) as usize % (i + 1));
        }
        let s = WeightedSample::new(v.clone(), w.clone()).unwrap();
        let p = WeightedSample::new(
            perm.iter().map(|&i| v[i]).collect(),
            perm.iter().map(|&i| w[i]).collect(),
        ).unwrap();
        for (name, e) in estimators() {
            let (a, b) = (e(&s), e(&p));
            prop_assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits), "{}", name);
        }
        let cfg = IrlsSettings::default();
        if let (Ok(a), Ok(b)) = (mm_estimate(&s, LossSpec::tukey(), &cfg), mm_estimate(&p, LossSpec::tukey(), &cfg)) {
            for (pos, &orig) in perm.iter().enumerate() {
                prop_assert_eq!(a.final_weights[orig].to_bits(), b.final_weights[pos].to_bits());
            }
        }
    }

    #[test]
    fn converged_results_solve_the_estimating_equation((v, w) in sample_strategy(30)) {
        let s = WeightedSample::new(v, w).unwrap();
        for loss in [LossSpec::tukey(), LossSpec::huber(), LossSpec::SquaredError] {
            let r = mm_estimate(&s, loss, &IrlsSettings::default()).unwrap();
            let total: f64 = r.final_weights.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-10);
            prop_assert!(r.final_weights.iter().all(|&x| x >= 0.0));
            let combo: f64 = r.final_weights.iter().zip(s.values()).map(|(a, v)| a * v).sum();
            prop_assert!((combo - r.location).abs() <= 1e-9 * (1.0 + r.location.abs()));
            if r.converged {
                let res = fixed_point_residual(&s, loss, r.scale, r.location);
                prop_assert!(res.abs() <= RESIDUAL_TOL, "residual {res}");
            }
        }
    }

    #[test]
    fn breakdown_below_half(
        clean in prop::collection::vec(-10.0..10.0f64, 3..16),
        bad_frac in 0.0..1.0f64,
        signs in prop::collection::vec(any::<bool>(), 16),
    ) {
        let n_clean = clean.len();
        let n_bad = ((n_clean - 1) as f64 * bad_frac) as usize; // strictly fewer than clean
        let mut values = clean.clone();
        for s in signs.iter().take(n_bad) {
            values.push(if *s { 1e9 } else { -1e9 });
        }
        let lo = clean.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = clean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s = WeightedSample::uniform(values.clone()).unwrap();
        let med = weighted_median(&s);
        prop_assert!(lo <= med && med <= hi);
        let mm = mm_estimate(&s, LossSpec::tukey(), &IrlsSettings::default()).unwrap();
        prop_assert!(lo <= mm.location && mm.location <= hi, "{} not in [{lo}, {hi}]", mm.location);
        let pts: Vec<ModelVector> = values.iter().map(|&x| ModelVector::from_vec(vec![x])).collect();
        let gm = weiszfeld(&pts, s.weights(), &IrlsSettings::default()).unwrap();
        prop_assert!(lo - 1e-9 <= gm.point[0] && gm.point[0] <= hi + 1e-9);
    }

    #[test]
    fn geometric_median_stays_bounded_in_the_plane(
        clean in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 3..12),
        bad_frac in 0.0..1.0f64,
        angles in prop::collection::vec(0.0..std::f64::consts::TAU, 12),
    ) {
        // In two or more dimensions the spatial median can leave the clean
        // hull, but it stays within 2R(1−ε)/(1−2ε) of the clean ball's center.
        let n_clean = clean.len();
        let n_bad = ((n_clean - 1) as f64 * bad_frac) as usize;
        let mut pts: Vec<ModelVector> = clean.iter().map(|&(x, y)| ModelVector::from_vec(vec![x, y])).collect();
        for a in angles.iter().take(n_bad) {
            pts.push(ModelVector::from_vec(vec![1e9 * a.cos(), 1e9 * a.sin()]));
        }
        let n = pts.len();
        let w = vec![1.0 / n as f64; n];
        let eps = n_bad as f64 / n as f64;
        let r = pts[..n_clean].iter().map(|p| p.norm()).fold(0.0, f64::max);
        let gm = weiszfeld(&pts, &w, &IrlsSettings { max_iters: 1000, ..Default::default() }).unwrap();
        let bound = 2.0 * r * (1.0 - eps) / (1.0 - 2.0 * eps);
        prop_assert!(gm.point.norm() <= bound + 1e-9, "{} > {bound}", gm.point.norm());
    }
}

#[test]
fn mad_is_scale_and_translation_equivariant() {
    let s = WeightedSample::uniform(vec![0.3, 1.7, -2.0, 4.4, 0.0]).unwrap();
    let m = weighted_median(&s);
    let mad = weighted_mad(&s, m).unwrap();
    let t = WeightedSample::uniform(s.values().iter().map(|x| 3.0 * x + 5.0).collect()).unwrap();
    let mt = weighted_median(&t);
    assert!((mt - (3.0 * m + 5.0)).abs() < 1e-12);
    assert!((weighted_mad(&t, mt).unwrap() - 3.0 * mad).abs() < 1e-12);
}

/// Coarse-to-fine grid minimization of `Σ a ‖p − w‖` in the plane.
fn grid_geometric_median(pts: &[[f64; 2]], w: &[f64]) -> [f64; 2] {
    let f = |x: f64, y: f64| -> f64 {
        pts.iter()
            .zip(w)
            .map(|(p, a)| a * ((p[0] - x).powi(2) + (p[1] - y).powi(2)).sqrt())
            .sum()
    };
    let (mut cx, mut cy) = (0.0, 0.0);
    let mut half = pts
        .iter()
        .flat_map(|p| [p[0].abs(), p[1].abs()])
        .fold(0.0, f64::max)
        + 1.0;
    for _ in 0..30 {
        let steps = 40;
        let h = 2.0 * half / steps as f64;
        let mut best = (f64::INFINITY, cx, cy);
        for i in 0..=steps {
            for j in 0..=steps {
                let (x, y) = (cx - half + i as f64 * h, cy - half + j as f64 * h);
                let v = f(x, y);
                if v < best.0 {
                    best = (v, x, y);
                }
            }
        }
        cx = best.1;
        cy = best.2;
        half = 2.0 * h;
    }
    [cx, cy]
}

#[test]
fn weiszfeld_matches_grid_search() {
    let cases: Vec<(Vec<[f64; 2]>, Vec<f64>)> = vec![
        (
            vec![[0.0, 0.0], [1.0, 0.0], [10.0, 0.0]],
            vec![1.0 / 3.0; 3],
        ),
        (
            vec![[0.0, 0.0], [4.0, 0.5], [1.0, 3.0], [-2.0, 1.0], [3.0, -2.0]],
            vec![0.1, 0.3, 0.2, 0.25, 0.15],
        ),
        (
            vec![[1.0, 1.0], [-1.0, 2.0], [0.5, -3.0], [2.5, 2.5]],
            vec![0.25; 4],
        ),
        // optimum on a heavy data point
        (
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![0.6, 0.2, 0.2],
        ),
    ];
    let cfg = IrlsSettings {
        max_iters: 10_000,
        ..Default::default()
    };
    for (pts, w) in cases {
        let vecs: Vec<ModelVector> = pts
            .iter()
            .map(|p| ModelVector::from_vec(p.to_vec()))
            .collect();
        let g = weiszfeld(&vecs, &w, &cfg).unwrap();
        let oracle = grid_geometric_median(&pts, &w);
        assert!(
            (g.point[0] - oracle[0]).abs() < 1e-4 && (g.point[1] - oracle[1]).abs() < 1e-4,
            "{:?} vs {:?}",
            g.point,
            oracle
        );
    }
}
