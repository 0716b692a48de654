use shoalguide_core::analytics::{bhattacharyya_distance, occupancy_of, Histogram};
use shoalguide_core::calib::{fit_affine, residual_sum_sq, AffineMap, CalibrationSet};
use shoalguide_core::dynamics::{lag_step, LagState};
use shoalguide_core::kmeans::kmeans_partition;
use shoalguide_core::rewards::{breakdown, r_base, r_school};
use shoalguide_core::rng::{make_rng, RngHandle};
use shoalguide_core::{TargetEnd, Vec2};

fn rng(stream: u64) -> RngHandle {
    make_rng(20240611, stream)
}

fn random_points(r: &mut RngHandle, n: usize) -> Vec<Vec2> {
    (0..n).map(|_| Vec2::new(r.uniform(), r.uniform())).collect()
}

#[test]
pub fn lag_step_matches_closed_form_and_composes() {
    let mut r = rng(1);
    for _ in 0..1000 {
        let x0 = Vec2::new(r.uniform(), r.uniform());
        let target = Vec2::new(r.uniform(), r.uniform());
        let tau = r.uniform_in(0.05, 3.0);
        let dt = r.uniform_in(0.001, 2.0);
        let got = lag_step(LagState { pos: x0, target }, tau, dt).pos;
        let k = (-dt / tau).exp();
        let want = Vec2::new(target.x + (x0.x - target.x) * k, target.y + (x0.y - target.y) * k);
        assert!(got.distance(want) <= 1e-9, "{got:?} vs {want:?}");

        let n = 1 + r.below(50);
        let mut s = LagState { pos: x0, target };
        for _ in 0..n {
            s = lag_step(s, tau, dt / n as f64);
        }
        assert!(s.pos.distance(got) <= 1e-9);
    }
}

fn random_affine(r: &mut RngHandle) -> AffineMap {
    let mut a = [[0.0; 3]; 2];
    for row in &mut a {
        for v in row.iter_mut() {
            *v = r.uniform_in(-3.0, 3.0);
        }
    }
    a[0][2] *= 500.0;
    a[1][2] *= 500.0;
    AffineMap { a }
}

#[test]
pub fn affine_fit_recovers_an_exact_map() {
    let mut r = rng(2);
    for _ in 0..200 {
        let truth = random_affine(&mut r);
        let n = 3 + r.below(12);
        let camera: Vec<[f64; 2]> = (0..n).map(|_| [r.uniform_in(0.0, 640.0), r.uniform_in(0.0, 480.0)]).collect();
        let set = CalibrationSet {
            display_spots: camera.iter().map(|c| truth.apply(*c)).collect(),
            camera_points: camera,
        };
        let Ok(fit) = fit_affine(&set) else { continue };
        for (row_f, row_t) in fit.a.iter().zip(&truth.a) {
            for (f, t) in row_f.iter().zip(row_t) {
                assert!((f - t).abs() <= 1e-9 * t.abs().max(1.0), "{f} vs {t}");
            }
        }
    }
}

#[test]
pub fn affine_fit_is_a_least_squares_minimum() {
    let mut r = rng(3);
    for _ in 0..50 {
        let truth = random_affine(&mut r);
        let camera: Vec<[f64; 2]> = (0..10).map(|_| [r.uniform_in(0.0, 640.0), r.uniform_in(0.0, 480.0)]).collect();
        let display = camera
            .iter()
            .map(|c| {
                let d = truth.apply(*c);
                [d[0] + r.normal() * 2.0, d[1] + r.normal() * 2.0]
            })
            .collect();
        let set = CalibrationSet {
            display_spots: display,
            camera_points: camera,
        };
        let fit = fit_affine(&set).unwrap();
        let best = residual_sum_sq(&fit, &set);
        for i in 0..2 {
            for j in 0..3 {
                for step in [1e-3, -1e-3] {
                    let mut moved = fit;
                    moved.a[i][j] += step;
                    assert!(residual_sum_sq(&moved, &set) >= best, "a[{i}][{j}] {step}");
                }
            }
        }
    }
}

#[test]
pub fn reward_fuzz() {
    let mut r = rng(4);
    for case in 0..100_000 {
        let (n_fish, n_agents) = (1 + r.below(10), 1 + r.below(5));
        let fish = random_points(&mut r, n_fish);
        let agents = random_points(&mut r, n_agents);
        let beta = r.uniform();
        let target = if case % 2 == 0 { TargetEnd::Right } else { TargetEnd::Left };
        let b = breakdown(&fish, &agents, beta, target).unwrap();
        for v in [b.r_base, b.r_school, b.r_direction, b.r_beta] {
            assert!((-1.0..=1.0).contains(&v), "case {case}: {b:?}");
        }

        let (mut f2, mut a2) = (fish.clone(), agents.clone());
        r.shuffle(&mut f2);
        r.shuffle(&mut a2);
        let p = breakdown(&f2, &a2, beta, target).unwrap();
        assert!((p.r_school - b.r_school).abs() < 1e-12 && (p.r_beta - b.r_beta).abs() < 1e-12);
        assert!((p.r_base - b.r_base).abs() < 1e-12);

        let fm: Vec<Vec2> = fish.iter().map(|f| f.mirror_x()).collect();
        let am: Vec<Vec2> = agents.iter().map(|a| a.mirror_x()).collect();
        let m = breakdown(&fm, &am, beta, target.opposite()).unwrap();
        assert!((m.r_beta - b.r_beta).abs() < 1e-12, "case {case}: mirror");
        assert!((m.r_base - b.r_base).abs() < 1e-12);

        // pulling every fish toward its nearest agent never lowers cohesion
        let s = r.uniform();
        let pulled: Vec<Vec2> = fish
            .iter()
            .map(|f| {
                let a = *agents
                    .iter()
                    .min_by(|p, q| f.distance(**p).total_cmp(&f.distance(**q)))
                    .unwrap();
                a + (*f - a) * s
            })
            .collect();
        assert!(r_school(&pulled, &agents).unwrap() >= b.r_school - 1e-12);

        let (x1, x2) = (r.uniform(), r.uniform());
        let (lo, hi) = if x1 < x2 { (x1, x2) } else { (x2, x1) };
        assert!(r_base(hi, TargetEnd::Right) >= r_base(lo, TargetEnd::Right));
        assert!(r_base(lo, TargetEnd::Left) >= r_base(hi, TargetEnd::Left));
    }
}

fn hist(samples: &[f64], bins: usize) -> Histogram {
    let mut h = Histogram::from_samples(samples, bins).unwrap();
    h.normalize();
    h
}

#[test]
pub fn bhattacharyya_closed_form() {
    // one distribution on the left half, the other uniform: BC = 1/√2
    let d = bhattacharyya_distance(&hist(&[0.1, 0.2], 2), &hist(&[0.1, 0.9], 2)).unwrap();
    assert!((d - 0.5 * std::f64::consts::LN_2).abs() <= 1e-9);
    assert!((d - 0.34657).abs() < 1e-5);
}

#[test]
pub fn bhattacharyya_symmetry_and_identity() {
    let mut r = rng(5);
    for _ in 0..500 {
        let a: Vec<f64> = (0..1 + r.below(200)).map(|_| r.uniform()).collect();
        let b: Vec<f64> = (0..1 + r.below(200)).map(|_| r.uniform().powi(2)).collect();
        let bins = 2 + r.below(40);
        let (ha, hb) = (hist(&a, bins), hist(&b, bins));
        let ab = bhattacharyya_distance(&ha, &hb).unwrap();
        let ba = bhattacharyya_distance(&hb, &ha).unwrap();
        assert!((ab - ba).abs() <= 1e-12);
        assert!(ab >= 0.0);
        assert!(bhattacharyya_distance(&ha, &ha).unwrap().abs() <= 1e-12);
        if ab.abs() <= 1e-12 {
            let (ma, mb) = (ha.masses(), hb.masses());
            assert!(ma.iter().zip(&mb).all(|(x, y)| (x - y).abs() < 1e-9));
        }
    }
}

#[test]
pub fn uniform_centroids_split_thirty_forty_thirty() {
    let mut r = rng(6);
    let samples: Vec<(f64, TargetEnd)> = (0..200_000)
        .map(|i| (r.uniform(), if i % 2 == 0 { TargetEnd::Right } else { TargetEnd::Left }))
        .collect();
    let occ = occupancy_of(samples).unwrap();
    assert!((occ.target_pct - 30.0).abs() <= 1.0, "{occ:?}");
    assert!((occ.intermediate_pct - 40.0).abs() <= 1.0, "{occ:?}");
    assert!((occ.opposite_pct - 30.0).abs() <= 1.0, "{occ:?}");
    let total = occ.target_pct + occ.intermediate_pct + occ.opposite_pct;
    assert!((total - 100.0).abs() < 1e-9);
}

#[test]
pub fn uniform_histogram_is_flat_density() {
    let mut r = rng(7);
    let samples: Vec<f64> = (0..100_000).map(|_| r.uniform()).collect();
    let h = hist(&samples, 30);
    assert!(h.is_density());
    for d in &h.counts {
        assert!((d - 1.0).abs() <= 0.15, "{d}");
    }
}

fn wcss(points: &[Vec2], labels: &[bool]) -> f64 {
    let mut total = 0.0;
    for side in [false, true] {
        let members: Vec<Vec2> = points.iter().zip(labels).filter(|(_, &l)| l == side).map(|(p, _)| *p).collect();
        if let Some(c) = Vec2::mean(&members) {
            total += members.iter().map(|p| p.distance_sq(c)).sum::<f64>();
        }
    }
    total
}

#[test]
pub fn two_blob_kmeans_matches_exhaustive_partition() {
    let mut r = rng(8);
    for trial in 0..20 {
        let n = 12;
        let centers = [Vec2::new(0.2, 0.3), Vec2::new(0.75, 0.7)];
        let points: Vec<Vec2> = (0..n)
            .map(|i| {
                let c = centers[i % 2];
                Vec2::new(c.x + 0.05 * r.normal(), c.y + 0.05 * r.normal())
            })
            .collect();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << n) - 1 {
            let labels: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
            best = best.min(wcss(&points, &labels));
        }
        let mut krng = make_rng(trial, 0);
        let result = kmeans_partition(&points, 2, &mut krng).unwrap();
        let labels: Vec<bool> = result.labels.iter().map(|&l| l == 1).collect();
        let got = wcss(&points, &labels);
        assert!((got - best).abs() <= 1e-6, "trial {trial}: {got} vs {best}");
        assert!((result.objective_trace.last().unwrap() - best).abs() <= 1e-6);
    }
}
