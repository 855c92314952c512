use nalgebra::DMatrix;
use otlab::design;
use otlab::estimators::{
    e2_nn_distance, e3_voronoi_mass, in_sample_error, nn_decomposition, one_nn_estimator, risk_mc,
    TransportMapEstimate,
};
use otlab::exact_ot::{solve_kantorovich, sq_dist};
use otlab::measures::{pushforward_measure, DiscreteMeasure, PointMap, Sampler};
use otlab::rng::rng_from_seed;
use rand::Rng;

#[test]
fn e2_of_single_point_under_uniform_law() {
    let x = DiscreteMeasure::uniform_flat(1, vec![0.0]).unwrap();
    let p = Sampler::uniform_box(vec![-1.0], vec![1.0], 5).unwrap();
    let e = e2_nn_distance(&x, &p, 20_000).unwrap();
    assert!((e.mean - 1.0 / 3.0).abs() < 4.0 * e.std_error, "{e:?}");
}

#[test]
fn e2_scales_quadratically() {
    let mut rng = rng_from_seed(3);
    let x = design::random_cloud(&mut rng, 20, 2, 1.0).unwrap();
    let p = Sampler::uniform_box(vec![-1.0; 2], vec![1.0; 2], 8).unwrap();
    let p2 = Sampler::uniform_box(vec![-2.0; 2], vec![2.0; 2], 8).unwrap();
    let a = e2_nn_distance(&x, &p, 50_000).unwrap();
    let b = e2_nn_distance(&x.scaled(2.0), &p2, 50_000).unwrap();
    // Same seed and a linear sampler: the draws are exact rescalings.
    assert!((b.mean - 4.0 * a.mean).abs() < 1e-9 * b.mean + 4.0 * b.std_error);
}

#[test]
fn e2_vanishes_on_sample_atoms() {
    let x = DiscreteMeasure::uniform_flat(1, vec![0.0, 2.0]).unwrap();
    let p = Sampler::finite(DiscreteMeasure::uniform_flat(1, vec![0.0, 2.0]).unwrap(), 1);
    assert_eq!(e2_nn_distance(&x, &p, 500).unwrap().mean, 0.0);
}

#[test]
fn e3_symmetric_pair_is_half() {
    let x = DiscreteMeasure::uniform_flat(1, vec![-0.5, 0.5]).unwrap();
    let p = Sampler::gaussian(vec![0.0], DMatrix::identity(1, 1), 4).unwrap();
    let n_eval = 20_000;
    let v = e3_voronoi_mass(&x, &p, n_eval).unwrap();
    // max of two binomial fractions around ½; sd of each is ½/sqrt(n).
    assert!(v.mc >= 0.5 && v.mc - 0.5 < 4.0 * 0.5 / (n_eval as f64).sqrt());
    assert_eq!(v.exact, None);
}

#[test]
fn risk_of_affine_estimate_matches_closed_form() {
    let d = 3;
    let mut rng = rng_from_seed(9);
    let model = design::random_affine_model(&mut rng, d, 0.5, 2.0).unwrap();
    let otlab::ground_truth::ModelKind::Affine { a, b, .. } = model.kind().clone() else { unreachable!() };
    let da = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.3..0.3));
    let db: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
    let est = TransportMapEstimate::affine(&a + &da, b.iter().zip(&db).map(|(x, y)| x + y).collect()).unwrap();
    let truth = da.norm_squared() + db.iter().map(|v| v * v).sum::<f64>();
    for seed in 0..20 {
        let p = Sampler::gaussian(vec![0.0; d], DMatrix::identity(d, d), seed).unwrap();
        let r = risk_mc(&est, &model, &p, 5000).unwrap();
        assert!((r.mean - truth).abs() < 4.0 * r.std_error, "seed {seed}: {r:?} vs {truth}");
    }
}

#[test]
fn exact_model_has_zero_risk() {
    let mut rng = rng_from_seed(10);
    for seed in 0..5 {
        let model = design::random_model(&mut rng, 3, 0.2, 5.0).unwrap();
        let p = Sampler::gaussian(vec![0.0; 3], DMatrix::identity(3, 3), seed).unwrap();
        let r = risk_mc(&TransportMapEstimate::ExactModel(model.clone()), &model, &p, 200).unwrap();
        assert_eq!((r.mean, r.std_error), (0.0, 0.0));
    }
}

#[test]
fn barycenters_are_convex_combinations_and_jensen_holds() {
    let mut rng = rng_from_seed(11);
    for trial in 0..50 {
        let d = 1 + trial % 3;
        let model = design::random_model(&mut rng, d, 0.2, 5.0).unwrap();
        let (n, m) = (rng.random_range(2..30), rng.random_range(2..30));
        let x = design::random_cloud(&mut rng, n, d, 1.0).unwrap();
        let y = design::random_cloud(&mut rng, m, d, 2.0).unwrap();
        let c = solve_kantorovich(&x, &y).unwrap();
        let t = one_nn_estimator(&c).unwrap();
        let coupling_err: f64 = c
            .entries()
            .iter()
            .map(|e| e.mass * sq_dist(y.point(e.target), &model.map(x.point(e.source))))
            .sum();
        let err = in_sample_error(&t, &model, &x).unwrap();
        assert!(err <= coupling_err + 1e-9, "{err} > {coupling_err}");
        // Each barycenter lies in the bounding box of the targets.
        for i in 0..n {
            let b = t.apply(x.point(i));
            for k in 0..d {
                let (lo, hi) = y.points().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p[k]), h.max(p[k])));
                assert!(b[k] >= lo - 1e-12 && b[k] <= hi + 1e-12);
            }
        }
    }
}

#[test]
fn one_nn_is_piecewise_constant() {
    let mut rng = rng_from_seed(12);
    let x = design::random_cloud(&mut rng, 40, 2, 1.0).unwrap();
    let y = design::random_cloud(&mut rng, 25, 2, 1.0).unwrap();
    let c = solve_kantorovich(&x, &y).unwrap();
    let t = one_nn_estimator(&c).unwrap();
    let TransportMapEstimate::OneNn(map) = &t else { unreachable!() };
    for _ in 0..2000 {
        let q1: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let q2: Vec<f64> = q1.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect();
        if map.cell(&q1) == map.cell(&q2) {
            assert_eq!(t.apply(&q1), t.apply(&q2));
        }
    }
}

#[test]
fn nn_decomposition_bounds_the_l2_error_on_finite_laws() {
    let mut rng = rng_from_seed(13);
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let d = 1 + trial % 3;
        let model = design::random_model(&mut rng, d, 0.2, 5.0).unwrap();
        let p = design::random_cloud(&mut rng, 60, d, 1.0).unwrap();
        let sampler = Sampler::finite(p.clone(), rng.random());
        let (n, m) = (rng.random_range(2..25), rng.random_range(2..25));
        let xn = sampler.with_seed(rng.random()).sample(n).unwrap();
        let ym = pushforward_measure(&sampler.with_seed(rng.random()).sample(m).unwrap(), &model).unwrap();
        let c = solve_kantorovich(&xn, &ym).unwrap();
        let t = one_nn_estimator(&c).unwrap();
        let dec = nn_decomposition(&t, &model, &xn, &p).unwrap();
        assert!(dec.l2_error <= dec.split_bound() * (1.0 + 1e-9) + 1e-12, "{dec:?}");
        assert!(dec.split_bound() <= dec.bound() * (1.0 + 1e-12));
        worst = worst.max(dec.ratio());
    }
    assert!(worst <= 1.0);
}

#[test]
fn estimate_evaluation_is_total() {
    let x = DiscreteMeasure::uniform_flat(2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    let c = solve_kantorovich(&x, &x).unwrap();
    let t = one_nn_estimator(&c).unwrap();
    for q in [[1e9, -1e9], [0.5, 0.5], [-3.0, 0.2]] {
        assert_eq!(t.apply(&q).len(), 2);
    }
    // Equidistant query resolves to the lower index.
    assert_eq!(t.apply(&[0.5, 0.5]), vec![0.0, 0.0]);
}
