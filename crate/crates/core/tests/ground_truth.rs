use nalgebra::DMatrix;
use otlab::design;
use otlab::exact_ot::{coupling_correlation, dot, solve_kantorovich, sq_dist, w2, PlanEntry, TransportPlan};
use otlab::ground_truth::{bregman_divergence, gaussian_pair_model, semidual_gap, semidual_value, BrenierModel};
use otlab::measures::DiscreteMeasure;
use otlab::rng::rng_from_seed;
use proptest::prelude::*;
use rand::Rng;

fn models(seed: u64, count: usize) -> Vec<BrenierModel> {
    let mut rng = rng_from_seed(seed);
    (0..count)
        .map(|k| {
            let d = 1 + k % 4;
            let (a, b) = design::curvature_pair(&mut rng, 0.2, 5.0);
            if k % 2 == 0 {
                design::random_affine_model(&mut rng, d, a, b).unwrap()
            } else {
                design::random_separable_model(&mut rng, d, a, b).unwrap()
            }
        })
        .collect()
}

fn probe(rng: &mut impl Rng, d: usize, r: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-r..r)).collect()
}

#[test]
fn conjugate_round_trips() {
    let mut rng = rng_from_seed(1);
    for model in models(10, 8) {
        let d = model.dim();
        for _ in 0..1000 {
            let x = probe(&mut rng, d, 4.0);
            let back = model.inverse_map(&model.map(&x)).unwrap();
            assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-10), "{x:?} vs {back:?}");
            let y = probe(&mut rng, d, 10.0);
            let fwd = model.map(&model.inverse_map(&y).unwrap());
            assert!(fwd.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-10));
        }
    }
}

#[test]
fn fenchel_young_equality_on_graph() {
    let mut rng = rng_from_seed(2);
    for model in models(20, 8) {
        for _ in 0..200 {
            let x = probe(&mut rng, model.dim(), 4.0);
            let y = model.map(&x);
            let v = model.potential(&x) + model.conjugate(&y).unwrap() - dot(&x, &y);
            assert!(v.abs() < 1e-10 * (1.0 + dot(&x, &y).abs()), "{v}");
        }
    }
}

#[test]
fn map_is_bi_lipschitz() {
    let mut rng = rng_from_seed(3);
    for model in models(30, 8) {
        for _ in 0..1000 {
            let x = probe(&mut rng, model.dim(), 4.0);
            let y = probe(&mut rng, model.dim(), 4.0);
            let r = (sq_dist(&model.map(&x), &model.map(&y)) / sq_dist(&x, &y)).sqrt();
            assert!(r >= model.alpha() * (1.0 - 1e-9) && r <= model.beta() * (1.0 + 1e-9));
        }
    }
}

#[test]
fn random_models_pass_curvature_probes() {
    for (k, model) in models(40, 20).iter().enumerate() {
        model.validate_probes(100, k as u64).unwrap();
    }
}

#[test]
fn bregman_sandwich() {
    let mut rng = rng_from_seed(4);
    for model in models(50, 6) {
        for _ in 0..1000 {
            let x = probe(&mut rng, model.dim(), 3.0);
            let y = probe(&mut rng, model.dim(), 6.0);
            let r2 = sq_dist(&y, &model.map(&x));
            let v = bregman_divergence(&model, &y, &x).unwrap();
            assert!(v >= r2 / (2.0 * model.beta()) - 1e-9, "{v} < {}", r2 / (2.0 * model.beta()));
            assert!(v <= r2 / (2.0 * model.alpha()) + 1e-9);
        }
    }
}

/// Product coupling mixed with the optimal one: feasible but generally suboptimal.
fn mixed_plan(rng: &mut impl Rng, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> TransportPlan {
    let opt = solve_kantorovich(mu, nu).unwrap();
    let t: f64 = rng.random_range(0.0..1.0);
    let mut entries: Vec<PlanEntry> = opt
        .entries()
        .iter()
        .map(|e| PlanEntry { mass: t * e.mass, ..*e })
        .collect();
    for i in 0..mu.len() {
        for j in 0..nu.len() {
            entries.push(PlanEntry {
                source: i,
                target: j,
                mass: (1.0 - t) * mu.weight(i) * nu.weight(j),
            });
        }
    }
    TransportPlan::new(mu.clone(), nu.clone(), entries).unwrap()
}

#[test]
fn semidual_dominates_correlation_and_gap_identity_holds() {
    let mut rng = rng_from_seed(5);
    let ms = models(60, 10);
    for k in 0..100 {
        let model = &ms[k % ms.len()];
        let d = model.dim();
        let (n, m) = (rng.random_range(1..10), rng.random_range(1..10));
        let mu = design::random_weighted_cloud(&mut rng, n, d, 1.5).unwrap();
        let nu = design::random_cloud(&mut rng, m, d, 2.0).unwrap();
        let plan = mixed_plan(&mut rng, &mu, &nu);
        let value = semidual_value(model, &mu, &nu).unwrap();
        let corr = coupling_correlation(&plan);
        let gap = semidual_gap(model, &plan).unwrap();
        assert!(value >= corr - 1e-9);
        assert!(gap >= -1e-12);
        assert!(((value - corr) - gap).abs() <= 1e-8 * (1.0 + gap.abs()));
    }
}

#[test]
fn gap_vanishes_only_on_the_graph() {
    let model = BrenierModel::affine(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]), vec![0.5, -1.0]).unwrap();
    let mut rng = rng_from_seed(6);
    let mu = design::random_cloud(&mut rng, 6, 2, 1.0).unwrap();
    let graph = TransportPlan::graph(&mu, &model).unwrap();
    assert!(semidual_gap(&model, &graph).unwrap().abs() < 1e-12);
    // Swap the images of two atoms: a feasible coupling off the graph.
    let swapped: Vec<PlanEntry> = graph
        .entries()
        .iter()
        .map(|e| PlanEntry {
            target: match e.target {
                0 => 1,
                1 => 0,
                t => t,
            },
            ..*e
        })
        .collect();
    let off = TransportPlan::new(mu, graph.target().clone(), swapped).unwrap();
    assert!(semidual_gap(&model, &off).unwrap() > 1e-6);
}

#[test]
fn gaussian_map_moves_moments() {
    let g = gaussian_pair_model(vec![0.0], DMatrix::from_element(1, 1, 1.0), vec![1.0], DMatrix::from_element(1, 1, 4.0))
        .unwrap();
    let n = 10_000;
    let xs = g.source.with_seed(17).sample(n).unwrap();
    let ys: Vec<f64> = xs.points().map(|x| g.model.map(x)[0]).collect();
    let mean = ys.iter().sum::<f64>() / n as f64;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // se(mean) = 2/sqrt(n); se(var) ≈ var·sqrt(2/(n-1)).
    assert!((mean - 1.0).abs() < 5.0 * 2.0 / (n as f64).sqrt());
    assert!((var - 4.0).abs() < 5.0 * 4.0 * (2.0 / (n - 1) as f64).sqrt());
}

#[test]
fn gaussian_pushforward_matches_target_samples() {
    let mut rng = rng_from_seed(7);
    let d = 3;
    let q1 = design::random_orthogonal(&mut rng, d);
    let cov1 = &q1 * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 1.0, 2.0])) * q1.transpose();
    let cov2 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 3.0, 0.7]));
    let g = gaussian_pair_model(vec![0.0; d], cov1, vec![1.0, -1.0, 0.0], cov2).unwrap();
    assert!(g.model.alpha() >= g.caffarelli.lower - 1e-9);
    assert!(g.model.beta() <= g.caffarelli.upper + 1e-9);
    for seed in 0..20u64 {
        let pushed = otlab::measures::pushforward_measure(&g.source.with_seed(3 * seed).sample(500).unwrap(), &g.model).unwrap();
        let qm = g.target.with_seed(3 * seed + 1).sample(500).unwrap();
        let qm2 = g.target.with_seed(3 * seed + 2).sample(500).unwrap();
        let ratio = w2(&pushed, &qm).unwrap() / w2(&qm2, &qm).unwrap();
        assert!((0.5..=2.0).contains(&ratio), "seed {seed}: ratio {ratio}");
    }
}

#[test]
fn non_spd_covariance_is_rejected() {
    let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(gaussian_pair_model(vec![0.0; 2], bad, vec![0.0; 2], DMatrix::identity(2, 2)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bregman_is_nonnegative(seed in any::<u64>(), x in -5.0f64..5.0, y in -20.0f64..20.0) {
        let model = &models(seed, 2)[1];
        let xv = vec![x; model.dim()];
        let yv = vec![y; model.dim()];
        prop_assert!(bregman_divergence(model, &yv, &xv).unwrap() >= -1e-10);
    }
}
