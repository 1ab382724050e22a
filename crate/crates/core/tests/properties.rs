use esid::analysis::{confidence_diagnostics, gamma_op, gamma_pi};
use esid::intrinsic_dim::{mle_intrinsic_dimension, nearest_distances, normalize_gradients, DistanceMetric, Normalization};
use esid::objective::{gram_schmidt_rows, InnerFunction, LogitBundle, Objective, QuadraticObjective, ShiftSpec, SyntheticObjective, SyntheticObjectiveSpec};
use esid::optim::{run_optimizer, Algorithm, BudgetSpec, CmaEs, DampingMode, OnePlusOne, OptimizerConfig, SaEs, Zosgd};
use esid::projection::SubspaceProjection;
use esid::rng::SeededStream;
use proptest::prelude::*;

fn random_orthogonal(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut m = SeededStream::new(seed).normal_vec(n * n);
    gram_schmidt_rows(&mut m, n, n).unwrap();
    m.chunks(n).map(|r| r.to_vec()).collect()
}

fn matvec(q: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    q.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn cloud(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeededStream::new(seed);
    (0..n).map(|_| rng.normal_vec(dim)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn id_estimate_ignores_sample_order(seed in 0u64..10_000, shift in 1usize..150) {
        let rows = normalize_gradients(&cloud(150, 6, seed), Normalization::PerCoordinate).unwrap().rows;
        let mut rotated = rows.clone();
        rotated.rotate_left(shift);
        rotated.reverse();
        let a = mle_intrinsic_dimension(&rows, 8, DistanceMetric::Chord).unwrap().d_hat;
        let b = mle_intrinsic_dimension(&rotated, 8, DistanceMetric::Chord).unwrap().d_hat;
        prop_assert!((a - b).abs() <= 1e-9 * a, "{} vs {}", a, b);
    }

    #[test]
    fn id_estimate_ignores_rotation(seed in 0u64..10_000) {
        let rows = cloud(120, 5, seed);
        let q = random_orthogonal(5, seed ^ 0xabc);
        let turned: Vec<Vec<f64>> = rows.iter().map(|r| matvec(&q, r)).collect();
        for metric in [DistanceMetric::Chord, DistanceMetric::Cosine, DistanceMetric::Euclidean] {
            let a = mle_intrinsic_dimension(&rows, 6, metric).unwrap().d_hat;
            let b = mle_intrinsic_dimension(&turned, 6, metric).unwrap().d_hat;
            prop_assert!((a - b).abs() <= 1e-7 * a, "{:?}: {} vs {}", metric, a, b);
        }
    }

    #[test]
    fn neighbor_distances_sorted(seed in 0u64..10_000, k in 2usize..20) {
        let rows = cloud(60, 4, seed);
        for t in nearest_distances(&rows, k, DistanceMetric::Chord).unwrap() {
            prop_assert_eq!(t.len(), k);
            prop_assert!(t.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn gammas_satisfy_triangle(seed in 0u64..10_000) {
        let mut rng = SeededStream::new(seed);
        let p = SubspaceProjection::new(15, 4, seed, &esid::projection::XInitSource::SeededNormal { scale: 1.0 }).unwrap();
        let x_star = rng.normal_vec(15);
        let y_star: Vec<f64> = rng.normal_vec(4).iter().map(|v| v * 3.0).collect();
        let op = gamma_op(&x_star, &y_star, &p).unwrap();
        let pi = gamma_pi(&x_star, &y_star, &p).unwrap();
        prop_assert!(op >= 0.0 && pi >= 0.0);
        prop_assert!(pi <= 1.0 + op + 1e-12);
        prop_assert!(op <= 1.0 + pi + 1e-12);
    }

    #[test]
    fn gammas_ignore_change_of_basis(seed in 0u64..10_000) {
        let (d, k) = (10, 3);
        let mut rng = SeededStream::new(seed);
        let p = SubspaceProjection::new(d, k, seed, &esid::projection::XInitSource::SeededNormal { scale: 1.0 }).unwrap();
        let x_star = rng.normal_vec(d);
        let y_star = rng.normal_vec(k);
        let q = random_orthogonal(d, seed + 1);
        let columns: Vec<Vec<f64>> = (0..k).map(|j| matvec(&q, &(0..d).map(|i| p.entry(i, j)).collect::<Vec<_>>())).collect();
        let rows: Vec<Vec<f64>> = (0..d).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
        let turned = SubspaceProjection::from_parts(&rows, matvec(&q, p.x_init())).unwrap();
        let qx = matvec(&q, &x_star);
        let a = (gamma_op(&x_star, &y_star, &p).unwrap(), gamma_pi(&x_star, &y_star, &p).unwrap());
        let b = (gamma_op(&qx, &y_star, &turned).unwrap(), gamma_pi(&qx, &y_star, &turned).unwrap());
        prop_assert!((a.0 - b.0).abs() < 1e-10 && (a.1 - b.1).abs() < 1e-10, "{:?} vs {:?}", a, b);
    }

    #[test]
    fn raising_verbalizers_raises_p(logits in prop::collection::vec(-8.0..8.0f64, 6), c in 0.01..5.0f64) {
        let b = LogitBundle::new(logits.clone(), vec![1, 4], 1).unwrap();
        let mut raised = logits;
        raised[1] += c;
        raised[4] += c;
        let before = confidence_diagnostics(&[b]).unwrap().prediction_probability;
        let after = confidence_diagnostics(&[LogitBundle::new(raised, vec![1, 4], 1).unwrap()]).unwrap().prediction_probability;
        prop_assert!(after > before, "{} -> {}", before, after);
    }

    #[test]
    fn tau_depends_on_its_own_dimension(d in 1usize..100_000, d2 in 1usize..100_000, dt in 1usize..5000) {
        prop_assert_eq!(DampingMode::id_aware(d, dt).tau().unwrap(), DampingMode::id_aware(d2, dt).tau().unwrap());
        prop_assert_eq!(DampingMode::standard(d).tau().unwrap(), (2.0 * d as f64).sqrt());
        prop_assert_eq!(DampingMode::id_aware(d, dt).tau().unwrap(), (2.0 * dt as f64).sqrt());
    }

    #[test]
    fn synthetic_gradient_in_row_space(seed in 0u64..1000, x in prop::collection::vec(-3.0..3.0f64, 30)) {
        let spec = SyntheticObjectiveSpec { ambient_dim: 30, true_id: 4, inner_function: InnerFunction::Rastrigin, shift: ShiftSpec::default(), seed };
        let f = SyntheticObjective::from_spec(&spec).unwrap();
        let g = f.analytic_gradient(&x).unwrap();
        let mut resid = g.clone();
        for i in 0..4 {
            let b = f.basis_row(i);
            let c: f64 = b.iter().zip(&g).map(|(p, q)| p * q).sum();
            resid.iter_mut().zip(b).for_each(|(r, bi)| *r -= c * bi);
        }
        prop_assert!(norm(&resid) <= 1e-8 * norm(&g).max(1e-300));
        prop_assert_eq!(f.loss(&x).unwrap().to_bits(), f.loss(&x).unwrap().to_bits());
    }

    #[test]
    fn trajectories_are_elitist_and_replayable(seed in 0u64..1000, alg_idx in 0usize..4) {
        let alg = [Algorithm::OnePlusOne, Algorithm::Saes, Algorithm::Zosgd, Algorithm::Cmaes][alg_idx];
        let f = QuadraticObjective::isotropic(vec![1.0; 8]);
        let config = OptimizerConfig::new(alg).with_seed(seed).with_sigma0(0.3);
        let a = run_optimizer(&config, &f, &BudgetSpec::evals(300)).unwrap();
        prop_assert!(a.evals <= 300);
        prop_assert!(a.trajectory.windows(2).all(|w| w[1].eval_index == w[0].eval_index + 1));
        prop_assert!(a.trajectory.windows(2).all(|w| w[1].best_loss <= w[0].best_loss));
        let b = run_optimizer(&config, &f, &BudgetSpec::evals(300)).unwrap();
        prop_assert_eq!(a.best_loss.to_bits(), b.best_loss.to_bits());
        let la: Vec<u64> = a.trajectory.iter().map(|p| p.best_loss.to_bits()).collect();
        let lb: Vec<u64> = b.trajectory.iter().map(|p| p.best_loss.to_bits()).collect();
        prop_assert_eq!(la, lb);
    }
}

#[test]
fn id_estimate_grows_with_cloud_dimension() {
    let estimates: Vec<f64> = [2, 5, 10]
        .iter()
        .map(|&dim| {
            let rows = normalize_gradients(&cloud(1500, dim, 9), Normalization::PerCoordinate).unwrap().rows;
            mle_intrinsic_dimension(&rows, 10, DistanceMetric::default()).unwrap().d_hat
        })
        .collect();
    assert!(estimates.windows(2).all(|w| w[0] < w[1]), "{estimates:?}");
}

#[test]
fn evaluations_per_step() {
    let f = QuadraticObjective::isotropic(vec![0.5; 6]);
    let count = || f.evaluations();

    let mut es = OnePlusOne::init(&f, vec![0.0; 6], 1.0, 2.0, 1).unwrap();
    let before = count();
    es.step(&f).unwrap();
    assert_eq!(count() - before, 1);

    let mut sa = SaEs::new(vec![0.0; 6], 1.0, 2.0, 20, 5, 1).unwrap();
    let before = count();
    sa.step(&f).unwrap();
    assert_eq!(count() - before, 20);

    let mut zo = Zosgd::new(vec![0.0; 6], 1e-2, 1e-4, 7, 1).unwrap();
    let before = count();
    zo.step(&f).unwrap();
    assert_eq!(count() - before, 8);

    let mut cma = CmaEs::new(vec![0.0; 6], 1.0, 1).unwrap();
    let before = count();
    cma.step(&f).unwrap();
    assert_eq!(count() - before, cma.params().lambda as u64);
}
