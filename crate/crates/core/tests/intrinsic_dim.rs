use esid::intrinsic_dim::{collect_gradients, id_sweep, normalize_gradients, IdEstimateConfig, Normalization, PointSampler};
use esid::objective::{EvalCounter, GradientMode, InnerFunction, Objective, ShiftSpec, SyntheticObjective, SyntheticObjectiveSpec};
use esid::{Error, Result};

fn sphere(d: usize, true_id: usize) -> SyntheticObjective {
    SyntheticObjective::from_spec(&SyntheticObjectiveSpec {
        ambient_dim: d,
        true_id,
        inner_function: InnerFunction::Sphere,
        shift: ShiftSpec::default(),
        seed: 11,
    })
    .unwrap()
}

struct Flat(EvalCounter);

impl Objective for Flat {
    fn dim(&self) -> usize {
        4
    }
    fn counter(&self) -> &EvalCounter {
        &self.0
    }
    fn loss(&self, _x: &[f64]) -> Result<f64> {
        Ok(2.0)
    }
    fn analytic_gradient(&self, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; 4])
    }
}

const NORMAL: PointSampler = PointSampler::SeededNormal { scale: 1.0 };

#[test]
fn gradients_lie_in_row_space() {
    let f = sphere(40, 5);
    let set = collect_gradients(&f, &NORMAL, 100, GradientMode::Analytic, 0).unwrap();
    assert_eq!(set.samples.len(), 100);
    for s in &set.samples {
        let mut resid = s.g.clone();
        for i in 0..5 {
            let b = f.basis_row(i);
            let c: f64 = b.iter().zip(&s.g).map(|(p, q)| p * q).sum();
            resid.iter_mut().zip(b).for_each(|(r, bi)| *r -= c * bi);
        }
        let rn: f64 = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
        let gn: f64 = s.g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rn <= 1e-10 * gn);
    }
}

#[test]
fn single_sample_is_rejected() {
    let f = sphere(10, 2);
    assert!(matches!(
        collect_gradients(&f, &NORMAL, 1, GradientMode::Analytic, 0),
        Err(Error::InvalidSpec(_))
    ));
}

#[test]
fn constant_objective_leaves_nothing() {
    let f = Flat(EvalCounter::new());
    let set = collect_gradients(&f, &NORMAL, 20, GradientMode::Analytic, 0).unwrap();
    assert!(set.samples.is_empty());
    assert_eq!(set.dropped_zero, 20);
}

#[test]
fn unsupported_gradient_mode() {
    struct NoGrad(EvalCounter);
    impl Objective for NoGrad {
        fn dim(&self) -> usize {
            3
        }
        fn counter(&self) -> &EvalCounter {
            &self.0
        }
        fn loss(&self, x: &[f64]) -> Result<f64> {
            Ok(x.iter().sum())
        }
    }
    let f = NoGrad(EvalCounter::new());
    assert!(matches!(
        collect_gradients(&f, &NORMAL, 5, GradientMode::Analytic, 0),
        Err(Error::UnsupportedMode(_))
    ));
    let fd = collect_gradients(&f, &NORMAL, 5, GradientMode::CentralDifference { h: None }, 0).unwrap();
    assert!(fd.samples.iter().all(|s| s.g.iter().all(|v| (v - 1.0).abs() < 1e-8)));
}

#[test]
fn hand_standardization() {
    let n = normalize_gradients(&[vec![0.0, 0.0], vec![2.0, 2.0]], Normalization::PerCoordinate).unwrap();
    assert_eq!(n.rows, vec![vec![-1.0, -1.0], vec![1.0, 1.0]]);
    assert!(n.zero_variance.is_empty());
}

fn config(n: usize) -> IdEstimateConfig {
    IdEstimateConfig {
        n_samples: n,
        sampler: NORMAL,
        gradient_mode: GradientMode::Analytic,
        normalization: Normalization::default(),
        metric: Default::default(),
        seed: 3,
    }
}

#[test]
fn single_cell_sweep() {
    let reports = id_sweep(|l| Ok(Box::new(sphere(10 * l, 3)) as Box<dyn Objective>), &[2], &[5], &config(200));
    assert_eq!(reports.len(), 1);
    let rows = reports[0].rows(&[5]);
    assert_eq!(rows.len(), 1);
    let d = rows[0].d_hat.unwrap();
    assert!(d > 1.5 && d < 4.0, "{d}");
}

#[test]
fn sweep_records_bad_cells_and_continues() {
    let reports = id_sweep(
        |l| {
            if l == 3 {
                Err(Error::InvalidSpec("no objective for l=3".into()))
            } else {
                Ok(Box::new(sphere(10 * l, 3)) as Box<dyn Objective>)
            }
        },
        &[2, 3, 4],
        &[5, 500],
        &config(100),
    );
    assert_eq!(reports.len(), 3);
    assert!(reports[0].estimates.contains_key(&5));
    assert!(reports[0].errors.contains_key(&500));
    assert_eq!(reports[1].errors.len(), 2);
    assert!(reports[2].estimates.contains_key(&5));
}
