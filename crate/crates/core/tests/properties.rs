use bttf_core::augment::SegmentSpec;
use bttf_core::ensemble::{meancorr_stat, select_k, variance_stat, KGrid};
use bttf_core::ingest::{load_csv, write_csv, DatasetSpec};
use bttf_core::linear::{
    dataset_mse, init_model, train, Examples, ModelKind, Optimizer, Strategy, TrainConfig, Trainer,
};
use bttf_core::metrics::{evaluate, gain_percent};
use bttf_core::refine::assign_ranks;
use bttf_core::series::{fit_scaler, make_windows, TimeSeries};
use bttf_core::Matrix;
use proptest::prelude::*;
use proptest::strategy::Strategy as PropStrategy;

fn pool(n: usize, rows: usize, cols: usize) -> impl PropStrategy<Value = Vec<Matrix>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, rows * cols), n)
        .prop_map(move |ms| ms.into_iter().map(|d| Matrix::from_vec(rows, cols, d).unwrap()).collect())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn examples(rows: usize, l: usize, h: usize, seed: u64) -> Examples {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..rows * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..rows * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Examples::new(Matrix::from_vec(rows, l, x).unwrap(), Matrix::from_vec(rows, h, y).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn windows_never_look_ahead(values in prop::collection::vec(-100.0f64..100.0, 2..120), l in 1usize..20, h in 1usize..20) {
        let s = TimeSeries::new("x", values.clone()).unwrap();
        match make_windows(&s, l, h) {
            Ok(ws) => {
                prop_assert_eq!(ws.len(), values.len() + 1 - l - h);
                for w in &ws {
                    prop_assert_eq!(&w.input[..], &values[w.anchor + 1 - l..=w.anchor]);
                    prop_assert_eq!(&w.target[..], &values[w.anchor + 1..w.anchor + 1 + h]);
                }
            }
            Err(_) => prop_assert!(values.len() < l + h),
        }
    }

    #[test]
    fn scaler_round_trips(values in prop::collection::vec(-1e3f64..1e3, 2..200)) {
        let s = TimeSeries::new("x", values.clone()).unwrap();
        if let Ok(sc) = fit_scaler(&s) {
            for v in &values {
                prop_assert!((sc.invert(sc.apply(*v)) - v).abs() <= 1e-10 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn forward_is_affine(l in 1usize..12, h in 1usize..6, seed in 0u64..1000, a in -3.0f64..3.0,
                         x in prop::collection::vec(-1.0f64..1.0, 12), y in prop::collection::vec(-1.0f64..1.0, 12)) {
        for kind in [ModelKind::Plain, ModelKind::Dlinear] {
            let m = init_model(kind, l, h, 3, seed).unwrap();
            let (x, y) = (&x[..l], &y[..l]);
            let mix: Vec<f64> = x.iter().zip(y).map(|(p, q)| a * p + (1.0 - a) * q).collect();
            let (fx, fy, fm) = (m.forward(x).unwrap(), m.forward(y).unwrap(), m.forward(&mix).unwrap());
            for i in 0..h {
                prop_assert!(close(fm[i], a * fx[i] + (1.0 - a) * fy[i], 1e-10));
            }
        }
    }

    #[test]
    fn variance_scales_and_correlation_is_invariant(ms in pool(6, 4, 3), c in 0.1f64..10.0, shift in -50.0f64..50.0) {
        let scaled: Vec<Matrix> = ms.iter().map(|m| Matrix::from_vec(4, 3, m.as_slice().iter().map(|v| c * v).collect()).unwrap()).collect();
        let shifted: Vec<Matrix> = ms.iter().map(|m| Matrix::from_vec(4, 3, m.as_slice().iter().map(|v| v + shift).collect()).unwrap()).collect();
        for k in 1..=6 {
            let v = variance_stat(&ms, k).unwrap();
            let r = meancorr_stat(&ms, k).unwrap();
            prop_assert!(close(variance_stat(&scaled, k).unwrap(), c * c * v, 1e-9));
            prop_assert!(close(meancorr_stat(&scaled, k).unwrap(), r, 1e-9));
            prop_assert!(close(variance_stat(&shifted, k).unwrap(), v, 1e-8));
            prop_assert!(close(meancorr_stat(&shifted, k).unwrap(), r, 1e-8));
        }
        let grid = KGrid { step: 2, candidates: vec![2, 4, 6] };
        prop_assert_eq!(select_k(&ms, &grid, 1e-8).unwrap().k_star, select_k(&shifted, &grid, 1e-8).unwrap().k_star);
    }

    #[test]
    fn stats_ignore_cell_storage_order(ms in pool(5, 3, 4)) {
        let transposed: Vec<Matrix> = ms.iter().map(|m| {
            let d = (0..4).flat_map(|c| (0..3).map(move |r| (r, c))).map(|(r, c)| m.get(r, c)).collect();
            Matrix::from_vec(4, 3, d).unwrap()
        }).collect();
        for k in 1..=5 {
            prop_assert!(close(variance_stat(&ms, k).unwrap(), variance_stat(&transposed, k).unwrap(), 1e-12));
            prop_assert!(close(meancorr_stat(&ms, k).unwrap(), meancorr_stat(&transposed, k).unwrap(), 1e-12));
        }
    }

    #[test]
    fn evaluation_is_permutation_invariant(p in prop::collection::vec(-10.0f64..10.0, 12), t in prop::collection::vec(-10.0f64..10.0, 12), rot in 0usize..12) {
        let e = evaluate(&Matrix::from_vec(3, 4, p.clone()).unwrap(), &Matrix::from_vec(3, 4, t.clone()).unwrap()).unwrap();
        let (mut p2, mut t2) = (p, t);
        p2.rotate_left(rot);
        t2.rotate_left(rot);
        let e2 = evaluate(&Matrix::from_vec(3, 4, p2).unwrap(), &Matrix::from_vec(3, 4, t2).unwrap()).unwrap();
        prop_assert!(close(e.mse, e2.mse, 1e-12));
        prop_assert!(close(e.mae, e2.mae, 1e-12));
        prop_assert!(e.mae <= e.mse.sqrt() + 1e-12);
    }

    #[test]
    fn gain_inverts(base in 0.01f64..100.0, improved in 0.0f64..100.0) {
        let g = gain_percent(base, improved).unwrap();
        prop_assert!(close(base * (1.0 - g / 100.0), improved, 1e-10));
    }

    #[test]
    fn ranks_follow_validation_error(mse in prop::collection::vec(0.0f64..2.0, 1..30)) {
        let segs: Vec<SegmentSpec> = (0..mse.len()).map(|i| SegmentSpec { index: i + 1, start: i, end: i + 3 }).collect();
        let ranks = assign_ranks(&mse, &segs);
        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (1..=mse.len()).collect::<Vec<_>>());
        for i in 0..mse.len() {
            for j in 0..mse.len() {
                if mse[i] < mse[j] {
                    prop_assert!(ranks[i] < ranks[j]);
                }
            }
        }
    }

    #[test]
    fn csv_round_trip(values in prop::collection::vec(-1e6f64..1e6, 1..60)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_csv(&TimeSeries::new("s", values.clone()).unwrap(), "OT", &path).unwrap();
        let back = load_csv(&DatasetSpec::new(&path, "s")).unwrap();
        prop_assert_eq!(back.series.values(), &values[..]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn early_stopping_reports_min_validation(seed in 0u64..1000, patience in 1usize..4) {
        let (tr, va) = (examples(40, 6, 2, seed), examples(12, 6, 2, seed + 1));
        let cfg = TrainConfig { strategy: Strategy::EarlyStopping, patience, max_epochs: 10, seed, ..TrainConfig::default() };
        let (model, rep) = train(init_model(ModelKind::Plain, 6, 2, 0, seed).unwrap(), &tr, Some(&va), &cfg).unwrap();
        let min = rep.val_loss.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(rep.best_val_loss, Some(min));
        prop_assert!(close(dataset_mse(&model, &va).unwrap(), min, 1e-12));
    }

    #[test]
    fn training_is_deterministic(seed in 0u64..1000) {
        let (tr, va) = (examples(30, 5, 3, seed), examples(10, 5, 3, seed + 7));
        let run = || train(init_model(ModelKind::Dlinear, 5, 3, 3, seed).unwrap(), &tr, Some(&va), &TrainConfig { seed, ..TrainConfig::default() }).unwrap();
        let (a, b) = (run(), run());
        prop_assert_eq!(a.0.to_bytes(), b.0.to_bytes());
        prop_assert_eq!(a.1, b.1);
    }
}

#[test]
fn small_sgd_steps_decrease_a_quadratic_loss() {
    // Noise-free linear targets: full-batch gradient descent with a small step is monotone.
    let tr = examples(32, 4, 2, 3);
    let truth = init_model(ModelKind::Plain, 4, 2, 0, 99).unwrap();
    let targets = truth.predict(&tr.inputs).unwrap();
    let data = Examples::new(tr.inputs.clone(), targets).unwrap();
    let cfg = TrainConfig { learning_rate: 0.05, optimizer: Optimizer::Sgd, batch_size: 32, ..TrainConfig::default() };
    let mut model = init_model(ModelKind::Plain, 4, 2, 0, 1).unwrap();
    let mut trainer = Trainer::new(&cfg, model.num_params());
    let mut last = dataset_mse(&model, &data).unwrap();
    for _ in 0..50 {
        trainer.step(&mut model, &data).unwrap();
        let now = dataset_mse(&model, &data).unwrap();
        assert!(now <= last + 1e-15, "{now} > {last}");
        last = now;
    }
}
