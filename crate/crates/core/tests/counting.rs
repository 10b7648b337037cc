use glyco_autograd::{Graph, Tensor};
use glyco_core::agp::*;
use glyco_core::domain::{CgmGrid, Origin, SmbgSample};
use glyco_core::eval::{baseline_no_interp, evaluate, overall_rmse};
use glyco_core::CoreError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(days: usize, slots: usize, values: Vec<f64>) -> CgmGrid {
    CgmGrid::new("p", 0, days, slots, values).unwrap()
}

fn naive(g: &CgmGrid) -> (usize, usize, usize) {
    let (mut above, mut within, mut below) = (0, 0, 0);
    for d in 0..g.days() {
        for t in 0..g.slots() {
            let v = g.get(d, t);
            if v > 180.0 {
                above += 1;
            } else if v < 70.0 {
                below += 1;
            } else {
                within += 1;
            }
        }
    }
    (above, within, below)
}

#[test]
fn hard_counting_examples() {
    let th = Thresholds::default();
    assert_eq!(compute_tr_hard(&grid(1, 4, vec![100.0; 4]), th).unwrap(), TrVector::new(0.0, 1.0, 0.0));
    assert_eq!(compute_tr_hard(&grid(1, 4, vec![70.0, 180.0, 70.0, 180.0]), th).unwrap().tir, 1.0);
    assert_eq!(
        compute_tr_hard(&grid(1, 4, vec![60.0, 100.0, 200.0, 100.0]), th).unwrap(),
        TrVector::new(0.25, 0.5, 0.25)
    );
    assert!(Thresholds::new(180.0, 70.0).is_err());
    assert!(Thresholds::new(0.0, 70.0).is_err());
    assert!(matches!(tr_hard_from_values(&[], th), Err(CoreError::Parameter(_))));
}

#[test]
fn hard_counting_matches_naive_loop() {
    let th = Thresholds::default();
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..14 * 288)
            .map(|_| match rng.random_range(0..10) {
                0 => 70.0,
                1 => 180.0,
                _ => rng.random_range(20.0..400.0),
            })
            .collect();
        let g = grid(14, 288, values);
        let (a, w, b) = naive(&g);
        let n = (14 * 288) as f64;
        let tr = compute_tr_hard(&g, th).unwrap();
        assert_eq!(tr, TrVector::new(a as f64 / n, w as f64 / n, b as f64 / n));
        let counts = count_in_ranges(g.values().iter().copied(), th);
        assert_eq!((counts.above, counts.within, counts.below), (a, w, b));
        assert_eq!(counts.total(), 14 * 288);
        // Three rounded quotients can miss 1 by an ulp or two.
        assert!((tr.tar + tr.tir + tr.tbr - 1.0).abs() <= 4.0 * f64::EPSILON);
    }
}

fn soft(values: &[f64], temperature: f64) -> (TrVector, Vec<f64>) {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![1, values.len()], values.to_vec()).unwrap());
    let s = compute_tr_soft(&mut g, x, Thresholds::default(), temperature).unwrap();
    let tr = TrVector::from_array(g.value(s.vector).data().try_into().unwrap());
    g.backward(s.tar).unwrap();
    (tr, g.grad_or_zeros(x).data().to_vec())
}

/// Values at least `gap` mg/dL away from both thresholds.
fn separated(rng: &mut ChaCha8Rng, n: usize, gap: f64) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v: f64 = rng.random_range(20.0..400.0);
            if (v - 70.0).abs() >= gap && (v - 180.0).abs() >= gap {
                break v;
            }
        })
        .collect()
}

fn max_gap(a: TrVector, b: TrVector) -> f64 {
    a.as_array().iter().zip(b.as_array()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn soft_counting_midpoint_and_gradient() {
    // Cells at 20 mg/dL add sigma(-32) ~ 1e-14 each to TAR.
    let (tr, grad) = soft(&[180.0, 20.0, 20.0, 20.0], 5.0);
    assert!((tr.tar - 0.125).abs() < 1e-12);
    assert!((tr.tar + tr.tir + tr.tbr - 1.0).abs() < 1e-15);
    // sigma'(0) / (D*T*temp)
    assert!((grad[0] - 0.25 / (4.0 * 5.0)).abs() < 1e-12);
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![1, 1], vec![100.0]).unwrap());
    assert!(compute_tr_soft(&mut g, x, Thresholds::default(), 0.0).is_err());
}

#[test]
fn soft_counting_converges_to_hard() {
    let th = Thresholds::default();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = separated(&mut rng, 14 * 288, 40.0);
        let hard = tr_hard_from_values(&values, th).unwrap();
        assert!(max_gap(soft(&values, 2.0).0, hard) < 1e-6);
        // Near a threshold, signed per-cell errors can cancel and make the
        // component error non-monotone, so the ordering is checked here.
        let gaps: Vec<f64> = [8.0, 4.0, 2.0, 1.0].iter().map(|t| max_gap(soft(&values, *t).0, hard)).collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    }
}

#[test]
fn evaluation_examples() {
    let truth: Vec<TrVector> =
        [(0.1, 0.8, 0.1), (0.3, 0.6, 0.1), (0.2, 0.5, 0.3)].iter().map(|t| TrVector::new(t.0, t.1, t.2)).collect();
    let r = evaluate(&truth, &truth).unwrap();
    for m in r.per_target {
        assert_eq!((m.rmse, m.mae), (0.0, 0.0));
    }
    assert_eq!(r.per_target[0].r2, Some(1.0));
    assert_eq!(r.per_target[2].r2, Some(1.0));

    let mean = |j: usize| truth.iter().map(|t| t.as_array()[j]).sum::<f64>() / 3.0;
    let flat: Vec<TrVector> = (0..3).map(|_| TrVector::new(mean(0), mean(1), mean(2))).collect();
    let r = evaluate(&flat, &truth).unwrap();
    for m in r.per_target {
        assert!(m.r2.unwrap().abs() < 1e-12);
    }
    assert!((r.overall_rmse - r.per_target.iter().map(|m| m.rmse).sum::<f64>() / 3.0).abs() < 1e-12);
    assert!((overall_rmse(&flat, &truth).unwrap() - r.overall_rmse).abs() < 1e-15);

    assert!(matches!(evaluate(&truth[..1], &truth[..1]), Err(CoreError::Parameter(_))));
    assert!(matches!(evaluate(&truth[..2], &truth), Err(CoreError::Dimension(_))));
    let csv = r.scatter_csv();
    assert!(csv.starts_with("target,truth,pred\n"));
    assert_eq!(csv.lines().count(), 1 + 9);
}

#[test]
fn baseline_examples() {
    let th = Thresholds::default();
    let s = |obs: &[f64]| {
        SmbgSample::from_observations(1, 10, obs.iter().enumerate().map(|(i, v)| (0, i, *v)), Origin::Real).unwrap()
    };
    assert_eq!(baseline_no_interp(&s(&[100.0, 150.0]), th).unwrap(), TrVector::new(0.0, 1.0, 0.0));
    assert_eq!(baseline_no_interp(&s(&[60.0, 100.0, 200.0, 100.0]), th).unwrap(), TrVector::new(0.25, 0.5, 0.25));
    assert_eq!(baseline_no_interp(&s(&[180.0, 180.0]), th).unwrap().tir, 1.0);
    assert!(matches!(baseline_no_interp(&s(&[]), th), Err(CoreError::UndefinedBaseline)));
}
