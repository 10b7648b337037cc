use glyco_autograd::check::{check_gradients, CheckOpts};
use glyco_autograd::{Binding, Graph, Tensor, TensorError};
use glyco_core::data::{generate_synthetic_grid, SyntheticProfile};
use glyco_core::sampling::{select_topk_separated, SelectionConstraint, SlotScorer};
use glyco_core::selector::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ANCHORS: [usize; 3] = [84, 144, 228];

fn small_cfg() -> AetcnConfig {
    AetcnConfig { hidden: 16, ..AetcnConfig::default() }
}

fn days(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let profile = SyntheticProfile { days: n, ..SyntheticProfile::default() };
    let grid = generate_synthetic_grid(&profile, seed).unwrap();
    (0..n).map(|d| grid.day(d).to_vec()).collect()
}

fn pair(day: &[f64], observed: &[usize]) -> SelectorPair {
    SelectorPair {
        input: selector_input(day, 16).unwrap(),
        target: make_selector_targets(observed, day.len(), TARGET_TOLERANCE).unwrap(),
    }
}

#[test]
fn zero_head_scores_one_half_and_keeps_length() {
    let mut model = Aetcn::new(AetcnConfig::default(), 3).unwrap();
    let (w, b) = model.head_ids();
    for id in [w, b] {
        model.params_mut().get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    for t in [1, 7, 288] {
        let day: Vec<f64> = (0..t).map(|i| 90.0 + i as f64).collect();
        let s = model.score_day(&day).unwrap();
        assert_eq!(s.len(), t);
        assert!(s.iter().all(|v| *v == 0.5));
    }
}

#[test]
fn branch_kernel_gradient_matches_finite_differences() {
    let model = Aetcn::new(small_cfg(), 5).unwrap();
    let day = &days(1, 2)[0];
    let p = pair(&day[..64], &[10, 40]);
    let inputs: Vec<Tensor> = model.params().values().to_vec();
    let (w, _) = model.branch_ids(1, 2);
    let coords: Vec<(usize, usize)> = (0..inputs[w.index()].len()).step_by(3).map(|j| (w.index(), j)).collect();
    let build = |g: &mut Graph, vars: &[glyco_autograd::Var]| {
        let binding = Binding::from_vars(vars.to_vec());
        model.loss(g, &binding, &p.input, &p.target).map_err(|e| TensorError::Usage(e.to_string()))
    };
    let report = check_gradients(build, &inputs, Some(&coords), CheckOpts::default()).unwrap();
    assert!(report.max_rel_err() < 1e-3, "{:?}", report.worst());
}

#[test]
fn scores_are_causal_and_bounded() {
    let model = Aetcn::new(small_cfg(), 9).unwrap();
    let day = days(1, 4).remove(0);
    let base = model.score_day(&day).unwrap();
    let mut bumped = day.clone();
    bumped[150] = 390.0;
    let after = model.score_day(&bumped).unwrap();
    assert_eq!(base[..150], after[..150]);
    assert!(base[150..].iter().zip(&after[150..]).any(|(a, b)| a != b));
    assert!(base.iter().chain(&after).all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn single_pair_overfits() {
    let day = days(1, 7).remove(0);
    let pairs = vec![pair(&day, &ANCHORS)];
    let opts = SelectorTrainOpts { epochs: 500, lr: 1e-2, batch_size: 1, seed: 0 };
    let (_, trace) = train_selector(&pairs, small_cfg(), opts).unwrap();
    assert!(*trace.last().unwrap() < 0.1, "final BCE {}", trace.last().unwrap());
}

#[test]
fn random_labels_carry_no_signal() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let pairs: Vec<SelectorPair> = days(8, 8)
        .iter()
        .map(|d| SelectorPair {
            input: selector_input(d, 16).unwrap(),
            target: (0..d.len()).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect(),
        })
        .collect();
    let opts = SelectorTrainOpts { epochs: 30, lr: 1e-2, batch_size: 4, seed: 0 };
    let (_, trace) = train_selector(&pairs, small_cfg(), opts).unwrap();
    let floor = std::f64::consts::LN_2 - 0.05;
    assert!(*trace.last().unwrap() >= floor, "final BCE {}", trace.last().unwrap());
}

#[test]
fn learns_fixed_measurement_times() {
    let held_in = days(20, 21);
    let pairs: Vec<SelectorPair> = held_in.iter().map(|d| pair(d, &ANCHORS)).collect();
    let opts = SelectorTrainOpts { epochs: 200, lr: 1e-2, batch_size: 4, seed: 1 };
    let (model, _) = train_selector(&pairs, small_cfg(), opts).unwrap();
    let c = SelectionConstraint::new(3, 12).unwrap();
    let good = held_in
        .iter()
        .filter(|d| {
            let picks = select_topk_separated(&model.score_day(d).unwrap(), c).unwrap();
            picks.iter().all(|t| ANCHORS.iter().any(|a| a.abs_diff(*t) <= 3))
        })
        .count();
    assert!(good >= 18, "{good}/20 days on the anchors");
}

#[test]
fn persistence_round_trip() {
    let model = Aetcn::new(small_cfg(), 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("selector.bin");
    model.save(&path).unwrap();
    let back = Aetcn::load(&path).unwrap();
    assert_eq!(back.config(), model.config());
    assert_eq!(back.params().flatten(), model.params().flatten());
    assert_eq!(Aetcn::from_bytes(&model.to_bytes()).unwrap().params().flatten(), model.params().flatten());
    let mut bytes = model.to_bytes();
    bytes.truncate(bytes.len() - 8);
    assert!(Aetcn::from_bytes(&bytes).is_err());
    assert!(Aetcn::from_bytes(b"not a selector").is_err());
}

#[test]
fn selector_pairs_skip_unmeasured_days() {
    let grid = generate_synthetic_grid(&SyntheticProfile { days: 3, ..SyntheticProfile::default() }, 1).unwrap();
    let sample = glyco_core::domain::SmbgSample::from_observations(
        3,
        288,
        [(0, 84, grid.get(0, 84)), (2, 10, grid.get(2, 10))],
        glyco_core::domain::Origin::Real,
    )
    .unwrap();
    let pairs = selector_pairs(&grid, &sample, 16).unwrap();
    assert_eq!(pairs.len(), 2);
    assert_eq!(pairs[0].target[84], 1.0);
    assert_eq!(pairs[1].target[10], 1.0);
}
