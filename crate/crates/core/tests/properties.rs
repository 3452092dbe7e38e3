use avglab::averaging::{Averager, AveragerConfig};
use avglab::harness::{Checkpoint, ExperimentConfig, Task};
use avglab::landscape::{make_direction_for, scan_1d, Normalization};
use avglab::mlp::{self, Activation, LossKind, MlpConfig, MlpParams};
use avglab::numerics::{Mat64, RngState, Vec64};
use avglab::toy::{band_fraction, expected_calibration_error};
use proptest::prelude::*;

fn seq(len: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-100.0..100.0f64, dim), len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ema_stays_in_hull(d in 0.0..0.9999f64, xs in seq(40, 3)) {
        let mut avg = Averager::init(AveragerConfig::ema(d), &xs[0]).unwrap();
        for x in &xs[1..] {
            avg.observe(x).unwrap();
        }
        for i in 0..3 {
            let lo = xs.iter().map(|x| x[i]).fold(f64::INFINITY, f64::min);
            let hi = xs.iter().map(|x| x[i]).fold(f64::NEG_INFINITY, f64::max);
            let s = avg.state().shadow[i];
            prop_assert!(s >= lo - 1e-9 && s <= hi + 1e-9);
        }
    }

    #[test]
    fn sema_without_switch_is_ema(d in 0.0..0.9999f64, xs in seq(30, 4)) {
        let mut a = Averager::init(AveragerConfig::ema(d), &xs[0]).unwrap();
        let mut b = Averager::init(AveragerConfig::sema(d, None), &xs[0]).unwrap();
        for x in &xs[1..] {
            let mut fa = x.clone();
            let mut fb = x.clone();
            a.observe(&fa).unwrap();
            b.observe(&fb).unwrap();
            a.maybe_switch(&mut fa).unwrap();
            b.maybe_switch(&mut fb).unwrap();
            prop_assert_eq!(&a.state().shadow, &b.state().shadow);
            prop_assert_eq!(fa, fb);
        }
    }

    #[test]
    fn switch_then_observe_keeps_shadow(d in 0.0..0.9999f64, period in 1u64..6, xs in seq(25, 3)) {
        let mut avg = Averager::init(AveragerConfig::sema(d, Some(period)), &xs[0]).unwrap();
        for x in &xs[1..] {
            let mut fast = x.clone();
            avg.observe(&fast).unwrap();
            if avg.maybe_switch(&mut fast).unwrap() {
                prop_assert_eq!(&fast[..], &avg.state().shadow[..]);
                let mut probe = avg.clone();
                probe.observe(&fast).unwrap();
                for (a, b) in probe.state().shadow.iter().zip(avg.state().shadow.iter()) {
                    prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn eval_params_is_pure(d in 0.0..0.99f64, xs in seq(10, 2), method in 0usize..5) {
        let cfg = match method {
            0 => AveragerConfig::default(),
            1 => AveragerConfig::ema(d),
            2 => AveragerConfig::sema(d, Some(3)),
            3 => AveragerConfig::swa(3, 2, 2),
            _ => AveragerConfig::lookahead(0.5, 4),
        };
        let mut avg = Averager::init(cfg, &xs[0]).unwrap();
        for x in &xs[1..] {
            let mut f = x.clone();
            avg.observe(&f).unwrap();
            avg.maybe_switch(&mut f).unwrap();
            let before = avg.state().clone();
            let e1 = avg.eval_params(&f);
            let e2 = avg.eval_params(&f);
            prop_assert_eq!(&before, avg.state());
            prop_assert_eq!(e1, e2);
        }
    }

    #[test]
    fn lookahead_slow_weights_in_hull(xs in seq(30, 2), k in 1u64..5, alpha in 0.05..1.0f64) {
        let mut avg = Averager::init(AveragerConfig::lookahead(alpha, k), &xs[0]).unwrap();
        for x in &xs[1..] {
            let mut f = x.clone();
            avg.observe(&f).unwrap();
            avg.maybe_switch(&mut f).unwrap();
        }
        for i in 0..2 {
            let lo = xs.iter().map(|x| x[i]).fold(f64::INFINITY, f64::min);
            let hi = xs.iter().map(|x| x[i]).fold(f64::NEG_INFINITY, f64::max);
            let s = avg.state().la_slow[i];
            prop_assert!(s >= lo - 1e-9 && s <= hi + 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        hidden in 1usize..8,
        values in prop::collection::vec(any::<f64>(), 64),
        step in any::<u64>(),
    ) {
        let cfg = MlpConfig::new(vec![2, hidden, 2], Activation::Relu, LossKind::SoftmaxCe).unwrap();
        let n = cfg.param_count();
        let flat: Vec<f64> = (0..n).map(|i| values[i % values.len()]).collect();
        let params = MlpParams::unflatten(cfg, Vec64(flat.clone())).unwrap();
        let ck = Checkpoint::new(&params, step, 3, "fast", 9, "abc");
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        prop_assert_eq!(&back.header, &ck.header);
        let got: Vec<u64> = back.params.iter().map(|v| v.to_bits()).collect();
        let want: Vec<u64> = flat.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn flatten_round_trip(sizes in prop::collection::vec(1usize..6, 2..5), seed in any::<u64>()) {
        let cfg = MlpConfig::new(sizes, Activation::Tanh, LossKind::Mse).unwrap();
        let p = MlpParams::init(cfg.clone(), &mut RngState::new(seed, 0));
        let q = MlpParams::unflatten(cfg, p.flatten()).unwrap();
        prop_assert_eq!(p.flat(), q.flat());
    }

    #[test]
    fn softmax_rows_are_distributions(logits in prop::collection::vec(-1e3..1e3f64, 12)) {
        let m = Mat64::new(4, 3, logits).unwrap();
        let p = mlp::softmax_rows(&m);
        for r in 0..4 {
            let row = p.row(r);
            prop_assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn config_round_trip(decay in 0.0..1.0f64, lr in 1e-6..1.0f64, seeds in prop::collection::vec(any::<u64>(), 1..6)) {
        let mut c = ExperimentConfig::for_task(Task::Toy);
        c.averager.decay = decay;
        c.optimizer = avglab::optim::OptimizerConfig::Sgd { lr, momentum: 0.0, weight_decay: 0.0 };
        c.seeds = seeds;
        let s = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&s).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn band_shrinks_with_sharper_logits(w0 in -3.0..3.0f64, w1 in -3.0..3.0f64, b in -1.0..1.0f64) {
        let pts: Vec<f64> = (0..400).flat_map(|i| {
            let (x, y) = ((i % 20) as f64 / 10.0 - 1.0, (i / 20) as f64 / 10.0 - 1.0);
            [x, y]
        }).collect();
        let points = Mat64::new(400, 2, pts).unwrap();
        let mut widths = Vec::new();
        for scale in [1.0, 2.0, 4.0] {
            let cfg = MlpConfig::new(vec![2, 2], Activation::Tanh, LossKind::SoftmaxCe).unwrap();
            let p = MlpParams::unflatten(cfg, Vec64(vec![0.0, 0.0, scale * w0, scale * w1, 0.0, scale * b])).unwrap();
            widths.push(band_fraction(&mlp::predict_proba(&p, &points).unwrap(), 0.1));
        }
        prop_assert!(widths[0] >= widths[1] && widths[1] >= widths[2]);
    }

    #[test]
    fn scan_is_order_independent(seed in any::<u64>()) {
        let mut rng = RngState::new(seed, 0);
        let c: Vec<f64> = (0..6).map(|_| rng.standard_normal() + 0.1).collect();
        let d = make_direction_for(&c, &[0..3, 3..6], &mut rng, Normalization::LayerwiseNorm).unwrap();
        let f = |p: &[f64]| (p.iter().map(|x| x.sin()).sum::<f64>(), None);
        let fwd = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let rev = [1.0, 0.5, 0.0, -0.5, -1.0];
        let a = scan_1d(&c, &d.vector, &fwd, f).unwrap();
        let b = scan_1d(&c, &d.vector, &rev, f).unwrap();
        let mut rl = b.loss.clone();
        rl.reverse();
        prop_assert_eq!(a.loss, rl);
    }
}

#[test]
fn calibrated_predictor_has_small_ece() {
    let mut rng = RngState::new(17, 0);
    let n = 100_000;
    let mut probs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let p1 = rng.uniform();
        probs.extend([1.0 - p1, p1]);
        labels.push(usize::from(rng.uniform() < p1));
    }
    let ece = expected_calibration_error(&Mat64::new(n, 2, probs).unwrap(), &labels, 10).unwrap();
    assert!(ece < 0.02, "ece {ece}");
}

#[test]
fn independent_directions_are_nearly_orthogonal() {
    let dim = 2000;
    let center: Vec<f64> = (0..dim).map(|i| 1.0 + (i % 7) as f64).collect();
    let blocks = vec![0..1000, 1000..2000];
    let mut worst: f64 = 0.0;
    for trial in 0..50u64 {
        let a = make_direction_for(&center, &blocks, &mut RngState::new(trial, 10), Normalization::LayerwiseNorm).unwrap();
        let b = make_direction_for(&center, &blocks, &mut RngState::new(trial, 11), Normalization::LayerwiseNorm).unwrap();
        let cos = a.vector.dot(&b.vector).unwrap() / (a.vector.norm() * b.vector.norm());
        worst = worst.max(cos.abs());
    }
    assert!(worst < 0.2, "max |cos| {worst}");
}
