use std::path::Path;

use avglab::averaging::{AveragerConfig, Averager, Method};
use avglab::error::Error;
use avglab::harness::{
    cmd_landscape, cmd_nqm, cmd_sweep, cmd_train, Checkpoint, ExperimentConfig, Task, TrainSummary,
};
use avglab::mlp::{Activation, Batch, LossKind, MlpConfig, MlpParams};
use avglab::nqm::{estimate_variance_mc, NqmConfig, NqmMethod};
use avglab::numerics::RngState;
use avglab::toy::{gen_dataset, minibatches, ToySpec};
use avglab::train::train_loop;
use serde_json::Value;

fn small(task: Task, epochs: u64, seeds: Vec<u64>) -> ExperimentConfig {
    let mut c = ExperimentConfig::for_task(task);
    c.train.epochs = epochs;
    c.train.grid_resolution = 21;
    c.train.boundary_every = epochs;
    c.train.checkpoint_every = epochs.max(2) / 2;
    c.averager.switch_epochs = Some(3.0);
    c.seeds = seeds;
    c
}

fn read_csv(path: &Path) -> (String, Vec<csv::StringRecord>, csv::StringRecord) {
    let text = std::fs::read_to_string(path).unwrap();
    let first = text.lines().next().unwrap().to_string();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = r.headers().unwrap().clone();
    let rows = r.records().map(|x| x.unwrap()).collect();
    (first, rows, header)
}

fn col(header: &csv::StringRecord, name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

fn summary(dir: &Path) -> TrainSummary {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn metrics_have_one_row_per_epoch_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(Task::Toy, 12, vec![3, 1]);
    let out = cmd_train(&cfg, tmp.path(), 2).unwrap();
    let (first, rows, header) = read_csv(&tmp.path().join("metrics.csv"));
    assert!(first.starts_with("# avglab-csv v1"));
    assert!(first.contains(&out.config_hash));
    assert_eq!(rows.len(), 24);
    let (s, st) = (col(&header, "seed"), col(&header, "step"));
    let keys: Vec<(u64, u64)> = rows.iter().map(|r| (r[s].parse().unwrap(), r[st].parse().unwrap())).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert_eq!(keys[0], (1, 5));
    let ckpts = std::fs::read_dir(tmp.path().join("checkpoints/seed3")).unwrap().count();
    assert_eq!(ckpts, 4);
}

#[test]
fn averaging_never_touches_fast_weights_without_switches() {
    let run = |method: Method| {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = small(Task::Toy, 15, vec![0]);
        cfg.averager.method = method;
        cfg.averager.switch_epochs = None;
        cmd_train(&cfg, tmp.path(), 1).unwrap();
        let (_, rows, header) = read_csv(&tmp.path().join("metrics.csv"));
        let cols = ["train_loss", "fast_eval_loss", "fast_eval_accuracy", "fast_ece"].map(|c| col(&header, c));
        rows.iter().map(|r| cols.map(|c| r[c].to_string())).collect::<Vec<_>>()
    };
    assert_eq!(run(Method::None), run(Method::Ema));
}

#[test]
fn one_cell_sweep_matches_train() {
    let mut cfg = small(Task::Sweep, 8, vec![0, 1]);
    cfg.sweep.decays = vec![0.9];
    cfg.sweep.switch_epochs = vec![2.0];
    let tmp = tempfile::tempdir().unwrap();
    cmd_sweep(&cfg, &tmp.path().join("s"), 2).unwrap();
    let sweep: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("s/sweep.json")).unwrap()).unwrap();

    let mut tcfg = small(Task::Toy, 8, vec![0, 1]);
    tcfg.train.batch_size = cfg.train.batch_size;
    tcfg.train.boundary_every = cfg.train.boundary_every;
    tcfg.averager.decay = 0.9;
    tcfg.averager.switch_epochs = Some(2.0);
    cmd_train(&tcfg, &tmp.path().join("t"), 1).unwrap();
    let train = summary(&tmp.path().join("t"));

    let agg = &sweep["ranked"][0]["aggregate"];
    assert_eq!(agg["accuracy"]["mean"].as_f64().unwrap(), train.aggregate.accuracy.mean);
    assert_eq!(agg["ece"]["mean"].as_f64().unwrap(), train.aggregate.ece.mean);
    assert_eq!(agg["loss"]["std"].as_f64().unwrap(), train.aggregate.loss.std);
}

#[test]
fn landscape_center_matches_recorded_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(Task::Toy, 10, vec![0]);
    cfg.train.checkpoint_every = 5;
    cmd_train(&cfg, &tmp.path().join("t"), 1).unwrap();
    let recorded = summary(&tmp.path().join("t")).finals[0].averaged.loss;

    let dir = tmp.path().join("t/checkpoints/seed0");
    let files: Vec<_> = ["epoch00005_averaged.ckpt", "epoch00010_averaged.ckpt"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    let mut lcfg = ExperimentConfig::for_task(Task::Landscape);
    lcfg.landscape.range_1d.points = 5;
    lcfg.landscape.range_2d.points = 3;
    lcfg.landscape.plane = avglab::harness::PlaneKind::Random;
    cmd_landscape(&lcfg, &files, &tmp.path().join("l"), 2).unwrap();
    let (_, rows, header) = read_csv(&tmp.path().join("l/landscape_1d.csv"));
    let (sp, al, lo) = (col(&header, "split"), col(&header, "alpha"), col(&header, "loss"));
    let center = rows
        .iter()
        .find(|r| &r[sp] == "test" && r[al].parse::<f64>().unwrap() == 0.0)
        .unwrap();
    let got: f64 = center[lo].parse().unwrap();
    assert!((got - recorded).abs() <= 1e-12 * recorded.abs(), "{got} vs {recorded}");
}

#[test]
fn checkpoint_for_other_model_is_rejected() {
    let cfg = MlpConfig::new(vec![2, 4, 2], Activation::Relu, LossKind::SoftmaxCe).unwrap();
    let p = MlpParams::init(cfg, &mut RngState::new(0, 2));
    let ck = Checkpoint::new(&p, 1, 1, "fast", 0, "h");
    let other = MlpConfig::new(vec![2, 5, 2], Activation::Relu, LossKind::SoftmaxCe).unwrap();
    assert!(matches!(ck.params_for(&other), Err(Error::Shape(_))));
    let mut bytes = ck.to_bytes();
    bytes.truncate(bytes.len() - 3);
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Shape(_))));
}

#[test]
fn noiseless_quadratic_has_zero_variance() {
    let mut c = NqmConfig::new(vec![0.5, 2.0], vec![0.0, 0.0], 0.1, 0.5);
    c.trials = 2;
    for m in [NqmMethod::Sgd, NqmMethod::Ema, NqmMethod::SemaCoupled] {
        let est = estimate_variance_mc(&c, m).unwrap();
        assert!(est.empirical.iter().all(|v| *v == 0.0), "{m:?}");
        assert!(est.analytic.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn unstable_grid_fails_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let mut cfg = ExperimentConfig::for_task(Task::Nqm);
    cfg.nqm.lrs = vec![0.01, 1.5];
    let err = cmd_nqm(&cfg, &out, 1).unwrap_err();
    assert!(matches!(err, Error::Domain(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert!(!out.exists());
}

#[test]
fn evaluation_sees_weights_before_the_switch() {
    let data = gen_dataset(&ToySpec::moons(4)).unwrap();
    let model = MlpConfig::default();
    let fast = MlpParams::init(model, &mut RngState::new(4, 2));
    let batches = minibatches(&data.labeled, Some(25), 4).unwrap();
    let mut opt = avglab::optim::OptimizerConfig::Sgd { lr: 0.05, momentum: 0.0, weight_decay: 0.0 }
        .build(fast.flat().len())
        .unwrap();
    let avg = Averager::init(AveragerConfig::sema(0.9, Some(batches.len() as u64 * 2)), fast.flat()).unwrap();
    let out = train_loop(fast, &batches, 6, &mut opt, avg, |_, _, f, e| {
        Ok(f.flat().sub(e.flat()).unwrap().max_abs())
    })
    .unwrap();
    for log in &out.epochs {
        assert!(log.eval > 0.0, "epoch {}", log.epoch);
        assert_eq!(log.switched_after_eval, log.epoch % 2 == 0);
    }
    assert_eq!(out.fast.flat(), &out.averager.state().shadow);
}

#[test]
fn minibatches_partition_the_data() {
    let data = gen_dataset(&ToySpec::circles(1)).unwrap();
    let n = data.labeled.len();
    let parts = minibatches(&data.labeled, Some(7), 1).unwrap();
    assert_eq!(parts.len(), n.div_ceil(7));
    assert!(parts[..parts.len() - 1].iter().all(|b| b.len() == 7));
    let key = |b: &Batch| -> Vec<(u64, u64, usize)> {
        (0..b.len())
            .map(|i| {
                let r = b.inputs.row(i);
                (r[0].to_bits(), r[1].to_bits(), b.labels().unwrap()[i])
            })
            .collect()
    };
    let mut all: Vec<_> = parts.iter().flat_map(key).collect();
    let mut want = key(&data.labeled);
    all.sort();
    want.sort();
    assert_eq!(all, want);
    assert_eq!(parts, minibatches(&data.labeled, Some(7), 1).unwrap());
    assert_ne!(parts, minibatches(&data.labeled, Some(7), 2).unwrap());
    assert!(minibatches(&data.labeled, Some(0), 1).is_err());
}
