use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{switch_iters, ExperimentConfig, PlaneKind, ScanRange};
use super::svg::{self, Series};
use super::{pool, Aggregate, CommandOutput, CSV_SCHEMA};
use crate::averaging::Method;
use crate::error::{Error, Result};
use crate::landscape::{
    linspace, make_direction, pca_directions, project_trajectory, scan_1d, scan_2d, EvalPoint,
    Normalization, ScanGrid,
};
use crate::mlp::{self, Batch, MlpConfig, MlpParams};
use crate::nqm::{
    estimate_sigma_t, variance_report, NqmConfig, SigmaTEstimate, SigmaTOptions, VarianceReport,
};
use crate::numerics::{ParamVector, RngState, Vec64};
use crate::toy::{gen_dataset, run_toy_experiment, BoundaryMetrics, ToyRun};

fn prepare(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.json"), cfg.to_json() + "\n")?;
    Ok(())
}

fn csv_writer(path: &Path, what: &str, hash: &str) -> Result<csv::Writer<File>> {
    let mut f = File::create(path)?;
    writeln!(f, "# {CSV_SCHEMA} {what} config_hash={hash}")?;
    Ok(csv::Writer::from_writer(f))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn write_rows<T: Serialize>(path: &Path, what: &str, hash: &str, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path, what, hash)?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

/// One toy run for `seed` under `cfg`. The seed drives the data, the
/// initialization and any minibatch order.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<ToyRun> {
    let mut spec = cfg.dataset.clone();
    spec.seed = seed;
    run_toy_experiment(&spec, &cfg.toy_train(), &cfg.averager_config())
}

fn sorted_seeds(cfg: &ExperimentConfig) -> Result<Vec<u64>> {
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    if seeds.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("seeds", "seeds must be distinct"));
    }
    Ok(seeds)
}

#[derive(Serialize)]
struct MetricRow<'a> {
    seed: u64,
    step: u64,
    epoch: u64,
    train_loss: f64,
    fast_eval_loss: f64,
    fast_eval_accuracy: f64,
    avg_eval_loss: f64,
    avg_eval_accuracy: f64,
    fast_ece: f64,
    avg_ece: f64,
    fast_boundary_width: Option<f64>,
    avg_boundary_width: Option<f64>,
    config_hash: &'a str,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFinal {
    pub seed: u64,
    pub fast: BoundaryMetrics,
    pub averaged: BoundaryMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub method: Method,
    pub switch_interval: Option<u64>,
    pub finals: Vec<SeedFinal>,
    /// Over seeds, averaged model.
    pub aggregate: Aggregate,
}

/// Trains every seed, writing `metrics.csv`, `summary.json` and
/// `checkpoints/seed<S>/epoch<E>_{fast,averaged}.ckpt`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, workers: usize) -> Result<CommandOutput> {
    let seeds = sorted_seeds(cfg)?;
    let hash = cfg.hash();
    let pool = pool(workers)?;
    let runs: Vec<(ToyRun, f64)> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| {
                let t0 = Instant::now();
                let run = run_seed(cfg, s)?;
                Ok((run, t0.elapsed().as_secs_f64() * 1e3))
            })
            .collect::<Result<_>>()
    })?;
    prepare(out, cfg)?;
    let ipe = cfg.iters_per_epoch();
    let mut rows = Vec::new();
    let mut timing = String::new();
    for (&seed, (run, ms)) in seeds.iter().zip(&runs) {
        for e in &run.epochs {
            rows.push(MetricRow {
                seed,
                step: e.epoch * ipe,
                epoch: e.epoch,
                train_loss: e.train_loss,
                fast_eval_loss: e.fast.loss,
                fast_eval_accuracy: e.fast.accuracy,
                avg_eval_loss: e.averaged.loss,
                avg_eval_accuracy: e.averaged.accuracy,
                fast_ece: e.fast.ece,
                avg_ece: e.averaged.ece,
                fast_boundary_width: e.fast.boundary_width,
                avg_boundary_width: e.averaged.boundary_width,
                config_hash: &hash,
            });
        }
        timing.push_str(&format!("seed={seed} wall_ms={ms:.1}\n"));
        let dir = out.join("checkpoints").join(format!("seed{seed}"));
        std::fs::create_dir_all(&dir)?;
        for cp in &run.checkpoints {
            for (kind, flat) in [("fast", &cp.fast), ("averaged", &cp.averaged)] {
                let params = MlpParams::unflatten(cfg.model.clone(), flat.clone())?;
                Checkpoint::new(&params, cp.epoch * ipe, cp.epoch, kind, seed, &hash)
                    .write(&dir.join(format!("epoch{:05}_{kind}.ckpt", cp.epoch)))?;
            }
        }
    }
    write_rows(&out.join("metrics.csv"), "run-record", &hash, &rows)?;
    std::fs::write(out.join("timing.log"), timing)?;

    let finals: Vec<SeedFinal> = seeds
        .iter()
        .zip(&runs)
        .map(|(&seed, (run, _))| {
            let last = run.epochs.last().expect("at least one epoch");
            SeedFinal {
                seed,
                fast: last.fast.clone(),
                averaged: last.averaged.clone(),
            }
        })
        .collect();
    let aggregate = Aggregate::of(&finals.iter().map(|f| &f.averaged).collect::<Vec<_>>());
    let summary = TrainSummary {
        config_hash: hash.clone(),
        method: cfg.averager.method,
        switch_interval: cfg.averager_config().switch_interval,
        finals,
        aggregate,
    };
    write_json(&out.join("summary.json"), &summary)?;

    if cfg.svg {
        let series: Vec<Series> = seeds
            .iter()
            .zip(&runs)
            .map(|(s, (run, _))| Series {
                name: format!("seed {s}"),
                points: run
                    .epochs
                    .iter()
                    .map(|e| (e.epoch as f64, e.averaged.accuracy))
                    .collect(),
            })
            .collect();
        let title = format!("{} test accuracy (averaged model)", cfg.averager.method);
        std::fs::write(out.join("accuracy.svg"), svg::line_chart(&title, "epoch", "accuracy", &series))?;
    }

    let a = &summary.aggregate;
    Ok(CommandOutput {
        out_dir: out.to_path_buf(),
        config_hash: hash,
        summary: format!(
            "{} over {} seed(s): accuracy {:.4} ± {:.4}, ece {:.4} ± {:.4}, boundary width {:.4} ± {:.4}",
            cfg.averager.method,
            a.seeds,
            a.accuracy.mean,
            a.accuracy.std,
            a.ece.mean,
            a.ece.std,
            a.boundary_width.mean,
            a.boundary_width.std
        ),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NqmCell {
    pub seed: u64,
    pub lr: f64,
    pub decay: f64,
    pub config: NqmConfig,
    pub report: VarianceReport,
}

#[derive(Serialize)]
struct NqmRow<'a> {
    seed: u64,
    lr: f64,
    decay: f64,
    a: f64,
    sigma: f64,
    method: &'a str,
    analytic: f64,
    empirical: f64,
    rel_err: f64,
    samples: u64,
    decorrelated_samples: f64,
    ordering_analytic: bool,
    ordering_empirical: bool,
    config_hash: &'a str,
}

#[derive(Serialize)]
struct NqmReportFile<'a> {
    config_hash: &'a str,
    max_rel_err: f64,
    ordering_holds: bool,
    cells: &'a [NqmCell],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SigmaTRecord {
    seed: u64,
    config: NqmConfig,
    options: SigmaTOptions,
    estimate: SigmaTEstimate,
}

fn nqm_cells(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<(u64, f64, f64, NqmConfig)>> {
    let spec = &cfg.nqm;
    for (name, list) in [("nqm.lrs", &spec.lrs), ("nqm.decays", &spec.decays), ("nqm.curvatures", &spec.curvatures)] {
        if list.is_empty() {
            return Err(Error::config(name, "need at least one value"));
        }
    }
    let mut cells = Vec::new();
    for &seed in seeds {
        for &lr in &spec.lrs {
            for &decay in &spec.decays {
                let n = spec.curvatures.len();
                let mut c = NqmConfig::new(spec.curvatures.clone(), vec![spec.sigma; n], lr, decay);
                c.seed = seed;
                c.plan_variance_run(&spec.budget);
                c.check_stability()?;
                cells.push((seed, lr, decay, c));
            }
        }
    }
    Ok(cells)
}

/// Variance fixed points over the `(lr, decay, curvature)` grid and the
/// `sigma_T` estimate, for every seed.
pub fn cmd_nqm(cfg: &ExperimentConfig, out: &Path, workers: usize) -> Result<CommandOutput> {
    let seeds = sorted_seeds(cfg)?;
    let hash = cfg.hash();
    // Every cell is checked for stability before anything is simulated.
    let plan = nqm_cells(cfg, &seeds)?;
    let sigma_cfgs: Vec<NqmConfig> = seeds
        .iter()
        .map(|&s| {
            let mut c = cfg.nqm.sigma_t.clone();
            c.seed = s;
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;
    let pool = pool(workers)?;
    let (cells, sigma): (Vec<NqmCell>, Vec<SigmaTRecord>) = pool.install(|| -> Result<_> {
        let mut cells = Vec::with_capacity(plan.len());
        for (seed, lr, decay, config) in plan {
            let report = variance_report(&config)?;
            cells.push(NqmCell {
                seed,
                lr,
                decay,
                config,
                report,
            });
        }
        let sigma = sigma_cfgs
            .into_iter()
            .map(|config| {
                let estimate = estimate_sigma_t(&config, &cfg.nqm.sigma_t_options)?;
                Ok(SigmaTRecord {
                    seed: config.seed,
                    config,
                    options: cfg.nqm.sigma_t_options.clone(),
                    estimate,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((cells, sigma))
    })?;
    prepare(out, cfg)?;

    let mut rows = Vec::new();
    for cell in &cells {
        for est in &cell.report.estimates {
            for (i, a) in cell.config.a_diag.iter().enumerate() {
                rows.push(NqmRow {
                    seed: cell.seed,
                    lr: cell.lr,
                    decay: cell.decay,
                    a: *a,
                    sigma: cell.config.sigma_diag[i],
                    method: est.method.as_str(),
                    analytic: est.analytic[i],
                    empirical: est.empirical[i],
                    rel_err: est.rel_err[i],
                    samples: est.samples,
                    decorrelated_samples: est.decorrelated_samples,
                    ordering_analytic: cell.report.ordering_analytic[i],
                    ordering_empirical: cell.report.ordering_empirical[i],
                    config_hash: &hash,
                });
            }
        }
    }
    write_rows(&out.join("nqm_variance.csv"), "nqm-variance", &hash, &rows)?;
    let max_rel_err = cells.iter().map(|c| c.report.max_rel_err).fold(0.0, f64::max);
    let ordering_holds = cells.iter().all(|c| {
        c.report.ordering_analytic.iter().all(|b| *b) && c.report.ordering_empirical.iter().all(|b| *b)
    });
    write_json(
        &out.join("nqm_report.json"),
        &NqmReportFile {
            config_hash: &hash,
            max_rel_err,
            ordering_holds,
            cells: &cells,
        },
    )?;

    #[derive(Serialize)]
    struct SigmaRow<'a> {
        seed: u64,
        horizon: u64,
        ema_loss_at_t: f64,
        sema_loss_at_2t: f64,
        ema_loss_at_2t: f64,
        sigma_t: f64,
        std_err: f64,
        trials: u64,
        config_hash: &'a str,
    }
    let sigma_rows: Vec<SigmaRow> = sigma
        .iter()
        .map(|r| SigmaRow {
            seed: r.seed,
            horizon: r.estimate.horizon,
            ema_loss_at_t: r.estimate.ema_loss_at_t,
            sema_loss_at_2t: r.estimate.sema_loss_at_2t,
            ema_loss_at_2t: r.estimate.ema_loss_at_2t,
            sigma_t: r.estimate.sigma_t,
            std_err: r.estimate.std_err,
            trials: r.estimate.trials,
            config_hash: &hash,
        })
        .collect();
    write_rows(&out.join("sigma_t.csv"), "sigma-t", &hash, &sigma_rows)?;
    write_json(&out.join("sigma_t.json"), &sigma)?;

    let s = &sigma[0].estimate;
    Ok(CommandOutput {
        out_dir: out.to_path_buf(),
        config_hash: hash,
        summary: format!(
            "{} grid cells x {} coordinates: max rel err {:.4}, ordering {}; sigma_T = {:.4} ± {:.4} (seed {})",
            cells.len(),
            cfg.nqm.curvatures.len(),
            max_rel_err,
            if ordering_holds { "holds everywhere" } else { "VIOLATED" },
            s.sigma_t,
            s.std_err,
            sigma[0].seed
        ),
    })
}

struct Track {
    name: String,
    /// `(epoch, kind, params)` in training order.
    points: Vec<(u64, String, ParamVector)>,
    center: MlpParams,
    /// Test loss logged for `center` during training, when known.
    recorded_loss: Option<f64>,
}

fn evaluator<'a>(model: &'a MlpConfig, batch: &'a Batch) -> impl Fn(&[f64]) -> EvalPoint + Sync + 'a {
    move |p: &[f64]| {
        let params = match MlpParams::unflatten(model.clone(), Vec64::from(p)) {
            Ok(p) => p,
            Err(_) => return (f64::NAN, None),
        };
        match mlp::forward(&params, batch) {
            Ok((loss, logits)) => (loss, batch.labels().map(|l| mlp::accuracy(&logits, l))),
            Err(_) => (f64::NAN, None),
        }
    }
}

fn axis(range: &ScanRange, path: &str) -> Result<Vec<f64>> {
    if range.points < 1 || !(range.lo <= 0.0 && 0.0 <= range.hi) {
        return Err(Error::config(path, "range must contain 0 and at least one point"));
    }
    let v = linspace(range.lo, range.hi, range.points);
    if !v.contains(&0.0) {
        return Err(Error::config(path, "no grid point lands on 0; use an odd point count on a symmetric range"));
    }
    Ok(v)
}

#[derive(Serialize)]
struct LandscapeMeta<'a> {
    config_hash: &'a str,
    seed: u64,
    normalization: Normalization,
    plane: PlaneKind,
    /// Trajectory whose final weights center the shared plane.
    plane_center: &'a str,
    range_1d: &'a ScanRange,
    range_2d: &'a ScanRange,
    /// Coefficients shared by every 2D grid and trajectory projection.
    alphas_2d: &'a [f64],
    betas_2d: &'a [f64],
    recorded_losses: Vec<(String, Option<f64>)>,
}

#[derive(Serialize)]
struct Scan1d<'a> {
    method: &'a str,
    split: &'a str,
    grid: ScanGrid,
}

#[derive(Serialize)]
struct Scan2d<'a> {
    split: &'a str,
    grid: ScanGrid,
}

#[derive(Serialize)]
struct Projection<'a> {
    method: &'a str,
    kind: &'a str,
    epochs: Vec<u64>,
    coords: Vec<(f64, f64)>,
}

#[derive(Serialize)]
struct LandscapeFile<'a> {
    meta: LandscapeMeta<'a>,
    scans_1d: Vec<Scan1d<'a>>,
    scans_2d: Vec<Scan2d<'a>>,
    trajectories: Vec<Projection<'a>>,
}

fn tracks_from_files(cfg: &ExperimentConfig, paths: &[PathBuf]) -> Result<Vec<Track>> {
    let mut points = Vec::with_capacity(paths.len());
    let mut last = None;
    for p in paths {
        let ck = Checkpoint::read(p)?;
        let params = ck.params_for(&cfg.model)?;
        points.push((ck.header.epoch, ck.header.kind.clone(), params.flatten()));
        last = Some(params);
    }
    Ok(vec![Track {
        name: "checkpoints".into(),
        points,
        center: last.expect("at least one checkpoint"),
        recorded_loss: None,
    }])
}

fn tracks_from_training(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Track>> {
    let methods = &cfg.landscape.methods;
    if methods.is_empty() {
        return Err(Error::config("landscape.methods", "need at least one method"));
    }
    if !methods.contains(&cfg.landscape.reference) {
        return Err(Error::config("landscape.reference", "reference must be one of landscape.methods"));
    }
    methods
        .par_iter()
        .map(|&m| {
            let mut c = cfg.clone();
            c.averager.method = m;
            let run = run_seed(&c, seed)?;
            let mut points = Vec::new();
            for cp in &run.checkpoints {
                points.push((cp.epoch, "fast".to_string(), cp.fast.clone()));
                points.push((cp.epoch, "averaged".to_string(), cp.averaged.clone()));
            }
            Ok(Track {
                name: m.as_str().to_string(),
                points,
                recorded_loss: Some(run.final_metrics().loss),
                center: run.final_averaged,
            })
        })
        .collect()
}

/// 1D scans around each trajectory's final weights, 2D scans over one plane
/// shared by all trajectories, and the trajectories projected onto it.
/// With checkpoint files the files form the only trajectory; otherwise one
/// toy run per configured method supplies them.
pub fn cmd_landscape(
    cfg: &ExperimentConfig,
    checkpoints: &[PathBuf],
    out: &Path,
    workers: usize,
) -> Result<CommandOutput> {
    if cfg.seeds.len() != 1 {
        return Err(Error::config("seeds", "landscape scans use exactly one seed"));
    }
    let seed = cfg.seeds[0];
    let hash = cfg.hash();
    let ls = &cfg.landscape;
    let alphas_1d = axis(&ls.range_1d, "landscape.range_1d")?;
    let alphas_2d = axis(&ls.range_2d, "landscape.range_2d")?;
    let betas_2d = alphas_2d.clone();
    let mut spec = cfg.dataset.clone();
    spec.seed = seed;
    let data = gen_dataset(&spec)?;
    let splits = [("train", &data.labeled), ("test", &data.test)];
    let pool = pool(workers)?;

    let (tracks, reference) = if checkpoints.is_empty() {
        let t = pool.install(|| tracks_from_training(cfg, seed))?;
        let r = t.iter().position(|t| t.name == ls.reference.as_str()).expect("checked");
        (t, r)
    } else {
        (tracks_from_files(cfg, checkpoints)?, 0)
    };
    let center = &tracks[reference].center;
    let (d1, d2) = match ls.plane {
        PlaneKind::Random => (
            make_direction(center, &mut RngState::new(seed, 10), ls.normalization)?.vector,
            make_direction(center, &mut RngState::new(seed, 11), ls.normalization)?.vector,
        ),
        PlaneKind::Pca => {
            if tracks[reference].points.len() < 2 {
                return Err(Error::config(
                    "landscape.plane",
                    "a PCA plane needs a trajectory of at least two checkpoints; pass more or set landscape.plane=\"random\"",
                ));
            }
            let pts: Vec<ParamVector> = tracks[reference].points.iter().map(|p| p.2.clone()).collect();
            pca_directions(&pts, center.flat())?
        }
    };

    let (scans_1d, scans_2d) = pool.install(|| -> Result<_> {
        let mut s1 = Vec::new();
        for t in &tracks {
            let dir = make_direction(&t.center, &mut RngState::new(seed, 10), ls.normalization)?;
            for (split, batch) in splits {
                let grid = scan_1d(t.center.flat(), &dir.vector, &alphas_1d, evaluator(&cfg.model, batch))?;
                s1.push(Scan1d {
                    method: &t.name,
                    split,
                    grid,
                });
            }
        }
        let mut s2 = Vec::new();
        for (split, batch) in splits {
            let grid = scan_2d(center.flat(), &d1, &d2, &alphas_2d, &betas_2d, evaluator(&cfg.model, batch))?;
            s2.push(Scan2d { split, grid });
        }
        Ok((s1, s2))
    })?;

    let mut trajectories = Vec::new();
    for t in &tracks {
        for kind in ["fast", "averaged"] {
            let sel: Vec<&(u64, String, ParamVector)> = t.points.iter().filter(|p| p.1 == kind).collect();
            if sel.is_empty() {
                continue;
            }
            let pts: Vec<ParamVector> = sel.iter().map(|p| p.2.clone()).collect();
            trajectories.push(Projection {
                method: &t.name,
                kind,
                epochs: sel.iter().map(|p| p.0).collect(),
                coords: project_trajectory(&pts, center.flat(), &d1, &d2)?,
            });
        }
    }

    prepare(out, cfg)?;
    #[derive(Serialize)]
    struct Row1<'a> {
        method: &'a str,
        split: &'a str,
        alpha: f64,
        loss: Option<f64>,
        accuracy: Option<f64>,
    }
    let mut rows1 = Vec::new();
    for s in &scans_1d {
        for (i, a) in s.grid.alphas.iter().enumerate() {
            rows1.push(Row1 {
                method: s.method,
                split: s.split,
                alpha: *a,
                loss: s.grid.loss[i],
                accuracy: s.grid.accuracy[i],
            });
        }
    }
    write_rows(&out.join("landscape_1d.csv"), "landscape-1d", &hash, &rows1)?;
    #[derive(Serialize)]
    struct Row2 {
        alpha: f64,
        beta: f64,
        loss: Option<f64>,
        accuracy: Option<f64>,
    }
    for s in &scans_2d {
        let nb = betas_2d.len();
        let rows: Vec<Row2> = (0..s.grid.loss.len())
            .map(|k| Row2 {
                alpha: alphas_2d[k / nb],
                beta: betas_2d[k % nb],
                loss: s.grid.loss[k],
                accuracy: s.grid.accuracy[k],
            })
            .collect();
        write_rows(&out.join(format!("landscape_2d_{}.csv", s.split)), "landscape-2d", &hash, &rows)?;
    }
    #[derive(Serialize)]
    struct RowT<'a> {
        method: &'a str,
        kind: &'a str,
        epoch: u64,
        x: f64,
        y: f64,
    }
    let rows_t: Vec<RowT> = trajectories
        .iter()
        .flat_map(|p| {
            p.epochs.iter().zip(&p.coords).map(|(e, (x, y))| RowT {
                method: p.method,
                kind: p.kind,
                epoch: *e,
                x: *x,
                y: *y,
            })
        })
        .collect();
    write_rows(&out.join("trajectories.csv"), "trajectory", &hash, &rows_t)?;

    if cfg.svg {
        for (split, _) in splits {
            let series: Vec<Series> = scans_1d
                .iter()
                .filter(|s| s.split == split)
                .map(|s| Series {
                    name: s.method.to_string(),
                    points: s.grid.alphas.iter().zip(&s.grid.loss).filter_map(|(a, l)| l.map(|l| (*a, l))).collect(),
                })
                .collect();
            std::fs::write(
                out.join(format!("landscape_1d_{split}.svg")),
                svg::line_chart(&format!("1D loss landscape ({split})"), "alpha", "loss", &series),
            )?;
        }
        let overlays: Vec<Series> = trajectories
            .iter()
            .filter(|p| p.kind == "averaged")
            .map(|p| Series {
                name: p.method.to_string(),
                points: p.coords.clone(),
            })
            .collect();
        for s in &scans_2d {
            std::fs::write(
                out.join(format!("landscape_2d_{}.svg", s.split)),
                svg::heatmap(
                    &format!("2D loss landscape ({})", s.split),
                    &alphas_2d,
                    &betas_2d,
                    &s.grid.loss,
                    &overlays,
                ),
            )?;
        }
    }

    let summary = scans_1d
        .iter()
        .filter(|s| s.split == "test")
        .map(|s| format!("{}: center test loss {:.4}", s.method, s.grid.center_loss))
        .collect::<Vec<_>>()
        .join("; ");
    let file = LandscapeFile {
        meta: LandscapeMeta {
            config_hash: &hash,
            seed,
            normalization: ls.normalization,
            plane: ls.plane,
            plane_center: &tracks[reference].name,
            range_1d: &ls.range_1d,
            range_2d: &ls.range_2d,
            alphas_2d: &alphas_2d,
            betas_2d: &betas_2d,
            recorded_losses: tracks.iter().map(|t| (t.name.clone(), t.recorded_loss)).collect(),
        },
        scans_1d,
        scans_2d,
        trajectories,
    };
    write_json(&out.join("landscape.json"), &file)?;
    Ok(CommandOutput {
        out_dir: out.to_path_buf(),
        config_hash: hash,
        summary,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: usize,
    pub decay: f64,
    pub switch_epochs: f64,
    pub switch_iters: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rank: usize,
    pub cell: SweepCell,
    pub aggregate: Aggregate,
}

#[derive(Serialize)]
struct SweepFile<'a> {
    config_hash: &'a str,
    method: Method,
    seeds: &'a [u64],
    ranked: &'a [SweepRow],
}

/// Every `(decay, switch_epochs, seed)` combination, ranked by mean final
/// accuracy of the averaged model (ties: lower ECE, then grid order).
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, workers: usize) -> Result<CommandOutput> {
    let seeds = sorted_seeds(cfg)?;
    let hash = cfg.hash();
    let sw = &cfg.sweep;
    if sw.decays.is_empty() || sw.switch_epochs.is_empty() {
        return Err(Error::config("sweep", "decays and switch_epochs need at least one value each"));
    }
    let ipe = cfg.iters_per_epoch();
    let mut cells = Vec::new();
    let mut cell_cfgs = Vec::new();
    for &decay in &sw.decays {
        for &t in &sw.switch_epochs {
            let mut c = cfg.clone();
            c.averager.decay = decay;
            c.averager.switch_epochs = Some(t);
            c.validate()?;
            cells.push(SweepCell {
                index: cells.len(),
                decay,
                switch_epochs: t,
                switch_iters: switch_iters(t, ipe),
            });
            cell_cfgs.push(c);
        }
    }
    let jobs = cells.len() * seeds.len();
    if jobs > sw.cap {
        return Err(Error::Usage(format!(
            "sweep needs {jobs} runs ({} cells x {} seeds), above the cap of {}",
            cells.len(),
            seeds.len(),
            sw.cap
        )));
    }
    let pool = pool(workers)?;
    let finals: Vec<BoundaryMetrics> = pool.install(|| {
        (0..jobs)
            .into_par_iter()
            .map(|j| {
                let run = run_seed(&cell_cfgs[j / seeds.len()], seeds[j % seeds.len()])?;
                Ok(run.final_metrics().clone())
            })
            .collect::<Result<_>>()
    })?;
    prepare(out, cfg)?;

    #[derive(Serialize)]
    struct RunRow<'a> {
        decay: f64,
        switch_epochs: f64,
        switch_iters: u64,
        seed: u64,
        accuracy: f64,
        ece: f64,
        boundary_width: Option<f64>,
        loss: f64,
        config_hash: &'a str,
    }
    let run_rows: Vec<RunRow> = (0..jobs)
        .map(|j| {
            let (c, m) = (&cells[j / seeds.len()], &finals[j]);
            RunRow {
                decay: c.decay,
                switch_epochs: c.switch_epochs,
                switch_iters: c.switch_iters,
                seed: seeds[j % seeds.len()],
                accuracy: m.accuracy,
                ece: m.ece,
                boundary_width: m.boundary_width,
                loss: m.loss,
                config_hash: &hash,
            }
        })
        .collect();
    write_rows(&out.join("sweep_runs.csv"), "sweep-runs", &hash, &run_rows)?;

    let mut ranked: Vec<SweepRow> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let ms: Vec<&BoundaryMetrics> = finals[i * seeds.len()..(i + 1) * seeds.len()].iter().collect();
            SweepRow {
                rank: 0,
                cell: c.clone(),
                aggregate: Aggregate::of(&ms),
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.aggregate
            .accuracy
            .mean
            .total_cmp(&a.aggregate.accuracy.mean)
            .then(a.aggregate.ece.mean.total_cmp(&b.aggregate.ece.mean))
            .then(a.cell.index.cmp(&b.cell.index))
    });
    for (r, row) in ranked.iter_mut().enumerate() {
        row.rank = r + 1;
    }

    #[derive(Serialize)]
    struct TableRow<'a> {
        rank: usize,
        decay: f64,
        switch_epochs: f64,
        switch_iters: u64,
        seeds: usize,
        accuracy_mean: f64,
        accuracy_std: f64,
        ece_mean: f64,
        ece_std: f64,
        boundary_width_mean: f64,
        boundary_width_std: f64,
        loss_mean: f64,
        loss_std: f64,
        config_hash: &'a str,
    }
    let table: Vec<TableRow> = ranked
        .iter()
        .map(|r| TableRow {
            rank: r.rank,
            decay: r.cell.decay,
            switch_epochs: r.cell.switch_epochs,
            switch_iters: r.cell.switch_iters,
            seeds: r.aggregate.seeds,
            accuracy_mean: r.aggregate.accuracy.mean,
            accuracy_std: r.aggregate.accuracy.std,
            ece_mean: r.aggregate.ece.mean,
            ece_std: r.aggregate.ece.std,
            boundary_width_mean: r.aggregate.boundary_width.mean,
            boundary_width_std: r.aggregate.boundary_width.std,
            loss_mean: r.aggregate.loss.mean,
            loss_std: r.aggregate.loss.std,
            config_hash: &hash,
        })
        .collect();
    write_rows(&out.join("sweep.csv"), "sweep-table", &hash, &table)?;
    write_json(
        &out.join("sweep.json"),
        &SweepFile {
            config_hash: &hash,
            method: cfg.averager.method,
            seeds: &seeds,
            ranked: &ranked,
        },
    )?;

    let mut summary = format!(
        "{} cells x {} seeds, ranked by mean accuracy:\n  rank  decay     T(epochs)  T(iters)  accuracy         ece",
        cells.len(),
        seeds.len()
    );
    for r in &ranked {
        summary.push_str(&format!(
            "\n  {:>4}  {:<8}  {:<9}  {:>8}  {:.4} ± {:.4}  {:.4} ± {:.4}",
            r.rank,
            r.cell.decay,
            r.cell.switch_epochs,
            r.cell.switch_iters,
            r.aggregate.accuracy.mean,
            r.aggregate.accuracy.std,
            r.aggregate.ece.mean,
            r.aggregate.ece.std
        ));
    }
    Ok(CommandOutput {
        out_dir: out.to_path_buf(),
        config_hash: hash,
        summary,
    })
}
