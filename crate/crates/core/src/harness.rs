//! Repeated-seed comparison protocol.
//!
//! An experiment runs every (mode × holdout fraction × repeat) cell with
//! its own derived seed, evaluates on the held-out split, and aggregates
//! mean ± sample standard deviation per cell, plus each mode's relative
//! improvement over plain `nn`. Cells are independent and run in parallel;
//! results are identical to serial execution because every cell's
//! randomness comes from its own seed and aggregation happens in a fixed
//! order afterwards.
//!
//! Output layout under the chosen directory:
//!
//! ```text
//!   runs/<mode>_<fraction>_<repeat>.csv    per-epoch series
//!   runs/<mode>_<fraction>_<repeat>.json   final metrics + config echo
//!   curves.csv                             side-by-side learning curves
//!   summary.json                           aggregate table (deterministic bytes)
//! ```

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, TaskName};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::network::{Activation, Mlp};
use crate::projection::{
    apply_projection, build_projection, violation, ConstraintSpec,
};
use crate::seeds::splitmix64;
use crate::training::{evaluate, train, RunReport, TrainConfig, TrainMode};

/// How the experiment obtains its dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub task: TaskName,
    pub n: usize,
    pub seed: u64,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub modes: Vec<TrainMode>,
    pub n_repeats: usize,
    pub holdout_fractions: Vec<f64>,
    pub train: TrainConfig,
    /// Hidden layer sizes; `None` picks the task's default (two hidden
    /// layers of its standard width).
    pub hidden_dims: Option<Vec<usize>>,
    pub activation: Activation,
}

impl ExperimentConfig {
    /// Full comparison protocol for a built-in task: all four modes,
    /// 10 repeats, holdout fractions {0.2, 0.3, 0.4}.
    pub fn for_task(task: TaskName) -> Result<ExperimentConfig> {
        let def = data::task_def(task)?;
        Ok(ExperimentConfig {
            data: DataConfig {
                task,
                n: def.default_samples,
                seed: 0,
                noise_std: 0.0,
            },
            modes: vec![
                TrainMode::Nn,
                TrainMode::Pinn { lambda: 1.0 },
                TrainMode::KktHpinn,
                TrainMode::NnPost,
            ],
            n_repeats: 10,
            holdout_fractions: vec![0.2, 0.3, 0.4],
            train: TrainConfig::default(),
            hidden_dims: None,
            activation: Activation::Relu,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Config("experiment needs at least one mode".into()));
        }
        for m in &self.modes {
            m.validate()?;
        }
        if self.n_repeats < 1 {
            return Err(Error::Config("n_repeats must be >= 1".into()));
        }
        if self.holdout_fractions.is_empty() {
            return Err(Error::Config("need at least one holdout fraction".into()));
        }
        for f in &self.holdout_fractions {
            if !(*f > 0.0 && *f < 1.0) {
                return Err(Error::Config(format!(
                    "holdout fraction must be in (0, 1), got {f}"
                )));
            }
        }
        self.train.validate()
    }

    fn dims_for(&self, ds: &Dataset) -> Vec<usize> {
        let hidden = match &self.hidden_dims {
            Some(h) => h.clone(),
            None => {
                let width = data::task_def(ds.task())
                    .map(|d| d.hidden_width)
                    .unwrap_or(32);
                vec![width, width]
            }
        };
        let mut dims = vec![ds.input_dim()];
        dims.extend(hidden);
        dims.push(ds.output_dim());
        dims
    }
}

/// Seed for one training cell. Injective over (mode, fraction, repeat)
/// for a fixed base seed: the packed tag is unique per cell and
/// `splitmix64` is a bijection.
pub fn cell_seed(base: u64, mode_idx: usize, frac_idx: usize, repeat: usize) -> u64 {
    let tag = (1u64 << 63) | ((mode_idx as u64) << 42) | ((frac_idx as u64) << 21) | repeat as u64;
    base ^ splitmix64(tag)
}

/// Seed for the held-out test split. Shared by all modes at the same
/// (fraction, repeat) so they are compared on identical test data.
pub fn holdout_seed(base: u64, frac_idx: usize, repeat: usize) -> u64 {
    let tag = (1u64 << 62) | ((frac_idx as u64) << 21) | repeat as u64;
    base ^ splitmix64(tag)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (n-1 denominator, 0 for a single
/// value).
pub fn stat_of(values: &[f64]) -> Stat {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Stat { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub mode: String,
    pub holdout: f64,
    pub completed: usize,
    pub failed: usize,
    pub rmse_overall: Stat,
    pub rmse_constrained: Option<Stat>,
    pub rmse_unconstrained: Option<Stat>,
    pub mean_violation: Stat,
    /// `(rmse_nn - rmse_mode) / rmse_nn` on mean overall RMSE at the same
    /// fraction; absent when `nn` was not part of the experiment.
    pub improvement_vs_nn: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
    pub incomplete: bool,
}

impl SummaryTable {
    /// Aligned-column text rendering of the aggregate table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>8} {:>22} {:>22} {:>22} {:>14} {:>8}\n",
            "mode", "holdout", "rmse_overall", "rmse_constrained", "rmse_unconstrained",
            "violation", "vs_nn"
        ));
        for c in &self.cells {
            let fmt_stat = |s: &Stat| format!("{:.4e} ± {:.1e}", s.mean, s.std);
            let fmt_opt = |s: &Option<Stat>| s.as_ref().map_or("-".to_string(), &fmt_stat);
            out.push_str(&format!(
                "{:<10} {:>8} {:>22} {:>22} {:>22} {:>14.3e} {:>8}\n",
                c.mode,
                c.holdout,
                fmt_stat(&c.rmse_overall),
                fmt_opt(&c.rmse_constrained),
                fmt_opt(&c.rmse_unconstrained),
                c.mean_violation.mean,
                c.improvement_vs_nn
                    .map_or("-".to_string(), |v| format!("{:+.1}%", 100.0 * v)),
            ));
        }
        if self.incomplete {
            out.push_str("(warning: some cells failed; see runs/ for diagnostics)\n");
        }
        out
    }
}

struct CellOutcome {
    mode_idx: usize,
    frac_idx: usize,
    repeat: usize,
    result: std::result::Result<RunReport, String>,
}

/// Runs the full protocol on a freshly generated dataset.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SummaryTable> {
    let raw = data::generate(cfg.data.task, cfg.data.n, cfg.data.seed, cfg.data.noise_std)?;
    run_experiment_on(cfg, &raw, out_dir)
}

/// Runs the protocol on a provided (unscaled) dataset: feasibility filter,
/// max-abs scaling, then the (mode × fraction × repeat) grid.
pub fn run_experiment_on(cfg: &ExperimentConfig, raw: &Dataset, out_dir: &Path) -> Result<SummaryTable> {
    cfg.validate()?;
    let (filtered, _) = data::filter_feasible(raw, raw.tolerance())?;
    let runs_dir = out_dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let scaled = data::fit_maxabs(&filtered)?;
    let dims = cfg.dims_for(&scaled);

    let mut cells = Vec::new();
    for (mode_idx, _) in cfg.modes.iter().enumerate() {
        for (frac_idx, _) in cfg.holdout_fractions.iter().enumerate() {
            for repeat in 0..cfg.n_repeats {
                cells.push((mode_idx, frac_idx, repeat));
            }
        }
    }

    let outcomes: Vec<CellOutcome> = cells
        .into_par_iter()
        .map(|(mode_idx, frac_idx, repeat)| {
            let result = run_cell(cfg, &scaled, &dims, mode_idx, frac_idx, repeat)
                .map_err(|e| e.to_string());
            CellOutcome {
                mode_idx,
                frac_idx,
                repeat,
                result,
            }
        })
        .collect();

    for outcome in &outcomes {
        let mode = &cfg.modes[outcome.mode_idx];
        let fraction = cfg.holdout_fractions[outcome.frac_idx];
        let stem = format!("{}_{}_{}", mode.tag(), fraction, outcome.repeat);
        match &outcome.result {
            Ok(report) => {
                report.write_csv(&runs_dir.join(format!("{stem}.csv")))?;
                report.write_json(&runs_dir.join(format!("{stem}.json")))?;
            }
            Err(msg) => {
                fs::write(runs_dir.join(format!("{stem}.failed")), msg)?;
            }
        }
    }

    // learning curves: repeat 0 at the first fraction, one column group
    // per mode that completed
    let curve_reports: Vec<&RunReport> = cfg
        .modes
        .iter()
        .enumerate()
        .filter_map(|(mode_idx, _)| {
            outcomes
                .iter()
                .find(|o| o.mode_idx == mode_idx && o.frac_idx == 0 && o.repeat == 0)
                .and_then(|o| o.result.as_ref().ok())
        })
        .collect();
    if !curve_reports.is_empty() {
        emit_learning_curves(&curve_reports, &out_dir.join("curves.csv"))?;
    }

    let summary = summarize(cfg, &outcomes);
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(summary)
}

fn run_cell(
    cfg: &ExperimentConfig,
    scaled: &Dataset,
    dims: &[usize],
    mode_idx: usize,
    frac_idx: usize,
    repeat: usize,
) -> Result<RunReport> {
    let mode = &cfg.modes[mode_idx];
    let fraction = cfg.holdout_fractions[frac_idx];
    let split_seed = holdout_seed(cfg.train.seed, frac_idx, repeat);
    let (rest, test) = scaled.split_holdout(fraction, split_seed)?;
    let run_seed = cell_seed(cfg.train.seed, mode_idx, frac_idx, repeat);
    let net = Mlp::init(dims, cfg.activation, run_seed)?;
    let mut run_cfg = cfg.train.clone();
    run_cfg.seed = run_seed;
    let (trained, mut report) = train(net, mode, &rest, &run_cfg)?;
    report.final_test = Some(evaluate(&trained, mode, &test)?);
    Ok(report)
}

fn summarize(cfg: &ExperimentConfig, outcomes: &[CellOutcome]) -> SummaryTable {
    let mut cells = Vec::new();
    let mut incomplete = false;

    // nn baseline mean overall RMSE per fraction
    let nn_idx = cfg.modes.iter().position(|m| matches!(m, TrainMode::Nn));
    let nn_mean_for = |frac_idx: usize| -> Option<f64> {
        let idx = nn_idx?;
        let vals: Vec<f64> = outcomes
            .iter()
            .filter(|o| o.mode_idx == idx && o.frac_idx == frac_idx)
            .filter_map(|o| o.result.as_ref().ok())
            .filter_map(|r| r.final_test.as_ref())
            .map(|m| m.rmse_overall)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(stat_of(&vals).mean)
        }
    };

    for (mode_idx, mode) in cfg.modes.iter().enumerate() {
        for (frac_idx, &fraction) in cfg.holdout_fractions.iter().enumerate() {
            let reports: Vec<&RunReport> = outcomes
                .iter()
                .filter(|o| o.mode_idx == mode_idx && o.frac_idx == frac_idx)
                .filter_map(|o| o.result.as_ref().ok())
                .collect();
            let failed = cfg.n_repeats - reports.len();
            if failed > 0 {
                incomplete = true;
            }
            let finals: Vec<&crate::training::Metrics> =
                reports.iter().filter_map(|r| r.final_test.as_ref()).collect();
            if finals.is_empty() {
                cells.push(CellSummary {
                    mode: mode.tag().to_string(),
                    holdout: fraction,
                    completed: 0,
                    failed,
                    rmse_overall: Stat { mean: f64::NAN, std: 0.0 },
                    rmse_constrained: None,
                    rmse_unconstrained: None,
                    mean_violation: Stat { mean: f64::NAN, std: 0.0 },
                    improvement_vs_nn: None,
                });
                continue;
            }
            let overall: Vec<f64> = finals.iter().map(|m| m.rmse_overall).collect();
            let constrained: Option<Vec<f64>> =
                finals.iter().map(|m| m.rmse_constrained).collect();
            let unconstrained: Option<Vec<f64>> =
                finals.iter().map(|m| m.rmse_unconstrained).collect();
            let viol: Vec<f64> = finals.iter().map(|m| m.mean_violation).collect();
            let overall_stat = stat_of(&overall);
            let improvement = nn_mean_for(frac_idx)
                .map(|nn_mean| (nn_mean - overall_stat.mean) / nn_mean);
            cells.push(CellSummary {
                mode: mode.tag().to_string(),
                holdout: fraction,
                completed: finals.len(),
                failed,
                rmse_overall: overall_stat,
                rmse_constrained: constrained.as_deref().map(stat_of),
                rmse_unconstrained: unconstrained.as_deref().map(stat_of),
                mean_violation: stat_of(&viol),
                improvement_vs_nn: improvement,
            });
        }
    }

    SummaryTable {
        config: cfg.clone(),
        cells,
        incomplete,
    }
}

/// Writes reports side by side as one wide CSV:
/// `epoch,<mode>_train_rmse,<mode>_val_rmse,<mode>_violation,...`.
/// All reports must cover the same number of epochs.
pub fn emit_learning_curves(reports: &[&RunReport], path: &Path) -> Result<()> {
    let Some(first) = reports.first() else {
        return Err(Error::Data("no reports to emit".into()));
    };
    let epochs = first.train_rmse.len();
    if reports.iter().any(|r| r.train_rmse.len() != epochs) {
        return Err(Error::Shape(
            "reports cover different epoch counts; cannot align learning curves".into(),
        ));
    }
    let mut text = String::from("epoch");
    for r in reports {
        text.push_str(&format!(
            ",{m}_train_rmse,{m}_val_rmse,{m}_violation",
            m = r.mode
        ));
    }
    text.push('\n');
    for e in 0..epochs {
        text.push_str(&format!("{}", e + 1));
        for r in reports {
            text.push_str(&format!(
                ",{},{},{}",
                r.train_rmse[e], r.val_rmse[e], r.val_violation[e]
            ));
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// One entry of the self-check suite behind the `verify` CLI command.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Random constraint system with full-row-rank output coefficients.
/// `n0 = 0` produces constraints that bind outputs only.
pub fn random_spec(seed: u64, m: usize, n0: usize, nl: usize) -> ConstraintSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut a = Mat::zeros(m, n0);
        for v in a.data_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
        let mut b = Mat::zeros(m, nl);
        for v in b.data_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
        let rhs: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        // resample in the unlikely event the random B is rank deficient
        if let Ok(spec) = ConstraintSpec::new(a, b, rhs) {
            return spec;
        }
    }
}

/// Direct dense solve of the block system
/// `[[I, Bᵀ], [B, 0]]·[ỹ; λ] = [ŷ; rhs - A·x]`
/// by Gaussian elimination with partial pivoting. A second algebraic route
/// to the projected point, used to cross-check the analytical layers.
pub fn solve_projection_kkt(spec: &ConstraintSpec, x: &[f64], y_hat: &[f64]) -> Result<Vec<f64>> {
    let nl = spec.output_dim();
    let m = spec.num_constraints();
    let dim = nl + m;
    let mut sys = Mat::zeros(dim, dim);
    for i in 0..nl {
        sys[(i, i)] = 1.0;
        for j in 0..m {
            sys[(i, nl + j)] = spec.b()[(j, i)];
            sys[(nl + j, i)] = spec.b()[(j, i)];
        }
    }
    let ax = spec.a().mat_vec(x)?;
    let mut rhs: Vec<f64> = y_hat.to_vec();
    rhs.extend(spec.rhs().iter().zip(&ax).map(|(b, a)| b - a));

    // partial-pivot Gaussian elimination
    for col in 0..dim {
        let pivot_row = (col..dim)
            .max_by(|&p, &q| {
                sys[(p, col)]
                    .abs()
                    .partial_cmp(&sys[(q, col)].abs())
                    .unwrap()
            })
            .unwrap();
        if sys[(pivot_row, col)].abs() < 1e-14 {
            return Err(Error::Singular {
                pivot: col,
                value: sys[(pivot_row, col)],
            });
        }
        if pivot_row != col {
            for j in 0..dim {
                let tmp = sys[(col, j)];
                sys[(col, j)] = sys[(pivot_row, j)];
                sys[(pivot_row, j)] = tmp;
            }
            rhs.swap(col, pivot_row);
        }
        for row in col + 1..dim {
            let factor = sys[(row, col)] / sys[(col, col)];
            if factor == 0.0 {
                continue;
            }
            for j in col..dim {
                sys[(row, j)] -= factor * sys[(col, j)];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut sol = vec![0.0; dim];
    for i in (0..dim).rev() {
        let mut acc = rhs[i];
        for j in i + 1..dim {
            acc -= sys[(i, j)] * sol[j];
        }
        sol[i] = acc / sys[(i, i)];
    }
    sol.truncate(nl);
    Ok(sol)
}

pub fn verify_suite() -> Vec<Check> {
    vec![
        check_projection_identities(),
        check_projection_vs_kkt_solve(),
        check_spd_recovery(),
        check_loss_gradients(),
        check_generator_feasibility(),
        check_scaling_round_trip(),
        check_post_projection_parity(),
    ]
}

fn check_projection_identities() -> Check {
    let mut worst = 0.0_f64;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    for i in 0..200 {
        let m = rng.random_range(1..=3);
        let nl = rng.random_range(3..=8);
        let n0 = rng.random_range(0..=6);
        let spec = random_spec(0x1000 + i, m, n0, nl);
        let p = match build_projection(&spec) {
            Ok(p) => p,
            Err(e) => {
                return Check {
                    name: "projection identities",
                    passed: false,
                    detail: format!("build failed on spec {i}: {e}"),
                }
            }
        };
        worst = worst.max(projection_identity_error(&spec, &p));
    }
    Check {
        name: "projection identities",
        passed: worst < 1e-10,
        detail: format!("200 random systems, max identity deviation {worst:.2e}"),
    }
}

/// Largest deviation over the defining identities of the projection
/// parameters: `B·P = 0`, `B·M = -A`, `B·c = rhs`, `P = Pᵀ`, `P·P = P`.
pub fn projection_identity_error(
    spec: &ConstraintSpec,
    p: &crate::projection::ProjectionParams,
) -> f64 {
    let b = spec.b();
    let mut worst = b.matmul(p.projector()).unwrap().max_abs();
    let bm = b.matmul(p.input_map()).unwrap();
    for i in 0..bm.rows() {
        for j in 0..bm.cols() {
            worst = worst.max((bm[(i, j)] + spec.a()[(i, j)]).abs());
        }
    }
    let bc = b.mat_vec(p.offset()).unwrap();
    for (v, r) in bc.iter().zip(spec.rhs()) {
        worst = worst.max((v - r).abs());
    }
    let proj = p.projector();
    let pt = proj.transpose();
    for (a, b) in proj.data().iter().zip(pt.data()) {
        worst = worst.max((a - b).abs());
    }
    let pp = proj.matmul(proj).unwrap();
    for (a, b) in pp.data().iter().zip(proj.data()) {
        worst = worst.max((a - b).abs());
    }
    worst
}

fn check_projection_vs_kkt_solve() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xBEEF);
    let mut worst = 0.0_f64;
    for i in 0..100 {
        let m = rng.random_range(1..=3);
        let nl = rng.random_range(3..=8);
        let n0 = rng.random_range(0..=5);
        let spec = random_spec(0x2000 + i, m, n0, nl);
        let p = build_projection(&spec).unwrap();
        let x: Vec<f64> = (0..n0).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y_hat: Vec<f64> = (0..nl).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = apply_projection(&p, &x, &y_hat).unwrap();
        let direct = solve_projection_kkt(&spec, &x, &y_hat).unwrap();
        for (a, b) in fast.iter().zip(&direct) {
            worst = worst.max((a - b).abs());
        }
    }
    Check {
        name: "projection vs dense KKT solve",
        passed: worst < 1e-10,
        detail: format!("100 random instances, max deviation {worst:.2e}"),
    }
}

fn check_spd_recovery() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xABCD);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=12);
        let mut g = Mat::zeros(n, n + 2);
        for v in g.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let s = g.matmul(&g.transpose()).unwrap();
        let mut s_reg = s;
        for i in 0..n {
            s_reg[(i, i)] += 0.5;
        }
        let mut x0 = Mat::zeros(n, 2);
        for v in x0.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let rhs = s_reg.matmul(&x0).unwrap();
        let x = crate::linalg::spd_solve(&s_reg, &rhs).unwrap();
        for (a, b) in x.data().iter().zip(x0.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    Check {
        name: "SPD solve recovery",
        passed: worst < 1e-9,
        detail: format!("50 random systems up to 12x12, max error {worst:.2e}"),
    }
}

fn check_loss_gradients() -> Check {
    match gradient_check_impl() {
        Ok(worst) => Check {
            name: "loss gradients vs finite differences",
            passed: worst < 1e-6,
            detail: format!("3 losses x 40 coordinates, max relative error {worst:.2e}"),
        },
        Err(e) => Check {
            name: "loss gradients vs finite differences",
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn gradient_check_impl() -> Result<f64> {
    use crate::training::{loss_kkt, loss_nn, loss_pinn};
    let ds = data::fit_maxabs(&data::cstr_generate(24, 5, 0.0)?)?;
    let spec = ds.scaled_spec()?;
    let proj = build_projection(&spec)?;
    let net = Mlp::init(&[3, 6, 6, 3], Activation::Tanh, 11)?;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0_f64;
    for loss_idx in 0..3 {
        let value_of = |n: &Mlp| -> Result<f64> {
            Ok(match loss_idx {
                0 => loss_nn(n, ds.x(), ds.y())?.0,
                1 => loss_pinn(n, ds.x(), ds.y(), &spec, 1.0)?.0,
                _ => loss_kkt(n, &proj, ds.x(), ds.y())?.0,
            })
        };
        let grads = match loss_idx {
            0 => loss_nn(&net, ds.x(), ds.y())?.1,
            1 => loss_pinn(&net, ds.x(), ds.y(), &spec, 1.0)?.1,
            _ => loss_kkt(&net, &proj, ds.x(), ds.y())?.1,
        };
        for _ in 0..40 {
            let layer = rng.random_range(0..net.num_weight_layers());
            let i = rng.random_range(0..net.weights()[layer].rows());
            let j = rng.random_range(0..net.weights()[layer].cols());
            let h = 1e-6;
            let mut plus = net.clone();
            plus.weights_mut()[layer][(i, j)] += h;
            let mut minus = net.clone();
            minus.weights_mut()[layer][(i, j)] -= h;
            let numeric = (value_of(&plus)? - value_of(&minus)?) / (2.0 * h);
            let analytic = grads.d_weights[layer][(i, j)];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn check_generator_feasibility() -> Check {
    for task in [TaskName::Cstr, TaskName::Plant, TaskName::Distillation] {
        let def = match data::task_def(task) {
            Ok(d) => d,
            Err(e) => {
                return Check {
                    name: "generator feasibility",
                    passed: false,
                    detail: e.to_string(),
                }
            }
        };
        let ds = match data::generate(task, 200, 99, 0.0) {
            Ok(d) => d,
            Err(e) => {
                return Check {
                    name: "generator feasibility",
                    passed: false,
                    detail: format!("{task}: {e}"),
                }
            }
        };
        match data::filter_feasible(&ds, def.tolerance) {
            Ok((_, stats)) if stats.dropped == 0 => {}
            Ok((_, stats)) => {
                return Check {
                    name: "generator feasibility",
                    passed: false,
                    detail: format!("{task}: {} rows violated {:e}", stats.dropped, def.tolerance),
                }
            }
            Err(e) => {
                return Check {
                    name: "generator feasibility",
                    passed: false,
                    detail: format!("{task}: {e}"),
                }
            }
        }
    }
    Check {
        name: "generator feasibility",
        passed: true,
        detail: "200 rows per task, 100% retention at task tolerances".into(),
    }
}

fn check_scaling_round_trip() -> Check {
    let ds = match data::plant_generate(150, 7, 0.0).and_then(|d| data::fit_maxabs(&d)) {
        Ok(d) => d,
        Err(e) => {
            return Check {
                name: "max-abs scaling round trip",
                passed: false,
                detail: e.to_string(),
            }
        }
    };
    let spec_scaled = match ds.scaled_spec() {
        Ok(s) => s,
        Err(e) => {
            return Check {
                name: "max-abs scaling round trip",
                passed: false,
                detail: e.to_string(),
            }
        }
    };
    let mut worst = 0.0_f64;
    for i in 0..ds.len() {
        let v = violation(&spec_scaled, ds.x().row(i), ds.y().row(i)).unwrap();
        worst = worst.max(v);
    }
    let back = ds.to_unscaled();
    for i in 0..back.len() {
        let v = violation(back.spec(), back.x().row(i), back.y().row(i)).unwrap();
        worst = worst.max(v);
    }
    Check {
        name: "max-abs scaling round trip",
        passed: worst < 1e-10,
        detail: format!("150 rows scaled and unscaled, max violation {worst:.2e}"),
    }
}

fn check_post_projection_parity() -> Check {
    let run = || -> Result<(bool, f64)> {
        let ds = data::fit_maxabs(&data::cstr_generate(60, 1, 0.0)?)?;
        let cfg = TrainConfig {
            epochs: 3,
            seed: 5,
            ..TrainConfig::default()
        };
        let init = Mlp::init(&[3, 8, 3], Activation::Relu, 5)?;
        let (a, _) = train(init.clone(), &TrainMode::Nn, &ds, &cfg)?;
        let (b, _) = train(init, &TrainMode::NnPost, &ds, &cfg)?;
        let identical = a
            .weights()
            .iter()
            .zip(b.weights())
            .all(|(wa, wb)| {
                wa.data()
                    .iter()
                    .zip(wb.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
            });
        let post_viol = evaluate(&b, &TrainMode::NnPost, &ds)?.mean_violation;
        Ok((identical, post_viol))
    };
    match run() {
        Ok((true, v)) if v < 1e-9 => Check {
            name: "post-projection parity",
            passed: true,
            detail: format!("identical parameters; projected violation {v:.2e}"),
        },
        Ok((identical, v)) => Check {
            name: "post-projection parity",
            passed: false,
            detail: format!("identical={identical}, projected violation {v:.2e}"),
        },
        Err(e) => Check {
            name: "post-projection parity",
            passed: false,
            detail: e.to_string(),
        },
    }
}
