//! Synthetic datasets mirroring the constraint structure of three
//! chemical-process case studies.
//!
//! The original case studies sample a flowsheet simulator; here each task
//! is replaced by an analytic generator with the same linear-equality
//! structure, so feasibility is exact by construction and absolute RMSE
//! values are reference points rather than targets. All generator
//! constants (kinetics, sampling ranges, smooth-map seeds) are fixed and
//! documented below.
//!
//! - `cstr`: 3 inputs (temperature, two reactant feeds) → 3 outputs
//!   (product flow, two residual flows) through first-order Arrhenius
//!   kinetics; two independent stoichiometric balance rows.
//! - `plant`: 4 inputs (three feeds, purge) → 5 outputs (three stream
//!   totals and two component flows); a single overall mass balance.
//! - `distillation`: 5 inputs (solvent flow, two reflux ratios, two
//!   distillate rates) → 10 outputs (six component flows, four heat
//!   duties); each distillate rate splits into three component flows.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::projection::{apply_projection, build_projection, rescale_constraints, ConstraintSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskName {
    Cstr,
    Plant,
    Distillation,
    Custom,
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskName::Cstr => "cstr",
            TaskName::Plant => "plant",
            TaskName::Distillation => "distillation",
            TaskName::Custom => "custom",
        };
        write!(f, "{s}")
    }
}

impl FromStr for TaskName {
    type Err = Error;

    fn from_str(s: &str) -> Result<TaskName> {
        match s {
            "cstr" => Ok(TaskName::Cstr),
            "plant" => Ok(TaskName::Plant),
            "distillation" => Ok(TaskName::Distillation),
            "custom" => Ok(TaskName::Custom),
            other => Err(Error::Config(format!(
                "unknown task '{other}' (expected cstr, plant, or distillation)"
            ))),
        }
    }
}

/// Static description of a built-in task: its constraint system, sampling
/// ranges, feasibility tolerance, and the architecture/sample defaults the
/// comparison protocol uses.
#[derive(Debug, Clone)]
pub struct TaskDef {
    pub name: TaskName,
    pub input_dim: usize,
    pub output_dim: usize,
    pub spec: ConstraintSpec,
    pub input_ranges: Vec<(f64, f64)>,
    pub tolerance: f64,
    pub default_samples: usize,
    pub hidden_width: usize,
}

impl TaskDef {
    /// `[N0, width, width, NL]` — two hidden layers of the task's width.
    pub fn default_dims(&self) -> Vec<usize> {
        vec![
            self.input_dim,
            self.hidden_width,
            self.hidden_width,
            self.output_dim,
        ]
    }
}

// reactor kinetics: k(T) = RATE_PREFACTOR · exp(-RATE_TEMPERATURE / T),
// extent ξ = F_lim · k·τ / (1 + k·τ)
const RATE_PREFACTOR: f64 = 5e4;
const RATE_TEMPERATURE: f64 = 6000.0;
const RESIDENCE_TIME: f64 = 1.0;

const CSTR_RANGES: [(f64, f64); 3] = [(550.0, 700.0), (0.5, 3.0), (0.5, 3.0)];
const PLANT_RANGES: [(f64, f64); 4] = [(5.0, 15.0), (3.0, 10.0), (1.0, 5.0), (0.5, 2.0)];
const DISTILLATION_RANGES: [(f64, f64); 5] =
    [(10.0, 30.0), (1.0, 5.0), (4.0, 12.0), (1.0, 5.0), (4.0, 12.0)];

// fixed seeds for the smooth nonlinear output maps
const PLANT_MAP_SEED: u64 = 0x504c414e;
const DISTILLATION_MAP_SEED: u64 = 0x44495354;

fn cstr_spec() -> ConstraintSpec {
    // x2 - x3 - y2 + y3 = 0  (reactant consumption balance)
    // x2 - y1 - y2 = 0       (product balance)
    let a = Mat::from_rows(&[vec![0.0, 1.0, -1.0], vec![0.0, 1.0, 0.0]]).unwrap();
    let b = Mat::from_rows(&[vec![0.0, -1.0, 1.0], vec![-1.0, -1.0, 0.0]]).unwrap();
    ConstraintSpec::new(a, b, vec![0.0, 0.0]).unwrap()
}

fn plant_spec() -> ConstraintSpec {
    // x1 + x2 + x3 - x4 - y1 - y3 - y5 = 0  (overall mass balance)
    let a = Mat::from_rows(&[vec![1.0, 1.0, 1.0, -1.0]]).unwrap();
    let b = Mat::from_rows(&[vec![-1.0, 0.0, -1.0, 0.0, -1.0]]).unwrap();
    ConstraintSpec::new(a, b, vec![0.0]).unwrap()
}

fn distillation_spec() -> ConstraintSpec {
    // x3 - y1 - y7 - y8 = 0   (first column distillate split)
    // x5 - y2 - y9 - y10 = 0  (second column distillate split)
    let a = Mat::from_rows(&[
        vec![0.0, 0.0, 1.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.0, 0.0, 1.0],
    ])
    .unwrap();
    let mut b0 = vec![0.0; 10];
    b0[0] = -1.0;
    b0[6] = -1.0;
    b0[7] = -1.0;
    let mut b1 = vec![0.0; 10];
    b1[1] = -1.0;
    b1[8] = -1.0;
    b1[9] = -1.0;
    let b = Mat::from_rows(&[b0, b1]).unwrap();
    ConstraintSpec::new(a, b, vec![0.0, 0.0]).unwrap()
}

pub fn task_def(name: TaskName) -> Result<TaskDef> {
    match name {
        TaskName::Cstr => Ok(TaskDef {
            name,
            input_dim: 3,
            output_dim: 3,
            spec: cstr_spec(),
            input_ranges: CSTR_RANGES.to_vec(),
            tolerance: 1e-8,
            default_samples: 1500,
            hidden_width: 12,
        }),
        TaskName::Plant => Ok(TaskDef {
            name,
            input_dim: 4,
            output_dim: 5,
            spec: plant_spec(),
            input_ranges: PLANT_RANGES.to_vec(),
            tolerance: 1e-6,
            default_samples: 1200,
            hidden_width: 32,
        }),
        TaskName::Distillation => Ok(TaskDef {
            name,
            input_dim: 5,
            output_dim: 10,
            spec: distillation_spec(),
            input_ranges: DISTILLATION_RANGES.to_vec(),
            tolerance: 1e-8,
            default_samples: 5000,
            hidden_width: 32,
        }),
        TaskName::Custom => Err(Error::Config(
            "custom tasks are defined by a dataset manifest, not generated".into(),
        )),
    }
}

/// Paired (x, y) samples with their constraint system and scaling state.
///
/// `spec` is always stored in unscaled units; `scale_x`/`scale_y` record
/// the cumulative max-abs factors the data has been divided by (all 1.0
/// for freshly generated data). [`Dataset::scaled_spec`] gives the
/// constraint system matching the data's current units.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Mat,
    y: Mat,
    spec: ConstraintSpec,
    scale_x: Vec<f64>,
    scale_y: Vec<f64>,
    names_x: Vec<String>,
    names_y: Vec<String>,
    task: TaskName,
    tolerance: f64,
    seed: u64,
    noise_std: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.cols()
    }

    pub fn x(&self) -> &Mat {
        &self.x
    }

    pub fn y(&self) -> &Mat {
        &self.y
    }

    pub fn spec(&self) -> &ConstraintSpec {
        &self.spec
    }

    pub fn scale_x(&self) -> &[f64] {
        &self.scale_x
    }

    pub fn scale_y(&self) -> &[f64] {
        &self.scale_y
    }

    pub fn names_x(&self) -> &[String] {
        &self.names_x
    }

    pub fn names_y(&self) -> &[String] {
        &self.names_y
    }

    pub fn task(&self) -> TaskName {
        self.task
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Constraint system in the data's current units.
    pub fn scaled_spec(&self) -> Result<ConstraintSpec> {
        rescale_constraints(&self.spec, &self.scale_x, &self.scale_y)
    }

    /// New dataset holding the given rows.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
            ..self.clone()
        }
    }

    /// Deterministic split into (rest, holdout) where the holdout gets
    /// `round(fraction·n)` shuffled rows.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Config(format!(
                "holdout fraction must be in (0, 1), got {fraction}"
            )));
        }
        let n = self.len();
        if n < 2 {
            return Err(Error::Data("cannot split fewer than 2 samples".into()));
        }
        let count = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
        let mut indices: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        indices.shuffle(&mut rng);
        let (holdout_idx, rest_idx) = indices.split_at(count);
        Ok((self.subset(rest_idx), self.subset(holdout_idx)))
    }

    /// Multiplies the scaling back out, returning data in original units.
    pub fn to_unscaled(&self) -> Dataset {
        let mut ds = self.clone();
        for i in 0..ds.x.rows() {
            for (v, s) in ds.x.row_mut(i).iter_mut().zip(&self.scale_x) {
                *v *= s;
            }
        }
        for i in 0..ds.y.rows() {
            for (v, s) in ds.y.row_mut(i).iter_mut().zip(&self.scale_y) {
                *v *= s;
            }
        }
        ds.scale_x = vec![1.0; self.scale_x.len()];
        ds.scale_y = vec![1.0; self.scale_y.len()];
        ds
    }
}

fn default_names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

/// Fixed random smooth map u ∈ [0,1]^in → [-1,1]^out built from tanh
/// basis functions; the generator seed pins it once and for all.
struct SmoothMap {
    weights: Mat,
    phases: Vec<f64>,
    mix: Mat,
}

impl SmoothMap {
    fn new(seed: u64, in_dim: usize, out_dim: usize, n_basis: usize) -> SmoothMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Mat::zeros(n_basis, in_dim);
        for v in weights.data_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
        let phases: Vec<f64> = (0..n_basis).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut mix = Mat::zeros(out_dim, n_basis);
        for v in mix.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        // normalize rows so outputs stay in [-1, 1]
        for i in 0..out_dim {
            let total: f64 = mix.row(i).iter().map(|v| v.abs()).sum();
            if total > 0.0 {
                for v in mix.row_mut(i) {
                    *v /= total;
                }
            }
        }
        SmoothMap {
            weights,
            phases,
            mix,
        }
    }

    fn eval(&self, u: &[f64]) -> Vec<f64> {
        let hidden: Vec<f64> = (0..self.weights.rows())
            .map(|j| (crate::linalg::dot(self.weights.row(j), u) + self.phases[j]).tanh())
            .collect();
        (0..self.mix.rows())
            .map(|k| crate::linalg::dot(self.mix.row(k), &hidden))
            .collect()
    }
}

fn normalize(x: &[f64], ranges: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(ranges)
        .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
        .collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Shared generator tail: exact projection of each output row onto the
/// constraint set, then optional noise restricted to the nullspace of the
/// output coefficients so feasibility survives.
fn finalize_rows(
    def: &TaskDef,
    x: Mat,
    mut y: Mat,
    seed: u64,
    noise_std: f64,
    project: bool,
) -> Result<Dataset> {
    let proj = build_projection(&def.spec)?;
    if project {
        for i in 0..y.rows() {
            // applied twice to push the residual down to round-off
            let mut row = apply_projection(&proj, x.row(i), y.row(i))?;
            row = apply_projection(&proj, x.row(i), &row)?;
            y.row_mut(i).copy_from_slice(&row);
        }
    }
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std)
            .map_err(|e| Error::Config(format!("bad noise std: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seeds::mix(seed, 0x4e4f_4953));
        let nl = y.cols();
        for i in 0..y.rows() {
            let g: Vec<f64> = (0..nl).map(|_| normal.sample(&mut rng)).collect();
            let in_nullspace = proj.projector().mat_vec(&g)?;
            for (v, d) in y.row_mut(i).iter_mut().zip(&in_nullspace) {
                *v += d;
            }
        }
    }
    Ok(Dataset {
        names_x: default_names("x", x.cols()),
        names_y: default_names("y", y.cols()),
        x,
        y,
        spec: def.spec.clone(),
        scale_x: vec![1.0; def.input_dim],
        scale_y: vec![1.0; def.output_dim],
        task: def.name,
        tolerance: def.tolerance,
        seed,
        noise_std,
    })
}

/// Reactor data: inputs (T, F_B, F_E); conversion from first-order
/// kinetics; outputs (product, residual B, residual E). Both balance rows
/// hold by construction, so no projection step is needed.
pub fn cstr_generate(n: usize, seed: u64, noise_std: f64) -> Result<Dataset> {
    if n < 1 {
        return Err(Error::Config("sample count must be >= 1".into()));
    }
    let def = task_def(TaskName::Cstr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Mat::zeros(n, 3);
    let mut y = Mat::zeros(n, 3);
    for i in 0..n {
        let t = rng.random_range(CSTR_RANGES[0].0..CSTR_RANGES[0].1);
        let f_b = rng.random_range(CSTR_RANGES[1].0..CSTR_RANGES[1].1);
        let f_e = rng.random_range(CSTR_RANGES[2].0..CSTR_RANGES[2].1);
        let k = RATE_PREFACTOR * (-RATE_TEMPERATURE / t).exp();
        let extent = f_b.min(f_e) * k * RESIDENCE_TIME / (1.0 + k * RESIDENCE_TIME);
        x.row_mut(i).copy_from_slice(&[t, f_b, f_e]);
        y.row_mut(i).copy_from_slice(&[extent, f_b - extent, f_e - extent]);
    }
    finalize_rows(&def, x, y, seed, noise_std, false)
}

/// Plant data: smooth softmax shares split the net feed across three
/// product-stream totals; component flows are smooth fractions of their
/// stream totals (so component ≤ total holds); the mass balance is made
/// exact by projection.
pub fn plant_generate(n: usize, seed: u64, noise_std: f64) -> Result<Dataset> {
    if n < 1 {
        return Err(Error::Config("sample count must be >= 1".into()));
    }
    let def = task_def(TaskName::Plant)?;
    let share_map = SmoothMap::new(PLANT_MAP_SEED, 4, 3, 8);
    let frac_map = SmoothMap::new(PLANT_MAP_SEED + 1, 4, 2, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Mat::zeros(n, 4);
    let mut y = Mat::zeros(n, 5);
    for i in 0..n {
        let row: Vec<f64> = loop {
            let cand: Vec<f64> = PLANT_RANGES
                .iter()
                .map(|(lo, hi)| rng.random_range(*lo..*hi))
                .collect();
            // rejection: the purge cannot exceed the feed
            if cand[0] + cand[1] + cand[2] > cand[3] {
                break cand;
            }
        };
        let total_out = row[0] + row[1] + row[2] - row[3];
        let u = normalize(&row, &PLANT_RANGES);
        let logits: Vec<f64> = share_map.eval(&u).iter().map(|l| 1.5 * l).collect();
        let shares = softmax(&logits);
        let fracs: Vec<f64> = frac_map
            .eval(&u)
            .iter()
            .map(|v| 0.60 + 0.35 * sigmoid(2.0 * v))
            .collect();
        let y1 = shares[0] * total_out;
        let y3 = shares[1] * total_out;
        let y5 = shares[2] * total_out;
        x.row_mut(i).copy_from_slice(&row);
        y.row_mut(i)
            .copy_from_slice(&[y1, fracs[0] * y1, y3, fracs[1] * y3, y5]);
    }
    finalize_rows(&def, x, y, seed, noise_std, true)
}

/// Distillation data: each distillate rate is split into three component
/// flows via biased softmax shares (the nominal product dominates); heat
/// duties are smooth unconstrained functions of flows and reflux ratios.
pub fn distillation_generate(n: usize, seed: u64, noise_std: f64) -> Result<Dataset> {
    if n < 1 {
        return Err(Error::Config("sample count must be >= 1".into()));
    }
    let def = task_def(TaskName::Distillation)?;
    let split1_map = SmoothMap::new(DISTILLATION_MAP_SEED, 5, 3, 10);
    let split2_map = SmoothMap::new(DISTILLATION_MAP_SEED + 1, 5, 3, 10);
    let duty_map = SmoothMap::new(DISTILLATION_MAP_SEED + 2, 5, 4, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Mat::zeros(n, 5);
    let mut y = Mat::zeros(n, 10);
    for i in 0..n {
        let row: Vec<f64> = DISTILLATION_RANGES
            .iter()
            .map(|(lo, hi)| rng.random_range(*lo..*hi))
            .collect();
        let u = normalize(&row, &DISTILLATION_RANGES);

        // column 1 distillate x3 → (y1 n-heptane, y7 toluene, y8 phenol)
        let l1 = split1_map.eval(&u);
        let s1 = softmax(&[1.2 * l1[0] + 2.5, 1.2 * l1[1], 1.2 * l1[2]]);
        // column 2 distillate x5 → (y2 toluene, y9 n-heptane, y10 phenol)
        let l2 = split2_map.eval(&u);
        let s2 = softmax(&[1.2 * l2[0] + 2.5, 1.2 * l2[1], 1.2 * l2[2]]);
        let d = duty_map.eval(&u);

        let out = [
            row[2] * s1[0],
            row[4] * s2[0],
            -(2.0 + 0.50 * row[2] * (1.0 + 0.30 * row[1]) + 3.0 * (1.0 + d[0])),
            3.0 + 0.60 * row[2] * (1.0 + 0.35 * row[1]) + 3.5 * (1.0 + d[1]),
            -(1.5 + 0.45 * row[4] * (1.0 + 0.30 * row[3]) + 2.5 * (1.0 + d[2])),
            2.5 + 0.55 * row[4] * (1.0 + 0.32 * row[3]) + 3.0 * (1.0 + d[3]),
            row[2] * s1[1],
            row[2] * s1[2],
            row[4] * s2[1],
            row[4] * s2[2],
        ];
        x.row_mut(i).copy_from_slice(&row);
        y.row_mut(i).copy_from_slice(&out);
    }
    finalize_rows(&def, x, y, seed, noise_std, true)
}

pub fn generate(task: TaskName, n: usize, seed: u64, noise_std: f64) -> Result<Dataset> {
    match task {
        TaskName::Cstr => cstr_generate(n, seed, noise_std),
        TaskName::Plant => plant_generate(n, seed, noise_std),
        TaskName::Distillation => distillation_generate(n, seed, noise_std),
        TaskName::Custom => Err(Error::Config(
            "custom tasks are loaded from CSV, not generated".into(),
        )),
    }
}

/// Divides every column by its maximum absolute value and records the
/// cumulative factors, mapping all values into [-1, 1]. Refitting an
/// already scaled dataset is a no-op.
pub fn fit_maxabs(ds: &Dataset) -> Result<Dataset> {
    let mut out = ds.clone();
    scale_columns(&mut out.x, &mut out.scale_x, &ds.names_x)?;
    scale_columns(&mut out.y, &mut out.scale_y, &ds.names_y)?;
    Ok(out)
}

fn scale_columns(m: &mut Mat, cumulative: &mut [f64], names: &[String]) -> Result<()> {
    for j in 0..m.cols() {
        let col_max = (0..m.rows()).fold(0.0_f64, |acc, i| acc.max(m[(i, j)].abs()));
        if col_max == 0.0 {
            return Err(Error::Scale(format!(
                "column '{}' is identically zero and cannot be max-abs scaled",
                names[j]
            )));
        }
        for i in 0..m.rows() {
            m[(i, j)] /= col_max;
        }
        cumulative[j] *= col_max;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterStats {
    pub retained: usize,
    pub dropped: usize,
}

/// Keeps rows whose max-abs constraint residual (in the data's current
/// units) is within `tol`.
pub fn filter_feasible(ds: &Dataset, tol: f64) -> Result<(Dataset, FilterStats)> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Config(format!("tolerance must be > 0, got {tol}")));
    }
    let spec = ds.scaled_spec()?;
    let mut keep = Vec::new();
    for i in 0..ds.len() {
        let r = spec.residual(ds.x.row(i), ds.y.row(i))?;
        let max_abs = r.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if max_abs <= tol {
            keep.push(i);
        }
    }
    let stats = FilterStats {
        retained: keep.len(),
        dropped: ds.len() - keep.len(),
    };
    if keep.is_empty() {
        return Err(Error::Data(format!(
            "feasibility filter at tolerance {tol:e} dropped all {} rows",
            ds.len()
        )));
    }
    Ok((ds.subset(&keep), stats))
}

const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    task: TaskName,
    tolerance: f64,
    seed: u64,
    noise_std: f64,
    names_x: Vec<String>,
    names_y: Vec<String>,
    constraints: ManifestConstraints,
    scale_x: Vec<f64>,
    scale_y: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ManifestConstraints {
    m: usize,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    rhs: Vec<f64>,
}

fn manifest_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("manifest.json")
}

/// Writes the dataset as CSV (header `x1,...,y1,...`, full-precision
/// values) plus a sibling `.manifest.json` holding the constraint system,
/// scales, and provenance.
pub fn write_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let mut text = String::new();
    text.push_str(&ds.names_x.join(","));
    if !ds.names_y.is_empty() {
        text.push(',');
        text.push_str(&ds.names_y.join(","));
    }
    text.push('\n');
    for i in 0..ds.len() {
        let mut fields: Vec<String> = ds.x.row(i).iter().map(|v| v.to_string()).collect();
        fields.extend(ds.y.row(i).iter().map(|v| v.to_string()));
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    fs::write(path, text)?;

    let spec = &ds.spec;
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        task: ds.task,
        tolerance: ds.tolerance,
        seed: ds.seed,
        noise_std: ds.noise_std,
        names_x: ds.names_x.clone(),
        names_y: ds.names_y.clone(),
        constraints: ManifestConstraints {
            m: spec.num_constraints(),
            a: (0..spec.a().rows()).map(|i| spec.a().row(i).to_vec()).collect(),
            b: (0..spec.b().rows()).map(|i| spec.b().row(i).to_vec()).collect(),
            rhs: spec.rhs().to_vec(),
        },
        scale_x: ds.scale_x.clone(),
        scale_y: ds.scale_y.clone(),
    };
    fs::write(
        manifest_path(path),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

/// Reads a dataset written by [`write_csv`]. The CSV header must match the
/// manifest's variable names exactly.
pub fn read_csv(path: &Path) -> Result<Dataset> {
    let manifest_file = manifest_path(path);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_file)?)?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::Schema(format!(
            "manifest version {} unsupported (expected {MANIFEST_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.constraints.a.len() != manifest.constraints.m
        || manifest.constraints.b.len() != manifest.constraints.m
    {
        return Err(Error::Schema("manifest constraint row count mismatch".into()));
    }
    let spec = ConstraintSpec::new(
        Mat::from_rows(&manifest.constraints.a)?,
        Mat::from_rows(&manifest.constraints.b)?,
        manifest.constraints.rhs.clone(),
    )?;

    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse {
            line: 1,
            reason: "file is empty".into(),
        })?;
    let expected: Vec<&str> = manifest
        .names_x
        .iter()
        .chain(manifest.names_y.iter())
        .map(String::as_str)
        .collect();
    let found: Vec<&str> = header.split(',').collect();
    if found != expected {
        for name in &expected {
            if !found.contains(name) {
                return Err(Error::Schema(format!(
                    "column '{name}' missing from CSV header"
                )));
            }
        }
        return Err(Error::Schema(format!(
            "CSV header does not match manifest: got [{}], expected [{}]",
            found.join(","),
            expected.join(",")
        )));
    }

    let n0 = manifest.names_x.len();
    let nl = manifest.names_y.len();
    let mut x_rows = Vec::new();
    let mut y_rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n0 + nl {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("expected {} fields, found {}", n0 + nl, fields.len()),
            });
        }
        let mut values = Vec::with_capacity(n0 + nl);
        for f in &fields {
            values.push(f.trim().parse::<f64>().map_err(|e| Error::Parse {
                line: line_no,
                reason: format!("'{f}': {e}"),
            })?);
        }
        x_rows.push(values[..n0].to_vec());
        y_rows.push(values[n0..].to_vec());
    }
    Ok(Dataset {
        x: Mat::from_rows(&x_rows)?,
        y: Mat::from_rows(&y_rows)?,
        spec,
        scale_x: manifest.scale_x,
        scale_y: manifest.scale_y,
        names_x: manifest.names_x,
        names_y: manifest.names_y,
        task: manifest.task,
        tolerance: manifest.tolerance,
        seed: manifest.seed,
        noise_std: manifest.noise_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::violation;

    fn max_row_violation(ds: &Dataset) -> f64 {
        let spec = ds.scaled_spec().unwrap();
        (0..ds.len())
            .map(|i| violation(&spec, ds.x().row(i), ds.y().row(i)).unwrap())
            .fold(0.0, f64::max)
    }

    #[test]
    fn cstr_rows_are_feasible_by_construction() {
        let ds = cstr_generate(200, 7, 0.0).unwrap();
        assert_eq!(ds.len(), 200);
        assert!(max_row_violation(&ds) < 1e-12);
    }

    #[test]
    fn cstr_hand_checked_extent() {
        // x = (T, 2, 1) with conversion 0.5 gives y = (0.5, 1.5, 0.5); the
        // generator reproduces the formula: pick T so k/(1+k) = 0.5 ⇒ k = 1
        let t = -RATE_TEMPERATURE / (1.0_f64 / RATE_PREFACTOR).ln();
        let k = RATE_PREFACTOR * (-RATE_TEMPERATURE / t).exp();
        let extent = 2.0_f64.min(1.0) * k / (1.0 + k);
        assert!((extent - 0.5).abs() < 1e-12);
        let spec = cstr_spec();
        let v = violation(&spec, &[t, 2.0, 1.0], &[0.5, 1.5, 0.5]).unwrap();
        assert!(v < 1e-12);
    }

    #[test]
    fn cstr_zero_extent_limit_is_feasible() {
        let spec = cstr_spec();
        let v = violation(&spec, &[600.0, 2.0, 1.0], &[0.0, 2.0, 1.0]).unwrap();
        assert!(v < 1e-15);
    }

    #[test]
    fn nullspace_noise_preserves_feasibility() {
        let ds = cstr_generate(150, 3, 0.05).unwrap();
        assert!(max_row_violation(&ds) < 1e-12);
        // and the noise actually moved the outputs
        let clean = cstr_generate(150, 3, 0.0).unwrap();
        let diff: f64 = ds
            .y()
            .data()
            .iter()
            .zip(clean.y().data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-3);
    }

    #[test]
    fn plant_rows_pass_their_tolerance() {
        let ds = plant_generate(300, 11, 0.0).unwrap();
        assert!(max_row_violation(&ds) < 1e-12);
        let (_, stats) = filter_feasible(&ds, 1e-6).unwrap();
        assert_eq!(stats.retained, 300);
        assert_eq!(stats.dropped, 0);
    }

    #[test]
    fn plant_component_flows_do_not_exceed_totals() {
        let ds = plant_generate(300, 13, 0.0).unwrap();
        for i in 0..ds.len() {
            let row = ds.y().row(i);
            assert!(row[1] <= row[0]);
            assert!(row[3] <= row[2]);
            assert!(row.iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn plant_constrained_set_is_the_three_totals() {
        let spec = plant_spec();
        assert_eq!(spec.constrained_outputs(), vec![0, 2, 4]);
    }

    #[test]
    fn distillation_rows_pass_their_tolerance() {
        let ds = distillation_generate(300, 17, 0.0).unwrap();
        assert!(max_row_violation(&ds) < 1e-12);
        let (_, stats) = filter_feasible(&ds, 1e-8).unwrap();
        assert_eq!(stats.retained, 300);
    }

    #[test]
    fn distillation_constrained_set_excludes_heat_duties() {
        let spec = distillation_spec();
        assert_eq!(spec.constrained_outputs(), vec![0, 1, 6, 7, 8, 9]);
    }

    #[test]
    fn generators_are_deterministic() {
        let a = plant_generate(50, 23, 0.01).unwrap();
        let b = plant_generate(50, 23, 0.01).unwrap();
        assert_eq!(a, b);
        let c = plant_generate(50, 24, 0.01).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn maxabs_column_definition() {
        // column (2, -4, 1) scales by 4 to (0.5, -1, 0.25)
        let mut ds = cstr_generate(3, 1, 0.0).unwrap();
        for (i, v) in [2.0, -4.0, 1.0].iter().enumerate() {
            ds.x.row_mut(i)[0] = *v;
        }
        let scaled = fit_maxabs(&ds).unwrap();
        assert_eq!(scaled.scale_x()[0], 4.0);
        assert_eq!(scaled.x()[(0, 0)], 0.5);
        assert_eq!(scaled.x()[(1, 0)], -1.0);
        assert_eq!(scaled.x()[(2, 0)], 0.25);
    }

    #[test]
    fn standard_sample_counts_and_widths() {
        let cstr = task_def(TaskName::Cstr).unwrap();
        assert_eq!((cstr.default_samples, cstr.hidden_width), (1500, 12));
        assert_eq!(cstr.default_dims(), vec![3, 12, 12, 3]);
        assert_eq!(cstr.tolerance, 1e-8);
        let plant = task_def(TaskName::Plant).unwrap();
        assert_eq!((plant.default_samples, plant.hidden_width), (1200, 32));
        assert_eq!(plant.tolerance, 1e-6);
        let dist = task_def(TaskName::Distillation).unwrap();
        assert_eq!((dist.default_samples, dist.hidden_width), (5000, 32));
        assert_eq!(dist.default_dims(), vec![5, 32, 32, 10]);
        assert_eq!(dist.tolerance, 1e-8);
    }

    #[test]
    fn split_holdout_rejects_single_row() {
        let ds = cstr_generate(1, 3, 0.0).unwrap();
        assert!(matches!(ds.split_holdout(0.5, 1), Err(Error::Data(_))));
        let ds2 = cstr_generate(10, 3, 0.0).unwrap();
        let (rest, held) = ds2.split_holdout(0.3, 1).unwrap();
        assert_eq!(rest.len() + held.len(), 10);
        assert_eq!(held.len(), 3);
    }

    #[test]
    fn maxabs_scaling_definition_and_round_trip() {
        let ds = cstr_generate(100, 31, 0.0).unwrap();
        let scaled = fit_maxabs(&ds).unwrap();
        assert!(scaled.x().data().iter().all(|v| v.abs() <= 1.0));
        assert!(scaled.y().data().iter().all(|v| v.abs() <= 1.0));
        // refit is a no-op
        let refit = fit_maxabs(&scaled).unwrap();
        assert_eq!(refit, scaled);
        // round trip restores original units
        let back = scaled.to_unscaled();
        for (a, b) in back.x().data().iter().zip(ds.x().data()) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn scaling_preserves_feasibility() {
        let ds = plant_generate(120, 37, 0.0).unwrap();
        let scaled = fit_maxabs(&ds).unwrap();
        assert!(max_row_violation(&scaled) < 1e-12);
    }

    #[test]
    fn scaled_projection_round_trips_to_original_units() {
        // project in scaled space, unscale, and check the original spec
        let ds = fit_maxabs(&cstr_generate(50, 41, 0.0).unwrap()).unwrap();
        let spec_scaled = ds.scaled_spec().unwrap();
        let proj = build_projection(&spec_scaled).unwrap();
        let x_scaled = ds.x().row(5);
        let guess = vec![0.21, -0.4, 0.77];
        let y_scaled = apply_projection(&proj, x_scaled, &guess).unwrap();
        let x_orig: Vec<f64> = x_scaled.iter().zip(ds.scale_x()).map(|(v, s)| v * s).collect();
        let y_orig: Vec<f64> = y_scaled.iter().zip(ds.scale_y()).map(|(v, s)| v * s).collect();
        assert!(violation(ds.spec(), &x_orig, &y_orig).unwrap() < 1e-10);
    }

    #[test]
    fn maxabs_rejects_all_zero_column() {
        let mut ds = cstr_generate(10, 43, 0.0).unwrap();
        for i in 0..ds.len() {
            ds.y.row_mut(i)[1] = 0.0;
        }
        match fit_maxabs(&ds) {
            Err(Error::Scale(msg)) => assert!(msg.contains("y2")),
            other => panic!("expected scale error, got {other:?}"),
        }
    }

    #[test]
    fn filter_drops_exactly_the_perturbed_row() {
        let mut ds = cstr_generate(30, 47, 0.0).unwrap();
        // push one row off the constraint set along a row of B
        let tol = 1e-8;
        let spec_b_row: Vec<f64> = ds.spec().b().row(0).to_vec();
        for (v, c) in ds.y.row_mut(12).iter_mut().zip(&spec_b_row) {
            *v += 10.0 * tol * c;
        }
        let (kept, stats) = filter_feasible(&ds, tol).unwrap();
        assert_eq!(stats.dropped, 1);
        assert_eq!(kept.len(), 29);
        // vacuous filter keeps everything
        let (_, all) = filter_feasible(&ds, 1e12).unwrap();
        assert_eq!(all.retained, 30);
    }

    #[test]
    fn filter_erroring_when_everything_drops() {
        let mut ds = cstr_generate(5, 53, 0.0).unwrap();
        for i in 0..ds.len() {
            ds.y.row_mut(i)[0] += 1.0;
        }
        assert!(matches!(filter_feasible(&ds, 1e-8), Err(Error::Data(_))));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = fit_maxabs(&cstr_generate(100, 59, 0.0).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cstr.csv");
        write_csv(&path, &ds).unwrap();
        let loaded = read_csv(&path).unwrap();
        assert_eq!(loaded.x(), ds.x());
        assert_eq!(loaded.y(), ds.y());
        assert_eq!(loaded.spec(), ds.spec());
        assert_eq!(loaded.scale_x(), ds.scale_x());
        assert_eq!(loaded.task(), ds.task());
    }

    #[test]
    fn csv_header_mismatch_names_the_column() {
        let ds = cstr_generate(5, 61, 0.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_csv(&path, &ds).unwrap();
        // drop a column name from the header
        let text = fs::read_to_string(&path).unwrap();
        let mangled = text.replacen("x1,x2,x3,y1,y2,y3", "x1,x2,x3,y1,y3", 1);
        fs::write(&path, mangled).unwrap();
        match read_csv(&path) {
            Err(Error::Schema(msg)) => assert!(msg.contains("y2"), "got: {msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn csv_malformed_row_reports_line_number() {
        let ds = cstr_generate(5, 67, 0.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_csv(&path, &ds).unwrap();
        let mut text = fs::read_to_string(&path).unwrap();
        let third_data_line = text.lines().nth(3).unwrap().to_string();
        text = text.replacen(&third_data_line, "1.0,bogus,3.0,4.0,5.0,6.0", 1);
        fs::write(&path, text).unwrap();
        match read_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_spec_rebuilds_a_working_projection() {
        let ds = plant_generate(20, 71, 0.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plant.csv");
        write_csv(&path, &ds).unwrap();
        let loaded = read_csv(&path).unwrap();
        let proj = build_projection(loaded.spec()).unwrap();
        let b = loaded.spec().b();
        let bp = b.matmul(proj.projector()).unwrap();
        assert!(bp.max_abs() < 1e-12);
    }
}
