//! Analytical projection onto linear equality constraints.
//!
//! A constraint system `A·x + B·y = rhs` with full-row-rank `B` defines, for
//! each input `x`, an affine set of feasible outputs. The Euclidean
//! projection of a prediction `ŷ` onto that set is itself an affine map
//!
//! ```text
//!   ỹ = M·x + P·ŷ + c
//!   M = -Bᵀ(BBᵀ)⁻¹A      (input coupling)
//!   P = I - Bᵀ(BBᵀ)⁻¹B   (orthogonal projector onto null(B))
//!   c = Bᵀ(BBᵀ)⁻¹·rhs
//! ```
//!
//! obtained by solving the KKT system of the underlying least-distance
//! problem in closed form. The map is non-trainable: it is built once from
//! the constraints and appended to a network, making every output feasible
//! by construction. `(BBᵀ)⁻¹` is never formed; all three pieces go through
//! [`spd_solve`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, dot, spd_solve, Mat};

/// Linear equality constraints `A·x + B·y = rhs` tying network inputs `x`
/// to outputs `y`.
///
/// `A` is m×N0 and may have zero columns (constraints that bind outputs
/// only); `B` is m×NL and must have full row rank, which is verified at
/// construction via the Cholesky pivot check on `B·Bᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    a: Mat,
    b: Mat,
    rhs: Vec<f64>,
}

impl ConstraintSpec {
    pub fn new(a: Mat, b: Mat, rhs: Vec<f64>) -> Result<Self> {
        let m = b.rows();
        if m == 0 {
            return Err(Error::Config(
                "constraint system needs at least one constraint; use plain NN mode instead"
                    .into(),
            ));
        }
        if a.rows() != m || rhs.len() != m {
            return Err(Error::Shape(format!(
                "constraint rows disagree: A has {}, B has {}, rhs has {}",
                a.rows(),
                m,
                rhs.len()
            )));
        }
        if m > b.cols() {
            return Err(Error::Shape(format!(
                "{m} constraints on {} outputs cannot be independent",
                b.cols()
            )));
        }
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("constraint rhs contains a non-finite entry".into()));
        }
        // full row rank of B <=> B·Bᵀ positive definite
        let bbt = b.matmul(&b.transpose())?;
        cholesky(&bbt)?;
        Ok(ConstraintSpec { a, b, rhs })
    }

    pub fn num_constraints(&self) -> usize {
        self.b.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.a.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// Residual vector `A·x + B·y - rhs`.
    pub fn residual(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let ax = self.a.mat_vec(x)?;
        let by = self.b.mat_vec(y)?;
        Ok(ax
            .iter()
            .zip(&by)
            .zip(&self.rhs)
            .map(|((a, b), r)| a + b - r)
            .collect())
    }

    /// Residual rows for a whole batch: `X·Aᵀ + Y·Bᵀ - rhs`, one row per
    /// sample.
    pub fn residual_batch(&self, x: &Mat, y: &Mat) -> Result<Mat> {
        if x.rows() != y.rows() {
            return Err(Error::Shape(format!(
                "batch sizes disagree: {} inputs vs {} outputs",
                x.rows(),
                y.rows()
            )));
        }
        let mut res = x.matmul(&self.a.transpose())?;
        let yb = y.matmul(&self.b.transpose())?;
        for i in 0..res.rows() {
            for j in 0..res.cols() {
                res[(i, j)] += yb[(i, j)] - self.rhs[j];
            }
        }
        Ok(res)
    }

    /// Output coordinates that appear in at least one constraint (columns
    /// of `B` with a nonzero entry).
    pub fn constrained_outputs(&self) -> Vec<usize> {
        (0..self.b.cols())
            .filter(|&j| (0..self.b.rows()).any(|i| self.b[(i, j)] != 0.0))
            .collect()
    }
}

/// The fixed parameters of the projection layers.
///
/// `projector` is symmetric and idempotent (the orthogonal projector onto
/// the nullspace of `B`), `input_map` couples the inputs in, and `offset`
/// is the minimum-norm particular solution of `B·y = rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    input_map: Mat,
    projector: Mat,
    offset: Vec<f64>,
}

impl ProjectionParams {
    pub fn input_map(&self) -> &Mat {
        &self.input_map
    }

    pub fn projector(&self) -> &Mat {
        &self.projector
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn input_dim(&self) -> usize {
        self.input_map.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.projector.rows()
    }
}

/// Builds the projection parameters from a constraint system.
pub fn build_projection(spec: &ConstraintSpec) -> Result<ProjectionParams> {
    let b = spec.b();
    let bt = b.transpose();
    let bbt = b.matmul(&bt)?;

    // input_map = -Bᵀ (BBᵀ)⁻¹ A
    let sol_a = spd_solve(&bbt, spec.a())?;
    let mut input_map = bt.matmul(&sol_a)?;
    for v in input_map.data_mut() {
        *v = -*v;
    }

    // projector = I - Bᵀ (BBᵀ)⁻¹ B
    let sol_b = spd_solve(&bbt, b)?;
    let mut projector = bt.matmul(&sol_b)?;
    for v in projector.data_mut() {
        *v = -*v;
    }
    for i in 0..projector.rows() {
        projector[(i, i)] += 1.0;
    }

    // offset = Bᵀ (BBᵀ)⁻¹ rhs
    let rhs_col = Mat::from_vec(spec.num_constraints(), 1, spec.rhs().to_vec())?;
    let sol_rhs = spd_solve(&bbt, &rhs_col)?;
    let offset = bt.matmul(&sol_rhs)?.data().to_vec();

    Ok(ProjectionParams {
        input_map,
        projector,
        offset,
    })
}

/// Projects a prediction onto the feasible set for input `x`:
/// `ỹ = input_map·x + projector·ŷ + offset`. The result is the
/// Euclidean-closest feasible point to `y_hat`.
pub fn apply_projection(p: &ProjectionParams, x: &[f64], y_hat: &[f64]) -> Result<Vec<f64>> {
    let mx = p.input_map.mat_vec(x)?;
    let py = p.projector.mat_vec(y_hat)?;
    Ok(mx
        .iter()
        .zip(&py)
        .zip(&p.offset)
        .map(|((m, q), c)| m + q + c)
        .collect())
}

/// Batch form of [`apply_projection`]: rows of `x` and `y_hat` are samples.
pub fn apply_projection_batch(p: &ProjectionParams, x: &Mat, y_hat: &Mat) -> Result<Mat> {
    if x.rows() != y_hat.rows() {
        return Err(Error::Shape(format!(
            "batch sizes disagree: {} inputs vs {} predictions",
            x.rows(),
            y_hat.rows()
        )));
    }
    let mut out = x.matmul(&p.input_map.transpose())?;
    let py = y_hat.matmul(&p.projector.transpose())?;
    for i in 0..out.rows() {
        for j in 0..out.cols() {
            out[(i, j)] += py[(i, j)] + p.offset[j];
        }
    }
    Ok(out)
}

/// Pulls a loss gradient back through the projection: returns
/// `projectorᵀ·grad_out`. The projection is affine in `ŷ`, so this is the
/// exact Jacobian-vector product.
pub fn projection_backward(p: &ProjectionParams, grad_out: &[f64]) -> Result<Vec<f64>> {
    let n = p.projector.rows();
    if grad_out.len() != n {
        return Err(Error::Shape(format!(
            "gradient has length {}, expected {n}",
            grad_out.len()
        )));
    }
    let mut out = vec![0.0; n];
    for (i, &g) in grad_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (o, pij) in out.iter_mut().zip(p.projector.row(i)) {
            *o += pij * g;
        }
    }
    Ok(out)
}

/// Batch form of [`projection_backward`]; one gradient row per sample.
pub fn projection_backward_batch(p: &ProjectionParams, grad: &Mat) -> Result<Mat> {
    if grad.cols() != p.projector.rows() {
        return Err(Error::Shape(format!(
            "gradient rows have {} entries, expected {}",
            grad.cols(),
            p.projector.rows()
        )));
    }
    grad.matmul(&p.projector)
}

/// Euclidean norm of the constraint residual `‖A·x + B·y - rhs‖₂`.
pub fn violation(spec: &ConstraintSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    let r = spec.residual(x, y)?;
    Ok(dot(&r, &r).sqrt())
}

/// Rewrites the constraints for data divided componentwise by the given
/// scale factors, so that scaled points have the same residual as their
/// unscaled counterparts: `A'[:,j] = A[:,j]·scale_x[j]`,
/// `B'[:,j] = B[:,j]·scale_y[j]`, rhs unchanged.
pub fn rescale_constraints(
    spec: &ConstraintSpec,
    scale_x: &[f64],
    scale_y: &[f64],
) -> Result<ConstraintSpec> {
    if scale_x.len() != spec.input_dim() || scale_y.len() != spec.output_dim() {
        return Err(Error::Shape(format!(
            "scale lengths {}/{} do not match constraint dims {}/{}",
            scale_x.len(),
            scale_y.len(),
            spec.input_dim(),
            spec.output_dim()
        )));
    }
    for (k, s) in scale_x.iter().chain(scale_y).enumerate() {
        if !s.is_finite() || *s <= 0.0 {
            return Err(Error::Scale(format!(
                "scale factor {k} is {s}; must be strictly positive"
            )));
        }
    }
    let mut a = spec.a().clone();
    for i in 0..a.rows() {
        for (j, s) in scale_x.iter().enumerate() {
            a[(i, j)] *= s;
        }
    }
    let mut b = spec.b().clone();
    for i in 0..b.rows() {
        for (j, s) in scale_y.iter().enumerate() {
            b[(i, j)] *= s;
        }
    }
    ConstraintSpec::new(a, b, spec.rhs().to_vec())
}
