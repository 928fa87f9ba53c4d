//! Independent oracles shared by the integration tests.
//!
//! Everything here re-derives expected values through a different route
//! than the library: naive loop order for products, Gaussian elimination
//! for the projection's KKT system, a per-sample straight-line network
//! evaluator, and central finite differences for gradients. None of it
//! calls the code paths it is used to check.

#![allow(dead_code)]

use kktnn::{ConstraintSpec, Mat, Mlp};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Textbook triple loop, accumulating into an explicit sum.
pub fn naive_matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols(), b.rows());
    let mut out = Mat::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut sum = 0.0;
            for k in 0..a.cols() {
                sum += a[(i, k)] * b[(k, j)];
            }
            out[(i, j)] = sum;
        }
    }
    out
}

/// Solves the dense linear system `m·x = rhs` by Gaussian elimination with
/// partial pivoting.
pub fn gauss_solve(m: &Mat, rhs: &[f64]) -> Vec<f64> {
    let n = m.rows();
    assert_eq!(m.cols(), n);
    assert_eq!(rhs.len(), n);
    let mut a = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = m[(i, j)];
        }
        a[i][n] = rhs[i];
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| a[p][col].abs().partial_cmp(&a[q][col].abs()).unwrap())
            .unwrap();
        assert!(a[pivot][col].abs() > 1e-13, "oracle system is singular");
        a.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for j in col..=n {
                a[row][j] -= f * a[col][j];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = a[i][n];
        for j in i + 1..n {
            acc -= a[i][j] * x[j];
        }
        x[i] = acc / a[i][i];
    }
    x
}

/// Projection oracle: assembles the (NL+m) block KKT system of the
/// least-distance problem and solves it directly by Gaussian elimination.
pub fn project_via_kkt_system(spec: &ConstraintSpec, x: &[f64], y_hat: &[f64]) -> Vec<f64> {
    let nl = spec.output_dim();
    let m = spec.num_constraints();
    let dim = nl + m;
    let mut sys = Mat::zeros(dim, dim);
    for i in 0..nl {
        sys[(i, i)] = 1.0;
    }
    for c in 0..m {
        for j in 0..nl {
            sys[(j, nl + c)] = spec.b()[(c, j)];
            sys[(nl + c, j)] = spec.b()[(c, j)];
        }
    }
    let mut rhs = y_hat.to_vec();
    for c in 0..m {
        let mut ax = 0.0;
        for j in 0..spec.input_dim() {
            ax += spec.a()[(c, j)] * x[j];
        }
        rhs.push(spec.rhs()[c] - ax);
    }
    let mut sol = gauss_solve(&sys, &rhs);
    sol.truncate(nl);
    sol
}

/// Per-sample network evaluation with nested loops over explicit weight
/// tables; shares no code with `Mlp::forward`.
pub fn straight_line_forward(net: &Mlp, sample: &[f64]) -> Vec<f64> {
    let layers = net.num_weight_layers();
    let mut current = sample.to_vec();
    for l in 0..layers {
        let w = &net.weights()[l];
        let b = &net.biases()[l];
        let mut next = vec![0.0; w.rows()];
        for (i, out) in next.iter_mut().enumerate() {
            let mut acc = b[i];
            for (j, v) in current.iter().enumerate() {
                acc += w[(i, j)] * v;
            }
            *out = if l + 1 < layers {
                match net.activation() {
                    kktnn::Activation::Relu => acc.max(0.0),
                    kktnn::Activation::Tanh => acc.tanh(),
                }
            } else {
                acc
            };
        }
        current = next;
    }
    current
}

/// Central finite difference of `f` w.r.t. weight (layer, i, j).
pub fn fd_weight<F: Fn(&Mlp) -> f64>(
    net: &Mlp,
    layer: usize,
    i: usize,
    j: usize,
    h: f64,
    f: F,
) -> f64 {
    let mut plus = net.clone();
    plus.weights_mut()[layer][(i, j)] += h;
    let mut minus = net.clone();
    minus.weights_mut()[layer][(i, j)] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Central finite difference of `f` w.r.t. bias (layer, i).
pub fn fd_bias<F: Fn(&Mlp) -> f64>(net: &Mlp, layer: usize, i: usize, h: f64, f: F) -> f64 {
    let mut plus = net.clone();
    plus.biases_mut()[layer][i] += h;
    let mut minus = net.clone();
    minus.biases_mut()[layer][i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    a.data()
        .iter()
        .zip(b.data())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Random full-row-rank constraint system, built independently of the
/// library's helper.
pub fn random_constraints(seed: u64, m: usize, n0: usize, nl: usize) -> ConstraintSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        let mut a_rows = Vec::new();
        for _ in 0..m {
            a_rows.push((0..n0).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>());
        }
        let mut b_rows = Vec::new();
        for _ in 0..m {
            b_rows.push((0..nl).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>());
        }
        let rhs: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = Mat::from_rows(&a_rows).unwrap();
        let b = Mat::from_rows(&b_rows).unwrap();
        if let Ok(spec) = ConstraintSpec::new(a, b, rhs) {
            return spec;
        }
    }
    panic!("could not draw a full-rank system in 100 attempts");
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.random_range(lo..hi);
    }
    m
}
