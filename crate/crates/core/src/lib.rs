//! Surrogate MLP training under hard linear equality constraints.
//!
//! Process-engineering surrogate models often know part of the physics up
//! front: mass and stoichiometric balances tie network inputs to outputs
//! through linear equalities `A·x + B·y = b`. This crate trains multilayer
//! perceptrons under four regimes and compares them:
//!
//! - `nn` — plain least-squares regression, constraints ignored;
//! - `pinn` — the constraint residual added to the loss as a weighted
//!   penalty (soft constraint);
//! - `kkt_hpinn` — non-trainable projection layers, derived in closed form
//!   from the KKT conditions of the least-distance problem, appended to the
//!   network so every prediction satisfies the constraints exactly, during
//!   training and at test time;
//! - `nn_post` — trained exactly like `nn`, projection applied only when
//!   evaluating.
//!
//! The [`data`] module generates synthetic datasets with the constraint
//! structure of three chemical-process case studies (a reactor unit, a
//! two-product plant, an extractive distillation subsystem), and the
//! [`harness`] module runs the repeated-seed comparison protocol with
//! RMSE/violation reporting.
//!
//! ```
//! use kktnn::{build_projection, apply_projection, violation, data};
//!
//! let ds = data::generate(data::TaskName::Cstr, 200, 7, 0.0).unwrap();
//! let scaled = data::fit_maxabs(&ds).unwrap();
//! let spec = scaled.scaled_spec().unwrap();
//! let proj = build_projection(&spec).unwrap();
//!
//! // any prediction lands on the constraint set
//! let x = scaled.x().row(0);
//! let wild_guess = vec![0.3; spec.output_dim()];
//! let fixed = apply_projection(&proj, x, &wild_guess).unwrap();
//! assert!(violation(&spec, x, &fixed).unwrap() < 1e-12);
//! ```

pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod projection;
mod seeds;
pub mod training;

pub use error::{Error, Result};
pub use linalg::{spd_solve, Mat};
pub use network::{Activation, AdamState, ForwardTrace, Gradients, Mlp};
pub use projection::{
    apply_projection, apply_projection_batch, build_projection, projection_backward,
    projection_backward_batch, rescale_constraints, violation, ConstraintSpec, ProjectionParams,
};
pub use training::{
    evaluate, loss_kkt, loss_nn, loss_pinn, train, Metrics, RunReport, TrainConfig, TrainMode,
};
