//! Shared fixtures for the benchmark targets.

use kktnn::data::{self, Dataset};
use kktnn::harness::random_spec;
use kktnn::ConstraintSpec;

/// Scaled reactor dataset of the standard size.
pub fn reactor_dataset(n: usize) -> Dataset {
    data::fit_maxabs(&data::cstr_generate(n, 7, 0.0).expect("generator"))
        .expect("scaling")
}

/// A representative random constraint system (2 constraints, 4 inputs,
/// 8 outputs).
pub fn medium_spec() -> ConstraintSpec {
    random_spec(42, 2, 4, 8)
}
