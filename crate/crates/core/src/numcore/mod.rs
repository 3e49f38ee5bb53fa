//! Dense linear algebra, seeded Gaussian sampling and angle helpers shared by
//! every other module. All arithmetic is `f64`.

mod matrix;
mod rng;
mod vector;

pub use matrix::{gaussian_matrix, Matrix};
pub(crate) use matrix::gemm;
pub use rng::{derive_seed, SeededRng};
pub use vector::{
    add_assign, axpy, cosine, cosine_angle, dot, max_abs_diff, norm, relative_error, scale,
    tree_sum,
};
