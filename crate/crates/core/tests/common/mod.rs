//! Shared oracles for the integration suites. Everything here is an
//! independent route: no code under test is reused for the reference
//! computation.

use nalgebra::DMatrix;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64)
}

pub fn uniform_signed(rng: &mut ChaCha8Rng) -> f64 {
    uniform(rng) * 2.0 - 1.0
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| uniform_signed(rng))
}

/// Editing objective evaluated directly:
/// `||(W + D) K_I - M_I||^2 + lambda ||D K_J||^2`.
pub fn objective_direct(
    w: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    k_i: &DMatrix<f64>,
    m_i: &DMatrix<f64>,
    k_j: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    let fit = ((w + delta) * k_i - m_i).norm_squared();
    let reg = if k_j.ncols() > 0 { (delta * k_j).norm_squared() } else { 0.0 };
    fit + lambda * reg
}

/// Steepest descent with exact line search on the editing objective. For a
/// quadratic objective the optimal step along the gradient is
/// `||G||^2 / (2 <G A, G>)` with `A = K_I K_I^T + lambda K_J K_J^T`.
/// Runs up to `max_steps` steps, stopping early once the gradient vanishes.
pub fn gradient_descent_minimizer(
    w: &DMatrix<f64>,
    k_i: &DMatrix<f64>,
    m_i: &DMatrix<f64>,
    k_j: &DMatrix<f64>,
    lambda: f64,
    max_steps: usize,
) -> DMatrix<f64> {
    let gram = {
        let mut a = k_i * k_i.transpose();
        if k_j.ncols() > 0 {
            a += lambda * (k_j * k_j.transpose());
        }
        a
    };
    let rhs = (m_i - w * k_i) * k_i.transpose();
    let scale = rhs.norm().max(1.0);

    let mut delta = DMatrix::zeros(w.nrows(), w.ncols());
    for _ in 0..max_steps {
        let grad = 2.0 * (&delta * &gram - &rhs);
        let grad_norm_sq = grad.norm_squared();
        if grad_norm_sq.sqrt() <= 1e-14 * scale {
            break;
        }
        let curvature = 2.0 * (&grad * &gram).dot(&grad);
        if curvature <= 0.0 {
            break;
        }
        let step = grad_norm_sq / curvature;
        delta -= step * grad;
    }
    delta
}
