//! Ridge-regularized closed-form weight update.
//!
//! The update minimizes
//!
//! ```text
//! sum_i ||(W + D) k_i - m_i||^2  +  lambda * sum_j ||D k_j||^2
//! ```
//!
//! whose minimizer is `D = (M_I - W K_I) K_I^T (K_I K_I^T + lambda K_J K_J^T)^-1`.
//! The Gram matrix is symmetric PSD, so the inverse is never formed: the
//! system is solved by Cholesky factorization, with a documented ridge
//! jitter `eps * I` (`eps = 1e-10 * trace / dim`) added and flagged when the
//! Gram matrix is singular to working precision.

use nalgebra::DMatrix;

use super::{EditError, KeyMatrix, TargetMatrix};

/// Result of [`solve_delta`]: the delta and whether jitter was needed.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub delta: DMatrix<f64>,
    pub jittered: bool,
}

fn check_shapes(
    w: &DMatrix<f64>,
    keys: &KeyMatrix,
    targets: &TargetMatrix,
    preserved: &KeyMatrix,
) -> Result<(), EditError> {
    let (d_out, d_in) = w.shape();
    if keys.columns.nrows() != d_in {
        return Err(EditError::ShapeError {
            expected: format!("K_I with {d_in} rows"),
            got: format!("{} rows", keys.columns.nrows()),
        });
    }
    if targets.columns.shape() != (d_out, keys.columns.ncols()) {
        return Err(EditError::ShapeError {
            expected: format!("M_I {}x{}", d_out, keys.columns.ncols()),
            got: format!("{}x{}", targets.columns.nrows(), targets.columns.ncols()),
        });
    }
    if preserved.columns.ncols() > 0 && preserved.columns.nrows() != d_in {
        return Err(EditError::ShapeError {
            expected: format!("K_J with {d_in} rows"),
            got: format!("{} rows", preserved.columns.nrows()),
        });
    }
    Ok(())
}

/// Solve for the optimal delta. `lambda` must be non-negative; `lambda = 0`
/// requires `K_I K_I^T` to be well conditioned (otherwise the jitter path
/// engages and is flagged).
pub fn solve_delta(
    w: &DMatrix<f64>,
    keys: &KeyMatrix,
    targets: &TargetMatrix,
    preserved: &KeyMatrix,
    lambda: f64,
) -> Result<SolveOutcome, EditError> {
    if !(lambda >= 0.0) {
        return Err(EditError::InvalidLambda(lambda));
    }
    check_shapes(w, keys, targets, preserved)?;
    if keys.columns.ncols() == 0 {
        return Err(EditError::ShapeError {
            expected: "at least one key column".into(),
            got: "0 columns".into(),
        });
    }

    let k_i = &keys.columns;
    let mut gram = k_i * k_i.transpose();
    if preserved.columns.ncols() > 0 && lambda > 0.0 {
        gram += lambda * (&preserved.columns * preserved.columns.transpose());
    }
    // Products of the form A A^T are symmetric up to rounding; symmetrize so
    // the Cholesky sees an exactly symmetric matrix.
    let gram_t = gram.transpose();
    let asym = (&gram - &gram_t).norm();
    debug_assert!(asym <= 1e-10 * gram.norm().max(1.0), "gram asymmetry {asym}");
    let gram = (gram + gram_t) * 0.5;

    let residual = &targets.columns - w * k_i;
    let rhs = k_i * residual.transpose(); // (d_in x d_out) = gram^-1 applied below

    // Cholesky factors even numerically singular matrices with vanishing
    // pivots; treat a pivot ratio at the working-precision floor as singular.
    let factor = |g: DMatrix<f64>| -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let chol = g.cholesky()?;
        let diag = chol.l_dirty().diagonal();
        let (min, max) = (diag.min(), diag.max());
        if min > 0.0 && min > 1e-8 * max {
            Some(chol)
        } else {
            None
        }
    };
    let dim = gram.nrows();
    let (solution, jittered) = match factor(gram.clone()) {
        Some(chol) => (chol.solve(&rhs), false),
        None => {
            let eps = 1e-10 * gram.trace() / dim as f64;
            let jittered_gram = gram + DMatrix::from_diagonal_element(dim, dim, eps);
            let chol = jittered_gram
                .cholesky()
                .ok_or_else(|| EditError::NumericalError("gram matrix not PSD after jitter".into()))?;
            (chol.solve(&rhs), true)
        }
    };
    let delta = solution.transpose();
    if !delta.iter().all(|x| x.is_finite()) {
        return Err(EditError::NumericalError("non-finite delta entry".into()));
    }
    Ok(SolveOutcome { delta, jittered })
}

/// Value of the editing objective at a given delta.
pub fn objective_value(
    w: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    keys: &KeyMatrix,
    targets: &TargetMatrix,
    preserved: &KeyMatrix,
    lambda: f64,
) -> Result<f64, EditError> {
    check_shapes(w, keys, targets, preserved)?;
    if delta.shape() != w.shape() {
        return Err(EditError::ShapeError {
            expected: format!("delta {}x{}", w.nrows(), w.ncols()),
            got: format!("{}x{}", delta.nrows(), delta.ncols()),
        });
    }
    let fit = ((w + delta) * &keys.columns - &targets.columns).norm_squared();
    let reg = if preserved.columns.ncols() > 0 {
        (delta * &preserved.columns).norm_squared()
    } else {
        0.0
    };
    let value = fit + lambda * reg;
    if !value.is_finite() {
        return Err(EditError::NumericalError("non-finite objective".into()));
    }
    Ok(value)
}

/// Mean over preservation keys of `||delta * k_j||`. Zero for an empty key
/// set.
pub fn regularizer_norms(delta: &DMatrix<f64>, preserved: &KeyMatrix) -> Result<f64, EditError> {
    if preserved.columns.ncols() == 0 {
        return Ok(0.0);
    }
    if preserved.columns.nrows() != delta.ncols() {
        return Err(EditError::ShapeError {
            expected: format!("keys with {} rows", delta.ncols()),
            got: format!("{} rows", preserved.columns.nrows()),
        });
    }
    let projected = delta * &preserved.columns;
    let mean = (0..projected.ncols())
        .map(|j| projected.column(j).norm())
        .sum::<f64>()
        / projected.ncols() as f64;
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(rng: &mut ChaCha8Rng) -> f64 {
        ((rng.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| uniform(rng))
    }

    #[test]
    fn zero_residual_gives_zero_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_matrix(&mut rng, 6, 8);
        let k_i = KeyMatrix { columns: random_matrix(&mut rng, 8, 3), layer: 0 };
        let m_i = TargetMatrix { columns: &w * &k_i.columns, layer: 0 };
        let k_j = KeyMatrix { columns: random_matrix(&mut rng, 8, 5), layer: 0 };
        let out = solve_delta(&w, &k_i, &m_i, &k_j, 10.0).unwrap();
        assert!(out.delta.norm() <= 1e-12, "delta norm {}", out.delta.norm());
    }

    #[test]
    fn square_invertible_keys_interpolate_exactly_without_preservation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random_matrix(&mut rng, 6, 8);
        let k_i = KeyMatrix {
            columns: random_matrix(&mut rng, 8, 8) + DMatrix::identity(8, 8) * 2.0,
            layer: 0,
        };
        let m_i = TargetMatrix { columns: random_matrix(&mut rng, 6, 8), layer: 0 };
        let empty = KeyMatrix { columns: DMatrix::zeros(8, 0), layer: 0 };
        let out = solve_delta(&w, &k_i, &m_i, &empty, 0.0).unwrap();
        let fit = ((&w + &out.delta) * &k_i.columns - &m_i.columns).norm();
        assert!(fit <= 1e-8, "interpolation residual {fit}");
    }

    #[test]
    fn objective_at_zero_delta_is_pure_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_matrix(&mut rng, 4, 6);
        let k_i = KeyMatrix { columns: random_matrix(&mut rng, 6, 2), layer: 0 };
        let m_i = TargetMatrix { columns: random_matrix(&mut rng, 4, 2), layer: 0 };
        let k_j = KeyMatrix { columns: random_matrix(&mut rng, 6, 4), layer: 0 };
        let zero = DMatrix::zeros(4, 6);
        let v = objective_value(&w, &zero, &k_i, &m_i, &k_j, 7.0).unwrap();
        let fit = (&w * &k_i.columns - &m_i.columns).norm_squared();
        assert!((v - fit).abs() < 1e-12);
    }

    #[test]
    fn unregularized_objective_ignores_preservation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random_matrix(&mut rng, 4, 6);
        let delta = random_matrix(&mut rng, 4, 6) * 0.1;
        let k_i = KeyMatrix { columns: random_matrix(&mut rng, 6, 2), layer: 0 };
        let m_i = TargetMatrix { columns: random_matrix(&mut rng, 4, 2), layer: 0 };
        let k_j = KeyMatrix { columns: random_matrix(&mut rng, 6, 4), layer: 0 };
        let with = objective_value(&w, &delta, &k_i, &m_i, &k_j, 0.0).unwrap();
        let empty = KeyMatrix { columns: DMatrix::zeros(6, 0), layer: 0 };
        let without = objective_value(&w, &delta, &k_i, &m_i, &empty, 0.0).unwrap();
        assert!((with - without).abs() < 1e-12);
    }

    #[test]
    fn solution_is_a_local_minimum_of_the_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_matrix(&mut rng, 6, 8);
        let k_i = KeyMatrix { columns: random_matrix(&mut rng, 8, 3), layer: 0 };
        let m_i = TargetMatrix { columns: random_matrix(&mut rng, 6, 3), layer: 0 };
        let k_j = KeyMatrix { columns: random_matrix(&mut rng, 8, 16), layer: 0 };
        let lambda = 10.0;
        let out = solve_delta(&w, &k_i, &m_i, &k_j, lambda).unwrap();
        let best = objective_value(&w, &out.delta, &k_i, &m_i, &k_j, lambda).unwrap();
        for _ in 0..20 {
            let noise = random_matrix(&mut rng, 6, 8);
            let perturbed = &out.delta + noise * (1e-2 / 1.0);
            let v = objective_value(&w, &perturbed, &k_i, &m_i, &k_j, lambda).unwrap();
            assert!(v > best, "perturbed objective {v} not above optimum {best}");
        }
    }

    #[test]
    fn rank_one_regularizer_norm_is_value_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let k = {
            let mut v = DVector::from_fn(8, |i, _| uniform(&mut rng) + i as f64 * 0.01);
            v /= v.norm();
            v
        };
        let value = DVector::from_fn(6, |i, _| 0.3 * (i as f64 + 1.0));
        let delta = &value * k.transpose();
        let k_j = KeyMatrix { columns: DMatrix::from_columns(&[k]), layer: 0 };
        let norm = regularizer_norms(&delta, &k_j).unwrap();
        assert!((norm - value.norm()).abs() < 1e-12);
    }

    #[test]
    fn regularizer_norm_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let delta = random_matrix(&mut rng, 6, 8);
        let k_j = KeyMatrix { columns: random_matrix(&mut rng, 8, 9), layer: 0 };
        let fast = regularizer_norms(&delta, &k_j).unwrap();
        let mut acc = 0.0;
        for j in 0..9 {
            let mut sq = 0.0;
            for r in 0..6 {
                let mut dot = 0.0;
                for c in 0..8 {
                    dot += delta[(r, c)] * k_j.columns[(c, j)];
                }
                sq += dot * dot;
            }
            acc += sq.sqrt();
        }
        assert!((fast - acc / 9.0).abs() < 1e-12);
    }

    #[test]
    fn zero_delta_has_zero_regularizer_norm() {
        let k_j = KeyMatrix { columns: DMatrix::from_element(8, 3, 0.7), layer: 0 };
        let zero = DMatrix::zeros(6, 8);
        assert_eq!(regularizer_norms(&zero, &k_j).unwrap(), 0.0);
    }

    #[test]
    fn negative_lambda_is_rejected() {
        let w = DMatrix::zeros(2, 2);
        let k = KeyMatrix { columns: DMatrix::identity(2, 2), layer: 0 };
        let m = TargetMatrix { columns: DMatrix::zeros(2, 2), layer: 0 };
        assert!(matches!(
            solve_delta(&w, &k, &m, &k.clone(), -1.0),
            Err(EditError::InvalidLambda(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let w = DMatrix::zeros(2, 3);
        let k = KeyMatrix { columns: DMatrix::zeros(4, 2), layer: 0 };
        let m = TargetMatrix { columns: DMatrix::zeros(2, 2), layer: 0 };
        let empty = KeyMatrix { columns: DMatrix::zeros(3, 0), layer: 0 };
        assert!(matches!(
            solve_delta(&w, &k, &m, &empty, 1.0),
            Err(EditError::ShapeError { .. })
        ));
    }

    #[test]
    fn singular_gram_engages_jitter() {
        // one repeated key column: K_I K_I^T is rank 1 at dim 4
        let k_col = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5]);
        let k_i = KeyMatrix {
            columns: DMatrix::from_columns(&[k_col.clone(), k_col]),
            layer: 0,
        };
        let w = DMatrix::zeros(3, 4);
        let m_i = TargetMatrix { columns: DMatrix::from_element(3, 2, 1.0), layer: 0 };
        let empty = KeyMatrix { columns: DMatrix::zeros(4, 0), layer: 0 };
        let out = solve_delta(&w, &k_i, &m_i, &empty, 0.0).unwrap();
        assert!(out.jittered);
        assert!(out.delta.iter().all(|x| x.is_finite()));
    }
}
