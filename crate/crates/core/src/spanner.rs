//! Approximate barycentric spanner over mean-feature vectors, via approximate
//! linear-optimization and vector-estimation oracles.
//!
//! The engine is oracle-generic: exact oracles are just the ε′ = 0
//! instantiation. Working vectors are ε-inflated along the query direction,
//! which keeps the witness matrix nonsingular and caps the number of
//! replacement swaps, since each accepted swap grows |det W| by a factor of at
//! least C.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::linalg::cofactor_direction;
use crate::Result;

/// Spanner output: `d` oracle indices, the inflated witness matrix whose
/// columns certify the coefficient bound, and iteration accounting.
#[derive(Debug, Clone)]
pub struct SpannerResult<Z> {
    pub items: Vec<Z>,
    pub witness: DMatrix<f64>,
    /// Initialization steps plus accepted swaps; at most
    /// [`iteration_bound`]`(d, c, eps)` when the oracles honor their contract.
    pub iterations_used: usize,
    pub lin_opt_calls: usize,
    pub vec_calls: usize,
}

/// d + ⌈(d/2)·log_C(100d/ε²)⌉, the guaranteed termination bound.
pub fn iteration_bound(dim: usize, c: f64, eps: f64) -> usize {
    let d = dim as f64;
    dim + ((d / 2.0) * ((100.0 * d / (eps * eps)).ln() / c.ln())).ceil() as usize
}

/// Computes a (C, ·)-approximate barycentric spanner of the vector family
/// indexed by the oracles.
///
/// `lin_opt` receives a unit direction θ and must return an index ẑ with
/// `sup_z θᵀw^z ≤ θᵀw^ẑ + ε′`; `vec_oracle` must return `ŵ_z` with
/// `‖ŵ_z − w^z‖ ≤ ε′`. The family must lie in the unit ball.
pub fn robust_spanner<Z: Clone>(
    dim: usize,
    mut lin_opt: impl FnMut(&DVector<f64>) -> Result<Z>,
    mut vec_oracle: impl FnMut(&Z) -> Result<DVector<f64>>,
    c: f64,
    eps: f64,
) -> Result<SpannerResult<Z>> {
    if c <= 1.0 {
        return Err(Error::invalid("robust_spanner: C must exceed 1"));
    }
    if eps <= 0.0 {
        return Err(Error::invalid("robust_spanner: eps must be positive"));
    }
    if dim == 0 {
        return Err(Error::invalid("robust_spanner: dimension must be positive"));
    }
    let n_iter = iteration_bound(dim, c, eps);
    let cap = n_iter + dim;
    let mut witness = DMatrix::<f64>::identity(dim, dim);
    let mut items: Vec<Option<Z>> = vec![None; dim];
    let mut lin_opt_calls = 0usize;
    let mut vec_calls = 0usize;

    let query = |theta_unit: &DVector<f64>,
                     lin_opt_calls: &mut usize,
                     vec_calls: &mut usize,
                     lin_opt: &mut dyn FnMut(&DVector<f64>) -> Result<Z>,
                     vec_oracle: &mut dyn FnMut(&Z) -> Result<DVector<f64>>|
     -> Result<(Z, DVector<f64>)> {
        *lin_opt_calls += 1;
        let z = lin_opt(theta_unit)?;
        *vec_calls += 1;
        let w = vec_oracle(&z)?;
        if w.len() != dim {
            return Err(Error::Internal("vec oracle returned wrong dimension".into()));
        }
        Ok((z, w))
    };

    // Initialization sweep: fill each column once.
    for i in 0..dim {
        let theta = cofactor_direction(&witness, i)?;
        let norm = theta.norm();
        // The ε-inflation of earlier columns keeps the cofactor nonzero; the
        // identity fallback only fires under oracle misbehavior.
        let unit = if norm < 1e-12 {
            let mut e = DVector::zeros(dim);
            e[i] = 1.0;
            e
        } else {
            &theta / norm
        };
        let (zp, wp) = query(&unit, &mut lin_opt_calls, &mut vec_calls, &mut lin_opt, &mut vec_oracle)?;
        let neg = -&unit;
        let (zm, wm) = query(&neg, &mut lin_opt_calls, &mut vec_calls, &mut lin_opt, &mut vec_oracle)?;
        let (z, w) = if unit.dot(&wp) >= -unit.dot(&wm) {
            (zp, &wp + &unit * eps)
        } else {
            (zm, &wm - &unit * eps)
        };
        witness.set_column(i, &w);
        items[i] = Some(z);
    }

    // Replacement sweeps: swap any column whose direction admits a vector
    // growing |det W| by a factor of C; stop at a full clean sweep.
    let mut swaps = 0usize;
    'outer: loop {
        let mut i = 0usize;
        while i < dim {
            let theta = cofactor_direction(&witness, i)?;
            let norm = theta.norm();
            if norm < 1e-12 {
                i += 1;
                continue;
            }
            let unit = &theta / norm;
            let det_abs = witness.determinant().abs().max(1e-14);
            let (zp, wp) = query(&unit, &mut lin_opt_calls, &mut vec_calls, &mut lin_opt, &mut vec_oracle)?;
            let neg = -&unit;
            let (zm, wm) = query(&neg, &mut lin_opt_calls, &mut vec_calls, &mut lin_opt, &mut vec_oracle)?;
            if theta.dot(&wp) + eps * norm >= c * det_abs {
                witness.set_column(i, &(&wp + &unit * eps));
                items[i] = Some(zp);
                swaps += 1;
                // Accepted swaps grow |det W| by a factor of C; this is what
                // bounds the swap count.
                debug_assert!(witness.determinant().abs() >= c * det_abs * (1.0 - 1e-9));
                if dim + swaps > cap {
                    return Err(Error::Internal(format!(
                        "robust_spanner exceeded {cap} iterations; an oracle is violating its \
                         approximation contract"
                    )));
                }
                continue 'outer;
            }
            if -theta.dot(&wm) + eps * norm >= c * det_abs {
                witness.set_column(i, &(&wm - &unit * eps));
                items[i] = Some(zm);
                swaps += 1;
                debug_assert!(witness.determinant().abs() >= c * det_abs * (1.0 - 1e-9));
                if dim + swaps > cap {
                    return Err(Error::Internal(format!(
                        "robust_spanner exceeded {cap} iterations; an oracle is violating its \
                         approximation contract"
                    )));
                }
                continue 'outer;
            }
            i += 1;
        }
        break;
    }

    Ok(SpannerResult {
        items: items.into_iter().map(|z| z.expect("all columns filled")).collect(),
        witness,
        iterations_used: dim + swaps,
        lin_opt_calls,
        vec_calls,
    })
}
