//! Dense small-dimension linear algebra: minimum-norm least squares, ridge
//! regression, subspace arithmetic, cofactor directions for the spanner, and
//! linear maximization over ball-plus-halfspace constraint sets.
//!
//! Everything here is a pure function of its inputs and safe to call from any
//! number of concurrent workers. Dimensions are desk-scale (d ≲ 100); nothing
//! is tuned for sparsity or large matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::Result;

/// Default relative tolerance for subspace membership tests.
///
/// Transitions are deterministic, so identical features repeat bit-identically;
/// the tolerance only absorbs projection round-off.
pub const MEMBERSHIP_TOL: f64 = 1e-8;

/// Relative singular-value cutoff for pseudoinverse rank decisions.
pub const SV_CUTOFF: f64 = 1e-10;

/// Halfspace directions closer than this (in max-norm) are merged.
const DIRECTION_MERGE_TOL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Subspace
// ---------------------------------------------------------------------------

/// A linear subspace of R^d, stored as an orthonormal basis (possibly empty).
#[derive(Debug, Clone)]
pub struct Subspace {
    basis: Vec<DVector<f64>>,
    ambient_dim: usize,
}

impl Subspace {
    /// The zero subspace of R^d.
    pub fn empty(ambient_dim: usize) -> Self {
        Subspace { basis: Vec::new(), ambient_dim }
    }

    /// Builds a subspace from vectors that are already orthonormal.
    ///
    /// Returns an error if pairwise inner products deviate from the identity
    /// pattern by more than 1e-10.
    pub fn from_orthonormal(basis: Vec<DVector<f64>>, ambient_dim: usize) -> Result<Self> {
        for b in &basis {
            if b.len() != ambient_dim {
                return Err(Error::invalid("basis vector dimension mismatch"));
            }
        }
        for (i, a) in basis.iter().enumerate() {
            for (j, b) in basis.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                if (a.dot(b) - expected).abs() > 1e-10 {
                    return Err(Error::invalid("basis is not orthonormal"));
                }
            }
        }
        Ok(Subspace { basis, ambient_dim })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn basis(&self) -> &[DVector<f64>] {
        &self.basis
    }

    pub fn is_full(&self) -> bool {
        self.basis.len() == self.ambient_dim
    }
}

/// Orthogonalizes `v` against `basis` (two passes, for tight orthogonality)
/// and returns the residual.
fn orthogonalize_against(basis: &[DVector<f64>], v: &DVector<f64>) -> DVector<f64> {
    let mut r = v.clone();
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(&r);
            r.axpy(-c, b, 1.0);
        }
    }
    r
}

/// Orthonormal basis of the span of `vectors`.
///
/// Vectors whose residual after orthogonalization has norm at most
/// `tol * max(1, input norm)` are dropped.
pub fn orthonormal_basis(vectors: &[DVector<f64>], tol: f64, ambient_dim: usize) -> Result<Subspace> {
    if tol <= 0.0 {
        return Err(Error::invalid("orthonormal_basis: tol must be positive"));
    }
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for v in vectors {
        if v.len() != ambient_dim {
            return Err(Error::invalid("orthonormal_basis: vector dimension mismatch"));
        }
        if basis.len() == ambient_dim {
            break;
        }
        let r = orthogonalize_against(&basis, v);
        let n = r.norm();
        if n > tol * v.norm().max(1.0) {
            basis.push(r / n);
        }
    }
    Ok(Subspace { basis, ambient_dim })
}

/// Orthonormal basis of the orthogonal complement of `s`.
///
/// The returned subspace has dimension `ambient_dim - s.dim()` and its basis
/// vectors are orthogonal to `s` to 1e-10.
pub fn orthogonal_complement_basis(s: &Subspace) -> Subspace {
    let d = s.ambient_dim;
    let want = d - s.dim();
    let mut combined: Vec<DVector<f64>> = s.basis.clone();
    let mut complement: Vec<DVector<f64>> = Vec::with_capacity(want);
    for j in 0..d {
        if complement.len() == want {
            break;
        }
        let mut e = DVector::zeros(d);
        e[j] = 1.0;
        let r = orthogonalize_against(&combined, &e);
        let n = r.norm();
        // An incomplete span always leaves some identity vector with residual
        // norm >= 1/sqrt(d), far above this threshold.
        if n > 1e-6 {
            let b = r / n;
            combined.push(b.clone());
            complement.push(b);
        }
    }
    debug_assert_eq!(complement.len(), want);
    Subspace { basis: complement, ambient_dim: d }
}

/// Projects `v` onto the orthogonal complement of `s`.
///
/// Idempotent; the output has inner product ≤ 1e-10 with every basis vector.
pub fn project_complement(s: &Subspace, v: &DVector<f64>) -> DVector<f64> {
    orthogonalize_against(&s.basis, v)
}

/// True iff the residual of `v` off `s` has norm at most `tol * max(1, ||v||)`.
pub fn subspace_contains(s: &Subspace, v: &DVector<f64>, tol: f64) -> bool {
    project_complement(s, v).norm() <= tol * v.norm().max(1.0)
}

/// Extends `s` by `v` if `v` is not already contained (at [`MEMBERSHIP_TOL`]).
/// The dimension grows by exactly one or stays unchanged.
pub fn span_extend(s: &Subspace, v: &DVector<f64>) -> Subspace {
    let r = project_complement(s, v);
    let n = r.norm();
    if n <= MEMBERSHIP_TOL * v.norm().max(1.0) {
        return s.clone();
    }
    let mut basis = s.basis.clone();
    basis.push(r / n);
    Subspace { basis, ambient_dim: s.ambient_dim }
}

// ---------------------------------------------------------------------------
// Regression
// ---------------------------------------------------------------------------

/// Minimum-norm least squares: θ = Σ† Φᵀy with Σ = ΦᵀΦ.
///
/// The pseudoinverse truncates singular values below `sv_cutoff * σ_max`.
/// Since Σ is symmetric positive semidefinite its SVD coincides with its
/// eigendecomposition, which is computed by the symmetric QR algorithm;
/// the general bidiagonalization path can return factors that are off by
/// far more than round-off on some Gram matrices. For targets exactly
/// linear in the features this satisfies Σ(θ − θ*) = 0 and interpolates
/// the training points.
pub fn min_norm_lstsq(
    features: &DMatrix<f64>,
    targets: &DVector<f64>,
    sv_cutoff: f64,
) -> Result<DVector<f64>> {
    if sv_cutoff <= 0.0 {
        return Err(Error::invalid("min_norm_lstsq: sv_cutoff must be positive"));
    }
    let n = features.nrows();
    let d = features.ncols();
    if n == 0 {
        return Err(Error::invalid("min_norm_lstsq: empty design"));
    }
    if targets.len() != n {
        return Err(Error::invalid(format!(
            "min_norm_lstsq: {} rows but {} targets",
            n,
            targets.len()
        )));
    }
    let sigma = features.transpose() * features;
    let b = features.transpose() * targets;
    let eig = sigma.symmetric_eigen();
    // Eigenvalues are nonnegative up to round-off; tiny negatives fall under
    // the cutoff with everything else.
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let qtb = eig.eigenvectors.transpose() * b;
    let mut scaled = DVector::zeros(d);
    for i in 0..d {
        let lambda = eig.eigenvalues[i];
        if lambda > sv_cutoff * lambda_max {
            scaled[i] = qtb[i] / lambda;
        }
    }
    Ok(&eig.eigenvectors * scaled)
}

/// Ridge regression: (λI + ΦᵀΦ)⁻¹ Φᵀy. An empty design returns zeros.
pub fn ridge_regression(
    features: &DMatrix<f64>,
    targets: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    if lambda <= 0.0 {
        return Err(Error::invalid("ridge_regression: lambda must be positive"));
    }
    let d = features.ncols();
    let n = features.nrows();
    if targets.len() != n {
        return Err(Error::invalid("ridge_regression: row/target mismatch"));
    }
    if n == 0 {
        return Ok(DVector::zeros(d));
    }
    let v = DMatrix::identity(d, d) * lambda + features.transpose() * features;
    let b = features.transpose() * targets;
    let chol = v
        .cholesky()
        .ok_or_else(|| Error::Internal("ridge gram matrix not positive definite".into()))?;
    Ok(chol.solve(&b))
}

// ---------------------------------------------------------------------------
// Cofactor directions
// ---------------------------------------------------------------------------

/// Returns the vector whose j-th entry is det(W with column `col` replaced by
/// e_j); equivalently the `col`-th row of the adjugate transpose.
///
/// Computed by d determinant evaluations (LU with partial pivoting), which is
/// fine at desk-scale d. For any vector v, the returned θ satisfies
/// θᵀv = det(W with column `col` replaced by v).
pub fn cofactor_direction(w: &DMatrix<f64>, col: usize) -> Result<DVector<f64>> {
    let d = w.nrows();
    if w.ncols() != d {
        return Err(Error::invalid("cofactor_direction: matrix must be square"));
    }
    if col >= d {
        return Err(Error::invalid("cofactor_direction: column index out of range"));
    }
    let mut theta = DVector::zeros(d);
    let mut m = w.clone();
    for j in 0..d {
        for r in 0..d {
            m[(r, col)] = if r == j { 1.0 } else { 0.0 };
        }
        theta[j] = m.determinant();
    }
    Ok(theta)
}

// ---------------------------------------------------------------------------
// Constraint sets and linear maximization
// ---------------------------------------------------------------------------

/// One two-sided halfspace: lower ≤ gᵀθ ≤ upper.
#[derive(Debug, Clone)]
pub struct Halfspace {
    pub g: DVector<f64>,
    pub lower: f64,
    pub upper: f64,
}

/// Intersection of a Euclidean ball ‖θ‖₂ ≤ `norm_bound` with two-sided
/// halfspaces. New halfspaces whose direction matches an existing one to
/// 1e-10 merge by interval intersection, keeping the set size linear in the
/// number of distinct directions.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    dim: usize,
    norm_bound: f64,
    halfspaces: Vec<Halfspace>,
}

impl ConstraintSet {
    pub fn new(dim: usize, norm_bound: f64) -> Result<Self> {
        if norm_bound <= 0.0 {
            return Err(Error::invalid("ConstraintSet: norm_bound must be positive"));
        }
        Ok(ConstraintSet { dim, norm_bound, halfspaces: Vec::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }

    /// Intersects `lower ≤ gᵀθ ≤ upper` into the set.
    ///
    /// Returns `Error::Infeasible` if an interval merge produces an empty
    /// interval, which under deterministic linear rewards signals a bug.
    pub fn add_interval(&mut self, g: DVector<f64>, lower: f64, upper: f64) -> Result<()> {
        if g.len() != self.dim {
            return Err(Error::invalid("add_interval: direction dimension mismatch"));
        }
        if lower > upper {
            return Err(Error::invalid("add_interval: lower > upper"));
        }
        for hs in &mut self.halfspaces {
            let same = hs.g.iter().zip(g.iter()).all(|(a, b)| (a - b).abs() <= DIRECTION_MERGE_TOL);
            if same {
                hs.lower = hs.lower.max(lower);
                hs.upper = hs.upper.min(upper);
                if hs.lower > hs.upper {
                    return Err(Error::Infeasible(format!(
                        "interval merge emptied constraint: [{}, {}]",
                        hs.lower, hs.upper
                    )));
                }
                return Ok(());
            }
            let negated = hs.g.iter().zip(g.iter()).all(|(a, b)| (a + b).abs() <= DIRECTION_MERGE_TOL);
            if negated {
                hs.lower = hs.lower.max(-upper);
                hs.upper = hs.upper.min(-lower);
                if hs.lower > hs.upper {
                    return Err(Error::Infeasible(format!(
                        "interval merge emptied constraint: [{}, {}]",
                        hs.lower, hs.upper
                    )));
                }
                return Ok(());
            }
        }
        self.halfspaces.push(Halfspace { g, lower, upper });
        Ok(())
    }

    fn max_violation(&self, theta: &DVector<f64>) -> f64 {
        let mut v: f64 = theta.norm() - self.norm_bound;
        for hs in &self.halfspaces {
            let a = hs.g.dot(theta);
            v = v.max(a - hs.upper).max(hs.lower - a);
        }
        v.max(0.0)
    }

    /// Dykstra's alternating projection onto the intersection.
    ///
    /// The cycle cap is generous because nearly parallel tight slabs make
    /// alternating projections converge slowly; typical sets exit after a
    /// few dozen cycles via the movement test.
    fn project(&self, x0: &DVector<f64>) -> DVector<f64> {
        let mut x = x0.clone();
        // Ball correction plus one correction per halfspace.
        let mut corrections: Vec<DVector<f64>> =
            vec![DVector::zeros(self.dim); self.halfspaces.len() + 1];
        let scale = 1.0 + self.norm_bound;
        for _cycle in 0..5000 {
            let mut moved = 0.0f64;
            // Ball.
            {
                let y = &x + &corrections[0];
                let n = y.norm();
                let projected = if n > self.norm_bound { &y * (self.norm_bound / n) } else { y.clone() };
                corrections[0] = y - &projected;
                moved = moved.max((&projected - &x).norm());
                x = projected;
            }
            // Slabs.
            for (k, hs) in self.halfspaces.iter().enumerate() {
                let y = &x + &corrections[k + 1];
                let a = hs.g.dot(&y);
                let gg = hs.g.norm_squared();
                let projected = if gg == 0.0 {
                    y.clone()
                } else if a > hs.upper {
                    &y - &hs.g * ((a - hs.upper) / gg)
                } else if a < hs.lower {
                    &y + &hs.g * ((hs.lower - a) / gg)
                } else {
                    y.clone()
                };
                corrections[k + 1] = y - &projected;
                moved = moved.max((&projected - &x).norm());
                x = projected;
            }
            if moved <= 1e-13 * scale {
                break;
            }
        }
        x
    }
}

/// Maximizes `objectiveᵀθ` over a constraint set, returning the supremum and
/// an (approximately) feasible maximizer. The infimum is obtained by negating
/// the objective.
///
/// Proximal-point iteration θ ← P(θ + η·objective), with the projection P
/// computed by Dykstra's method; for a linear objective over a ball-plus-slabs
/// region this converges linearly, and the iteration/tolerance caps below give
/// roughly 1e-7 accuracy on desk-scale instances.
pub fn lp_max_linear(c: &ConstraintSet, objective: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    if objective.len() != c.dim {
        return Err(Error::invalid("lp_max_linear: objective dimension mismatch"));
    }
    let r = c.norm_bound;
    let obj_norm = objective.norm();
    if c.halfspaces.is_empty() {
        // Ball only: supremum is R·‖c‖ at R·c/‖c‖.
        if obj_norm == 0.0 {
            return Ok((0.0, DVector::zeros(c.dim)));
        }
        let argmax = objective * (r / obj_norm);
        return Ok((obj_norm * r, argmax));
    }
    let mut theta = c.project(&DVector::zeros(c.dim));
    if obj_norm > 0.0 {
        let eta = 8.0 * r / obj_norm;
        let stop = 1e-11 * (1.0 + r);
        let mut quiet = 0u32;
        for _ in 0..10_000 {
            let next = c.project(&(&theta + objective * eta));
            let delta = (&next - &theta).norm();
            theta = next;
            if delta <= stop {
                quiet += 1;
                if quiet >= 3 {
                    break;
                }
            } else {
                quiet = 0;
            }
        }
    }
    let tol = 1e-6 * (1.0 + r);
    let mut violation = c.max_violation(&theta);
    if violation > tol {
        // Distinguish slow convergence from genuine infeasibility: pure
        // projection passes shrink the violation of a feasible set toward
        // zero, while an empty intersection leaves a positive gap.
        for _ in 0..3 {
            theta = c.project(&theta);
            violation = c.max_violation(&theta);
            if violation <= tol {
                break;
            }
        }
    }
    if violation > tol {
        return Err(Error::Infeasible(format!(
            "no feasible point found (residual violation {violation:.3e})"
        )));
    }
    Ok((objective.dot(&theta), theta))
}
