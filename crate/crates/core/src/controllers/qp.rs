//! Convex QP with equality and box constraints, solved by ADMM.
//!
//! ```text
//! minimise  ½ xᵀP x + qᵀx
//! subject to  E x = b,  lower ≤ x ≤ upper
//! ```
//!
//! The splitting keeps the equalities inside the x-update, which is solved
//! exactly in the null space of `E`, and moves the boxes into a projection.
//! Every few iterations the active set is guessed from the iterate and the
//! reduced equality-constrained problem is solved directly ("polishing");
//! the polished point is accepted once it passes a full KKT check.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QpSettings {
    pub max_iterations: usize,
    /// Primal and dual residual target (∞-norm).
    pub tolerance: f64,
    pub rho: f64,
    pub sigma: f64,
    pub adaptive_rho: bool,
    pub polish: bool,
    /// Iterations between residual-balancing and polishing attempts.
    pub check_interval: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 4000,
            tolerance: 1e-7,
            rho: 0.1,
            sigma: 1e-6,
            adaptive_rho: true,
            polish: true,
            check_interval: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub polished: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Objective at each x-iterate (the first iterate onwards), then at the
    /// returned point.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum QpError {
    #[error("inconsistent problem dimensions: {0}")]
    Dimension(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("equality constraints are linearly dependent")]
    DependentConstraints,
    #[error("no convergence after {iterations} iterations (primal {:.3e}, dual {:.3e})",
        .residuals.last().map_or(f64::NAN, |r| r.0), .residuals.last().map_or(f64::NAN, |r| r.1))]
    NoConvergence {
        iterations: usize,
        /// (primal, dual) residual after every iteration.
        residuals: Vec<(f64, f64)>,
        last: DVector<f64>,
    },
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    fn check(&self) -> Result<(), QpError> {
        let n = self.dim();
        let m = self.eq_rhs.len();
        if self.p.shape() != (n, n)
            || self.eq_matrix.shape() != (m, n)
            || self.lower.len() != n
            || self.upper.len() != n
        {
            return Err(QpError::Dimension(format!(
                "n = {n}, m = {m}, P {:?}, E {:?}, bounds {}/{}",
                self.p.shape(),
                self.eq_matrix.shape(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        for i in 0..n {
            if self.lower[i] > self.upper[i] || self.lower[i].is_nan() || self.upper[i].is_nan() {
                return Err(QpError::Infeasible(format!(
                    "bounds of variable {i} are empty: [{}, {}]",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }
}

/// Affine set `{x : E x = b}` as `x_p + Z y` with orthonormal `Z`.
struct AffineSpace {
    particular: DVector<f64>,
    basis: DMatrix<f64>,
    /// Factor `R₁` and orthonormal `Q₁` of `Eᵀ = Q₁R₁`, kept for multipliers.
    q1: DMatrix<f64>,
    r1: DMatrix<f64>,
}

impl AffineSpace {
    fn new(e: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self, QpError> {
        let (m, n) = e.shape();
        if m == 0 {
            return Ok(Self {
                particular: DVector::zeros(n),
                basis: DMatrix::identity(n, n),
                q1: DMatrix::zeros(n, 0),
                r1: DMatrix::zeros(0, 0),
            });
        }
        if m > n {
            return Err(QpError::DependentConstraints);
        }
        // Householder QR of [Eᵀ | I] yields a full orthonormal Q whose first
        // m columns span the row space of E.
        let mut aug = DMatrix::zeros(n, m + n);
        aug.view_mut((0, 0), (n, m)).copy_from(&e.transpose());
        aug.view_mut((0, m), (n, n)).fill_with_identity();
        let qr = aug.qr();
        let q = qr.q();
        let r = qr.r();
        let r1 = r.view((0, 0), (m, m)).into_owned();
        let scale = r1.diagonal().amax().max(1.0);
        if r1.diagonal().iter().any(|d| d.abs() < 1e-10 * scale) {
            return Err(QpError::DependentConstraints);
        }
        let q1 = q.view((0, 0), (n, m)).into_owned();
        let basis = q.view((0, m), (n, n - m)).into_owned();
        // E x_p = b with x_p = Q₁ R₁⁻ᵀ b
        let w = r1
            .transpose()
            .solve_lower_triangular(b)
            .ok_or(QpError::DependentConstraints)?;
        Ok(Self {
            particular: &q1 * w,
            basis,
            q1,
            r1,
        })
    }

    /// Least-squares multipliers `ν` with `Eᵀν ≈ g`.
    fn multipliers(&self, g: &DVector<f64>) -> DVector<f64> {
        if self.r1.nrows() == 0 {
            return DVector::zeros(0);
        }
        self.r1
            .solve_upper_triangular(&(self.q1.transpose() * g))
            .unwrap_or_else(|| DVector::zeros(self.r1.nrows()))
    }
}

pub fn qp_solve(
    problem: &QpProblem,
    settings: &QpSettings,
    warm_start: Option<&DVector<f64>>,
) -> Result<QpSolution, QpError> {
    problem.check()?;
    let n = problem.dim();
    let space = AffineSpace::new(&problem.eq_matrix, &problem.eq_rhs)?;
    let z_basis = &space.basis;
    let reduced_p = z_basis.transpose() * &problem.p * z_basis;
    let eig = SymmetricEigen::new(reduced_p);
    // constant part of the reduced gradient
    let g0 = z_basis.transpose() * (&problem.p * &space.particular + &problem.q);

    let clip = |v: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(n, |i, _| v[i].clamp(problem.lower[i], problem.upper[i]))
    };

    let mut rho = settings.rho;
    let sigma = settings.sigma;
    let mut x = warm_start.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut z = clip(&x);
    let mut w = DVector::zeros(n);
    let mut history = Vec::new();
    let mut residuals = Vec::new();
    let mut last_active: Option<Vec<i8>> = None;

    for k in 1..=settings.max_iterations {
        // x-update: argmin over the affine set of
        // ½xᵀPx + qᵀx + ρ/2‖x − z + w‖² + σ/2‖x − x_k‖²
        let c = (&z - &w) * rho + &x * sigma;
        let c = c / (rho + sigma);
        let rhs = z_basis.transpose() * (&c - &space.particular) * (rho + sigma) - &g0;
        let mut y = eig.eigenvectors.transpose() * rhs;
        for i in 0..y.len() {
            y[i] /= eig.eigenvalues[i] + rho + sigma;
        }
        x = &space.particular + z_basis * (&eig.eigenvectors * y);
        history.push(problem.objective(&x));

        let z_prev = z.clone();
        z = clip(&(&x + &w));
        w += &x - &z;
        let primal = (&x - &z).amax();
        let dual = rho * (&z - &z_prev).amax();
        residuals.push((primal, dual));

        let converged = primal < settings.tolerance && dual < settings.tolerance;
        let checkpoint = k % settings.check_interval.max(1) == 0;
        if settings.polish && (converged || checkpoint) {
            let active = active_set(problem, &z, &(&w * rho));
            if converged || last_active.as_ref() != Some(&active) {
                if let Some(p) = polish(problem, &active) {
                    let objective = problem.objective(&p);
                    history.push(objective);
                    return Ok(QpSolution {
                        x: p,
                        objective,
                        iterations: k,
                        polished: true,
                        primal_residual: primal,
                        dual_residual: dual,
                        history,
                    });
                }
            }
            last_active = Some(active);
        }
        if converged {
            let objective = problem.objective(&z);
            history.push(objective);
            return Ok(QpSolution {
                x: z,
                objective,
                iterations: k,
                polished: false,
                primal_residual: primal,
                dual_residual: dual,
                history,
            });
        }
        if settings.adaptive_rho && checkpoint {
            // residual balancing, at most one decade per adjustment
            let ratio = (primal / dual.max(1e-30)).sqrt().clamp(0.1, 10.0);
            if !(0.2..=5.0).contains(&ratio) {
                let new_rho = (rho * ratio).clamp(1e-6, 1e6);
                w *= rho / new_rho;
                rho = new_rho;
            }
        }
    }
    Err(QpError::NoConvergence {
        iterations: settings.max_iterations,
        residuals,
        last: z,
    })
}

/// −1 at an active lower bound, +1 at an active upper bound, 0 otherwise.
/// `y` are the box multipliers implied by the scaled dual.
fn active_set(problem: &QpProblem, z: &DVector<f64>, y: &DVector<f64>) -> Vec<i8> {
    (0..z.len())
        .map(|i| {
            if z[i] - problem.lower[i] < -y[i] {
                -1
            } else if problem.upper[i] - z[i] < y[i] {
                1
            } else {
                0
            }
        })
        .collect()
}

/// Solves the problem with the guessed active bounds held as equalities and
/// returns the point if it satisfies the KKT conditions of the full problem.
fn polish(problem: &QpProblem, active: &[i8]) -> Option<DVector<f64>> {
    let n = problem.dim();
    let free: Vec<usize> = (0..n).filter(|&i| active[i] == 0).collect();
    let mut x = DVector::from_fn(n, |i, _| match active[i] {
        -1 => problem.lower[i],
        1 => problem.upper[i],
        _ => 0.0,
    });
    let nf = free.len();
    let e = &problem.eq_matrix;
    let rhs_full = &problem.eq_rhs - e * &x;
    // equality rows restricted to free columns; rows emptied by fixing are
    // dropped when they are already satisfied
    let mut rows = Vec::new();
    for r in 0..e.nrows() {
        let norm = free.iter().map(|&j| e[(r, j)].abs()).fold(0.0, f64::max);
        if norm > 1e-12 {
            rows.push(r);
        } else if rhs_full[r].abs() > 1e-9 {
            return None;
        }
    }
    let ef = DMatrix::from_fn(rows.len(), nf, |r, c| e[(rows[r], free[c])]);
    let bf = DVector::from_fn(rows.len(), |r, _| rhs_full[rows[r]]);
    let pf = DMatrix::from_fn(nf, nf, |r, c| problem.p[(free[r], free[c])]);
    let qf = DVector::from_fn(nf, |r, _| {
        problem.q[free[r]]
            + active
                .iter()
                .enumerate()
                .filter(|(_, &a)| a != 0)
                .map(|(j, _)| problem.p[(free[r], j)] * x[j])
                .sum::<f64>()
    });
    let space = AffineSpace::new(&ef, &bf).ok()?;
    let zb = &space.basis;
    let h = zb.transpose() * &pf * zb;
    let g = zb.transpose() * (&pf * &space.particular + &qf);
    let y = h.cholesky()?.solve(&(-g));
    let xf = &space.particular + zb * y;
    for (k, &i) in free.iter().enumerate() {
        x[i] = xf[k];
    }

    // KKT check on the full problem
    let tol = 1e-9 * (1.0 + problem.q.amax() + problem.p.amax());
    for i in 0..n {
        if x[i] < problem.lower[i] - 1e-9 || x[i] > problem.upper[i] + 1e-9 {
            return None;
        }
    }
    if (e * &x - &problem.eq_rhs).amax() > 1e-9 * (1.0 + problem.eq_rhs.amax()) {
        return None;
    }
    let grad = &problem.p * &x + &problem.q;
    let grad_free = DVector::from_fn(nf, |r, _| grad[free[r]]);
    // Efᵀν = −∇f on the free variables
    let nu_rows = space.multipliers(&(-grad_free));
    let mut nu = DVector::zeros(e.nrows());
    for (k, &r) in rows.iter().enumerate() {
        nu[r] = nu_rows[k];
    }
    let stationarity = &grad + e.transpose() * &nu;
    for i in 0..n {
        let mu = -stationarity[i];
        let ok = match active[i] {
            0 => mu.abs() <= tol,
            -1 => mu <= tol,
            _ => mu >= -tol,
        };
        if !ok {
            return None;
        }
    }
    Some(x)
}
