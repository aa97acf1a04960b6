//! Complex-valued generalized LASSO
//!
//! ```text
//! minimize  ||y - A x||_2^2 + mu ||D x||_1      (D diagonal, positive)
//! ```
//!
//! [`solve`] runs the alternating direction method of multipliers on the
//! split `z = D x` with the Lagrangian term `Re[u^H (D x - z)]`. The unscaled
//! multiplier it returns is therefore the dual vector `u`, and the z-update
//! keeps `|u_m| <= mu` exactly at every iteration. [`oracle_solve`] is an
//! independent accelerated proximal-gradient method used to cross-check.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::SteeringDictionary;
use crate::error::{Error, Result};
use crate::linalg::{inf_norm, RankedSvd};
use crate::CVector;

/// Positive diagonal of the weighting matrix `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    diag: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(diag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::InvalidWeights("empty diagonal".into()));
        }
        if let Some((m, w)) = diag
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::InvalidWeights(format!(
                "entry {m} is {w}; weights must be strictly positive"
            )));
        }
        Ok(Self { diag })
    }

    pub fn identity(len: usize) -> Self {
        Self {
            diag: vec![1.0; len],
        }
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `D^{-H} v`, elementwise division by the real diagonal.
    pub fn apply_inverse(&self, v: &CVector) -> CVector {
        CVector::from_iterator(v.len(), v.iter().zip(&self.diag).map(|(c, d)| c / *d))
    }

    pub fn apply(&self, v: &CVector) -> CVector {
        CVector::from_iterator(v.len(), v.iter().zip(&self.diag).map(|(c, d)| c * *d))
    }
}

/// One instance of the weighted LASSO.
#[derive(Debug, Clone, Copy)]
pub struct LassoProblem<'a> {
    pub dict: &'a SteeringDictionary,
    pub weights: &'a WeightMatrix,
    pub y: &'a CVector,
    pub mu: f64,
}

impl<'a> LassoProblem<'a> {
    pub fn new(
        dict: &'a SteeringDictionary,
        weights: &'a WeightMatrix,
        y: &'a CVector,
        mu: f64,
    ) -> Result<Self> {
        let problem = Self {
            dict,
            weights,
            y,
            mu,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::InvalidProblem(format!(
                "regularization parameter must be positive, got {}",
                self.mu
            )));
        }
        if self.weights.len() != self.dict.atoms() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} atoms",
                self.weights.len(),
                self.dict.atoms()
            )));
        }
        if self.y.len() != self.dict.sensors() {
            return Err(Error::DimensionMismatch(format!(
                "snapshot has {} entries for {} sensors",
                self.y.len(),
                self.dict.sensors()
            )));
        }
        Ok(())
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        Self { mu, ..*self }
    }

    /// `||y - A x||^2 + mu ||D x||_1`
    pub fn objective(&self, x: &CVector) -> f64 {
        let r = self.y - self.dict.matrix() * x;
        let l1: f64 = x
            .iter()
            .zip(self.weights.diag())
            .map(|(v, d)| d * v.norm())
            .sum();
        r.norm_squared() + self.mu * l1
    }

    /// Smallest `mu` for which `x = 0` solves the problem: `2 ||D^{-H} A^H y||_inf`.
    pub fn zero_threshold(&self) -> f64 {
        let wmf = self.weights.apply_inverse(&(self.dict.matrix().adjoint() * self.y));
        2.0 * inf_norm(&wmf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Initial augmented-Lagrangian penalty.
    pub splitting_penalty: f64,
    /// Rebalance the penalty when primal and dual residuals drift apart.
    pub adaptive_penalty: bool,
    /// Keep the objective of every iterate in [`PrimalSolution::objective_trace`].
    pub record_objective: bool,
    /// After convergence, re-solve the optimality equations on the detected
    /// support with its phases held fixed; kept only if it certifies better.
    #[serde(default = "enabled")]
    pub polish: bool,
}

fn enabled() -> bool {
    true
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50_000,
            abs_tol: 1e-8,
            rel_tol: 1e-8,
            splitting_penalty: 1.0,
            adaptive_penalty: true,
            record_objective: false,
            polish: true,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        let ok = self.abs_tol > 0.0
            && self.rel_tol > 0.0
            && self.splitting_penalty > 0.0
            && self.splitting_penalty.is_finite()
            && self.max_iterations > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidProblem(format!("invalid solver options {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalSolution {
    pub x: CVector,
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
    /// Splitting multiplier; box-feasible (`|u_m| <= mu`) by construction.
    pub multiplier: CVector,
    pub objective_trace: Vec<f64>,
}

/// Complex soft threshold: `v * max(0, 1 - tau / |v|)`.
pub fn complex_soft_threshold(v: Complex64, tau: f64) -> Complex64 {
    let mag = v.norm();
    if mag <= tau {
        Complex64::new(0.0, 0.0)
    } else {
        v * (1.0 - tau / mag)
    }
}

/// Applies `(2 A^H A + diag(lambda))^{-1}`.
enum SystemSolver {
    /// `M <= N`: Cholesky of the full `M x M` matrix.
    Direct(nalgebra::Cholesky<Complex64, nalgebra::Dyn>),
    /// `M > N`: Woodbury identity around the diagonal part, Cholesky of
    /// `I/2 + A diag(1/lambda) A^H`.
    Woodbury {
        inv_lambda: Vec<f64>,
        chol: nalgebra::Cholesky<Complex64, nalgebra::Dyn>,
    },
}

impl SystemSolver {
    fn new(a: &DMatrix<Complex64>, lambda: &[f64]) -> Self {
        let (n, m) = a.shape();
        if m <= n {
            let mut k = a.adjoint() * a * Complex64::new(2.0, 0.0);
            for (i, l) in lambda.iter().enumerate() {
                k[(i, i)] += *l;
            }
            SystemSolver::Direct(k.cholesky().expect("2A^HA + diag(lambda) is positive definite"))
        } else {
            let inv_lambda: Vec<f64> = lambda.iter().map(|l| 1.0 / l).collect();
            let mut scaled = a.clone();
            for (j, mut col) in scaled.column_iter_mut().enumerate() {
                col *= Complex64::new(inv_lambda[j], 0.0);
            }
            let mut s = scaled * a.adjoint();
            for i in 0..n {
                s[(i, i)] += 0.5;
            }
            // Symmetrize against rounding before factoring.
            let s = (&s + s.adjoint()) * Complex64::new(0.5, 0.0);
            SystemSolver::Woodbury {
                inv_lambda,
                chol: s.cholesky().expect("I/2 + A L^-1 A^H is positive definite"),
            }
        }
    }

    fn solve(&self, a: &DMatrix<Complex64>, b: &CVector) -> CVector {
        match self {
            SystemSolver::Direct(chol) => chol.solve(b),
            SystemSolver::Woodbury { inv_lambda, chol } => {
                let t = CVector::from_iterator(
                    b.len(),
                    b.iter().zip(inv_lambda).map(|(v, il)| v * *il),
                );
                let s = chol.solve(&(a * &t));
                let correction = a.adjoint() * s;
                CVector::from_iterator(
                    b.len(),
                    t.iter()
                        .zip(correction.iter())
                        .zip(inv_lambda)
                        .map(|((ti, ci), il)| ti - ci * *il),
                )
            }
        }
    }
}

fn zero_solution(problem: &LassoProblem<'_>) -> PrimalSolution {
    let m = problem.dict.atoms();
    let wmf = problem
        .weights
        .apply_inverse(&(problem.dict.matrix().adjoint() * problem.y))
        * Complex64::new(2.0, 0.0);
    PrimalSolution {
        x: CVector::zeros(m),
        objective: problem.y.norm_squared(),
        iterations: 0,
        primal_residual: 0.0,
        dual_residual: 0.0,
        converged: true,
        multiplier: wmf,
        objective_trace: Vec::new(),
    }
}

/// Solves the weighted LASSO from a cold start.
pub fn solve(problem: &LassoProblem<'_>, opts: &SolverOptions) -> Result<PrimalSolution> {
    solve_from(problem, opts, None)
}

/// Solves the weighted LASSO, optionally warm-started from `initial`
/// (typically the solution at a neighboring `mu`).
pub fn solve_from(
    problem: &LassoProblem<'_>,
    opts: &SolverOptions,
    initial: Option<&CVector>,
) -> Result<PrimalSolution> {
    problem.validate()?;
    opts.validate()?;
    let a = problem.dict.matrix();
    let d = problem.weights.diag();
    let (_, m) = a.shape();
    let mu = problem.mu;

    // x = 0 is optimal iff ||2 D^{-H} A^H y||_inf <= mu.
    if problem.zero_threshold() <= mu {
        return Ok(zero_solution(problem));
    }
    if let Some(x0) = initial {
        if x0.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "warm start has {} entries for {m} atoms",
                x0.len()
            )));
        }
    }

    let two_aty = a.adjoint() * problem.y * Complex64::new(2.0, 0.0);
    let sqrt_m = (m as f64).sqrt();

    let mut rho = opts.splitting_penalty;
    let mut solver = SystemSolver::new(a, &d.iter().map(|w| rho * w * w).collect::<Vec<_>>());

    // Scaled multiplier w = u / rho.
    let (mut z, mut w) = match initial {
        Some(x0) => {
            let z0 = problem.weights.apply(x0);
            let r = problem.y - a * x0;
            let u0 = problem.weights.apply_inverse(&(a.adjoint() * r)) * Complex64::new(2.0, 0.0);
            let w0 = u0.map(|u| {
                let mag = u.norm();
                let clipped = if mag > mu { u * (mu / mag) } else { u };
                clipped / rho
            });
            (z0, w0)
        }
        None => (CVector::zeros(m), CVector::zeros(m)),
    };

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut r_norm = f64::INFINITY;
    let mut s_norm = f64::INFINITY;

    for it in 1..=opts.max_iterations {
        iterations = it;
        // x-update: (2 A^H A + rho D^2) x = 2 A^H y + rho D (z - w)
        let rhs = CVector::from_iterator(
            m,
            two_aty
                .iter()
                .zip(z.iter().zip(w.iter()))
                .zip(d)
                .map(|((b, (zi, wi)), di)| b + (zi - wi) * (rho * di)),
        );
        let x = solver.solve(a, &rhs);
        let dx = problem.weights.apply(&x);

        let z_old = std::mem::replace(
            &mut z,
            CVector::from_iterator(
                m,
                dx.iter()
                    .zip(w.iter())
                    .map(|(v, wi)| complex_soft_threshold(v + wi, mu / rho)),
            ),
        );
        w += &dx - &z;

        r_norm = (&dx - &z).norm();
        s_norm = rho
            * z.iter()
                .zip(z_old.iter())
                .zip(d)
                .map(|((a, b), di)| (di * (a - b).norm()).powi(2))
                .sum::<f64>()
                .sqrt();

        if opts.record_objective {
            trace.push(problem.objective(&problem.weights.apply_inverse(&z)));
        }

        let eps_pri = sqrt_m * opts.abs_tol + opts.rel_tol * dx.norm().max(z.norm());
        let dual_scale = rho
            * w.iter()
                .zip(d)
                .map(|(wi, di)| (di * wi.norm()).powi(2))
                .sum::<f64>()
                .sqrt();
        let eps_dual = sqrt_m * opts.abs_tol + opts.rel_tol * dual_scale;
        if r_norm <= eps_pri && s_norm <= eps_dual {
            converged = true;
            break;
        }

        if opts.adaptive_penalty && it % 10 == 0 {
            let factor = if r_norm > 10.0 * s_norm {
                Some(2.0)
            } else if s_norm > 10.0 * r_norm {
                Some(0.5)
            } else {
                None
            };
            if let Some(f) = factor {
                rho *= f;
                w /= Complex64::new(f, 0.0);
                solver = SystemSolver::new(a, &d.iter().map(|wd| rho * wd * wd).collect::<Vec<_>>());
            }
        }
    }
    let mut x = problem.weights.apply_inverse(&z);
    if converged && opts.polish {
        if let Some(better) = polish(problem, &x) {
            x = better;
        }
    }
    let multiplier = w * Complex64::new(rho, 0.0);
    Ok(PrimalSolution {
        objective: problem.objective(&x),
        x,
        iterations,
        primal_residual: r_norm,
        dual_residual: s_norm,
        converged,
        multiplier,
        objective_trace: trace,
    })
}

/// Worst optimality violation relative to `mu`: `|u_m| <= mu` off the support,
/// `u_m = mu e^{j arg x_m}` on it, with `u = 2 D^{-H} A^H (y - A x)`.
fn certificate_error(problem: &LassoProblem<'_>, x: &CVector) -> f64 {
    let a = problem.dict.matrix();
    let u = problem.weights.apply_inverse(&(a.adjoint() * (problem.y - a * x))) * Complex64::new(2.0, 0.0);
    let mu = problem.mu;
    u.iter()
        .zip(x.iter())
        .map(|(ui, xi)| {
            if *xi == Complex64::new(0.0, 0.0) {
                (ui.norm() - mu).max(0.0)
            } else {
                (ui - Complex64::from_polar(mu, xi.arg())).norm()
            }
        })
        .fold(0.0, f64::max)
        / mu
}

/// Damped Newton refinement of the LASSO restricted to the support `S` of `x`.
/// Off zero the restricted objective is smooth, and strictly convex when `A_S`
/// has full column rank, so a few steps from the ADMM point reach the exact
/// stationary point `A_S^H (A_S x_S - y) + (mu / 2) D_S e^{j arg x_S} = 0`.
fn polish(problem: &LassoProblem<'_>, x: &CVector) -> Option<CVector> {
    let a = problem.dict.matrix();
    let d = problem.weights.diag();
    let support: Vec<usize> = (0..x.len()).filter(|&m| x[m] != Complex64::new(0.0, 0.0)).collect();
    let s = support.len();
    if s == 0 || s > a.nrows() {
        return None;
    }
    let a_s = a.select_columns(&support);
    let gram = a_s.adjoint() * &a_s;
    let aty = a_s.adjoint() * problem.y;
    let yy = problem.y.norm_squared();
    let pen: Vec<f64> = support.iter().map(|&m| problem.mu * d[m]).collect();
    // ||y - A_S v||^2 + sum pen_i |v_i|, expanded through the Gram matrix.
    let value = |v: &CVector| {
        let quad = v.dotc(&(&gram * v)).re - 2.0 * v.dotc(&aty).re + yy;
        quad + v.iter().zip(&pen).map(|(vi, p)| p * vi.norm()).sum::<f64>()
    };

    let mut xs = CVector::from_iterator(s, support.iter().map(|&m| x[m]));
    let mut f = value(&xs);
    for _ in 0..30 {
        // Real coordinates (re_0.., im_0..).
        let r = (&gram * &xs - &aty) * Complex64::new(2.0, 0.0);
        let mut g = nalgebra::DVector::<f64>::zeros(2 * s);
        let mut h = DMatrix::<f64>::zeros(2 * s, 2 * s);
        for i in 0..s {
            let mag = xs[i].norm();
            if mag == 0.0 {
                return None;
            }
            let (c, sn) = (xs[i].re / mag, xs[i].im / mag);
            g[i] = r[i].re + pen[i] * c;
            g[s + i] = r[i].im + pen[i] * sn;
            for k in 0..s {
                let q = gram[(i, k)] * 2.0;
                h[(i, k)] = q.re;
                h[(i, s + k)] = -q.im;
                h[(s + i, k)] = q.im;
                h[(s + i, s + k)] = q.re;
            }
            // Curvature of |v| across the phase direction.
            let t = pen[i] / mag;
            h[(i, i)] += t * sn * sn;
            h[(s + i, s + i)] += t * c * c;
            h[(i, s + i)] -= t * c * sn;
            h[(s + i, i)] -= t * c * sn;
        }
        let step = h.cholesky()?.solve(&(-&g));
        let slope = g.dot(&step);
        if -slope <= 1e-28 * f.max(1.0) {
            break;
        }
        let dir = CVector::from_fn(s, |i, _| Complex64::new(step[i], step[s + i]));
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &xs + &dir * Complex64::new(t, 0.0);
            let ft = value(&trial);
            if ft <= f + 1e-4 * t * slope {
                xs = trial;
                f = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let mut candidate = CVector::zeros(x.len());
    for (i, &m) in support.iter().enumerate() {
        candidate[m] = xs[i];
    }
    let better = certificate_error(problem, &candidate) < certificate_error(problem, x)
        && problem.objective(&candidate) <= problem.objective(x) * (1.0 + 1e-12);
    better.then_some(candidate)
}

/// Slow reference solver for small instances: FISTA with a fixed `1/L` step
/// and function-value restart, run for exactly `iterations` steps.
pub fn oracle_solve(problem: &LassoProblem<'_>, iterations: usize) -> Result<PrimalSolution> {
    problem.validate()?;
    let a = problem.dict.matrix();
    let m = a.ncols();
    let d = problem.weights.diag();
    let svd = RankedSvd::new(a);
    let smax = svd.sigma.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Err(Error::InvalidProblem("dictionary is zero".into()));
    }
    let lipschitz = 2.0 * smax * smax;
    let step = 1.0 / lipschitz;

    let prox = |v: &CVector| -> CVector {
        CVector::from_iterator(
            m,
            v.iter()
                .zip(d)
                .map(|(vi, di)| complex_soft_threshold(*vi, step * problem.mu * di)),
        )
    };
    let gradient = |x: &CVector| -> CVector {
        (a.adjoint() * (problem.y - a * x)) * Complex64::new(-2.0, 0.0)
    };

    let mut x = CVector::zeros(m);
    let mut yk = x.clone();
    let mut t = 1.0f64;
    let mut f_prev = problem.objective(&x);
    let mut best = (f_prev, x.clone());
    for _ in 0..iterations {
        let x_next = prox(&(&yk - gradient(&yk) * Complex64::new(step, 0.0)));
        let f_next = problem.objective(&x_next);
        if f_next > f_prev {
            // Restart momentum from the current point.
            t = 1.0;
            yk = x.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        yk = &x_next + (&x_next - &x) * Complex64::new((t - 1.0) / t_next, 0.0);
        x = x_next;
        t = t_next;
        f_prev = f_next;
        if f_next < best.0 {
            best = (f_next, x.clone());
        }
    }
    let (objective, x) = best;
    let r = problem.y - a * &x;
    let u = problem.weights.apply_inverse(&(a.adjoint() * r)) * Complex64::new(2.0, 0.0);
    let mapping = (&x - prox(&(&x - gradient(&x) * Complex64::new(step, 0.0)))).norm();
    Ok(PrimalSolution {
        x,
        objective,
        iterations,
        primal_residual: 0.0,
        dual_residual: mapping,
        converged: true,
        multiplier: u,
        objective_trace: Vec::new(),
    })
}
