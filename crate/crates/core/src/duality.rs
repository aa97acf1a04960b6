//! Dual vector of the weighted LASSO and the certificates built on it.
//!
//! The dual vector is a weighted matched filter applied to the residuals,
//! `u = 2 D^{-H} A^H (y - A x)`. At a solution `||u||_inf <= mu`, every
//! active coordinate has `u_m = mu * exp(j arg x_m)`, and `D^H u` lies in the
//! row space of `A`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::SteeringDictionary;
use crate::error::{Error, Result};
use crate::lasso::WeightMatrix;
use crate::linalg::{inf_norm, RankedSvd};
use crate::CVector;

/// Default relative threshold for the primal active set.
pub const DEFAULT_EPSILON: f64 = 1e-3;
/// Default relative threshold for the dual active set.
pub const DEFAULT_EPSILON_MU: f64 = 1e-2;

/// Magnitudes below this are treated as zero when comparing phases.
const PHASE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DualVector {
    pub u: CVector,
    pub mu: f64,
}

impl DualVector {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.u.iter().map(|v| v.norm()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSets {
    pub primal: Vec<usize>,
    pub dual: Vec<usize>,
    pub epsilon: f64,
    pub epsilon_mu: f64,
}

impl ActiveSets {
    pub fn detect(x: &CVector, u: &DualVector, epsilon: f64, epsilon_mu: f64) -> Self {
        Self {
            primal: primal_active_set(x, epsilon),
            dual: dual_active_set(&u.u, u.mu, epsilon_mu),
            epsilon,
            epsilon_mu,
        }
    }

    /// Whether the primal set is contained in the dual set.
    pub fn nested(&self) -> bool {
        self.primal.iter().all(|m| self.dual.binary_search(m).is_ok())
    }
}

fn check_dims(dict: &SteeringDictionary, weights: &WeightMatrix, y: &CVector, x: &CVector) -> Result<()> {
    if weights.len() != dict.atoms() || x.len() != dict.atoms() || y.len() != dict.sensors() {
        return Err(Error::DimensionMismatch(format!(
            "dictionary {}x{}, weights {}, y {}, x {}",
            dict.sensors(),
            dict.atoms(),
            weights.len(),
            y.len(),
            x.len()
        )));
    }
    Ok(())
}

/// `u = 2 D^{-H} A^H (y - A x)`.
pub fn dual_from_primal(
    dict: &SteeringDictionary,
    weights: &WeightMatrix,
    y: &CVector,
    x: &CVector,
    mu: f64,
) -> Result<DualVector> {
    check_dims(dict, weights, y, x)?;
    let a = dict.matrix();
    let residual = y - a * x;
    let u = weights.apply_inverse(&(a.adjoint() * residual)) * Complex64::new(2.0, 0.0);
    Ok(DualVector { u, mu })
}

/// `{ m : |x_m| > epsilon ||x||_inf }`, ascending.
pub fn primal_active_set(x: &CVector, epsilon: f64) -> Vec<usize> {
    let threshold = epsilon * inf_norm(x);
    x.iter()
        .enumerate()
        .filter(|(_, v)| v.norm() > threshold)
        .map(|(m, _)| m)
        .collect()
}

/// `{ m : 1 - |u_m| / mu < epsilon_mu }`, ascending.
pub fn dual_active_set(u: &CVector, mu: f64, epsilon_mu: f64) -> Vec<usize> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Vec::new();
    }
    u.iter()
        .enumerate()
        .filter(|(_, v)| 1.0 - v.norm() / mu < epsilon_mu)
        .map(|(m, _)| m)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktTolerances {
    /// Allowed `||u||_inf - mu`, relative to `mu`.
    pub box_rel: f64,
    /// Allowed `| |u_m| - mu |` on the support, relative to `mu`.
    pub tightness_rel: f64,
    pub phase_rad: f64,
    /// Allowed row-space residual relative to `||D^H u||`.
    pub row_space_rel: f64,
    /// Support used for the tightness and phase checks: `|x_m| > support_rel ||x||_inf`.
    pub support_rel: f64,
}

impl Default for KktTolerances {
    fn default() -> Self {
        Self {
            box_rel: 1e-6,
            tightness_rel: 1e-4,
            phase_rad: 1e-4,
            row_space_rel: 1e-6,
            support_rel: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub mu: f64,
    /// `max(0, ||u||_inf - mu)`
    pub max_box_violation: f64,
    /// Largest `| |u_m| - mu |` over the support (0 for an empty support).
    pub tightness_gap: f64,
    pub max_phase_mismatch_rad: f64,
    /// `||(I - P) D^H u||` with `P` the projector onto `span(A^H)`.
    pub row_space_residual: f64,
    pub support: Vec<usize>,
    pub pass: bool,
}

/// Wraps a phase difference to `(-pi, pi]`.
pub fn wrap_phase(angle: f64) -> f64 {
    use std::f64::consts::PI;
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Audits a primal point against the box, tightness, phase and row-space
/// conditions, using the dual vector it induces.
pub fn check_kkt(
    dict: &SteeringDictionary,
    weights: &WeightMatrix,
    y: &CVector,
    x: &CVector,
    mu: f64,
    tol: &KktTolerances,
) -> Result<KktReport> {
    let u = dual_from_primal(dict, weights, y, x, mu)?;
    check_kkt_with_dual(dict, weights, x, &u, tol)
}

/// Same as [`check_kkt`] for an externally supplied dual vector, e.g. a
/// solver multiplier.
pub fn check_kkt_with_dual(
    dict: &SteeringDictionary,
    weights: &WeightMatrix,
    x: &CVector,
    u: &DualVector,
    tol: &KktTolerances,
) -> Result<KktReport> {
    let mu = u.mu;
    if x.len() != dict.atoms() || u.u.len() != dict.atoms() {
        return Err(Error::DimensionMismatch("x and u must have one entry per atom".into()));
    }
    let max_box_violation = (inf_norm(&u.u) - mu).max(0.0);
    let support = primal_active_set(x, tol.support_rel);
    let mut tightness_gap = 0.0f64;
    let mut phase = 0.0f64;
    for &m in &support {
        tightness_gap = tightness_gap.max((u.u[m].norm() - mu).abs());
        if x[m].norm() > PHASE_FLOOR && u.u[m].norm() > PHASE_FLOOR {
            phase = phase.max(wrap_phase(u.u[m].arg() - x[m].arg()).abs());
        }
    }
    let dh_u = weights.apply(&u.u);
    let svd = RankedSvd::new(dict.matrix());
    let row_space_residual = svd.row_space_residual(&dh_u).norm();

    let pass = max_box_violation <= tol.box_rel * mu
        && tightness_gap <= tol.tightness_rel * mu
        && phase <= tol.phase_rad
        && row_space_residual <= tol.row_space_rel * dh_u.norm() + 1e-12 * mu;
    Ok(KktReport {
        mu,
        max_box_violation,
        tightness_gap,
        max_phase_mismatch_rad: phase,
        row_space_residual,
        support,
        pass,
    })
}

fn restricted_svd(dict: &SteeringDictionary, set: &[usize]) -> Result<RankedSvd> {
    if let Some(&bad) = set.iter().find(|&&m| m >= dict.atoms()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: dict.atoms(),
        });
    }
    let svd = RankedSvd::new(&dict.restrict(set));
    if !svd.full_column_rank() {
        return Err(Error::RankDeficient {
            indices: set.to_vec(),
            rank: svd.rank(),
            cols: set.len(),
        });
    }
    Ok(svd)
}

/// Least-squares amplitudes of the columns in `set`: `A_set^+ y`.
pub fn restrict_l0(dict: &SteeringDictionary, set: &[usize], y: &CVector) -> Result<CVector> {
    if set.is_empty() {
        return Ok(CVector::zeros(0));
    }
    if y.len() != dict.sensors() {
        return Err(Error::DimensionMismatch("snapshot length".into()));
    }
    Ok(restricted_svd(dict, set)?.pinv_apply(y))
}

/// Places `values` (indexed like `set`) into a length-`len` vector.
pub fn scatter(len: usize, set: &[usize], values: &CVector) -> CVector {
    let mut out = CVector::zeros(len);
    for (k, &m) in set.iter().enumerate() {
        out[m] = values[k];
    }
    out
}

/// Predicted difference `x_l0 - x_l1` on the support.
#[derive(Debug, Clone, PartialEq)]
pub struct GapVector {
    pub indices: Vec<usize>,
    pub delta: CVector,
}

/// `Delta = (mu / 2) (A_M^H A_M)^{-1} D_M^H exp(j theta_M)`.
pub fn l0_l1_gap(
    dict: &SteeringDictionary,
    weights: &WeightMatrix,
    set: &[usize],
    mu: f64,
    phases: &[f64],
) -> Result<GapVector> {
    if phases.len() != set.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} phases for a set of {}",
            phases.len(),
            set.len()
        )));
    }
    if set.is_empty() {
        return Ok(GapVector {
            indices: Vec::new(),
            delta: CVector::zeros(0),
        });
    }
    let svd = restricted_svd(dict, set)?;
    let rhs = CVector::from_iterator(
        set.len(),
        set.iter()
            .zip(phases)
            .map(|(&m, &th)| Complex64::from_polar(0.5 * mu * weights.diag()[m], th)),
    );
    Ok(GapVector {
        indices: set.to_vec(),
        delta: svd.gram_pinv_apply(&rhs),
    })
}

/// The three terms of `x = A^+ y + x_null - (1/2) (A^H A)^+ D^H u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub least_norm: CVector,
    pub nullspace: CVector,
    /// `(1/2) (A^H A)^+ D^H u`, entering the sum with a minus sign.
    pub dual_term: CVector,
    /// `||A x_null||`, zero up to rounding.
    pub nullspace_leak: f64,
}

/// Minimum-norm solution `A^+ y` of the unregularized problem.
pub fn least_norm_solution(dict: &SteeringDictionary, y: &CVector) -> Result<CVector> {
    if y.len() != dict.sensors() {
        return Err(Error::DimensionMismatch("snapshot length".into()));
    }
    Ok(RankedSvd::new(dict.matrix()).pinv_apply(y))
}

/// Splits a primal/dual pair into least-norm, nullspace and dual terms.
/// The nullspace term is obtained by subtraction. Requires full row rank.
pub fn least_norm_decomposition(
    dict: &SteeringDictionary,
    y: &CVector,
    x: &CVector,
    u: &CVector,
    weights: &WeightMatrix,
) -> Result<Decomposition> {
    check_dims(dict, weights, y, x)?;
    let svd = RankedSvd::new(dict.matrix());
    if !svd.full_row_rank() {
        return Err(Error::DecompositionUnavailable(format!(
            "dictionary rank {} below row count {}",
            svd.rank(),
            dict.sensors()
        )));
    }
    let least_norm = svd.pinv_apply(y);
    let dual_term = svd.gram_pinv_apply(&weights.apply(u)) * Complex64::new(0.5, 0.0);
    let nullspace = x - &least_norm + &dual_term;
    let nullspace_leak = (dict.matrix() * &nullspace).norm();
    Ok(Decomposition {
        least_norm,
        nullspace,
        dual_term,
        nullspace_leak,
    })
}

/// `inf_z  mu ||z||_1 - Re(u^H z)`: zero when `||u||_inf <= mu`, unbounded below otherwise.
pub fn l1_conjugate_infimum(u: &CVector, mu: f64) -> f64 {
    if inf_norm(u) <= mu {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// For `||u||_inf > mu`, a unit direction `z` with `mu ||z||_1 - Re(u^H z) < 0`;
/// scaling it by `t` drives the value to `-infinity` linearly.
pub fn unbounded_direction(u: &CVector, mu: f64) -> Option<CVector> {
    let (m, v) = u
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))?;
    if v.norm() <= mu {
        return None;
    }
    let mut z = CVector::zeros(u.len());
    z[m] = Complex64::from_polar(1.0, v.arg());
    Some(z)
}

/// `mu ||z||_1 - Re(u^H z)`
pub fn l1_split_value(u: &CVector, z: &CVector, mu: f64) -> f64 {
    let l1: f64 = z.iter().map(|v| v.norm()).sum();
    mu * l1 - u.dotc(z).re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{build_ula_dictionary, make_uniform_grid, SteeringDictionary};
    use crate::lasso::{solve, LassoProblem, SolverOptions};
    use nalgebra::DMatrix;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn dft(n: usize) -> SteeringDictionary {
        let s = 1.0 / (n as f64).sqrt();
        let mat = DMatrix::from_fn(n, n, |r, k| {
            Complex64::from_polar(s, 2.0 * std::f64::consts::PI * (r * k) as f64 / n as f64)
        });
        SteeringDictionary::from_matrix(make_uniform_grid(n).unwrap(), mat).unwrap()
    }

    #[test]
    fn dual_of_zero_is_weighted_matched_filter() {
        let d = build_ula_dictionary(&make_uniform_grid(20).unwrap(), 6).unwrap();
        let w = WeightMatrix::new((0..20).map(|i| 1.0 + 0.1 * i as f64).collect()).unwrap();
        let y = CVector::from_fn(6, |i, _| c(i as f64, 1.0));
        let u = dual_from_primal(&d, &w, &y, &CVector::zeros(20), 1.0).unwrap();
        let expected = w.apply_inverse(&(d.matrix().adjoint() * &y)) * c(2.0, 0.0);
        assert!((u.u - expected).norm() < 1e-14);
    }

    #[test]
    fn dual_vanishes_on_perfect_fit_and_scales_with_weights() {
        let d = build_ula_dictionary(&make_uniform_grid(10).unwrap(), 5).unwrap();
        let x = CVector::from_fn(10, |i, _| if i == 3 { c(1.0, -1.0) } else { c(0.0, 0.0) });
        let y = d.matrix() * &x;
        let u = dual_from_primal(&d, &WeightMatrix::identity(10), &y, &x, 1.0).unwrap();
        assert!(inf_norm(&u.u) < 1e-14);

        let y2 = &y + d.column(7) * c(0.3, 0.2);
        let u1 = dual_from_primal(&d, &WeightMatrix::identity(10), &y2, &x, 1.0).unwrap();
        let u2 = dual_from_primal(&d, &WeightMatrix::new(vec![2.0; 10]).unwrap(), &y2, &x, 1.0)
            .unwrap();
        assert!((u1.u * c(0.5, 0.0) - u2.u).norm() < 1e-14);
    }

    #[test]
    fn active_set_examples() {
        assert!(primal_active_set(&CVector::zeros(4), 1e-3).is_empty());
        let x = CVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0), c(0.5, 0.0), c(1e-9, 0.0)]);
        assert_eq!(primal_active_set(&x, 1e-3), vec![1, 2]);

        let u = CVector::from_vec(vec![c(0.2, 0.0), c(0.0, 1.0), c(0.5, 0.0), c(0.1, 0.1)]);
        assert_eq!(dual_active_set(&u, 1.0, 0.01), vec![1]);
        let all = CVector::from_vec(vec![c(1.0, 0.0), c(0.0, -1.0), c(0.6, 0.8)]);
        assert_eq!(dual_active_set(&all, 1.0, 0.01), vec![0, 1, 2]);
    }

    #[test]
    fn kkt_on_hand_built_point() {
        let d = dft(8);
        let w = WeightMatrix::identity(8);
        let y = CVector::from_fn(8, |i, _| c(2.0 * (i as f64).sin(), 0.5 * i as f64 - 1.0));
        let mu = 1.0;
        let corr = d.matrix().adjoint() * &y;
        let x = corr.map(|v| crate::lasso::complex_soft_threshold(v, mu / 2.0));
        let rep = check_kkt(&d, &w, &y, &x, mu, &KktTolerances::default()).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.max_box_violation < 1e-10);
        assert!(rep.tightness_gap < 1e-10);
        assert!(rep.max_phase_mismatch_rad < 1e-10);
        assert!(rep.row_space_residual < 1e-10);

        let mut bad = x.clone();
        let m = rep.support[0];
        bad[m] += c(0.1, 0.0);
        let rep = check_kkt(&d, &w, &y, &bad, mu, &KktTolerances::default()).unwrap();
        assert!(!rep.pass);
        assert!(rep.tightness_gap > 0.0 || rep.max_box_violation > 0.0);
    }

    #[test]
    fn kkt_zero_above_threshold() {
        let d = build_ula_dictionary(&make_uniform_grid(30).unwrap(), 8).unwrap();
        let w = WeightMatrix::identity(30);
        let y = d.column(4) * c(1.0, 2.0);
        let mu = 1.5 * LassoProblem::new(&d, &w, &y, 1.0).unwrap().zero_threshold();
        let rep = check_kkt(&d, &w, &y, &CVector::zeros(30), mu, &KktTolerances::default()).unwrap();
        assert!(rep.support.is_empty());
        assert!(rep.pass);
    }

    #[test]
    fn restrict_l0_examples() {
        let d = build_ula_dictionary(&make_uniform_grid(30).unwrap(), 8).unwrap();
        let y = d.column(9) * c(2.0, 0.0);
        let coef = restrict_l0(&d, &[9], &y).unwrap();
        assert!((coef[0] - c(2.0, 0.0)).norm() < 1e-12);

        let dup = DMatrix::from_fn(4, 3, |n, m| {
            let col = if m == 2 { 0 } else { m };
            Complex64::from_polar(0.5, (n * (col + 1)) as f64)
        });
        let dd = SteeringDictionary::from_matrix(make_uniform_grid(3).unwrap(), dup).unwrap();
        let err = restrict_l0(&dd, &[0, 2], &CVector::zeros(4)).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { ref indices, .. } if indices == &vec![0, 2]));
    }

    #[test]
    fn gap_examples() {
        let d = dft(6);
        let w = WeightMatrix::identity(6);
        let g = l0_l1_gap(&d, &w, &[1, 4], 0.8, &[0.3, -1.0]).unwrap();
        assert!((g.delta[0] - Complex64::from_polar(0.4, 0.3)).norm() < 1e-12);
        assert!((g.delta[1] - Complex64::from_polar(0.4, -1.0)).norm() < 1e-12);
        let tiny = l0_l1_gap(&d, &w, &[1, 4], 1e-12, &[0.3, -1.0]).unwrap();
        assert!(tiny.delta.norm() < 1e-12);
    }

    #[test]
    fn decomposition_trivial_cases() {
        let d = build_ula_dictionary(&make_uniform_grid(20).unwrap(), 6).unwrap();
        let w = WeightMatrix::identity(20);
        let z = CVector::zeros(20);
        let dec = least_norm_decomposition(&d, &CVector::zeros(6), &z, &z, &w).unwrap();
        assert_eq!(dec.least_norm.norm() + dec.nullspace.norm() + dec.dual_term.norm(), 0.0);

        let o = dft(5);
        let w5 = WeightMatrix::identity(5);
        let y = CVector::from_fn(5, |i, _| c(i as f64 + 1.0, -0.5));
        let p = LassoProblem::new(&o, &w5, &y, 1.0).unwrap();
        let s = solve(&p, &SolverOptions::default()).unwrap();
        let u = dual_from_primal(&o, &w5, &y, &s.x, 1.0).unwrap();
        let dec = least_norm_decomposition(&o, &y, &s.x, &u.u, &w5).unwrap();
        assert!(dec.nullspace.norm() < 1e-9);
    }

    #[test]
    fn conjugate_dichotomy_examples() {
        let u = CVector::from_vec(vec![c(0.3, 0.4), c(-0.1, 0.0)]);
        assert_eq!(l1_conjugate_infimum(&u, 0.5), 0.0);
        assert!(unbounded_direction(&u, 0.5).is_none());
        assert_eq!(l1_conjugate_infimum(&u, 0.4), f64::NEG_INFINITY);
        let z = unbounded_direction(&u, 0.4).unwrap();
        let v1 = l1_split_value(&u, &z, 0.4);
        let v100 = l1_split_value(&u, &(z * c(100.0, 0.0)), 0.4);
        assert!(v1 < 0.0 && (v100 - 100.0 * v1).abs() < 1e-12);
    }

    #[test]
    fn wraps_phase() {
        use std::f64::consts::PI;
        assert!((wrap_phase(2.0 * PI + 0.1) - 0.1).abs() < 1e-12);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-12);
        assert!((wrap_phase(-0.2) + 0.2).abs() < 1e-12);
    }
}
