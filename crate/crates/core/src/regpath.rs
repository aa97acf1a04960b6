//! Solution paths and regularization selection for a given sparsity order.
//!
//! The selectors exploit that every active coordinate pins its dual
//! coordinate to `|u_m| = mu`: the `i`-th local peak of `|u|` predicts the
//! `mu` at which the `i`-th source enters. Three variants share one loop:
//!
//! * [`Algorithm::OrderRecursive`] follows the path one source at a time,
//!   aiming between peaks `|U|+1` and `|U|+2` of the current dual vector.
//! * [`Algorithm::Fast`] aims directly between peaks `K0` and `K0+1`.
//! * [`Algorithm::Dual`] uses the same update but detects the support by
//!   regressing `y` on the dual active set and thresholding that fit.
//!
//! Overshooting (`|M| > K0`) is resolved by bisection on `mu`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::SteeringDictionary;
use crate::duality::{
    dual_active_set, dual_from_primal, primal_active_set, restrict_l0, scatter, ActiveSets,
    DualVector, DEFAULT_EPSILON, DEFAULT_EPSILON_MU,
};
use crate::error::{Error, Result};
use crate::lasso::{solve_from, LassoProblem, PrimalSolution, SolverOptions, WeightMatrix};
use crate::CVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub index: usize,
    pub magnitude: f64,
}

/// Local maxima ordered by magnitude (descending), ties by lower index.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakList {
    pub peaks: Vec<Peak>,
}

impl PeakList {
    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    /// 1-based access to the `i`-th largest peak.
    pub fn nth(&self, i: usize) -> Option<Peak> {
        i.checked_sub(1).and_then(|k| self.peaks.get(k).copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeakMode {
    /// Elements strictly larger than their neighbors.
    #[default]
    LocalMaxima,
    /// Every element counts; `peak(u, i)` becomes the `i`-th largest value.
    Sorted,
}

fn sort_peaks(peaks: &mut [Peak]) {
    peaks.sort_by(|a, b| {
        b.magnitude
            .total_cmp(&a.magnitude)
            .then(a.index.cmp(&b.index))
    });
}

/// Interior elements strictly above both neighbors, plus first/last elements
/// strictly above their single neighbor. A vector without any such element
/// (e.g. flat) yields its first maximum.
pub fn find_peaks(magnitudes: &[f64]) -> PeakList {
    let n = magnitudes.len();
    let mut peaks = Vec::new();
    match n {
        0 => {}
        1 => peaks.push(Peak {
            index: 0,
            magnitude: magnitudes[0],
        }),
        _ => {
            for i in 0..n {
                let left_ok = i == 0 || magnitudes[i] > magnitudes[i - 1];
                let right_ok = i == n - 1 || magnitudes[i] > magnitudes[i + 1];
                if left_ok && right_ok {
                    peaks.push(Peak {
                        index: i,
                        magnitude: magnitudes[i],
                    });
                }
            }
            if peaks.is_empty() {
                let (index, magnitude) = magnitudes
                    .iter()
                    .copied()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    });
                peaks.push(Peak { index, magnitude });
            }
        }
    }
    sort_peaks(&mut peaks);
    PeakList { peaks }
}

pub fn find_peaks_with(magnitudes: &[f64], mode: PeakMode) -> PeakList {
    match mode {
        PeakMode::LocalMaxima => find_peaks(magnitudes),
        PeakMode::Sorted => {
            let mut peaks: Vec<Peak> = magnitudes
                .iter()
                .enumerate()
                .map(|(index, &magnitude)| Peak { index, magnitude })
                .collect();
            sort_peaks(&mut peaks);
            PeakList { peaks }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakValue {
    pub value: f64,
    pub index: Option<usize>,
    /// Fewer than `i` peaks exist; `value` is 0.
    pub deficit: bool,
}

/// Magnitude of the `i`-th largest local peak of `|u|` (1-based).
pub fn peak(u: &DualVector, i: usize, mode: PeakMode) -> PeakValue {
    peak_of(&find_peaks_with(&u.magnitudes(), mode), i)
}

fn peak_of(list: &PeakList, i: usize) -> PeakValue {
    match list.nth(i) {
        Some(p) => PeakValue {
            value: p.magnitude,
            index: Some(p.index),
            deficit: false,
        },
        None => PeakValue {
            value: 0.0,
            index: None,
            deficit: true,
        },
    }
}

/// `2 ||D^{-H} A^H y||_inf`, the smallest `mu` with an all-zero solution.
pub fn mu_max(dict: &SteeringDictionary, weights: &WeightMatrix, y: &CVector) -> Result<f64> {
    if weights.len() != dict.atoms() || y.len() != dict.sensors() {
        return Err(Error::DimensionMismatch("weights or snapshot length".into()));
    }
    let problem = LassoProblem {
        dict,
        weights,
        y,
        mu: 1.0,
    };
    Ok(problem.zero_threshold())
}

/// `(1 - F) peak_hi + F peak_lo`
pub fn interval_mu(peak_hi: f64, peak_lo: f64, f: f64) -> Result<f64> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::InvalidProblem(format!("F = {f} must lie in (0, 1)")));
    }
    if peak_hi < peak_lo || peak_lo < 0.0 {
        return Err(Error::PeakOrdering {
            hi: peak_hi,
            lo: peak_lo,
        });
    }
    Ok((1.0 - f) * peak_hi + f * peak_lo)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub mu: f64,
    pub x: CVector,
    pub u: CVector,
    pub sets: ActiveSets,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Adjacent samples between which the primal active-set size changed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateBracket {
    pub mu_above: f64,
    pub mu_below: f64,
    pub order_above: usize,
    pub order_below: usize,
}

impl CandidateBracket {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.mu_above + self.mu_below)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPath {
    /// Strictly decreasing in `mu`.
    pub samples: Vec<PathSample>,
    pub candidate_points: Vec<CandidateBracket>,
}

impl SolutionPath {
    /// Maximal runs of consecutive samples sharing the same primal active set,
    /// as index ranges into `samples`.
    pub fn constant_set_runs(&self) -> Vec<std::ops::Range<usize>> {
        let mut runs = Vec::new();
        let mut start = 0;
        for k in 1..=self.samples.len() {
            if k == self.samples.len() || self.samples[k].sets.primal != self.samples[start].sets.primal {
                runs.push(start..k);
                start = k;
            }
        }
        runs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathOptions {
    pub solver: SolverOptions,
    pub epsilon: f64,
    pub epsilon_mu: f64,
    pub warm_start: bool,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            epsilon: DEFAULT_EPSILON,
            epsilon_mu: DEFAULT_EPSILON_MU,
            warm_start: true,
        }
    }
}

/// Solves the LASSO at every `mu` (strictly decreasing) and records primal
/// and dual vectors, active sets and active-set change points.
pub fn sweep_path(
    dict: &SteeringDictionary,
    weights: &WeightMatrix,
    y: &CVector,
    mu_values: &[f64],
    opts: &PathOptions,
) -> Result<SolutionPath> {
    if mu_values.is_empty() {
        return Err(Error::InvalidProblem("empty mu grid".into()));
    }
    if mu_values.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        return Err(Error::InvalidProblem("mu values must be positive".into()));
    }
    if mu_values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidProblem("mu values must be strictly decreasing".into()));
    }
    let mut samples: Vec<PathSample> = Vec::with_capacity(mu_values.len());
    for &mu in mu_values {
        let problem = LassoProblem::new(dict, weights, y, mu)?;
        let start = if opts.warm_start {
            samples.last().map(|s| &s.x)
        } else {
            None
        };
        let sol = solve_from(&problem, &opts.solver, start)?;
        let u = dual_from_primal(dict, weights, y, &sol.x, mu)?;
        let sets = ActiveSets::detect(&sol.x, &u, opts.epsilon, opts.epsilon_mu);
        samples.push(PathSample {
            mu,
            objective: sol.objective,
            converged: sol.converged,
            iterations: sol.iterations,
            x: sol.x,
            u: u.u,
            sets,
        });
    }
    let candidate_points = samples
        .windows(2)
        .filter(|w| w[0].sets.primal.len() != w[1].sets.primal.len())
        .map(|w| CandidateBracket {
            mu_above: w[0].mu,
            mu_below: w[1].mu,
            order_above: w[0].sets.primal.len(),
            order_below: w[1].sets.primal.len(),
        })
        .collect();
    Ok(SolutionPath {
        samples,
        candidate_points,
    })
}

/// `count` values from `hi` down to `lo`, evenly spaced.
pub fn linear_mu_grid(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![hi],
        _ => (0..count)
            .map(|k| hi + (lo - hi) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    OrderRecursive,
    Fast,
    Dual,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::OrderRecursive => "order-recursive",
            Algorithm::Fast => "fast",
            Algorithm::Dual => "dual",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "order-recursive" | "recursive" => Ok(Algorithm::OrderRecursive),
            "fast" => Ok(Algorithm::Fast),
            "dual" => Ok(Algorithm::Dual),
            other => Err(crate::error::config(
                "algorithm",
                format!("unknown algorithm `{other}` (order-recursive, fast, dual)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorOptions {
    pub f: f64,
    pub epsilon: f64,
    pub epsilon_mu: f64,
    pub peak_mode: PeakMode,
    pub max_outer_iterations: usize,
    pub bisection_steps: usize,
    pub bisection_rel_tol: f64,
    /// Take the dual vector from the solver's splitting multiplier instead
    /// of recomputing it from the primal solution.
    pub use_solver_multiplier: bool,
    pub solver: SolverOptions,
}

impl Default for SelectorOptions {
    fn default() -> Self {
        Self {
            f: 0.9,
            epsilon: DEFAULT_EPSILON,
            epsilon_mu: DEFAULT_EPSILON_MU,
            peak_mode: PeakMode::LocalMaxima,
            max_outer_iterations: 64,
            bisection_steps: 32,
            bisection_rel_tol: 1e-6,
            use_solver_multiplier: false,
            // Peak comparisons across steps need dual magnitudes well below 1e-6 relative error.
            solver: SolverOptions {
                abs_tol: 1e-10,
                rel_tol: 1e-10,
                ..SolverOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    /// All-zero starting point; the dual vector is the matched filter.
    Initial,
    /// `mu` chosen from dual peaks.
    Peak,
    Bisection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub kind: StepKind,
    pub mu: f64,
    pub primal_count: usize,
    pub dual_count: usize,
    /// Peak ranks used to place `mu` (for `Peak` steps).
    pub peak_ranks: Option<(usize, usize)>,
    /// Dual-set members dropped to restore full column rank.
    pub truncated: usize,
    pub converged: bool,
    /// `|u|` at this step.
    pub dual_magnitudes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub algorithm: Algorithm,
    pub k0: usize,
    pub mu: f64,
    /// LASSO solution for the primal algorithms; the dual-set regression for
    /// [`Algorithm::Dual`].
    pub x: CVector,
    /// LASSO solution at the selected `mu`.
    pub x_lasso: CVector,
    pub u: CVector,
    pub sets: ActiveSets,
    /// Least-squares amplitudes on `sets.primal`.
    pub x_l0: CVector,
    pub outer_iterations: usize,
    pub lasso_solve_count: usize,
    pub trace: Vec<TraceEntry>,
}

struct Point {
    mu: f64,
    sol_x: CVector,
    u: DualVector,
    primal: Vec<usize>,
    dual: Vec<usize>,
    /// Regression on the (possibly truncated) dual set; dual algorithm only.
    dual_fit: Option<CVector>,
    truncated: usize,
    converged: bool,
}

struct Selector<'a> {
    dict: &'a SteeringDictionary,
    weights: &'a WeightMatrix,
    y: &'a CVector,
    k0: usize,
    algorithm: Algorithm,
    opts: &'a SelectorOptions,
    solves: usize,
    trace: Vec<TraceEntry>,
}

impl<'a> Selector<'a> {
    fn solve_at(&mut self, mu: f64, start: &CVector) -> Result<PrimalSolution> {
        let problem = LassoProblem::new(self.dict, self.weights, self.y, mu)?;
        self.solves += 1;
        solve_from(&problem, &self.opts.solver, Some(start))
    }

    /// Active sets of a solved point, per the algorithm's detection rule.
    fn evaluate(&self, mu: f64, sol: PrimalSolution, initial: bool) -> Result<Point> {
        let u = if self.opts.use_solver_multiplier && !initial {
            DualVector {
                u: sol.multiplier.clone(),
                mu,
            }
        } else {
            dual_from_primal(self.dict, self.weights, self.y, &sol.x, mu)?
        };
        // The starting point stands for mu = infinity: nothing is dual-active.
        let dual = if initial {
            Vec::new()
        } else {
            dual_active_set(&u.u, mu, self.opts.epsilon_mu)
        };
        let (primal, dual_fit, truncated) = match self.algorithm {
            Algorithm::OrderRecursive | Algorithm::Fast => {
                (primal_active_set(&sol.x, self.opts.epsilon), None, 0)
            }
            Algorithm::Dual => {
                let (kept, fit, truncated) = self.regress_dual_set(&dual, &u)?;
                let full = scatter(self.dict.atoms(), &kept, &fit);
                (primal_active_set(&full, self.opts.epsilon), Some(full), truncated)
            }
        };
        Ok(Point {
            mu,
            sol_x: sol.x,
            u,
            primal,
            dual,
            dual_fit,
            truncated,
            converged: sol.converged,
        })
    }

    /// `A_U^+ y`, dropping the weakest dual coordinates until `A_U` has full
    /// column rank.
    fn regress_dual_set(
        &self,
        dual: &[usize],
        u: &DualVector,
    ) -> Result<(Vec<usize>, CVector, usize)> {
        let mut kept: Vec<usize> = dual.to_vec();
        let mut truncated = 0;
        loop {
            match restrict_l0(self.dict, &kept, self.y) {
                Ok(fit) => return Ok((kept, fit, truncated)),
                Err(Error::RankDeficient { .. }) => {
                    let (pos, _) = kept
                        .iter()
                        .enumerate()
                        .min_by(|a, b| u.u[*a.1].norm().total_cmp(&u.u[*b.1].norm()))
                        .expect("rank-deficient set is non-empty");
                    kept.remove(pos);
                    truncated += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn record(&mut self, iteration: usize, kind: StepKind, p: &Point, ranks: Option<(usize, usize)>) {
        self.trace.push(TraceEntry {
            iteration,
            kind,
            mu: p.mu,
            primal_count: p.primal.len(),
            dual_count: p.dual.len(),
            peak_ranks: ranks,
            truncated: p.truncated,
            converged: p.converged,
            dual_magnitudes: p.u.magnitudes(),
        });
    }

    fn unreachable(&self, reason: impl Into<String>) -> Error {
        let mut achieved: Vec<usize> = self.trace.iter().map(|t| t.primal_count).collect();
        achieved.sort_unstable();
        achieved.dedup();
        Error::OrderUnreachable {
            k0: self.k0,
            reason: reason.into(),
            achieved,
            trace: self.trace.clone(),
        }
    }

    /// Next `mu` from the peaks of the current dual vector.
    fn next_mu(&self, point: &Point, first: bool) -> Result<(f64, (usize, usize))> {
        let peaks = find_peaks_with(&point.u.magnitudes(), self.opts.peak_mode);
        let recursive_ranks = (point.dual.len() + 1, point.dual.len() + 2);
        let mut candidates = vec![match self.algorithm {
            Algorithm::OrderRecursive => recursive_ranks,
            Algorithm::Fast | Algorithm::Dual => (self.k0, self.k0 + 1),
        }];
        if candidates[0] != recursive_ranks {
            candidates.push(recursive_ranks);
        }
        for (hi_rank, lo_rank) in candidates {
            let hi = peak_of(&peaks, hi_rank);
            let lo = peak_of(&peaks, lo_rank);
            if hi.deficit || lo.deficit {
                return Err(self.unreachable(format!(
                    "dual vector has {} peaks, {} needed",
                    peaks.len(),
                    lo_rank
                )));
            }
            let mu = interval_mu(hi.value, lo.value, self.opts.f)?;
            // Must move strictly down the path.
            if mu > 0.0 && (first || mu < point.mu * (1.0 - 1e-12)) {
                return Ok((mu, (hi_rank, lo_rank)));
            }
        }
        Err(self.unreachable(format!("no progress below mu = {}", point.mu)))
    }

    fn finish(self, point: Point, outer: usize) -> Result<SelectionResult> {
        let x_l0 = restrict_l0(self.dict, &point.primal, self.y)?;
        let x = match (&point.dual_fit, self.algorithm) {
            (Some(fit), Algorithm::Dual) => fit.clone(),
            _ => point.sol_x.clone(),
        };
        Ok(SelectionResult {
            algorithm: self.algorithm,
            k0: self.k0,
            mu: point.mu,
            x,
            x_lasso: point.sol_x,
            sets: ActiveSets {
                primal: point.primal,
                dual: point.dual,
                epsilon: self.opts.epsilon,
                epsilon_mu: self.opts.epsilon_mu,
            },
            u: point.u.u,
            x_l0,
            outer_iterations: outer,
            lasso_solve_count: self.solves,
            trace: self.trace,
        })
    }

    fn run(mut self) -> Result<SelectionResult> {
        let m = self.dict.atoms();
        let start_mu = mu_max(self.dict, self.weights, self.y)?;
        if start_mu <= 0.0 {
            return Err(self.unreachable("snapshot is zero"));
        }
        let zero = PrimalSolution {
            x: CVector::zeros(m),
            objective: self.y.norm_squared(),
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            converged: true,
            multiplier: CVector::zeros(m),
            objective_trace: Vec::new(),
        };
        let mut point = self.evaluate(start_mu, zero, true)?;
        self.record(0, StepKind::Initial, &point, None);
        let mut upper_mu = start_mu;
        let mut outer = 0;

        loop {
            let order = point.primal.len();
            if order == self.k0 {
                return self.finish(point, outer);
            }
            if order < self.k0 {
                if outer >= self.opts.max_outer_iterations {
                    return Err(self.unreachable("outer iteration budget exhausted"));
                }
                upper_mu = point.mu;
                let (mu, ranks) = self.next_mu(&point, outer == 0)?;
                let sol = self.solve_at(mu, &point.sol_x.clone())?;
                outer += 1;
                point = self.evaluate(mu, sol, false)?;
                self.record(outer, StepKind::Peak, &point, Some(ranks));
                continue;
            }

            // Too many active coordinates: bisect between the last
            // under-populated mu and the current one.
            let mut lo = point.mu;
            let mut hi = upper_mu;
            let mut best = point;
            for _ in 0..self.opts.bisection_steps {
                if hi - lo <= self.opts.bisection_rel_tol * hi {
                    break;
                }
                let mid = 0.5 * (hi + lo);
                let sol = self.solve_at(mid, &best.sol_x.clone())?;
                let p = self.evaluate(mid, sol, false)?;
                self.record(outer, StepKind::Bisection, &p, None);
                match p.primal.len().cmp(&self.k0) {
                    std::cmp::Ordering::Equal => return self.finish(p, outer),
                    std::cmp::Ordering::Less => hi = mid,
                    std::cmp::Ordering::Greater => lo = mid,
                }
                best = p;
            }
            let _ = best;
            return Err(self.unreachable(format!(
                "bisection between mu = {lo} and mu = {hi} did not isolate order {}",
                self.k0
            )));
        }
    }
}

fn select(
    dict: &SteeringDictionary,
    weights: &WeightMatrix,
    y: &CVector,
    k0: usize,
    algorithm: Algorithm,
    opts: &SelectorOptions,
) -> Result<SelectionResult> {
    if k0 == 0 {
        return Err(Error::InvalidProblem("sparsity order must be at least 1".into()));
    }
    if !(opts.f > 0.0 && opts.f < 1.0) {
        return Err(Error::InvalidProblem(format!("F = {} must lie in (0, 1)", opts.f)));
    }
    if weights.len() != dict.atoms() || y.len() != dict.sensors() {
        return Err(Error::DimensionMismatch("weights or snapshot length".into()));
    }
    Selector {
        dict,
        weights,
        y,
        k0,
        algorithm,
        opts,
        solves: 0,
        trace: Vec::new(),
    }
    .run()
}

/// Follows the path one order at a time.
pub fn select_mu_order_recursive(
    dict: &SteeringDictionary,
    weights: &WeightMatrix,
    y: &CVector,
    k0: usize,
    opts: &SelectorOptions,
) -> Result<SelectionResult> {
    select(dict, weights, y, k0, Algorithm::OrderRecursive, opts)
}

/// Aims directly at the interval between the `K0`-th and `(K0+1)`-th peaks.
pub fn select_mu_fast(
    dict: &SteeringDictionary,
    weights: &WeightMatrix,
    y: &CVector,
    k0: usize,
    opts: &SelectorOptions,
) -> Result<SelectionResult> {
    select(dict, weights, y, k0, Algorithm::Fast, opts)
}

/// Fast update with support detection by regression on the dual active set.
pub fn select_mu_dual(
    dict: &SteeringDictionary,
    weights: &WeightMatrix,
    y: &CVector,
    k0: usize,
    opts: &SelectorOptions,
) -> Result<SelectionResult> {
    select(dict, weights, y, k0, Algorithm::Dual, opts)
}

pub fn select_mu(
    dict: &SteeringDictionary,
    weights: &WeightMatrix,
    y: &CVector,
    k0: usize,
    algorithm: Algorithm,
    opts: &SelectorOptions,
) -> Result<SelectionResult> {
    select(dict, weights, y, k0, algorithm, opts)
}

/// Check of `peak(u(mu_prev), i) - peak(u(mu_cur), i) <= mu_prev - mu_cur`
/// over consecutive trace entries with decreasing `mu`, for every rank `i`
/// whose peak is tight at `mu_cur`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBound {
    pub pairs_checked: usize,
    pub ranks_checked: usize,
    /// Largest `lhs - rhs` observed; non-positive when the bound holds exactly.
    pub worst_excess: f64,
    pub holds: bool,
}

pub fn prediction_bound(
    trace: &[TraceEntry],
    mode: PeakMode,
    epsilon_mu: f64,
    slack_rel: f64,
) -> PredictionBound {
    let mut pairs = 0;
    let mut ranks = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut holds = true;
    for pair in trace.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        if !(cur.mu < prev.mu) {
            continue;
        }
        pairs += 1;
        let prev_peaks = find_peaks_with(&prev.dual_magnitudes, mode);
        let cur_peaks = find_peaks_with(&cur.dual_magnitudes, mode);
        for (rank0, p) in cur_peaks.peaks.iter().enumerate() {
            if 1.0 - p.magnitude / cur.mu >= epsilon_mu {
                break;
            }
            let before = prev_peaks.nth(rank0 + 1).map_or(0.0, |q| q.magnitude);
            let excess = (before - p.magnitude) - (prev.mu - cur.mu);
            ranks += 1;
            worst = worst.max(excess);
            if excess > slack_rel * prev.mu {
                holds = false;
            }
        }
    }
    PredictionBound {
        pairs_checked: pairs,
        ranks_checked: ranks,
        worst_excess: if ranks == 0 { 0.0 } else { worst },
        holds,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyCluster {
    pub indices: Vec<usize>,
    /// Member with the largest `|x_m|`.
    pub peak_index: usize,
    /// `||A_c x_c||^2`: `N` times the mean per-sensor power of the cluster's field.
    pub energy: f64,
}

/// Coherent energy of a group of bins: `||sum_m a_m x_m||^2`.
pub fn field_energy(dict: &SteeringDictionary, x: &CVector, indices: &[usize]) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let mut field = CVector::zeros(dict.sensors());
    for &m in indices {
        field += dict.matrix().column(m) * x[m];
    }
    field.norm_squared()
}

/// Groups `set` into clusters whose neighbors lie at most `radius` bins apart
/// and returns each cluster's coherent energy.
pub fn energy_clusters(
    dict: &SteeringDictionary,
    x: &CVector,
    set: &[usize],
    radius: usize,
) -> Vec<EnergyCluster> {
    let mut sorted = set.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for m in sorted {
        match groups.last_mut() {
            Some(g) if m - *g.last().unwrap() <= radius => g.push(m),
            _ => groups.push(vec![m]),
        }
    }
    groups
        .into_iter()
        .map(|indices| {
            let peak_index = *indices
                .iter()
                .max_by(|a, b| x[**a].norm().total_cmp(&x[**b].norm()).then(b.cmp(a)))
                .unwrap();
            EnergyCluster {
                energy: field_energy(dict, x, &indices),
                peak_index,
                indices,
            }
        })
        .collect()
}

pub fn energy_aggregate(
    sample: &PathSample,
    dict: &SteeringDictionary,
    set: &[usize],
    radius: usize,
) -> Vec<EnergyCluster> {
    energy_clusters(dict, &sample.x, set, radius)
}

/// Coherent energy of the members of `set` within `radius` bins of `center`.
pub fn energy_near(
    dict: &SteeringDictionary,
    x: &CVector,
    set: &[usize],
    center: usize,
    radius: usize,
) -> f64 {
    let members: Vec<usize> = set
        .iter()
        .copied()
        .filter(|&m| m.abs_diff(center) <= radius)
        .collect();
    field_energy(dict, x, &members)
}

/// `|u|` normalized to a maximum of one.
pub fn normalized(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter().map(|v| v / max).collect()
    } else {
        values.to_vec()
    }
}

/// Matched-filter output `2 D^{-H} A^H y`.
pub fn matched_filter(
    dict: &SteeringDictionary,
    weights: &WeightMatrix,
    y: &CVector,
) -> Result<DualVector> {
    let mu = mu_max(dict, weights, y)?;
    let u = weights.apply_inverse(&(dict.matrix().adjoint() * y)) * Complex64::new(2.0, 0.0);
    Ok(DualVector { u, mu })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{build_ula_dictionary, make_span_grid, make_uniform_grid};
    use crate::lasso::solve;

    fn indices(list: &PeakList) -> Vec<(usize, f64)> {
        list.peaks.iter().map(|p| (p.index, p.magnitude)).collect()
    }

    #[test]
    fn peak_examples() {
        assert_eq!(indices(&find_peaks(&[1.0, 3.0, 2.0, 5.0, 4.0])), vec![(3, 5.0), (1, 3.0)]);
        assert_eq!(indices(&find_peaks(&[1.0, 2.0, 3.0, 4.0])), vec![(3, 4.0)]);
        assert_eq!(indices(&find_peaks(&[2.0, 2.0, 2.0])), vec![(0, 2.0)]);
        assert_eq!(indices(&find_peaks(&[5.0, 1.0, 5.0])), vec![(0, 5.0), (2, 5.0)]);
        let sorted = find_peaks_with(&[1.0, 3.0, 2.0], PeakMode::Sorted);
        assert_eq!(indices(&sorted), vec![(1, 3.0), (2, 2.0), (0, 1.0)]);
    }

    #[test]
    fn peak_function() {
        let u = DualVector {
            u: CVector::from_vec(
                [0.1, 0.9, 0.2, 0.5, 0.3].iter().map(|v| Complex64::new(*v, 0.0)).collect(),
            ),
            mu: 1.0,
        };
        let first = peak(&u, 1, PeakMode::LocalMaxima);
        assert_eq!(first.value, 0.9);
        assert_eq!(first.index, Some(1));
        let third = peak(&u, 3, PeakMode::LocalMaxima);
        assert!(third.deficit);
        assert_eq!(third.value, 0.0);
    }

    #[test]
    fn single_source_matched_filter_peaks_at_true_bin() {
        let d = build_ula_dictionary(&make_uniform_grid(90).unwrap(), 16).unwrap();
        let w = WeightMatrix::new(vec![2.0; 90]).unwrap();
        let y = d.column(40) * Complex64::new(1.5, 0.0);
        let u = matched_filter(&d, &w, &y).unwrap();
        let p = peak(&u, 1, PeakMode::LocalMaxima);
        assert_eq!(p.index, Some(40));
        // 2 / D_mm * |a_m^H a_m| * 1.5
        assert!((p.value - 1.5).abs() < 1e-12);
    }

    #[test]
    fn interval_examples() {
        assert!((interval_mu(10.0, 0.0, 0.9).unwrap() - 1.0).abs() < 1e-12);
        assert!((interval_mu(10.0, 10.0, 0.9).unwrap() - 10.0).abs() < 1e-12);
        assert!((interval_mu(4.0, 2.0, 0.5).unwrap() - 3.0).abs() < 1e-12);
        assert!(matches!(interval_mu(1.0, 2.0, 0.5), Err(Error::PeakOrdering { .. })));
    }

    #[test]
    fn mu_max_examples() {
        let d = build_ula_dictionary(&make_uniform_grid(20).unwrap(), 6).unwrap();
        let w = WeightMatrix::identity(20);
        assert_eq!(mu_max(&d, &w, &CVector::zeros(6)).unwrap(), 0.0);

        let grid = make_uniform_grid(4).unwrap();
        let eye = nalgebra::DMatrix::<Complex64>::identity(4, 4);
        let o = SteeringDictionary::from_matrix(grid, eye).unwrap();
        let y = o.column(2);
        assert!((mu_max(&o, &WeightMatrix::identity(4), &y).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn mu_max_brackets_first_activation() {
        let d = build_ula_dictionary(&make_uniform_grid(40).unwrap(), 10).unwrap();
        let w = WeightMatrix::identity(40);
        let y = d.column(7) * Complex64::new(1.0, 1.0) + d.column(25) * Complex64::new(0.5, 0.0);
        let top = mu_max(&d, &w, &y).unwrap();
        let opts = SolverOptions::default();
        let above = solve(&LassoProblem::new(&d, &w, &y, 1.01 * top).unwrap(), &opts).unwrap();
        assert!(above.x.iter().all(|v| v.norm() == 0.0));
        let below = solve(&LassoProblem::new(&d, &w, &y, 0.99 * top).unwrap(), &opts).unwrap();
        assert!(!primal_active_set(&below.x, DEFAULT_EPSILON).is_empty());
    }

    #[test]
    fn sweep_validates_grid() {
        let d = build_ula_dictionary(&make_uniform_grid(10).unwrap(), 4).unwrap();
        let w = WeightMatrix::identity(10);
        let y = d.column(1);
        let opts = PathOptions::default();
        assert!(sweep_path(&d, &w, &y, &[], &opts).is_err());
        assert!(sweep_path(&d, &w, &y, &[1.0, 1.0], &opts).is_err());
        assert!(sweep_path(&d, &w, &y, &[1.0, -1.0], &opts).is_err());
        let top = mu_max(&d, &w, &y).unwrap();
        let path = sweep_path(&d, &w, &y, &[2.0 * top, 1.5 * top], &opts).unwrap();
        assert!(path.samples.iter().all(|s| s.x.norm() == 0.0));
        assert!(path.candidate_points.is_empty());
    }

    #[test]
    fn energy_examples() {
        let d = build_ula_dictionary(&make_span_grid(-20.0, 20.0, 0.5).unwrap(), 30).unwrap();
        let mut x = CVector::zeros(81);
        x[30] = Complex64::new(1.2, -0.5);
        let single = energy_clusters(&d, &x, &[30], 0);
        assert_eq!(single.len(), 1);
        assert!((single[0].energy - x[30].norm_sqr()).abs() < 1e-12);
        assert!(energy_clusters(&d, &x, &[], 2).is_empty());
        assert_eq!(energy_near(&d, &x, &[], 30, 2), 0.0);

        x[31] = Complex64::new(0.4, 0.0);
        x[60] = Complex64::new(1.0, 0.0);
        let groups = energy_clusters(&d, &x, &[30, 31, 60], 1);
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].indices, vec![30, 31]);
        assert_eq!(groups[0].peak_index, 30);
    }

    #[test]
    fn fast_selector_rejects_excess_order() {
        let d = build_ula_dictionary(&make_uniform_grid(12).unwrap(), 8).unwrap();
        let w = WeightMatrix::identity(12);
        let y = d.column(3) * Complex64::new(1.0, 0.0);
        let err = select_mu_fast(&d, &w, &y, 12, &SelectorOptions::default()).unwrap_err();
        assert!(matches!(err, Error::OrderUnreachable { k0: 12, .. }));
        assert!(matches!(
            select_mu_fast(&d, &w, &y, 0, &SelectorOptions::default()),
            Err(Error::InvalidProblem(_))
        ));
    }

    #[test]
    fn single_source_selection() {
        let d = build_ula_dictionary(&make_uniform_grid(60).unwrap(), 12).unwrap();
        let w = WeightMatrix::identity(60);
        let y = d.column(22) * Complex64::from_polar(2.0, 0.4);
        for alg in [Algorithm::OrderRecursive, Algorithm::Fast, Algorithm::Dual] {
            let r = select_mu(&d, &w, &y, 1, alg, &SelectorOptions::default()).unwrap();
            assert_eq!(r.sets.primal, vec![22], "{alg:?}");
            assert_eq!(r.lasso_solve_count, 1, "{alg:?}");
            assert!((r.x_l0[0] - Complex64::from_polar(2.0, 0.4)).norm() < 1e-10);
            if alg == Algorithm::Dual {
                assert!(r.sets.dual.contains(&22));
            }
        }
    }
}
