//! Experiment configurations, built-in scenarios and result records.
//!
//! A [`ScenarioConfig`] is a JSON document describing the array, the source
//! scene, the noise, the weights and one task (`path`, `estimate` or
//! `kkt-audit`). Running a task yields a [`ResultRecord`] that serializes to
//! JSON and reads back bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::array::{
    build_ula_dictionary, make_span_grid, make_uniform_grid, sigma_for_snr, synthesize, PowerUnit,
    Snapshot, SourceScene, SteeringDictionary,
};
use crate::duality::{
    check_kkt, restrict_l0, scatter, KktReport, KktTolerances, DEFAULT_EPSILON, DEFAULT_EPSILON_MU,
};
use crate::error::{config, Error, Result};
use crate::lasso::{SolverOptions, WeightMatrix};
use crate::regpath::{
    energy_near, linear_mu_grid, mu_max, select_mu, sweep_path, Algorithm, PathOptions, PeakMode,
    SelectionResult, SelectorOptions, StepKind, TraceEntry,
};
use crate::{CVector, Complex64};

pub const SCHEMA_VERSION: u32 = 1;

pub const BUILTIN_NAMES: [&str; 5] = ["complete6", "over81", "three30", "four30", "eight64"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridSpec {
    /// `theta_m = (m-1) 180/M - 90`
    Uniform { count: usize },
    /// `lo, lo + step, ..., hi`
    Span { lo_deg: f64, hi_deg: f64, step_deg: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySpec {
    pub sensors: usize,
    pub grid: GridSpec,
}

/// What a source power refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerReference {
    /// `|x_k|^2`, the power carried by a unit-norm dictionary column.
    #[default]
    Atom,
    /// Power received at each sensor: `|x_k|^2 = N p_k`.
    Sensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub doas_deg: Vec<f64>,
    pub powers: Vec<f64>,
    pub unit: PowerUnit,
    #[serde(default)]
    pub power_reference: PowerReference,
    /// Radians; all zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases_rad: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Named(String),
    Diagonal(Vec<f64>),
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec::Named("identity".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MuGrid {
    /// Explicit values, strictly decreasing.
    Values(Vec<f64>),
    /// `count` values from `hi_frac * mu_max` down to `lo_frac * mu_max`.
    Relative {
        hi_frac: f64,
        lo_frac: f64,
        count: usize,
        spacing: Spacing,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskSpec {
    Path {
        mu: MuGrid,
        /// Bins on either side of a true bin summed into the energy column.
        #[serde(default = "default_energy_radius")]
        energy_radius: usize,
    },
    Estimate {
        k0: usize,
        #[serde(default = "default_f")]
        f: f64,
        algorithm: Algorithm,
    },
    KktAudit {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tolerances: Option<KktTolerances>,
    },
}

fn default_energy_radius() -> usize {
    2
}

fn default_f() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSpec {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_epsilon_mu")]
    pub epsilon_mu: f64,
    #[serde(default)]
    pub peak_mode: PeakMode,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_epsilon_mu() -> f64 {
    DEFAULT_EPSILON_MU
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            epsilon_mu: DEFAULT_EPSILON_MU,
            peak_mode: PeakMode::LocalMaxima,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub array: ArraySpec,
    pub scene: SceneSpec,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weights: WeightSpec,
    pub task: TaskSpec,
    #[serde(default)]
    pub thresholds: ThresholdSpec,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config(if path.is_empty() { "." } else { &path }, e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Field-level checks beyond what the JSON schema enforces.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if self.array.sensors == 0 {
            return Err(config("array.sensors", "must be at least 1"));
        }
        let s = &self.scene;
        if s.powers.len() != s.doas_deg.len() {
            return Err(config("scene.powers", "one power per DOA required"));
        }
        if let Some(ph) = &s.phases_rad {
            if ph.len() != s.doas_deg.len() {
                return Err(config("scene.phases_rad", "one phase per DOA required"));
            }
        }
        match (self.noise.snr_db, self.noise.sigma2) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(config("noise", "give exactly one of snr_db and sigma2"))
            }
            (Some(snr), None) if !snr.is_finite() => {
                return Err(config("noise.snr_db", "must be finite"))
            }
            (None, Some(s2)) if !(s2 >= 0.0 && s2.is_finite()) => {
                return Err(config("noise.sigma2", "must be finite and >= 0"))
            }
            _ => {}
        }
        if let WeightSpec::Named(name) = &self.weights {
            if name != "identity" {
                return Err(config("weights", format!("unknown weights `{name}`")));
            }
        }
        let t = &self.thresholds;
        if !(t.epsilon > 0.0 && t.epsilon < 1.0) {
            return Err(config("thresholds.epsilon", "must lie in (0, 1)"));
        }
        if !(t.epsilon_mu > 0.0 && t.epsilon_mu < 1.0) {
            return Err(config("thresholds.epsilon_mu", "must lie in (0, 1)"));
        }
        match &self.task {
            TaskSpec::Path { mu, .. } => match mu {
                MuGrid::Values(v) => {
                    if v.is_empty() {
                        return Err(config("task.mu", "empty mu grid"));
                    }
                    if v.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
                        return Err(config("task.mu", "values must be positive"));
                    }
                    if v.windows(2).any(|w| w[1] >= w[0]) {
                        return Err(config("task.mu", "values must be strictly decreasing"));
                    }
                }
                MuGrid::Relative {
                    hi_frac,
                    lo_frac,
                    count,
                    ..
                } => {
                    if *count == 0 {
                        return Err(config("task.mu.count", "empty mu grid"));
                    }
                    if !(*lo_frac > 0.0 && hi_frac.is_finite() && (lo_frac < hi_frac || *count == 1)) {
                        return Err(config("task.mu", "need 0 < lo_frac < hi_frac"));
                    }
                }
            },
            TaskSpec::Estimate { k0, f, .. } => {
                if *k0 == 0 {
                    return Err(config("task.k0", "sparsity order must be at least 1"));
                }
                if !(*f > 0.0 && *f < 1.0) {
                    return Err(config("task.f", "must lie in (0, 1)"));
                }
            }
            TaskSpec::KktAudit { mu, .. } => {
                if let Some(m) = mu {
                    if !(m.is_finite() && *m > 0.0) {
                        return Err(config("task.mu", "must be positive"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Dictionary, weights and snapshot built from a config.
#[derive(Debug, Clone)]
pub struct Instance {
    pub dict: SteeringDictionary,
    pub weights: WeightMatrix,
    pub scene: SourceScene,
    pub snapshot: Snapshot,
}

impl Instance {
    pub fn y(&self) -> &CVector {
        &self.snapshot.y
    }

    pub fn true_bins(&self) -> &[usize] {
        &self.snapshot.truth.bins
    }
}

pub fn build_instance(cfg: &ScenarioConfig) -> Result<Instance> {
    cfg.validate()?;
    let grid = match cfg.array.grid {
        GridSpec::Uniform { count } => make_uniform_grid(count),
        GridSpec::Span {
            lo_deg,
            hi_deg,
            step_deg,
        } => make_span_grid(lo_deg, hi_deg, step_deg),
    }
    .map_err(|e| config("array.grid", e.to_string()))?;
    let dict = build_ula_dictionary(&grid, cfg.array.sensors)
        .map_err(|e| config("array", e.to_string()))?;

    let s = &cfg.scene;
    let mut powers = match s.unit {
        PowerUnit::Linear => s.powers.clone(),
        PowerUnit::Db => s.powers.iter().map(|db| 10f64.powf(db / 10.0)).collect(),
    };
    if s.power_reference == PowerReference::Sensor {
        for p in &mut powers {
            *p *= cfg.array.sensors as f64;
        }
    }
    let phases = s.phases_rad.clone().unwrap_or_else(|| vec![0.0; s.doas_deg.len()]);
    let scene = SourceScene::new(s.doas_deg.clone(), powers, PowerUnit::Linear, phases)
        .map_err(|e| config("scene", e.to_string()))?;

    let sigma2 = match (cfg.noise.snr_db, cfg.noise.sigma2) {
        (Some(snr), None) => {
            sigma_for_snr(&dict, &scene, snr).map_err(|e| config("noise.snr_db", e.to_string()))?
        }
        (None, Some(s2)) => s2,
        _ => unreachable!("validated"),
    };
    let snapshot =
        synthesize(&dict, &scene, sigma2, cfg.seed).map_err(|e| config("scene", e.to_string()))?;

    let weights = match &cfg.weights {
        WeightSpec::Named(_) => WeightMatrix::identity(dict.atoms()),
        WeightSpec::Diagonal(d) => {
            if d.len() != dict.atoms() {
                return Err(config(
                    "weights",
                    format!("{} values for {} grid angles", d.len(), dict.atoms()),
                ));
            }
            WeightMatrix::new(d.clone()).map_err(|e| config("weights", e.to_string()))?
        }
    };
    Ok(Instance {
        dict,
        weights,
        scene,
        snapshot,
    })
}

fn builtin_base(
    name: &str,
    sensors: usize,
    grid: GridSpec,
    scene: SceneSpec,
    noise: NoiseSpec,
    task: TaskSpec,
) -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: Some(name.into()),
        array: ArraySpec { sensors, grid },
        scene,
        noise,
        seed: 0,
        weights: WeightSpec::default(),
        task,
        thresholds: ThresholdSpec::default(),
        solver: SolverOptions::default(),
    }
}

fn six_source_scene() -> SceneSpec {
    SceneSpec {
        doas_deg: vec![-6.0, -1.0, 4.0, 9.0, 14.0, 19.0],
        powers: vec![4.0, 7.0, 9.0, 7.0, 12.0, 5.0],
        unit: PowerUnit::Linear,
        power_reference: PowerReference::Atom,
        phases_rad: None,
    }
}

fn relative_path(count: usize) -> TaskSpec {
    TaskSpec::Path {
        mu: MuGrid::Relative {
            hi_frac: 1.05,
            lo_frac: 0.01,
            count,
            spacing: Spacing::Linear,
        },
        energy_radius: default_energy_radius(),
    }
}

/// One of [`BUILTIN_NAMES`].
pub fn builtin(name: &str) -> Result<ScenarioConfig> {
    let snr40 = NoiseSpec {
        snr_db: Some(40.0),
        sigma2: None,
    };
    let noiseless = NoiseSpec {
        snr_db: None,
        sigma2: Some(0.0),
    };
    let unit_mu = TaskSpec::Path {
        mu: MuGrid::Values(vec![1.0]),
        energy_radius: default_energy_radius(),
    };
    let fig3_scene = |doas: Vec<f64>| SceneSpec {
        powers: vec![1.0; doas.len()],
        doas_deg: doas,
        unit: PowerUnit::Linear,
        power_reference: PowerReference::Atom,
        phases_rad: None,
    };
    let cfg = match name {
        "complete6" => builtin_base(
            name,
            30,
            GridSpec::Span {
                lo_deg: -6.0,
                hi_deg: 19.0,
                step_deg: 5.0,
            },
            six_source_scene(),
            snr40,
            relative_path(400),
        ),
        "over81" => builtin_base(
            name,
            30,
            GridSpec::Span {
                lo_deg: -20.0,
                hi_deg: 20.0,
                step_deg: 0.5,
            },
            six_source_scene(),
            snr40,
            relative_path(200),
        ),
        "three30" => builtin_base(
            name,
            30,
            GridSpec::Span {
                lo_deg: -90.0,
                hi_deg: 90.0,
                step_deg: 0.5,
            },
            fig3_scene(vec![-3.0, 4.5, 84.5]),
            noiseless,
            unit_mu,
        ),
        "four30" => builtin_base(
            name,
            30,
            GridSpec::Span {
                lo_deg: -90.0,
                hi_deg: 90.0,
                step_deg: 0.5,
            },
            fig3_scene(vec![-3.0, 4.5, 8.0, 84.5]),
            noiseless,
            unit_mu,
        ),
        "eight64" => builtin_base(
            name,
            64,
            GridSpec::Uniform { count: 180 },
            SceneSpec {
                doas_deg: vec![-45.0, -30.0, -14.0, 9.0, 17.0, 30.0, 44.0, 72.0],
                powers: vec![-5.0, 10.0, 5.0, 0.0, 11.0, 12.0, 9.0, 25.0],
                unit: PowerUnit::Db,
                power_reference: PowerReference::Sensor,
                phases_rad: None,
            },
            NoiseSpec {
                snr_db: None,
                sigma2: Some(1.0),
            },
            TaskSpec::Estimate {
                k0: 8,
                f: 0.9,
                algorithm: Algorithm::Fast,
            },
        ),
        other => {
            return Err(config(
                "scenario",
                format!("unknown built-in `{other}` (one of {})", BUILTIN_NAMES.join(", ")),
            ))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Amplitude at one grid bin, linear and in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Amplitude {
    pub index: usize,
    pub angle_deg: f64,
    pub value: Complex64,
    pub magnitude: f64,
    /// `20 log10 |x|`; absent for an exact zero.
    pub power_db: Option<f64>,
}

fn amplitudes(dict: &SteeringDictionary, x: &CVector, set: &[usize]) -> Vec<Amplitude> {
    set.iter()
        .map(|&m| Amplitude {
            index: m,
            angle_deg: dict.grid().angle_deg(m),
            value: x[m],
            magnitude: x[m].norm(),
            power_db: (x[m].norm() > 0.0).then(|| 20.0 * x[m].norm().log10()),
        })
        .collect()
}

fn angles(dict: &SteeringDictionary, set: &[usize]) -> Vec<f64> {
    set.iter().map(|&m| dict.grid().angle_deg(m)).collect()
}

fn to_vec(v: &CVector) -> Vec<Complex64> {
    v.iter().copied().collect()
}

/// Derived quantities of the instance, echoed next to the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedInstance {
    pub sensors: usize,
    pub grid_len: usize,
    pub sigma2: f64,
    pub mu_max: f64,
    pub true_bins: Vec<usize>,
    pub true_angles_deg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSampleRecord {
    pub mu: f64,
    pub primal_set: Vec<usize>,
    pub dual_set: Vec<usize>,
    pub doa_deg: Vec<f64>,
    pub amplitudes: Vec<Amplitude>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub samples: Vec<PathSampleRecord>,
    pub candidate_points: Vec<crate::regpath::CandidateBracket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub algorithm: Algorithm,
    pub k0: usize,
    pub f: f64,
    pub mu: f64,
    pub primal_set: Vec<usize>,
    pub dual_set: Vec<usize>,
    pub doa_deg: Vec<f64>,
    pub amplitudes_l1: Vec<Amplitude>,
    pub amplitudes_l0: Vec<Amplitude>,
    pub outer_iterations: usize,
    pub lasso_solve_count: usize,
    pub trace: Vec<TraceEntry>,
    /// Full LASSO solution at `mu`, the input of a later audit.
    pub x_lasso: Vec<Complex64>,
    pub kkt: KktReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    /// `scenario` when the LASSO was solved here, `solution` for a supplied file.
    pub source: String,
    pub report: KktReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub kind: String,
    pub message: String,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub config: ScenarioConfig,
    pub resolved: ResolvedInstance,
    pub converged: bool,
    pub lasso_solve_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EstimateRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureRecord>,
}

impl ResultRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config(if path.is_empty() { "." } else { &path }, e.inner().to_string())
        })
    }
}

fn resolve(inst: &Instance) -> Result<ResolvedInstance> {
    Ok(ResolvedInstance {
        sensors: inst.dict.sensors(),
        grid_len: inst.dict.atoms(),
        sigma2: inst.snapshot.sigma2,
        mu_max: mu_max(&inst.dict, &inst.weights, inst.y())?,
        true_bins: inst.true_bins().to_vec(),
        true_angles_deg: angles(&inst.dict, inst.true_bins()),
    })
}

fn path_options(cfg: &ScenarioConfig) -> PathOptions {
    PathOptions {
        solver: cfg.solver.clone(),
        epsilon: cfg.thresholds.epsilon,
        epsilon_mu: cfg.thresholds.epsilon_mu,
        warm_start: true,
    }
}

pub fn resolve_mu_grid(grid: &MuGrid, top: f64) -> Result<Vec<f64>> {
    let values = match grid {
        MuGrid::Values(v) => v.clone(),
        MuGrid::Relative {
            hi_frac,
            lo_frac,
            count,
            spacing,
        } => {
            if top <= 0.0 {
                return Err(config("task.mu", "mu_max is zero; relative grid undefined"));
            }
            match spacing {
                Spacing::Linear => linear_mu_grid(hi_frac * top, lo_frac * top, *count),
                Spacing::Log => linear_mu_grid(hi_frac.ln(), lo_frac.ln(), *count)
                    .into_iter()
                    .map(|l| top * l.exp())
                    .collect(),
            }
        }
    };
    if values.is_empty() {
        return Err(config("task.mu", "empty mu grid"));
    }
    Ok(values)
}

/// Record plus the plot-ready CSV table of a path sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOutput {
    pub record: ResultRecord,
    pub csv: String,
}

pub const PATH_CSV_HEADER: &str = "mu,index,angle_deg,abs_x,arg_x,abs_u,in_M,in_U,energy,abs_x_l0";

pub fn run_path(cfg: &ScenarioConfig) -> Result<PathOutput> {
    let TaskSpec::Path { mu, energy_radius } = &cfg.task else {
        return Err(config("task.kind", "expected `path`"));
    };
    let inst = build_instance(cfg)?;
    let resolved = resolve(&inst)?;
    let mus = resolve_mu_grid(mu, resolved.mu_max)?;
    let path = sweep_path(&inst.dict, &inst.weights, inst.y(), &mus, &path_options(cfg))?;

    let m = inst.dict.atoms();
    let mut csv = String::from(PATH_CSV_HEADER);
    csv.push('\n');
    let mut samples = Vec::with_capacity(path.samples.len());
    let mut solves = 0;
    for s in &path.samples {
        solves += 1;
        let primal = &s.sets.primal;
        let l0 = restrict_l0(&inst.dict, primal, inst.y())
            .ok()
            .map(|v| scatter(m, primal, &v));
        for k in 0..m {
            let energy = if inst.true_bins().contains(&k) {
                energy_near(&inst.dict, &s.x, primal, k, *energy_radius)
            } else {
                0.0
            };
            let l0_cell = l0.as_ref().map_or(String::new(), |v| v[k].norm().to_string());
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                s.mu,
                k,
                inst.dict.grid().angle_deg(k),
                s.x[k].norm(),
                s.x[k].arg(),
                s.u[k].norm(),
                u8::from(primal.contains(&k)),
                u8::from(s.sets.dual.contains(&k)),
                energy,
                l0_cell
            ));
        }
        samples.push(PathSampleRecord {
            mu: s.mu,
            primal_set: primal.clone(),
            dual_set: s.sets.dual.clone(),
            doa_deg: angles(&inst.dict, primal),
            amplitudes: amplitudes(&inst.dict, &s.x, primal),
            objective: s.objective,
            converged: s.converged,
            iterations: s.iterations,
        });
    }
    let converged = samples.iter().all(|s| s.converged);
    Ok(PathOutput {
        record: ResultRecord {
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
            resolved,
            converged,
            lasso_solve_count: solves,
            path: Some(PathRecord {
                samples,
                candidate_points: path.candidate_points,
            }),
            estimate: None,
            audit: None,
            failure: None,
        },
        csv,
    })
}

pub fn selector_options(cfg: &ScenarioConfig, f: f64) -> SelectorOptions {
    SelectorOptions {
        f,
        epsilon: cfg.thresholds.epsilon,
        epsilon_mu: cfg.thresholds.epsilon_mu,
        peak_mode: cfg.thresholds.peak_mode,
        solver: cfg.solver.clone(),
        ..SelectorOptions::default()
    }
}

fn estimate_record(
    inst: &Instance,
    r: &SelectionResult,
    f: f64,
    tol: &KktTolerances,
) -> Result<EstimateRecord> {
    let set = &r.sets.primal;
    let kkt = check_kkt(&inst.dict, &inst.weights, inst.y(), &r.x_lasso, r.mu, tol)?;
    let l0 = scatter(inst.dict.atoms(), set, &r.x_l0);
    Ok(EstimateRecord {
        algorithm: r.algorithm,
        k0: r.k0,
        f,
        mu: r.mu,
        primal_set: set.clone(),
        dual_set: r.sets.dual.clone(),
        doa_deg: angles(&inst.dict, set),
        amplitudes_l1: amplitudes(&inst.dict, &r.x_lasso, set),
        amplitudes_l0: amplitudes(&inst.dict, &l0, set),
        outer_iterations: r.outer_iterations,
        lasso_solve_count: r.lasso_solve_count,
        trace: r.trace.clone(),
        x_lasso: to_vec(&r.x_lasso),
        kkt,
    })
}

/// Runs the configured selector. An unreachable order is reported inside
/// the record (with the trace so far) rather than as an error.
pub fn run_estimate(cfg: &ScenarioConfig) -> Result<ResultRecord> {
    let TaskSpec::Estimate { k0, f, algorithm } = &cfg.task else {
        return Err(config("task.kind", "expected `estimate`"));
    };
    let inst = build_instance(cfg)?;
    let resolved = resolve(&inst)?;
    let opts = selector_options(cfg, *f);
    let mut record = ResultRecord {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        resolved,
        converged: true,
        lasso_solve_count: 0,
        path: None,
        estimate: None,
        audit: None,
        failure: None,
    };
    match select_mu(&inst.dict, &inst.weights, inst.y(), *k0, *algorithm, &opts) {
        Ok(r) => {
            record.converged = r.trace.iter().all(|t| t.converged);
            record.lasso_solve_count = r.lasso_solve_count;
            record.estimate = Some(estimate_record(&inst, &r, *f, &KktTolerances::default())?);
        }
        Err(Error::OrderUnreachable {
            k0,
            reason,
            achieved,
            trace,
        }) => {
            record.converged = trace.iter().all(|t| t.converged);
            record.lasso_solve_count = trace.iter().filter(|t| t.kind != StepKind::Initial).count();
            record.failure = Some(FailureRecord {
                kind: "order-unreachable".into(),
                message: format!(
                    "sparsity order {k0} unreachable: {reason} (orders seen: {achieved:?})"
                ),
                trace,
            });
        }
        Err(e) => return Err(e),
    }
    Ok(record)
}

/// Audits either a fresh LASSO solve at the configured `mu` or, when
/// `solution` is given, the `x_lasso`/`mu` stored in an estimate record.
pub fn run_kkt_audit(cfg: &ScenarioConfig, solution: Option<&ResultRecord>) -> Result<ResultRecord> {
    let TaskSpec::KktAudit { mu, tolerances } = &cfg.task else {
        return Err(config("task.kind", "expected `kkt-audit`"));
    };
    let tol = tolerances.unwrap_or_default();
    let inst = build_instance(cfg)?;
    let resolved = resolve(&inst)?;
    let (x, mu, source, solves, converged) = match solution {
        Some(rec) => {
            let est = rec
                .estimate
                .as_ref()
                .ok_or_else(|| config("solution.estimate", "record holds no estimate"))?;
            if est.x_lasso.len() != inst.dict.atoms() {
                return Err(config(
                    "solution.estimate.x_lasso",
                    format!("{} entries for {} grid angles", est.x_lasso.len(), inst.dict.atoms()),
                ));
            }
            (CVector::from_vec(est.x_lasso.clone()), est.mu, "solution", 0, true)
        }
        None => {
            let mu = mu.ok_or_else(|| config("task.mu", "missing mu (or supply a solution file)"))?;
            let problem = crate::lasso::LassoProblem::new(&inst.dict, &inst.weights, inst.y(), mu)?;
            let sol = crate::lasso::solve(&problem, &cfg.solver)?;
            (sol.x, mu, "scenario", 1, sol.converged)
        }
    };
    let report = check_kkt(&inst.dict, &inst.weights, inst.y(), &x, mu, &tol)?;
    Ok(ResultRecord {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        resolved,
        converged,
        lasso_solve_count: solves,
        path: None,
        estimate: None,
        audit: Some(AuditRecord {
            source: source.into(),
            report,
        }),
        failure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate_and_build() {
        for name in BUILTIN_NAMES {
            let cfg = builtin(name).unwrap();
            let inst = build_instance(&cfg).unwrap();
            assert_eq!(inst.true_bins().len(), cfg.scene.doas_deg.len(), "{name}");
            let back = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg);
        }
        assert!(builtin("nope").is_err());
    }

    #[test]
    fn builtin_grids() {
        let d = build_instance(&builtin("four30").unwrap()).unwrap().dict;
        assert_eq!((d.sensors(), d.atoms()), (30, 361));
        let d = build_instance(&builtin("eight64").unwrap()).unwrap().dict;
        assert_eq!((d.sensors(), d.atoms()), (64, 180));
        let d = build_instance(&builtin("over81").unwrap()).unwrap().dict;
        assert_eq!(d.atoms(), 81);
    }

    #[test]
    fn sensor_power_reference_scales_by_array_size() {
        let inst = build_instance(&builtin("eight64").unwrap()).unwrap();
        let strongest = inst.scene.powers()[7];
        assert!((strongest - 64.0 * 10f64.powf(2.5)).abs() < 1e-9);
    }

    #[test]
    fn field_level_errors() {
        let mut cfg = builtin("complete6").unwrap();
        cfg.task = TaskSpec::Path {
            mu: MuGrid::Values(vec![]),
            energy_radius: 2,
        };
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "task.mu"), "{err}");

        let mut cfg = builtin("eight64").unwrap();
        cfg.task = TaskSpec::Estimate {
            k0: 0,
            f: 0.9,
            algorithm: Algorithm::Fast,
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { ref field, .. }) if field == "task.k0"));

        let mut cfg = builtin("eight64").unwrap();
        cfg.noise.snr_db = Some(3.0);
        assert!(matches!(cfg.validate(), Err(Error::Config { ref field, .. }) if field == "noise"));

        let text = builtin("eight64").unwrap().to_json().replace("\"sensors\"", "\"sensorz\"");
        let err = ScenarioConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("array"), "{err}");
    }

    #[test]
    fn audit_requires_mu() {
        let mut cfg = builtin("three30").unwrap();
        cfg.task = TaskSpec::KktAudit {
            mu: None,
            tolerances: None,
        };
        assert!(matches!(
            run_kkt_audit(&cfg, None),
            Err(Error::Config { ref field, .. }) if field == "task.mu"
        ));
    }

    #[test]
    fn relative_grids() {
        let lin = resolve_mu_grid(
            &MuGrid::Relative {
                hi_frac: 1.0,
                lo_frac: 0.5,
                count: 3,
                spacing: Spacing::Linear,
            },
            2.0,
        )
        .unwrap();
        assert_eq!(lin, vec![2.0, 1.5, 1.0]);
        let log = resolve_mu_grid(
            &MuGrid::Relative {
                hi_frac: 1.0,
                lo_frac: 0.01,
                count: 3,
                spacing: Spacing::Log,
            },
            1.0,
        )
        .unwrap();
        assert!((log[1] - 0.1).abs() < 1e-12);
    }
}
