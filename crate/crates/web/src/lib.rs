//! WebAssembly bindings: every entry point takes a scenario config as JSON and
//! returns JSON, so the page needs no bindings beyond strings.

use lasso_dual::duality::{dual_from_primal, ActiveSets};
use lasso_dual::lasso::{solve, LassoProblem};
use lasso_dual::regpath::mu_max;
use lasso_dual::scenario::{build_instance, builtin, run_estimate, run_path, ScenarioConfig, BUILTIN_NAMES};
use serde::Serialize;
use wasm_bindgen::prelude::*;

type Out = Result<String, String>;

fn config(text: &str) -> Result<ScenarioConfig, String> {
    let cfg = ScenarioConfig::from_json(text).map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// Names of the built-in scenarios, newline separated.
#[wasm_bindgen]
pub fn builtin_names() -> String {
    BUILTIN_NAMES.join("\n")
}

/// Pretty-printed config of a built-in scenario.
#[wasm_bindgen]
pub fn builtin_config(name: &str) -> Out {
    builtin(name).map(|c| c.to_json()).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Spectrum {
    mu: f64,
    mu_max: f64,
    angles_deg: Vec<f64>,
    abs_x: Vec<f64>,
    abs_u: Vec<f64>,
    primal_set: Vec<usize>,
    dual_set: Vec<usize>,
    true_bins: Vec<usize>,
    converged: bool,
}

/// Solves at `mu_frac * mu_max` and returns amplitudes and dual magnitudes per grid angle.
#[wasm_bindgen]
pub fn spectrum(config_json: &str, mu_frac: f64) -> Out {
    let cfg = config(config_json)?;
    if !(mu_frac > 0.0 && mu_frac.is_finite()) {
        return Err(format!("mu fraction must be positive, got {mu_frac}"));
    }
    let inst = build_instance(&cfg).map_err(|e| e.to_string())?;
    let top = mu_max(&inst.dict, &inst.weights, inst.y()).map_err(|e| e.to_string())?;
    let mu = mu_frac * top;
    let problem = LassoProblem::new(&inst.dict, &inst.weights, inst.y(), mu).map_err(|e| e.to_string())?;
    let sol = solve(&problem, &cfg.solver).map_err(|e| e.to_string())?;
    let dual = dual_from_primal(&inst.dict, &inst.weights, inst.y(), &sol.x, mu).map_err(|e| e.to_string())?;
    let sets = ActiveSets::detect(&sol.x, &dual, cfg.thresholds.epsilon, cfg.thresholds.epsilon_mu);
    let grid = inst.dict.grid();
    let out = Spectrum {
        mu,
        mu_max: top,
        angles_deg: (0..grid.len()).map(|m| grid.angle_deg(m)).collect(),
        abs_x: sol.x.iter().map(|v| v.norm()).collect(),
        abs_u: dual.u.iter().map(|v| v.norm()).collect(),
        primal_set: sets.primal,
        dual_set: sets.dual,
        true_bins: inst.true_bins().to_vec(),
        converged: sol.converged,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Runs the config's `estimate` task and returns the result record.
#[wasm_bindgen]
pub fn estimate(config_json: &str) -> Out {
    let cfg = config(config_json)?;
    run_estimate(&cfg).map(|r| r.to_json()).map_err(|e| e.to_string())
}

/// Runs the config's `path` task and returns the result record.
#[wasm_bindgen]
pub fn path(config_json: &str) -> Out {
    let cfg = config(config_json)?;
    run_path(&cfg).map(|o| o.record.to_json()).map_err(|e| e.to_string())
}
