//! Browser bindings for the `www/` demo page.
//!
//! Every exported function takes a few numbers, runs a small pipeline and
//! returns a JSON string for the page to plot.

use paircorr::config::{ErrorsConfig, GridConfig, InitialDatum, OracleConfig, OutputConfig, RunConfig, TimeConfig};
use paircorr::grid::PotentialSpec;
use paircorr::pair::PicardOptions;
use paircorr::pipeline::{run_stages, Stage};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const POINTS: usize = 16;
const BOX: f64 = 6.0;
const DENSITY_FRAMES: usize = 6;

fn config(strength: f64, width: f64, points: usize, dt: f64, final_time: f64) -> RunConfig {
    RunConfig {
        seed: 0,
        n_particles: 1.0,
        grid: GridConfig { dim: 1, points, box_length: BOX },
        potential: PotentialSpec::gaussian(strength, width),
        initial: InitialDatum::Gaussian { width: 0.8, center: None, momentum: Some(vec![1.0]) },
        time: TimeConfig { dt, final_time },
        picard: PicardOptions::default(),
        errors: ErrorsConfig { enabled: points <= POINTS, stride: 1 },
        oracle: None,
        output: OutputConfig { dir: "".into() },
    }
}

fn steps(final_time: f64, dt: f64) -> Result<f64, String> {
    if !(final_time > 0.0 && dt > 0.0) || final_time / dt > 20_000.0 {
        return Err("need 0 < dt and at most 20000 steps".into());
    }
    Ok((final_time / dt).round() * dt)
}

#[derive(Serialize)]
struct HartreeOut {
    x: Vec<f64>,
    t: Vec<f64>,
    mass: Vec<f64>,
    energy: Vec<f64>,
    frames: Vec<(f64, Vec<f64>)>,
}

/// Hartree evolution of a moving Gaussian packet: mass, energy and a few
/// density snapshots.
pub fn hartree_json(strength: f64, width: f64, dt: f64, final_time: f64) -> Result<String, String> {
    let c = config(strength, width, 64, dt, steps(final_time, dt)?);
    let (grid, v) = c.domain().map_err(|e| e.to_string())?;
    let phi0 = c.initial_datum(&grid).map_err(|e| e.to_string())?;
    let n = c.time.n_steps().map_err(|e| e.to_string())?;
    let h = paircorr::hartree::hartree_evolve(&phi0, &v, dt, n).map_err(|e| e.to_string())?;
    let every = (n / (DENSITY_FRAMES - 1)).max(1);
    let frames =
        (0..=n).step_by(every).map(|j| (h.time.t(j), h.phi[j].values.iter().map(|z| z.norm_sqr()).collect())).collect();
    let out = HartreeOut {
        x: (0..grid.len()).map(|i| grid.position(i)[0]).collect(),
        t: (0..=n).map(|j| h.time.t(j)).collect(),
        mass: h.mass_log,
        energy: h.energy_log,
        frames,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct PairOut {
    t: Vec<f64>,
    k_norm: Vec<f64>,
    chi0: Vec<f64>,
    chi1: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    bound: Vec<f64>,
    picard_history: Vec<f64>,
}

/// Pair kernel, phases and the error bound on a 16-point grid.
pub fn pair_json(strength: f64, width: f64, dt: f64, final_time: f64, n_particles: f64) -> Result<String, String> {
    let mut c = config(strength, width, POINTS, dt, steps(final_time, dt)?);
    c.n_particles = n_particles;
    let (r, err) = run_stages(&c, Stage::Errors);
    if let Some(e) = err {
        return Err(e.to_string());
    }
    let d = r.diagnostics.unwrap_or_default();
    let e = r.errors.unwrap_or_default();
    let out = PairOut {
        t: r.t,
        k_norm: r.k_norm,
        chi0: d.chi0,
        chi1: d.chi1,
        f: e.f,
        g: e.g,
        bound: e.bound,
        picard_history: r.picard.map(|p| p.history).unwrap_or_default(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct FockOut {
    t: Vec<f64>,
    lhs: Vec<f64>,
    bound: Vec<f64>,
    derivative_residual: Vec<Option<f64>>,
    tail: f64,
}

/// Exact two-site Fock-space comparison: the distance from the
/// corrected coherent state against the error bound.
pub fn fock_json(strength: f64, n_particles: f64, final_time: f64) -> Result<String, String> {
    let dt = 1e-3;
    let mut c = config(strength, 0.8, 2, dt, steps(final_time, dt)?);
    c.grid.box_length = 3.0;
    c.n_particles = n_particles;
    c.initial = InitialDatum::Values { re: vec![0.8, 0.3], im: vec![0.1, -0.5] };
    c.oracle = Some(OracleConfig { n_max: 10, stride: 10 });
    let (r, err) = run_stages(&c, Stage::EndToEnd);
    let o = match (r.end_to_end, err) {
        (Some(o), _) => o,
        (None, Some(e)) => return Err(e.to_string()),
        (None, None) => return Err("end-to-end stage did not run".into()),
    };
    let out = FockOut {
        t: o.t,
        lhs: o.lhs,
        bound: o.bound,
        derivative_residual: o.derivative_residual.iter().map(|x| x.is_finite().then_some(*x)).collect(),
        tail: o.tail_max,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn hartree(strength: f64, width: f64, dt: f64, final_time: f64) -> Result<String, JsValue> {
    hartree_json(strength, width, dt, final_time).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn pair(strength: f64, width: f64, dt: f64, final_time: f64, n_particles: f64) -> Result<String, JsValue> {
    pair_json(strength, width, dt, final_time, n_particles).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn fock(strength: f64, n_particles: f64, final_time: f64) -> Result<String, JsValue> {
    fock_json(strength, n_particles, final_time).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hartree_output_shape() {
        let v: serde_json::Value = serde_json::from_str(&hartree_json(0.5, 0.8, 0.01, 0.5).unwrap()).unwrap();
        assert_eq!(v["t"].as_array().unwrap().len(), 51);
        assert_eq!(v["frames"].as_array().unwrap().len(), DENSITY_FRAMES);
        assert_eq!(v["x"].as_array().unwrap().len(), 64);
    }

    #[test]
    fn pair_output_has_bound() {
        let v: serde_json::Value = serde_json::from_str(&pair_json(0.05, 0.8, 0.02, 0.4, 4.0).unwrap()).unwrap();
        let bound = v["bound"].as_array().unwrap();
        assert_eq!(bound.len(), 21);
        assert!(bound.last().unwrap().as_f64().unwrap() > 0.0);
    }

    #[test]
    fn fock_inequality_holds() {
        let v: serde_json::Value = serde_json::from_str(&fock_json(0.05, 1.0, 0.2).unwrap()).unwrap();
        let lhs = v["lhs"].as_array().unwrap();
        let bound = v["bound"].as_array().unwrap();
        for (l, b) in lhs.iter().zip(bound) {
            assert!(l.as_f64().unwrap() <= b.as_f64().unwrap() * 1.05 + 1e-14);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(hartree_json(0.1, 0.8, 0.0, 1.0).is_err());
        assert!(pair_json(0.1, -1.0, 0.01, 0.1, 1.0).is_err());
    }
}
