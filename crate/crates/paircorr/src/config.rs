//! Run configuration.
//!
//! A run is described by a TOML document with these tables; every key not
//! marked optional is required.
//!
//! ```toml
//! seed = 7                      # drives `random_smooth` initial data
//! n_particles = 1.0             # N >= 1
//!
//! [grid]
//! dim = 1                       # 1, 2 or 3
//! points = 16                   # points per axis, >= 2
//! box_length = 6.0              # periodic box side
//!
//! [potential]
//! kind = "gaussian"             # gaussian | mollified_coulomb | zero
//! strength = 0.05
//! width = 0.8                   # optional, default 1
//! cutoff = inf                  # optional, mollified_coulomb only
//!
//! [initial]
//! kind = "gaussian"             # gaussian | random_smooth | values
//! width = 1.0                   # gaussian: packet width
//! center = [3.0]                # gaussian, optional: default box centre
//! momentum = [0.0]              # gaussian, optional: default 0
//! # random_smooth: max_mode = 2
//! # values: re = [...], im = [...] (one entry per grid point)
//!
//! [time]
//! dt = 1e-3
//! final_time = 1.0              # must be a whole number of steps
//!
//! [picard]
//! tol = 1e-12
//! max_iter = 60
//! tp_method = "leibniz"         # leibniz | centered_difference
//!
//! [errors]                      # optional table, default enabled, stride 1
//! enabled = true
//! stride = 1                    # evaluate f, g on every stride-th node
//!
//! [oracle]                      # optional table; omit to disable
//! n_max = 10
//! stride = 25                   # sampled nodes for the end-to-end check
//!
//! [output]
//! dir = "out"
//! ```
//!
//! The initial datum is normalized after construction.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::error_norms::SLOT4_MAX_POINTS;
use crate::grid::{build_domain, Field, Grid, PotentialSpec, C64};
use crate::pair::PicardOptions;
use crate::sampling::random_smooth_field;

/// Largest grid accepted by the oracle stage.
pub const ORACLE_MAX_POINTS: usize = 4;

/// Relative slack when checking that `final_time / dt` is an integer.
const STEP_COUNT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub points: usize,
    pub box_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDatum {
    /// `exp(-|x-c|²/(2w²) + i p·x)` with minimum-image distances.
    Gaussian {
        width: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        momentum: Option<Vec<f64>>,
    },
    /// Random Fourier modes up to `max_mode` per axis, seeded by the run seed.
    RandomSmooth { max_mode: usize },
    /// Explicit samples in flat grid order.
    Values { re: Vec<f64>, im: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub dt: f64,
    pub final_time: f64,
}

impl TimeConfig {
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("time.dt must be positive, got {}", self.dt)));
        }
        if !(self.final_time.is_finite() && self.final_time >= 0.0) {
            return Err(Error::Config(format!("time.final_time must be non-negative, got {}", self.final_time)));
        }
        let q = self.final_time / self.dt;
        let n = q.round();
        if (q - n).abs() > STEP_COUNT_TOL * q.max(1.0) {
            return Err(Error::Config(format!(
                "time.final_time {} is not a whole number of steps of {}",
                self.final_time, self.dt
            )));
        }
        Ok(n as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorsConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "one")]
    pub stride: usize,
}

impl Default for ErrorsConfig {
    fn default() -> Self {
        ErrorsConfig { enabled: true, stride: 1 }
    }
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub n_max: usize,
    #[serde(default = "one")]
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub n_particles: f64,
    pub grid: GridConfig,
    pub potential: PotentialSpec,
    pub initial: InitialDatum,
    pub time: TimeConfig,
    pub picard: PicardOptions,
    #[serde(default)]
    pub errors: ErrorsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(1..=3).contains(&g.dim) || g.points < 2 || !(g.box_length.is_finite() && g.box_length > 0.0) {
            return Err(Error::Config("grid needs dim 1..=3, points >= 2 and a positive box_length".into()));
        }
        if !(self.n_particles.is_finite() && self.n_particles >= 1.0) {
            return Err(Error::Config(format!("n_particles must be at least 1, got {}", self.n_particles)));
        }
        self.potential.validate()?;
        self.time.n_steps()?;
        if !(self.picard.tol > 0.0) || self.picard.max_iter == 0 {
            return Err(Error::Config("picard.tol must be positive and picard.max_iter at least 1".into()));
        }
        let points = g.points.pow(g.dim as u32);
        match &self.initial {
            InitialDatum::Gaussian { width, center, momentum } => {
                if !(width.is_finite() && *width > 0.0) {
                    return Err(Error::Config(format!("initial.width must be positive, got {width}")));
                }
                for (name, v) in [("center", center), ("momentum", momentum)] {
                    if let Some(v) = v {
                        if v.len() != g.dim || v.iter().any(|x| !x.is_finite()) {
                            return Err(Error::Config(format!("initial.{name} needs {} finite entries", g.dim)));
                        }
                    }
                }
            }
            InitialDatum::RandomSmooth { .. } => {}
            InitialDatum::Values { re, im } => {
                if re.len() != points || im.len() != points {
                    return Err(Error::Config(format!("initial.re and initial.im need {points} entries")));
                }
                if re.iter().chain(im).any(|x| !x.is_finite()) {
                    return Err(Error::Config("initial values must be finite".into()));
                }
            }
        }
        if self.errors.enabled {
            if self.errors.stride == 0 {
                return Err(Error::Config("errors.stride must be positive".into()));
            }
            if points > SLOT4_MAX_POINTS {
                return Err(Error::Config(format!(
                    "errors stage needs at most {SLOT4_MAX_POINTS} grid points, got {points}; set errors.enabled = false"
                )));
            }
        }
        if let Some(o) = &self.oracle {
            if o.stride == 0 {
                return Err(Error::Config("oracle.stride must be positive".into()));
            }
            if points > ORACLE_MAX_POINTS {
                return Err(Error::Config(format!(
                    "oracle needs at most {ORACLE_MAX_POINTS} grid points, got {points}"
                )));
            }
            if !self.errors.enabled || self.errors.stride != 1 {
                return Err(Error::Config("oracle needs errors.enabled with stride 1".into()));
            }
        }
        Ok(())
    }

    /// Grid and sampled potential.
    pub fn domain(&self) -> Result<(Grid, Field)> {
        build_domain(self.grid.dim, self.grid.points, self.grid.box_length, &self.potential)
    }

    /// Normalized initial datum on `grid`.
    pub fn initial_datum(&self, grid: &Grid) -> Result<Field> {
        let f = match &self.initial {
            InitialDatum::Gaussian { width, center, momentum } => {
                let l = grid.box_length();
                let c = center.clone().unwrap_or_else(|| vec![0.5 * l; grid.dim()]);
                let p = momentum.clone().unwrap_or_else(|| vec![0.0; grid.dim()]);
                Field::from_fn(grid, |x| {
                    let mut r2 = 0.0;
                    let mut phase = 0.0;
                    for a in 0..x.len() {
                        let mut d = (x[a] - c[a]).rem_euclid(l);
                        if d > 0.5 * l {
                            d -= l;
                        }
                        r2 += d * d;
                        phase += p[a] * x[a];
                    }
                    C64::from_polar((-r2 / (2.0 * width * width)).exp(), phase)
                })
            }
            InitialDatum::RandomSmooth { max_mode } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                random_smooth_field(grid, &mut rng, *max_mode)
            }
            InitialDatum::Values { re, im } => {
                Field::new(grid, re.iter().zip(im).map(|(&a, &b)| C64::new(a, b)).collect())?
            }
        };
        f.normalized()
    }

    /// Small configuration used by `Default` and the examples: a Gaussian
    /// packet on 16 points with a weak Gaussian interaction.
    pub fn benchmark() -> Self {
        RunConfig {
            seed: 0,
            n_particles: 1.0,
            grid: GridConfig { dim: 1, points: 16, box_length: 2.0 * PI },
            potential: PotentialSpec::gaussian(0.05, 0.8),
            initial: InitialDatum::Gaussian { width: 1.0, center: None, momentum: None },
            time: TimeConfig { dt: 1e-2, final_time: 1.0 },
            picard: PicardOptions::default(),
            errors: ErrorsConfig::default(),
            oracle: None,
            output: OutputConfig { dir: PathBuf::from("out") },
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::benchmark()
    }
}
