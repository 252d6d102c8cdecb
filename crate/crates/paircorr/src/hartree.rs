//! Hartree equation `iφ_t + Δφ + (v*|φ|²)φ = 0`.
//!
//! The sign is the one that pairs with `H₀ = ∫ a* Δ a`: a plane wave
//! `e^{iξx}` evolves as `e^{-i|ξ|²t}`.

use crate::error::{Error, Result};
use crate::grid::{convolve, convolve_hat, l2_inner, laplacian, same_grid, Field, C64};

/// Relative mass drift that aborts an evolution.
pub const MASS_DRIFT_LIMIT: f64 = 1e-6;

/// Uniform nodes `t_j = j·dt`, `j = 0..=n_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt.is_finite() && dt != 0.0) {
            return Err(Error::Config(format!("dt must be finite and nonzero, got {dt}")));
        }
        Ok(TimeGrid { dt, n_steps })
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    pub fn final_time(&self) -> f64 {
        self.t(self.n_steps)
    }
}

#[derive(Clone, Debug)]
pub struct HartreeTrajectory {
    pub time: TimeGrid,
    pub phi: Vec<Field>,
    pub mass_log: Vec<f64>,
    pub energy_log: Vec<f64>,
}

impl HartreeTrajectory {
    pub fn max_mass_drift(&self) -> f64 {
        let m0 = self.mass_log[0];
        self.mass_log.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max)
    }

    pub fn max_energy_drift(&self) -> f64 {
        let e0 = self.energy_log[0];
        self.energy_log.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max)
    }
}

/// `∂_t φ = i(Δφ + (v*|φ|²)φ)`.
pub fn hartree_rhs(phi: &Field, v: &Field) -> Result<Field> {
    same_grid(&phi.grid, &v.grid)?;
    let lap = laplacian(phi);
    let pot = convolve(v, &phi.abs_sq())?;
    let i = C64::new(0.0, 1.0);
    let values = lap.values.iter().zip(&pot.values).zip(&phi.values).map(|((l, w), f)| i * (l + w * f)).collect();
    Ok(Field { values, grid: phi.grid.clone() })
}

/// `δE/δφ̄ = -Δφ - (v*|φ|²)φ`, which equals `i·hartree_rhs`.
pub fn energy_gradient(phi: &Field, v: &Field) -> Result<Field> {
    Ok(hartree_rhs(phi, v)?.scale(C64::new(0.0, 1.0)))
}

/// Mass `∫|φ|²` and energy `∫|∇φ|² - ½∫∫ v(x-y)|φ(x)|²|φ(y)|²`.
pub fn conserved_quantities(phi: &Field, v: &Field) -> Result<(f64, f64)> {
    same_grid(&phi.grid, &v.grid)?;
    let mass = phi.norm().powi(2);
    let kinetic = -l2_inner(&laplacian(phi), phi)?.re;
    let rho = phi.abs_sq();
    let interaction = l2_inner(&convolve(v, &rho)?, &rho)?.re;
    Ok((mass, kinetic - 0.5 * interaction))
}

/// Strang split-step evolution: half nonlinear phase, exact free flow,
/// half nonlinear phase. A negative `dt` runs backward.
pub fn hartree_evolve(phi0: &Field, v: &Field, dt: f64, n_steps: usize) -> Result<HartreeTrajectory> {
    same_grid(&phi0.grid, &v.grid)?;
    let time = TimeGrid::new(dt, n_steps)?;
    let norm = phi0.norm();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::Input(format!("initial datum must be normalized, got norm {norm}")));
    }
    let grid = phi0.grid.clone();
    let vh = v.fourier();
    let free: Vec<C64> = grid.multipliers().iter().map(|&w| C64::new(0.0, -w * dt).exp()).collect();
    let half_phase = |f: &mut Field| {
        let pot = convolve_hat(&vh, &f.abs_sq());
        for (z, w) in f.values.iter_mut().zip(&pot.values) {
            *z *= C64::new(0.0, w.re * dt * 0.5).exp();
        }
    };
    let (m0, e0) = conserved_quantities(phi0, v)?;
    let mut phi = Vec::with_capacity(n_steps + 1);
    let mut mass_log = vec![m0];
    let mut energy_log = vec![e0];
    phi.push(phi0.clone());
    let mut cur = phi0.clone();
    for step in 1..=n_steps {
        half_phase(&mut cur);
        let mut hat = cur.fourier();
        for (z, e) in hat.iter_mut().zip(&free) {
            *z *= e;
        }
        grid.fft_nd(&mut hat, true);
        cur.values = hat;
        half_phase(&mut cur);
        if cur.values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Divergence("hartree"));
        }
        let (m, e) = conserved_quantities(&cur, v)?;
        let drift = (m - m0).abs() / m0;
        if drift > MASS_DRIFT_LIMIT {
            return Err(Error::Instability { step, drift });
        }
        mass_log.push(m);
        energy_log.push(e);
        phi.push(cur.clone());
    }
    Ok(HartreeTrajectory { time, phi, mass_log, energy_log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, integral, PotentialSpec};
    use crate::sampling::{random_field, random_smooth_field};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn plane_wave_rhs() {
        let (g, v) = build_domain(1, 16, 2.0 * PI, &PotentialSpec::zero()).unwrap();
        let xi = g.wavenumber(3);
        let f = Field::from_fn(&g, |x| C64::new(0.0, xi * x[0]).exp());
        let r = hartree_rhs(&f, &v).unwrap();
        assert!(r.max_abs_diff(&f.scale(C64::new(0.0, -xi * xi))) < 1e-12);
    }

    #[test]
    fn constant_field_rhs() {
        let (g, v) = build_domain(1, 16, 1.0, &PotentialSpec::gaussian(0.3, 0.1)).unwrap();
        let c = C64::new(0.6, 0.8);
        let f = Field::new(&g, vec![c; 16]).unwrap();
        let r = hartree_rhs(&f, &v).unwrap();
        let expect = f.scale(C64::new(0.0, c.norm_sqr()) * integral(&v));
        assert!(r.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn constant_field_energy() {
        let (g, v) = build_domain(1, 16, 1.0, &PotentialSpec::gaussian(0.3, 0.1)).unwrap();
        let f = Field::new(&g, vec![C64::new(1.0, 0.0); 16]).unwrap();
        let (m, e) = conserved_quantities(&f, &v).unwrap();
        assert!((m - 1.0).abs() < 1e-14);
        assert!((e + 0.5 * integral(&v).re).abs() < 1e-14);
    }

    #[test]
    fn free_plane_wave_evolution() {
        let (g, v) = build_domain(1, 32, 2.0 * PI, &PotentialSpec::zero()).unwrap();
        let xi = g.wavenumber(5);
        let f = Field::from_fn(&g, |x| C64::new(0.0, xi * x[0]).exp()).normalized().unwrap();
        let tr = hartree_evolve(&f, &v, 1e-3, 200).unwrap();
        let t = tr.time.final_time();
        let expect = f.scale(C64::new(0.0, -xi * xi * t).exp());
        assert!(tr.phi[200].max_abs_diff(&expect) < 1e-10);
    }

    #[test]
    fn unnormalized_rejected() {
        let (g, v) = build_domain(1, 8, 1.0, &PotentialSpec::zero()).unwrap();
        let f = Field::new(&g, vec![C64::new(2.0, 0.0); 8]).unwrap();
        assert!(hartree_evolve(&f, &v, 1e-3, 1).is_err());
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let (g, v) = build_domain(1, 32, 2.0 * PI, &PotentialSpec::gaussian(0.4, 0.7)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let phi = random_smooth_field(&g, &mut rng, 4);
        let eta = random_field(&g, &mut rng).scale(C64::new(0.1, 0.0));
        let grad = energy_gradient(&phi, &v).unwrap();
        let s = 1e-4;
        let e = |sg: f64| {
            let f = Field {
                values: phi.values.iter().zip(&eta.values).map(|(a, b)| a + b * sg).collect(),
                grid: g.clone(),
            };
            conserved_quantities(&f, &v).unwrap().1
        };
        let fd = (e(s) - e(-s)) / (2.0 * s);
        let analytic = 2.0 * l2_inner(&grad, &eta).unwrap().re;
        assert!((fd - analytic).abs() < 1e-6, "{fd} vs {analytic}");
    }
}
