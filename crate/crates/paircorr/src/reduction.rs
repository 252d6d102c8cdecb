//! Quadratic-reduction diagnostics: the `a*a*` obstruction, the `d`
//! kernel, the phases `χ₀`, `χ₁`, and their time integral.
//!
//! With `X = Su + ĝ u + u ĝᵀ`, `Y = Tp + [ĝ, p]` (`ĝ = g_potᵀ`, see
//! [`crate::pair`]) and
//! `ch = δ + p`, the coefficients of the conjugated generator are
//!
//! ```text
//! a*a* coefficient  C = X ch̄ - Y u - u m̄ u - ch m ch̄
//! aa* kernel        d = X ū - Y ch - u m̄ ch - ch m ū
//! ```
//!
//! Every term carries `u`, `p` or `Tp`, so no bare delta reaches a trace.
//! Writing `N_xy = ½(a_x a*_y + a*_y a_x)` the `d` part of the generator is
//! `-∫ d N_xy = -∫ d(x,y) a*_y a_x - ½∫ d(x,x)`, hence the scalar split off
//! with the Hartree energy is `χ₁ = ½ Re ∫ d(x,x)`.

use crate::error::{Error, Result};
use crate::grid::{convolve, l2_inner, Field, C64};
use crate::hartree::HartreeTrajectory;
use crate::kernel::{CMat, Kernel, Symmetry};
use crate::pair::{node_terms, GMPair, PairNode, PairTrajectory};
use crate::par;

/// `χ₀ = ½ ∫∫ v(x-y)|φ(x)|²|φ(y)|²`.
pub fn chi0(phi: &Field, v: &Field) -> Result<f64> {
    let rho = phi.abs_sq();
    Ok(0.5 * l2_inner(&convolve(v, &rho)?, &rho)?.re)
}

/// `χ₁` from the trace of `d`.
pub fn chi1_from_trace(trace_d: C64) -> f64 {
    0.5 * trace_d.re
}

fn ch(p: &CMat) -> CMat {
    CMat::identity(p.nrows(), p.ncols()) + p
}

/// `(d, χ₁, ∫ d(x,x))` at one node.
pub fn d_and_chi1(node: &PairNode, g_pot: &Kernel, m: &Kernel) -> Result<(Kernel, f64, C64)> {
    let (u, p) = (node.u.op(), node.p.op());
    let t = node_terms(u, p, node.su.op(), node.tp.op(), g_pot.op(), m.op())?;
    let ub = u.map(|z| z.conj());
    let mb = m.op().map(|z| z.conj());
    let c = ch(p);
    let d = &t.x * &ub - &t.y * &c - u * mb * &c - &c * m.op() * &ub;
    let tr = d.trace();
    let kernel = Kernel::from_op_unchecked(node.k.grid(), d, Symmetry::General);
    Ok((kernel, chi1_from_trace(tr), tr))
}

fn astar_op(node: &PairNode, g_pot: &Kernel, m: &Kernel) -> Result<CMat> {
    let (u, p) = (node.u.op(), node.p.op());
    let t = node_terms(u, p, node.su.op(), node.tp.op(), g_pot.op(), m.op())?;
    let mb = m.op().map(|z| z.conj());
    let c = ch(p);
    let cb = c.map(|z| z.conj());
    Ok(&t.x * &cb - &t.y * u - u * mb * u - &c * m.op() * &cb)
}

/// L² norm of the `a*a*` coefficient `C`.
pub fn astar_coeff_norm(node: &PairNode, g_pot: &Kernel, m: &Kernel) -> Result<f64> {
    Ok(astar_op(node, g_pot, m)?.norm())
}

/// The `a*a*` coefficient itself.
pub fn astar_coeff(node: &PairNode, g_pot: &Kernel, m: &Kernel) -> Result<Kernel> {
    Ok(Kernel::from_op_unchecked(node.k.grid(), astar_op(node, g_pot, m)?, Symmetry::General))
}

/// Cumulative trapezoid of `a_j` with spacing `dt`.
pub fn cumulative_trapezoid(a: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    let mut acc = 0.0;
    for (j, &x) in a.iter().enumerate() {
        if j > 0 {
            acc += 0.5 * dt * (a[j - 1] + x);
        }
        out.push(acc);
    }
    out
}

/// `∫₀ᵗ (Nχ₀ + χ₁) ds` on the time grid.
pub fn phase_integral(chi0: &[f64], chi1: &[f64], dt: f64, n: f64) -> Result<Vec<f64>> {
    if chi0.len() != chi1.len() {
        return Err(Error::Dimension("chi0 and chi1 differ in length".into()));
    }
    let s: Vec<f64> = chi0.iter().zip(chi1).map(|(a, b)| n * a + b).collect();
    Ok(cumulative_trapezoid(&s, dt))
}

/// Per-node diagnostics on the shared time grid.
#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct DiagnosticsSeries {
    pub t: Vec<f64>,
    pub chi0: Vec<f64>,
    pub chi1: Vec<f64>,
    pub trace_d_imag: Vec<f64>,
    pub trace_d_real: Vec<f64>,
    /// `‖d - d†‖`.
    pub d_antihermitian: Vec<f64>,
    pub astar_coeff_norm: Vec<f64>,
    pub residual: Vec<f64>,
    pub f_err: Vec<f64>,
    pub g_err: Vec<f64>,
    pub phase_integral: Vec<f64>,
}

pub fn diagnostics(
    h: &HartreeTrajectory,
    pair: &PairTrajectory,
    gm: &GMPair,
    v: &Field,
    n: f64,
) -> Result<DiagnosticsSeries> {
    if h.phi.len() != pair.nodes.len() {
        return Err(Error::Consistency("hartree and pair trajectories differ in length".into()));
    }
    let rows = par::try_map(pair.nodes.len(), |j| {
        let node = &pair.nodes[j];
        let c0 = chi0(&h.phi[j], v)?;
        let (d, c1, tr) = d_and_chi1(node, &gm.g_pot[j], &gm.m[j])?;
        let anti = (d.op() - d.op().adjoint()).norm();
        let a = astar_coeff_norm(node, &gm.g_pot[j], &gm.m[j])?;
        let t = node_terms(node.u.op(), node.p.op(), node.su.op(), node.tp.op(), gm.g_pot[j].op(), gm.m[j].op())?;
        Ok::<_, Error>((c0, c1, tr, anti, a, t.r.norm()))
    })?;
    let mut s = DiagnosticsSeries::default();
    for (j, (c0, c1, tr, anti, a, r)) in rows.into_iter().enumerate() {
        s.t.push(pair.time.t(j));
        s.chi0.push(c0);
        s.chi1.push(c1);
        s.trace_d_real.push(tr.re);
        s.trace_d_imag.push(tr.im);
        s.d_antihermitian.push(anti);
        s.astar_coeff_norm.push(a);
        s.residual.push(r);
    }
    s.phase_integral = phase_integral(&s.chi0, &s.chi1, pair.time.dt, n)?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, integral, PotentialSpec};
    use crate::hartree::TimeGrid;
    use crate::pair::{build_g_m_node, trajectory_from_kernels, TpMethod};
    use crate::sampling::random_smooth_field;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chi0_constant_condensate() {
        let (g, v) = build_domain(1, 16, 1.0, &PotentialSpec::gaussian(0.3, 0.2)).unwrap();
        let phi = Field::new(&g, vec![C64::new(1.0, 0.0); 16]).unwrap();
        assert!((chi0(&phi, &v).unwrap() - 0.5 * integral(&v).re).abs() < 1e-14);
    }

    #[test]
    fn chi0_matches_double_sum_and_is_gauge_invariant() {
        let (g, v) = build_domain(1, 16, 5.0, &PotentialSpec::gaussian(0.3, 0.6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let phi = random_smooth_field(&g, &mut rng, 3);
        let w = g.cell_volume();
        let mut s = 0.0;
        for x in 0..16 {
            for y in 0..16 {
                s += v.values[g.difference_index(x, y)].re * phi.values[x].norm_sqr() * phi.values[y].norm_sqr();
            }
        }
        let direct = 0.5 * w * w * s;
        let c = chi0(&phi, &v).unwrap();
        assert!((c - direct).abs() < 1e-12);
        let rotated = phi.scale(C64::new(0.0, 1.3).exp());
        assert_eq!(chi0(&rotated, &v).unwrap(), c);
    }

    #[test]
    fn zero_kernel_diagnostics() {
        let (g, v) = build_domain(1, 8, 5.0, &PotentialSpec::gaussian(0.3, 0.6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let phi = random_smooth_field(&g, &mut rng, 2);
        let (gp, m, _) = build_g_m_node(&phi, &v, &v.fourier()).unwrap();
        let zeros = vec![Kernel::zeros(&g); 3];
        let traj = trajectory_from_kernels(&zeros, &zeros, TimeGrid::new(0.1, 2).unwrap(), TpMethod::Leibniz).unwrap();
        let (d, c1, _) = d_and_chi1(&traj.nodes[1], &gp, &m).unwrap();
        assert_eq!(d.l2_norm(), 0.0);
        assert_eq!(c1, 0.0);
        assert!((astar_coeff_norm(&traj.nodes[1], &gp, &m).unwrap() - m.l2_norm()).abs() < 1e-15);
    }

    #[test]
    fn phase_integral_constant() {
        let chi0 = vec![0.25; 11];
        let chi1 = vec![-0.5; 11];
        let ph = phase_integral(&chi0, &chi1, 0.1, 8.0).unwrap();
        for (j, x) in ph.iter().enumerate() {
            assert!((x - 1.5 * 0.1 * j as f64).abs() < 1e-14);
        }
        assert!(phase_integral(&[0.0; 4], &[0.0; 4], 0.1, 3.0).unwrap().iter().all(|&x| x == 0.0));
    }
}
