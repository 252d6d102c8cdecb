//! Pair-excitation kernel equation and its Picard/Duhamel solver.
//!
//! With `S = i∂_t - Δ_x - Δ_y`, `T = i∂_t - Δ_x + Δ_y` and the one-body
//! kernel `ĝ = g_potᵀ`, the equation for `k` reads
//!
//! ```text
//! Su + ĝ u + u ĝᵀ - (1+p) m = (Tp + [ĝ, p] + u m̄)(1+p)⁻¹ u
//! ```
//!
//! with `u = sh(k)`, `p = ch(k) - 1`. It is solved as the fixed point of
//! `Sk = F(k, Sk)` where
//!
//! ```text
//! F = m + S(k-u) - (ĝ u + u ĝᵀ) + p m + (Tp + [ĝ, p] + u m̄)(1+p)⁻¹ u.
//! ```
//!
//! The transpose matters only when `φ` is not real: conjugating the
//! quadratic Hamiltonian by `e^B` puts `v(x-y)φ̄(x)φ(y)` in the slot that
//! makes the `aa*` kernel `d` self-adjoint, and the Fock oracle agrees.
//!
//! Time derivatives of `u` never come from differencing: `Su` follows from
//! the cached `Sk` by the Leibniz rule on each word of the series, since
//! `S` acting on `k k̄ k ...` replaces one letter at a time by `Sk` (for
//! `k`) or `-conj(Sk)` (for `k̄`). The same rule gives `Tp` on even words.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{convolve_hat, Field, Grid, C64};
use crate::hartree::{HartreeTrajectory, TimeGrid};
use crate::kernel::{solve_one_plus_p_op, symmetrize, CMat, Kernel, Symmetry, SERIES_MAX_TERMS};
use crate::par;

/// Relative tail tolerance for the sh/ch series in the solver.
pub const SERIES_TAIL_TOL: f64 = 1e-15;

#[derive(Clone, Debug)]
pub struct GMPair {
    pub g_pot: Vec<Kernel>,
    pub m: Vec<Kernel>,
    pub v_conv_density: Vec<Field>,
}

/// `g_pot = -v(x-y)φ(x)φ̄(y) - (v*|φ|²)(x)δ_h(x-y)`, `m = v(x-y)φ̄(x)φ̄(y)`.
pub fn build_g_m_node(phi: &Field, v: &Field, vh: &[C64]) -> Result<(Kernel, Kernel, Field)> {
    let grid = &phi.grid;
    let n = grid.len();
    let w = grid.cell_volume();
    let rho = convolve_hat(vh, &phi.abs_sq());
    let rho = Field { values: rho.values.iter().map(|z| C64::new(z.re, 0.0)).collect(), grid: grid.clone() };
    let vv = |x: usize, y: usize| v.values[grid.difference_index(x, y)].re;
    let mut g = CMat::from_fn(n, n, |x, y| -phi.values[x] * phi.values[y].conj() * (w * vv(x, y)));
    for x in 0..n {
        g[(x, x)] -= rho.values[x];
    }
    let m = CMat::from_fn(n, n, |x, y| (phi.values[x] * phi.values[y]).conj() * (w * vv(x, y)));
    Ok((Kernel::from_op(grid, g, Symmetry::Hermitian)?, Kernel::from_op(grid, m, Symmetry::Symmetric)?, rho))
}

pub fn build_g_m(traj: &HartreeTrajectory, v: &Field) -> Result<GMPair> {
    crate::grid::same_grid(&traj.phi[0].grid, &v.grid)?;
    let vh = v.fourier();
    let nodes = par::try_map(traj.phi.len(), |j| build_g_m_node(&traj.phi[j], v, &vh))?;
    let mut out = GMPair { g_pot: Vec::new(), m: Vec::new(), v_conv_density: Vec::new() };
    for (g, m, r) in nodes {
        out.g_pot.push(g);
        out.m.push(m);
        out.v_conv_density.push(r);
    }
    Ok(out)
}

/// How `Tp = i p_t - Δ_x p + Δ_y p` is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TpMethod {
    /// Centered differences of `p` in time, second-order one-sided at the ends.
    CenteredDifference,
    /// Leibniz rule on the series words using the cached `Sk`.
    Leibniz,
}

/// One time node of a pair trajectory. All derived kernels refer to the
/// same `(k, Sk)`.
#[derive(Clone, Debug)]
pub struct PairNode {
    pub k: Kernel,
    pub sk: Kernel,
    pub u: Kernel,
    pub p: Kernel,
    pub su: Kernel,
    pub tp: Kernel,
}

#[derive(Clone, Debug)]
pub struct PairTrajectory {
    pub time: TimeGrid,
    pub nodes: Vec<PairNode>,
    pub iterate_index: usize,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub tp_method: TpMethod,
}

impl PairTrajectory {
    /// `N(k) = sup_t ‖k‖ + sup_t ‖Sk‖`.
    pub fn n_norm(&self) -> f64 {
        let a = self.nodes.iter().map(|n| n.k.l2_norm()).fold(0.0, f64::max);
        let b = self.nodes.iter().map(|n| n.sk.l2_norm()).fold(0.0, f64::max);
        a + b
    }

    pub fn sup_k(&self) -> f64 {
        self.nodes.iter().map(|n| n.k.l2_norm()).fold(0.0, f64::max)
    }
}

/// `u, p, Su` and the Leibniz `Tp` on operator matrices.
pub(crate) struct SeriesNode {
    pub u: CMat,
    pub p: CMat,
    pub su: CMat,
    pub tp: CMat,
}

pub(crate) fn series_with_s(k: &CMat, sk: &CMat, tail_tol: f64) -> Result<SeriesNode> {
    let n = k.nrows();
    let kb = k.map(|z| z.conj());
    let skb = sk.map(|z| -z.conj());
    let mut w = k.clone();
    let mut sw = sk.clone();
    let mut out = SeriesNode { u: k.clone(), p: CMat::zeros(n, n), su: sk.clone(), tp: CMat::zeros(n, n) };
    let mut small = 0;
    for j in 2..=2 * SERIES_MAX_TERMS + 1 {
        let (letter, repl) = if j % 2 == 0 { (&kb, &skb) } else { (k, sk) };
        let jf = C64::new(1.0 / j as f64, 0.0);
        let nsw = (&sw * letter + &w * repl) * jf;
        let nw = (&w * letter) * jf;
        w = nw;
        sw = nsw;
        let (sum, ssum) = if j % 2 == 1 { (&mut out.u, &mut out.su) } else { (&mut out.p, &mut out.tp) };
        *sum += &w;
        *ssum += &sw;
        if w.norm() < tail_tol * sum.norm().max(1.0) && sw.norm() < tail_tol * ssum.norm().max(1.0) {
            small += 1;
            if small == 2 {
                return Ok(out);
            }
        } else {
            small = 0;
        }
    }
    Err(Error::SeriesNonConvergence { terms: SERIES_MAX_TERMS, last_norm: w.norm() + sw.norm() })
}

/// `i p_t - D p + p D` from centered differences of `p`.
pub(crate) fn tp_centered(p: &[CMat], dt: f64, lap: &CMat) -> Vec<CMat> {
    let len = p.len();
    let i = C64::new(0.0, 1.0);
    par::map(len, |j| {
        let pt = if len == 1 {
            CMat::zeros(p[0].nrows(), p[0].ncols())
        } else if len == 2 {
            (&p[1] - &p[0]) / C64::new(dt, 0.0)
        } else if j == 0 {
            (&p[1] * C64::new(4.0, 0.0) - &p[0] * C64::new(3.0, 0.0) - &p[2]) / C64::new(2.0 * dt, 0.0)
        } else if j == len - 1 {
            (&p[j] * C64::new(3.0, 0.0) - &p[j - 1] * C64::new(4.0, 0.0) + &p[j - 2]) / C64::new(2.0 * dt, 0.0)
        } else {
            (&p[j + 1] - &p[j - 1]) / C64::new(2.0 * dt, 0.0)
        };
        pt * i - lap * &p[j] + &p[j] * lap
    })
}

/// Public form of [`tp_centered`] on kernels.
pub fn tp_centered_differences(p: &[Kernel], dt: f64) -> Vec<Kernel> {
    if p.is_empty() {
        return Vec::new();
    }
    let grid = p[0].grid().clone();
    let lap = laplacian_op(&grid);
    let ops: Vec<CMat> = p.iter().map(|k| k.op().clone()).collect();
    tp_centered(&ops, dt, &lap).into_iter().map(|m| Kernel::from_op_unchecked(&grid, m, Symmetry::General)).collect()
}

pub(crate) fn laplacian_op(grid: &Grid) -> CMat {
    grid.laplacian_matrix().map(|x| C64::new(x, 0.0))
}

/// Per-node pieces of the equation, all as operator matrices.
pub(crate) struct NodeTerms {
    /// `Su + ĝ u + u ĝᵀ`
    pub x: CMat,
    /// `Tp + [ĝ, p]`
    pub y: CMat,
    /// `X - (1+p) m - (Y + u m̄)(1+p)⁻¹ u`
    pub r: CMat,
}

pub(crate) fn node_terms(u: &CMat, p: &CMat, su: &CMat, tp: &CMat, g: &CMat, m: &CMat) -> Result<NodeTerms> {
    let n = u.nrows();
    let id = CMat::identity(n, n);
    let gh = g.transpose();
    let x = su + &gh * u + u * g;
    let y = tp + &gh * p - p * &gh;
    let sol = solve_one_plus_p_op(p, u)?;
    let mb = m.map(|z| z.conj());
    let r = &x - (&id + p) * m - (&y + u * mb) * &sol;
    Ok(NodeTerms { x, y, r })
}

/// Two-sided forward (or inverse) transform of a kernel over both arguments.
pub(crate) fn kernel_fft(grid: &Grid, a: &CMat, inverse: bool) -> CMat {
    let n = a.nrows();
    let mut m = a.clone();
    for col in m.as_mut_slice().chunks_mut(n) {
        grid.fft_nd(col, inverse);
    }
    let mut t = m.transpose();
    for col in t.as_mut_slice().chunks_mut(n) {
        grid.fft_nd(col, inverse);
    }
    t.transpose()
}

fn duhamel_op(grid: &Grid, f: &[CMat], dt: f64) -> Vec<CMat> {
    let n = grid.len();
    let mult = grid.multipliers();
    let fhat: Vec<CMat> = par::map(f.len(), |j| kernel_fft(grid, &f[j], false));
    let phase = DMatrix::from_fn(n, n, |a, b| C64::new(0.0, (mult[a] + mult[b]) * dt).exp());
    let half = C64::new(0.0, -0.5 * dt);
    let mut khat = Vec::with_capacity(f.len());
    khat.push(CMat::zeros(n, n));
    for j in 1..f.len() {
        let prev = &khat[j - 1];
        let next = prev.component_mul(&phase) + (fhat[j - 1].component_mul(&phase) + &fhat[j]) * half;
        khat.push(next);
    }
    par::map(khat.len(), |j| if j == 0 { CMat::zeros(n, n) } else { symmetrize(&kernel_fft(grid, &khat[j], true)) })
}

/// Solve `Sk = F`, `k(0) = 0` by per-mode trapezoidal Duhamel quadrature.
/// Returns `(k, Sk)` with `Sk = F` by construction.
pub fn duhamel_solve_s(f_series: &[Kernel], time: &TimeGrid) -> Result<(Vec<Kernel>, Vec<Kernel>)> {
    if f_series.len() != time.len() {
        return Err(Error::Dimension(format!("{} forcing nodes for {} time nodes", f_series.len(), time.len())));
    }
    let grid = f_series[0].grid().clone();
    for f in f_series {
        crate::grid::same_grid(&grid, f.grid())?;
    }
    let ops: Vec<CMat> = f_series.iter().map(|k| k.op().clone()).collect();
    let k = duhamel_op(&grid, &ops, time.dt);
    Ok((k.into_iter().map(|m| Kernel::from_op_unchecked(&grid, m, Symmetry::Symmetric)).collect(), f_series.to_vec()))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub tp_method: TpMethod,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions { tol: 1e-12, max_iter: 60, tp_method: TpMethod::Leibniz }
    }
}

struct Caches {
    u: Vec<CMat>,
    p: Vec<CMat>,
    su: Vec<CMat>,
    tp: Vec<CMat>,
}

fn caches(k: &[CMat], sk: &[CMat], dt: f64, lap: &CMat, method: TpMethod) -> Result<Caches> {
    let nodes = par::try_map(k.len(), |j| series_with_s(&k[j], &sk[j], SERIES_TAIL_TOL))?;
    let mut c = Caches { u: Vec::new(), p: Vec::new(), su: Vec::new(), tp: Vec::new() };
    for s in nodes {
        c.u.push(s.u);
        c.p.push(s.p);
        c.su.push(s.su);
        c.tp.push(s.tp);
    }
    if method == TpMethod::CenteredDifference {
        c.tp = tp_centered(&c.p, dt, lap);
    }
    Ok(c)
}

fn forcing(sk: &[CMat], c: &Caches, g: &[CMat], m: &[CMat]) -> Result<Vec<CMat>> {
    par::try_map(sk.len(), |j| {
        let t = node_terms(&c.u[j], &c.p[j], &c.su[j], &c.tp[j], &g[j], &m[j])?;
        Ok(symmetrize(&(&sk[j] - &t.r)))
    })
}

fn sup_norm(a: &[CMat]) -> f64 {
    a.iter().map(|m| m.norm()).fold(0.0, f64::max)
}

fn sup_diff(a: &[CMat], b: &[CMat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn assemble(grid: &Grid, time: TimeGrid, k: Vec<CMat>, sk: Vec<CMat>, c: Caches) -> Vec<PairNode> {
    let mk = |m: CMat, tag| Kernel::from_op_unchecked(grid, m, tag);
    let mut nodes = Vec::with_capacity(time.len());
    let mut it = k.into_iter().zip(sk).zip(c.u).zip(c.p).zip(c.su).zip(c.tp);
    for _ in 0..time.len() {
        let (((((k, sk), u), p), su), tp) = it.next().expect("node count");
        nodes.push(PairNode {
            k: mk(k, Symmetry::Symmetric),
            sk: mk(sk, Symmetry::Symmetric),
            u: mk(u, Symmetry::Symmetric),
            p: mk(p, Symmetry::Hermitian),
            su: mk(su, Symmetry::Symmetric),
            tp: mk(tp, Symmetry::General),
        });
    }
    nodes
}

/// Build a trajectory from given `(k, Sk)` nodes, filling the caches.
pub fn trajectory_from_kernels(
    k: &[Kernel],
    sk: &[Kernel],
    time: TimeGrid,
    tp_method: TpMethod,
) -> Result<PairTrajectory> {
    let grid = k[0].grid().clone();
    let lap = laplacian_op(&grid);
    let kk: Vec<CMat> = k.iter().map(|x| x.op().clone()).collect();
    let ss: Vec<CMat> = sk.iter().map(|x| x.op().clone()).collect();
    let c = caches(&kk, &ss, time.dt, &lap, tp_method)?;
    Ok(PairTrajectory {
        time,
        nodes: assemble(&grid, time, kk, ss, c),
        iterate_index: 0,
        residual_history: Vec::new(),
        converged: false,
        tp_method,
    })
}

/// Forcing `F(k, Sk)` at every node of a trajectory.
pub fn rhs_f(traj: &PairTrajectory, gm: &GMPair) -> Result<Vec<Kernel>> {
    if traj.nodes.len() != gm.m.len() {
        return Err(Error::Consistency("trajectory and g/m series differ in length".into()));
    }
    let grid = traj.nodes[0].k.grid().clone();
    par::try_map(traj.nodes.len(), |j| {
        let n = &traj.nodes[j];
        let t = node_terms(n.u.op(), n.p.op(), n.su.op(), n.tp.op(), gm.g_pot[j].op(), gm.m[j].op())?;
        Ok(Kernel::from_op_unchecked(&grid, symmetrize(&(n.sk.op() - &t.r)), Symmetry::Symmetric))
    })
}

/// Per-node L² norm of `LHS - RHS` of the kernel equation.
pub fn residual_newnls(traj: &PairTrajectory, gm: &GMPair) -> Result<Vec<f64>> {
    par::try_map(traj.nodes.len(), |j| {
        let n = &traj.nodes[j];
        let t = node_terms(n.u.op(), n.p.op(), n.su.op(), n.tp.op(), gm.g_pot[j].op(), gm.m[j].op())?;
        Ok(t.r.norm())
    })
}

/// Picard iteration `k^{n+1} = S⁻¹ F(kⁿ, Skⁿ)` starting from `k⁰ = S⁻¹ m`.
pub fn picard_solve(h: &HartreeTrajectory, v: &Field, opts: &PicardOptions) -> Result<(PairTrajectory, GMPair)> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::Config("picard tol must be positive and max_iter at least 1".into()));
    }
    let gm = build_g_m(h, v)?;
    let traj = picard_with(&gm, h.time, opts, None)?;
    Ok((traj, gm))
}

/// Observer called with every Picard iterate.
pub type IterateObserver<'a> = &'a mut dyn FnMut(usize, &PairTrajectory);

/// Picard iteration on precomputed `g_pot, m`. The optional observer sees
/// each iterate with its caches filled.
pub fn picard_with(
    gm: &GMPair,
    time: TimeGrid,
    opts: &PicardOptions,
    mut observe: Option<IterateObserver<'_>>,
) -> Result<PairTrajectory> {
    let grid = gm.m[0].grid().clone();
    let lap = laplacian_op(&grid);
    let g: Vec<CMat> = gm.g_pot.iter().map(|k| k.op().clone()).collect();
    let m: Vec<CMat> = gm.m.iter().map(|k| k.op().clone()).collect();
    let mut sk = m.clone();
    let mut k = duhamel_op(&grid, &sk, time.dt);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iter = 0;
    while iter < opts.max_iter {
        iter += 1;
        let c = caches(&k, &sk, time.dt, &lap, opts.tp_method)?;
        let f = forcing(&sk, &c, &g, &m)?;
        if f.iter().any(|x| x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
            return Err(Error::Divergence("picard"));
        }
        let knew = duhamel_op(&grid, &f, time.dt);
        let diff = sup_diff(&knew, &k) + sup_diff(&f, &sk);
        let nk = sup_norm(&k) + sup_norm(&sk);
        history.push(diff);
        k = knew;
        sk = f;
        if !diff.is_finite() {
            return Err(Error::Divergence("picard"));
        }
        if let Some(obs) = observe.as_mut() {
            let c = caches(&k, &sk, time.dt, &lap, opts.tp_method)?;
            let t = PairTrajectory {
                time,
                nodes: assemble(&grid, time, k.clone(), sk.clone(), c),
                iterate_index: iter,
                residual_history: history.clone(),
                converged: false,
                tp_method: opts.tp_method,
            };
            obs(iter, &t);
        }
        if diff < opts.tol * nk.max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged && history.len() >= 2 {
        let last = history[history.len() - 1];
        let previous = history[history.len() - 2];
        if last >= previous {
            return Err(Error::NonContraction { previous, last });
        }
    }
    let c = caches(&k, &sk, time.dt, &lap, opts.tp_method)?;
    Ok(PairTrajectory {
        time,
        nodes: assemble(&grid, time, k, sk, c),
        iterate_index: iter,
        residual_history: history,
        converged,
        tp_method: opts.tp_method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, PotentialSpec};
    use crate::hartree::hartree_evolve;
    use crate::kernel::sh_ch_op;
    use crate::sampling::{random_smooth_field, random_symmetric};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn leibniz_series_matches_plain_series() {
        let (g, _) = build_domain(1, 8, 4.0, &PotentialSpec::zero()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let k = random_symmetric(&g, &mut rng, 0.6);
        let sk = random_symmetric(&g, &mut rng, 1.0);
        let s = series_with_s(k.op(), sk.op(), 1e-16).unwrap();
        let (u, p) = sh_ch_op(k.op(), 1e-16).unwrap();
        assert!((&s.u - u).norm() < 1e-14);
        assert!((&s.p - p).norm() < 1e-14);
        // S(k k̄) = (Sk) k̄ - k conj(Sk) at leading order; the remainder is cubic
        let lead = (sk.op() * k.op().map(|z| z.conj()) - k.op() * sk.op().map(|z| z.conj())) * C64::new(0.5, 0.0);
        assert!((&s.tp - lead).norm() < 0.1);
    }

    #[test]
    fn leibniz_matches_directional_derivative() {
        // the Leibniz rule is algebraic: feeding Sk = i k_t gives i d/dt of
        // the series, which a centered difference along k_t reproduces
        let (g, _) = build_domain(1, 6, 4.0, &PotentialSpec::zero()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let k = random_symmetric(&g, &mut rng, 0.7);
        let kd = random_symmetric(&g, &mut rng, 1.0);
        let i = C64::new(0.0, 1.0);
        let sk = kd.op() * i;
        let s = series_with_s(k.op(), &sk, 1e-16).unwrap();
        let eps = 1e-5;
        let (up, pp) = sh_ch_op(&(k.op() + kd.op() * C64::new(eps, 0.0)), 1e-16).unwrap();
        let (um, pm) = sh_ch_op(&(k.op() - kd.op() * C64::new(eps, 0.0)), 1e-16).unwrap();
        let du = (up - um) * C64::new(0.5 / eps, 0.0) * i;
        let dp = (pp - pm) * C64::new(0.5 / eps, 0.0) * i;
        assert!((&s.su - du).norm() < 1e-8);
        assert!((&s.tp - dp).norm() < 1e-8);
    }

    #[test]
    fn duhamel_zero_forcing() {
        let (g, _) = build_domain(1, 8, 4.0, &PotentialSpec::zero()).unwrap();
        let time = TimeGrid::new(0.01, 10).unwrap();
        let f = vec![Kernel::zeros(&g); 11];
        let (k, sk) = duhamel_solve_s(&f, &time).unwrap();
        assert!(k.iter().all(|x| x.l2_norm() == 0.0));
        assert!(sk.iter().all(|x| x.l2_norm() == 0.0));
    }

    #[test]
    fn duhamel_zero_mode_forcing() {
        let (g, _) = build_domain(1, 8, 4.0, &PotentialSpec::zero()).unwrap();
        let c = C64::new(0.3, -0.7);
        let f = Kernel::from_fn(&g, Symmetry::Symmetric, |_, _| c).unwrap();
        let time = TimeGrid::new(0.01, 50).unwrap();
        let (k, _) = duhamel_solve_s(&vec![f.clone(); 51], &time).unwrap();
        for j in [0, 1, 17, 50] {
            let expect = f.scale(C64::new(0.0, -time.t(j)));
            assert!(k[j].max_abs_diff(&expect) < 1e-12);
        }
    }

    #[test]
    fn g_m_structure() {
        let (g, v) = build_domain(1, 8, 3.0, &PotentialSpec::gaussian(0.2, 0.5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let phi = random_smooth_field(&g, &mut rng, 2);
        let (gp, m, _) = build_g_m_node(&phi, &v, &v.fourier()).unwrap();
        assert_eq!(gp.op(), &gp.op().adjoint());
        assert_eq!(m.op(), &m.op().transpose());
    }

    #[test]
    fn g_m_constant_condensate() {
        let (g, v) = build_domain(1, 8, 1.0, &PotentialSpec::gaussian(0.2, 0.1)).unwrap();
        let c = C64::new(0.6, 0.8);
        let phi = Field::new(&g, vec![c; 8]).unwrap();
        let (gp, m, _) = build_g_m_node(&phi, &v, &v.fourier()).unwrap();
        let iv = crate::grid::integral(&v);
        for x in 0..8 {
            for y in 0..8 {
                let vxy = v.values[g.difference_index(x, y)];
                assert!((m.value(x, y) - vxy * c.conj() * c.conj()).norm() < 1e-14);
                let delta = if x == y { 1.0 / g.cell_volume() } else { 0.0 };
                let expect = -vxy * c.norm_sqr() - iv * c.norm_sqr() * delta;
                assert!((gp.value(x, y) - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_potential_converges_immediately() {
        let (g, v) = build_domain(1, 8, 6.0, &PotentialSpec::zero()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let phi0 = random_smooth_field(&g, &mut rng, 2);
        let h = hartree_evolve(&phi0, &v, 1e-2, 20).unwrap();
        let (traj, _) = picard_solve(&h, &v, &PicardOptions::default()).unwrap();
        assert!(traj.converged);
        assert_eq!(traj.iterate_index, 1);
        assert!(traj.nodes.iter().all(|n| n.k.l2_norm() == 0.0));
    }

    #[test]
    fn k_zero_forcing_is_m() {
        let (g, v) = build_domain(1, 8, 6.0, &PotentialSpec::gaussian(0.1, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let phi0 = random_smooth_field(&g, &mut rng, 2);
        let h = hartree_evolve(&phi0, &v, 1e-2, 10).unwrap();
        let gm = build_g_m(&h, &v).unwrap();
        let zeros = vec![Kernel::zeros(&g); 11];
        let traj = trajectory_from_kernels(&zeros, &zeros, h.time, TpMethod::CenteredDifference).unwrap();
        let f = rhs_f(&traj, &gm).unwrap();
        let res = residual_newnls(&traj, &gm).unwrap();
        for j in 0..11 {
            assert!(f[j].max_abs_diff(&gm.m[j]) < 1e-14);
            assert!((res[j] - gm.m[j].l2_norm()).abs() < 1e-14);
        }
    }
}
