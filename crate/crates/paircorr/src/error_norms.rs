//! Error functionals `g(t) = ‖e^B V e^{-B} Ω‖` and
//! `f(t) = ‖e^B [A, V] e^{-B} Ω‖` from explicit Fock-slot kernels.
//!
//! Conjugation by `e^B` sends `a_x` to `∫ ch(y,x) a_y + sh̄(y,x) a*_y` and
//! `a*_x` to `∫ sh(y,x) a_y + ch̄(y,x) a*_y`. Applying the conjugated
//! monomials to the vacuum leaves contractions built from
//!
//! ```text
//! R = sh sh̄,   P = ch̄ sh̄,   Q = sh ch̄,   Sb = sh̄,   Cb = ch̄ = δ + p̄
//! ```
//!
//! integrated against `v(x₀ - y₀)`. Each raw term below is the coefficient
//! `T(x₁..x_n)` of `a*_{x₁}..a*_{x_n} Ω`; a slot payload is
//! `ψ_n = √(n!)·Sym(Σ c_term T_term)` with weights `c_term` fitted once
//! against the Fock oracle (see [`crate::fock::calibrate`]).
//!
//! All tensors hold continuum values (operator matrices divided by the
//! cell volume `w`), flattened row-major with `x₁` slowest.

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::grid::{same_grid, Field, Grid, C64};
use crate::kernel::{CMat, Kernel, Symmetry};
use crate::pair::PairNode;
use crate::reduction::cumulative_trapezoid;

/// Largest grid (points in total) for which rank-4 payloads are assembled.
pub const SLOT4_MAX_POINTS: usize = 16;

/// Raw terms of `e^B V e^{-B} Ω`, in the order of [`G_WEIGHTS`].
pub const G_TERMS: [&str; 8] = ["six2", "six1", "three", "four1", "four2", "four2x", "one", "two"];
/// Raw terms of `e^B [A, V] e^{-B} Ω`, in the order of [`F_WEIGHTS`].
pub const F_TERMS: [&str; 8] = ["av_a", "av_b", "av_c", "mir_a", "mir_b", "mir_c", "av_3", "mir_3"];

/// Weights of the `g` terms fitted on the two-site lattice.
pub const G_WEIGHTS: [f64; 8] = [0.5, 0.5, 0.5, 0.5, 1.0, 1.0, 0.5, 0.5];
/// Weights of the `f` terms fitted on the two-site lattice.
pub const F_WEIGHTS: [f64; 8] = [1.0; 8];

/// Checked-in calibration record.
pub const CALIBRATION_FILE: &str = include_str!("../data/error_constants.calib");

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    G,
    F,
}

impl Family {
    pub fn terms(self) -> &'static [&'static str; 8] {
        match self {
            Family::G => &G_TERMS,
            Family::F => &F_TERMS,
        }
    }

    pub fn weights(self) -> [f64; 8] {
        match self {
            Family::G => G_WEIGHTS,
            Family::F => F_WEIGHTS,
        }
    }

    pub fn slots(self) -> &'static [usize] {
        match self {
            Family::G => &[0, 2, 4],
            Family::F => &[1, 3],
        }
    }
}

/// Rank-`slot` tensor on a grid, flattened row-major.
#[derive(Clone, Debug)]
pub struct SlotTensor {
    pub slot: usize,
    pub points: usize,
    pub data: Vec<C64>,
}

impl SlotTensor {
    pub fn zeros(slot: usize, points: usize) -> Self {
        SlotTensor { slot, points, data: vec![C64::new(0.0, 0.0); points.pow(slot as u32)] }
    }

    pub fn get(&self, idx: &[usize]) -> C64 {
        self.data[flat(idx, self.points)]
    }

    fn axpy(&mut self, a: f64, other: &SlotTensor) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += y * a;
        }
    }

    /// Average over all permutations of the arguments.
    pub fn symmetrized(&self) -> SlotTensor {
        if self.slot < 2 {
            return self.clone();
        }
        let perms: Vec<Vec<usize>> = (0..self.slot).permutations(self.slot).collect();
        let scale = 1.0 / perms.len() as f64;
        let mut out = SlotTensor::zeros(self.slot, self.points);
        let mut idx = vec![0; self.slot];
        let mut src = vec![0; self.slot];
        for (i, z) in out.data.iter_mut().enumerate() {
            unflat(i, self.points, &mut idx);
            let mut acc = C64::new(0.0, 0.0);
            for p in &perms {
                for (s, &q) in src.iter_mut().zip(p) {
                    *s = idx[q];
                }
                acc += self.data[flat(&src, self.points)];
            }
            *z = acc * scale;
        }
        out
    }

    /// `(∫|T|²)^{1/2}` with cell volume `w`.
    pub fn l2_norm(&self, w: f64) -> f64 {
        (w.powi(self.slot as i32) * self.data.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
    }
}

fn flat(idx: &[usize], m: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * m + i)
}

fn unflat(mut i: usize, m: usize, out: &mut [usize]) {
    for slot in out.iter_mut().rev() {
        *slot = i % m;
        i /= m;
    }
}

/// One Fock slot of `e^B V e^{-B} Ω` or `e^B [A,V] e^{-B} Ω`.
#[derive(Clone, Debug)]
pub struct FockSlotPayload {
    pub slot: usize,
    /// The symmetric `n`-particle wave function `ψ_n`.
    pub payload: SlotTensor,
    /// `(term, weight)` pairs that were combined into this slot.
    pub combination_constants: Vec<(&'static str, f64)>,
}

impl FockSlotPayload {
    pub fn norm(&self, w: f64) -> f64 {
        self.payload.l2_norm(w)
    }

    pub fn as_scalar(&self) -> Option<C64> {
        (self.slot == 0).then(|| self.payload.data[0])
    }

    pub fn as_field(&self, grid: &Grid) -> Option<Field> {
        (self.slot == 1).then(|| Field { values: self.payload.data.clone(), grid: grid.clone() })
    }

    pub fn as_kernel(&self, grid: &Grid) -> Option<Kernel> {
        if self.slot != 2 {
            return None;
        }
        let n = grid.len();
        let w = grid.cell_volume();
        let op = CMat::from_fn(n, n, |i, j| self.payload.data[i * n + j] * w);
        Some(Kernel::from_op_unchecked(grid, op, Symmetry::Symmetric))
    }
}

/// Where an external factor `E(x_i, ·)` is anchored.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Anchor {
    X0,
    Y0,
}

/// `T(x₁..x_n) = w² Σ_{x₀,y₀} s(x₀,y₀) Π_i E_i(x_i, anchor_i)`.
fn contract(s: &CMat, ext: &[(&CMat, Anchor)], w: f64) -> SlotTensor {
    let m = s.nrows();
    let n = ext.len();
    let a_pos: Vec<usize> = (0..n).filter(|&i| ext[i].1 == Anchor::X0).collect();
    let b_pos: Vec<usize> = (0..n).filter(|&i| ext[i].1 == Anchor::Y0).collect();
    // G(ξ, z) = Π_{i in group} E_i(ξ_i, z), rows indexed by the group's tuple
    let group = |pos: &[usize]| -> CMat {
        let rows = m.pow(pos.len() as u32);
        let mut idx = vec![0; pos.len()];
        CMat::from_fn(rows, m, |r, z| {
            unflat(r, m, &mut idx);
            pos.iter().zip(&idx).fold(C64::new(1.0, 0.0), |acc, (&i, &xi)| acc * ext[i].0[(xi, z)])
        })
    };
    let ga = group(&a_pos);
    let gb = group(&b_pos);
    let prod = &ga * s * gb.transpose() * C64::new(w * w, 0.0);
    let mut out = SlotTensor::zeros(n, m);
    let mut ia = vec![0; a_pos.len()];
    let mut ib = vec![0; b_pos.len()];
    let mut full = vec![0; n];
    for r in 0..prod.nrows() {
        unflat(r, m, &mut ia);
        for (&p, &x) in a_pos.iter().zip(&ia) {
            full[p] = x;
        }
        for c in 0..prod.ncols() {
            unflat(c, m, &mut ib);
            for (&p, &x) in b_pos.iter().zip(&ib) {
                full[p] = x;
            }
            out.data[flat(&full, m)] = prod[(r, c)];
        }
    }
    out
}

/// Continuum-valued building blocks at one time node.
pub struct Blocks {
    pub w: f64,
    pub v: CMat,
    pub r: CMat,
    pub p: CMat,
    pub q: CMat,
    pub sb: CMat,
    pub cb: CMat,
    /// The `p̄` part of `Cb`, for the `δ`/`p` split.
    pub pb: CMat,
    /// The `δ_h` part of `Cb`.
    pub delta: CMat,
}

impl Blocks {
    /// From the operator matrices of `sh(k)` and `ch(k) - 1`.
    pub fn new(u: &Kernel, p: &Kernel, v: &Field) -> Result<Self> {
        same_grid(u.grid(), &v.grid)?;
        same_grid(u.grid(), p.grid())?;
        let grid = u.grid();
        let n = grid.len();
        let w = grid.cell_volume();
        let inv = C64::new(1.0 / w, 0.0);
        let sh = u.op();
        let shb = sh.map(|z| z.conj());
        let chb = CMat::identity(n, n) + p.op().map(|z| z.conj());
        Ok(Blocks {
            w,
            v: CMat::from_fn(n, n, |x, y| C64::new(v.values[grid.difference_index(x, y)].re, 0.0)),
            r: sh * &shb * inv,
            p: &chb * &shb * inv,
            q: sh * &chb * inv,
            sb: &shb * inv,
            cb: &chb * inv,
            pb: p.op().map(|z| z.conj()) * inv,
            delta: CMat::identity(n, n) * inv,
        })
    }
}

/// A term before weighting and symmetrization.
#[derive(Clone, Debug)]
pub struct RawTerm {
    pub name: &'static str,
    pub tensor: SlotTensor,
}

fn diag_rows(d: &CMat) -> CMat {
    // s(x0, y0) = d(x0, x0)
    let n = d.nrows();
    CMat::from_fn(n, n, |x, _| d[(x, x)])
}

fn diag_cols(d: &CMat) -> CMat {
    // s(x0, y0) = d(y0, y0)
    let n = d.nrows();
    CMat::from_fn(n, n, |_, y| d[(y, y)])
}

fn field_cols(f: &Field, conj: bool) -> CMat {
    let n = f.len();
    CMat::from_fn(n, n, |_, y| if conj { f.values[y].conj() } else { f.values[y] })
}

/// `g` raw terms with a caller-chosen matrix standing in for each `Cb` factor
/// (in order of appearance), so the `δ`/`p̄` split can be evaluated piecewise.
fn g_terms_with(b: &Blocks, cbs: &[&CMat; 5]) -> Vec<RawTerm> {
    let v = &b.v;
    let w = b.w;
    use Anchor::*;
    let t = |name, s: CMat, ext: &[(&CMat, Anchor)]| RawTerm { name, tensor: contract(&s, ext, w) };
    vec![
        t("six2", v.component_mul(&diag_rows(&b.r)).component_mul(&diag_cols(&b.r)), &[]),
        t("six1", v.component_mul(&b.r.transpose()).component_mul(&b.r), &[]),
        t("three", v.component_mul(&b.p.transpose()).component_mul(&b.q), &[]),
        t("four1", v.component_mul(&b.q), &[(&b.sb, Y0), (&b.sb, X0)]),
        t("four2", v.component_mul(&diag_rows(&b.r)), &[(cbs[0], Y0), (&b.sb, Y0)]),
        t("four2x", v.component_mul(&b.r), &[(cbs[1], Y0), (&b.sb, X0)]),
        t("one", v.component_mul(&b.p.transpose()), &[(cbs[2], X0), (cbs[2], Y0)]),
        t("two", v.clone(), &[(cbs[3], X0), (cbs[4], Y0), (&b.sb, Y0), (&b.sb, X0)]),
    ]
}

/// Raw terms of `e^B V e^{-B} Ω`.
pub fn g_raw_terms(b: &Blocks) -> Vec<RawTerm> {
    g_terms_with(b, &[&b.cb; 5])
}

/// Raw terms of `e^B [A, V] e^{-B} Ω`.
pub fn f_raw_terms(b: &Blocks, phi: &Field) -> Vec<RawTerm> {
    let v = &b.v;
    let w = b.w;
    let pb = field_cols(phi, true);
    let pf = field_cols(phi, false);
    use Anchor::*;
    let t = |name, s: CMat, ext: &[(&CMat, Anchor)]| RawTerm { name, tensor: contract(&s, ext, w) };
    // a*_{x0} a_{x0} a_{y0} with φ̄(y0), and its mirror a*_{x0} a*_{y0} a_{x0} with φ(y0)
    let vb = v.component_mul(&pb);
    let vf = v.component_mul(&pf);
    vec![
        t("av_a", vb.component_mul(&b.p), &[(&b.cb, X0)]),
        t("av_b", vb.component_mul(&diag_rows(&b.r)), &[(&b.sb, Y0)]),
        t("av_c", vb.component_mul(&b.r), &[(&b.sb, X0)]),
        t("mir_a", vf.component_mul(&b.r.transpose()), &[(&b.cb, X0)]),
        t("mir_b", vf.component_mul(&b.q), &[(&b.sb, X0)]),
        t("mir_c", vf.component_mul(&diag_rows(&b.r)), &[(&b.cb, Y0)]),
        t("av_3", vb, &[(&b.cb, X0), (&b.sb, X0), (&b.sb, Y0)]),
        t("mir_3", vf, &[(&b.cb, X0), (&b.cb, Y0), (&b.sb, X0)]),
    ]
}

/// The rank-4 `two` term split as `ψ_δδ + ψ_δp + ψ_pδ + ψ_pp` over its two
/// `Cb = δ + p̄` factors.
pub fn two_split(b: &Blocks) -> [(&'static str, SlotTensor); 4] {
    let piece = |c1: &CMat, c2: &CMat| {
        let mut cbs = [&b.cb; 5];
        cbs[3] = c1;
        cbs[4] = c2;
        g_terms_with(b, &cbs).pop().expect("two is last").tensor
    };
    [
        ("delta_delta", piece(&b.delta, &b.delta)),
        ("delta_p", piece(&b.delta, &b.pb)),
        ("p_delta", piece(&b.pb, &b.delta)),
        ("p_p", piece(&b.pb, &b.pb)),
    ]
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Combine raw terms into symmetric slot payloads `ψ_n = √(n!)·Sym(Σ c T)`.
pub fn assemble(raw: &[RawTerm], names: &[&'static str], weights: &[f64]) -> Result<Vec<FockSlotPayload>> {
    let mut slots: Vec<FockSlotPayload> = Vec::new();
    for term in raw {
        let i = names
            .iter()
            .position(|n| *n == term.name)
            .ok_or_else(|| Error::Consistency(format!("no weight for term {}", term.name)))?;
        let slot = term.tensor.slot;
        let entry = match slots.iter_mut().position(|s| s.slot == slot) {
            Some(j) => &mut slots[j],
            None => {
                slots.push(FockSlotPayload {
                    slot,
                    payload: SlotTensor::zeros(slot, term.tensor.points),
                    combination_constants: Vec::new(),
                });
                slots.last_mut().expect("just pushed")
            }
        };
        entry.payload.axpy(weights[i], &term.tensor);
        entry.combination_constants.push((term.name, weights[i]));
    }
    for s in &mut slots {
        let mut sym = s.payload.symmetrized();
        let c = factorial(s.slot).sqrt();
        sym.data.iter_mut().for_each(|z| *z *= c);
        s.payload = sym;
    }
    slots.sort_by_key(|s| s.slot);
    Ok(slots)
}

fn total_norm(slots: &[FockSlotPayload], w: f64) -> f64 {
    slots.iter().map(|s| s.norm(w).powi(2)).sum::<f64>().sqrt()
}

fn guard_slot4(grid: &Grid) -> Result<()> {
    if grid.len() > SLOT4_MAX_POINTS {
        return Err(Error::Config(format!(
            "rank-4 payloads need at most {SLOT4_MAX_POINTS} grid points, got {}",
            grid.len()
        )));
    }
    Ok(())
}

/// `g(t)` and its slot payloads with the given weights.
pub fn g_error_with(node: &PairNode, v: &Field, weights: &[f64; 8]) -> Result<(f64, Vec<FockSlotPayload>)> {
    guard_slot4(node.u.grid())?;
    let b = Blocks::new(&node.u, &node.p, v)?;
    let slots = assemble(&g_raw_terms(&b), &G_TERMS, weights)?;
    Ok((total_norm(&slots, b.w), slots))
}

/// `g(t) = ‖e^B V e^{-B} Ω‖` with the calibrated weights.
pub fn g_error(node: &PairNode, phi: &Field, v: &Field) -> Result<(f64, Vec<FockSlotPayload>)> {
    same_grid(&phi.grid, &v.grid)?;
    g_error_with(node, v, &G_WEIGHTS)
}

/// `f(t)` and its slot payloads with the given weights.
pub fn f_error_with(
    node: &PairNode,
    phi: &Field,
    v: &Field,
    weights: &[f64; 8],
) -> Result<(f64, Vec<FockSlotPayload>)> {
    same_grid(&phi.grid, &v.grid)?;
    let b = Blocks::new(&node.u, &node.p, v)?;
    let slots = assemble(&f_raw_terms(&b, phi), &F_TERMS, weights)?;
    Ok((total_norm(&slots, b.w), slots))
}

/// `f(t) = ‖e^B [A, V] e^{-B} Ω‖` with the calibrated weights.
pub fn f_error(node: &PairNode, phi: &Field, v: &Field) -> Result<(f64, Vec<FockSlotPayload>)> {
    f_error_with(node, phi, v, &F_WEIGHTS)
}

/// `(∫|sh(k)(x,x)|² dx)^{1/2}`, the diagonal that a continuum bound must
/// control separately.
pub fn diagonal_collapse_norm(u: &Kernel) -> f64 {
    let w = u.grid().cell_volume();
    // values are op/w, and the diagonal integral carries one factor w
    (u.op().diagonal().iter().map(|z| z.norm_sqr()).sum::<f64>() / w).sqrt()
}

/// `∫₀ᵗ f/√N + ∫₀ᵗ g/N` by the trapezoid rule.
pub fn error_bound(f: &[f64], g: &[f64], dt: f64, n: f64) -> Result<Vec<f64>> {
    if !(n >= 1.0) {
        return Err(Error::Config(format!("particle number must be at least 1, got {n}")));
    }
    if f.len() != g.len() {
        return Err(Error::Dimension("f and g differ in length".into()));
    }
    let fi = cumulative_trapezoid(f, dt);
    let gi = cumulative_trapezoid(g, dt);
    Ok(fi.iter().zip(&gi).map(|(a, b)| a / n.sqrt() + b / n).collect())
}

/// Parsed line of the calibration record.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationEntry {
    pub name: String,
    pub value: f64,
    pub lattice: String,
    pub residual: f64,
}

/// Parse `name value lattice residual` lines; `#` starts a comment.
pub fn parse_calibration(text: &str) -> Result<Vec<CalibrationEntry>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Config(format!("calibration line {}: expected `name value lattice residual`", no + 1));
        if parts.len() != 4 {
            return Err(bad());
        }
        out.push(CalibrationEntry {
            name: parts[0].to_string(),
            value: parts[1].parse().map_err(|_| bad())?,
            lattice: parts[2].to_string(),
            residual: parts[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Render entries in the calibration file format.
pub fn format_calibration(entries: &[CalibrationEntry]) -> String {
    let mut s = String::from("# name value lattice residual\n");
    for e in entries {
        s.push_str(&format!("{} {:.17e} {} {:.3e}\n", e.name, e.value, e.lattice, e.residual));
    }
    s
}

/// The weights compiled into the crate, as calibration entries without
/// lattice or residual information.
pub fn compiled_constants() -> Vec<(String, f64)> {
    G_TERMS
        .iter()
        .zip(G_WEIGHTS)
        .map(|(n, w)| (format!("g.{n}"), w))
        .chain(F_TERMS.iter().zip(F_WEIGHTS).map(|(n, w)| (format!("f.{n}"), w)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, PotentialSpec};
    use crate::kernel::sh_ch_series;
    use crate::sampling::{random_smooth_field, random_symmetric};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node(k: &Kernel) -> PairNode {
        let (u, p) = sh_ch_series(k, 1e-15).unwrap();
        let z = Kernel::zeros(k.grid());
        PairNode { k: k.clone(), sk: z.clone(), u, p, su: z.clone(), tp: z }
    }

    #[test]
    fn zero_kernel_gives_zero_errors() {
        let (g, v) = build_domain(1, 4, 3.0, &PotentialSpec::gaussian(0.2, 0.5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = random_smooth_field(&g, &mut rng, 1);
        let nd = node(&Kernel::zeros(&g));
        let (gt, gs) = g_error(&nd, &phi, &v).unwrap();
        let (ft, fs) = f_error(&nd, &phi, &v).unwrap();
        assert_eq!(gt, 0.0);
        assert_eq!(ft, 0.0);
        assert!(gs.iter().chain(&fs).all(|s| s.norm(g.cell_volume()) == 0.0));
    }

    #[test]
    fn slot_populations() {
        let (g, v) = build_domain(1, 4, 3.0, &PotentialSpec::gaussian(0.2, 0.5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = random_smooth_field(&g, &mut rng, 1);
        let nd = node(&random_symmetric(&g, &mut rng, 0.3));
        let (_, gs) = g_error(&nd, &phi, &v).unwrap();
        let (_, fs) = f_error(&nd, &phi, &v).unwrap();
        assert_eq!(gs.iter().map(|s| s.slot).collect::<Vec<_>>(), vec![0, 2, 4]);
        assert_eq!(fs.iter().map(|s| s.slot).collect::<Vec<_>>(), vec![1, 3]);
    }

    #[test]
    fn two_split_matches_direct() {
        let (g, v) = build_domain(1, 4, 3.0, &PotentialSpec::gaussian(0.2, 0.5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nd = node(&random_symmetric(&g, &mut rng, 0.6));
        let b = Blocks::new(&nd.u, &nd.p, &v).unwrap();
        let direct = g_raw_terms(&b).pop().unwrap().tensor;
        let mut sum = SlotTensor::zeros(4, 4);
        for (_, t) in two_split(&b) {
            sum.axpy(1.0, &t);
        }
        let scale = direct.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let dev = sum.data.iter().zip(&direct.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(dev < 1e-10 * scale.max(1.0), "{dev}");
    }

    #[test]
    fn contract_matches_direct_sum() {
        let (g, v) = build_domain(1, 3, 2.0, &PotentialSpec::gaussian(0.4, 0.5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nd = node(&random_symmetric(&g, &mut rng, 0.5));
        let b = Blocks::new(&nd.u, &nd.p, &v).unwrap();
        let raw = g_raw_terms(&b);
        let four1 = &raw[3].tensor;
        let w = g.cell_volume();
        for x1 in 0..3 {
            for x2 in 0..3 {
                let mut s = C64::new(0.0, 0.0);
                for x0 in 0..3 {
                    for y0 in 0..3 {
                        s += b.v[(x0, y0)] * b.q[(x0, y0)] * b.sb[(x1, y0)] * b.sb[(x2, x0)];
                    }
                }
                assert!((four1.get(&[x1, x2]) - s * w * w).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn symmetrization_is_idempotent() {
        let mut t = SlotTensor::zeros(3, 3);
        for (i, z) in t.data.iter_mut().enumerate() {
            *z = C64::new(i as f64, (i * i) as f64);
        }
        let s = t.symmetrized();
        let s2 = s.symmetrized();
        assert!(s.data.iter().zip(&s2.data).all(|(a, b)| (a - b).norm() < 1e-12));
        assert!((s.get(&[0, 1, 2]) - s.get(&[2, 0, 1])).norm() < 1e-12);
    }

    #[test]
    fn error_bound_cases() {
        assert!(error_bound(&[0.0; 5], &[0.0; 5], 0.1, 4.0).unwrap().iter().all(|&x| x == 0.0));
        let b = error_bound(&[2.0; 5], &[3.0; 5], 0.25, 4.0).unwrap();
        for (j, x) in b.iter().enumerate() {
            let t = 0.25 * j as f64;
            assert!((x - (2.0 * t / 2.0 + 3.0 * t / 4.0)).abs() < 1e-14);
        }
        assert!(error_bound(&[1.0; 2], &[1.0; 2], 0.1, 0.5).is_err());
        let b1 = error_bound(&[1.0; 3], &[1.0; 3], 0.1, 1.0).unwrap();
        let b4 = error_bound(&[1.0; 3], &[1.0; 3], 0.1, 4.0).unwrap();
        assert!(b4[2] < b1[2]);
    }

    #[test]
    fn slot4_guard() {
        let (g, v) = build_domain(1, 32, 3.0, &PotentialSpec::gaussian(0.2, 0.5)).unwrap();
        let phi = Field::from_fn(&g, |_| C64::new(1.0, 0.0)).normalized().unwrap();
        assert!(matches!(g_error(&node(&Kernel::zeros(&g)), &phi, &v), Err(Error::Config(_))));
    }

    #[test]
    fn calibration_file_matches_compiled_weights() {
        let entries = parse_calibration(CALIBRATION_FILE).unwrap();
        let compiled = compiled_constants();
        assert_eq!(entries.len(), compiled.len());
        for (e, (name, value)) in entries.iter().zip(&compiled) {
            assert_eq!(&e.name, name);
            assert_eq!(e.value, *value);
        }
    }
}
