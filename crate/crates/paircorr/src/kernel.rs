//! Two-point kernels on a grid.
//!
//! A kernel `K(x, y)` is stored as its operator matrix `h^dim · K`, so
//! composition `(A∘B)(x,y) = h^dim Σ_z A(x,z) B(z,y)` is a plain matrix
//! product and the discrete delta `δ_h = 1/h^dim` is the identity.
//! Kernel L² norms `(∫∫|K|²)^{1/2}` and traces `∫K(x,x)` are the
//! Frobenius norm and trace of the operator matrix.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{same_grid, Field, Grid, C64};

pub type CMat = DMatrix<C64>;

/// Maximum relative asymmetry tolerated before a symmetry tag is enforced.
pub const SYMMETRY_DRIFT_TOL: f64 = 1e-13;

/// Default hard cap on sh/ch series terms.
pub const SERIES_MAX_TERMS: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Symmetry {
    Symmetric,
    Hermitian,
    General,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Involution {
    Transpose,
    Conj,
    Adjoint,
}

#[derive(Clone, Debug)]
pub struct Kernel {
    op: CMat,
    grid: Grid,
    tag: Symmetry,
}

fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Relative asymmetry of `m` against `m^T` (or `m^†`).
fn drift(m: &CMat, hermitian: bool) -> f64 {
    let n = m.nrows();
    let mut d: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            let other = if hermitian { m[(j, i)].conj() } else { m[(j, i)] };
            d = d.max((m[(i, j)] - other).norm());
        }
        if hermitian {
            d = d.max(m[(i, i)].im.abs());
        }
    }
    d / max_abs(m).max(1e-300)
}

pub(crate) fn symmetrize(m: &CMat) -> CMat {
    (m + m.transpose()) * C64::new(0.5, 0.0)
}

pub(crate) fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

impl Kernel {
    fn check(grid: &Grid, op: &CMat) -> Result<()> {
        let n = grid.len();
        if op.nrows() != n || op.ncols() != n {
            return Err(Error::Dimension(format!("kernel is {}x{}, grid has {n} points", op.nrows(), op.ncols())));
        }
        Ok(())
    }

    /// Wrap an operator matrix (already weighted by `h^dim`).
    pub fn from_op(grid: &Grid, op: CMat, tag: Symmetry) -> Result<Self> {
        Self::check(grid, &op)?;
        let op = match tag {
            Symmetry::General => op,
            Symmetry::Symmetric => {
                let d = drift(&op, false);
                if d > SYMMETRY_DRIFT_TOL {
                    return Err(Error::Consistency(format!("symmetric kernel drift {d:.2e}")));
                }
                symmetrize(&op)
            }
            Symmetry::Hermitian => {
                let d = drift(&op, true);
                if d > SYMMETRY_DRIFT_TOL {
                    return Err(Error::Consistency(format!("hermitian kernel drift {d:.2e}")));
                }
                hermitize(&op)
            }
        };
        Ok(Kernel { op, grid: grid.clone(), tag })
    }

    /// Wrap an operator matrix, symmetrizing without a drift check.
    pub(crate) fn from_op_unchecked(grid: &Grid, op: CMat, tag: Symmetry) -> Self {
        let op = match tag {
            Symmetry::General => op,
            Symmetry::Symmetric => symmetrize(&op),
            Symmetry::Hermitian => hermitize(&op),
        };
        Kernel { op, grid: grid.clone(), tag }
    }

    /// Build from pointwise kernel values `K(x, y)`.
    pub fn from_values(grid: &Grid, values: CMat, tag: Symmetry) -> Result<Self> {
        let w = grid.cell_volume();
        Self::from_op(grid, values * C64::new(w, 0.0), tag)
    }

    pub fn from_fn(grid: &Grid, tag: Symmetry, f: impl Fn(usize, usize) -> C64) -> Result<Self> {
        let n = grid.len();
        Self::from_values(grid, CMat::from_fn(n, n, f), tag)
    }

    pub fn zeros(grid: &Grid) -> Self {
        let n = grid.len();
        Kernel { op: CMat::zeros(n, n), grid: grid.clone(), tag: Symmetry::Symmetric }
    }

    /// `δ_h`, i.e. `1/h^dim` on the diagonal.
    pub fn delta(grid: &Grid) -> Self {
        let n = grid.len();
        Kernel { op: CMat::identity(n, n), grid: grid.clone(), tag: Symmetry::Symmetric }
    }

    /// `(f⊗g)(x, y) = f(x) g(y)`.
    pub fn outer(f: &Field, g: &Field) -> Result<Self> {
        same_grid(&f.grid, &g.grid)?;
        let n = f.len();
        Self::from_values(&f.grid, CMat::from_fn(n, n, |i, j| f.values[i] * g.values[j]), Symmetry::General)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn tag(&self) -> Symmetry {
        self.tag
    }

    pub fn with_tag(mut self, tag: Symmetry) -> Self {
        self.tag = tag;
        self
    }

    /// Operator matrix `h^dim · K`.
    pub fn op(&self) -> &CMat {
        &self.op
    }

    pub fn into_op(self) -> CMat {
        self.op
    }

    /// Pointwise value `K(x, y)`.
    pub fn value(&self, x: usize, y: usize) -> C64 {
        self.op[(x, y)] / self.grid.cell_volume()
    }

    pub fn values(&self) -> CMat {
        &self.op * C64::new(1.0 / self.grid.cell_volume(), 0.0)
    }

    /// `(∫∫ |K|²)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        self.op.norm()
    }

    pub fn scale(&self, s: C64) -> Kernel {
        let tag = match self.tag {
            Symmetry::Hermitian if s.im != 0.0 => Symmetry::General,
            t => t,
        };
        Kernel { op: &self.op * s, grid: self.grid.clone(), tag }
    }

    pub fn add(&self, other: &Kernel) -> Result<Kernel> {
        same_grid(&self.grid, &other.grid)?;
        let tag = if self.tag == other.tag { self.tag } else { Symmetry::General };
        Ok(Kernel { op: &self.op + &other.op, grid: self.grid.clone(), tag })
    }

    pub fn sub(&self, other: &Kernel) -> Result<Kernel> {
        same_grid(&self.grid, &other.grid)?;
        let tag = if self.tag == other.tag { self.tag } else { Symmetry::General };
        Ok(Kernel { op: &self.op - &other.op, grid: self.grid.clone(), tag })
    }

    pub fn max_abs_diff(&self, other: &Kernel) -> f64 {
        (&self.op - &other.op).iter().map(|z| z.norm()).fold(0.0, f64::max) / self.grid.cell_volume()
    }
}

/// `(A∘B)(x, y) = h^dim Σ_z A(x, z) B(z, y)`.
pub fn compose(a: &Kernel, b: &Kernel) -> Result<Kernel> {
    same_grid(&a.grid, &b.grid)?;
    Ok(Kernel { op: &a.op * &b.op, grid: a.grid.clone(), tag: Symmetry::General })
}

pub fn involution(a: &Kernel, which: Involution) -> Kernel {
    let (op, tag) = match which {
        Involution::Transpose => (a.op.transpose(), a.tag),
        Involution::Conj => (a.op.map(|z| z.conj()), a.tag),
        Involution::Adjoint => (a.op.adjoint(), a.tag),
    };
    Kernel { op, grid: a.grid.clone(), tag }
}

/// `∫ A(x, x) dx`.
pub fn trace_diag(a: &Kernel) -> C64 {
    a.op.trace()
}

/// Partial sums of `sh` and `ch - 1` on operator matrices.
pub(crate) fn sh_ch_op(k: &CMat, tail_tol: f64) -> Result<(CMat, CMat)> {
    let n = k.nrows();
    let kb = k.map(|z| z.conj());
    let mut u = k.clone();
    let mut p = CMat::zeros(n, n);
    // term_j is the alternating word k k̄ k ... of length j divided by j!;
    // odd j feed sh, even j feed ch - 1
    let mut term = k.clone();
    let mut small_in_a_row = 0;
    for j in 2..=2 * SERIES_MAX_TERMS + 1 {
        let letter = if j % 2 == 0 { &kb } else { k };
        term = (&term * letter) / C64::new(j as f64, 0.0);
        let sum = if j % 2 == 1 { &mut u } else { &mut p };
        *sum += &term;
        if term.norm() < tail_tol * sum.norm().max(1.0) {
            small_in_a_row += 1;
            if small_in_a_row == 2 {
                return Ok((u, p));
            }
        } else {
            small_in_a_row = 0;
        }
    }
    Err(Error::SeriesNonConvergence { terms: SERIES_MAX_TERMS, last_norm: term.norm() })
}

/// `u = sh(k) = Σ (k k̄)^n k/(2n+1)!` and `p = ch(k) - δ = Σ_{n≥1} (k k̄)^n/(2n)!`.
///
/// Summation stops once the last term's norm drops below
/// `tail_tol · max(1, ‖partial sum‖)`.
pub fn sh_ch_series(k: &Kernel, tail_tol: f64) -> Result<(Kernel, Kernel)> {
    if k.tag != Symmetry::Symmetric {
        let d = drift(&k.op, false);
        if d > SYMMETRY_DRIFT_TOL {
            return Err(Error::Input(format!("sh_ch_series needs a symmetric kernel (drift {d:.2e})")));
        }
    }
    if !(tail_tol > 0.0) {
        return Err(Error::Input("tail_tol must be positive".into()));
    }
    let (u, p) = sh_ch_op(&k.op, tail_tol)?;
    Ok((
        Kernel::from_op_unchecked(&k.grid, symmetrize(&u), Symmetry::Symmetric),
        Kernel::from_op_unchecked(&k.grid, hermitize(&p), Symmetry::Hermitian),
    ))
}

/// Blocks `(ch, sh)` of `exp [[0, k], [k̄, 0]]` by dense matrix exponential.
pub fn exp_block_oracle(k: &Kernel) -> (Kernel, Kernel) {
    let n = k.op.nrows();
    let mut big = CMat::zeros(2 * n, 2 * n);
    big.view_mut((0, n), (n, n)).copy_from(&k.op);
    big.view_mut((n, 0), (n, n)).copy_from(&k.op.map(|z| z.conj()));
    let e = big.exp();
    let ch = e.view((0, 0), (n, n)).into_owned();
    let sh = e.view((0, n), (n, n)).into_owned();
    (
        Kernel { op: ch, grid: k.grid.clone(), tag: Symmetry::General },
        Kernel { op: sh, grid: k.grid.clone(), tag: Symmetry::General },
    )
}

/// Solve `(I + P) X = R` for Hermitian positive definite `I + P`.
pub(crate) fn solve_one_plus_p_op(p: &CMat, rhs: &CMat) -> Result<CMat> {
    let n = p.nrows();
    let a = hermitize(&(CMat::identity(n, n) + p));
    let chol = a.cholesky().ok_or(Error::Positivity)?;
    // complex Cholesky happily takes square roots of negative pivots
    let pivots_ok = chol.l_dirty().diagonal().iter().all(|z| z.re > 1e-12 && z.im.abs() <= 1e-12 * z.re);
    if !pivots_ok {
        return Err(Error::Positivity);
    }
    Ok(chol.solve(rhs))
}

/// `X` with `(δ_h + p)∘X = rhs`.
pub fn solve_one_plus_p(p: &Kernel, rhs: &Kernel) -> Result<Kernel> {
    same_grid(&p.grid, &rhs.grid)?;
    if drift(&p.op, true) > 1e-10 {
        return Err(Error::Positivity);
    }
    let x = solve_one_plus_p_op(&p.op, &rhs.op)?;
    Ok(Kernel { op: x, grid: p.grid.clone(), tag: Symmetry::General })
}

/// `S(d, k, l) = [[d, k], [l, -d^T]]`, an element of the symplectic algebra
/// when `k` and `l` are symmetric.
#[derive(Clone, Debug)]
pub struct BlockMatrix {
    pub d_block: Kernel,
    pub k_block: Kernel,
    pub l_block: Kernel,
}

impl BlockMatrix {
    pub fn new(d: Kernel, k: Kernel, l: Kernel) -> Result<Self> {
        same_grid(&d.grid, &k.grid)?;
        same_grid(&d.grid, &l.grid)?;
        let k = Kernel::from_op(&k.grid, k.op, Symmetry::Symmetric)?;
        let l = Kernel::from_op(&l.grid, l.op, Symmetry::Symmetric)?;
        Ok(BlockMatrix { d_block: d, k_block: k, l_block: l })
    }

    pub fn minus_d_transpose(&self) -> Kernel {
        involution(&self.d_block, Involution::Transpose).scale(C64::new(-1.0, 0.0))
    }

    /// The `2n × 2n` operator matrix.
    pub fn to_op(&self) -> CMat {
        let n = self.d_block.op.nrows();
        let mut m = CMat::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&self.d_block.op);
        m.view_mut((0, n), (n, n)).copy_from(&self.k_block.op);
        m.view_mut((n, 0), (n, n)).copy_from(&self.l_block.op);
        m.view_mut((n, n), (n, n)).copy_from(&(-self.d_block.op.transpose()));
        m
    }
}
