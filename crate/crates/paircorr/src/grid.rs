//! Periodic grid, spectral operators and sampled interaction potentials.
//!
//! Points are stored row-major with axis 0 slowest. The cell volume
//! `h^dim` weights every integral so that discrete sums approximate
//! their continuum counterparts.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Shared handle to a grid; fields and kernels hold one of these.
pub type Grid = Arc<GridSpec>;

pub struct GridSpec {
    dim: usize,
    points: usize,
    box_length: f64,
    spacing: f64,
    multipliers: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridSpec")
            .field("dim", &self.dim)
            .field("points", &self.points)
            .field("box_length", &self.box_length)
            .finish()
    }
}

impl PartialEq for GridSpec {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.points == other.points && self.box_length == other.box_length
    }
}

impl GridSpec {
    pub fn new(dim: usize, points: usize, box_length: f64) -> Result<Grid> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Config(format!("dim must be 1, 2 or 3, got {dim}")));
        }
        if points < 2 {
            return Err(Error::Config(format!("points per axis must be >= 2, got {points}")));
        }
        if !(box_length.is_finite() && box_length > 0.0) {
            return Err(Error::Config(format!("box length must be positive, got {box_length}")));
        }
        let spacing = box_length / points as f64;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(points);
        let inv = planner.plan_fft_inverse(points);
        let mut g = GridSpec { dim, points, box_length, spacing, multipliers: Vec::new(), fwd, inv };
        let n = g.len();
        g.multipliers = (0..n).map(|i| g.multi_index(i).iter().map(|&j| g.wavenumber(j).powi(2)).sum()).collect();
        Ok(Arc::new(g))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points
    }

    pub fn box_length(&self) -> f64 {
        self.box_length
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Total number of grid points, `M^dim`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.box_length.powi(self.dim as i32)
    }

    /// `|ξ|²` per flat Fourier index, in FFT order.
    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    /// Signed wavenumber of FFT index `j` along one axis. The Nyquist
    /// index maps to `+πM/L`; only its square is ever used.
    pub fn wavenumber(&self, j: usize) -> f64 {
        let m = self.points as i64;
        let j = j as i64;
        let s = if j <= m / 2 { j } else { j - m };
        2.0 * PI * s as f64 / self.box_length
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        let mut r = flat;
        for a in (0..self.dim).rev() {
            idx[a] = r % self.points;
            r /= self.points;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &j| acc * self.points + j % self.points)
    }

    /// Position of a grid point in `[0, L)^dim`.
    pub fn position(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).iter().map(|&j| j as f64 * self.spacing).collect()
    }

    /// Flat index of `x_a - x_b` on the torus.
    pub fn difference_index(&self, a: usize, b: usize) -> usize {
        if self.dim == 1 {
            return (a + self.points - b) % self.points;
        }
        let ia = self.multi_index(a);
        let ib = self.multi_index(b);
        let d: Vec<usize> = ia.iter().zip(&ib).map(|(&x, &y)| (x + self.points - y) % self.points).collect();
        self.flat_index(&d)
    }

    /// Flat index of `-x`.
    pub fn negate_index(&self, a: usize) -> usize {
        let d: Vec<usize> = self.multi_index(a).iter().map(|&x| (self.points - x) % self.points).collect();
        self.flat_index(&d)
    }

    /// Minimum-image distance from the origin.
    pub fn min_image_radius(&self, flat: usize) -> f64 {
        self.multi_index(flat)
            .iter()
            .map(|&j| {
                let x = j as f64 * self.spacing;
                let y = if x > 0.5 * self.box_length { x - self.box_length } else { x };
                y * y
            })
            .sum::<f64>()
            .sqrt()
    }

    /// In-place multidimensional FFT. The inverse is normalized.
    pub fn fft_nd(&self, data: &mut [C64], inverse: bool) {
        let m = self.points;
        let n = self.len();
        debug_assert_eq!(data.len(), n);
        let plan = if inverse { &self.inv } else { &self.fwd };
        let mut line = vec![C64::new(0.0, 0.0); m];
        let mut scratch = vec![C64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for axis in 0..self.dim {
            let stride = m.pow((self.dim - 1 - axis) as u32);
            let block = stride * m;
            for base in (0..n).step_by(block) {
                for off in 0..stride {
                    let start = base + off;
                    for (j, slot) in line.iter_mut().enumerate() {
                        *slot = data[start + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, val) in line.iter().enumerate() {
                        data[start + j * stride] = *val;
                    }
                }
            }
        }
        if inverse {
            let s = 1.0 / n as f64;
            data.iter_mut().for_each(|z| *z *= s);
        }
    }

    /// Dense matrix of the spectral Laplacian. It is real symmetric.
    pub fn laplacian_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut d = DMatrix::<f64>::zeros(n, n);
        let mut col = vec![C64::new(0.0, 0.0); n];
        for j in 0..n {
            col.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            col[j] = C64::new(1.0, 0.0);
            self.fft_nd(&mut col, false);
            for (z, &w) in col.iter_mut().zip(&self.multipliers) {
                *z *= -w;
            }
            self.fft_nd(&mut col, true);
            for i in 0..n {
                d[(i, j)] = col[i].re;
            }
        }
        let dt = d.transpose();
        (d + dt) * 0.5
    }
}

/// Complex samples on a grid.
#[derive(Clone, Debug)]
pub struct Field {
    pub values: Vec<C64>,
    pub grid: Grid,
}

impl Field {
    pub fn new(grid: &Grid, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!("field has {} samples, grid has {}", values.len(), grid.len())));
        }
        Ok(Field { values, grid: grid.clone() })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Field { values: vec![C64::new(0.0, 0.0); grid.len()], grid: grid.clone() }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> C64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.position(i))).collect();
        Field { values, grid: grid.clone() }
    }

    pub fn from_real(grid: &Grid, re: &[f64]) -> Result<Self> {
        Field::new(grid, re.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scale(&self, s: C64) -> Field {
        Field { values: self.values.iter().map(|z| z * s).collect(), grid: self.grid.clone() }
    }

    pub fn conj(&self) -> Field {
        Field { values: self.values.iter().map(|z| z.conj()).collect(), grid: self.grid.clone() }
    }

    pub fn abs_sq(&self) -> Field {
        Field { values: self.values.iter().map(|z| C64::new(z.norm_sqr(), 0.0)).collect(), grid: self.grid.clone() }
    }

    pub fn norm(&self) -> f64 {
        (self.grid.cell_volume() * self.values.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
    }

    pub fn normalized(&self) -> Result<Field> {
        let n = self.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Input("cannot normalize a zero or non-finite field".into()));
        }
        Ok(self.scale(C64::new(1.0 / n, 0.0)))
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// Unnormalized forward transform.
    pub fn fourier(&self) -> Vec<C64> {
        let mut d = self.values.clone();
        self.grid.fft_nd(&mut d, false);
        d
    }
}

fn check_same(a: &Grid, b: &Grid) -> Result<()> {
    if Arc::ptr_eq(a, b) || **a == **b {
        Ok(())
    } else {
        Err(Error::Dimension(format!("grid mismatch: {a:?} vs {b:?}")))
    }
}

pub(crate) fn same_grid(a: &Grid, b: &Grid) -> Result<()> {
    check_same(a, b)
}

/// `h^dim Σ f·conj(g)`.
pub fn l2_inner(f: &Field, g: &Field) -> Result<C64> {
    check_same(&f.grid, &g.grid)?;
    let s: C64 = f.values.iter().zip(&g.values).map(|(a, b)| a * b.conj()).sum();
    Ok(s * f.grid.cell_volume())
}

pub fn l2_norm(f: &Field) -> f64 {
    f.norm()
}

#[derive(Clone, Copy, Debug)]
pub enum SpectralOp<'a> {
    Laplacian,
    ConvolveWith(&'a Field),
}

pub fn spectral_apply(f: &Field, op: SpectralOp<'_>) -> Result<Field> {
    match op {
        SpectralOp::Laplacian => Ok(laplacian(f)),
        SpectralOp::ConvolveWith(v) => convolve(v, f),
    }
}

pub fn laplacian(f: &Field) -> Field {
    let mut d = f.fourier();
    for (z, &w) in d.iter_mut().zip(f.grid.multipliers()) {
        *z *= -w;
    }
    f.grid.fft_nd(&mut d, true);
    Field { values: d, grid: f.grid.clone() }
}

/// `(v*f)(x) = h^dim Σ_y v(x-y) f(y)`.
pub fn convolve(v: &Field, f: &Field) -> Result<Field> {
    check_same(&v.grid, &f.grid)?;
    let vh = v.fourier();
    let mut fh = f.fourier();
    let w = f.grid.cell_volume();
    for (a, b) in fh.iter_mut().zip(&vh) {
        *a *= b * w;
    }
    f.grid.fft_nd(&mut fh, true);
    Ok(Field { values: fh, grid: f.grid.clone() })
}

/// Same as [`convolve`] when `v` has already been transformed.
pub(crate) fn convolve_hat(vh: &[C64], f: &Field) -> Field {
    let mut fh = f.fourier();
    let w = f.grid.cell_volume();
    for (a, b) in fh.iter_mut().zip(vh) {
        *a *= b * w;
    }
    f.grid.fft_nd(&mut fh, true);
    Field { values: fh, grid: f.grid.clone() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Gaussian,
    MollifiedCoulomb,
    Zero,
}

/// Interaction potential parameters.
///
/// * `gaussian`: `ε exp(-r²/(2σ²))` with `σ = width`; `cutoff` is unused.
/// * `mollified_coulomb`: `ε χ(r) / sqrt(r² + a²)` with `a = width` and
///   bump `χ(r) = exp(1 - 1/(1 - (r/R)²))` for `r < R = cutoff`, zero
///   beyond. `χ(0) = 1`, so `v(0) = ε/a`.
/// * `zero`: identically zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    #[serde(default)]
    pub strength: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
}

fn default_width() -> f64 {
    1.0
}

fn default_cutoff() -> f64 {
    f64::INFINITY
}

impl PotentialSpec {
    pub fn gaussian(strength: f64, width: f64) -> Self {
        PotentialSpec { kind: PotentialKind::Gaussian, strength, width, cutoff: f64::INFINITY }
    }

    pub fn mollified_coulomb(strength: f64, width: f64, cutoff: f64) -> Self {
        PotentialSpec { kind: PotentialKind::MollifiedCoulomb, strength, width, cutoff }
    }

    pub fn zero() -> Self {
        PotentialSpec { kind: PotentialKind::Zero, strength: 0.0, width: 1.0, cutoff: f64::INFINITY }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.strength.is_finite() {
            return Err(Error::Config("potential strength must be finite".into()));
        }
        if self.kind != PotentialKind::Zero {
            if !(self.width.is_finite() && self.width > 0.0) {
                return Err(Error::Config(format!("potential width must be positive, got {}", self.width)));
            }
            if !(self.cutoff > 0.0) {
                return Err(Error::Config(format!("potential cutoff must be positive, got {}", self.cutoff)));
            }
        }
        Ok(())
    }

    /// Radial profile before sampling.
    pub fn radial(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Zero => 0.0,
            PotentialKind::Gaussian => self.strength * (-r * r / (2.0 * self.width * self.width)).exp(),
            PotentialKind::MollifiedCoulomb => {
                let chi = if self.cutoff.is_infinite() {
                    1.0
                } else if r < self.cutoff {
                    let q = r / self.cutoff;
                    (1.0 - 1.0 / (1.0 - q * q)).exp()
                } else {
                    0.0
                };
                self.strength * chi / (r * r + self.width * self.width).sqrt()
            }
        }
    }
}

/// Build the grid and sample the potential, symmetrized so that
/// `v(x) = v(-x)` holds bit for bit.
pub fn build_domain(dim: usize, points: usize, box_length: f64, pot: &PotentialSpec) -> Result<(Grid, Field)> {
    pot.validate()?;
    let grid = GridSpec::new(dim, points, box_length)?;
    let v = sample_potential(&grid, pot)?;
    Ok((grid, v))
}

pub fn sample_potential(grid: &Grid, pot: &PotentialSpec) -> Result<Field> {
    pot.validate()?;
    let raw: Vec<f64> = (0..grid.len()).map(|i| pot.radial(grid.min_image_radius(i))).collect();
    let sym: Vec<f64> = (0..grid.len())
        .map(|i| {
            let j = grid.negate_index(i);
            let (a, b) = if i <= j { (raw[i], raw[j]) } else { (raw[j], raw[i]) };
            0.5 * (a + b)
        })
        .collect();
    Field::from_real(grid, &sym)
}

/// `∫ v`.
pub fn integral(f: &Field) -> C64 {
    f.values.iter().sum::<C64>() * f.grid.cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_and_counts() {
        let g = GridSpec::new(2, 8, 3.0).unwrap();
        assert_eq!(g.len(), 64);
        assert!((g.spacing() * 8.0 - 3.0).abs() < 1e-15);
        assert_eq!(g.multipliers()[0], 0.0);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(GridSpec::new(4, 8, 1.0).is_err());
        assert!(GridSpec::new(1, 8, -1.0).is_err());
        assert!(build_domain(1, 8, 1.0, &PotentialSpec::gaussian(0.1, 0.0)).is_err());
    }

    #[test]
    fn zero_potential() {
        let (_, v) = build_domain(1, 32, 2.0 * PI, &PotentialSpec::zero()).unwrap();
        assert!(v.values.iter().all(|z| *z == C64::new(0.0, 0.0)));
    }

    #[test]
    fn potential_even_exactly() {
        for dim in 1..=3 {
            let (g, v) = build_domain(dim, 6, 2.0 * PI, &PotentialSpec::gaussian(0.05, 0.7)).unwrap();
            for i in 0..g.len() {
                assert_eq!(v.values[i], v.values[g.negate_index(i)]);
            }
        }
    }

    #[test]
    fn mollified_coulomb_origin() {
        let (_, v) = build_domain(1, 64, 10.0, &PotentialSpec::mollified_coulomb(0.05, 0.5, 4.0)).unwrap();
        assert!((v.values[0].re - 0.05 / 0.5).abs() < 1e-15);
    }

    #[test]
    fn plane_wave_laplacian() {
        let g = GridSpec::new(1, 32, 2.0 * PI).unwrap();
        for n in [0usize, 3, 16, 29] {
            let xi = g.wavenumber(n);
            let f = Field::from_fn(&g, |x| C64::new(0.0, xi * x[0]).exp());
            let lf = laplacian(&f);
            let expect = f.scale(C64::new(-xi * xi, 0.0));
            // sampling e^{iξx} at |ξx| ~ 100 already carries ~1e-14 phase error
            assert!(lf.max_abs_diff(&expect) < 1e-12 * (1.0 + xi * xi), "mode {n}");
        }
    }

    #[test]
    fn convolve_delta_translates() {
        let (g, v) = build_domain(1, 16, 5.0, &PotentialSpec::gaussian(0.3, 0.8)).unwrap();
        let mut delta = Field::zeros(&g);
        delta.values[5] = C64::new(1.0 / g.cell_volume(), 0.0);
        let c = convolve(&v, &delta).unwrap();
        for x in 0..16 {
            let expect = v.values[g.difference_index(x, 5)];
            assert!((c.values[x] - expect).norm() < 1e-15);
        }
    }

    #[test]
    fn constant_inner_product() {
        let g = GridSpec::new(3, 4, 1.0).unwrap();
        let c = C64::new(0.3, -1.2);
        let f = Field::new(&g, vec![c; g.len()]).unwrap();
        assert!((l2_inner(&f, &f).unwrap().re - c.norm_sqr()).abs() < 1e-14);
    }

    #[test]
    fn mismatch_is_dimension_error() {
        let a = GridSpec::new(1, 8, 1.0).unwrap();
        let b = GridSpec::new(1, 16, 1.0).unwrap();
        assert!(matches!(l2_inner(&Field::zeros(&a), &Field::zeros(&b)), Err(Error::Dimension(_))));
    }

    #[test]
    fn laplacian_matrix_matches_spectral() {
        let g = GridSpec::new(2, 4, 3.0).unwrap();
        let d = g.laplacian_matrix();
        let f = Field::from_fn(&g, |x| C64::new((x[0] * 2.0).sin(), x[1].cos()));
        let lf = laplacian(&f);
        for i in 0..g.len() {
            let s: C64 = (0..g.len()).map(|j| f.values[j] * d[(i, j)]).sum();
            assert!((s - lf.values[i]).norm() < 1e-12);
        }
    }
}
