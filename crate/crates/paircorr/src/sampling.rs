//! Seeded random inputs for tests, calibration and demos.

use rand::Rng;

use crate::grid::{Field, Grid, C64};
use crate::kernel::{CMat, Kernel, Symmetry};

pub(crate) fn gauss_pair(rng: &mut impl Rng) -> C64 {
    // Box-Muller; only distribution shape matters here
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let t = 2.0 * std::f64::consts::PI * u2;
    C64::new(r * t.cos(), r * t.sin())
}

/// Complex field with i.i.d. normal samples.
pub fn random_field(grid: &Grid, rng: &mut impl Rng) -> Field {
    Field { values: (0..grid.len()).map(|_| gauss_pair(rng)).collect(), grid: grid.clone() }
}

/// Normalized field built from Fourier modes with `|n| <= max_mode` per axis.
pub fn random_smooth_field(grid: &Grid, rng: &mut impl Rng, max_mode: usize) -> Field {
    let mut hat = vec![C64::new(0.0, 0.0); grid.len()];
    let m = grid.points_per_axis();
    for (i, slot) in hat.iter_mut().enumerate() {
        let ok = grid.multi_index(i).iter().all(|&j| {
            let s = if j <= m / 2 { j } else { m - j };
            s <= max_mode
        });
        if ok {
            *slot = gauss_pair(rng);
        }
    }
    grid.fft_nd(&mut hat, true);
    let f = Field { values: hat, grid: grid.clone() };
    f.normalized().expect("nonzero random field")
}

fn scaled(grid: &Grid, op: CMat, norm: f64, tag: Symmetry) -> Kernel {
    let n = op.norm();
    let op = if n > 0.0 { op * C64::new(norm / n, 0.0) } else { op };
    Kernel::from_op_unchecked(grid, op, tag)
}

/// General kernel with L² norm `norm`.
pub fn random_kernel(grid: &Grid, rng: &mut impl Rng, norm: f64) -> Kernel {
    let n = grid.len();
    let op = CMat::from_fn(n, n, |_, _| gauss_pair(rng));
    scaled(grid, op, norm, Symmetry::General)
}

/// Symmetric kernel with L² norm `norm`.
pub fn random_symmetric(grid: &Grid, rng: &mut impl Rng, norm: f64) -> Kernel {
    let n = grid.len();
    let op = CMat::from_fn(n, n, |_, _| gauss_pair(rng));
    let op = &op + op.transpose();
    scaled(grid, op, norm, Symmetry::Symmetric)
}

/// Hermitian kernel with L² norm `norm`.
pub fn random_hermitian(grid: &Grid, rng: &mut impl Rng, norm: f64) -> Kernel {
    let n = grid.len();
    let op = CMat::from_fn(n, n, |_, _| gauss_pair(rng));
    let op = &op + op.adjoint();
    scaled(grid, op, norm, Symmetry::Hermitian)
}
