//! Properties of the pair kernel, reduction and error functionals on random
//! short trajectories.

use paircorr::error_norms::{f_error, g_error, g_raw_terms, two_split, Blocks};
use paircorr::fock::{oracle_error_vectors, static_node, FockModel, Lattice};
use paircorr::grid::{build_domain, Field, PotentialSpec, C64};
use paircorr::hartree::{hartree_evolve, HartreeTrajectory};
use paircorr::kernel::{compose, involution, Involution, Kernel};
use paircorr::pair::{
    build_g_m, duhamel_solve_s, picard_solve, picard_with, residual_newnls, GMPair, PairTrajectory, PicardOptions,
};
use paircorr::reduction::{astar_coeff_norm, chi0, diagnostics};
use paircorr::sampling::{random_field, random_smooth_field, random_symmetric};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DT: f64 = 0.01;
const STEPS: usize = 30;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn max_abs(k: &Kernel) -> f64 {
    k.op().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

struct Run {
    phi0: Field,
    v: Field,
    h: HartreeTrajectory,
    traj: PairTrajectory,
    gm: GMPair,
}

fn run(seed: u64, points: usize, strength: f64) -> Run {
    let (g, v) = build_domain(1, points, 6.0, &PotentialSpec::gaussian(strength, 0.8)).unwrap();
    let phi0 = random_smooth_field(&g, &mut rng(seed), 2).normalized().unwrap();
    let h = hartree_evolve(&phi0, &v, DT, STEPS).unwrap();
    let (traj, gm) = picard_solve(&h, &v, &PicardOptions::default()).unwrap();
    Run { phi0, v, h, traj, gm }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn kernel_starts_at_zero_and_stays_symmetric(seed in any::<u64>(), points in 2usize..=8, strength in 0.0..0.5f64) {
        let r = run(seed, points, strength);
        prop_assert_eq!(max_abs(&r.traj.nodes[0].k), 0.0);
        for n in &r.traj.nodes {
            prop_assert_eq!(n.k.op(), &n.k.op().transpose());
            prop_assert_eq!(n.sk.op(), &n.sk.op().transpose());
        }
    }

    #[test]
    fn duhamel_reproduces_stored_kernel(seed in any::<u64>(), points in 2usize..=8, strength in 0.0..0.5f64) {
        let r = run(seed, points, strength);
        let sk: Vec<Kernel> = r.traj.nodes.iter().map(|n| n.sk.clone()).collect();
        let (k, sk_out) = duhamel_solve_s(&sk, &r.traj.time).unwrap();
        for (j, n) in r.traj.nodes.iter().enumerate() {
            prop_assert_eq!(k[j].op(), n.k.op());
            prop_assert_eq!(sk_out[j].op(), n.sk.op());
        }
    }

    #[test]
    fn kernel_is_linear_in_weak_coupling(seed in any::<u64>(), points in 2usize..=8, strength in 0.005..0.05f64) {
        let a = run(seed, points, strength).traj.sup_k();
        let b = run(seed, points, strength / 2.0).traj.sup_k();
        prop_assert!(a > 0.0);
        let ratio = b / a;
        prop_assert!((ratio - 0.5).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn hyperbolic_identity_at_every_node(seed in any::<u64>(), points in 2usize..=8, strength in 0.0..0.5f64) {
        let r = run(seed, points, strength);
        for n in &r.traj.nodes {
            let delta = Kernel::delta(n.k.grid());
            let ch = n.p.add(&delta).unwrap();
            let id = compose(&ch, &ch).unwrap()
                .sub(&compose(&n.u, &involution(&n.u, Involution::Conj)).unwrap()).unwrap()
                .sub(&delta).unwrap();
            prop_assert!(max_abs(&id) < 1e-12);
        }
    }

    #[test]
    fn reduction_is_hermitian_with_real_trace(seed in any::<u64>(), points in 2usize..=8, strength in 0.0..0.5f64) {
        let r = run(seed, points, strength);
        let d = diagnostics(&r.h, &r.traj, &r.gm, &r.v, 4.0).unwrap();
        for j in 0..d.t.len() {
            let scale = d.trace_d_real[j].abs().max(1e-300);
            prop_assert!(d.d_antihermitian[j] <= 1e-9 * scale.max(d.residual[j]).max(1e-12));
            prop_assert!(d.trace_d_imag[j].abs() <= 1e-9 * scale.max(1e-12));
        }
    }

    #[test]
    fn astar_coefficient_tracks_residual(seed in any::<u64>(), points in 2usize..=8, strength in 0.05..0.5f64) {
        let (g, v) = build_domain(1, points, 6.0, &PotentialSpec::gaussian(strength, 0.8)).unwrap();
        let phi = random_smooth_field(&g, &mut rng(seed), 2).normalized().unwrap();
        let h = hartree_evolve(&phi, &v, DT, STEPS).unwrap();
        let gm = build_g_m(&h, &v).unwrap();
        let mut pairs = Vec::new();
        let mut obs = |_: usize, t: &PairTrajectory| {
            let res = residual_newnls(t, &gm).unwrap().into_iter().fold(0.0, f64::max);
            let astar = t.nodes.iter().enumerate()
                .map(|(j, n)| astar_coeff_norm(n, &gm.g_pot[j], &gm.m[j]).unwrap())
                .fold(0.0, f64::max);
            pairs.push((res, astar));
        };
        picard_with(&gm, h.time, &PicardOptions::default(), Some(&mut obs)).unwrap();
        for &(res, astar) in &pairs {
            if res > 1e-12 {
                prop_assert!(astar > 0.5 * res && astar < 2.0 * res, "residual {res:e}, astar {astar:e}");
            }
        }
        let (res, astar) = *pairs.last().unwrap();
        prop_assert!(res < 1e-10 && astar < 1e-10);
    }

    #[test]
    fn chi0_is_gauge_invariant(seed in any::<u64>(), points in 2usize..=16, theta in 0.0..6.3f64, quarter in 0u8..4) {
        let (g, v) = build_domain(1, points, 6.0, &PotentialSpec::gaussian(0.4, 0.8)).unwrap();
        let phi = random_field(&g, &mut rng(seed));
        let base = chi0(&phi, &v).unwrap();
        let exact = [C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(-1.0, 0.0), C64::new(0.0, -1.0)][quarter as usize];
        prop_assert_eq!(chi0(&phi.scale(exact), &v).unwrap(), base);
        let rotated = chi0(&phi.scale(C64::from_polar(1.0, theta)), &v).unwrap();
        prop_assert!((rotated - base).abs() <= 1e-14 * base.abs());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn two_term_split_sums_to_direct(seed in any::<u64>(), points in 2usize..=6, norm in 0.01..0.5f64) {
        let (g, v) = build_domain(1, points, 4.0, &PotentialSpec::gaussian(0.3, 0.8)).unwrap();
        let node = static_node(&random_symmetric(&g, &mut rng(seed), norm)).unwrap();
        let b = Blocks::new(&node.u, &node.p, &v).unwrap();
        let direct = g_raw_terms(&b).into_iter().find(|t| t.name == "two").unwrap().tensor;
        let mut sum = vec![C64::new(0.0, 0.0); direct.data.len()];
        for (_, piece) in two_split(&b) {
            for (s, z) in sum.iter_mut().zip(&piece.data) {
                *s += z;
            }
        }
        let scale = direct.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (s, z) in sum.iter().zip(&direct.data) {
            prop_assert!((s - z).norm() <= 1e-12 * scale.max(1e-300));
        }
    }

    #[test]
    fn error_functionals_are_linear_in_small_kernels(seed in any::<u64>(), points in 2usize..=6, norm in 0.005..0.05f64) {
        let (g, v) = build_domain(1, points, 4.0, &PotentialSpec::gaussian(0.3, 0.8)).unwrap();
        let mut r = rng(seed);
        let phi = random_field(&g, &mut r).normalized().unwrap();
        let k = random_symmetric(&g, &mut r, norm);
        let half = k.scale(C64::new(0.5, 0.0));
        let (g1, _) = g_error(&static_node(&k).unwrap(), &phi, &v).unwrap();
        let (g2, _) = g_error(&static_node(&half).unwrap(), &phi, &v).unwrap();
        let (f1, _) = f_error(&static_node(&k).unwrap(), &phi, &v).unwrap();
        let (f2, _) = f_error(&static_node(&half).unwrap(), &phi, &v).unwrap();
        prop_assert!((g1 / g2 - 2.0).abs() < 0.2, "g ratio {}", g1 / g2);
        prop_assert!((f1 / f2 - 2.0).abs() < 0.2, "f ratio {}", f1 / f2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn error_functionals_match_fock_oracle(seed in any::<u64>(), norm in 0.05..0.2f64) {
        let (g, v) = build_domain(1, 2, 3.0, &PotentialSpec::gaussian(0.3, 0.8)).unwrap();
        let lattice = Lattice::new(&g, &v).unwrap();
        let model = FockModel::new(2, 36).unwrap();
        let mut r = rng(seed);
        let phi = random_field(&g, &mut r).normalized().unwrap();
        let k = random_symmetric(&g, &mut r, norm);
        let node = static_node(&k).unwrap();
        let (gv, _) = g_error(&node, &phi, &v).unwrap();
        let (fv, _) = f_error(&node, &phi, &v).unwrap();
        let o = oracle_error_vectors(&model, &lattice, &phi, &k).unwrap();
        prop_assert!((gv - o.g_vec.norm()).abs() < 1e-10, "g {gv} oracle {}", o.g_vec.norm());
        prop_assert!((fv - o.f_vec.norm()).abs() < 1e-10, "f {fv} oracle {}", o.f_vec.norm());
    }
}

#[test]
fn zero_potential_gives_zero_pair_kernel() {
    let r = run(7, 6, 0.0);
    assert!(r.traj.nodes.iter().all(|n| max_abs(&n.k) == 0.0));
    assert!(r.phi0.norm() > 0.0);
}
