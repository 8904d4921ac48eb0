use std::sync::Arc;

use lattice_flux::cc::{self, CCModelSpec, CcFlux, CcUnitary, DualPath, Scatter};
use lattice_flux::flux::{self, BlockSource};
use lattice_flux::lattice::{box_sites, Direction, LatticeState, LocalUnitary, Site};
use lattice_flux::linalg::C64;
use lattice_flux::{Error, Tolerances};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tol() -> Tolerances {
    Tolerances::default()
}

fn zbox() -> [(i64, i64); 2] {
    [(-10, 10), (-6, 6)]
}

#[test]
fn critical_step_expansion() {
    // S = (1/√2)[[1, −1], [1, 1]] on the even scatterer at the origin
    let u = CcUnitary::new(&CCModelSpec::uniform(Scatter::critical()), &tol()).unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for (j, k) in [(0, 0), (1, -1), (-2, 3)] {
        let psi = LatticeState::basis(Site::new(&[2 * j, 2 * k]), 0, 1);
        let out = u.apply(&psi).unwrap();
        assert_eq!(out.support_len(), 2);
        let r = out.amplitude(&Site::new(&[2 * j, 2 * k - 1]), 0);
        let t = out.amplitude(&Site::new(&[2 * j + 1, 2 * k]), 0);
        assert!((r - C64::new(s, 0.0)).norm() < 1e-15);
        assert!((t - C64::new(-s, 0.0)).norm() < 1e-15);
    }
}

#[test]
fn adjoint_consistency_on_random_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let u = CcUnitary::new(&CCModelSpec::random_phases(0.4, zbox(), &mut rng), &tol()).unwrap();
    let sites = box_sites(&[(-4, 4), (-4, 4)]);
    for _ in 0..20 {
        let phi = LatticeState::random(&sites, 2, 1, &mut rng);
        let psi = LatticeState::random(&sites, 2, 1, &mut rng);
        let a = phi.inner(&u.apply(&psi).unwrap());
        let b = u.apply_adjoint(&phi).unwrap().inner(&psi);
        assert!((a - b).norm() < 1e-12);
        assert!((u.apply(&psi).unwrap().norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn r_path_with_vanishing_reflection_has_no_flux() {
    let u = CcUnitary::new(&CCModelSpec::uniform(Scatter::pure_t()), &tol()).unwrap();
    for path in [cc::horizontal_r_path(0), cc::vertical_r_path(-1)] {
        let r = cc::cc_index(&u, &path, &tol()).unwrap();
        assert_eq!(r.report.max_block_norm, 0.0);
        assert_eq!(r.report.index, 0);
    }
}

#[test]
fn vertical_r_path_has_index_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10 {
        let u = CcUnitary::new(&CCModelSpec::random_phases(0.6, zbox(), &mut rng), &tol()).unwrap();
        let r = cc::cc_index(&u, &cc::vertical_r_path(0), &tol()).unwrap();
        assert_eq!(r.report.index, 0);
        assert!((r.report.max_block_norm - 0.6).abs() < 1e-10);
    }
}

#[test]
fn full_reflection_on_an_r_ray_is_not_certifiable() {
    let u = CcUnitary::new(&CCModelSpec::uniform(Scatter::pure_r()), &tol()).unwrap();
    let err = cc::cc_index(&u, &cc::horizontal_r_path(0), &tol()).unwrap_err();
    assert!(matches!(err, Error::NotCertified { .. }));
    assert!(err.to_string().contains("index undefined at infinity"));
}

#[test]
fn switch_sign_follows_the_distinguished_edges() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let path = cc::crossover_path(1, 0).unwrap();
    let u = CcUnitary::new(&CCModelSpec::random_phases(0.3, zbox(), &mut rng), &tol()).unwrap();
    let r = cc::cc_index(&u, &path, &tol()).unwrap();
    let total: i64 = r.witnesses.iter().map(|w| w.rank_difference).sum();
    assert_eq!(total, r.report.index);
    assert_eq!(r.report.rank_formula, Some(r.report.index));
    // the mirrored crossover (t-ray in, r-ray out) has the opposite sign
    let mirrored = DualPath::new(
        vec![Site::new(&[1, 1]), Site::new(&[1, 0])],
        Direction::plus(1),
        Direction::plus(1),
        0,
    )
    .unwrap();
    let class = cc::classify_path(&mirrored).unwrap();
    assert_eq!((class.incoming_tag, class.outgoing_tag), (cc::Tag::T, cc::Tag::R));
    let m = cc::cc_index(&u, &mirrored, &tol()).unwrap();
    assert_eq!(m.report.index, -r.report.index);
}

#[test]
fn local_detour_keeps_r_path_index() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let u = CcUnitary::new(&CCModelSpec::random_phases(0.3, zbox(), &mut rng), &tol()).unwrap();
    let path = cc::horizontal_r_path(0).extended(6);
    // (−1,0) → (−1,1) → (0,1) → (1,1) → (1,0): a detour of four steps over two links
    let from = path.param_of(&Site::new(&[-1, 0])).unwrap();
    let to = path.param_of(&Site::new(&[1, 0])).unwrap();
    let rep = [[-1, 0], [-1, 1], [0, 1], [1, 1], [1, 0]].map(|c| Site::new(&c));
    let (new, r) = cc::surgery_report(&u, &path, from, to, &rep, &tol()).unwrap();
    assert_ne!(new, path);
    assert_eq!((r.index_before, r.index_after), (0, 0));
    assert_eq!(r.projection_rank, r.enclosed);
    assert_eq!(r.enclosed, 2);
}

#[test]
fn anomalous_spec_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let path = cc::crossover_path(1, 0).unwrap();
    let spec = cc::anomalous_spec(&CCModelSpec::random_phases(0.2, zbox(), &mut rng), &path, 0.25).unwrap();
    let again = cc::anomalous_spec(&spec, &path, 0.25).unwrap();
    let a = cc::cc_flux(&CcUnitary::new(&spec, &tol()).unwrap(), &path);
    let b = cc::cc_flux(&CcUnitary::new(&again, &tol()).unwrap(), &path);
    assert_eq!(a.blocks.len(), b.blocks.len());
    for (x, y) in a.blocks.iter().zip(&b.blocks) {
        assert_eq!(x.label, y.label);
        assert!(lattice_flux::linalg::max_abs(&(&x.phi - &y.phi)) < 1e-15);
    }
    let r = flux::index_by_kernels(&a, &tol()).unwrap();
    assert!((r.odd_trace_at(0).unwrap().re - r.index as f64).abs() < 1e-9);
}

#[test]
fn trace_norm_ratio_is_finite_for_capped_flux() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let path = cc::crossover_path(1, 0).unwrap();
    for eps in [0.25, 0.125] {
        let spec = cc::anomalous_spec(&CCModelSpec::random_phases(0.2, zbox(), &mut rng), &path, eps).unwrap();
        let u = CcUnitary::new(&spec, &tol()).unwrap();
        let f = cc::cc_flux(&u, &path);
        let ratio = cc::trace_norm_ratio(&u, &f).unwrap();
        assert!(ratio.is_finite() && ratio > 0.0 && ratio < 20.0, "{ratio}");
    }
}

#[test]
fn block_bases_do_not_depend_on_scattering_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let path = cc::crossover_path(1, 0).unwrap();
    let a = CcFlux::new(
        Arc::new(CcUnitary::new(&CCModelSpec::random_phases(0.3, zbox(), &mut rng), &tol()).unwrap()),
        path.clone(),
    );
    let b = CcFlux::new(
        Arc::new(CcUnitary::new(&CCModelSpec::uniform(Scatter::critical()), &tol()).unwrap()),
        path,
    );
    // the core grows with the explicit window; the bases do not change
    let small = b.core_labels();
    assert!(small.iter().all(|z| a.core_labels().contains(z)));
    for z in a.core_labels() {
        assert_eq!(a.basis(&z), b.basis(&z));
    }
}

#[test]
fn cc_flux_is_block_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let u = CcUnitary::new(&CCModelSpec::random_phases(0.5, zbox(), &mut rng), &tol()).unwrap();
    let f = cc::cc_flux(&u, &cc::crossover_path(1, 0).unwrap());
    let sites = box_sites(&[(-6, 6), (-4, 4)]);
    assert!(flux::verify_flux_action(&f, &sites, 5, &mut rng).unwrap() < 1e-12);
    for z in f.source.core_labels().iter().take(30) {
        let lazy = flux::lazy_block(&*f.source, z).unwrap();
        let closed = f.source.block(z);
        assert!(lattice_flux::linalg::max_abs(&(lazy.phi - closed.phi)) < 1e-12, "{z}");
    }
}

#[test]
fn path_spec_round_trips_through_json() {
    let path = cc::crossover_path(3, -1).unwrap();
    let json = serde_json::to_string(&path).unwrap();
    let back: DualPath = serde_json::from_str(&json).unwrap();
    assert_eq!(back, path);
}
