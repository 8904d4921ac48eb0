use lattice_flux::cc::{self, CCModelSpec, CcUnitary};
use lattice_flux::flux::FluxField;
use lattice_flux::lattice::{Direction, LocalUnitary, Site};
use lattice_flux::shift::{self, ShiftReport};
use lattice_flux::walk::{self, CoinedWalk, LeadSpec, NetworkSpec};
use lattice_flux::Tolerances;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tol() -> Tolerances {
    Tolerances::default()
}

fn run(flux: &FluxField, steps: usize, rng: &mut ChaCha8Rng) -> ShiftReport {
    let kd = shift::extract_kernels(flux, &tol()).unwrap();
    let pu = shift::build_perturbed(flux, &kd, &tol()).unwrap();
    shift::verify_shift_structure(&pu, &kd, steps, 4, rng, &tol()).unwrap()
}

fn lead_flux(net: &NetworkSpec, rng: &mut ChaCha8Rng) -> (CoinedWalk, FluxField) {
    let coin = walk::synthesize_lead_coin(net, &walk::random_background(2, 3, rng), &tol()).unwrap();
    let u = CoinedWalk::new(coin, &tol()).unwrap();
    let f = walk::walk_flux(&u, &walk::lead_projection(net).unwrap()).unwrap();
    (u, f)
}

#[test]
fn bound_function_at_one_half() {
    // sup over (0, 1/2] of g(λ)/λ, evaluated independently on a fine grid
    assert!((shift::bound_constant(0.5) - 2.0414518843273806).abs() < 1e-12);
}

#[test]
fn basic_example_kernels_sit_at_the_boundary() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let (w, p) = walk::basic_example(3, 5, &mut rng);
    let flux = walk::walk_flux(&w, &p).unwrap();
    let kd = shift::extract_kernels(&flux, &tol()).unwrap();
    // n = +1: ker(Φ − I) plays the role of ker(Φ' + I)
    assert!(kd.flipped);
    assert_eq!((kd.ker_minus.len(), kd.ker_plus.len()), (1, 0));
    assert_eq!(kd.ker_minus[0].label, Site::new(&[2]));
    assert!(kd.containment_defect < 1e-12);
}

#[test]
fn basic_example_is_a_shift_over_thirty_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (w, p) = walk::basic_example(2, 4, &mut rng);
    let r = run(&walk::walk_flux(&w, &p).unwrap(), 30, &mut rng);
    assert!(r.passed, "{r:?}");
    assert_eq!((r.multiplicity, r.f_rank), (1, 0));
    assert!(r.correction_trace_norm.unwrap() < 1e-12);
}

#[test]
fn single_outgoing_lead_kernel_is_the_rank_one_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let lead = LeadSpec::outgoing(vec![Site::new(&[0, 0]), Site::new(&[1, 0])], Direction::plus(2));
    let net = NetworkSpec {
        dim: 2,
        leads: vec![lead.clone()],
        boundary: false,
    };
    let (u, flux) = lead_flux(&net, &mut rng);
    let kd = shift::extract_kernels(&flux, &tol()).unwrap();
    assert_eq!((kd.ker_minus.len(), kd.ker_plus.len()), (1, 0));
    let v = u.apply_adjoint(&lead.unit(1)).unwrap();
    assert!((kd.ker_minus[0].state.inner(&v).norm() - 1.0).abs() < 1e-12);
}

#[test]
fn two_incoming_leads_give_multiplicity_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let net = NetworkSpec {
        dim: 2,
        leads: vec![
            LeadSpec::incoming(vec![Site::new(&[0, 0])], Direction::minus(2)),
            LeadSpec::incoming(vec![Site::new(&[2, 1]), Site::new(&[2, 0])], Direction::minus(2)),
        ],
        boundary: false,
    };
    let (_, flux) = lead_flux(&net, &mut rng);
    let r = run(&flux, 30, &mut rng);
    assert!(r.passed, "{r:?}");
    assert_eq!((r.index, r.flipped, r.multiplicity), (-2, false, 2));
    assert!(r.gram_defect < 1e-10);
}

#[test]
fn paired_kernels_give_rank_n_plus() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let (_, flux) = lead_flux(&walk::in_out_network(), &mut rng);
    let r = run(&flux, 10, &mut rng);
    assert!(r.passed, "{r:?}");
    assert_eq!((r.index, r.n_plus, r.f_rank), (0, 1, 1));
    assert!((r.f_trace_norm - 2.0).abs() < 1e-12);
}

#[test]
fn r_path_correction_obeys_the_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    for modulus in [0.05, 0.2, 0.45] {
        let spec = CCModelSpec::random_phases(modulus, [(-8, 8), (-4, 4)], &mut rng);
        let u = CcUnitary::new(&spec, &tol()).unwrap();
        let flux = cc::cc_flux(&u, &cc::horizontal_r_path(0));
        let r = run(&flux, 5, &mut rng);
        assert!(r.passed, "{r:?}");
        assert!((r.phi_lt_norm - modulus).abs() < 1e-10);
        let g = shift::bound_constant(r.phi_lt_norm);
        assert!(r.bound_lhs <= r.phi_lt_norm * g + 1e-12, "{} vs {}", r.bound_lhs, r.phi_lt_norm * g);
        assert!(g <= 3.0);
        // Φ is not trace class along the whole line
        assert_eq!(r.correction_trace_norm, None);
    }
}

#[test]
fn capped_crossover_has_trace_class_correction() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    let path = cc::crossover_path(1, 0).unwrap();
    let spec = cc::anomalous_spec(&CCModelSpec::random_phases(0.2, [(-8, 8), (-4, 4)], &mut rng), &path, 0.25)
        .unwrap();
    let u = CcUnitary::new(&spec, &tol()).unwrap();
    let r = run(&cc::cc_flux(&u, &path), 20, &mut rng);
    assert!(r.passed, "{r:?}");
    assert_eq!(r.multiplicity, 1);
    let tn = r.correction_trace_norm.unwrap();
    assert!(tn.is_finite() && tn > 0.0);
}
