use lattice_flux::flux;
use lattice_flux::lattice::{box_sites, BlockField, Direction, LocalUnitary, Pattern, Region, Site, WindowBasis};
use lattice_flux::linalg::{self, CMat};
use lattice_flux::walk::{self, AdaptedProjection, CoinedWalk, LeadSpec, NetworkSpec, WalkFlux};
use lattice_flux::{Error, Tolerances};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn tol() -> Tolerances {
    Tolerances::default()
}

/// `U*PU − P` from one dense matrix of `U` on `[lo, hi]`, restricted to the
/// internal states of `x`.
fn dense_block(w: &CoinedWalk, p: &AdaptedProjection, lo: i64, hi: i64, x: i64) -> CMat {
    let inner = WindowBasis::new(box_sites(&[(lo, hi)]), 2).unwrap();
    let outer = WindowBasis::new(box_sites(&[(lo - 1, hi + 1)]), 2).unwrap();
    let a = w.matrix_between(&inner, &outer).unwrap();
    let diag = |b: &WindowBasis| {
        linalg::diag_real(
            &(0..b.len())
                .map(|i| {
                    let (s, k) = b.label(i);
                    ((p.mask_at(s) >> k) & 1) as f64
                })
                .collect::<Vec<_>>(),
        )
    };
    let phi = a.adjoint() * diag(&outer) * &a - diag(&inner);
    let i = inner.position(&Site::new(&[x]), 0).unwrap();
    phi.view((i, i), (2, 2)).into_owned()
}

#[test]
fn basic_example_blocks_match_dense_compression() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (w, p) = walk::basic_example(2, 3, &mut rng);
    let flux = walk::walk_flux(&w, &p).unwrap();
    for x in -6..=6 {
        let d = dense_block(&w, &p, -12, 12, x);
        let b = flux.block(&Site::new(&[x])).map(|b| b.phi.clone()).unwrap_or_else(|| CMat::zeros(2, 2));
        assert!(linalg::max_abs(&(d - b)) < 1e-12, "x = {x}");
    }
    // nothing beyond the boundary of the non-commuting region
    assert!(flux.all_blocks().all(|b| b.label.coords()[0].abs() <= 2));
    let cert = flux::certify_isolated(&flux, &tol());
    assert!(cert.ok && cert.trace_class && cert.c == 0.0);
}

#[test]
fn commuting_projection_has_no_flux() {
    let w = CoinedWalk::new(BlockField::constant(1, linalg::identity(2)), &tol()).unwrap();
    let mut p = AdaptedProjection::empty(1);
    p.push_tail(Region::everything(1), walk::bit(Direction::plus(1)));
    let flux = walk::walk_flux(&w, &p).unwrap();
    assert_eq!(flux.max_block_norm(), 0.0);
    assert_eq!(flux::index_by_kernels(&flux, &tol()).unwrap().index, 0);
}

#[test]
fn homogeneous_projection_has_index_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let w = CoinedWalk::new(walk::random_background(1, 3, &mut rng), &tol()).unwrap();
    let mut p = AdaptedProjection::empty(1);
    p.push_tail(Region::everything(1), walk::bit(Direction::minus(1)));
    let r = walk::walk_index(&w, &p, &tol()).unwrap();
    assert_eq!(r.index, 0);
    assert_eq!(r.rank_formula, Some(0));
}

#[test]
fn single_outgoing_lead_flux_is_rank_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let lead = LeadSpec::outgoing(vec![Site::new(&[0, 0])], Direction::plus(2));
    let net = NetworkSpec {
        dim: 2,
        leads: vec![lead],
        boundary: false,
    };
    let coin = walk::synthesize_lead_coin(&net, &walk::random_background(2, 3, &mut rng), &tol()).unwrap();
    // coin keeps the lead direction along the lead
    for n in 0..6 {
        let c = coin.at(&Site::new(&[0, n]));
        assert!((c[(2, 2)].norm() - 1.0).abs() < 1e-12);
    }
    let r = walk::lead_flux_index(&net, &coin, &tol()).unwrap();
    assert_eq!(r.report.index, 1);
    assert!(r.rank_one_defect.unwrap() < 1e-12);
    assert!((r.report.odd_trace_at(0).unwrap().re - 1.0).abs() < 1e-12);
}

#[test]
fn single_incoming_lead_flux_is_minus_rank_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let lead = LeadSpec::incoming(vec![Site::new(&[1, 0]), Site::new(&[0, 0])], Direction::minus(1));
    let net = NetworkSpec {
        dim: 2,
        leads: vec![lead],
        boundary: false,
    };
    let coin = walk::synthesize_lead_coin(&net, &walk::random_background(2, 3, &mut rng), &tol()).unwrap();
    let r = walk::lead_flux_index(&net, &coin, &tol()).unwrap();
    assert_eq!(r.report.index, -1);
    assert!(r.rank_one_defect.unwrap() < 1e-12);
}

#[test]
fn two_plus_two_random_leads_cancel() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..10 {
        let net = walk::random_network([(0, 19), (0, 19)], 2, 2, 8, &mut rng);
        let bg = walk::random_background_in(&[(-1, 20), (-1, 20)], &mut rng);
        let coin = walk::synthesize_lead_coin(&net, &bg, &tol()).unwrap();
        let r = walk::lead_flux_index(&net, &coin, &tol()).unwrap();
        assert_eq!(r.report.index, 0);
    }
}

#[test]
fn tangential_crossing_names_the_collision() {
    let net = NetworkSpec {
        dim: 2,
        leads: vec![
            LeadSpec::outgoing(vec![Site::new(&[0, 0]), Site::new(&[1, 0])], Direction::plus(1)),
            LeadSpec::outgoing(vec![Site::new(&[3, 1]), Site::new(&[3, 0])], Direction::plus(1)),
        ],
        boundary: false,
    };
    let err = net.validate().unwrap_err();
    assert!(matches!(err, Error::TangentialCrossing { .. }));
    let msg = err.to_string();
    assert!(msg.contains("(4, 0)") && msg.contains("+1"), "{msg}");
}

#[test]
fn wandering_fails_for_a_trapped_state() {
    // coin swapping ±1 at 0 and 1 traps |1,+1⟩ in a two-step loop
    let mut coin = BlockField::constant(1, linalg::identity(2));
    let swap = CMat::from_row_slice(2, 2, &[linalg::ZERO, linalg::ONE, linalg::ONE, linalg::ZERO]);
    coin.set(Site::new(&[0]), swap.clone());
    coin.set(Site::new(&[1]), swap);
    let w = CoinedWalk::new(coin, &tol()).unwrap();
    let seed = lattice_flux::LatticeState::basis(Site::new(&[1]), 0, 2);
    let r = walk::verify_wandering(&w, &seed, 5, 1e-12).unwrap();
    assert!(!r.ok);
    assert_eq!(r.worst_k, 2);
}

#[test]
fn incoming_lead_transport_backwards_in_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let net = walk::in_out_network();
    let coin = walk::synthesize_lead_coin(&net, &walk::random_background(2, 3, &mut rng), &tol()).unwrap();
    let u = CoinedWalk::new(coin, &tol()).unwrap();
    let r = walk::verify_lead_transport(&u, &net.leads[0], 50).unwrap();
    assert!(r.max_defect < 1e-12 && r.max_self_overlap < 1e-12);
}

#[test]
fn finite_window_perturbation_keeps_index() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let (w, p) = walk::basic_example(2, 3, &mut rng);
    let mut coin = w.coin().clone();
    for x in -2..=2 {
        let s = Site::new(&[x]);
        let h = linalg::random_hermitian(2, 0.1, &mut rng);
        coin.set(s.clone(), coin.at(&s) * linalg::exp_i_hermitian(&h, 1.0));
    }
    let w2 = CoinedWalk::new(coin, &tol()).unwrap();
    assert_eq!(walk::walk_index(&w2, &p, &tol()).unwrap().index, 1);
}

#[test]
fn gap_closing_family_is_flagged() {
    // tail coin rotates from the identity to the swap of ±1 and beyond
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let (w, p) = walk::basic_example(2, 3, &mut rng);
    let base = w.coin().clone();
    let family = |t: f64| {
        let mut coin = base.clone();
        let r = linalg::rotation(2, 0, 1, std::f64::consts::PI * t);
        coin.field.tail.insert(
            0,
            (Region::everything(1).with_axis(1, Some(4), None), Pattern::Constant(r)),
        );
        let w = CoinedWalk::new(coin, &tol())?;
        walk::walk_flux(&w, &p)
    };
    let steps = flux::index_stability_probe(family, 20, &tol());
    let flagged: Vec<f64> = steps.iter().filter(|s| !s.certified).map(|s| s.t).collect();
    assert_eq!(flagged, vec![0.5]);
    assert!(steps[10].note.as_deref().unwrap().contains("index undefined at infinity"));
    assert!(steps.iter().filter(|s| s.certified).all(|s| s.index.is_some()));
    assert_eq!(steps[0].index, Some(1));
}

#[test]
fn blockwise_action_matches_lazy_action() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let net = walk::two_outgoing_network();
    let coin = walk::synthesize_lead_coin(&net, &walk::random_background(2, 3, &mut rng), &tol()).unwrap();
    let w = Arc::new(CoinedWalk::new(coin, &tol()).unwrap());
    let src = WalkFlux::new(w, walk::lead_projection(&net).unwrap()).unwrap();
    let flux = flux::FluxField::build(Arc::new(src));
    let sites = box_sites(&[(-5, 5), (-5, 5)]);
    assert!(flux::verify_flux_action(&flux, &sites, 5, &mut rng).unwrap() < 1e-12);
    for label in flux.source.core_labels().iter().take(20) {
        let lazy = flux::lazy_block(&*flux.source, label).unwrap();
        let closed = flux.source.block(label);
        assert!(linalg::max_abs(&(lazy.phi - closed.phi)) < 1e-12);
    }
}
