//! Perturbing `U` into `Û = S ⊕ Ũ` with a bilateral shift `S` of
//! multiplicity `|ind Φ|` and `[Ũ, P] = 0`.
//!
//! The construction works with `Φ' = −Φ`, `P' = P⊥` when the index is
//! positive, so that `ind Φ' < 0` and the wandering subspace `L` sits in
//! `ker(Φ' + I) ⊂ Ran P'`. Everything is block local except the finite pairing
//! `V` between `L⊥` and `ker(Φ' − I)`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Mutex;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flux::{self, BlockSource, FluxBlock, FluxField};
use crate::lattice::{box_sites, LatticeState, LocalUnitary, Site};
use crate::linalg::{self, CMat, CVec, C64, ZERO};
use crate::tolerance::Tolerances;

#[derive(Clone, Debug)]
pub struct KernelVector {
    pub label: Site,
    /// Coefficients in the block basis.
    pub coeffs: CVec,
    pub state: LatticeState,
}

#[derive(Clone, Debug)]
pub struct KernelData {
    /// `ind Φ` of the original pair.
    pub index: i64,
    /// Whether `P' = P⊥` is in use.
    pub flipped: bool,
    /// Orthonormal basis of `ker(Φ' + I) ⊂ Ran P'`, in label order.
    pub ker_minus: Vec<KernelVector>,
    /// Orthonormal basis of `ker(Φ' − I) ⊂ Ran P'⊥`, in label order.
    pub ker_plus: Vec<KernelVector>,
    /// Largest of `‖P'⊥v‖`, `‖P'Uv‖` over `ker_minus` and `‖P'v‖`, `‖P'⊥Uv‖`
    /// over `ker_plus`.
    pub containment_defect: f64,
}

impl KernelData {
    /// `|n|`.
    pub fn multiplicity(&self) -> usize {
        self.index.unsigned_abs() as usize
    }

    /// The first `|n|` vectors of `ker(Φ' + I)`.
    pub fn l(&self) -> &[KernelVector] {
        &self.ker_minus[..self.multiplicity()]
    }

    pub fn l_perp(&self) -> &[KernelVector] {
        &self.ker_minus[self.multiplicity()..]
    }
}

fn in_p_prime(src: &dyn BlockSource, flipped: bool, s: &Site, k: usize) -> bool {
    src.in_projection(s, k) != flipped
}

fn project_p_prime(src: &dyn BlockSource, flipped: bool, psi: &LatticeState, keep: bool) -> LatticeState {
    let mut out = LatticeState::zero(psi.dim(), psi.n_internal());
    for (s, v) in psi.iter() {
        for (k, a) in v.iter().enumerate() {
            if *a != ZERO && in_p_prime(src, flipped, s, k) == keep {
                out.add(s, k, *a);
            }
        }
    }
    out
}

pub fn extract_kernels(flux: &FluxField, tol: &Tolerances) -> Result<KernelData> {
    let report = flux::index_by_kernels(flux, tol)?;
    let flipped = report.index > 0;
    let src = &*flux.source;
    let u = src.unitary();
    let (dim, n) = (flux.dim(), flux.n_internal());
    let mut ker_minus = Vec::new();
    let mut ker_plus = Vec::new();
    for b in &flux.blocks {
        let spec = flux::block_spectrum(b, tol)?;
        // eigenvalue −1 of Φ' is −1 of Φ, or +1 when flipped
        let (minus, plus) = if flipped {
            (&spec.plus, &spec.minus)
        } else {
            (&spec.minus, &spec.plus)
        };
        for (list, target) in [(minus, &mut ker_minus), (plus, &mut ker_plus)] {
            for &i in list {
                let coeffs: CVec = spec.eigen.vectors.column(i).into_owned();
                target.push(KernelVector {
                    label: b.label.clone(),
                    state: b.embed(&coeffs, dim, n),
                    coeffs,
                });
            }
        }
    }
    let mut defect: f64 = 0.0;
    for v in &ker_minus {
        defect = defect.max(project_p_prime(src, flipped, &v.state, false).norm());
        defect = defect.max(project_p_prime(src, flipped, &u.apply(&v.state)?, true).norm());
    }
    for v in &ker_plus {
        defect = defect.max(project_p_prime(src, flipped, &v.state, true).norm());
        defect = defect.max(project_p_prime(src, flipped, &u.apply(&v.state)?, false).norm());
    }
    if defect > tol.verify {
        return Err(Error::Verification(format!(
            "kernel vectors leave their spectral subspaces (defect {defect:.3e})"
        )));
    }
    let kd = KernelData {
        index: report.index,
        flipped,
        ker_minus,
        ker_plus,
        containment_defect: defect,
    };
    if kd.ker_minus.len() as i64 - kd.ker_plus.len() as i64 != report.index.abs() {
        return Err(Error::Inconsistent("kernel dimensions do not match the index".into()));
    }
    Ok(kd)
}

/// Per-block data of the construction.
#[derive(Clone, Debug)]
struct BlockX {
    /// `Q_L + U₀Q₀` on the block.
    x: CMat,
    /// `(U₀ − I)Q₀`.
    deviation: CMat,
    w_defect: f64,
    u0_defect: f64,
    phi_lt: f64,
}

fn block_x(b: &FluxBlock, q_l: &CMat, tol: &Tolerances) -> Result<BlockX> {
    let n = b.p.len();
    let id = linalg::identity(n);
    let phi = &b.phi;
    let p = b.p_matrix();
    let phi2 = phi * phi;
    let w = &id - &phi2 - linalg::commutator(&p, phi);
    let w_defect = linalg::max_abs(&(w.adjoint() * &w - (&id - &phi2)));
    let spec = flux::block_spectrum(b, tol)?;
    let interior: BTreeSet<usize> = spec.interior.iter().copied().collect();
    let q0 = spec.eigen.functional(|k, _| interior.contains(&k).then_some(C64::new(1.0, 0.0)));
    let inv_sqrt = spec.eigen.functional(|k, l| {
        interior
            .contains(&k)
            .then(|| C64::new(1.0 / (1.0 - l * l).max(tol.sqrt_floor).sqrt(), 0.0))
    });
    let u0q0 = &w * inv_sqrt;
    let u0_defect = linalg::max_abs(&(u0q0.adjoint() * &u0q0 - &q0))
        .max(linalg::max_abs(&(&q0 * &u0q0 - &u0q0)));
    let phi_lt = interior
        .iter()
        .map(|&k| spec.eigen.values[k].abs())
        .fold(0.0, f64::max);
    if w_defect > tol.verify || u0_defect > tol.verify {
        return Err(Error::Verification(format!(
            "block {}: W*W = I − Φ² defect {w_defect:.3e}, U₀ defect {u0_defect:.3e}",
            b.label
        )));
    }
    Ok(BlockX {
        x: q_l + &u0q0,
        deviation: &u0q0 - &q0,
        w_defect,
        u0_defect,
        phi_lt,
    })
}

/// `Û = U X` with `X = Q_L + V Q_{L⊥} + V* Q_+ + U₀ Q₀`, where `V` maps the
/// `i`-th vector of `L⊥` to the `i`-th vector of `ker(Φ' − I)`.
pub struct PerturbedUnitary {
    flux: FluxField,
    flipped: bool,
    core: BTreeMap<Site, BlockX>,
    lazy: Mutex<HashMap<Site, Option<CMat>>>,
    pairs: Vec<(LatticeState, LatticeState)>,
    l: Vec<LatticeState>,
    tol: Tolerances,
}

impl std::fmt::Debug for PerturbedUnitary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PerturbedUnitary")
            .field("flux", &self.flux)
            .field("flipped", &self.flipped)
            .field("pairs", &self.pairs.len())
            .field("l", &self.l.len())
            .finish()
    }
}

pub fn build_perturbed(flux: &FluxField, kd: &KernelData, tol: &Tolerances) -> Result<PerturbedUnitary> {
    let mut q_l: BTreeMap<Site, CMat> = BTreeMap::new();
    for v in kd.l() {
        let m = q_l
            .entry(v.label.clone())
            .or_insert_with(|| CMat::zeros(v.coeffs.len(), v.coeffs.len()));
        *m += &v.coeffs * v.coeffs.adjoint();
    }
    let mut core = BTreeMap::new();
    for b in flux.all_blocks() {
        let n = b.p.len();
        let ql = q_l.get(&b.label).cloned().unwrap_or_else(|| CMat::zeros(n, n));
        core.insert(b.label.clone(), block_x(b, &ql, tol)?);
    }
    let pairs = kd
        .l_perp()
        .iter()
        .zip(&kd.ker_plus)
        .map(|(a, b)| (a.state.clone(), b.state.clone()))
        .collect();
    Ok(PerturbedUnitary {
        flux: flux.clone(),
        flipped: kd.flipped,
        core,
        lazy: Mutex::new(HashMap::new()),
        pairs,
        l: kd.l().iter().map(|v| v.state.clone()).collect(),
        tol: *tol,
    })
}

impl PerturbedUnitary {
    pub fn base(&self) -> &dyn LocalUnitary {
        self.flux.source.unitary()
    }

    pub fn flux(&self) -> &FluxField {
        &self.flux
    }

    pub fn l(&self) -> &[LatticeState] {
        &self.l
    }

    pub fn flipped(&self) -> bool {
        self.flipped
    }

    /// `X` on the block `label`, `None` for the identity.
    fn x_of(&self, label: &Site) -> Option<CMat> {
        if let Some(b) = self.core.get(label) {
            return Some(b.x.clone());
        }
        let mut cache = self.lazy.lock().unwrap();
        if let Some(x) = cache.get(label) {
            return x.clone();
        }
        let b = self.flux.source.block(label);
        let x = if b.is_zero() {
            None
        } else {
            let n = b.p.len();
            Some(
                block_x(&b, &CMat::zeros(n, n), &self.tol)
                    .expect("blocks outside the core have norm below one")
                    .x,
            )
        };
        cache.insert(label.clone(), x.clone());
        x
    }

    /// `Xψ`, or `X*ψ` when `adjoint`.
    pub fn apply_x(&self, psi: &LatticeState, adjoint: bool) -> LatticeState {
        let src = &*self.flux.source;
        let mut labels = BTreeSet::new();
        for (s, v) in psi.iter() {
            for k in 0..v.len() {
                labels.insert(src.label_of(s, k));
            }
        }
        let mut out = LatticeState::zero(psi.dim(), psi.n_internal());
        for label in labels {
            let basis = src.basis(&label);
            let v = CVec::from_iterator(basis.len(), basis.iter().map(|(s, k)| psi.amplitude(s, *k)));
            let w = match self.x_of(&label) {
                Some(x) if adjoint => x.adjoint() * v,
                Some(x) => x * v,
                None => v,
            };
            for ((s, k), a) in basis.iter().zip(w.iter()) {
                if *a != ZERO {
                    out.add(s, *k, *a);
                }
            }
        }
        for (a, b) in &self.pairs {
            out.axpy(b.inner(psi), a);
            out.axpy(a.inner(psi), b);
        }
        out.prune_exact();
        out
    }

    /// `F` on the span of the paired vectors, in the basis `l⊥_1, q_1, …`.
    pub fn finite_rank_part(&self) -> CMat {
        let m = 2 * self.pairs.len();
        let mut f = CMat::zeros(m, m);
        for i in 0..self.pairs.len() {
            let (a, b) = (2 * i, 2 * i + 1);
            f[(a, a)] = C64::new(-1.0, 0.0);
            f[(b, b)] = C64::new(-1.0, 0.0);
            f[(a, b)] = C64::new(1.0, 0.0);
            f[(b, a)] = C64::new(1.0, 0.0);
        }
        f
    }

    /// `‖(U₀ − I)Q₀‖` over the stored blocks and `‖Φ_<‖`.
    pub fn bound_terms(&self) -> (f64, f64) {
        let lhs = self
            .core
            .values()
            .map(|b| linalg::op_norm(&b.deviation))
            .fold(0.0, f64::max);
        let phi_lt = self.core.values().map(|b| b.phi_lt).fold(0.0, f64::max);
        (lhs, phi_lt)
    }

    fn worst_block_defects(&self) -> (f64, f64) {
        self.core.values().fold((0.0, 0.0), |(w, u), b| {
            (f64::max(w, b.w_defect), f64::max(u, b.u0_defect))
        })
    }

    /// `‖U − Û‖₁` when `Φ` is trace class.
    pub fn correction_trace_norm(&self) -> Option<f64> {
        if !self.flux.is_trace_class(&self.tol) {
            return None;
        }
        let blocks: f64 = self
            .core
            .values()
            .map(|b| linalg::trace_norm(&b.deviation))
            .fold(0.0, |a, b| a + b);
        Some(blocks + linalg::trace_norm(&self.finite_rank_part()))
    }
}

impl LocalUnitary for PerturbedUnitary {
    fn dim(&self) -> usize {
        self.flux.dim()
    }

    fn n_internal(&self) -> usize {
        self.flux.n_internal()
    }

    fn apply(&self, psi: &LatticeState) -> Result<LatticeState> {
        self.base().apply(&self.apply_x(psi, false))
    }

    fn apply_adjoint(&self, psi: &LatticeState) -> Result<LatticeState> {
        Ok(self.apply_x(&self.base().apply_adjoint(psi)?, true))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ShiftReport {
    pub index: i64,
    pub flipped: bool,
    pub multiplicity: usize,
    /// `dim ker(Φ' − I)`.
    pub n_plus: usize,
    pub steps: usize,
    /// `max |⟨Û^k e_i, Û^l e_j⟩ − δ_kl δ_ij|`, `|k|, |l| ≤ K`.
    pub gram_defect: f64,
    /// `max |⟨e_i, Û^k e_j⟩|`, `1 ≤ k ≤ K`.
    pub wandering_defect: f64,
    /// `‖[Û(I − Q_L), P']ψ‖` on random states orthogonal to `⊕ Û^k L`.
    pub commutator_defect: f64,
    /// `‖Û*Ûψ − ψ‖` and `‖ÛÛ*ψ − ψ‖` on random states.
    pub unitarity_defect: f64,
    /// `‖P'ÛP'⊥ψ‖` on random states.
    pub backflow_defect: f64,
    pub w_identity_defect: f64,
    pub u0_unitarity_defect: f64,
    pub kernel_containment_defect: f64,
    /// `‖U*Û − I − F‖`.
    pub bound_lhs: f64,
    /// `‖Φ_<‖`.
    pub phi_lt_norm: f64,
    pub f_rank: usize,
    pub f_trace_norm: f64,
    pub correction_trace_norm: Option<f64>,
    pub passed: bool,
}

/// Box of sites around the nonzero flux blocks.
fn probe_sites(flux: &FluxField) -> Vec<Site> {
    let r = flux::support_box(flux).unwrap_or_else(|| vec![(0, 0); flux.dim()]);
    box_sites(&r.iter().map(|&(a, b)| (a - 2, b + 2)).collect::<Vec<_>>())
}

pub fn verify_shift_structure<R: Rng + ?Sized>(
    pu: &PerturbedUnitary,
    kd: &KernelData,
    steps: usize,
    samples: usize,
    rng: &mut R,
    tol: &Tolerances,
) -> Result<ShiftReport> {
    let src = &*pu.flux.source;
    let m = kd.multiplicity();
    let k = steps as i64;
    // orbit[i][k + K] = Û^k e_i
    let mut orbits: Vec<Vec<LatticeState>> = Vec::with_capacity(m);
    for e in pu.l() {
        let mut fwd = vec![e.clone()];
        for _ in 0..k {
            let next = pu.apply(fwd.last().unwrap())?;
            fwd.push(next);
        }
        let mut back = vec![e.clone()];
        for _ in 0..k {
            let next = pu.apply_adjoint(back.last().unwrap())?;
            back.push(next);
        }
        let mut orbit: Vec<LatticeState> = back.into_iter().skip(1).rev().collect();
        orbit.extend(fwd);
        orbits.push(orbit);
    }
    let mut gram_defect: f64 = 0.0;
    let mut wandering: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            for a in 0..orbits[i].len() {
                for b in 0..orbits[j].len() {
                    let g = orbits[i][a].inner(&orbits[j][b]);
                    let want = if i == j && a == b { 1.0 } else { 0.0 };
                    gram_defect = gram_defect.max((g - C64::new(want, 0.0)).norm());
                    if a == steps && b > steps {
                        wandering = wandering.max(g.norm());
                    }
                }
            }
        }
    }
    let span: Vec<&LatticeState> = orbits.iter().flatten().collect();
    let sites = probe_sites(&pu.flux);
    let (dim, n) = (pu.flux.dim(), pu.flux.n_internal());
    let mut commutator: f64 = 0.0;
    let mut unitarity: f64 = 0.0;
    let mut backflow: f64 = 0.0;
    let remove_l = |psi: &LatticeState| {
        let mut out = psi.clone();
        for e in pu.l() {
            out.axpy(-e.inner(psi), e);
        }
        out
    };
    for _ in 0..samples {
        let mut psi = LatticeState::random(&sites, dim, n, rng);
        for v in &span {
            let c = v.inner(&psi);
            psi.axpy(-c, v);
        }
        let p_psi = project_p_prime(src, pu.flipped, &psi, true);
        let lhs = pu.apply(&remove_l(&p_psi))?;
        let rhs = project_p_prime(src, pu.flipped, &pu.apply(&remove_l(&psi))?, true);
        commutator = commutator.max(lhs.sub(&rhs).norm());

        let phi = LatticeState::random(&sites, dim, n, rng);
        let back = pu.apply_adjoint(&pu.apply(&phi)?)?;
        let forth = pu.apply(&pu.apply_adjoint(&phi)?)?;
        unitarity = unitarity.max(back.sub(&phi).norm()).max(forth.sub(&phi).norm());
        let perp = project_p_prime(src, pu.flipped, &phi, false);
        backflow = backflow.max(project_p_prime(src, pu.flipped, &pu.apply(&perp)?, true).norm());
    }
    let (w_def, u0_def) = pu.worst_block_defects();
    let (lhs, phi_lt) = pu.bound_terms();
    let f = pu.finite_rank_part();
    let f_rank = linalg::numerical_rank(&f, 1e-9);
    let f_trace_norm = linalg::trace_norm(&f);
    let v = tol.verify;
    let passed = gram_defect <= v
        && wandering <= v
        && commutator <= v
        && unitarity <= v
        && backflow <= v
        && lhs <= 3.0 * phi_lt + v
        && f_rank == kd.ker_plus.len();
    Ok(ShiftReport {
        index: kd.index,
        flipped: kd.flipped,
        multiplicity: m,
        n_plus: kd.ker_plus.len(),
        steps,
        gram_defect,
        wandering_defect: wandering,
        commutator_defect: commutator,
        unitarity_defect: unitarity,
        backflow_defect: backflow,
        w_identity_defect: w_def,
        u0_unitarity_defect: u0_def,
        kernel_containment_defect: kd.containment_defect,
        bound_lhs: lhs,
        phi_lt_norm: phi_lt,
        f_rank,
        f_trace_norm,
        correction_trace_norm: pu.correction_trace_norm(),
        passed,
    })
}

/// `sup_{0 ≤ λ ≤ s} g(λ)/λ` for the bound `‖(U₀ − I)Q₀‖ ≤ g(‖Φ_<‖)` with
/// `g(λ) = (λ + λ² + λ²/(1 + √(1−λ²))) / √(1−λ²)`, sampled on a grid.
pub fn bound_constant(s: f64) -> f64 {
    (1..=1000)
        .map(|i| {
            let l = s * i as f64 / 1000.0;
            let root = (1.0 - l * l).sqrt();
            (l + l * l + l * l / (1.0 + root)) / root / l
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_flux_gives_unchanged_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = walk::CoinedWalk::new(
            walk::random_background(1, 2, &mut rng),
            &Tolerances::default(),
        )
        .unwrap();
        let p = walk::AdaptedProjection::empty(1);
        let flux = walk::walk_flux(&w, &p).unwrap();
        // index 0 still yields a (trivial) construction
        let kd = extract_kernels(&flux, &Tolerances::default()).unwrap();
        assert_eq!(kd.multiplicity(), 0);
        let pu = build_perturbed(&flux, &kd, &Tolerances::default()).unwrap();
        let psi = LatticeState::random(&box_sites(&[(-3, 3)]), 1, 2, &mut rng);
        let a = pu.apply(&psi).unwrap();
        let b = w.apply(&psi).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-15);
        assert_eq!(pu.finite_rank_part().nrows(), 0);
    }

    #[test]
    fn basic_example_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (w, p) = walk::basic_example(2, 4, &mut rng);
        let flux = walk::walk_flux(&w, &p).unwrap();
        let tol = Tolerances::default();
        let kd = extract_kernels(&flux, &tol).unwrap();
        assert!(kd.flipped);
        assert_eq!((kd.ker_minus.len(), kd.ker_plus.len()), (1, 0));
        assert_eq!(kd.ker_minus[0].label, Site::new(&[1]));
        let pu = build_perturbed(&flux, &kd, &tol).unwrap();
        let r = verify_shift_structure(&pu, &kd, 10, 5, &mut rng, &tol).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn bound_constant_below_three_on_half() {
        let c = bound_constant(0.5);
        assert!(c > 1.0 && c <= 3.0, "{c}");
    }
}
