//! Block-local flux operators `Φ = U*PU − P` and their index.
//!
//! Every projection handled here is diagonal in the lattice basis and `Φ`
//! decomposes into small blocks labelled by sites, so kernels, traces and
//! norms are all computed one block at a time.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{box_sites, LatticeState, LocalUnitary, Site, WindowBasis};
use crate::linalg::{self, CMat, CVec, HermitianEigen, C64, ZERO};
use crate::tolerance::Tolerances;

/// Blocks whose entries are all below this are not stored.
pub const ZERO_BLOCK: f64 = 1e-14;

/// `Φ` restricted to one invariant subspace, together with the diagonal of
/// `P` there.
#[derive(Clone, Debug)]
pub struct FluxBlock {
    pub label: Site,
    pub basis: Vec<(Site, usize)>,
    pub phi: CMat,
    pub p: Vec<bool>,
}

impl FluxBlock {
    pub fn p_matrix(&self) -> CMat {
        linalg::diag_real(&self.p.iter().map(|&b| f64::from(u8::from(b))).collect::<Vec<_>>())
    }

    pub fn norm(&self) -> f64 {
        linalg::op_norm(&self.phi)
    }

    pub fn is_zero(&self) -> bool {
        linalg::max_abs(&self.phi) <= ZERO_BLOCK
    }

    pub fn restrict(&self, psi: &LatticeState) -> CVec {
        CVec::from_iterator(
            self.basis.len(),
            self.basis.iter().map(|(s, k)| psi.amplitude(s, *k)),
        )
    }

    pub fn embed(&self, v: &CVec, dim: usize, n_internal: usize) -> LatticeState {
        let mut out = LatticeState::zero(dim, n_internal);
        for ((s, k), a) in self.basis.iter().zip(v.iter()) {
            if *a != ZERO {
                out.add(s, *k, *a);
            }
        }
        out
    }
}

/// A unitary and a basis-diagonal projection, with the block structure of
/// the resulting flux.
pub trait BlockSource: Send + Sync {
    fn dim(&self) -> usize;

    fn n_internal(&self) -> usize;

    fn unitary(&self) -> &dyn LocalUnitary;

    fn in_projection(&self, site: &Site, k: usize) -> bool;

    /// Label of the block containing the basis state `(site, k)`.
    fn label_of(&self, site: &Site, k: usize) -> Site;

    fn basis(&self, label: &Site) -> Vec<(Site, usize)>;

    /// Closed-form block; must agree with [`lazy_block`].
    fn block(&self, label: &Site) -> FluxBlock;

    /// Finite set of labels outside of which every block is a translate of
    /// one in [`BlockSource::exterior_labels`].
    fn core_labels(&self) -> Vec<Site>;

    fn exterior_labels(&self) -> Vec<Site>;

    /// `rank P̂ − rank P` on the block, when the geometry defines it.
    fn rank_difference(&self, _label: &Site) -> Option<i64> {
        None
    }

    /// Stable identifier used in reports.
    fn describe(&self) -> String;
}

pub fn project(src: &dyn BlockSource, psi: &LatticeState) -> LatticeState {
    let mut out = LatticeState::zero(psi.dim(), psi.n_internal());
    for (s, v) in psi.iter() {
        for (k, a) in v.iter().enumerate() {
            if *a != ZERO && src.in_projection(s, k) {
                out.add(s, k, *a);
            }
        }
    }
    out
}

pub fn project_complement(src: &dyn BlockSource, psi: &LatticeState) -> LatticeState {
    psi.sub(&project(src, psi))
}

/// `U*PUψ − Pψ` by lazy application.
pub fn apply_flux_lazily(src: &dyn BlockSource, psi: &LatticeState) -> Result<LatticeState> {
    let u = src.unitary();
    let upu = u.apply_adjoint(&project(src, &u.apply(psi)?))?;
    let mut out = upu.sub(&project(src, psi));
    out.prune_exact();
    Ok(out)
}

/// A block computed from lazy application of `U` and `U*` only.
pub fn lazy_block(src: &dyn BlockSource, label: &Site) -> Result<FluxBlock> {
    let basis = src.basis(label);
    let n = basis.len();
    let mut phi = CMat::zeros(n, n);
    for (j, (s, k)) in basis.iter().enumerate() {
        let e = LatticeState::basis(s.clone(), *k, src.n_internal());
        let out = apply_flux_lazily(src, &e)?;
        for (i, (t, l)) in basis.iter().enumerate() {
            phi[(i, j)] = out.amplitude(t, *l);
        }
        // nothing may leak out of the block
        let leak: f64 = out
            .iter()
            .flat_map(|(t, v)| v.iter().enumerate().map(move |(l, a)| (t, l, a)))
            .filter(|(t, l, _)| !basis.iter().any(|(bs, bk)| bs == *t && bk == l))
            .map(|(_, _, a)| a.norm())
            .fold(0.0, f64::max);
        if leak > 1e-10 {
            return Err(Error::Verification(format!(
                "flux leaks out of block {label} (amplitude {leak:.3e})"
            )));
        }
    }
    let p = basis.iter().map(|(s, k)| src.in_projection(s, *k)).collect();
    Ok(FluxBlock {
        label: label.clone(),
        basis,
        phi,
        p,
    })
}

/// Outcome of the isolation test for the eigenvalue 1 of `Φ²`.
#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub ok: bool,
    /// Largest `ℓ∞` norm of a label whose block exceeds `c`.
    pub radius: i64,
    /// Supremum of block norms over the exterior.
    pub c: f64,
    /// Exterior label attaining `c`.
    pub witness: Option<Site>,
    /// Every exterior block vanishes, so `Φ` has finitely many nonzero
    /// blocks.
    pub trace_class: bool,
}

/// `Φ` as a block field: nonzero blocks of the core plus representatives of
/// the exterior.
#[derive(Clone)]
pub struct FluxField {
    pub source: Arc<dyn BlockSource>,
    pub blocks: Vec<FluxBlock>,
    pub exterior: Vec<FluxBlock>,
    pub core_size: usize,
    index: BTreeMap<Site, usize>,
}

impl std::fmt::Debug for FluxField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FluxField")
            .field("source", &self.source.describe())
            .field("blocks", &self.blocks.len())
            .field("exterior", &self.exterior.len())
            .finish()
    }
}

impl FluxField {
    pub fn build(source: Arc<dyn BlockSource>) -> Self {
        let core = source.core_labels();
        let core_size = core.len();
        let mut blocks: Vec<FluxBlock> = core
            .par_iter()
            .map(|l| source.block(l))
            .filter(|b| !b.is_zero())
            .collect();
        blocks.sort_by(|a, b| a.label.cmp(&b.label));
        let mut exterior: Vec<FluxBlock> = source
            .exterior_labels()
            .par_iter()
            .map(|l| source.block(l))
            .filter(|b| !b.is_zero())
            .collect();
        exterior.sort_by(|a, b| a.label.cmp(&b.label));
        let index = blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (b.label.clone(), i))
            .collect();
        FluxField {
            source,
            blocks,
            exterior,
            core_size,
            index,
        }
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn n_internal(&self) -> usize {
        self.source.n_internal()
    }

    pub fn block(&self, label: &Site) -> Option<&FluxBlock> {
        self.index.get(label).map(|&i| &self.blocks[i])
    }

    /// Every stored block, core then exterior.
    pub fn all_blocks(&self) -> impl Iterator<Item = &FluxBlock> {
        self.blocks.iter().chain(&self.exterior)
    }

    pub fn max_block_norm(&self) -> f64 {
        self.all_blocks().map(FluxBlock::norm).fold(0.0, f64::max)
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.all_blocks()
            .map(|b| linalg::max_abs(&b.phi))
            .fold(0.0, f64::max)
    }

    pub fn is_trace_class(&self, tol: &Tolerances) -> bool {
        self.exterior
            .iter()
            .all(|b| linalg::max_abs(&b.phi) <= tol.exact)
    }

    /// `Φψ` from the stored blocks, evaluating labels outside the core on
    /// demand.
    pub fn apply(&self, psi: &LatticeState) -> LatticeState {
        let src = &*self.source;
        let mut labels: BTreeMap<Site, ()> = BTreeMap::new();
        for (s, v) in psi.iter() {
            for k in 0..v.len() {
                labels.insert(src.label_of(s, k), ());
            }
        }
        let mut out = LatticeState::zero(psi.dim(), psi.n_internal());
        for label in labels.keys() {
            let owned;
            let block = match self.block(label) {
                Some(b) => b,
                None => {
                    owned = src.block(label);
                    &owned
                }
            };
            let w = &block.phi * block.restrict(psi);
            out.axpy(C64::new(1.0, 0.0), &block.embed(&w, psi.dim(), psi.n_internal()));
        }
        out.prune_exact();
        out
    }
}

pub fn build_flux(source: Arc<dyn BlockSource>) -> FluxField {
    FluxField::build(source)
}

pub fn certify_isolated(flux: &FluxField, tol: &Tolerances) -> Certificate {
    let (c, witness) = flux
        .exterior
        .iter()
        .map(|b| (b.norm(), &b.label))
        .fold((0.0, None), |(m, w), (n, l)| if n > m { (n, Some(l.clone())) } else { (m, w) });
    let radius = flux
        .blocks
        .iter()
        .filter(|b| b.norm() > c + tol.exact)
        .map(|b| b.label.linf())
        .max()
        .unwrap_or(0);
    Certificate {
        ok: c < 1.0 - tol.guard(),
        radius,
        c,
        witness,
        trace_class: flux.is_trace_class(tol),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum EigenClass {
    Plus,
    Minus,
    Interior,
}

fn classify(label: &Site, lambda: f64, tol: &Tolerances) -> Result<EigenClass> {
    let d_plus = (lambda - 1.0).abs();
    let d_minus = (lambda + 1.0).abs();
    if d_plus <= tol.eigen {
        Ok(EigenClass::Plus)
    } else if d_minus <= tol.eigen {
        Ok(EigenClass::Minus)
    } else if d_plus < tol.guard() || d_minus < tol.guard() {
        Err(Error::AmbiguousEigenvalue {
            site: label.clone(),
            value: lambda,
        })
    } else {
        Ok(EigenClass::Interior)
    }
}

/// Spectral data of one block.
#[derive(Clone, Debug)]
pub struct BlockSpectrum {
    pub eigen: HermitianEigen,
    pub plus: Vec<usize>,
    pub minus: Vec<usize>,
    pub interior: Vec<usize>,
}

pub fn block_spectrum(block: &FluxBlock, tol: &Tolerances) -> Result<BlockSpectrum> {
    let eigen = HermitianEigen::new(&block.phi);
    let (mut plus, mut minus, mut interior) = (Vec::new(), Vec::new(), Vec::new());
    for (i, &l) in eigen.values.iter().enumerate() {
        match classify(&block.label, l, tol)? {
            EigenClass::Plus => plus.push(i),
            EigenClass::Minus => minus.push(i),
            EigenClass::Interior => interior.push(i),
        }
    }
    Ok(BlockSpectrum {
        eigen,
        plus,
        minus,
        interior,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PowerTrace {
    pub j: u32,
    pub value: C64,
}

/// Per-label kernel dimensions, for labels where either is nonzero.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Contribution {
    pub label: Site,
    pub plus: usize,
    pub minus: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct IndexReport {
    pub index: i64,
    pub dim_ker_plus: usize,
    pub dim_ker_minus: usize,
    /// `Σ (rank P̂ − rank P)` over the core, when the geometry defines it.
    pub rank_formula: Option<i64>,
    /// `trace Φ^{2j+1}`, present when `Φ` is trace class.
    pub odd_trace: Vec<PowerTrace>,
    /// `trace (P⊥ − P) Φ^{2j}`, present when `Φ` is trace class.
    pub supertrace: Vec<PowerTrace>,
    /// `Σ_{b∈P⊥} ‖PUb‖² − Σ_{a∈P} ‖P⊥Ua‖²`, present when `Φ` is trace class.
    pub kitaev_sum: Option<C64>,
    /// Distance of `σ(Φ²) \ {1}` to 1.
    pub gap: f64,
    /// `‖Φ‖₁`, present when `Φ` is trace class.
    pub trace_norm: Option<f64>,
    /// `‖Φ_<‖`, the largest eigenvalue modulus off ±1.
    pub phi_lt_norm: f64,
    pub max_block_norm: f64,
    pub nonzero_blocks: usize,
    pub certificate: Certificate,
    pub contributions: Vec<Contribution>,
}

impl IndexReport {
    /// Every formula present must reproduce the kernel count.
    pub fn check_agreement(&self, tol: &Tolerances) -> Result<()> {
        let n = self.index as f64;
        if self.index != self.dim_ker_plus as i64 - self.dim_ker_minus as i64 {
            return Err(Error::Inconsistent("kernel bookkeeping".into()));
        }
        if let Some(r) = self.rank_formula {
            if r != self.index {
                return Err(Error::Inconsistent(format!(
                    "rank formula {r} vs kernel count {}",
                    self.index
                )));
            }
        }
        for (name, list) in [("odd trace", &self.odd_trace), ("supertrace", &self.supertrace)] {
            for pt in list.iter() {
                if (pt.value - C64::new(n, 0.0)).norm() > tol.formula {
                    return Err(Error::Inconsistent(format!(
                        "{name} j={} gives {} vs kernel count {}",
                        pt.j, pt.value, self.index
                    )));
                }
            }
        }
        if let Some(k) = self.kitaev_sum {
            if (k - C64::new(n, 0.0)).norm() > tol.formula {
                return Err(Error::Inconsistent(format!(
                    "Kitaev sum {k} vs kernel count {}",
                    self.index
                )));
            }
        }
        Ok(())
    }

    pub fn odd_trace_at(&self, j: u32) -> Option<C64> {
        self.odd_trace.iter().find(|p| p.j == j).map(|p| p.value)
    }

    pub fn supertrace_at(&self, j: u32) -> Option<C64> {
        self.supertrace.iter().find(|p| p.j == j).map(|p| p.value)
    }
}

pub fn index_by_kernels(flux: &FluxField, tol: &Tolerances) -> Result<IndexReport> {
    let cert = certify_isolated(flux, tol);
    if !cert.ok {
        return Err(Error::NotCertified {
            witness: cert.witness.clone().unwrap_or_else(|| Site::origin(flux.dim())),
            norm: cert.c,
        });
    }
    let spectra: Vec<BlockSpectrum> = flux
        .blocks
        .par_iter()
        .map(|b| block_spectrum(b, tol))
        .collect::<Result<_>>()?;
    let mut plus = 0;
    let mut minus = 0;
    let mut phi_lt: f64 = 0.0;
    let mut contributions = Vec::new();
    for (b, s) in flux.blocks.iter().zip(&spectra) {
        plus += s.plus.len();
        minus += s.minus.len();
        for &i in &s.interior {
            phi_lt = phi_lt.max(s.eigen.values[i].abs());
        }
        if !s.plus.is_empty() || !s.minus.is_empty() {
            contributions.push(Contribution {
                label: b.label.clone(),
                plus: s.plus.len(),
                minus: s.minus.len(),
            });
        }
    }
    // exterior blocks have norm ≤ c < 1, so all their eigenvalues are interior
    for b in &flux.exterior {
        phi_lt = phi_lt.max(b.norm());
    }
    let index = plus as i64 - minus as i64;
    let src = &*flux.source;
    let rank_formula = src
        .core_labels()
        .iter()
        .map(|l| src.rank_difference(l))
        .sum::<Option<i64>>();
    let trace_class = cert.trace_class;
    let (odd_trace, supertrace, kitaev, trace_norm) = if trace_class {
        let odd = (0..3)
            .map(|j| Ok(PowerTrace { j, value: index_by_odd_trace(flux, j, tol)? }))
            .collect::<Result<Vec<_>>>()?;
        let sup = (1..3)
            .map(|j| Ok(PowerTrace { j, value: index_by_supertrace(flux, j, tol)? }))
            .collect::<Result<Vec<_>>>()?;
        let tn: f64 = flux.blocks.iter().map(|b| linalg::trace_norm(&b.phi)).fold(0.0, |a, b| a + b);
        (odd, sup, Some(kitaev_sum(flux, tol)?), Some(tn))
    } else {
        (Vec::new(), Vec::new(), None, None)
    };
    Ok(IndexReport {
        index,
        dim_ker_plus: plus,
        dim_ker_minus: minus,
        rank_formula,
        odd_trace,
        supertrace,
        kitaev_sum: kitaev,
        gap: 1.0 - phi_lt * phi_lt,
        trace_norm,
        phi_lt_norm: phi_lt,
        max_block_norm: flux.max_block_norm(),
        nonzero_blocks: flux.blocks.len(),
        certificate: cert,
        contributions,
    })
}

fn require_trace_class(flux: &FluxField, tol: &Tolerances) -> Result<()> {
    if let Some(b) = flux
        .exterior
        .iter()
        .find(|b| linalg::max_abs(&b.phi) > tol.exact)
    {
        return Err(Error::NotTraceClass {
            witness: b.label.clone(),
            norm: b.norm(),
        });
    }
    Ok(())
}

/// `Σ_blocks trace Φ^{2j+1}`.
pub fn index_by_odd_trace(flux: &FluxField, j: u32, tol: &Tolerances) -> Result<C64> {
    require_trace_class(flux, tol)?;
    Ok(flux
        .blocks
        .iter()
        .map(|b| linalg::trace(&b.phi.pow(2 * j + 1)))
        .sum())
}

/// `Σ_blocks trace (P⊥ − P) Φ^{2j}`, `j ≥ 1`.
pub fn index_by_supertrace(flux: &FluxField, j: u32, tol: &Tolerances) -> Result<C64> {
    assert!(j >= 1);
    require_trace_class(flux, tol)?;
    Ok(flux
        .blocks
        .iter()
        .map(|b| {
            let n = b.p.len();
            let grading = linalg::identity(n) - b.p_matrix().scale(2.0);
            linalg::trace(&(grading * b.phi.pow(2 * j)))
        })
        .sum())
}

/// `Σ_{b∈P⊥} ‖PUb‖² − Σ_{a∈P} ‖P⊥Ua‖²` over the basis states of the nonzero
/// blocks, evaluated with the unitary itself rather than the blocks.
pub fn kitaev_sum(flux: &FluxField, tol: &Tolerances) -> Result<C64> {
    require_trace_class(flux, tol)?;
    let src = &*flux.source;
    let u = src.unitary();
    let mut acc = 0.0;
    for b in &flux.blocks {
        for (s, k) in &b.basis {
            let e = LatticeState::basis(s.clone(), *k, src.n_internal());
            let ue = u.apply(&e)?;
            if src.in_projection(s, *k) {
                acc -= project_complement(src, &ue).norm_sqr();
            } else {
                acc += project(src, &ue).norm_sqr();
            }
        }
    }
    Ok(C64::new(acc, 0.0))
}

/// Blockwise identities every flux must satisfy; all entries are defects.
#[derive(Clone, Debug, Default, Serialize)]
pub struct InvariantReport {
    pub hermiticity: f64,
    /// How far the spectrum leaves `[−1, 1]`.
    pub spectrum_excess: f64,
    /// `‖[Φ², P]‖`.
    pub phi2_p_commutator: f64,
    /// `‖Φ² + B² − I‖` with `B = R⊥ − P`, `R = U*PU`.
    pub b_identity: f64,
    /// `‖{Φ, B}‖`.
    pub b_anticommutator: f64,
}

impl InvariantReport {
    pub fn worst(&self) -> f64 {
        [
            self.hermiticity,
            self.spectrum_excess,
            self.phi2_p_commutator,
            self.b_identity,
            self.b_anticommutator,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn check_invariants(flux: &FluxField) -> InvariantReport {
    let mut r = InvariantReport::default();
    for b in flux.all_blocks() {
        let n = b.p.len();
        let p = b.p_matrix();
        let phi = &b.phi;
        let phi2 = phi * phi;
        r.hermiticity = r.hermiticity.max(linalg::hermiticity_defect(phi));
        let eig = HermitianEigen::new(phi);
        for &l in &eig.values {
            r.spectrum_excess = r.spectrum_excess.max(l.abs() - 1.0);
        }
        r.phi2_p_commutator = r
            .phi2_p_commutator
            .max(linalg::max_abs(&linalg::commutator(&phi2, &p)));
        let b_op = linalg::identity(n) - phi - p.scale(2.0);
        r.b_identity = r
            .b_identity
            .max(linalg::max_abs(&(&phi2 + &b_op * &b_op - linalg::identity(n))));
        r.b_anticommutator = r
            .b_anticommutator
            .max(linalg::max_abs(&linalg::anticommutator(phi, &b_op)));
    }
    r
}

/// Compare the stored blocks with lazy application of `U*PU − P` on random
/// states supported in the given sites. Returns the largest discrepancy.
pub fn verify_flux_action<R: rand::Rng + ?Sized>(
    flux: &FluxField,
    sites: &[Site],
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let psi = LatticeState::random(sites, flux.dim(), flux.n_internal(), rng);
        let lazy = apply_flux_lazily(&*flux.source, &psi)?;
        let blockwise = flux.apply(&psi);
        worst = worst.max(lazy.max_abs_diff(&blockwise));
    }
    Ok(worst)
}

/// Index of the compression of `U*PU − P` to a padded box, eigensolved as a
/// single dense matrix.
#[derive(Clone, Debug, Serialize)]
pub struct DenseOracle {
    pub dimension: usize,
    pub dim_ker_plus: usize,
    pub dim_ker_minus: usize,
    pub index: i64,
}

pub fn dense_window_index(
    src: &dyn BlockSource,
    ranges: &[(i64, i64)],
    padding: i64,
    tol: &Tolerances,
) -> Result<DenseOracle> {
    let inner: Vec<(i64, i64)> = ranges.iter().map(|&(a, b)| (a - padding, b + padding)).collect();
    let outer: Vec<(i64, i64)> = inner.iter().map(|&(a, b)| (a - 1, b + 1)).collect();
    let n = src.n_internal();
    let w = WindowBasis::new(box_sites(&inner), n)?;
    let w1 = WindowBasis::new(box_sites(&outer), n)?;
    // exact: U maps the inner box into the outer one
    let a = src.unitary().matrix_between(&w, &w1)?;
    let diag = |b: &WindowBasis| {
        linalg::diag_real(
            &(0..b.len())
                .map(|i| {
                    let (s, k) = b.label(i);
                    f64::from(u8::from(src.in_projection(s, k)))
                })
                .collect::<Vec<_>>(),
        )
    };
    let phi = a.adjoint() * diag(&w1) * &a - diag(&w);
    let eig = HermitianEigen::new(&phi);
    let (mut plus, mut minus) = (0, 0);
    let origin = Site::origin(ranges.len());
    for &l in &eig.values {
        match classify(&origin, l, tol)? {
            EigenClass::Plus => plus += 1,
            EigenClass::Minus => minus += 1,
            EigenClass::Interior => {}
        }
    }
    Ok(DenseOracle {
        dimension: w.len(),
        dim_ker_plus: plus,
        dim_ker_minus: minus,
        index: plus as i64 - minus as i64,
    })
}

/// Bounding box of the labels of the nonzero core blocks, or `None` if there
/// are none.
pub fn support_box(flux: &FluxField) -> Option<Vec<(i64, i64)>> {
    let mut it = flux.blocks.iter().flat_map(|b| b.basis.iter().map(|(s, _)| s));
    let first = it.next()?;
    let mut r: Vec<(i64, i64)> = first.coords().iter().map(|&c| (c, c)).collect();
    for s in it {
        for (rr, &c) in r.iter_mut().zip(s.coords()) {
            rr.0 = rr.0.min(c);
            rr.1 = rr.1.max(c);
        }
    }
    Some(r)
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeStep {
    pub t: f64,
    pub index: Option<i64>,
    pub certified: bool,
    pub c: f64,
    pub note: Option<String>,
}

/// Index along `t ∈ {0, 1/steps, …, 1}`. Uncertifiable steps are flagged, not
/// fatal.
pub fn index_stability_probe<F>(family: F, steps: usize, tol: &Tolerances) -> Vec<ProbeStep>
where
    F: Fn(f64) -> Result<FluxField> + Sync,
{
    (0..=steps)
        .into_par_iter()
        .map(|i| {
            let t = i as f64 / steps as f64;
            let flux = match family(t) {
                Ok(f) => f,
                Err(e) => {
                    return ProbeStep {
                        t,
                        index: None,
                        certified: false,
                        c: f64::NAN,
                        note: Some(e.to_string()),
                    }
                }
            };
            let cert = certify_isolated(&flux, tol);
            match index_by_kernels(&flux, tol) {
                Ok(r) => ProbeStep {
                    t,
                    index: Some(r.index),
                    certified: true,
                    c: cert.c,
                    note: None,
                },
                Err(e) => ProbeStep {
                    t,
                    index: None,
                    certified: false,
                    c: cert.c,
                    note: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// The indices of the certified steps, if they all agree.
pub fn probe_constant(steps: &[ProbeStep]) -> Option<i64> {
    let mut it = steps.iter().filter_map(|s| s.index);
    let first = it.next()?;
    it.all(|i| i == first).then_some(first)
}
