//! Coined quantum walks `U = T C`, adapted projections, quantum leads and
//! reflecting boundaries.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::{self, BlockSource, FluxBlock, FluxField, IndexReport};
use crate::lattice::{
    lcm, BlockField, Direction, LatticeState, LocalUnitary, Pattern, Region, ScanBox, Site,
    SiteField,
};
use crate::linalg::{self, CMat, CVec, C64, ZERO};
use crate::tolerance::Tolerances;

/// `Uψ(x) = Σ_τ ⟨τ, C(x−τ)ψ(x−τ)⟩ |τ⟩` on `ℓ²(Z^d, C^{2d})`.
#[derive(Clone, Debug)]
pub struct CoinedWalk {
    dim: usize,
    coin: BlockField,
}

impl CoinedWalk {
    pub fn new(coin: BlockField, tol: &Tolerances) -> Result<Self> {
        let dim = coin.dim();
        if coin.n != 2 * dim {
            return Err(Error::InternalDimension {
                expected: 2 * dim,
                found: coin.n,
            });
        }
        coin.check_unitary(tol.unitary)?;
        Ok(CoinedWalk { dim, coin })
    }

    pub fn coin(&self) -> &BlockField {
        &self.coin
    }

    pub fn coin_at(&self, x: &Site) -> CMat {
        self.coin.at(x)
    }
}

pub fn build_walk(coin: BlockField, tol: &Tolerances) -> Result<CoinedWalk> {
    CoinedWalk::new(coin, tol)
}

impl LocalUnitary for CoinedWalk {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_internal(&self) -> usize {
        2 * self.dim
    }

    fn apply(&self, psi: &LatticeState) -> Result<LatticeState> {
        psi.check_compatible(self.dim, 2 * self.dim)?;
        let mut out = LatticeState::zero(self.dim, 2 * self.dim);
        for (x, v) in psi.iter() {
            let w = self.coin.at(x) * CVec::from_column_slice(v);
            for tau in Direction::all(self.dim) {
                let a = w[tau.index()];
                if a != ZERO {
                    out.add(&x.step(tau), tau.index(), a);
                }
            }
        }
        out.prune_exact();
        Ok(out)
    }

    fn apply_adjoint(&self, psi: &LatticeState) -> Result<LatticeState> {
        psi.check_compatible(self.dim, 2 * self.dim)?;
        let mut pulled = LatticeState::zero(self.dim, 2 * self.dim);
        for (y, v) in psi.iter() {
            for tau in Direction::all(self.dim) {
                let a = v[tau.index()];
                if a != ZERO {
                    pulled.add(&y.step(tau.reversed()), tau.index(), a);
                }
            }
        }
        let mut out = LatticeState::zero(self.dim, 2 * self.dim);
        for (x, v) in pulled.iter() {
            let w = self.coin.at(x).adjoint() * CVec::from_column_slice(v);
            out.set_vector(x.clone(), w.iter().copied().collect());
        }
        out.prune_exact();
        Ok(out)
    }
}

pub fn bit(tau: Direction) -> u64 {
    1 << tau.index()
}

fn mask_matrix(mask: u64, n: usize) -> CMat {
    linalg::diag_real(&(0..n).map(|i| ((mask >> i) & 1) as f64).collect::<Vec<_>>())
}

/// Projection diagonal in the direction basis at every site. The open
/// directions at `x` are the union of the masks of every rule matching `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptedProjection {
    pub field: SiteField<u64>,
    /// Whether this is the complement of the projection the rules describe.
    #[serde(default)]
    pub negated: bool,
}

impl AdaptedProjection {
    pub fn empty(dim: usize) -> Self {
        AdaptedProjection {
            field: SiteField::new(dim),
            negated: false,
        }
    }

    pub fn full(dim: usize) -> Self {
        let mut p = AdaptedProjection::empty(dim);
        p.field
            .push_tail(Region::everything(dim), Pattern::Constant((1u64 << (2 * dim)) - 1));
        p
    }

    pub fn dim(&self) -> usize {
        self.field.dim
    }

    pub fn n_internal(&self) -> usize {
        2 * self.dim()
    }

    pub fn mask_at(&self, x: &Site) -> u64 {
        let m = self.field.all(x).into_iter().fold(0, |a, b| a | b);
        if self.negated {
            self.full_mask() & !m
        } else {
            m
        }
    }

    pub fn full_mask(&self) -> u64 {
        (1u64 << self.n_internal()) - 1
    }

    pub fn is_open(&self, x: &Site, tau: Direction) -> bool {
        self.mask_at(x) & bit(tau) != 0
    }

    pub fn rank_at(&self, x: &Site) -> u32 {
        self.mask_at(x).count_ones()
    }

    pub fn symbol(&self, x: &Site) -> CMat {
        mask_matrix(self.mask_at(x), self.n_internal())
    }

    /// Open directions of `P̂` at `x`: `τ` is open iff it is open for `P` at
    /// `x + τ`.
    pub fn hat_mask_at(&self, x: &Site) -> u64 {
        Direction::all(self.dim())
            .filter(|&tau| self.is_open(&x.step(tau), tau))
            .fold(0, |m, tau| m | bit(tau))
    }

    pub fn add_window(&mut self, x: Site, mask: u64) {
        *self.field.window.entry(x).or_insert(0) |= mask;
    }

    pub fn push_tail(&mut self, region: Region, mask: u64) {
        self.field.push_tail(region, Pattern::Constant(mask));
    }

    /// Pointwise union; the caller is responsible for the two being
    /// orthogonal when a sum is intended.
    pub fn union(&self, other: &AdaptedProjection) -> AdaptedProjection {
        assert!(!self.negated && !other.negated, "union of complemented projections");
        let mut out = self.clone();
        for (x, m) in &other.field.window {
            out.add_window(x.clone(), *m);
        }
        out.field.tail.extend(other.field.tail.iter().cloned());
        out
    }

    /// Convert a first-match projection field. Fails unless every stored
    /// value is a diagonal 0/1 matrix and the union of matching rules equals
    /// the first match on every representative site.
    pub fn from_block_field(p: &BlockField, tol: &Tolerances) -> Result<Self> {
        p.check_projection(tol.projection)?;
        let to_mask = |label: String, m: &CMat| -> Result<u64> {
            if !linalg::is_diagonal(m, tol.projection) {
                return Err(Error::NotAdapted { site: label });
            }
            let mut mask = 0;
            for i in 0..m.nrows() {
                if m[(i, i)].re > 0.5 {
                    mask |= 1 << i;
                }
            }
            Ok(mask)
        };
        let mut out = AdaptedProjection::empty(p.dim());
        for (x, m) in &p.field.window {
            out.field.window.insert(x.clone(), to_mask(x.to_string(), m)?);
        }
        for (i, (region, pattern)) in p.field.tail.iter().enumerate() {
            let label = format!("tail rule {i}");
            let pat = match pattern {
                Pattern::Constant(m) => Pattern::Constant(to_mask(label, m)?),
                Pattern::Periodic { period, cells } => Pattern::Periodic {
                    period: period.clone(),
                    cells: cells
                        .iter()
                        .map(|c| c.as_ref().map(|m| to_mask(label.clone(), m)).transpose())
                        .collect::<Result<_>>()?,
                },
            };
            out.field.push_tail(region.clone(), pat);
        }
        let scan = ScanBox::new(p.field.breakpoints(), p.field.periods(), 1);
        for x in scan.core_sites().into_iter().chain(scan.exterior_sites()) {
            let first = p.field.first(&x).map(|m| to_mask(x.to_string(), m)).transpose()?;
            if first.unwrap_or(0) != out.mask_at(&x) {
                return Err(Error::Inconsistent(format!(
                    "projection rules overlap with different values at {x}"
                )));
            }
        }
        Ok(out)
    }

    /// `P⊥`, sharing the rule structure of `P`.
    pub fn complement(&self) -> AdaptedProjection {
        let mut out = self.clone();
        out.negated = !out.negated;
        out
    }
}

/// `P̂` as an explicit adapted projection.
pub fn hat_projection(p: &AdaptedProjection) -> AdaptedProjection {
    let dim = p.dim();
    let mut out = AdaptedProjection::empty(dim);
    out.negated = p.negated;
    for (y, m) in &p.field.window {
        for tau in Direction::all(dim) {
            if m & bit(tau) != 0 {
                out.add_window(y.step(tau.reversed()), bit(tau));
            }
        }
    }
    for (region, pattern) in &p.field.tail {
        for tau in Direction::all(dim) {
            let a = tau.axis - 1;
            let s = tau.sign as i64;
            let mut r = region.clone();
            r.bounds[a] = (r.bounds[a].0.map(|v| v - s), r.bounds[a].1.map(|v| v - s));
            let pat = match pattern {
                Pattern::Constant(m) => Pattern::Constant(m & bit(tau)),
                Pattern::Periodic { period, cells } => {
                    // value at x is the old value at x + τ
                    let mut new_cells = vec![None; cells.len()];
                    for (idx, cell) in new_cells.iter_mut().enumerate() {
                        let mut rem = idx;
                        let mut res = vec![0i64; dim];
                        for k in (0..dim).rev() {
                            res[k] = (rem % period[k] as usize) as i64;
                            rem /= period[k] as usize;
                        }
                        res[a] = (res[a] + s).rem_euclid(period[a]);
                        let mut old = 0usize;
                        for k in 0..dim {
                            old = old * period[k] as usize + res[k] as usize;
                        }
                        *cell = cells[old].map(|m| m & bit(tau));
                    }
                    Pattern::Periodic {
                        period: period.clone(),
                        cells: new_cells,
                    }
                }
            };
            out.field.push_tail(r, pat);
        }
    }
    out
}

/// Flux of a coined walk against an adapted projection; blocks are sites.
pub struct WalkFlux {
    pub walk: Arc<CoinedWalk>,
    pub projection: AdaptedProjection,
    scan: ScanBox,
}

impl WalkFlux {
    pub fn new(walk: Arc<CoinedWalk>, projection: AdaptedProjection) -> Result<Self> {
        if projection.dim() != walk.dim {
            return Err(Error::LatticeDimension {
                expected: walk.dim,
                found: projection.dim(),
            });
        }
        let scan = ScanBox::merge(
            &[walk.coin.field.breakpoints(), projection.field.breakpoints()],
            &[walk.coin.field.periods(), projection.field.periods()],
            2,
        );
        Ok(WalkFlux {
            walk,
            projection,
            scan,
        })
    }

    pub fn scan(&self) -> &ScanBox {
        &self.scan
    }
}

impl BlockSource for WalkFlux {
    fn dim(&self) -> usize {
        self.walk.dim
    }

    fn n_internal(&self) -> usize {
        2 * self.walk.dim
    }

    fn unitary(&self) -> &dyn LocalUnitary {
        &*self.walk
    }

    fn in_projection(&self, site: &Site, k: usize) -> bool {
        self.projection.mask_at(site) & (1 << k) != 0
    }

    fn label_of(&self, site: &Site, _k: usize) -> Site {
        site.clone()
    }

    fn basis(&self, label: &Site) -> Vec<(Site, usize)> {
        (0..2 * self.walk.dim).map(|k| (label.clone(), k)).collect()
    }

    fn block(&self, x: &Site) -> FluxBlock {
        let n = 2 * self.walk.dim;
        let c = self.walk.coin_at(x);
        let p_hat = mask_matrix(self.projection.hat_mask_at(x), n);
        let mask = self.projection.mask_at(x);
        let phi = c.adjoint() * p_hat * &c - mask_matrix(mask, n);
        FluxBlock {
            label: x.clone(),
            basis: self.basis(x),
            phi,
            p: (0..n).map(|k| mask & (1 << k) != 0).collect(),
        }
    }

    fn core_labels(&self) -> Vec<Site> {
        self.scan.core_sites()
    }

    fn exterior_labels(&self) -> Vec<Site> {
        self.scan.exterior_sites()
    }

    fn rank_difference(&self, x: &Site) -> Option<i64> {
        Some(self.projection.hat_mask_at(x).count_ones() as i64 - self.projection.rank_at(x) as i64)
    }

    fn describe(&self) -> String {
        format!("coined walk on Z^{}", self.walk.dim)
    }
}

pub fn walk_flux(walk: &CoinedWalk, p: &AdaptedProjection) -> Result<FluxField> {
    let src = WalkFlux::new(Arc::new(walk.clone()), p.clone())?;
    Ok(FluxField::build(Arc::new(src)))
}

/// Flux for a projection given as a block field; checks it is an adapted
/// projection first.
pub fn build_flux(walk: &CoinedWalk, p: &BlockField, tol: &Tolerances) -> Result<FluxField> {
    let adapted = AdaptedProjection::from_block_field(p, tol)?;
    walk_flux(walk, &adapted)
}

/// Index by the rank formula, cross-checked against the kernel count.
pub fn walk_index(walk: &CoinedWalk, p: &AdaptedProjection, tol: &Tolerances) -> Result<IndexReport> {
    let flux = walk_flux(walk, p)?;
    let report = flux::index_by_kernels(&flux, tol)?;
    report.check_agreement(tol)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeadKind {
    Outgoing,
    Incoming,
}

/// A lead given by an explicit prefix and a straight ray.
///
/// Outgoing: `prefix = [γ(1), …, γ(m)]` and `γ(m+k) = γ(m) + k·ray`.
/// Incoming: `prefix = [γ(−m), …, γ(−1)]` in travel order and
/// `γ(−m−k) = γ(−m) − k·ray`, so `ray` is the direction of travel along the
/// far part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadSpec {
    pub kind: LeadKind,
    pub prefix: Vec<Site>,
    pub ray: Direction,
}

impl LeadSpec {
    pub fn outgoing(prefix: Vec<Site>, ray: Direction) -> Self {
        LeadSpec {
            kind: LeadKind::Outgoing,
            prefix,
            ray,
        }
    }

    pub fn incoming(prefix: Vec<Site>, ray: Direction) -> Self {
        LeadSpec {
            kind: LeadKind::Incoming,
            prefix,
            ray,
        }
    }

    pub fn dim(&self) -> usize {
        self.prefix[0].dim()
    }

    fn m(&self) -> i64 {
        self.prefix.len() as i64
    }

    /// The first parameter: `1` for outgoing, `−1` for incoming.
    pub fn start(&self) -> i64 {
        match self.kind {
            LeadKind::Outgoing => 1,
            LeadKind::Incoming => -1,
        }
    }

    /// Parameter `k` steps away from the start, towards infinity.
    pub fn param(&self, k: i64) -> i64 {
        match self.kind {
            LeadKind::Outgoing => 1 + k,
            LeadKind::Incoming => -1 - k,
        }
    }

    pub fn site(&self, t: i64) -> Site {
        let m = self.m();
        let ray = self.ray.vector(self.dim());
        match self.kind {
            LeadKind::Outgoing => {
                assert!(t >= 1);
                if t <= m {
                    self.prefix[(t - 1) as usize].clone()
                } else {
                    let k = t - m;
                    self.prefix[(m - 1) as usize].translate(&ray.iter().map(|c| c * k).collect::<Vec<_>>())
                }
            }
            LeadKind::Incoming => {
                assert!(t <= -1);
                let idx = m + t;
                if idx >= 0 {
                    self.prefix[idx as usize].clone()
                } else {
                    self.prefix[0].translate(&ray.iter().map(|c| c * idx).collect::<Vec<_>>())
                }
            }
        }
    }

    /// `τ(t) = γ(t) − γ(t−1)`, with `τ(1) := τ(2)` for outgoing leads.
    pub fn tangent(&self, t: i64) -> Direction {
        let t = if self.kind == LeadKind::Outgoing && t == 1 { 2 } else { t };
        Direction::between(&self.site(t - 1), &self.site(t))
            .expect("validated leads are regular")
    }

    /// The quantum-lead basis state `|γ(t), τ(t)⟩`.
    pub fn unit(&self, t: i64) -> LatticeState {
        LatticeState::basis(self.site(t), self.tangent(t).index(), 2 * self.dim())
    }

    /// Direction in which the lead runs off to infinity.
    pub fn far_direction(&self) -> Direction {
        match self.kind {
            LeadKind::Outgoing => self.ray,
            LeadKind::Incoming => self.ray.reversed(),
        }
    }

    /// Last explicit site on the far side; the ray continues from here.
    pub fn ray_base(&self) -> &Site {
        match self.kind {
            LeadKind::Outgoing => self.prefix.last().unwrap(),
            LeadKind::Incoming => &self.prefix[0],
        }
    }

    /// Whether `t` carries the coin condition `C(γ(t))τ(t) ∝ τ(t+1)`.
    pub fn constrained(&self, t: i64) -> bool {
        match self.kind {
            LeadKind::Outgoing => t >= 1,
            LeadKind::Incoming => t <= -2,
        }
    }

    fn check_regular(&self) -> Result<()> {
        if self.prefix.is_empty() {
            return Err(Error::InvalidLead("empty prefix".into()));
        }
        let d = self.dim();
        if self.ray.axis > d || self.prefix.iter().any(|s| s.dim() != d) {
            return Err(Error::LatticeDimension {
                expected: d,
                found: self.ray.axis,
            });
        }
        for w in self.prefix.windows(2) {
            if Direction::between(&w[0], &w[1]).is_none() {
                return Err(Error::InvalidLead(format!(
                    "{} and {} are not nearest neighbours",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    /// Whether the lead is injective, checked up to where it leaves `ebox`.
    pub fn is_simple(&self, ebox: &[(i64, i64)]) -> bool {
        let mut seen = BTreeSet::new();
        let mut k = 0;
        loop {
            let t = self.param(k);
            let x = self.site(t);
            if k >= self.m() && !in_box(&x, ebox) {
                return true;
            }
            if !seen.insert(x) {
                return false;
            }
            k += 1;
        }
    }

    /// `(t, γ(t), τ(t))` from the start until the lead has left `ebox`.
    pub fn units_in(&self, ebox: &[(i64, i64)]) -> Vec<(i64, Site, Direction)> {
        let mut out = Vec::new();
        let mut k = 0;
        loop {
            let t = self.param(k);
            let x = self.site(t);
            if k >= self.m() && !in_box(&x, ebox) {
                return out;
            }
            out.push((t, x, self.tangent(t)));
            k += 1;
        }
    }
}

pub fn in_box(x: &Site, ebox: &[(i64, i64)]) -> bool {
    x.coords()
        .iter()
        .zip(ebox)
        .all(|(&c, &(lo, hi))| c >= lo && c <= hi)
}

fn extend_box(ebox: &mut Vec<(i64, i64)>, x: &Site) {
    if ebox.is_empty() {
        *ebox = x.coords().iter().map(|&c| (c, c)).collect();
    } else {
        for (b, &c) in ebox.iter_mut().zip(x.coords()) {
            b.0 = b.0.min(c);
            b.1 = b.1.max(c);
        }
    }
}

/// The far part of a ray outside `ebox`.
fn ray_region(base: &Site, far: Direction, ebox: &[(i64, i64)]) -> Region {
    let mut r = Region::point(base);
    let a = far.axis - 1;
    r.bounds[a] = if far.sign > 0 {
        (Some(ebox[a].1 + 1), None)
    } else {
        (None, Some(ebox[a].0 - 1))
    };
    r
}

/// Leads sharing a far half-line: same line, same direction to infinity.
#[derive(Clone, Debug)]
pub struct RayGroup {
    pub far: Direction,
    pub base: Site,
    pub members: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct NetworkGeometry {
    /// Box containing every prefix, with a margin of 2.
    pub ebox: Vec<(i64, i64)>,
    pub groups: Vec<RayGroup>,
    /// Whether each lead is injective (reported, not required).
    pub simple: Vec<bool>,
}

/// Incoming and outgoing leads, optionally on the boundary `x_d = 0` of the
/// half-space `x_d ≥ 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub dim: usize,
    pub leads: Vec<LeadSpec>,
    #[serde(default)]
    pub boundary: bool,
}

impl NetworkSpec {
    pub fn n_outgoing(&self) -> usize {
        self.leads.iter().filter(|l| l.kind == LeadKind::Outgoing).count()
    }

    pub fn n_incoming(&self) -> usize {
        self.leads.iter().filter(|l| l.kind == LeadKind::Incoming).count()
    }

    pub fn expected_index(&self) -> i64 {
        self.n_outgoing() as i64 - self.n_incoming() as i64
    }

    /// Validate with the prefix box enlarged to contain `extra`.
    pub fn geometry(&self, extra: &[(i64, i64)]) -> Result<NetworkGeometry> {
        let mut ebox: Vec<(i64, i64)> = extra.to_vec();
        for lead in &self.leads {
            lead.check_regular()?;
            if lead.dim() != self.dim {
                return Err(Error::LatticeDimension {
                    expected: self.dim,
                    found: lead.dim(),
                });
            }
            for x in &lead.prefix {
                extend_box(&mut ebox, x);
            }
        }
        if ebox.is_empty() {
            ebox = vec![(0, 0); self.dim];
        }
        for b in ebox.iter_mut() {
            b.0 -= 2;
            b.1 += 2;
        }
        let mut owner: HashMap<(Site, Direction), (usize, i64)> = HashMap::new();
        let mut simple = Vec::new();
        for (i, lead) in self.leads.iter().enumerate() {
            simple.push(lead.is_simple(&ebox));
            for (t, x, tau) in lead.units_in(&ebox) {
                if self.boundary && (x.coords()[self.dim - 1] != 0 || tau.axis == self.dim) {
                    return Err(Error::InvalidLead(format!(
                        "lead {i} leaves the boundary at {x}"
                    )));
                }
                if let Some(&(j, s)) = owner.get(&(x.clone(), tau)) {
                    if j == i {
                        return Err(Error::InvalidLead(format!(
                            "lead {i} is not admissible: (γ(t), τ(t)) = ({x}, {tau}) repeats at t = {s} and t = {t}"
                        )));
                    }
                    return Err(Error::TangentialCrossing {
                        site: x,
                        direction: tau.to_string(),
                    });
                }
                owner.insert((x, tau), (i, t));
            }
        }
        let mut groups: Vec<RayGroup> = Vec::new();
        for (i, lead) in self.leads.iter().enumerate() {
            let far = lead.far_direction();
            let mut base = lead.ray_base().clone();
            base.0[far.axis - 1] = 0;
            match groups.iter_mut().find(|g| g.far == far && g.base == base) {
                Some(g) => {
                    for &j in &g.members {
                        if self.leads[j].ray == lead.ray {
                            let r = ray_region(&base, far, &ebox);
                            let mut x = base.clone();
                            x.0[far.axis - 1] = r.bounds[far.axis - 1].0.or(r.bounds[far.axis - 1].1).unwrap();
                            return Err(Error::TangentialCrossing {
                                site: x,
                                direction: lead.ray.to_string(),
                            });
                        }
                    }
                    g.members.push(i);
                }
                None => groups.push(RayGroup {
                    far,
                    base,
                    members: vec![i],
                }),
            }
        }
        if self.boundary && self.dim < 2 {
            return Err(Error::InvalidLead("a boundary needs dimension at least 2".into()));
        }
        Ok(NetworkGeometry {
            ebox,
            groups,
            simple,
        })
    }

    pub fn validate(&self) -> Result<NetworkGeometry> {
        self.geometry(&[])
    }

    /// Normal direction `+N = (+d)` of the boundary.
    pub fn normal(&self) -> Direction {
        Direction::plus(self.dim)
    }
}

/// Coin conditions `C(x)|from⟩ = |to⟩` collected per site.
type Constraints = BTreeMap<Site, Vec<(Direction, Direction)>>;

fn add_constraint(c: &mut Constraints, x: Site, from: Direction, to: Direction) {
    let list = c.entry(x).or_default();
    if !list.contains(&(from, to)) {
        list.push((from, to));
    }
}

fn complete_coin(x: &Site, n: usize, list: &[(Direction, Direction)]) -> Result<CMat> {
    let mut fixed: Vec<Option<CVec>> = vec![None; n];
    for &(from, to) in list {
        if let Some(prev) = &fixed[from.index()] {
            if prev[to.index()] != C64::new(1.0, 0.0) {
                return Err(Error::Unsatisfiable {
                    site: x.clone(),
                    reason: format!("direction {from} must go to two different directions"),
                });
            }
        }
        fixed[from.index()] = Some(linalg::unit(n, to.index()));
    }
    linalg::complete_unitary(n, &fixed).ok_or_else(|| Error::Unsatisfiable {
        site: x.clone(),
        reason: "two constrained directions share a target".into(),
    })
}

fn reflection_constraints(normal: Direction) -> [(Direction, Direction); 2] {
    [(normal, normal.reversed()), (normal.reversed(), normal)]
}

/// Whether `C|±N⟩ = |∓N⟩` within `tol`.
pub fn reflects(c: &CMat, normal: Direction, tol: f64) -> bool {
    let n = c.nrows();
    let up = normal.index();
    let down = normal.reversed().index();
    let col_ok = |from: usize, to: usize| {
        (0..n).all(|i| {
            let want = if i == to { C64::new(1.0, 0.0) } else { ZERO };
            (c[(i, from)] - want).norm() <= tol
        })
    };
    col_ok(up, down) && col_ok(down, up)
}

/// Sites of a coin field's scan box lying on the boundary `x_d = 0`.
fn boundary_scan_sites(coin: &BlockField) -> Vec<Site> {
    let d = coin.dim();
    let mut bp = coin.field.breakpoints();
    bp[d - 1].push(0);
    let scan = ScanBox::new(bp, coin.field.periods(), 2);
    scan.core_sites()
        .into_iter()
        .chain(scan.exterior_sites())
        .filter(|x| x.coords()[d - 1] == 0)
        .collect()
}

pub fn check_reflecting(coin: &BlockField, tol: &Tolerances) -> Result<()> {
    let normal = Direction::plus(coin.dim());
    for x in boundary_scan_sites(coin) {
        if !reflects(&coin.at(&x), normal, tol.unitary) {
            return Err(Error::NotReflecting { site: x });
        }
    }
    Ok(())
}

/// Coin equal to `background` off the leads, and on every lead site
/// completing `|τ(t)⟩ ↦ |τ(t+1)⟩` (plus the boundary reflection) to a unitary
/// by Gram–Schmidt over the remaining directions in basis order.
pub fn synthesize_lead_coin(
    network: &NetworkSpec,
    background: &BlockField,
    tol: &Tolerances,
) -> Result<BlockField> {
    let d = network.dim;
    let n = 2 * d;
    if background.dim() != d || background.n != n {
        return Err(Error::InternalDimension {
            expected: n,
            found: background.n,
        });
    }
    background.check_unitary(tol.unitary)?;
    let bg_scan = ScanBox::new(background.field.breakpoints(), background.field.periods(), 0);
    let geo = network.geometry(&bg_scan.core)?;
    let ebox = &geo.ebox;
    if network.boundary {
        check_reflecting(background, tol)?;
    }
    let mut constraints = Constraints::new();
    for lead in &network.leads {
        for (t, x, tau) in lead.units_in(ebox) {
            if lead.constrained(t) {
                add_constraint(&mut constraints, x, tau, lead.tangent(t + 1));
            }
        }
    }
    if network.boundary {
        let normal = network.normal();
        for (x, list) in constraints.iter_mut() {
            debug_assert_eq!(x.coords()[d - 1], 0);
            for c in reflection_constraints(normal) {
                list.push(c);
            }
        }
    }
    let mut coin = background.clone();
    for (x, list) in &constraints {
        coin.set(x.clone(), complete_coin(x, n, list)?);
    }
    let mut far_rules = Vec::new();
    for g in &geo.groups {
        let mut list: Vec<(Direction, Direction)> = g
            .members
            .iter()
            .map(|&i| (network.leads[i].ray, network.leads[i].ray))
            .collect();
        if network.boundary {
            list.extend(reflection_constraints(network.normal()));
        }
        let c = complete_coin(&g.base, n, &list)?;
        let base = network.leads[g.members[0]].ray_base();
        far_rules.push((ray_region(base, g.far, ebox), Pattern::Constant(c)));
    }
    far_rules.append(&mut coin.field.tail);
    coin.field.tail = far_rules;
    verify_lead_conditions(network, &coin, tol)?;
    Ok(coin)
}

/// Check `|⟨τ(t+1), C(γ(t)) τ(t)⟩| = 1` along every lead: explicitly up to
/// the far box, then on one full period of every far ray.
pub fn verify_lead_conditions(network: &NetworkSpec, coin: &BlockField, tol: &Tolerances) -> Result<()> {
    let scan = ScanBox::new(coin.field.breakpoints(), coin.field.periods(), 0);
    let geo = network.geometry(&scan.core)?;
    let period = coin.field.periods().into_iter().fold(1, lcm);
    for lead in &network.leads {
        let units = lead.units_in(&geo.ebox);
        let done = units.len() as i64;
        let extra = (0..=period).map(|k| {
            let t = lead.param(done + k);
            (t, lead.site(t), lead.tangent(t))
        });
        for (t, x, tau) in units.into_iter().chain(extra) {
            if !lead.constrained(t) {
                continue;
            }
            let next = lead.tangent(t + 1);
            let c = coin.at(&x);
            let overlap = c[(next.index(), tau.index())].norm();
            if (overlap - 1.0).abs() > tol.unitary {
                return Err(Error::TransportCondition { site: x, overlap });
            }
        }
    }
    Ok(())
}

/// Union of the quantum-lead projections `|γ(t), τ(t)⟩⟨γ(t), τ(t)|`.
pub fn lead_projection(network: &NetworkSpec) -> Result<AdaptedProjection> {
    let geo = network.validate()?;
    let mut p = AdaptedProjection::empty(network.dim);
    for lead in &network.leads {
        for (_, x, tau) in lead.units_in(&geo.ebox) {
            p.add_window(x, bit(tau));
        }
        p.push_tail(
            ray_region(lead.ray_base(), lead.far_direction(), &geo.ebox),
            bit(lead.ray),
        );
    }
    Ok(p)
}

/// Which symbol the half-space projection carries on the boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryVariant {
    /// `I − |N⟩⟨N|` on the boundary: no flux at all.
    Reflecting,
    /// `|−N⟩⟨−N|` on the boundary: room for tangential leads.
    WithLeads,
}

/// `I` on `x_d ≥ 1`, `0` on `x_d ≤ −1`, and the variant's symbol on `x_d = 0`.
pub fn half_space_projection(dim: usize, variant: BoundaryVariant) -> AdaptedProjection {
    let full = (1u64 << (2 * dim)) - 1;
    let normal = Direction::plus(dim);
    let mut p = AdaptedProjection::empty(dim);
    p.push_tail(Region::everything(dim).with_axis(dim, Some(1), None), full);
    let on_gamma = match variant {
        BoundaryVariant::Reflecting => full & !bit(normal),
        BoundaryVariant::WithLeads => bit(normal.reversed()),
    };
    p.push_tail(Region::everything(dim).with_axis(dim, Some(0), Some(0)), on_gamma);
    p
}

/// Expected rank-one flux of a single lead: the site of its block and the
/// block itself.
pub fn single_lead_flux(lead: &LeadSpec, walk: &CoinedWalk) -> (Site, CMat) {
    let n = 2 * lead.dim();
    match lead.kind {
        LeadKind::Outgoing => {
            let tau = lead.tangent(1);
            let y = lead.site(1).step(tau.reversed());
            let c = walk.coin_at(&y);
            let e = linalg::unit(n, tau.index());
            let v = c.adjoint() * e;
            (y, &v * v.adjoint())
        }
        LeadKind::Incoming => {
            let e = linalg::unit(n, lead.tangent(-1).index());
            (lead.site(-1), -(&e * e.adjoint()))
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LeadIndexReport {
    pub report: IndexReport,
    pub expected: i64,
    /// For a single lead: distance of `Φ` to the rank-one closed form.
    pub rank_one_defect: Option<f64>,
}

/// Index of the total lead projection (plus the half-space projection when
/// there is a boundary), checked against `n_o − n_i`.
pub fn lead_flux_index(network: &NetworkSpec, coin: &BlockField, tol: &Tolerances) -> Result<LeadIndexReport> {
    verify_lead_conditions(network, coin, tol)?;
    let walk = CoinedWalk::new(coin.clone(), tol)?;
    let mut p = lead_projection(network)?;
    if network.boundary {
        check_reflecting(coin, tol)?;
        p = half_space_projection(network.dim, BoundaryVariant::WithLeads).union(&p);
    }
    let flux = walk_flux(&walk, &p)?;
    let report = flux::index_by_kernels(&flux, tol)?;
    report.check_agreement(tol)?;
    let expected = network.expected_index();
    if report.index != expected {
        return Err(Error::Inconsistent(format!(
            "lead network index {} but n_o − n_i = {expected}",
            report.index
        )));
    }
    let rank_one_defect = if network.leads.len() == 1 {
        let (y, m) = single_lead_flux(&network.leads[0], &walk);
        let mut defect: f64 = 0.0;
        let mut found = false;
        for b in flux.all_blocks() {
            if b.label == y {
                found = true;
                defect = defect.max(linalg::max_abs(&(&b.phi - &m)));
            } else {
                defect = defect.max(linalg::max_abs(&b.phi));
            }
        }
        if !found {
            defect = defect.max(linalg::max_abs(&m));
        }
        Some(defect)
    } else {
        None
    };
    Ok(LeadIndexReport {
        report,
        expected,
        rank_one_defect,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct WanderingReport {
    pub ok: bool,
    pub max_overlap: f64,
    pub worst_k: usize,
    /// `|⟨seed, U^k seed⟩|` for `k = 1..=K`.
    pub overlaps: Vec<f64>,
}

/// `|⟨seed, U^k seed⟩| ≤ tol` for `k = 1..=K`.
pub fn verify_wandering(
    u: &dyn LocalUnitary,
    seed: &LatticeState,
    steps: usize,
    tol: f64,
) -> Result<WanderingReport> {
    let mut psi = seed.clone();
    let mut overlaps = Vec::with_capacity(steps);
    for _ in 0..steps {
        psi = u.apply(&psi)?;
        overlaps.push(seed.inner(&psi).norm());
    }
    let (worst_k, max_overlap) = overlaps
        .iter()
        .enumerate()
        .fold((0, 0.0), |(wk, m), (k, &o)| if o > m { (k + 1, o) } else { (wk, m) });
    Ok(WanderingReport {
        ok: max_overlap <= tol,
        max_overlap,
        worst_k,
        overlaps,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TransportReport {
    /// `max_n | 1 − |⟨γ(t_n), τ(t_n)| U^n |γ(t_0), τ(t_0)⟩| |`.
    pub max_defect: f64,
    pub worst_n: usize,
    /// Largest `|⟨seed, U^n seed⟩|`, `n ≥ 1`.
    pub max_self_overlap: f64,
    pub moduli: Vec<f64>,
}

/// Transport of the first lead state: forward in time for outgoing leads,
/// backward for incoming ones.
pub fn verify_lead_transport(u: &dyn LocalUnitary, lead: &LeadSpec, steps: usize) -> Result<TransportReport> {
    let seed = lead.unit(lead.start());
    let mut psi = seed.clone();
    let mut moduli = Vec::with_capacity(steps);
    let mut max_self: f64 = 0.0;
    for n in 1..=steps {
        psi = match lead.kind {
            LeadKind::Outgoing => u.apply(&psi)?,
            LeadKind::Incoming => u.apply_adjoint(&psi)?,
        };
        let target = lead.unit(lead.param(n as i64));
        moduli.push(target.inner(&psi).norm());
        max_self = max_self.max(seed.inner(&psi).norm());
    }
    let (worst_n, max_defect) = moduli
        .iter()
        .enumerate()
        .fold((0, 0.0), |(w, m), (i, &a)| {
            let d = (1.0 - a).abs();
            if d > m {
                (i + 1, d)
            } else {
                (w, m)
            }
        });
    Ok(TransportReport {
        max_defect,
        worst_n,
        max_self_overlap: max_self,
        moduli,
    })
}

/// Flux of the half-space projection with the reflecting symbol on the
/// boundary; the coin must reflect the normal there.
pub fn bulk_boundary_flux(coin: &BlockField, tol: &Tolerances) -> Result<FluxField> {
    check_reflecting(coin, tol)?;
    let walk = CoinedWalk::new(coin.clone(), tol)?;
    walk_flux(&walk, &half_space_projection(coin.dim(), BoundaryVariant::Reflecting))
}

/// Largest `‖P_− U^k ψ‖`, `k = 1..=steps`, over random `ψ` supported in
/// `x_d ∈ [1, 3]`, where `P_−` projects onto `x_d ≤ −1`.
pub fn verify_confinement<R: Rng + ?Sized>(
    u: &dyn LocalUnitary,
    steps: usize,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let d = u.dim();
    let mut ranges = vec![(-3, 3); d];
    ranges[d - 1] = (1, 3);
    let sites = crate::lattice::box_sites(&ranges);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let mut psi = LatticeState::random(&sites, d, u.n_internal(), rng);
        for _ in 0..steps {
            psi = u.apply(&psi)?;
            let below: f64 = psi
                .iter()
                .filter(|(x, _)| x.coords()[d - 1] <= -1)
                .flat_map(|(_, v)| v.iter())
                .map(|a| a.norm_sqr())
                .fold(0.0, |a, b| a + b);
            worst = worst.max(below.sqrt());
        }
    }
    Ok(worst)
}

/// Unitary with `|+N⟩ ↔ |−N⟩` swapped and a Haar-random block on the
/// tangential directions.
pub fn random_reflecting_coin<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    let n = 2 * dim;
    let t = linalg::random_unitary(n - 2, rng);
    let mut c = CMat::zeros(n, n);
    c.view_mut((0, 0), (n - 2, n - 2)).copy_from(&t);
    c[(n - 2, n - 1)] = C64::new(1.0, 0.0);
    c[(n - 1, n - 2)] = C64::new(1.0, 0.0);
    c
}

/// Unitary leaving `|τ⟩` invariant up to a random phase, Haar-random on the
/// complement.
pub fn random_commuting_coin<R: Rng + ?Sized>(n: usize, tau: usize, rng: &mut R) -> CMat {
    let inner = linalg::random_unitary(n - 1, rng);
    let phase = C64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU));
    let mut c = CMat::zeros(n, n);
    let others: Vec<usize> = (0..n).filter(|&i| i != tau).collect();
    c[(tau, tau)] = phase;
    for (a, &i) in others.iter().enumerate() {
        for (b, &j) in others.iter().enumerate() {
            c[(i, j)] = inner[(a, b)];
        }
    }
    c
}

/// Random coins on `[−w, w]^d`, a constant random coin beyond.
pub fn random_background<R: Rng + ?Sized>(dim: usize, w: i64, rng: &mut R) -> BlockField {
    random_background_in(&vec![(-w, w); dim], rng)
}

/// Random coins on a box, a constant random coin beyond.
pub fn random_background_in<R: Rng + ?Sized>(ranges: &[(i64, i64)], rng: &mut R) -> BlockField {
    let dim = ranges.len();
    let n = 2 * dim;
    let mut coin = BlockField::new(dim, n);
    for x in crate::lattice::box_sites(ranges) {
        coin.set(x, linalg::random_unitary(n, rng));
    }
    coin.push_tail(Region::everything(dim), Pattern::Constant(linalg::random_unitary(n, rng)));
    coin
}

/// Like [`random_background`], with reflecting coins on the boundary `x_d = 0`.
pub fn random_reflecting_background<R: Rng + ?Sized>(dim: usize, w: i64, rng: &mut R) -> BlockField {
    let n = 2 * dim;
    let mut coin = BlockField::new(dim, n);
    for x in crate::lattice::box_sites(&vec![(-w, w); dim]) {
        let c = if x.coords()[dim - 1] == 0 {
            random_reflecting_coin(dim, rng)
        } else {
            linalg::random_unitary(n, rng)
        };
        coin.set(x, c);
    }
    coin.push_tail(
        Region::everything(dim).with_axis(dim, Some(0), Some(0)),
        Pattern::Constant(random_reflecting_coin(dim, rng)),
    );
    coin.push_tail(Region::everything(dim), Pattern::Constant(linalg::random_unitary(n, rng)));
    coin
}

/// Two outgoing leads from the origin of `Z²`, along `+2` and `−1`.
pub fn two_outgoing_network() -> NetworkSpec {
    let o = Site::new(&[0, 0]);
    NetworkSpec {
        dim: 2,
        leads: vec![
            LeadSpec::outgoing(vec![o.clone()], Direction::plus(2)),
            LeadSpec::outgoing(vec![o], Direction::minus(1)),
        ],
        boundary: false,
    }
}

/// An incoming lead arriving at the origin of `Z²` along `−2` and an
/// outgoing one leaving along `−1`.
pub fn in_out_network() -> NetworkSpec {
    let o = Site::new(&[0, 0]);
    NetworkSpec {
        dim: 2,
        leads: vec![
            LeadSpec::incoming(vec![o.clone()], Direction::minus(2)),
            LeadSpec::outgoing(vec![o], Direction::minus(1)),
        ],
        boundary: false,
    }
}

/// A random admissible network in `Z²` whose prefixes stay in `window`,
/// found by rejection. Prefixes are random nearest-neighbour walks of length
/// at most `max_prefix`; rays point anywhere.
pub fn random_network<R: Rng + ?Sized>(
    window: [(i64, i64); 2],
    n_out: usize,
    n_in: usize,
    max_prefix: usize,
    rng: &mut R,
) -> NetworkSpec {
    loop {
        let mut leads = Vec::new();
        for i in 0..n_out + n_in {
            let len = rng.gen_range(1..=max_prefix);
            let mut x = Site::new(&[
                rng.gen_range(window[0].0..=window[0].1),
                rng.gen_range(window[1].0..=window[1].1),
            ]);
            let mut prefix = vec![x.clone()];
            while prefix.len() < len {
                let y = x.step(Direction::from_index(rng.gen_range(0..4)));
                if in_box(&y, &window) && !prefix.contains(&y) {
                    prefix.push(y.clone());
                    x = y;
                } else if rng.gen_bool(0.2) {
                    break;
                }
            }
            let ray = Direction::from_index(rng.gen_range(0..4));
            leads.push(if i < n_out {
                LeadSpec::outgoing(prefix, ray)
            } else {
                LeadSpec::incoming(prefix, ray)
            });
        }
        let net = NetworkSpec {
            dim: 2,
            leads,
            boundary: false,
        };
        if net.validate().is_ok() {
            return net;
        }
    }
}

/// One-dimensional walk with coins commuting with `P_{(1)}` on `x ≥ n`,
/// random elsewhere, and `P = P_{(1)}` on `x ≥ n`, `0` elsewhere.
pub fn basic_example<R: Rng + ?Sized>(n: i64, w: i64, rng: &mut R) -> (CoinedWalk, AdaptedProjection) {
    let plus = Direction::plus(1);
    let mut coin = BlockField::new(1, 2);
    for x in -w..=w {
        let c = if x >= n {
            random_commuting_coin(2, plus.index(), rng)
        } else {
            linalg::random_unitary(2, rng)
        };
        coin.set(Site::new(&[x]), c);
    }
    coin.push_tail(
        Region::everything(1).with_axis(1, Some(w + 1), None),
        Pattern::Constant(random_commuting_coin(2, plus.index(), rng)),
    );
    coin.push_tail(Region::everything(1), Pattern::Constant(linalg::random_unitary(2, rng)));
    let walk = CoinedWalk::new(coin, &Tolerances::default()).expect("random coins are unitary");
    let mut p = AdaptedProjection::empty(1);
    p.push_tail(Region::everything(1).with_axis(1, Some(n), None), bit(plus));
    (walk, p)
}

/// `P = χ(x ∈ N×{0}^{d−1}) P_{(±1)}` with coins commuting with `P_{(±1)}`
/// on the half-line.
pub fn half_line_example<R: Rng + ?Sized>(
    dim: usize,
    tau: Direction,
    w: i64,
    rng: &mut R,
) -> (CoinedWalk, AdaptedProjection) {
    let n = 2 * dim;
    let on_line = |x: &Site| x.coords()[0] >= 1 && x.coords()[1..].iter().all(|&c| c == 0);
    let mut coin = BlockField::new(dim, n);
    for x in crate::lattice::box_sites(&vec![(-w, w); dim]) {
        let c = if on_line(&x) {
            random_commuting_coin(n, tau.index(), rng)
        } else {
            linalg::random_unitary(n, rng)
        };
        coin.set(x, c);
    }
    let mut far_line = Region::everything(dim).with_axis(1, Some(w + 1), None);
    for a in 2..=dim {
        far_line = far_line.with_axis(a, Some(0), Some(0));
    }
    coin.push_tail(far_line, Pattern::Constant(random_commuting_coin(n, tau.index(), rng)));
    coin.push_tail(Region::everything(dim), Pattern::Constant(linalg::random_unitary(n, rng)));
    let walk = CoinedWalk::new(coin, &Tolerances::default()).expect("random coins are unitary");
    let mut line = Region::everything(dim).with_axis(1, Some(1), None);
    for a in 2..=dim {
        line = line.with_axis(a, Some(0), Some(0));
    }
    let mut p = AdaptedProjection::empty(dim);
    p.push_tail(line, bit(tau));
    (walk, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one() -> C64 {
        C64::new(1.0, 0.0)
    }

    #[test]
    fn adapted_projection_json_round_trip() {
        let mut p = half_space_projection(2, BoundaryVariant::WithLeads);
        p.add_window(Site::new(&[0, -3]), 5);
        let q = p.complement();
        let back: AdaptedProjection = serde_json::from_str(&serde_json::to_string(&q).unwrap()).unwrap();
        assert_eq!(back, q);
        assert!(back.negated);
    }

    fn identity_walk(dim: usize) -> CoinedWalk {
        CoinedWalk::new(BlockField::constant(dim, linalg::identity(2 * dim)), &Tolerances::default()).unwrap()
    }

    #[test]
    fn identity_coin_shifts_along_direction() {
        let u = identity_walk(1);
        let psi = LatticeState::basis(Site::new(&[0]), 0, 2);
        let out = u.apply(&psi).unwrap();
        assert_eq!(out.amplitude(&Site::new(&[1]), 0), one());
        assert_eq!(out.support_len(), 1);
        let back = u.apply_adjoint(&LatticeState::basis(Site::new(&[1]), 0, 2)).unwrap();
        assert_eq!(back, psi);
        assert!(u.apply(&LatticeState::zero(1, 2)).unwrap().is_zero());
    }

    #[test]
    fn hadamard_one_step() {
        let mut coin = BlockField::constant(1, linalg::identity(2));
        coin.set(Site::new(&[0]), linalg::hadamard());
        let u = CoinedWalk::new(coin, &Tolerances::default()).unwrap();
        let out = u.apply(&LatticeState::basis(Site::new(&[0]), 0, 2)).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((out.amplitude(&Site::new(&[1]), 0) - C64::new(s, 0.0)).norm() < 1e-15);
        assert!((out.amplitude(&Site::new(&[-1]), 1) - C64::new(s, 0.0)).norm() < 1e-15);
        assert_eq!(out.support_len(), 2);
    }

    #[test]
    fn window_matrix_of_shift() {
        let u = identity_walk(1);
        let m = u.matrix_on_window(&[Site::new(&[0]), Site::new(&[1])]).unwrap();
        assert_eq!(m.nrows(), 4);
        let ones = m.iter().filter(|z| **z == one()).count();
        let nonzero = m.iter().filter(|z| **z != ZERO).count();
        assert_eq!((ones, nonzero), (2, 2));
        // |0,+1⟩ → |1,+1⟩ and |1,−1⟩ → |0,−1⟩
        assert_eq!(m[(2, 0)], one());
        assert_eq!(m[(1, 3)], one());
        let single = u.matrix_on_window(&[Site::new(&[4])]).unwrap();
        assert!(linalg::is_zero(&single, 0.0));
    }

    #[test]
    fn non_unitary_coin_rejected() {
        let mut coin = BlockField::constant(1, linalg::identity(2));
        coin.set(Site::new(&[2]), linalg::identity(2).scale(0.5));
        assert!(matches!(
            CoinedWalk::new(coin, &Tolerances::default()),
            Err(Error::NotUnitary { .. })
        ));
        let empty = BlockField::new(1, 2);
        assert!(CoinedWalk::new(empty, &Tolerances::default()).is_err());
    }

    #[test]
    fn hat_of_homogeneous_examples() {
        // P_a(x) = χ(x ≥ 1)|+1⟩⟨+1|: P̂_a = P_a on x ≥ 1
        let mut pa = AdaptedProjection::empty(1);
        pa.push_tail(Region::everything(1).with_axis(1, Some(1), None), bit(Direction::plus(1)));
        let ha = hat_projection(&pa);
        for x in 1..12 {
            let s = Site::new(&[x]);
            assert_eq!(ha.mask_at(&s), pa.mask_at(&s));
            assert_eq!(pa.hat_mask_at(&s), pa.mask_at(&s));
        }
        // P_b(x) = χ(x ≥ 1)|(−1)^x⟩⟨(−1)^x|: P̂_b = P_b⊥ on x ≥ 1
        let mut pb = AdaptedProjection::empty(1);
        pb.field.push_tail(
            Region::everything(1).with_axis(1, Some(1), None),
            Pattern::Periodic {
                period: vec![2],
                cells: vec![Some(bit(Direction::plus(1))), Some(bit(Direction::minus(1)))],
            },
        );
        let hb = hat_projection(&pb);
        for x in 1..12 {
            let s = Site::new(&[x]);
            assert_eq!(hb.mask_at(&s), 0b11 & !pb.mask_at(&s), "x = {x}");
            assert_eq!(pb.hat_mask_at(&s), hb.mask_at(&s));
        }
        let full = AdaptedProjection::full(2);
        assert_eq!(full.hat_mask_at(&Site::new(&[3, -1])), 0b1111);
    }

    #[test]
    fn basic_example_index_and_flux_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (walk, p) = basic_example(2, 3, &mut rng);
        let flux = walk_flux(&walk, &p).unwrap();
        for b in &flux.blocks {
            assert!(b.label.coords()[0].abs() <= 2, "Φ({}) ≠ 0", b.label);
        }
        let cert = flux::certify_isolated(&flux, &Tolerances::default());
        assert!(cert.ok && cert.c == 0.0 && cert.radius <= 2);
        let r = walk_index(&walk, &p, &Tolerances::default()).unwrap();
        assert_eq!(r.index, 1);
        assert_eq!(r.rank_formula, Some(1));
    }

    #[test]
    fn commuting_tail_keeps_unilateral_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (walk, _) = basic_example(0, 3, &mut rng);
        let mut psi = LatticeState::basis(Site::new(&[5]), 0, 2);
        for _ in 0..20 {
            psi = walk.apply(&psi).unwrap();
            for (x, v) in psi.iter() {
                assert!(x.coords()[0] >= 5);
                assert_eq!(v[1], ZERO);
            }
        }
    }

    #[test]
    fn lead_parametrization() {
        // incoming lead γ(n) = (0, −n−1), n ∈ −N
        let lead = LeadSpec::incoming(vec![Site::new(&[0, 0])], Direction::minus(2));
        assert_eq!(lead.site(-1), Site::new(&[0, 0]));
        assert_eq!(lead.site(-3), Site::new(&[0, 2]));
        assert_eq!(lead.tangent(-1), Direction::minus(2));
        // outgoing ρ(n) = (−n+1, 0)
        let rho = LeadSpec::outgoing(vec![Site::new(&[0, 0])], Direction::minus(1));
        assert_eq!(rho.site(4), Site::new(&[-3, 0]));
        assert_eq!(rho.tangent(1), Direction::minus(1));
    }

    #[test]
    fn admissible_but_not_simple_lead_is_accepted() {
        // revisits (0,1) with a different tangent
        let lead = LeadSpec::outgoing(
            vec![
                Site::new(&[0, 0]),
                Site::new(&[0, 1]),
                Site::new(&[1, 1]),
                Site::new(&[1, 2]),
                Site::new(&[0, 2]),
                Site::new(&[0, 1]),
                Site::new(&[-1, 1]),
            ],
            Direction::minus(1),
        );
        let net = NetworkSpec {
            dim: 2,
            leads: vec![lead],
            boundary: false,
        };
        let geo = net.validate().unwrap();
        assert!(!geo.simple[0]);
    }

    #[test]
    fn reflecting_coin_swaps_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random_reflecting_coin(3, &mut rng);
        assert!(linalg::unitarity_defect(&c) < 1e-12);
        assert!(reflects(&c, Direction::plus(3), 1e-14));
    }
}
