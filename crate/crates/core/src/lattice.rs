//! Lattice sites, finitely supported states, site-indexed fields with
//! templated tails, and strictly local unitaries applied lazily.
//!
//! All operators handled here couple only nearest neighbours, so applying
//! them to a finitely supported state is exact: no truncation, no boundary.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec, C64, ZERO};

pub type Coords = SmallVec<[i64; 4]>;

/// A point of `Z^d`. Ordering is lexicographic in the coordinates.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site(pub Coords);

impl Site {
    pub fn new(coords: &[i64]) -> Self {
        Site(Coords::from_slice(coords))
    }

    pub fn origin(dim: usize) -> Self {
        Site(smallvec::smallvec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn step(&self, dir: Direction) -> Site {
        let mut c = self.0.clone();
        c[dir.axis - 1] += dir.sign as i64;
        Site(c)
    }

    pub fn translate(&self, delta: &[i64]) -> Site {
        let mut c = self.0.clone();
        for (a, b) in c.iter_mut().zip(delta) {
            *a += *b;
        }
        Site(c)
    }

    pub fn linf(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn l1_distance(&self, other: &Site) -> i64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn difference(&self, other: &Site) -> Coords {
        self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// A lattice direction `±e_axis`, `axis` counted from 1.
///
/// The internal basis of `C^{2d}` is ordered `|+1⟩, |−1⟩, |+2⟩, |−2⟩, …`, so
/// `(+j)` sits at 0-based index `2j − 2` and `(−j)` at `2j − 1`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Direction {
    pub axis: usize,
    pub sign: i8,
}

impl Direction {
    pub fn new(axis: usize, sign: i8) -> Self {
        assert!(axis >= 1 && (sign == 1 || sign == -1));
        Direction { axis, sign }
    }

    pub fn plus(axis: usize) -> Self {
        Direction::new(axis, 1)
    }

    pub fn minus(axis: usize) -> Self {
        Direction::new(axis, -1)
    }

    pub fn index(self) -> usize {
        2 * (self.axis - 1) + usize::from(self.sign < 0)
    }

    pub fn from_index(i: usize) -> Self {
        Direction::new(i / 2 + 1, if i.is_multiple_of(2) { 1 } else { -1 })
    }

    pub fn all(dim: usize) -> impl Iterator<Item = Direction> {
        (0..2 * dim).map(Direction::from_index)
    }

    pub fn reversed(self) -> Self {
        Direction::new(self.axis, -self.sign)
    }

    pub fn vector(self, dim: usize) -> Coords {
        let mut v: Coords = smallvec::smallvec![0; dim];
        v[self.axis - 1] = self.sign as i64;
        v
    }

    /// The direction `b − a` for nearest neighbours, if they are.
    pub fn between(a: &Site, b: &Site) -> Option<Direction> {
        let diff = b.difference(a);
        let mut found = None;
        for (k, &c) in diff.iter().enumerate() {
            match c {
                0 => {}
                1 | -1 if found.is_none() => found = Some(Direction::new(k + 1, c as i8)),
                _ => return None,
            }
        }
        found
    }
}

impl fmt::Debug for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", if self.sign > 0 { '+' } else { '-' }, self.axis)
    }
}

/// A finitely supported vector of `ℓ²(Z^d, C^n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeState {
    dim: usize,
    n_internal: usize,
    entries: BTreeMap<Site, Vec<C64>>,
}

impl LatticeState {
    pub fn zero(dim: usize, n_internal: usize) -> Self {
        LatticeState {
            dim,
            n_internal,
            entries: BTreeMap::new(),
        }
    }

    /// `|site⟩ ⊗ |k⟩`.
    pub fn basis(site: Site, k: usize, n_internal: usize) -> Self {
        let mut s = LatticeState::zero(site.dim(), n_internal);
        s.add(&site, k, C64::new(1.0, 0.0));
        s
    }

    /// Random Gaussian amplitudes on the given sites, normalized.
    pub fn random<R: Rng + ?Sized>(
        sites: &[Site],
        dim: usize,
        n_internal: usize,
        rng: &mut R,
    ) -> Self {
        let mut s = LatticeState::zero(dim, n_internal);
        for site in sites {
            let v = (0..n_internal)
                .map(|_| linalg::random_complex_gaussian(rng))
                .collect();
            s.entries.insert(site.clone(), v);
        }
        s.normalized()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_internal(&self) -> usize {
        self.n_internal
    }

    pub fn get(&self, site: &Site) -> Option<&[C64]> {
        self.entries.get(site).map(|v| v.as_slice())
    }

    pub fn amplitude(&self, site: &Site, k: usize) -> C64 {
        self.entries.get(site).map_or(ZERO, |v| v[k])
    }

    pub fn add(&mut self, site: &Site, k: usize, value: C64) {
        let n = self.n_internal;
        let v = self
            .entries
            .entry(site.clone())
            .or_insert_with(|| vec![ZERO; n]);
        v[k] += value;
    }

    pub fn add_vector(&mut self, site: &Site, values: &[C64]) {
        let n = self.n_internal;
        let v = self
            .entries
            .entry(site.clone())
            .or_insert_with(|| vec![ZERO; n]);
        for (a, b) in v.iter_mut().zip(values) {
            *a += *b;
        }
    }

    pub fn set_vector(&mut self, site: Site, values: Vec<C64>) {
        debug_assert_eq!(values.len(), self.n_internal);
        self.entries.insert(site, values);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Site, &Vec<C64>)> {
        self.entries.iter()
    }

    pub fn support(&self) -> impl Iterator<Item = &Site> {
        self.entries.keys()
    }

    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.values().all(|v| v.iter().all(|z| *z == ZERO))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|v| v.iter())
            .map(|z| z.norm_sqr())
            .fold(0.0, |a, b| a + b)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.scale(C64::new(1.0 / n, 0.0));
        }
        self
    }

    /// `⟨self, other⟩`, antilinear in `self`.
    pub fn inner(&self, other: &LatticeState) -> C64 {
        let (small, large, flip) = if self.entries.len() <= other.entries.len() {
            (self, other, false)
        } else {
            (other, self, true)
        };
        let mut acc = ZERO;
        for (site, a) in &small.entries {
            if let Some(b) = large.entries.get(site) {
                for (x, y) in a.iter().zip(b) {
                    acc += if flip { y.conj() * x } else { x.conj() * y };
                }
            }
        }
        acc
    }

    pub fn scale(&mut self, c: C64) {
        for v in self.entries.values_mut() {
            for z in v.iter_mut() {
                *z *= c;
            }
        }
    }

    /// `self += c · other`.
    pub fn axpy(&mut self, c: C64, other: &LatticeState) {
        for (site, v) in &other.entries {
            let scaled: Vec<C64> = v.iter().map(|z| z * c).collect();
            self.add_vector(site, &scaled);
        }
    }

    pub fn sub(&self, other: &LatticeState) -> LatticeState {
        let mut out = self.clone();
        out.axpy(C64::new(-1.0, 0.0), other);
        out
    }

    /// Drop sites whose amplitudes are all exactly zero.
    pub fn prune_exact(&mut self) {
        self.entries.retain(|_, v| v.iter().any(|z| *z != ZERO));
    }

    /// Zero amplitudes with modulus `<= eps` and drop empty sites. Off by
    /// default everywhere; callers opt in.
    pub fn prune(&mut self, eps: f64) {
        for v in self.entries.values_mut() {
            for z in v.iter_mut() {
                if z.norm() <= eps {
                    *z = ZERO;
                }
            }
        }
        self.prune_exact();
    }

    pub fn max_abs_diff(&self, other: &LatticeState) -> f64 {
        let d = self.sub(other);
        d.entries
            .values()
            .flat_map(|v| v.iter())
            .fold(0.0, |acc, z| acc.max(z.norm()))
    }

    pub fn check_compatible(&self, dim: usize, n_internal: usize) -> Result<()> {
        if self.n_internal != n_internal {
            return Err(Error::InternalDimension {
                expected: n_internal,
                found: self.n_internal,
            });
        }
        if self.dim != dim {
            return Err(Error::LatticeDimension {
                expected: dim,
                found: self.dim,
            });
        }
        Ok(())
    }
}

/// Product of closed per-axis intervals, each possibly unbounded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub bounds: Vec<(Option<i64>, Option<i64>)>,
}

impl Region {
    pub fn everything(dim: usize) -> Self {
        Region {
            bounds: vec![(None, None); dim],
        }
    }

    pub fn with_axis(mut self, axis: usize, lo: Option<i64>, hi: Option<i64>) -> Self {
        self.bounds[axis - 1] = (lo, hi);
        self
    }

    /// The single site `s`.
    pub fn point(s: &Site) -> Self {
        Region {
            bounds: s.coords().iter().map(|&c| (Some(c), Some(c))).collect(),
        }
    }

    pub fn contains(&self, s: &Site) -> bool {
        self.bounds.iter().zip(s.coords()).all(|(&(lo, hi), &c)| {
            lo.is_none_or(|l| c >= l) && hi.is_none_or(|h| c <= h)
        })
    }

    fn finite_bounds(&self, axis: usize) -> impl Iterator<Item = i64> + '_ {
        let (lo, hi) = self.bounds[axis];
        lo.into_iter().chain(hi)
    }
}

/// Tail value rule on a region: constant, or periodic in the absolute
/// coordinates. Periodic cells may be empty, deferring to later rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern<T> {
    Constant(T),
    Periodic {
        period: Vec<i64>,
        /// Row-major over residues `0..period[0], 0..period[1], …`.
        cells: Vec<Option<T>>,
    },
}

impl<T> Pattern<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Pattern<U> {
        match self {
            Pattern::Constant(v) => Pattern::Constant(f(v)),
            Pattern::Periodic { period, cells } => Pattern::Periodic {
                period: period.clone(),
                cells: cells.iter().map(|c| c.as_ref().map(&mut f)).collect(),
            },
        }
    }

    pub fn value_at(&self, s: &Site) -> Option<&T> {
        match self {
            Pattern::Constant(v) => Some(v),
            Pattern::Periodic { period, cells } => {
                let mut idx = 0usize;
                for (&p, &c) in period.iter().zip(s.coords()) {
                    idx = idx * p as usize + c.rem_euclid(p) as usize;
                }
                cells[idx].as_ref()
            }
        }
    }

    fn period(&self, axis: usize) -> i64 {
        match self {
            Pattern::Constant(_) => 1,
            Pattern::Periodic { period, .. } => period[axis],
        }
    }

    fn values(&self) -> Vec<&T> {
        match self {
            Pattern::Constant(v) => vec![v],
            Pattern::Periodic { cells, .. } => cells.iter().flatten().collect(),
        }
    }
}

/// A total map `Site → T`: explicit window values, then an ordered list of
/// tail rules. Evaluation outside every rule yields nothing (the caller's
/// zero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    into = "SiteFieldRepr<T>",
    from = "SiteFieldRepr<T>",
    bound(serialize = "T: Clone + Serialize", deserialize = "T: Deserialize<'de>")
)]
pub struct SiteField<T> {
    pub dim: usize,
    pub window: BTreeMap<Site, T>,
    pub tail: Vec<(Region, Pattern<T>)>,
}

/// JSON has no structured map keys, so the window is a list of pairs.
#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
struct SiteFieldRepr<T> {
    dim: usize,
    #[serde(default)]
    window: Vec<(Site, T)>,
    #[serde(default)]
    tail: Vec<(Region, Pattern<T>)>,
}

impl<T> From<SiteFieldRepr<T>> for SiteField<T> {
    fn from(r: SiteFieldRepr<T>) -> Self {
        SiteField {
            dim: r.dim,
            window: r.window.into_iter().collect(),
            tail: r.tail,
        }
    }
}

impl<T> From<SiteField<T>> for SiteFieldRepr<T> {
    fn from(f: SiteField<T>) -> Self {
        SiteFieldRepr {
            dim: f.dim,
            window: f.window.into_iter().collect(),
            tail: f.tail,
        }
    }
}

impl<T> SiteField<T> {
    pub fn new(dim: usize) -> Self {
        SiteField {
            dim,
            window: BTreeMap::new(),
            tail: Vec::new(),
        }
    }

    /// Window value if present, else the first tail rule that yields a value.
    pub fn first(&self, s: &Site) -> Option<&T> {
        if let Some(v) = self.window.get(s) {
            return Some(v);
        }
        self.tail
            .iter()
            .filter(|(r, _)| r.contains(s))
            .find_map(|(_, p)| p.value_at(s))
    }

    /// Window value together with every matching tail value.
    pub fn all(&self, s: &Site) -> Vec<&T> {
        let mut out: Vec<&T> = self.window.get(s).into_iter().collect();
        out.extend(
            self.tail
                .iter()
                .filter(|(r, _)| r.contains(s))
                .filter_map(|(_, p)| p.value_at(s)),
        );
        out
    }

    pub fn push_tail(&mut self, region: Region, pattern: Pattern<T>) {
        self.tail.push((region, pattern));
    }

    /// Every coordinate at which the field's structure may change, per axis.
    pub fn breakpoints(&self) -> Vec<Vec<i64>> {
        (0..self.dim)
            .map(|axis| {
                let mut v: Vec<i64> = self.window.keys().map(|s| s.coords()[axis]).collect();
                for (r, _) in &self.tail {
                    v.extend(r.finite_bounds(axis));
                }
                v
            })
            .collect()
    }

    /// Least common multiple of the tail periods, per axis.
    pub fn periods(&self) -> Vec<i64> {
        (0..self.dim)
            .map(|axis| {
                self.tail
                    .iter()
                    .fold(1, |acc, (_, p)| lcm(acc, p.period(axis)))
            })
            .collect()
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> SiteField<U> {
        SiteField {
            dim: self.dim,
            window: self.window.iter().map(|(s, v)| (s.clone(), f(v))).collect(),
            tail: self.tail.iter().map(|(r, p)| (r.clone(), p.map(&mut f))).collect(),
        }
    }

    /// Every stored value, window and tail.
    pub fn stored_values(&self) -> impl Iterator<Item = (String, &T)> {
        self.window
            .iter()
            .map(|(s, v)| (s.to_string(), v))
            .chain(self.tail.iter().enumerate().flat_map(|(i, (_, p))| {
                p.values()
                    .into_iter()
                    .map(move |v| (format!("tail rule {i}"), v))
            }))
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

pub fn lcm(a: i64, b: i64) -> i64 {
    (a / gcd(a, b) * b).abs()
}

/// Site-indexed square matrices: coins, projection symbols, flux blocks.
/// Serialized with each matrix as a list of rows of `[re, im]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "BlockFieldRepr", try_from = "BlockFieldRepr")]
pub struct BlockField {
    pub n: usize,
    pub field: SiteField<CMat>,
}

type Rows = Vec<Vec<C64>>;

#[derive(Serialize, Deserialize)]
struct BlockFieldRepr {
    n: usize,
    field: SiteField<Rows>,
}

impl From<BlockField> for BlockFieldRepr {
    fn from(b: BlockField) -> Self {
        let rows = |m: &CMat| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        BlockFieldRepr {
            n: b.n,
            field: b.field.map(rows),
        }
    }
}

impl TryFrom<BlockFieldRepr> for BlockField {
    type Error = String;

    fn try_from(r: BlockFieldRepr) -> std::result::Result<Self, String> {
        let n = r.n;
        let mut bad = None;
        let field = r.field.map(|rows: &Rows| {
            if rows.len() != n || rows.iter().any(|row| row.len() != n) {
                bad = Some(format!("expected a {n}×{n} matrix"));
                return CMat::zeros(n, n);
            }
            CMat::from_fn(n, n, |i, j| rows[i][j])
        });
        match bad {
            Some(e) => Err(e),
            None => Ok(BlockField { n, field }),
        }
    }
}

impl BlockField {
    pub fn new(dim: usize, n: usize) -> Self {
        BlockField {
            n,
            field: SiteField::new(dim),
        }
    }

    pub fn constant(dim: usize, m: CMat) -> Self {
        let mut f = BlockField::new(dim, m.nrows());
        f.field.push_tail(Region::everything(dim), Pattern::Constant(m));
        f
    }

    pub fn dim(&self) -> usize {
        self.field.dim
    }

    pub fn set(&mut self, s: Site, m: CMat) {
        self.field.window.insert(s, m);
    }

    pub fn push_tail(&mut self, region: Region, pattern: Pattern<CMat>) {
        self.field.push_tail(region, pattern);
    }

    /// Value at `s`; the zero matrix where no rule applies.
    pub fn at(&self, s: &Site) -> CMat {
        self.field
            .first(s)
            .cloned()
            .unwrap_or_else(|| CMat::zeros(self.n, self.n))
    }

    pub fn check_unitary(&self, tol: f64) -> Result<()> {
        for (label, m) in self.field.stored_values() {
            let defect = linalg::unitarity_defect(m);
            if defect > tol {
                return Err(Error::NotUnitary {
                    site: label,
                    defect,
                });
            }
        }
        // the implicit zero outside all rules is not unitary
        let scan = ScanBox::new(self.field.breakpoints(), self.field.periods(), 1);
        for s in scan.exterior_sites() {
            if self.field.first(&s).is_none() {
                return Err(Error::NotUnitary {
                    site: s.to_string(),
                    defect: 1.0,
                });
            }
        }
        Ok(())
    }

    pub fn check_projection(&self, tol: f64) -> Result<()> {
        for (label, m) in self.field.stored_values() {
            let defect = linalg::projection_defect(m);
            if defect > tol {
                return Err(Error::NotProjection {
                    site: label,
                    defect,
                });
            }
        }
        Ok(())
    }
}

/// Finite set of sites that sees every local configuration of a field.
///
/// Per axis, `core` spans all breakpoints plus a margin; `outer` extends the
/// core by one full period on each side. A site outside the core agrees, in
/// its closed 1-neighbourhood, with a site of `outer \ core` obtained by
/// reducing its far coordinates modulo the period.
#[derive(Clone, Debug)]
pub struct ScanBox {
    pub core: Vec<(i64, i64)>,
    pub outer: Vec<(i64, i64)>,
}

impl ScanBox {
    pub fn new(breakpoints: Vec<Vec<i64>>, periods: Vec<i64>, margin: i64) -> Self {
        let mut core = Vec::new();
        let mut outer = Vec::new();
        for (bp, &p) in breakpoints.iter().zip(&periods) {
            let lo = bp.iter().copied().min().unwrap_or(0).min(0);
            let hi = bp.iter().copied().max().unwrap_or(0).max(0);
            core.push((lo - margin, hi + margin));
            outer.push((lo - margin - p, hi + margin + p));
        }
        ScanBox { core, outer }
    }

    pub fn merge(breakpoints: &[Vec<Vec<i64>>], periods: &[Vec<i64>], margin: i64) -> Self {
        let dim = breakpoints[0].len();
        let bp: Vec<Vec<i64>> = (0..dim)
            .map(|a| breakpoints.iter().flat_map(|b| b[a].iter().copied()).collect())
            .collect();
        let per: Vec<i64> = (0..dim)
            .map(|a| periods.iter().fold(1, |acc, p| lcm(acc, p[a])))
            .collect();
        ScanBox::new(bp, per, margin)
    }

    pub fn in_core(&self, s: &Site) -> bool {
        s.coords()
            .iter()
            .zip(&self.core)
            .all(|(&c, &(lo, hi))| c >= lo && c <= hi)
    }

    /// Largest `ℓ∞` norm of a core site.
    pub fn core_radius(&self) -> i64 {
        self.core
            .iter()
            .map(|&(lo, hi)| lo.abs().max(hi.abs()))
            .max()
            .unwrap_or(0)
    }

    pub fn core_sites(&self) -> Vec<Site> {
        box_sites(&self.core)
    }

    pub fn exterior_sites(&self) -> Vec<Site> {
        box_sites(&self.outer)
            .into_iter()
            .filter(|s| !self.in_core(s))
            .collect()
    }
}

/// All sites of a product of closed intervals, in lexicographic order.
pub fn box_sites(ranges: &[(i64, i64)]) -> Vec<Site> {
    let mut out = vec![Coords::new()];
    for &(lo, hi) in ranges {
        let mut next = Vec::with_capacity(out.len() * (hi - lo + 1).max(0) as usize);
        for prefix in &out {
            for c in lo..=hi {
                let mut p = prefix.clone();
                p.push(c);
                next.push(p);
            }
        }
        out = next;
    }
    out.into_iter().map(Site).collect()
}

/// Ordered basis of `ℓ²(A, C^n)` for a finite site set `A`: lexicographic
/// sites, then internal index.
#[derive(Clone, Debug)]
pub struct WindowBasis {
    pub sites: Vec<Site>,
    pub n_internal: usize,
    index: BTreeMap<Site, usize>,
}

impl WindowBasis {
    pub fn new(sites: impl IntoIterator<Item = Site>, n_internal: usize) -> Result<Self> {
        let set: BTreeSet<Site> = sites.into_iter().collect();
        if set.is_empty() {
            return Err(Error::EmptyWindow);
        }
        let sites: Vec<Site> = set.into_iter().collect();
        let index = sites
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(WindowBasis {
            sites,
            n_internal,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.sites.len() * self.n_internal
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn position(&self, s: &Site, k: usize) -> Option<usize> {
        self.index.get(s).map(|i| i * self.n_internal + k)
    }

    pub fn label(&self, pos: usize) -> (&Site, usize) {
        (&self.sites[pos / self.n_internal], pos % self.n_internal)
    }

    pub fn basis_state(&self, pos: usize) -> LatticeState {
        let (s, k) = self.label(pos);
        LatticeState::basis(s.clone(), k, self.n_internal)
    }

    /// Restriction of `psi` to the window, as a column vector.
    pub fn restrict(&self, psi: &LatticeState) -> CVec {
        let mut v = CVec::zeros(self.len());
        for (s, amps) in psi.iter() {
            if let Some(&i) = self.index.get(s) {
                for (k, a) in amps.iter().enumerate() {
                    v[i * self.n_internal + k] = *a;
                }
            }
        }
        v
    }

    pub fn embed(&self, v: &CVec) -> LatticeState {
        let dim = self.sites[0].dim();
        let mut out = LatticeState::zero(dim, self.n_internal);
        for (pos, a) in v.iter().enumerate() {
            if *a != ZERO {
                let (s, k) = self.label(pos);
                out.add(s, k, *a);
            }
        }
        out
    }
}

/// A unitary on `ℓ²(Z^d, C^n)` coupling only nearest neighbours.
pub trait LocalUnitary: Send + Sync {
    fn dim(&self) -> usize;

    fn n_internal(&self) -> usize;

    fn apply(&self, psi: &LatticeState) -> Result<LatticeState>;

    fn apply_adjoint(&self, psi: &LatticeState) -> Result<LatticeState>;

    /// `P_to U P_from` as a dense matrix in the two window bases.
    fn matrix_between(&self, from: &WindowBasis, to: &WindowBasis) -> Result<CMat> {
        let mut m = CMat::zeros(to.len(), from.len());
        for j in 0..from.len() {
            let out = self.apply(&from.basis_state(j))?;
            m.set_column(j, &to.restrict(&out));
        }
        Ok(m)
    }

    /// Compression `P_A U P_A`. Couplings leaving `A` are dropped, so the
    /// result is in general not unitary.
    fn matrix_on_window(&self, sites: &[Site]) -> Result<CMat> {
        let basis = WindowBasis::new(sites.iter().cloned(), self.n_internal())?;
        self.matrix_between(&basis, &basis)
    }
}

pub fn apply_power(u: &dyn LocalUnitary, psi: &LatticeState, k: i64) -> Result<LatticeState> {
    let mut out = psi.clone();
    for _ in 0..k.unsigned_abs() {
        out = if k > 0 {
            u.apply(&out)?
        } else {
            u.apply_adjoint(&out)?
        };
    }
    Ok(out)
}

/// Translation-invariant band unitary `(Uψ)(x) = Σ_o A_o ψ(x − o)` with all
/// offsets in the closed unit `ℓ¹` ball.
#[derive(Clone, Debug)]
pub struct ExplicitBand {
    dim: usize,
    n: usize,
    couplings: Vec<(Coords, CMat)>,
}

impl ExplicitBand {
    pub fn new(dim: usize, couplings: Vec<(Coords, CMat)>, tol: f64) -> Result<Self> {
        let n = couplings.first().map(|(_, m)| m.nrows()).unwrap_or(0);
        for (o, m) in &couplings {
            if o.len() != dim {
                return Err(Error::LatticeDimension {
                    expected: dim,
                    found: o.len(),
                });
            }
            if o.iter().map(|c| c.abs()).sum::<i64>() > 1 {
                return Err(Error::NotUnitary {
                    site: format!("offset {o:?} exceeds band width 1"),
                    defect: f64::INFINITY,
                });
            }
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::InternalDimension {
                    expected: n,
                    found: m.nrows(),
                });
            }
        }
        // U*U = I  ⇔  Σ_o A_o* A_{o+m} = δ_{m,0} I for every shift m, and
        // likewise for UU*
        let mut shifts: BTreeSet<Coords> = BTreeSet::new();
        for (a, _) in &couplings {
            for (b, _) in &couplings {
                shifts.insert(b.iter().zip(a).map(|(x, y)| x - y).collect());
            }
        }
        for m in shifts {
            let mut left = CMat::zeros(n, n);
            let mut right = CMat::zeros(n, n);
            for (a, ma) in &couplings {
                for (b, mb) in &couplings {
                    let d: Coords = b.iter().zip(a).map(|(x, y)| x - y).collect();
                    if d == m {
                        left += ma.adjoint() * mb;
                        right += mb * ma.adjoint();
                    }
                }
            }
            let target = if m.iter().all(|&c| c == 0) {
                linalg::identity(n)
            } else {
                CMat::zeros(n, n)
            };
            let defect = linalg::max_abs(&(left - &target)).max(linalg::max_abs(&(right - &target)));
            if defect > tol {
                return Err(Error::NotUnitary {
                    site: format!("band symbol at shift {m:?}"),
                    defect,
                });
            }
        }
        Ok(ExplicitBand { dim, n, couplings })
    }
}

impl LocalUnitary for ExplicitBand {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_internal(&self) -> usize {
        self.n
    }

    fn apply(&self, psi: &LatticeState) -> Result<LatticeState> {
        psi.check_compatible(self.dim, self.n)?;
        let mut out = LatticeState::zero(self.dim, self.n);
        for (s, v) in psi.iter() {
            let v = CVec::from_column_slice(v);
            for (o, m) in &self.couplings {
                let w = m * &v;
                out.add_vector(&s.translate(o), w.as_slice());
            }
        }
        out.prune_exact();
        Ok(out)
    }

    fn apply_adjoint(&self, psi: &LatticeState) -> Result<LatticeState> {
        psi.check_compatible(self.dim, self.n)?;
        let mut out = LatticeState::zero(self.dim, self.n);
        for (s, v) in psi.iter() {
            let v = CVec::from_column_slice(v);
            for (o, m) in &self.couplings {
                let back: Coords = o.iter().map(|c| -c).collect();
                let w = m.adjoint() * &v;
                out.add_vector(&s.translate(&back), w.as_slice());
            }
        }
        out.prune_exact();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_field_json_round_trip() {
        let mut rng = rand::rngs::mock::StepRng::new(7, 11);
        let mut f = BlockField::constant(2, linalg::hadamard());
        f.set(Site::new(&[1, -2]), linalg::random_unitary(2, &mut rng));
        f.push_tail(
            Region::everything(2).with_axis(1, Some(3), None),
            Pattern::Periodic {
                period: vec![2, 1],
                cells: vec![Some(linalg::identity(2)), None],
            },
        );
        let json = serde_json::to_string(&f).unwrap();
        let back: BlockField = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);
        let wrong = json.replacen("\"n\":2", "\"n\":3", 1);
        assert!(serde_json::from_str::<BlockField>(&wrong).is_err());
    }

    #[test]
    fn direction_index_convention() {
        assert_eq!(Direction::plus(1).index(), 0);
        assert_eq!(Direction::minus(1).index(), 1);
        assert_eq!(Direction::plus(2).index(), 2);
        assert_eq!(Direction::minus(3).index(), 5);
        for i in 0..8 {
            assert_eq!(Direction::from_index(i).index(), i);
        }
        let a = Site::new(&[0, 0]);
        assert_eq!(Direction::between(&a, &Site::new(&[0, -1])), Some(Direction::minus(2)));
        assert_eq!(Direction::between(&a, &Site::new(&[1, 1])), None);
        assert_eq!(Direction::between(&a, &a), None);
    }

    #[test]
    fn state_inner_and_norm() {
        let mut a = LatticeState::zero(1, 2);
        a.add(&Site::new(&[0]), 0, C64::new(1.0, 1.0));
        let mut b = LatticeState::zero(1, 2);
        b.add(&Site::new(&[0]), 0, C64::new(0.0, 2.0));
        b.add(&Site::new(&[3]), 1, C64::new(5.0, 0.0));
        assert_eq!(a.inner(&b), C64::new(1.0, -1.0) * C64::new(0.0, 2.0));
        assert_eq!(b.inner(&a), a.inner(&b).conj());
        assert!((b.norm_sqr() - 29.0).abs() < 1e-15);
    }

    #[test]
    fn pruning_is_exact_by_default() {
        let mut a = LatticeState::zero(1, 1);
        a.add(&Site::new(&[0]), 0, C64::new(1e-300, 0.0));
        a.add(&Site::new(&[1]), 0, ZERO);
        a.prune_exact();
        assert_eq!(a.support_len(), 1);
        a.prune(1e-12);
        assert_eq!(a.support_len(), 0);
    }

    #[test]
    fn field_evaluation_is_total_and_ordered() {
        let mut f: SiteField<i32> = SiteField::new(1);
        f.window.insert(Site::new(&[0]), 7);
        f.push_tail(Region::everything(1).with_axis(1, Some(3), None), Pattern::Constant(1));
        f.push_tail(
            Region::everything(1),
            Pattern::Periodic {
                period: vec![2],
                cells: vec![Some(2), None],
            },
        );
        assert_eq!(f.first(&Site::new(&[0])), Some(&7));
        assert_eq!(f.first(&Site::new(&[5])), Some(&1));
        assert_eq!(f.first(&Site::new(&[-4])), Some(&2));
        assert_eq!(f.first(&Site::new(&[-3])), None);
        assert_eq!(f.all(&Site::new(&[4])), vec![&1, &2]);
        assert_eq!(f.periods(), vec![2]);
    }

    #[test]
    fn scan_box_exterior_excludes_core() {
        let sb = ScanBox::new(vec![vec![-2, 3]], vec![2], 2);
        assert_eq!(sb.core, vec![(-4, 5)]);
        let ext: Vec<i64> = sb.exterior_sites().iter().map(|s| s.coords()[0]).collect();
        assert_eq!(ext, vec![-6, -5, 6, 7]);
    }

    #[test]
    fn window_basis_is_lexicographic() {
        let w = WindowBasis::new(
            vec![Site::new(&[1, 0]), Site::new(&[0, 1]), Site::new(&[0, 0])],
            2,
        )
        .unwrap();
        assert_eq!(w.position(&Site::new(&[0, 0]), 1), Some(1));
        assert_eq!(w.position(&Site::new(&[0, 1]), 0), Some(2));
        assert_eq!(w.position(&Site::new(&[1, 0]), 1), Some(5));
        assert!(WindowBasis::new(Vec::<Site>::new(), 1).is_err());
    }

    #[test]
    fn explicit_band_shift_roundtrip() {
        // plain right shift on ℓ²(Z)
        let u = ExplicitBand::new(
            1,
            vec![(smallvec::smallvec![1], linalg::identity(1))],
            1e-12,
        )
        .unwrap();
        let psi = LatticeState::basis(Site::new(&[0]), 0, 1);
        let out = u.apply(&psi).unwrap();
        assert_eq!(out.amplitude(&Site::new(&[1]), 0), C64::new(1.0, 0.0));
        assert_eq!(u.apply_adjoint(&out).unwrap(), psi);
        // two half-weight offsets are not unitary
        let half = linalg::identity(1).scale(0.5_f64.sqrt());
        assert!(ExplicitBand::new(
            1,
            vec![
                (smallvec::smallvec![1], half.clone()),
                (smallvec::smallvec![-1], half)
            ],
            1e-12
        )
        .is_err());
    }
}
