//! Chalker–Coddington networks on `Z²`, admissible dual paths and the flux
//! through them.
//!
//! Scatterers sit at `z ∈ Z × 2Z`; `z₁` even is an even scatterer, odd an odd
//! one. Scatterer `z` maps its two inputs to its two outputs:
//!
//! | z            | inputs                      | outputs                     |
//! |--------------|-----------------------------|-----------------------------|
//! | `(2j, 2k)`   | `(2j, 2k)`, `(2j+1, 2k−1)`  | `(2j, 2k−1)`, `(2j+1, 2k)`  |
//! | `(2j+1, 2k)` | `(2j+1, 2k)`, `(2j+2, 2k+1)`| `(2j+2, 2k)`, `(2j+1, 2k+1)`|
//!
//! with `U|in_i⟩ = Σ_o S_z[i][o] |out_o⟩`. The diagonal entries of `S_z` carry
//! `r`, the off-diagonal ones `t`.
//!
//! Dual vertices are labelled by integer pairs: label `(x₁, x₂)` is the centre
//! `(x₁ + ½, x₂ − ½)` of the unit face with lower left corner `(x₁, x₂ − 1)`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::{self, BlockSource, FluxBlock, FluxField, IndexReport};
use crate::lattice::{
    lcm, Direction, LatticeState, LocalUnitary, Pattern, Region, ScanBox, Site, SiteField,
};
use crate::linalg::{self, CMat, C64, ZERO};
use crate::tolerance::Tolerances;

/// `S = q [[r, −t], [t̄, r̄]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scatter {
    pub q: C64,
    pub r: C64,
    pub t: C64,
}

impl Scatter {
    pub fn new(q: C64, r: C64, t: C64) -> Self {
        Scatter { q, r, t }
    }

    /// Real `r = |r|`, `t = √(1 − r²)`, `q = 1`.
    pub fn with_modulus(r: f64) -> Self {
        Scatter {
            q: C64::new(1.0, 0.0),
            r: C64::new(r, 0.0),
            t: C64::new((1.0 - r * r).max(0.0).sqrt(), 0.0),
        }
    }

    pub fn critical() -> Self {
        Scatter::with_modulus(std::f64::consts::FRAC_1_SQRT_2)
    }

    /// `[[0, −1], [1, 0]]`: everything goes through the `t` channel.
    pub fn pure_t() -> Self {
        Scatter::with_modulus(0.0)
    }

    /// The identity: everything goes through the `r` channel.
    pub fn pure_r() -> Self {
        Scatter::with_modulus(1.0)
    }

    /// Given `|r|` with i.i.d. uniform phases for `q`, `r` and `t`.
    pub fn random_phases<R: Rng + ?Sized>(r: f64, rng: &mut R) -> Self {
        let mut phase = || C64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU));
        let s = Scatter::with_modulus(r);
        Scatter {
            q: phase(),
            r: s.r * phase(),
            t: s.t * phase(),
        }
    }

    pub fn matrix(&self) -> CMat {
        CMat::from_row_slice(2, 2, &[self.r, -self.t, self.t.conj(), self.r.conj()]) * self.q
    }

    pub fn check(&self, z: &Site, tol: f64) -> Result<()> {
        let bad = |reason: String| Error::InvalidScattering {
            z: z.clone(),
            reason,
        };
        if (self.q.norm() - 1.0).abs() > tol {
            return Err(bad(format!("|q| = {}", self.q.norm())));
        }
        let s = self.r.norm_sqr() + self.t.norm_sqr();
        if (s - 1.0).abs() > tol {
            return Err(bad(format!("|r|² + |t|² = {s}")));
        }
        let d = linalg::unitarity_defect(&self.matrix());
        if d > tol {
            return Err(bad(format!("unitarity defect {d:.3e}")));
        }
        Ok(())
    }
}

fn even(v: i64) -> bool {
    v.rem_euclid(2) == 0
}

pub fn is_scatterer_label(z: &Site) -> bool {
    z.dim() == 2 && even(z.coords()[1])
}

pub fn inputs(z: &Site) -> [Site; 2] {
    let (a, b) = (z.coords()[0], z.coords()[1]);
    if even(a) {
        [Site::new(&[a, b]), Site::new(&[a + 1, b - 1])]
    } else {
        [Site::new(&[a, b]), Site::new(&[a + 1, b + 1])]
    }
}

pub fn outputs(z: &Site) -> [Site; 2] {
    let (a, b) = (z.coords()[0], z.coords()[1]);
    if even(a) {
        [Site::new(&[a, b - 1]), Site::new(&[a + 1, b])]
    } else {
        [Site::new(&[a + 1, b]), Site::new(&[a, b + 1])]
    }
}

/// Scatterer and input slot fed by the lattice site `x`.
pub fn input_slot(x: &Site) -> (Site, usize) {
    let (a, b) = (x.coords()[0], x.coords()[1]);
    match (even(a), even(b)) {
        (true, true) => (Site::new(&[a, b]), 0),
        (false, false) => (Site::new(&[a - 1, b + 1]), 1),
        (false, true) => (Site::new(&[a, b]), 0),
        (true, false) => (Site::new(&[a - 1, b - 1]), 1),
    }
}

/// Scatterer and output slot feeding the lattice site `x`.
pub fn output_slot(x: &Site) -> (Site, usize) {
    let (a, b) = (x.coords()[0], x.coords()[1]);
    match (even(a), even(b)) {
        (true, false) => (Site::new(&[a, b + 1]), 0),
        (false, true) => (Site::new(&[a - 1, b]), 1),
        (true, true) => (Site::new(&[a - 1, b]), 0),
        (false, false) => (Site::new(&[a, b - 1]), 1),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterEntry {
    pub z: [i64; 2],
    #[serde(flatten)]
    pub scatter: Scatter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRule {
    pub region: Region,
    pub pattern: Pattern<Scatter>,
}

/// Scattering matrices: explicit window entries, then ordered tail rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CCModelSpec {
    pub window: Vec<ScatterEntry>,
    pub tail: Vec<TailRule>,
}

impl CCModelSpec {
    pub fn uniform(s: Scatter) -> Self {
        CCModelSpec {
            window: Vec::new(),
            tail: vec![TailRule {
                region: Region::everything(2),
                pattern: Pattern::Constant(s),
            }],
        }
    }

    /// Random phases with fixed `|r|` on the scatterers in `zbox`, the same
    /// `|r|` with trivial phases outside.
    pub fn random_phases<R: Rng + ?Sized>(r: f64, zbox: [(i64, i64); 2], rng: &mut R) -> Self {
        let mut spec = CCModelSpec::uniform(Scatter::with_modulus(r));
        for a in zbox[0].0..=zbox[0].1 {
            for b in zbox[1].0..=zbox[1].1 {
                if even(b) {
                    spec.window.push(ScatterEntry {
                        z: [a, b],
                        scatter: Scatter::random_phases(r, rng),
                    });
                }
            }
        }
        spec
    }

    pub fn set(&mut self, z: [i64; 2], scatter: Scatter) {
        match self.window.iter_mut().find(|e| e.z == z) {
            Some(e) => e.scatter = scatter,
            None => self.window.push(ScatterEntry { z, scatter }),
        }
    }

    pub fn field(&self) -> SiteField<Scatter> {
        let mut f = SiteField::new(2);
        for e in &self.window {
            f.window.insert(Site::new(&e.z), e.scatter);
        }
        for rule in &self.tail {
            f.push_tail(rule.region.clone(), rule.pattern.clone());
        }
        f
    }
}

/// The network unitary on `ℓ²(Z², C)`.
#[derive(Clone, Debug)]
pub struct CcUnitary {
    field: SiteField<Scatter>,
}

pub fn build_cc(spec: &CCModelSpec, tol: &Tolerances) -> Result<CcUnitary> {
    CcUnitary::new(spec, tol)
}

impl CcUnitary {
    pub fn new(spec: &CCModelSpec, tol: &Tolerances) -> Result<Self> {
        for rule in &spec.tail {
            if rule.region.bounds.len() != 2 {
                return Err(Error::LatticeDimension {
                    expected: 2,
                    found: rule.region.bounds.len(),
                });
            }
        }
        let field = spec.field();
        for e in &spec.window {
            let z = Site::new(&e.z);
            if !is_scatterer_label(&z) {
                return Err(Error::InvalidScattering {
                    z,
                    reason: "second coordinate must be even".into(),
                });
            }
        }
        for (label, s) in field.stored_values() {
            s.check(&Site::origin(2), tol.unitary).map_err(|e| match e {
                Error::InvalidScattering { reason, .. } => Error::InvalidScattering {
                    z: Site::origin(2),
                    reason: format!("{label}: {reason}"),
                },
                e => e,
            })?;
        }
        let scan = ScanBox::new(field.breakpoints(), field.periods(), 1);
        for z in scan.core_sites().into_iter().chain(scan.exterior_sites()) {
            if is_scatterer_label(&z) && field.first(&z).is_none() {
                return Err(Error::InvalidScattering {
                    z,
                    reason: "no scattering matrix".into(),
                });
            }
        }
        Ok(CcUnitary { field })
    }

    pub fn field(&self) -> &SiteField<Scatter> {
        &self.field
    }

    pub fn scatter(&self, z: &Site) -> Result<Scatter> {
        self.field.first(z).copied().ok_or_else(|| Error::InvalidScattering {
            z: z.clone(),
            reason: "no scattering matrix".into(),
        })
    }

    /// `⟨out_o| U |in_i⟩ = S_z[i][o]`, as a matrix with rows `o`, columns `i`.
    pub fn block_matrix(&self, z: &Site) -> Result<CMat> {
        Ok(self.scatter(z)?.matrix().transpose())
    }
}

impl LocalUnitary for CcUnitary {
    fn dim(&self) -> usize {
        2
    }

    fn n_internal(&self) -> usize {
        1
    }

    fn apply(&self, psi: &LatticeState) -> Result<LatticeState> {
        psi.check_compatible(2, 1)?;
        let mut out = LatticeState::zero(2, 1);
        for (x, v) in psi.iter() {
            if v[0] == ZERO {
                continue;
            }
            let (z, i) = input_slot(x);
            let s = self.scatter(&z)?.matrix();
            for (o, y) in outputs(&z).iter().enumerate() {
                out.add(y, 0, s[(i, o)] * v[0]);
            }
        }
        out.prune_exact();
        Ok(out)
    }

    fn apply_adjoint(&self, psi: &LatticeState) -> Result<LatticeState> {
        psi.check_compatible(2, 1)?;
        let mut out = LatticeState::zero(2, 1);
        for (y, v) in psi.iter() {
            if v[0] == ZERO {
                continue;
            }
            let (z, o) = output_slot(y);
            let s = self.scatter(&z)?.matrix();
            for (i, x) in inputs(&z).iter().enumerate() {
                out.add(x, 0, s[(i, o)].conj() * v[0]);
            }
        }
        out.prune_exact();
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    R,
    T,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tag::R => "r",
            Tag::T => "t",
        })
    }
}

/// Kind of a dual vertex by the parities of its label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FaceKind {
    /// Face of an even scatterer.
    EvenEven,
    /// Face of an odd scatterer.
    OddOdd,
    /// All four edges carry `r`.
    OddEven,
    /// All four edges carry `t`.
    EvenOdd,
}

pub fn face_kind(v: &Site) -> FaceKind {
    match (even(v.coords()[0]), even(v.coords()[1])) {
        (true, true) => FaceKind::EvenEven,
        (false, false) => FaceKind::OddOdd,
        (false, true) => FaceKind::OddEven,
        (true, false) => FaceKind::EvenOdd,
    }
}

/// The two faces sharing the lattice edge `{p, q}`.
pub fn faces_of_edge(p: &Site, q: &Site) -> (Site, Site) {
    let (p1, p2) = (p.coords()[0], p.coords()[1]);
    let (q1, q2) = (q.coords()[0], q.coords()[1]);
    if p2 == q2 {
        let x = p1.min(q1);
        (Site::new(&[x, p2 + 1]), Site::new(&[x, p2]))
    } else {
        let y = p2.min(q2);
        (Site::new(&[p1 - 1, y + 1]), Site::new(&[p1, y + 1]))
    }
}

/// Lattice edge bisected by the link `v → w`, as (left, right) endpoints
/// with respect to the direction of travel.
pub fn bisected_edge(v: &Site, w: &Site) -> (Site, Site) {
    let d = w.difference(v);
    let (d1, d2) = (d[0], d[1]);
    let (x1, x2) = (v.coords()[0], v.coords()[1]);
    // centre (x1 + ½, x2 − ½), edge endpoints at centre + (d ± n)/2 with
    // n = (−d2, d1)
    let left = Site::new(&[x1 + (1 + d1 - d2) / 2, x2 + (-1 + d2 + d1) / 2]);
    let right = Site::new(&[x1 + (1 + d1 + d2) / 2, x2 + (-1 + d2 - d1) / 2]);
    (left, right)
}

/// Scatterer of the directed edge `{p, q}`, its tag, and whether it runs
/// from `p` to `q`.
pub fn edge_info(p: &Site, q: &Site) -> Option<(Site, Tag, bool)> {
    let (z, i) = input_slot(p);
    if let Some(o) = outputs(&z).iter().position(|y| y == q) {
        return Some((z, if i == o { Tag::R } else { Tag::T }, true));
    }
    let (z, i) = input_slot(q);
    let o = outputs(&z).iter().position(|y| y == p)?;
    Some((z, if i == o { Tag::R } else { Tag::T }, false))
}

/// An admissible path in the dual lattice: an explicit middle and two
/// straight rays. Vertex `middle[i]` has parameter `i − origin`; before the
/// middle the path arrives along `incoming`, after it leaves along
/// `outgoing`. The side of the network to the left is `V_+`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "DualPathSpec", into = "DualPathSpec")]
pub struct DualPath {
    middle: Vec<Site>,
    incoming: Direction,
    outgoing: Direction,
    origin: i64,
    index: HashMap<Site, usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualPathSpec {
    pub middle: Vec<Site>,
    pub incoming: Direction,
    pub outgoing: Direction,
    #[serde(default)]
    pub origin: i64,
}

impl TryFrom<DualPathSpec> for DualPath {
    type Error = Error;

    fn try_from(s: DualPathSpec) -> Result<Self> {
        DualPath::new(s.middle, s.incoming, s.outgoing, s.origin)
    }
}

impl From<DualPath> for DualPathSpec {
    fn from(p: DualPath) -> Self {
        DualPathSpec {
            middle: p.middle,
            incoming: p.incoming,
            outgoing: p.outgoing,
            origin: p.origin,
        }
    }
}

impl PartialEq for DualPath {
    fn eq(&self, other: &Self) -> bool {
        self.middle == other.middle
            && self.incoming == other.incoming
            && self.outgoing == other.outgoing
            && self.origin == other.origin
    }
}

fn scaled(d: Direction, k: i64) -> [i64; 2] {
    let v = d.vector(2);
    [v[0] * k, v[1] * k]
}

impl DualPath {
    pub fn new(middle: Vec<Site>, incoming: Direction, outgoing: Direction, origin: i64) -> Result<Self> {
        if middle.is_empty() {
            return Err(Error::InvalidPath("empty middle".into()));
        }
        if middle.iter().any(|v| v.dim() != 2) || incoming.axis > 2 || outgoing.axis > 2 {
            return Err(Error::InvalidPath("dual paths live in two dimensions".into()));
        }
        for (i, w) in middle.windows(2).enumerate() {
            if Direction::between(&w[0], &w[1]).is_none() {
                return Err(Error::InvalidPath(format!(
                    "{} and {} are not adjacent (step {i})",
                    w[0], w[1]
                )));
            }
        }
        let mut index = HashMap::new();
        for (i, v) in middle.iter().enumerate() {
            if index.insert(v.clone(), i).is_some() {
                return Err(Error::InvalidPath(format!("vertex {v} visited twice")));
            }
        }
        let path = DualPath {
            middle,
            incoming,
            outgoing,
            origin,
            index,
        };
        path.check_rays()?;
        Ok(path)
    }

    fn check_rays(&self) -> Result<()> {
        let first = &self.middle[0];
        let last = self.middle.last().unwrap();
        // extension directions: the incoming ray extends along −incoming
        let ext_in = self.incoming.reversed();
        let ext_out = self.outgoing;
        if ext_in == ext_out {
            let v_in = first.difference(last);
            let axis = ext_in.axis - 1;
            if v_in[1 - axis] == 0 {
                return Err(Error::InvalidPath("the two rays overlap".into()));
            }
        }
        let (lo, hi) = self.bbox();
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]) + 4;
        for k in 1..=span {
            let a = first.translate(&scaled(self.incoming, -k));
            if self.index.contains_key(&a) {
                return Err(Error::InvalidPath(format!("incoming ray meets the middle at {a}")));
            }
            let b = last.translate(&scaled(self.outgoing, k));
            if self.index.contains_key(&b) {
                return Err(Error::InvalidPath(format!("outgoing ray meets the middle at {b}")));
            }
            if self.ray_param(&a, false).is_some() {
                return Err(Error::InvalidPath(format!("the rays cross at {a}")));
            }
        }
        Ok(())
    }

    fn bbox(&self) -> ([i64; 2], [i64; 2]) {
        let mut lo = [i64::MAX; 2];
        let mut hi = [i64::MIN; 2];
        for v in &self.middle {
            for a in 0..2 {
                lo[a] = lo[a].min(v.coords()[a]);
                hi[a] = hi[a].max(v.coords()[a]);
            }
        }
        (lo, hi)
    }

    pub fn middle(&self) -> &[Site] {
        &self.middle
    }

    pub fn incoming(&self) -> Direction {
        self.incoming
    }

    pub fn outgoing(&self) -> Direction {
        self.outgoing
    }

    pub fn origin(&self) -> i64 {
        self.origin
    }

    /// Parameter of `middle[0]`.
    pub fn start(&self) -> i64 {
        -self.origin
    }

    /// Parameter of the last middle vertex.
    pub fn end(&self) -> i64 {
        self.middle.len() as i64 - 1 - self.origin
    }

    pub fn vertex(&self, t: i64) -> Site {
        if t < self.start() {
            self.middle[0].translate(&scaled(self.incoming, t - self.start()))
        } else if t > self.end() {
            self.middle.last().unwrap().translate(&scaled(self.outgoing, t - self.end()))
        } else {
            self.middle[(t - self.start()) as usize].clone()
        }
    }

    /// Parameter of a ray vertex; `in_ray` selects the incoming ray.
    fn ray_param(&self, v: &Site, in_ray: bool) -> Option<i64> {
        let (base, dir, sign, t0) = if in_ray {
            (&self.middle[0], self.incoming, -1, self.start())
        } else {
            (self.middle.last().unwrap(), self.outgoing, 1, self.end())
        };
        let d = v.difference(base);
        let a = dir.axis - 1;
        if d[1 - a] != 0 {
            return None;
        }
        let k = d[a] * dir.sign as i64 * sign;
        (k >= 1).then_some(t0 + sign * k)
    }

    pub fn param_of(&self, v: &Site) -> Option<i64> {
        if let Some(&i) = self.index.get(v) {
            return Some(i as i64 - self.origin);
        }
        self.ray_param(v, true).or_else(|| self.ray_param(v, false))
    }

    pub fn link_direction(&self, t: i64) -> Direction {
        Direction::between(&self.vertex(t), &self.vertex(t + 1)).expect("paths are connected")
    }

    /// Lattice edge bisected by the link `t → t+1`, (left, right).
    pub fn bisected(&self, t: i64) -> (Site, Site) {
        bisected_edge(&self.vertex(t), &self.vertex(t + 1))
    }

    /// Whether the lattice edge `{p, q}` is bisected by the path.
    pub fn crosses(&self, p: &Site, q: &Site) -> bool {
        let (f, g) = faces_of_edge(p, q);
        match (self.param_of(&f), self.param_of(&g)) {
            (Some(a), Some(b)) => (a - b).abs() == 1,
            _ => false,
        }
    }

    /// Whether the lattice site `x` lies in `V_+`.
    pub fn side(&self, x: &Site) -> bool {
        let t0 = self.start();
        let (seed, _) = self.bisected(t0);
        let mut inside = true;
        let mut p = seed;
        let target = x.coords();
        for (axis, &goal) in target.iter().enumerate() {
            while p.coords()[axis] != goal {
                let mut q = p.clone();
                q.0[axis] += (goal - p.coords()[axis]).signum();
                if self.crosses(&p, &q) {
                    inside = !inside;
                }
                p = q;
            }
        }
        inside
    }

    /// The same path with `k` vertices of each ray moved into the middle.
    pub fn extended(&self, k: usize) -> DualPath {
        let k = k as i64;
        let middle: Vec<Site> = (self.start() - k..=self.end() + k).map(|t| self.vertex(t)).collect();
        DualPath::new(middle, self.incoming, self.outgoing, self.origin + k)
            .expect("extension of a valid path")
    }
}

/// Bisected edge of one link, with what the network puts on it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossedEdge {
    pub t: i64,
    pub left: Site,
    pub right: Site,
    pub z: Site,
    pub tag: Tag,
    /// The edge points into `V_+`.
    pub entering: bool,
    /// Tag predicted by the face parities alone, if the two agree.
    pub parity_tag: Option<Tag>,
}

pub fn crossed_edge(path: &DualPath, t: i64) -> CrossedEdge {
    let (left, right) = path.bisected(t);
    let (z, tag, forward) = edge_info(&left, &right).expect("every lattice edge belongs to a scatterer");
    let parity_tag = parity_rule(&path.vertex(t), &path.vertex(t + 1));
    CrossedEdge {
        t,
        left,
        right,
        z,
        tag,
        entering: !forward,
        parity_tag,
    }
}

/// Tag of a link from the parities of its end faces: through an even
/// scatterer's face horizontal links bisect `r`, through an odd one vertical
/// links do; the non-scatterer end is `Odd×Even` for `r`, `Even×Odd` for `t`.
pub fn parity_rule(v: &Site, w: &Site) -> Option<Tag> {
    let horizontal = v.coords()[1] == w.coords()[1];
    let (s, n) = match (face_kind(v), face_kind(w)) {
        (k @ (FaceKind::EvenEven | FaceKind::OddOdd), m) => (k, m),
        (m, k) => (k, m),
    };
    let by_scatterer = match (s, horizontal) {
        (FaceKind::EvenEven, true) | (FaceKind::OddOdd, false) => Tag::R,
        (FaceKind::EvenEven, false) | (FaceKind::OddOdd, true) => Tag::T,
        _ => return None,
    };
    let by_other = match n {
        FaceKind::OddEven => Tag::R,
        FaceKind::EvenOdd => Tag::T,
        _ => return None,
    };
    (by_scatterer == by_other).then_some(by_scatterer)
}

#[derive(Clone, Debug, Serialize)]
pub struct PathClassification {
    /// Crossed edges of every link touching the middle.
    pub edges: Vec<CrossedEdge>,
    pub incoming_tag: Tag,
    pub outgoing_tag: Tag,
    /// Every derived tag agrees with the parity rule.
    pub parity_consistent: bool,
    /// Scatterers with a bisected edge among `edges`.
    pub v_gamma: BTreeSet<Site>,
}

impl PathClassification {
    pub fn is_r_path(&self) -> bool {
        self.incoming_tag == Tag::R
            && self.outgoing_tag == Tag::R
            && self.edges.iter().all(|e| e.tag == Tag::R)
    }

    /// Number of tag changes along the path, rays included.
    pub fn switches(&self) -> usize {
        let mut tags = vec![self.incoming_tag];
        tags.extend(self.edges.iter().map(|e| e.tag));
        tags.push(self.outgoing_tag);
        tags.windows(2).filter(|w| w[0] != w[1]).count()
    }
}

fn ray_tag(path: &DualPath, t: i64, step: i64) -> Result<Tag> {
    let a = crossed_edge(path, t);
    let b = crossed_edge(path, t + step);
    if a.tag != b.tag {
        return Err(Error::Inconsistent(format!(
            "tag changes along a straight ray at t = {t}"
        )));
    }
    Ok(a.tag)
}

pub fn classify_path(path: &DualPath) -> Result<PathClassification> {
    let edges: Vec<CrossedEdge> = (path.start() - 1..=path.end())
        .map(|t| crossed_edge(path, t))
        .collect();
    let incoming_tag = ray_tag(path, path.start() - 2, -1)?;
    let outgoing_tag = ray_tag(path, path.end() + 1, 1)?;
    let parity_consistent = edges.iter().all(|e| e.parity_tag == Some(e.tag))
        && [path.start() - 2, path.end() + 1]
            .iter()
            .all(|&t| {
                let e = crossed_edge(path, t);
                e.parity_tag == Some(e.tag)
            });
    let v_gamma = edges.iter().map(|e| e.z.clone()).collect();
    Ok(PathClassification {
        edges,
        incoming_tag,
        outgoing_tag,
        parity_consistent,
        v_gamma,
    })
}

/// Flux of `P = χ(V_+)`; blocks are labelled by scatterers and live on
/// `Ran Q_z`.
pub struct CcFlux {
    pub unitary: Arc<CcUnitary>,
    pub path: DualPath,
    core: Vec<Site>,
    exterior: Vec<Site>,
}

impl CcFlux {
    pub fn new(unitary: Arc<CcUnitary>, path: DualPath) -> Self {
        let field = unitary.field();
        let bp = field.breakpoints();
        let (lo, hi) = path.bbox();
        let mut reach = 0;
        for a in 0..2 {
            for &c in bp[a].iter().chain([lo[a], hi[a]].iter()) {
                reach = reach.max(c.abs());
            }
        }
        // far enough that the rays have left both the middle and the window
        let r = 2 * reach + 6;
        let per = field.periods().into_iter().fold(2, lcm);
        let t_lo = path.start() - r;
        let t_hi = path.end() + r;
        let zs = |range: std::ops::Range<i64>| -> BTreeSet<Site> {
            range.map(|t| crossed_edge(&path, t).z).collect()
        };
        let core = zs(t_lo..t_hi);
        let exterior: BTreeSet<Site> = zs(t_lo - 4 * per..t_lo)
            .into_iter()
            .chain(zs(t_hi..t_hi + 4 * per))
            .filter(|z| !core.contains(z))
            .collect();
        CcFlux {
            unitary,
            path,
            core: core.into_iter().collect(),
            exterior: exterior.into_iter().collect(),
        }
    }

    fn sides(&self, z: &Site) -> ([bool; 2], [bool; 2]) {
        let i = inputs(z);
        let o = outputs(z);
        (
            [self.path.side(&i[0]), self.path.side(&i[1])],
            [self.path.side(&o[0]), self.path.side(&o[1])],
        )
    }
}

fn indicator(b: [bool; 2]) -> CMat {
    linalg::diag_real(&[f64::from(u8::from(b[0])), f64::from(u8::from(b[1]))])
}

impl BlockSource for CcFlux {
    fn dim(&self) -> usize {
        2
    }

    fn n_internal(&self) -> usize {
        1
    }

    fn unitary(&self) -> &dyn LocalUnitary {
        &*self.unitary
    }

    fn in_projection(&self, site: &Site, _k: usize) -> bool {
        self.path.side(site)
    }

    fn label_of(&self, site: &Site, _k: usize) -> Site {
        input_slot(site).0
    }

    fn basis(&self, z: &Site) -> Vec<(Site, usize)> {
        inputs(z).into_iter().map(|x| (x, 0)).collect()
    }

    fn block(&self, z: &Site) -> FluxBlock {
        let m = self.unitary.block_matrix(z).expect("validated scattering field");
        let (pin, pout) = self.sides(z);
        let phi = m.adjoint() * indicator(pout) * &m - indicator(pin);
        FluxBlock {
            label: z.clone(),
            basis: self.basis(z),
            phi,
            p: pin.to_vec(),
        }
    }

    fn core_labels(&self) -> Vec<Site> {
        self.core.clone()
    }

    fn exterior_labels(&self) -> Vec<Site> {
        self.exterior.clone()
    }

    fn rank_difference(&self, z: &Site) -> Option<i64> {
        let (pin, pout) = self.sides(z);
        let count = |b: [bool; 2]| b.iter().filter(|&&x| x).count() as i64;
        Some(count(pout) - count(pin))
    }

    fn describe(&self) -> String {
        "Chalker-Coddington network".into()
    }
}

pub fn cc_flux(u: &CcUnitary, path: &DualPath) -> FluxField {
    FluxField::build(Arc::new(CcFlux::new(Arc::new(u.clone()), path.clone())))
}

/// A scatterer with nonzero rank difference and the direction of its
/// bisected edges.
#[derive(Clone, Debug, Serialize)]
pub struct OrientationWitness {
    pub z: Site,
    pub rank_difference: i64,
    pub entering: usize,
    pub leaving: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CcIndexReport {
    pub report: IndexReport,
    pub incoming_tag: Tag,
    pub outgoing_tag: Tag,
    pub parity_consistent: bool,
    pub witnesses: Vec<OrientationWitness>,
}

pub fn cc_index(u: &CcUnitary, path: &DualPath, tol: &Tolerances) -> Result<CcIndexReport> {
    let class = classify_path(path)?;
    let flux = cc_flux(u, path);
    let report = flux::index_by_kernels(&flux, tol)?;
    report.check_agreement(tol)?;
    let src = &*flux.source;
    let mut witnesses = Vec::new();
    for z in src.core_labels() {
        let rd = src.rank_difference(&z).unwrap_or(0);
        if rd != 0 {
            let mut entering = 0;
            let mut leaving = 0;
            for (x, y) in inputs(&z).iter().flat_map(|x| outputs(&z).map(|y| (x.clone(), y))) {
                let (sx, sy) = (path.side(&x), path.side(&y));
                if !sx && sy {
                    entering += 1;
                } else if sx && !sy {
                    leaving += 1;
                }
            }
            witnesses.push(OrientationWitness {
                z,
                rank_difference: rd,
                entering,
                leaving,
            });
        }
    }
    Ok(CcIndexReport {
        report,
        incoming_tag: class.incoming_tag,
        outgoing_tag: class.outgoing_tag,
        parity_consistent: class.parity_consistent,
        witnesses,
    })
}

/// `‖Φ‖₁ / Σ_{z ∈ V_γ} |r_z|` for trace-class flux.
pub fn trace_norm_ratio(u: &CcUnitary, flux: &FluxField) -> Result<f64> {
    let mut sum_r = 0.0;
    let mut tn = 0.0;
    for b in &flux.blocks {
        sum_r += u.scatter(&b.label)?.r.norm();
        tn += linalg::trace_norm(&b.phi);
    }
    Ok(if sum_r == 0.0 { 0.0 } else { tn / sum_r })
}

/// Replace the vertices with parameters `from..=to` by `replacement`, whose
/// first and last vertices must be the old ones. Both ends must be faces of
/// no scatterer.
pub fn path_surgery(path: &DualPath, from: i64, to: i64, replacement: &[Site]) -> Result<DualPath> {
    if from >= to {
        return Err(Error::Surgery("empty segment".into()));
    }
    if replacement.first() != Some(&path.vertex(from)) || replacement.last() != Some(&path.vertex(to)) {
        return Err(Error::Surgery("replacement does not match the endpoints".into()));
    }
    for t in [from, to] {
        match face_kind(&path.vertex(t)) {
            FaceKind::OddEven | FaceKind::EvenOdd => {}
            _ => {
                return Err(Error::Surgery(format!(
                    "endpoint {} is the face of a scatterer",
                    path.vertex(t)
                )))
            }
        }
    }
    let k = (path.start() - from).max(to - path.end()).max(0) as usize;
    let p = if k > 0 { path.extended(k) } else { path.clone() };
    let i = (from - p.start()) as usize;
    let j = (to - p.start()) as usize;
    let mut middle: Vec<Site> = p.middle[..i].to_vec();
    middle.extend_from_slice(replacement);
    middle.extend_from_slice(&p.middle[j + 1..]);
    DualPath::new(middle, p.incoming, p.outgoing, p.origin)
        .map_err(|e| Error::Surgery(format!("replacement is not admissible: {e}")))
}

/// Lattice sites enclosed an odd number of times by the closed polygon of
/// dual vertices, by casting a ray towards `+x₁`.
pub fn enclosed_sites(polygon: &[Site]) -> BTreeSet<Site> {
    let mut lo = [i64::MAX; 2];
    let mut hi = [i64::MIN; 2];
    for v in polygon {
        for a in 0..2 {
            lo[a] = lo[a].min(v.coords()[a]);
            hi[a] = hi[a].max(v.coords()[a]);
        }
    }
    // vertical polygon edges sit at x₁ = v₁ + ½ between heights v₂ − ½ and
    // v₂ + ½ (in lattice coordinates)
    let mut vertical: Vec<(i64, i64)> = Vec::new();
    for k in 0..polygon.len() {
        let v = &polygon[k];
        let w = &polygon[(k + 1) % polygon.len()];
        if v.coords()[0] == w.coords()[0] && v.coords()[1] != w.coords()[1] {
            // centre heights v₂ − ½ and w₂ − ½; the integer height strictly
            // between them is max(v₂, w₂) − 1
            vertical.push((v.coords()[0], v.coords()[1].max(w.coords()[1]) - 1));
        }
    }
    let mut out = BTreeSet::new();
    for x in lo[0] - 1..=hi[0] + 1 {
        for y in lo[1] - 2..=hi[1] + 1 {
            // edge at x₁ = e + ½ lies right of x iff e ≥ x
            let n = vertical.iter().filter(|&&(e, h)| h == y && e >= x).count();
            if n % 2 == 1 {
                out.insert(Site::new(&[x, y]));
            }
        }
    }
    out
}

/// Sites where `P_γ` and `P_γ̂` differ, found by comparing sides on a box
/// around the modified segment.
pub fn side_difference(old: &DualPath, new: &DualPath, from: i64, to: i64) -> Result<BTreeSet<Site>> {
    let mut lo = [i64::MAX; 2];
    let mut hi = [i64::MIN; 2];
    let mut seen = |v: &Site| {
        for a in 0..2 {
            lo[a] = lo[a].min(v.coords()[a]);
            hi[a] = hi[a].max(v.coords()[a]);
        }
    };
    for t in from..=to {
        seen(&old.vertex(t));
    }
    for v in new.middle() {
        seen(v);
    }
    let mut out = BTreeSet::new();
    for x in lo[0] - 3..=hi[0] + 3 {
        for y in lo[1] - 3..=hi[1] + 3 {
            let s = Site::new(&[x, y]);
            if old.side(&s) != new.side(&s) {
                let ring = x <= lo[0] - 2 || x >= hi[0] + 2 || y <= lo[1] - 2 || y >= hi[1] + 2;
                if ring {
                    return Err(Error::Surgery(format!("sides differ far from the segment at {s}")));
                }
                out.insert(s);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct SurgeryReport {
    pub index_before: i64,
    pub index_after: i64,
    /// `rank(P_γ − P_γ̂)`.
    pub projection_rank: usize,
    /// Lattice sites enclosed by the old segment and the reversed new one.
    pub enclosed: usize,
}

pub fn surgery_report(
    u: &CcUnitary,
    old: &DualPath,
    from: i64,
    to: i64,
    replacement: &[Site],
    tol: &Tolerances,
) -> Result<(DualPath, SurgeryReport)> {
    let new = path_surgery(old, from, to, replacement)?;
    let diff = side_difference(old, &new, from, to)?;
    let mut loop_: Vec<Site> = (from..=to).map(|t| old.vertex(t)).collect();
    loop_.extend(replacement.iter().rev().skip(1).take(replacement.len().saturating_sub(2)).cloned());
    let enclosed = enclosed_sites(&loop_);
    let before = cc_index(u, old, tol)?.report.index;
    let after = cc_index(u, &new, tol)?.report.index;
    Ok((
        new,
        SurgeryReport {
            index_before: before,
            index_after: after,
            projection_rank: diff.len(),
            enclosed: enclosed.len(),
        },
    ))
}

/// A random self-avoiding replacement for the segment `from..=to`, avoiding
/// every other vertex of the path near the segment.
pub fn random_reroute<R: Rng + ?Sized>(
    path: &DualPath,
    from: i64,
    to: i64,
    max_len: usize,
    rng: &mut R,
) -> Option<Vec<Site>> {
    let a = path.vertex(from);
    let b = path.vertex(to);
    let reach = (to - from) + max_len as i64 + 4;
    let forbidden: BTreeSet<Site> = (from - reach..=to + reach)
        .filter(|t| *t < from || *t > to)
        .map(|t| path.vertex(t))
        .collect();
    for _ in 0..2000 {
        let mut walk = vec![a.clone()];
        let mut used: BTreeSet<Site> = BTreeSet::from([a.clone()]);
        while walk.len() <= max_len {
            let cur = walk.last().unwrap().clone();
            if cur == b {
                break;
            }
            let options: Vec<Site> = Direction::all(2)
                .map(|d| cur.step(d))
                .filter(|n| !used.contains(n) && !forbidden.contains(n))
                .collect();
            if options.is_empty() {
                break;
            }
            // lean towards the target
            let dist = |s: &Site| s.l1_distance(&b);
            let best = options.iter().map(dist).min().unwrap();
            let next = if rng.gen_bool(0.6) {
                options.iter().find(|s| dist(s) == best).unwrap().clone()
            } else {
                options[rng.gen_range(0..options.len())].clone()
            };
            used.insert(next.clone());
            walk.push(next);
        }
        if walk.last() == Some(&b) && walk.len() >= 2 {
            let same = walk.len() as i64 == to - from + 1
                && walk.iter().enumerate().all(|(i, v)| *v == path.vertex(from + i as i64));
            if !same {
                return Some(walk);
            }
        }
    }
    None
}

/// Scatterers of the links `t → t+1` for `t` in the range.
fn zs_of_links(path: &DualPath, range: impl Iterator<Item = i64>, want: Tag) -> Result<Vec<Site>> {
    let mut out = Vec::new();
    for t in range {
        let e = crossed_edge(path, t);
        if e.tag != want {
            return Err(Error::EpsilonGrid(format!(
                "link at t = {t} bisects a {} edge where the cutoff needs {want}",
                e.tag
            )));
        }
        if out.last() != Some(&e.z) {
            out.push(e.z);
        }
    }
    Ok(out)
}

/// The model with `[[0, −1], [1, 0]]` on the scatterers of the links
/// `t → t+1` with `t + 1 ≤ −K` and the identity on those with `t ≥ K`,
/// `K = ⌈1/ε⌉`.
pub fn anomalous_spec(spec: &CCModelSpec, path: &DualPath, eps: f64) -> Result<CCModelSpec> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::EpsilonGrid(format!("ε = {eps} must be positive")));
    }
    let k = (1.0 / eps).ceil() as i64;
    let field = spec.field();
    let bp = field.breakpoints();
    let (lo, hi) = path.bbox();
    let mut reach = k;
    for a in 0..2 {
        for &c in bp[a].iter().chain([lo[a], hi[a]].iter()) {
            reach = reach.max(c.abs());
        }
    }
    let far = 2 * reach + 8 + path.origin.abs() + path.middle.len() as i64;
    let left_end = path.start() - far;
    let right_end = path.end() + far;
    if -k - 1 < left_end || k > right_end {
        return Err(Error::EpsilonGrid("cutoff beyond the explicit range".into()));
    }
    let r_zs = zs_of_links(path, (left_end..=-k - 1).rev(), Tag::R)?;
    let t_zs = zs_of_links(path, k..=right_end, Tag::T)?;
    let mut out = spec.clone();
    let mut new_tail = Vec::new();
    for (zs, s) in [(&r_zs, Scatter::pure_t()), (&t_zs, Scatter::pure_r())] {
        for z in zs.iter() {
            out.set([z.coords()[0], z.coords()[1]], s);
        }
        let n = zs.len();
        if n < 3 {
            return Err(Error::EpsilonGrid("too few ray scatterers".into()));
        }
        let z_far = &zs[n - 1];
        let step = z_far.difference(&zs[n - 2]);
        let dir = Direction::between(
            &Site::origin(2),
            &Site::new(&[step[0].signum(), step[1].signum()]),
        )
        .filter(|_| step[0].abs() + step[1].abs() == 2 && (step[0] == 0 || step[1] == 0))
        .ok_or_else(|| Error::EpsilonGrid(format!("ray scatterers are not spaced by 2 (step {:?})", step.as_slice())))?;
        let mut region = Region::point(z_far);
        let a = dir.axis - 1;
        region.bounds[a] = if dir.sign > 0 {
            (Some(z_far.coords()[a]), None)
        } else {
            (None, Some(z_far.coords()[a]))
        };
        let mut cells = vec![None; 4];
        let idx = (z_far.coords()[0].rem_euclid(2) * 2 + z_far.coords()[1].rem_euclid(2)) as usize;
        cells[idx] = Some(s);
        new_tail.push(TailRule {
            region,
            pattern: Pattern::Periodic {
                period: vec![2, 2],
                cells,
            },
        });
    }
    new_tail.append(&mut out.tail);
    out.tail = new_tail;
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct AnomalousPoint {
    pub epsilon: f64,
    pub cutoff: i64,
    pub trace: f64,
    pub index: i64,
    pub nonzero_blocks: usize,
    /// `‖Φ‖₁ / Σ |r_z|` over the blocks of the capped flux.
    pub trace_norm_ratio: f64,
}

pub fn anomalous_transport(
    spec: &CCModelSpec,
    path: &DualPath,
    epsilons: &[f64],
    tol: &Tolerances,
) -> Result<Vec<AnomalousPoint>> {
    let mut out = Vec::new();
    for &eps in epsilons {
        let s = anomalous_spec(spec, path, eps)?;
        let u = CcUnitary::new(&s, tol)?;
        let flux = cc_flux(&u, path);
        let report = flux::index_by_kernels(&flux, tol)?;
        report.check_agreement(tol)?;
        let trace = report
            .odd_trace_at(0)
            .ok_or_else(|| Error::Verification(format!("flux at ε = {eps} is not trace class")))?;
        out.push(AnomalousPoint {
            epsilon: eps,
            cutoff: (1.0 / eps).ceil() as i64,
            trace: trace.re,
            index: report.index,
            nonzero_blocks: report.nonzero_blocks,
            trace_norm_ratio: trace_norm_ratio(&u, &flux)?,
        });
    }
    Ok(out)
}

/// Horizontal path at even height `2k` travelling east: an `r`-path.
pub fn horizontal_r_path(k: i64) -> DualPath {
    DualPath::new(vec![Site::new(&[0, 2 * k])], Direction::plus(1), Direction::plus(1), 0).unwrap()
}

/// Vertical path at odd abscissa `2j+1` travelling north: an `r`-path.
pub fn vertical_r_path(j: i64) -> DualPath {
    DualPath::new(vec![Site::new(&[2 * j + 1, 0])], Direction::plus(2), Direction::plus(2), 0).unwrap()
}

/// East along height `2k` up to the odd abscissa `x0`, one step north, then
/// east along height `2k+1`: an `r`-ray followed by a `t`-ray.
pub fn crossover_path(x0: i64, k: i64) -> Result<DualPath> {
    if even(x0) {
        return Err(Error::InvalidPath("the step must be at an odd abscissa".into()));
    }
    DualPath::new(
        vec![Site::new(&[x0, 2 * k]), Site::new(&[x0, 2 * k + 1])],
        Direction::plus(1),
        Direction::plus(1),
        0,
    )
}

/// Per-scatterer table of `(z, |r_z|)` and block eigenvalues.
pub fn block_table(u: &CcUnitary, flux: &FluxField) -> Result<BTreeMap<Site, (f64, Vec<f64>)>> {
    let mut out = BTreeMap::new();
    for b in flux.all_blocks() {
        let e = linalg::HermitianEigen::new(&b.phi);
        out.insert(b.label.clone(), (u.scatter(&b.label)?.r.norm(), e.values));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn slots_are_inverse_to_tables() {
        for a in -3..4 {
            for b in [-2, 0, 2] {
                let z = Site::new(&[a, b]);
                for (i, x) in inputs(&z).iter().enumerate() {
                    assert_eq!(input_slot(x), (z.clone(), i));
                }
                for (o, y) in outputs(&z).iter().enumerate() {
                    assert_eq!(output_slot(y), (z.clone(), o));
                }
            }
        }
    }

    #[test]
    fn pure_channels() {
        let one = C64::new(1.0, 0.0);
        let u = build_cc(&CCModelSpec::uniform(Scatter::pure_t()), &tol()).unwrap();
        let out = u.apply(&LatticeState::basis(Site::new(&[2, 4]), 0, 1)).unwrap();
        assert_eq!(out.support_len(), 1);
        assert_eq!(out.amplitude(&Site::new(&[3, 4]), 0), -one);
        let u = build_cc(&CCModelSpec::uniform(Scatter::pure_r()), &tol()).unwrap();
        let out = u.apply(&LatticeState::basis(Site::new(&[2, 4]), 0, 1)).unwrap();
        assert_eq!(out.amplitude(&Site::new(&[2, 3]), 0), one);
        assert_eq!(out.support_len(), 1);
    }

    #[test]
    fn critical_model_amplitudes() {
        let u = build_cc(&CCModelSpec::uniform(Scatter::critical()), &tol()).unwrap();
        let out = u.apply(&LatticeState::basis(Site::new(&[0, 0]), 0, 1)).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((out.amplitude(&Site::new(&[0, -1]), 0) - C64::new(s, 0.0)).norm() < 1e-15);
        assert!((out.amplitude(&Site::new(&[1, 0]), 0) - C64::new(-s, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn invalid_scatterer_rejected() {
        let mut spec = CCModelSpec::uniform(Scatter::critical());
        spec.set([0, 0], Scatter::new(C64::new(1.0, 0.0), C64::new(0.9, 0.0), C64::new(0.9, 0.0)));
        assert!(matches!(build_cc(&spec, &tol()), Err(Error::InvalidScattering { .. })));
        let mut spec = CCModelSpec::uniform(Scatter::critical());
        spec.set([0, 1], Scatter::critical());
        assert!(build_cc(&spec, &tol()).is_err());
        let empty = CCModelSpec {
            window: vec![],
            tail: vec![],
        };
        assert!(build_cc(&empty, &tol()).is_err());
    }

    #[test]
    fn unit_step_bisects_one_edge() {
        let v = Site::new(&[0, 0]);
        for d in Direction::all(2) {
            let w = v.step(d);
            let (l, r) = bisected_edge(&v, &w);
            assert_eq!(l.l1_distance(&r), 1);
            let (f, g) = faces_of_edge(&l, &r);
            assert!((f == v && g == w) || (f == w && g == v), "{d}");
        }
    }

    #[test]
    fn straight_lines_have_constant_tags() {
        for k in -2..3 {
            let c = classify_path(&horizontal_r_path(k)).unwrap();
            assert!(c.is_r_path() && c.parity_consistent);
        }
        let c = classify_path(&vertical_r_path(1)).unwrap();
        assert!(c.is_r_path() && c.parity_consistent);
        let odd = DualPath::new(vec![Site::new(&[0, 1])], Direction::plus(1), Direction::plus(1), 0).unwrap();
        let c = classify_path(&odd).unwrap();
        assert_eq!((c.incoming_tag, c.outgoing_tag), (Tag::T, Tag::T));
    }

    #[test]
    fn crossover_switches_once() {
        let c = classify_path(&crossover_path(1, 0).unwrap()).unwrap();
        assert_eq!((c.incoming_tag, c.outgoing_tag), (Tag::R, Tag::T));
        assert_eq!(c.switches(), 1);
        assert!(c.parity_consistent);
    }

    #[test]
    fn left_side_is_above_eastward_line() {
        let p = horizontal_r_path(0);
        assert!(p.side(&Site::new(&[5, 0])));
        assert!(p.side(&Site::new(&[-7, 3])));
        assert!(!p.side(&Site::new(&[2, -1])));
        assert!(!p.side(&Site::new(&[-9, -4])));
    }

    #[test]
    fn crossing_rays_rejected() {
        let bad = DualPath::new(vec![Site::new(&[0, 0])], Direction::plus(1), Direction::minus(1), 0);
        assert!(bad.is_err());
        let repeat = DualPath::new(
            vec![Site::new(&[0, 0]), Site::new(&[1, 0]), Site::new(&[0, 0])],
            Direction::plus(1),
            Direction::plus(2),
            0,
        );
        assert!(repeat.is_err());
    }

    #[test]
    fn r_path_blocks_have_eigenvalues_plus_minus_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = CCModelSpec::random_phases(0.3, [(-6, 6), (-4, 4)], &mut rng);
        let u = build_cc(&spec, &tol()).unwrap();
        let flux = cc_flux(&u, &horizontal_r_path(0));
        for (z, (r, ev)) in block_table(&u, &flux).unwrap() {
            assert!((ev[0] + r).abs() < 1e-12 && (ev[1] - r).abs() < 1e-12, "{z}");
        }
        let rep = cc_index(&u, &horizontal_r_path(0), &tol()).unwrap();
        assert_eq!(rep.report.index, 0);
        assert!((rep.report.max_block_norm - 0.3).abs() < 1e-12);
    }

    #[test]
    fn crossover_index_has_modulus_one() {
        let u = build_cc(&CCModelSpec::uniform(Scatter::critical()), &tol()).unwrap();
        let rep = cc_index(&u, &crossover_path(1, 0).unwrap(), &tol()).unwrap();
        assert_eq!(rep.report.index.abs(), 1);
        assert_eq!(rep.report.rank_formula, Some(rep.report.index));
    }

    #[test]
    fn identity_surgery_is_a_no_op() {
        let p = horizontal_r_path(0).extended(4);
        let seg: Vec<Site> = (-3..=1).map(|t| p.vertex(t)).collect();
        let q = path_surgery(&p, -3, 1, &seg).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn enclosed_square() {
        // loop around the lattice point (1, 0)
        let poly = vec![
            Site::new(&[0, 0]),
            Site::new(&[1, 0]),
            Site::new(&[1, 1]),
            Site::new(&[0, 1]),
        ];
        let inside = enclosed_sites(&poly);
        assert_eq!(inside.into_iter().collect::<Vec<_>>(), vec![Site::new(&[1, 0])]);
    }

    #[test]
    fn epsilon_family_is_trace_class() {
        let spec = CCModelSpec::uniform(Scatter::with_modulus(0.2));
        let path = crossover_path(1, 0).unwrap();
        let pts = anomalous_transport(&spec, &path, &[0.25, 0.125], &tol()).unwrap();
        for p in pts {
            assert!((p.trace - p.index as f64).abs() < 1e-9);
            assert_eq!(p.index.abs(), 1);
        }
    }
}
