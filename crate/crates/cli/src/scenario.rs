//! Scenario files and their validation.

use std::path::Path;
use std::sync::Arc;

use lattice_flux::cc::{self, CCModelSpec, CcUnitary, DualPath, Scatter};
use lattice_flux::flux::{self, FluxField};
use lattice_flux::lattice::{BlockField, Direction, LocalUnitary, Site};
use lattice_flux::walk::{self, AdaptedProjection, BoundaryVariant, CoinedWalk, NetworkSpec};
use lattice_flux::Tolerances;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    pub system: System,
    pub analyses: Vec<Analysis>,
    #[serde(default)]
    pub expect: Expect,
    #[serde(default)]
    pub options: Options,
    /// Overrides on top of the selected profile.
    #[serde(default)]
    pub tolerances: Option<ToleranceOverrides>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum System {
    /// 1D walk, `P = P_(+1)` on `x ≥ n` and 0 elsewhere, random coins on
    /// `[−window, window]`. `window_masks` adds direction masks at single
    /// sites of `(−n, n)`.
    BasicExample {
        n: i64,
        window: i64,
        #[serde(default)]
        window_masks: Vec<(i64, u64)>,
    },
    /// Walk with `P = P_(τ)` on the half-line `x_1 ≥ 1`.
    HalfLine {
        dim: usize,
        direction: Direction,
        window: i64,
    },
    /// Lead network over a random background. With `boundary: true` the
    /// background reflects off `x_d = 0` and the half-space projection is
    /// added.
    LeadNetwork {
        network: NetworkSpec,
        #[serde(default = "default_window")]
        background_window: i64,
    },
    /// Explicit coin field and adapted projection.
    Walk {
        coin: BlockField,
        projection: AdaptedProjection,
    },
    Cc {
        model: CcModel,
        path: DualPath,
        /// Cap `|r|` along the incoming ray and `|t|` along the outgoing ray
        /// beyond a cutoff set by this ε.
        #[serde(default)]
        anomalous_eps: Option<f64>,
    },
}

fn default_window() -> i64 {
    3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CcModel {
    Explicit(CCModelSpec),
    Uniform(Scatter),
    /// Random phases at fixed `|r|` on the scatterers of `zbox`.
    RandomPhases { modulus: f64, zbox: [(i64, i64); 2] },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Index,
    Wandering,
    ShiftDecomposition,
    StabilityProbe,
    AnomalousTransport,
    SpectrumWindow,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    pub index: Option<i64>,
    pub index_abs: Option<i64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    pub shift_steps: usize,
    pub shift_samples: usize,
    pub wandering_steps: usize,
    pub probe_steps: usize,
    /// Radius of the window whose coins the stability probe rotates.
    pub probe_window: i64,
    pub anomalous_eps: Vec<f64>,
    pub spectrum_radius: i64,
    pub histogram_bins: usize,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            shift_steps: 30,
            shift_samples: 4,
            wandering_steps: 30,
            probe_steps: 10,
            probe_window: 2,
            anomalous_eps: vec![0.25, 0.125, 0.0625],
            spectrum_radius: 3,
            histogram_bins: 32,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceOverrides {
    pub unitary: Option<f64>,
    pub projection: Option<f64>,
    pub eigen: Option<f64>,
    pub guard_factor: Option<f64>,
    pub formula: Option<f64>,
    pub verify: Option<f64>,
    pub exact: Option<f64>,
    pub sqrt_floor: Option<f64>,
}

impl ToleranceOverrides {
    pub fn apply(&self, mut t: Tolerances) -> Tolerances {
        let fields = [
            (&mut t.unitary, self.unitary),
            (&mut t.projection, self.projection),
            (&mut t.eigen, self.eigen),
            (&mut t.guard_factor, self.guard_factor),
            (&mut t.formula, self.formula),
            (&mut t.verify, self.verify),
            (&mut t.exact, self.exact),
            (&mut t.sqrt_floor, self.sqrt_floor),
        ];
        for (slot, v) in fields {
            if let Some(v) = v {
                *slot = v;
            }
        }
        t
    }
}

pub fn parse(text: &str) -> Result<Scenario, Failure> {
    serde_json::from_str(text).map_err(|e| Failure::Parse(e.to_string()))
}

pub fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))?;
    parse(&text)
}

/// Scenario shipped with the binary.
pub struct Bundled {
    pub file: &'static str,
    pub text: &'static str,
}

macro_rules! bundled {
    ($($f:literal),* $(,)?) => {
        &[$(Bundled { file: $f, text: include_str!(concat!("../scenarios/", $f)) }),*]
    };
}

pub const BUNDLED: &[Bundled] = bundled![
    "basic_example.json",
    "half_line_plus.json",
    "half_line_minus.json",
    "two_outgoing.json",
    "in_out.json",
    "bulk_boundary_leads.json",
    "cc_r_path.json",
    "cc_crossover_critical.json",
    "cc_anomalous.json",
];

pub fn bundled(name: &str) -> Option<&'static Bundled> {
    BUNDLED
        .iter()
        .find(|b| b.file == name || b.file.strip_suffix(".json") == Some(name))
}

/// The unitary and flux a scenario describes.
pub struct Built {
    pub flux: FluxField,
    pub system: BuiltSystem,
}

pub enum BuiltSystem {
    Walk {
        walk: Arc<CoinedWalk>,
        projection: AdaptedProjection,
        network: Option<NetworkSpec>,
    },
    Cc {
        unitary: Arc<CcUnitary>,
        /// Scattering data before any ε cap.
        base: CCModelSpec,
        path: DualPath,
    },
}

impl Built {
    pub fn unitary(&self) -> &dyn LocalUnitary {
        self.flux.source.unitary()
    }

    pub fn dim(&self) -> usize {
        self.flux.dim()
    }
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Validation(e.to_string())
}

fn walk_flux(walk: CoinedWalk, projection: AdaptedProjection, network: Option<NetworkSpec>) -> Result<Built, Failure> {
    let flux = walk::walk_flux(&walk, &projection).map_err(invalid)?;
    Ok(Built {
        flux,
        system: BuiltSystem::Walk {
            walk: Arc::new(walk),
            projection,
            network,
        },
    })
}

/// Build the system from the scenario seed. Deterministic.
pub fn build(s: &Scenario, seed: u64, tol: &Tolerances) -> Result<Built, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match &s.system {
        System::BasicExample { n, window, window_masks } => {
            if *n < 1 || window < n {
                return Err(invalid("basic example needs 1 ≤ n ≤ window"));
            }
            let (w, mut p) = walk::basic_example(*n, *window, &mut rng);
            for &(x, mask) in window_masks {
                if x.abs() >= *n || mask > 3 {
                    return Err(invalid(format!("window mask {mask} at {x} is outside (−n, n) or C^2")));
                }
                p.add_window(Site::new(&[x]), mask);
            }
            walk_flux(w, p, None)
        }
        System::HalfLine { dim, direction, window } => {
            if *dim < 1 || direction.axis > *dim {
                return Err(invalid(format!("direction {direction} does not exist in dimension {dim}")));
            }
            let (w, p) = walk::half_line_example(*dim, *direction, *window, &mut rng);
            walk_flux(w, p, None)
        }
        System::LeadNetwork {
            network,
            background_window,
        } => {
            let geo = network.validate().map_err(invalid)?;
            let bg = if network.boundary {
                let w = geo
                    .ebox
                    .iter()
                    .map(|&(a, b)| a.abs().max(b.abs()))
                    .max()
                    .unwrap_or(0)
                    .max(*background_window);
                walk::random_reflecting_background(network.dim, w, &mut rng)
            } else {
                let ranges: Vec<(i64, i64)> = geo
                    .ebox
                    .iter()
                    .map(|&(a, b)| (a.min(-background_window), b.max(*background_window)))
                    .collect();
                walk::random_background_in(&ranges, &mut rng)
            };
            let coin = walk::synthesize_lead_coin(network, &bg, tol).map_err(invalid)?;
            walk::verify_lead_conditions(network, &coin, tol).map_err(invalid)?;
            let mut p = walk::lead_projection(network).map_err(invalid)?;
            if network.boundary {
                walk::check_reflecting(&coin, tol).map_err(invalid)?;
                p = walk::half_space_projection(network.dim, BoundaryVariant::WithLeads).union(&p);
            }
            let w = CoinedWalk::new(coin, tol).map_err(invalid)?;
            walk_flux(w, p, Some(network.clone()))
        }
        System::Walk { coin, projection } => {
            if coin.dim() != projection.dim() {
                return Err(invalid(format!(
                    "coin lives in dimension {} but the projection in {}",
                    coin.dim(),
                    projection.dim()
                )));
            }
            let w = CoinedWalk::new(coin.clone(), tol).map_err(invalid)?;
            walk_flux(w, projection.clone(), None)
        }
        System::Cc {
            model,
            path,
            anomalous_eps,
        } => {
            let base = match model {
                CcModel::Explicit(spec) => spec.clone(),
                CcModel::Uniform(s) => CCModelSpec::uniform(*s),
                CcModel::RandomPhases { modulus, zbox } => {
                    if !(0.0..=1.0).contains(modulus) {
                        return Err(invalid(format!("|r| = {modulus} is not in [0, 1]")));
                    }
                    CCModelSpec::random_phases(*modulus, *zbox, &mut rng)
                }
            };
            let spec = match anomalous_eps {
                Some(eps) => cc::anomalous_spec(&base, path, *eps).map_err(invalid)?,
                None => base.clone(),
            };
            cc::classify_path(path).map_err(invalid)?;
            let u = CcUnitary::new(&spec, tol).map_err(invalid)?;
            Ok(Built {
                flux: cc::cc_flux(&u, path),
                system: BuiltSystem::Cc {
                    unitary: Arc::new(u),
                    base,
                    path: path.clone(),
                },
            })
        }
    }
}

/// Everything checkable before any analysis runs: the system builds, the
/// flux is certified at infinity, and each analysis applies to the system.
pub fn validate(s: &Scenario, seed: u64, tol: &Tolerances) -> Result<Built, Failure> {
    if s.name.is_empty() || s.name.contains(['/', '\\']) {
        return Err(invalid(format!("scenario name {:?} cannot name an output directory", s.name)));
    }
    if s.analyses.is_empty() {
        return Err(invalid("no analyses requested"));
    }
    let is_cc = matches!(s.system, System::Cc { .. });
    for a in &s.analyses {
        match a {
            Analysis::AnomalousTransport if !is_cc => {
                return Err(invalid("anomalous_transport needs a cc system"));
            }
            Analysis::StabilityProbe if is_cc => {
                return Err(invalid("stability_probe needs a walk system"));
            }
            _ => {}
        }
    }
    if s.analyses.contains(&Analysis::AnomalousTransport)
        && s.options.anomalous_eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return Err(invalid("anomalous ε must lie in (0, 1)"));
        }
    if s.options.histogram_bins == 0 {
        return Err(invalid("histogram_bins must be positive"));
    }
    let built = build(s, seed, tol)?;
    let cert = flux::certify_isolated(&built.flux, tol);
    if !cert.ok {
        return Err(invalid(lattice_flux::Error::NotCertified {
            witness: cert.witness.unwrap_or_else(|| Site::origin(built.dim())),
            norm: cert.c,
        }));
    }
    Ok(built)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse_and_are_named_after_their_files() {
        for b in BUNDLED {
            let s = parse(b.text).unwrap();
            assert_eq!(format!("{}.json", s.name), b.file);
            assert!(s.expect.index.is_some() || s.expect.index_abs.is_some(), "{}", b.file);
        }
        assert!(bundled("in_out").is_some() && bundled("in_out.json").is_some());
        assert!(bundled("nothing").is_none());
    }

    #[test]
    fn overrides_replace_only_the_given_fields() {
        let o = ToleranceOverrides {
            verify: Some(1e-6),
            ..Default::default()
        };
        let t = o.apply(Tolerances::strict());
        assert_eq!(t.verify, 1e-6);
        assert_eq!(t.eigen, Tolerances::strict().eigen);
    }

    #[test]
    fn same_seed_builds_the_same_system() {
        let s = parse(bundled("two_outgoing").unwrap().text).unwrap();
        let tol = Tolerances::default();
        let a = build(&s, 5, &tol).unwrap();
        let b = build(&s, 5, &tol).unwrap();
        let c = build(&s, 6, &tol).unwrap();
        let phis = |x: &Built| x.flux.blocks.iter().map(|b| b.phi.clone()).collect::<Vec<_>>();
        assert_eq!(phis(&a), phis(&b));
        assert_ne!(phis(&a), phis(&c));
    }
}
