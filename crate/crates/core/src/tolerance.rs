use serde::{Deserialize, Serialize};

/// Every numerical threshold used by the library.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Unitarity of coins and scattering matrices.
    pub unitary: f64,
    /// Idempotence and self-adjointness of projection symbols.
    pub projection: f64,
    /// Distance to ±1 below which an eigenvalue counts as ±1.
    pub eigen: f64,
    /// Eigenvalues within `eigen * guard_factor` of ±1 but not within
    /// `eigen` abort the count.
    pub guard_factor: f64,
    /// Agreement between index formulas.
    pub formula: f64,
    /// Post hoc verification of constructed operators.
    pub verify: f64,
    /// Quantities that vanish exactly in exact arithmetic.
    pub exact: f64,
    /// Floor for `(I − Φ²)` before taking the inverse square root.
    pub sqrt_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            unitary: 1e-12,
            projection: 1e-12,
            eigen: 1e-8,
            guard_factor: 10.0,
            formula: 1e-9,
            verify: 1e-10,
            exact: 1e-12,
            sqrt_floor: 1e-10,
        }
    }
}

impl Tolerances {
    pub fn strict() -> Self {
        Tolerances {
            eigen: 1e-9,
            formula: 1e-10,
            verify: 1e-11,
            ..Tolerances::default()
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Tolerances::default()),
            "strict" => Some(Tolerances::strict()),
            _ => None,
        }
    }

    pub fn guard(&self) -> f64 {
        self.eigen * self.guard_factor
    }
}
