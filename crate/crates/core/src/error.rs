use thiserror::Error;

use crate::lattice::Site;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("internal dimension mismatch: operator acts on C^{expected}, state has C^{found}")]
    InternalDimension { expected: usize, found: usize },

    #[error("lattice dimension mismatch: expected {expected}, found {found}")]
    LatticeDimension { expected: usize, found: usize },

    #[error("empty window")]
    EmptyWindow,

    #[error("block at {site} is not unitary (defect {defect:.3e})")]
    NotUnitary { site: String, defect: f64 },

    #[error("block at {site} is not a projection (defect {defect:.3e})")]
    NotProjection { site: String, defect: f64 },

    #[error("projection at {site} is not adapted to the direction basis")]
    NotAdapted { site: String },

    #[error("eigenvalue {value} lies in the guard band around ±1 at {site}; review the tolerance")]
    AmbiguousEigenvalue { site: Site, value: f64 },

    #[error("index undefined at infinity: block norm {norm} at {witness} is not bounded away from 1")]
    NotCertified { witness: Site, norm: f64 },

    #[error("flux is not trace class: nonzero block {norm:.3e} at {witness} outside every finite window")]
    NotTraceClass { witness: Site, norm: f64 },

    #[error("invalid lead: {0}")]
    InvalidLead(String),

    #[error("leads cross tangentially at site {site} in direction {direction}")]
    TangentialCrossing { site: Site, direction: String },

    #[error("unsatisfiable coin constraints at {site}: {reason}")]
    Unsatisfiable { site: Site, reason: String },

    #[error("transport condition violated at {site}: |<next, C current>| = {overlap}")]
    TransportCondition { site: Site, overlap: f64 },

    #[error("coin at {site} does not reflect the normal or leave the tangent space invariant")]
    NotReflecting { site: Site },

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("invalid scattering data at z = {z}: {reason}")]
    InvalidScattering { z: Site, reason: String },

    #[error("path surgery rejected: {0}")]
    Surgery(String),

    #[error("epsilon grid inconsistent with path: {0}")]
    EpsilonGrid(String),

    #[error("inconsistent index formulas: {0}")]
    Inconsistent(String),

    #[error("verification failed: {0}")]
    Verification(String),
}
