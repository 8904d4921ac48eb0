//! Scenario-driven batch runner for the `lattice-flux` library.

pub mod run;
pub mod scenario;

use std::fmt;

use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;
pub const RNG_NAME: &str = "ChaCha8Rng";
pub const OUT_ENV: &str = "LATTICE_FLUX_OUT";

/// Why a scenario did not complete. Each kind has its own exit code.
#[derive(Clone, Debug, PartialEq)]
pub enum Failure {
    Parse(String),
    Validation(String),
    Assertion(String),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Parse(_) => 2,
            Failure::Validation(_) => 3,
            Failure::Assertion(_) | Failure::Io(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Parse(_) => "parse",
            Failure::Validation(_) => "validation",
            Failure::Assertion(_) => "assertion",
            Failure::Io(_) => "io",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Parse(m) | Failure::Validation(m) | Failure::Assertion(m) | Failure::Io(m) => m,
        }
    }

    /// One JSON line for standard error.
    pub fn diagnostic(&self, source: &str) -> String {
        #[derive(Serialize)]
        struct D<'a> {
            error: &'a str,
            scenario: &'a str,
            message: &'a str,
        }
        serde_json::to_string(&D {
            error: self.kind(),
            scenario: source,
            message: self.message(),
        })
        .expect("strings serialize")
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.message())
    }
}

impl std::error::Error for Failure {}

/// Parse errors dominate validation errors, which dominate the rest.
pub fn combined_exit_code(failures: &[Failure]) -> i32 {
    let codes: Vec<i32> = failures.iter().map(Failure::exit_code).collect();
    [2, 3, 1].into_iter().find(|c| codes.contains(c)).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_errors_dominate() {
        let v = Failure::Validation("v".into());
        let a = Failure::Assertion("a".into());
        let p = Failure::Parse("p".into());
        assert_eq!(combined_exit_code(&[]), 0);
        assert_eq!(combined_exit_code(std::slice::from_ref(&a)), 1);
        assert_eq!(combined_exit_code(&[a.clone(), v.clone()]), 3);
        assert_eq!(combined_exit_code(&[v, p, a]), 2);
    }

    #[test]
    fn diagnostic_is_one_json_line() {
        let d = Failure::Validation("leads \"cross\"\nhere".into()).diagnostic("x.json");
        assert!(!d.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&d).unwrap();
        assert_eq!(v["error"], "validation");
        assert_eq!(v["scenario"], "x.json");
    }
}
