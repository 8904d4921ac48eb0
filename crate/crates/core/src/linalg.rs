//! Small dense complex matrix utilities.
//!
//! Everything in this crate that needs a spectrum works on blocks of size at
//! most `2(d+1)`, plus the occasional few-hundred-dimensional oracle matrix, so
//! plain dense routines from `nalgebra` are all that is needed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Columns are the normalized eigenvectors, in the order of `values`.
    pub vectors: CMat,
}

impl HermitianEigen {
    pub fn new(m: &CMat) -> Self {
        let n = m.nrows();
        if n == 0 {
            return Self {
                values: Vec::new(),
                vectors: CMat::zeros(0, 0),
            };
        }
        // symmetrize first; the solver only reads one triangle
        let h = (m + m.adjoint()).scale(0.5);
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = CMat::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Self { values, vectors }
    }

    /// Rebuild `Σ f(k, λ_k) |v_k⟩⟨v_k|`, skipping terms where `f` returns `None`.
    pub fn functional(&self, mut f: impl FnMut(usize, f64) -> Option<C64>) -> CMat {
        let n = self.vectors.nrows();
        let mut out = CMat::zeros(n, n);
        for (k, &lam) in self.values.iter().enumerate() {
            if let Some(w) = f(k, lam) {
                let v = self.vectors.column(k);
                out += v * v.adjoint() * w;
            }
        }
        out
    }
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn is_zero(m: &CMat, tol: f64) -> bool {
    max_abs(m) <= tol
}

/// Largest singular value.
pub fn op_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s))
}

/// Sum of singular values.
pub fn trace_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().sum()
}

pub fn numerical_rank(m: &CMat, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    m.clone().singular_values().iter().filter(|&&s| s > tol).count()
}

pub fn trace(m: &CMat) -> C64 {
    m.diagonal().iter().sum()
}

pub fn hermiticity_defect(m: &CMat) -> f64 {
    max_abs(&(m - m.adjoint()))
}

pub fn unitarity_defect(m: &CMat) -> f64 {
    let n = m.nrows();
    if m.ncols() != n {
        return f64::INFINITY;
    }
    max_abs(&(m * m.adjoint() - identity(n))).max(max_abs(&(m.adjoint() * m - identity(n))))
}

pub fn projection_defect(m: &CMat) -> f64 {
    hermiticity_defect(m).max(max_abs(&(m * m - m)))
}

pub fn is_diagonal(m: &CMat, tol: f64) -> bool {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j && m[(i, j)].norm() > tol {
                return false;
            }
        }
    }
    true
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

pub fn anticommutator(a: &CMat, b: &CMat) -> CMat {
    a * b + b * a
}

pub fn diag_real(entries: &[f64]) -> CMat {
    CMat::from_diagonal(&CVec::from_iterator(
        entries.len(),
        entries.iter().map(|&x| C64::new(x, 0.0)),
    ))
}

pub fn diag_phases(angles: &[f64]) -> CMat {
    CMat::from_diagonal(&CVec::from_iterator(
        angles.len(),
        angles.iter().map(|&a| C64::from_polar(1.0, a)),
    ))
}

/// `[[1, 1], [1, -1]] / √2`.
pub fn hadamard() -> CMat {
    let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    CMat::from_row_slice(2, 2, &[s, s, s, -s])
}

/// Real rotation mixing basis vectors `i` and `j` of `C^n` by angle `theta`.
pub fn rotation(n: usize, i: usize, j: usize, theta: f64) -> CMat {
    let mut m = identity(n);
    let (s, c) = theta.sin_cos();
    m[(i, i)] = C64::new(c, 0.0);
    m[(j, j)] = C64::new(c, 0.0);
    m[(i, j)] = C64::new(-s, 0.0);
    m[(j, i)] = C64::new(s, 0.0);
    m
}

/// `exp(i t H)` for Hermitian `H`.
pub fn exp_i_hermitian(h: &CMat, t: f64) -> CMat {
    let eig = HermitianEigen::new(h);
    eig.functional(|_, lam| Some(C64::from_polar(1.0, t * lam)))
}

pub fn random_complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    // Box-Muller; keeps the dependency surface to `rand` alone
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let th = std::f64::consts::TAU * u2;
    C64::new(r * th.cos(), r * th.sin()) * std::f64::consts::FRAC_1_SQRT_2
}

/// Haar-distributed unitary via QR of a Ginibre matrix with the phase fix.
pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMat {
    let g = CMat::from_fn(n, n, |_, _| random_complex_gaussian(rng));
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    let mut out = q.clone();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..n {
            out[(i, j)] = q[(i, j)] * phase;
        }
    }
    out
}

pub fn random_hermitian<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> CMat {
    let g = CMat::from_fn(n, n, |_, _| random_complex_gaussian(rng));
    let h = (&g + g.adjoint()).scale(0.5);
    let norm = op_norm(&h);
    if norm == 0.0 {
        h
    } else {
        h.scale(scale / norm)
    }
}

/// Complete a set of orthonormal columns to a unitary.
///
/// `fixed[k] = Some(col)` pins column `k`; the remaining columns are filled in
/// increasing index order by Gram–Schmidt over the standard basis vectors of
/// the orthogonal complement of the pinned columns.
pub fn complete_unitary(n: usize, fixed: &[Option<CVec>]) -> Option<CMat> {
    assert_eq!(fixed.len(), n);
    let mut out = CMat::zeros(n, n);
    let mut basis: Vec<CVec> = Vec::new();
    for (k, col) in fixed.iter().enumerate() {
        if let Some(c) = col {
            for b in &basis {
                if b.dotc(c).norm() > 1e-12 {
                    return None;
                }
            }
            if (c.norm() - 1.0).abs() > 1e-12 {
                return None;
            }
            out.set_column(k, c);
            basis.push(c.clone());
        }
    }
    let mut candidates = (0..n).map(|i| {
        let mut e = CVec::zeros(n);
        e[i] = ONE;
        e
    });
    for (k, col) in fixed.iter().enumerate() {
        if col.is_some() {
            continue;
        }
        loop {
            let mut v = candidates.next()?;
            for b in &basis {
                let p = b.dotc(&v);
                v -= b * p;
            }
            let nv = v.norm();
            if nv > 1e-8 {
                let v = v.unscale(nv);
                out.set_column(k, &v);
                basis.push(v);
                break;
            }
        }
    }
    Some(out)
}

/// Kronecker delta unit vector.
pub fn unit(n: usize, i: usize) -> CVec {
    let mut e = CVec::zeros(n);
    e[i] = ONE;
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..7 {
            let u = random_unitary(n, &mut rng);
            assert!(unitarity_defect(&u) < 1e-12);
        }
    }

    #[test]
    fn eigen_sorted_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_hermitian(5, 2.0, &mut rng);
        let e = HermitianEigen::new(&h);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        let back = e.functional(|_, l| Some(C64::new(l, 0.0)));
        assert!(max_abs(&(back - h)) < 1e-12);
    }

    #[test]
    fn exp_of_hermitian_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = random_hermitian(4, 0.3, &mut rng);
        let u = exp_i_hermitian(&h, 0.7);
        assert!(unitarity_defect(&u) < 1e-12);
        assert!(max_abs(&(exp_i_hermitian(&h, 0.0) - identity(4))) < 1e-12);
    }

    #[test]
    fn completion_fills_in_basis_order() {
        // pin column 0 -> e_2
        let fixed = vec![Some(unit(3, 2)), None, None];
        let u = complete_unitary(3, &fixed).unwrap();
        assert_eq!(u[(2, 0)], ONE);
        assert_eq!(u[(0, 1)], ONE);
        assert_eq!(u[(1, 2)], ONE);
        assert!(unitarity_defect(&u) < 1e-14);
    }

    #[test]
    fn completion_rejects_clash() {
        let fixed = vec![Some(unit(2, 1)), Some(unit(2, 1))];
        assert!(complete_unitary(2, &fixed).is_none());
    }
}
