//! Dense real linear algebra used by every other module.
//!
//! All arithmetic is in 64-bit floats: the bonus formulas difference
//! log-determinants that are noise-dominated in single precision. Matrices
//! are row-major. Operations are pure functions of their inputs; nothing
//! here holds interior mutability except the clamp-warning counter.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Incremented whenever a quadratic form evaluates to a (numerically)
/// negative value and is clamped to zero.
static NEGATIVE_QUAD_CLAMPS: AtomicU64 = AtomicU64::new(0);

pub fn negative_quad_clamp_count() -> u64 {
    NEGATIVE_QUAD_CLAMPS.load(Ordering::Relaxed)
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Diagonal matrix with the given entries.
    pub fn diag(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &v) in entries.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// Builds from row-major data; the entry count must match.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::from_rows",
                expected: rows * cols,
                got: data.len(),
            });
        }
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Adds a same-shaped matrix entrywise.
    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Adds `c * u uᵀ` in place (symmetric rank-one accumulation).
    pub fn add_outer(&mut self, u: &[f64], c: f64) {
        debug_assert_eq!(self.rows, self.cols);
        debug_assert_eq!(self.rows, u.len());
        let n = self.rows;
        for i in 0..n {
            let cui = c * u[i];
            let row = &mut self.data[i * n..(i + 1) * n];
            for (j, r) in row.iter_mut().enumerate() {
                *r += cui * u[j];
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Standard matrix-vector product.
pub fn matvec(m: &Matrix, v: &[f64]) -> Result<Vec<f64>> {
    if m.cols != v.len() {
        return Err(Error::DimensionMismatch {
            context: "matvec",
            expected: m.cols,
            got: v.len(),
        });
    }
    Ok((0..m.rows).map(|i| dot(m.row(i), v)).collect())
}

/// Given `Ainv = A⁻¹`, returns `(A + c·u uᵀ)⁻¹` by the Sherman-Morrison
/// identity: `Ainv − c·(Ainv u)(Ainv u)ᵀ / (1 + c·uᵀ Ainv u)`.
///
/// Errors when the denominator falls below `1e-12`, which signals that the
/// update would (numerically) annihilate a direction.
pub fn sherman_morrison_update(ainv: &Matrix, u: &[f64], c: f64) -> Result<Matrix> {
    if ainv.cols != u.len() {
        return Err(Error::DimensionMismatch {
            context: "sherman_morrison_update",
            expected: ainv.cols,
            got: u.len(),
        });
    }
    let au = matvec(ainv, u)?;
    let denominator = 1.0 + c * dot(u, &au);
    if denominator <= 1e-12 {
        return Err(Error::NearSingularUpdate { denominator });
    }
    let mut out = ainv.clone();
    out.add_outer(&au, -c / denominator);
    Ok(out)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
fn cholesky(m: &Matrix, context: &'static str) -> Result<Matrix> {
    if m.rows != m.cols {
        return Err(Error::DimensionMismatch {
            context: "cholesky",
            expected: m.rows,
            got: m.cols,
        });
    }
    let n = m.rows;
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::NotSpd { context });
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn direct_inverse(m: &Matrix) -> Result<Matrix> {
    let l = cholesky(m, "direct_inverse")?;
    let n = m.rows;
    let mut inv = Matrix::zeros(n, n);
    // Solve L Lᵀ x = e_j column by column.
    let mut y = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            let mut s = if i == j { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l.get(i, k) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l.get(k, i) * inv.get(k, j);
            }
            inv.set(i, j, s / l.get(i, i));
        }
    }
    // Symmetrize: round-off makes the two triangles drift apart slightly.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (inv.get(i, j) + inv.get(j, i));
            inv.set(i, j, v);
            inv.set(j, i, v);
        }
    }
    Ok(inv)
}

/// Mahalanobis norm `√(gᵀ Ainv g)` for an SPD `Ainv`.
///
/// A numerically negative quadratic form is clamped to zero and counted in
/// [`negative_quad_clamp_count`].
pub fn quad_norm(ainv: &Matrix, g: &[f64]) -> Result<f64> {
    let ag = matvec(ainv, g)?;
    let q = dot(g, &ag);
    if q < 0.0 {
        NEGATIVE_QUAD_CLAMPS.fetch_add(1, Ordering::Relaxed);
        return Ok(0.0);
    }
    Ok(q.sqrt())
}

/// Log-determinant of an SPD matrix: `2 Σ log L_ii` from the Cholesky factor.
pub fn log_det(m: &Matrix) -> Result<f64> {
    let l = cholesky(m, "log_det")?;
    Ok((0..m.rows).map(|i| 2.0 * l.get(i, i).ln()).sum())
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, sorted in
/// descending order. Used for spectrum reporting and as an independent
/// oracle for the Cholesky-based determinant routines.
pub fn sym_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    if m.rows != m.cols {
        return Err(Error::DimensionMismatch {
            context: "sym_eigenvalues",
            expected: m.rows,
            got: m.cols,
        });
    }
    let n = m.rows;
    let mut a = m.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a.get(i, j) * a.get(i, j);
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    eigs.sort_by(|x, y| y.partial_cmp(x).unwrap());
    Ok(eigs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn random_spd(n: usize, rng: &mut Rng) -> Matrix {
        // A = BᵀB + I is SPD by construction.
        let b = Matrix::from_rows(n, n, rng.gaussian_vec(n * n, 1.0)).unwrap();
        let mut a = Matrix::identity(n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += b.get(k, i) * b.get(k, j);
                }
                a.set(i, j, a.get(i, j) + s);
            }
        }
        a
    }

    #[test]
    fn matvec_identity_and_hand_case() {
        let i2 = Matrix::identity(2);
        assert_eq!(matvec(&i2, &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);

        let m = Matrix::from_rows(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matvec(&m, &[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);

        let z = Matrix::zeros(2, 2);
        assert_eq!(matvec(&z, &[5.0, -2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn matvec_rejects_bad_dims() {
        let m = Matrix::zeros(2, 3);
        assert!(matvec(&m, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sherman_morrison_hand_cases() {
        let i2 = Matrix::identity(2);
        let up = sherman_morrison_update(&i2, &[1.0, 0.0], 1.0).unwrap();
        assert!((up.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((up.get(1, 1) - 1.0).abs() < 1e-15);
        assert!(up.get(0, 1).abs() < 1e-15);

        let noop = sherman_morrison_update(&i2, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(noop, i2);
    }

    #[test]
    fn sherman_morrison_matches_direct_inverse() {
        let dim = 16;
        let mut rng = Rng::new(11);
        let mut a = Matrix::identity(dim);
        let mut ainv = Matrix::identity(dim);
        for _ in 0..100 {
            let u = rng.gaussian_vec(dim, 1.0);
            let c = 0.1 + rng.uniform();
            a.add_outer(&u, c);
            ainv = sherman_morrison_update(&ainv, &u, c).unwrap();
        }
        let exact = direct_inverse(&a).unwrap();
        assert!(
            ainv.max_abs_diff(&exact) <= 1e-8,
            "drift {}",
            ainv.max_abs_diff(&exact)
        );
    }

    #[test]
    fn sherman_morrison_rejects_near_singular() {
        // c = -1 with a unit vector on the identity zeroes out a direction.
        let i2 = Matrix::identity(2);
        let err = sherman_morrison_update(&i2, &[1.0, 0.0], -1.0).unwrap_err();
        assert!(matches!(err, Error::NearSingularUpdate { .. }));
    }

    #[test]
    fn direct_inverse_diag_and_identity() {
        let d = Matrix::diag(&[2.0, 4.0]);
        let inv = direct_inverse(&d).unwrap();
        assert!((inv.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((inv.get(1, 1) - 0.25).abs() < 1e-15);

        let i5 = Matrix::identity(5);
        assert!(direct_inverse(&i5).unwrap().max_abs_diff(&i5) < 1e-15);
    }

    #[test]
    fn direct_inverse_residual() {
        let mut rng = Rng::new(5);
        let a = random_spd(8, &mut rng);
        let inv = direct_inverse(&a).unwrap();
        // A·A⁻¹ should be the identity to 1e-10.
        let n = 8;
        for i in 0..n {
            let col: Vec<f64> = (0..n).map(|k| inv.get(k, i)).collect();
            let prod = matvec(&a, &col).unwrap();
            for (j, v) in prod.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-10, "residual {}", (v - want).abs());
            }
        }
    }

    #[test]
    fn direct_inverse_rejects_non_spd() {
        let m = Matrix::from_rows(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap(); // eigenvalues 3, -1
        assert!(matches!(
            direct_inverse(&m),
            Err(Error::NotSpd { .. })
        ));
    }

    #[test]
    fn quad_norm_cases() {
        let quarter = Matrix::diag(&[0.25]);
        assert!((quad_norm(&quarter, &[2.0]).unwrap() - 1.0).abs() < 1e-15);

        let any = Matrix::diag(&[3.0, 7.0]);
        assert_eq!(quad_norm(&any, &[0.0, 0.0]).unwrap(), 0.0);

        // (λI)⁻¹ gives ‖g‖/√λ.
        let lambda = 4.0;
        let ainv = Matrix::diag(&[1.0 / lambda, 1.0 / lambda, 1.0 / lambda]);
        let g = [1.0, 2.0, 2.0];
        let want = norm2(&g) / lambda.sqrt();
        assert!((quad_norm(&ainv, &g).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn quad_norm_clamps_negative_forms() {
        let before = negative_quad_clamp_count();
        let neg = Matrix::diag(&[-1.0]);
        assert_eq!(quad_norm(&neg, &[1.0]).unwrap(), 0.0);
        assert!(negative_quad_clamp_count() > before);
    }

    #[test]
    fn log_det_cases() {
        assert!(log_det(&Matrix::identity(6)).unwrap().abs() < 1e-15);
        let d = Matrix::diag(&[2.0, 2.0]);
        assert!((log_det(&d).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_det_matches_eigenvalue_oracle() {
        let mut rng = Rng::new(23);
        let a = random_spd(6, &mut rng);
        let eigs = sym_eigenvalues(&a).unwrap();
        let want: f64 = eigs.iter().map(|e| e.ln()).sum();
        assert!((log_det(&a).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn quad_norm_consistent_with_direct_inverse() {
        let mut rng = Rng::new(31);
        let a = random_spd(10, &mut rng);
        let ainv = direct_inverse(&a).unwrap();
        for _ in 0..20 {
            let g = rng.gaussian_vec(10, 1.0);
            let q = quad_norm(&ainv, &g).unwrap();
            let oracle = dot(&g, &matvec(&direct_inverse(&a).unwrap(), &g).unwrap());
            assert!((q * q - oracle).abs() <= 1e-9 * oracle.abs().max(1.0));
        }
    }

    #[test]
    fn determinant_lemma_holds() {
        // log det(A + c·uuᵀ) − log det(A) = log(1 + c·uᵀA⁻¹u)
        let mut rng = Rng::new(47);
        let a = random_spd(7, &mut rng);
        let u = rng.gaussian_vec(7, 1.0);
        let c = 0.7;
        let ainv = direct_inverse(&a).unwrap();
        let lhs_base = log_det(&a).unwrap();
        let mut updated = a.clone();
        updated.add_outer(&u, c);
        let lhs = log_det(&updated).unwrap() - lhs_base;
        let rhs = (1.0 + c * dot(&u, &matvec(&ainv, &u).unwrap())).ln();
        assert!((lhs - rhs).abs() < 1e-9, "gap {}", (lhs - rhs).abs());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn sm_chain_tracks_direct_inverse(seed in 0u64..500, dim in 2usize..12, k in 1usize..40) {
            let mut rng = Rng::new(seed);
            let mut a = Matrix::identity(dim);
            let mut ainv = Matrix::identity(dim);
            for _ in 0..k {
                let u = rng.gaussian_vec(dim, 1.0);
                let c = 0.05 + rng.uniform();
                a.add_outer(&u, c);
                ainv = sherman_morrison_update(&ainv, &u, c).unwrap();
            }
            let exact = direct_inverse(&a).unwrap();
            prop_assert!(ainv.max_abs_diff(&exact) <= 1e-8);
        }
    }
}
