//! Orthonormal frames (the Stiefel manifold `{E ∈ ℝ^{n×r} : EᵀE = I_r}`):
//! nearest-point projection, tangent projection and Riemannian gradients of
//! the data-fit term.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Matrix, Tensor3};

/// Tolerance on `‖EᵀE − I‖_F` for a matrix to count as orthonormal.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Relative singular-value floor below which a projection is flagged as
/// non-unique.
const RANK_TOL: f64 = 1e-12;

/// A tall matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint(Matrix);

/// Result of [`project_stiefel`].
#[derive(Debug, Clone)]
pub struct Projection {
    pub point: StiefelPoint,
    /// The input did not have full column rank, so the nearest orthonormal
    /// matrix is not unique and `point` is one of several minimizers.
    pub rank_deficient: bool,
}

pub fn orthonormality_error(m: &Matrix) -> f64 {
    let r = m.ncols();
    (m.tr_mul(m) - Matrix::identity(r, r)).norm()
}

impl StiefelPoint {
    /// Wraps `m` after checking `‖mᵀm − I‖_F ≤ 1e-10`.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.nrows() < m.ncols() || m.ncols() == 0 {
            return Err(shape_err("n ≥ r ≥ 1", format!("{}×{}", m.nrows(), m.ncols())));
        }
        let err = orthonormality_error(&m);
        if err > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal(err));
        }
        Ok(Self(m))
    }

    /// Like [`StiefelPoint::new`] but re-projects when the drift exceeds the
    /// tolerance instead of failing.
    pub fn reorthonormalized(m: Matrix) -> Result<Self> {
        if orthonormality_error(&m) <= ORTHONORMAL_TOL {
            Self::new(m)
        } else {
            Ok(project_stiefel(&m)?.point)
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn rank(&self) -> usize {
        self.0.ncols()
    }
}

/// Nearest orthonormal matrix to `m` in Frobenius norm, the orthogonal polar
/// factor `U Vᵀ` of `m = U Σ Vᵀ`.
///
/// For full-rank input the factor is computed as `Q · polar(R)` from a
/// Householder QR `m = Q R`, with `polar(R)` obtained by the scaled Newton
/// iteration `X ← ½(ζX + ζ⁻¹X⁻ᵀ)`. This is accurate to a few ulps even when
/// the singular values of `m` are far apart. Rank-deficient input falls back
/// to `U Vᵀ` from the computed SVD and is flagged.
pub fn project_stiefel(m: &Matrix) -> Result<Projection> {
    let (n, r) = m.shape();
    if n < r || r == 0 {
        return Err(shape_err("n ≥ r ≥ 1", format!("{n}×{r}")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("matrix has non-finite entries".into()));
    }
    let qr = m.clone().qr();
    let q = qr.q();
    let rfac = qr.r();
    let sv = rfac.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let rank_deficient = smax == 0.0 || smin <= RANK_TOL * smax;

    let polar = if rank_deficient { None } else { polar_newton(&rfac) };
    let mut x = match polar {
        Some(p) => q * p,
        None => svd_polar(m),
    };
    if orthonormality_error(&x) > ORTHONORMAL_TOL {
        // Zero or near-zero singular values can leave U without orthonormal
        // columns; complete it with a QR pass.
        x = x.qr().q();
    }
    Ok(Projection {
        point: StiefelPoint::new(x)?,
        rank_deficient,
    })
}

/// Orthogonal polar factor of a square invertible matrix.
fn polar_newton(r: &Matrix) -> Option<Matrix> {
    let k = r.nrows();
    let tol = 4.0 * f64::EPSILON * (k as f64).sqrt();
    let mut x = r.clone();
    let mut scaled = true;
    for _ in 0..100 {
        let inv_t = x.clone().try_inverse()?.transpose();
        let zeta = if scaled { (inv_t.norm() / x.norm()).sqrt() } else { 1.0 };
        let next = (&x * zeta + inv_t / zeta) * 0.5;
        let change = (&next - &x).norm();
        x = next;
        if change <= tol {
            return Some(x);
        }
        // scaling speeds up the early steps; plain steps converge
        // quadratically once x is close to orthogonal
        if change < 1e-2 {
            scaled = false;
        }
    }
    (orthonormality_error(&x) <= ORTHONORMAL_TOL).then_some(x)
}

/// `U Vᵀ` from the SVD with sign-normalized factors (largest-magnitude entry
/// of each left singular vector nonnegative).
fn svd_polar(m: &Matrix) -> Matrix {
    let svd = m.clone().svd(true, true);
    let mut u = svd.u.expect("requested U");
    let mut v_t = svd.v_t.expect("requested Vᵀ");
    for c in 0..u.ncols() {
        let col = u.column(c);
        let pivot = col.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            u.column_mut(c).neg_mut();
            v_t.row_mut(c).neg_mut();
        }
    }
    u * v_t
}

/// Projection onto the tangent space at `x`: `Y − ½ X (XᵀY + YᵀX)`.
pub fn tangent_project(x: &StiefelPoint, y: &Matrix) -> Result<Matrix> {
    let xm = x.matrix();
    if xm.shape() != y.shape() {
        return Err(shape_err(format!("{:?}", xm.shape()), format!("{:?}", y.shape())));
    }
    let xty = xm.tr_mul(y);
    let sym = &xty + xty.transpose();
    Ok(y - xm * sym * 0.5)
}

/// `(O − S)_(3) (Z_(3))ᵀ`, an `n3 × r` matrix.
pub(crate) fn cross_term(z: &Tensor3, s: &Tensor3, o: &Tensor3) -> Result<Matrix> {
    let (n1, n2, _) = o.dims();
    if s.dims() != o.dims() || z.dims().0 != n1 || z.dims().1 != n2 {
        return Err(shape_err(
            format!("Z ({n1},{n2},r), S and O {:?}", o.dims()),
            format!("Z {:?}, S {:?}", z.dims(), s.dims()),
        ));
    }
    let resid = o.lincomb(1.0, s, -1.0)?;
    Ok(resid.mode3_view().tr_mul(&z.mode3_view()))
}

fn check_basis(z: &Tensor3, e: &StiefelPoint, o: &Tensor3) -> Result<()> {
    if e.rows() != o.dims().2 || e.rank() != z.dims().2 {
        return Err(shape_err(
            format!("E of shape {}×{}", o.dims().2, z.dims().2),
            format!("{}×{}", e.rows(), e.rank()),
        ));
    }
    Ok(())
}

/// Euclidean gradient in `E` of `H = δ/2 ‖Z ×₃ E + S − O‖²_F`:
/// `δ (E Z_(3) + (S − O)_(3)) Z_(3)ᵀ`.
pub fn euclidean_grad_h(z: &Tensor3, e: &Matrix, s: &Tensor3, o: &Tensor3, delta: f64) -> Result<Matrix> {
    let zz = z.mode3_view().tr_mul(&z.mode3_view());
    let cross = cross_term(z, s, o)?;
    Ok((e * zz - cross) * delta)
}

/// Riemannian gradient in `E` of the data-fit term at an orthonormal `E`.
///
/// Computed from the linear surrogate `−δ ⟨E, (O − S)_(3) Z_(3)ᵀ⟩`, whose
/// Riemannian gradient coincides with that of `H` on the manifold.
pub fn riemannian_grad_h(
    z: &Tensor3,
    e: &StiefelPoint,
    s: &Tensor3,
    o: &Tensor3,
    delta: f64,
) -> Result<Matrix> {
    check_basis(z, e, o)?;
    let g = cross_term(z, s, o)? * (-delta);
    tangent_project(e, &g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian(rng: &mut ChaCha8Rng, n: usize, r: usize) -> Matrix {
        use rand_distr::{Distribution, StandardNormal};
        Matrix::from_fn(n, r, |_, _| StandardNormal.sample(rng))
    }

    fn random_point(rng: &mut ChaCha8Rng, n: usize, r: usize) -> StiefelPoint {
        project_stiefel(&gaussian(rng, n, r)).unwrap().point
    }

    #[test]
    fn orthonormal_input_is_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_point(&mut rng, 7, 3);
        let p = project_stiefel(x.matrix()).unwrap();
        assert!((p.point.matrix() - x.matrix()).norm() < 1e-12);
        assert!(!p.rank_deficient);
    }

    #[test]
    fn positive_diagonal_projects_to_identity() {
        let m = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0]));
        let p = project_stiefel(&m).unwrap();
        assert!((p.point.matrix() - Matrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn single_column_normalizes() {
        let m = Matrix::from_column_slice(2, 1, &[0.0, 5.0]);
        let p = project_stiefel(&m).unwrap();
        assert!((p.point.matrix() - Matrix::from_column_slice(2, 1, &[0.0, 1.0])).norm() < 1e-15);
    }

    #[test]
    fn rank_deficient_input_is_flagged_but_orthonormal() {
        let mut m = Matrix::zeros(4, 2);
        m[(0, 0)] = 1.0;
        m[(1, 0)] = 1.0;
        let p = project_stiefel(&m).unwrap();
        assert!(p.rank_deficient);
        assert!(orthonormality_error(p.point.matrix()) <= ORTHONORMAL_TOL);
        let z = project_stiefel(&Matrix::zeros(3, 2)).unwrap();
        assert!(z.rank_deficient);
        assert!(orthonormality_error(z.point.matrix()) <= ORTHONORMAL_TOL);
    }

    #[test]
    fn wide_matrix_rejected() {
        assert!(project_stiefel(&Matrix::zeros(2, 3)).is_err());
        assert!(StiefelPoint::new(Matrix::identity(3, 3) * 2.0).is_err());
    }

    #[test]
    fn reorthonormalization_fixes_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_point(&mut rng, 6, 2);
        let drifted = x.matrix() + gaussian(&mut rng, 6, 2) * 1e-6;
        let y = StiefelPoint::reorthonormalized(drifted).unwrap();
        assert!(orthonormality_error(y.matrix()) <= ORTHONORMAL_TOL);
        assert!((y.matrix() - x.matrix()).norm() < 1e-5);
    }

    #[test]
    fn projection_beats_random_orthonormal_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let m = gaussian(&mut rng, 6, 3);
            let p = project_stiefel(&m).unwrap();
            let d = (p.point.matrix() - &m).norm();
            for _ in 0..200 {
                let q = random_point(&mut rng, 6, 3);
                assert!(d <= (q.matrix() - &m).norm() + 1e-12);
            }
        }
    }

    #[test]
    fn tangent_projection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_point(&mut rng, 8, 3);
        assert!(tangent_project(&x, x.matrix()).unwrap().norm() < 1e-14);
        let a = gaussian(&mut rng, 3, 5);
        let y = x.matrix() * &a * a.transpose();
        assert!(tangent_project(&x, &y).unwrap().norm() < 1e-12 * y.norm());

        let y = gaussian(&mut rng, 8, 3);
        let p = tangent_project(&x, &y).unwrap();
        let tang = p.tr_mul(x.matrix()) + x.matrix().tr_mul(&p);
        assert!(tang.norm() < 1e-10);
        assert!((tangent_project(&x, &p).unwrap() - &p).norm() < 1e-10);
        assert!(tangent_project(&x, &Matrix::zeros(3, 3)).is_err());
    }

    fn random_tensor(rng: &mut ChaCha8Rng, dims: (usize, usize, usize)) -> Tensor3 {
        Tensor3::from_fn(dims, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn riemannian_gradient_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = random_tensor(&mut rng, (3, 4, 2));
        let o = random_tensor(&mut rng, (3, 4, 5));
        let e = random_point(&mut rng, 5, 2);
        let g = riemannian_grad_h(&z, &e, &o, &o, 0.7).unwrap();
        assert_eq!(g.norm(), 0.0);
        let s = random_tensor(&mut rng, (3, 4, 5));
        let g = riemannian_grad_h(&Tensor3::zeros((3, 4, 2)), &e, &s, &o, 0.7).unwrap();
        assert_eq!(g.norm(), 0.0);
        let bad = random_point(&mut rng, 5, 3);
        assert!(riemannian_grad_h(&z, &bad, &s, &o, 0.7).is_err());
    }

    #[test]
    fn three_gradient_forms_agree_after_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let z = random_tensor(&mut rng, (4, 3, 3));
            let o = random_tensor(&mut rng, (4, 3, 6));
            let s = random_tensor(&mut rng, (4, 3, 6));
            let e = random_point(&mut rng, 6, 3);
            let delta = 0.25;
            let g2 = riemannian_grad_h(&z, &e, &s, &o, delta).unwrap();
            let g1 = tangent_project(&e, &euclidean_grad_h(&z, e.matrix(), &s, &o, delta).unwrap()).unwrap();
            // H3 form: δ/2 ‖E − B Aᵀ‖² has Euclidean gradient δ (E − BAᵀ)
            let bat = cross_term(&z, &s, &o).unwrap();
            let g3 = tangent_project(&e, &((e.matrix() - bat) * delta)).unwrap();
            assert!((&g1 - &g2).norm() <= 1e-8);
            assert!((&g3 - &g2).norm() <= 1e-8);
        }
    }
}
