//! Complex Grassmannian in the projector model.
//!
//! Points of `Gr(k, C^n)` are the rank-`k` Hermitian projectors
//! `q^2 = q`, `q* = q`, `tr q = k`. The ambient space is the real vector
//! space of Hermitian `n x n` matrices with the Frobenius inner product,
//! flattened isometrically to `R^{n^2}`: the `n` diagonal entries first,
//! then `(sqrt2 Re, sqrt2 Im)` of each strictly upper entry in row-major
//! order, so the Euclidean dot product of coordinates equals
//! `Re tr(X Y)`.
//!
//! Tangent vectors at `q` are the Hermitian matrices that are
//! off-diagonal with respect to the splitting induced by `q`; the complex
//! structure is `X -> i [q, X]` on them. The retraction rounds a
//! Hermitian matrix to the spectral projector of its top `k` eigenvalues
//! and fails when the spectral gap at the cut closes.

use super::{Ambient, Backend, GeometryError, SurfacePoint, RETRACT_MARGIN};
use nalgebra::{Complex, DMatrix};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

type CMat = DMatrix<Complex<f64>>;

#[derive(Debug, Clone, Copy)]
pub struct GrassmannProjector {
    n: usize,
    k: usize,
}

impl GrassmannProjector {
    pub fn new(n: usize, k: usize) -> Result<Self, GeometryError> {
        if n < 2 || k == 0 || k >= n {
            return Err(GeometryError::InvalidParameters(format!(
                "projector model needs 0 < k < n with n >= 2, got n = {n}, k = {k}"
            )));
        }
        Ok(Self { n, k })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Hermitian matrix encoded by flattened coordinates.
    pub fn coords_to_matrix(&self, v: &Ambient) -> CMat {
        let n = self.n;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::new(v[i], 0.0);
        }
        let mut t = n;
        for i in 0..n {
            for j in (i + 1)..n {
                let re = v[t] * s;
                let im = v[t + 1] * s;
                t += 2;
                m[(i, j)] = Complex::new(re, im);
                m[(j, i)] = Complex::new(re, -im);
            }
        }
        m
    }

    /// Flattened coordinates of a (numerically) Hermitian matrix; the
    /// Hermitian part is taken first so rounding asymmetry cannot leak.
    pub fn matrix_to_coords(&self, m: &CMat) -> Ambient {
        let n = self.n;
        let s = std::f64::consts::SQRT_2;
        let mut v = Ambient::zeros(n * n);
        for i in 0..n {
            v[i] = m[(i, i)].re;
        }
        let mut t = n;
        for i in 0..n {
            for j in (i + 1)..n {
                let upper = m[(i, j)];
                let lower = m[(j, i)];
                v[t] = 0.5 * (upper.re + lower.re) * s;
                v[t + 1] = 0.5 * (upper.im - lower.im) * s;
                t += 2;
            }
        }
        v
    }

    fn split(&self, q: &SurfacePoint) -> (CMat, CMat) {
        let qm = self.coords_to_matrix(q.coords());
        let rest = CMat::identity(self.n, self.n) - &qm;
        (qm, rest)
    }

    /// Off-diagonal (tangent) part `q X (I-q) + (I-q) X q`.
    fn tangent_part(&self, qm: &CMat, rest: &CMat, x: &CMat) -> CMat {
        qm * x * rest + rest * x * qm
    }
}

impl Backend for GrassmannProjector {
    fn name(&self) -> String {
        format!("grassmann-{}-{}", self.n, self.k)
    }

    fn ambient_dim(&self) -> usize {
        self.n * self.n
    }

    fn constraint_residual(&self, v: &Ambient) -> f64 {
        let m = self.coords_to_matrix(v);
        let idem = (&m * &m - &m).norm();
        let trace = (m.trace().re - self.k as f64).abs();
        idem + trace
    }

    fn tangent_project(&self, q: &SurfacePoint, v: &Ambient) -> Ambient {
        let (qm, rest) = self.split(q);
        let x = self.coords_to_matrix(v);
        self.matrix_to_coords(&self.tangent_part(&qm, &rest, &x))
    }

    fn complex_apply(&self, q: &SurfacePoint, v: &Ambient) -> Ambient {
        let (qm, rest) = self.split(q);
        let x = self.coords_to_matrix(v);
        let t = self.tangent_part(&qm, &rest, &x);
        let i = Complex::new(0.0, 1.0);
        let j = (&qm * &t - &t * &qm).map(|z| z * i);
        self.matrix_to_coords(&j)
    }

    fn second_fundamental(&self, q: &SurfacePoint, x: &Ambient, y: &Ambient) -> Ambient {
        let (qm, rest) = self.split(q);
        let xt = self.tangent_part(&qm, &rest, &self.coords_to_matrix(x));
        let yt = self.tangent_part(&qm, &rest, &self.coords_to_matrix(y));
        let m = &xt * &yt + &yt * &xt;
        let a = &qm * &m * &qm - &rest * &m * &rest;
        self.matrix_to_coords(&a)
    }

    fn weingarten_unchecked(&self, q: &SurfacePoint, eta: &Ambient, x: &Ambient) -> Ambient {
        let (qm, rest) = self.split(q);
        let e = self.coords_to_matrix(eta);
        let signed = &qm * &e * &qm - &rest * &e * &rest;
        let xt = self.tangent_part(&qm, &rest, &self.coords_to_matrix(x));
        let w = &signed * &xt + &xt * &signed;
        self.matrix_to_coords(&self.tangent_part(&qm, &rest, &w))
    }

    fn retract(&self, v: &Ambient) -> Result<SurfacePoint, GeometryError> {
        let m = self.coords_to_matrix(v);
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(GeometryError::RetractionUndefined(
                "non-finite coordinates".to_string(),
            ));
        }
        let eig = m.symmetric_eigen();
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        let gap = eig.eigenvalues[order[self.k - 1]] - eig.eigenvalues[order[self.k]];
        if gap < RETRACT_MARGIN {
            return Err(GeometryError::RetractionUndefined(format!(
                "spectral gap {gap:.3e} at the rank cut is below {RETRACT_MARGIN:.1e}"
            )));
        }
        let mut proj = CMat::zeros(self.n, self.n);
        for &idx in order.iter().take(self.k) {
            let col = eig.eigenvectors.column(idx);
            for r in 0..self.n {
                for c in 0..self.n {
                    proj[(r, c)] += col[r] * col[c].conj();
                }
            }
        }
        Ok(SurfacePoint::new_unchecked(self.matrix_to_coords(&proj)))
    }

    fn bounding_radius(&self) -> f64 {
        (self.k as f64).sqrt()
    }

    fn random_point(&self, rng: &mut dyn RngCore) -> SurfacePoint {
        loop {
            let v = Ambient::from_fn(self.ambient_dim(), |_, _| StandardNormal.sample(rng));
            if let Ok(p) = self.retract(&v) {
                return p;
            }
        }
    }

    fn random_tangent(&self, q: &SurfacePoint, rng: &mut dyn RngCore) -> Ambient {
        let v = Ambient::from_fn(self.ambient_dim(), |_, _| StandardNormal.sample(rng));
        self.tangent_project(q, &v)
    }

    fn as_backend(&self) -> &dyn Backend {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g21() -> GrassmannProjector {
        GrassmannProjector::new(2, 1).unwrap()
    }

    fn coords_of(b: &GrassmannProjector, entries: &[(usize, usize, f64, f64)]) -> Ambient {
        let mut m = CMat::zeros(b.n(), b.n());
        for &(i, j, re, im) in entries {
            m[(i, j)] = Complex::new(re, im);
            if i != j {
                m[(j, i)] = Complex::new(re, -im);
            }
        }
        b.matrix_to_coords(&m)
    }

    #[test]
    fn constructor_validates_rank() {
        assert!(GrassmannProjector::new(3, 0).is_err());
        assert!(GrassmannProjector::new(3, 3).is_err());
        assert!(GrassmannProjector::new(1, 1).is_err());
        assert!(GrassmannProjector::new(4, 2).is_ok());
    }

    #[test]
    fn flattening_is_an_isometry() {
        let b = GrassmannProjector::new(3, 1).unwrap();
        let x = coords_of(&b, &[(0, 0, 0.7, 0.0), (0, 1, 0.2, -0.4), (1, 2, -0.1, 0.9)]);
        let y = coords_of(&b, &[(1, 1, -0.3, 0.0), (0, 1, 0.5, 0.1), (0, 2, 0.8, 0.0)]);
        let xm = b.coords_to_matrix(&x);
        let ym = b.coords_to_matrix(&y);
        let frob = (&xm * &ym).trace().re;
        assert!((x.dot(&y) - frob).abs() < 1e-14);
        let back = b.matrix_to_coords(&xm);
        assert!((back - x).norm() < 1e-15);
    }

    #[test]
    fn diagonal_directions_are_normal_at_diagonal_projectors() {
        let b = g21();
        let q = SurfacePoint::new(&b, coords_of(&b, &[(0, 0, 1.0, 0.0)])).unwrap();
        let x = coords_of(&b, &[(0, 0, 0.4, 0.0), (1, 1, -1.2, 0.0)]);
        assert!(b.tangent_project(&q, &x).norm() < 1e-15);
    }

    #[test]
    fn complex_structure_on_the_standard_chart() {
        // At q = diag(1, 0), J maps the Pauli-x direction to minus the
        // Pauli-y direction: i [q, sigma_x] = [[0, i], [-i, 0]].
        let b = g21();
        let q = SurfacePoint::new(&b, coords_of(&b, &[(0, 0, 1.0, 0.0)])).unwrap();
        let x = coords_of(&b, &[(0, 1, 1.0, 0.0)]);
        let expected = coords_of(&b, &[(0, 1, 0.0, 1.0)]);
        assert!((b.complex_apply(&q, &x) - expected).norm() < 1e-14);
    }

    #[test]
    fn retraction_rounds_to_the_top_eigenprojector() {
        let b = g21();
        let v = coords_of(&b, &[(0, 0, 0.9, 0.0), (1, 1, 0.1, 0.0)]);
        let q = b.retract(&v).unwrap();
        let expected = coords_of(&b, &[(0, 0, 1.0, 0.0)]);
        assert!((q.coords() - expected).norm() < 1e-12);
        assert!(b.constraint_residual(q.coords()) < 1e-12);

        let degenerate = coords_of(&b, &[(0, 0, 0.5 + 1e-9, 0.0), (1, 1, 0.5 - 1e-9, 0.0)]);
        assert!(b.retract(&degenerate).is_err());
    }

    #[test]
    fn retraction_fixes_projectors() {
        let b = GrassmannProjector::new(3, 2).unwrap();
        // Projector onto span{e1, (e2 + e3)/sqrt2}.
        let v = coords_of(
            &b,
            &[
                (0, 0, 1.0, 0.0),
                (1, 1, 0.5, 0.0),
                (2, 2, 0.5, 0.0),
                (1, 2, 0.5, 0.0),
            ],
        );
        assert!(b.constraint_residual(&v) < 1e-12);
        let q = b.retract(&v).unwrap();
        assert!((q.coords() - &v).norm() < 1e-12);
    }
}
