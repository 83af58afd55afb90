//! Round unit sphere in `R^3`.
//!
//! The tangent plane at `q` is `q^perp`, the complex structure is the
//! cross product `J(q) v = q x v` (a quarter rotation of the tangent
//! plane), the second fundamental form is `A(q)(x, y) = (Px . Py) q`, and
//! the retraction is radial normalization.

use super::{Ambient, Backend, GeometryError, SurfacePoint, RETRACT_MARGIN};
use nalgebra::Vector3;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, Default)]
pub struct SphereS2;

fn v3(v: &Ambient) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn to_ambient(v: Vector3<f64>) -> Ambient {
    Ambient::from_vec(vec![v.x, v.y, v.z])
}

impl Backend for SphereS2 {
    fn name(&self) -> String {
        "sphere-s2".to_string()
    }

    fn ambient_dim(&self) -> usize {
        3
    }

    fn constraint_residual(&self, v: &Ambient) -> f64 {
        (v.norm() - 1.0).abs()
    }

    fn tangent_project(&self, q: &SurfacePoint, v: &Ambient) -> Ambient {
        let q = q.coords();
        v - q.dot(v) * q
    }

    fn complex_apply(&self, q: &SurfacePoint, v: &Ambient) -> Ambient {
        // q x Pv = q x v since q x q = 0.
        to_ambient(v3(q.coords()).cross(&v3(v)))
    }

    fn second_fundamental(&self, q: &SurfacePoint, x: &Ambient, y: &Ambient) -> Ambient {
        let px = self.tangent_project(q, x);
        let py = self.tangent_project(q, y);
        px.dot(&py) * q.coords()
    }

    fn weingarten_unchecked(&self, q: &SurfacePoint, eta: &Ambient, x: &Ambient) -> Ambient {
        eta.dot(q.coords()) * self.tangent_project(q, x)
    }

    fn retract(&self, v: &Ambient) -> Result<SurfacePoint, GeometryError> {
        let nrm = v.norm();
        if !nrm.is_finite() || nrm < RETRACT_MARGIN {
            return Err(GeometryError::RetractionUndefined(format!(
                "cannot normalize a vector of norm {nrm:.3e}"
            )));
        }
        Ok(SurfacePoint::new_unchecked(v / nrm))
    }

    fn bounding_radius(&self) -> f64 {
        1.0
    }

    fn random_point(&self, rng: &mut dyn RngCore) -> SurfacePoint {
        loop {
            let v = Ambient::from_fn(3, |_, _| StandardNormal.sample(rng));
            if let Ok(p) = self.retract(&v) {
                return p;
            }
        }
    }

    fn random_tangent(&self, q: &SurfacePoint, rng: &mut dyn RngCore) -> Ambient {
        let v = Ambient::from_fn(3, |_, _| StandardNormal.sample(rng));
        self.tangent_project(q, &v)
    }

    fn as_backend(&self) -> &dyn Backend {
        self
    }
}
