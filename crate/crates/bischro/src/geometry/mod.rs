//! Embedded target geometries.
//!
//! A [`Backend`] realizes a symmetric Kaehler manifold as a submanifold of
//! Euclidean space `R^d` and exposes exactly the embedding data the flow
//! needs: the orthogonal tangent projector `P(q)`, the complex structure
//! `J(q)` acting on tangent vectors, the second fundamental form `A(q)`,
//! the Weingarten maps `W_eta`, and a retraction back onto the manifold.
//! No local frames are ever built; the Riemann curvature is assembled from
//! `A` and `W` through the Gauss equation
//!
//! ```text
//! R(Y1, Y2) Y3 = W_{A(Y2, Y3)}(Y1) - W_{A(Y1, Y3)}(Y2).
//! ```
//!
//! Sign conventions follow the Gauss formula in the form
//! `D_x Y = d_x Y + A(Y, u_x)` for tangent fields `Y` along a curve `u`,
//! where `D` is the covariant derivative; equivalently `A(Y, X)` is minus
//! the normal part of the ambient derivative of the projected extension of
//! `Y` in the direction `X`. On the round sphere this gives
//! `A(q)(X, Y) = (PX . PY) q`, which makes the assembled curvature the
//! positive constant-curvature tensor.

mod grassmann;
mod sphere;

pub use grassmann::GrassmannProjector;
pub use sphere::SphereS2;

use nalgebra::DVector;
use rand::RngCore;
use thiserror::Error;

/// Ambient coordinate vector in `R^d`.
pub type Ambient = DVector<f64>;

/// Constraint residual below which coordinates count as on-manifold.
pub const ON_MANIFOLD_TOL: f64 = 1e-10;

/// Relative tangent part above which a Weingarten direction is rejected.
pub const NORMAL_DIRECTION_TOL: f64 = 1e-8;

/// Margin below which retractions are refused (vanishing norm on the
/// sphere, closing spectral gap on the Grassmannian).
pub const RETRACT_MARGIN: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("constraint violation: residual {residual:.3e} exceeds {tol:.1e}")]
    OffManifold { residual: f64, tol: f64 },
    #[error("retraction undefined: {0}")]
    RetractionUndefined(String),
    #[error("weingarten direction has relative tangent part {0:.3e}; expected a normal vector")]
    NotNormal(f64),
    #[error("ambient dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid backend parameters: {0}")]
    InvalidParameters(String),
}

/// Point validated to lie on the manifold of the backend that created it.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePoint(Ambient);

impl SurfacePoint {
    /// Validates `coords` against the backend constraints.
    pub fn new(backend: &dyn Backend, coords: Ambient) -> Result<Self, GeometryError> {
        if coords.len() != backend.ambient_dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: backend.ambient_dim(),
                got: coords.len(),
            });
        }
        let residual = backend.constraint_residual(&coords);
        if !residual.is_finite() || residual > ON_MANIFOLD_TOL {
            return Err(GeometryError::OffManifold {
                residual,
                tol: ON_MANIFOLD_TOL,
            });
        }
        Ok(Self(coords))
    }

    /// Wraps coordinates whose on-manifold invariant is guaranteed by the
    /// caller, e.g. curve storage maintained by retraction.
    pub(crate) fn new_unchecked(coords: Ambient) -> Self {
        Self(coords)
    }

    pub fn coords(&self) -> &Ambient {
        &self.0
    }

    pub fn into_coords(self) -> Ambient {
        self.0
    }
}

/// Embedded symmetric Kaehler target.
///
/// All vector arguments are ambient; operations that only make sense on
/// tangent vectors project their inputs first, so normal components are
/// silently discarded rather than misinterpreted.
pub trait Backend: Send + Sync {
    /// Short stable identifier used in reports and output manifests.
    fn name(&self) -> String;

    /// Ambient dimension `d`.
    fn ambient_dim(&self) -> usize;

    /// Residual of the defining constraints; zero exactly on the manifold.
    fn constraint_residual(&self, v: &Ambient) -> f64;

    /// Orthogonal projection of `v` onto the tangent space at `q`.
    fn tangent_project(&self, q: &SurfacePoint, v: &Ambient) -> Ambient;

    /// Complex structure applied to the tangent part of `v`.
    fn complex_apply(&self, q: &SurfacePoint, v: &Ambient) -> Ambient;

    /// Second fundamental form `A(q)(x, y)`: symmetric, normal-valued,
    /// blind to the normal parts of `x` and `y`.
    fn second_fundamental(&self, q: &SurfacePoint, x: &Ambient, y: &Ambient) -> Ambient;

    /// Weingarten map `W_eta(x)` for a normal direction `eta`, defined by
    /// `(W_eta(x), y) = (eta, A(x, y))`. The direction is not validated;
    /// use [`weingarten`] for the checked entry point.
    fn weingarten_unchecked(&self, q: &SurfacePoint, eta: &Ambient, x: &Ambient) -> Ambient;

    /// Retraction of ambient coordinates onto the manifold.
    fn retract(&self, v: &Ambient) -> Result<SurfacePoint, GeometryError>;

    /// Radius of an origin-centered ball containing the manifold; the
    /// solver uses ten times this as its divergence threshold.
    fn bounding_radius(&self) -> f64;

    /// Uniformly-flavored random point, used by the identity batteries.
    fn random_point(&self, rng: &mut dyn RngCore) -> SurfacePoint;

    /// Random tangent vector at `q` with isotropic Gaussian law.
    fn random_tangent(&self, q: &SurfacePoint, rng: &mut dyn RngCore) -> Ambient;

    /// Riemann curvature `R(y1, y2) y3`.
    ///
    /// The default assembles the Gauss composition via
    /// [`gauss_curvature`]; production backends keep it. It exists as a
    /// separate hook so falsification tests can deliberately corrupt the
    /// standalone curvature while the operator layer stays bound to the
    /// honest assembly.
    fn curvature(&self, q: &SurfacePoint, y1: &Ambient, y2: &Ambient, y3: &Ambient) -> Ambient {
        gauss_curvature(self.as_backend(), q, y1, y2, y3)
    }

    /// Object-safe self upcast used by default methods.
    fn as_backend(&self) -> &dyn Backend;
}

/// Gauss equation assembly of the curvature from `A` and `W`.
pub fn gauss_curvature(
    backend: &dyn Backend,
    q: &SurfacePoint,
    y1: &Ambient,
    y2: &Ambient,
    y3: &Ambient,
) -> Ambient {
    let a23 = backend.second_fundamental(q, y2, y3);
    let a13 = backend.second_fundamental(q, y1, y3);
    backend.weingarten_unchecked(q, &a23, y1) - backend.weingarten_unchecked(q, &a13, y2)
}

/// Normal projection `v - P(q) v`.
pub fn normal_project(backend: &dyn Backend, q: &SurfacePoint, v: &Ambient) -> Ambient {
    v - backend.tangent_project(q, v)
}

/// Checked Weingarten map: rejects directions with a non-negligible
/// tangent part.
pub fn weingarten(
    backend: &dyn Backend,
    q: &SurfacePoint,
    eta: &Ambient,
    x: &Ambient,
) -> Result<Ambient, GeometryError> {
    let scale = eta.norm();
    if scale > 0.0 {
        let tangent_part = backend.tangent_project(q, eta).norm() / scale;
        if tangent_part > NORMAL_DIRECTION_TOL {
            return Err(GeometryError::NotNormal(tangent_part));
        }
    }
    Ok(backend.weingarten_unchecked(q, eta, x))
}

/// Orthonormal tangent basis at `q`, built by projecting the ambient
/// coordinate directions and running Gram-Schmidt. Intended for identity
/// tests, not hot paths.
pub fn tangent_basis(backend: &dyn Backend, q: &SurfacePoint) -> Vec<Ambient> {
    let d = backend.ambient_dim();
    let mut basis: Vec<Ambient> = Vec::new();
    for i in 0..d {
        let mut e = Ambient::zeros(d);
        e[i] = 1.0;
        let mut v = backend.tangent_project(q, &e);
        for b in &basis {
            let c = v.dot(b);
            v -= c * b;
        }
        let nrm = v.norm();
        if nrm > 1e-10 {
            basis.push(v / nrm);
        }
    }
    basis
}
