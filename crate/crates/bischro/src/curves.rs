//! Discrete closed curves and covariant calculus along them.
//!
//! A [`CurveState`] samples a closed curve `u: T -> M` at the grid nodes
//! and keeps every node on the manifold. Derivatives in `x` are spectral;
//! the covariant derivative of a tangent field `Y` along the curve is the
//! tangent projection `D_x Y = P(u) d_x Y`, and the Gauss-formula variant
//! `d_x Y + A(u)(Y, u_x)` is kept alongside as an independent cross-check
//! of the backend's second fundamental form.

use crate::geometry::{Ambient, Backend, GeometryError, SurfacePoint};
use crate::spectral::{Field, PeriodicGrid, SpectralDiff, SpectralError};
use std::sync::Arc;
use thiserror::Error;

/// Per-node constraint residual tolerated in curve storage.
pub const CURVE_NODE_TOL: f64 = 1e-9;

/// Relative normal part above which a field stops counting as tangent.
pub const TANGENT_FIELD_TOL: f64 = 1e-6;

/// Absolute normal-component size below which the tangency gate never
/// fires: fields at rounding level (for example the covariant
/// acceleration of a geodesic) count as tangent regardless of their
/// relative normal fraction.
pub const NORMAL_DEFECT_FLOOR: f64 = 1e-12;

/// Longest supported covariant derivative chain.
pub const MAX_CHAIN: u32 = 3;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("curve node {node} lies off the manifold: residual {residual:.3e} exceeds {CURVE_NODE_TOL:.1e}")]
    NodeOffManifold { node: usize, residual: f64 },
    #[error("field is not tangent along the curve: relative normal part {0:.3e} exceeds {TANGENT_FIELD_TOL:.1e}")]
    NotTangent(f64),
    #[error("covariant derivative chain of length {0} not supported (max {MAX_CHAIN})")]
    ChainTooLong(u32),
    #[error("field shape {rows}x{cols} does not match the curve layout {n}x{d}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        n: usize,
        d: usize,
    },
}

/// Closed curve on one backend: `N x d` coordinates, one node per row,
/// every node on-manifold to [`CURVE_NODE_TOL`].
#[derive(Clone)]
pub struct CurveState {
    backend: Arc<dyn Backend>,
    grid: PeriodicGrid,
    points: Field,
    time: f64,
}

impl CurveState {
    /// Validates existing node coordinates.
    pub fn from_points(
        backend: Arc<dyn Backend>,
        points: Field,
        time: f64,
    ) -> Result<Self, CurveError> {
        let grid = PeriodicGrid::new(points.nrows())?;
        if points.ncols() != backend.ambient_dim() {
            return Err(CurveError::ShapeMismatch {
                rows: points.nrows(),
                cols: points.ncols(),
                n: points.nrows(),
                d: backend.ambient_dim(),
            });
        }
        for j in 0..points.nrows() {
            let row = points.row(j).transpose();
            let residual = backend.constraint_residual(&row);
            if !residual.is_finite() || residual > CURVE_NODE_TOL {
                return Err(CurveError::NodeOffManifold { node: j, residual });
            }
        }
        Ok(Self {
            backend,
            grid,
            points,
            time,
        })
    }

    /// Samples `f` at the grid nodes and retracts each sample onto the
    /// manifold.
    pub fn from_fn(
        backend: Arc<dyn Backend>,
        grid: PeriodicGrid,
        f: impl Fn(f64) -> Ambient,
    ) -> Result<Self, CurveError> {
        let d = backend.ambient_dim();
        let mut points = Field::zeros(grid.len(), d);
        for j in 0..grid.len() {
            let sample = f(grid.node(j));
            if sample.len() != d {
                return Err(CurveError::ShapeMismatch {
                    rows: grid.len(),
                    cols: sample.len(),
                    n: grid.len(),
                    d,
                });
            }
            let q = backend.retract(&sample)?;
            points.row_mut(j).copy_from(&q.coords().transpose());
        }
        Ok(Self {
            backend,
            grid,
            points,
            time: 0.0,
        })
    }

    /// Replaces node coordinates with already-retracted rows; the caller
    /// guarantees the invariant (used by the integrator stages).
    pub(crate) fn replace_points_unchecked(&mut self, points: Field) {
        debug_assert_eq!(points.shape(), self.points.shape());
        self.points = points;
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn points(&self) -> &Field {
        &self.points
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    /// Node `j` as a validated point (the storage invariant backs it).
    pub fn node(&self, j: usize) -> SurfacePoint {
        SurfacePoint::new_unchecked(self.points.row(j).transpose())
    }

    /// Largest node constraint residual, for diagnostics.
    pub fn max_residual(&self) -> f64 {
        (0..self.grid.len())
            .map(|j| self.backend.constraint_residual(&self.points.row(j).transpose()))
            .fold(0.0, f64::max)
    }
}

/// Grid field flagged as tangent along a specific curve.
///
/// Instances are only produced by the calculus in this module (or checked
/// explicitly), so holding one certifies that the relative normal part is
/// below [`TANGENT_FIELD_TOL`] at construction time.
#[derive(Debug, Clone)]
pub struct TangentField {
    values: Field,
}

impl TangentField {
    /// Verifies tangency along `curve` before wrapping.
    pub fn checked(curve: &CurveState, values: Field) -> Result<Self, CurveError> {
        check_shape(curve, &values)?;
        let frac = normal_fraction(curve, &values);
        let sup = sup_node_norm(&values);
        if frac > TANGENT_FIELD_TOL && frac * sup > NORMAL_DEFECT_FLOOR {
            return Err(CurveError::NotTangent(frac));
        }
        Ok(Self { values })
    }

    /// Wraps a field that is tangent by construction (projector output).
    pub(crate) fn from_projected(values: Field) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &Field {
        &self.values
    }

    pub fn into_values(self) -> Field {
        self.values
    }
}

fn check_shape(curve: &CurveState, field: &Field) -> Result<(), CurveError> {
    if field.shape() != curve.points.shape() {
        return Err(CurveError::ShapeMismatch {
            rows: field.nrows(),
            cols: field.ncols(),
            n: curve.points.nrows(),
            d: curve.points.ncols(),
        });
    }
    Ok(())
}

/// Largest node norm of a field.
fn sup_node_norm(field: &Field) -> f64 {
    field.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
}

/// Largest normal part of `field` along `curve`, relative to the largest
/// node value of the field (0 for the zero field).
pub fn normal_fraction(curve: &CurveState, field: &Field) -> f64 {
    let b = curve.backend.as_ref();
    let mut scale: f64 = 0.0;
    let mut worst: f64 = 0.0;
    for j in 0..field.nrows() {
        let q = curve.node(j);
        let v = field.row(j).transpose();
        let tangent = b.tangent_project(&q, &v);
        worst = worst.max((&v - tangent).norm());
        scale = scale.max(v.norm());
    }
    if scale == 0.0 {
        0.0
    } else {
        worst / scale
    }
}

/// Applies a node-wise map to a field along a curve.
pub fn map_nodes(
    curve: &CurveState,
    field: &Field,
    mut f: impl FnMut(&SurfacePoint, Ambient, usize) -> Ambient,
) -> Field {
    let mut out = Field::zeros(field.nrows(), field.ncols());
    for j in 0..field.nrows() {
        let q = curve.node(j);
        let v = field.row(j).transpose();
        out.row_mut(j).copy_from(&f(&q, v, j).transpose());
    }
    out
}

/// Spectral derivative of the curve coordinates. Tangent to spectral
/// accuracy for resolved curves; no projection is applied.
pub fn curve_derivative(diff: &SpectralDiff, curve: &CurveState) -> TangentField {
    TangentField::from_projected(diff.d_dx(&curve.points))
}

/// Covariant derivative `D_x Y = P(u) d_x Y` of a tangent field.
pub fn covariant_dx(
    diff: &SpectralDiff,
    curve: &CurveState,
    y: &TangentField,
) -> Result<TangentField, CurveError> {
    check_shape(curve, y.values())?;
    let frac = normal_fraction(curve, y.values());
    let sup = sup_node_norm(y.values());
    if frac > TANGENT_FIELD_TOL && frac * sup > NORMAL_DEFECT_FLOOR {
        return Err(CurveError::NotTangent(frac));
    }
    let dy = diff.d_dx(y.values());
    let b = curve.backend.as_ref();
    let out = map_nodes(curve, &dy, |q, v, _| b.tangent_project(q, &v));
    Ok(TangentField::from_projected(out))
}

/// Gauss-formula form `d_x Y + A(u)(Y, u_x)` of the covariant
/// derivative, kept as an independent cross-check of `covariant_dx`.
pub fn covariant_dx_gauss(
    diff: &SpectralDiff,
    curve: &CurveState,
    y: &TangentField,
) -> Result<TangentField, CurveError> {
    check_shape(curve, y.values())?;
    let ux = diff.d_dx(&curve.points);
    let dy = diff.d_dx(y.values());
    let b = curve.backend.as_ref();
    let mut out = dy;
    for j in 0..out.nrows() {
        let q = curve.node(j);
        let a = b.second_fundamental(&q, &y.values().row(j).transpose(), &ux.row(j).transpose());
        let sum = out.row(j).transpose() + a;
        out.row_mut(j).copy_from(&sum.transpose());
    }
    Ok(TangentField::from_projected(out))
}

/// `m`-fold covariant derivative of the curve velocity: `m = 0` returns
/// `u_x`, `m = 1` returns `D_x u_x`, up to [`MAX_CHAIN`].
///
/// The velocity is projected onto the tangent bundle before the chain is
/// built, so the chain never trips the tangency gate on truncation-level
/// normal defects of an under-resolved curve; resolution is monitored
/// separately through the spectral tail fraction.
pub fn covariant_chain(
    diff: &SpectralDiff,
    curve: &CurveState,
    m: u32,
) -> Result<TangentField, CurveError> {
    if m > MAX_CHAIN {
        return Err(CurveError::ChainTooLong(m));
    }
    let raw = diff.d_dx(&curve.points);
    let b = curve.backend.as_ref();
    let projected = map_nodes(curve, &raw, |q, v, _| b.tangent_project(q, &v));
    let mut field = TangentField::from_projected(projected);
    for _ in 0..m {
        field = covariant_dx(diff, curve, &field)?;
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GrassmannProjector, SphereS2};

    fn sphere() -> Arc<dyn Backend> {
        Arc::new(SphereS2)
    }

    fn grid(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(n).unwrap()
    }

    fn equator(n: usize) -> CurveState {
        CurveState::from_fn(sphere(), grid(n), |x| {
            Ambient::from_vec(vec![x.cos(), x.sin(), 0.0])
        })
        .unwrap()
    }

    pub(crate) fn helix(n: usize, m: i32, theta0: f64) -> CurveState {
        let (s, c) = theta0.sin_cos();
        CurveState::from_fn(sphere(), grid(n), move |x| {
            let p = m as f64 * x;
            Ambient::from_vec(vec![s * p.cos(), s * p.sin(), c])
        })
        .unwrap()
    }

    fn wobble(n: usize) -> CurveState {
        CurveState::from_fn(sphere(), grid(n), |x| {
            Ambient::from_vec(vec![x.cos(), x.sin(), 0.3 * (2.0 * x).sin() + 0.1 * x.cos()])
        })
        .unwrap()
    }

    fn grassmann_curve(n: usize) -> CurveState {
        let b = GrassmannProjector::new(3, 1).unwrap();
        let base = Ambient::from_vec(vec![2.0, 0.5, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let h1 = Ambient::from_vec(vec![0.0, 0.0, 0.0, 0.3, -0.2, 0.1, 0.0, 0.25, 0.15]);
        let h2 = Ambient::from_vec(vec![0.1, -0.1, 0.0, 0.0, 0.2, -0.15, 0.3, 0.0, 0.1]);
        CurveState::from_fn(Arc::new(b), grid(n), move |x| {
            &base + x.cos() * &h1 + x.sin() * &h2
        })
        .unwrap()
    }

    #[test]
    fn geodesic_velocity_is_covariantly_constant() {
        let diff = SpectralDiff::new(grid(32));
        let curve = equator(32);
        let dxu = covariant_chain(&diff, &curve, 1).unwrap();
        assert!(dxu.values().amax() < 1e-12);
    }

    #[test]
    fn helix_chain_matches_closed_forms() {
        let n = 32;
        let m = 2;
        let theta0 = std::f64::consts::FRAC_PI_4;
        let (s, c) = theta0.sin_cos();
        let diff = SpectralDiff::new(grid(n));
        let curve = helix(n, m, theta0);
        let b = curve.backend().clone();
        let mf = m as f64;

        let ux = curve_derivative(&diff, &curve);
        let jux = map_nodes(&curve, ux.values(), |q, v, _| b.complex_apply(q, &v));

        // D_x u_x = cos(theta0) m J u_x.
        let d1 = covariant_chain(&diff, &curve, 1).unwrap();
        let expected1 = c * mf * &jux;
        assert!((d1.values() - &expected1).amax() < 1e-10);

        // D_x^2 u_x = -cos^2(theta0) m^2 u_x.
        let d2 = covariant_chain(&diff, &curve, 2).unwrap();
        let expected2 = -c * c * mf * mf * ux.values();
        assert!((d2.values() - &expected2).amax() < 1e-10);

        // D_x^3 u_x = -cos^3(theta0) m^3 J u_x.
        let d3 = covariant_chain(&diff, &curve, 3).unwrap();
        let expected3 = -c * c * c * mf * mf * mf * &jux;
        assert!((d3.values() - &expected3).amax() < 1e-9);

        // Velocity magnitude stays sin(theta0) m along the helix.
        for j in 0..n {
            let row = ux.values().row(j).transpose();
            assert!((row.norm() - s * mf).abs() < 1e-11);
        }
    }

    #[test]
    fn projection_and_gauss_forms_agree() {
        for (curve, n) in [(wobble(64), 64), (grassmann_curve(64), 64)] {
            let diff = SpectralDiff::new(grid(n));
            let y = covariant_chain(&diff, &curve, 1).unwrap();
            let a = covariant_dx(&diff, &curve, &y).unwrap();
            let g = covariant_dx_gauss(&diff, &curve, &y).unwrap();
            let scale = a.values().amax().max(1.0);
            let gap = (a.values() - g.values()).amax() / scale;
            assert!(gap < 1e-9, "forms disagree by {gap}");
        }
    }

    #[test]
    fn chain_length_is_capped() {
        let diff = SpectralDiff::new(grid(16));
        let curve = equator(16);
        assert!(matches!(
            covariant_chain(&diff, &curve, 4),
            Err(CurveError::ChainTooLong(4))
        ));
    }

    #[test]
    fn zeroth_chain_is_the_projected_velocity() {
        let diff = SpectralDiff::new(grid(16));
        let curve = wobble(16);
        let ux = curve_derivative(&diff, &curve);
        let chain0 = covariant_chain(&diff, &curve, 0).unwrap();
        let b = curve.backend().as_ref();
        for j in 0..16 {
            let q = curve.node(j);
            let projected = b.tangent_project(&q, &ux.values().row(j).transpose());
            assert_eq!(chain0.values().row(j).transpose(), projected);
            // The projection only removes the truncation-level defect.
            assert!((chain0.values().row(j) - ux.values().row(j)).norm() < 1e-2);
        }
        assert!(normal_fraction(&curve, chain0.values()) < 1e-14);
    }

    #[test]
    fn covariant_dx_rejects_normal_fields() {
        let diff = SpectralDiff::new(grid(16));
        let curve = equator(16);
        // The position field itself is purely normal on the sphere.
        let bad = TangentField::checked(&curve, curve.points().clone());
        assert!(matches!(bad, Err(CurveError::NotTangent(_))));
        let smuggled = TangentField::from_projected(curve.points().clone());
        assert!(matches!(
            covariant_dx(&diff, &curve, &smuggled),
            Err(CurveError::NotTangent(_))
        ));
    }

    #[test]
    fn from_points_rejects_off_manifold_nodes() {
        let mut pts = equator(16).points().clone();
        let scaled = pts.row(3) * (1.0 + 1e-6);
        pts.row_mut(3).copy_from(&scaled);
        let res = CurveState::from_points(sphere(), pts, 0.0);
        assert!(matches!(res, Err(CurveError::NodeOffManifold { node: 3, .. })));
    }

    #[test]
    fn sampled_curves_are_retracted() {
        let curve = wobble(32);
        assert!(curve.max_residual() < 1e-12);
        let g = grassmann_curve(16);
        assert!(g.max_residual() < 1e-12);
    }
}
