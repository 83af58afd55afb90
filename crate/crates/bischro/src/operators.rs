//! Curvature operators of the linearized flow.
//!
//! Everything here is assembled pointwise from the backend primitives: the
//! complex structure `J`, the second fundamental form `A`, the Weingarten
//! maps `W_eta`, and the curvature tensor. The operators `B_1..B_3`,
//! `S_plus`, `S_minus`, `T` and its adjoint are bound directly to the
//! Gauss-equation assembly of the curvature tensor, while every standalone
//! curvature application in this module goes through [`Backend::curvature`]
//! so that deliberately broken test doubles are exercised exactly where a
//! subtly wrong curvature implementation would hurt.
//!
//! [`identity_suite`] runs the full battery of algebraic and
//! finite-difference checks on a backend and reports one machine-readable
//! row per identity.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::curves::{covariant_chain, CurveError, CurveState};
use crate::flow::FlowParams;
use crate::geometry::{gauss_curvature, Backend, SurfacePoint};
use crate::spectral::{Field, PeriodicGrid, SpectralDiff};

type Ambient = DVector<f64>;

/// Maximum normalized residual for identities that hold exactly in floating
/// point (no discretization error involved).
pub const ALGEBRAIC_IDENTITY_TOL: f64 = 1e-10;

/// Step sizes used by the finite-difference identity checks.
pub const FD_STEPS: [f64; 3] = [1e-2, 5e-3, 2.5e-3];

/// A centered-difference check passes when the fitted convergence order
/// lies within this window around 2.
pub const FD_ORDER_WINDOW: f64 = 0.3;

/// Bound-style identities compare the observed constant at two perturbation
/// sizes; the ratio must stay below this factor for the bound to count as
/// size-independent.
pub const BOUND_RATIO_TOL: f64 = 3.0;

/// Number of random pointwise samples used when callers do not choose one.
pub const DEFAULT_SUITE_SAMPLES: usize = 1000;

const FD_CONFIGS: usize = 8;
const FD_PATH_SCALE: f64 = 0.2;
const BOUND_GRID: usize = 64;
const BOUND_EPSILONS: [f64; 2] = [1e-4, 1e-6];

/// Curve together with the precomputed spectral velocity and covariant
/// acceleration fields that every operator evaluation needs.
pub struct CurveData {
    curve: CurveState,
    ux: Field,
    jux: Field,
    uu: Field,
    juu: Field,
}

impl CurveData {
    /// Precomputes `u_x`, `J u_x`, the covariant acceleration and its
    /// rotation for `curve`.
    pub fn new(diff: &SpectralDiff, curve: CurveState) -> Result<Self, CurveError> {
        let ux = covariant_chain(diff, &curve, 0)?.into_values();
        let uu = covariant_chain(diff, &curve, 1)?.into_values();
        let backend = curve.backend().as_ref();
        let n = curve.grid().len();
        let mut jux = ux.clone();
        let mut juu = uu.clone();
        for j in 0..n {
            let q = curve.node(j);
            let jux_j = backend.complex_apply(&q, &ux.row(j).transpose());
            let juu_j = backend.complex_apply(&q, &uu.row(j).transpose());
            jux.row_mut(j).copy_from(&jux_j.transpose());
            juu.row_mut(j).copy_from(&juu_j.transpose());
        }
        Ok(Self {
            curve,
            ux,
            jux,
            uu,
            juu,
        })
    }

    pub fn curve(&self) -> &CurveState {
        &self.curve
    }

    pub fn velocity(&self) -> &Field {
        &self.ux
    }

    pub fn velocity_rotated(&self) -> &Field {
        &self.jux
    }

    pub fn acceleration(&self) -> &Field {
        &self.uu
    }

    pub fn acceleration_rotated(&self) -> &Field {
        &self.juu
    }

    fn node(&self, j: usize) -> SurfacePoint {
        self.curve.node(j)
    }

    fn row(field: &Field, j: usize) -> Ambient {
        field.row(j).transpose()
    }
}

/// Selects one of the three symmetric curvature combinations built from the
/// velocity and acceleration of a curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BOperator {
    First,
    Second,
    Third,
}

/// Selects the self-adjoint or skew-adjoint combination of Weingarten and
/// complex-structure maps built from `A(u_x, u_x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SOperator {
    Plus,
    Minus,
}

/// `B_1 Y = R(Y, uu) J u_x - R(Y, u_x) J uu` and the two companions, all
/// assembled from the Gauss equation at a single point.
pub fn point_b(
    backend: &dyn Backend,
    q: &SurfacePoint,
    ux: &Ambient,
    uu: &Ambient,
    which: BOperator,
    y: &Ambient,
) -> Ambient {
    let jux = backend.complex_apply(q, ux);
    let juu = backend.complex_apply(q, uu);
    match which {
        BOperator::First => {
            gauss_curvature(backend, q, y, uu, &jux) - gauss_curvature(backend, q, y, ux, &juu)
        }
        BOperator::Second => {
            gauss_curvature(backend, q, y, uu, &jux) + gauss_curvature(backend, q, y, &jux, uu)
        }
        BOperator::Third => {
            gauss_curvature(backend, q, y, ux, &juu) + gauss_curvature(backend, q, y, &juu, ux)
        }
    }
}

/// `S_plus Y = J W_eta Y + W_eta J Y` or the `minus` variant, where
/// `eta = A(u_x, u_x)`. The plus sign gives a skew-adjoint operator, the
/// minus sign a self-adjoint one.
pub fn point_s(
    backend: &dyn Backend,
    q: &SurfacePoint,
    ux: &Ambient,
    which: SOperator,
    y: &Ambient,
) -> Ambient {
    let eta = backend.second_fundamental(q, ux, ux);
    let wy = backend.weingarten_unchecked(q, &eta, y);
    let jy = backend.complex_apply(q, y);
    let wjy = backend.weingarten_unchecked(q, &eta, &jy);
    let jwy = backend.complex_apply(q, &wy);
    match which {
        SOperator::Plus => jwy + wjy,
        SOperator::Minus => jwy - wjy,
    }
}

/// `T Y = J W_{A(Y, u_x)} u_x`, the lower-order operator produced when the
/// covariant derivative falls on the second fundamental form.
pub fn point_t(backend: &dyn Backend, q: &SurfacePoint, ux: &Ambient, y: &Ambient) -> Ambient {
    let py = backend.tangent_project(q, y);
    let eta = backend.second_fundamental(q, &py, ux);
    let w = backend.weingarten_unchecked(q, &eta, ux);
    backend.complex_apply(q, &w)
}

/// `T* Y = -W_{A(J Y, u_x)} u_x`, the formal adjoint of [`point_t`] with
/// respect to the ambient inner product.
pub fn point_t_star(backend: &dyn Backend, q: &SurfacePoint, ux: &Ambient, y: &Ambient) -> Ambient {
    let jy = backend.complex_apply(q, y);
    let eta = backend.second_fundamental(q, &jy, ux);
    -backend.weingarten_unchecked(q, &eta, ux)
}

/// Applies the pointwise complex structure along the curve.
pub fn apply_j(data: &CurveData, y: &Field) -> Field {
    let backend = data.curve.backend().as_ref();
    let mut out = y.clone();
    for j in 0..y.nrows() {
        let q = data.node(j);
        let v = backend.complex_apply(&q, &CurveData::row(y, j));
        out.row_mut(j).copy_from(&v.transpose());
    }
    out
}

/// Applies the selected `B` operator node by node.
pub fn apply_b(data: &CurveData, which: BOperator, y: &Field) -> Field {
    let backend = data.curve.backend().as_ref();
    let mut out = y.clone();
    for j in 0..y.nrows() {
        let q = data.node(j);
        let v = point_b(
            backend,
            &q,
            &CurveData::row(&data.ux, j),
            &CurveData::row(&data.uu, j),
            which,
            &CurveData::row(y, j),
        );
        out.row_mut(j).copy_from(&v.transpose());
    }
    out
}

/// Applies the selected `S` operator node by node.
pub fn apply_s(data: &CurveData, which: SOperator, y: &Field) -> Field {
    let backend = data.curve.backend().as_ref();
    let mut out = y.clone();
    for j in 0..y.nrows() {
        let q = data.node(j);
        let v = point_s(
            backend,
            &q,
            &CurveData::row(&data.ux, j),
            which,
            &CurveData::row(y, j),
        );
        out.row_mut(j).copy_from(&v.transpose());
    }
    out
}

/// Applies `T` node by node.
pub fn apply_t(data: &CurveData, y: &Field) -> Field {
    let backend = data.curve.backend().as_ref();
    let mut out = y.clone();
    for j in 0..y.nrows() {
        let q = data.node(j);
        let v = point_t(backend, &q, &CurveData::row(&data.ux, j), &CurveData::row(y, j));
        out.row_mut(j).copy_from(&v.transpose());
    }
    out
}

/// Applies the adjoint of `T` node by node.
pub fn apply_t_star(data: &CurveData, y: &Field) -> Field {
    let backend = data.curve.backend().as_ref();
    let mut out = y.clone();
    for j in 0..y.nrows() {
        let q = data.node(j);
        let v = point_t_star(backend, &q, &CurveData::row(&data.ux, j), &CurveData::row(y, j));
        out.row_mut(j).copy_from(&v.transpose());
    }
    out
}

/// Applies the curvature tensor with fixed first two slots taken from the
/// provided fields: `out_j = R(left_j, right_j) y_j`.
pub fn apply_curvature(data: &CurveData, left: &Field, right: &Field, y: &Field) -> Field {
    let backend = data.curve.backend().as_ref();
    let mut out = y.clone();
    for j in 0..y.nrows() {
        let q = data.node(j);
        let v = backend.curvature(
            &q,
            &CurveData::row(left, j),
            &CurveData::row(right, j),
            &CurveData::row(y, j),
        );
        out.row_mut(j).copy_from(&v.transpose());
    }
    out
}

/// Principal part of the linearized flow acting on an ambient field along
/// the base curve.
///
/// The operator collects every contribution whose coefficient depends on
/// the flow parameters: the fourth-order dispersive block, the second-order
/// rotation, curvature corrections of orders two through zero, the `B`
/// combinations, and the Weingarten blocks coming from differentiating the
/// projector along the curve.
pub fn apply_l(diff: &SpectralDiff, data: &CurveData, params: &FlowParams, y: &Field) -> Field {
    let backend = data.curve.backend().as_ref();
    let (a, lambda, b, c) = (params.a, params.lambda, params.b, params.c);

    let d1 = diff.d_dx(y);
    let d2 = diff.d_dx(&d1);
    let d3 = diff.d_dx(&d2);

    // a d_x^2 { J d_x^2 Y }
    let mut out = diff.d_dx_m(&apply_j(data, &d2), 2) * a;

    // 2a A(J d_x^3 Y, u_x)
    let jd3 = apply_j(data, &d3);
    for j in 0..y.nrows() {
        let q = data.node(j);
        let v = backend.second_fundamental(
            &q,
            &CurveData::row(&jd3, j),
            &CurveData::row(&data.ux, j),
        ) * (2.0 * a);
        let acc = out.row(j).transpose() + v;
        out.row_mut(j).copy_from(&acc.transpose());
    }

    // lambda d_x { J d_x Y }
    out += diff.d_dx(&apply_j(data, &d1)) * lambda;

    // (-a + b) R(d_x^2 Y, J u_x) u_x
    out += apply_curvature(data, &d2, &data.jux, &data.ux) * (-a + b);

    // (-a + b + c) d_x { R(J u_x, u_x) d_x Y }
    let r5 = apply_curvature(data, &data.jux, &data.ux, &d1);
    out += diff.d_dx(&r5) * (-a + b + c);

    // (-a/2 - b/2 + 3c) R(J uu, u_x) d_x Y
    out += apply_curvature(data, &data.juu, &data.ux, &d1) * (-a / 2.0 - b / 2.0 + 3.0 * c);

    // B combinations of d_x Y
    let c1 = a / 2.0 - 1.5 * b - c;
    let c23 = -1.25 * a + 0.75 * b - 0.5 * c;
    out += apply_b(data, BOperator::First, &d1) * c1;
    out += apply_b(data, BOperator::Second, &d1) * c23;
    out += apply_b(data, BOperator::Third, &d1) * c23;

    // a d_x { S_plus d_x Y }
    out += diff.d_dx(&apply_s(data, SOperator::Plus, &d1)) * a;

    // a ( d_x { S_minus d_x Y } - S_minus d_x^2 Y )
    let sm = apply_s(data, SOperator::Minus, &d1);
    out += (diff.d_dx(&sm) - apply_s(data, SOperator::Minus, &d2)) * a;

    // 2a J W_{A(uu, u_x)} d_x Y
    for j in 0..y.nrows() {
        let q = data.node(j);
        let eta = backend.second_fundamental(
            &q,
            &CurveData::row(&data.uu, j),
            &CurveData::row(&data.ux, j),
        );
        let w = backend.weingarten_unchecked(&q, &eta, &CurveData::row(&d1, j));
        let v = backend.complex_apply(&q, &w) * (2.0 * a);
        let acc = out.row(j).transpose() + v;
        out.row_mut(j).copy_from(&acc.transpose());
    }

    out
}

/// Outcome of one identity check.
#[derive(Clone, Debug, Serialize)]
pub struct OperatorReport {
    /// Stable identifier of the identity being checked.
    pub identity: String,
    /// Normalized residual; its meaning depends on the check style
    /// (worst-case relative mismatch, deviation of a convergence order
    /// from 2, or a constant ratio between perturbation sizes).
    pub residual: f64,
    /// Threshold the residual is compared against.
    pub tolerance: f64,
    /// Number of random samples or configurations examined.
    pub samples: usize,
    pub pass: bool,
}

impl OperatorReport {
    fn new(identity: &str, residual: f64, tolerance: f64, samples: usize) -> Self {
        Self {
            identity: identity.to_string(),
            residual,
            tolerance,
            samples,
            pass: residual.is_finite() && residual < tolerance,
        }
    }
}

/// True when every row of a suite run passed.
pub fn suite_passes(reports: &[OperatorReport]) -> bool {
    !reports.is_empty() && reports.iter().all(|r| r.pass)
}

struct MaxResidual {
    max: f64,
}

impl MaxResidual {
    fn new() -> Self {
        Self { max: 0.0 }
    }

    fn vectors(&mut self, lhs: &Ambient, rhs: &Ambient) {
        let denom = 1.0 + lhs.norm() + rhs.norm();
        let r = (lhs - rhs).norm() / denom;
        if r > self.max {
            self.max = r;
        }
    }

    fn scalars(&mut self, lhs: f64, rhs: f64) {
        let denom = 1.0 + lhs.abs() + rhs.abs();
        let r = (lhs - rhs).abs() / denom;
        if r > self.max {
            self.max = r;
        }
    }

    fn magnitude(&mut self, v: &Ambient, scale: f64) {
        let r = v.norm() / (1.0 + scale);
        if r > self.max {
            self.max = r;
        }
    }
}

fn random_ambient(rng: &mut dyn RngCore, dim: usize) -> Ambient {
    Ambient::from_fn(dim, |_, _| StandardNormal.sample(rng))
}

/// Runs every operator identity check against `backend` and returns one
/// report per identity.
///
/// `samples` controls the number of random pointwise configurations for the
/// exact algebraic identities; the finite-difference and perturbation-bound
/// checks use fixed internal configuration counts.
pub fn identity_suite(
    backend: Arc<dyn Backend>,
    seed: u64,
    samples: usize,
) -> Vec<OperatorReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    reports.extend(pointwise_reports(backend.as_ref(), &mut rng, samples));
    reports.extend(fd_reports(backend.as_ref(), &mut rng));
    reports.extend(bound_reports(backend.clone(), &mut rng));
    reports
}

fn pointwise_reports(
    backend: &dyn Backend,
    rng: &mut ChaCha8Rng,
    samples: usize,
) -> Vec<OperatorReport> {
    let dim = backend.ambient_dim();
    let r_at = |q: &SurfacePoint, y1: &Ambient, y2: &Ambient, y3: &Ambient| {
        backend.curvature(q, y1, y2, y3)
    };

    let mut antisym = MaxResidual::new();
    let mut pair_sym = MaxResidual::new();
    let mut bianchi = MaxResidual::new();
    let mut commutes_j = MaxResidual::new();
    let mut rot_invariant = MaxResidual::new();
    let mut j_transfer = MaxResidual::new();
    let mut tangential = MaxResidual::new();
    let mut b_symmetric = MaxResidual::new();
    let mut s_plus_skew = MaxResidual::new();
    let mut s_minus_self = MaxResidual::new();
    let mut t_adjoint = MaxResidual::new();
    let mut decomp1 = MaxResidual::new();
    let mut decomp2 = MaxResidual::new();
    let mut split_plus = MaxResidual::new();
    let mut split_minus = MaxResidual::new();

    for _ in 0..samples {
        let q = backend.random_point(rng);
        let ux = backend.random_tangent(&q, rng);
        let uu = backend.random_tangent(&q, rng);
        let y1 = backend.random_tangent(&q, rng);
        let y2 = backend.random_tangent(&q, rng);
        let y3 = backend.random_tangent(&q, rng);
        let y4 = backend.random_tangent(&q, rng);
        let ambient = random_ambient(rng, dim);
        let normal = &ambient - backend.tangent_project(&q, &ambient);

        let r123 = r_at(&q, &y1, &y2, &y3);
        let r213 = r_at(&q, &y2, &y1, &y3);
        antisym.vectors(&r123, &(-&r213));

        let s1 = r123.dot(&y4);
        let s2 = r_at(&q, &y3, &y4, &y1).dot(&y2);
        let s3 = r_at(&q, &y4, &y3, &y2).dot(&y1);
        pair_sym.scalars(s1, s2);
        pair_sym.scalars(s1, s3);

        let cyc = &r123 + r_at(&q, &y2, &y3, &y1) + r_at(&q, &y3, &y1, &y2);
        let scale = r123.norm();
        bianchi.magnitude(&cyc, scale);

        let jy3 = backend.complex_apply(&q, &y3);
        let lhs = r_at(&q, &y1, &y2, &jy3);
        let rhs = backend.complex_apply(&q, &r123);
        commutes_j.vectors(&lhs, &rhs);

        let jy1 = backend.complex_apply(&q, &y1);
        let jy2 = backend.complex_apply(&q, &y2);
        rot_invariant.vectors(&r_at(&q, &jy1, &jy2, &y3), &r123);

        let t1 = r_at(&q, &jy1, &y2, &y3);
        let t2 = r_at(&q, &y1, &jy2, &y3);
        let t3 = r_at(&q, &jy2, &y1, &y3);
        j_transfer.vectors(&t1, &(-&t2));
        j_transfer.vectors(&t1, &t3);

        let tangent_defect = &r123 - backend.tangent_project(&q, &r123);
        tangential.magnitude(&tangent_defect, r123.norm());
        tangential.magnitude(&r_at(&q, &normal, &y2, &y3), y2.norm() * y3.norm());
        tangential.magnitude(&r_at(&q, &y1, &normal, &y3), y1.norm() * y3.norm());
        tangential.magnitude(&r_at(&q, &y1, &y2, &normal), y1.norm() * y2.norm());

        for which in [BOperator::First, BOperator::Second, BOperator::Third] {
            let by1 = point_b(backend, &q, &ux, &uu, which, &y1);
            let by2 = point_b(backend, &q, &ux, &uu, which, &y2);
            b_symmetric.scalars(by1.dot(&y2), y1.dot(&by2));
        }

        let sp1 = point_s(backend, &q, &ux, SOperator::Plus, &y1);
        let sp2 = point_s(backend, &q, &ux, SOperator::Plus, &y2);
        s_plus_skew.scalars(sp1.dot(&y2), -y1.dot(&sp2));

        let sm1 = point_s(backend, &q, &ux, SOperator::Minus, &y1);
        let sm2 = point_s(backend, &q, &ux, SOperator::Minus, &y2);
        s_minus_self.scalars(sm1.dot(&y2), y1.dot(&sm2));

        let ty1 = point_t(backend, &q, &ux, &y1);
        let ts_y2 = point_t_star(backend, &q, &ux, &y2);
        t_adjoint.scalars(ty1.dot(&y2), y1.dot(&ts_y2));

        let jux = backend.complex_apply(&q, &ux);
        let juu = backend.complex_apply(&q, &uu);
        let b1 = point_b(backend, &q, &ux, &uu, BOperator::First, &y1);
        let b2 = point_b(backend, &q, &ux, &uu, BOperator::Second, &y1);
        let b3 = point_b(backend, &q, &ux, &uu, BOperator::Third, &y1);
        let half_r = r_at(&q, &juu, &ux, &y1) * 0.5;

        let lhs1 = r_at(&q, &y1, &uu, &jux);
        let rhs1 = &half_r + &b1 * 0.5 + &b2 * 0.25 + &b3 * 0.25;
        decomp1.vectors(&lhs1, &rhs1);

        let lhs2 = r_at(&q, &y1, &ux, &juu);
        let rhs2 = &half_r - &b1 * 0.5 + &b2 * 0.25 + &b3 * 0.25;
        decomp2.vectors(&lhs2, &rhs2);

        let rhs_plus = &ty1 - point_t_star(backend, &q, &ux, &y1) + r_at(&q, &jux, &ux, &y1);
        split_plus.vectors(&sp1, &rhs_plus);

        let rhs_minus = &ty1
            + point_t_star(backend, &q, &ux, &y1)
            + r_at(&q, &y1, &ux, &jux)
            + r_at(&q, &y1, &jux, &ux);
        split_minus.vectors(&sm1, &rhs_minus);
    }

    let tol = ALGEBRAIC_IDENTITY_TOL;
    vec![
        OperatorReport::new("curvature-antisymmetry", antisym.max, tol, samples),
        OperatorReport::new("curvature-pair-symmetry", pair_sym.max, tol, samples),
        OperatorReport::new("curvature-first-bianchi", bianchi.max, tol, samples),
        OperatorReport::new(
            "curvature-commutes-with-complex-structure",
            commutes_j.max,
            tol,
            samples,
        ),
        OperatorReport::new(
            "curvature-complex-rotation-invariance",
            rot_invariant.max,
            tol,
            samples,
        ),
        OperatorReport::new("curvature-complex-transfer", j_transfer.max, tol, samples),
        OperatorReport::new("curvature-tangential", tangential.max, tol, samples),
        OperatorReport::new("b-operators-symmetric", b_symmetric.max, tol, samples),
        OperatorReport::new("s-plus-skew-adjoint", s_plus_skew.max, tol, samples),
        OperatorReport::new("s-minus-self-adjoint", s_minus_self.max, tol, samples),
        OperatorReport::new("t-star-is-adjoint-of-t", t_adjoint.max, tol, samples),
        OperatorReport::new("first-curvature-decomposition", decomp1.max, tol, samples),
        OperatorReport::new("second-curvature-decomposition", decomp2.max, tol, samples),
        OperatorReport::new(
            "s-plus-splits-into-t-and-curvature",
            split_plus.max,
            tol,
            samples,
        ),
        OperatorReport::new(
            "s-minus-splits-into-t-and-curvature",
            split_minus.max,
            tol,
            samples,
        ),
    ]
}

/// One smooth path on the manifold together with data for building fields
/// along it.
struct FdConfig {
    base: SurfacePoint,
    dir1: Ambient,
    dir2: Ambient,
    consts: Vec<Ambient>,
    slopes: Vec<Ambient>,
}

impl FdConfig {
    fn sample(backend: &dyn Backend, rng: &mut ChaCha8Rng, fields: usize) -> Self {
        let base = backend.random_point(rng);
        let dir1 = backend.random_tangent(&base, rng) * FD_PATH_SCALE;
        let dir2 = backend.random_tangent(&base, rng) * FD_PATH_SCALE;
        let dim = backend.ambient_dim();
        let consts = (0..fields).map(|_| random_ambient(rng, dim)).collect();
        let slopes = (0..fields).map(|_| random_ambient(rng, dim)).collect();
        Self {
            base,
            dir1,
            dir2,
            consts,
            slopes,
        }
    }

    fn point(&self, backend: &dyn Backend, s: f64) -> SurfacePoint {
        let coords = self.base.coords() + &self.dir1 * s + &self.dir2 * s.sin();
        backend
            .retract(&coords)
            .expect("finite-difference path stays inside the retraction domain")
    }

    /// Raw ambient field `c_i + s d_i` along the path.
    fn field(&self, i: usize, s: f64) -> Ambient {
        &self.consts[i] + &self.slopes[i] * s
    }
}

fn order_from_errors(errors: &[(f64, f64)]) -> f64 {
    let n = errors.len() as f64;
    let xs: Vec<f64> = errors.iter().map(|(h, _)| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|(_, e)| e.max(1e-300).ln()).collect();
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let var: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    cov / var
}

fn fd_reports(backend: &dyn Backend, rng: &mut ChaCha8Rng) -> Vec<OperatorReport> {
    let configs: Vec<FdConfig> = (0..FD_CONFIGS)
        .map(|_| FdConfig::sample(backend, rng, 3))
        .collect();

    let mut product_rule = Vec::new();
    let mut j_derivative = Vec::new();
    let mut t_derivative = Vec::new();
    for &h in &FD_STEPS {
        let mut e_product = 0.0;
        let mut e_j = 0.0;
        let mut e_t = 0.0;
        for cfg in &configs {
            e_product += curvature_product_rule_error(backend, cfg, h);
            e_j += complex_structure_derivative_error(backend, cfg, h);
            e_t += t_derivative_error(backend, cfg, h);
        }
        let n = configs.len() as f64;
        product_rule.push((h, e_product / n));
        j_derivative.push((h, e_j / n));
        t_derivative.push((h, e_t / n));
    }

    let rows = [
        ("curvature-product-rule", product_rule),
        ("complex-structure-derivative", j_derivative),
        ("t-derivative-decomposition", t_derivative),
    ];
    rows.into_iter()
        .map(|(name, errs)| {
            let order = order_from_errors(&errs);
            OperatorReport::new(name, (order - 2.0).abs(), FD_ORDER_WINDOW, FD_CONFIGS)
        })
        .collect()
}

/// Residual of the curvature product rule along a path, evaluated with a
/// centered difference of width `h`.
fn curvature_product_rule_error(backend: &dyn Backend, cfg: &FdConfig, h: f64) -> f64 {
    let q0 = cfg.point(backend, 0.0);
    let qp = cfg.point(backend, h);
    let qm = cfg.point(backend, -h);

    let y = |i: usize, s: f64| cfg.field(i, s);
    let r = |q: &SurfacePoint, a: &Ambient, b: &Ambient, c: &Ambient| backend.curvature(q, a, b, c);

    let lhs = (r(&qp, &y(0, h), &y(1, h), &y(2, h)) - r(&qm, &y(0, -h), &y(1, -h), &y(2, -h)))
        / (2.0 * h);

    let ux = (qp.coords() - qm.coords()) / (2.0 * h);
    let d = |i: usize| {
        (backend.tangent_project(&qp, &y(i, h)) - backend.tangent_project(&qm, &y(i, -h)))
            / (2.0 * h)
    };
    let r0 = r(&q0, &y(0, 0.0), &y(1, 0.0), &y(2, 0.0));
    let rhs = r(&q0, &d(0), &y(1, 0.0), &y(2, 0.0))
        + r(&q0, &y(0, 0.0), &d(1), &y(2, 0.0))
        + r(&q0, &y(0, 0.0), &y(1, 0.0), &d(2))
        - backend.second_fundamental(&q0, &r0, &ux);

    (&lhs - &rhs).norm() / (1.0 + lhs.norm() + rhs.norm())
}

/// Residual of the derivative formula for the complex structure applied to
/// a tangent field along a path.
fn complex_structure_derivative_error(backend: &dyn Backend, cfg: &FdConfig, h: f64) -> f64 {
    let q0 = cfg.point(backend, 0.0);
    let qp = cfg.point(backend, h);
    let qm = cfg.point(backend, -h);

    let tangent = |q: &SurfacePoint, s: f64| backend.tangent_project(q, &cfg.field(0, s));
    let yp = tangent(&qp, h);
    let ym = tangent(&qm, -h);
    let y0 = tangent(&q0, 0.0);

    let lhs = (backend.complex_apply(&qp, &yp) - backend.complex_apply(&qm, &ym)) / (2.0 * h)
        - backend.complex_apply(&q0, &((&yp - &ym) / (2.0 * h)));

    let ux = (qp.coords() - qm.coords()) / (2.0 * h);
    let jy0 = backend.complex_apply(&q0, &y0);
    let rhs = -backend.second_fundamental(&q0, &jy0, &ux);

    (&lhs - &rhs).norm() / (1.0 + lhs.norm() + rhs.norm())
}

/// Residual of the decomposition of the derivative of `T` along a path.
///
/// The path velocity at parameter `s` is itself computed with a centered
/// difference of the same width, so every ingredient carries a second-order
/// error and the total residual must decay like `h^2`.
fn t_derivative_error(backend: &dyn Backend, cfg: &FdConfig, h: f64) -> f64 {
    let q0 = cfg.point(backend, 0.0);
    let qp = cfg.point(backend, h);
    let qm = cfg.point(backend, -h);
    let qpp = cfg.point(backend, 2.0 * h);
    let qmm = cfg.point(backend, -2.0 * h);

    let ux0 = (qp.coords() - qm.coords()) / (2.0 * h);
    let uxp = (qpp.coords() - q0.coords()) / (2.0 * h);
    let uxm = (q0.coords() - qmm.coords()) / (2.0 * h);
    let uu0 = {
        let raw = (qpp.coords() - q0.coords() * 2.0 + qmm.coords()) / (4.0 * h * h);
        backend.tangent_project(&q0, &raw)
    };

    let y0 = cfg.field(0, 0.0);
    let yp = cfg.field(0, h);
    let ym = cfg.field(0, -h);
    let dy = (&yp - &ym) / (2.0 * h);

    let lhs = (point_t(backend, &qp, &uxp, &yp) - point_t(backend, &qm, &uxm, &ym)) / (2.0 * h)
        - point_t(backend, &q0, &ux0, &dy);

    let juu0 = backend.complex_apply(&q0, &uu0);
    let term1 = -backend.curvature(&q0, &juu0, &ux0, &y0);
    let term2 = (point_b(backend, &q0, &ux0, &uu0, BOperator::Second, &y0)
        + point_b(backend, &q0, &ux0, &uu0, BOperator::Third, &y0))
        * -0.5;

    let normal_part = |q: &SurfacePoint, v: &Ambient| v - backend.tangent_project(q, v);
    let ndy = (normal_part(&qp, &yp) - normal_part(&qm, &ym)) / (2.0 * h)
        - normal_part(&q0, &dy);
    let term3 = -backend.complex_apply(&q0, &backend.curvature(&q0, &ux0, &ndy, &ux0));

    let jr = backend.complex_apply(&q0, &backend.curvature(&q0, &ux0, &y0, &ux0));
    let term4 = -backend.second_fundamental(&q0, &jr, &ux0);

    // Remainder operator O Y = T Y - J R(u_x, Y) u_x, differentiated along
    // the path with the same stencil as the left-hand side.
    let o_apply = |q: &SurfacePoint, ux: &Ambient, v: &Ambient| {
        point_t(backend, q, ux, v)
            - backend.complex_apply(q, &backend.curvature(q, ux, v, ux))
    };
    let term5 = (o_apply(&qp, &uxp, &yp) - o_apply(&qm, &uxm, &ym)) / (2.0 * h)
        - o_apply(&q0, &ux0, &dy);

    let rhs = term1 + term2 + term3 + term4 + term5;
    (&lhs - &rhs).norm() / (1.0 + lhs.norm() + rhs.norm())
}

/// Builds a smooth random closed curve and a nearby perturbed copy, then
/// measures the constants in the two normal-part bounds that control the
/// difference of two solutions.
fn bound_reports(backend: Arc<dyn Backend>, rng: &mut ChaCha8Rng) -> Vec<OperatorReport> {
    let grid = PeriodicGrid::new(BOUND_GRID).expect("internal grid size is valid");
    let diff = SpectralDiff::new(grid.clone());
    let dim = backend.ambient_dim();

    let center = backend.random_point(rng);
    let h1 = backend.random_tangent(&center, rng) * FD_PATH_SCALE;
    let h2 = backend.random_tangent(&center, rng) * FD_PATH_SCALE;
    let h3 = backend.random_tangent(&center, rng) * (0.3 * FD_PATH_SCALE);
    let base = CurveState::from_fn(backend.clone(), grid.clone(), |x| {
        center.coords() + &h1 * x.cos() + &h2 * x.sin() + &h3 * (2.0 * x).cos()
    })
    .expect("random low-mode curve retracts onto the manifold");

    let c0 = random_ambient(rng, dim);
    let c1 = random_ambient(rng, dim);
    let mut w = Field::zeros(grid.len(), dim);
    for j in 0..grid.len() {
        let q = base.node(j);
        let v = backend.tangent_project(&q, &(&c0 + &c1 * grid.node(j).cos()));
        w.row_mut(j).copy_from(&v.transpose());
    }
    let sup_w = (0..grid.len())
        .map(|j| w.row(j).norm())
        .fold(0.0f64, f64::max);
    w /= sup_w;

    let mut c_key1 = [0.0f64; 2];
    let mut c_key2 = [0.0f64; 2];
    for (slot, &eps) in BOUND_EPSILONS.iter().enumerate() {
        let mut perturbed = base.points().clone();
        for j in 0..grid.len() {
            let moved = base.points().row(j).transpose() + w.row(j).transpose() * eps;
            let q = backend
                .retract(&moved)
                .expect("small perturbation retracts onto the manifold");
            perturbed.row_mut(j).copy_from(&q.coords().transpose());
        }
        let other = CurveState::from_points(backend.clone(), perturbed, 0.0)
            .expect("perturbed nodes lie on the manifold");

        let z = base.points() - other.points();
        let zx = diff.d_dx(&z);
        let uu = covariant_chain(&diff, &base, 1)
            .expect("base curve acceleration")
            .into_values();
        let vv = covariant_chain(&diff, &other, 1)
            .expect("perturbed curve acceleration")
            .into_values();
        let ww = &uu - &vv;
        let wwx = diff.d_dx(&ww);
        let ux = diff.d_dx(base.points());

        let sup_z = (0..grid.len())
            .map(|j| z.row(j).norm())
            .fold(0.0f64, f64::max);

        let mut sup_normal = 0.0f64;
        let mut sup_combo = 0.0f64;
        for j in 0..grid.len() {
            let q = base.node(j);
            let ww_j = ww.row(j).transpose();
            let normal = &ww_j - backend.tangent_project(&q, &ww_j);
            sup_normal = sup_normal.max(normal.norm());

            let wwx_j = wwx.row(j).transpose();
            let normal_dx = &wwx_j - backend.tangent_project(&q, &wwx_j);
            let combo = normal_dx
                + backend.second_fundamental(&q, &ww_j, &ux.row(j).transpose())
                + backend.second_fundamental(&q, &zx.row(j).transpose(), &vv.row(j).transpose());
            sup_combo = sup_combo.max(combo.norm());
        }
        c_key1[slot] = sup_normal / sup_z;
        c_key2[slot] = sup_combo / sup_z;
    }

    let ratio1 = c_key1[1] / (c_key1[0] + 1e-6);
    let ratio2 = c_key2[1] / (c_key2[0] + 1e-6);
    vec![
        OperatorReport::new(
            "difference-normal-part-linear-bound",
            ratio1,
            BOUND_RATIO_TOL,
            BOUND_EPSILONS.len(),
        ),
        OperatorReport::new(
            "difference-normal-derivative-identity",
            ratio2,
            BOUND_RATIO_TOL,
            BOUND_EPSILONS.len(),
        ),
    ]
}
