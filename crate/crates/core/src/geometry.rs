//! Embedded-manifold primitives for the flat torus T^n and the unit sphere
//! S^n in R^{n+1}: points, tangent vectors, analytic vector fields, tangent
//! projection, covariant derivative, Lie bracket, divergence.
//!
//! Sphere tangent vectors are kept in ambient R^{n+1} components; the
//! covariant derivative is the tangent projection of the ambient directional
//! derivative. Torus coordinates are reduced mod 2π on construction.

use crate::error::{Error, Result};
use crate::linalg;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Manifold {
    /// Flat torus T^n with 2π-periodic coordinates.
    Torus { dim: usize },
    /// Unit sphere S^n embedded in R^{n+1}.
    Sphere { dim: usize },
}

impl Manifold {
    pub fn torus(dim: usize) -> Self {
        Manifold::Torus { dim }
    }

    pub fn sphere(dim: usize) -> Self {
        Manifold::Sphere { dim }
    }

    /// Intrinsic dimension n.
    pub fn dim(&self) -> usize {
        match *self {
            Manifold::Torus { dim } | Manifold::Sphere { dim } => dim,
        }
    }

    /// Length of the coordinate/component vectors used to represent points.
    pub fn ambient_dim(&self) -> usize {
        match *self {
            Manifold::Torus { dim } => dim,
            Manifold::Sphere { dim } => dim + 1,
        }
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self, Manifold::Sphere { .. })
    }

    /// Total measure: (2π)^n for the torus, the round surface area for S^n.
    pub fn volume(&self) -> f64 {
        match *self {
            Manifold::Torus { dim } => TAU.powi(dim as i32),
            Manifold::Sphere { dim } => sphere_surface_area(dim),
        }
    }
}

/// Surface area of the unit sphere S^n in R^{n+1}: 2 π^{(n+1)/2} / Γ((n+1)/2).
pub fn sphere_surface_area(n: usize) -> f64 {
    let m = n + 1; // ambient dimension
    2.0 * std::f64::consts::PI.powf(m as f64 / 2.0) / gamma_half(m)
}

/// Γ(m/2) for a positive integer m.
fn gamma_half(m: usize) -> f64 {
    let mut val = if m % 2 == 0 {
        1.0 // Γ(1)
    } else {
        std::f64::consts::PI.sqrt() // Γ(1/2)
    };
    let mut k = if m % 2 == 0 { 2 } else { 1 };
    while k < m {
        val *= k as f64 / 2.0;
        k += 2;
    }
    val
}

pub const SPHERE_POINT_TOL: f64 = 1e-12;
pub const SPHERE_TANGENT_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    manifold: Manifold,
    coords: Vec<f64>,
}

impl Point {
    pub fn new(manifold: Manifold, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != manifold.ambient_dim() {
            return Err(Error::Argument(format!(
                "point needs {} coordinates, got {}",
                manifold.ambient_dim(),
                coords.len()
            )));
        }
        match manifold {
            Manifold::Torus { .. } => {
                let coords = coords.into_iter().map(reduce_angle).collect();
                Ok(Point { manifold, coords })
            }
            Manifold::Sphere { .. } => {
                let r = linalg::norm(&coords);
                if (r - 1.0).abs() > SPHERE_POINT_TOL {
                    return Err(Error::Argument(format!(
                        "sphere point has |x| = {r}, outside tolerance"
                    )));
                }
                Ok(Point { manifold, coords })
            }
        }
    }

    pub fn torus(coords: Vec<f64>) -> Result<Self> {
        let dim = coords.len();
        Point::new(Manifold::torus(dim), coords)
    }

    pub fn sphere(coords: Vec<f64>) -> Result<Self> {
        let dim = coords.len().saturating_sub(1);
        Point::new(Manifold::sphere(dim), coords)
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// Reduce an angle to [0, 2π).
pub fn reduce_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r == TAU {
        0.0
    } else {
        r
    }
}

#[derive(Clone, Debug)]
pub struct TangentVector {
    pub base: Point,
    pub components: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: Point, components: Vec<f64>) -> Result<Self> {
        if components.len() != base.manifold().ambient_dim() {
            return Err(Error::Argument("component length mismatch".into()));
        }
        if base.manifold().is_sphere() {
            let ip = linalg::dot(base.coords(), &components);
            if ip.abs() > SPHERE_TANGENT_TOL {
                return Err(Error::Argument(format!(
                    "vector is not tangent: <x, v> = {ip}"
                )));
            }
        }
        Ok(TangentVector { base, components })
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.components)
    }
}

/// Orthogonal projection onto the tangent space: on S^n subtracts the normal
/// component, on T^n it is the identity.
pub fn project_tangent(x: &Point, w: &[f64]) -> Result<TangentVector> {
    let d = x.manifold().ambient_dim();
    if w.len() != d {
        return Err(Error::Argument(format!(
            "ambient vector needs length {d}, got {}",
            w.len()
        )));
    }
    let mut components = w.to_vec();
    if x.manifold().is_sphere() {
        project_tangent_into(x.coords(), &mut components);
    }
    TangentVector::new(x.clone(), components)
}

/// In-place tangent projection for sphere points: w <- w - <x,w> x.
#[inline]
pub fn project_tangent_into(x: &[f64], w: &mut [f64]) {
    let ip = linalg::dot(x, w);
    for (wi, xi) in w.iter_mut().zip(x) {
        *wi -= ip * xi;
    }
}

type ValueFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type DerivFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
type Deriv2Fn = dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync;
type DivFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type JacFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// A vector field given by analytic closures: value, covariant derivative,
/// optional second covariant derivative, divergence, and the ambient Jacobian
/// of the value closure (used by the flow integrator, which differentiates
/// the discrete update map exactly).
///
/// Closure conventions, with d the ambient dimension:
/// - `value(x, out)` writes the d ambient components of the field at x;
///   on the sphere the closure must be evaluable in a neighborhood of S^n.
/// - `deriv(x, v, out)` writes the covariant derivative ∇_v A at x.
/// - `deriv2(x, v, w, out)` writes (∇_v ∇A)(w), the second covariant
///   derivative with the outer differentiation direction first. On the
///   sphere the two slots do not commute (curvature).
/// - `div(x)` is the manifold divergence.
/// - `ambient_jacobian(x, out)` writes the row-major d x d Jacobian of the
///   value closure as a map of ambient space.
///
/// All closures must be pure; fields are immutable and safe to evaluate
/// concurrently.
#[derive(Clone)]
pub struct AnalyticVectorField {
    manifold: Manifold,
    value: Arc<ValueFn>,
    deriv: Arc<DerivFn>,
    deriv2: Option<Arc<Deriv2Fn>>,
    div: Arc<DivFn>,
    ambient_jacobian: Option<Arc<JacFn>>,
}

impl std::fmt::Debug for AnalyticVectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticVectorField")
            .field("manifold", &self.manifold)
            .field("deriv2", &self.deriv2.is_some())
            .field("ambient_jacobian", &self.ambient_jacobian.is_some())
            .finish()
    }
}

impl AnalyticVectorField {
    pub fn new(
        manifold: Manifold,
        value: Arc<ValueFn>,
        deriv: Arc<DerivFn>,
        div: Arc<DivFn>,
    ) -> Self {
        AnalyticVectorField {
            manifold,
            value,
            deriv,
            deriv2: None,
            div,
            ambient_jacobian: None,
        }
    }

    pub fn with_deriv2(mut self, deriv2: Arc<Deriv2Fn>) -> Self {
        self.deriv2 = Some(deriv2);
        self
    }

    pub fn with_ambient_jacobian(mut self, jac: Arc<JacFn>) -> Self {
        self.ambient_jacobian = Some(jac);
        self
    }

    /// The zero field.
    pub fn zero(manifold: Manifold) -> Self {
        let d = manifold.ambient_dim();
        AnalyticVectorField {
            manifold,
            value: Arc::new(move |_x, out| out[..d].fill(0.0)),
            deriv: Arc::new(move |_x, _v, out| out[..d].fill(0.0)),
            deriv2: Some(Arc::new(move |_x, _v, _w, out| out[..d].fill(0.0))),
            div: Arc::new(|_x| 0.0),
            ambient_jacobian: Some(Arc::new(move |_x, out| out[..d * d].fill(0.0))),
        }
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn has_deriv2(&self) -> bool {
        self.deriv2.is_some()
    }

    pub fn has_ambient_jacobian(&self) -> bool {
        self.ambient_jacobian.is_some()
    }

    pub fn value(&self, x: &Point) -> TangentVector {
        let mut out = vec![0.0; self.manifold.ambient_dim()];
        (self.value)(x.coords(), &mut out);
        TangentVector {
            base: x.clone(),
            components: out,
        }
    }

    #[inline]
    pub fn value_into(&self, x: &[f64], out: &mut [f64]) {
        (self.value)(x, out);
    }

    /// Covariant derivative ∇_v A via the analytic closure.
    pub fn deriv(&self, x: &Point, v: &[f64]) -> TangentVector {
        let mut out = vec![0.0; self.manifold.ambient_dim()];
        (self.deriv)(x.coords(), v, &mut out);
        TangentVector {
            base: x.clone(),
            components: out,
        }
    }

    #[inline]
    pub fn deriv_into(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        (self.deriv)(x, v, out);
    }

    /// Second covariant derivative (∇_v ∇A)(w).
    pub fn deriv2(&self, x: &Point, v: &[f64], w: &[f64]) -> Result<TangentVector> {
        let f = self.deriv2.as_ref().ok_or_else(|| {
            Error::Capability("field does not provide a second covariant derivative".into())
        })?;
        let mut out = vec![0.0; self.manifold.ambient_dim()];
        f(x.coords(), v, w, &mut out);
        Ok(TangentVector {
            base: x.clone(),
            components: out,
        })
    }

    #[inline]
    pub fn deriv2_into(&self, x: &[f64], v: &[f64], w: &[f64], out: &mut [f64]) -> Result<()> {
        let f = self.deriv2.as_ref().ok_or_else(|| {
            Error::Capability("field does not provide a second covariant derivative".into())
        })?;
        f(x, v, w, out);
        Ok(())
    }

    pub fn div_at(&self, x: &Point) -> f64 {
        (self.div)(x.coords())
    }

    #[inline]
    pub fn div_into(&self, x: &[f64]) -> f64 {
        (self.div)(x)
    }

    pub fn ambient_jacobian_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let f = self.ambient_jacobian.as_ref().ok_or_else(|| {
            Error::Capability("field does not provide an ambient Jacobian".into())
        })?;
        f(x, out);
        Ok(())
    }

    /// The field scaled by a constant.
    pub fn scaled(&self, s: f64) -> AnalyticVectorField {
        let d = self.manifold.ambient_dim();
        let value = self.value.clone();
        let deriv = self.deriv.clone();
        let div = self.div.clone();
        let mut out = AnalyticVectorField {
            manifold: self.manifold,
            value: Arc::new(move |x, o| {
                value(x, o);
                o[..d].iter_mut().for_each(|c| *c *= s);
            }),
            deriv: Arc::new(move |x, v, o| {
                deriv(x, v, o);
                o[..d].iter_mut().for_each(|c| *c *= s);
            }),
            deriv2: None,
            div: Arc::new(move |x| s * div(x)),
            ambient_jacobian: None,
        };
        if let Some(d2) = &self.deriv2 {
            let d2 = d2.clone();
            out.deriv2 = Some(Arc::new(move |x, v, w, o| {
                d2(x, v, w, o);
                o[..d].iter_mut().for_each(|c| *c *= s);
            }));
        }
        if let Some(j) = &self.ambient_jacobian {
            let j = j.clone();
            out.ambient_jacobian = Some(Arc::new(move |x, o| {
                j(x, o);
                o[..d * d].iter_mut().for_each(|c| *c *= s);
            }));
        }
        out
    }
}

/// Covariant derivative ∇_v A. The analytic closure is authoritative; the
/// finite-difference route lives in [`covariant_derivative_fd`] as a
/// cross-check oracle.
pub fn covariant_derivative(a: &AnalyticVectorField, x: &Point, v: &TangentVector) -> Result<TangentVector> {
    if a.manifold() != x.manifold() {
        return Err(Error::Argument("field and point live on different manifolds".into()));
    }
    Ok(a.deriv(x, &v.components))
}

/// Central finite-difference covariant derivative along the geodesic from x
/// in direction v, projected back to the tangent space.
pub fn covariant_derivative_fd(
    value: &dyn Fn(&Point) -> Vec<f64>,
    x: &Point,
    v: &[f64],
    h: f64,
) -> Vec<f64> {
    let xp = geodesic_step(x, v, h);
    let xm = geodesic_step(x, v, -h);
    let fp = value(&xp);
    let fm = value(&xm);
    let mut out: Vec<f64> = fp
        .iter()
        .zip(&fm)
        .map(|(p, m)| (p - m) / (2.0 * h))
        .collect();
    if x.manifold().is_sphere() {
        project_tangent_into(x.coords(), &mut out);
    }
    out
}

/// Point at parameter t along the geodesic through x with initial velocity v.
pub fn geodesic_step(x: &Point, v: &[f64], t: f64) -> Point {
    match x.manifold() {
        Manifold::Torus { .. } => {
            let coords = x
                .coords()
                .iter()
                .zip(v)
                .map(|(c, vi)| reduce_angle(c + t * vi))
                .collect();
            Point {
                manifold: x.manifold(),
                coords,
            }
        }
        Manifold::Sphere { .. } => {
            let speed = linalg::norm(v);
            if speed == 0.0 {
                return x.clone();
            }
            let (s, c) = (speed * t).sin_cos();
            let coords = x
                .coords()
                .iter()
                .zip(v)
                .map(|(xi, vi)| c * xi + s * vi / speed)
                .collect();
            Point {
                manifold: x.manifold(),
                coords,
            }
        }
    }
}

/// Lie bracket [A, B](x) = ∇_{A(x)} B − ∇_{B(x)} A (torsion-free connection).
pub fn lie_bracket(a: &AnalyticVectorField, b: &AnalyticVectorField, x: &Point) -> Result<TangentVector> {
    if a.manifold() != b.manifold() {
        return Err(Error::Argument("bracket of fields on different manifolds".into()));
    }
    if a.manifold() != x.manifold() {
        return Err(Error::Argument("point not on the fields' manifold".into()));
    }
    let d = x.manifold().ambient_dim();
    let mut av = vec![0.0; d];
    let mut bv = vec![0.0; d];
    a.value_into(x.coords(), &mut av);
    b.value_into(x.coords(), &mut bv);
    let mut nab = vec![0.0; d];
    let mut nba = vec![0.0; d];
    b.deriv_into(x.coords(), &av, &mut nab);
    a.deriv_into(x.coords(), &bv, &mut nba);
    let components = nab.iter().zip(&nba).map(|(p, q)| p - q).collect();
    Ok(TangentVector {
        base: x.clone(),
        components,
    })
}

/// Divergence as the trace of v ↦ ∇_v A over an orthonormal tangent basis.
/// Cross-checks the field's analytic `div` closure.
pub fn divergence(a: &AnalyticVectorField, x: &Point) -> f64 {
    let frame = tangent_frame(x);
    let d = x.manifold().ambient_dim();
    let mut buf = vec![0.0; d];
    let mut tr = 0.0;
    for e in &frame {
        a.deriv_into(x.coords(), e, &mut buf);
        tr += linalg::dot(&buf, e);
    }
    tr
}

/// Divergence of a value-only field by finite differences: the trace of the
/// finite-difference covariant derivative over an orthonormal tangent frame.
pub fn divergence_fd(value: &dyn Fn(&Point) -> Vec<f64>, x: &Point, h: f64) -> f64 {
    let frame = tangent_frame(x);
    let mut tr = 0.0;
    for e in &frame {
        let der = covariant_derivative_fd(value, x, e, h);
        tr += linalg::dot(&der, e);
    }
    tr
}

/// Deterministic orthonormal basis of the tangent space at x.
///
/// Torus: the standard coordinate basis. Sphere: Gram–Schmidt over the
/// standard ambient basis vectors ordered by increasing |<e_a, x>| with the
/// index as tie-break, so the frame is a pure function of the point.
pub fn tangent_frame(x: &Point) -> Vec<Vec<f64>> {
    let d = x.manifold().ambient_dim();
    match x.manifold() {
        Manifold::Torus { dim } => (0..dim)
            .map(|i| {
                let mut e = vec![0.0; dim];
                e[i] = 1.0;
                e
            })
            .collect(),
        Manifold::Sphere { dim } => {
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| {
                x.coords()[a]
                    .abs()
                    .partial_cmp(&x.coords()[b].abs())
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut frame: Vec<Vec<f64>> = Vec::with_capacity(dim);
            for &a in &order {
                if frame.len() == dim {
                    break;
                }
                let mut cand = vec![0.0; d];
                cand[a] = 1.0;
                project_tangent_into(x.coords(), &mut cand);
                for prev in &frame {
                    let ip = linalg::dot(&cand, prev);
                    for (c, p) in cand.iter_mut().zip(prev) {
                        *c -= ip * p;
                    }
                }
                let nrm = linalg::norm(&cand);
                if nrm > 1e-8 {
                    cand.iter_mut().for_each(|c| *c /= nrm);
                    frame.push(cand);
                }
            }
            debug_assert_eq!(frame.len(), dim);
            frame
        }
    }
}

/// Musical isomorphism ♭. The metric is realized in orthonormal ambient
/// components on both manifolds, so the 1-form coefficients equal the vector
/// components.
pub fn flat(v: &TangentVector) -> Vec<f64> {
    v.components.clone()
}

/// Musical isomorphism ♯, inverse of [`flat`].
pub fn sharp(base: &Point, covector: &[f64]) -> Result<TangentVector> {
    TangentVector::new(base.clone(), covector.to_vec())
}

/// Seeded uniform random points, for probe sampling and tests.
pub fn sample_points(manifold: Manifold, count: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let d = manifold.ambient_dim();
    (0..count)
        .map(|_| match manifold {
            Manifold::Torus { .. } => {
                let coords = (0..d).map(|_| rng.gen_range(0.0..TAU)).collect();
                Point { manifold, coords }
            }
            Manifold::Sphere { .. } => {
                loop {
                    let coords: Vec<f64> = (0..d)
                        .map(|_| {
                            // Box-Muller pair from the stream rng
                            let u1: f64 = rng.gen_range(1e-12..1.0);
                            let u2: f64 = rng.gen_range(0.0..1.0);
                            (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
                        })
                        .collect();
                    let nrm = linalg::norm(&coords);
                    if nrm > 1e-6 {
                        let coords = coords.into_iter().map(|c| c / nrm).collect();
                        break Point { manifold, coords };
                    }
                }
            }
        })
        .collect()
}

/// Seeded random unit tangent vector at x.
pub fn sample_unit_tangent(x: &Point, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let d = x.manifold().ambient_dim();
    loop {
        let mut v: Vec<f64> = (0..d)
            .map(|_| {
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
            })
            .collect();
        if x.manifold().is_sphere() {
            project_tangent_into(x.coords(), &mut v);
        }
        let nrm = linalg::norm(&v);
        if nrm > 1e-6 {
            v.iter_mut().for_each(|c| *c /= nrm);
            return v;
        }
    }
}
