//! The explicit vector-field families driving the stochastic flows, with
//! analytic derivative and divergence closures:
//!
//! - `TorusFourier`: A_{k,i}(θ) = cos(k·θ)|k|^{-β} e_{k,i} and the sine
//!   companions B_{k,i}, over lattice modes 0 < |k|_∞ ≤ K with e_{k,i} an
//!   orthonormal basis of k^⊥.
//! - `SphereGradient`: A_i(x) = e_i − ⟨x,e_i⟩x, the tangent projections of
//!   the ambient axes.
//! - `SphereKilling`: the rotation fields A^{(ij)}(x) = x_i e_j − x_j e_i,
//!   one per coordinate plane.

use crate::error::{Error, Result};
use crate::geometry::{
    project_tangent_into, sphere_surface_area, AnalyticVectorField, Manifold,
};
use crate::linalg;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum FamilySpec {
    /// Truncated Fourier family on T^n; requires beta > n/2.
    TorusFourier { n: usize, beta: f64, k_max: u32 },
    /// Gradient system on S^n (n+1 fields).
    SphereGradient { n: usize },
    /// Killing (rotation) fields on S^n (n(n+1)/2 fields).
    SphereKilling { n: usize },
}

impl FamilySpec {
    pub fn manifold(&self) -> Manifold {
        match *self {
            FamilySpec::TorusFourier { n, .. } => Manifold::torus(n),
            FamilySpec::SphereGradient { n } | FamilySpec::SphereKilling { n } => {
                Manifold::sphere(n)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Cos,
    Sin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FieldLabel {
    /// Torus mode (k, direction index, cos/sin).
    TorusMode { k: Vec<i64>, dir: usize, phase: Phase },
    /// Gradient field along ambient axis i (0-based).
    GradientAxis { axis: usize },
    /// Killing field of the (i, j) coordinate plane (0-based, i < j).
    KillingPlane { i: usize, j: usize },
}

impl std::fmt::Display for FieldLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldLabel::TorusMode { k, dir, phase } => {
                let ph = if *phase == Phase::Cos { "cos" } else { "sin" };
                write!(f, "{ph}[k={k:?},e{dir}]")
            }
            FieldLabel::GradientAxis { axis } => write!(f, "grad[e{axis}]"),
            FieldLabel::KillingPlane { i, j } => write!(f, "rot[{i},{j}]"),
        }
    }
}

/// An indexed family {A_i} with its normalization constant ν₀.
///
/// `nu0` is the constant in Σ_i ⟨A_i(x), u⟩² = ν₀ |u|²; the raw families
/// built here satisfy it with ν₀ = 1 on the sphere and ν₀ = ν₀(K) (the
/// truncated lattice sum) on the torus. [`FieldFamily::normalized`] rescales
/// the fields by 1/√ν₀ so the identity holds with constant 1.
#[derive(Clone, Debug)]
pub struct FieldFamily {
    spec: FamilySpec,
    manifold: Manifold,
    fields: Vec<AnalyticVectorField>,
    labels: Vec<FieldLabel>,
    nu0: f64,
}

impl FieldFamily {
    pub fn spec(&self) -> &FamilySpec {
        &self.spec
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn fields(&self) -> &[AnalyticVectorField] {
        &self.fields
    }

    pub fn labels(&self) -> &[FieldLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn nu0(&self) -> f64 {
        self.nu0
    }

    /// The family rescaled by 1/√ν₀, so condition (a) holds with constant 1.
    pub fn normalized(&self) -> FieldFamily {
        let s = 1.0 / self.nu0.sqrt();
        FieldFamily {
            spec: self.spec.clone(),
            manifold: self.manifold,
            fields: self.fields.iter().map(|f| f.scaled(s)).collect(),
            labels: self.labels.clone(),
            nu0: 1.0,
        }
    }
}

pub fn build_family(spec: &FamilySpec) -> Result<FieldFamily> {
    match *spec {
        FamilySpec::TorusFourier { n, beta, k_max } => build_torus_family(n, beta, k_max),
        FamilySpec::SphereGradient { n } => build_sphere_gradient_family(n),
        FamilySpec::SphereKilling { n } => build_sphere_killing_family(n),
    }
}

/// All lattice points k ∈ Z^n with 0 < |k|_∞ ≤ k_max, lexicographic order.
pub fn enumerate_lattice(n: usize, k_max: u32) -> Vec<Vec<i64>> {
    let k = k_max as i64;
    let mut out = Vec::new();
    let mut cur = vec![-k; n];
    loop {
        if cur.iter().any(|&c| c != 0) {
            out.push(cur.clone());
        }
        let mut idx = n;
        loop {
            if idx == 0 {
                return out;
            }
            idx -= 1;
            if cur[idx] < k {
                cur[idx] += 1;
                for c in cur.iter_mut().skip(idx + 1) {
                    *c = -k;
                }
                break;
            }
        }
    }
}

/// Orthonormal basis {e_{k,1}, …, e_{k,n-1}} of k^⊥.
///
/// For n = 2 this is the explicit (k₂, -k₁)/|k|. For n ≥ 3 it is built by
/// Gram–Schmidt over the standard basis vectors, taking the smallest-index
/// standard vector not parallel to k first, so the choice is deterministic.
pub fn perp_basis(k: &[i64]) -> Vec<Vec<f64>> {
    let n = k.len();
    let kf: Vec<f64> = k.iter().map(|&c| c as f64).collect();
    let nk = linalg::norm(&kf);
    if n == 2 {
        return vec![vec![kf[1] / nk, -kf[0] / nk]];
    }
    let khat: Vec<f64> = kf.iter().map(|c| c / nk).collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
    for a in 0..n {
        if basis.len() == n - 1 {
            break;
        }
        let mut cand = vec![0.0; n];
        cand[a] = 1.0;
        let ip = linalg::dot(&cand, &khat);
        for (c, kh) in cand.iter_mut().zip(&khat) {
            *c -= ip * kh;
        }
        for prev in &basis {
            let ip = linalg::dot(&cand, prev);
            for (c, p) in cand.iter_mut().zip(prev) {
                *c -= ip * p;
            }
        }
        let nrm = linalg::norm(&cand);
        if nrm > 1e-10 {
            cand.iter_mut().for_each(|c| *c /= nrm);
            basis.push(cand);
        }
    }
    debug_assert_eq!(basis.len(), n - 1);
    basis
}

fn torus_mode_field(n: usize, k: &[i64], e: &[f64], beta: f64, phase: Phase) -> AnalyticVectorField {
    let kf: Vec<f64> = k.iter().map(|&c| c as f64).collect();
    let amp = linalg::norm(&kf).powf(-beta);
    let manifold = Manifold::torus(n);

    let (kv, ev) = (kf.clone(), e.to_vec());
    let value = Arc::new(move |x: &[f64], out: &mut [f64]| {
        let ph = linalg::dot(&kv, x);
        let f = if phase == Phase::Cos { ph.cos() } else { ph.sin() } * amp;
        for (o, ei) in out.iter_mut().zip(&ev) {
            *o = f * ei;
        }
    });

    let (kv, ev) = (kf.clone(), e.to_vec());
    let deriv = Arc::new(move |x: &[f64], v: &[f64], out: &mut [f64]| {
        let ph = linalg::dot(&kv, x);
        let df = if phase == Phase::Cos { -ph.sin() } else { ph.cos() } * amp;
        let kdotv = linalg::dot(&kv, v);
        for (o, ei) in out.iter_mut().zip(&ev) {
            *o = df * kdotv * ei;
        }
    });

    let (kv, ev) = (kf.clone(), e.to_vec());
    let deriv2 = Arc::new(move |x: &[f64], v: &[f64], w: &[f64], out: &mut [f64]| {
        let ph = linalg::dot(&kv, x);
        let ddf = if phase == Phase::Cos { -ph.cos() } else { -ph.sin() } * amp;
        let s = ddf * linalg::dot(&kv, v) * linalg::dot(&kv, w);
        for (o, ei) in out.iter_mut().zip(&ev) {
            *o = s * ei;
        }
    });

    // ⟨k, e_{k,i}⟩ = 0, so the divergence vanishes identically.
    let div = Arc::new(|_x: &[f64]| 0.0);

    let (kv, ev) = (kf, e.to_vec());
    let jac = Arc::new(move |x: &[f64], out: &mut [f64]| {
        let d = kv.len();
        let ph = linalg::dot(&kv, x);
        let df = if phase == Phase::Cos { -ph.sin() } else { ph.cos() } * amp;
        for a in 0..d {
            for b in 0..d {
                out[a * d + b] = df * ev[a] * kv[b];
            }
        }
    });

    AnalyticVectorField::new(manifold, value, deriv, div)
        .with_deriv2(deriv2)
        .with_ambient_jacobian(jac)
}

/// Truncated Fourier family on T^n over 0 < |k|_∞ ≤ k_max.
///
/// ν₀ is the truncated lattice sum ((n-1)/n) Σ |k|^{-2β}, accumulated from
/// sorted addends so the value is a deterministic function of (n, β, K).
pub fn build_torus_family(n: usize, beta: f64, k_max: u32) -> Result<FieldFamily> {
    if n < 2 {
        return Err(Error::Constraint("torus family needs n >= 2".into()));
    }
    if beta <= n as f64 / 2.0 {
        return Err(Error::Constraint(format!(
            "torus family requires beta > n/2 = {}, got {beta}",
            n as f64 / 2.0
        )));
    }
    if k_max < 1 {
        return Err(Error::Constraint("k_max must be >= 1".into()));
    }
    let lattice = enumerate_lattice(n, k_max);
    let mut fields = Vec::with_capacity(2 * lattice.len() * (n - 1));
    let mut labels = Vec::with_capacity(fields.capacity());
    let mut addends = Vec::with_capacity(lattice.len());
    for k in &lattice {
        let basis = perp_basis(k);
        for (dir, e) in basis.iter().enumerate() {
            for phase in [Phase::Cos, Phase::Sin] {
                fields.push(torus_mode_field(n, k, e, beta, phase));
                labels.push(FieldLabel::TorusMode {
                    k: k.clone(),
                    dir,
                    phase,
                });
            }
        }
        let k2: f64 = k.iter().map(|&c| (c * c) as f64).sum();
        addends.push(k2.powf(-beta));
    }
    addends.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let total = linalg::pairwise_sum(&addends);
    let nu0 = (n as f64 - 1.0) / n as f64 * total;
    Ok(FieldFamily {
        spec: FamilySpec::TorusFourier { n, beta, k_max },
        manifold: Manifold::torus(n),
        fields,
        labels,
        nu0,
    })
}

/// Upper bound on the truncation error ν₀(∞) − ν₀(K) of the torus family.
///
/// Every lattice point with |k|_∞ > K has |k|₂ ≥ K+1 and owns a unit cube
/// contained in {|y|₂ ≥ K+1−√n/2} on which |y| ≤ |k| + √n/2. Hence
///   Σ_{|k|_∞>K} |k|^{-2β} ≤ C ∫_{K+1-√n/2}^∞ ω_{n-1} r^{n-1-2β} dr,
/// with C = (1 + √n/(2(K+1)))^{2β} and ω_{n-1} the surface area of S^{n-1}.
/// Extending the integral down to its closed form gives the bound below.
pub fn nu0_tail_bound(n: usize, beta: f64, k_max: u32) -> f64 {
    assert!(beta > n as f64 / 2.0, "tail bound needs beta > n/2");
    let sqrt_n = (n as f64).sqrt();
    let r0 = (k_max as f64 + 1.0) - sqrt_n / 2.0;
    assert!(r0 > 0.0, "truncation radius too small for dimension");
    let c = (1.0 + sqrt_n / (2.0 * (k_max as f64 + 1.0))).powf(2.0 * beta);
    let omega = sphere_surface_area(n - 1);
    let integral = r0.powf(n as f64 - 2.0 * beta) / (2.0 * beta - n as f64);
    (n as f64 - 1.0) / n as f64 * c * omega * integral
}

/// Gradient system on S^n: A_i(x) = e_i − ⟨x,e_i⟩x for the ambient axes.
pub fn build_sphere_gradient_family(n: usize) -> Result<FieldFamily> {
    if n < 1 {
        return Err(Error::Constraint("sphere dimension must be >= 1".into()));
    }
    let d = n + 1;
    let manifold = Manifold::sphere(n);
    let mut fields = Vec::with_capacity(d);
    let mut labels = Vec::with_capacity(d);
    for axis in 0..d {
        let value = Arc::new(move |x: &[f64], out: &mut [f64]| {
            let xi = x[axis];
            for (a, o) in out.iter_mut().enumerate() {
                *o = -xi * x[a];
            }
            out[axis] += 1.0;
        });
        let deriv = Arc::new(move |x: &[f64], v: &[f64], out: &mut [f64]| {
            let xi = x[axis];
            for (o, vi) in out.iter_mut().zip(v) {
                *o = -xi * vi;
            }
        });
        let deriv2 = Arc::new(move |_x: &[f64], v: &[f64], w: &[f64], out: &mut [f64]| {
            let vi = v[axis];
            for (o, wi) in out.iter_mut().zip(w) {
                *o = -vi * wi;
            }
        });
        let div = Arc::new(move |x: &[f64]| -(n as f64) * x[axis]);
        let jac = Arc::new(move |x: &[f64], out: &mut [f64]| {
            let xi = x[axis];
            for a in 0..d {
                for b in 0..d {
                    let mut j = 0.0;
                    if b == axis {
                        j -= x[a];
                    }
                    if a == b {
                        j -= xi;
                    }
                    out[a * d + b] = j;
                }
            }
        });
        fields.push(
            AnalyticVectorField::new(manifold, value, deriv, div)
                .with_deriv2(deriv2)
                .with_ambient_jacobian(jac),
        );
        labels.push(FieldLabel::GradientAxis { axis });
    }
    Ok(FieldFamily {
        spec: FamilySpec::SphereGradient { n },
        manifold,
        fields,
        labels,
        nu0: 1.0,
    })
}

/// Killing (rotation) family on S^n: A^{(ij)}(x) = x_i e_j − x_j e_i for
/// 0 ≤ i < j ≤ n. The Lagrange identity Σ_{i<j} (x_i u_j − x_j u_i)² =
/// |x|²|u|² − ⟨x,u⟩² shows the raw family already satisfies condition (a)
/// with ν₀ = 1 on tangent vectors.
pub fn build_sphere_killing_family(n: usize) -> Result<FieldFamily> {
    if n < 2 {
        return Err(Error::Constraint("Killing family needs n >= 2".into()));
    }
    let d = n + 1;
    let manifold = Manifold::sphere(n);
    let mut fields = Vec::new();
    let mut labels = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            let gen = plane_rotation_generator(i, j, d);
            fields.push(killing_field_from_skew(&gen));
            labels.push(FieldLabel::KillingPlane { i, j });
        }
    }
    Ok(FieldFamily {
        spec: FamilySpec::SphereKilling { n },
        manifold,
        fields,
        labels,
        nu0: 1.0,
    })
}

/// Generator of A^{(ij)}(x) = x_i e_j − x_j e_i as a skew matrix Y with
/// Y[j][i] = 1, Y[i][j] = −1 (so that A(x) = Y x).
pub fn plane_rotation_generator(i: usize, j: usize, order: usize) -> SkewMatrix {
    let mut entries = vec![0.0; order * order];
    entries[j * order + i] = 1.0;
    entries[i * order + j] = -1.0;
    SkewMatrix {
        order,
        entries,
    }
}

/// The fundamental vector field of a rotation generator: A_ξ(x) = ξ x, with
/// covariant derivative P_x(ξ v), second covariant derivative
/// (∇_v ∇A)(w) = ⟨ξx, w⟩ v − ⟨v, w⟩ ξx, and zero divergence.
pub fn killing_field_from_skew(xi: &SkewMatrix) -> AnalyticVectorField {
    let d = xi.order;
    let manifold = Manifold::sphere(d - 1);
    let m = xi.entries.clone();
    let value = {
        let m = m.clone();
        Arc::new(move |x: &[f64], out: &mut [f64]| linalg::mat_vec(d, &m, x, out))
    };
    let deriv = {
        let m = m.clone();
        Arc::new(move |x: &[f64], v: &[f64], out: &mut [f64]| {
            linalg::mat_vec(d, &m, v, out);
            project_tangent_into(x, out);
        })
    };
    let deriv2 = {
        let m = m.clone();
        Arc::new(move |x: &[f64], v: &[f64], w: &[f64], out: &mut [f64]| {
            let mut ax = [0.0; linalg::MAX_DIM];
            linalg::mat_vec(d, &m, x, &mut ax[..d]);
            let axw = linalg::dot(&ax[..d], w);
            let vw = linalg::dot(v, w);
            for a in 0..d {
                out[a] = axw * v[a] - vw * ax[a];
            }
        })
    };
    let div = Arc::new(|_x: &[f64]| 0.0);
    let jac = Arc::new(move |_x: &[f64], out: &mut [f64]| out[..d * d].copy_from_slice(&m));
    AnalyticVectorField::new(manifold, value, deriv, div)
        .with_deriv2(deriv2)
        .with_ambient_jacobian(jac)
}

/// A skew-symmetric matrix, element of so(order).
#[derive(Clone, Debug, PartialEq)]
pub struct SkewMatrix {
    order: usize,
    entries: Vec<f64>,
}

impl SkewMatrix {
    pub fn new(order: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != order * order {
            return Err(Error::Argument("skew matrix entry count mismatch".into()));
        }
        for i in 0..order {
            for j in 0..order {
                if (entries[i * order + j] + entries[j * order + i]).abs() > 1e-14 {
                    return Err(Error::Argument("matrix is not skew-symmetric".into()));
                }
            }
        }
        Ok(SkewMatrix { order, entries })
    }

    /// Basis element with +1 at (i, j) and −1 at (j, i), i < j, 0-based.
    pub fn basis(i: usize, j: usize, order: usize) -> Self {
        assert!(i < j && j < order);
        let mut entries = vec![0.0; order * order];
        entries[i * order + j] = 1.0;
        entries[j * order + i] = -1.0;
        SkewMatrix { order, entries }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn scaled(&self, s: f64) -> SkewMatrix {
        SkewMatrix {
            order: self.order,
            entries: self.entries.iter().map(|e| e * s).collect(),
        }
    }

    pub fn add(&self, other: &SkewMatrix) -> SkewMatrix {
        assert_eq!(self.order, other.order);
        SkewMatrix {
            order: self.order,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.order];
        linalg::mat_vec(self.order, &self.entries, x, &mut out);
        out
    }

    /// Matrix exponential: the rotation exp(ξ) ∈ SO(order).
    pub fn exp(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.order * self.order];
        linalg::mat_exp(self.order, &self.entries, &mut out);
        out
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.entries)
    }
}

/// Commutator [X, Y] = XY − YX on so(order).
pub fn so_bracket(x: &SkewMatrix, y: &SkewMatrix) -> Result<SkewMatrix> {
    if x.order != y.order {
        return Err(Error::Argument("bracket of matrices of different order".into()));
    }
    let n = x.order;
    let mut xy = vec![0.0; n * n];
    let mut yx = vec![0.0; n * n];
    linalg::mat_mul(n, &x.entries, &y.entries, &mut xy);
    linalg::mat_mul(n, &y.entries, &x.entries, &mut yx);
    let entries = xy.iter().zip(&yx).map(|(a, b)| a - b).collect();
    Ok(SkewMatrix { order: n, entries })
}

/// Killing form on so(n+1): B(X, Y) = (n−1) Tr(XY).
pub fn killing_form(x: &SkewMatrix, y: &SkewMatrix, n: usize) -> f64 {
    assert_eq!(x.order, n + 1, "matrices must have order n+1");
    assert_eq!(y.order, n + 1);
    let ord = x.order;
    let mut tr = 0.0;
    for i in 0..ord {
        for k in 0..ord {
            tr += x.entries[i * ord + k] * y.entries[k * ord + i];
        }
    }
    (n as f64 - 1.0) * tr
}

/// Adjoint action Ad_g(ξ) = g ξ g^{-1} = g ξ g^T for g ∈ SO(order).
pub fn adjoint(g: &[f64], xi: &SkewMatrix) -> SkewMatrix {
    let n = xi.order;
    let mut tmp = vec![0.0; n * n];
    let mut gt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            gt[i * n + j] = g[j * n + i];
        }
    }
    let mut out = vec![0.0; n * n];
    linalg::mat_mul(n, g, &xi.entries, &mut tmp);
    linalg::mat_mul(n, &tmp, &gt, &mut out);
    SkewMatrix {
        order: n,
        entries: out,
    }
}
