//! Executable verification of the structural conditions a field family must
//! satisfy for the Lie-derivative decomposition of the Hodge Laplacian on
//! vector fields:
//!
//! - (a) Σ_i ⟨A_i(x), u⟩² = |u|² for all unit tangents u,
//! - (b) Σ_i ∇_{A_i} A_i = 0,
//! - (c) Σ_i A_i ∧ ∇_V A_i = 0 for every direction V,
//! - (d) Σ_i div(A_i) 𝓛_{A_i} = 0 as an operator on fields,
//!
//! plus the derived identity Σ_i div(A_i) A_i = 0, bracket closure of
//! divergence-free fields, the Σ𝓛² operator itself, the rotation-group
//! propositions on S^n, and the lattice cancellation sums behind ν₀.

use crate::error::{Error, Result};
use crate::families::{
    adjoint, killing_field_from_skew, so_bracket, FieldFamily, SkewMatrix,
};
use crate::geometry::{
    divergence_fd, lie_bracket, sample_unit_tangent, AnalyticVectorField, Point, TangentVector,
};
use crate::linalg;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Condition {
    A,
    B,
    C,
    D,
    SumDivAi,
    BracketDivFree,
}

#[derive(Clone, Debug, Serialize)]
pub enum Verdict {
    Holds,
    Fails { witness: Vec<f64>, residual: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub max_residual: f64,
    pub points_tested: usize,
    pub tol: f64,
    pub probe_seed: u64,
    pub verdict: Verdict,
}

impl ConditionReport {
    fn closed(
        condition: Condition,
        tol: f64,
        probe_seed: u64,
        points_tested: usize,
        max_residual: f64,
        witness: Option<Vec<f64>>,
    ) -> Self {
        let verdict = if max_residual <= tol {
            Verdict::Holds
        } else {
            Verdict::Fails {
                witness: witness.unwrap_or_default(),
                residual: max_residual,
            }
        };
        ConditionReport {
            condition,
            max_residual,
            points_tested,
            tol,
            probe_seed,
            verdict,
        }
    }

    pub fn holds(&self) -> bool {
        matches!(self.verdict, Verdict::Holds)
    }
}

/// Randomized probes for the condition checks, generated from a recorded seed.
pub struct ConditionProbes {
    pub seed: u64,
    /// one unit tangent per point (condition (a))
    pub unit_tangents: Vec<Vec<f64>>,
    /// one (V, a, b) tangent triple per point (condition (c))
    pub triples: Vec<[Vec<f64>; 3]>,
}

impl ConditionProbes {
    pub fn seeded(points: &[Point], seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let unit_tangents = points
            .iter()
            .map(|p| sample_unit_tangent(p, &mut rng))
            .collect();
        let triples = points
            .iter()
            .map(|p| {
                [
                    sample_unit_tangent(p, &mut rng),
                    sample_unit_tangent(p, &mut rng),
                    sample_unit_tangent(p, &mut rng),
                ]
            })
            .collect();
        ConditionProbes {
            seed,
            unit_tangents,
            triples,
        }
    }
}

/// Check one of the conditions (a)-(d) at the given points.
///
/// The family is used as supplied: for the truncated torus family the caller
/// passes the 1/√ν₀(K)-normalized family, so the (a)-residual is relative to
/// ν₀(K). Condition (d) needs a probe field B.
pub fn check_condition(
    family: &FieldFamily,
    which: Condition,
    points: &[Point],
    probes: &ConditionProbes,
    probe_field: Option<&AnalyticVectorField>,
    tol: f64,
) -> Result<ConditionReport> {
    if points.is_empty() {
        return Err(Error::Argument("no points supplied".into()));
    }
    let d = family.manifold().ambient_dim();
    let mut worst = 0.0f64;
    let mut witness: Option<Vec<f64>> = None;
    let mut val = vec![0.0; d];
    let mut der = vec![0.0; d];
    let mut acc = vec![0.0; d];

    for (pi, p) in points.iter().enumerate() {
        let residual = match which {
            Condition::A => {
                let u = &probes.unit_tangents[pi];
                let mut s = 0.0;
                for f in family.fields() {
                    f.value_into(p.coords(), &mut val);
                    let ip = linalg::dot(&val, u);
                    s += ip * ip;
                }
                (s - linalg::dot(u, u)).abs()
            }
            Condition::B => {
                acc.fill(0.0);
                for f in family.fields() {
                    f.value_into(p.coords(), &mut val);
                    f.deriv_into(p.coords(), &val, &mut der);
                    for (a, g) in acc.iter_mut().zip(&der) {
                        *a += g;
                    }
                }
                linalg::norm(&acc)
            }
            Condition::C => {
                let [v, a, b] = &probes.triples[pi];
                let mut s = 0.0;
                for f in family.fields() {
                    f.value_into(p.coords(), &mut val);
                    f.deriv_into(p.coords(), v, &mut der);
                    s += linalg::dot(&val, a) * linalg::dot(&der, b)
                        - linalg::dot(&val, b) * linalg::dot(&der, a);
                }
                s.abs()
            }
            Condition::D => {
                let probe = probe_field.ok_or_else(|| {
                    Error::Argument("condition (d) needs a probe field".into())
                })?;
                let defect = condition_d_operator(family, probe, p)?;
                linalg::norm(&defect.components)
            }
            Condition::SumDivAi | Condition::BracketDivFree => {
                return Err(Error::Argument(
                    "use the dedicated checker for this condition".into(),
                ))
            }
        };
        if residual > worst {
            worst = residual;
            witness = Some(p.coords().to_vec());
        }
    }
    Ok(ConditionReport::closed(
        which,
        tol,
        probes.seed,
        points.len(),
        worst,
        witness,
    ))
}

/// The operator Σ_i div(A_i) (𝓛_{A_i} B) evaluated at x; zero iff the family
/// satisfies condition (d) against the probe B at x.
pub fn condition_d_operator(
    family: &FieldFamily,
    probe: &AnalyticVectorField,
    x: &Point,
) -> Result<TangentVector> {
    if family.manifold() != probe.manifold() {
        return Err(Error::Argument("probe field on wrong manifold".into()));
    }
    let d = family.manifold().ambient_dim();
    let mut acc = vec![0.0; d];
    let mut val = vec![0.0; d];
    let mut dab = vec![0.0; d];
    let mut dba = vec![0.0; d];
    let mut bv = vec![0.0; d];
    probe.value_into(x.coords(), &mut bv);
    for f in family.fields() {
        let dvg = f.div_into(x.coords());
        if dvg == 0.0 {
            continue;
        }
        f.value_into(x.coords(), &mut val);
        probe.deriv_into(x.coords(), &val, &mut dab); // ∇_{A_i} B
        f.deriv_into(x.coords(), &bv, &mut dba); // ∇_B A_i
        for ((a, p), q) in acc.iter_mut().zip(&dab).zip(&dba) {
            *a += dvg * (p - q);
        }
    }
    TangentVector::new(x.clone(), acc)
}

/// Check the derived identity Σ_i div(A_i) A_i = 0 (a consequence of (b), (c)).
pub fn check_sum_div_ai(family: &FieldFamily, points: &[Point], tol: f64) -> Result<ConditionReport> {
    if points.is_empty() {
        return Err(Error::Argument("no points supplied".into()));
    }
    let d = family.manifold().ambient_dim();
    let mut worst = 0.0f64;
    let mut witness = None;
    let mut val = vec![0.0; d];
    for p in points {
        let mut acc = vec![0.0; d];
        for f in family.fields() {
            let dvg = f.div_into(p.coords());
            if dvg == 0.0 {
                continue;
            }
            f.value_into(p.coords(), &mut val);
            for (a, v) in acc.iter_mut().zip(&val) {
                *a += dvg * v;
            }
        }
        let r = linalg::norm(&acc);
        if r > worst {
            worst = r;
            witness = Some(p.coords().to_vec());
        }
    }
    Ok(ConditionReport::closed(
        Condition::SumDivAi,
        tol,
        0,
        points.len(),
        worst,
        witness,
    ))
}

/// Check that the bracket of two divergence-free fields is divergence-free.
/// The bracket's divergence is measured by a finite-difference trace, so this
/// is an oracle independent of the analytic derivative closures.
pub fn check_bracket_divfree(
    a: &AnalyticVectorField,
    b: &AnalyticVectorField,
    points: &[Point],
    tol: f64,
) -> Result<ConditionReport> {
    if points.is_empty() {
        return Err(Error::Argument("no points supplied".into()));
    }
    for p in points {
        let da = a.div_at(p).abs();
        let db = b.div_at(p).abs();
        if da > tol || db > tol {
            return Err(Error::Precondition(format!(
                "input fields are not divergence-free (|div A| = {da}, |div B| = {db})"
            )));
        }
    }
    let bracket_value = |x: &Point| -> Vec<f64> {
        lie_bracket(a, b, x).expect("fields share a manifold").components
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut witness = None;
    for p in points {
        let r = divergence_fd(&bracket_value, p, h).abs();
        if r > worst {
            worst = r;
            witness = Some(p.coords().to_vec());
        }
    }
    Ok(ConditionReport::closed(
        Condition::BracketDivFree,
        tol,
        0,
        points.len(),
        worst,
        witness,
    ))
}

/// Σ_i 𝓛_{A_i}(𝓛_{A_i} v)(x), expanded analytically through the second
/// covariant derivatives:
///
///   𝓛_A 𝓛_A v = (∇²v)(A, A) + ∇_{∇_A A} v − (∇²A)(A, v)
///               − ∇_{∇_A v} A − ∇_{𝓛_A v} A.
///
/// For a family satisfying (a)-(d) this equals the negative Hodge Laplacian
/// of v.
pub fn lie_laplacian_apply(
    family: &FieldFamily,
    v: &AnalyticVectorField,
    x: &Point,
) -> Result<TangentVector> {
    if family.manifold() != v.manifold() {
        return Err(Error::Argument("field on wrong manifold".into()));
    }
    if !v.has_deriv2() {
        return Err(Error::Capability(
            "test field must provide a second covariant derivative".into(),
        ));
    }
    let d = family.manifold().ambient_dim();
    let xc = x.coords();
    let mut acc = vec![0.0; d];
    let mut a_val = vec![0.0; d];
    let mut v_val = vec![0.0; d];
    let mut naa = vec![0.0; d]; // ∇_A A
    let mut nav = vec![0.0; d]; // ∇_A v
    let mut nva = vec![0.0; d]; // ∇_v A
    let mut lie = vec![0.0; d]; // 𝓛_A v
    let mut term = vec![0.0; d];
    v.value_into(xc, &mut v_val);
    for f in family.fields() {
        if !f.has_deriv2() {
            return Err(Error::Capability(
                "family fields must provide second covariant derivatives".into(),
            ));
        }
        f.value_into(xc, &mut a_val);
        f.deriv_into(xc, &a_val, &mut naa);
        v.deriv_into(xc, &a_val, &mut nav);
        f.deriv_into(xc, &v_val, &mut nva);
        for ((l, p), q) in lie.iter_mut().zip(&nav).zip(&nva) {
            *l = p - q;
        }
        v.deriv2_into(xc, &a_val, &a_val, &mut term)?;
        for (a, t) in acc.iter_mut().zip(&term) {
            *a += t;
        }
        v.deriv_into(xc, &naa, &mut term);
        for (a, t) in acc.iter_mut().zip(&term) {
            *a += t;
        }
        f.deriv2_into(xc, &a_val, &v_val, &mut term)?;
        for (a, t) in acc.iter_mut().zip(&term) {
            *a -= t;
        }
        f.deriv_into(xc, &nav, &mut term);
        for (a, t) in acc.iter_mut().zip(&term) {
            *a -= t;
        }
        f.deriv_into(xc, &lie, &mut term);
        for (a, t) in acc.iter_mut().zip(&term) {
            *a -= t;
        }
    }
    TangentVector::new(x.clone(), acc)
}

/// The stronger tensor form of condition (c): Σ_i ⟨A_i, a⟩⟨∇_V A_i, b⟩ = 0
/// without antisymmetrization.
pub fn check_condition_c_tensor(
    family: &FieldFamily,
    points: &[Point],
    probes: &ConditionProbes,
    tol: f64,
) -> Result<ConditionReport> {
    if points.is_empty() {
        return Err(Error::Argument("no points supplied".into()));
    }
    let d = family.manifold().ambient_dim();
    let mut worst = 0.0f64;
    let mut witness = None;
    let mut val = vec![0.0; d];
    let mut der = vec![0.0; d];
    for (pi, p) in points.iter().enumerate() {
        let [v, a, b] = &probes.triples[pi];
        let mut s = 0.0;
        for f in family.fields() {
            f.value_into(p.coords(), &mut val);
            f.deriv_into(p.coords(), v, &mut der);
            s += linalg::dot(&val, a) * linalg::dot(&der, b);
        }
        if s.abs() > worst {
            worst = s.abs();
            witness = Some(p.coords().to_vec());
        }
    }
    Ok(ConditionReport::closed(
        Condition::C,
        tol,
        probes.seed,
        points.len(),
        worst,
        witness,
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct KillingPropsReport {
    /// max residual of A_{[ξ,η]} = −[A_ξ, A_η] over basis pairs
    pub bracket_residual: f64,
    /// max residual of (g⁻¹)_* A_ξ = A_{Ad_{g⁻¹} ξ} over random rotations
    pub pushforward_residual: f64,
    /// max residual of ∇_{A_ξ} A_η = 0 at the base point e_{n+1}
    pub base_point_residual: f64,
    pub points_tested: usize,
    pub seed: u64,
}

/// Numerical check of the rotation-group identities on S^n: the bracket
/// anti-homomorphism, equivariance under push-forward by isometries, and the
/// vanishing covariant derivative at the base point for generators moving it.
pub fn check_killing_props(n: usize, n_points: usize, seed: u64) -> Result<KillingPropsReport> {
    if n < 2 {
        return Err(Error::Argument("need n >= 2".into()));
    }
    let order = n + 1;
    let manifold = crate::geometry::Manifold::sphere(n);
    let points = crate::geometry::sample_points(manifold, n_points, seed);
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);

    let mut basis = Vec::new();
    for i in 0..order {
        for j in i + 1..order {
            basis.push(SkewMatrix::basis(i, j, order));
        }
    }

    // bracket anti-homomorphism on all basis pairs
    let mut bracket_residual = 0.0f64;
    for xi in &basis {
        for eta in &basis {
            let a_xi = killing_field_from_skew(xi);
            let a_eta = killing_field_from_skew(eta);
            let lie_gen = so_bracket(xi, eta)?;
            let a_lie = killing_field_from_skew(&lie_gen);
            for p in &points {
                let lhs = a_lie.value(p);
                let rhs = lie_bracket(&a_xi, &a_eta, p)?;
                let r: f64 = lhs
                    .components
                    .iter()
                    .zip(&rhs.components)
                    .map(|(l, r)| (l + r) * (l + r))
                    .sum::<f64>()
                    .sqrt();
                bracket_residual = bracket_residual.max(r);
            }
        }
    }

    // push-forward equivariance against random rotations
    let mut pushforward_residual = 0.0f64;
    use rand::Rng;
    for _ in 0..8 {
        let mut entries = vec![0.0; order * order];
        for i in 0..order {
            for j in i + 1..order {
                let v: f64 = rng.gen_range(-1.0..1.0);
                entries[i * order + j] = v;
                entries[j * order + i] = -v;
            }
        }
        let zeta = SkewMatrix::new(order, entries)?;
        let g = zeta.exp();
        let mut ginv = vec![0.0; order * order];
        for i in 0..order {
            for j in 0..order {
                ginv[i * order + j] = g[j * order + i];
            }
        }
        for xi in &basis {
            let pushed_gen = adjoint(&ginv, xi);
            let a_pushed = killing_field_from_skew(&pushed_gen);
            let a_xi = killing_field_from_skew(xi);
            for p in &points {
                // ((g^{-1})_* A_xi)(x) = g^{-1} A_xi(g x)
                let mut gx = vec![0.0; order];
                linalg::mat_vec(order, &g, p.coords(), &mut gx);
                let agx = a_xi.value(&Point::new(manifold, gx.clone())?);
                let mut lhs = vec![0.0; order];
                linalg::mat_vec(order, &ginv, &agx.components, &mut lhs);
                let rhs = a_pushed.value(p);
                let r: f64 = lhs
                    .iter()
                    .zip(&rhs.components)
                    .map(|(l, r)| (l - r) * (l - r))
                    .sum::<f64>()
                    .sqrt();
                pushforward_residual = pushforward_residual.max(r);
            }
        }
    }

    // vanishing covariant derivative at the base point for the generators
    // that move it (the planes through the last axis)
    let base = {
        let mut c = vec![0.0; order];
        c[order - 1] = 1.0;
        Point::new(manifold, c)?
    };
    let movers: Vec<&SkewMatrix> = basis
        .iter()
        .enumerate()
        .filter_map(|(idx, m)| {
            // basis order: (0,1),(0,2),..; the movers are (i, order-1)
            let _ = idx;
            let touches_last = (0..order).any(|i| m.entries()[i * order + order - 1] != 0.0);
            touches_last.then_some(m)
        })
        .collect();
    let mut base_point_residual = 0.0f64;
    for xi in &movers {
        for eta in &movers {
            let a_xi = killing_field_from_skew(xi);
            let a_eta = killing_field_from_skew(eta);
            let v = a_xi.value(&base);
            let der = a_eta.deriv(&base, &v.components);
            base_point_residual = base_point_residual.max(linalg::norm(&der.components));
        }
    }

    Ok(KillingPropsReport {
        bracket_residual,
        pushforward_residual,
        base_point_residual,
        points_tested: points.len(),
        seed,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LatticeSums {
    pub n: usize,
    pub beta: f64,
    pub k_max: u32,
    /// cross[i][j] = Σ k_i k_j |k|^{-2β-2}, exactly zero off the diagonal
    pub cross: Vec<Vec<f64>>,
    /// diag[i] = Σ k_i² |k|^{-2β-2}, identical across i
    pub diag: Vec<f64>,
    /// Σ |k|^{-2β}
    pub total: f64,
}

/// Lattice cancellation sums over 0 < |k|_∞ ≤ K.
///
/// Cross terms are accumulated over the four sign-flips of (k_i, k_j)
/// together, so each orbit contributes an exact floating-point zero. The
/// diagonal sums accumulate sorted addend multisets which are identical for
/// every coordinate by swap symmetry, so the diagonal entries are bit-equal.
pub fn lattice_sums(n: usize, beta: f64, k_max: u32) -> Result<LatticeSums> {
    if beta <= n as f64 / 2.0 {
        return Err(Error::Constraint("lattice sums need beta > n/2".into()));
    }
    let lattice = crate::families::enumerate_lattice(n, k_max);
    let weight = |k: &[i64]| -> f64 {
        let k2: f64 = k.iter().map(|&c| (c * c) as f64).sum();
        k2.powf(-(beta + 1.0))
    };

    // cross terms: iterate representatives with k_i > 0, k_j > 0 and fold the
    // sign-flip orbit in a canceling order: +a, -a, -a, +a sums to exactly 0
    let mut cross = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut acc = 0.0f64;
            for k in &lattice {
                if k[i] <= 0 || k[j] <= 0 {
                    continue;
                }
                let a = (k[i] * k[j]) as f64 * weight(k);
                let mut flipped = k.clone();
                flipped[j] = -k[j];
                let b = (k[i] * -k[j]) as f64 * weight(&flipped);
                flipped[i] = -k[i];
                let c = (-k[i] * -k[j]) as f64 * weight(&flipped);
                flipped[j] = k[j];
                let d = (-k[i] * k[j]) as f64 * weight(&flipped);
                acc += a + b;
                acc += c + d;
            }
            cross[i][j] = acc;
        }
    }

    // diagonal sums: sorted multisets, identical for all coordinates
    let mut diag = Vec::with_capacity(n);
    for i in 0..n {
        let mut addends: Vec<f64> = lattice
            .iter()
            .filter(|k| k[i] != 0)
            .map(|k| (k[i] * k[i]) as f64 * weight(k))
            .collect();
        addends.sort_by(|a, b| a.partial_cmp(b).unwrap());
        diag.push(linalg::pairwise_sum(&addends));
    }

    let mut totals: Vec<f64> = lattice
        .iter()
        .map(|k| {
            let k2: f64 = k.iter().map(|&c| (c * c) as f64).sum();
            k2.powf(-beta)
        })
        .collect();
    totals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let total = linalg::pairwise_sum(&totals);

    Ok(LatticeSums {
        n,
        beta,
        k_max,
        cross,
        diag,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{
        build_sphere_gradient_family, build_sphere_killing_family, build_torus_family,
    };
    use crate::geometry::{sample_points, Manifold};
    use approx::assert_abs_diff_eq;

    #[test]
    fn killing_family_satisfies_all_conditions() {
        let fam = build_sphere_killing_family(2).unwrap();
        let pts = sample_points(fam.manifold(), 200, 101);
        let probes = ConditionProbes::seeded(&pts, 42);
        let probe_b = &fam.fields()[0];
        for which in [Condition::A, Condition::B, Condition::C] {
            let rep = check_condition(&fam, which, &pts, &probes, None, 1e-12).unwrap();
            assert!(rep.holds(), "{which:?}: residual {}", rep.max_residual);
        }
        let rep = check_condition(&fam, Condition::D, &pts, &probes, Some(probe_b), 1e-12).unwrap();
        assert!(rep.holds(), "(d): residual {}", rep.max_residual);
    }

    #[test]
    fn gradient_family_fails_d_with_exact_defect() {
        let fam = build_sphere_gradient_family(2).unwrap();
        let pts = sample_points(fam.manifold(), 100, 7);
        let probes = ConditionProbes::seeded(&pts, 8);
        for which in [Condition::A, Condition::B, Condition::C] {
            let rep = check_condition(&fam, which, &pts, &probes, None, 1e-12).unwrap();
            assert!(rep.holds(), "{which:?}: residual {}", rep.max_residual);
        }
        // probe with a rotation field: the defect is exactly -n B
        let probe = killing_field_from_skew(&SkewMatrix::basis(0, 1, 3));
        let rep = check_condition(&fam, Condition::D, &pts, &probes, Some(&probe), 1e-12).unwrap();
        assert!(!rep.holds());
        for p in &pts {
            let defect = condition_d_operator(&fam, &probe, p).unwrap();
            let b = probe.value(p);
            for (d, bv) in defect.components.iter().zip(&b.components) {
                assert_abs_diff_eq!(*d, -2.0 * bv, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn torus_family_conditions_relative_to_nu0() {
        let fam = build_torus_family(2, 3.0, 4).unwrap().normalized();
        let pts = sample_points(fam.manifold(), 100, 5);
        let probes = ConditionProbes::seeded(&pts, 6);
        let probe_b = &fam.fields()[0];
        let ra = check_condition(&fam, Condition::A, &pts, &probes, None, 1e-12).unwrap();
        assert!(ra.holds(), "(a) residual {}", ra.max_residual);
        let rb = check_condition(&fam, Condition::B, &pts, &probes, None, 1e-12).unwrap();
        assert!(rb.holds(), "(b) residual {}", rb.max_residual);
        let rc = check_condition(&fam, Condition::C, &pts, &probes, None, 1e-12).unwrap();
        assert!(rc.holds(), "(c) residual {}", rc.max_residual);
        let rd = check_condition(&fam, Condition::D, &pts, &probes, Some(probe_b), 1e-12).unwrap();
        assert!(rd.holds(), "(d) residual {}", rd.max_residual);
    }

    #[test]
    fn sum_div_ai_vanishes_for_all_builtin_families() {
        let g = build_sphere_gradient_family(2).unwrap();
        let pts = sample_points(g.manifold(), 50, 11);
        assert!(check_sum_div_ai(&g, &pts, 1e-13).unwrap().holds());
        let k = build_sphere_killing_family(2).unwrap();
        assert!(check_sum_div_ai(&k, &pts, 1e-13).unwrap().holds());
        let t = build_torus_family(2, 3.0, 3).unwrap();
        let tpts = sample_points(t.manifold(), 50, 12);
        assert!(check_sum_div_ai(&t, &tpts, 1e-13).unwrap().holds());
    }

    #[test]
    fn bracket_of_divfree_fields_is_divfree() {
        let fam = build_torus_family(2, 3.0, 1).unwrap();
        let a = &fam.fields()[0];
        let b = &fam.fields()[5];
        let pts = sample_points(fam.manifold(), 30, 13);
        let rep = check_bracket_divfree(a, b, &pts, 1e-8).unwrap();
        assert!(rep.holds(), "residual {}", rep.max_residual);
        // bracket with itself is zero
        let same = check_bracket_divfree(a, a, &pts, 1e-10).unwrap();
        assert!(same.holds());
        // two rotation fields on the sphere
        let kf = build_sphere_killing_family(2).unwrap();
        let spts = sample_points(kf.manifold(), 30, 14);
        let rep = check_bracket_divfree(&kf.fields()[0], &kf.fields()[1], &spts, 1e-8).unwrap();
        assert!(rep.holds(), "sphere residual {}", rep.max_residual);
        // non-divergence-free input is rejected
        let g = build_sphere_gradient_family(2).unwrap();
        assert!(check_bracket_divfree(&g.fields()[0], &kf.fields()[0], &spts, 1e-10).is_err());
    }

    #[test]
    fn lie_laplacian_reproduces_rotation_eigenvalue() {
        let fam = build_sphere_killing_family(2).unwrap();
        let v = &fam.fields()[0];
        for p in sample_points(fam.manifold(), 100, 15) {
            let got = lie_laplacian_apply(&fam, v, &p).unwrap();
            let want = v.value(&p);
            for (g, w) in got.components.iter().zip(&want.components) {
                assert_abs_diff_eq!(*g, -2.0 * w, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn lie_laplacian_on_torus_matches_flat_eigenvalue() {
        // the truncated normalized family reproduces -|k|^2 v; the lattice
        // symmetries cancel shell by shell, so this is exact to roundoff
        let fam = build_torus_family(2, 3.0, 3).unwrap().normalized();
        let v = &fam.fields()[0]; // k = (-3,-3) first in lexicographic order
        let k2 = 18.0;
        for p in sample_points(fam.manifold(), 10, 16) {
            let got = lie_laplacian_apply(&fam, v, &p).unwrap();
            let want = v.value(&p);
            for (g, w) in got.components.iter().zip(&want.components) {
                assert_abs_diff_eq!(*g, -k2 * w, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn lie_laplacian_of_zero_field_is_zero() {
        let fam = build_sphere_killing_family(2).unwrap();
        let z = AnalyticVectorField::zero(fam.manifold());
        let p = sample_points(fam.manifold(), 1, 17).pop().unwrap();
        let got = lie_laplacian_apply(&fam, &z, &p).unwrap();
        assert_eq!(got.components, vec![0.0; 3]);
    }

    #[test]
    fn condition_c_tensor_variant_holds_for_killing() {
        let fam = build_sphere_killing_family(2).unwrap();
        let pts = sample_points(fam.manifold(), 100, 18);
        let probes = ConditionProbes::seeded(&pts, 19);
        let rep = check_condition_c_tensor(&fam, &pts, &probes, 1e-12).unwrap();
        assert!(rep.holds(), "residual {}", rep.max_residual);
    }

    #[test]
    fn killing_props_hold_on_s2() {
        let rep = check_killing_props(2, 20, 77).unwrap();
        assert!(rep.bracket_residual <= 1e-12, "{}", rep.bracket_residual);
        assert!(rep.pushforward_residual <= 1e-10, "{}", rep.pushforward_residual);
        assert!(rep.base_point_residual <= 1e-12, "{}", rep.base_point_residual);
    }

    #[test]
    fn lattice_sums_cancel_exactly() {
        for n in [2usize, 3] {
            for beta in [2.0, 3.0, 4.0] {
                for k in [1u32, 3, 5] {
                    let s = lattice_sums(n, beta, k).unwrap();
                    for i in 0..n {
                        for j in 0..n {
                            if i != j {
                                assert_eq!(s.cross[i][j], 0.0, "n={n} beta={beta} k={k}");
                            }
                        }
                    }
                    for i in 1..n {
                        assert_eq!(s.diag[0].to_bits(), s.diag[i].to_bits());
                    }
                    let rel = (n as f64 * s.diag[0] - s.total).abs() / s.total;
                    assert!(rel <= 1e-14, "diag/total mismatch {rel}");
                }
            }
        }
    }

    #[test]
    fn lattice_k1_example() {
        let s = lattice_sums(2, 3.0, 1).unwrap();
        // direct enumeration of the 8 points: 2 + 4/16 = 2.25
        assert_abs_diff_eq!(s.diag[0], 2.25, epsilon = 1e-15);
        assert_eq!(s.cross[0][1], 0.0);
        assert_abs_diff_eq!(s.diag[0], 0.5 * s.total, epsilon = 1e-15);
    }
}
