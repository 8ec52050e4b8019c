//! Monte Carlo estimation of the weak pairing formula and the fixed-point
//! solver built on it.
//!
//! The pairing ∫⟨u_t, v⟩ dx of the unknown velocity with a divergence-free
//! test field v equals the flow average E ∫⟨u₀(x), (dX_t(x))^{-1} v(X_t(x))⟩ dx,
//! which needs only the forward flow and its Jacobian — the inverse flow map
//! is never constructed. Estimating the pairing against every divergence-free
//! Fourier basis field recovers the velocity coefficients on T²; iterating
//! velocity → drift → velocity with common random numbers is the fixed-point
//! loop coupling the flow to the field it transports.

use crate::error::{Error, Result};
use crate::families::{
    build_sphere_killing_family, killing_field_from_skew, plane_rotation_generator,
};
use crate::flow::{
    integrate_flow_with_snapshots, tangent_det, Drift, FlowConfig, FlowEnsembleSample, NoiseModel,
};
use crate::geometry::{tangent_frame, AnalyticVectorField, Manifold, Point};
use crate::linalg;
use crate::quad::Quadrature;
use crate::spectral::{self, SpectralVelocity};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

/// Max |det(tangent Jacobian) − exp(−log_density)| tolerated in solver runs.
/// Volume preservation is what justifies the unit density weight in the
/// pairing quadrature.
pub const VOLUME_DEFECT_TOL: f64 = 1e-3;

const DIVERGENCE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Serialize)]
pub struct PairingEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub v_label: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct PairingConfig {
    /// torus quadrature grid side (ignored on the sphere, which uses the
    /// embedded equal-weight design)
    pub grid: usize,
    pub n_samples: usize,
    pub dt: f64,
    pub master_seed: u64,
}

fn quadrature_for(manifold: Manifold, cfg_grid: usize) -> Result<Quadrature> {
    match manifold {
        Manifold::Torus { dim: 2 } => Quadrature::torus_grid(cfg_grid),
        Manifold::Sphere { dim: 2 } => Ok(Quadrature::sphere_design()),
        _ => Err(Error::Argument(
            "pairing quadrature is provided for T² and S² only".into(),
        )),
    }
}

/// Solve Jᵀ z = u₀ at a grid point, so that ⟨u₀, J^{-1} v(X)⟩ = ⟨z, v(X)⟩.
/// On the sphere the solve acts on the tangent-restricted block in the
/// frames at x and X(x), and z is returned in the endpoint tangent space.
fn cotransported_weight(
    sample: &FlowEnsembleSample,
    idx: usize,
    u0_at_x: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let d = sample.manifold.ambient_dim();
    let jac = &sample.jacobians[idx];
    if sample.manifold.is_sphere() {
        let n = d - 1;
        let fx = tangent_frame(&sample.initial_points[idx]);
        let fy = tangent_frame(&sample.endpoints[idx]);
        // m stores the TRANSPOSE of M[a][b] = <f_y[a], J f_x[b]>
        let mut m = vec![0.0; n * n];
        let mut jb = vec![0.0; d];
        for b in 0..n {
            linalg::mat_vec(d, jac, &fx[b], &mut jb);
            for a in 0..n {
                m[b * n + a] = linalg::dot(&fy[a], &jb);
            }
        }
        let rhs: Vec<f64> = (0..n).map(|b| linalg::dot(&fx[b], u0_at_x)).collect();
        let mut c = vec![0.0; n];
        linalg::solve(n, &m, &rhs, &mut c)?;
        out.fill(0.0);
        for a in 0..n {
            for q in 0..d {
                out[q] += c[a] * fy[a][q];
            }
        }
    } else {
        let mut jt = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                jt[a * d + b] = jac[b * d + a];
            }
        }
        linalg::solve(d, &jt, u0_at_x, out)?;
    }
    Ok(())
}

fn check_divergence_free(v: &AnalyticVectorField, points: &[Point]) -> Result<()> {
    for p in points.iter().take(64) {
        let dv = v.div_at(p).abs();
        if dv > DIVERGENCE_TOL {
            return Err(Error::Precondition(format!(
                "test field is not divergence-free: |div v| = {dv}"
            )));
        }
    }
    Ok(())
}

/// Monte Carlo estimate of ∫⟨u_t, v⟩ dx through the flow average
/// E ∫⟨u₀(x), (dX_t(x))^{-1} v(X_t(x))⟩ dx.
///
/// The density weight is identically one by the push-forward identity
/// ρ_t(X_t) ρ̃_t = 1; volume preservation is separately asserted through
/// the tangent determinant (defect ≤ [`VOLUME_DEFECT_TOL`]).
pub fn estimate_pairing(
    u0: &AnalyticVectorField,
    drift: &Drift,
    noise: &NoiseModel,
    v: &AnalyticVectorField,
    t: f64,
    cfg: &PairingConfig,
) -> Result<PairingEstimate> {
    let manifold = u0.manifold();
    if v.manifold() != manifold {
        return Err(Error::Argument("u0 and v on different manifolds".into()));
    }
    let quad = quadrature_for(manifold, cfg.grid)?;
    check_divergence_free(v, &quad.points)?;
    if cfg.n_samples < 2 {
        return Err(Error::Argument("need at least 2 samples".into()));
    }
    let d = manifold.ambient_dim();
    let u0_vals: Vec<Vec<f64>> = quad.points.iter().map(|p| u0.value(p).components).collect();
    let flow_cfg = FlowConfig::new(cfg.dt, t, cfg.master_seed, cfg.n_samples)?;
    let n_steps = flow_cfg.n_steps()?;

    let per_sample: Vec<f64> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|s| -> Result<f64> {
            let sample =
                integrate_flow_with_snapshots(&flow_cfg, drift, noise, &quad.points, s, &[n_steps])?
                    .pop()
                    .expect("snapshot");
            enforce_volume_defect(&sample)?;
            let mut z = vec![0.0; d];
            let mut vals = Vec::with_capacity(quad.len());
            for (idx, w) in quad.weights.iter().enumerate() {
                cotransported_weight(&sample, idx, &u0_vals[idx], &mut z)?;
                let vy = v.value(&sample.endpoints[idx]);
                vals.push(w * linalg::dot(&z, &vy.components));
            }
            Ok(linalg::pairwise_sum(&vals))
        })
        .collect::<Result<_>>()?;

    let (value, std_error) = linalg::mean_and_std_error(&per_sample);
    Ok(PairingEstimate {
        value,
        std_error,
        n_samples: cfg.n_samples,
        v_label: "custom".into(),
    })
}

fn enforce_volume_defect(sample: &FlowEnsembleSample) -> Result<()> {
    let worst = (0..sample.initial_points.len())
        .map(|i| (tangent_det(sample, i) - (-sample.log_density[i]).exp()).abs())
        .fold(0.0, f64::max);
    if worst > VOLUME_DEFECT_TOL {
        return Err(Error::Numerical(format!(
            "volume defect {worst} exceeds {VOLUME_DEFECT_TOL}; reduce dt"
        )));
    }
    Ok(())
}

/// Coefficient estimate for one conjugate mode pair.
#[derive(Clone, Debug, Serialize)]
pub struct ModeEstimate {
    pub k: [i32; 2],
    /// û_k (the −k mode is the conjugate)
    pub re: f64,
    pub im: f64,
    pub std_error: f64,
}

/// Accumulate all basis pairings for the snapshots of one flow sample.
/// Returns `snapshots x half-modes x {cos, sin}` pairing values.
fn accumulate_pairings(
    samples: &[FlowEnsembleSample],
    quad: &Quadrature,
    u0_vals: &[Vec<f64>],
    half: &[[i32; 2]],
    m_max: i32,
) -> Result<Vec<Vec<[f64; 2]>>> {
    let mut out = Vec::with_capacity(samples.len());
    let mut z = vec![0.0; 2];
    let mut acc: Vec<[Complex64; 2]> = vec![[Complex64::new(0.0, 0.0); 2]; half.len()];
    let side = (2 * m_max + 1) as usize;
    let mut zp1 = vec![Complex64::new(1.0, 0.0); side];
    let mut zp2 = vec![Complex64::new(1.0, 0.0); side];
    for sample in samples {
        enforce_volume_defect(sample)?;
        for a in acc.iter_mut() {
            *a = [Complex64::new(0.0, 0.0); 2];
        }
        for (idx, w) in quad.weights.iter().enumerate() {
            cotransported_weight(sample, idx, &u0_vals[idx], &mut z)?;
            let y = sample.endpoints[idx].coords();
            fill_conj_powers(&mut zp1, m_max, y[0]);
            fill_conj_powers(&mut zp2, m_max, y[1]);
            let zw = [w * z[0], w * z[1]];
            for (ki, k) in half.iter().enumerate() {
                let phase = zp1[(k[0] + m_max) as usize] * zp2[(k[1] + m_max) as usize];
                acc[ki][0] += zw[0] * phase;
                acc[ki][1] += zw[1] * phase;
            }
        }
        let pairings: Vec<[f64; 2]> = half
            .iter()
            .zip(&acc)
            .map(|(k, c)| {
                let e = spectral::unit_perp(k);
                // Σ w z e^{-i k·y}: real part carries cos, -imag carries sin
                let p_cos = e[0] * c[0].re + e[1] * c[1].re;
                let p_sin = -(e[0] * c[0].im + e[1] * c[1].im);
                [p_cos, p_sin]
            })
            .collect();
        out.push(pairings);
    }
    Ok(out)
}

/// Power table of e^{-i p θ} for p ∈ [-M, M], index p+M.
fn fill_conj_powers(out: &mut [Complex64], m: i32, theta: f64) {
    let (s, c) = theta.sin_cos();
    let z = Complex64::new(c, -s);
    let mu = m as usize;
    out[mu] = Complex64::new(1.0, 0.0);
    for p in 1..=mu {
        out[mu + p] = out[mu + p - 1] * z;
        out[mu - p] = out[mu + p].conj();
    }
}

/// Recover the velocity at time t by estimating the pairing against every
/// divergence-free Fourier basis field with |k|_∞ ≤ m_max. T² only.
/// Incompressibility holds by construction (the basis is solenoidal) and
/// reality because each conjugate pair comes from one real cos/sin estimate.
pub fn reconstruct_velocity(
    u0: &SpectralVelocity,
    drift: &Drift,
    noise: &NoiseModel,
    t: f64,
    m_max: i32,
    cfg: &PairingConfig,
) -> Result<(SpectralVelocity, Vec<ModeEstimate>)> {
    let quad = Quadrature::torus_grid(cfg.grid)?;
    let u0_vals: Vec<Vec<f64>> = spectral::synthesize(u0, cfg.grid)?
        .into_iter()
        .map(|v| v.to_vec())
        .collect();
    let flow_cfg = FlowConfig::new(cfg.dt, t, cfg.master_seed, cfg.n_samples)?;
    let n_steps = flow_cfg.n_steps()?;
    let half = spectral::half_lattice(m_max);

    let per_sample: Vec<Vec<[f64; 2]>> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|s| -> Result<Vec<[f64; 2]>> {
            let snaps =
                integrate_flow_with_snapshots(&flow_cfg, drift, noise, &quad.points, s, &[n_steps])?;
            let mut acc = accumulate_pairings(&snaps, &quad, &u0_vals, &half, m_max)?;
            Ok(acc.pop().expect("one snapshot"))
        })
        .collect::<Result<_>>()?;

    Ok(assemble_modes(&half, &per_sample, m_max))
}

/// Combine per-sample cos/sin pairings into coefficients and uncertainties.
fn assemble_modes(
    half: &[[i32; 2]],
    per_sample: &[Vec<[f64; 2]>],
    m_max: i32,
) -> (SpectralVelocity, Vec<ModeEstimate>) {
    let norm = 2.0 * PI * PI; // ∫ cos²(k·θ) dθ over T²
    let mut pairs = Vec::with_capacity(half.len());
    let mut estimates = Vec::with_capacity(half.len());
    for (ki, k) in half.iter().enumerate() {
        let cos_vals: Vec<f64> = per_sample.iter().map(|s| s[ki][0]).collect();
        let sin_vals: Vec<f64> = per_sample.iter().map(|s| s[ki][1]).collect();
        let (pc, pc_se) = linalg::mean_and_std_error(&cos_vals);
        let (ps, ps_se) = linalg::mean_and_std_error(&sin_vals);
        let a = pc / norm;
        let b = ps / norm;
        pairs.push((*k, a, b));
        estimates.push(ModeEstimate {
            k: *k,
            re: 0.5 * a,
            im: -0.5 * b,
            std_error: 0.5 * (pc_se * pc_se + ps_se * ps_se).sqrt() / norm,
        });
    }
    (spectral::from_real_pairs(m_max, &pairs), estimates)
}

/// Aggregate Monte Carlo uncertainty in L² units:
/// (E ‖δu‖²)^{1/2} = 2π (Σ_half (σ_a² + σ_b²) / 2)^{1/2}.
fn aggregate_std_error(estimates: &[ModeEstimate]) -> f64 {
    // ModeEstimate.std_error = sqrt(σ_a² + σ_b²)/2 in coefficient units
    let sum: f64 = estimates
        .iter()
        .map(|e| 4.0 * e.std_error * e.std_error / 2.0)
        .sum();
    2.0 * PI * sum.sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct SolverConfig {
    pub m_max: i32,
    pub grid: usize,
    pub n_samples: usize,
    pub dt: f64,
    pub node_spacing: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub master_seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// L² update distance per nonzero time node
    pub node_deltas: Vec<f64>,
    pub max_delta: f64,
    pub aggregate_std_error: f64,
}

#[derive(Clone, Debug)]
pub struct PicardState {
    pub iteration: usize,
    pub times: Vec<f64>,
    pub velocity_nodes: Vec<SpectralVelocity>,
    /// final-iteration per-node mode estimates (index 0 = first nonzero node)
    pub node_estimates: Vec<Vec<ModeEstimate>>,
    pub iterations: Vec<IterationRecord>,
    pub delta: f64,
    pub aggregate_std_error: f64,
    pub converged: bool,
}

/// Picard iteration on the coupled system: freeze the drift, transport u₀
/// through the flow, reconstruct the velocity at every time node, repeat.
///
/// Common random numbers (one master seed across iterations) make the update
/// deltas measure drift changes rather than Monte Carlo noise; the stopping
/// tolerance floors at 3x the aggregate standard error, below which further
/// iteration is meaningless. Non-convergence within max_iter returns a state
/// flagged `converged = false` rather than an error.
pub fn picard_solve(
    u0: &SpectralVelocity,
    nu: f64,
    t_end: f64,
    cfg: &SolverConfig,
) -> Result<PicardState> {
    u0.validate()?;
    if u0.m_max() > cfg.m_max {
        return Err(Error::Argument("u0 exceeds the solver band".into()));
    }
    let n_nodes_f = t_end / cfg.node_spacing;
    if (n_nodes_f - n_nodes_f.round()).abs() > 1e-9 {
        return Err(Error::Argument(
            "t_end must be a multiple of node_spacing".into(),
        ));
    }
    let steps_per_node_f = cfg.node_spacing / cfg.dt;
    if (steps_per_node_f - steps_per_node_f.round()).abs() > 1e-9 {
        return Err(Error::Argument(
            "node_spacing must be a multiple of dt".into(),
        ));
    }
    let n_nodes = n_nodes_f.round() as usize; // nonzero nodes
    let steps_per_node = steps_per_node_f.round() as usize;
    let times: Vec<f64> = (0..=n_nodes).map(|j| j as f64 * cfg.node_spacing).collect();
    let snap_steps: Vec<usize> = (1..=n_nodes).map(|j| j * steps_per_node).collect();

    let u0_band = u0.embedded(cfg.m_max);
    let quad = Quadrature::torus_grid(cfg.grid)?;
    let u0_vals: Vec<Vec<f64>> = spectral::synthesize(&u0_band, cfg.grid)?
        .into_iter()
        .map(|v| v.to_vec())
        .collect();
    let noise = NoiseModel::constant(nu)?;
    let flow_cfg = FlowConfig::new(cfg.dt, t_end, cfg.master_seed, cfg.n_samples)?;
    let half = spectral::half_lattice(cfg.m_max);

    let mut nodes: Vec<SpectralVelocity> = vec![u0_band.clone(); n_nodes + 1];
    let mut state = PicardState {
        iteration: 0,
        times: times.clone(),
        velocity_nodes: nodes.clone(),
        node_estimates: Vec::new(),
        iterations: Vec::new(),
        delta: f64::INFINITY,
        aggregate_std_error: 0.0,
        converged: false,
    };

    for iteration in 1..=cfg.max_iter {
        let drift = Drift::spectral_nodes(times.clone(), nodes.clone())?;
        let per_sample: Vec<Vec<Vec<[f64; 2]>>> = (0..cfg.n_samples)
            .into_par_iter()
            .map(|s| -> Result<Vec<Vec<[f64; 2]>>> {
                let snaps = integrate_flow_with_snapshots(
                    &flow_cfg,
                    &drift,
                    &noise,
                    &quad.points,
                    s,
                    &snap_steps,
                )?;
                accumulate_pairings(&snaps, &quad, &u0_vals, &half, cfg.m_max)
            })
            .collect::<Result<_>>()?;

        let mut new_nodes = Vec::with_capacity(n_nodes + 1);
        new_nodes.push(u0_band.clone());
        let mut node_estimates = Vec::with_capacity(n_nodes);
        let mut node_deltas = Vec::with_capacity(n_nodes);
        let mut agg = 0.0f64;
        for j in 0..n_nodes {
            let slice: Vec<Vec<[f64; 2]>> = per_sample.iter().map(|s| s[j].clone()).collect();
            let (vel, est) = assemble_modes(&half, &slice, cfg.m_max);
            node_deltas.push(vel.l2_distance(&nodes[j + 1]));
            agg = agg.max(aggregate_std_error(&est));
            new_nodes.push(vel);
            node_estimates.push(est);
        }
        let max_delta = node_deltas.iter().cloned().fold(0.0, f64::max);
        state.iterations.push(IterationRecord {
            iteration,
            node_deltas,
            max_delta,
            aggregate_std_error: agg,
        });
        nodes = new_nodes;
        state.iteration = iteration;
        state.velocity_nodes = nodes.clone();
        state.node_estimates = node_estimates;
        state.delta = max_delta;
        state.aggregate_std_error = agg;
        if max_delta <= cfg.tol.max(3.0 * agg) {
            state.converged = true;
            break;
        }
    }
    Ok(state)
}

#[derive(Clone, Debug, Serialize)]
pub struct HeatDecayReport {
    pub times: Vec<f64>,
    /// normalized pairings a(t) = ⟨u₀, (X_t^{-1})_* u₀⟩ / ‖u₀‖²
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub slope: f64,
    pub slope_sigma: f64,
    pub expected_slope: f64,
    pub n_samples: usize,
    pub master_seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HeatConfig {
    pub n_samples: usize,
    pub dt: f64,
    pub master_seed: u64,
}

/// Rotation-noise heat decay on S²: with zero drift the pull-back evolution
/// reduces to the heat semigroup of the Hodge Laplacian on vector fields,
/// whose lowest divergence-free eigenvalue is 2, so the normalized pairing
/// of a rotation field with itself decays like e^{-2νt}. Fits the log-slope
/// over the requested times and reports its uncertainty.
pub fn sphere_heat_decay(nu: f64, t_grid: &[f64], cfg: &HeatConfig) -> Result<HeatDecayReport> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("time grid must be increasing".into()));
    }
    if t_grid[0] <= 0.0 {
        return Err(Error::Argument("time grid must start after 0".into()));
    }
    let family = build_sphere_killing_family(2)?;
    let noise = NoiseModel::family_driven(nu, family)?;
    let u0 = killing_field_from_skew(&plane_rotation_generator(0, 1, 3));
    let quad = Quadrature::sphere_design();
    let t_end = *t_grid.last().unwrap();
    let flow_cfg = FlowConfig::new(cfg.dt, t_end, cfg.master_seed, cfg.n_samples)?;
    let snap_steps: Vec<usize> = t_grid
        .iter()
        .map(|&t| {
            let s = (t / cfg.dt).round();
            if (s * cfg.dt - t).abs() > 1e-9 {
                return Err(Error::Argument(format!(
                    "time {t} is not a multiple of dt = {}",
                    cfg.dt
                )));
            }
            Ok(s as usize)
        })
        .collect::<Result<_>>()?;

    let u0_vals: Vec<Vec<f64>> = quad.points.iter().map(|p| u0.value(p).components).collect();
    let denom = {
        let vals: Vec<f64> = quad
            .points
            .iter()
            .zip(&quad.weights)
            .map(|(p, w)| {
                let v = u0.value(p);
                w * linalg::dot(&v.components, &v.components)
            })
            .collect();
        linalg::pairwise_sum(&vals)
    };

    let per_sample: Vec<Vec<f64>> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|s| -> Result<Vec<f64>> {
            let snaps = integrate_flow_with_snapshots(
                &flow_cfg,
                &Drift::Zero,
                &noise,
                &quad.points,
                s,
                &snap_steps,
            )?;
            let mut z = vec![0.0; 3];
            snaps
                .iter()
                .map(|snap| {
                    let mut vals = Vec::with_capacity(quad.len());
                    for (idx, w) in quad.weights.iter().enumerate() {
                        cotransported_weight(snap, idx, &u0_vals[idx], &mut z)?;
                        let vy = u0.value(&snap.endpoints[idx]);
                        vals.push(w * linalg::dot(&z, &vy.components));
                    }
                    Ok(linalg::pairwise_sum(&vals) / denom)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut values = Vec::with_capacity(t_grid.len());
    let mut std_errors = Vec::with_capacity(t_grid.len());
    for j in 0..t_grid.len() {
        let col: Vec<f64> = per_sample.iter().map(|s| s[j]).collect();
        let (m, se) = linalg::mean_and_std_error(&col);
        values.push(m);
        std_errors.push(se);
    }
    // weighted fit of ln a(t); σ_ln = σ/a
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let sig: Vec<f64> = values
        .iter()
        .zip(&std_errors)
        .map(|(v, s)| (s / v).max(1e-12))
        .collect();
    let (slope, slope_sigma) = linalg::weighted_slope(t_grid, &logs, &sig);
    Ok(HeatDecayReport {
        times: t_grid.to_vec(),
        values,
        std_errors,
        slope,
        slope_sigma,
        expected_slope: -2.0 * nu,
        n_samples: cfg.n_samples,
        master_seed: cfg.master_seed,
    })
}

/// Relative L² distance ‖u − v‖ / ‖v‖.
pub fn relative_l2_error(u: &SpectralVelocity, v: &SpectralVelocity) -> f64 {
    u.l2_distance(v) / v.l2_norm()
}
