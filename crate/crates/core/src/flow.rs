//! Stratonovich integration of the stochastic flow map, with exact discrete
//! Jacobian transport, pull-back evaluation, and Radon–Nikodym density
//! tracking.
//!
//! One sample = one realization of the flow map: the same Brownian
//! increments (addressed by `(master_seed, sample_index, noise_index, step)`)
//! drive every grid point. The Jacobian dX_t is propagated by differentiating
//! the discrete update map itself — predictor, corrector, and on the sphere
//! the per-step renormalization — so it is the exact derivative of the
//! computed endpoints, with finite differences available as a cross-check.

use crate::error::{Error, Result};
use crate::families::FieldFamily;
use crate::geometry::{reduce_angle, tangent_frame, AnalyticVectorField, Manifold, Point};
use crate::linalg::{self, MAX_DIM};
use crate::quad::Quadrature;
use crate::rng::NoiseStreams;
use crate::spectral::{EvalScratch, SpectralVelocity};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Scheme {
    StratonovichHeun,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct FlowConfig {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub master_seed: u64,
    pub n_samples: usize,
}

impl FlowConfig {
    pub fn new(dt: f64, t_end: f64, master_seed: u64, n_samples: usize) -> Result<Self> {
        if !(dt > 0.0 && dt <= t_end) {
            return Err(Error::Argument("need 0 < dt <= t_end".into()));
        }
        if n_samples < 1 {
            return Err(Error::Argument("need n_samples >= 1".into()));
        }
        Ok(FlowConfig {
            dt,
            t_end,
            scheme: Scheme::StratonovichHeun,
            master_seed,
            n_samples,
        })
    }

    /// Number of steps; t_end must be an integer multiple of dt.
    pub fn n_steps(&self) -> Result<usize> {
        let steps = (self.t_end / self.dt).round();
        if (steps * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(1.0) {
            return Err(Error::Argument(format!(
                "t_end = {} is not a multiple of dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(steps as usize)
    }
}

/// The diffusion part of the SDE.
#[derive(Clone)]
pub enum NoiseModel {
    /// dX gets σ dW with independent coordinate noise; flat torus only.
    /// σ = sqrt(2ν).
    ConstantDiffusion { sigma: f64 },
    /// dX gets σ Σ_i A_i(X) ∘ dW^i over the family fields; σ = sqrt(2ν/ν₀).
    FamilyDriven {
        sigma: f64,
        family: Arc<FieldFamily>,
    },
}

impl NoiseModel {
    pub fn constant(nu: f64) -> Result<Self> {
        if nu <= 0.0 {
            return Err(Error::Argument("viscosity must be positive".into()));
        }
        Ok(NoiseModel::ConstantDiffusion {
            sigma: (2.0 * nu).sqrt(),
        })
    }

    /// Family noise with σ = sqrt(2ν/ν₀) for the family's own ν₀.
    pub fn family_driven(nu: f64, family: FieldFamily) -> Result<Self> {
        if nu <= 0.0 {
            return Err(Error::Argument("viscosity must be positive".into()));
        }
        let sigma = (2.0 * nu / family.nu0()).sqrt();
        Ok(NoiseModel::FamilyDriven {
            sigma,
            family: Arc::new(family),
        })
    }

    pub fn n_noise(&self, manifold: Manifold) -> usize {
        match self {
            NoiseModel::ConstantDiffusion { .. } => manifold.dim(),
            NoiseModel::FamilyDriven { family, .. } => family.len(),
        }
    }

    fn divergence_free(&self) -> bool {
        match self {
            NoiseModel::ConstantDiffusion { .. } => true,
            NoiseModel::FamilyDriven { family, .. } => match family.spec() {
                crate::families::FamilySpec::SphereGradient { .. } => false,
                _ => true,
            },
        }
    }

    fn check_compatible(&self, manifold: Manifold) -> Result<()> {
        match self {
            NoiseModel::ConstantDiffusion { sigma } => {
                if *sigma <= 0.0 {
                    return Err(Error::Argument("sigma must be positive".into()));
                }
                if manifold.is_sphere() {
                    return Err(Error::Argument(
                        "constant-diffusion noise is only defined on the torus".into(),
                    ));
                }
                Ok(())
            }
            NoiseModel::FamilyDriven { sigma, family } => {
                if *sigma <= 0.0 {
                    return Err(Error::Argument("sigma must be positive".into()));
                }
                if family.manifold() != manifold {
                    return Err(Error::Argument(
                        "noise family lives on a different manifold".into(),
                    ));
                }
                for f in family.fields() {
                    if !f.has_ambient_jacobian() {
                        return Err(Error::Capability(
                            "noise fields must provide ambient Jacobians".into(),
                        ));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Time-dependent drift for the SDE.
#[derive(Clone)]
pub enum Drift {
    Zero,
    /// A steady analytic field (must carry an ambient Jacobian).
    Steady(AnalyticVectorField),
    /// The exact decaying vortex on T² (closed form in time).
    TaylorGreen { nu: f64 },
    /// Piecewise-linear-in-time interpolation of velocity snapshots on T².
    SpectralNodes {
        times: Vec<f64>,
        nodes: Vec<SpectralVelocity>,
    },
}

impl Drift {
    pub fn spectral_nodes(times: Vec<f64>, nodes: Vec<SpectralVelocity>) -> Result<Self> {
        if times.len() != nodes.len() || times.len() < 2 {
            return Err(Error::Argument("need matching times and nodes (>= 2)".into()));
        }
        for w in times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Argument("drift node times must increase".into()));
            }
        }
        let m = nodes[0].m_max();
        if nodes.iter().any(|n| n.m_max() != m) {
            return Err(Error::Argument("drift nodes must share one cutoff".into()));
        }
        Ok(Drift::SpectralNodes { times, nodes })
    }

    fn check_compatible(&self, manifold: Manifold) -> Result<()> {
        match self {
            Drift::Zero => Ok(()),
            Drift::Steady(f) => {
                if f.manifold() != manifold {
                    return Err(Error::Argument("drift lives on a different manifold".into()));
                }
                if !f.has_ambient_jacobian() {
                    return Err(Error::Capability(
                        "steady drift must provide an ambient Jacobian".into(),
                    ));
                }
                Ok(())
            }
            Drift::TaylorGreen { .. } | Drift::SpectralNodes { .. } => {
                if manifold != Manifold::torus(2) {
                    return Err(Error::Argument("this drift is defined on T² only".into()));
                }
                Ok(())
            }
        }
    }

    fn divergence_free(&self) -> bool {
        // all supported drifts are solenoidal except arbitrary steady fields
        match self {
            Drift::Zero | Drift::TaylorGreen { .. } | Drift::SpectralNodes { .. } => true,
            Drift::Steady(_) => false, // decided pointwise via the div closure
        }
    }

    /// Blend coefficients for time t into `buf` (spectral drifts only).
    fn blend_spectral(&self, t: f64, buf: &mut Option<SpectralVelocity>) {
        if let Drift::SpectralNodes { times, nodes } = self {
            let m = nodes[0].m_max();
            if buf.is_none() {
                *buf = Some(SpectralVelocity::zero(m));
            }
            let out = buf.as_mut().unwrap();
            // clamp outside the node range
            let (j, s) = if t <= times[0] {
                (0, 0.0)
            } else if t >= *times.last().unwrap() {
                (times.len() - 2, 1.0)
            } else {
                let j = times.partition_point(|&tj| tj <= t) - 1;
                let j = j.min(times.len() - 2);
                (j, (t - times[j]) / (times[j + 1] - times[j]))
            };
            let (a, b) = (&nodes[j], &nodes[j + 1]);
            for k1 in -m..=m {
                for k2 in -m..=m {
                    let ca = a.get(k1, k2);
                    let cb = b.get(k1, k2);
                    out.set(
                        k1,
                        k2,
                        [
                            (1.0 - s) * ca[0] + s * cb[0],
                            (1.0 - s) * ca[1] + s * cb[1],
                        ],
                    );
                }
            }
        }
    }
}

/// Drift evaluator for one step endpoint, prepared once per step.
enum DriftEval<'a> {
    Zero,
    Steady(&'a AnalyticVectorField),
    TaylorGreen { amp: f64 },
    Spectral(&'a SpectralVelocity),
}

impl<'a> DriftEval<'a> {
    fn prepare(drift: &'a Drift, t: f64, buf: &'a Option<SpectralVelocity>) -> DriftEval<'a> {
        match drift {
            Drift::Zero => DriftEval::Zero,
            Drift::Steady(f) => DriftEval::Steady(f),
            Drift::TaylorGreen { nu } => DriftEval::TaylorGreen {
                amp: (-2.0 * nu * t).exp(),
            },
            Drift::SpectralNodes { .. } => DriftEval::Spectral(buf.as_ref().unwrap()),
        }
    }

    /// Value and ambient Jacobian at y.
    #[inline]
    fn eval(&self, y: &[f64], val: &mut [f64], jac: &mut [f64], scratch: &mut EvalScratch) {
        match self {
            DriftEval::Zero => {
                val.fill(0.0);
                jac.fill(0.0);
            }
            DriftEval::Steady(f) => {
                f.value_into(y, val);
                f.ambient_jacobian_into(y, jac).expect("checked at entry");
            }
            DriftEval::TaylorGreen { amp } => {
                let (s1, c1) = y[0].sin_cos();
                let (s2, c2) = y[1].sin_cos();
                val[0] = amp * c1 * s2;
                val[1] = -amp * s1 * c2;
                jac[0] = -amp * s1 * s2;
                jac[1] = amp * c1 * c2;
                jac[2] = -amp * c1 * c2;
                jac[3] = amp * s1 * s2;
            }
            DriftEval::Spectral(u) => {
                let (v, g) = u.eval_with_grad(y, scratch);
                val[0] = v[0];
                val[1] = v[1];
                jac[0] = g[0][0];
                jac[1] = g[0][1];
                jac[2] = g[1][0];
                jac[3] = g[1][1];
            }
        }
    }

    /// Divergence at y (all built-in drifts are solenoidal except Steady).
    #[inline]
    fn divergence(&self, y: &[f64]) -> f64 {
        match self {
            DriftEval::Steady(f) => f.div_into(y),
            _ => 0.0,
        }
    }
}

/// One realization of the stochastic flow map on a grid of initial points.
#[derive(Clone, Debug)]
pub struct FlowEnsembleSample {
    pub sample_index: usize,
    pub manifold: Manifold,
    pub time: f64,
    pub initial_points: Vec<Point>,
    pub endpoints: Vec<Point>,
    /// per-point row-major d x d ambient Jacobians of the discrete flow map
    pub jacobians: Vec<Vec<f64>>,
    /// per-point Stratonovich exponent of the density formula:
    /// −Σ_i ∫ div(σA_i)(X_s) ∘ dW^i − ∫ div(u_s)(X_s) ds.
    /// Identically zero when every field is divergence-free; the tangent
    /// Jacobian determinant equals exp(−log_density).
    pub log_density: Vec<f64>,
}

/// Integrate one flow sample to t_end.
pub fn integrate_flow(
    config: &FlowConfig,
    drift: &Drift,
    noise: &NoiseModel,
    grid: &[Point],
    sample_index: usize,
) -> Result<FlowEnsembleSample> {
    let n_steps = config.n_steps()?;
    let mut out = integrate_flow_with_snapshots(config, drift, noise, grid, sample_index, &[n_steps])?;
    Ok(out.pop().expect("one snapshot requested"))
}

/// Integrate one flow sample, emitting snapshots after the given step counts
/// (ascending; step 0 is the identity map).
pub fn integrate_flow_with_snapshots(
    config: &FlowConfig,
    drift: &Drift,
    noise: &NoiseModel,
    grid: &[Point],
    sample_index: usize,
    snap_steps: &[usize],
) -> Result<Vec<FlowEnsembleSample>> {
    if grid.is_empty() {
        return Err(Error::Argument("empty initial grid".into()));
    }
    let manifold = grid[0].manifold();
    if grid.iter().any(|p| p.manifold() != manifold) {
        return Err(Error::Argument("grid points on mixed manifolds".into()));
    }
    let d = manifold.ambient_dim();
    if d > MAX_DIM {
        return Err(Error::Argument("ambient dimension too large".into()));
    }
    noise.check_compatible(manifold)?;
    drift.check_compatible(manifold)?;
    let n_steps = config.n_steps()?;
    if snap_steps.windows(2).any(|w| w[1] <= w[0]) || snap_steps.iter().any(|&s| s > n_steps) {
        return Err(Error::Argument("snapshot steps must be ascending and <= n_steps".into()));
    }
    let sphere = manifold.is_sphere();
    let dt = config.dt;
    let n_noise = noise.n_noise(manifold);
    let track_density = !(noise.divergence_free() && drift.divergence_free());

    // the same increments drive every grid point of this sample
    let streams = NoiseStreams::new(config.master_seed);
    let dw = streams.brownian_increments(sample_index as u64, n_noise, n_steps, dt);

    // per-point state
    let mut pos: Vec<f64> = Vec::with_capacity(grid.len() * d);
    for p in grid {
        pos.extend_from_slice(p.coords());
    }
    let mut jac = vec![0.0; grid.len() * d * d];
    for chunk in jac.chunks_exact_mut(d * d) {
        linalg::mat_identity(d, chunk);
    }
    let mut ell = vec![0.0f64; grid.len()];

    // scratch
    let mut scratch = EvalScratch::new(4);
    let mut spec_buf0: Option<SpectralVelocity> = None;
    let mut spec_buf1: Option<SpectralVelocity> = None;
    let mut b0 = vec![0.0; d];
    let mut b1 = vec![0.0; d];
    let mut db0 = vec![0.0; d * d];
    let mut db1 = vec![0.0; d * d];
    let mut yhat = vec![0.0; d];
    let mut ynew = vec![0.0; d];
    let mut dp = vec![0.0; d * d];
    let mut dc = vec![0.0; d * d];
    let mut tmp = vec![0.0; d * d];
    let mut tmp2 = vec![0.0; d * d];
    let mut sig0 = vec![0.0; n_noise * d];
    let mut sig1 = vec![0.0; n_noise * d];
    let mut dsig0 = vec![0.0; n_noise * d * d];
    let mut dsig1 = vec![0.0; n_noise * d * d];

    let mut snapshots = Vec::with_capacity(snap_steps.len());
    let mut snap_iter = snap_steps.iter().peekable();
    let emit = |step: usize,
                    pos: &[f64],
                    jac: &[f64],
                    ell: &[f64],
                    snapshots: &mut Vec<FlowEnsembleSample>|
     -> Result<()> {
        let endpoints = pos
            .chunks_exact(d)
            .map(|c| {
                let coords = if sphere {
                    c.to_vec()
                } else {
                    c.iter().map(|&v| reduce_angle(v)).collect()
                };
                Point::new(manifold, coords)
            })
            .collect::<Result<Vec<_>>>()?;
        snapshots.push(FlowEnsembleSample {
            sample_index,
            manifold,
            time: step as f64 * dt,
            initial_points: grid.to_vec(),
            endpoints,
            jacobians: jac.chunks_exact(d * d).map(|c| c.to_vec()).collect(),
            log_density: ell.to_vec(),
        });
        Ok(())
    };

    if snap_iter.peek() == Some(&&0) {
        emit(0, &pos, &jac, &ell, &mut snapshots)?;
        snap_iter.next();
    }

    for step in 0..n_steps {
        let t0 = step as f64 * dt;
        let t1 = t0 + dt;
        drift.blend_spectral(t0, &mut spec_buf0);
        drift.blend_spectral(t1, &mut spec_buf1);
        let dw_step = &dw[step * n_noise..(step + 1) * n_noise];

        for (pi, y) in pos.chunks_exact_mut(d).enumerate() {
            let eval0 = DriftEval::prepare(drift, t0, &spec_buf0);
            let eval1 = DriftEval::prepare(drift, t1, &spec_buf1);
            eval0.eval(y, &mut b0, &mut db0, &mut scratch);
            eval_noise(noise, y, &mut sig0, &mut dsig0, d);

            // predictor: yhat = y + dt b0 + Σ σ_i ΔW_i; DP likewise
            yhat.copy_from_slice(y);
            for a in 0..d {
                yhat[a] += dt * b0[a];
            }
            for (a, v) in dp.iter_mut().zip(db0.iter()) {
                *a = dt * v;
            }
            for i in 0..d {
                dp[i * d + i] += 1.0;
            }
            add_noise_terms(noise, dw_step, &sig0, &dsig0, &mut yhat, &mut dp, d);

            // corrector
            eval1.eval(&yhat, &mut b1, &mut db1, &mut scratch);
            eval_noise(noise, &yhat, &mut sig1, &mut dsig1, d);
            ynew.copy_from_slice(y);
            for a in 0..d {
                ynew[a] += 0.5 * dt * (b0[a] + b1[a]);
            }
            // DC = I + dt/2 (Db0 + Db1 DP) + Σ ΔW_i/2 (Dσ_i(y) + Dσ_i(ŷ) DP)
            linalg::mat_mul(d, &db1, &dp, &mut tmp);
            for a in 0..d * d {
                dc[a] = 0.5 * dt * (db0[a] + tmp[a]);
            }
            for i in 0..d {
                dc[i * d + i] += 1.0;
            }
            add_corrector_noise(noise, dw_step, &sig0, &sig1, &dsig0, &dsig1, &dp, &mut ynew, &mut dc, &mut tmp, &mut tmp2, d);

            // sphere retraction, differentiated
            if sphere {
                let r = linalg::norm(&ynew);
                if (r - 1.0).abs() > 0.1 {
                    return Err(Error::Integration {
                        t: t0,
                        msg: format!(
                            "renormalization correction |r-1| = {} > 0.1 at grid point {pi}; reduce dt",
                            (r - 1.0).abs()
                        ),
                    });
                }
                for a in &mut ynew {
                    *a /= r;
                }
                // DN = (I − n n^T)/r at the renormalized point
                for a in 0..d {
                    for b in 0..d {
                        tmp[a * d + b] = (if a == b { 1.0 } else { 0.0 } - ynew[a] * ynew[b]) / r;
                    }
                }
                linalg::mat_mul(d, &tmp, &dc, &mut tmp2);
                dc.copy_from_slice(&tmp2);
            }

            // density exponent, Stratonovich midpoint via endpoint average
            if track_density {
                let mut incr = 0.0;
                match noise {
                    NoiseModel::ConstantDiffusion { .. } => {}
                    NoiseModel::FamilyDriven { sigma, family } => {
                        for (i, f) in family.fields().iter().enumerate() {
                            let d0 = f.div_into(y);
                            let d1 = f.div_into(&ynew);
                            incr -= 0.5 * (d0 + d1) * sigma * dw_step[i];
                        }
                    }
                }
                let eval1b = DriftEval::prepare(drift, t1, &spec_buf1);
                incr -= 0.5 * (eval0.divergence(y) + eval1b.divergence(&ynew)) * dt;
                ell[pi] += incr;
            }

            // advance: J <- DC * J, y <- ynew
            let jslot = &mut jac[pi * d * d..(pi + 1) * d * d];
            linalg::mat_mul(d, &dc, jslot, &mut tmp);
            jslot.copy_from_slice(&tmp[..d * d]);
            y.copy_from_slice(&ynew);
        }

        if snap_iter.peek() == Some(&&(step + 1)) {
            emit(step + 1, &pos, &jac, &ell, &mut snapshots)?;
            snap_iter.next();
        }
    }
    Ok(snapshots)
}

#[inline]
fn eval_noise(noise: &NoiseModel, y: &[f64], sig: &mut [f64], dsig: &mut [f64], d: usize) {
    match noise {
        NoiseModel::ConstantDiffusion { .. } => {
            // handled directly in add_noise_terms; no per-point evaluation
        }
        NoiseModel::FamilyDriven { sigma, family } => {
            for (i, f) in family.fields().iter().enumerate() {
                let val = &mut sig[i * d..(i + 1) * d];
                f.value_into(y, val);
                for v in val.iter_mut() {
                    *v *= *sigma;
                }
                let jslot = &mut dsig[i * d * d..(i + 1) * d * d];
                f.ambient_jacobian_into(y, jslot).expect("checked at entry");
                for v in jslot.iter_mut() {
                    *v *= *sigma;
                }
            }
        }
    }
}

#[inline]
fn add_noise_terms(
    noise: &NoiseModel,
    dw: &[f64],
    sig: &[f64],
    dsig: &[f64],
    y: &mut [f64],
    dmat: &mut [f64],
    d: usize,
) {
    match noise {
        NoiseModel::ConstantDiffusion { sigma } => {
            for a in 0..d {
                y[a] += sigma * dw[a];
            }
        }
        NoiseModel::FamilyDriven { .. } => {
            for (i, &w) in dw.iter().enumerate() {
                let val = &sig[i * d..(i + 1) * d];
                for a in 0..d {
                    y[a] += w * val[a];
                }
                let jslot = &dsig[i * d * d..(i + 1) * d * d];
                for a in 0..d * d {
                    dmat[a] += w * jslot[a];
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn add_corrector_noise(
    noise: &NoiseModel,
    dw: &[f64],
    sig0: &[f64],
    sig1: &[f64],
    dsig0: &[f64],
    dsig1: &[f64],
    dp: &[f64],
    y: &mut [f64],
    dc: &mut [f64],
    tmp: &mut [f64],
    tmp2: &mut [f64],
    d: usize,
) {
    match noise {
        NoiseModel::ConstantDiffusion { sigma } => {
            for a in 0..d {
                y[a] += sigma * dw[a];
            }
        }
        NoiseModel::FamilyDriven { .. } => {
            for (i, &w) in dw.iter().enumerate() {
                let v0 = &sig0[i * d..(i + 1) * d];
                let v1 = &sig1[i * d..(i + 1) * d];
                for a in 0..d {
                    y[a] += 0.5 * w * (v0[a] + v1[a]);
                }
                let j0 = &dsig0[i * d * d..(i + 1) * d * d];
                let j1 = &dsig1[i * d * d..(i + 1) * d * d];
                tmp2[..d * d].copy_from_slice(&j1[..d * d]);
                linalg::mat_mul(d, tmp2, dp, tmp);
                for a in 0..d * d {
                    dc[a] += 0.5 * w * (j0[a] + tmp[a]);
                }
            }
        }
    }
}

/// Pull a field back through the flow: (dX_t(x))^{-1} v(X_t(x)).
///
/// On the sphere the inverse acts on the tangent-restricted block in the
/// deterministic orthonormal frames at x and X_t(x).
pub fn pullback_field(
    sample: &FlowEnsembleSample,
    v: &AnalyticVectorField,
    x: &Point,
) -> Result<crate::geometry::TangentVector> {
    let idx = sample
        .initial_points
        .iter()
        .position(|p| p.coords() == x.coords())
        .ok_or_else(|| Error::Argument("x is not one of the sample's initial points".into()))?;
    pullback_at(sample, v, idx)
}

/// [`pullback_field`] by grid index.
pub fn pullback_at(
    sample: &FlowEnsembleSample,
    v: &AnalyticVectorField,
    idx: usize,
) -> Result<crate::geometry::TangentVector> {
    let d = sample.manifold.ambient_dim();
    let x = &sample.initial_points[idx];
    let y = &sample.endpoints[idx];
    let jac = &sample.jacobians[idx];
    let vy = v.value(y);
    let mut out = vec![0.0; d];
    if sample.manifold.is_sphere() {
        let n = d - 1;
        let fx = tangent_frame(x);
        let fy = tangent_frame(y);
        // m[a][b] = <f_y[a], J f_x[b]>
        let mut m = vec![0.0; n * n];
        let mut jb = vec![0.0; d];
        for b in 0..n {
            linalg::mat_vec(d, jac, &fx[b], &mut jb);
            for a in 0..n {
                m[a * n + b] = linalg::dot(&fy[a], &jb);
            }
        }
        check_condition_proxy(n, &m)?;
        let rhs: Vec<f64> = (0..n).map(|a| linalg::dot(&fy[a], &vy.components)).collect();
        let mut c = vec![0.0; n];
        linalg::solve(n, &m, &rhs, &mut c)?;
        for b in 0..n {
            for a in 0..d {
                out[a] += c[b] * fx[b][a];
            }
        }
    } else {
        check_condition_proxy(d, jac)?;
        linalg::solve(d, jac, &vy.components, &mut out)?;
    }
    crate::geometry::TangentVector::new(x.clone(), out)
}

/// Reject matrices whose condition number proxy ||A||_F^n / |det A| is
/// beyond 1e12.
fn check_condition_proxy(n: usize, a: &[f64]) -> Result<()> {
    let det = linalg::det(n, a).abs();
    let fro = linalg::frobenius(&a[..n * n]);
    if det == 0.0 || fro.powi(n as i32) / det > 1e12 {
        return Err(Error::Numerical(
            "flow Jacobian is numerically singular".into(),
        ));
    }
    Ok(())
}

/// Determinant of the tangent-restricted Jacobian at grid index `idx`.
pub fn tangent_det(sample: &FlowEnsembleSample, idx: usize) -> f64 {
    let d = sample.manifold.ambient_dim();
    let jac = &sample.jacobians[idx];
    if sample.manifold.is_sphere() {
        let n = d - 1;
        let fx = tangent_frame(&sample.initial_points[idx]);
        let fy = tangent_frame(&sample.endpoints[idx]);
        let mut m = vec![0.0; n * n];
        let mut jb = vec![0.0; d];
        for b in 0..n {
            linalg::mat_vec(d, jac, &fx[b], &mut jb);
            for a in 0..n {
                m[a * n + b] = linalg::dot(&fy[a], &jb);
            }
        }
        // frame orientations are arbitrary; volume scaling is |det|
        linalg::det(n, &m).abs()
    } else {
        linalg::det(d, jac)
    }
}

/// Max over the grid of |det(tangent Jacobian) − exp(−log_density)|.
/// In divergence-free settings this reduces to max |det − 1|.
pub fn volume_defect(sample: &FlowEnsembleSample) -> f64 {
    (0..sample.initial_points.len())
        .map(|i| (tangent_det(sample, i) - (-sample.log_density[i]).exp()).abs())
        .fold(0.0, f64::max)
}

/// |∫ f dx − E Σ_j w_j f(X_t(x_j)) exp(−log_density_j)|: the change of
/// variables identity that couples the density exponent to the flow.
pub fn density_consistency(
    samples: &[FlowEnsembleSample],
    quad: &Quadrature,
    f: impl Fn(&Point) -> f64,
) -> f64 {
    let lhs = quad.integrate(&f);
    let per_sample: Vec<f64> = samples
        .iter()
        .map(|s| {
            let vals: Vec<f64> = s
                .endpoints
                .iter()
                .zip(&s.log_density)
                .zip(&quad.weights)
                .map(|((p, ell), w)| w * f(p) * (-ell).exp())
                .collect();
            linalg::pairwise_sum(&vals)
        })
        .collect();
    let mean = linalg::pairwise_sum(&per_sample) / per_sample.len() as f64;
    (lhs - mean).abs()
}

/// Cross-check the transported Jacobian against central finite differences
/// of the endpoints with respect to the initial point (same noise).
/// Returns the max absolute entry difference over the checked points.
pub fn jacobian_fd_check(
    config: &FlowConfig,
    drift: &Drift,
    noise: &NoiseModel,
    grid: &[Point],
    sample_index: usize,
    check_indices: &[usize],
    h: f64,
) -> Result<f64> {
    let base = integrate_flow(config, drift, noise, grid, sample_index)?;
    let manifold = grid[0].manifold();
    let d = manifold.ambient_dim();
    let mut worst = 0.0f64;
    for &idx in check_indices {
        let x = &grid[idx];
        let frame: Vec<Vec<f64>> = if manifold.is_sphere() {
            tangent_frame(x)
        } else {
            (0..d)
                .map(|i| {
                    let mut e = vec![0.0; d];
                    e[i] = 1.0;
                    e
                })
                .collect()
        };
        for dir in &frame {
            let xp = crate::geometry::geodesic_step(x, dir, h);
            let xm = crate::geometry::geodesic_step(x, dir, -h);
            let sp = integrate_flow(config, drift, noise, &[xp], sample_index)?;
            let sm = integrate_flow(config, drift, noise, &[xm], sample_index)?;
            let mut jd = vec![0.0; d];
            linalg::mat_vec(d, &base.jacobians[idx], dir, &mut jd);
            for a in 0..d {
                let mut delta = sp.endpoints[0].coords()[a] - sm.endpoints[0].coords()[a];
                if !manifold.is_sphere() {
                    // unwrap the periodic difference
                    if delta > std::f64::consts::PI {
                        delta -= std::f64::consts::TAU;
                    }
                    if delta < -std::f64::consts::PI {
                        delta += std::f64::consts::TAU;
                    }
                }
                let fd = delta / (2.0 * h);
                worst = worst.max((fd - jd[a]).abs());
            }
        }
    }
    Ok(worst)
}

/// FNV-1a hash of a byte string, used in the ensemble dump header.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Binary dump of flow samples for offline analysis.
///
/// Layout (all integers and floats little-endian):
///   magic "MNSLFLW1" (8 bytes)
///   u32 version = 1
///   u64 config hash (FNV-1a of the canonical config JSON)
///   u32 ambient dimension d, u32 n_points, u32 n_samples
///   per sample: u64 sample_index, f64 time,
///               then per point: d endpoint coords, d*d Jacobian entries
///               (row-major), 1 log-density value.
pub fn write_ensemble_dump(
    path: &Path,
    config_json: &str,
    samples: &[FlowEnsembleSample],
) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Argument("no samples to dump".into()));
    }
    let d = samples[0].manifold.ambient_dim();
    let n_points = samples[0].initial_points.len();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(b"MNSLFLW1")?;
    f.write_all(&1u32.to_le_bytes())?;
    f.write_all(&fnv1a64(config_json.as_bytes()).to_le_bytes())?;
    f.write_all(&(d as u32).to_le_bytes())?;
    f.write_all(&(n_points as u32).to_le_bytes())?;
    f.write_all(&(samples.len() as u32).to_le_bytes())?;
    for s in samples {
        f.write_all(&(s.sample_index as u64).to_le_bytes())?;
        f.write_all(&s.time.to_le_bytes())?;
        for i in 0..n_points {
            for c in s.endpoints[i].coords() {
                f.write_all(&c.to_le_bytes())?;
            }
            for j in &s.jacobians[i] {
                f.write_all(&j.to_le_bytes())?;
            }
            f.write_all(&s.log_density[i].to_le_bytes())?;
        }
    }
    Ok(())
}

/// CSV export of a (time, volume defect) series.
pub fn write_defect_csv(path: &Path, series: &[(f64, f64)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(b"t,volume_defect\n")?;
    for (t, defect) in series {
        write!(f, "{:.12e},{:.17e}\n", t, defect)?;
    }
    Ok(())
}

/// Volume-defect time series: max over grid and samples at every
/// `stride`-step snapshot.
pub fn volume_defect_series(
    config: &FlowConfig,
    drift: &Drift,
    noise: &NoiseModel,
    grid: &[Point],
    stride: usize,
) -> Result<Vec<(f64, f64)>> {
    use rayon::prelude::*;
    let n_steps = config.n_steps()?;
    let snaps: Vec<usize> = (0..=n_steps).step_by(stride.max(1)).collect();
    let per_sample: Vec<Vec<(f64, f64)>> = (0..config.n_samples)
        .into_par_iter()
        .map(|s| {
            let snapshots =
                integrate_flow_with_snapshots(config, drift, noise, grid, s, &snaps)?;
            Ok(snapshots
                .iter()
                .map(|snap| (snap.time, volume_defect(snap)))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out = per_sample[0].clone();
    for series in &per_sample[1..] {
        for (acc, (_, d)) in out.iter_mut().zip(series) {
            acc.1 = acc.1.max(*d);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{build_sphere_killing_family, plane_rotation_generator, killing_field_from_skew};
    use crate::geometry::sample_points;
    use approx::assert_abs_diff_eq;

    fn torus_const_field(c: [f64; 2]) -> AnalyticVectorField {
        let manifold = Manifold::torus(2);
        AnalyticVectorField::new(
            manifold,
            Arc::new(move |_x, out| out.copy_from_slice(&c)),
            Arc::new(move |_x, _v, out| out.fill(0.0)),
            Arc::new(|_x| 0.0),
        )
        .with_ambient_jacobian(Arc::new(|_x, out| out.fill(0.0)))
    }

    #[test]
    fn deterministic_rotation_flow_is_an_isometry() {
        // zero noise is not allowed by the config, so use a tiny noise-free
        // surrogate: integrate the ODE by passing a family-driven noise with
        // zero increments is not possible; instead test the drift-only path
        // with ConstantDiffusion on the torus below and the rotation flow
        // through the pullback test, which uses a very small viscosity.
        let fam = build_sphere_killing_family(2).unwrap();
        let gen = plane_rotation_generator(0, 1, 3);
        let drift = Drift::Steady(killing_field_from_skew(&gen));
        // sigma tiny: noise negligible against the deterministic rotation
        let noise = NoiseModel::family_driven(1e-18, fam).unwrap();
        let t_end = std::f64::consts::FRAC_PI_2;
        let n_steps = 1571;
        let config = FlowConfig::new(t_end / n_steps as f64, t_end, 7, 1).unwrap();
        let grid = sample_points(Manifold::sphere(2), 6, 3);
        let sample = integrate_flow(&config, &drift, &noise, &grid, 0).unwrap();
        let rot = gen.scaled(t_end).exp();
        for (i, p) in grid.iter().enumerate() {
            let mut want = vec![0.0; 3];
            linalg::mat_vec(3, &rot, p.coords(), &mut want);
            for a in 0..3 {
                assert_abs_diff_eq!(sample.endpoints[i].coords()[a], want[a], epsilon = 1e-5);
            }
            // on tangent vectors the Jacobian acts as the rotation (the
            // renormalization derivative annihilates the radial direction)
            for dir in tangent_frame(p) {
                let mut jd = vec![0.0; 3];
                let mut rd = vec![0.0; 3];
                linalg::mat_vec(3, &sample.jacobians[i], &dir, &mut jd);
                linalg::mat_vec(3, &rot, &dir, &mut rd);
                for a in 0..3 {
                    assert_abs_diff_eq!(jd[a], rd[a], epsilon = 1e-5);
                }
            }
            let det = tangent_det(&sample, i);
            assert_abs_diff_eq!(det, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn additive_torus_noise_translates_rigidly() {
        let config = FlowConfig::new(1e-2, 0.5, 99, 1).unwrap();
        let noise = NoiseModel::constant(0.1).unwrap();
        let grid = sample_points(Manifold::torus(2), 8, 5);
        let sample = integrate_flow(&config, &Drift::Zero, &noise, &grid, 0).unwrap();
        // same displacement for every point
        let delta0: Vec<f64> = sample.endpoints[0]
            .coords()
            .iter()
            .zip(grid[0].coords())
            .map(|(a, b)| reduce_angle(a - b))
            .collect();
        for (i, p) in grid.iter().enumerate() {
            for a in 0..2 {
                let delta = reduce_angle(sample.endpoints[i].coords()[a] - p.coords()[a]);
                assert_abs_diff_eq!(delta, delta0[a], epsilon = 1e-12);
            }
            // identity Jacobian, exactly
            assert_eq!(sample.jacobians[i], vec![1.0, 0.0, 0.0, 1.0]);
            assert_eq!(sample.log_density[i], 0.0);
        }
    }

    #[test]
    fn killing_noise_flow_preserves_volume_and_density() {
        let fam = build_sphere_killing_family(2).unwrap();
        let noise = NoiseModel::family_driven(0.05, fam).unwrap();
        let config = FlowConfig::new(1e-3, 0.2, 42, 2).unwrap();
        let grid = sample_points(Manifold::sphere(2), 12, 8);
        for s in 0..2 {
            let sample = integrate_flow(&config, &Drift::Zero, &noise, &grid, s).unwrap();
            for i in 0..grid.len() {
                assert_eq!(sample.log_density[i], 0.0);
                let nrm = linalg::norm(sample.endpoints[i].coords());
                assert!((nrm - 1.0).abs() <= 1e-10);
                assert!((tangent_det(&sample, i) - 1.0).abs() <= 1e-3);
                // tangency of Jacobian columns against the end normal
                let frame = tangent_frame(&sample.initial_points[i]);
                let mut jcol = vec![0.0; 3];
                for b in &frame {
                    linalg::mat_vec(3, &sample.jacobians[i], b, &mut jcol);
                    let ip = linalg::dot(&jcol, sample.endpoints[i].coords());
                    assert!(ip.abs() <= 1e-8, "tangency violated: {ip}");
                }
            }
        }
    }

    #[test]
    fn integration_is_bit_deterministic() {
        let fam = build_sphere_killing_family(2).unwrap();
        let noise = NoiseModel::family_driven(0.1, fam).unwrap();
        let config = FlowConfig::new(1e-2, 0.3, 1234, 1).unwrap();
        let grid = sample_points(Manifold::sphere(2), 5, 6);
        let a = integrate_flow(&config, &Drift::Zero, &noise, &grid, 3).unwrap();
        let b = integrate_flow(&config, &Drift::Zero, &noise, &grid, 3).unwrap();
        for i in 0..grid.len() {
            for (x, y) in a.endpoints[i].coords().iter().zip(b.endpoints[i].coords()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.jacobians[i].iter().zip(&b.jacobians[i]) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_torus() {
        let config = FlowConfig::new(1e-2, 0.3, 31, 1).unwrap();
        let noise = NoiseModel::constant(0.1).unwrap();
        let drift = Drift::TaylorGreen { nu: 0.1 };
        let grid = sample_points(Manifold::torus(2), 4, 9);
        let worst = jacobian_fd_check(&config, &drift, &noise, &grid, 0, &[0, 1, 2, 3], 1e-4).unwrap();
        assert!(worst <= 1e-5, "jacobian fd mismatch {worst}");
    }

    #[test]
    fn jacobian_matches_finite_differences_sphere() {
        let fam = build_sphere_killing_family(2).unwrap();
        let noise = NoiseModel::family_driven(0.05, fam).unwrap();
        let config = FlowConfig::new(1e-3, 0.1, 77, 1).unwrap();
        let grid = sample_points(Manifold::sphere(2), 3, 10);
        let worst = jacobian_fd_check(&config, &Drift::Zero, &noise, &grid, 0, &[0, 1, 2], 1e-4).unwrap();
        assert!(worst <= 1e-5, "jacobian fd mismatch {worst}");
    }

    #[test]
    fn pullback_at_time_zero_is_identity() {
        let config = FlowConfig::new(1e-2, 0.1, 5, 1).unwrap();
        let noise = NoiseModel::constant(0.1).unwrap();
        let grid = sample_points(Manifold::torus(2), 5, 11);
        let snaps =
            integrate_flow_with_snapshots(&config, &Drift::Zero, &noise, &grid, 0, &[0]).unwrap();
        let v = crate::families::build_torus_family(2, 3.0, 1).unwrap().fields()[0].clone();
        for (i, p) in grid.iter().enumerate() {
            let pulled = pullback_at(&snaps[0], &v, i).unwrap();
            let direct = v.value(p);
            assert_eq!(pulled.components, direct.components);
        }
    }

    #[test]
    fn pullback_through_rotation_is_adjoint_transport() {
        // deterministic rotation flow: (g^{-1})_* A_xi = A_{Ad_{g^{-1}} xi}
        let fam = build_sphere_killing_family(2).unwrap();
        let gen = plane_rotation_generator(0, 2, 3);
        let drift = Drift::Steady(killing_field_from_skew(&gen));
        let noise = NoiseModel::family_driven(1e-18, fam).unwrap();
        let t_end = 0.8;
        let config = FlowConfig::new(t_end / 800.0, t_end, 3, 1).unwrap();
        let grid = sample_points(Manifold::sphere(2), 5, 12);
        let sample = integrate_flow(&config, &drift, &noise, &grid, 0).unwrap();
        let g = gen.scaled(t_end).exp();
        let mut ginv = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                ginv[i * 3 + j] = g[j * 3 + i];
            }
        }
        let xi = crate::families::SkewMatrix::basis(0, 1, 3);
        let v = killing_field_from_skew(&xi);
        let transported = killing_field_from_skew(&crate::families::adjoint(&ginv, &xi));
        for (i, p) in grid.iter().enumerate() {
            let pulled = pullback_at(&sample, &v, i).unwrap();
            let want = transported.value(p);
            for a in 0..3 {
                assert_abs_diff_eq!(pulled.components[a], want.components[a], epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn pullback_through_translation_shifts_argument() {
        let c = [0.4, -0.3];
        let drift = Drift::Steady(torus_const_field(c));
        let noise = NoiseModel::constant(1e-18).unwrap();
        let config = FlowConfig::new(1e-2, 1.0, 2, 1).unwrap();
        let grid = sample_points(Manifold::torus(2), 5, 13);
        let sample = integrate_flow(&config, &drift, &noise, &grid, 0).unwrap();
        let v = crate::families::build_torus_family(2, 3.0, 1).unwrap().fields()[2].clone();
        for (i, p) in grid.iter().enumerate() {
            let pulled = pullback_at(&sample, &v, i).unwrap();
            let shifted = Point::torus(vec![p.coords()[0] + c[0], p.coords()[1] + c[1]]).unwrap();
            let want = v.value(&shifted);
            for a in 0..2 {
                assert_abs_diff_eq!(pulled.components[a], want.components[a], epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn density_consistency_constant_function() {
        let fam = crate::families::build_sphere_gradient_family(2).unwrap();
        let noise = NoiseModel::family_driven(0.05, fam).unwrap();
        let config = FlowConfig::new(2e-3, 0.1, 21, 4).unwrap();
        let quad = Quadrature::sphere_design();
        let samples: Vec<FlowEnsembleSample> = (0..config.n_samples)
            .map(|s| integrate_flow(&config, &Drift::Zero, &noise, &quad.points, s).unwrap())
            .collect();
        // f == 1 reduces to the change-of-variables identity for the total
        // measure; the residual is quadratureplus-integration error only
        let r = density_consistency(&samples, &quad, |_| 1.0);
        assert!(r <= 2e-3 * quad.manifold.volume(), "residual {r}");
        // the density exponent is genuinely nonzero for the gradient family
        assert!(samples[0].log_density.iter().any(|&l| l != 0.0));
    }

    #[test]
    fn density_consistency_divfree_mode() {
        let config = FlowConfig::new(1e-2, 0.5, 8, 3).unwrap();
        let noise = NoiseModel::constant(0.1).unwrap();
        let drift = Drift::TaylorGreen { nu: 0.1 };
        let quad = Quadrature::torus_grid(32).unwrap();
        let samples: Vec<FlowEnsembleSample> = (0..3)
            .map(|s| integrate_flow(&config, &drift, &noise, &quad.points, s).unwrap())
            .collect();
        let r = density_consistency(&samples, &quad, |p| p.coords()[0].cos());
        assert!(r <= 1e-3, "residual {r}");
    }

    #[test]
    fn heat_kernel_weak_order() {
        // E[cos θ1(X_t)] = e^{-νt} cos θ1(x): additive noise is exact in
        // distribution, so the error is pure Monte Carlo
        let nu = 0.1;
        let t = 0.5;
        let n = 400;
        let config = FlowConfig::new(1e-2, t, 2024, n).unwrap();
        let noise = NoiseModel::constant(nu).unwrap();
        let x = Point::torus(vec![0.3, 1.2]).unwrap();
        let vals: Vec<f64> = (0..n)
            .map(|s| {
                let sample = integrate_flow(&config, &Drift::Zero, &noise, &[x.clone()], s).unwrap();
                sample.endpoints[0].coords()[0].cos()
            })
            .collect();
        let (mean, se) = linalg::mean_and_std_error(&vals);
        let want = (-nu * t).exp() * 0.3f64.cos();
        assert!(
            (mean - want).abs() <= 3.0 * se + 1e-12,
            "mean {mean} want {want} se {se}"
        );
    }

    #[test]
    fn step_rejection_on_large_renormalization() {
        let fam = build_sphere_killing_family(2).unwrap();
        let noise = NoiseModel::family_driven(200.0, fam).unwrap();
        let config = FlowConfig::new(0.5, 1.0, 3, 1).unwrap();
        let grid = sample_points(Manifold::sphere(2), 2, 14);
        let r = integrate_flow(&config, &Drift::Zero, &noise, &grid, 0);
        assert!(matches!(r, Err(Error::Integration { .. })));
    }

    #[test]
    fn ensemble_dump_round_trips_header() {
        let config = FlowConfig::new(1e-2, 0.1, 5, 1).unwrap();
        let noise = NoiseModel::constant(0.1).unwrap();
        let grid = sample_points(Manifold::torus(2), 3, 15);
        let sample = integrate_flow(&config, &Drift::Zero, &noise, &grid, 0).unwrap();
        let dir = std::env::temp_dir().join("mnsl_dump_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("flow.bin");
        write_ensemble_dump(&path, "{\"cfg\":1}", &[sample]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"MNSLFLW1");
        let expected =
            8 + 4 + 8 + 4 + 4 + 4 + (8 + 8 + 3 * (2 + 4 + 1) * 8);
        assert_eq!(bytes.len(), expected);
    }
}
