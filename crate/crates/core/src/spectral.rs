//! Divergence-free Fourier analysis on T²: truncated coefficient velocities,
//! the Leray–Hodge projection, synthesis/analysis between coefficients and
//! grid values, point evaluation kernels for the flow integrator, a
//! pseudo-spectral reference solver in vorticity form, and the exact
//! decaying-vortex and shear solutions used as oracles.
//!
//! Convention: u(θ) = Σ_{|k|_∞ ≤ M} û_k e^{i k·θ} with û_{-k} = conj(û_k)
//! and ⟨k, û_k⟩ = 0 for stored modes.

use crate::error::{Error, Result};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::f64::consts::TAU;
use std::io::{BufRead, Write};
use std::path::Path;

pub const REALITY_TOL: f64 = 1e-12;
pub const INCOMPRESSIBILITY_TOL: f64 = 1e-12;

/// Truncated Fourier representation of a velocity field on T².
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralVelocity {
    m_max: i32,
    /// (2M+1)² complex pairs, index (k1+M)*(2M+1) + (k2+M)
    coeffs: Vec<[Complex64; 2]>,
}

impl SpectralVelocity {
    pub fn zero(m_max: i32) -> Self {
        assert!(m_max >= 0);
        let side = (2 * m_max + 1) as usize;
        SpectralVelocity {
            m_max,
            coeffs: vec![[Complex64::new(0.0, 0.0); 2]; side * side],
        }
    }

    pub fn m_max(&self) -> i32 {
        self.m_max
    }

    #[inline]
    fn idx(&self, k1: i32, k2: i32) -> usize {
        debug_assert!(k1.abs() <= self.m_max && k2.abs() <= self.m_max);
        let side = (2 * self.m_max + 1) as usize;
        ((k1 + self.m_max) as usize) * side + (k2 + self.m_max) as usize
    }

    #[inline]
    pub fn get(&self, k1: i32, k2: i32) -> [Complex64; 2] {
        self.coeffs[self.idx(k1, k2)]
    }

    pub fn set(&mut self, k1: i32, k2: i32, value: [Complex64; 2]) {
        let i = self.idx(k1, k2);
        self.coeffs[i] = value;
    }

    /// The k = 0 mode.
    pub fn mean(&self) -> [f64; 2] {
        let c = self.get(0, 0);
        [c[0].re, c[1].re]
    }

    /// All modes (k1, k2, û_k), lexicographic in (k1, k2).
    pub fn modes(&self) -> impl Iterator<Item = (i32, i32, [Complex64; 2])> + '_ {
        let m = self.m_max;
        (-m..=m).flat_map(move |k1| (-m..=m).map(move |k2| (k1, k2, self.get(k1, k2))))
    }

    /// Check the reality and incompressibility invariants.
    pub fn validate(&self) -> Result<()> {
        for (k1, k2, c) in self.modes() {
            let conj = self.get(-k1, -k2);
            for a in 0..2 {
                if (c[a] - conj[a].conj()).norm() > REALITY_TOL {
                    return Err(Error::Argument(format!(
                        "reality symmetry broken at k = ({k1}, {k2})"
                    )));
                }
            }
            if (k1, k2) != (0, 0) {
                let div = k1 as f64 * c[0] + k2 as f64 * c[1];
                if div.norm() > INCOMPRESSIBILITY_TOL {
                    return Err(Error::Argument(format!(
                        "mode ({k1}, {k2}) is not divergence-free: |<k,u_k>| = {}",
                        div.norm()
                    )));
                }
            }
        }
        Ok(())
    }

    /// L² norm over T²: (∫|u|²)^{1/2} = 2π (Σ_k |û_k|²)^{1/2}.
    pub fn l2_norm(&self) -> f64 {
        TAU * self
            .coeffs
            .iter()
            .map(|c| c[0].norm_sqr() + c[1].norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Kinetic energy ∫|u|² dθ.
    pub fn energy(&self) -> f64 {
        let s: f64 = self
            .coeffs
            .iter()
            .map(|c| c[0].norm_sqr() + c[1].norm_sqr())
            .sum();
        TAU * TAU * s
    }

    pub fn scaled(&self, s: f64) -> SpectralVelocity {
        let mut out = self.clone();
        for c in &mut out.coeffs {
            c[0] *= s;
            c[1] *= s;
        }
        out
    }

    /// L² distance to another velocity with the same cutoff.
    pub fn l2_distance(&self, other: &SpectralVelocity) -> f64 {
        assert_eq!(self.m_max, other.m_max);
        let s: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a[0] - b[0]).norm_sqr() + (a[1] - b[1]).norm_sqr())
            .sum();
        TAU * s.sqrt()
    }

    /// Copy into a (possibly larger) band.
    pub fn embedded(&self, m_max: i32) -> SpectralVelocity {
        assert!(m_max >= self.m_max);
        let mut out = SpectralVelocity::zero(m_max);
        for (k1, k2, c) in self.modes() {
            out.set(k1, k2, c);
        }
        out
    }

    /// Enforce reality by averaging conjugate mode pairs.
    pub fn symmetrized(&self) -> SpectralVelocity {
        let mut out = self.clone();
        let m = self.m_max;
        for k1 in -m..=m {
            for k2 in -m..=m {
                let a = self.get(k1, k2);
                let b = self.get(-k1, -k2);
                out.set(
                    k1,
                    k2,
                    [0.5 * (a[0] + b[0].conj()), 0.5 * (a[1] + b[1].conj())],
                );
            }
        }
        out
    }

    /// Pointwise evaluation; allocates scratch, use [`EvalScratch`] in loops.
    pub fn eval(&self, theta: &[f64]) -> [f64; 2] {
        let mut scratch = EvalScratch::new(self.m_max);
        self.eval_with_grad(theta, &mut scratch).0
    }

    /// Value and spatial gradient at θ. `grad[a][b]` = ∂u_a/∂θ_b.
    pub fn eval_with_grad(
        &self,
        theta: &[f64],
        scratch: &mut EvalScratch,
    ) -> ([f64; 2], [[f64; 2]; 2]) {
        scratch.fill_powers(self.m_max, theta);
        let m = self.m_max;
        let side = (2 * m + 1) as usize;
        let mut val = [0.0f64; 2];
        let mut grad = [[0.0f64; 2]; 2];
        for (i1, z1) in scratch.zp1[..side].iter().enumerate() {
            let k1 = i1 as f64 - m as f64;
            let row = i1 * side;
            for (i2, z2) in scratch.zp2[..side].iter().enumerate() {
                let k2 = i2 as f64 - m as f64;
                let phase = z1 * z2;
                let c = &self.coeffs[row + i2];
                for a in 0..2 {
                    let g = c[a] * phase;
                    val[a] += g.re;
                    // derivative factor i k_b only contributes -k_b Im(g)
                    grad[a][0] -= k1 * g.im;
                    grad[a][1] -= k2 * g.im;
                }
            }
        }
        (val, grad)
    }
}

/// Reusable power tables e^{i p θ₁}, e^{i q θ₂} for p, q ∈ [-M, M].
pub struct EvalScratch {
    zp1: Vec<Complex64>,
    zp2: Vec<Complex64>,
}

impl EvalScratch {
    pub fn new(m_max: i32) -> Self {
        let side = (2 * m_max + 1) as usize;
        EvalScratch {
            zp1: vec![Complex64::new(1.0, 0.0); side],
            zp2: vec![Complex64::new(1.0, 0.0); side],
        }
    }

    fn fill_powers(&mut self, m: i32, theta: &[f64]) {
        let side = (2 * m + 1) as usize;
        if self.zp1.len() < side {
            self.zp1.resize(side, Complex64::new(1.0, 0.0));
            self.zp2.resize(side, Complex64::new(1.0, 0.0));
        }
        fill_power_table(&mut self.zp1[..side], m, theta[0]);
        fill_power_table(&mut self.zp2[..side], m, theta[1]);
    }
}

fn fill_power_table(out: &mut [Complex64], m: i32, theta: f64) {
    let (s, c) = theta.sin_cos();
    let z = Complex64::new(c, s);
    let mu = m as usize;
    out[mu] = Complex64::new(1.0, 0.0);
    for p in 1..=mu {
        out[mu + p] = out[mu + p - 1] * z;
        out[mu - p] = out[mu + p].conj();
    }
}

/// Leray–Hodge projection in Fourier space: û_k ← û_k − k ⟨k,û_k⟩ / |k|²,
/// with the mean mode set to zero.
pub fn leray_project(coeffs: &SpectralVelocity) -> SpectralVelocity {
    let mut out = coeffs.clone();
    let m = coeffs.m_max;
    for k1 in -m..=m {
        for k2 in -m..=m {
            if (k1, k2) == (0, 0) {
                out.set(0, 0, [Complex64::new(0.0, 0.0); 2]);
                continue;
            }
            let c = coeffs.get(k1, k2);
            let (kf1, kf2) = (k1 as f64, k2 as f64);
            let k2norm = kf1 * kf1 + kf2 * kf2;
            let kd = (kf1 * c[0] + kf2 * c[1]) / k2norm;
            out.set(k1, k2, [c[0] - kf1 * kd, c[1] - kf2 * kd]);
        }
    }
    out
}

/// Evaluate the truncated Fourier sum on the equispaced g x g grid
/// (row-major in θ₁, θ_a = 2π a / g). Requires g ≥ 2M+2.
pub fn synthesize(u: &SpectralVelocity, g: usize) -> Result<Vec<[f64; 2]>> {
    let m = u.m_max;
    if (g as i32) < 2 * m + 2 {
        return Err(Error::Argument(format!(
            "grid {g} too small for cutoff {m} (needs g >= 2M+2): aliasing"
        )));
    }
    let side = (2 * m + 1) as usize;
    let mut phase = vec![Complex64::new(0.0, 0.0); g * side];
    for (a, row) in phase.chunks_exact_mut(side).enumerate() {
        fill_power_table(row, m, TAU * a as f64 / g as f64);
    }
    // separable transform: contract k2 first, then k1
    let mut partial = vec![[Complex64::new(0.0, 0.0); 2]; side * g]; // (k1, b)
    for i1 in 0..side {
        for b in 0..g {
            let prow = &phase[b * side..(b + 1) * side];
            let mut acc = [Complex64::new(0.0, 0.0); 2];
            for i2 in 0..side {
                let c = &u.coeffs[i1 * side + i2];
                acc[0] += c[0] * prow[i2];
                acc[1] += c[1] * prow[i2];
            }
            partial[i1 * g + b] = acc;
        }
    }
    let mut values = vec![[0.0f64; 2]; g * g];
    for a in 0..g {
        let prow = &phase[a * side..(a + 1) * side];
        for b in 0..g {
            let mut acc = [Complex64::new(0.0, 0.0); 2];
            for i1 in 0..side {
                let p = &partial[i1 * g + b];
                acc[0] += p[0] * prow[i1];
                acc[1] += p[1] * prow[i1];
            }
            values[a * g + b] = [acc[0].re, acc[1].re];
        }
    }
    Ok(values)
}

/// Trapezoidal analysis of grid values, spectrally exact for band-limited
/// periodic data: û_k = (1/g²) Σ u(θ) e^{-i k·θ}. Requires g ≥ 2M+2.
pub fn analyze(values: &[[f64; 2]], g: usize, m_max: i32) -> Result<SpectralVelocity> {
    if values.len() != g * g {
        return Err(Error::Argument("value grid has wrong size".into()));
    }
    if (g as i32) < 2 * m_max + 2 {
        return Err(Error::Argument(
            "grid too small for requested cutoff: aliasing".into(),
        ));
    }
    let side = (2 * m_max + 1) as usize;
    let mut phase = vec![Complex64::new(0.0, 0.0); g * side];
    for (a, row) in phase.chunks_exact_mut(side).enumerate() {
        fill_power_table(row, m_max, -TAU * a as f64 / g as f64);
    }
    // contract b first: partial (a, k2)
    let mut partial = vec![[Complex64::new(0.0, 0.0); 2]; g * side];
    for a in 0..g {
        for i2 in 0..side {
            let mut acc = [Complex64::new(0.0, 0.0); 2];
            for b in 0..g {
                let v = &values[a * g + b];
                let p = phase[b * side + i2];
                acc[0] += v[0] * p;
                acc[1] += v[1] * p;
            }
            partial[a * side + i2] = acc;
        }
    }
    let mut out = SpectralVelocity::zero(m_max);
    let norm = 1.0 / (g * g) as f64;
    for i1 in 0..side {
        for i2 in 0..side {
            let mut acc = [Complex64::new(0.0, 0.0); 2];
            for a in 0..g {
                let p = phase[a * side + i1];
                let v = &partial[a * side + i2];
                acc[0] += v[0] * p;
                acc[1] += v[1] * p;
            }
            out.coeffs[i1 * side + i2] = [acc[0] * norm, acc[1] * norm];
        }
    }
    Ok(out)
}

/// One RK4 step of the Galerkin-truncated 2D incompressible solver in
/// vorticity form. The advection term is computed by direct spectral
/// convolution of the retained modes with the output truncated to the same
/// band, which is alias-free by construction (it subsumes grid-based
/// 2/3-rule dealiasing). Viscosity enters as -ν|k|²ω̂.
pub fn spectral_ns_step(u: &SpectralVelocity, nu: f64, dt: f64) -> Result<SpectralVelocity> {
    let m = u.m_max;
    // CFL safety rail on the advecting velocity
    let g_est = ((2 * m + 2) as usize).max(8);
    let vals = synthesize(u, g_est)?;
    let umax = vals
        .iter()
        .map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt())
        .fold(0.0f64, f64::max);
    if umax * dt * g_est as f64 > 1.0 {
        return Err(Error::Numerical(format!(
            "CFL violation: max|u| dt G = {} > 1",
            umax * dt * g_est as f64
        )));
    }

    let mean = u.mean();
    let w0 = vorticity(u);
    let k1v = vorticity_rhs(&w0, mean, nu, m);
    let k2v = vorticity_rhs(&axpy(&w0, 0.5 * dt, &k1v), mean, nu, m);
    let k3v = vorticity_rhs(&axpy(&w0, 0.5 * dt, &k2v), mean, nu, m);
    let k4v = vorticity_rhs(&axpy(&w0, dt, &k3v), mean, nu, m);
    let mut w1 = w0.clone();
    for i in 0..w1.len() {
        w1[i] += dt / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
    }
    let mut out = velocity_from_vorticity(&w1, m);
    // the mean is conserved on the torus; carry it through
    out.set(
        0,
        0,
        [Complex64::new(mean[0], 0.0), Complex64::new(mean[1], 0.0)],
    );
    Ok(leray_project(&out).symmetrized())
}

fn vorticity(u: &SpectralVelocity) -> Vec<Complex64> {
    let m = u.m_max;
    let side = (2 * m + 1) as usize;
    let mut w = vec![Complex64::new(0.0, 0.0); side * side];
    for (k1, k2, c) in u.modes() {
        let i = ((k1 + m) as usize) * side + (k2 + m) as usize;
        w[i] = Complex64::i() * (k1 as f64 * c[1] - k2 as f64 * c[0]);
    }
    w
}

fn velocity_from_vorticity(w: &[Complex64], m: i32) -> SpectralVelocity {
    let side = (2 * m + 1) as usize;
    let mut u = SpectralVelocity::zero(m);
    for k1 in -m..=m {
        for k2 in -m..=m {
            if (k1, k2) == (0, 0) {
                continue;
            }
            let wk = w[((k1 + m) as usize) * side + (k2 + m) as usize];
            let kk = (k1 * k1 + k2 * k2) as f64;
            // Biot-Savart: û = i (k2, -k1) ω̂ / |k|²
            u.set(
                k1,
                k2,
                [
                    Complex64::i() * (k2 as f64) * wk / kk,
                    -Complex64::i() * (k1 as f64) * wk / kk,
                ],
            );
        }
    }
    u
}

fn axpy(w: &[Complex64], a: f64, d: &[Complex64]) -> Vec<Complex64> {
    w.iter().zip(d).map(|(w, d)| w + a * d).collect()
}

/// RHS of the vorticity equation: -(u·∇)ω - ν|k|²ω, convolution form.
fn vorticity_rhs(w: &[Complex64], mean: [f64; 2], nu: f64, m: i32) -> Vec<Complex64> {
    let side = (2 * m + 1) as usize;
    let mut u = velocity_from_vorticity(w, m);
    u.set(
        0,
        0,
        [Complex64::new(mean[0], 0.0), Complex64::new(mean[1], 0.0)],
    );
    let mut rhs = vec![Complex64::new(0.0, 0.0); side * side];
    for p1 in -m..=m {
        for p2 in -m..=m {
            let up = u.get(p1, p2);
            if up[0].norm_sqr() + up[1].norm_sqr() == 0.0 {
                continue;
            }
            let q1_lo = (-m).max(-m - p1);
            let q1_hi = m.min(m - p1);
            let q2_lo = (-m).max(-m - p2);
            let q2_hi = m.min(m - p2);
            for q1 in q1_lo..=q1_hi {
                for q2 in q2_lo..=q2_hi {
                    let wq = w[((q1 + m) as usize) * side + (q2 + m) as usize];
                    if wq.norm_sqr() == 0.0 {
                        continue;
                    }
                    let grad = Complex64::i() * (q1 as f64 * up[0] + q2 as f64 * up[1]);
                    let k1 = p1 + q1;
                    let k2 = p2 + q2;
                    rhs[((k1 + m) as usize) * side + (k2 + m) as usize] -= grad * wq;
                }
            }
        }
    }
    for k1 in -m..=m {
        for k2 in -m..=m {
            let i = ((k1 + m) as usize) * side + (k2 + m) as usize;
            rhs[i] -= nu * ((k1 * k1 + k2 * k2) as f64) * w[i];
        }
    }
    rhs
}

/// Coefficients of the decaying vortex e^{-2νt}(cos θ₁ sin θ₂, −sin θ₁ cos θ₂).
pub fn taylor_green_exact(t: f64, nu: f64) -> SpectralVelocity {
    let amp = (-2.0 * nu * t).exp() * 0.25;
    let i = Complex64::i();
    let mut u = SpectralVelocity::zero(1);
    u.set(1, 1, [-i * amp, i * amp]);
    u.set(1, -1, [i * amp, i * amp]);
    u.set(-1, 1, [-i * amp, -i * amp]);
    u.set(-1, -1, [i * amp, -i * amp]);
    u
}

/// Coefficients of the unidirectional shear e^{-νt}(sin θ₂, 0), for which
/// the advection term vanishes identically.
pub fn shear_exact(t: f64, nu: f64) -> SpectralVelocity {
    let amp = (-nu * t).exp() * 0.5;
    let i = Complex64::i();
    let mut u = SpectralVelocity::zero(1);
    u.set(0, 1, [-i * amp, Complex64::new(0.0, 0.0)]);
    u.set(0, -1, [i * amp, Complex64::new(0.0, 0.0)]);
    u
}

/// Seeded random band-limited divergence-free velocity with unit L² norm.
pub fn random_band_limited(m_max: i32, seed: u64) -> SpectralVelocity {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut u = SpectralVelocity::zero(m_max);
    for k1 in 0..=m_max {
        for k2 in -m_max..=m_max {
            if k1 == 0 && k2 <= 0 {
                continue;
            }
            let c = [
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            ];
            u.set(k1, k2, c);
            u.set(-k1, -k2, [c[0].conj(), c[1].conj()]);
        }
    }
    let projected = leray_project(&u);
    projected.scaled(1.0 / projected.l2_norm())
}

/// Write coefficients as CSV with columns k1,k2,re_u1,im_u1,re_u2,im_u2
/// ('.' decimal separator, LF line endings, header row).
pub fn write_coeff_csv(path: &Path, u: &SpectralVelocity) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(b"k1,k2,re_u1,im_u1,re_u2,im_u2\n")?;
    for (k1, k2, c) in u.modes() {
        write!(
            f,
            "{},{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            k1, k2, c[0].re, c[0].im, c[1].re, c[1].im
        )?;
    }
    Ok(())
}

/// Read coefficients from the CSV interchange format.
pub fn read_coeff_csv(path: &Path) -> Result<SpectralVelocity> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    let mut m = 0i32;
    for (lineno, line) in f.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line.trim() != "k1,k2,re_u1,im_u1,re_u2,im_u2" {
                return Err(Error::Argument("unexpected CSV header".into()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(Error::Argument(format!("bad CSV row: {line}")));
        }
        let k1: i32 = parts[0]
            .trim()
            .parse()
            .map_err(|e| Error::Argument(format!("bad k1: {e}")))?;
        let k2: i32 = parts[1]
            .trim()
            .parse()
            .map_err(|e| Error::Argument(format!("bad k2: {e}")))?;
        let nums: Vec<f64> = parts[2..]
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Argument(format!("bad coefficient: {e}")))?;
        m = m.max(k1.abs()).max(k2.abs());
        rows.push((k1, k2, nums));
    }
    let mut u = SpectralVelocity::zero(m);
    for (k1, k2, nums) in rows {
        u.set(
            k1,
            k2,
            [
                Complex64::new(nums[0], nums[1]),
                Complex64::new(nums[2], nums[3]),
            ],
        );
    }
    Ok(u)
}

/// Modes with (k1 > 0) or (k1 = 0, k2 > 0): one representative per
/// conjugate pair, lexicographic order.
pub fn half_lattice(m_max: i32) -> Vec<[i32; 2]> {
    let mut out = Vec::new();
    for k1 in 0..=m_max {
        for k2 in -m_max..=m_max {
            if k1 == 0 && k2 <= 0 {
                continue;
            }
            out.push([k1, k2]);
        }
    }
    out
}

/// Unit vector spanning k^⊥ in 2D: (k₂, −k₁)/|k|.
pub fn unit_perp(k: &[i32; 2]) -> [f64; 2] {
    let n = ((k[0] * k[0] + k[1] * k[1]) as f64).sqrt();
    [k[1] as f64 / n, -k[0] as f64 / n]
}

/// Assemble a velocity from real cos/sin coefficients along the
/// divergence-free basis: u = Σ_half (a_k cos(k·θ) + b_k sin(k·θ)) e_k.
pub fn from_real_pairs(m_max: i32, pairs: &[([i32; 2], f64, f64)]) -> SpectralVelocity {
    let mut u = SpectralVelocity::zero(m_max);
    for &(k, a, b) in pairs {
        let e = unit_perp(&k);
        let half = Complex64::new(0.5 * a, -0.5 * b);
        u.set(k[0], k[1], [e[0] * half, e[1] * half]);
        u.set(-k[0], -k[1], [e[0] * half.conj(), e[1] * half.conj()]);
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn leray_examples() {
        let mut u = SpectralVelocity::zero(2);
        // pure gradient direction projects to zero
        u.set(1, 0, [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        u.set(-1, 0, [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        let p = leray_project(&u);
        assert_eq!(p.get(1, 0)[0], Complex64::new(0.0, 0.0));
        // already solenoidal is a fixed point
        let mut v = SpectralVelocity::zero(2);
        v.set(1, 0, [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]);
        v.set(-1, 0, [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]);
        let pv = leray_project(&v);
        assert_eq!(pv.get(1, 0)[1], Complex64::new(1.0, 0.0));
        // mixed input keeps only the perpendicular part
        let mut w = SpectralVelocity::zero(2);
        w.set(1, 0, [Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)]);
        w.set(-1, 0, [Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)]);
        let pw = leray_project(&w);
        assert_eq!(pw.get(1, 0)[0], Complex64::new(0.0, 0.0));
        assert_eq!(pw.get(1, 0)[1], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn leray_is_idempotent_orthogonal_projection() {
        let u = {
            let mut rng = ChaCha12Rng::seed_from_u64(31);
            let mut u = SpectralVelocity::zero(3);
            for k1 in 0..=3 {
                for k2 in -3..=3 {
                    if k1 == 0 && k2 <= 0 {
                        continue;
                    }
                    let c = [
                        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                    ];
                    u.set(k1, k2, c);
                    u.set(-k1, -k2, [c[0].conj(), c[1].conj()]);
                }
            }
            u
        };
        let p1 = leray_project(&u);
        let p2 = leray_project(&p1);
        assert!(p1.l2_distance(&p2) <= 1e-13);
        p1.validate().unwrap();
        // orthogonality: sum over modes of <Pu, (I-P)u> vanishes
        let mut ip = 0.0;
        for (k1, k2, pu) in p1.modes() {
            let r = u.get(k1, k2);
            let residual = [r[0] - pu[0], r[1] - pu[1]];
            ip += (pu[0] * residual[0].conj() + pu[1] * residual[1].conj()).re;
        }
        assert!(ip.abs() <= 1e-12, "projection not orthogonal: {ip}");
    }

    #[test]
    fn synthesize_single_mode_is_sine() {
        let u = from_real_pairs(1, &[([1, 0], 0.0, -1.0)]);
        // u = -sin(θ1) e_{(1,0)} = -sin(θ1)(0,-1) = (0, sin θ1)
        let g = 8;
        let vals = synthesize(&u, g).unwrap();
        for a in 0..g {
            let th = TAU * a as f64 / g as f64;
            for b in 0..g {
                let v = vals[a * g + b];
                assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-13);
                assert_abs_diff_eq!(v[1], th.sin(), epsilon = 1e-13);
            }
        }
        // analyze recovers û_{(1,0)} = (0, -i/2)
        let back = analyze(&vals, g, 1).unwrap();
        let c = back.get(1, 0);
        assert_abs_diff_eq!(c[1].re, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c[1].im, -0.5, epsilon = 1e-14);
    }

    #[test]
    fn analyze_constant_field() {
        let g = 8;
        let vals = vec![[1.0, 0.0]; g * g];
        let u = analyze(&vals, g, 2).unwrap();
        assert_abs_diff_eq!(u.mean()[0], 1.0, epsilon = 1e-14);
        for (k1, k2, c) in u.modes() {
            if (k1, k2) != (0, 0) {
                assert!(c[0].norm() < 1e-13 && c[1].norm() < 1e-13);
            }
        }
    }

    #[test]
    fn zero_coefficients_synthesize_to_zero() {
        let vals = synthesize(&SpectralVelocity::zero(2), 8).unwrap();
        assert!(vals.iter().all(|v| v[0] == 0.0 && v[1] == 0.0));
    }

    #[test]
    fn taylor_green_matches_trig_identity_on_grid() {
        let u = taylor_green_exact(0.0, 0.1);
        u.validate().unwrap();
        let g = 32;
        let vals = synthesize(&u, g).unwrap();
        for a in 0..g {
            for b in 0..g {
                let t1 = TAU * a as f64 / g as f64;
                let t2 = TAU * b as f64 / g as f64;
                let v = vals[a * g + b];
                assert_abs_diff_eq!(v[0], t1.cos() * t2.sin(), epsilon = 1e-12);
                assert_abs_diff_eq!(v[1], -t1.sin() * t2.cos(), epsilon = 1e-12);
            }
        }
        // decay law: amplitude halves at t = ln 2 / (2 nu)
        let nu = 0.1;
        let t_half = (2.0f64).ln() / (2.0 * nu);
        let uh = taylor_green_exact(t_half, nu);
        assert_abs_diff_eq!(uh.get(1, 1)[0].im, -0.125, epsilon = 1e-14);
        // energy of the unit vortex is 2 pi^2
        assert_abs_diff_eq!(
            u.energy(),
            2.0 * std::f64::consts::PI.powi(2),
            epsilon = 1e-12
        );
    }

    #[test]
    fn round_trip_random_band_limited() {
        let u = random_band_limited(4, 77);
        u.validate().unwrap();
        assert_abs_diff_eq!(u.l2_norm(), 1.0, epsilon = 1e-12);
        let vals = synthesize(&u, 12).unwrap();
        let back = analyze(&vals, 12, 4).unwrap();
        assert!(u.l2_distance(&back) <= 1e-12);
    }

    #[test]
    fn undersized_grid_is_an_error() {
        let u = SpectralVelocity::zero(4);
        assert!(synthesize(&u, 8).is_err());
        assert!(synthesize(&u, 10).is_ok());
    }

    #[test]
    fn oracle_reproduces_taylor_green_decay() {
        let nu = 0.1;
        let dt = 1e-3;
        let mut u = taylor_green_exact(0.0, nu).embedded(4);
        for _ in 0..500 {
            u = spectral_ns_step(&u, nu, dt).unwrap();
        }
        let want = taylor_green_exact(0.5, nu).embedded(4);
        let rel = u.l2_distance(&want) / want.l2_norm();
        assert!(rel <= 1e-8, "relative error {rel}");
    }

    #[test]
    fn oracle_shear_decays_without_advection() {
        let nu = 0.1;
        let dt = 1e-3;
        let mut u = shear_exact(0.0, nu).embedded(3);
        for _ in 0..300 {
            u = spectral_ns_step(&u, nu, dt).unwrap();
        }
        let c = u.get(0, 1);
        assert_abs_diff_eq!(c[0].im, -0.5 * (-nu * 0.3f64).exp(), epsilon = 1e-10);
        // all other modes stay empty
        for (k1, k2, cc) in u.modes() {
            if (k1, k2) != (0, 1) && (k1, k2) != (0, -1) {
                assert!(cc[0].norm() + cc[1].norm() < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_zero_stays_zero() {
        let u = SpectralVelocity::zero(3);
        let stepped = spectral_ns_step(&u, 0.1, 1e-2).unwrap();
        assert_eq!(stepped.l2_norm(), 0.0);
    }

    #[test]
    fn inviscid_oracle_conserves_energy() {
        let mut u = random_band_limited(10, 4242);
        let e0 = u.energy();
        for _ in 0..1000 {
            u = spectral_ns_step(&u, 0.0, 1e-3).unwrap();
        }
        let rel = (u.energy() - e0).abs() / e0;
        assert!(rel <= 1e-6, "energy drift {rel}");
    }

    #[test]
    fn eval_with_grad_matches_finite_differences() {
        let u = random_band_limited(3, 9);
        let mut scratch = EvalScratch::new(3);
        let th = [1.234, 2.345];
        let (val, grad) = u.eval_with_grad(&th, &mut scratch);
        let v0 = u.eval(&th);
        assert_eq!(val, v0);
        let h = 1e-6;
        for b in 0..2 {
            let mut tp = th;
            tp[b] += h;
            let mut tm = th;
            tm[b] -= h;
            let vp = u.eval(&tp);
            let vm = u.eval(&tm);
            for a in 0..2 {
                let fd = (vp[a] - vm[a]) / (2.0 * h);
                assert_abs_diff_eq!(grad[a][b], fd, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let u = random_band_limited(3, 55);
        let dir = std::env::temp_dir().join("mnsl_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("coeffs.csv");
        write_coeff_csv(&path, &u).unwrap();
        let back = read_coeff_csv(&path).unwrap();
        assert!(u.l2_distance(&back) <= 1e-15);
    }

    #[test]
    fn cfl_violation_is_reported() {
        let u = taylor_green_exact(0.0, 0.1).scaled(50.0);
        assert!(spectral_ns_step(&u, 0.1, 0.1).is_err());
    }
}
