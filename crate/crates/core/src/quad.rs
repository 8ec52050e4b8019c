//! Quadrature node sets: equispaced product grids on T^2 (trapezoidal rule,
//! spectrally exact for band-limited integrands) and an equal-weight
//! spherical design on S^2.
//!
//! The sphere table is an antipodally symmetric 104-node point set computed
//! once by minimizing the spherical-design residual; equal-weight sums over
//! it integrate every spherical polynomial of degree <= DESIGN_DEGREE
//! exactly (to roundoff), which the test suite verifies against closed-form
//! moments. Nodes are renormalized to unit length on load.

use crate::error::{Error, Result};
use crate::geometry::{Manifold, Point};
use std::f64::consts::TAU;


/// Largest polynomial degree integrated exactly by the embedded design.
pub const DESIGN_DEGREE: u32 = 13;
const DESIGN_NODES: [[f64; 3]; 104] = [
    [4.68865200765638090e-01, -7.79495242589124504e-01, -4.15394499592760091e-01],
    [-7.38629402216080200e-01, -2.49872056611879972e-01, -6.26091496114158486e-01],
    [-8.25101392405258260e-01, -5.63578942216493739e-01, -3.98304926035583720e-02],
    [7.40069676486453498e-01, 1.41594064478696019e-01, -6.57455698012906931e-01],
    [-2.54928125809256834e-01, 9.57547656945573533e-01, -1.34588763830500058e-01],
    [-3.19793451988447996e-01, 5.50643623946292848e-01, 7.71053660566244803e-01],
    [6.15876385147643424e-01, -1.04988687673608846e-01, 7.80816017816005736e-01],
    [1.73255400159825074e-01, 4.55930021477595648e-01, -8.72989336607783550e-01],
    [9.56797637219101271e-01, 2.77936861468940033e-01, 8.53778803247078610e-02],
    [-1.76553656573484263e-01, 2.95725682557454517e-01, 9.38815811022833180e-01],
    [2.74434991973902143e-01, -8.40522530460119488e-01, 4.67126654098437899e-01],
    [9.11677103098519903e-02, 9.08991749185053433e-01, -4.06721585990165502e-01],
    [-9.31637682345647256e-01, -2.17335949766956915e-01, 2.91232405086600588e-01],
    [3.46875161920925656e-01, 6.74979292453743884e-01, -6.51214693323925786e-01],
    [5.12172550743020483e-01, -5.01476547450335319e-01, 6.97280826226191142e-01],
    [1.24773186761666627e-01, 9.86951339611443212e-01, -1.01777724009313814e-01],
    [7.13235911730107142e-01, -6.98286875710007693e-01, 6.07451514911194410e-02],
    [-9.27458027039712064e-03, -2.30957195045517205e-01, 9.72919706973558451e-01],
    [2.90206271383235681e-01, 7.53676225029185742e-01, 5.89705407704216311e-01],
    [1.92333260389778077e-01, -8.26199749343759837e-01, -5.29529877468822630e-01],
    [-9.93969689016505176e-01, 4.84261740779254185e-02, 9.83827372083460328e-02],
    [-4.63271304773232195e-01, -2.40785554700205434e-01, 8.52878663598416797e-01],
    [1.18074979000162145e-01, -9.75061021715723286e-01, -1.87921002724019987e-01],
    [-9.62440883035411199e-01, 1.64448948148901264e-01, -2.16018726305701875e-01],
    [1.40767380356903865e-01, 9.19626924988724892e-01, 3.66702690831737677e-01],
    [3.88702654205780540e-01, 9.19147371587716200e-01, 6.38620068332839547e-02],
    [-2.18161456843245755e-01, -4.11443319160287591e-01, -8.84940661212037738e-01],
    [7.37605307254937004e-01, -5.90842007443668105e-01, -3.26870208109100169e-01],
    [-7.49488376361249542e-01, 4.86408790459540163e-01, -4.49080908370713572e-01],
    [-9.91600400301131946e-02, -8.79456563966253546e-02, -9.91177505789045399e-01],
    [-8.97611988786623183e-01, 3.36873510758558314e-01, 2.84269160015163280e-01],
    [1.25352248932530386e-02, 6.40854336494752097e-01, 7.67560152387255390e-01],
    [3.37524305514562195e-01, -2.73600766754853314e-02, -9.40919108845826413e-01],
    [6.06753829865558703e-01, 4.90333785607757311e-01, -6.25637729548851884e-01],
    [-8.55044591540991328e-01, 1.04686731035606426e-01, 5.07877381679454176e-01],
    [-4.39981242556209962e-01, -8.22741387147125858e-01, 3.59879307648990066e-01],
    [-5.47872716916454672e-01, -7.90550541806625540e-01, -2.73615289974506293e-01],
    [8.89325790380222081e-01, -4.49344411454952353e-01, 8.47893770397919744e-02],
    [-4.69558090638027781e-01, -2.19724899309986371e-01, -8.55123481223376336e-01],
    [-6.49847647376647020e-01, -7.41042688594195753e-01, 1.68978604799906729e-01],
    [-2.21263999686931480e-02, 7.23212326459684141e-01, -6.90271217190168485e-01],
    [-7.98940296504619951e-01, -4.76240718221210002e-01, 3.67272624802415903e-01],
    [6.13930425747015063e-01, -4.66078914804797850e-01, -6.37071328436989770e-01],
    [8.15072283084521065e-01, -1.82097719542237635e-01, 5.49997812618289283e-01],
    [5.41693425646095128e-01, -7.50882225352979216e-01, 3.77814923290168692e-01],
    [4.87759910973995792e-01, -8.69338818538388014e-01, -7.96259243520562737e-02],
    [3.42896038738777775e-01, -1.74783833168214553e-01, 9.22969619370150540e-01],
    [-7.46944934407918870e-01, -5.47779328656228359e-01, -3.76843564439253098e-01],
    [5.23497349230716003e-01, 5.52298717239315895e-01, 6.48780896978494392e-01],
    [6.00465796924290696e-01, -2.02413546903569941e-01, -7.73608158407079305e-01],
    [-2.53145518512842838e-01, 5.28523344213616353e-01, -8.10296501953524984e-01],
    [-9.09622808822985074e-01, -1.56720921778731564e-01, -3.84740039956602053e-01],
    [-4.68865200765638090e-01, 7.79495242589124504e-01, 4.15394499592760091e-01],
    [7.38629402216080200e-01, 2.49872056611879972e-01, 6.26091496114158486e-01],
    [8.25101392405258260e-01, 5.63578942216493739e-01, 3.98304926035583720e-02],
    [-7.40069676486453498e-01, -1.41594064478696019e-01, 6.57455698012906931e-01],
    [2.54928125809256834e-01, -9.57547656945573533e-01, 1.34588763830500058e-01],
    [3.19793451988447996e-01, -5.50643623946292848e-01, -7.71053660566244803e-01],
    [-6.15876385147643424e-01, 1.04988687673608846e-01, -7.80816017816005736e-01],
    [-1.73255400159825074e-01, -4.55930021477595648e-01, 8.72989336607783550e-01],
    [-9.56797637219101271e-01, -2.77936861468940033e-01, -8.53778803247078610e-02],
    [1.76553656573484263e-01, -2.95725682557454517e-01, -9.38815811022833180e-01],
    [-2.74434991973902143e-01, 8.40522530460119488e-01, -4.67126654098437899e-01],
    [-9.11677103098519903e-02, -9.08991749185053433e-01, 4.06721585990165502e-01],
    [9.31637682345647256e-01, 2.17335949766956915e-01, -2.91232405086600588e-01],
    [-3.46875161920925656e-01, -6.74979292453743884e-01, 6.51214693323925786e-01],
    [-5.12172550743020483e-01, 5.01476547450335319e-01, -6.97280826226191142e-01],
    [-1.24773186761666627e-01, -9.86951339611443212e-01, 1.01777724009313814e-01],
    [-7.13235911730107142e-01, 6.98286875710007693e-01, -6.07451514911194410e-02],
    [9.27458027039712064e-03, 2.30957195045517205e-01, -9.72919706973558451e-01],
    [-2.90206271383235681e-01, -7.53676225029185742e-01, -5.89705407704216311e-01],
    [-1.92333260389778077e-01, 8.26199749343759837e-01, 5.29529877468822630e-01],
    [9.93969689016505176e-01, -4.84261740779254185e-02, -9.83827372083460328e-02],
    [4.63271304773232195e-01, 2.40785554700205434e-01, -8.52878663598416797e-01],
    [-1.18074979000162145e-01, 9.75061021715723286e-01, 1.87921002724019987e-01],
    [9.62440883035411199e-01, -1.64448948148901264e-01, 2.16018726305701875e-01],
    [-1.40767380356903865e-01, -9.19626924988724892e-01, -3.66702690831737677e-01],
    [-3.88702654205780540e-01, -9.19147371587716200e-01, -6.38620068332839547e-02],
    [2.18161456843245755e-01, 4.11443319160287591e-01, 8.84940661212037738e-01],
    [-7.37605307254937004e-01, 5.90842007443668105e-01, 3.26870208109100169e-01],
    [7.49488376361249542e-01, -4.86408790459540163e-01, 4.49080908370713572e-01],
    [9.91600400301131946e-02, 8.79456563966253546e-02, 9.91177505789045399e-01],
    [8.97611988786623183e-01, -3.36873510758558314e-01, -2.84269160015163280e-01],
    [-1.25352248932530386e-02, -6.40854336494752097e-01, -7.67560152387255390e-01],
    [-3.37524305514562195e-01, 2.73600766754853314e-02, 9.40919108845826413e-01],
    [-6.06753829865558703e-01, -4.90333785607757311e-01, 6.25637729548851884e-01],
    [8.55044591540991328e-01, -1.04686731035606426e-01, -5.07877381679454176e-01],
    [4.39981242556209962e-01, 8.22741387147125858e-01, -3.59879307648990066e-01],
    [5.47872716916454672e-01, 7.90550541806625540e-01, 2.73615289974506293e-01],
    [-8.89325790380222081e-01, 4.49344411454952353e-01, -8.47893770397919744e-02],
    [4.69558090638027781e-01, 2.19724899309986371e-01, 8.55123481223376336e-01],
    [6.49847647376647020e-01, 7.41042688594195753e-01, -1.68978604799906729e-01],
    [2.21263999686931480e-02, -7.23212326459684141e-01, 6.90271217190168485e-01],
    [7.98940296504619951e-01, 4.76240718221210002e-01, -3.67272624802415903e-01],
    [-6.13930425747015063e-01, 4.66078914804797850e-01, 6.37071328436989770e-01],
    [-8.15072283084521065e-01, 1.82097719542237635e-01, -5.49997812618289283e-01],
    [-5.41693425646095128e-01, 7.50882225352979216e-01, -3.77814923290168692e-01],
    [-4.87759910973995792e-01, 8.69338818538388014e-01, 7.96259243520562737e-02],
    [-3.42896038738777775e-01, 1.74783833168214553e-01, -9.22969619370150540e-01],
    [7.46944934407918870e-01, 5.47779328656228359e-01, 3.76843564439253098e-01],
    [-5.23497349230716003e-01, -5.52298717239315895e-01, -6.48780896978494392e-01],
    [-6.00465796924290696e-01, 2.02413546903569941e-01, 7.73608158407079305e-01],
    [2.53145518512842838e-01, -5.28523344213616353e-01, 8.10296501953524984e-01],
    [9.09622808822985074e-01, 1.56720921778731564e-01, 3.84740039956602053e-01],
];

/// A node set with weights summing to the total measure of the manifold.
#[derive(Clone, Debug)]
pub struct Quadrature {
    pub manifold: Manifold,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// Equispaced g x g product grid on T^2 (row-major in the first angle).
    pub fn torus_grid(g: usize) -> Result<Quadrature> {
        if g < 2 {
            return Err(Error::Argument("torus grid needs g >= 2".into()));
        }
        let manifold = Manifold::torus(2);
        let mut points = Vec::with_capacity(g * g);
        let h = TAU / g as f64;
        for a in 0..g {
            for b in 0..g {
                points.push(Point::torus(vec![a as f64 * h, b as f64 * h])?);
            }
        }
        let w = TAU * TAU / (g * g) as f64;
        Ok(Quadrature {
            manifold,
            points,
            weights: vec![w; g * g],
        })
    }

    /// The embedded equal-weight spherical design on S^2.
    pub fn sphere_design() -> Quadrature {
        let manifold = Manifold::sphere(2);
        let points: Vec<Point> = DESIGN_NODES
            .iter()
            .map(|xyz| {
                let nrm = (xyz[0] * xyz[0] + xyz[1] * xyz[1] + xyz[2] * xyz[2]).sqrt();
                Point::sphere(vec![xyz[0] / nrm, xyz[1] / nrm, xyz[2] / nrm])
                    .expect("design node on sphere")
            })
            .collect();
        let w = manifold.volume() / points.len() as f64;
        let weights = vec![w; points.len()];
        Quadrature {
            manifold,
            points,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integral of a scalar function over the node set.
    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> f64 {
        let vals: Vec<f64> = self
            .points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(p))
            .collect();
        crate::linalg::pairwise_sum(&vals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Mean of x^{2a} y^{2b} z^{2c} over S^2: (2a-1)!!(2b-1)!!(2c-1)!! / (2a+2b+2c+1)!!.
    fn monomial_mean(a: u32, b: u32, c: u32) -> f64 {
        fn dfact(k: i64) -> f64 {
            if k <= 0 {
                1.0
            } else {
                (k as f64) * dfact(k - 2)
            }
        }
        dfact(2 * a as i64 - 1) * dfact(2 * b as i64 - 1) * dfact(2 * c as i64 - 1)
            / dfact(2 * (a + b + c) as i64 + 1)
    }

    #[test]
    fn design_is_exact_through_its_degree() {
        let q = Quadrature::sphere_design();
        let area = 4.0 * std::f64::consts::PI;
        assert_abs_diff_eq!(q.integrate(|_| 1.0), area, epsilon = 1e-12);
        for (a, b, c) in [(1, 0, 0), (0, 1, 0), (0, 0, 1), (2, 0, 0), (1, 1, 0), (0, 0, 2), (2, 2, 2), (0, 0, 6), (1, 2, 3)] {
            let got = q.integrate(|p| {
                let x = p.coords();
                x[0].powi(2 * a) * x[1].powi(2 * b) * x[2].powi(2 * c)
            }) / area;
            let want = monomial_mean(a as u32, b as u32, c as u32);
            assert!(
                (got - want).abs() <= 1e-12 * want.max(1.0),
                "monomial ({a},{b},{c}): got {got}, want {want}"
            );
        }
        // odd-degree monomials integrate to zero by antipodal symmetry
        let odd = q.integrate(|p| p.coords()[2].powi(7));
        assert!(odd.abs() < 1e-13);
    }

    #[test]
    fn design_degree_boundary_is_sharp() {
        // degree 14 is beyond the design's exactness and must show real error
        let q = Quadrature::sphere_design();
        let area = 4.0 * std::f64::consts::PI;
        let got = q.integrate(|p| p.coords()[2].powi(14)) / area;
        assert!((got - monomial_mean(0, 0, 7)).abs() > 1e-8);
    }

    #[test]
    fn torus_grid_integrates_modes_exactly() {
        let q = Quadrature::torus_grid(8).unwrap();
        assert_abs_diff_eq!(q.integrate(|_| 1.0), TAU * TAU, epsilon = 1e-10);
        // nonzero modes below the grid Nyquist integrate to zero
        for (k1, k2) in [(1i32, 0i32), (0, 1), (2, 3), (3, 3)] {
            let got = q.integrate(|p| (k1 as f64 * p.coords()[0] + k2 as f64 * p.coords()[1]).cos());
            assert!(got.abs() < 1e-12, "mode ({k1},{k2}) integral {got}");
        }
    }
}
