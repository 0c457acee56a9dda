//! Periodic potentials: Ewald-summed Coulomb attraction in two and three
//! dimensions, the bounded extension used for Fourier integrals, and the
//! periodic Hartree solve.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fourier::FourierSeries;
use crate::geometry::{AtomicPatch, Point, UnitCell};

/// Real, lattice-periodic potential split into a part that is smooth on the
/// whole cell and a pointwise remainder that may be singular.
pub trait PotentialField: Send + Sync {
    fn dim(&self) -> usize;

    /// Smooth part on the tensor grid `axes[0] × axes[1] (× axes[2])`,
    /// first axis fastest.
    fn smooth_grid(&self, axes: &[Vec<f64>]) -> Vec<f64>;

    /// Remainder at one point. Infinite at singular points.
    fn rough(&self, _r: &Point) -> f64 {
        0.0
    }

    /// Whether [`PotentialField::rough`] is identically zero.
    fn is_smooth(&self) -> bool {
        true
    }

    /// Points where the remainder is singular, inside the reference cell.
    fn singular_points(&self) -> Vec<Point> {
        Vec::new()
    }

    fn eval(&self, r: &Point) -> f64 {
        let axes: Vec<Vec<f64>> = (0..self.dim()).map(|s| vec![r[s]]).collect();
        self.smooth_grid(&axes)[0] + self.rough(r)
    }

    fn eval_grid(&self, axes: &[Vec<f64>]) -> Vec<f64> {
        let mut out = self.smooth_grid(axes);
        if !self.is_smooth() {
            for_each_grid_point(axes, |flat, r| out[flat] += self.rough(r));
        }
        out
    }
}

/// Calls `f(flat, point)` for every point of a tensor grid, first axis fastest.
pub fn for_each_grid_point(axes: &[Vec<f64>], mut f: impl FnMut(usize, &Point)) {
    let d = axes.len();
    let n: Vec<usize> = axes.iter().map(Vec::len).collect();
    let total: usize = n.iter().product();
    let mut r = [0.0; 3];
    for flat in 0..total {
        let mut rem = flat;
        for s in 0..d {
            r[s] = axes[s][rem % n[s]];
            rem /= n[s];
        }
        f(flat, &r);
    }
}

impl PotentialField for FourierSeries {
    fn dim(&self) -> usize {
        self.cell.dim
    }

    fn smooth_grid(&self, axes: &[Vec<f64>]) -> Vec<f64> {
        self.eval_grid(axes)
    }
}

/// Constant potential.
#[derive(Clone, Copy, Debug)]
pub struct ConstantField {
    pub dim: usize,
    pub value: f64,
}

impl PotentialField for ConstantField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn smooth_grid(&self, axes: &[Vec<f64>]) -> Vec<f64> {
        vec![self.value; axes.iter().map(Vec::len).product()]
    }
}

/// Sum of potentials.
#[derive(Clone)]
pub struct SumField {
    pub parts: Vec<Arc<dyn PotentialField>>,
}

impl PotentialField for SumField {
    fn dim(&self) -> usize {
        self.parts[0].dim()
    }

    fn smooth_grid(&self, axes: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; axes.iter().map(Vec::len).product()];
        for p in &self.parts {
            for (o, v) in out.iter_mut().zip(p.smooth_grid(axes)) {
                *o += v;
            }
        }
        out
    }

    fn rough(&self, r: &Point) -> f64 {
        self.parts.iter().filter(|p| !p.is_smooth()).map(|p| p.rough(r)).sum()
    }

    fn is_smooth(&self) -> bool {
        self.parts.iter().all(|p| p.is_smooth())
    }

    fn singular_points(&self) -> Vec<Point> {
        self.parts.iter().flat_map(|p| p.singular_points()).collect()
    }
}

/// Additive constant of the Ewald sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EwaldConstant {
    /// `+2α/√π` per unit charge, as printed for the examples.
    SelfTerm,
    /// Constant that makes the potential mean-zero and independent of `α`.
    MeanZero,
}

/// Point charge of the attracting nucleus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nucleus {
    pub charge: f64,
    pub position: Point,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EwaldParams {
    pub alpha: f64,
    /// Reciprocal modes with `0 < |G| ≤ g_cut` are kept.
    pub g_cut: f64,
    pub nuclei: Vec<Nucleus>,
    pub constant: EwaldConstant,
}

impl EwaldParams {
    /// Cutoff at which the reciprocal kernel drops below `tol` relative to its
    /// first shell.
    pub fn converged_cutoff(alpha: f64, dim: usize, tol: f64) -> f64 {
        match dim {
            2 => {
                // erfc(x) < tol for x = |G|/2α
                let mut x = 1.0;
                while libm::erfc(x) > tol {
                    x += 0.05;
                }
                2.0 * alpha * x
            }
            _ => 2.0 * alpha * (-tol.ln()).sqrt(),
        }
    }
}

/// Ewald-summed attraction `-Σ_j Z_j / |r - R_j|` on the periodic cell.
#[derive(Clone, Debug)]
pub struct EwaldPotential {
    pub cell: UnitCell,
    pub params: EwaldParams,
    /// Reciprocal sum plus the constant, as a Fourier series.
    pub reciprocal: FourierSeries,
    short_cutoff: f64,
    image_range: i64,
}

impl EwaldPotential {
    pub fn new(cell: UnitCell, params: EwaldParams) -> Result<Self> {
        if !(params.alpha > 0.0) {
            return Err(Error::InvalidParameter("Ewald splitting parameter must be positive".into()));
        }
        if params.nuclei.is_empty() {
            return Err(Error::InvalidParameter("Ewald potential needs at least one nucleus".into()));
        }
        let d = cell.dim;
        let a = params.alpha;
        let vol = cell.volume();
        let g = cell.dual_spacing();
        let extent = (params.g_cut / g + 1e-9).floor() as i64;
        let total_charge: f64 = params.nuclei.iter().map(|n| n.charge).sum();
        let constant = total_charge
            * match (params.constant, d) {
                (EwaldConstant::SelfTerm, _) => 2.0 * a / std::f64::consts::PI.sqrt(),
                (EwaldConstant::MeanZero, 2) => 2.0 * std::f64::consts::PI.sqrt() / (a * vol),
                (EwaldConstant::MeanZero, _) => std::f64::consts::PI / (a * a * vol),
            };
        let pi = std::f64::consts::PI;
        let reciprocal = FourierSeries::from_fn(cell, extent, |n| {
            if n == [0, 0, 0] {
                return Complex64::new(constant, 0.0);
            }
            let gv = [g * n[0] as f64, g * n[1] as f64, g * n[2] as f64];
            let gn = (gv[0] * gv[0] + gv[1] * gv[1] + gv[2] * gv[2]).sqrt();
            if gn > params.g_cut * (1.0 + 1e-12) {
                return Complex64::new(0.0, 0.0);
            }
            let kernel = if d == 2 {
                2.0 * pi / vol * libm::erfc(gn / (2.0 * a)) / gn
            } else {
                4.0 * pi / vol * (-gn * gn / (4.0 * a * a)).exp() / (gn * gn)
            };
            let mut c = Complex64::new(0.0, 0.0);
            for nuc in &params.nuclei {
                let phase = -(gv[0] * nuc.position[0] + gv[1] * nuc.position[1] + gv[2] * nuc.position[2]);
                c -= Complex64::from_polar(nuc.charge * kernel, phase);
            }
            c
        });
        let short_cutoff = 6.5 / a;
        let image_range = (short_cutoff / cell.length + 0.5).ceil() as i64;
        Ok(Self {
            cell,
            params,
            reciprocal,
            short_cutoff,
            image_range,
        })
    }

    /// Real-space sum `-Σ Z erfc(α|r - R - Lm|)/|r - R - Lm|`.
    pub fn short_range(&self, r: &Point) -> f64 {
        let d = self.cell.dim;
        let l = self.cell.length;
        let a = self.params.alpha;
        let m = self.image_range;
        let mut acc = 0.0;
        for nuc in &self.params.nuclei {
            let mut diff = [0.0; 3];
            for s in 0..d {
                diff[s] = r[s] - nuc.position[s];
            }
            let w = self.cell.wrap(&diff);
            let mut visit = |shift: [i64; 3]| {
                let mut q = 0.0;
                for s in 0..d {
                    let x = w[s] - l * shift[s] as f64;
                    q += x * x;
                }
                let dist = q.sqrt();
                if dist < self.short_cutoff {
                    acc -= nuc.charge * libm::erfc(a * dist) / dist;
                }
            };
            for i in -m..=m {
                for j in -m..=m {
                    if d == 2 {
                        visit([i, j, 0]);
                    } else {
                        for k in -m..=m {
                            visit([i, j, k]);
                        }
                    }
                }
            }
        }
        acc
    }

    /// Pointwise value with singularities reported as errors.
    pub fn value(&self, r: &Point) -> Result<f64> {
        for nuc in &self.params.nuclei {
            let mut diff = [0.0; 3];
            for s in 0..self.cell.dim {
                diff[s] = r[s] - nuc.position[s];
            }
            let w = self.cell.wrap(&diff);
            if w.iter().map(|x| x * x).sum::<f64>() < 1e-300 {
                return Err(Error::Singular(r[..self.cell.dim].to_vec()));
            }
        }
        Ok(self.eval(r))
    }
}

impl PotentialField for EwaldPotential {
    fn dim(&self) -> usize {
        self.cell.dim
    }

    fn smooth_grid(&self, axes: &[Vec<f64>]) -> Vec<f64> {
        self.reciprocal.eval_grid(axes)
    }

    fn rough(&self, r: &Point) -> f64 {
        self.short_range(r)
    }

    fn is_smooth(&self) -> bool {
        false
    }

    fn singular_points(&self) -> Vec<Point> {
        self.params.nuclei.iter().map(|n| self.cell.wrap(&n.position)).collect()
    }
}

/// Two-dimensional Ewald potential at one point.
pub fn ewald_2d(params: &EwaldParams, cell: UnitCell, r: &Point) -> Result<f64> {
    if cell.dim != 2 {
        return Err(Error::InvalidParameter("ewald_2d needs a two-dimensional cell".into()));
    }
    EwaldPotential::new(cell, params.clone())?.value(r)
}

/// Three-dimensional Ewald potential at one point.
pub fn ewald_3d(params: &EwaldParams, cell: UnitCell, r: &Point) -> Result<f64> {
    if cell.dim != 3 {
        return Err(Error::InvalidParameter("ewald_3d needs a three-dimensional cell".into()));
    }
    EwaldPotential::new(cell, params.clone())?.value(r)
}

/// `θ(t) = s(t)/(s(t) + s(1-t))` with `s(t) = e^{-1/t}` for `t > 0`.
pub fn smooth_step_theta(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let s = |x: f64| (-1.0 / x).exp();
    let a = s(t);
    a / (a + s(1.0 - t))
}

/// Radii of the plateau and of the blend region, as fractions of the patch
/// half-width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothExtensionParams {
    pub b: f64,
    pub a_c: f64,
}

impl SmoothExtensionParams {
    pub fn default_for(half_width: f64) -> Self {
        Self {
            b: 0.5 * half_width,
            a_c: 0.95 * half_width,
        }
    }
}

/// Plateau around one nucleus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtensionBall {
    pub center: Point,
    pub g0: f64,
}

/// Bounded smooth potential that equals `V` outside balls of radius `a_c`
/// around each nucleus and the constant `g0` inside radius `b`.
#[derive(Clone)]
pub struct SmoothExtension {
    pub base: Arc<dyn PotentialField>,
    pub params: SmoothExtensionParams,
    pub balls: Vec<ExtensionBall>,
    pub cell: UnitCell,
}

/// Builds the extension for every patch; `g0 = V(nucleus + b e_1)`.
pub fn smooth_extend(
    base: Arc<dyn PotentialField>,
    cell: UnitCell,
    patches: &[AtomicPatch],
    params: SmoothExtensionParams,
) -> Result<SmoothExtension> {
    let d = cell.dim;
    if !(params.b > 0.0 && params.b < params.a_c) {
        return Err(Error::InvalidParameter(format!(
            "extension radii must satisfy 0 < b < a_c, got b={} a_c={}",
            params.b, params.a_c
        )));
    }
    let mut balls = Vec::with_capacity(patches.len());
    for p in patches {
        let room = (0..d)
            .map(|s| p.half_width - (p.nucleus[s] - p.center[s]).abs())
            .fold(f64::INFINITY, f64::min);
        if params.a_c >= room {
            return Err(Error::InvalidParameter(format!(
                "blend radius a_c={} does not fit inside the patch (room {room})",
                params.a_c
            )));
        }
        let mut probe = p.nucleus;
        probe[0] += params.b;
        balls.push(ExtensionBall {
            center: p.nucleus,
            g0: base.eval(&probe),
        });
    }
    Ok(SmoothExtension {
        base,
        params,
        balls,
        cell,
    })
}

impl SmoothExtension {
    fn blend(&self, r: &Point, raw: impl FnOnce() -> f64) -> f64 {
        let d = self.cell.dim;
        for ball in &self.balls {
            let mut diff = [0.0; 3];
            for s in 0..d {
                diff[s] = r[s] - ball.center[s];
            }
            let w = self.cell.wrap(&diff);
            let dist = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if dist <= self.params.b {
                return ball.g0;
            }
            if dist < self.params.a_c {
                let eta = 1.0 - smooth_step_theta((dist - self.params.b) / (self.params.a_c - self.params.b));
                return (1.0 - eta) * raw() + eta * ball.g0;
            }
        }
        raw()
    }
}

impl PotentialField for SmoothExtension {
    fn dim(&self) -> usize {
        self.cell.dim
    }

    fn smooth_grid(&self, axes: &[Vec<f64>]) -> Vec<f64> {
        let smooth = self.base.smooth_grid(axes);
        let mut out = vec![0.0; smooth.len()];
        let rough = !self.base.is_smooth();
        for_each_grid_point(axes, |flat, r| {
            let raw = || smooth[flat] + if rough { self.base.rough(r) } else { 0.0 };
            out[flat] = self.blend(r, raw);
        });
        out
    }
}

/// Fourier coefficients of the periodic Hartree potential,
/// `4π ρ̂(G)/|G|²` with the zero mode set to zero.
pub fn hartree_solve(rho: &FourierSeries) -> Result<FourierSeries> {
    if rho.cell.dim != 3 {
        return Err(Error::Unsupported("Hartree solve is implemented for three dimensions only".into()));
    }
    let mut out = rho.clone();
    for i in 0..out.coeffs.len() {
        let n = out.index_of(i);
        if n == [0, 0, 0] {
            out.coeffs[i] = Complex64::new(0.0, 0.0);
            continue;
        }
        let g = out.wave_vector(&n);
        let g2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
        out.coeffs[i] *= 4.0 * std::f64::consts::PI / g2;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(d: usize) -> UnitCell {
        UnitCell::new(4.0, d).unwrap()
    }

    fn unit(alpha: f64, g_cut: f64, constant: EwaldConstant) -> EwaldParams {
        EwaldParams {
            alpha,
            g_cut,
            nuclei: vec![Nucleus {
                charge: 1.0,
                position: [0.0; 3],
            }],
            constant,
        }
    }

    #[test]
    fn example_one_has_four_modes() {
        let v = EwaldPotential::new(cell(2), unit(5.0, 2.0, EwaldConstant::SelfTerm)).unwrap();
        let nz = v.reciprocal.coeffs.iter().filter(|c| c.norm() > 0.0).count();
        assert_eq!(nz, 5);
        let a = v.eval(&[0.1, 0.0, 0.0]);
        let b = v.eval(&[0.0, 0.1, 0.0]);
        let c = v.eval(&[4.1, 0.0, 0.0]);
        assert!((a - b).abs() < 1e-14);
        assert!((a - c).abs() < 1e-12);
        assert!(ewald_2d(&unit(5.0, 2.0, EwaldConstant::SelfTerm), cell(2), &[0.0; 3]).is_err());
        assert!(ewald_2d(&unit(5.0, 2.0, EwaldConstant::SelfTerm), cell(2), &[4.0, -4.0, 0.0]).is_err());
    }

    #[test]
    fn example_one_literal_formula() {
        let a: f64 = 5.0;
        let r: Point = [0.1, 0.05, 0.0];
        let rn = (r[0] * r[0] + r[1] * r[1]).sqrt();
        let g = std::f64::consts::FRAC_PI_2;
        let recip = 2.0 * std::f64::consts::PI / 16.0 * libm::erfc(g / (2.0 * a)) / g
            * 2.0
            * ((g * r[0]).cos() + (g * r[1]).cos());
        let exact = -libm::erfc(a * rn) / rn - recip + 2.0 * a / std::f64::consts::PI.sqrt();
        let got = ewald_2d(&unit(a, 2.0, EwaldConstant::SelfTerm), cell(2), &r).unwrap();
        assert!((exact - got).abs() < 1e-13);
    }

    #[test]
    fn alpha_independence_2d() {
        for r in [[0.1, 0.0, 0.0], [0.7, -1.3, 0.0], [1.9, 1.9, 0.0]] {
            let vals: Vec<f64> = [3.0, 4.0, 5.0, 6.0]
                .iter()
                .map(|&a| {
                    let gc = EwaldParams::converged_cutoff(a, 2, 1e-15);
                    ewald_2d(&unit(a, gc, EwaldConstant::MeanZero), cell(2), &r).unwrap()
                })
                .collect();
            for v in &vals[1..] {
                assert!((v - vals[0]).abs() < 1e-8, "{vals:?}");
            }
        }
    }

    #[test]
    fn alpha_independence_3d() {
        let r = [0.1, 0.0, 0.0];
        let v5 = ewald_3d(
            &unit(5.0, EwaldParams::converged_cutoff(5.0, 3, 1e-14), EwaldConstant::MeanZero),
            cell(3),
            &r,
        )
        .unwrap();
        let v3 = ewald_3d(
            &unit(3.0, EwaldParams::converged_cutoff(3.0, 3, 1e-14), EwaldConstant::MeanZero),
            cell(3),
            &r,
        )
        .unwrap();
        assert!((v5 - v3).abs() < 1e-8);
    }

    #[test]
    fn cubic_symmetry_and_cusp_3d() {
        let p = EwaldParams {
            alpha: 5.0,
            g_cut: EwaldParams::converged_cutoff(5.0, 3, 1e-14),
            nuclei: vec![Nucleus {
                charge: 2.0,
                position: [0.0; 3],
            }],
            constant: EwaldConstant::SelfTerm,
        };
        let v = EwaldPotential::new(cell(3), p).unwrap();
        let a = v.eval(&[0.1, 0.0, 0.0]);
        let b = v.eval(&[0.0, 0.1, 0.0]);
        let c = v.eval(&[0.0, 0.0, 0.1]);
        assert!((a - b).abs() < 1e-10 && (a - c).abs() < 1e-10);
        let near = v.eval(&[1e-3, 0.0, 0.0]) * 1e-3;
        assert!((near + 2.0).abs() < 0.02);
    }

    #[test]
    fn theta_identities() {
        assert_eq!(smooth_step_theta(0.0), 0.0);
        assert_eq!(smooth_step_theta(1.0), 1.0);
        assert!((smooth_step_theta(0.5) - 0.5).abs() < 1e-16);
        assert!((smooth_step_theta(0.3) + smooth_step_theta(0.7) - 1.0).abs() < 1e-15);
        let mut prev = 0.0;
        for i in 1..100 {
            let t = smooth_step_theta(i as f64 / 100.0);
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn extension_plateau_and_agreement() {
        let c = cell(2);
        let v: Arc<dyn PotentialField> =
            Arc::new(EwaldPotential::new(c, unit(5.0, 2.0, EwaldConstant::SelfTerm)).unwrap());
        let patch = AtomicPatch::centered([0.0; 3], 0.2);
        let params = SmoothExtensionParams::default_for(0.2);
        let ext = smooth_extend(v.clone(), c, &[patch], params).unwrap();
        let g0 = v.eval(&[0.1, 0.0, 0.0]);
        assert_eq!(ext.balls[0].g0, g0);
        for r in [[0.0, 0.0, 0.0], [0.06, 0.05, 0.0], [0.0, -0.1, 0.0]] {
            assert_eq!(ext.eval(&r), g0);
        }
        for r in [[0.21, 0.0, 0.0], [1.0, 1.5, 0.0], [-0.2, 0.3, 0.0]] {
            assert!((ext.eval(&r) - v.eval(&r)).abs() < 1e-14);
        }
        let bad = SmoothExtensionParams { b: 0.05, a_c: 0.2 };
        assert!(smooth_extend(v, c, &[patch], bad).is_err());
    }

    #[test]
    fn extension_is_c1() {
        let c = cell(2);
        let v: Arc<dyn PotentialField> =
            Arc::new(EwaldPotential::new(c, unit(5.0, 2.0, EwaldConstant::SelfTerm)).unwrap());
        let patch = AtomicPatch::centered([0.0; 3], 0.2);
        let params = SmoothExtensionParams::default_for(0.2);
        let ext = smooth_extend(v, c, &[patch], params).unwrap();
        let f = |x: f64| ext.eval(&[x, 0.0, 0.0]);
        let h = 1e-5;
        for x0 in [params.b, params.a_c] {
            let left = (f(x0) - f(x0 - h)) / h;
            let right = (f(x0 + h) - f(x0)) / h;
            let curvature = (f(x0 + 2.0 * h) - 2.0 * f(x0) + f(x0 - 2.0 * h)).abs() / (4.0 * h * h);
            assert!((left - right).abs() < 1e-6 + curvature * h * 2.0, "x0={x0}");
        }
    }

    #[test]
    fn hartree_modes() {
        let c = cell(3);
        let mut rho = FourierSeries::zeros(c, 2);
        let i = rho.flat_of(&[1, 0, 0]).unwrap();
        rho.coeffs[i] = Complex64::new(0.3, 0.0);
        let j = rho.flat_of(&[0, 0, 0]).unwrap();
        rho.coeffs[j] = Complex64::new(0.125, 0.0);
        let vh = hartree_solve(&rho).unwrap();
        let g = c.dual_spacing();
        assert!((vh.coeffs[i] - 4.0 * std::f64::consts::PI * 0.3 / (g * g)).norm() < 1e-14);
        assert_eq!(vh.coeffs[j], Complex64::new(0.0, 0.0));
        assert_eq!(vh.coeffs.iter().filter(|z| z.norm() > 0.0).count(), 1);
        assert!(hartree_solve(&FourierSeries::zeros(cell(2), 2)).is_err());
    }

    #[test]
    fn hartree_of_gaussian_matches_ewald_identity() {
        // Unit Gaussian charge: V_H = φ - Σ erfc(β|r-R|)/|r-R| + π/(β²|Ω|),
        // where φ is the mean-zero periodic Coulomb potential of a point charge.
        let c = cell(3);
        let beta: f64 = 2.5;
        let vol = c.volume();
        let extent = 14;
        let rho = FourierSeries::from_fn(c, extent, |n| {
            let g = c.dual_spacing();
            let g2 = g * g * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]) as f64;
            Complex64::new((-g2 / (4.0 * beta * beta)).exp() / vol, 0.0)
        });
        let vh = hartree_solve(&rho).unwrap();
        let phi = EwaldPotential::new(
            c,
            EwaldParams {
                alpha: 3.0,
                g_cut: EwaldParams::converged_cutoff(3.0, 3, 1e-15),
                nuclei: vec![Nucleus {
                    charge: -1.0,
                    position: [0.0; 3],
                }],
                constant: EwaldConstant::MeanZero,
            },
        )
        .unwrap();
        let short = EwaldPotential::new(
            c,
            EwaldParams {
                alpha: beta,
                g_cut: 0.0,
                nuclei: vec![Nucleus {
                    charge: 1.0,
                    position: [0.0; 3],
                }],
                constant: EwaldConstant::MeanZero,
            },
        )
        .unwrap();
        for r in [[0.3, 0.1, -0.2], [1.5, 0.0, 0.7], [-1.9, 1.2, 0.4]] {
            let exact = phi.eval(&r) + short.short_range(&r) + std::f64::consts::PI / (beta * beta * vol);
            assert!((vh.eval(&r) - exact).abs() < 1e-6, "{} vs {}", vh.eval(&r), exact);
        }
    }
}
