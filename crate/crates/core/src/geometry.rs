//! Periodic unit cell, atomic patches, the interstitial region, and the
//! quadrature rules used on volumes and interface faces.
//!
//! Points are stored as `[f64; 3]`; in two dimensions the third component is
//! ignored and kept at zero.

use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// The periodic cell `[-L/2, L/2]^d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitCell {
    pub length: f64,
    pub dim: usize,
}

impl UnitCell {
    pub fn new(length: f64, dim: usize) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::Geometry(format!("cell length must be positive, got {length}")));
        }
        if dim != 2 && dim != 3 {
            return Err(Error::Geometry(format!("dimension must be 2 or 3, got {dim}")));
        }
        Ok(Self { length, dim })
    }

    pub fn volume(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    /// Spacing of the dual lattice, `2π/L`.
    pub fn dual_spacing(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.length
    }

    /// Maps a point back into the cell by lattice translations.
    pub fn wrap(&self, r: &Point) -> Point {
        let mut out = [0.0; 3];
        for s in 0..self.dim {
            let l = self.length;
            let mut x = r[s] - l * (r[s] / l).round();
            if x >= 0.5 * l {
                x -= l;
            }
            out[s] = x;
        }
        out
    }
}

/// Axis-aligned box `[center - R, center + R]^d` enclosing one nucleus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AtomicPatch {
    pub center: Point,
    pub half_width: f64,
    /// Position of the enclosed nucleus; usually the center.
    pub nucleus: Point,
}

impl AtomicPatch {
    pub fn centered(center: Point, half_width: f64) -> Self {
        Self {
            center,
            half_width,
            nucleus: center,
        }
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.center[axis] - self.half_width
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.center[axis] + self.half_width
    }

    pub fn side(&self) -> f64 {
        2.0 * self.half_width
    }

    pub fn volume(&self, dim: usize) -> f64 {
        self.side().powi(dim as i32)
    }

    /// Closed-box membership with an absolute tolerance.
    pub fn contains(&self, r: &Point, dim: usize, tol: f64) -> bool {
        (0..dim).all(|s| (r[s] - self.center[s]).abs() <= self.half_width + tol)
    }
}

/// Sign of the outward normal of the patch on a face.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceSide {
    Lower,
    Upper,
}

impl FaceSide {
    pub fn sign(self) -> f64 {
        match self {
            FaceSide::Lower => -1.0,
            FaceSide::Upper => 1.0,
        }
    }
}

/// One face of a patch boundary. The normal points out of the patch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterfaceFace {
    pub patch: usize,
    pub axis: usize,
    pub side: FaceSide,
    /// Lowest corner of the face in physical coordinates.
    pub corner: Point,
    /// Edge length of the face along every tangential axis.
    pub extent: f64,
    pub normal: Point,
    pub dim: usize,
}

impl InterfaceFace {
    /// Coordinate of the face plane along its normal axis.
    pub fn offset(&self) -> f64 {
        self.corner[self.axis]
    }

    pub fn measure(&self) -> f64 {
        self.extent.powi(self.dim as i32 - 1)
    }

    pub fn tangential_axes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim).filter(move |&s| s != self.axis)
    }
}

/// Which side of the interface a point falls on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Patch(usize),
    Interstitial,
}

/// Unit cell split into atomic patches and the interstitial region.
#[derive(Clone, Debug)]
pub struct DomainDecomposition {
    pub cell: UnitCell,
    pub patches: Vec<AtomicPatch>,
    pub faces: Vec<InterfaceFace>,
}

/// Validates the patches and enumerates their interface faces.
pub fn build_decomposition(cell: UnitCell, patches: Vec<AtomicPatch>) -> Result<DomainDecomposition> {
    let d = cell.dim;
    let half = 0.5 * cell.length;
    for (j, p) in patches.iter().enumerate() {
        if !(p.half_width > 0.0) {
            return Err(Error::Geometry(format!("patch {j}: half-width must be positive")));
        }
        for s in 0..d {
            if p.lower(s) <= -half || p.upper(s) >= half {
                return Err(Error::Geometry(format!(
                    "patch {j} touches or crosses the cell boundary along axis {s}"
                )));
            }
            if (p.nucleus[s] - p.center[s]).abs() >= p.half_width {
                return Err(Error::Geometry(format!("patch {j}: nucleus is not strictly inside the patch")));
            }
        }
    }
    for a in 0..patches.len() {
        for b in a + 1..patches.len() {
            let (pa, pb) = (&patches[a], &patches[b]);
            let separated = (0..d).any(|s| pa.upper(s) < pb.lower(s) || pb.upper(s) < pa.lower(s));
            if !separated {
                return Err(Error::Geometry(format!("patches {a} and {b} overlap or touch")));
            }
        }
    }

    let mut faces = Vec::with_capacity(patches.len() * 2 * d);
    for (j, p) in patches.iter().enumerate() {
        for axis in 0..d {
            for side in [FaceSide::Lower, FaceSide::Upper] {
                let mut corner = [0.0; 3];
                for s in 0..d {
                    corner[s] = p.lower(s);
                }
                corner[axis] = match side {
                    FaceSide::Lower => p.lower(axis),
                    FaceSide::Upper => p.upper(axis),
                };
                let mut normal = [0.0; 3];
                normal[axis] = side.sign();
                faces.push(InterfaceFace {
                    patch: j,
                    axis,
                    side,
                    corner,
                    extent: p.side(),
                    normal,
                    dim: d,
                });
            }
        }
    }
    Ok(DomainDecomposition { cell, patches, faces })
}

impl DomainDecomposition {
    pub fn dim(&self) -> usize {
        self.cell.dim
    }

    pub fn interface_measure(&self) -> f64 {
        self.faces.iter().map(InterfaceFace::measure).sum()
    }

    pub fn inner_volume(&self) -> f64 {
        self.patches.iter().map(|p| p.volume(self.cell.dim)).sum()
    }

    pub fn faces_of(&self, patch: usize) -> impl Iterator<Item = &InterfaceFace> {
        self.faces.iter().filter(move |f| f.patch == patch)
    }

    /// Classifies a point after periodic wrapping. Points on the interface
    /// belong to the (closed) patch.
    pub fn classify(&self, r: &Point) -> Region {
        let w = self.cell.wrap(r);
        for (j, p) in self.patches.iter().enumerate() {
            if p.contains(&w, self.cell.dim, 1e-12) {
                return Region::Patch(j);
            }
        }
        Region::Interstitial
    }
}

/// Nodes and positive weights of a quadrature rule.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate<F: FnMut(&Point) -> f64>(&self, mut f: F) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, exact for polynomials of
/// degree `2 * order - 1`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "Gauss rule needs at least one node");
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // Tricomi initial guess, refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Legendre rule with `order` nodes mapped onto `[a, b]`.
pub fn gauss_rule(order: usize, interval: (f64, f64)) -> QuadratureRule {
    let (x, w) = gauss_legendre(order);
    let (a, b) = interval;
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    QuadratureRule {
        points: x.iter().map(|&t| [mid + half * t, 0.0, 0.0]).collect(),
        weights: w.iter().map(|&wi| wi * half).collect(),
    }
}

/// Tensor Gauss rule on an interface face, in physical coordinates.
pub fn face_quadrature(face: &InterfaceFace, order: usize) -> QuadratureRule {
    let rule = gauss_rule(order, (0.0, face.extent));
    let tangential: Vec<usize> = face.tangential_axes().collect();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match tangential.len() {
        1 => {
            let t = tangential[0];
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let mut r = face.corner;
                r[t] += p[0];
                points.push(r);
                weights.push(*w);
            }
        }
        2 => {
            let (t0, t1) = (tangential[0], tangential[1]);
            for (pj, wj) in rule.points.iter().zip(&rule.weights) {
                for (pi, wi) in rule.points.iter().zip(&rule.weights) {
                    let mut r = face.corner;
                    r[t0] += pi[0];
                    r[t1] += pj[0];
                    points.push(r);
                    weights.push(wi * wj);
                }
            }
        }
        _ => unreachable!("faces have dimension 1 or 2"),
    }
    QuadratureRule { points, weights }
}

/// Face quadrature order that resolves splines of degree `p` and plane waves
/// up to `k_max` on a patch of half-width `half_width`.
pub fn face_order(p: usize, k_max: f64, half_width: f64) -> usize {
    let osc = (k_max * half_width).ceil() as usize + 12;
    (p + 2).max(osc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn one_patch(d: usize) -> DomainDecomposition {
        let cell = UnitCell::new(4.0, d).unwrap();
        build_decomposition(cell, vec![AtomicPatch::centered([0.0; 3], 0.2)]).unwrap()
    }

    #[test]
    fn single_patch_faces() {
        let d2 = one_patch(2);
        assert_eq!(d2.faces.len(), 4);
        assert!((d2.interface_measure() - 1.6).abs() < 1e-14);
        let d3 = one_patch(3);
        assert_eq!(d3.faces.len(), 6);
        assert!((d3.interface_measure() - 0.96).abs() < 1e-14);
        for f in &d3.faces {
            let n: f64 = f.normal.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_patch_layout() {
        let cell = UnitCell::new(4.0, 2).unwrap();
        let dec = build_decomposition(
            cell,
            vec![
                AtomicPatch::centered([-1.0, 0.0, 0.0], 0.2),
                AtomicPatch::centered([1.0, 0.0, 0.0], 0.2),
            ],
        )
        .unwrap();
        assert_eq!(dec.faces.len(), 8);
        let p0 = &dec.patches[0];
        assert!((p0.lower(0) + 1.2).abs() < 1e-15 && (p0.upper(0) + 0.8).abs() < 1e-15);
        assert!((p0.lower(1) + 0.2).abs() < 1e-15 && (p0.upper(1) - 0.2).abs() < 1e-15);
        let p1 = &dec.patches[1];
        assert!((p1.lower(0) - 0.8).abs() < 1e-15 && (p1.upper(0) - 1.2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_layouts() {
        let cell = UnitCell::new(4.0, 2).unwrap();
        let overlap = build_decomposition(
            cell,
            vec![
                AtomicPatch::centered([0.0; 3], 0.2),
                AtomicPatch::centered([0.3, 0.0, 0.0], 0.2),
            ],
        );
        assert!(overlap.is_err());
        let touching = build_decomposition(cell, vec![AtomicPatch::centered([1.8, 0.0, 0.0], 0.2)]);
        assert!(touching.is_err());
        let mut off = AtomicPatch::centered([0.0; 3], 0.2);
        off.nucleus = [0.25, 0.0, 0.0];
        assert!(build_decomposition(cell, vec![off]).is_err());
    }

    #[test]
    fn gauss_exactness() {
        let r1 = gauss_rule(1, (-1.0, 1.0));
        assert!(r1.points[0][0].abs() < 1e-16 && (r1.weights[0] - 2.0).abs() < 1e-15);
        let r2 = gauss_rule(2, (-1.0, 1.0));
        assert!(r2.integrate(|p| p[0].powi(3)).abs() < 1e-15);
        assert!((r2.integrate(|p| p[0] * p[0]) - 2.0 / 3.0).abs() < 1e-15);
        let r8 = gauss_rule(8, (0.0, 1.0));
        let exact = 1.0 - 1f64.cos();
        assert!((r8.integrate(|p| p[0].sin()) - exact).abs() < 1e-14);
        for order in 1..40 {
            let r = gauss_rule(order, (-1.0, 1.0));
            let deg = 2 * order - 1;
            let exact = if deg % 2 == 0 { 2.0 / (deg as f64 + 1.0) } else { 0.0 };
            assert!((r.integrate(|p| p[0].powi(deg as i32)) - exact).abs() < 1e-13, "order {order}");
            assert!(r.weights.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn face_rules() {
        let d2 = one_patch(2);
        let q = face_quadrature(&d2.faces[0], 4);
        assert!((q.weights.iter().sum::<f64>() - 0.4).abs() < 1e-15);
        let d3 = one_patch(3);
        let q = face_quadrature(&d3.faces[0], 4);
        assert!((q.weights.iter().sum::<f64>() - 0.16).abs() < 1e-15);

        // face x = 0.2, y in [-0.2, 0.2], k = (π/2, 0)
        let face = d2.faces.iter().find(|f| f.axis == 0 && f.side == FaceSide::Upper).unwrap();
        let q = face_quadrature(face, 8);
        let k = std::f64::consts::FRAC_PI_2;
        let mut acc = Complex64::new(0.0, 0.0);
        for (p, w) in q.points.iter().zip(&q.weights) {
            acc += Complex64::from_polar(*w, k * p[0]);
        }
        let exact = Complex64::from_polar(0.4, std::f64::consts::PI / 10.0);
        assert!((acc - exact).norm() < 1e-12);
    }

    #[test]
    fn classifier_matches_faces() {
        let dec = one_patch(2);
        assert_eq!(dec.classify(&[0.0, 0.0, 0.0]), Region::Patch(0));
        assert_eq!(dec.classify(&[0.2, 0.1, 0.0]), Region::Patch(0));
        assert_eq!(dec.classify(&[0.2 + 1e-9, 0.1, 0.0]), Region::Interstitial);
        assert_eq!(dec.classify(&[4.1, 0.0, 0.0]), Region::Patch(0));
        for f in &dec.faces {
            let q = face_quadrature(f, 3);
            for p in &q.points {
                assert_eq!(dec.classify(p), Region::Patch(0));
                let mut out = *p;
                out[f.axis] += f.normal[f.axis] * 1e-8;
                assert_eq!(dec.classify(&out), Region::Interstitial);
            }
        }
    }

    #[test]
    fn oscillatory_face_integrals() {
        let dec = one_patch(3);
        let k_cut = 2.0 * std::f64::consts::PI * 8.0 / 4.0;
        for f in &dec.faces {
            let order = face_order(2, 2.0 * k_cut, 0.2);
            let q = face_quadrature(f, order);
            let k = [2.0 * k_cut * 0.6, -2.0 * k_cut * 0.5, 2.0 * k_cut * 0.3];
            let mut acc = Complex64::new(0.0, 0.0);
            for (p, w) in q.points.iter().zip(&q.weights) {
                let ph: f64 = (0..3).map(|s| k[s] * p[s]).sum();
                acc += Complex64::from_polar(*w, ph);
            }
            let mut exact = Complex64::from_polar(1.0, k[f.axis] * f.offset());
            for t in f.tangential_axes() {
                let (a, b) = (f.corner[t], f.corner[t] + f.extent);
                exact *= (Complex64::from_polar(1.0, k[t] * b) - Complex64::from_polar(1.0, k[t] * a))
                    / Complex64::new(0.0, k[t]);
            }
            assert!((acc - exact).norm() < 1e-10);
        }
    }
}
