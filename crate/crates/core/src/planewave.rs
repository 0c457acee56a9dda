//! Truncated plane-wave basis on the dual lattice and the analytic overlap
//! factor of plane waves restricted to the interstitial region.

use num_complex::Complex64;

use crate::geometry::{DomainDecomposition, Point, UnitCell};

/// Plane waves `e_k = |Ω|^{-1/2} e^{ik·r}` with `|k| ≤ 2πK/L`.
#[derive(Clone, Debug)]
pub struct WaveVectorSet {
    pub cutoff: usize,
    pub cell: UnitCell,
    /// Integer lattice coordinates `n` with `k = 2π n / L`.
    pub indices: Vec<[i64; 3]>,
    pub vectors: Vec<Point>,
}

/// Enumerates the sphere `|n| ≤ K`, ordered by `|n|²` then lexicographically.
pub fn build_wavevectors(cutoff: usize, cell: UnitCell) -> WaveVectorSet {
    let d = cell.dim;
    let k = cutoff as i64;
    let k2 = k * k;
    let range = || -k..=k;
    let mut indices: Vec<[i64; 3]> = Vec::new();
    for a in range() {
        for b in range() {
            let cs: Vec<i64> = if d == 3 { range().collect() } else { vec![0] };
            for c in cs {
                if a * a + b * b + c * c <= k2 {
                    indices.push([a, b, c]);
                }
            }
        }
    }
    indices.sort_by_key(|n| (n[0] * n[0] + n[1] * n[1] + n[2] * n[2], *n));
    let g = cell.dual_spacing();
    let vectors = indices
        .iter()
        .map(|n| [g * n[0] as f64, g * n[1] as f64, g * n[2] as f64])
        .collect();
    WaveVectorSet {
        cutoff,
        cell,
        indices,
        vectors,
    }
}

impl WaveVectorSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Largest wave-vector norm in the set.
    pub fn k_max(&self) -> f64 {
        self.vectors.iter().map(|k| norm(k)).fold(0.0, f64::max)
    }

    /// Position of a lattice index in the set.
    pub fn position(&self, n: &[i64; 3]) -> Option<usize> {
        self.indices.iter().position(|m| m == n)
    }
}

pub fn norm(k: &Point) -> f64 {
    (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt()
}

pub fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Normalized plane wave `|Ω|^{-1/2} e^{ik·r}`.
pub fn eval_pw(k: &Point, r: &Point, cell: &UnitCell) -> Complex64 {
    Complex64::from_polar(cell.volume().powf(-0.5), dot(k, r))
}

/// `sin(t)/t` with a Taylor branch near zero.
pub fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-4 {
        let t2 = t * t;
        1.0 - t2 / 6.0 * (1.0 - t2 / 20.0)
    } else {
        t.sin() / t
    }
}

/// `∫_{c-R}^{c+R} e^{ikx} dx` for one patch axis.
pub fn box_integral_1d(k: f64, center: f64, half_width: f64) -> Complex64 {
    Complex64::from_polar(2.0 * half_width * sinc(k * half_width), k * center)
}

/// `(1/|Ω|) ∫_{Ω_in} e^{iΔk·r} dr` summed over all patches.
pub fn inner_factor(dk: &Point, decomp: &DomainDecomposition) -> Complex64 {
    let d = decomp.dim();
    let mut acc = Complex64::new(0.0, 0.0);
    for p in &decomp.patches {
        let mut term = Complex64::new(1.0, 0.0);
        for s in 0..d {
            term *= box_integral_1d(dk[s], p.center[s], p.half_width);
        }
        acc += term;
    }
    acc / decomp.cell.volume()
}

/// `U(Δk) = (1/|Ω|) ∫_{Ω_out} e^{iΔk·r} dr` for a dual-lattice `Δk`.
pub fn geometric_factor_u(dk: &Point, decomp: &DomainDecomposition) -> Complex64 {
    let zero = dk.iter().all(|&x| x.abs() < 1e-12);
    let delta = if zero { 1.0 } else { 0.0 };
    Complex64::new(delta, 0.0) - inner_factor(dk, decomp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_decomposition, gauss_legendre, AtomicPatch};

    fn dec(d: usize) -> DomainDecomposition {
        build_decomposition(UnitCell::new(4.0, d).unwrap(), vec![AtomicPatch::centered([0.0; 3], 0.2)]).unwrap()
    }

    #[test]
    fn counts() {
        let c2 = UnitCell::new(4.0, 2).unwrap();
        assert_eq!(build_wavevectors(1, c2).len(), 5);
        let brute = (-2i64..=2)
            .flat_map(|a| (-2i64..=2).map(move |b| a * a + b * b))
            .filter(|&s| s <= 4)
            .count();
        assert_eq!(build_wavevectors(2, c2).len(), brute);
        assert_eq!(brute, 13);
        let c3 = UnitCell::new(4.0, 3).unwrap();
        assert_eq!(build_wavevectors(1, c3).len(), 7);
    }

    #[test]
    fn ordering_and_symmetry() {
        let set = build_wavevectors(6, UnitCell::new(4.0, 3).unwrap());
        assert_eq!(set.indices[0], [0, 0, 0]);
        for w in set.indices.windows(2) {
            let n0: i64 = w[0].iter().map(|x| x * x).sum();
            let n1: i64 = w[1].iter().map(|x| x * x).sum();
            assert!((n0, w[0]) < (n1, w[1]));
        }
        for n in &set.indices {
            assert!(set.position(&[-n[0], -n[1], -n[2]]).is_some());
        }
    }

    #[test]
    fn pw_values() {
        let c = UnitCell::new(4.0, 2).unwrap();
        let v = eval_pw(&[0.0; 3], &[0.3, 0.7, 0.0], &c);
        assert!((v - Complex64::new(0.25, 0.0)).norm() < 1e-16);
        let v = eval_pw(&[std::f64::consts::FRAC_PI_2, 0.0, 0.0], &[1.0, 0.0, 0.0], &c);
        assert!((v - Complex64::new(0.0, 0.25)).norm() < 1e-16);
    }

    #[test]
    fn discrete_orthonormality() {
        let cell = UnitCell::new(4.0, 2).unwrap();
        let set = build_wavevectors(3, cell);
        let ng = 16;
        let hstep = cell.length / ng as f64;
        let wgt = cell.volume() / (ng * ng) as f64;
        for (a, ka) in set.vectors.iter().enumerate() {
            for (b, kb) in set.vectors.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..ng {
                    for j in 0..ng {
                        let r = [-2.0 + i as f64 * hstep, -2.0 + j as f64 * hstep, 0.0];
                        acc += eval_pw(ka, &r, &cell) * eval_pw(kb, &r, &cell).conj() * wgt;
                    }
                }
                let exact = if a == b { 1.0 } else { 0.0 };
                assert!((acc - exact).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn sinc_branch() {
        assert_eq!(sinc(0.0), 1.0);
        for t in [1e-5, 9.99e-5, 1.0001e-4, 0.3, 5.0, -7.0] {
            let direct: f64 = if t == 0.0 { 1.0 } else { (t as f64).sin() / t };
            assert!((sinc(t) - direct).abs() < 1e-15);
            assert!(sinc(t).abs() <= 1.0);
        }
    }

    #[test]
    fn u_values() {
        let d2 = dec(2);
        assert!((geometric_factor_u(&[0.0; 3], &d2) - 0.99).norm() < 1e-15);
        let d3 = dec(3);
        assert!((geometric_factor_u(&[0.0; 3], &d3) - 0.999).norm() < 1e-15);
        let u = geometric_factor_u(&[std::f64::consts::FRAC_PI_2, 0.0, 0.0], &d2);
        let t = std::f64::consts::PI / 10.0;
        assert!((u.re + 0.01 * t.sin() / t).abs() < 1e-15 && u.im.abs() < 1e-16);
        assert!((u.re + 0.0098363).abs() < 1e-7);
    }

    /// Direct tensor Gauss quadrature over the rectangles tiling Ω_out.
    fn outer_quadrature(dk: &Point, decomp: &DomainDecomposition) -> Complex64 {
        let d = decomp.dim();
        let p = &decomp.patches[0];
        let half = 0.5 * decomp.cell.length;
        let (x, w) = gauss_legendre(60);
        let mut acc = Complex64::new(0.0, 0.0);
        let pieces = |s: usize| [(-half, p.lower(s)), (p.lower(s), p.upper(s)), (p.upper(s), half)];
        let boxes: Vec<Vec<(f64, f64)>> = if d == 2 {
            let (a, b) = (pieces(0), pieces(1));
            a.iter().flat_map(|&i| b.iter().map(move |&j| vec![i, j])).collect()
        } else {
            let mut all = Vec::new();
            for i in pieces(0) {
                for j in pieces(1) {
                    for k in pieces(2) {
                        all.push(vec![i, j, k]);
                    }
                }
            }
            all
        };
        for bx in boxes {
            if (0..d).all(|s| bx[s] == (p.lower(s), p.upper(s))) {
                continue;
            }
            let mut prod = Complex64::new(1.0, 0.0);
            for s in 0..d {
                let (a, b) = bx[s];
                let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
                let mut one = Complex64::new(0.0, 0.0);
                for (xi, wi) in x.iter().zip(&w) {
                    one += Complex64::from_polar(wi * h, dk[s] * (m + h * xi));
                }
                prod *= one;
            }
            acc += prod;
        }
        acc / decomp.cell.volume()
    }

    #[test]
    fn u_matches_outer_quadrature() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for d in [2, 3] {
            let dd = dec(d);
            let g = dd.cell.dual_spacing();
            for _ in 0..20 {
                let mut dk = [0.0; 3];
                for s in 0..d {
                    dk[s] = g * rng.random_range(-12i64..=12) as f64;
                }
                let a = geometric_factor_u(&dk, &dd);
                let b = outer_quadrature(&dk, &dd);
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn u_gram_is_psd() {
        use faer::{Mat, Side};
        let d = build_decomposition(
            UnitCell::new(4.0, 2).unwrap(),
            vec![
                AtomicPatch::centered([-1.0, 0.0, 0.0], 0.2),
                AtomicPatch::centered([1.0, 0.3, 0.0], 0.2),
            ],
        )
        .unwrap();
        let set = build_wavevectors(4, d.cell);
        let n = set.len();
        let mut m = Mat::<faer::c64>::zeros(n, n);
        for p in 0..n {
            for q in 0..n {
                let dk = [
                    set.vectors[q][0] - set.vectors[p][0],
                    set.vectors[q][1] - set.vectors[p][1],
                    0.0,
                ];
                let u = geometric_factor_u(&dk, &d);
                m[(p, q)] = faer::c64::new(u.re, u.im);
                let neg = geometric_factor_u(&[-dk[0], -dk[1], 0.0], &d);
                assert!((neg - u.conj()).norm() < 1e-15);
            }
        }
        let eig = m.self_adjoint_eigen(Side::Lower).unwrap();
        let s = eig.S().column_vector();
        for i in 0..n {
            assert!(s[i].re > -1e-12);
        }
    }
}
