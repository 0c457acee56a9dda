//! B-spline bases on open knot vectors, their tensor products, and the
//! affine map from the parametric cube onto an atomic patch.

use crate::error::{Error, Result};
use crate::geometry::{AtomicPatch, Point};

/// Open knot vector of degree `p` on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct KnotVector {
    pub degree: usize,
    pub knots: Vec<f64>,
}

/// Open uniform knot vector with `n_elem` elements per axis.
pub fn open_uniform_knots(p: usize, n_elem: usize) -> KnotVector {
    assert!(p >= 1 && n_elem >= 1);
    let mut knots = vec![0.0; p + 1];
    knots.extend((1..n_elem).map(|j| j as f64 / n_elem as f64));
    knots.extend(std::iter::repeat(1.0).take(p + 1));
    KnotVector { degree: p, knots }
}

impl KnotVector {
    /// Builds an open knot vector from strictly increasing interior knots.
    pub fn with_interior(p: usize, interior: &[f64]) -> Result<Self> {
        if p < 1 {
            return Err(Error::InvalidParameter("spline degree must be at least 1".into()));
        }
        let mut prev = 0.0;
        for &x in interior {
            if !(x > prev && x < 1.0) {
                return Err(Error::InvalidParameter(
                    "interior knots must be strictly increasing inside (0, 1)".into(),
                ));
            }
            prev = x;
        }
        let mut knots = vec![0.0; p + 1];
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat(1.0).take(p + 1));
        Ok(Self { degree: p, knots })
    }

    /// Number of basis functions.
    pub fn len(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_elements(&self) -> usize {
        self.len() - self.degree
    }

    /// Distinct knot values, i.e. element boundaries.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.knots[self.degree..=self.len()].to_vec()
    }

    /// Largest parametric element length.
    pub fn mesh_size(&self) -> f64 {
        self.breakpoints().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Knot span index `i` with `ξ ∈ [ξ_i, ξ_{i+1})`, using the last
    /// non-empty span at `ξ = 1`.
    fn find_span(&self, xi: f64) -> usize {
        let n = self.len();
        let p = self.degree;
        if xi >= self.knots[n] {
            return n - 1;
        }
        let mut lo = p;
        let mut hi = n;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if xi < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Element containing `ξ`, 0-based.
    pub fn element_of(&self, xi: f64) -> usize {
        self.find_span(xi.clamp(0.0, 1.0)) - self.degree
    }

    fn check(xi: f64) -> Result<()> {
        if (0.0..=1.0).contains(&xi) {
            Ok(())
        } else {
            Err(Error::OutOfDomain(xi))
        }
    }

    /// First active basis index and the `p + 1` values of the active functions.
    pub fn eval_basis(&self, xi: f64) -> Result<(usize, Vec<f64>)> {
        Self::check(xi)?;
        let (first, ders) = self.ders(xi, 0);
        Ok((first, ders.into_iter().next().unwrap()))
    }

    /// First active basis index and the first derivatives of the active functions.
    pub fn eval_basis_deriv(&self, xi: f64) -> Result<(usize, Vec<f64>)> {
        Self::check(xi)?;
        let (first, ders) = self.ders(xi, 1);
        Ok((first, ders.into_iter().nth(1).unwrap()))
    }

    /// Values and derivatives up to order `nd` of the active functions.
    /// Row `k` of the result holds the `k`-th derivatives.
    pub fn eval_ders(&self, xi: f64, nd: usize) -> Result<(usize, Vec<Vec<f64>>)> {
        Self::check(xi)?;
        Ok(self.ders(xi, nd))
    }

    fn ders(&self, xi: f64, nd: usize) -> (usize, Vec<Vec<f64>>) {
        let p = self.degree;
        let u = &self.knots;
        let span = self.find_span(xi);
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = xi - u[span + 1 - j];
            right[j] = u[span + j] - xi;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let tmp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            ndu[j][j] = saved;
        }

        let mut out = vec![vec![0.0; p + 1]; nd + 1];
        for j in 0..=p {
            out[0][j] = ndu[j][p];
        }
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=nd.min(p) {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                out[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for k in 1..=nd.min(p) {
            for v in out[k].iter_mut() {
                *v *= fac;
            }
            fac *= (p - k) as f64;
        }
        (span - p, out)
    }
}

/// Tensor-product spline space on the parametric cube.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineSpace {
    pub axes: Vec<KnotVector>,
}

impl SplineSpace {
    pub fn uniform(p: usize, n_elem: usize, dim: usize) -> Self {
        Self {
            axes: vec![open_uniform_knots(p, n_elem); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn degree(&self) -> usize {
        self.axes[0].degree
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(KnotVector::len).collect()
    }

    pub fn n_dofs(&self) -> usize {
        self.axes.iter().map(KnotVector::len).product()
    }

    /// Lexicographic DOF index, first axis fastest.
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (s, kv) in self.axes.iter().enumerate() {
            idx += multi[s] * stride;
            stride *= kv.len();
        }
        idx
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        self.axes
            .iter()
            .map(|kv| {
                let i = flat % kv.len();
                flat /= kv.len();
                i
            })
            .collect()
    }

    /// True when the basis function touches the patch boundary.
    pub fn is_boundary_dof(&self, flat: usize) -> bool {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .any(|(&i, kv)| i == 0 || i + 1 == kv.len())
    }
}

/// Affine map `ξ ↦ lower + 2R ξ` from `[0, 1]^d` onto a patch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometryMap {
    pub lower: Point,
    pub scale: f64,
    pub dim: usize,
}

impl GeometryMap {
    pub fn for_patch(patch: &AtomicPatch, dim: usize) -> Self {
        let mut lower = [0.0; 3];
        for (s, l) in lower.iter_mut().enumerate().take(dim) {
            *l = patch.lower(s);
        }
        Self {
            lower,
            scale: patch.side(),
            dim,
        }
    }

    pub fn forward(&self, xi: &Point) -> Point {
        let mut r = [0.0; 3];
        for s in 0..self.dim {
            r[s] = self.lower[s] + self.scale * xi[s];
        }
        r
    }

    pub fn inverse(&self, r: &Point) -> Point {
        let mut xi = [0.0; 3];
        for s in 0..self.dim {
            xi[s] = (r[s] - self.lower[s]) / self.scale;
        }
        xi
    }

    pub fn jacobian_det(&self) -> f64 {
        self.scale.powi(self.dim as i32)
    }
}

/// One active tensor basis function at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActiveBasis {
    pub dof: usize,
    pub value: f64,
    pub grad: Point,
}

/// Evaluates all active tensor basis functions and their physical gradients.
pub fn tensor_eval(space: &SplineSpace, map: &GeometryMap, r: &Point) -> Result<Vec<ActiveBasis>> {
    let d = space.dim();
    let xi = map.inverse(r);
    let tol = 1e-12;
    if (0..d).any(|s| xi[s] < -tol || xi[s] > 1.0 + tol) {
        return Err(Error::OutsidePatch(r[..d].to_vec()));
    }
    let mut first = [0usize; 3];
    let mut vals: Vec<Vec<Vec<f64>>> = Vec::with_capacity(d);
    for s in 0..d {
        let (f, v) = space.axes[s].eval_ders(xi[s].clamp(0.0, 1.0), 1)?;
        first[s] = f;
        vals.push(v);
    }
    let inv = 1.0 / map.scale;
    let np: Vec<usize> = (0..d).map(|s| space.axes[s].degree + 1).collect();
    let total: usize = np.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut local = [0usize; 3];
    for mut flat in 0..total {
        for s in 0..d {
            local[s] = flat % np[s];
            flat /= np[s];
        }
        let mut value = 1.0;
        let mut grad = [0.0; 3];
        for s in 0..d {
            value *= vals[s][0][local[s]];
        }
        for g in 0..d {
            let mut prod = inv;
            for s in 0..d {
                prod *= if s == g { vals[s][1][local[s]] } else { vals[s][0][local[s]] };
            }
            grad[g] = prod;
        }
        let multi: Vec<usize> = (0..d).map(|s| first[s] + local[s]).collect();
        out.push(ActiveBasis {
            dof: space.flat_index(&multi),
            value,
            grad,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exact rational Cox-de Boor recursion used as an independent oracle.
    #[derive(Clone, Copy, Debug, PartialEq)]
    struct Q(i128, i128);

    impl Q {
        fn new(n: i128, d: i128) -> Q {
            fn gcd(a: i128, b: i128) -> i128 {
                if b == 0 {
                    a.abs()
                } else {
                    gcd(b, a % b)
                }
            }
            let g = gcd(n, d).max(1);
            let s = if d < 0 { -1 } else { 1 };
            Q(s * n / g, s * d / g)
        }
        fn add(self, o: Q) -> Q {
            Q::new(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
        }
        fn sub(self, o: Q) -> Q {
            Q::new(self.0 * o.1 - o.0 * self.1, self.1 * o.1)
        }
        fn mul(self, o: Q) -> Q {
            Q::new(self.0 * o.0, self.1 * o.1)
        }
        fn div(self, o: Q) -> Q {
            Q::new(self.0 * o.1, self.1 * o.0)
        }
        fn zero(self) -> bool {
            self.0 == 0
        }
        fn f(self) -> f64 {
            self.0 as f64 / self.1 as f64
        }
    }

    fn cox_de_boor(knots: &[Q], i: usize, p: usize, x: Q) -> Q {
        if p == 0 {
            let lo = knots[i];
            let hi = knots[i + 1];
            let ge = x.sub(lo).0 >= 0;
            let lt = x.sub(hi).0 < 0;
            return if ge && lt { Q(1, 1) } else { Q(0, 1) };
        }
        let mut acc = Q(0, 1);
        let d1 = knots[i + p].sub(knots[i]);
        if !d1.zero() {
            acc = acc.add(x.sub(knots[i]).div(d1).mul(cox_de_boor(knots, i, p - 1, x)));
        }
        let d2 = knots[i + p + 1].sub(knots[i + 1]);
        if !d2.zero() {
            acc = acc.add(knots[i + p + 1].sub(x).div(d2).mul(cox_de_boor(knots, i + 1, p - 1, x)));
        }
        acc
    }

    #[test]
    fn knot_vectors() {
        let kv = open_uniform_knots(1, 2);
        assert_eq!(kv.knots, vec![0.0, 0.0, 0.5, 1.0, 1.0]);
        assert_eq!(kv.len(), 3);
        let kv = open_uniform_knots(2, 4);
        assert_eq!(kv.knots, vec![0.0, 0.0, 0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 1.0]);
        assert_eq!(kv.len(), 6);
        let kv = open_uniform_knots(3, 1);
        assert_eq!(kv.len(), 4);
        let (_, v) = kv.eval_basis(0.4).unwrap();
        let t: f64 = 0.4;
        let bern = [(1.0 - t).powi(3), 3.0 * t * (1.0 - t).powi(2), 3.0 * t * t * (1.0 - t), t.powi(3)];
        for (a, b) in v.iter().zip(bern) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn hat_functions() {
        let kv = open_uniform_knots(1, 2);
        let (first, v) = kv.eval_basis(0.5).unwrap();
        let mut full = vec![0.0; 3];
        for (j, x) in v.iter().enumerate() {
            full[first + j] = *x;
        }
        assert_eq!(full, vec![0.0, 1.0, 0.0]);
        let (first, d) = kv.eval_basis_deriv(0.25).unwrap();
        assert_eq!(first, 0);
        assert!((d[0] + 2.0).abs() < 1e-14 && (d[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn endpoint_interpolation() {
        for p in 1..5 {
            let kv = open_uniform_knots(p, 4);
            let (first, v) = kv.eval_basis(0.0).unwrap();
            assert_eq!(first, 0);
            assert_eq!(v[0], 1.0);
            let (first, v) = kv.eval_basis(1.0).unwrap();
            assert_eq!(first + p, kv.len() - 1);
            assert_eq!(v[p], 1.0);
        }
        assert!(open_uniform_knots(2, 4).eval_basis(1.0 + 1e-9).is_err());
        assert!(open_uniform_knots(2, 4).eval_basis(-1e-9).is_err());
    }

    #[test]
    fn matches_rational_recursion() {
        let kv = open_uniform_knots(2, 4);
        let knots: Vec<Q> = [0, 0, 0, 1, 2, 3, 4, 4, 4].iter().map(|&k| Q::new(k, 4)).collect();
        for x in [Q::new(3, 10), Q::new(1, 7), Q::new(5, 8), Q::new(99, 100)] {
            let (first, v) = kv.eval_basis(x.f()).unwrap();
            let sum: f64 = v.iter().sum();
            assert!((sum - 1.0).abs() < 1e-15);
            for i in 0..kv.len() {
                let exact = cox_de_boor(&knots, i, 2, x).f();
                let got = if i >= first && i <= first + 2 { v[i - first] } else { 0.0 };
                assert!((exact - got).abs() < 1e-15, "i={i} x={}", x.f());
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let kv = open_uniform_knots(2, 4);
        let h = 1e-6;
        let (f0, d) = kv.eval_basis_deriv(0.3).unwrap();
        let (fp, vp) = kv.eval_basis(0.3 + h).unwrap();
        let (fm, vm) = kv.eval_basis(0.3 - h).unwrap();
        assert_eq!(f0, fp);
        assert_eq!(f0, fm);
        for j in 0..3 {
            let fd = (vp[j] - vm[j]) / (2.0 * h);
            assert!((fd - d[j]).abs() <= 1e-6 * d[j].abs().max(1.0));
        }
    }

    #[test]
    fn smoothness_across_knots() {
        for p in 1..5 {
            let kv = open_uniform_knots(p, 5);
            let nd = p - 1;
            for j in 1..5 {
                let x = j as f64 / 5.0;
                let eps = 1e-13;
                let (fl, left) = kv.eval_ders(x - eps, nd).unwrap();
                let (fr, right) = kv.eval_ders(x, nd).unwrap();
                for k in 0..=nd {
                    let mut a = vec![0.0; kv.len()];
                    let mut b = vec![0.0; kv.len()];
                    for i in 0..=p {
                        a[fl + i] = left[k][i];
                        b[fr + i] = right[k][i];
                    }
                    let scale = 25f64.powi(k as i32);
                    for i in 0..kv.len() {
                        assert!((a[i] - b[i]).abs() < 1e-10 * scale.max(1.0), "p={p} k={k}");
                    }
                }
            }
        }
    }

    #[test]
    fn tensor_hat_peak() {
        let patch = AtomicPatch::centered([0.0; 3], 0.2);
        let map = GeometryMap::for_patch(&patch, 2);
        let space = SplineSpace::uniform(1, 2, 2);
        let act = tensor_eval(&space, &map, &[0.0, 0.0, 0.0]).unwrap();
        let nz: Vec<_> = act.iter().filter(|a| a.value.abs() > 1e-15).collect();
        assert_eq!(nz.len(), 1);
        assert_eq!(nz[0].dof, space.flat_index(&[1, 1]));
        assert!((nz[0].value - 1.0).abs() < 1e-15);
        assert!(tensor_eval(&space, &map, &[0.21, 0.0, 0.0]).is_err());
        assert!((map.jacobian_det() - 0.16).abs() < 1e-15);
    }

    #[test]
    fn tensor_gradient_matches_finite_difference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for d in [2usize, 3] {
            let patch = AtomicPatch::centered([0.3, -0.1, 0.2], 0.2);
            let map = GeometryMap::for_patch(&patch, d);
            let space = SplineSpace::uniform(3, 3, d);
            let coef: Vec<f64> = (0..space.n_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let eval = |r: &Point| -> (f64, Point) {
                let mut v = 0.0;
                let mut g = [0.0; 3];
                for a in tensor_eval(&space, &map, r).unwrap() {
                    v += coef[a.dof] * a.value;
                    for s in 0..3 {
                        g[s] += coef[a.dof] * a.grad[s];
                    }
                }
                (v, g)
            };
            for _ in 0..100 {
                let mut r = [0.0; 3];
                for s in 0..d {
                    r[s] = patch.center[s] + rng.random_range(-0.19..0.19);
                }
                let (_, g) = eval(&r);
                let h = 1e-6;
                for s in 0..d {
                    let mut rp = r;
                    let mut rm = r;
                    rp[s] += h;
                    rm[s] -= h;
                    let fd = (eval(&rp).0 - eval(&rm).0) / (2.0 * h);
                    let scale = g.iter().map(|x| x.abs()).fold(1.0, f64::max);
                    assert!((fd - g[s]).abs() < 1e-6 * scale, "d={d} s={s}");
                }
            }
            let ones = vec![1.0; space.n_dofs()];
            for a in tensor_eval(&space, &map, &patch.center).unwrap() {
                let _ = ones[a.dof];
            }
            let sum: f64 = tensor_eval(&space, &map, &[0.35, -0.05, 0.2]).unwrap().iter().map(|a| a.value).sum();
            assert!((sum - 1.0).abs() < 1e-13);
            let gsum: f64 = tensor_eval(&space, &map, &[0.35, -0.05, 0.2])
                .unwrap()
                .iter()
                .map(|a| a.grad[0])
                .sum();
            assert!(gsum.abs() < 1e-11);
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity(p in 1usize..6, n_elem in 1usize..12, xi in 0.0f64..=1.0) {
            let kv = open_uniform_knots(p, n_elem);
            let (first, v) = kv.eval_basis(xi).unwrap();
            prop_assert!(first + p < kv.len());
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            prop_assert!(v.iter().all(|&x| x >= -1e-15));
            let (_, d) = kv.eval_basis_deriv(xi).unwrap();
            let scale = (p * n_elem) as f64;
            prop_assert!(d.iter().sum::<f64>().abs() < 1e-12 * scale);
        }

        #[test]
        fn local_support(p in 1usize..5, n_elem in 1usize..10, xi in 0.0f64..1.0) {
            let kv = open_uniform_knots(p, n_elem);
            let (first, v) = kv.eval_basis(xi).unwrap();
            for (j, &val) in v.iter().enumerate() {
                let i = first + j;
                if val > 0.0 {
                    prop_assert!(kv.knots[i] <= xi && xi < kv.knots[i + p + 1]);
                }
            }
        }
    }
}
