mod common;

/// Face rule that is composite over the spline elements of the face.
fn composite_face_rule(f: &igapw::geometry::InterfaceFace, n_elem: usize, order: usize) -> (Vec<Point>, Vec<f64>) {
    let tang: Vec<usize> = f.tangential_axes().collect();
    let h = f.extent / n_elem as f64;
    let one: Vec<(f64, f64)> = (0..n_elem)
        .flat_map(|e| gauss(order, f.corner[tang[0]] + e as f64 * h, f.corner[tang[0]] + (e + 1) as f64 * h))
        .collect();
    let mut pts = Vec::new();
    let mut ws = Vec::new();
    if tang.len() == 1 {
        for &(x, w) in &one {
            let mut r = f.corner;
            r[tang[0]] = x;
            pts.push(r);
            ws.push(w);
        }
    } else {
        let off = f.corner[tang[1]] - f.corner[tang[0]];
        for &(y, wy) in &one {
            for &(x, wx) in &one {
                let mut r = f.corner;
                r[tang[0]] = x;
                r[tang[1]] = y + off;
                pts.push(r);
                ws.push(wx * wy);
            }
        }
    }
    (pts, ws)
}

use std::sync::Arc;

use faer::{Mat, Side};
use num_complex::Complex64;

use igapw::assembly::*;
use igapw::bspline::tensor_eval;
use igapw::fftcheb::FourierTable;
use igapw::geometry::{face_quadrature, DomainDecomposition, Point};
use igapw::planewave::{dot, eval_pw};
use igapw::potentials::{ConstantField, PotentialField};

use common::*;

fn zero_table(d: usize, k: usize) -> FourierTable {
    FourierTable::zeros(d, 2 * k as i64)
}

fn free(d: usize, k: usize, p: usize, ne: usize, c_sigma: f64) -> (Discretization, AssembledSystem) {
    let disc = Discretization::new(one_patch(d), k, p, ne, c_sigma).unwrap();
    let v = ConstantField { dim: d, value: 0.0 };
    let sys = assemble(&disc, &v, &zero_table(d, k)).unwrap();
    (disc, sys)
}

#[test]
fn sigma_formula() {
    assert!((penalty_sigma(10.0, 30, 0.1).unwrap() - 400.0).abs() < 1e-12);
    assert!((penalty_sigma(10.0, 0, 0.4 / 32.0).unwrap() - 800.0).abs() < 1e-12);
    assert!(penalty_sigma(10.0, 60, 0.05).unwrap() > penalty_sigma(10.0, 30, 0.1).unwrap());
    assert!(penalty_sigma(0.0, 1, 0.1).is_err());
}

#[test]
fn dof_map_bijection() {
    let m = DofMap {
        n_pw: 5,
        n_spline_patch: 9,
        n_patches: 2,
    };
    assert_eq!(m.total(), 23);
    for i in 0..m.total() {
        assert_eq!(m.global(m.locate(i).unwrap()), i);
    }
    assert_eq!(m.locate(14), Some(Dof::Spline { patch: 1, local: 0 }));
    assert_eq!(m.locate(23), None);
}

#[test]
fn pw_diagonal_penalty() {
    let dec = one_patch(2);
    let disc = Discretization::new(dec.clone(), 3, 1, 2, 1.0).unwrap().with_sigma(400.0);
    let t = pw_tables(&dec, 6, zero_table(2, 3)).unwrap();
    let (h, m) = assemble_pw_block(&disc.waves, &t, 400.0).unwrap();
    // zero wave vector: only the penalty survives on the diagonal
    assert!((h[(0, 0)] - Complex64::new(40.0, 0.0)).norm() < 1e-12);
    for p in 0..disc.waves.len() {
        assert!((m[(p, p)] - 0.99).norm() < 1e-15);
    }
}

/// Rectangles tiling the interstitial region of a single centered patch.
fn outer_boxes(dec: &DomainDecomposition) -> Vec<Vec<(f64, f64)>> {
    let d = dec.dim();
    let p = dec.patches[0];
    let half = 0.5 * dec.cell.length;
    let pieces = |s: usize| vec![(-half, p.lower(s)), (p.lower(s), p.upper(s)), (p.upper(s), half)];
    let mut out: Vec<Vec<(f64, f64)>> = vec![vec![]];
    for s in 0..d {
        out = out
            .into_iter()
            .flat_map(|b| pieces(s).into_iter().map(move |iv| [b.clone(), vec![iv]].concat()))
            .collect();
    }
    out.retain(|b| (0..d).any(|s| b[s] != (p.lower(s), p.upper(s))));
    out
}

#[test]
fn pw_block_matches_quadrature() {
    let dec = one_patch(2);
    let sigma = 37.0;
    let disc = Discretization::new(dec.clone(), 1, 1, 2, 1.0).unwrap().with_sigma(sigma);
    let t = pw_tables(&dec, 2, zero_table(2, 1)).unwrap();
    let (h, m) = assemble_pw_block(&disc.waves, &t, sigma).unwrap();
    assert_eq!(h.nrows(), 5);
    let cell = dec.cell;
    let boxes = outer_boxes(&dec);
    for p in 0..5 {
        for q in 0..5 {
            let (kp, kq) = (disc.waves.vectors[p], disc.waves.vectors[q]);
            let mut vol = Complex64::new(0.0, 0.0);
            for b in &boxes {
                for (x, wx) in gauss(30, b[0].0, b[0].1) {
                    for (y, wy) in gauss(30, b[1].0, b[1].1) {
                        let r = [x, y, 0.0];
                        vol += eval_pw(&kq, &r, &cell) * eval_pw(&kp, &r, &cell).conj() * (wx * wy);
                    }
                }
            }
            let mut face = Complex64::new(0.0, 0.0);
            for f in &dec.faces {
                let rule = face_quadrature(f, 30);
                for (r, w) in rule.points.iter().zip(&rule.weights) {
                    let eq = eval_pw(&kq, r, &cell);
                    let ep = eval_pw(&kp, r, &cell).conj();
                    // ½ flux average times jump, both orderings, plus penalty
                    let dq = Complex64::new(0.0, dot(&kq, &f.normal)) * eq;
                    let dp = Complex64::new(0.0, dot(&kp, &f.normal)) * eval_pw(&kp, r, &cell);
                    face += (dq * ep * 0.25 + dp.conj() * eq * 0.25 + eq * ep * sigma) * *w;
                }
            }
            let expect_h = vol * (0.5 * dot(&kp, &kq)) + face;
            assert!((h[(p, q)] - expect_h).norm() < 1e-10, "({p},{q}) {} vs {}", h[(p, q)], expect_h);
            assert!((m[(p, q)] - vol).norm() < 1e-10);
        }
    }
    // overlap block is Hermitian positive semi-definite
    let e = m.self_adjoint_eigen(Side::Lower).unwrap();
    let s = e.S().column_vector();
    for i in 0..5 {
        assert!(s[i].re > -1e-12);
    }
}

#[test]
fn bilinear_element_oracle() {
    let (disc, _) = free(2, 1, 1, 2, 1.0);
    let pat = Arc::new(tensor_band_pattern(&disc.space));
    let blk = spline_structure(&disc, 0, pat);
    let h = 0.2;
    // Q1 element matrices on a square of side h, local order (0,0),(1,0),(0,1),(1,1)
    let ke = [[4.0, -1.0, -1.0, -2.0], [-1.0, 4.0, -2.0, -1.0], [-1.0, -2.0, 4.0, -1.0], [-2.0, -1.0, -1.0, 4.0]];
    let me = [[4.0, 2.0, 2.0, 1.0], [2.0, 4.0, 1.0, 2.0], [2.0, 1.0, 4.0, 2.0], [1.0, 2.0, 2.0, 4.0]];
    let mut kg = vec![0.0; 81];
    let mut mg = vec![0.0; 81];
    for ey in 0..2 {
        for ex in 0..2 {
            let nodes = [ex + 3 * ey, ex + 1 + 3 * ey, ex + 3 * (ey + 1), ex + 1 + 3 * (ey + 1)];
            for a in 0..4 {
                for b in 0..4 {
                    kg[nodes[a] * 9 + nodes[b]] += ke[a][b] / 6.0;
                    mg[nodes[a] * 9 + nodes[b]] += me[a][b] * h * h / 36.0;
                }
            }
        }
    }
    for i in 0..9 {
        for j in 0..9 {
            assert!((blk.stiff.get(i, j) - kg[i * 9 + j]).abs() < 1e-12);
            assert!((blk.m.get(i, j) - mg[i * 9 + j]).abs() < 1e-12);
        }
    }
}

#[test]
fn spline_mass_partition_of_unity() {
    for (d, vol) in [(2, 0.16), (3, 0.064)] {
        let (_, sys) = free(d, 1, 2, 3, 1.0);
        let n = sys.mb.n();
        let mut total = 0.0;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| sys.mb.get(i, j)).sum();
            assert!(row > 0.0);
            total += row;
        }
        assert!((total - vol).abs() < 1e-13);
    }
}

#[test]
fn spline_constant_consistency_terms() {
    // (H^b 1)_p reduces to -¼ ∫_Γ ∇χ_p·n for V = 0, σ = 0, and sums to zero
    let (disc, _) = free(2, 1, 2, 4, 1.0);
    let disc = disc.with_sigma(0.0);
    let pat = Arc::new(tensor_band_pattern(&disc.space));
    let blk = spline_structure(&disc, 0, pat);
    let n = blk.h.n();
    let ones = vec![Complex64::new(1.0, 0.0); n];
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    blk.h.mul_add(&ones, &mut y);
    let total: Complex64 = y.iter().sum();
    assert!(total.norm() < 1e-12);
    let map = disc.maps[0];
    for (p, yp) in y.iter().enumerate() {
        let mut flux = 0.0;
        for f in &disc.decomp.faces {
            let (pts, ws) = composite_face_rule(f, 4, 6);
            for (r, w) in pts.iter().zip(&ws) {
                for b in tensor_eval(&disc.space, &map, r).unwrap() {
                    if b.dof == p {
                        flux += w * dot(&b.grad, &f.normal);
                    }
                }
            }
        }
        assert!((yp.re + 0.25 * flux).abs() < 1e-11, "row {p}: {} vs {}", yp.re, -0.25 * flux);
    }
}

#[test]
fn coupling_values() {
    let (disc, sys) = free(2, 1, 1, 4, 1.0);
    let disc = disc.with_sigma(400.0);
    let cb = assemble_coupling(&disc);
    // interior functions never appear as columns
    let interior = disc.space.flat_index(&[2, 2]);
    assert!(!cb.cols.contains(&interior));
    assert!(!sys.hc_cols.contains(&interior));
    // k = 0 row against the constant spline
    let sum: Complex64 = (0..cb.cols.len()).map(|c| cb.h[(0, c)]).sum();
    assert!((sum - Complex64::new(-160.0, 0.0)).norm() < 1e-10);
}

#[test]
fn coupling_matches_face_quadrature() {
    for d in [2, 3] {
        let (disc, _) = free(d, 1, 1 + d % 2, 3, 1.0);
        let disc = disc.with_sigma(17.0);
        let cb = assemble_coupling(&disc);
        let cell = disc.decomp.cell;
        let map = disc.maps[0];
        let vs = cell.volume().sqrt();
        let mut brute = Mat::<Complex64>::zeros(disc.waves.len(), disc.space.n_dofs());
        for f in &disc.decomp.faces {
            let (pts, ws) = composite_face_rule(f, 3, 12);
            for (r, w) in pts.iter().zip(&ws) {
                let basis = tensor_eval(&disc.space, &map, r).unwrap();
                for (p, kp) in disc.waves.vectors.iter().enumerate() {
                    let e = eval_pw(kp, r, &cell).conj() * vs;
                    let kn = dot(kp, &f.normal);
                    for b in &basis {
                        let gn = dot(&b.grad, &f.normal);
                        let v = e / vs * (Complex64::new(0.25 * gn, 0.25 * kn * b.value) - 17.0 * b.value);
                        brute[(p, b.dof)] += v * *w;
                    }
                }
            }
        }
        for j in 0..disc.space.n_dofs() {
            let col = cb.cols.iter().position(|&c| c == j);
            for p in 0..disc.waves.len() {
                let got = col.map_or(Complex64::new(0.0, 0.0), |c| cb.h[(p, c)]);
                assert!((got - brute[(p, j)]).norm() < 1e-10, "d={d} p={p} j={j} {got} {}", brute[(p, j)]);
            }
        }
    }
}

#[test]
fn global_constant_in_kernel() {
    for d in [2, 3] {
        let (_, sys) = free(d, 2, 2, 3, 10.0);
        let n = sys.n();
        let mut c = Mat::<Complex64>::zeros(n, 1);
        c[(0, 0)] = Complex64::new(sys.dofs.n_pw as f64 * 0.0 + 4f64.powi(d as i32).sqrt(), 0.0);
        for i in sys.n_pw()..n {
            c[(i, 0)] = Complex64::new(1.0, 0.0);
        }
        let mut y = Mat::<Complex64>::zeros(n, 1);
        sys.apply_h(c.as_ref(), y.as_mut());
        let worst = (0..n).map(|i| y[(i, 0)].norm()).fold(0.0, f64::max);
        assert!(worst < 1e-9, "d={d}: {worst:e}");
    }
}

#[test]
fn example1_structure() {
    let ex = ewald(2, 1.0);
    let v: Arc<dyn PotentialField> = ex.clone();
    let dec = one_patch(2);
    let settings = igapw::fftcheb::VoutSettings {
        n_grid: 64,
        cheb_degree: 24,
        extension: igapw::potentials::SmoothExtensionParams::default_for(0.2),
    };
    let table = igapw::fftcheb::v_out_table(v.clone(), &dec, 10, &settings).unwrap();
    let disc = Discretization::new(dec, 10, 1, 4, 10.0).unwrap();
    let sys = assemble(&disc, v.as_ref(), &table).unwrap();
    let h = sys.dense_h();
    let n = sys.n();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    assert!(worst < 1e-12);
    let m = sys.dense_m();
    for i in 0..sys.n_pw() {
        for j in sys.n_pw()..n {
            assert_eq!(m[(i, j)], Complex64::new(0.0, 0.0));
            assert_eq!(m[(j, i)], Complex64::new(0.0, 0.0));
        }
    }
    assert!(m.llt(Side::Lower).is_ok());
    // linear in σ with slope P_Γ / σ
    let s1 = disc.sigma;
    let sys2 = assemble(&disc.clone().with_sigma(2.0 * s1), v.as_ref(), &table).unwrap();
    let sys0 = assemble(&disc.clone().with_sigma(0.0), v.as_ref(), &table).unwrap();
    let (h2, h0, pg) = (sys2.dense_h(), sys0.dense_h(), sys.dense_penalty());
    for i in 0..n {
        for j in 0..n {
            let lin = h2[(i, j)] - h[(i, j)] - (h[(i, j)] - h0[(i, j)]);
            assert!(lin.norm() < 1e-9 * s1);
            assert!((h[(i, j)] - h0[(i, j)] - pg[(i, j)]).norm() < 1e-9 * s1);
        }
    }
}

/// `∫ V φ_a φ_b` over an element touching the nucleus at a vertex, by
/// geometric layers toward the vertex.
fn graded_element_integral(
    v: &dyn PotentialField,
    disc: &Discretization,
    lo: [f64; 3],
    hi: [f64; 3],
    vertex: Point,
) -> Vec<(usize, usize, f64)> {
    let d = disc.decomp.dim();
    let map = disc.maps[0];
    let mut acc = std::collections::BTreeMap::new();
    let mut accumulate = |r: &Point, w: f64| {
        let basis = tensor_eval(&disc.space, &map, r).unwrap();
        for a in &basis {
            for b in &basis {
                *acc.entry((a.dof, b.dof)).or_insert(0.0) += w * a.value * b.value;
            }
        }
    };
    // smooth part: plain tensor Gauss, values batched through the grid evaluator
    let rules: Vec<Vec<(f64, f64)>> = (0..d).map(|s| gauss(16, lo[s], hi[s])).collect();
    let axes: Vec<Vec<f64>> = rules.iter().map(|r| r.iter().map(|x| x.0).collect()).collect();
    let sm = v.smooth_grid(&axes);
    for (f, val) in sm.iter().enumerate() {
        let mut r = [0.0; 3];
        let mut w = *val;
        let mut g = f;
        for s in 0..d {
            let (x, wx) = rules[s][g % 16];
            g /= 16;
            r[s] = x;
            w *= wx;
        }
        accumulate(&r, w);
    }
    // rough part: geometric shells around the vertex
    let order = if d == 2 { 10 } else { 8 };
    let layers = if d == 2 { 42 } else { 24 };
    let mut add_box = |blo: [f64; 3], bhi: [f64; 3]| {
        let rules: Vec<Vec<(f64, f64)>> = (0..d).map(|s| gauss(order, blo[s], bhi[s])).collect();
        let total = order.pow(d as u32);
        for mut f in 0..total {
            let mut r = [0.0; 3];
            let mut w = 1.0;
            for s in 0..d {
                let (x, wx) = rules[s][f % order];
                f /= order;
                r[s] = x;
                w *= wx;
            }
            accumulate(&r, w * v.rough(&r));
        }
    };
    // layer j covers the box of scale 2^-j around the vertex minus the one of scale 2^-(j+1)
    for j in 0..layers {
        let sc = 0.5f64.powi(j);
        let inner = 0.5 * sc;
        let corner = |t: f64| {
            let mut a = [0.0; 3];
            let mut b = [0.0; 3];
            for s in 0..d {
                let far = if (hi[s] - vertex[s]).abs() > (lo[s] - vertex[s]).abs() { hi[s] } else { lo[s] };
                let x = vertex[s] + t * (far - vertex[s]);
                a[s] = vertex[s].min(x);
                b[s] = vertex[s].max(x);
            }
            (a, b)
        };
        let (oa, ob) = corner(sc);
        let (ia, ib) = corner(inner);
        // split the shell into 2^d - 1 sub-boxes
        for mask in 1..(1usize << d) {
            let mut a = [0.0; 3];
            let mut b = [0.0; 3];
            for s in 0..d {
                let near_is_low = (ia[s] - vertex[s]).abs() < 1e-300 || ia[s] == vertex[s];
                let (n0, n1, f0, f1) = if near_is_low { (ia[s], ib[s], ib[s], ob[s]) } else { (ia[s], ib[s], oa[s], ia[s]) };
                if mask >> s & 1 == 1 {
                    a[s] = f0;
                    b[s] = f1;
                } else {
                    a[s] = n0;
                    b[s] = n1;
                }
            }
            add_box(a, b);
        }
    }
    acc.into_iter().map(|((i, j), v)| (i, j, v)).collect()
}

#[test]
fn singular_potential_mass_matches_graded_quadrature() {
    for (d, p) in [(2, 1), (2, 2), (3, 1)] {
        let ex = ewald(d, 1.0);
        let disc = Discretization::new(one_patch(d), 1, p, 2, 1.0).unwrap();
        let pat = Arc::new(tensor_band_pattern(&disc.space));
        let vm = potential_mass(&disc, 0, ex.as_ref(), pat);
        let mut oracle = std::collections::BTreeMap::new();
        let n_el = 1usize << d;
        for e in 0..n_el {
            let mut lo = [0.0; 3];
            let mut hi = [0.0; 3];
            for s in 0..d {
                if e >> s & 1 == 0 {
                    lo[s] = -0.2;
                } else {
                    hi[s] = 0.2;
                }
            }
            for (i, j, v) in graded_element_integral(ex.as_ref(), &disc, lo, hi, [0.0; 3]) {
                *oracle.entry((i, j)).or_insert(0.0) += v;
            }
        }
        let mut worst = 0.0f64;
        for ((i, j), v) in oracle {
            worst = worst.max((vm.get(i, j) - v).abs());
        }
        assert!(worst < 1e-10, "d={d} p={p}: {worst:e}");
    }
}

struct UnitRough(usize);
impl PotentialField for UnitRough {
    fn dim(&self) -> usize {
        self.0
    }
    fn smooth_grid(&self, axes: &[Vec<f64>]) -> Vec<f64> {
        vec![0.0; axes.iter().map(Vec::len).product()]
    }
    fn rough(&self, _r: &Point) -> f64 {
        1.0
    }
    fn is_smooth(&self) -> bool {
        false
    }
    fn singular_points(&self) -> Vec<Point> {
        vec![[0.0; 3]]
    }
}

/// A constant passed through the singular paths must reproduce the mass matrix.
#[test]
fn rough_constant_reproduces_mass() {
    for (d, p, ne) in [(2, 1, 2), (2, 2, 2), (2, 1, 1), (2, 2, 8), (3, 1, 2)] {
        let disc = Discretization::new(one_patch(d), 1, p, ne, 1.0).unwrap();
        let pat = Arc::new(tensor_band_pattern(&disc.space));
        let vm = potential_mass(&disc, 0, &UnitRough(d), pat.clone());
        let blk = spline_structure(&disc, 0, pat);
        let worst = vm.vals.iter().zip(&blk.m.vals).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-14, "d={d} p={p} ne={ne}: {worst:e}");
    }
}
