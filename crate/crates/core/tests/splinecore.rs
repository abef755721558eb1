#![allow(clippy::needless_range_loop)]
use defeature::splinecore::{KnotVector, TensorSpace};
use proptest::prelude::*;

/// Term-by-term recursive Cox–de Boor, with 0/0 := 0 and the right end
/// closed on the last nonempty span.
fn naive(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        let last = knots.iter().rposition(|&k| k < 1.0).unwrap();
        if knots[i] <= x && (x < knots[i + 1] || (x == 1.0 && i == last)) {
            return 1.0;
        }
        return 0.0;
    }
    let mut v = 0.0;
    let d1 = knots[i + p] - knots[i];
    if d1 > 0.0 {
        v += (x - knots[i]) / d1 * naive(knots, i, p - 1, x);
    }
    let d2 = knots[i + p + 1] - knots[i + 1];
    if d2 > 0.0 {
        v += (knots[i + p + 1] - x) / d2 * naive(knots, i + 1, p - 1, x);
    }
    v
}

/// Boehm single-knot insertion applied column by column; returns the dense
/// matrix C with coarse N_j = Σ_i C[i][j] fine N_i.
fn boehm(knots: &[f64], p: usize, inserts: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = knots.len() - p - 1;
    let mut t = knots.to_vec();
    let mut c: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    for &u in inserts {
        let k = t.iter().rposition(|&x| x <= u).unwrap();
        let rows = c.len();
        let mut next = vec![vec![0.0; n]; rows + 1];
        for i in 0..=rows {
            let alpha = if i + p <= k {
                1.0
            } else if i > k {
                0.0
            } else {
                (u - t[i]) / (t[i + p] - t[i])
            };
            for j in 0..n {
                let a = if i < rows { c[i][j] } else { 0.0 };
                let b = if i >= 1 { c[i - 1][j] } else { 0.0 };
                next[i][j] = alpha * a + (1.0 - alpha) * b;
            }
        }
        c = next;
        t.insert(k + 1, u);
    }
    (t, c)
}

fn kv2() -> KnotVector {
    KnotVector::new(2, vec![0., 0., 0., 0.5, 1., 1., 1.]).unwrap()
}

#[test]
fn find_span_examples() {
    assert_eq!(kv2().find_span(0.25).unwrap(), 2);
    assert_eq!(kv2().find_span(1.0).unwrap(), 3);
    let k1 = KnotVector::new(1, vec![0., 0., 1., 1.]).unwrap();
    assert_eq!(k1.find_span(0.5).unwrap(), 1);
    assert!(kv2().find_span(1.5).is_err());
    assert!(kv2().find_span(-1e-9).is_err());
}

#[test]
fn eval_basis_examples() {
    let k1 = KnotVector::new(1, vec![0., 0., 1., 1.]).unwrap();
    assert_eq!(k1.eval_basis(0.5, 0).unwrap().1[0], vec![0.5, 0.5]);
    let b = KnotVector::uniform(2, 1).unwrap();
    assert_eq!(b.eval_basis(0.5, 0).unwrap().1[0], vec![0.25, 0.5, 0.25]);
    let (span, v) = kv2().eval_basis(0.25, 0).unwrap();
    for j in 0..3 {
        let oracle = naive(kv2().knots(), span - 2 + j, 2, 0.25);
        assert!((v[0][j] - oracle).abs() < 1e-15);
    }
    assert!(kv2().eval_basis(0.3, 3).is_err());
}

#[test]
fn bezier_mesh_examples() {
    assert_eq!(TensorSpace::uniform(2, 2).unwrap().bezier_mesh().len(), 4);
    let one = TensorSpace::uniform(2, 1).unwrap().bezier_mesh();
    assert_eq!(one.len(), 1);
    assert_eq!((one[0].lo, one[0].hi), ([0.0, 0.0], [1.0, 1.0]));
    let m = TensorSpace::uniform(2, 4).unwrap().bezier_mesh();
    assert_eq!(m.len(), 16);
    assert!(m.iter().all(|e| e.hi[0] - e.lo[0] == 0.25 && e.hi[1] - e.lo[1] == 0.25));
}

#[test]
fn support_extension_examples() {
    let k1 = KnotVector::new(1, vec![0., 0., 0.5, 1., 1.]).unwrap();
    assert_eq!(k1.support_extension(0).unwrap(), (0.0, 1.0));
    assert_eq!(KnotVector::uniform(2, 1).unwrap().support_extension(0).unwrap(), (0.0, 1.0));
    let k = KnotVector::uniform(2, 4).unwrap();
    assert_eq!(k.support_extension(1).unwrap(), (0.0, 1.0));
    assert_eq!(k.support_extension(0).unwrap(), (0.0, 0.75));
    let ts = TensorSpace::uniform(2, 4).unwrap();
    let el = ts.bezier_mesh()[5].clone();
    assert_eq!(ts.support_extension(&el).unwrap(), [(0.0, 1.0), (0.0, 1.0)]);
    let mut bad = el;
    bad.index = [9, 0];
    assert!(ts.support_extension(&bad).is_err());
}

#[test]
fn dyadic_refine_examples() {
    let b = KnotVector::uniform(2, 1).unwrap().dyadic_refine();
    assert_eq!(b.knots(), &[0., 0., 0., 0.5, 1., 1., 1.]);
    let k1 = KnotVector::new(1, vec![0., 0., 0.5, 1., 1.]).unwrap().dyadic_refine();
    assert_eq!(k1.knots(), &[0., 0., 0.25, 0.5, 0.75, 1., 1.]);
}

#[test]
fn two_scale_examples_match_boehm() {
    let k1 = KnotVector::new(1, vec![0., 0., 1., 1.]).unwrap();
    let s = k1.two_scale(&k1.dyadic_refine()).unwrap();
    assert_eq!(s[0], vec![(0, 1.0), (1, 0.5)]);
    let (_, c) = boehm(k1.knots(), 1, &[0.5]);
    assert_eq!((c[0][0], c[1][0], c[2][0]), (1.0, 0.5, 0.0));

    let b = KnotVector::uniform(2, 1).unwrap();
    let s = b.two_scale(&b.dyadic_refine()).unwrap();
    let (_, c) = boehm(b.knots(), 2, &[0.5]);
    let dense: Vec<f64> = (0..4).map(|i| s[1].iter().find(|e| e.0 == i).map_or(0.0, |e| e.1)).collect();
    assert_eq!(dense, vec![0.0, 0.5, 0.5, 0.0]);
    for i in 0..4 {
        assert!((dense[i] - c[i][1]).abs() < 1e-15);
    }
}

#[test]
fn two_scale_matches_boehm_for_uniform_spaces() {
    for p in 1..=3 {
        for n in 1..=5 {
            let kv = KnotVector::uniform(p, n).unwrap();
            let fine = kv.dyadic_refine();
            let mids: Vec<f64> = (0..n).map(|e| (e as f64 + 0.5) / n as f64).collect();
            let (t, c) = boehm(kv.knots(), p, &mids);
            assert!(t.iter().zip(fine.knots()).all(|(a, b)| (a - b).abs() < 1e-15));
            let s = kv.two_scale(&fine).unwrap();
            for j in 0..kv.num_basis() {
                for i in 0..fine.num_basis() {
                    let v = s[j].iter().find(|e| e.0 == i).map_or(0.0, |e| e.1);
                    assert!((v - c[i][j]).abs() < 1e-14, "p={p} n={n} j={j} i={i}");
                }
            }
            // each fine function receives a total weight of one
            for i in 0..fine.num_basis() {
                let sum: f64 = s.iter().flatten().filter(|e| e.0 == i).map(|e| e.1).sum();
                assert!((sum - 1.0).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn tensor_two_scale_rejects_non_consecutive_levels() {
    let ts = TensorSpace::uniform(2, 2).unwrap();
    let twice = ts.dyadic_refine().dyadic_refine();
    assert!(ts.two_scale_coefficients(&twice, [0, 0]).is_err());
    assert!(ts.two_scale_coefficients(&ts.dyadic_refine(), [0, 0]).is_ok());
}

#[test]
fn polynomial_reproduction_by_greville_interpolation() {
    for p in 2..=3 {
        let ts = TensorSpace::uniform(p, 5).unwrap();
        let gx = ts.kv[0].greville();
        let n = gx.len();
        // collocation matrix of the univariate space at its Greville points
        let mut a = vec![vec![0.0; n]; n];
        for (r, &x) in gx.iter().enumerate() {
            let (span, v) = ts.kv[0].eval_basis(x, 0).unwrap();
            for j in 0..=p {
                a[r][span - p + j] = v[0][j];
            }
        }
        let polys: Vec<Box<dyn Fn(f64, f64) -> f64>> = vec![
            Box::new(|_, _| 1.0),
            Box::new(|x, _| x),
            Box::new(|_, y| y),
            Box::new(|x, y| x * y),
            Box::new(|x, _| x * x),
            Box::new(|_, y| y * y),
        ];
        for f in &polys {
            // tensor interpolation: solve row-wise then column-wise
            let mut vals = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    vals[i][j] = f(gx[i], gx[j]);
                }
            }
            let mut tmp = vec![vec![0.0; n]; n];
            for j in 0..n {
                let col: Vec<f64> = (0..n).map(|i| vals[i][j]).collect();
                let s = solve(&a, &col);
                for i in 0..n {
                    tmp[i][j] = s[i];
                }
            }
            let mut coef = vec![vec![0.0; n]; n];
            for i in 0..n {
                coef[i] = solve(&a, &tmp[i]);
            }
            let mut rng = 12345u64;
            for _ in 0..200 {
                let x = lcg(&mut rng);
                let y = lcg(&mut rng);
                let v: f64 = ts.eval([x, y]).unwrap().iter().map(|(ij, b)| b * coef[ij[0]][ij[1]]).sum();
                assert!((v - f(x, y)).abs() < 1e-10);
            }
        }
    }
}

fn lcg(s: &mut u64) -> f64 {
    *s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (*s >> 11) as f64 / (1u64 << 53) as f64
}

fn solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(r, &v)| {
            let mut r = r.clone();
            r.push(v);
            r
        })
        .collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}

proptest! {
    #[test]
    fn partition_of_unity_and_nonnegativity(p in 1usize..=3, n in 1usize..=9, x in 0.0f64..=1.0) {
        let kv = KnotVector::uniform(p, n).unwrap();
        let (span, v) = kv.eval_basis(x, 0).unwrap();
        let s: f64 = v[0].iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-13);
        prop_assert!(v[0].iter().all(|&b| b >= -1e-15));
        for j in 0..=p {
            let oracle = naive(kv.knots(), span - p + j, p, x);
            prop_assert!((v[0][j] - oracle).abs() < 1e-13);
        }
    }

    #[test]
    fn derivatives_match_finite_differences(p in 2usize..=3, n in 1usize..=6, x in 0.01f64..0.99) {
        let kv = KnotVector::uniform(p, n).unwrap();
        let h = 1e-6;
        let (span, v) = kv.eval_basis(x, 2).unwrap();
        for j in 0..=p {
            let i = span - p + j;
            let fd = (naive(kv.knots(), i, p, x + h) - naive(kv.knots(), i, p, x - h)) / (2.0 * h);
            prop_assert!((v[1][j] - fd).abs() < 1e-5);
            let d1 = |y: f64| {
                let (s, w) = kv.eval_basis(y, 1).unwrap();
                if i + p >= s && i <= s { w[1][i + p - s] } else { 0.0 }
            };
            // second derivatives are only piecewise continuous; skip points near breakpoints
            let near = kv.breakpoints().iter().any(|b| (b - x).abs() < 1e-4);
            if !near {
                let fd2 = (d1(x + h) - d1(x - h)) / (2.0 * h);
                prop_assert!((v[2][j] - fd2).abs() < 1e-3 * (1.0 + v[2][j].abs()));
            }
        }
    }

    #[test]
    fn nestedness_under_dyadic_refinement(p in 1usize..=3, n in 1usize..=5, x in 0.0f64..=1.0) {
        let kv = KnotVector::uniform(p, n).unwrap();
        let fine = kv.dyadic_refine();
        let s = kv.two_scale(&fine).unwrap();
        for (j, row) in s.iter().enumerate() {
            let direct = naive(kv.knots(), j, p, x);
            let expanded: f64 = row.iter().map(|&(i, c)| c * naive(fine.knots(), i, p, x)).sum();
            prop_assert!((direct - expanded).abs() < 1e-12);
            prop_assert!(row.iter().all(|e| e.1 >= 0.0));
        }
    }
}
