//! Compressed sparse rows and Jacobi-preconditioned conjugate gradients.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicate entries; triplet order does not affect the result
    /// beyond floating-point summation order, which is fixed by a stable sort.
    pub fn from_triplets(n: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(trip.len());
        let mut vals: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in trip {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|(c, _)| *c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }

    /// `max |a_ij − a_ji| / max |a_ij|`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut amax: f64 = 0.0;
        let mut dmax: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                amax = amax.max(v.abs());
                dmax = dmax.max((v - self.get(j, i)).abs());
            }
        }
        if amax == 0.0 {
            0.0
        } else {
            dmax / amax
        }
    }

    /// Coordinate text dump, one `row col value` line per stored entry.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                s.push_str(&format!("{} {} {:.17e}\n", i, j, v));
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub rel_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for symmetric positive definite `A`. The relative
/// residual reported is the true `‖b − A x‖ / ‖b‖`.
pub fn pcg(a: &CsrMatrix, b: &[f64], rel_tol: f64) -> Result<(Vec<f64>, CgStats)> {
    let n = a.n;
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, CgStats { iterations: 0, rel_residual: 0.0 }));
    }
    let dinv: Vec<f64> = a.diagonal().into_iter().map(|d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let max_it = 20 * n.max(1);
    let mut it = 0;
    loop {
        let res = dot(&r, &r).sqrt() / bnorm;
        if res <= rel_tol {
            // confirm with the true residual; recursion drift can fake convergence
            a.matvec(&x, &mut ap);
            let true_res = b.iter().zip(&ap).map(|(b, y)| (b - y) * (b - y)).sum::<f64>().sqrt() / bnorm;
            if true_res <= rel_tol {
                return Ok((x, CgStats { iterations: it, rel_residual: true_res }));
            }
            for i in 0..n {
                r[i] = b[i] - ap[i];
                z[i] = r[i] * dinv[i];
            }
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
        }
        if it >= max_it {
            return Err(Error::Numerical(format!(
                "CG did not converge in {} iterations, relative residual {:.3e}",
                max_it, res
            )));
        }
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Numerical(format!("nonpositive curvature {:.3e} in CG", pap)));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * dinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        it += 1;
    }
}

/// Dense LU with partial pivoting, for small systems and tests.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i][k].abs().partial_cmp(&a[j][k].abs()).unwrap()).unwrap();
        if a[piv][k] == 0.0 {
            return Err(Error::Numerical("singular dense matrix".into()));
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    Ok(x)
}
