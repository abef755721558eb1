//! Univariate and tensor-product B-spline spaces on the parametric unit square.
//!
//! Knot vectors are open (end multiplicity p+1). Spans are indexed by knot
//! position as in Piegl–Tiller, elements by the position of their nonempty
//! span in the breakpoint sequence.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
    /// Knot index `i` of every nonempty span `[knots[i], knots[i+1])`.
    spans: Vec<usize>,
}

impl KnotVector {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        let p = degree;
        let m = knots.len();
        if m < 2 * (p + 1) {
            return Err(Error::InvalidKnots(format!("{} knots cannot carry degree {}", m, p)));
        }
        if knots.iter().any(|k| !k.is_finite() || *k < 0.0 || *k > 1.0) {
            return Err(Error::InvalidKnots("knots must lie in [0, 1]".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidKnots("knots must be nondecreasing".into()));
        }
        if knots[..=p].iter().any(|&k| k != 0.0) || knots[m - p - 1..].iter().any(|&k| k != 1.0) {
            return Err(Error::InvalidKnots("end knots must be 0 and 1 with multiplicity p+1".into()));
        }
        if knots[p + 1] == 0.0 || knots[m - p - 2] == 1.0 {
            return Err(Error::InvalidKnots("end multiplicity exceeds p+1".into()));
        }
        let max_mult = if p >= 2 { p - 1 } else { p.max(1) };
        let mut i = p + 1;
        while i < m - p - 1 {
            let mut j = i;
            while j + 1 < m - p - 1 && knots[j + 1] == knots[i] {
                j += 1;
            }
            let mult = j - i + 1;
            if mult > max_mult {
                return Err(Error::InvalidKnots(format!(
                    "interior knot {} has multiplicity {} > {}",
                    knots[i], mult, max_mult
                )));
            }
            i = j + 1;
        }
        let spans = (p..m - p - 1).filter(|&i| knots[i] < knots[i + 1]).collect();
        Ok(Self { degree, knots, spans })
    }

    /// Open knot vector with `n_elems` equal spans.
    pub fn uniform(degree: usize, n_elems: usize) -> Result<Self> {
        if n_elems == 0 {
            return Err(Error::Argument("a knot vector needs at least one span".into()));
        }
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..n_elems).map(|i| i as f64 / n_elems as f64));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Self::new(degree, knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn num_elements(&self) -> usize {
        self.spans.len()
    }

    /// Distinct knot values, i.e. the element boundaries.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.spans.iter().map(|&i| self.knots[i]).collect();
        b.push(1.0);
        b
    }

    /// Knot-span index of the nonempty span containing `x`; `x = 1` maps to the last span.
    pub fn find_span(&self, x: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(x));
        }
        let last = *self.spans.last().unwrap();
        if x >= self.knots[last] {
            return Ok(last);
        }
        // largest i with knots[i] <= x among the nonempty spans
        let k = self.spans.partition_point(|&i| self.knots[i] <= x);
        Ok(self.spans[k - 1])
    }

    /// Element index (position among nonempty spans) containing `x`.
    pub fn find_element(&self, x: f64) -> Result<usize> {
        let s = self.find_span(x)?;
        Ok(self.spans.binary_search(&s).unwrap())
    }

    pub fn element_span(&self, e: usize) -> usize {
        self.spans[e]
    }

    pub fn element_bounds(&self, e: usize) -> (f64, f64) {
        let s = self.spans[e];
        (self.knots[s], self.knots[s + 1])
    }

    /// Nonzero basis values and derivatives at `x`: `ders[k][j]` is the k-th
    /// derivative of function `span - p + j`.
    pub fn eval_basis(&self, x: f64, der_order: usize) -> Result<(usize, Vec<Vec<f64>>)> {
        if der_order > self.degree {
            return Err(Error::Argument(format!("derivative order {} exceeds degree {}", der_order, self.degree)));
        }
        let span = self.find_span(x)?;
        Ok((span, ders_basis(self.degree, &self.knots, span, x, der_order)))
    }

    /// `(ξ_{i-p}, ξ_{i+p+1})` for the span of element `e`.
    pub fn support_extension(&self, e: usize) -> Result<(f64, f64)> {
        let s = *self.spans.get(e).ok_or_else(|| Error::Argument(format!("element {} not in mesh", e)))?;
        let p = self.degree;
        Ok((self.knots[s - p], self.knots[s + p + 1]))
    }

    /// Inserts the midpoint of every nonempty span once.
    pub fn dyadic_refine(&self) -> KnotVector {
        let mut knots = Vec::with_capacity(self.knots.len() + self.spans.len());
        let mut next = self.spans.iter().peekable();
        for (i, &k) in self.knots.iter().enumerate() {
            knots.push(k);
            if next.peek() == Some(&&i) {
                next.next();
                knots.push(0.5 * (self.knots[i] + self.knots[i + 1]));
            }
        }
        KnotVector::new(self.degree, knots).expect("midpoint insertion keeps validity")
    }

    /// Greville abscissae, one per basis function.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        if p == 0 {
            return (0..self.num_basis()).map(|i| 0.5 * (self.knots[i] + self.knots[i + 1])).collect();
        }
        (0..self.num_basis()).map(|i| self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64).collect()
    }

    /// Two-scale relation onto a refined knot vector: entry `j` lists the
    /// `(fine index, coefficient)` pairs with `N_j = Σ c N'_i`.
    pub fn two_scale(&self, fine: &KnotVector) -> Result<Vec<Vec<(usize, f64)>>> {
        if fine.degree != self.degree || !is_refinement(&self.knots, &fine.knots) {
            return Err(Error::Argument("fine knot vector is not a refinement of the coarse one".into()));
        }
        let p = self.degree;
        let t = &self.knots;
        let tau = &fine.knots;
        let mut out = Vec::with_capacity(self.num_basis());
        for j in 0..self.num_basis() {
            let (a, b) = (t[j], t[j + p + 1]);
            let lo = tau.partition_point(|&x| x < a).saturating_sub(p + 1);
            let mut row = Vec::new();
            for i in lo..fine.num_basis() {
                if tau[i] > b {
                    break;
                }
                let c = oslo(t, tau, j, i, p);
                if c.abs() > 1e-15 {
                    row.push((i, c));
                }
            }
            out.push(row);
        }
        Ok(out)
    }
}

fn is_refinement(coarse: &[f64], fine: &[f64]) -> bool {
    let mut j = 0;
    for &k in coarse {
        while j < fine.len() && fine[j] < k {
            j += 1;
        }
        if j == fine.len() || fine[j] != k {
            return false;
        }
        j += 1;
    }
    true
}

/// Discrete B-spline α_{j,p}(i) of the Oslo algorithm.
fn oslo(t: &[f64], tau: &[f64], j: usize, i: usize, k: usize) -> f64 {
    if k == 0 {
        return if t[j] <= tau[i] && tau[i] < t[j + 1] { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = t[j + k] - t[j];
    if d1 > 0.0 {
        v += (tau[i + k] - t[j]) / d1 * oslo(t, tau, j, i, k - 1);
    }
    let d2 = t[j + k + 1] - t[j + 1];
    if d2 > 0.0 {
        v += (t[j + k + 1] - tau[i + k]) / d2 * oslo(t, tau, j + 1, i, k - 1);
    }
    v
}

/// Algorithm A2.3 of The NURBS Book.
pub(crate) fn ders_basis(p: usize, knots: &[f64], span: usize, x: f64, n: usize) -> Vec<Vec<f64>> {
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = vec![vec![0.0; p + 1]; n + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let mut a = vec![vec![0.0; p + 1]; 2];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=n {
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
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = p as f64;
    for k in 1..=n {
        for v in ders[k].iter_mut() {
            *v *= factor;
        }
        factor *= (p - k) as f64;
    }
    ders
}

#[derive(Debug, Clone, PartialEq)]
pub struct BezierElement {
    pub index: [usize; 2],
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpace {
    pub kv: [KnotVector; 2],
    pub level: usize,
}

impl TensorSpace {
    pub fn new(kv: [KnotVector; 2], level: usize) -> Result<Self> {
        if kv[0].degree() != kv[1].degree() {
            return Err(Error::Argument("both directions must share the degree".into()));
        }
        Ok(Self { kv, level })
    }

    pub fn uniform(degree: usize, n_elems: usize) -> Result<Self> {
        let kv = KnotVector::uniform(degree, n_elems)?;
        Ok(Self { kv: [kv.clone(), kv], level: 0 })
    }

    pub fn degree(&self) -> usize {
        self.kv[0].degree()
    }

    pub fn num_basis(&self) -> [usize; 2] {
        [self.kv[0].num_basis(), self.kv[1].num_basis()]
    }

    pub fn dimension(&self) -> usize {
        self.kv[0].num_basis() * self.kv[1].num_basis()
    }

    pub fn bezier_mesh(&self) -> Vec<BezierElement> {
        let mut out = Vec::new();
        for j in 0..self.kv[1].num_elements() {
            for i in 0..self.kv[0].num_elements() {
                let (x0, x1) = self.kv[0].element_bounds(i);
                let (y0, y1) = self.kv[1].element_bounds(j);
                out.push(BezierElement { index: [i, j], lo: [x0, y0], hi: [x1, y1] });
            }
        }
        out
    }

    pub fn support_extension(&self, el: &BezierElement) -> Result<[(f64, f64); 2]> {
        for d in 0..2 {
            let e = el.index[d];
            if e >= self.kv[d].num_elements() || self.kv[d].element_bounds(e) != (el.lo[d], el.hi[d]) {
                return Err(Error::Argument(format!("element {:?} not in mesh", el.index)));
            }
        }
        Ok([self.kv[0].support_extension(el.index[0])?, self.kv[1].support_extension(el.index[1])?])
    }

    pub fn dyadic_refine(&self) -> TensorSpace {
        TensorSpace { kv: [self.kv[0].dyadic_refine(), self.kv[1].dyadic_refine()], level: self.level + 1 }
    }

    /// Expansion of coarse function `f` in the basis of `fine`.
    pub fn two_scale_coefficients(&self, fine: &TensorSpace, f: [usize; 2]) -> Result<Vec<([usize; 2], f64)>> {
        if fine.level != self.level + 1 {
            return Err(Error::Argument(format!("levels {} and {} are not consecutive", self.level, fine.level)));
        }
        let nb = self.num_basis();
        if f[0] >= nb[0] || f[1] >= nb[1] {
            return Err(Error::Argument(format!("function {:?} out of range", f)));
        }
        let sx = self.kv[0].two_scale(&fine.kv[0])?;
        let sy = self.kv[1].two_scale(&fine.kv[1])?;
        let mut out = Vec::new();
        for &(j, cy) in &sy[f[1]] {
            for &(i, cx) in &sx[f[0]] {
                out.push(([i, j], cx * cy));
            }
        }
        Ok(out)
    }

    /// Values of all nonzero tensor functions at `x` as `([i, j], value)`.
    pub fn eval(&self, x: [f64; 2]) -> Result<Vec<([usize; 2], f64)>> {
        let p = self.degree();
        let (sx, bx) = self.kv[0].eval_basis(x[0], 0)?;
        let (sy, by) = self.kv[1].eval_basis(x[1], 0)?;
        let mut out = Vec::with_capacity((p + 1) * (p + 1));
        for b in 0..=p {
            for a in 0..=p {
                out.push(([sx - p + a, sy - p + b], bx[0][a] * by[0][b]));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_high_interior_multiplicity() {
        assert!(KnotVector::new(2, vec![0., 0., 0., 0.5, 0.5, 1., 1., 1.]).is_err());
        assert!(KnotVector::new(3, vec![0., 0., 0., 0., 0.5, 0.5, 1., 1., 1., 1.]).is_ok());
        assert!(KnotVector::new(2, vec![0., 0., 0.5, 1., 1., 1.]).is_err());
    }

    #[test]
    fn breakpoints_of_uniform() {
        let kv = KnotVector::uniform(3, 4).unwrap();
        assert_eq!(kv.breakpoints(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(kv.num_basis(), 7);
        assert_eq!(kv.find_element(1.0).unwrap(), 3);
        assert_eq!(kv.find_element(0.25).unwrap(), 1);
    }

    #[test]
    fn greville_of_bernstein() {
        let kv = KnotVector::uniform(2, 1).unwrap();
        assert_eq!(kv.greville(), vec![0.0, 0.5, 1.0]);
    }
}
