//! Sparse symmetric linear algebra: CSR assembly from difference pairs,
//! Jacobi-preconditioned conjugate gradients, a Thomas solver for tridiagonal
//! systems, and adaptive Simpson quadrature.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("conjugate gradient stalled: {iters} iterations, residual {residual:e} (target {target:e})")]
    NoConvergence { iters: usize, residual: f64, target: f64 },
    #[error("matrix dimension mismatch: {0}")]
    Dimension(String),
}

/// Compressed sparse row matrix. Only square matrices are needed here.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    /// Builds from unsorted triplets, merging duplicates by summation. The
    /// sort is stable so duplicate slots accumulate in insertion order; pair
    /// lists that push (a,b) and (b,a) together then produce bit-identical
    /// mirrored entries, keeping the matrix exactly symmetric.
    pub fn from_triplets(n: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col: Vec<usize> = Vec::with_capacity(trip.len());
        let mut val: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            debug_assert!(r < n && c < n);
            if last == Some((r, c)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(c);
                val.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Csr { n, row_ptr, col, val }
    }

    /// Stiffness matrix of a sum of weighted squared differences
    /// `sum_k c_k (u_a - u_b)^2` plus optional diagonal terms `d_j u_j^2`,
    /// i.e. the unique symmetric A with u^T A u equal to that form.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize, f64)], diag: &[(usize, f64)]) -> Self {
        let mut trip = Vec::with_capacity(pairs.len() * 4 + diag.len());
        for &(a, b, c) in pairs {
            debug_assert!(a != b);
            trip.push((a, a, c));
            trip.push((b, b, c));
            trip.push((a, b, -c));
            trip.push((b, a, -c));
        }
        for &(j, d) in diag {
            trip.push((j, j, d));
        }
        Self::from_triplets(n, trip)
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    /// y += coeff * A x
    pub fn apply_add(&self, x: &[f64], y: &mut [f64], coeff: f64) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for r in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.val[k] * x[self.col[k]];
            }
            y[r] += coeff * s;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.apply_add(x, &mut y, 1.0);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col[k] == r {
                    d[r] += self.val[k];
                }
            }
        }
        d
    }

    /// max_{ij} |A_ij - A_ji|, via a dense scan of stored entries.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col[k];
                let mut tr = 0.0;
                for k2 in self.row_ptr[c]..self.row_ptr[c + 1] {
                    if self.col[k2] == r {
                        tr = self.val[k2];
                        break;
                    }
                }
                worst = worst.max((self.val[k] - tr).abs());
            }
        }
        worst
    }

    /// max_r |sum_c A_rc|
    pub fn row_sum_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.n {
            let s: f64 = (self.row_ptr[r]..self.row_ptr[r + 1]).map(|k| self.val[k]).sum();
            worst = worst.max(s.abs());
        }
        worst
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[r][self.col[k]] += self.val[k];
            }
        }
        m
    }

    /// max |A_ij - B_ij| over the union of the two sparsity patterns.
    pub fn max_entry_diff(&self, other: &Csr) -> f64 {
        assert_eq!(self.n, other.n, "matrices must have equal dimension");
        let mut worst: f64 = 0.0;
        let mut row = std::collections::BTreeMap::new();
        for r in 0..self.n {
            row.clear();
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                *row.entry(self.col[k]).or_insert(0.0) += self.val[k];
            }
            for k in other.row_ptr[r]..other.row_ptr[r + 1] {
                *row.entry(other.col[k]).or_insert(0.0) -= other.val[k];
            }
            for v in row.values() {
                worst = worst.max(v.abs());
            }
        }
        worst
    }
}

/// Symmetric positive semidefinite operator usable inside the CG loop.
pub trait SymOp {
    fn dim(&self) -> usize;
    /// y += coeff * A x
    fn apply_add(&self, x: &[f64], y: &mut [f64], coeff: f64);
    /// d += coeff * diag(A)
    fn diag_add(&self, d: &mut [f64], coeff: f64);
}

impl SymOp for Csr {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply_add(&self, x: &[f64], y: &mut [f64], coeff: f64) {
        Csr::apply_add(self, x, y, coeff)
    }
    fn diag_add(&self, d: &mut [f64], coeff: f64) {
        for (dst, src) in d.iter_mut().zip(self.diagonal()) {
            *dst += coeff * src;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves (wc*diag(w) + ac*A) x = b by Jacobi-preconditioned CG, optionally
/// restricted to the unmasked subspace (masked entries are held at zero).
/// Returns the iteration count.
pub fn pcg_solve(
    w: &[f64],
    wc: f64,
    a: &dyn SymOp,
    ac: f64,
    b: &[f64],
    x: &mut [f64],
    mask: Option<&[bool]>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<usize, SolveError> {
    let n = a.dim();
    if w.len() != n || b.len() != n || x.len() != n {
        return Err(SolveError::Dimension(format!(
            "operator {n}, w {}, b {}, x {}",
            w.len(),
            b.len(),
            x.len()
        )));
    }
    let project = |v: &mut [f64]| {
        if let Some(m) = mask {
            for (vi, &keep) in v.iter_mut().zip(m) {
                if !keep {
                    *vi = 0.0;
                }
            }
        }
    };

    let mut prec: Vec<f64> = w.iter().map(|&wi| wc * wi).collect();
    a.diag_add(&mut prec, ac);
    for p in prec.iter_mut() {
        // semidefinite rows can have zero diagonal only if fully decoupled
        if *p <= 0.0 {
            *p = 1.0;
        }
    }

    let apply = |v: &[f64], out: &mut Vec<f64>| {
        out.iter_mut().zip(v).zip(w).for_each(|((o, &vi), &wi)| *o = wc * wi * vi);
        a.apply_add(v, out, ac);
    };

    project(x);
    let mut bp = b.to_vec();
    project(&mut bp);
    let bnorm = norm2(&bp);
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(0);
    }
    let target = rel_tol * bnorm;

    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = bp.iter().zip(&ax).map(|(&bi, &axi)| bi - axi).collect();
    project(&mut r);
    let mut z: Vec<f64> = r.iter().zip(&prec).map(|(&ri, &pi)| ri / pi).collect();
    project(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for it in 0..max_iter {
        if norm2(&r) <= target {
            return Ok(it);
        }
        apply(&p, &mut ap);
        project(&mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            // exact zero happens when p lies in the kernel; b was projected so
            // the system is consistent and we are done up to roundoff
            if norm2(&r) <= target.max(1e-300) {
                return Ok(it);
            }
            return Err(SolveError::NoConvergence { iters: it, residual: norm2(&r), target });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        project(x);
        project(&mut r);
        for i in 0..n {
            z[i] = r[i] / prec[i];
        }
        project(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = norm2(&r);
    if res <= target * 10.0 {
        // near-miss at the roundoff floor; accept with the achieved residual
        return Ok(max_iter);
    }
    Err(SolveError::NoConvergence { iters: max_iter, residual: res, target })
}

/// Tridiagonal system solved by the Thomas algorithm. `lower[0]` and
/// `upper[n-1]` are ignored.
pub fn thomas_solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    assert!(lower.len() == n && upper.len() == n && rhs.len() == n);
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / m;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Adaptive Simpson quadrature on [a, b] to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                + rec(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, whole, m, fm, tol, 48)
}
