//! Dense primal active-set solver for small convex quadratic programs.
//!
//! ```text
//!     minimize     1/2 x' H x + c' x
//!     subject to   E x  = e
//!                  A x <= b
//! ```
//!
//! `H` only needs to be positive semidefinite, so linear programs are the
//! special case `H = 0`. Equalities are eliminated through a null-space
//! parametrisation, a phase-one program finds a feasible point, and the
//! phase-two iteration walks the working set. Directions of zero curvature
//! along which the objective decreases and no constraint blocks are returned
//! as unbounded rays.
//!
//! Everything is deterministic: ties in the ratio test go to the smallest
//! constraint index, and after a run of degenerate steps the dropping rule
//! switches to Bland's smallest-index rule.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QuadProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub ineq: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub eq: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Absolute feasibility tolerance on unit-normalised constraint rows.
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { feas_tol: 1e-9, max_iter: 20_000 }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    pub value: f64,
    /// Indices of inequality rows in the final working set.
    pub active: Vec<usize>,
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Optimal(Solution),
    /// The objective decreases without bound along `point + t * ray`.
    Unbounded {
        point: DVector<f64>,
        ray: DVector<f64>,
    },
    Infeasible {
        violation: f64,
    },
}

impl QuadProgram {
    /// Unconstrained program with the given Hessian and linear term.
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        QuadProgram {
            hessian,
            linear,
            ineq: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
            eq: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
        }
    }

    pub fn linear_program(linear: DVector<f64>) -> Self {
        let n = linear.len();
        QuadProgram::new(DMatrix::zeros(n, n), linear)
    }

    pub fn with_ineq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.ineq = a;
        self.ineq_rhs = b;
        self
    }

    pub fn with_eq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.eq = a;
        self.eq_rhs = b;
        self
    }

    pub fn nvars(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    pub fn solve(&self) -> Result<Outcome> {
        self.solve_with(SolverOptions::default())
    }

    pub fn solve_with(&self, opts: SolverOptions) -> Result<Outcome> {
        let n = self.nvars();
        if self.hessian.nrows() != n || self.hessian.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: self.hessian.nrows() });
        }
        if self.ineq.ncols() != n || self.eq.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: self.ineq.ncols().max(self.eq.ncols()) });
        }

        // Equality elimination: x = xp + N y.
        let (xp, basis) = if self.eq.nrows() > 0 {
            let svd = self.eq.clone().svd(true, true);
            let xp = svd
                .solve(&self.eq_rhs, 1e-12)
                .map_err(|e| Error::Unresolved(format!("equality least squares: {e}")))?;
            let resid = &self.eq * &xp - &self.eq_rhs;
            let scale = 1.0 + self.eq_rhs.amax();
            if resid.amax() > opts.feas_tol * scale {
                return Ok(Outcome::Infeasible { violation: resid.amax() });
            }
            (xp, null_basis(&self.eq))
        } else {
            (DVector::zeros(n), DMatrix::identity(n, n))
        };
        let r = basis.ncols();

        let h_red = basis.transpose() * &self.hessian * &basis;
        let c_red = basis.transpose() * (&self.hessian * &xp + &self.linear);

        // Normalised inequality rows in the reduced variables.
        let mut rows: Vec<(DVector<f64>, f64, usize)> = Vec::new();
        for j in 0..self.ineq.nrows() {
            let a_full = self.ineq.row(j).transpose();
            let a = basis.transpose() * &a_full;
            let b = self.ineq_rhs[j] - a_full.dot(&xp);
            let norm = a.norm();
            if norm <= 1e-14 * (1.0 + a_full.norm()) {
                if b < -opts.feas_tol * (1.0 + self.ineq_rhs[j].abs()) {
                    return Ok(Outcome::Infeasible { violation: -b });
                }
                continue;
            }
            rows.push((a / norm, b / norm, j));
        }

        if r == 0 {
            for (_, b, _) in &rows {
                if *b < -opts.feas_tol {
                    return Ok(Outcome::Infeasible { violation: -*b });
                }
            }
            let value = self.objective(&xp);
            return Ok(Outcome::Optimal(Solution { x: xp, value, active: Vec::new() }));
        }

        let a_mat = DMatrix::from_fn(rows.len(), r, |i, k| rows[i].0[k]);
        let b_vec = DVector::from_iterator(rows.len(), rows.iter().map(|t| t.1));

        let y0 = match phase_one(&a_mat, &b_vec, r, opts)? {
            Ok(y) => y,
            Err(violation) => return Ok(Outcome::Infeasible { violation }),
        };

        match active_set(&h_red, &c_red, &a_mat, &b_vec, y0, opts)? {
            Core::Optimal { x: y, work } => {
                let x = &xp + &basis * y;
                let value = self.objective(&x);
                let mut active: Vec<usize> = work.into_iter().map(|i| rows[i].2).collect();
                active.sort_unstable();
                Ok(Outcome::Optimal(Solution { x, value, active }))
            }
            Core::Unbounded { x: y, ray } => Ok(Outcome::Unbounded { point: &xp + &basis * y, ray: &basis * ray }),
        }
    }

    /// Least-squares KKT multipliers at `x` for the given active inequality
    /// rows and all equality rows: `g + A_W' lambda + E' nu = 0`.
    pub fn kkt_multipliers(&self, x: &DVector<f64>, active: &[usize]) -> (DVector<f64>, DVector<f64>) {
        let g = &self.hessian * x + &self.linear;
        let n = self.nvars();
        let ka = active.len();
        let ke = self.eq.nrows();
        let mut m = DMatrix::zeros(n, ka + ke);
        for (col, &j) in active.iter().enumerate() {
            m.set_column(col, &self.ineq.row(j).transpose());
        }
        for j in 0..ke {
            m.set_column(ka + j, &self.eq.row(j).transpose());
        }
        if ka + ke == 0 {
            return (DVector::zeros(0), DVector::zeros(0));
        }
        let svd = m.svd(true, true);
        let sol = svd.solve(&(-g), 1e-12).unwrap_or_else(|_| DVector::zeros(ka + ke));
        (sol.rows(0, ka).into_owned(), sol.rows(ka, ke).into_owned())
    }
}

/// Orthonormal basis of the null space of the row span of `rows`.
pub fn null_basis(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let n = rows.ncols();
    if rows.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let svd = rows.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.amax();
    let mut range: Vec<DVector<f64>> = Vec::new();
    if smax > 0.0 {
        for (i, s) in svd.singular_values.iter().enumerate() {
            if *s > 1e-10 * smax {
                range.push(v_t.row(i).transpose());
            }
        }
    }
    // Gram-Schmidt completion against the coordinate axes.
    let mut null: Vec<DVector<f64>> = Vec::new();
    for i in 0..n {
        if range.len() + null.len() == n {
            break;
        }
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        for _ in 0..2 {
            for u in range.iter().chain(&null) {
                let c = u.dot(&v);
                v.axpy(-c, u, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            null.push(v / norm);
        }
    }
    let mut basis = DMatrix::zeros(n, null.len());
    for (k, v) in null.iter().enumerate() {
        basis.set_column(k, v);
    }
    basis
}

enum Core {
    Optimal { x: DVector<f64>, work: Vec<usize> },
    Unbounded { x: DVector<f64>, ray: DVector<f64> },
}

/// A feasible point of `A y <= b`, or the smallest achievable violation.
fn phase_one(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    n: usize,
    opts: SolverOptions,
) -> Result<std::result::Result<DVector<f64>, f64>> {
    let origin = DVector::zeros(n);
    if max_violation(a, b, &origin) <= opts.feas_tol {
        return Ok(Ok(origin));
    }
    let (y, s) = phase_one_solve(a, b, n, opts)?;
    Ok(if s <= opts.feas_tol { Ok(y) } else { Err(s) })
}

/// Minimises the largest violation `s` of `A y <= b` starting from `y = 0`.
fn phase_one_solve(a: &DMatrix<f64>, b: &DVector<f64>, n: usize, opts: SolverOptions) -> Result<(DVector<f64>, f64)> {
    let k = a.nrows();
    let viol = max_violation(a, b, &DVector::zeros(n)).max(0.0);
    let mut a1 = DMatrix::zeros(k + 1, n + 1);
    let mut b1 = DVector::zeros(k + 1);
    for j in 0..k {
        for i in 0..n {
            a1[(j, i)] = a[(j, i)];
        }
        a1[(j, n)] = -1.0;
        b1[j] = b[j];
    }
    a1[(k, n)] = -1.0;
    // normalise the augmented rows
    for j in 0..k {
        let norm = a1.row(j).norm();
        for i in 0..=n {
            a1[(j, i)] /= norm;
        }
        b1[j] /= norm;
    }
    let mut c = DVector::zeros(n + 1);
    c[n] = 1.0;
    let mut x0 = DVector::zeros(n + 1);
    x0[n] = viol;
    let h = DMatrix::zeros(n + 1, n + 1);
    match active_set(&h, &c, &a1, &b1, x0, opts)? {
        Core::Optimal { x, .. } => {
            let y = x.rows(0, n).into_owned();
            let s = max_violation(a, b, &y).max(0.0);
            Ok((y, s))
        }
        Core::Unbounded { .. } => Err(Error::Unresolved("phase one reported an unbounded ray".into())),
    }
}

fn max_violation(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for j in 0..a.nrows() {
        let v = a.row(j).transpose().dot(x) - b[j];
        worst = worst.max(v);
    }
    if a.nrows() == 0 {
        0.0
    } else {
        worst
    }
}

fn active_set(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    mut x: DVector<f64>,
    opts: SolverOptions,
) -> Result<Core> {
    let n = x.len();
    let k = a.nrows();
    let h_scale = 1.0 + h.amax();
    let curv_tol = 1e-10 * h_scale;
    let mut work: Vec<usize> = Vec::new();
    let mut in_work = vec![false; k];
    let mut degenerate = 0usize;
    let max_iter = opts.max_iter.max(50 * (n + k));

    for _ in 0..max_iter {
        let g = h * &x + c;
        let g_tol = 1e-11 * (1.0 + g.amax());
        let w_rows = DMatrix::from_fn(work.len(), n, |i, j| a[(work[i], j)]);
        let z = null_basis(&w_rows);

        let mut step: Option<(DVector<f64>, bool)> = None;
        if z.ncols() > 0 {
            let hz = z.transpose() * h * &z;
            let gz = z.transpose() * &g;
            let eig = SymmetricEigen::new(hz);
            let m = z.ncols();
            let mut flat = DVector::zeros(m);
            let mut newton = DVector::zeros(m);
            for i in 0..m {
                let v = eig.eigenvectors.column(i);
                let coef = v.dot(&gz);
                if eig.eigenvalues[i] <= curv_tol {
                    flat -= v * coef;
                } else {
                    newton -= v * (coef / eig.eigenvalues[i]);
                }
            }
            if flat.norm() > g_tol {
                step = Some((&z * flat, true));
            } else {
                let p = &z * newton;
                if p.norm() > 1e-13 * (1.0 + x.norm()) && (z.transpose() * &g).norm() > g_tol {
                    step = Some((p, false));
                }
            }
        }

        match step {
            None => {
                if work.is_empty() {
                    return Ok(Core::Optimal { x, work });
                }
                // multipliers: A_W' lambda = -g
                let aw = &w_rows;
                let lhs = aw * aw.transpose();
                let rhs = -(aw * &g);
                let lambda = match lhs.clone().cholesky() {
                    Some(ch) => ch.solve(&rhs),
                    None => lhs
                        .svd(true, true)
                        .solve(&rhs, 1e-14)
                        .map_err(|e| Error::Unresolved(format!("multiplier solve: {e}")))?,
                };
                let mult_tol = 1e-10 * (1.0 + g.amax());
                let bland = degenerate >= 3;
                let mut drop: Option<usize> = None;
                for (pos, &j) in work.iter().enumerate() {
                    if lambda[pos] < -mult_tol {
                        drop = match drop {
                            None => Some(pos),
                            Some(d) => {
                                let better = if bland { j < work[d] } else { lambda[pos] < lambda[d] };
                                if better {
                                    Some(pos)
                                } else {
                                    Some(d)
                                }
                            }
                        };
                    }
                }
                match drop {
                    None => return Ok(Core::Optimal { x, work }),
                    Some(pos) => {
                        let j = work.remove(pos);
                        in_work[j] = false;
                    }
                }
            }
            Some((d, is_ray)) => {
                let dn = d.norm();
                let mut alpha = if is_ray { f64::INFINITY } else { 1.0 };
                let mut block: Option<usize> = None;
                for j in 0..k {
                    if in_work[j] {
                        continue;
                    }
                    let aj = a.row(j);
                    let ad = aj.transpose().dot(&d);
                    if ad <= 1e-13 * dn {
                        continue;
                    }
                    let slack = (b[j] - aj.transpose().dot(&x)).max(0.0);
                    let t = slack / ad;
                    if t < alpha {
                        alpha = t;
                        block = Some(j);
                    }
                }
                if alpha.is_infinite() {
                    return Ok(Core::Unbounded { x, ray: d / dn });
                }
                x += &d * alpha;
                if alpha * dn <= 1e-14 * (1.0 + x.norm()) {
                    degenerate += 1;
                } else {
                    degenerate = 0;
                }
                if let Some(j) = block {
                    work.push(j);
                    in_work[j] = true;
                }
            }
        }
    }
    Err(Error::Unresolved(format!("active-set iteration cap reached ({n} vars, {k} constraints)")))
}
