//! Canonical lifted form of functions in the representation class.
//!
//! Every [`ConvexFn`](crate::ConvexFn) lowers to
//!
//! ```text
//!     f(z) = inf_u  1/2 v'Qv + l'v + r + sum_k max_i (s_ki . v - o_ki)
//!            subject to  A v <= b,  E v = e,       where v = (z, u)
//! ```
//!
//! with `z` the primary block and `u` auxiliary variables introduced by
//! partial minimisation (conjugates of polyhedral functions, inf-projections,
//! sum representatives). Shifts, scalings and linear compositions are exact
//! affine pullbacks of this form, so every downstream problem is a single
//! convex quadratic or linear program.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::qp::{Outcome, QuadProgram, SolverOptions};

/// Rows with normalised violation above this count as outside the domain.
pub const DOMAIN_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct MaxBlock {
    pub slopes: DMatrix<f64>,
    pub offsets: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct Lowered {
    pub primary: usize,
    pub aux: usize,
    pub quad: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub constant: f64,
    pub maxes: Vec<MaxBlock>,
    pub ineq: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub eq: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
}

/// Result of minimising a lowered function over all of its variables.
#[derive(Debug, Clone)]
pub enum Minimum {
    Attained { v: DVector<f64>, value: f64 },
    Unbounded,
    Infeasible,
}

fn vstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = a.ncols().max(b.ncols());
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), cols);
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((a.nrows(), 0), (b.nrows(), b.ncols())).copy_from(b);
    out
}

fn vconcat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

fn row_ok(row: nalgebra::DVectorView<f64>, rhs: f64, v: &DVector<f64>, equality: bool) -> bool {
    let norm = row.norm();
    if norm == 0.0 {
        return if equality { rhs.abs() <= DOMAIN_TOL } else { rhs >= -DOMAIN_TOL };
    }
    let resid = (row.dot(v) - rhs) / norm;
    let slack = DOMAIN_TOL * (1.0 + (rhs / norm).abs());
    if equality {
        resid.abs() <= slack
    } else {
        resid <= slack
    }
}

impl Lowered {
    /// The zero function on `primary` variables.
    pub fn zero(primary: usize) -> Self {
        Lowered {
            primary,
            aux: 0,
            quad: DMatrix::zeros(primary, primary),
            lin: DVector::zeros(primary),
            constant: 0.0,
            maxes: Vec::new(),
            ineq: DMatrix::zeros(0, primary),
            ineq_rhs: DVector::zeros(0),
            eq: DMatrix::zeros(0, primary),
            eq_rhs: DVector::zeros(0),
        }
    }

    pub fn nv(&self) -> usize {
        self.primary + self.aux
    }

    pub fn has_constraints(&self) -> bool {
        self.ineq.nrows() + self.eq.nrows() > 0
    }

    /// Substitutes `v_old = m * w + s`; the first `primary` entries of `w`
    /// form the new primary block.
    pub fn pullback(&self, m: &DMatrix<f64>, s: &DVector<f64>, primary: usize) -> Lowered {
        debug_assert_eq!(m.nrows(), self.nv());
        let nw = m.ncols();
        let qm = &self.quad * m;
        let qs = &self.quad * s;
        Lowered {
            primary,
            aux: nw - primary,
            quad: m.transpose() * &qm,
            lin: m.transpose() * (&qs + &self.lin),
            constant: self.constant + 0.5 * s.dot(&qs) + self.lin.dot(s),
            maxes: self
                .maxes
                .iter()
                .map(|b| MaxBlock { slopes: &b.slopes * m, offsets: &b.offsets - &b.slopes * s })
                .collect(),
            ineq: &self.ineq * m,
            ineq_rhs: &self.ineq_rhs - &self.ineq * s,
            eq: &self.eq * m,
            eq_rhs: &self.eq_rhs - &self.eq * s,
        }
    }

    /// Sum of two functions over the same full variable vector.
    pub fn sum_aligned(&self, other: &Lowered) -> Lowered {
        debug_assert_eq!(self.nv(), other.nv());
        let mut maxes = self.maxes.clone();
        maxes.extend(other.maxes.iter().cloned());
        Lowered {
            primary: self.primary,
            aux: self.aux,
            quad: &self.quad + &other.quad,
            lin: &self.lin + &other.lin,
            constant: self.constant + other.constant,
            maxes,
            ineq: vstack(&self.ineq, &other.ineq),
            ineq_rhs: vconcat(&self.ineq_rhs, &other.ineq_rhs),
            eq: vstack(&self.eq, &other.eq),
            eq_rhs: vconcat(&self.eq_rhs, &other.eq_rhs),
        }
    }

    /// Sum over a shared primary block; auxiliary blocks are kept apart.
    pub fn add(&self, other: &Lowered) -> Lowered {
        debug_assert_eq!(self.primary, other.primary);
        let p = self.primary;
        let nw = p + self.aux + other.aux;
        let mut m1 = DMatrix::zeros(self.nv(), nw);
        let mut m2 = DMatrix::zeros(other.nv(), nw);
        for i in 0..p {
            m1[(i, i)] = 1.0;
            m2[(i, i)] = 1.0;
        }
        for i in 0..self.aux {
            m1[(p + i, p + i)] = 1.0;
        }
        for i in 0..other.aux {
            m2[(p + i, p + self.aux + i)] = 1.0;
        }
        let a = self.pullback(&m1, &DVector::zeros(self.nv()), p);
        let b = other.pullback(&m2, &DVector::zeros(other.nv()), p);
        a.sum_aligned(&b)
    }

    /// Multiplies all function values by `alpha > 0`; the domain is unchanged.
    pub fn scale_values(&self, alpha: f64) -> Lowered {
        let mut out = self.clone();
        out.quad *= alpha;
        out.lin *= alpha;
        out.constant *= alpha;
        for b in &mut out.maxes {
            b.slopes *= alpha;
            b.offsets *= alpha;
        }
        out
    }

    pub fn add_linear_primary(&self, g: &DVector<f64>) -> Lowered {
        let mut out = self.clone();
        for i in 0..self.primary {
            out.lin[i] += g[i];
        }
        out
    }

    pub fn add_constant(&self, c: f64) -> Lowered {
        let mut out = self.clone();
        out.constant += c;
        out
    }

    /// Adds `weight/2 * |z|^2` on the primary block.
    pub fn add_primary_square(&self, weight: f64) -> Lowered {
        let mut out = self.clone();
        for i in 0..self.primary {
            out.quad[(i, i)] += weight;
        }
        out
    }

    /// Turns the trailing `k` primary variables into auxiliary ones, i.e.
    /// minimises them out.
    pub fn project_out(&self, k: usize) -> Lowered {
        let mut out = self.clone();
        out.primary -= k;
        out.aux += k;
        out
    }

    /// `v_primary = shift + w`, auxiliary block unchanged.
    pub fn translate_primary(&self, shift: &DVector<f64>) -> Lowered {
        let n = self.nv();
        let mut s = DVector::zeros(n);
        for i in 0..self.primary {
            s[i] = shift[i];
        }
        self.pullback(&DMatrix::identity(n, n), &s, self.primary)
    }

    /// Linear map `v_primary = lin * w_primary`, auxiliary block unchanged.
    pub fn map_primary(&self, lin: &DMatrix<f64>) -> Lowered {
        let p_new = lin.ncols();
        let nw = p_new + self.aux;
        let mut m = DMatrix::zeros(self.nv(), nw);
        m.view_mut((0, 0), (self.primary, p_new)).copy_from(lin);
        for i in 0..self.aux {
            m[(self.primary + i, p_new + i)] = 1.0;
        }
        self.pullback(&m, &DVector::zeros(self.nv()), p_new)
    }

    /// Value of the objective at a full variable vector (no minimisation).
    pub fn objective(&self, v: &DVector<f64>) -> f64 {
        let mut val = 0.5 * v.dot(&(&self.quad * v)) + self.lin.dot(v) + self.constant;
        for b in &self.maxes {
            let pieces = &b.slopes * v - &b.offsets;
            val += pieces.max();
        }
        val
    }

    pub fn feasible(&self, v: &DVector<f64>) -> bool {
        (0..self.ineq.nrows()).all(|j| row_ok(self.ineq.row(j).transpose().as_view(), self.ineq_rhs[j], v, false))
            && (0..self.eq.nrows()).all(|j| row_ok(self.eq.row(j).transpose().as_view(), self.eq_rhs[j], v, true))
    }

    fn epigraph_qp(&self) -> (QuadProgram, usize) {
        let nv = self.nv();
        let k = self.maxes.len();
        let n = nv + k;
        let mut h = DMatrix::zeros(n, n);
        h.view_mut((0, 0), (nv, nv)).copy_from(&self.quad);
        // symmetrise against round-off from pullbacks
        let h = (&h + h.transpose()) * 0.5;
        let mut c = DVector::zeros(n);
        c.rows_mut(0, nv).copy_from(&self.lin);
        for i in 0..k {
            c[nv + i] = 1.0;
        }
        let piece_rows: usize = self.maxes.iter().map(|b| b.slopes.nrows()).sum();
        let rows = piece_rows + self.ineq.nrows();
        let mut a = DMatrix::zeros(rows, n);
        let mut b = DVector::zeros(rows);
        let mut r = 0;
        for (bi, blk) in self.maxes.iter().enumerate() {
            for p in 0..blk.slopes.nrows() {
                a.view_mut((r, 0), (1, nv)).copy_from(&blk.slopes.row(p));
                a[(r, nv + bi)] = -1.0;
                b[r] = blk.offsets[p];
                r += 1;
            }
        }
        for j in 0..self.ineq.nrows() {
            a.view_mut((r, 0), (1, nv)).copy_from(&self.ineq.row(j));
            b[r] = self.ineq_rhs[j];
            r += 1;
        }
        let mut e = DMatrix::zeros(self.eq.nrows(), n);
        e.view_mut((0, 0), (self.eq.nrows(), nv)).copy_from(&self.eq);
        (QuadProgram::new(h, c).with_ineq(a, b).with_eq(e, self.eq_rhs.clone()), nv)
    }

    /// Minimises over every variable (primary and auxiliary).
    pub fn minimize(&self) -> Result<Minimum> {
        let (qp, nv) = self.epigraph_qp();
        match qp.solve_with(SolverOptions::default())? {
            Outcome::Optimal(sol) => {
                let v = sol.x.rows(0, nv).into_owned();
                // re-evaluate exactly instead of trusting epigraph slack
                let value = self.objective(&v);
                Ok(Minimum::Attained { v, value })
            }
            Outcome::Unbounded { .. } => Ok(Minimum::Unbounded),
            Outcome::Infeasible { .. } => Ok(Minimum::Infeasible),
        }
    }

    /// Fixes the primary block at `z`, leaving a function of the auxiliaries.
    pub fn fix_primary(&self, z: &DVector<f64>) -> Lowered {
        let nv = self.nv();
        let mut m = DMatrix::zeros(nv, self.aux);
        for i in 0..self.aux {
            m[(self.primary + i, i)] = 1.0;
        }
        let mut s = DVector::zeros(nv);
        for i in 0..self.primary {
            s[i] = z[i];
        }
        self.pullback(&m, &s, 0)
    }

    /// `inf_u` of the lifted objective at the primary point `z`; `+inf`
    /// outside the domain.
    pub fn eval(&self, z: &DVector<f64>) -> Result<f64> {
        if z.len() != self.primary {
            return Err(Error::DimensionMismatch { expected: self.primary, found: z.len() });
        }
        if self.aux == 0 {
            if !self.feasible(z) {
                return Ok(f64::INFINITY);
            }
            return Ok(self.objective(z));
        }
        match self.fix_primary(z).minimize()? {
            Minimum::Attained { value, .. } => Ok(value),
            Minimum::Infeasible => Ok(f64::INFINITY),
            Minimum::Unbounded => Err(Error::Unbounded("inner minimisation over auxiliary variables".into())),
        }
    }

    /// Minimiser over the auxiliaries at `z` (empty when there are none).
    pub fn eval_argmin(&self, z: &DVector<f64>) -> Result<Option<(f64, DVector<f64>)>> {
        if self.aux == 0 {
            return Ok(if self.feasible(z) { Some((self.objective(z), DVector::zeros(0))) } else { None });
        }
        match self.fix_primary(z).minimize()? {
            Minimum::Attained { v, value } => Ok(Some((value, v))),
            Minimum::Infeasible => Ok(None),
            Minimum::Unbounded => Err(Error::Unbounded("inner minimisation over auxiliary variables".into())),
        }
    }

    /// A subgradient at `z` from the KKT multipliers of the inner program.
    /// `None` when `z` is outside the domain or the multipliers are not
    /// sign-consistent.
    pub fn subgradient(&self, z: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        if z.len() != self.primary {
            return Err(Error::DimensionMismatch { expected: self.primary, found: z.len() });
        }
        if !self.feasible_at_primary(z)? {
            return Ok(None);
        }
        let (qp, _) = self.epigraph_qp();
        let p = self.primary;
        let n = qp.nvars();
        // substitute the primary block
        let rest = n - p;
        if rest == 0 {
            return Ok(Some(&self.quad * z + &self.lin));
        }
        let sel = |m: &DMatrix<f64>| m.view((0, p), (m.nrows(), rest)).into_owned();
        let zpart = |m: &DMatrix<f64>| m.view((0, 0), (m.nrows(), p)).into_owned();
        let h_rr = qp.hessian.view((p, p), (rest, rest)).into_owned();
        let h_rz = qp.hessian.view((p, 0), (rest, p)).into_owned();
        let c_r = qp.linear.rows(p, rest) + &h_rz * z;
        let reduced = QuadProgram::new(h_rr, c_r)
            .with_ineq(sel(&qp.ineq), &qp.ineq_rhs - zpart(&qp.ineq) * z)
            .with_eq(sel(&qp.eq), &qp.eq_rhs - zpart(&qp.eq) * z);
        let sol = match reduced.solve()? {
            Outcome::Optimal(s) => s,
            _ => return Ok(None),
        };
        let (lambda, nu) = reduced.kkt_multipliers(&sol.x, &sol.active);
        if lambda.iter().any(|l| *l < -1e-8) {
            return Ok(None);
        }
        let mut full = DVector::zeros(n);
        full.rows_mut(0, p).copy_from(z);
        full.rows_mut(p, rest).copy_from(&sol.x);
        let mut g = (&qp.hessian * &full + &qp.linear).rows(0, p).into_owned();
        for (k, &j) in sol.active.iter().enumerate() {
            g += qp.ineq.view((j, 0), (1, p)).transpose() * lambda[k];
        }
        for j in 0..qp.eq.nrows() {
            g += qp.eq.view((j, 0), (1, p)).transpose() * nu[j];
        }
        Ok(Some(g))
    }

    fn feasible_at_primary(&self, z: &DVector<f64>) -> Result<bool> {
        if self.aux == 0 {
            return Ok(self.feasible(z));
        }
        let dom = self.fix_primary(z).domain_only();
        Ok(matches!(dom.minimize()?, Minimum::Attained { .. }))
    }

    /// Primary block of `argmin_v f(v) + |v - p|^2 / 2`.
    pub fn prox(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        let l = self.add_primary_square(1.0).add_linear_primary(&(-p));
        match l.minimize()? {
            Minimum::Attained { v, .. } => Ok(v.rows(0, self.primary).into_owned()),
            Minimum::Unbounded => Err(Error::Unbounded("proximal subproblem".into())),
            Minimum::Infeasible => Err(Error::Improper("proximal subproblem has empty domain".into())),
        }
    }

    /// The indicator of the domain (all objective terms dropped).
    pub fn domain_only(&self) -> Lowered {
        let mut out = Lowered::zero(self.primary);
        out.aux = self.aux;
        out.quad = DMatrix::zeros(self.nv(), self.nv());
        out.lin = DVector::zeros(self.nv());
        out.ineq = self.ineq.clone();
        out.ineq_rhs = self.ineq_rhs.clone();
        out.eq = self.eq.clone();
        out.eq_rhs = self.eq_rhs.clone();
        out
    }

    /// True when the constraint system has a solution.
    pub fn domain_nonempty(&self) -> Result<bool> {
        if !self.has_constraints() {
            return Ok(true);
        }
        Ok(!matches!(self.domain_only().minimize()?, Minimum::Infeasible))
    }
}
