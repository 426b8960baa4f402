//! Extended-real convex functions on the paired space, closed under the
//! shift `f_z` and scale `f_alpha` transforms.
//!
//! A [`ConvexFn`] is an immutable tree of [`Node`]s. Evaluation follows the
//! definitions node by node; every solver works on the lowered program
//! (see [`crate::lowered`]), cached per function.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::calculus::LinearMap;
use crate::error::{Error, Result};
use crate::lowered::{Lowered, MaxBlock, DOMAIN_TOL};
use crate::paired::PairedPoint;
use crate::polyhedron::LiftedPolyhedron;

/// Relative eigenvalue slack for the PSD test.
pub const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePiece {
    pub slope: PairedPoint,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub bound: f64,
}

/// An affine piece `a . x - b` on the primal space alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPiece {
    pub slope: Vec<f64>,
    pub offset: f64,
}

/// `phi(x) = max_i (a_i . x - b_i) + indicator{ C x <= e }` on `R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyhedralFn {
    pub pieces: Vec<LinearPiece>,
    #[serde(default)]
    pub constraints: Vec<HalfSpace>,
}

/// Tagged node of the function tree; the JSON schema is this enum.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    MaxAffine {
        pieces: Vec<AffinePiece>,
    },
    Quadratic {
        #[serde(rename = "Q")]
        q_mat: Vec<Vec<f64>>,
        q: Vec<f64>,
        #[serde(default)]
        r: f64,
    },
    IndicatorPolyhedron {
        inequalities: Vec<HalfSpace>,
    },
    Add {
        terms: Vec<ConvexFn>,
    },
    Shifted {
        inner: Box<ConvexFn>,
        z0: PairedPoint,
    },
    Scaled {
        inner: Box<ConvexFn>,
        alpha: f64,
    },
    /// `h(z) = |z|^2 / 2`.
    H {
        dim: usize,
    },
    /// `phi(x) + phi*(x*)`, the representative of the subdifferential of `phi`.
    FenchelSum {
        phi: PolyhedralFn,
    },
    /// `g(x, x*) = inf_{y*} f(x, 0, x*, y*)` for `f` on `(X x Y) x (X* x Y*)`.
    PartialProjection {
        inner: Box<ConvexFn>,
        y_dim: usize,
    },
    /// `first(x, x*) + second(y, y*)` on `(X x Y) x (X* x Y*)`.
    DirectSum {
        first: Box<ConvexFn>,
        second: Box<ConvexFn>,
    },
    /// `f(x, y + A x, x* - A' y*, y*)`.
    Composed {
        inner: Box<ConvexFn>,
        map: LinearMap,
    },
    /// `k(x, x*) = inf_{y*} f(x, x* - A' y*) + g(A x, y*)`.
    SumRepresentative {
        f: Box<ConvexFn>,
        g: Box<ConvexFn>,
        map: LinearMap,
    },
}

/// A proper closed convex function on `R^n x R^n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Node", into = "Node")]
pub struct ConvexFn {
    dim: usize,
    node: Node,
    quad: Option<Arc<(DMatrix<f64>, DVector<f64>)>>,
    lowered: OnceLock<Arc<Lowered>>,
}

impl TryFrom<Node> for ConvexFn {
    type Error = Error;
    fn try_from(node: Node) -> Result<Self> {
        ConvexFn::from_node(node)
    }
}

impl From<ConvexFn> for Node {
    fn from(f: ConvexFn) -> Node {
        f.node
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn coupling_of(v: &[f64]) -> f64 {
    let n = v.len() / 2;
    dot(&v[..n], &v[n..])
}

fn halfspace_ok(h: &HalfSpace, v: &[f64]) -> bool {
    let norm = h.normal.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm == 0.0 {
        return h.bound >= -DOMAIN_TOL;
    }
    (dot(&h.normal, v) - h.bound) / norm <= DOMAIN_TOL * (1.0 + (h.bound / norm).abs())
}

fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|t| t.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

impl PolyhedralFn {
    pub fn new(pieces: Vec<LinearPiece>, constraints: Vec<HalfSpace>) -> Result<Self> {
        let p = PolyhedralFn { pieces, constraints };
        p.validate()?;
        Ok(p)
    }

    /// `|x|` on the line.
    pub fn abs() -> Self {
        PolyhedralFn {
            pieces: vec![LinearPiece { slope: vec![1.0], offset: 0.0 }, LinearPiece { slope: vec![-1.0], offset: 0.0 }],
            constraints: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.pieces.first().map(|p| p.slope.len()).unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Err(Error::InvalidParameter("polyhedral function needs at least one piece".into()));
        }
        for p in &self.pieces {
            if p.slope.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: p.slope.len() });
            }
            check_finite(&p.slope, "piece slope")?;
            check_finite(&[p.offset], "piece offset")?;
        }
        for c in &self.constraints {
            if c.normal.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: c.normal.len() });
            }
            check_finite(&c.normal, "constraint normal")?;
            check_finite(&[c.bound], "constraint bound")?;
        }
        if !self.lowered().domain_nonempty()? {
            return Err(Error::Improper("empty domain".into()));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if !self.constraints.iter().all(|c| halfspace_ok(c, x)) {
            return f64::INFINITY;
        }
        self.pieces.iter().map(|p| dot(&p.slope, x) - p.offset).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn lowered(&self) -> Lowered {
        let n = self.dim();
        let mut l = Lowered::zero(n);
        l.maxes.push(MaxBlock {
            slopes: DMatrix::from_fn(self.pieces.len(), n, |i, j| self.pieces[i].slope[j]),
            offsets: DVector::from_iterator(self.pieces.len(), self.pieces.iter().map(|p| p.offset)),
        });
        l.ineq = DMatrix::from_fn(self.constraints.len(), n, |i, j| self.constraints[i].normal[j]);
        l.ineq_rhs = DVector::from_iterator(self.constraints.len(), self.constraints.iter().map(|c| c.bound));
        l
    }

    /// The conjugate by linear-programming duality:
    /// `phi*(y) = min { lambda . b + mu . e : lambda, mu >= 0, sum lambda = 1,
    /// sum lambda_i a_i + C' mu = y }`.
    pub fn conjugate_lowered(&self) -> Lowered {
        let n = self.dim();
        let p = self.pieces.len();
        let q = self.constraints.len();
        let nv = n + p + q;
        let mut l = Lowered::zero(n);
        l.aux = p + q;
        l.quad = DMatrix::zeros(nv, nv);
        l.lin = DVector::zeros(nv);
        for (i, pc) in self.pieces.iter().enumerate() {
            l.lin[n + i] = pc.offset;
        }
        for (k, c) in self.constraints.iter().enumerate() {
            l.lin[n + p + k] = c.bound;
        }
        l.ineq = DMatrix::zeros(p + q, nv);
        for i in 0..p + q {
            l.ineq[(i, n + i)] = -1.0;
        }
        l.ineq_rhs = DVector::zeros(p + q);
        l.eq = DMatrix::zeros(1 + n, nv);
        l.eq_rhs = DVector::zeros(1 + n);
        for i in 0..p {
            l.eq[(0, n + i)] = 1.0;
        }
        l.eq_rhs[0] = 1.0;
        for j in 0..n {
            l.eq[(1 + j, j)] = -1.0;
            for (i, pc) in self.pieces.iter().enumerate() {
                l.eq[(1 + j, n + i)] = pc.slope[j];
            }
            for (k, c) in self.constraints.iter().enumerate() {
                l.eq[(1 + j, n + p + k)] = c.normal[j];
            }
        }
        l
    }

    pub fn conjugate(&self, y: &[f64]) -> Result<f64> {
        self.conjugate_lowered().eval(&DVector::from_column_slice(y))
    }

    /// `∂phi(x)` on the line as a closed interval; `None` outside the domain.
    pub fn subdifferential_1d(&self, x: f64) -> Option<(f64, f64)> {
        if self.dim() != 1 {
            return None;
        }
        let val = self.eval(&[x]);
        if !val.is_finite() {
            return None;
        }
        let tol = 1e-12 * (1.0 + val.abs());
        let active: Vec<f64> =
            self.pieces.iter().filter(|p| (p.slope[0] * x - p.offset - val).abs() <= tol).map(|p| p.slope[0]).collect();
        let mut lo = active.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = active.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for c in &self.constraints {
            let a = c.normal[0];
            if a != 0.0 && (a * x - c.bound).abs() <= 1e-12 * (1.0 + c.bound.abs()) {
                if a > 0.0 {
                    hi = f64::INFINITY;
                } else {
                    lo = f64::NEG_INFINITY;
                }
            }
        }
        Some((lo, hi))
    }
}

fn psd_check(q: &DMatrix<f64>) -> Result<()> {
    let scale = 1.0 + q.amax();
    let asym = (q - q.transpose()).amax();
    if asym > PSD_TOL * scale {
        return Err(Error::InvalidParameter(format!("Q is not symmetric (asymmetry {asym:e})")));
    }
    let sym = (q + q.transpose()) * 0.5;
    let min = SymmetricEigen::new(sym).eigenvalues.min();
    if min < -PSD_TOL * scale {
        return Err(Error::NotPsd(min));
    }
    Ok(())
}

fn matrix_from_rows(rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidParameter(format!("Q must be {n}x{n}")));
    }
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    check_finite(m.as_slice(), "quadratic matrix")?;
    Ok(m)
}

impl ConvexFn {
    /// Validates a node and wraps it. Properness is checked by one
    /// feasibility solve whenever the node carries constraints.
    pub fn from_node(node: Node) -> Result<Self> {
        let mut quad = None;
        let dim = match &node {
            Node::MaxAffine { pieces } => {
                let first = pieces
                    .first()
                    .ok_or_else(|| Error::InvalidParameter("max_affine needs at least one piece".into()))?;
                let n = first.slope.dim();
                for p in pieces {
                    p.slope.ensure_dim(n)?;
                    check_finite(&[p.offset], "piece offset")?;
                }
                n
            }
            Node::Quadratic { q_mat, q, r } => {
                if q.is_empty() || q.len() % 2 != 0 {
                    return Err(Error::InvalidParameter("quadratic needs an even, positive length".into()));
                }
                check_finite(q, "quadratic linear term")?;
                check_finite(&[*r], "quadratic constant")?;
                let m = matrix_from_rows(q_mat, q.len())?;
                psd_check(&m)?;
                quad = Some(Arc::new(((&m + m.transpose()) * 0.5, DVector::from_column_slice(q))));
                q.len() / 2
            }
            Node::IndicatorPolyhedron { inequalities } => {
                let first = inequalities
                    .first()
                    .ok_or_else(|| Error::InvalidParameter("indicator_polyhedron needs an inequality".into()))?;
                let len = first.normal.len();
                if len == 0 || len % 2 != 0 {
                    return Err(Error::InvalidParameter("normal length must be even and positive".into()));
                }
                for h in inequalities {
                    if h.normal.len() != len {
                        return Err(Error::DimensionMismatch { expected: len, found: h.normal.len() });
                    }
                    check_finite(&h.normal, "inequality normal")?;
                    check_finite(&[h.bound], "inequality bound")?;
                }
                len / 2
            }
            Node::Add { terms } => {
                let first =
                    terms.first().ok_or_else(|| Error::InvalidParameter("add needs at least one term".into()))?;
                for t in terms {
                    if t.dim != first.dim {
                        return Err(Error::DimensionMismatch { expected: first.dim, found: t.dim });
                    }
                }
                first.dim
            }
            Node::Shifted { inner, z0 } => {
                z0.ensure_dim(inner.dim)?;
                inner.dim
            }
            Node::Scaled { inner, alpha } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
                }
                inner.dim
            }
            Node::H { dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidParameter("h needs dim >= 1".into()));
                }
                *dim
            }
            Node::FenchelSum { phi } => {
                phi.validate()?;
                phi.dim()
            }
            Node::PartialProjection { inner, y_dim } => {
                if *y_dim == 0 || *y_dim >= inner.dim {
                    return Err(Error::InvalidParameter(format!("y_dim {y_dim} must lie in 1..{}", inner.dim)));
                }
                inner.dim - y_dim
            }
            Node::DirectSum { first, second } => first.dim + second.dim,
            Node::Composed { inner, map } => {
                if map.rows() + map.cols() != inner.dim {
                    return Err(Error::DimensionMismatch { expected: inner.dim, found: map.rows() + map.cols() });
                }
                inner.dim
            }
            Node::SumRepresentative { f, g, map } => {
                if map.cols() != f.dim {
                    return Err(Error::DimensionMismatch { expected: f.dim, found: map.cols() });
                }
                if map.rows() != g.dim {
                    return Err(Error::DimensionMismatch { expected: g.dim, found: map.rows() });
                }
                f.dim
            }
        };
        let out = ConvexFn { dim, node, quad, lowered: OnceLock::new() };
        if matches!(out.node, Node::PartialProjection { .. } | Node::SumRepresentative { .. }) {
            let verdict = crate::calculus::node_cq(&out)?;
            if !verdict.in_relative_interior {
                return Err(Error::ConstraintQualification(format!(
                    "0 is not in the relative interior (in set: {}, hull dim {}, margin {:e})",
                    verdict.in_set, verdict.hull_dim, verdict.margin
                )));
            }
        }
        if !matches!(out.node, Node::FenchelSum { .. }) {
            let l = out.lowered();
            if l.has_constraints() && !l.domain_nonempty()? {
                return Err(Error::Improper("effective domain is empty".into()));
            }
        }
        Ok(out)
    }

    pub fn max_affine(pieces: Vec<AffinePiece>) -> Result<Self> {
        ConvexFn::from_node(Node::MaxAffine { pieces })
    }

    pub fn quadratic(q_mat: Vec<Vec<f64>>, q: Vec<f64>, r: f64) -> Result<Self> {
        ConvexFn::from_node(Node::Quadratic { q_mat, q, r })
    }

    pub fn indicator(inequalities: Vec<HalfSpace>) -> Result<Self> {
        ConvexFn::from_node(Node::IndicatorPolyhedron { inequalities })
    }

    pub fn sum(terms: Vec<ConvexFn>) -> Result<Self> {
        ConvexFn::from_node(Node::Add { terms })
    }

    /// `h(z) = |z|^2 / 2`.
    pub fn h(n: usize) -> Result<Self> {
        ConvexFn::from_node(Node::H { dim: n })
    }

    pub fn fenchel_sum(phi: PolyhedralFn) -> Result<Self> {
        ConvexFn::from_node(Node::FenchelSum { phi })
    }

    /// The zero function; it represents no monotone operator but is a
    /// legitimate member of the class.
    /// `(x, y, x*, y*) -> self(x, x*) + other(y, y*)`.
    pub fn direct_sum(&self, other: &ConvexFn) -> Result<Self> {
        ConvexFn::from_node(Node::DirectSum { first: Box::new(self.clone()), second: Box::new(other.clone()) })
    }

    pub fn zero(n: usize) -> Result<Self> {
        ConvexFn::max_affine(vec![AffinePiece { slope: PairedPoint::zeros(n), offset: 0.0 }])
    }

    pub fn node(&self) -> &Node {
        &self.node
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shift(&self, z0: &PairedPoint) -> Result<Self> {
        ConvexFn::from_node(Node::Shifted { inner: Box::new(self.clone()), z0: z0.clone() })
    }

    pub fn scale(&self, alpha: f64) -> Result<Self> {
        ConvexFn::from_node(Node::Scaled { inner: Box::new(self.clone()), alpha })
    }

    pub fn plus(&self, other: &ConvexFn) -> Result<Self> {
        ConvexFn::sum(vec![self.clone(), other.clone()])
    }

    pub fn eval(&self, z: &PairedPoint) -> Result<f64> {
        z.ensure_dim(self.dim)?;
        self.eval_concat(&z.to_concat())
    }

    /// Evaluation at the concatenated vector `(x, x*)`.
    pub fn eval_concat(&self, v: &[f64]) -> Result<f64> {
        if v.len() != 2 * self.dim {
            return Err(Error::DimensionMismatch { expected: 2 * self.dim, found: v.len() });
        }
        let n = self.dim;
        Ok(match &self.node {
            Node::MaxAffine { pieces } => pieces
                .iter()
                .map(|p| dot(p.slope.x(), &v[..n]) + dot(p.slope.xs(), &v[n..]) - p.offset)
                .fold(f64::NEG_INFINITY, f64::max),
            Node::Quadratic { r, .. } => {
                let (m, q) = self.quad.as_deref().expect("set at construction");
                let z = DVector::from_column_slice(v);
                0.5 * z.dot(&(m * &z)) + q.dot(&z) + r
            }
            Node::IndicatorPolyhedron { inequalities } => {
                if inequalities.iter().all(|h| halfspace_ok(h, v)) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Node::Add { terms } => {
                let mut s = 0.0;
                for t in terms {
                    s += t.eval_concat(v)?;
                    if s == f64::INFINITY {
                        break;
                    }
                }
                s
            }
            Node::Shifted { inner, z0 } => {
                let z0 = z0.to_concat();
                let moved: Vec<f64> = v.iter().zip(&z0).map(|(a, b)| a + b).collect();
                let base = inner.eval_concat(&moved)?;
                if base == f64::INFINITY {
                    base
                } else {
                    base - coupling_of(&moved) + coupling_of(v)
                }
            }
            Node::Scaled { inner, alpha } => {
                let mut w = v.to_vec();
                for t in &mut w[n..] {
                    *t /= alpha;
                }
                alpha * inner.eval_concat(&w)?
            }
            Node::H { .. } => 0.5 * v.iter().map(|t| t * t).sum::<f64>(),
            Node::FenchelSum { phi } => {
                let a = phi.eval(&v[..n]);
                if a == f64::INFINITY {
                    a
                } else {
                    a + phi.conjugate(&v[n..])?
                }
            }
            Node::DirectSum { first, second } => {
                let k = first.dim;
                let a: Vec<f64> = v[..k].iter().chain(&v[n..n + k]).copied().collect();
                let b: Vec<f64> = v[k..n].iter().chain(&v[n + k..]).copied().collect();
                let fa = first.eval_concat(&a)?;
                if fa == f64::INFINITY {
                    fa
                } else {
                    fa + second.eval_concat(&b)?
                }
            }
            Node::Composed { inner, map } => {
                let (x, xs) = (&v[..n], &v[n..]);
                let k = map.cols();
                let ax = map.apply(&x[..k]);
                let aty = map.apply_transpose(&xs[k..]);
                let mut w = Vec::with_capacity(2 * n);
                w.extend_from_slice(&x[..k]);
                w.extend(x[k..].iter().zip(&ax).map(|(y, a)| y + a));
                w.extend(xs[..k].iter().zip(&aty).map(|(s, a)| s - a));
                w.extend_from_slice(&xs[k..]);
                inner.eval_concat(&w)?
            }
            Node::PartialProjection { .. } | Node::SumRepresentative { .. } => {
                self.lowered().eval(&DVector::from_column_slice(v))?
            }
        })
    }

    /// The lowered program, built once.
    pub fn lowered(&self) -> Arc<Lowered> {
        self.lowered.get_or_init(|| Arc::new(self.build_lowered())).clone()
    }

    fn build_lowered(&self) -> Lowered {
        let n = self.dim;
        let p = 2 * n;
        match &self.node {
            Node::MaxAffine { pieces } => {
                let mut l = Lowered::zero(p);
                l.maxes.push(MaxBlock {
                    slopes: DMatrix::from_fn(pieces.len(), p, |i, j| pieces[i].slope.to_concat()[j]),
                    offsets: DVector::from_iterator(pieces.len(), pieces.iter().map(|pc| pc.offset)),
                });
                l
            }
            Node::Quadratic { r, .. } => {
                let (m, q) = self.quad.as_deref().expect("set at construction");
                let mut l = Lowered::zero(p);
                l.quad = m.clone();
                l.lin = q.clone();
                l.constant = *r;
                l
            }
            Node::IndicatorPolyhedron { inequalities } => {
                let mut l = Lowered::zero(p);
                l.ineq = DMatrix::from_fn(inequalities.len(), p, |i, j| inequalities[i].normal[j]);
                l.ineq_rhs = DVector::from_iterator(inequalities.len(), inequalities.iter().map(|h| h.bound));
                l
            }
            Node::Add { terms } => {
                let mut it = terms.iter();
                let mut acc = (*it.next().expect("validated").lowered()).clone();
                for t in it {
                    acc = acc.add(&t.lowered());
                }
                acc
            }
            Node::Shifted { inner, z0 } => {
                let hat: Vec<f64> = z0.xs().iter().chain(z0.x()).map(|t| -t).collect();
                inner
                    .lowered()
                    .translate_primary(&z0.to_dvector())
                    .add_linear_primary(&DVector::from_vec(hat))
                    .add_constant(-z0.coupling())
            }
            Node::Scaled { inner, alpha } => {
                let d = DMatrix::from_diagonal(&DVector::from_fn(p, |i, _| if i < n { 1.0 } else { 1.0 / alpha }));
                inner.lowered().map_primary(&d).scale_values(*alpha)
            }
            Node::H { .. } => Lowered::zero(p).add_primary_square(1.0),
            Node::FenchelSum { phi } => {
                let mut px = DMatrix::zeros(n, p);
                let mut pxs = DMatrix::zeros(n, p);
                for i in 0..n {
                    px[(i, i)] = 1.0;
                    pxs[(i, n + i)] = 1.0;
                }
                phi.lowered().map_primary(&px).add(&phi.conjugate_lowered().map_primary(&pxs))
            }
            Node::PartialProjection { inner, y_dim } => {
                let m = *y_dim;
                let big = n + m;
                // inner variables (x, y, x*, y*) from new (x, x*, y*)
                let mut lmat = DMatrix::zeros(2 * big, p + m);
                for i in 0..n {
                    lmat[(i, i)] = 1.0;
                    lmat[(big + i, n + i)] = 1.0;
                }
                for j in 0..m {
                    lmat[(big + n + j, p + j)] = 1.0;
                }
                inner.lowered().map_primary(&lmat).project_out(m)
            }
            Node::DirectSum { first, second } => {
                let k = first.dim;
                let m = second.dim;
                let mut pa = DMatrix::zeros(2 * k, p);
                let mut pb = DMatrix::zeros(2 * m, p);
                for i in 0..k {
                    pa[(i, i)] = 1.0;
                    pa[(k + i, n + i)] = 1.0;
                }
                for j in 0..m {
                    pb[(j, k + j)] = 1.0;
                    pb[(m + j, n + k + j)] = 1.0;
                }
                first.lowered().map_primary(&pa).add(&second.lowered().map_primary(&pb))
            }
            Node::Composed { inner, map } => {
                let k = map.cols();
                let m = map.rows();
                let a = map.matrix();
                let mut lmat = DMatrix::identity(p, p);
                // y-block picks up A x, x*-block loses A' y*
                lmat.view_mut((k, 0), (m, k)).copy_from(a);
                lmat.view_mut((n, n + k), (k, m)).copy_from(&(-a.transpose()));
                inner.lowered().map_primary(&lmat)
            }
            Node::SumRepresentative { f, g, map } => {
                let m = map.rows();
                let a = map.matrix();
                let cols = p + m;
                // f at (x, x* - A' y*), g at (A x, y*), over (x, x*, y*)
                let mut mf = DMatrix::zeros(p, cols);
                for i in 0..p {
                    mf[(i, i)] = 1.0;
                }
                mf.view_mut((n, p), (n, m)).copy_from(&(-a.transpose()));
                let mut mg = DMatrix::zeros(2 * m, cols);
                mg.view_mut((0, 0), (m, n)).copy_from(a);
                for j in 0..m {
                    mg[(m + j, p + j)] = 1.0;
                }
                f.lowered().map_primary(&mf).add(&g.lowered().map_primary(&mg)).project_out(m)
            }
        }
    }

    /// A subgradient at `z` (as a concatenated dual vector), if `z` is in the domain.
    pub fn subgradient(&self, z: &PairedPoint) -> Result<Option<DVector<f64>>> {
        z.ensure_dim(self.dim)?;
        self.lowered().subgradient(&z.to_dvector())
    }

    /// `Pr_X(dom f)` and `Pr_{X*}(dom f)` as lifted polyhedra.
    pub fn dom_projections(&self) -> DomainProjections {
        let l = self.lowered();
        let n = self.dim;
        let nv = l.nv();
        let mut sx = DMatrix::zeros(n, nv);
        let mut sxs = DMatrix::zeros(n, nv);
        for i in 0..n {
            sx[(i, i)] = 1.0;
            sxs[(i, n + i)] = 1.0;
        }
        DomainProjections { x: LiftedPolyhedron::from_domain(&l, sx), xs: LiftedPolyhedron::from_domain(&l, sxs) }
    }
}

#[derive(Debug, Clone)]
pub struct DomainProjections {
    pub x: LiftedPolyhedron,
    pub xs: LiftedPolyhedron,
}

/// Bounds summary of a projected domain.
#[derive(Debug, Clone, Serialize)]
pub struct ProjectionSummary {
    pub bounds: Vec<(f64, f64)>,
    pub whole_space: bool,
}

impl DomainProjections {
    pub fn summarize(&self) -> Result<(ProjectionSummary, ProjectionSummary)> {
        let s = |p: &LiftedPolyhedron| -> Result<ProjectionSummary> {
            Ok(ProjectionSummary { bounds: p.bounds()?, whole_space: p.is_whole_space()? })
        };
        Ok((s(&self.x)?, s(&self.xs)?))
    }
}

/// Thin wrapper for `h` on `R^n x R^n`, evaluated in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HFunction {
    pub dim: usize,
}

impl HFunction {
    pub fn eval(&self, z: &PairedPoint) -> Result<f64> {
        z.ensure_dim(self.dim)?;
        Ok(0.5 * z.norm_sq())
    }

    pub fn to_fn(self) -> Result<ConvexFn> {
        ConvexFn::h(self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paired::coupling;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p(x: f64, xs: f64) -> PairedPoint {
        PairedPoint::scalar(x, xs)
    }

    fn sample_fn() -> ConvexFn {
        // |x| + x*^2/2 + indicator{x* <= 3}, a mixed instance
        let pieces =
            vec![AffinePiece { slope: p(1.0, 0.0), offset: 0.0 }, AffinePiece { slope: p(-1.0, 0.0), offset: 0.0 }];
        let quad = ConvexFn::quadratic(vec![vec![0.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0], 0.0).unwrap();
        let ind = ConvexFn::indicator(vec![HalfSpace { normal: vec![0.0, 1.0], bound: 3.0 }]).unwrap();
        ConvexFn::sum(vec![ConvexFn::max_affine(pieces).unwrap(), quad, ind]).unwrap()
    }

    #[test]
    fn h_values() {
        let h = ConvexFn::h(1).unwrap();
        assert_eq!(h.eval(&p(3.0, 4.0)).unwrap(), 12.5);
        assert_eq!(HFunction { dim: 1 }.eval(&p(3.0, 4.0)).unwrap(), 12.5);
        let h2 = h.scale(2.0).unwrap();
        // 2 (y^2/2 + (ys/2)^2/2) = y^2 + ys^2/4
        assert_abs_diff_eq!(h2.eval(&p(1.5, -2.0)).unwrap(), 2.25 + 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h2.lowered().eval(&p(1.5, -2.0).to_dvector()).unwrap(), 3.25, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_nodes() {
        assert!(matches!(
            ConvexFn::quadratic(vec![vec![1.0, 0.0], vec![0.0, -1.0]], vec![0.0, 0.0], 0.0),
            Err(Error::NotPsd(_))
        ));
        assert!(ConvexFn::h(1).unwrap().scale(0.0).is_err());
        assert!(ConvexFn::h(1).unwrap().scale(-1.0).is_err());
        assert!(ConvexFn::max_affine(vec![]).is_err());
        let empty = ConvexFn::indicator(vec![
            HalfSpace { normal: vec![1.0, 0.0], bound: -1.0 },
            HalfSpace { normal: vec![-1.0, 0.0], bound: -1.0 },
        ]);
        assert!(matches!(empty, Err(Error::Improper(_))));
        assert!(matches!(ConvexFn::h(1).unwrap().eval(&PairedPoint::zeros(2)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn indicator_and_fenchel_sum() {
        let f = sample_fn();
        assert_eq!(f.eval(&p(0.0, 4.0)).unwrap(), f64::INFINITY);
        assert_abs_diff_eq!(f.eval(&p(-2.0, 2.0)).unwrap(), 4.0);
        let fs = ConvexFn::fenchel_sum(PolyhedralFn::abs()).unwrap();
        assert_abs_diff_eq!(fs.eval(&p(2.0, 0.5)).unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(fs.eval(&p(2.0, 1.5)).unwrap(), f64::INFINITY);
        assert_abs_diff_eq!(fs.lowered().eval(&p(2.0, 0.5).to_dvector()).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn json_roundtrip() {
        let f = sample_fn().shift(&p(0.5, -0.5)).unwrap().scale(2.0).unwrap();
        let text = serde_json::to_string(&f).unwrap();
        let back: ConvexFn = serde_json::from_str(&text).unwrap();
        let z = p(0.3, 0.7);
        assert_eq!(f.eval(&z).unwrap(), back.eval(&z).unwrap());
        let h: ConvexFn = serde_json::from_str(r#"{"kind":"h","dim":1}"#).unwrap();
        assert_eq!(h.eval(&p(3.0, 4.0)).unwrap(), 12.5);
        let bad = serde_json::from_str::<ConvexFn>(r#"{"kind":"scaled","alpha":-1,"inner":{"kind":"h","dim":1}}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn dom_projection_examples() {
        let h = ConvexFn::h(1).unwrap();
        let (x, xs) = h.dom_projections().summarize().unwrap();
        assert!(x.whole_space && xs.whole_space);

        let ind = ConvexFn::indicator(vec![HalfSpace { normal: vec![-1.0, 0.0], bound: 0.0 }]).unwrap();
        let f = h.plus(&ind).unwrap();
        let (x, xs) = f.dom_projections().summarize().unwrap();
        assert_eq!(x.bounds[0], (0.0, f64::INFINITY));
        assert!(!x.whole_space && xs.whole_space);

        let fs = ConvexFn::fenchel_sum(PolyhedralFn::abs()).unwrap();
        let (x, xs) = fs.dom_projections().summarize().unwrap();
        assert!(x.whole_space);
        assert_abs_diff_eq!(xs.bounds[0].0, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(xs.bounds[0].1, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lowered_matches_direct_eval() {
        let f = sample_fn().shift(&p(0.25, 1.0)).unwrap().scale(0.5).unwrap();
        for z in [p(0.0, 0.0), p(1.0, -1.0), p(-0.7, 0.2), p(0.1, 0.9)] {
            let a = f.eval(&z).unwrap();
            let b = f.lowered().eval(&z.to_dvector()).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    fn pt2() -> impl Strategy<Value = PairedPoint> {
        (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(a, b)| p(a, b))
    }

    proptest! {
        #[test]
        fn shift_identity(z in pt2(), w in pt2()) {
            let f = sample_fn();
            let fz = f.shift(&z).unwrap();
            let lhs = fz.eval(&w).unwrap() - coupling(&w);
            let zw = z.add(&w).unwrap();
            let rhs = f.eval(&zw).unwrap() - coupling(&zw);
            if lhs.is_finite() || rhs.is_finite() {
                prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
            }
        }

        #[test]
        fn scale_identity(w in pt2(), alpha in 0.1..5.0f64) {
            let f = sample_fn();
            let fa = f.scale(alpha).unwrap();
            let lhs = fa.eval(&w).unwrap() - coupling(&w);
            let wa = w.scale_dual(1.0 / alpha);
            let rhs = alpha * (f.eval(&wa).unwrap() - coupling(&wa));
            if lhs.is_finite() || rhs.is_finite() {
                prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
            }
        }

        #[test]
        fn shift_composes(a in pt2(), b in pt2(), w in pt2()) {
            let f = sample_fn();
            let two = f.shift(&a).unwrap().shift(&b).unwrap();
            let one = f.shift(&a.add(&b).unwrap()).unwrap();
            let (u, v) = (two.eval(&w).unwrap(), one.eval(&w).unwrap());
            prop_assert!(u == v || (u - v).abs() <= 1e-9 * (1.0 + v.abs()));
        }

        #[test]
        fn h_dominates_coupling(z in pt2()) {
            let v = ConvexFn::h(1).unwrap().eval(&z).unwrap();
            prop_assert!(v >= coupling(&z) - 1e-12 && v >= -coupling(&z) - 1e-12);
        }

        #[test]
        fn trivial_transforms(w in pt2()) {
            let f = sample_fn();
            let a = f.eval(&w).unwrap();
            let s = f.shift(&PairedPoint::zeros(1)).unwrap().eval(&w).unwrap();
            prop_assert!(a == s || (a - s).abs() <= 1e-12 * (1.0 + a.abs()));
            let b = f.scale(1.0).unwrap().eval(&w).unwrap();
            prop_assert!(a == b || (a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}
