//! Operator calculus: partial inf-projection, the composition transform
//! `F_A`, and the sum representative, with constraint-qualification checks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conjugate::ConjugateEngine;
use crate::convex_fn::{ConvexFn, Node};
use crate::error::{Error, Result};
use crate::fitzpatrick::{equality_set, fitzpatrick_fn, OperatorGraph};
use crate::paired::{DualPoint, PairedPoint, Region};
use crate::polyhedron::{ri_of_points, LiftedPolyhedron, RiVerdict, HULL_TOL};
use crate::qp::{Outcome, QuadProgram};

/// A linear map `A: R^n -> R^m`, stored as an `m x n` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMap", into = "RawMap")]
pub struct LinearMap {
    matrix: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMap {
    matrix: Vec<Vec<f64>>,
}

impl TryFrom<RawMap> for LinearMap {
    type Error = Error;
    fn try_from(raw: RawMap) -> Result<Self> {
        LinearMap::from_rows(&raw.matrix)
    }
}

impl From<LinearMap> for RawMap {
    fn from(a: LinearMap) -> Self {
        RawMap { matrix: (0..a.rows()).map(|i| a.matrix.row(i).iter().copied().collect()).collect() }
    }
}

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::InvalidParameter("linear map needs at least one row and column".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear map entry"));
        }
        Ok(LinearMap { matrix })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidParameter("ragged matrix rows".into()));
        }
        LinearMap::new(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        LinearMap { matrix: DMatrix::identity(n, n) }
    }

    pub fn zero(m: usize, n: usize) -> Self {
        LinearMap { matrix: DMatrix::zeros(m, n) }
    }

    /// Output dimension `m`.
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Input dimension `n`.
    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn transpose(&self) -> LinearMap {
        LinearMap { matrix: self.matrix.transpose() }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows()).map(|i| (0..self.cols()).map(|j| self.matrix[(i, j)] * x[j]).sum()).collect()
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        (0..self.cols()).map(|j| (0..self.rows()).map(|i| self.matrix[(i, j)] * y[i]).sum()).collect()
    }
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// Selector of primary coordinates `[start, start + len)` among `nv` variables.
fn selector(start: usize, len: usize, nv: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(len, nv);
    for i in 0..len {
        s[(i, start + i)] = 1.0;
    }
    s
}

/// `Pr_Y(dom f)` for `f` on `(X x Y) x (X* x Y*)` with `dim X = n`.
pub fn y_projection(f: &ConvexFn, m: usize) -> LiftedPolyhedron {
    let l = f.lowered();
    let n = f.dim() - m;
    LiftedPolyhedron::from_domain(&l, selector(n, m, l.nv()))
}

/// `Pr_Y(dom g) - A Pr_X(dom f)`.
pub fn sum_domain_difference(f: &ConvexFn, g: &ConvexFn, a: &LinearMap) -> LiftedPolyhedron {
    let lf = f.lowered();
    let lg = g.lowered();
    let sf = -(a.matrix() * selector(0, f.dim(), lf.nv()));
    let sg = selector(0, g.dim(), lg.nv());
    let mut select = DMatrix::zeros(g.dim(), lf.nv() + lg.nv());
    select.view_mut((0, 0), sf.shape()).copy_from(&sf);
    select.view_mut((0, lf.nv()), sg.shape()).copy_from(&sg);
    LiftedPolyhedron::new(
        select,
        block_diag(&lf.ineq, &lg.ineq),
        stack(&lf.ineq_rhs, &lg.ineq_rhs),
        block_diag(&lf.eq, &lg.eq),
        stack(&lf.eq_rhs, &lg.eq_rhs),
    )
}

/// Constraint-qualification verdict for a projection or sum node.
pub(crate) fn node_cq(f: &ConvexFn) -> Result<RiVerdict> {
    match f.node() {
        Node::PartialProjection { inner, y_dim } => {
            y_projection(inner, *y_dim).ri_contains(&DVector::zeros(*y_dim), HULL_TOL)
        }
        Node::SumRepresentative { f, g, map } => {
            sum_domain_difference(f, g, map).ri_contains(&DVector::zeros(map.rows()), HULL_TOL)
        }
        _ => Err(Error::Precondition("constraint qualification only applies to projection and sum nodes".into())),
    }
}

/// A function on `(X x Y) x (X* x Y*)` with `dim X = n`, `dim Y = m`.
#[derive(Debug, Clone)]
pub struct ProductFn {
    f: ConvexFn,
    n: usize,
    m: usize,
}

impl ProductFn {
    pub fn new(f: ConvexFn, n: usize, m: usize) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidParameter("both blocks need positive dimension".into()));
        }
        if f.dim() != n + m {
            return Err(Error::DimensionMismatch { expected: n + m, found: f.dim() });
        }
        Ok(ProductFn { f, n, m })
    }

    /// `phi(x, y, x*, y*) = f(x, x*) + g(y, y*)`.
    pub fn separable(f: &ConvexFn, g: &ConvexFn) -> Result<Self> {
        ProductFn::new(f.direct_sum(g)?, f.dim(), g.dim())
    }

    pub fn function(&self) -> &ConvexFn {
        &self.f
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }
}

/// `g(x, x*) = inf_{y*} f(x, 0, x*, y*)`; refuses when the qualification fails.
pub fn partial_projection(pf: &ProductFn) -> Result<ConvexFn> {
    ConvexFn::from_node(Node::PartialProjection { inner: Box::new(pf.f.clone()), y_dim: pf.m }).map_err(|e| match e {
        Error::ConstraintQualification(msg) => {
            Error::ConstraintQualification(format!("{msg}; see the cq report for Pr_Y(dom f)"))
        }
        other => other,
    })
}

/// Value of a finite-dimensional min formula together with its optimiser.
#[derive(Debug, Clone, Serialize)]
pub struct MinFormula {
    pub value: f64,
    pub argmin: Option<Vec<f64>>,
    pub attained: bool,
    /// Upper minus lower bound when the cutting-plane loop stopped.
    pub gap: f64,
    pub iterations: usize,
}

const MIN_BOX: f64 = 1e3;
const MIN_ITERS: usize = 300;

/// Kelley's cutting planes for a convex function given by value and
/// subgradient, over the box `[-MIN_BOX, MIN_BOX]^m`.
fn kelley_min(
    m: usize,
    tol: f64,
    mut oracle: impl FnMut(&DVector<f64>) -> Result<(f64, Option<DVector<f64>>)>,
) -> Result<MinFormula> {
    let mut start = None;
    let mut candidates = vec![DVector::zeros(m)];
    if m <= 2 {
        let axis: Vec<f64> = (-4..=4).map(|k| k as f64 * 2.5).collect();
        let mut idx = vec![0usize; m];
        loop {
            candidates.push(DVector::from_iterator(m, idx.iter().map(|&i| axis[i])));
            let mut k = 0;
            while k < m && idx[k] + 1 == axis.len() {
                idx[k] = 0;
                k += 1;
            }
            if k == m {
                break;
            }
            idx[k] += 1;
        }
    }
    for c in candidates {
        let (v, g) = oracle(&c)?;
        if v.is_finite() {
            start = Some((c, v, g));
            break;
        }
    }
    let Some((v0, f0, g0)) = start else {
        return Ok(MinFormula {
            value: f64::INFINITY,
            argmin: None,
            attained: false,
            gap: f64::INFINITY,
            iterations: 0,
        });
    };
    let mut cuts: Vec<(DVector<f64>, f64, DVector<f64>)> = Vec::new();
    let mut best = (v0.clone(), f0);
    if let Some(g) = g0 {
        cuts.push((v0, f0, g));
    }
    let mut lower = f64::NEG_INFINITY;
    let mut it = 0;
    while it < MIN_ITERS {
        it += 1;
        if cuts.is_empty() {
            break;
        }
        // variables (v, t): minimise t above every cut inside the box
        let k = cuts.len();
        let mut a = DMatrix::zeros(k + 2 * m, m + 1);
        let mut b = DVector::zeros(k + 2 * m);
        for (r, (vk, fk, gk)) in cuts.iter().enumerate() {
            for j in 0..m {
                a[(r, j)] = gk[j];
            }
            a[(r, m)] = -1.0;
            b[r] = gk.dot(vk) - fk;
        }
        for j in 0..m {
            a[(k + 2 * j, j)] = 1.0;
            b[k + 2 * j] = MIN_BOX;
            a[(k + 2 * j + 1, j)] = -1.0;
            b[k + 2 * j + 1] = MIN_BOX;
        }
        let mut c = DVector::zeros(m + 1);
        c[m] = 1.0;
        let sol = match QuadProgram::linear_program(c).with_ineq(a, b).solve()? {
            Outcome::Optimal(s) => s,
            _ => break,
        };
        lower = sol.x[m];
        if best.1 - lower <= tol * (1.0 + best.1.abs()) {
            break;
        }
        let mut v = sol.x.rows(0, m).into_owned();
        let mut probe = oracle(&v)?;
        let mut back = 0;
        while !probe.0.is_finite() && back < 60 {
            v = &best.0 + (&v - &best.0) * 0.5;
            probe = oracle(&v)?;
            back += 1;
        }
        let (fv, gv) = probe;
        if !fv.is_finite() {
            break;
        }
        if fv < best.1 {
            best = (v.clone(), fv);
        }
        match gv {
            Some(g) => cuts.push((v, fv, g)),
            None => break,
        }
    }
    let gap = (best.1 - lower).max(0.0);
    Ok(MinFormula {
        value: best.1,
        argmin: Some(best.0.iter().copied().collect()),
        attained: true,
        gap,
        iterations: it,
    })
}

/// `g*(u*, u**) = min_{v*} f*(u*, v*, u**, 0)` for `g = partial_projection(f)`.
pub fn projection_conjugate_min(pf: &ProductFn, u: &DualPoint, engine: &ConjugateEngine) -> Result<MinFormula> {
    u.ensure_dim(pf.n)?;
    let (n, m) = (pf.n, pf.m);
    kelley_min(m, engine.tolerance, |vs| {
        let mut d = DVector::zeros(2 * (n + m));
        d.rows_mut(0, n).copy_from_slice(u.us());
        d.rows_mut(n, m).copy_from(vs);
        d.rows_mut(n + m, n).copy_from_slice(u.uss());
        let cv = engine.conjugate_concat(&pf.f, &d)?;
        Ok((cv.value, cv.argmax.map(|z| z.rows(n, m).into_owned())))
    })
}

/// `k^□(x, x*) = min_{v*} f*(x* - A' v*, x) + g*(v*, A x)`.
pub fn sum_square_min(
    f: &ConvexFn,
    g: &ConvexFn,
    a: &LinearMap,
    z: &PairedPoint,
    engine: &ConjugateEngine,
) -> Result<MinFormula> {
    let (n, m) = (f.dim(), g.dim());
    z.ensure_dim(n)?;
    let ax = a.apply(z.x());
    kelley_min(m, engine.tolerance, |vs| {
        let atv = a.apply_transpose(vs.as_slice());
        let df: Vec<f64> = z.xs().iter().zip(&atv).map(|(s, t)| s - t).chain(z.x().iter().copied()).collect();
        let dg: Vec<f64> = vs.iter().copied().chain(ax.iter().copied()).collect();
        let cf = engine.conjugate_concat(f, &DVector::from_vec(df))?;
        if !cf.value.is_finite() {
            return Ok((f64::INFINITY, None));
        }
        let cg = engine.conjugate_concat(g, &DVector::from_vec(dg))?;
        let value = cf.value + cg.value;
        let grad = match (cf.argmax, cg.argmax) {
            (Some(zf), Some(zg)) => {
                let xf: Vec<f64> = zf.rows(0, n).iter().copied().collect();
                Some(DVector::from_vec(a.apply(&xf)) * -1.0 + zg.rows(0, m))
            }
            _ => None,
        };
        Ok((value, grad))
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CqReport {
    pub y_dim: usize,
    pub verdict: RiVerdict,
    pub passed: bool,
}

/// Whether `0` lies in the relative interior of `Pr_Y(dom f)`.
pub fn cq_check(pf: &ProductFn) -> Result<CqReport> {
    let verdict = y_projection(&pf.f, pf.m).ri_contains(&DVector::zeros(pf.m), HULL_TOL)?;
    Ok(CqReport { y_dim: pf.m, passed: verdict.in_relative_interior, verdict })
}

/// The three relative-interior computations for `0`: from `dom f`, from
/// `conv Pr_Y(M_f)` on a sample, and from `dom phi_{M_f}` of that sample.
#[derive(Debug, Clone, Serialize)]
pub struct CqChain {
    pub from_domain: RiVerdict,
    pub from_sampled_mf: Option<RiVerdict>,
    pub from_fitzpatrick: Option<RiVerdict>,
    pub sample_size: usize,
    /// The fitzpatrick function of a finite sample is finite everywhere,
    /// so its leg is always the whole space.
    pub fitzpatrick_leg_degenerate: bool,
    pub agree: bool,
}

pub fn cq_chain(pf: &ProductFn, region: &Region, resolution: usize, tol: f64) -> Result<CqChain> {
    let from_domain = cq_check(pf)?.verdict;
    let es = equality_set(&pf.f, region, resolution, tol)?;
    let (n, m) = (pf.n, pf.m);
    let ys: Vec<DVector<f64>> = es.points.iter().map(|p| DVector::from_column_slice(&p.x()[n..n + m])).collect();
    let zero = DVector::zeros(m);
    let from_sampled_mf = if ys.is_empty() { None } else { Some(ri_of_points(&ys, &zero, HULL_TOL.max(tol))?) };
    let from_fitzpatrick = if es.points.is_empty() {
        None
    } else {
        let graph = OperatorGraph::dedup(es.points.clone(), "sampled M_f")?;
        let phi = fitzpatrick_fn(&graph)?;
        Some(y_projection(&phi, m).ri_contains(&zero, HULL_TOL)?)
    };
    let agree =
        from_sampled_mf.as_ref().map(|v| v.in_relative_interior == from_domain.in_relative_interior).unwrap_or(false);
    Ok(CqChain {
        from_domain,
        from_sampled_mf,
        from_fitzpatrick,
        sample_size: es.len(),
        fitzpatrick_leg_degenerate: true,
        agree,
    })
}

/// `(a, b, a*, b*) -> (a, b - A a, a* + A' b*, b*)`, so that `(x* - A' y*, y*)`
/// lies in `F(x, A x + y)` for every returned point.
pub fn compose_fa(graph: &OperatorGraph, a: &LinearMap) -> Result<OperatorGraph> {
    let (k, m) = (a.cols(), a.rows());
    if graph.dim() != k + m {
        return Err(Error::DimensionMismatch { expected: k + m, found: graph.dim() });
    }
    let pts = graph
        .points()
        .iter()
        .map(|p| {
            let (x, xs) = (p.x(), p.xs());
            let aa = a.apply(&x[..k]);
            let atb = a.apply_transpose(&xs[k..]);
            let mut nx = x[..k].to_vec();
            nx.extend(x[k..].iter().zip(&aa).map(|(b, t)| b - t));
            let mut nxs: Vec<f64> = xs[..k].iter().zip(&atb).map(|(s, t)| s + t).collect();
            nxs.extend_from_slice(&xs[k..]);
            PairedPoint::new(nx, nxs)
        })
        .collect::<Result<Vec<_>>>()?;
    OperatorGraph::new(pts, format!("{}_A", graph.label))
}

/// `f_A(x, y, x*, y*) = f(x, y + A x, x* - A' y*, y*)`.
pub fn compose_fn(f: &ConvexFn, a: &LinearMap) -> Result<ConvexFn> {
    ConvexFn::from_node(Node::Composed { inner: Box::new(f.clone()), map: a.clone() })
}

/// `k(x, x*) = inf_{y*} f(x, x* - A' y*) + g(A x, y*)`.
pub fn sum_representative(f: &ConvexFn, g: &ConvexFn, a: &LinearMap) -> Result<ConvexFn> {
    ConvexFn::from_node(Node::SumRepresentative { f: Box::new(f.clone()), g: Box::new(g.clone()), map: a.clone() })
}

/// The same `k` built as `partial_projection(compose(f (+) g, A))`.
pub fn sum_via_product(f: &ConvexFn, g: &ConvexFn, a: &LinearMap) -> Result<ConvexFn> {
    let phi = f.direct_sum(g)?;
    partial_projection(&ProductFn::new(compose_fn(&phi, a)?, f.dim(), g.dim())?)
}

/// `{(x, u* + A' v*) : (x, u*) in Mf, (A x, v*) in Mg}` for `x` on the grid.
pub fn sum_operator_graph(
    mf: &[PairedPoint],
    mg: &[PairedPoint],
    a: &LinearMap,
    x_grid: &[Vec<f64>],
    tol: f64,
) -> Result<Option<OperatorGraph>> {
    let close = |p: &[f64], q: &[f64]| p.iter().zip(q).all(|(s, t)| (s - t).abs() <= tol);
    let mut out = Vec::new();
    for x in x_grid {
        if x.len() != a.cols() {
            return Err(Error::DimensionMismatch { expected: a.cols(), found: x.len() });
        }
        let ax = a.apply(x);
        for pf in mf.iter().filter(|p| close(p.x(), x)) {
            for pg in mg.iter().filter(|p| close(p.x(), &ax)) {
                let atv = a.apply_transpose(pg.xs());
                let s: Vec<f64> = pf.xs().iter().zip(&atv).map(|(u, v)| u + v).collect();
                out.push(PairedPoint::new(x.clone(), s)?);
            }
        }
    }
    if out.is_empty() {
        return Ok(None);
    }
    Ok(Some(OperatorGraph::dedup(out, "S + A'TA")?))
}

#[derive(Debug, Clone, Serialize)]
pub struct HullComparison {
    /// Coordinate ranges of the sampled `M_f` projection.
    pub from_mf: Vec<(f64, f64)>,
    /// Coordinate ranges of the domain projection, clipped to the box.
    pub from_domain: Vec<(f64, f64)>,
    pub hausdorff: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DomainRangeReport {
    pub samples: usize,
    pub dom: HullComparison,
    pub range: HullComparison,
    pub tol: f64,
    pub passed: bool,
}

/// Compares the hulls of `Pr_X M_f`, `Pr_{X*} M_f` with `Pr_X dom f`,
/// `Pr_{X*} dom f` inside `region`, coordinate by coordinate.
pub fn domain_range_hulls(f: &ConvexFn, region: &Region, resolution: usize, tol: f64) -> Result<DomainRangeReport> {
    let n = f.dim();
    let es = equality_set(f, region, resolution, 1e-7)?;
    let (px, pxs) = f.dom_projections().summarize()?;
    let compare = |offset: usize, dom: &[(f64, f64)]| -> HullComparison {
        let mut from_mf = vec![(f64::INFINITY, f64::NEG_INFINITY); n];
        for p in &es.points {
            let v = p.to_concat();
            for i in 0..n {
                from_mf[i].0 = from_mf[i].0.min(v[offset + i]);
                from_mf[i].1 = from_mf[i].1.max(v[offset + i]);
            }
        }
        let from_domain: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let (lo, hi) = region.bounds[offset + i];
                (dom[i].0.max(lo), dom[i].1.min(hi))
            })
            .collect();
        let hausdorff =
            from_mf.iter().zip(&from_domain).map(|(a, b)| (a.0 - b.0).abs().max((a.1 - b.1).abs())).fold(0.0, f64::max);
        HullComparison { from_mf, from_domain, hausdorff }
    };
    let dom = compare(0, &px.bounds);
    let range = compare(n, &pxs.bounds);
    let passed = !es.is_empty() && dom.hausdorff <= tol && range.hausdorff <= tol;
    Ok(DomainRangeReport { samples: es.len(), dom, range, tol, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex_fn::{HalfSpace, LinearPiece, PolyhedralFn};
    use crate::fitzpatrick::residual;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p(x: f64, xs: f64) -> PairedPoint {
        PairedPoint::scalar(x, xs)
    }

    fn poly(pieces: &[(f64, f64)]) -> PolyhedralFn {
        PolyhedralFn::new(pieces.iter().map(|&(a, b)| LinearPiece { slope: vec![a], offset: b }).collect(), vec![])
            .unwrap()
    }

    /// Indicator of `y in [lo, hi]` on `Y x Y*`.
    fn y_box(lo: f64, hi: f64) -> ConvexFn {
        ConvexFn::indicator(vec![
            HalfSpace { normal: vec![1.0, 0.0], bound: hi },
            HalfSpace { normal: vec![-1.0, 0.0], bound: -lo },
        ])
        .unwrap()
    }

    #[test]
    fn linear_map_serde() {
        let a = LinearMap::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, r#"{"matrix":[[1.0,2.0]]}"#);
        let b: LinearMap = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
        assert!(serde_json::from_str::<LinearMap>(r#"{"matrix":[[1.0],[2.0,3.0]]}"#).is_err());
        assert_eq!(a.apply(&[1.0, 1.0]), vec![3.0]);
        assert_eq!(a.apply_transpose(&[2.0]), vec![2.0, 4.0]);
    }

    #[test]
    fn projection_examples() {
        let fx = ConvexFn::fenchel_sum(PolyhedralFn::abs()).unwrap();
        let h = ConvexFn::h(1).unwrap();
        let g = partial_projection(&ProductFn::separable(&fx, &h).unwrap()).unwrap();
        let zero = partial_projection(&ProductFn::separable(&fx, &ConvexFn::zero(1).unwrap()).unwrap()).unwrap();
        for z in [p(0.5, 1.0), p(-2.0, 0.3), p(0.0, 0.0), p(1.0, -1.0)] {
            let want = fx.eval(&z).unwrap();
            assert_abs_diff_eq!(g.eval(&z).unwrap(), want, epsilon = 1e-9);
            assert_abs_diff_eq!(zero.eval(&z).unwrap(), want, epsilon = 1e-9);
        }
        assert_eq!(g.eval(&p(0.5, 2.0)).unwrap(), f64::INFINITY);
    }

    #[test]
    fn projection_graph_extraction() {
        let fx = ConvexFn::fenchel_sum(poly(&[(1.0, 0.0), (-2.0, 1.0)])).unwrap();
        let pf = ProductFn::separable(&fx, &ConvexFn::h(1).unwrap()).unwrap();
        let g = partial_projection(&pf).unwrap();
        let region = Region::cube(2, -2.0, 2.0).unwrap();
        let mg = equality_set(&g, &region, 21, 1e-7).unwrap();
        let mf = equality_set(&fx, &region, 21, 1e-7).unwrap();
        assert!(!mg.is_empty());
        for z in &mg.points {
            assert!(residual(&fx, z).unwrap() <= 1e-6);
            // (x, 0, x*, 0) is on M_phi
            let lifted = PairedPoint::new(vec![z.x()[0], 0.0], vec![z.xs()[0], 0.0]).unwrap();
            assert!(residual(pf.function(), &lifted).unwrap() <= 1e-6);
        }
        for z in &mf.points {
            assert!(residual(&g, z).unwrap() <= 1e-6);
        }
    }

    #[test]
    fn projection_conjugate_attained() {
        let e = ConjugateEngine::default();
        let fx = ConvexFn::fenchel_sum(poly(&[(1.0, 0.0), (-1.0, 0.5)])).unwrap();
        let q = ConvexFn::quadratic(vec![vec![2.0, 0.5], vec![0.5, 1.0]], vec![0.1, 0.0], 0.0).unwrap();
        let pf = ProductFn::separable(&fx, &q).unwrap();
        let g = partial_projection(&pf).unwrap();
        for u in [DualPoint::scalar(0.3, 0.2), DualPoint::scalar(-1.0, 0.0), DualPoint::scalar(0.5, -0.9)] {
            let direct = e.conjugate_at(&g, &u).unwrap();
            let mf = projection_conjugate_min(&pf, &u, &e).unwrap();
            assert!(mf.attained && mf.argmin.is_some());
            assert_abs_diff_eq!(mf.value, direct, epsilon = 1e-6 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn cq_examples() {
        let fx = ConvexFn::h(1).unwrap();
        let whole = ProductFn::separable(&fx, &ConvexFn::zero(1).unwrap()).unwrap();
        assert!(cq_check(&whole).unwrap().passed);
        let boundary = ProductFn::separable(&fx, &y_box(0.0, 1.0)).unwrap();
        let r = cq_check(&boundary).unwrap();
        assert!(!r.passed && r.verdict.in_set);
        assert!(matches!(partial_projection(&boundary), Err(Error::ConstraintQualification(_))));
        let point = ProductFn::separable(&fx, &y_box(0.0, 0.0)).unwrap();
        let r = cq_check(&point).unwrap();
        assert!(r.passed);
        assert_eq!(r.verdict.hull_dim, 0);
        let inside = ProductFn::separable(&fx, &y_box(-1.0, 1.0)).unwrap();
        assert!(cq_check(&inside).unwrap().passed);
    }

    #[test]
    fn cq_chain_agrees() {
        let fx = ConvexFn::h(1).unwrap();
        let region = Region::cube(4, -2.0, 2.0).unwrap();
        for (lo, hi, want) in [(-1.0, 1.0, true), (0.0, 1.0, false)] {
            let gy = ConvexFn::fenchel_sum(
                PolyhedralFn::new(
                    vec![LinearPiece { slope: vec![0.0], offset: 0.0 }],
                    vec![HalfSpace { normal: vec![1.0], bound: hi }, HalfSpace { normal: vec![-1.0], bound: -lo }],
                )
                .unwrap(),
            )
            .unwrap();
            let pf = ProductFn::separable(&fx, &gy).unwrap();
            let chain = cq_chain(&pf, &region, 9, 1e-7).unwrap();
            assert_eq!(chain.from_domain.in_relative_interior, want);
            assert!(chain.agree, "{chain:?}");
            assert!(chain.from_fitzpatrick.unwrap().in_relative_interior);
        }
    }

    #[test]
    fn compose_examples() {
        let g = OperatorGraph::new(vec![PairedPoint::new(vec![1.0, 2.0], vec![3.0, 4.0]).unwrap()], "F").unwrap();
        let zero = compose_fa(&g, &LinearMap::zero(1, 1)).unwrap();
        assert_eq!(zero.points(), g.points());
        let id = compose_fa(&g, &LinearMap::identity(1)).unwrap();
        assert_eq!(id.points()[0], PairedPoint::new(vec![1.0, 1.0], vec![7.0, 4.0]).unwrap());
        // the pulled-back point satisfies the defining membership
        let q = &id.points()[0];
        let (x, y, xs, ys) = (q.x()[0], q.x()[1], q.xs()[0], q.xs()[1]);
        assert_eq!((x, y + x, xs - ys, ys), (1.0, 2.0, 3.0, 4.0));
    }

    #[test]
    fn composed_equality_sets_match() {
        let q = ConvexFn::quadratic(
            vec![
                vec![1.0, 0.0, -1.0, 0.0],
                vec![0.0, 2.0, 0.0, -1.0],
                vec![-1.0, 0.0, 1.0, 0.0],
                vec![0.0, -1.0, 0.0, 0.5],
            ],
            vec![0.0; 4],
            0.0,
        )
        .unwrap();
        let f = q.plus(&ConvexFn::h(2).unwrap().scale(1.0).unwrap()).unwrap();
        let a = LinearMap::from_rows(&[vec![0.5]]).unwrap();
        let fa = compose_fn(&f, &a).unwrap();
        let region = Region::cube(4, -1.0, 1.0).unwrap();
        let mf = equality_set(&f, &region, 5, 1e-7).unwrap();
        assert!(!mf.is_empty());
        let pulled = compose_fa(&OperatorGraph::dedup(mf.points.clone(), "M_f").unwrap(), &a).unwrap();
        for z in pulled.points() {
            assert!(residual(&fa, z).unwrap() <= 1e-7);
        }
    }

    #[test]
    fn sum_identity_twice() {
        let h = ConvexFn::h(1).unwrap();
        let k = sum_representative(&h, &h, &LinearMap::identity(1)).unwrap();
        for (x, xs) in [(1.0, 2.0), (0.3, -0.4), (-2.0, 1.0)] {
            assert_abs_diff_eq!(k.eval(&p(x, xs)).unwrap(), x * x + 0.25 * xs * xs, epsilon = 1e-9);
        }
        assert!(residual(&k, &p(1.0, 2.0)).unwrap() < 1e-9);
        assert!(residual(&k, &p(1.0, 1.0)).unwrap() > 0.1);
        let e = ConjugateEngine::default();
        for z in [p(1.0, 2.0), p(0.5, -0.25)] {
            let mf = sum_square_min(&h, &h, &LinearMap::identity(1), &z, &e).unwrap();
            assert!(mf.attained);
            assert_abs_diff_eq!(mf.value, e.square_conjugate_at(&k, &z).unwrap(), epsilon = 1e-6);
        }
        // on M_k the square conjugate meets k
        let on = p(0.7, 1.4);
        let mf = sum_square_min(&h, &h, &LinearMap::identity(1), &on, &e).unwrap();
        assert_abs_diff_eq!(mf.value, k.eval(&on).unwrap(), epsilon = 1e-6);
    }

    #[test]
    fn sum_with_zero_map() {
        let f = ConvexFn::fenchel_sum(PolyhedralFn::abs()).unwrap();
        let h = ConvexFn::h(1).unwrap();
        let k = sum_representative(&f, &h, &LinearMap::zero(1, 1)).unwrap();
        for z in [p(0.5, 1.0), p(0.0, 0.3), p(-1.0, -1.0)] {
            assert_abs_diff_eq!(k.eval(&z).unwrap(), f.eval(&z).unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn sum_refuses_without_cq() {
        let f = ConvexFn::fenchel_sum(
            PolyhedralFn::new(
                vec![LinearPiece { slope: vec![0.0], offset: 0.0 }],
                vec![HalfSpace { normal: vec![1.0], bound: 0.0 }],
            )
            .unwrap(),
        )
        .unwrap();
        let g = ConvexFn::fenchel_sum(
            PolyhedralFn::new(
                vec![LinearPiece { slope: vec![0.0], offset: 0.0 }],
                vec![HalfSpace { normal: vec![-1.0], bound: 0.0 }],
            )
            .unwrap(),
        )
        .unwrap();
        // dom g - dom f = [0, inf): 0 on the boundary
        assert!(matches!(sum_representative(&f, &g, &LinearMap::identity(1)), Err(Error::ConstraintQualification(_))));
    }

    #[test]
    fn operator_graph_sums() {
        let id: Vec<PairedPoint> = [-1.0, 0.0, 1.0].iter().map(|&x| p(x, x)).collect();
        let grid: Vec<Vec<f64>> = [-1.0, 0.0, 1.0].iter().map(|&x| vec![x]).collect();
        let s = sum_operator_graph(&id, &id, &LinearMap::identity(1), &grid, 1e-12).unwrap().unwrap();
        assert_eq!(s.points(), &[p(-1.0, -2.0), p(0.0, 0.0), p(1.0, 2.0)]);

        let seg: Vec<PairedPoint> = (0..=4).map(|k| p(0.0, -1.0 + 0.5 * k as f64)).collect();
        let s = sum_operator_graph(&seg, &seg, &LinearMap::identity(1), &[vec![0.0]], 1e-12).unwrap().unwrap();
        let ys: Vec<f64> = s.points().iter().map(|q| q.xs()[0]).collect();
        assert_eq!(ys.first(), Some(&-2.0));
        assert_eq!(ys.last(), Some(&2.0));
        assert_eq!(ys.len(), 9);

        let left = vec![p(-1.0, 0.0)];
        let right = vec![p(1.0, 0.0)];
        assert!(sum_operator_graph(&left, &right, &LinearMap::identity(1), &[vec![-1.0], vec![1.0]], 1e-9)
            .unwrap()
            .is_none());
    }

    #[test]
    fn sum_rule_oracle() {
        let phi = PolyhedralFn::abs();
        let psi = poly(&[(-0.5, 0.0), (1.0, 1.0)]);
        let f = ConvexFn::fenchel_sum(phi.clone()).unwrap();
        let g = ConvexFn::fenchel_sum(psi.clone()).unwrap();
        let a = LinearMap::identity(1);
        let k = sum_representative(&f, &g, &a).unwrap();
        let exact = |x: f64| {
            let (a0, a1) = phi.subdifferential_1d(x).unwrap();
            let (b0, b1) = psi.subdifferential_1d(x).unwrap();
            (a0 + b0, a1 + b1)
        };
        let region = Region::new(vec![(-2.0, 2.0), (-4.0, 4.0)]).unwrap();
        let mk = equality_set(&k, &region, 41, 1e-7).unwrap();
        assert!(mk.len() > 20);
        let mut worst: f64 = 0.0;
        for z in &mk.points {
            let (lo, hi) = exact(z.x()[0]);
            worst = worst.max((lo - z.xs()[0]).max(z.xs()[0] - hi).max(0.0));
        }
        assert!(worst <= 1e-6, "{worst}");

        let mut xs: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.1).collect();
        xs.push(2.0 / 3.0);
        let sample = |fun: &PolyhedralFn| -> Vec<PairedPoint> {
            xs.iter()
                .flat_map(|&x| {
                    let (lo, hi) = fun.subdifferential_1d(x).unwrap();
                    (0..=4).map(move |j| p(x, lo + (hi - lo) * j as f64 / 4.0))
                })
                .collect()
        };
        let grid: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let oracle = sum_operator_graph(&sample(&phi), &sample(&psi), &a, &grid, 1e-12).unwrap().unwrap();
        for z in oracle.points() {
            assert!(residual(&k, z).unwrap() <= 1e-6, "{z:?}");
        }
    }

    #[test]
    fn sum_matches_product_path() {
        let f = ConvexFn::fenchel_sum(poly(&[(1.0, 0.0), (-1.0, 0.0), (2.0, 1.0)])).unwrap();
        let g = ConvexFn::h(1).unwrap();
        for a in [LinearMap::identity(1), LinearMap::from_rows(&[vec![-0.5]]).unwrap()] {
            let k = sum_representative(&f, &g, &a).unwrap();
            let k2 = sum_via_product(&f, &g, &a).unwrap();
            for z in [p(0.2, 0.4), p(-1.0, 0.0), p(1.5, 3.0), p(0.0, -5.0)] {
                let (u, v) = (k.eval(&z).unwrap(), k2.eval(&z).unwrap());
                assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()) || (u.is_infinite() && v.is_infinite()));
            }
        }
    }

    #[test]
    fn domain_range_examples() {
        let h = ConvexFn::h(1).unwrap();
        let r = domain_range_hulls(&h, &Region::cube(2, -1.0, 1.0).unwrap(), 11, 1e-6).unwrap();
        assert!(r.passed, "{r:?}");

        let f = ConvexFn::fenchel_sum(PolyhedralFn::abs()).unwrap();
        let r = domain_range_hulls(&f, &Region::cube(2, -2.0, 2.0).unwrap(), 21, 1e-6).unwrap();
        assert!(r.passed, "{r:?}");
        assert_abs_diff_eq!(r.range.from_mf[0].0, -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.range.from_mf[0].1, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.range.from_domain[0].0, -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.range.from_domain[0].1, 1.0, epsilon = 1e-9);

        let ind = ConvexFn::fenchel_sum(
            PolyhedralFn::new(
                vec![LinearPiece { slope: vec![0.0], offset: 0.0 }],
                vec![HalfSpace { normal: vec![1.0], bound: 2.0 }, HalfSpace { normal: vec![-1.0], bound: 0.0 }],
            )
            .unwrap(),
        )
        .unwrap();
        let r = domain_range_hulls(&ind, &Region::cube(2, -3.0, 3.0).unwrap(), 31, 1e-6).unwrap();
        assert!(r.passed, "{r:?}");
        assert_abs_diff_eq!(r.dom.from_mf[0].0, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.dom.from_mf[0].1, 2.0, epsilon = 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn compose_round_trip(a in -3.0..3.0f64, x in -2.0..2.0f64, y in -2.0..2.0f64, s in -2.0..2.0f64, t in -2.0..2.0f64) {
            let map = LinearMap::from_rows(&[vec![a]]).unwrap();
            let g = OperatorGraph::new(vec![PairedPoint::new(vec![x, y], vec![s, t]).unwrap()], "F").unwrap();
            let q = compose_fa(&g, &map).unwrap().points()[0].clone();
            prop_assert!((q.x()[1] + a * q.x()[0] - y).abs() < 1e-12);
            prop_assert!((q.xs()[0] - a * q.xs()[1] - s).abs() < 1e-12);
            // coupling is preserved
            prop_assert!((q.coupling() - (x * s + y * t)).abs() < 1e-9);
        }

        #[test]
        fn sum_of_h_closed_form(x in -3.0..3.0f64, xs in -3.0..3.0f64, a in 0.2..2.0f64) {
            let h = ConvexFn::h(1).unwrap();
            let k = sum_representative(&h, &h, &LinearMap::from_rows(&[vec![a]]).unwrap()).unwrap();
            // inf_y 1/2 x^2 + 1/2 (x* - a y)^2 + 1/2 a^2 x^2 + 1/2 y^2
            let want = 0.5 * x * x * (1.0 + a * a) + 0.5 * xs * xs / (1.0 + a * a);
            prop_assert!((k.eval(&p(x, xs)).unwrap() - want).abs() < 1e-8 * (1.0 + want));
        }
    }
}
