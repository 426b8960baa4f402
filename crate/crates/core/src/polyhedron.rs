//! Polyhedra given as linear images of constraint systems,
//! `P = { S v : A v <= b, E v = e }`, with support, affine-hull and
//! relative-interior queries answered by linear programs.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lowered::Lowered;
use crate::qp::{Outcome, QuadProgram};

/// Rank and extent tolerance for affine-hull detection.
pub const HULL_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct LiftedPolyhedron {
    pub select: DMatrix<f64>,
    pub ineq: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub eq: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
}

#[derive(Debug, Clone)]
pub enum Support {
    Finite { value: f64, point: DVector<f64> },
    Unbounded { point: DVector<f64>, direction: DVector<f64> },
    Empty,
}

#[derive(Debug, Clone, Serialize)]
pub struct AffineHull {
    pub point: Vec<f64>,
    /// Orthonormal directions spanning the hull, one per entry.
    pub basis: Vec<Vec<f64>>,
}

impl AffineHull {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Distance from `y` to the hull.
    pub fn distance(&self, y: &DVector<f64>) -> f64 {
        let mut r = y - DVector::from_column_slice(&self.point);
        for b in &self.basis {
            let b = DVector::from_column_slice(b);
            let t = r.dot(&b);
            r -= b * t;
        }
        r.norm()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RiVerdict {
    pub in_set: bool,
    pub in_affine_hull: bool,
    pub hull_dim: usize,
    /// Smallest step that stays inside along every hull direction (capped at 1).
    pub margin: f64,
    pub in_relative_interior: bool,
}

fn orth_complement(basis: &[DVector<f64>], d: usize) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for i in 0..d {
        let mut e = DVector::zeros(d);
        e[i] = 1.0;
        for b in basis.iter().chain(out.iter()) {
            let t = e.dot(b);
            e -= b * t;
        }
        let n = e.norm();
        if n > 1e-8 {
            out.push(e / n);
        }
    }
    out
}

fn gram_push(basis: &mut Vec<DVector<f64>>, v: &DVector<f64>) -> bool {
    let mut r = v.clone();
    for _ in 0..2 {
        for b in basis.iter() {
            let t = r.dot(b);
            r -= b * t;
        }
    }
    let n = r.norm();
    if n <= HULL_TOL * (1.0 + v.norm()) {
        return false;
    }
    basis.push(r / n);
    true
}

impl LiftedPolyhedron {
    pub fn new(
        select: DMatrix<f64>,
        ineq: DMatrix<f64>,
        ineq_rhs: DVector<f64>,
        eq: DMatrix<f64>,
        eq_rhs: DVector<f64>,
    ) -> Self {
        LiftedPolyhedron { select, ineq, ineq_rhs, eq, eq_rhs }
    }

    /// Image of the effective domain of a lowered function under `select`.
    pub fn from_domain(l: &Lowered, select: DMatrix<f64>) -> Self {
        LiftedPolyhedron::new(select, l.ineq.clone(), l.ineq_rhs.clone(), l.eq.clone(), l.eq_rhs.clone())
    }

    /// Convex hull of finitely many points.
    pub fn hull_of(points: &[DVector<f64>]) -> Result<Self> {
        let k = points.len();
        if k == 0 {
            return Err(Error::InvalidParameter("hull of an empty point set".into()));
        }
        let d = points[0].len();
        let select = DMatrix::from_fn(d, k, |i, j| points[j][i]);
        let ineq = -DMatrix::identity(k, k);
        let eq = DMatrix::from_element(1, k, 1.0);
        Ok(LiftedPolyhedron::new(select, ineq, DVector::zeros(k), eq, DVector::from_element(1, 1.0)))
    }

    pub fn dim(&self) -> usize {
        self.select.nrows()
    }

    fn nv(&self) -> usize {
        self.select.ncols()
    }

    /// `sup { dir . y : y in P }`.
    pub fn support(&self, dir: &DVector<f64>) -> Result<Support> {
        let c = -(self.select.transpose() * dir);
        let lp = QuadProgram::linear_program(c)
            .with_ineq(self.ineq.clone(), self.ineq_rhs.clone())
            .with_eq(self.eq.clone(), self.eq_rhs.clone());
        Ok(match lp.solve()? {
            Outcome::Optimal(s) => {
                let point = &self.select * &s.x;
                Support::Finite { value: dir.dot(&point), point }
            }
            Outcome::Unbounded { point, ray } => {
                Support::Unbounded { point: &self.select * point, direction: &self.select * ray }
            }
            Outcome::Infeasible { .. } => Support::Empty,
        })
    }

    pub fn feasible_point(&self) -> Result<Option<DVector<f64>>> {
        Ok(match self.support(&DVector::zeros(self.dim()))? {
            Support::Finite { point, .. } | Support::Unbounded { point, .. } => Some(point),
            Support::Empty => None,
        })
    }

    pub fn contains(&self, y: &DVector<f64>) -> Result<bool> {
        let eq = {
            let mut m = DMatrix::zeros(self.eq.nrows() + self.dim(), self.nv());
            m.view_mut((0, 0), (self.eq.nrows(), self.nv())).copy_from(&self.eq);
            m.view_mut((self.eq.nrows(), 0), (self.dim(), self.nv())).copy_from(&self.select);
            m
        };
        let rhs = DVector::from_iterator(self.eq.nrows() + self.dim(), self.eq_rhs.iter().chain(y.iter()).copied());
        let lp = QuadProgram::linear_program(DVector::zeros(self.nv()))
            .with_ineq(self.ineq.clone(), self.ineq_rhs.clone())
            .with_eq(eq, rhs);
        Ok(!matches!(lp.solve()?, Outcome::Infeasible { .. }))
    }

    /// Per-coordinate bounds of `P` (infinite when unbounded).
    pub fn bounds(&self) -> Result<Vec<(f64, f64)>> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d);
        for i in 0..d {
            let mut e = DVector::zeros(d);
            e[i] = 1.0;
            let hi = match self.support(&e)? {
                Support::Finite { value, .. } => value,
                Support::Unbounded { .. } => f64::INFINITY,
                Support::Empty => return Err(Error::Improper("empty polyhedron".into())),
            };
            let lo = match self.support(&(-e))? {
                Support::Finite { value, .. } => -value,
                Support::Unbounded { .. } => f64::NEG_INFINITY,
                Support::Empty => return Err(Error::Improper("empty polyhedron".into())),
            };
            out.push((lo, hi));
        }
        Ok(out)
    }

    pub fn is_whole_space(&self) -> Result<bool> {
        // nonempty with every direction recessive
        Ok(self.feasible_point()?.is_some() && self.recession_is_everything()?)
    }

    fn recession_is_everything(&self) -> Result<bool> {
        // the recession cone is { S d : A d <= 0, E d = 0 }
        let rec = LiftedPolyhedron::new(
            self.select.clone(),
            self.ineq.clone(),
            DVector::zeros(self.ineq.nrows()),
            self.eq.clone(),
            DVector::zeros(self.eq.nrows()),
        );
        let d = self.dim();
        for i in 0..d {
            for s in [1.0, -1.0] {
                let mut e = DVector::zeros(d);
                e[i] = s;
                if !rec.contains(&e)? {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Affine hull by repeated support queries along complement directions.
    pub fn affine_hull(&self) -> Result<Option<AffineHull>> {
        let p0 = match self.feasible_point()? {
            Some(p) => p,
            None => return Ok(None),
        };
        let d = self.dim();
        let mut basis: Vec<DVector<f64>> = Vec::new();
        'grow: loop {
            for dir in orth_complement(&basis, d) {
                let base = dir.dot(&p0);
                for sign in [1.0, -1.0] {
                    let u = &dir * sign;
                    let scale = 1.0 + base.abs();
                    match self.support(&u)? {
                        Support::Finite { value, point } => {
                            if value - sign * base > HULL_TOL * scale && gram_push(&mut basis, &(point - &p0)) {
                                continue 'grow;
                            }
                        }
                        Support::Unbounded { direction, point } => {
                            if gram_push(&mut basis, &direction) || gram_push(&mut basis, &(point - &p0)) {
                                continue 'grow;
                            }
                        }
                        Support::Empty => return Ok(None),
                    }
                }
            }
            break;
        }
        Ok(Some(AffineHull {
            point: p0.iter().copied().collect(),
            basis: basis.iter().map(|b| b.iter().copied().collect()).collect(),
        }))
    }

    /// Whether `y0` lies in the relative interior of `P`.
    pub fn ri_contains(&self, y0: &DVector<f64>, tol: f64) -> Result<RiVerdict> {
        let hull = match self.affine_hull()? {
            Some(h) => h,
            None => {
                return Ok(RiVerdict {
                    in_set: false,
                    in_affine_hull: false,
                    hull_dim: 0,
                    margin: 0.0,
                    in_relative_interior: false,
                })
            }
        };
        let in_set = self.contains(y0)?;
        let in_aff = hull.distance(y0) <= tol.max(HULL_TOL) * (1.0 + y0.norm());
        let mut margin = 1.0_f64;
        if in_set && in_aff {
            for b in &hull.basis {
                let b = DVector::from_column_slice(b);
                for sign in [1.0, -1.0] {
                    margin = margin.min(self.max_step(y0, &(&b * sign))?);
                }
            }
        } else {
            margin = 0.0;
        }
        Ok(RiVerdict {
            in_set,
            in_affine_hull: in_aff,
            hull_dim: hull.dim(),
            margin,
            in_relative_interior: in_set && in_aff && margin > tol,
        })
    }

    /// `max { t <= 1 : y0 + t u in P }`, zero when `y0` itself is outside.
    fn max_step(&self, y0: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        let nv = self.nv();
        let d = self.dim();
        let n = nv + 1;
        let mut c = DVector::zeros(n);
        c[nv] = -1.0;
        let mut a = DMatrix::zeros(self.ineq.nrows() + 1, n);
        a.view_mut((0, 0), (self.ineq.nrows(), nv)).copy_from(&self.ineq);
        a[(self.ineq.nrows(), nv)] = 1.0;
        let b = DVector::from_iterator(self.ineq.nrows() + 1, self.ineq_rhs.iter().copied().chain([1.0]));
        let mut e = DMatrix::zeros(self.eq.nrows() + d, n);
        e.view_mut((0, 0), (self.eq.nrows(), nv)).copy_from(&self.eq);
        e.view_mut((self.eq.nrows(), 0), (d, nv)).copy_from(&self.select);
        for i in 0..d {
            e[(self.eq.nrows() + i, nv)] = -u[i];
        }
        let rhs = DVector::from_iterator(self.eq.nrows() + d, self.eq_rhs.iter().chain(y0.iter()).copied());
        let lp = QuadProgram::linear_program(c).with_ineq(a, b).with_eq(e, rhs);
        Ok(match lp.solve()? {
            Outcome::Optimal(s) => s.x[nv].max(0.0),
            Outcome::Unbounded { .. } => 1.0,
            Outcome::Infeasible { .. } => 0.0,
        })
    }
}

/// Relative-interior test for the convex hull of a point cloud, phrased
/// as: `y0` is in the affine hull and no nonzero hull direction `u`
/// has `u . (p - y0) <= 0` for every point.
pub fn ri_of_points(points: &[DVector<f64>], y0: &DVector<f64>, tol: f64) -> Result<RiVerdict> {
    if points.is_empty() {
        return Ok(RiVerdict {
            in_set: false,
            in_affine_hull: false,
            hull_dim: 0,
            margin: 0.0,
            in_relative_interior: false,
        });
    }
    let d = y0.len();
    let k = points.len();
    let centred = DMatrix::from_fn(d, k, |i, j| points[j][i] - points[0][i]);
    let scale = 1.0 + points.iter().map(|p| p.amax()).fold(0.0, f64::max);
    let svd = centred.clone().svd(true, false);
    let u = svd.u.as_ref().expect("requested");
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > HULL_TOL * scale * (k as f64).sqrt() {
            basis.push(u.column(i).into_owned());
        }
    }
    let mut r = y0 - &points[0];
    for b in &basis {
        let t = r.dot(b);
        r -= b * t;
    }
    let in_aff = r.norm() <= tol.max(HULL_TOL) * scale;
    if !in_aff {
        return Ok(RiVerdict {
            in_set: false,
            in_affine_hull: false,
            hull_dim: basis.len(),
            margin: 0.0,
            in_relative_interior: false,
        });
    }
    let kdim = basis.len();
    if kdim == 0 {
        return Ok(RiVerdict {
            in_set: true,
            in_affine_hull: true,
            hull_dim: 0,
            margin: 1.0,
            in_relative_interior: true,
        });
    }
    // coordinates of the shifted points in the hull basis
    let bmat = DMatrix::from_fn(d, kdim, |i, j| basis[j][i]);
    let coords = DMatrix::from_fn(k, kdim, |p, j| bmat.column(j).dot(&(&points[p] - y0)));
    let mut rows = DMatrix::zeros(k + 2 * kdim, kdim);
    rows.view_mut((0, 0), (k, kdim)).copy_from(&coords);
    let mut rhs = DVector::zeros(k + 2 * kdim);
    for j in 0..kdim {
        rows[(k + 2 * j, j)] = 1.0;
        rows[(k + 2 * j + 1, j)] = -1.0;
        rhs[k + 2 * j] = 1.0;
        rhs[k + 2 * j + 1] = 1.0;
    }
    // `margin` is the largest coordinate a separating direction can reach
    let mut worst = 0.0_f64;
    for j in 0..kdim {
        for sign in [1.0, -1.0] {
            let mut c = DVector::zeros(kdim);
            c[j] = -sign;
            let lp = QuadProgram::linear_program(c).with_ineq(rows.clone(), rhs.clone());
            if let Outcome::Optimal(s) = lp.solve()? {
                worst = worst.max(sign * s.x[j]);
            }
        }
    }
    let separated = worst > tol.max(HULL_TOL);
    // membership in the hull itself: a separating direction with a strict
    // gap on every point means y0 is outside, otherwise on the boundary
    let in_set = !separated || {
        let lp_hull = LiftedPolyhedron::hull_of(points)?;
        lp_hull.contains(y0)?
    };
    Ok(RiVerdict {
        in_set,
        in_affine_hull: true,
        hull_dim: kdim,
        margin: if separated { 0.0 } else { 1.0 },
        in_relative_interior: !separated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interval(lo: f64, hi: f64) -> LiftedPolyhedron {
        LiftedPolyhedron::new(
            DMatrix::identity(1, 1),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![hi, -lo]),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
        )
    }

    #[test]
    fn interval_relative_interior() {
        let zero = DVector::zeros(1);
        assert!(!interval(0.0, 1.0).ri_contains(&zero, 1e-9).unwrap().in_relative_interior);
        assert!(interval(-1.0, 1.0).ri_contains(&zero, 1e-9).unwrap().in_relative_interior);
        let point = interval(0.0, 0.0).ri_contains(&zero, 1e-9).unwrap();
        assert_eq!(point.hull_dim, 0);
        assert!(point.in_relative_interior);
    }

    #[test]
    fn whole_line_and_bounds() {
        let free = LiftedPolyhedron::new(
            DMatrix::identity(1, 1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
        );
        assert!(free.is_whole_space().unwrap());
        assert!(free.ri_contains(&DVector::zeros(1), 1e-9).unwrap().in_relative_interior);
        let b = interval(-2.0, 3.0).bounds().unwrap();
        assert!((b[0].0 + 2.0).abs() < 1e-12 && (b[0].1 - 3.0).abs() < 1e-12);
        assert!(!interval(-2.0, 3.0).is_whole_space().unwrap());
    }

    #[test]
    fn segment_in_plane() {
        // {(t, t) : t in [-1, 1]} through the origin
        let p = LiftedPolyhedron::new(
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
        );
        let v = p.ri_contains(&DVector::zeros(2), 1e-9).unwrap();
        assert_eq!(v.hull_dim, 1);
        assert!(v.in_relative_interior);
        let off = p.ri_contains(&DVector::from_vec(vec![0.5, 0.0]), 1e-9).unwrap();
        assert!(!off.in_affine_hull);
    }

    #[test]
    fn point_cloud_hulls() {
        let pts: Vec<DVector<f64>> = [-1.0, 0.5, 2.0].iter().map(|t| DVector::from_vec(vec![*t])).collect();
        assert!(ri_of_points(&pts, &DVector::zeros(1), 1e-9).unwrap().in_relative_interior);
        let pos: Vec<DVector<f64>> = [0.0, 0.5, 1.0].iter().map(|t| DVector::from_vec(vec![*t])).collect();
        let v = ri_of_points(&pos, &DVector::zeros(1), 1e-9).unwrap();
        assert!(v.in_set && !v.in_relative_interior);
        let square: Vec<DVector<f64>> =
            [(-1.0, -1.0), (1.0, -1.0), (0.0, 1.0)].iter().map(|(a, b)| DVector::from_vec(vec![*a, *b])).collect();
        assert!(ri_of_points(&square, &DVector::zeros(2), 1e-9).unwrap().in_relative_interior);
    }
}
