//! Pointwise Fenchel conjugation and the square transform `f^□(z) = f*(ẑ)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::convex_fn::{ConvexFn, Node};
use crate::error::{Error, Result};
use crate::lowered::Minimum;
use crate::paired::{DualPoint, PairedPoint};
use crate::qp::{Outcome, QuadProgram};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateEngine {
    pub tolerance: f64,
    /// Cap on cutting planes when nesting two conjugations.
    pub max_pieces: usize,
}

impl Default for ConjugateEngine {
    fn default() -> Self {
        ConjugateEngine { tolerance: 1e-9, max_pieces: 60 }
    }
}

/// `f*(d)` with a maximiser when the supremum is attained.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateValue {
    pub value: f64,
    pub argmax: Option<DVector<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BiconjugatePoint {
    pub z: PairedPoint,
    pub f: f64,
    /// Best lower estimate of `f**(z)` from exact conjugate evaluations.
    pub f_biconj: f64,
    /// Width of the cutting-plane bracket around `f**(z)`.
    pub bracket: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BiconjugateReport {
    pub passed: bool,
    pub tol: f64,
    pub max_deviation: f64,
    pub worst: Option<PairedPoint>,
    pub points: Vec<BiconjugatePoint>,
}

impl ConjugateEngine {
    pub fn new(tolerance: f64, max_pieces: usize) -> Result<Self> {
        if !(tolerance > 0.0 && tolerance.is_finite()) {
            return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tolerance}")));
        }
        Ok(ConjugateEngine { tolerance, max_pieces: max_pieces.max(1) })
    }

    pub fn conjugate_at(&self, f: &ConvexFn, d: &DualPoint) -> Result<f64> {
        d.ensure_dim(f.dim())?;
        Ok(self.conjugate_concat(f, &d.to_dvector())?.value)
    }

    /// `f^□(z) = f*(ẑ)`.
    pub fn square_conjugate_at(&self, f: &ConvexFn, z: &PairedPoint) -> Result<f64> {
        self.conjugate_at(f, &z.hat())
    }

    /// `sup_z <z, d> - f(z)` for a concatenated dual vector `d`.
    pub fn conjugate_concat(&self, f: &ConvexFn, d: &DVector<f64>) -> Result<ConjugateValue> {
        if d.len() != 2 * f.dim() {
            return Err(Error::DimensionMismatch { expected: 2 * f.dim(), found: d.len() });
        }
        if let Some(v) = closed_form(f, d) {
            return Ok(v);
        }
        let l = f.lowered().add_linear_primary(&(-d));
        match l.minimize()? {
            Minimum::Attained { v, value } => {
                Ok(ConjugateValue { value: -value, argmax: Some(v.rows(0, 2 * f.dim()).into_owned()) })
            }
            Minimum::Unbounded => Ok(ConjugateValue { value: f64::INFINITY, argmax: None }),
            Minimum::Infeasible => Err(Error::Improper("conjugate of a function with empty domain".into())),
        }
    }

    /// Checks `f** = f` at finite sample points by nesting two conjugations.
    ///
    /// The first dual point is a subgradient at `z`; further dual points come
    /// from cutting planes on a max-affine under-approximation of `f*`.
    pub fn biconjugate_check(&self, f: &ConvexFn, sample: &[PairedPoint], tol: f64) -> Result<BiconjugateReport> {
        let mut points = Vec::new();
        let mut worst: Option<(f64, PairedPoint)> = None;
        for z in sample {
            let fz = f.eval(z)?;
            if !fz.is_finite() {
                continue;
            }
            let (lower, bracket) = self.biconjugate_at(f, z)?;
            let deviation = (fz - lower).abs();
            if worst.as_ref().map_or(true, |(w, _)| deviation > *w) {
                worst = Some((deviation, z.clone()));
            }
            points.push(BiconjugatePoint { z: z.clone(), f: fz, f_biconj: lower, bracket, deviation });
        }
        let max_deviation = worst.as_ref().map_or(0.0, |w| w.0);
        Ok(BiconjugateReport {
            passed: max_deviation <= tol,
            tol,
            max_deviation,
            worst: if max_deviation > tol { worst.map(|w| w.1) } else { None },
            points,
        })
    }

    /// Lower estimate of `f**(z)` and the remaining cutting-plane bracket.
    fn biconjugate_at(&self, f: &ConvexFn, z: &PairedPoint) -> Result<(f64, f64)> {
        let zv = z.to_dvector();
        let p = zv.len();
        let start = f.subgradient(z)?.unwrap_or_else(|| DVector::zeros(p));
        let first = self.conjugate_concat(f, &start)?;
        if !first.value.is_finite() {
            return Err(Error::Unresolved("no finite dual point to start the biconjugate".into()));
        }
        let mut best = zv.dot(&start) - first.value;
        let radius = 10.0 * (1.0 + start.amax());
        let mut cuts: Vec<(DVector<f64>, f64, DVector<f64>)> = Vec::new();
        if let Some(a) = first.argmax.clone() {
            cuts.push((start.clone(), first.value, a));
        }
        let mut upper = f64::INFINITY;
        for _ in 0..self.max_pieces {
            if cuts.is_empty() {
                break;
            }
            // maximise d.z - t over the cut model inside a box around `start`
            let k = cuts.len();
            let mut c = DVector::zeros(p + 1);
            c.rows_mut(0, p).copy_from(&(-&zv));
            c[p] = 1.0;
            let mut a = DMatrix::zeros(k + 2 * p, p + 1);
            let mut b = DVector::zeros(k + 2 * p);
            for (j, (dj, vj, zj)) in cuts.iter().enumerate() {
                a.view_mut((j, 0), (1, p)).copy_from(&zj.transpose());
                a[(j, p)] = -1.0;
                b[j] = zj.dot(dj) - vj;
            }
            for i in 0..p {
                a[(k + 2 * i, i)] = 1.0;
                b[k + 2 * i] = start[i] + radius;
                a[(k + 2 * i + 1, i)] = -1.0;
                b[k + 2 * i + 1] = radius - start[i];
            }
            let sol = match QuadProgram::linear_program(c).with_ineq(a, b).solve()? {
                Outcome::Optimal(s) => s,
                _ => break,
            };
            let d = sol.x.rows(0, p).into_owned();
            upper = zv.dot(&d) - sol.x[p];
            if upper - best <= self.tolerance * (1.0 + best.abs()) {
                break;
            }
            let mut trial = d;
            let mut val = self.conjugate_concat(f, &trial)?;
            let mut halvings = 0;
            while !val.value.is_finite() && halvings < 40 {
                trial = (&trial + &start) * 0.5;
                val = self.conjugate_concat(f, &trial)?;
                halvings += 1;
            }
            if !val.value.is_finite() {
                break;
            }
            best = best.max(zv.dot(&trial) - val.value);
            match val.argmax {
                Some(a) => cuts.push((trial, val.value, a)),
                None => break,
            }
        }
        Ok((best, (upper - best).max(0.0)))
    }
}

/// Closed forms for `h` and positive-definite quadratics.
fn closed_form(f: &ConvexFn, d: &DVector<f64>) -> Option<ConjugateValue> {
    match f.node() {
        Node::H { .. } => Some(ConjugateValue { value: 0.5 * d.norm_squared(), argmax: Some(d.clone()) }),
        Node::Quadratic { .. } => {
            let l = f.lowered();
            let chol = l.quad.clone().cholesky()?;
            let scale = 1.0 + l.quad.amax();
            let diag_min = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            if diag_min * diag_min <= 1e-9 * scale {
                return None;
            }
            let g = d - &l.lin;
            let z = chol.solve(&g);
            Some(ConjugateValue { value: 0.5 * g.dot(&z) - l.constant, argmax: Some(z) })
        }
        _ => None,
    }
}
