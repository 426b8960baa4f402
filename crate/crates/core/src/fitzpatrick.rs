//! Finite operator graphs, Fitzpatrick functions, monotonicity predicates
//! and extraction of equality sets `M_f = [f = c]`.

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::Serialize;

use crate::convex_fn::{AffinePiece, ConvexFn};
use crate::error::{Error, Result};
use crate::paired::{cartesian, coupling, PairedPoint, Region};

/// Points closer than this are duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;
/// Largest grid (or Minty parameter grid) scanned by [`equality_set`].
pub const GRID_SCAN_CAP: usize = 250_000;

/// A finite sample of an operator, identified with its graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorGraph {
    points: Vec<PairedPoint>,
    pub label: String,
}

fn near(a: &PairedPoint, b: &PairedPoint, tol: f64) -> bool {
    a.distance(b).map(|d| d <= tol).unwrap_or(false)
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (p, q) in a.iter().zip(b) {
        match p.total_cmp(q) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

impl OperatorGraph {
    pub fn new(points: Vec<PairedPoint>, label: impl Into<String>) -> Result<Self> {
        let first = points.first().ok_or_else(|| Error::InvalidParameter("operator graph is empty".into()))?;
        let n = first.dim();
        for (i, p) in points.iter().enumerate() {
            p.ensure_dim(n)?;
            if points[..i].iter().any(|q| near(p, q, DUPLICATE_TOL)) {
                return Err(Error::InvalidParameter(format!("duplicate graph point at row {i}")));
            }
        }
        Ok(OperatorGraph { points, label: label.into() })
    }

    /// Like [`OperatorGraph::new`] but silently drops duplicates.
    pub fn dedup(points: Vec<PairedPoint>, label: impl Into<String>) -> Result<Self> {
        let mut kept: Vec<PairedPoint> = Vec::with_capacity(points.len());
        for p in points {
            if !kept.iter().any(|q| near(&p, q, DUPLICATE_TOL)) {
                kept.push(p);
            }
        }
        OperatorGraph::new(kept, label)
    }

    /// Graph of `x -> a x` sampled at the given abscissae.
    pub fn linear_1d(slope: f64, xs: &[f64]) -> Result<Self> {
        OperatorGraph::new(xs.iter().map(|x| PairedPoint::scalar(*x, slope * x)).collect(), format!("{slope}x"))
    }

    pub fn points(&self) -> &[PairedPoint] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Parses the `dim=n` header followed by `x_1..x_n,xs_1..xs_n` rows.
    pub fn from_csv(text: &str, label: impl Into<String>) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("empty graph file".into()))?;
        let n: usize = header
            .strip_prefix("dim=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Parse(format!("expected `dim=n` header, got `{header}`")))?;
        let mut points = Vec::new();
        for (row, line) in lines.enumerate() {
            let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::Parse(format!("row {}: {e}", row + 1)))?;
            if vals.len() != 2 * n {
                return Err(Error::Parse(format!("row {}: expected {} values, got {}", row + 1, 2 * n, vals.len())));
            }
            points.push(PairedPoint::from_concat(&vals)?);
        }
        OperatorGraph::new(points, label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("dim={}\n", self.dim());
        for p in &self.points {
            let row: Vec<String> = p.to_concat().iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// `phi_M(z) = max_{w in M} <z, w> - c(w)`, one affine piece per point.
pub fn fitzpatrick_fn(m: &OperatorGraph) -> Result<ConvexFn> {
    let pieces = m
        .points()
        .iter()
        .map(|w| AffinePiece {
            // the pairing functional of w is the dot product with ŵ
            slope: PairedPoint::new(w.xs().to_vec(), w.x().to_vec()).expect("same dims"),
            offset: w.coupling(),
        })
        .collect();
    ConvexFn::max_affine(pieces)
}

/// A violating pair `(i, j)` with `c(z_i - z_j) < -tol`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityWitness {
    pub i: usize,
    pub j: usize,
    pub coupling: f64,
}

pub fn is_monotone(m: &OperatorGraph, tol: f64) -> (bool, Option<MonotonicityWitness>) {
    let pts = m.points();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let c = coupling(&pts[i].sub(&pts[j]).expect("same dim"));
            if c < -tol {
                return (false, Some(MonotonicityWitness { i, j, coupling: c }));
            }
        }
    }
    (true, None)
}

pub fn is_monotonically_related(z: &PairedPoint, m: &OperatorGraph, tol: f64) -> Result<bool> {
    for w in m.points() {
        if coupling(&z.sub(w)?) < -tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `c(z1 - z2)` for two `eps`-enlarged points, checked against `-2(e1 + e2)`.
pub fn approx_monotonicity_bound(
    f: &ConvexFn,
    z1: &PairedPoint,
    e1: f64,
    z2: &PairedPoint,
    e2: f64,
    tol: f64,
) -> Result<f64> {
    if e1 < 0.0 || e2 < 0.0 {
        return Err(Error::InvalidParameter("enlargements must be nonnegative".into()));
    }
    for (name, z, e) in [("z1", z1, e1), ("z2", z2, e2)] {
        let gap = f.eval(z)? - z.coupling();
        if gap > e + tol {
            return Err(Error::Precondition(format!("{name}: f - c = {gap:e} exceeds its enlargement {e:e}")));
        }
    }
    let c = coupling(&z1.sub(z2)?);
    if c < -2.0 * (e1 + e2) - tol {
        return Err(Error::Breach(format!("c(z1 - z2) = {c:e} is below -2(e1 + e2) = {:e}", -2.0 * (e1 + e2))));
    }
    Ok(c)
}

#[derive(Debug, Clone, Serialize)]
pub struct EqualitySet {
    pub points: Vec<PairedPoint>,
    pub residuals: Vec<f64>,
    pub tol: f64,
}

impl EqualitySet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// Distance from `z` to the nearest extracted point.
    pub fn distance_to(&self, z: &PairedPoint) -> f64 {
        self.points.iter().filter_map(|p| p.distance(z).ok()).fold(f64::INFINITY, f64::min)
    }
}

/// `|f(z) - c(z)|`, infinite outside the domain.
pub fn residual(f: &ConvexFn, z: &PairedPoint) -> Result<f64> {
    let v = f.eval(z)?;
    Ok(if v.is_finite() { (v - z.coupling()).abs() } else { f64::INFINITY })
}

/// The exact duality-zero step from `z`: `prox_f(z + ẑ)`, a point of `M_f`
/// whenever `f` is a strong representative.
pub fn minty_step(f: &ConvexFn, z: &PairedPoint) -> Result<PairedPoint> {
    let s: Vec<f64> = z.x().iter().zip(z.xs()).map(|(a, b)| a + b).collect();
    let mut target = s.clone();
    target.extend_from_slice(&s);
    let v = f.lowered().prox(&DVector::from_vec(target))?;
    PairedPoint::from_dvector(&v)
}

/// Grid points of `region` with `|f - c| <= tol`, refined by one exact
/// duality-zero step when that lowers the residual, together with the
/// Minty points `prox_f((s, s))` for `s` on the matching parameter grid.
pub fn equality_set(f: &ConvexFn, region: &Region, resolution: usize, tol: f64) -> Result<EqualitySet> {
    let n = f.dim();
    if region.dim() != 2 * n {
        return Err(Error::DimensionMismatch { expected: 2 * n, found: region.dim() });
    }
    let resolution = resolution.max(2);
    if region.grid_len(resolution) > GRID_SCAN_CAP {
        return Err(Error::InvalidParameter(format!(
            "grid of {} points exceeds the scan cap {GRID_SCAN_CAP}; lower the resolution",
            region.grid_len(resolution)
        )));
    }
    let mut found: Vec<(PairedPoint, f64)> = Vec::new();
    for v in region.grid(resolution) {
        let z = PairedPoint::from_concat(&v)?;
        let r = residual(f, &z)?;
        if r > tol {
            continue;
        }
        let mut best = (z.clone(), r);
        if r > tol / 10.0 {
            if let Ok(zr) = minty_step(f, &z) {
                let rr = residual(f, &zr)?;
                if rr < r && region.contains(&zr.to_concat(), tol) {
                    best = (zr, rr);
                }
            }
        }
        found.push(best);
    }
    // parameter grid for the Minty points
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let sub = Region::new(vec![(
                region.bounds[i].0 + region.bounds[n + i].0,
                region.bounds[i].1 + region.bounds[n + i].1,
            )])
            .expect("ordered bounds");
            sub.axis(0, 2 * resolution - 1)
        })
        .collect();
    let params: usize = axes.iter().map(Vec::len).product();
    if params <= GRID_SCAN_CAP {
        for s in cartesian(&axes) {
            let mut t = s.clone();
            t.extend_from_slice(&s);
            let v = match f.lowered().prox(&DVector::from_vec(t)) {
                Ok(v) => v,
                Err(Error::Unbounded(_)) => continue,
                Err(e) => return Err(e),
            };
            let z = PairedPoint::from_dvector(&v)?;
            if !region.contains(&z.to_concat(), tol) {
                continue;
            }
            let r = residual(f, &z)?;
            if r <= tol {
                found.push((z, r));
            }
        }
    }
    found.sort_by(|a, b| lex_cmp(&a.0.to_concat(), &b.0.to_concat()));
    let mut points: Vec<PairedPoint> = Vec::new();
    let mut residuals = Vec::new();
    for (z, r) in found {
        if points.last().map_or(false, |q| near(q, &z, DUPLICATE_TOL)) {
            continue;
        }
        points.push(z);
        residuals.push(r);
    }
    Ok(EqualitySet { points, residuals, tol })
}
