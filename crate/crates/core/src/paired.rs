//! Geometry of the paired space `Z = R^n x R^n`.
//!
//! A point `z = (x, x*)` carries a primal and a dual block of equal length.
//! The coupling `c(z) = <x, x*>` and the symmetric pairing
//! `<z1, z2> = <x1, x2*> + <x2, x1*>` are the two bilinear objects every
//! other module is built on. The dual space `Z* = R^n x R^n` is paired with
//! `Z` by the ordinary dot product of the concatenated vectors.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance for comparisons.
pub const DEFAULT_TOL: f64 = 1e-9;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn check_block(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|t| t.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// A point `(x, x*)` of the paired space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPair", into = "RawPair")]
pub struct PairedPoint {
    x: Vec<f64>,
    xs: Vec<f64>,
}

/// A point `(u*, u**)` of the dual space `Z*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDual", into = "RawDual")]
pub struct DualPoint {
    us: Vec<f64>,
    uss: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawPair {
    x: Vec<f64>,
    xs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawDual {
    us: Vec<f64>,
    uss: Vec<f64>,
}

impl TryFrom<RawPair> for PairedPoint {
    type Error = Error;
    fn try_from(r: RawPair) -> Result<Self> {
        PairedPoint::new(r.x, r.xs)
    }
}

impl From<PairedPoint> for RawPair {
    fn from(p: PairedPoint) -> Self {
        RawPair { x: p.x, xs: p.xs }
    }
}

impl TryFrom<RawDual> for DualPoint {
    type Error = Error;
    fn try_from(r: RawDual) -> Result<Self> {
        DualPoint::new(r.us, r.uss)
    }
}

impl From<DualPoint> for RawDual {
    fn from(p: DualPoint) -> Self {
        RawDual { us: p.us, uss: p.uss }
    }
}

impl PairedPoint {
    pub fn new(x: Vec<f64>, xs: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidParameter("paired point of dimension 0".into()));
        }
        if x.len() != xs.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), found: xs.len() });
        }
        check_block(&x, "primal block")?;
        check_block(&xs, "dual block")?;
        Ok(PairedPoint { x, xs })
    }

    /// One-dimensional convenience constructor.
    pub fn scalar(x: f64, xs: f64) -> Self {
        PairedPoint::new(vec![x], vec![xs]).expect("finite scalar pair")
    }

    pub fn zeros(n: usize) -> Self {
        PairedPoint { x: vec![0.0; n], xs: vec![0.0; n] }
    }

    /// Splits a concatenated vector `(x, x*)` of even length.
    pub fn from_concat(v: &[f64]) -> Result<Self> {
        if v.len() % 2 != 0 {
            return Err(Error::InvalidParameter(format!("odd concatenated length {}", v.len())));
        }
        let n = v.len() / 2;
        PairedPoint::new(v[..n].to_vec(), v[n..].to_vec())
    }

    pub fn from_dvector(v: &DVector<f64>) -> Result<Self> {
        PairedPoint::from_concat(v.as_slice())
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn to_concat(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        v.extend_from_slice(&self.xs);
        v
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_vec(self.to_concat())
    }

    pub fn ensure_dim(&self, n: usize) -> Result<()> {
        if self.dim() == n {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: n, found: self.dim() })
        }
    }

    /// `c(z) = <x, x*>`.
    pub fn coupling(&self) -> f64 {
        dot(&self.x, &self.xs)
    }

    /// Euclidean norm of the concatenated vector.
    pub fn norm(&self) -> f64 {
        (dot(&self.x, &self.x) + dot(&self.xs, &self.xs)).sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.x, &self.x) + dot(&self.xs, &self.xs)
    }

    /// `ẑ = (x*, x)`; in finite dimension the canonical injection is the identity.
    pub fn hat(&self) -> DualPoint {
        DualPoint { us: self.xs.clone(), uss: self.x.clone() }
    }

    fn zip_with(&self, other: &PairedPoint, op: impl Fn(f64, f64) -> f64) -> Result<PairedPoint> {
        other.ensure_dim(self.dim())?;
        Ok(PairedPoint {
            x: self.x.iter().zip(&other.x).map(|(a, b)| op(*a, *b)).collect(),
            xs: self.xs.iter().zip(&other.xs).map(|(a, b)| op(*a, *b)).collect(),
        })
    }

    pub fn add(&self, other: &PairedPoint) -> Result<PairedPoint> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &PairedPoint) -> Result<PairedPoint> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn neg(&self) -> PairedPoint {
        self.scale(-1.0)
    }

    pub fn scale(&self, s: f64) -> PairedPoint {
        PairedPoint { x: self.x.iter().map(|a| a * s).collect(), xs: self.xs.iter().map(|a| a * s).collect() }
    }

    /// `(x, s x*)`, the dual-block rescaling used by the scaled transform.
    pub fn scale_dual(&self, s: f64) -> PairedPoint {
        PairedPoint { x: self.x.clone(), xs: self.xs.iter().map(|a| a * s).collect() }
    }

    pub fn distance(&self, other: &PairedPoint) -> Result<f64> {
        Ok(self.sub(other)?.norm())
    }
}

impl DualPoint {
    pub fn new(us: Vec<f64>, uss: Vec<f64>) -> Result<Self> {
        if us.is_empty() {
            return Err(Error::InvalidParameter("dual point of dimension 0".into()));
        }
        if us.len() != uss.len() {
            return Err(Error::DimensionMismatch { expected: us.len(), found: uss.len() });
        }
        check_block(&us, "u* block")?;
        check_block(&uss, "u** block")?;
        Ok(DualPoint { us, uss })
    }

    pub fn scalar(us: f64, uss: f64) -> Self {
        DualPoint::new(vec![us], vec![uss]).expect("finite scalar pair")
    }

    pub fn from_concat(v: &[f64]) -> Result<Self> {
        if v.len() % 2 != 0 {
            return Err(Error::InvalidParameter(format!("odd concatenated length {}", v.len())));
        }
        let n = v.len() / 2;
        DualPoint::new(v[..n].to_vec(), v[n..].to_vec())
    }

    pub fn dim(&self) -> usize {
        self.us.len()
    }

    pub fn us(&self) -> &[f64] {
        &self.us
    }

    pub fn uss(&self) -> &[f64] {
        &self.uss
    }

    pub fn to_concat(&self) -> Vec<f64> {
        let mut v = self.us.clone();
        v.extend_from_slice(&self.uss);
        v
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_vec(self.to_concat())
    }

    pub fn ensure_dim(&self, n: usize) -> Result<()> {
        if self.dim() == n {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: n, found: self.dim() })
        }
    }

    /// `c(u*, u**) = <u*, u**>`.
    pub fn coupling(&self) -> f64 {
        dot(&self.us, &self.uss)
    }

    pub fn norm(&self) -> f64 {
        (dot(&self.us, &self.us) + dot(&self.uss, &self.uss)).sqrt()
    }

    /// Inverse of [`PairedPoint::hat`]: `(u*, u**) -> (u**, u*)`.
    pub fn unhat(&self) -> PairedPoint {
        PairedPoint { x: self.uss.clone(), xs: self.us.clone() }
    }

    /// Standard dot product with a point of `Z`.
    pub fn apply(&self, z: &PairedPoint) -> Result<f64> {
        z.ensure_dim(self.dim())?;
        Ok(dot(z.x(), &self.us) + dot(z.xs(), &self.uss))
    }

    pub fn add(&self, other: &DualPoint) -> Result<DualPoint> {
        other.ensure_dim(self.dim())?;
        DualPoint::new(
            self.us.iter().zip(&other.us).map(|(a, b)| a + b).collect(),
            self.uss.iter().zip(&other.uss).map(|(a, b)| a + b).collect(),
        )
    }

    pub fn sub(&self, other: &DualPoint) -> Result<DualPoint> {
        other.ensure_dim(self.dim())?;
        DualPoint::new(
            self.us.iter().zip(&other.us).map(|(a, b)| a - b).collect(),
            self.uss.iter().zip(&other.uss).map(|(a, b)| a - b).collect(),
        )
    }

    pub fn distance(&self, other: &DualPoint) -> Result<f64> {
        Ok(self.sub(other)?.norm())
    }
}

/// `c(z) = <x, x*>`.
pub fn coupling(z: &PairedPoint) -> f64 {
    z.coupling()
}

/// Symmetric pairing `<z1, z2> = <x1, x2*> + <x2, x1*>`.
pub fn pairing(z1: &PairedPoint, z2: &PairedPoint) -> Result<f64> {
    z2.ensure_dim(z1.dim())?;
    Ok(dot(z1.x(), z2.xs()) + dot(z2.x(), z1.xs()))
}

pub fn znorm(z: &PairedPoint) -> f64 {
    z.norm()
}

pub fn hat(z: &PairedPoint) -> DualPoint {
    z.hat()
}

/// Duality map of the Euclidean norm, which is the identity.
pub fn duality_map(x: &[f64]) -> Vec<f64> {
    x.to_vec()
}

/// Axis-aligned box in a Euclidean space, `bounds[i] = (lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub bounds: Vec<(f64, f64)>,
}

impl Region {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidParameter("empty region".into()));
        }
        for &(lo, hi) in &bounds {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidParameter(format!("bad interval {lo}:{hi}")));
            }
        }
        Ok(Region { bounds })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Region::new(vec![(lo, hi); dim])
    }

    /// Parses `lo:hi[,lo:hi...]`. A single interval is broadcast to `dim`.
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        let mut bounds = Vec::new();
        for part in text.split(',') {
            let (lo, hi) =
                part.split_once(':').ok_or_else(|| Error::Parse(format!("interval `{part}` is not lo:hi")))?;
            let lo: f64 = lo.trim().parse().map_err(|_| Error::Parse(format!("bad number `{lo}`")))?;
            let hi: f64 = hi.trim().parse().map_err(|_| Error::Parse(format!("bad number `{hi}`")))?;
            bounds.push((lo, hi));
        }
        if bounds.len() == 1 {
            bounds = vec![bounds[0]; dim];
        }
        if bounds.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: bounds.len() });
        }
        Region::new(bounds)
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        v.len() == self.dim() && v.iter().zip(&self.bounds).all(|(t, (lo, hi))| *t >= lo - tol && *t <= hi + tol)
    }

    /// Grid coordinates along one axis.
    pub fn axis(&self, i: usize, resolution: usize) -> Vec<f64> {
        let (lo, hi) = self.bounds[i];
        if resolution <= 1 {
            return vec![0.5 * (lo + hi)];
        }
        let step = (hi - lo) / (resolution - 1) as f64;
        (0..resolution).map(|k| if k + 1 == resolution { hi } else { lo + step * k as f64 }).collect()
    }

    pub fn grid_len(&self, resolution: usize) -> usize {
        resolution.max(1).saturating_pow(self.dim() as u32)
    }

    /// Lexicographic grid of `resolution^dim` points (last coordinate fastest).
    pub fn grid(&self, resolution: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim()).map(|i| self.axis(i, resolution)).collect();
        cartesian(&axes)
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.bounds.iter().map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..=hi) } else { lo }).collect()
    }

    pub fn to_text(&self) -> String {
        self.bounds.iter().map(|(lo, hi)| format!("{lo}:{hi}")).collect::<Vec<_>>().join(",")
    }
}

/// Cartesian product of coordinate lists, last coordinate varying fastest.
pub fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for &t in axis {
                let mut p = prefix.clone();
                p.push(t);
                next.push(p);
            }
        }
        out = next;
    }
    out
}
