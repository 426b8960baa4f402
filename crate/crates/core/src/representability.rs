//! Certification of representative classes: `f >= c`, `f* >= c`, the
//! duality-zero identity, distance bounds to `M_f`, and sampled NI /
//! local-maximality / maximality checks for finite graphs.
//!
//! `f >= c` has no finite certificate: a negative verdict is a concrete
//! counterexample, a positive one is "no violation found" at a recorded
//! sampling resolution.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::conjugate::ConjugateEngine;
use crate::convex_fn::ConvexFn;
use crate::error::{Error, Result};
use crate::fitzpatrick::{minty_step, EqualitySet, OperatorGraph};
use crate::lowered::Minimum;
use crate::paired::{coupling, DualPoint, PairedPoint, Region};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Optimality of inner convex programs.
    pub program: f64,
    /// Class verdicts (`f >= c`, `f* >= c`, duality zero).
    pub verdict: f64,
    /// Equality-set membership.
    pub membership: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { program: 1e-9, verdict: 1e-7, membership: 1e-6 }
    }
}

/// Sampling budget for the class checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Budget {
    pub region: Region,
    pub resolution: usize,
    pub multistarts: usize,
    pub max_local_steps: usize,
    pub seed: u64,
    pub tol: Tolerances,
}

impl Budget {
    /// `[-1, 1]^{2n}` at resolution 11.
    pub fn for_dim(n: usize) -> Self {
        Budget {
            region: Region::cube(2 * n, -1.0, 1.0).expect("valid cube"),
            resolution: 11,
            multistarts: 8,
            max_local_steps: 60,
            seed: 0,
            tol: Tolerances::default(),
        }
    }

    pub fn with_region(mut self, region: Region) -> Self {
        self.region = region;
        self
    }

    pub fn with_resolution(mut self, resolution: usize) -> Self {
        self.resolution = resolution;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    NoViolationFound { resolution: usize, samples: usize },
    Counterexample { z: Vec<f64>, gap: f64 },
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::NoViolationFound { .. })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleCounts {
    pub grid: usize,
    pub local_starts: usize,
    pub duality_zero: usize,
    pub dual: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RepresentabilityReport {
    pub f_geq_c: Verdict,
    pub conjugate_geq_c: Verdict,
    pub duality_zero_max_dev: f64,
    pub duality_zero_worst: Option<PairedPoint>,
    pub sample_counts: SampleCounts,
    pub tolerances: Tolerances,
    pub resolution: usize,
    pub strong: bool,
}

/// Exact solution of `min_w f_z(w) + h(w)`.
#[derive(Debug, Clone, Serialize)]
pub struct DualityZero {
    pub value: f64,
    pub w: PairedPoint,
}

impl DualityZero {
    /// `z + w`, the point of `M_f` reached by the step.
    pub fn landed(&self, z: &PairedPoint) -> PairedPoint {
        z.add(&self.w).expect("same dims")
    }
}

pub fn duality_zero_solve(f: &ConvexFn, z: &PairedPoint) -> Result<DualityZero> {
    z.ensure_dim(f.dim())?;
    let zv = z.to_dvector();
    let hat = DVector::from_vec(z.hat().to_concat());
    let l = f
        .lowered()
        .translate_primary(&zv)
        .add_linear_primary(&(-hat))
        .add_constant(-z.coupling())
        .add_primary_square(1.0);
    match l.minimize()? {
        Minimum::Attained { v, value } => {
            Ok(DualityZero { value, w: PairedPoint::from_dvector(&v.rows(0, 2 * f.dim()).into_owned())? })
        }
        Minimum::Unbounded => Err(Error::Unbounded("min_w f_z(w) + h(w)".into())),
        Minimum::Infeasible => Err(Error::Improper("shifted function has empty domain".into())),
    }
}

/// `inf_w f_z(w) + h(w)`; zero for strong representatives.
pub fn duality_zero(f: &ConvexFn, z: &PairedPoint) -> Result<f64> {
    Ok(duality_zero_solve(f, z)?.value)
}

fn gap(f: &ConvexFn, z: &PairedPoint) -> Result<f64> {
    Ok(f.eval(z)? - z.coupling())
}

/// Local descent on the indefinite gap `f - c`, written as a difference of
/// convex functions `(f + |z|^2/2) - |x + x*|^2/2`; each step is a prox.
fn local_gap_descent(f: &ConvexFn, start: &PairedPoint, steps: usize) -> Result<(PairedPoint, f64)> {
    let mut z = start.clone();
    let mut g = gap(f, &z)?;
    for _ in 0..steps {
        let next = minty_step(f, &z)?;
        let gn = gap(f, &next)?;
        let done = !(gn < g - 1e-13 * (1.0 + g.abs()));
        if gn <= g {
            z = next;
            g = gn;
        }
        if done || gn < -1e6 {
            break;
        }
    }
    Ok((z, g))
}

/// Searches for `f(z) < c(z)`: grid scan, then multistart local descent
/// when the grid finds nothing.
pub fn check_representative(f: &ConvexFn, budget: &Budget) -> Result<Verdict> {
    let n = f.dim();
    if budget.region.dim() != 2 * n {
        return Err(Error::DimensionMismatch { expected: 2 * n, found: budget.region.dim() });
    }
    let tol = budget.tol.verdict;
    let mut worst: Option<(PairedPoint, f64)> = None;
    let mut samples = 0;
    for v in budget.region.grid(budget.resolution) {
        let z = PairedPoint::from_concat(&v)?;
        let g = gap(f, &z)?;
        samples += 1;
        // ties keep the later grid point
        if worst.as_ref().map_or(true, |(_, w)| g <= *w) {
            worst = Some((z, g));
        }
    }
    if let Some((z, g)) = &worst {
        if *g < -tol {
            return Ok(Verdict::Counterexample { z: z.to_concat(), gap: *g });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    for _ in 0..budget.multistarts {
        let start = PairedPoint::from_concat(&budget.region.sample(&mut rng))?;
        if !f.eval(&start)?.is_finite() {
            continue;
        }
        let (z, g) = local_gap_descent(f, &start, budget.max_local_steps)?;
        samples += 1;
        if g < -tol {
            return Ok(Verdict::Counterexample { z: z.to_concat(), gap: g });
        }
    }
    Ok(Verdict::NoViolationFound { resolution: budget.resolution, samples })
}

/// Samples `f*(d) >= c(d)` over dual points on the budget grid.
pub fn check_conjugate_geq_c(f: &ConvexFn, budget: &Budget, engine: &ConjugateEngine) -> Result<(Verdict, usize)> {
    let tol = budget.tol.verdict;
    let mut worst: Option<(Vec<f64>, f64)> = None;
    let mut count = 0;
    for v in budget.region.grid(budget.resolution) {
        let d = DualPoint::from_concat(&v)?;
        let fd = engine.conjugate_at(f, &d)?;
        count += 1;
        let g = fd - d.coupling();
        if worst.as_ref().map_or(true, |(_, w)| g <= *w) {
            worst = Some((v, g));
        }
    }
    Ok(match worst {
        Some((d, g)) if g < -tol => (Verdict::Counterexample { z: d, gap: g }, count),
        _ => (Verdict::NoViolationFound { resolution: budget.resolution, samples: count }, count),
    })
}

/// `f >= c`, `f* >= c` and duality zero over the budget sample.
pub fn check_strong(f: &ConvexFn, budget: &Budget) -> Result<RepresentabilityReport> {
    let engine = ConjugateEngine::new(budget.tol.program, 60)?;
    let f_geq_c = check_representative(f, budget)?;
    let (conjugate_geq_c, dual) = check_conjugate_geq_c(f, budget, &engine)?;
    let mut max_dev = 0.0_f64;
    let mut worst = None;
    let mut dz = 0;
    for v in budget.region.grid(budget.resolution) {
        let z = PairedPoint::from_concat(&v)?;
        let val = duality_zero(f, &z)?;
        dz += 1;
        if val.abs() > max_dev {
            max_dev = val.abs();
            worst = Some(z);
        }
    }
    let grid = budget.region.grid_len(budget.resolution);
    let local = match &f_geq_c {
        Verdict::NoViolationFound { samples, .. } => samples.saturating_sub(grid),
        _ => 0,
    };
    let strong = f_geq_c.passed() && conjugate_geq_c.passed() && max_dev <= budget.tol.verdict;
    Ok(RepresentabilityReport {
        f_geq_c,
        conjugate_geq_c,
        duality_zero_max_dev: max_dev,
        duality_zero_worst: worst,
        sample_counts: SampleCounts { grid, local_starts: local, duality_zero: dz, dual },
        tolerances: budget.tol,
        resolution: budget.resolution,
        strong,
    })
}

/// The dual decomposition at `z`: `z* in M_{f*}` with `ẑ - z*` on the
/// graph of `-J` (here `{(a, -a)}`).
#[derive(Debug, Clone, Serialize)]
pub struct MinusJSplit {
    pub zstar: DualPoint,
    /// `f*(z*) - c(z*)`.
    pub r1: f64,
    /// `|w*|^2/2 + c(w*) = |u* + u**|^2/2` for `w* = z* - ẑ`.
    pub r2: f64,
    /// `|ẑ - z*|^2`.
    pub norm_sq: f64,
    /// `2 (f*(ẑ) - c(ẑ))`, infinite when `ẑ` is outside `dom f*`.
    pub bound: f64,
}

pub fn minus_j_split(f: &ConvexFn, z: &PairedPoint, tol: f64) -> Result<MinusJSplit> {
    let sol = duality_zero_solve(f, z)?;
    let zhat = z.hat();
    // the dual optimum is w* = -w
    let wstar = sol.w.neg();
    let wd = DualPoint::from_concat(&wstar.to_concat())?;
    let zstar = zhat.add(&wd)?;
    let engine = ConjugateEngine::default();
    let r1 = engine.conjugate_at(f, &zstar)? - zstar.coupling();
    let r2 = 0.5 * wd.us().iter().zip(wd.uss()).map(|(a, b)| (a + b) * (a + b)).sum::<f64>();
    let fz = engine.conjugate_at(f, &zhat)?;
    let bound = 2.0 * (fz - zhat.coupling());
    let norm_sq = zhat.distance(&zstar)?.powi(2);
    if r1.max(0.0) + r2 > tol {
        return Err(Error::NotStrong(format!("split residuals r1 = {r1:e}, r2 = {r2:e}")));
    }
    if norm_sq > bound + tol {
        return Err(Error::Breach(format!("|ẑ - z*|^2 = {norm_sq:e} exceeds 2(f*(ẑ) - c(ẑ)) = {bound:e}")));
    }
    Ok(MinusJSplit { zstar, r1, r2, norm_sq, bound })
}

#[derive(Debug, Clone, Serialize)]
pub struct DistanceCertificate {
    pub z: PairedPoint,
    pub gap: f64,
    pub primal_bound: f64,
    pub dual_partner: DualPoint,
    pub dual_lower: f64,
    pub dual_upper: f64,
    /// Distance from `z` to the nearest known point of `M_f`.
    pub measured: f64,
    /// Distance from `ẑ` to the nearest known point of `M_{f*}`.
    pub measured_dual: f64,
    pub consistent: bool,
}

/// Primal bound `d(z, M_f) <= 2 sqrt(gap)` and the dual sandwich
/// `(sqrt2 - 1)|ẑ - z*| <= d(ẑ, M_{f*}) <= sqrt(2 (f^□(z) - c(z)))`.
///
/// Measured distances use the exact step `prox_f(z + ẑ)` together with any
/// supplied equality-set sample; `M_{f*}` is the hat image of `M_f`.
pub fn distance_certificate(
    f: &ConvexFn,
    z: &PairedPoint,
    samples: Option<&EqualitySet>,
    tol: f64,
) -> Result<DistanceCertificate> {
    let gap = f.eval(z)? - z.coupling();
    if gap < -tol {
        return Err(Error::NotStrong(format!("f(z) - c(z) = {gap:e} < 0")));
    }
    let gap = gap.max(0.0);
    let split = minus_j_split(f, z, tol)?;
    let landed = minty_step(f, z)?;
    let mut measured = z.distance(&landed)?;
    if let Some(es) = samples {
        measured = measured.min(es.distance_to(z));
    }
    // hat is an isometry carrying M_f onto M_{f*}
    let measured_dual = measured;
    let dual_lower = (2f64.sqrt() - 1.0) * split.norm_sq.sqrt();
    let dual_upper = split.bound.max(0.0).sqrt();
    let primal_bound = 2.0 * gap.sqrt();
    let consistent =
        measured <= primal_bound + tol && dual_lower <= measured_dual + tol && measured_dual <= dual_upper + tol;
    Ok(DistanceCertificate {
        z: z.clone(),
        gap,
        primal_bound,
        dual_partner: split.zstar,
        dual_lower,
        dual_upper,
        measured,
        measured_dual,
        consistent,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SampledVerdict {
    pub passed: bool,
    pub samples: usize,
    pub counterexample: Option<Vec<f64>>,
    pub margin: f64,
}

/// `Phi_M(d) = c_M^*(d) = max_{w in M} d . w - c(w) >= c(d)` on the samples.
pub fn check_ni(m: &OperatorGraph, dual_sample: &[DualPoint], tol: f64) -> Result<SampledVerdict> {
    let mut worst: Option<(Vec<f64>, f64)> = None;
    for d in dual_sample {
        d.ensure_dim(m.dim())?;
        let phi =
            m.points().iter().map(|w| d.apply(w).expect("same dims") - w.coupling()).fold(f64::NEG_INFINITY, f64::max);
        let margin = phi - d.coupling();
        if worst.as_ref().map_or(true, |(_, w)| margin < *w) {
            worst = Some((d.to_concat(), margin));
        }
    }
    let margin = worst.as_ref().map_or(f64::INFINITY, |w| w.1);
    let passed = margin >= -tol;
    Ok(SampledVerdict {
        passed,
        samples: dual_sample.len(),
        counterexample: if passed { None } else { worst.map(|w| w.0) },
        margin,
    })
}

fn in_open_box(v: &[f64], b: &Region) -> bool {
    v.iter().zip(&b.bounds).all(|(t, (lo, hi))| *lo < *t && *t < *hi)
}

#[derive(Debug, Clone, Serialize)]
pub struct LocallyMaxReport {
    pub passed: bool,
    pub boxes_checked: usize,
    pub skipped_boxes: Vec<usize>,
    pub points_checked: usize,
    /// `(box index, z)` with no strictly negative witness.
    pub counterexample: Option<(usize, PairedPoint)>,
}

/// For every open box `U` of dual values and sampled `z` in `X x U` off `M`,
/// looks for `w in M` with dual part in `U` and `c(z - w) < -tol`.
pub fn check_locally_max(
    m: &OperatorGraph,
    boxes: &[Region],
    z_samples: &[PairedPoint],
    tol: f64,
) -> Result<LocallyMaxReport> {
    let mut skipped = Vec::new();
    let mut checked = 0;
    for (bi, u) in boxes.iter().enumerate() {
        if u.dim() != m.dim() {
            return Err(Error::DimensionMismatch { expected: m.dim(), found: u.dim() });
        }
        let inside: Vec<&PairedPoint> = m.points().iter().filter(|w| in_open_box(w.xs(), u)).collect();
        if inside.is_empty() {
            skipped.push(bi);
            continue;
        }
        for z in z_samples {
            if !in_open_box(z.xs(), u) {
                continue;
            }
            if m.points().iter().any(|w| z.distance(w).map_or(false, |d| d <= tol)) {
                continue;
            }
            checked += 1;
            let witnessed = inside.iter().any(|w| coupling(&z.sub(w).expect("same dims")) < -tol);
            if !witnessed {
                return Ok(LocallyMaxReport {
                    passed: false,
                    boxes_checked: boxes.len() - skipped.len(),
                    skipped_boxes: skipped,
                    points_checked: checked,
                    counterexample: Some((bi, z.clone())),
                });
            }
        }
    }
    Ok(LocallyMaxReport {
        passed: true,
        boxes_checked: boxes.len() - skipped.len(),
        skipped_boxes: skipped,
        points_checked: checked,
        counterexample: None,
    })
}

/// Open x*-boxes centred on a 3^n grid, each a quarter of the range wide on
/// either side.
pub fn box_family(region: &Region, n: usize) -> Result<Vec<Region>> {
    let dual = &region.bounds[n..];
    let axes: Vec<Vec<(f64, f64)>> = dual
        .iter()
        .map(|&(lo, hi)| {
            let w = (hi - lo) / 4.0;
            [lo + w, 0.5 * (lo + hi), hi - w].iter().map(|c| (c - w, c + w)).collect()
        })
        .collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        out.push(Region::new((0..n).map(|i| axes[i][idx[i]]).collect())?);
        let mut k = 0;
        while k < n && idx[k] == 2 {
            idx[k] = 0;
            k += 1;
        }
        if k == n {
            return Ok(out);
        }
        idx[k] += 1;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtensionReport {
    pub candidates: usize,
    /// Candidates off the sample that are monotonically related to all of it.
    pub witnesses: Vec<PairedPoint>,
}

impl ExtensionReport {
    pub fn maximal_on_grid(&self) -> bool {
        self.witnesses.is_empty()
    }
}

pub fn maximality_extension_test(
    points: &[PairedPoint],
    candidates: &[PairedPoint],
    tol: f64,
) -> Result<ExtensionReport> {
    let mut witnesses = Vec::new();
    for z in candidates {
        let mut off = true;
        let mut related = true;
        for w in points {
            let d = z.sub(w)?;
            if d.norm() <= tol {
                off = false;
                break;
            }
            if d.coupling() < -tol {
                related = false;
                break;
            }
        }
        if off && related {
            witnesses.push(z.clone());
        }
    }
    Ok(ExtensionReport { candidates: candidates.len(), witnesses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex_fn::PolyhedralFn;
    use crate::fitzpatrick::{equality_set, fitzpatrick_fn};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn p(x: f64, xs: f64) -> PairedPoint {
        PairedPoint::scalar(x, xs)
    }

    fn origin() -> OperatorGraph {
        OperatorGraph::new(vec![p(0.0, 0.0)], "origin").unwrap()
    }

    fn grid_points(region: &Region, res: usize) -> Vec<PairedPoint> {
        region.grid(res).iter().map(|v| PairedPoint::from_concat(v).unwrap()).collect()
    }

    #[test]
    fn duality_zero_examples() {
        let h = ConvexFn::h(1).unwrap();
        for z in [p(1.0, 0.0), p(-2.0, 3.0), p(0.5, 0.5)] {
            assert_abs_diff_eq!(duality_zero(&h, &z).unwrap(), 0.0, epsilon = 1e-12);
        }
        let s = duality_zero_solve(&h, &p(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(s.w.x()[0], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.w.xs()[0], 0.5, epsilon = 1e-12);
        let zero = fitzpatrick_fn(&origin()).unwrap();
        assert_abs_diff_eq!(duality_zero(&zero, &p(0.0, 0.0)).unwrap(), 0.0, epsilon = 1e-12);
        let fs = ConvexFn::fenchel_sum(PolyhedralFn::abs()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let z = p(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            assert!(duality_zero(&fs, &z).unwrap().abs() <= 1e-8);
        }
    }

    #[test]
    fn representative_examples() {
        let b = Budget::for_dim(1);
        assert!(check_representative(&ConvexFn::h(1).unwrap(), &b).unwrap().passed());
        let zero = fitzpatrick_fn(&origin()).unwrap();
        match check_representative(&zero, &b).unwrap() {
            Verdict::Counterexample { z, gap } => {
                assert_eq!(z, vec![1.0, 1.0]);
                assert_eq!(gap, -1.0);
                // reproducible by re-evaluation
                assert!((zero.eval(&p(z[0], z[1])).unwrap() - 1.0 - gap).abs() <= 1e-12);
            }
            other => panic!("{other:?}"),
        }
        let id = OperatorGraph::linear_1d(1.0, &[-1.0, 0.0, 1.0]).unwrap();
        let phi = fitzpatrick_fn(&id).unwrap();
        // between samples phi_M dips below c, e.g. phi_M(1/2, 1/2) = 0 < 1/4
        assert!(!check_representative(&phi, &b).unwrap().passed());
        // the grid over a quadrant with c <= 0 sees nothing, local descent
        // still escapes to a genuine violation
        let quadrant = Budget::for_dim(1).with_region(Region::new(vec![(0.0, 1.0), (-1.0, 0.0)]).unwrap());
        match check_representative(&phi, &quadrant).unwrap() {
            Verdict::Counterexample { z, gap } => {
                assert!(phi.eval(&p(z[0], z[1])).unwrap() - z[0] * z[1] - gap == 0.0 && gap < 0.0)
            }
            other => panic!("{other:?}"),
        }
        let near_sample = Budget::for_dim(1).with_region(Region::new(vec![(0.95, 1.05), (0.95, 1.05)]).unwrap());
        assert!(!check_representative(&phi, &near_sample).unwrap().passed());
    }

    #[test]
    fn strong_examples() {
        let b = Budget::for_dim(1).with_resolution(7);
        let r = check_strong(&ConvexFn::h(1).unwrap(), &b).unwrap();
        assert!(r.strong, "{r:?}");
        let r = check_strong(&ConvexFn::fenchel_sum(PolyhedralFn::abs()).unwrap(), &b).unwrap();
        assert!(r.strong, "{r:?}");
        let r = check_strong(&fitzpatrick_fn(&origin()).unwrap(), &b).unwrap();
        assert!(!r.strong && !r.f_geq_c.passed());
    }

    #[test]
    fn split_examples() {
        let h = ConvexFn::h(1).unwrap();
        let s = minus_j_split(&h, &p(0.0, 0.0), 1e-9).unwrap();
        assert_eq!(s.zstar.to_concat(), vec![0.0, 0.0]);
        assert!(s.r1.abs() < 1e-12 && s.r2.abs() < 1e-12);

        let s = minus_j_split(&h, &p(1.0, 0.0), 1e-9).unwrap();
        // ẑ = (0, 1); z* on the dual diagonal, ẑ - z* = (t, -t)
        let (a, b) = (s.zstar.us()[0], s.zstar.uss()[0]);
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        assert_abs_diff_eq!((0.0 - a) + (1.0 - b), 0.0, epsilon = 1e-12);
        assert!(s.norm_sq <= 1.0 + 1e-12);
        assert_abs_diff_eq!(s.bound, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn split_surjectivity() {
        let fs = ConvexFn::fenchel_sum(PolyhedralFn::abs()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let u: f64 = rng.gen_range(-3.0..3.0);
            let s = minus_j_split(&fs, &p(0.0, u), 1e-8).unwrap();
            assert_abs_diff_eq!(s.zstar.us()[0] + s.zstar.uss()[0], u, epsilon = 1e-9);
            assert!(s.r1.abs() <= 1e-8);
        }
    }

    #[test]
    fn distance_examples() {
        let h = ConvexFn::h(1).unwrap();
        let c = distance_certificate(&h, &p(0.3, 0.3), None, 1e-9).unwrap();
        assert!(c.gap.abs() < 1e-15 && c.primal_bound < 1e-7 && c.dual_upper < 1e-7);
        let c = distance_certificate(&h, &p(1.0, 0.0), None, 1e-9).unwrap();
        assert_abs_diff_eq!(c.gap, 0.5);
        assert_abs_diff_eq!(c.primal_bound, 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(c.measured, 1.0 / 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(c.dual_upper, 1.0, epsilon = 1e-12);
        assert!(c.consistent);
        assert!(c.dual_lower <= c.measured_dual);
    }

    #[test]
    fn ni_examples() {
        let xs: Vec<f64> = (0..=60).map(|k| -3.0 + 0.1 * k as f64).collect();
        let id = OperatorGraph::linear_1d(1.0, &xs).unwrap();
        let box2 = Region::cube(2, -2.0, 2.0).unwrap();
        let duals: Vec<DualPoint> = box2.grid(21).iter().map(|v| DualPoint::from_concat(v).unwrap()).collect();
        let r = check_ni(&id, &duals, 1e-9).unwrap();
        assert!(r.passed, "{r:?}");

        let r = check_ni(&origin(), &[DualPoint::scalar(1.0, 1.0)], 1e-9).unwrap();
        assert!(!r.passed);
        assert_eq!(r.counterexample, Some(vec![1.0, 1.0]));

        let m = OperatorGraph::linear_1d(2.0, &[-1.0, 0.0, 0.5, 2.0]).unwrap();
        let hats: Vec<DualPoint> = m.points().iter().map(|w| w.hat()).collect();
        assert!(check_ni(&m, &hats, 1e-12).unwrap().passed);
    }

    #[test]
    fn locally_max_examples() {
        let xs: Vec<f64> = (0..=40).map(|k| -2.0 + 0.1 * k as f64).collect();
        let id = OperatorGraph::linear_1d(1.0, &xs).unwrap();
        let u = Region::new(vec![(0.5, 1.5)]).unwrap();
        let r = check_locally_max(&id, &[u.clone()], &[p(2.0, 1.0), p(1.0, 1.0)], 1e-9).unwrap();
        assert!(r.passed);
        assert_eq!(r.points_checked, 1);

        let r = check_locally_max(&origin(), &[Region::new(vec![(-1.0, 1.0)]).unwrap()], &[p(1.0, 0.5)], 1e-9).unwrap();
        assert!(!r.passed);
        assert_eq!(r.counterexample.unwrap().1, p(1.0, 0.5));

        let r = check_locally_max(&id, &[Region::new(vec![(5.0, 6.0)]).unwrap()], &[p(0.0, 5.5)], 1e-9).unwrap();
        assert_eq!(r.skipped_boxes, vec![0]);
    }

    #[test]
    fn extension_examples() {
        let xs: Vec<f64> = (0..=400).map(|k| -2.0 + 0.01 * k as f64).collect();
        let id = OperatorGraph::linear_1d(1.0, &xs).unwrap();
        let box2 = Region::cube(2, -1.0, 1.0).unwrap();
        let cands = grid_points(&box2, 11);
        assert!(maximality_extension_test(id.points(), &cands, 1e-6).unwrap().maximal_on_grid());

        let r = maximality_extension_test(origin().points(), &cands, 1e-6).unwrap();
        assert!(r.witnesses.contains(&p(0.0, 1.0)));

        let es = equality_set(&ConvexFn::h(1).unwrap(), &box2, 41, 1e-6).unwrap();
        assert!(maximality_extension_test(&es.points, &cands, 1e-6).unwrap().maximal_on_grid());
    }
}
