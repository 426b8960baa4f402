//! Iterative refinement onto `M_f`, the Brøndsted-Rockafellar point, the
//! alpha-scaled variant and ANA sequences.
//!
//! Each step solves `min_w f_{z_n}(w) + h(w)` exactly. The minimiser
//! satisfies every acceptance test of the geometric schedule, so the
//! schedule's inequalities are asserted on the trace rather than used to
//! pick inexact steps.

use serde::Serialize;

use crate::convex_fn::ConvexFn;
use crate::error::{Error, Result};
use crate::fitzpatrick::minty_step;
use crate::paired::PairedPoint;
use crate::representability::duality_zero_solve;

pub const DEFAULT_BETA: f64 = 1.05;
pub const DEFAULT_GAMMA: f64 = 2.05;
pub const DEFAULT_TERM_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 200;
/// Slack on asserted inequalities.
pub const ASSERT_TOL: f64 = 1e-9;

/// `eps_n = eps0 q^{2n}` with `q` chosen so that `4 eps_n + 6 eps_{n+1} <=
/// gamma^2 eps_n` and `sum sqrt(eps_n) < beta sqrt(eps0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsSchedule {
    pub eps0: f64,
    pub beta: f64,
    pub gamma: f64,
    pub q: f64,
}

pub fn make_schedule(eps: f64, beta: f64, gamma: f64) -> Result<EpsSchedule> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if !(beta > 1.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta must exceed 1, got {beta}")));
    }
    if !(gamma > 2.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("gamma must exceed 2, got {gamma}")));
    }
    let q = 0.99 * ((gamma * gamma - 4.0) / 6.0).sqrt().min(1.0 - 1.0 / beta);
    Ok(EpsSchedule { eps0: eps, beta, gamma, q })
}

impl EpsSchedule {
    pub fn term(&self, n: usize) -> f64 {
        self.eps0 * self.q.powi(2 * n as i32)
    }

    /// `gamma beta sqrt(eps0)`.
    pub fn radius(&self) -> f64 {
        self.gamma * self.beta * self.eps0.sqrt()
    }

    /// Replays both schedule conditions over the first `terms` terms.
    pub fn conditions_hold(&self, terms: usize) -> bool {
        let mut sum = 0.0;
        for n in 0..terms {
            let (e, e1) = (self.term(n), self.term(n + 1));
            if 4.0 * e + 6.0 * e1 > self.gamma * self.gamma * e * (1.0 + 1e-12) {
                return false;
            }
            sum += e.sqrt();
        }
        sum < self.beta * self.eps0.sqrt()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementTrace {
    pub start: PairedPoint,
    pub iterates: Vec<PairedPoint>,
    pub gaps: Vec<f64>,
    pub step_norms: Vec<f64>,
    pub final_point: PairedPoint,
    pub certified_radius: f64,
    /// The sharp limit `2 sqrt(eps0)` for comparison.
    pub ideal_radius: f64,
    pub displacement: f64,
    pub schedule: EpsSchedule,
}

fn gap(f: &ConvexFn, z: &PairedPoint) -> Result<f64> {
    Ok(f.eval(z)? - z.coupling())
}

/// Refines `z` onto `M_f` under the schedule.
pub fn refine(f: &ConvexFn, z: &PairedPoint, sched: &EpsSchedule, term_tol: f64) -> Result<RefinementTrace> {
    let g0 = gap(f, z)?;
    if !g0.is_finite() {
        return Err(Error::Precondition("f(z) is infinite; refinement needs z in dom f".into()));
    }
    if g0 > sched.eps0 * (1.0 + 1e-12) + ASSERT_TOL {
        return Err(Error::Precondition(format!("gap {g0:e} exceeds the schedule's eps0 {:e}", sched.eps0)));
    }
    let mut iterates = vec![z.clone()];
    let mut gaps = vec![g0];
    let mut step_norms = Vec::new();
    let mut cur = z.clone();
    let mut g = g0;
    let mut n = 0;
    while g > term_tol {
        if n >= MAX_ITERATIONS {
            return Err(Error::Unresolved(format!("refinement stalled after {n} steps with gap {g:e}")));
        }
        let step = duality_zero_solve(f, &cur)?;
        if step.value.abs() > 1e-7 * (1.0 + g0) {
            return Err(Error::NotStrong(format!("inf(f_z + h) = {:e} at step {n}", step.value)));
        }
        let norm = step.w.norm();
        let en = sched.term(n);
        if norm > sched.gamma * en.sqrt() + ASSERT_TOL {
            return Err(Error::Breach(format!(
                "step {n}: |w| = {norm:e} > gamma sqrt(eps_n) = {:e}",
                sched.gamma * en.sqrt()
            )));
        }
        cur = cur.add(&step.w)?;
        g = gap(f, &cur)?;
        let en1 = sched.term(n + 1);
        if g > en1 + ASSERT_TOL {
            return Err(Error::Breach(format!("step {n}: gap {g:e} > eps_(n+1) = {en1:e}")));
        }
        step_norms.push(norm);
        iterates.push(cur.clone());
        gaps.push(g);
        n += 1;
    }
    let displacement = z.distance(&cur)?;
    let certified_radius = sched.radius();
    if displacement > certified_radius + ASSERT_TOL {
        return Err(Error::Breach(format!("|z - final| = {displacement:e} exceeds {certified_radius:e}")));
    }
    Ok(RefinementTrace {
        start: z.clone(),
        iterates,
        gaps,
        step_norms,
        final_point: cur,
        certified_radius,
        ideal_radius: 2.0 * sched.eps0.sqrt(),
        displacement,
        schedule: *sched,
    })
}

/// [`refine`] with `eps0` set to the gap at `z` (or `term_tol` when `z` is
/// already on `M_f`).
pub fn refine_from_gap(f: &ConvexFn, z: &PairedPoint, beta: f64, gamma: f64, term_tol: f64) -> Result<RefinementTrace> {
    let g = gap(f, z)?;
    if !g.is_finite() {
        return Err(Error::Precondition("f(z) is infinite".into()));
    }
    let sched = make_schedule(g.max(term_tol).max(f64::MIN_POSITIVE), beta, gamma)?;
    refine(f, z, &sched, term_tol)
}

#[derive(Debug, Clone, Serialize)]
pub struct BrPoint {
    pub point: PairedPoint,
    pub distance: f64,
    /// `2 sqrt(eps)`.
    pub bound: f64,
    /// Whether `distance < bound` holds with margin beyond the tolerance.
    pub strict: bool,
}

/// A point of `M_f` within `2 sqrt(eps)` of a point with gap below `eps`.
pub fn br_point(f: &ConvexFn, z: &PairedPoint, eps: f64, term_tol: f64) -> Result<BrPoint> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("eps must be positive".into()));
    }
    let g = gap(f, z)?;
    if !(g < eps) {
        return Err(Error::Precondition(format!("f(z) - c(z) = {g:e} is not below eps = {eps:e}")));
    }
    let point = if g <= term_tol {
        z.clone()
    } else {
        let sched = make_schedule(eps, DEFAULT_BETA, DEFAULT_GAMMA)?;
        refine(f, z, &sched, term_tol)?.final_point
    };
    let distance = z.distance(&point)?;
    let bound = 2.0 * eps.sqrt();
    if distance > bound + ASSERT_TOL {
        return Err(Error::Breach(format!("distance {distance:e} exceeds 2 sqrt(eps) = {bound:e}")));
    }
    Ok(BrPoint { point, distance, bound, strict: distance < bound - ASSERT_TOL })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaledRefinement {
    pub point: PairedPoint,
    pub alpha: f64,
    /// `|x_a - x|^2 + alpha^2 |x_a* - x*|^2`.
    pub lhs: f64,
    /// `gamma alpha (f(x, x*) - <x, x*>)`.
    pub rhs: f64,
    pub trace: RefinementTrace,
}

/// Refines `scale(f, alpha)` at `(x, alpha x*)` and maps back.
pub fn scaled_refine(f: &ConvexFn, z: &PairedPoint, alpha: f64, gamma: f64, term_tol: f64) -> Result<ScaledRefinement> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    if !(gamma > 4.0) {
        return Err(Error::InvalidParameter(format!("gamma must exceed 4, got {gamma}")));
    }
    let g = gap(f, z)?;
    if !g.is_finite() {
        return Err(Error::Precondition("f(z) is infinite".into()));
    }
    let fa = f.scale(alpha)?;
    let za = z.scale_dual(alpha);
    // split sqrt(gamma) = gamma' beta' with gamma' > 2, beta' > 1
    let r = gamma.sqrt() / 2.0;
    let sched = make_schedule((alpha * g).max(term_tol), r.sqrt(), 2.0 * r.sqrt())?;
    let trace = refine(&fa, &za, &sched, term_tol)?;
    let point = trace.final_point.scale_dual(1.0 / alpha);
    let dx: f64 = point.x().iter().zip(z.x()).map(|(a, b)| (a - b) * (a - b)).sum();
    let dxs: f64 = point.xs().iter().zip(z.xs()).map(|(a, b)| (a - b) * (a - b)).sum();
    let lhs = dx + alpha * alpha * dxs;
    let rhs = gamma * alpha * g.max(0.0);
    if lhs > rhs + ASSERT_TOL {
        return Err(Error::Breach(format!("scaled bound fails: {lhs:e} > {rhs:e}")));
    }
    Ok(ScaledRefinement { point, alpha, lhs, rhs, trace })
}

#[derive(Debug, Clone, Serialize)]
pub struct AnaPoint {
    pub eps: f64,
    pub eps_inner: f64,
    pub point: PairedPoint,
    /// `|dx|^2 + 2 <dx, dx*> + |dx*|^2`.
    pub quad_form: f64,
    /// `<dx, dx*> / (|dx| |dx*|)`.
    pub ratio: f64,
}

fn bisect(mut lo: f64, mut hi: f64, pred: impl Fn(f64) -> Result<bool>) -> Result<f64> {
    // pred(lo) false, pred(hi) true; returns a point where pred holds
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if pred(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + hi.abs()) {
            break;
        }
    }
    Ok(hi)
}

/// For each `eps`, an approximate minimiser of `f_z + h` at level `eps'`
/// (with `11 eps' + 6 r sqrt(2 eps') = eps`) pushed onto `M_f`.
pub fn ana_sequence(f: &ConvexFn, z: &PairedPoint, eps_list: &[f64], term_tol: f64) -> Result<Vec<AnaPoint>> {
    let g = gap(f, z)?;
    if !(g > term_tol) {
        return Err(Error::Precondition(format!("z is on M_f (gap {g:e}); ANA sequences start off M_f")));
    }
    if !g.is_finite() {
        return Err(Error::Precondition("f(z) is infinite".into()));
    }
    let exact = duality_zero_solve(f, z)?;
    let wbar = exact.w.clone();
    let fz = f.shift(z)?;
    let value_at = |theta: f64| -> Result<f64> {
        let w = wbar.scale(theta);
        Ok(fz.eval(&w)? + 0.5 * w.norm_sq())
    };
    // dual witness -wbar for the coercivity radius at level 1
    let dnorm = wbar.norm();
    let fstar = -0.5 * wbar.norm_sq();
    let radius = dnorm + (dnorm * dnorm + 2.0 * (fstar + 1.0)).max(0.0).sqrt();

    let mut out = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter("eps values must be positive".into()));
        }
        let e = eps.min(1.0);
        let eps_inner = bisect(0.0, e / 11.0, |t| Ok(11.0 * t + 6.0 * radius * (2.0 * t).sqrt() >= e))?;
        let theta =
            if value_at(0.0)? <= eps_inner { 0.0 } else { bisect(0.0, 1.0, |t| Ok(value_at(t)? <= eps_inner))? };
        let approx = z.add(&wbar.scale(theta))?;
        let landed = minty_step(f, &approx)?;
        let d = landed.sub(z)?;
        let quad_form = d.norm_sq() + 2.0 * d.coupling();
        if quad_form > eps + ASSERT_TOL {
            return Err(Error::Breach(format!("quadratic form {quad_form:e} exceeds eps {eps:e}")));
        }
        let nx = d.x().iter().map(|t| t * t).sum::<f64>().sqrt();
        let nxs = d.xs().iter().map(|t| t * t).sum::<f64>().sqrt();
        if nx < 1e-12 || nxs < 1e-12 {
            return Err(Error::Breach(format!(
                "degenerate displacement at eps {eps:e}: |dx| = {nx:e}, |dx*| = {nxs:e}"
            )));
        }
        out.push(AnaPoint { eps, eps_inner, point: landed, quad_form, ratio: d.coupling() / (nx * nxs) });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex_fn::PolyhedralFn;
    use crate::fitzpatrick::{equality_set, residual};
    use crate::paired::Region;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(x: f64, xs: f64) -> PairedPoint {
        PairedPoint::scalar(x, xs)
    }

    #[test]
    fn schedule_examples() {
        let s = make_schedule(1.0, 1.05, 2.05).unwrap();
        assert_abs_diff_eq!(s.q, 0.99 * (1.0 - 1.0 / 1.05), epsilon = 1e-12);
        assert_abs_diff_eq!(s.q, 0.047143, epsilon = 1e-6);
        let s = make_schedule(1.0, 101.0, 4.0).unwrap();
        assert_abs_diff_eq!(s.q, 0.980198, epsilon = 1e-6);
        assert!(make_schedule(0.0, 1.05, 2.05).is_err());
        assert!(make_schedule(1.0, 1.0, 2.05).is_err());
        assert!(make_schedule(1.0, 1.05, 2.0).is_err());
    }

    #[test]
    fn refine_h() {
        let h = ConvexFn::h(1).unwrap();
        let z = p(1.0, 0.0);
        let sched = make_schedule(0.5, DEFAULT_BETA, DEFAULT_GAMMA).unwrap();
        let t = refine(&h, &z, &sched, DEFAULT_TERM_TOL).unwrap();
        // the exact step lands on the diagonal at once
        assert_eq!(t.step_norms.len(), 1);
        assert_abs_diff_eq!(t.final_point.x()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(t.final_point.xs()[0], 0.5, epsilon = 1e-12);
        assert!(t.displacement <= t.certified_radius);

        let on = p(0.3, 0.3);
        let t = refine(&h, &on, &sched, DEFAULT_TERM_TOL).unwrap();
        assert!(t.step_norms.is_empty());
        assert_eq!(t.final_point, on);
    }

    #[test]
    fn refine_abs_subdifferential() {
        let f = ConvexFn::fenchel_sum(PolyhedralFn::abs()).unwrap();
        let z = p(0.5, 0.0);
        let t = refine_from_gap(&f, &z, DEFAULT_BETA, DEFAULT_GAMMA, DEFAULT_TERM_TOL).unwrap();
        assert_abs_diff_eq!(t.gaps[0], 0.5, epsilon = 1e-12);
        let fp = &t.final_point;
        let (x, xs) = (fp.x()[0], fp.xs()[0]);
        let on_graph = if x > 1e-9 {
            (xs - 1.0).abs() < 1e-9
        } else if x < -1e-9 {
            (xs + 1.0).abs() < 1e-9
        } else {
            xs.abs() <= 1.0 + 1e-9
        };
        assert!(on_graph, "{fp:?}");
        assert!(residual(&f, fp).unwrap() <= DEFAULT_TERM_TOL);
        assert!(t.displacement <= DEFAULT_GAMMA * DEFAULT_BETA * 0.5f64.sqrt());
    }

    #[test]
    fn br_examples() {
        let h = ConvexFn::h(1).unwrap();
        let b = br_point(&h, &p(1.0, 1.1), 0.01, DEFAULT_TERM_TOL).unwrap();
        assert!(b.distance <= 0.2 && b.strict);
        assert_abs_diff_eq!(b.point.x()[0], b.point.xs()[0], epsilon = 1e-12);
        let on = p(-0.4, -0.4);
        assert_eq!(br_point(&h, &on, 0.3, DEFAULT_TERM_TOL).unwrap().point, on);
        assert!(matches!(br_point(&h, &p(1.0, 0.0), 0.1, DEFAULT_TERM_TOL), Err(Error::Precondition(_))));
    }

    #[test]
    fn br_randomised_polyhedral() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let phi = PolyhedralFn::new(
            vec![
                crate::convex_fn::LinearPiece { slope: vec![-1.0], offset: 0.5 },
                crate::convex_fn::LinearPiece { slope: vec![0.5], offset: 0.0 },
                crate::convex_fn::LinearPiece { slope: vec![2.0], offset: 1.5 },
            ],
            vec![],
        )
        .unwrap();
        let f = ConvexFn::fenchel_sum(phi).unwrap();
        let region = Region::cube(2, -3.0, 3.0).unwrap();
        let es = equality_set(&f, &region, 31, 1e-6).unwrap();
        for _ in 0..100 {
            let z = p(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let g = f.eval(&z).unwrap() - z.coupling();
            if !g.is_finite() {
                continue;
            }
            let eps = g + rng.gen_range(0.01..0.5);
            let b = br_point(&f, &z, eps, DEFAULT_TERM_TOL).unwrap();
            assert!(b.distance <= 2.0 * eps.sqrt() + 1e-9);
            assert!(b.distance >= es.distance_to(&z) - 0.3);
            assert!(residual(&f, &b.point).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn scaled_examples() {
        let h = ConvexFn::h(1).unwrap();
        let z = p(1.0, 0.0);
        let s = scaled_refine(&h, &z, 4.0, 4.5, DEFAULT_TERM_TOL).unwrap();
        assert!(s.lhs <= 2.0 * 4.5 + 1e-12);
        assert!(s.lhs <= s.rhs);
        let one = scaled_refine(&h, &z, 1.0, 4.5, DEFAULT_TERM_TOL).unwrap();
        let plain = refine_from_gap(&h, &z, DEFAULT_BETA, DEFAULT_GAMMA, DEFAULT_TERM_TOL).unwrap();
        assert!(one.point.distance(&plain.final_point).unwrap() < 1e-12);
        let dxs: Vec<f64> = [1.0, 10.0, 100.0]
            .iter()
            .map(|a| (scaled_refine(&h, &z, *a, 4.5, DEFAULT_TERM_TOL).unwrap().point.xs()[0] - z.xs()[0]).abs())
            .collect();
        assert!(dxs[0] > dxs[1] && dxs[1] > dxs[2], "{dxs:?}");
        assert!(scaled_refine(&h, &z, 1.0, 4.0, DEFAULT_TERM_TOL).is_err());
    }

    #[test]
    fn ana_examples() {
        let h = ConvexFn::h(1).unwrap();
        let eps: Vec<f64> = (0..12).map(|k| 0.5f64.powi(k)).collect();
        let seq = ana_sequence(&h, &p(1.0, 0.0), &eps, DEFAULT_TERM_TOL).unwrap();
        for a in &seq {
            assert!(a.quad_form <= a.eps + 1e-12);
            assert!(a.quad_form >= -1e-12);
        }
        assert!((seq.last().unwrap().ratio + 1.0).abs() <= 0.05);
        assert!(ana_sequence(&h, &p(0.2, 0.2), &eps, DEFAULT_TERM_TOL).is_err());

        let f = ConvexFn::fenchel_sum(PolyhedralFn::abs()).unwrap();
        let seq = ana_sequence(&f, &p(0.5, 0.0), &eps, DEFAULT_TERM_TOL).unwrap();
        assert!(seq.iter().all(|a| a.quad_form <= a.eps + 1e-9 && a.ratio <= 0.0));
    }

    #[test]
    fn shift_invariance_and_coercivity() {
        let phi = PolyhedralFn::new(
            vec![
                crate::convex_fn::LinearPiece { slope: vec![1.0], offset: 0.0 },
                crate::convex_fn::LinearPiece { slope: vec![-2.0], offset: 1.0 },
            ],
            vec![],
        )
        .unwrap();
        let f = ConvexFn::fenchel_sum(phi).unwrap();
        let a = p(0.3, -0.7);
        let fa = f.shift(&a).unwrap();
        let z = p(1.2, 0.4);
        let t1 = refine_from_gap(&f, &z, DEFAULT_BETA, DEFAULT_GAMMA, DEFAULT_TERM_TOL).unwrap();
        let t2 = refine_from_gap(&fa, &z.sub(&a).unwrap(), DEFAULT_BETA, DEFAULT_GAMMA, DEFAULT_TERM_TOL).unwrap();
        let back = t2.final_point.add(&a).unwrap();
        assert!(back.distance(&t1.final_point).unwrap() < 1e-8);

        // f + h >= |z|^2/2 - |z| |d| - f*(d) for a dual witness d
        let engine = crate::conjugate::ConjugateEngine::default();
        let d = crate::paired::DualPoint::scalar(0.5, 0.25);
        let fd = engine.conjugate_at(&f, &d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let z = p(rng.gen_range(-50.0..50.0), rng.gen_range(-0.9..0.9));
            let lhs = f.eval(&z).unwrap() + 0.5 * z.norm_sq();
            let rhs = 0.5 * z.norm_sq() - z.norm() * d.norm() - fd;
            assert!(lhs >= rhs - 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn schedule_conditions(beta in 1.001..50.0f64, gamma in 2.001..10.0f64, eps in 1e-6..10.0f64) {
            let s = make_schedule(eps, beta, gamma).unwrap();
            prop_assert!(s.q > 0.0 && s.q < 1.0);
            prop_assert!(s.conditions_hold(30));
        }

        #[test]
        fn quad_form_is_nonnegative(a in -5.0..5.0f64, b in -5.0..5.0f64) {
            let d = p(a, b);
            let q = d.norm_sq() + 2.0 * d.coupling();
            prop_assert!(q >= -1e-12);
            prop_assert!((q - (a + b) * (a + b)).abs() <= 1e-9 * (1.0 + q.abs()));
        }
    }
}
