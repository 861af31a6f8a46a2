//! Enveloping functions: families F(theta, x) of signed distances to the
//! geodesic fan through the origin, one geodesic per launch direction.
//!
//! Every stage of the construction is stored as an exact flat part plus a
//! tabulated correction:
//!
//!   F(theta, x) = <nhat(theta), x> + taper(|x|) * C(theta, x)
//!
//! where nhat(theta) = n(theta)/phi0*(n(theta)) is the co-normal of the flat
//! reference line and C lives on a theta-indexed stack of bicubic tables.
//! The flat part is analytic, so fields are exact wherever the taper
//! vanishes, and the construction stages differ only in which radial cutoffs
//! multiply C.
//!
//! Queries come in two grades. The *exact* grade (`value`, `gradient`,
//! `recover_distance`, `recover_norm`) interpolates C in theta but keeps the
//! flat part analytic; recovered distances maximize one continuous family,
//! which is what makes the triangle inequality hold to roundoff. The
//! *integration* grade (`field_eval`, `field_tensor`) replaces the whole
//! covector family by one periodic cubic spline through the node covectors;
//! the sup over theta becomes a stationarity condition solved by Newton, and
//! both the value and the fundamental tensor
//!
//!   g = a (x) a - phi * (a' (x) a') / (a'' . v)
//!
//! follow from the envelope theorem in closed form. That grade is smooth in
//! (x, v) to machine precision, which the geodesic spray's finite differences
//! require; it deviates from the exact grade only by the theta-interpolation
//! error of the covector curve (about 1e-7 relative at 256 directions).

use crate::error::{FinslerError, Result};
use crate::geodesics::{FinslerChart, GeodesicPath};
use crate::geom::{outer, vec2, Covector, Mat2, Vec2};
use crate::glue::BumpProfile;
use crate::interp::{cr_value, golden_max, periodic_spline_moments, GridGeom, GridTable};
use crate::norms::MinkowskiNorm;
use std::f64::consts::TAU;
use std::sync::{Arc, OnceLock};

/// Default number of tabulated launch directions.
pub const N_THETA: usize = 256;
/// Default correction-table nodes per side.
pub const N_CORR: usize = 65;
/// Default distance-likeness tolerance |phi*(dF) - 1| for blended envelopes.
pub const TOL_DL: f64 = 1e-3;
/// Node window half-width for warm-started sup searches over theta.
const WARM_WINDOW: isize = 14;
/// Newton tolerance (radians) for the contact angle of the spline family.
const CONTACT_TOL: f64 = 1e-12;
/// Integration substeps per tabulated fan cell.
const FAN_SUBSTEPS: usize = 2;

/// Construction stage; decides which radial cutoffs multiply the correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Flat reference only: F = F0 exactly everywhere.
    Flat,
    /// Raw fan tabulation near the patch; correction applied untapered.
    Local,
    /// Correction confined to the 2-eps disc by the chi cutoff.
    Extended,
    /// Chi cutoff times the outer blend profile.
    Blended,
}

/// The tabulated correction C(theta, x), one spatial table per theta node.
#[derive(Debug, Clone)]
pub struct Correction {
    pub geom: GridGeom,
    pub tables: Vec<GridTable>,
}

impl Correction {
    pub fn zeros(geom: GridGeom, n_theta: usize) -> Correction {
        Correction {
            geom,
            tables: (0..n_theta).map(|_| GridTable::zeros(geom)).collect(),
        }
    }

    /// True when every entry is exactly zero, as the flat-input shortcut
    /// produces; such a correction contributes nothing at any stage.
    pub fn is_zero(&self) -> bool {
        self.tables
            .iter()
            .all(|t| t.values.iter().all(|&v| v == 0.0))
    }
}

pub struct EnvelopeField {
    base: MinkowskiNorm,
    n_theta: usize,
    /// Flat co-normals at the theta nodes, precomputed once so node queries,
    /// the exact grade, and the spline grade agree at nodes bit for bit.
    conormals: Vec<Vec2>,
    correction: Option<Arc<Correction>>,
    chi: Option<BumpProfile>,
    blend: Option<BumpProfile>,
    stage: Stage,
    /// Shared integration-grade family for points where the taper vanishes;
    /// position-independent there, so built once on first use.
    flat_slice: OnceLock<Arc<FamilySlice>>,
}

impl EnvelopeField {
    /// The flat enveloping function of a constant norm: signed phi0 distance
    /// to the line through the origin in each fan direction.
    pub fn flat(base: MinkowskiNorm) -> EnvelopeField {
        EnvelopeField::flat_with(base, N_THETA)
    }

    /// [`EnvelopeField::flat`] with an explicit direction count.
    pub fn flat_with(base: MinkowskiNorm, n_theta: usize) -> EnvelopeField {
        EnvelopeField::assemble(base, n_theta, None, None, None, Stage::Flat)
    }

    /// An envelope with an explicit correction applied untapered; used by the
    /// construction pipeline and by tests that inject controlled corruption.
    pub fn with_correction(base: MinkowskiNorm, correction: Correction) -> EnvelopeField {
        let n = correction.tables.len();
        EnvelopeField::assemble(base, n, Some(Arc::new(correction)), None, None, Stage::Local)
    }

    fn assemble(
        base: MinkowskiNorm,
        n_theta: usize,
        correction: Option<Arc<Correction>>,
        chi: Option<BumpProfile>,
        blend: Option<BumpProfile>,
        stage: Stage,
    ) -> EnvelopeField {
        debug_assert!(n_theta >= 8 && n_theta % 2 == 0);
        let conormals = (0..n_theta)
            .map(|i| flat_conormal(&base, TAU * i as f64 / n_theta as f64))
            .collect();
        EnvelopeField {
            base,
            n_theta,
            conormals,
            correction,
            chi,
            blend,
            stage,
            flat_slice: OnceLock::new(),
        }
    }

    pub fn base(&self) -> &MinkowskiNorm {
        &self.base
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn correction(&self) -> Option<&Arc<Correction>> {
        self.correction.as_ref()
    }

    pub fn cutoffs(&self) -> (Option<BumpProfile>, Option<BumpProfile>) {
        (self.chi, self.blend)
    }

    /// A stage variant sharing this field's base and co-normal table.
    pub(crate) fn derive(
        &self,
        correction: Option<Arc<Correction>>,
        chi: Option<BumpProfile>,
        blend: Option<BumpProfile>,
        stage: Stage,
    ) -> EnvelopeField {
        EnvelopeField {
            base: self.base.clone(),
            n_theta: self.n_theta,
            conormals: self.conormals.clone(),
            correction,
            chi,
            blend,
            stage,
            flat_slice: OnceLock::new(),
        }
    }

    /// Rewrite the stored co-normals so node theta + pi is the exact IEEE
    /// negation of node theta; symmetrization relies on this.
    pub(crate) fn enforce_antipodal_conormals(&mut self) {
        let n = self.n_theta;
        for i in 0..n / 2 {
            self.conormals[i + n / 2] = -self.conormals[i];
        }
        self.flat_slice.take();
    }

    /// Radius beyond which F equals the flat reference exactly; 0 for purely
    /// flat fields, infinite while the correction is untapered.
    pub fn support_radius(&self) -> f64 {
        if self.correction.is_none() {
            return 0.0;
        }
        match (self.chi, self.blend) {
            (None, None) => f64::INFINITY,
            (chi, blend) => {
                let a = chi.map_or(f64::INFINITY, |b| b.outer());
                let b = blend.map_or(f64::INFINITY, |b| b.outer());
                a.min(b)
            }
        }
    }

    /// Taper value and gradient at x: the product of the active radial
    /// cutoffs, identically 1 for untapered stages, (0, 0) when no
    /// correction is present at all.
    fn taper(&self, x: Vec2) -> (f64, Vec2) {
        if self.correction.is_none() {
            return (0.0, Vec2::ZERO);
        }
        let rho = x.norm();
        let mut value = 1.0;
        let mut dlog = 0.0;
        for bump in [self.chi, self.blend].into_iter().flatten() {
            let (b, db) = bump.value_deriv(rho);
            if b == 0.0 {
                return (0.0, Vec2::ZERO);
            }
            value *= b;
            dlog += db / b;
        }
        if rho < 1e-300 || dlog == 0.0 {
            return (value, Vec2::ZERO);
        }
        (value, x * (value * dlog / rho))
    }

    fn theta_step(&self) -> f64 {
        TAU / self.n_theta as f64
    }

    /// F at a theta node; the node index wraps.
    pub fn node_value(&self, i: usize, x: Vec2) -> f64 {
        let i = i % self.n_theta;
        let flat = self.conormals[i].dot(x);
        match &self.correction {
            None => flat,
            Some(c) => {
                let (t, _) = self.taper(x);
                if t == 0.0 {
                    flat
                } else {
                    flat + t * c.tables[i].value(x)
                }
            }
        }
    }

    /// d_x F at a theta node.
    pub fn node_gradient(&self, i: usize, x: Vec2) -> Covector {
        let i = i % self.n_theta;
        let flat = self.conormals[i];
        let g = match &self.correction {
            None => flat,
            Some(c) => {
                let (t, dt) = self.taper(x);
                if t == 0.0 && dt == Vec2::ZERO {
                    flat
                } else {
                    let (cv, cg) = c.tables[i].value_grad(x);
                    flat + cg * t + dt * cv
                }
            }
        };
        Covector::from_vec(g)
    }

    /// F(theta, x) for continuous theta: analytic flat part plus a periodic
    /// cubic through the correction tables.
    pub fn value(&self, theta: f64, x: Vec2) -> f64 {
        let flat = flat_conormal(&self.base, theta).dot(x);
        match &self.correction {
            None => flat,
            Some(c) => {
                let (t, _) = self.taper(x);
                if t == 0.0 {
                    flat
                } else {
                    flat + t * self.corr_theta(c, theta, x, false).0
                }
            }
        }
    }

    /// Spatial differential d_x F(theta, x) for continuous theta.
    pub fn gradient(&self, theta: f64, x: Vec2) -> Covector {
        let flat = flat_conormal(&self.base, theta);
        let g = match &self.correction {
            None => flat,
            Some(c) => {
                let (t, dt) = self.taper(x);
                if t == 0.0 && dt == Vec2::ZERO {
                    flat
                } else {
                    let (cv, cg) = self.corr_theta(c, theta, x, true);
                    flat + cg * t + dt * cv
                }
            }
        };
        Covector::from_vec(g)
    }

    /// Correction value (and gradient when `want_grad`) interpolated in theta.
    fn corr_theta(&self, c: &Correction, theta: f64, x: Vec2, want_grad: bool) -> (f64, Vec2) {
        let u = (theta / self.theta_step()).rem_euclid(self.n_theta as f64);
        let i = u.floor() as usize % self.n_theta;
        let t = u - u.floor();
        let mut vals = [0.0; 4];
        let mut gxs = [0.0; 4];
        let mut gys = [0.0; 4];
        for k in 0..4 {
            let idx = (i + self.n_theta + k - 1) % self.n_theta;
            if want_grad {
                let (v, g) = c.tables[idx].value_grad(x);
                vals[k] = v;
                gxs[k] = g.x;
                gys[k] = g.y;
            } else {
                vals[k] = c.tables[idx].value(x);
            }
        }
        let v = cr_value(vals, t);
        if want_grad {
            (v, vec2(cr_value(gxs, t), cr_value(gys, t)))
        } else {
            (v, Vec2::ZERO)
        }
    }

    /// The integration-grade covector family at x: every node covector plus
    /// C^2 spline moments, built once per query point. Geodesic sprays take
    /// finite differences of the tensor in x, so the family must stay C^2 in
    /// theta; a merely C^1 interpolant puts jumps in alpha'' at the nodes
    /// that the 1/h of the difference quotient amplifies into spray spikes.
    fn slice(&self, x: Vec2) -> Arc<FamilySlice> {
        let (tp, dtp) = self.taper(x);
        if tp == 0.0 && dtp == Vec2::ZERO {
            return self
                .flat_slice
                .get_or_init(|| {
                    Arc::new(FamilySlice::new(self.conormals.clone(), self.theta_step()))
                })
                .clone();
        }
        let c = self.correction.as_ref().expect("tapered implies correction");
        let nodes = (0..self.n_theta)
            .map(|i| {
                let (cv, cg) = c.tables[i].value_grad(x);
                self.conormals[i] + cg * tp + dtp * cv
            })
            .collect();
        Arc::new(FamilySlice::new(nodes, self.theta_step()))
    }

    /// Best theta node for d_xF(v), warm-started near the Euclidean angle of
    /// v minus a quarter turn (exact for the flat Euclidean family).
    fn best_node(&self, x: Vec2, v: Vec2) -> (isize, f64) {
        let n = self.n_theta as isize;
        let i0 = ((v.angle() - TAU / 4.0) / self.theta_step()).round() as isize;
        let half = WARM_WINDOW.min(n / 2);
        let mut best = f64::NEG_INFINITY;
        let mut best_k = i0;
        for k in i0 - half..=i0 + half {
            let f = self.node_gradient(k.rem_euclid(n) as usize, x).apply(v);
            if f > best {
                best = f;
                best_k = k;
            }
        }
        if (best_k - i0).abs() >= half && 2 * half + 1 < n {
            // The warm window missed the basin; scan everything once.
            for k in 0..n {
                let f = self.node_gradient(k as usize, x).apply(v);
                if f > best {
                    best = f;
                    best_k = k;
                }
            }
        }
        (best_k, best)
    }

    /// Integration-grade norm value: the enveloped sup over the spline
    /// family. Smooth in (x, v) and exactly 1-homogeneous under doubling.
    pub fn field_eval(&self, x: Vec2, v: Vec2) -> f64 {
        if v == Vec2::ZERO {
            return 0.0;
        }
        let slice = self.slice(x);
        match slice.contact(v) {
            Some((_, a)) => a.dot(v),
            None => slice.best_node(v).1,
        }
    }

    /// Integration-grade fundamental tensor, from the envelope theorem:
    /// g = a (x) a - phi (a' (x) a')/(a'' . v) at the contact angle.
    pub fn field_tensor(&self, x: Vec2, v: Vec2) -> Mat2 {
        let slice = self.slice(x);
        match slice.contact(v) {
            Some((th, a)) => {
                let (_, da, dda) = slice.eval(th);
                let phi = a.dot(v);
                let denom = dda.dot(v);
                outer(a, a).add(outer(da, da).scale(-phi / denom))
            }
            None => Mat2::IDENTITY,
        }
    }

    /// d_F(x, y) = sup over launch directions of F(., y) - F(., x): coarse
    /// node max plus golden refinement of the same continuous family, so the
    /// triangle inequality survives to roundoff.
    pub fn recover_distance(&self, x: Vec2, y: Vec2) -> f64 {
        if x == y {
            return 0.0;
        }
        let mut best_i = 0;
        let mut best = f64::NEG_INFINITY;
        for i in 0..self.n_theta {
            let d = self.node_value(i, y) - self.node_value(i, x);
            if d > best {
                best = d;
                best_i = i;
            }
        }
        let step = self.theta_step();
        let center = best_i as f64 * step;
        let (_, refined) = golden_max(
            |theta| self.value(theta, y) - self.value(theta, x),
            center - step,
            center + step,
            1e-10,
        );
        refined.max(best)
    }

    /// Recovered norm phi_F(x, v) = sup over theta of d_xF_theta(v). Exactly
    /// the base norm wherever the correction is tapered away.
    pub fn recover_norm(&self, x: Vec2, v: Vec2) -> f64 {
        if v == Vec2::ZERO {
            return 0.0;
        }
        let (t, dt) = self.taper(x);
        if t == 0.0 && dt == Vec2::ZERO {
            return self.base.evaluate(v);
        }
        let (k, best) = self.best_node(x, v);
        let step = self.theta_step();
        let center = k as f64 * step;
        let (_, refined) = golden_max(
            |theta| self.gradient(theta, x).apply(v),
            center - step,
            center + step,
            1e-10,
        );
        refined.max(best)
    }

    /// The unit vector calibrated by F_theta at x under the recovered norm:
    /// solves alpha(v) = 1, alpha'(v) = 0, the contact point of the
    /// supporting line on the indicatrix. Gradient flow of F_theta follows
    /// this field.
    pub fn calibrated_vector(&self, theta: f64, x: Vec2) -> Result<Vec2> {
        let (a, da, _) = self.slice(x).eval(theta);
        Mat2 {
            m11: a.x,
            m12: a.y,
            m21: da.x,
            m22: da.y,
        }
        .solve(vec2(1.0, 0.0))
        .ok_or_else(|| FinslerError::Singular("degenerate co-sphere contact".into()))
    }

    /// The indicatrix vector of `norm` calibrated by F_theta at x: the
    /// unique unit vector with d_xF_theta(v) = 1 when F_theta is
    /// distance-like for `norm`.
    pub fn finsler_gradient(&self, theta: f64, x: Vec2, norm: &MinkowskiNorm) -> Result<Vec2> {
        norm.dual_maximizer(self.gradient(theta, x))
    }

    /// Enveloping verification: per grid point, the covector curve
    /// theta -> d_xF must wind once around the origin, turn strictly one
    /// way, and keep a nonvanishing theta derivative; where a reference norm
    /// is known (inside the chart patch, or wherever the taper vanishes) the
    /// covectors must also lie on its dual unit sphere to `tol_dl`.
    pub fn check_enveloping(
        &self,
        chart: Option<&FinslerChart>,
        chart_radius: f64,
        tol_dl: f64,
    ) -> EnvelopingReport {
        let points = self.check_points();
        let mut report = EnvelopingReport {
            dl_violation: 0.0,
            dl_points: 0,
            min_turn_margin: f64::INFINITY,
            min_speed: f64::INFINITY,
            winding_ok: true,
            tol_dl,
            pass: true,
            worst_point: Vec2::ZERO,
        };
        let mut curve: Vec<Vec2> = Vec::with_capacity(self.n_theta);
        for &x in &points {
            curve.clear();
            for i in 0..self.n_theta {
                curve.push(self.node_gradient(i, x).as_vec());
            }
            let mut winding = 0.0;
            for i in 0..self.n_theta {
                let a = curve[i];
                let b = curve[(i + 1) % self.n_theta];
                winding += a.cross(b).atan2(a.dot(b));
            }
            if (winding - TAU).abs() > 1e-6 {
                report.winding_ok = false;
                report.worst_point = x;
            }
            for i in 0..self.n_theta {
                let e1 = curve[(i + 1) % self.n_theta] - curve[i];
                let e2 = curve[(i + 2) % self.n_theta] - curve[(i + 1) % self.n_theta];
                let margin = e1.cross(e2) / (e1.norm() * e2.norm()).max(1e-300);
                if margin < report.min_turn_margin {
                    report.min_turn_margin = margin;
                    if margin <= 0.0 {
                        report.worst_point = x;
                    }
                }
                report.min_speed = report.min_speed.min(e1.norm() / self.theta_step());
            }
            let reference = if x.norm() <= chart_radius {
                chart.map(|c| c.norm_at(x))
            } else if self.taper(x) == (0.0, Vec2::ZERO) {
                Some(self.base.clone())
            } else {
                None
            };
            if let Some(norm) = reference {
                report.dl_points += 1;
                for &alpha in &curve {
                    let d = (norm.dual_norm(Covector::from_vec(alpha)) - 1.0).abs();
                    if d > report.dl_violation {
                        report.dl_violation = d;
                        report.worst_point = x;
                    }
                }
            }
        }
        report.pass = report.winding_ok
            && report.min_turn_margin > 0.0
            && report.min_speed > 0.0
            && report.dl_violation <= tol_dl;
        report
    }

    fn check_points(&self) -> Vec<Vec2> {
        let geom = match &self.correction {
            Some(c) => c.geom,
            // Flat fields are position-independent; a token sweep.
            None => GridGeom::square(1.0, 5),
        };
        let mut pts = Vec::with_capacity(geom.nx * geom.ny);
        for i in 0..geom.nx {
            for j in 0..geom.ny {
                pts.push(geom.node(i, j));
            }
        }
        pts
    }
}

/// One x-slice of the integration-grade covector family: the node covectors
/// alpha_k plus the moments of the C^2 periodic cubic spline through them.
struct FamilySlice {
    step: f64,
    a: Vec<Vec2>,
    m: Vec<Vec2>,
}

impl FamilySlice {
    fn new(a: Vec<Vec2>, step: f64) -> FamilySlice {
        let xs: Vec<f64> = a.iter().map(|c| c.x).collect();
        let ys: Vec<f64> = a.iter().map(|c| c.y).collect();
        let mx = periodic_spline_moments(&xs, step);
        let my = periodic_spline_moments(&ys, step);
        let m = mx.into_iter().zip(my).map(|(x, y)| vec2(x, y)).collect();
        FamilySlice { step, a, m }
    }

    /// alpha(theta) and its first two theta derivatives, in moment form.
    fn eval(&self, theta: f64) -> (Vec2, Vec2, Vec2) {
        let n = self.a.len();
        let u = (theta / self.step).rem_euclid(n as f64);
        let k = u.floor() as usize % n;
        let s = u - u.floor();
        let k1 = (k + 1) % n;
        let (f0, f1) = (self.a[k], self.a[k1]);
        let (m0, m1) = (self.m[k], self.m[k1]);
        let h = self.step;
        let c = 1.0 - s;
        let value =
            f0 * c + f1 * s + (m0 * (c * c * c - c) + m1 * (s * s * s - s)) * (h * h / 6.0);
        let deriv = (f1 - f0) * (1.0 / h)
            + (m1 * (3.0 * s * s - 1.0) - m0 * (3.0 * c * c - 1.0)) * (h / 6.0);
        (value, deriv, m0 * c + m1 * s)
    }

    /// Best node for direction v, warm-started near the Euclidean angle of v
    /// minus a quarter turn (exact for the flat Euclidean family).
    fn best_node(&self, v: Vec2) -> (isize, f64) {
        let n = self.a.len() as isize;
        let i0 = ((v.angle() - TAU / 4.0) / self.step).round() as isize;
        let half = WARM_WINDOW.min(n / 2);
        let mut best = f64::NEG_INFINITY;
        let mut best_k = i0;
        for k in i0 - half..=i0 + half {
            let f = self.a[k.rem_euclid(n) as usize].dot(v);
            if f > best {
                best = f;
                best_k = k;
            }
        }
        if (best_k - i0).abs() >= half && 2 * half + 1 < n {
            // The warm window missed the basin; scan everything once.
            for (k, alpha) in self.a.iter().enumerate() {
                let f = alpha.dot(v);
                if f > best {
                    best = f;
                    best_k = k as isize;
                }
            }
        }
        (best_k, best)
    }

    /// Contact angle for direction v: the theta where alpha(theta) . v is
    /// stationary and maximal. Newton on the exact spline derivatives; None
    /// when the family is locally non-concave there.
    fn contact(&self, v: Vec2) -> Option<(f64, Vec2)> {
        let (k, _) = self.best_node(v);
        let mut th = k as f64 * self.step;
        for _ in 0..30 {
            let (_, da, dda) = self.eval(th);
            let slope = da.dot(v);
            let curv = dda.dot(v);
            if !(curv < 0.0) {
                return None;
            }
            let delta = (-slope / curv).clamp(-self.step, self.step);
            th += delta;
            if delta.abs() < CONTACT_TOL {
                let (a, _, _) = self.eval(th);
                return Some((th, a));
            }
        }
        None
    }
}

/// Per-condition result of the enveloping verification.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EnvelopingReport {
    pub dl_violation: f64,
    pub dl_points: usize,
    pub min_turn_margin: f64,
    pub min_speed: f64,
    pub winding_ok: bool,
    pub tol_dl: f64,
    pub pass: bool,
    #[serde(skip)]
    pub worst_point: Vec2,
}

/// Index of the theta node antipodal to node i.
pub fn antisym_pair_index(i: usize, n_theta: usize) -> usize {
    (i + n_theta / 2) % n_theta
}

/// Co-normal of the flat fan line at direction angle theta: the left normal
/// of e(theta) scaled onto the dual unit sphere, so that <nhat, x> is the
/// signed phi0 distance from the line through the origin to x.
pub fn flat_conormal(base: &MinkowskiNorm, theta: f64) -> Vec2 {
    let n = Vec2::from_angle(theta).perp();
    n / base.dual_norm(Covector::from_vec(n))
}

/// Finite-horizon Busemann value T - d(x, gamma(T)) along a shot ray.
pub fn busemann(chart: &FinslerChart, ray: &GeodesicPath, x: Vec2, horizon: f64) -> Result<f64> {
    let t = horizon.min(ray.end_time());
    let d = chart.distance(x, ray.position(t))?;
    Ok(t - d)
}

/// Busemann values at horizons T and 2T; their gap is the convergence
/// diagnostic for the limit the enveloping construction replaces.
pub fn busemann_pair(
    chart: &FinslerChart,
    ray: &GeodesicPath,
    x: Vec2,
    horizon: f64,
) -> Result<(f64, f64)> {
    Ok((
        busemann(chart, ray, x, horizon)?,
        busemann(chart, ray, x, 2.0 * horizon)?,
    ))
}

/// Geometry of the square the correction is tabulated on: wide enough that
/// the chi cutoff (outer radius 2 eps) dies inside it with a full bicubic
/// stencil to spare.
pub fn correction_geometry(eps: f64, n_corr: usize) -> GridGeom {
    let margin = 6.0 / (n_corr - 1) as f64;
    GridGeom::square(2.0 * eps / (1.0 - margin), n_corr)
}

/// Euclidean radius the fan geodesics must reach to cover the correction
/// square; the feasibility bound for eps selection.
pub fn fan_reach(eps: f64, n_corr: usize) -> f64 {
    2.2 * correction_geometry(eps, n_corr).x_max()
}

/// Build the local enveloping function of a chart: for every launch
/// direction, shoot the spine geodesic through the origin, erect the fan of
/// calibrating transversal geodesics (launched along the dual maximizer of
/// the spine co-normal, so F grows at unit rate along them), and invert the
/// fan map at every correction node to read off F = tau.
pub fn build_envelope(
    chart: &FinslerChart,
    eps: f64,
    n_theta: usize,
    n_corr: usize,
) -> Result<EnvelopeField> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(FinslerError::InvalidArgument(format!(
            "eps must be positive and finite, got {eps}"
        )));
    }
    if n_theta < 8 || n_theta % 2 != 0 {
        return Err(FinslerError::InvalidArgument(format!(
            "need an even number of fan directions, at least 8, got {n_theta}"
        )));
    }
    if n_corr < 9 || n_corr % 2 == 0 {
        return Err(FinslerError::InvalidArgument(format!(
            "need an odd correction grid of at least 9 nodes per side, got {n_corr}"
        )));
    }
    let base = chart.norm_at(Vec2::ZERO);
    let geom = correction_geometry(eps, n_corr);
    if chart.field().is_flat_near(Vec2::ZERO, fan_reach(eps, n_corr)) {
        // Constant norms: geodesics are straight lines and the signed
        // distance to a line through the origin is the flat form exactly.
        return Ok(EnvelopeField::with_correction(
            base,
            Correction::zeros(geom, n_theta),
        ));
    }
    use rayon::prelude::*;
    let tables: Result<Vec<GridTable>> = (0..n_theta)
        .into_par_iter()
        .map(|i| {
            let theta = TAU * i as f64 / n_theta as f64;
            let fan = FanPatch::build(chart, theta, geom.x_max())?;
            fan.correction_table(&base, theta, geom)
        })
        .collect();
    Ok(EnvelopeField::with_correction(
        base,
        Correction {
            geom,
            tables: tables?,
        },
    ))
}

/// One direction's geodesic fan on a rectangular (s, tau) grid: s is arc
/// parameter along the spine, tau arc parameter along the transversal
/// through spine point s, so F(fan(s, tau)) = tau by calibration.
struct FanPatch {
    xs: GridTable,
    ys: GridTable,
    /// Origin-frame columns (spine tangent, transversal) for initial guesses.
    frame: Mat2,
}

impl FanPatch {
    fn build(chart: &FinslerChart, theta: f64, half_width: f64) -> Result<FanPatch> {
        let reach = 2.2 * half_width;
        let h = half_width / 32.0;
        let dt = h / FAN_SUBSTEPS as f64;
        let v0 = chart.unit_vector(Vec2::ZERO, Vec2::from_angle(theta))?;

        // Spine through the origin, clipped at Euclidean radius `reach`.
        // Exiting the chart before spanning the patch means eps was too
        // ambitious for this chart.
        let mut fwd: Vec<(Vec2, Vec2)> = Vec::new();
        let mut bwd: Vec<(Vec2, Vec2)> = Vec::new();
        for dir in [1.0f64, -1.0] {
            let (mut x, mut v) = (Vec2::ZERO, v0);
            let side = if dir > 0.0 { &mut fwd } else { &mut bwd };
            loop {
                for _ in 0..FAN_SUBSTEPS {
                    (x, v) = rk4(chart, x, v, dt * dir);
                }
                if x.norm() > chart.domain_radius {
                    return Err(FinslerError::Configuration(format!(
                        "fan spine left the chart domain before spanning the patch \
                         (|x| = {:.3} > {:.3}); decrease eps",
                        x.norm(),
                        chart.domain_radius
                    )));
                }
                side.push((x, v));
                if x.norm() >= reach || side.len() >= 240 {
                    break;
                }
            }
        }
        let neg = bwd.len();
        let mut spine: Vec<(Vec2, Vec2)> = Vec::with_capacity(neg + 1 + fwd.len());
        spine.extend(bwd.iter().rev());
        spine.push((Vec2::ZERO, v0));
        spine.extend(fwd.iter());

        // Transversal launch data along the spine: left co-normal scaled to
        // the local dual sphere, then its dual maximizer.
        let mut launches = Vec::with_capacity(spine.len());
        let mut slowest = f64::INFINITY;
        for &(q, u) in &spine {
            let norm = chart.norm_at(q);
            let n = u.perp();
            let alpha = Covector::from_vec(n) * (1.0 / norm.dual_norm(Covector::from_vec(n)));
            let w = norm.dual_maximizer(alpha)?;
            slowest = slowest.min(w.norm());
            launches.push((q, w));
        }
        let t_span = reach / slowest.max(1e-6);
        let m = (t_span / h).ceil().max(4.0) as usize;
        let h_tau = t_span / m as f64;
        let dt_tau = h_tau / FAN_SUBSTEPS as f64;

        let geom = GridGeom::rect(-(neg as f64) * h, -t_span, h, h_tau, spine.len(), 2 * m + 1);
        let mut xs = GridTable::zeros(geom);
        let mut ys = GridTable::zeros(geom);
        for (k, &(q, w)) in launches.iter().enumerate() {
            xs.set(k, m, q.x);
            ys.set(k, m, q.y);
            for dir in [1.0f64, -1.0] {
                let (mut x, mut v) = (q, w);
                for j in 1..=m {
                    for _ in 0..FAN_SUBSTEPS {
                        (x, v) = rk4(chart, x, v, dt_tau * dir);
                    }
                    let jj = (m as isize + dir as isize * j as isize) as usize;
                    xs.set(k, jj, x.x);
                    ys.set(k, jj, x.y);
                }
            }
        }
        let w0 = launches[neg].1;
        Ok(FanPatch {
            xs,
            ys,
            frame: Mat2 {
                m11: v0.x,
                m12: w0.x,
                m21: v0.y,
                m22: w0.y,
            },
        })
    }

    /// Invert fan(s, tau) = x at every node of `geom` by warm-started Newton
    /// on the bicubic fan map; the correction is tau minus the flat signed
    /// distance.
    fn correction_table(
        &self,
        base: &MinkowskiNorm,
        theta: f64,
        geom: GridGeom,
    ) -> Result<GridTable> {
        let nhat = flat_conormal(base, theta);
        let mut out = GridTable::zeros(geom);
        let mut row_seed: Option<Vec2> = None;
        for i in 0..geom.nx {
            let mut guess = row_seed;
            for j in 0..geom.ny {
                let target = geom.node(i, j);
                let start = guess
                    .unwrap_or_else(|| self.frame.solve(target).unwrap_or(Vec2::ZERO));
                let st = self.invert(target, start)?;
                guess = Some(st);
                if j == 0 {
                    row_seed = Some(st);
                }
                out.set(i, j, st.y - nhat.dot(target));
            }
        }
        Ok(out)
    }

    fn invert(&self, target: Vec2, start: Vec2) -> Result<Vec2> {
        let g = self.xs.geom;
        let mut st = vec2(
            start.x.clamp(g.x0, g.x_max()),
            start.y.clamp(g.y0, g.y_max()),
        );
        for _ in 0..40 {
            let (fx, gx) = self.xs.value_grad(st);
            let (fy, gy) = self.ys.value_grad(st);
            let r = vec2(fx - target.x, fy - target.y);
            if r.norm() < 1e-12 * (1.0 + target.norm()) {
                return Ok(st);
            }
            let jac = Mat2 {
                m11: gx.x,
                m12: gx.y,
                m21: gy.x,
                m22: gy.y,
            };
            let step = jac
                .solve(-r)
                .ok_or_else(|| FinslerError::Numerical("fan map Jacobian is singular".into()))?;
            st = st + step;
            st.x = st.x.clamp(g.x0, g.x_max());
            st.y = st.y.clamp(g.y0, g.y_max());
        }
        Err(FinslerError::Numerical(format!(
            "fan inversion did not converge at ({:.4}, {:.4})",
            target.x, target.y
        )))
    }
}

fn rk4(chart: &FinslerChart, x: Vec2, v: Vec2, dt: f64) -> (Vec2, Vec2) {
    let a1 = chart.spray(x, v);
    let (x2, v2) = (x + v * (0.5 * dt), v + a1 * (0.5 * dt));
    let a2 = chart.spray(x2, v2);
    let (x3, v3) = (x + v2 * (0.5 * dt), v + a2 * (0.5 * dt));
    let a3 = chart.spray(x3, v3);
    let (x4, v4) = (x + v3 * dt, v + a3 * dt);
    let a4 = chart.spray(x4, v4);
    (
        x + (v + v2 * 2.0 + v3 * 2.0 + v4) * (dt / 6.0),
        v + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (dt / 6.0),
    )
}
