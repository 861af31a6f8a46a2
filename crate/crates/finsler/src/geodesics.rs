//! Norm fields over the plane and their geodesic flow.
//!
//! A `NormField` assigns a Minkowski norm to every point; `FinslerChart`
//! bundles one with a domain radius and provides the dynamics: the spray
//! (acceleration of unit-speed geodesics), fixed-step RK4 shooting, and the
//! two-point distance via shooting with a secant iteration on the launch
//! angle. One integrator serves every metric in the crate - analytic charts
//! and recovered torus metrics alike - so their flows are directly
//! comparable.

use crate::error::{FinslerError, Result};
use crate::geom::{vec2, Mat2, Vec2};
use crate::interp::parabola_vertex;
use crate::norms::MinkowskiNorm;
use std::sync::Arc;

/// Fixed RK4 time step used throughout unless a caller overrides it.
pub const DEFAULT_DT: f64 = 1e-3;
/// Central-difference step for spatial derivatives of the norm field.
pub const SMOOTHNESS_STEP: f64 = 1e-4;
/// Secant iteration cap for boundary-value shooting.
pub const BVP_MAX_ITER: usize = 50;
/// Launch-angle tolerance at which boundary-value shooting stops.
pub const BVP_ANGLE_TOL: f64 = 1e-10;

/// A field of Minkowski norms. `eval` must be positively homogeneous in `v`
/// at every `x`.
pub trait NormField: Send + Sync {
    fn eval(&self, x: Vec2, v: Vec2) -> f64;

    /// The norm frozen at a point, for indicatrix and duality work.
    fn norm_at(&self, x: Vec2) -> MinkowskiNorm;

    /// Fundamental tensor of the frozen norm. The default takes a single
    /// central-difference pass over `eval`; fields with analytic tensors
    /// should override.
    fn tensor(&self, x: Vec2, v: Vec2) -> Mat2 {
        let h = 1e-4 * v.norm();
        let e = |w: Vec2| {
            let p = self.eval(x, w);
            p * p
        };
        hessian_of_half(e, v, h)
    }

    /// True when the field is exactly constant on the ball of the given
    /// radius around `x`; lets the spray short-circuit to zero.
    fn is_flat_near(&self, _x: Vec2, _radius: f64) -> bool {
        false
    }
}

/// Central second differences of f/2 (used for Hessians of squared norms).
pub(crate) fn hessian_of_half(f: impl Fn(Vec2) -> f64, v: Vec2, h: f64) -> Mat2 {
    let ex = vec2(h, 0.0);
    let ey = vec2(0.0, h);
    let center = f(v);
    let g11 = (f(v + ex) - 2.0 * center + f(v - ex)) / (2.0 * h * h);
    let g22 = (f(v + ey) - 2.0 * center + f(v - ey)) / (2.0 * h * h);
    let g12 =
        (f(v + ex + ey) - f(v + ex - ey) - f(v - ex + ey) + f(v - ex - ey)) / (8.0 * h * h);
    Mat2::symmetric(g11, g12, g22)
}

/// The same norm everywhere. Its geodesics are straight lines.
pub struct ConstantField {
    pub norm: MinkowskiNorm,
}

impl NormField for ConstantField {
    fn eval(&self, _x: Vec2, v: Vec2) -> f64 {
        self.norm.evaluate(v)
    }

    fn norm_at(&self, _x: Vec2) -> MinkowskiNorm {
        self.norm.clone()
    }

    fn tensor(&self, _x: Vec2, v: Vec2) -> Mat2 {
        self.norm
            .fundamental_tensor(v)
            .expect("tensor query away from the origin")
    }

    fn is_flat_near(&self, _x: Vec2, _radius: f64) -> bool {
        true
    }
}

/// A base norm scaled by exp(lambda(x)). For Euclidean and Randers bases the
/// frozen norm stays Randers, so tensors remain analytic.
pub struct ConformalField {
    base: MinkowskiNorm,
    lambda: Arc<dyn Fn(Vec2) -> f64 + Send + Sync>,
}

impl ConformalField {
    pub fn new(
        base: MinkowskiNorm,
        lambda: impl Fn(Vec2) -> f64 + Send + Sync + 'static,
    ) -> ConformalField {
        ConformalField {
            base,
            lambda: Arc::new(lambda),
        }
    }

    pub fn lambda_at(&self, x: Vec2) -> f64 {
        (self.lambda)(x)
    }
}

impl NormField for ConformalField {
    fn eval(&self, x: Vec2, v: Vec2) -> f64 {
        (self.lambda)(x).exp() * self.base.evaluate(v)
    }

    fn norm_at(&self, x: Vec2) -> MinkowskiNorm {
        use crate::norms::NormKind;
        let scale = (self.lambda)(x).exp();
        match self.base.kind() {
            NormKind::Euclidean => {
                MinkowskiNorm::randers(Mat2::IDENTITY.scale(scale * scale), Vec2::ZERO)
                    .expect("scaled identity is positive definite")
            }
            NormKind::Randers(r) => {
                MinkowskiNorm::randers(r.a.scale(scale * scale), r.b * scale)
                    .expect("conformal scaling preserves randers validity")
            }
            _ => {
                let base = self.base.clone();
                MinkowskiNorm::general(move |v| scale * base.evaluate(v))
            }
        }
    }

    fn tensor(&self, x: Vec2, v: Vec2) -> Mat2 {
        let scale = (self.lambda)(x).exp();
        match self
            .base
            .fundamental_tensor(v)
        {
            Ok(g) => g.scale(scale * scale),
            Err(_) => Mat2::IDENTITY,
        }
    }
}

/// Norm field from an arbitrary closure; the escape hatch for tests.
pub struct ClosureField {
    f: Arc<dyn Fn(Vec2, Vec2) -> f64 + Send + Sync>,
}

impl ClosureField {
    pub fn new(f: impl Fn(Vec2, Vec2) -> f64 + Send + Sync + 'static) -> ClosureField {
        ClosureField { f: Arc::new(f) }
    }
}

impl NormField for ClosureField {
    fn eval(&self, x: Vec2, v: Vec2) -> f64 {
        (self.f)(x, v)
    }

    fn norm_at(&self, x: Vec2) -> MinkowskiNorm {
        let f = Arc::clone(&self.f);
        MinkowskiNorm::general(move |v| f(x, v))
    }
}

/// A maximal-rank description of one geodesic: samples of (t, x, v) on the
/// integration grid, plus whether integration ran to the requested horizon.
#[derive(Debug, Clone)]
pub struct GeodesicPath {
    pub ts: Vec<f64>,
    pub xs: Vec<Vec2>,
    pub vs: Vec<Vec2>,
    /// False when the path left the chart domain early.
    pub complete: bool,
}

impl GeodesicPath {
    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        *self.ts.last().unwrap()
    }

    /// Cubic Hermite interpolation of the position between stored samples.
    pub fn position(&self, t: f64) -> Vec2 {
        let n = self.ts.len();
        if t <= self.ts[0] {
            return self.xs[0];
        }
        if t >= self.ts[n - 1] {
            return self.xs[n - 1];
        }
        let mut k = match self
            .ts
            .binary_search_by(|probe| probe.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        if k + 1 >= n {
            k = n - 2;
        }
        let h = self.ts[k + 1] - self.ts[k];
        let s = (t - self.ts[k]) / h;
        let (x0, x1) = (self.xs[k], self.xs[k + 1]);
        let (m0, m1) = (self.vs[k] * h, self.vs[k + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        x0 * (2.0 * s3 - 3.0 * s2 + 1.0)
            + m0 * (s3 - 2.0 * s2 + s)
            + x1 * (-2.0 * s3 + 3.0 * s2)
            + m1 * (s3 - s2)
    }
}

/// Detailed result of a boundary-value solve.
#[derive(Debug, Clone, Copy)]
pub struct BvpResult {
    pub value: f64,
    pub launch_angle: f64,
    pub arrival_time: f64,
}

/// A norm field on a disc, with the geodesic machinery.
pub struct FinslerChart {
    field: Arc<dyn NormField>,
    pub domain_radius: f64,
}

impl FinslerChart {
    pub fn new(field: Arc<dyn NormField>, domain_radius: f64) -> FinslerChart {
        FinslerChart {
            field,
            domain_radius,
        }
    }

    pub fn constant(norm: MinkowskiNorm, domain_radius: f64) -> FinslerChart {
        FinslerChart::new(Arc::new(ConstantField { norm }), domain_radius)
    }

    pub fn conformal(
        base: MinkowskiNorm,
        lambda: impl Fn(Vec2) -> f64 + Send + Sync + 'static,
        domain_radius: f64,
    ) -> FinslerChart {
        FinslerChart::new(Arc::new(ConformalField::new(base, lambda)), domain_radius)
    }

    pub fn from_spec(spec: &crate::specs::ChartSpec) -> Result<FinslerChart> {
        let base = spec.base.build()?;
        let chart = match spec.lambda_expr()? {
            None => FinslerChart::constant(base, spec.domain_radius),
            Some(expr) => {
                FinslerChart::conformal(base, move |p| expr.eval(p), spec.domain_radius)
            }
        };
        Ok(chart)
    }

    pub fn field(&self) -> &Arc<dyn NormField> {
        &self.field
    }

    pub fn eval(&self, x: Vec2, v: Vec2) -> f64 {
        self.field.eval(x, v)
    }

    pub fn norm_at(&self, x: Vec2) -> MinkowskiNorm {
        self.field.norm_at(x)
    }

    /// Scale `dir` to the indicatrix at `x`.
    pub fn unit_vector(&self, x: Vec2, dir: Vec2) -> Result<Vec2> {
        let phi = self.field.eval(x, dir);
        if !(phi > 0.0) || !phi.is_finite() {
            return Err(FinslerError::Singular(format!(
                "norm not positive at {:?} along {:?}",
                x, dir
            )));
        }
        Ok(dir / phi)
    }

    /// Geodesic acceleration from the Euler-Lagrange equations of the energy
    /// integral: g(x,v) a = 1/2 grad_x(phi^2) - (v^k dg/dx^k) v. Spatial
    /// derivatives are central differences at [`SMOOTHNESS_STEP`].
    pub fn spray(&self, x: Vec2, v: Vec2) -> Vec2 {
        let h = SMOOTHNESS_STEP;
        if self.field.is_flat_near(x, h) {
            return Vec2::ZERO;
        }
        let ex = vec2(h, 0.0);
        let ey = vec2(0.0, h);
        let sq = |p: Vec2| {
            let n = self.field.eval(p, v);
            n * n
        };
        let grad_e = vec2(
            (sq(x + ex) - sq(x - ex)) / (2.0 * h),
            (sq(x + ey) - sq(x - ey)) / (2.0 * h),
        );
        let gx = self
            .field
            .tensor(x + ex, v)
            .add(self.field.tensor(x - ex, v).scale(-1.0))
            .scale(1.0 / (2.0 * h));
        let gy = self
            .field
            .tensor(x + ey, v)
            .add(self.field.tensor(x - ey, v).scale(-1.0))
            .scale(1.0 / (2.0 * h));
        let drift = gx.scale(v.x).add(gy.scale(v.y)).apply(v);
        let rhs = grad_e * 0.5 - drift;
        let g = self.field.tensor(x, v);
        g.solve(rhs).unwrap_or(Vec2::ZERO)
    }

    fn rk4_step(&self, x: Vec2, v: Vec2, dt: f64) -> (Vec2, Vec2) {
        let a1 = self.spray(x, v);
        let (x2, v2) = (x + v * (0.5 * dt), v + a1 * (0.5 * dt));
        let a2 = self.spray(x2, v2);
        let (x3, v3) = (x + v2 * (0.5 * dt), v + a2 * (0.5 * dt));
        let a3 = self.spray(x3, v3);
        let (x4, v4) = (x + v3 * dt, v + a3 * dt);
        let a4 = self.spray(x4, v4);
        (
            x + (v + v2 * 2.0 + v3 * 2.0 + v4) * (dt / 6.0),
            v + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (dt / 6.0),
        )
    }

    /// Integrate the geodesic with initial state (x0, v0) out to `t_max`
    /// (negative allowed: integrates backward) with fixed step `dt`,
    /// recording every step. Stops early, flagged, on domain exit.
    pub fn shoot(&self, x0: Vec2, v0: Vec2, t_max: f64, dt: f64) -> Result<GeodesicPath> {
        if !(dt > 0.0) {
            return Err(FinslerError::InvalidArgument("dt must be positive".into()));
        }
        let speed = self.field.eval(x0, v0);
        if (speed - 1.0).abs() > 1e-6 {
            return Err(FinslerError::InvalidArgument(format!(
                "initial velocity must be unit: phi = {speed:.9}"
            )));
        }
        let steps = (t_max.abs() / dt).ceil() as usize;
        let sdt = dt.copysign(t_max);
        let mut ts = Vec::with_capacity(steps + 1);
        let mut xs = Vec::with_capacity(steps + 1);
        let mut vs = Vec::with_capacity(steps + 1);
        let (mut x, mut v) = (x0, v0);
        let mut t = 0.0;
        ts.push(t);
        xs.push(x);
        vs.push(v);
        let mut complete = true;
        for k in 0..steps {
            let step = if k + 1 == steps { t_max - t } else { sdt };
            if step == 0.0 {
                break;
            }
            let (nx, nv) = self.rk4_step(x, v, step);
            x = nx;
            v = nv;
            t += step;
            ts.push(t);
            xs.push(x);
            vs.push(v);
            if x.norm() > self.domain_radius {
                complete = false;
                break;
            }
        }
        Ok(GeodesicPath {
            ts,
            xs,
            vs,
            complete,
        })
    }

    /// Forward distance d(x, y): shoot over launch angles, secant on the
    /// signed lateral miss at the closest approach to `y`.
    pub fn distance(&self, x: Vec2, y: Vec2) -> Result<f64> {
        self.distance_detailed(x, y, DEFAULT_DT).map(|r| r.value)
    }

    pub fn distance_detailed(&self, x: Vec2, y: Vec2, dt: f64) -> Result<BvpResult> {
        let chord_vec = y - x;
        if chord_vec.norm() < 1e-14 {
            return Ok(BvpResult {
                value: 0.0,
                launch_angle: 0.0,
                arrival_time: 0.0,
            });
        }
        let chord = self.field.eval(x, chord_vec);
        let dt_eff = dt.min(chord / 50.0).max(1e-7);
        let horizon = 3.0 * chord + 50.0 * dt_eff;
        let probe = |psi: f64| -> Result<(f64, f64, Vec2, Vec2)> {
            // Returns (signed miss, closest-approach t, gamma(t*), v(t*)).
            let v0 = self.unit_vector(x, Vec2::from_angle(psi))?;
            let path = self.shoot_unchecked(x, v0, horizon, dt_eff);
            let mut best_k = 0;
            let mut best = f64::INFINITY;
            for (k, p) in path.xs.iter().enumerate() {
                let d = (*p - y).norm_sq();
                if d < best {
                    best = d;
                    best_k = k;
                }
            }
            let (t_star, p_star, v_star) = if best_k == 0 || best_k + 1 >= path.len() {
                (path.ts[best_k], path.xs[best_k], path.vs[best_k])
            } else {
                let t0 = path.ts[best_k - 1];
                let h = path.ts[best_k] - t0;
                let q0 = (path.xs[best_k - 1] - y).norm_sq();
                let q1 = best;
                let q2 = (path.xs[best_k + 1] - y).norm_sq();
                let t = parabola_vertex(t0, h, q0, q1, q2);
                (t, path.position(t), path.vs[best_k])
            };
            let miss = v_star.normalized().cross(y - p_star);
            Ok((miss, t_star, p_star, v_star))
        };

        let psi_chord = chord_vec.angle();
        let mut psi0 = psi_chord;
        let (mut m0, mut t0, mut p0, _v) = probe(psi0)?;
        if (p0 - y).norm() < 1e-12 {
            return Ok(BvpResult {
                value: t0,
                launch_angle: psi0,
                arrival_time: t0,
            });
        }
        let mut psi1 = psi_chord + 1e-3;
        let (mut m1, mut t1, mut p1, mut v1) = probe(psi1)?;
        for _ in 0..BVP_MAX_ITER {
            if (m1 - m0).abs() < 1e-300 {
                break;
            }
            let mut step = -m1 * (psi1 - psi0) / (m1 - m0);
            step = step.clamp(-0.5, 0.5);
            psi0 = psi1;
            m0 = m1;
            t0 = t1;
            p0 = p1;
            psi1 += step;
            let r = probe(psi1)?;
            m1 = r.0;
            t1 = r.1;
            p1 = r.2;
            v1 = r.3;
            if step.abs() < BVP_ANGLE_TOL {
                break;
            }
        }
        let _ = (t0, p0);
        let residual = (p1 - y).norm();
        if residual > 1e-6 * (1.0 + chord) {
            return Err(FinslerError::Numerical(format!(
                "boundary-value shooting failed: residual {residual:.3e} after {BVP_MAX_ITER} iterations"
            )));
        }
        let _ = v1;
        // Close the remaining gap with a short chord in the local norm.
        let tail = self.field.eval(p1, y - p1);
        Ok(BvpResult {
            value: t1 + tail,
            launch_angle: psi1,
            arrival_time: t1,
        })
    }

    /// Like `shoot` but without the unit-speed precondition; internal probes
    /// normalize themselves.
    fn shoot_unchecked(&self, x0: Vec2, v0: Vec2, t_max: f64, dt: f64) -> GeodesicPath {
        let steps = (t_max.abs() / dt).ceil() as usize;
        let sdt = dt.copysign(t_max);
        let mut ts = Vec::with_capacity(steps + 1);
        let mut xs = Vec::with_capacity(steps + 1);
        let mut vs = Vec::with_capacity(steps + 1);
        let (mut x, mut v) = (x0, v0);
        let mut t = 0.0;
        ts.push(t);
        xs.push(x);
        vs.push(v);
        for k in 0..steps {
            let step = if k + 1 == steps { t_max - t } else { sdt };
            let (nx, nv) = self.rk4_step(x, v, step);
            x = nx;
            v = nv;
            t += step;
            ts.push(t);
            xs.push(x);
            vs.push(v);
        }
        GeodesicPath {
            ts,
            xs,
            vs,
            complete: true,
        }
    }

    /// Simplicity check on the disc of radius `eps` around `center`: from
    /// sampled boundary points, the map from inward launch angle to exit
    /// azimuth must be strictly monotone (geodesics neither refocus nor
    /// cross twice), and boundary-value solves between sampled pairs must
    /// converge.
    pub fn check_simple(&self, center: Vec2, eps: f64) -> Result<bool> {
        if !(eps > 0.0) {
            return Err(FinslerError::InvalidArgument("eps must be positive".into()));
        }
        if eps > 0.5 * self.domain_radius + 1e-12 {
            return Err(FinslerError::Configuration(format!(
                "simplicity check needs eps <= half the domain radius; got eps={eps}, R={}",
                self.domain_radius
            )));
        }
        let n_base = 12;
        let n_fan = 24;
        let dt = (eps / 400.0).min(DEFAULT_DT);
        for i in 0..n_base {
            let beta = std::f64::consts::TAU * i as f64 / n_base as f64;
            let start = center + Vec2::from_angle(beta) * eps;
            let inward = beta + std::f64::consts::PI;
            let mut prev: Option<f64> = None;
            let mut total = 0.0;
            for j in 0..n_fan {
                // Inward cone only: launch angles within +-72 degrees of the
                // inward radial direction.
                let psi = inward + 0.8 * (j as f64 / (n_fan - 1) as f64 - 0.5) * std::f64::consts::PI;
                let v0 = self.unit_vector(start, Vec2::from_angle(psi))?;
                let exit = self.first_exit(start, v0, center, eps, dt)?;
                let azimuth = (exit - center).angle();
                if let Some(p) = prev {
                    let mut d = azimuth - p;
                    while d > std::f64::consts::PI {
                        d -= std::f64::consts::TAU;
                    }
                    while d < -std::f64::consts::PI {
                        d += std::f64::consts::TAU;
                    }
                    if d <= 1e-9 {
                        return Ok(false);
                    }
                    total += d;
                }
                prev = Some(azimuth);
            }
            if total <= 0.0 || total >= std::f64::consts::TAU {
                return Ok(false);
            }
        }
        // Boundary-value solves across the disc must converge.
        for i in 0..4 {
            let beta = std::f64::consts::TAU * (i as f64 + 0.37) / 4.0;
            let a = center + Vec2::from_angle(beta) * (0.8 * eps);
            let b = center - Vec2::from_angle(beta + 0.4) * (0.7 * eps);
            if self.distance(a, b).is_err() {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn first_exit(
        &self,
        x0: Vec2,
        v0: Vec2,
        center: Vec2,
        eps: f64,
        dt: f64,
    ) -> Result<Vec2> {
        let t_cap = 20.0 * eps;
        let steps = (t_cap / dt).ceil() as usize;
        let (mut x, mut v) = (x0, v0);
        let mut entered = false;
        for _ in 0..steps {
            let (nx, nv) = self.rk4_step(x, v, dt);
            let r = (nx - center).norm();
            if r < 0.98 * eps {
                entered = true;
            }
            if entered && r >= eps {
                // Linear refinement of the crossing along the last step.
                let r_prev = (x - center).norm();
                let s = ((eps - r_prev) / (r - r_prev)).clamp(0.0, 1.0);
                return Ok(x + (nx - x) * s);
            }
            x = nx;
            v = nv;
        }
        Err(FinslerError::Numerical(
            "geodesic failed to exit the disc".into(),
        ))
    }
}
