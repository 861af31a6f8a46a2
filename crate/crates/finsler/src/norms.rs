//! Minkowski norms on the plane: positively 1-homogeneous, positive away
//! from the origin, with a positive-definite fundamental tensor
//! g_ij(v) = 1/2 d^2(phi^2)/dv_i dv_j off the origin.
//!
//! Four representations share one interface: Euclidean, Randers
//! (sqrt(v.Av) + b.v), tabulated (support-function samples of the unit ball
//! over uniform angles, cubically interpolated), and general (an arbitrary
//! homogeneous callable). Analytic formulas cover the Euclidean and Randers
//! kinds; everything else goes through finite differences and 1D searches
//! over the indicatrix.

use crate::error::{FinslerError, Result};
use crate::geom::{outer, vec2, Covector, Mat2, Vec2};
use crate::interp::{golden_max, periodic_cubic, periodic_cubic_deriv};
use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

/// Relative finite-difference step for fundamental tensors. The second step
/// of the Richardson pair is 10x this one.
pub const FD_REL_STEP: f64 = 1e-4;
/// A fundamental tensor eigenvalue at or below this threshold counts as a
/// quadratic convexity failure.
pub const TOL_CONVEX: f64 = 1e-6;
/// Bracket width, in radians, at which indicatrix searches stop refining.
pub const TOL_DUAL: f64 = 1e-10;
/// Angular samples used by coarse indicatrix scans and tabulated norms.
pub const N_SUPPORT: usize = 256;

type NormFn = Arc<dyn Fn(Vec2) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum NormKind {
    Euclidean,
    Randers(Randers),
    /// Support-function samples h_k = phi*(u_k) of the unit ball at angles
    /// u_k = (cos, sin)(2 pi k / n).
    Tabulated { support: Arc<Vec<f64>> },
    General { f: NormFn },
}

impl fmt::Debug for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormKind::Euclidean => write!(f, "Euclidean"),
            NormKind::Randers(r) => write!(f, "Randers(a={:?}, b={:?})", r.a, r.b),
            NormKind::Tabulated { support } => write!(f, "Tabulated({} samples)", support.len()),
            NormKind::General { .. } => write!(f, "General(..)"),
        }
    }
}

/// Randers data with the square-root factor of `a` precomputed; the dual
/// formula lives in the transformed frame where `a` is the identity.
#[derive(Debug, Clone, Copy)]
pub struct Randers {
    pub a: Mat2,
    pub b: Vec2,
    s_inv: Mat2,
    b_bar: Vec2,
}

#[derive(Debug, Clone)]
pub struct MinkowskiNorm {
    kind: NormKind,
}

/// Outcome of a quadratic convexity sweep.
#[derive(Debug, Clone, Copy)]
pub struct ConvexityReport {
    pub min_eigenvalue: f64,
    pub witness: Vec2,
    pub pass: bool,
}

impl MinkowskiNorm {
    pub fn euclidean() -> MinkowskiNorm {
        MinkowskiNorm {
            kind: NormKind::Euclidean,
        }
    }

    /// `phi(v) = sqrt(v.Av) + b.v`. Requires `a` symmetric positive definite
    /// and `|b|` less than 1 in the A-inverse norm, otherwise the expression
    /// is not positive on all rays.
    pub fn randers(a: Mat2, b: Vec2) -> Result<MinkowskiNorm> {
        if (a.m12 - a.m21).abs() > 1e-12 * (1.0 + a.m12.abs()) {
            return Err(FinslerError::InvalidArgument(
                "randers matrix must be symmetric".into(),
            ));
        }
        if a.m11 <= 0.0 || a.det() <= 0.0 {
            return Err(FinslerError::InvalidArgument(
                "randers matrix must be positive definite".into(),
            ));
        }
        // 2x2 SPD square root: sqrt(A) = (A + sqrt(det A) I) / sqrt(tr A + 2 sqrt(det A)).
        let s = a.det().sqrt();
        let t = (a.trace() + 2.0 * s).sqrt();
        let root = Mat2 {
            m11: (a.m11 + s) / t,
            m12: a.m12 / t,
            m21: a.m21 / t,
            m22: (a.m22 + s) / t,
        };
        let d = root.det();
        let s_inv = Mat2 {
            m11: root.m22 / d,
            m12: -root.m12 / d,
            m21: -root.m21 / d,
            m22: root.m11 / d,
        };
        let b_bar = s_inv.apply(b);
        if b_bar.norm() >= 1.0 {
            return Err(FinslerError::InvalidArgument(format!(
                "randers drift too strong: |b| in the A-inverse norm is {:.6} >= 1",
                b_bar.norm()
            )));
        }
        Ok(MinkowskiNorm {
            kind: NormKind::Randers(Randers { a, b, s_inv, b_bar }),
        })
    }

    /// Support-function samples of the unit ball over `n` uniform angles.
    pub fn tabulated(support: Vec<f64>) -> Result<MinkowskiNorm> {
        if support.len() < 8 {
            return Err(FinslerError::InvalidArgument(format!(
                "tabulated norm needs at least 8 support samples, got {}",
                support.len()
            )));
        }
        if support.iter().any(|h| !h.is_finite() || *h <= 0.0) {
            return Err(FinslerError::InvalidArgument(
                "support samples must be finite and positive".into(),
            ));
        }
        Ok(MinkowskiNorm {
            kind: NormKind::Tabulated {
                support: Arc::new(support),
            },
        })
    }

    /// Wrap an arbitrary positively homogeneous convex callable. The caller
    /// vouches for homogeneity; the check operations will expose violations.
    pub fn general(f: impl Fn(Vec2) -> f64 + Send + Sync + 'static) -> MinkowskiNorm {
        MinkowskiNorm {
            kind: NormKind::General { f: Arc::new(f) },
        }
    }

    pub fn kind(&self) -> &NormKind {
        &self.kind
    }

    pub fn is_symmetric_kind(&self) -> bool {
        match &self.kind {
            NormKind::Euclidean => true,
            NormKind::Randers(r) => r.b == Vec2::ZERO,
            NormKind::Tabulated { support } => {
                let n = support.len();
                n % 2 == 0 && (0..n / 2).all(|i| support[i] == support[i + n / 2])
            }
            NormKind::General { .. } => false,
        }
    }

    /// The norm value. Zero at the origin; derivative-based operations
    /// reject the origin instead.
    pub fn evaluate(&self, v: Vec2) -> f64 {
        if v == Vec2::ZERO {
            return 0.0;
        }
        match &self.kind {
            NormKind::Euclidean => v.norm(),
            NormKind::Randers(r) => r.a.quad(v).sqrt() + r.b.dot(v),
            NormKind::Tabulated { support } => {
                self.dual_search(support, v, TOL_DUAL).1
            }
            NormKind::General { f } => f(v),
        }
    }

    /// Max of the linear forms given by the cosphere curve c(psi) =
    /// u(psi)/h(psi); coarse scan over the samples plus golden refinement.
    /// Returns (argmax angle, value).
    fn dual_search(&self, support: &[f64], v: Vec2, tol: f64) -> (f64, f64) {
        let n = support.len();
        let objective = |psi: f64| {
            let u = Vec2::from_angle(psi);
            v.dot(u) / periodic_cubic(support, psi / (TAU / n as f64))
        };
        let mut best_k = 0usize;
        let mut best = f64::NEG_INFINITY;
        for (k, h) in support.iter().enumerate() {
            let u = Vec2::from_angle(TAU * k as f64 / n as f64);
            let q = v.dot(u) / h;
            if q > best {
                best = q;
                best_k = k;
            }
        }
        let step = TAU / n as f64;
        let center = best_k as f64 * step;
        golden_max(objective, center - step, center + step, tol)
    }

    /// Fundamental tensor g_ij(v) = 1/2 d^2(phi^2)/dv_i dv_j. Analytic for
    /// the Euclidean and Randers kinds, Richardson-extrapolated central
    /// differences otherwise.
    pub fn fundamental_tensor(&self, v: Vec2) -> Result<Mat2> {
        if v == Vec2::ZERO {
            return Err(FinslerError::InvalidArgument(
                "fundamental tensor is undefined at the zero vector".into(),
            ));
        }
        match &self.kind {
            NormKind::Euclidean => Ok(Mat2::IDENTITY),
            NormKind::Randers(r) => {
                let av = r.a.apply(v);
                let rho = r.a.quad(v).sqrt();
                let phi = rho + r.b.dot(v);
                let ell = av / rho + r.b;
                let second = r
                    .a
                    .scale(1.0 / rho)
                    .add(outer(av, av).scale(-1.0 / (rho * rho * rho)));
                Ok(outer(ell, ell).add(second.scale(phi)))
            }
            _ => Ok(self.fd_tensor(v)),
        }
    }

    /// Central second differences of phi^2/2 at steps h and 10h, combined as
    /// (100 D(h) - D(10h)) / 99 to cancel the leading O(h^2) error.
    fn fd_tensor(&self, v: Vec2) -> Mat2 {
        let h = FD_REL_STEP * v.norm();
        let d1 = self.fd_tensor_single(v, h);
        let d2 = self.fd_tensor_single(v, 10.0 * h);
        d1.scale(100.0 / 99.0).add(d2.scale(-1.0 / 99.0))
    }

    pub(crate) fn fd_tensor_single(&self, v: Vec2, h: f64) -> Mat2 {
        let e = |w: Vec2| {
            let p = self.evaluate(w);
            p * p
        };
        let ex = vec2(h, 0.0);
        let ey = vec2(0.0, h);
        let center = e(v);
        let g11 = (e(v + ex) - 2.0 * center + e(v - ex)) / (2.0 * h * h);
        let g22 = (e(v + ey) - 2.0 * center + e(v - ey)) / (2.0 * h * h);
        let g12 = (e(v + ex + ey) - e(v + ex - ey) - e(v - ex + ey) + e(v - ex - ey))
            / (8.0 * h * h);
        Mat2::symmetric(g11, g12, g22)
    }

    /// Sweep `n_dirs` directions and report the smallest fundamental tensor
    /// eigenvalue. Quadratic convexity holds when it stays above
    /// [`TOL_CONVEX`] (and the norm is positive on every ray).
    pub fn check_quadratic_convexity(&self, n_dirs: usize) -> Result<ConvexityReport> {
        let mut min_eig = f64::INFINITY;
        let mut witness = vec2(1.0, 0.0);
        for k in 0..n_dirs {
            let v = Vec2::from_angle(TAU * k as f64 / n_dirs as f64);
            if self.evaluate(v) <= 0.0 {
                return Ok(ConvexityReport {
                    min_eigenvalue: f64::NEG_INFINITY,
                    witness: v,
                    pass: false,
                });
            }
            let g = self.fundamental_tensor(v)?;
            let (lo, _) = g.sym_eigenvalues();
            if lo < min_eig {
                min_eig = lo;
                witness = v;
            }
        }
        Ok(ConvexityReport {
            min_eigenvalue: min_eig,
            witness,
            pass: min_eig > TOL_CONVEX,
        })
    }

    /// Dual norm phi*(alpha) = sup { alpha(v) : phi(v) = 1 }.
    pub fn dual_norm(&self, alpha: Covector) -> f64 {
        let av = alpha.as_vec();
        if av == Vec2::ZERO {
            return 0.0;
        }
        match &self.kind {
            NormKind::Euclidean => av.norm(),
            NormKind::Randers(r) => randers_dual(r, av).0,
            NormKind::Tabulated { support } => {
                let n = support.len();
                av.norm() * periodic_cubic(support, av.angle() / (TAU / n as f64))
            }
            NormKind::General { .. } => self.scan_dual(av).1,
        }
    }

    /// The indicatrix point where `alpha` attains its supremum; the inverse
    /// Legendre transform when `alpha` is on the cosphere. Errors when the
    /// maximizer is not unique (flat indicatrix arc).
    pub fn dual_maximizer(&self, alpha: Covector) -> Result<Vec2> {
        let av = alpha.as_vec();
        if av == Vec2::ZERO {
            return Err(FinslerError::InvalidArgument(
                "dual maximizer of the zero covector is undefined".into(),
            ));
        }
        match &self.kind {
            NormKind::Euclidean => Ok(av.normalized()),
            NormKind::Randers(r) => Ok(randers_dual(r, av).1),
            NormKind::Tabulated { support } => {
                // Contact point of the support line: h(psi) u + h'(psi) u_perp,
                // evaluated at the angle where the cosphere search peaks.
                let n = support.len();
                let (psi, _) = self.dual_search(support, av, TOL_DUAL);
                let step = TAU / n as f64;
                let h = periodic_cubic(support, psi / step);
                let hp = periodic_cubic_deriv(support, psi / step) / step;
                let u = Vec2::from_angle(psi);
                let v = u * h + u.perp() * hp;
                self.reject_flat_arc(av, v)?;
                Ok(v)
            }
            NormKind::General { .. } => {
                let (psi, _) = self.scan_dual(av);
                let u = Vec2::from_angle(psi);
                let v = u / self.evaluate(u);
                self.reject_flat_arc(av, v)?;
                Ok(v)
            }
        }
    }

    /// A maximizer is only meaningful when the objective curves away from it.
    /// Compare the drop of alpha(v)/phi(v) a few degrees to each side against
    /// the scale expected of a uniformly convex indicatrix.
    fn reject_flat_arc(&self, alpha_vec: Vec2, v: Vec2) -> Result<()> {
        let alpha = Covector::from_vec(alpha_vec);
        let q = |w: Vec2| alpha.apply(w) / self.evaluate(w);
        let peak = q(v);
        let delta = 0.05;
        let rot = |w: Vec2, s: f64| {
            vec2(
                w.x * s.cos() - w.y * s.sin(),
                w.x * s.sin() + w.y * s.cos(),
            )
        };
        let drop = (peak - q(rot(v, delta))).max(peak - q(rot(v, -delta)));
        if drop < 1e-9 * peak.abs().max(1e-300) {
            return Err(FinslerError::Singular(
                "degenerate dual maximizer: indicatrix has a flat arc".into(),
            ));
        }
        Ok(())
    }

    fn scan_dual(&self, av: Vec2) -> (f64, f64) {
        let objective = |psi: f64| {
            let u = Vec2::from_angle(psi);
            av.dot(u) / self.evaluate(u)
        };
        let mut best_k = 0usize;
        let mut best = f64::NEG_INFINITY;
        for k in 0..N_SUPPORT {
            let q = objective(TAU * k as f64 / N_SUPPORT as f64);
            if q > best {
                best = q;
                best_k = k;
            }
        }
        let step = TAU / N_SUPPORT as f64;
        let center = best_k as f64 * step;
        golden_max(objective, center - step, center + step, TOL_DUAL)
    }

    /// Legendre image of the indicatrix point in the direction of `dir`:
    /// the cosphere covector alpha = g_v(v, .) with v = dir/phi(dir).
    pub fn legendre(&self, dir: Vec2) -> Result<Covector> {
        let phi = self.evaluate(dir);
        if !(phi > 0.0) {
            return Err(FinslerError::Singular(format!(
                "norm is not positive along direction {:?}",
                dir
            )));
        }
        let v = dir / phi;
        let alpha = match &self.kind {
            NormKind::Randers(r) => {
                let rho = r.a.quad(v).sqrt();
                Covector::from_vec(r.a.apply(v) / rho + r.b)
            }
            _ => Covector::from_vec(self.fundamental_tensor(v)?.apply(v)),
        };
        Ok(alpha)
    }

    /// Legendre images of `n_dirs` indicatrix points: the covectors
    /// alpha = g_v(v, .) tracing the cosphere once counterclockwise.
    pub fn cosphere(&self, n_dirs: usize) -> Result<Vec<Covector>> {
        let mut out = Vec::with_capacity(n_dirs);
        for k in 0..n_dirs {
            out.push(self.legendre(Vec2::from_angle(TAU * k as f64 / n_dirs as f64))?);
        }
        Ok(out)
    }

    /// Support samples of this norm's unit ball, the payload of the
    /// tabulated representation.
    pub fn support_samples(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| self.dual_norm(Covector::from_vec(Vec2::from_angle(TAU * k as f64 / n as f64))))
            .collect()
    }
}

/// Dual norm and maximizer for Randers data, in closed form. With
/// abar = S^-1 alpha and bbar = S^-1 b (S = sqrt(A)), the dual value solves
/// c^2 (1 - |bbar|^2) + 2 c (abar.bbar) - |abar|^2 = 0.
fn randers_dual(r: &Randers, alpha_vec: Vec2) -> (f64, Vec2) {
    let abar = r.s_inv.apply(alpha_vec);
    let bbar = r.b_bar;
    let one_minus = 1.0 - bbar.norm_sq();
    let ab = abar.dot(bbar);
    let c = ((ab * ab + one_minus * abar.norm_sq()).sqrt() - ab) / one_minus;
    let dir = (abar - bbar * c).normalized();
    let ubar = dir / (1.0 + bbar.dot(dir));
    (c, r.s_inv.apply(ubar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::covector;

    fn quartic() -> MinkowskiNorm {
        MinkowskiNorm::general(|v: Vec2| (v.x.powi(4) + v.y.powi(4)).powf(0.25))
    }

    fn randers_03() -> MinkowskiNorm {
        MinkowskiNorm::randers(Mat2::IDENTITY, vec2(0.3, 0.0)).unwrap()
    }

    #[test]
    fn euclidean_tensor_is_identity() {
        let n = MinkowskiNorm::euclidean();
        let g = n.fundamental_tensor(vec2(0.3, -0.8)).unwrap();
        assert_eq!(g, Mat2::IDENTITY);
        // Same norm through the finite-difference path; the tolerance is the
        // cancellation noise floor of second differences at the chosen step.
        let gen = MinkowskiNorm::general(|v: Vec2| v.norm());
        let g2 = gen.fundamental_tensor(vec2(0.3, -0.8)).unwrap();
        assert!((g2.m11 - 1.0).abs() < 1e-6);
        assert!((g2.m22 - 1.0).abs() < 1e-6);
        assert!(g2.m12.abs() < 1e-6);
    }

    #[test]
    fn tensor_rejects_origin() {
        assert!(matches!(
            MinkowskiNorm::euclidean().fundamental_tensor(Vec2::ZERO),
            Err(FinslerError::InvalidArgument(_))
        ));
        assert_eq!(MinkowskiNorm::euclidean().evaluate(Vec2::ZERO), 0.0);
    }

    #[test]
    fn randers_tensor_matches_fd() {
        let r = randers_03();
        let tilted = MinkowskiNorm::randers(
            Mat2::symmetric(1.4, 0.2, 0.9),
            vec2(0.1, -0.25),
        )
        .unwrap();
        for norm in [&r, &tilted] {
            let fd_view = {
                let clone = norm.clone();
                MinkowskiNorm::general(move |v| clone.evaluate(v))
            };
            for k in 0..10 {
                let v = Vec2::from_angle(TAU * k as f64 / 10.0 + 0.05) * 1.3;
                let g = norm.fundamental_tensor(v).unwrap();
                let g_fd = fd_view.fundamental_tensor(v).unwrap();
                assert!((g.m11 - g_fd.m11).abs() < 1e-5, "{} vs {}", g.m11, g_fd.m11);
                assert!((g.m12 - g_fd.m12).abs() < 1e-5);
                assert!((g.m22 - g_fd.m22).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn randers_rejects_strong_drift() {
        let err = MinkowskiNorm::randers(Mat2::IDENTITY, vec2(1.0, 0.0));
        assert!(matches!(err, Err(FinslerError::InvalidArgument(_))));
        // A scaled matrix rescales the drift bound: b=(1,0) is fine for A=4I.
        assert!(MinkowskiNorm::randers(Mat2::IDENTITY.scale(4.0), vec2(1.0, 0.0)).is_ok());
    }

    #[test]
    fn randers_dual_against_dense_sampling() {
        // Oracle: maximize alpha(v)/phi(v) over one million ray directions.
        let n = randers_03();
        for alpha in [
            covector(1.0, 0.0),
            covector(0.0, 1.0),
            covector(-0.6, 0.8),
            covector(0.5, 0.5),
        ] {
            let mut dense = f64::NEG_INFINITY;
            for k in 0..1_000_000usize {
                let u = Vec2::from_angle(TAU * k as f64 / 1e6);
                dense = dense.max(alpha.apply(u) / n.evaluate(u));
            }
            let analytic = n.dual_norm(alpha);
            assert!(
                (analytic - dense).abs() < 1e-5,
                "alpha {:?}: analytic {} dense {}",
                alpha,
                analytic,
                dense
            );
        }
        // Frozen value for the drift-aligned unit covector: 0.7/0.91 = 10/13.
        let v = n.dual_norm(covector(1.0, 0.0));
        assert!((v - 10.0 / 13.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn dual_maximizer_sits_on_indicatrix() {
        let n = MinkowskiNorm::randers(Mat2::symmetric(1.2, -0.1, 0.8), vec2(0.2, 0.1)).unwrap();
        for k in 0..12 {
            let alpha = Covector::from_vec(Vec2::from_angle(TAU * k as f64 / 12.0) * 0.7);
            let v = n.dual_maximizer(alpha).unwrap();
            assert!((n.evaluate(v) - 1.0).abs() < 1e-10);
            let value = alpha.apply(v);
            assert!((value - n.dual_norm(alpha)).abs() < 1e-10);
        }
    }

    #[test]
    fn quartic_degenerates_on_axis() {
        let q = quartic();
        let g = q.fundamental_tensor(vec2(1.0, 0.0)).unwrap();
        let (lo, _) = g.sym_eigenvalues();
        assert!(lo.abs() < 1e-6, "axis eigenvalue should vanish, got {lo}");
        // Diagonal directions are fine.
        let g_diag = q
            .fundamental_tensor(vec2(1.0, 1.0).normalized())
            .unwrap();
        let (lo_d, _) = g_diag.sym_eigenvalues();
        assert!(lo_d > 0.3, "diagonal eigenvalue {lo_d}");
        let report = q.check_quadratic_convexity(64).unwrap();
        assert!(!report.pass);
        assert!(report.min_eigenvalue <= TOL_CONVEX);
        let w = report.witness.normalized();
        let axis_aligned = w.x.abs() < 1e-9 || w.y.abs() < 1e-9;
        assert!(axis_aligned, "witness should be an axis, got {:?}", w);
    }

    #[test]
    fn smooth_norms_pass_convexity() {
        assert!(MinkowskiNorm::euclidean()
            .check_quadratic_convexity(64)
            .unwrap()
            .pass);
        assert!(randers_03().check_quadratic_convexity(64).unwrap().pass);
    }

    #[test]
    fn cosphere_lies_on_dual_unit_sphere() {
        for n in [
            MinkowskiNorm::euclidean(),
            randers_03(),
            MinkowskiNorm::general(|v: Vec2| {
                (v.x * v.x + 0.5 * v.x * v.y + 0.7 * v.y * v.y).sqrt()
            }),
        ] {
            for alpha in n.cosphere(64).unwrap() {
                let d = n.dual_norm(alpha);
                assert!((d - 1.0).abs() < 1e-6, "phi*(alpha) = {d}");
            }
        }
    }

    #[test]
    fn cosphere_dual_of_dual_recovers_norm() {
        let n = randers_03();
        let pts = n.cosphere(N_SUPPORT).unwrap();
        for k in 0..64 {
            let v = Vec2::from_angle(TAU * k as f64 / 64.0 + 0.01) * 1.7;
            let mut best = f64::NEG_INFINITY;
            for a in &pts {
                best = best.max(a.apply(v));
            }
            let exact = n.evaluate(v);
            assert!(
                (best - exact).abs() < 1e-4 * exact,
                "support reconstruction {} vs {}",
                best,
                exact
            );
        }
    }

    #[test]
    fn tabulated_round_trips_randers() {
        let r = randers_03();
        let tab = MinkowskiNorm::tabulated(r.support_samples(N_SUPPORT)).unwrap();
        for k in 0..32 {
            let v = Vec2::from_angle(TAU * k as f64 / 32.0 + 0.013) * 2.1;
            let a = tab.evaluate(v);
            let b = r.evaluate(v);
            assert!((a - b).abs() < 1e-6 * b, "tabulated {} exact {}", a, b);
            let alpha = Covector::from_vec(Vec2::from_angle(TAU * k as f64 / 32.0) * 0.4);
            let da = tab.dual_norm(alpha);
            let db = r.dual_norm(alpha);
            assert!((da - db).abs() < 1e-6, "dual {} vs {}", da, db);
        }
        assert!(tab.check_quadratic_convexity(64).unwrap().pass);
    }

    #[test]
    fn tabulated_rejects_bad_samples() {
        assert!(MinkowskiNorm::tabulated(vec![1.0; 4]).is_err());
        let mut s = vec![1.0; 64];
        s[10] = -0.5;
        assert!(MinkowskiNorm::tabulated(s).is_err());
    }

    #[test]
    fn homogeneity_of_all_kinds() {
        let kinds: Vec<MinkowskiNorm> = vec![
            MinkowskiNorm::euclidean(),
            randers_03(),
            MinkowskiNorm::tabulated(randers_03().support_samples(N_SUPPORT)).unwrap(),
            quartic(),
        ];
        for n in &kinds {
            for k in 0..16 {
                let v = Vec2::from_angle(TAU * k as f64 / 16.0 + 0.007);
                let base = n.evaluate(v);
                for s in [0.25, 1.0, 3.5, 100.0] {
                    let scaled = n.evaluate(v * s);
                    assert!(
                        (scaled - s * base).abs() < 1e-9 * (1.0 + s * base),
                        "homogeneity violated: {} vs {}",
                        scaled,
                        s * base
                    );
                }
            }
        }
    }
}
