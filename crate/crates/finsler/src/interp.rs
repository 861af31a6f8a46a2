//! Shared interpolation and 1D search primitives: local cubic (Catmull-Rom)
//! interpolation on uniform grids, periodic and clamped, in one and two
//! dimensions, plus golden-section refinement of unimodal maxima.

use crate::geom::{vec2, Vec2};

/// Catmull-Rom basis on one cell. `t` in [0,1], `p` the four surrounding
/// samples. C^1 across cells on a uniform grid.
#[inline]
pub fn cr_value(p: [f64; 4], t: f64) -> f64 {
    let [p0, p1, p2, p3] = p;
    0.5 * (2.0 * p1
        + (p2 - p0) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
        + (3.0 * (p1 - p2) + p3 - p0) * t * t * t)
}

/// Derivative of [`cr_value`] with respect to `t` (per cell, not per unit x).
#[inline]
pub fn cr_deriv(p: [f64; 4], t: f64) -> f64 {
    let [p0, p1, p2, p3] = p;
    0.5 * ((p2 - p0)
        + 2.0 * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t
        + 3.0 * (3.0 * (p1 - p2) + p3 - p0) * t * t)
}

/// Second derivative of [`cr_value`] with respect to `t`.
#[inline]
pub fn cr_deriv2(p: [f64; 4], t: f64) -> f64 {
    let [p0, p1, p2, p3] = p;
    0.5 * (2.0 * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3)
        + 6.0 * (3.0 * (p1 - p2) + p3 - p0) * t)
}

/// Periodic cubic interpolation of uniformly spaced samples. `u` is a real
/// index: sample k lives at u = k, and u wraps modulo `values.len()`.
pub fn periodic_cubic(values: &[f64], u: f64) -> f64 {
    let n = values.len();
    debug_assert!(n >= 4);
    let uf = u.rem_euclid(n as f64);
    let i = uf.floor() as usize % n;
    let t = uf - uf.floor();
    let at = |k: isize| values[((i as isize + k).rem_euclid(n as isize)) as usize];
    cr_value([at(-1), at(0), at(1), at(2)], t)
}

/// Derivative of [`periodic_cubic`] with respect to the real index `u`.
pub fn periodic_cubic_deriv(values: &[f64], u: f64) -> f64 {
    let n = values.len();
    debug_assert!(n >= 4);
    let uf = u.rem_euclid(n as f64);
    let i = uf.floor() as usize % n;
    let t = uf - uf.floor();
    let at = |k: isize| values[((i as isize + k).rem_euclid(n as isize)) as usize];
    cr_deriv([at(-1), at(0), at(1), at(2)], t)
}

/// Second-derivative moments of the C^2 periodic interpolating cubic spline
/// through uniformly spaced samples `f` with node spacing `step`. The spline
/// on [k, k+1] in moment form is
///
///   S = f_k (1-s) + f_{k+1} s
///       + step^2 / 6 * (M_k ((1-s)^3 - (1-s)) + M_{k+1} (s^3 - s)),
///
/// which is C^2 exactly when M solves the cyclic tridiagonal system
/// M_{k-1} + 4 M_k + M_{k+1} = 6 (f_{k-1} - 2 f_k + f_{k+1}) / step^2.
/// Solved by Sherman-Morrison around two Thomas sweeps.
pub fn periodic_spline_moments(f: &[f64], step: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 3, "periodic spline needs at least 3 nodes");
    let s2 = step * step;
    let d: Vec<f64> = (0..n)
        .map(|k| 6.0 * (f[(k + n - 1) % n] - 2.0 * f[k] + f[(k + 1) % n]) / s2)
        .collect();
    // Corner entries (the periodic wrap) are peeled off as gamma * u v^T with
    // u = (gamma, 0, .., 0, 1), v = (1, 0, .., 0, 1/gamma).
    let gamma = -4.0;
    let mut diag = vec![4.0; n];
    diag[0] = 4.0 - gamma;
    diag[n - 1] = 4.0 - 1.0 / gamma;
    let solve = |rhs: &[f64]| -> Vec<f64> {
        let mut sup = vec![0.0; n];
        let mut x = vec![0.0; n];
        sup[0] = 1.0 / diag[0];
        x[0] = rhs[0] / diag[0];
        for i in 1..n {
            let m = diag[i] - sup[i - 1];
            sup[i] = 1.0 / m;
            x[i] = (rhs[i] - x[i - 1]) / m;
        }
        for i in (0..n - 1).rev() {
            let next = x[i + 1];
            x[i] -= sup[i] * next;
        }
        x
    };
    let y = solve(&d);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = 1.0;
    let z = solve(&u);
    let vy = y[0] + y[n - 1] / gamma;
    let vz = z[0] + z[n - 1] / gamma;
    let factor = vy / (1.0 + vz);
    (0..n).map(|i| y[i] - factor * z[i]).collect()
}

/// Uniform rectangular 2D grid: node (i, j) sits at (x0 + i*dx, y0 + j*dy),
/// i in 0..nx, j in 0..ny. The two axes may have different spacing.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridGeom {
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridGeom {
    /// Square grid centered at the origin with `n` nodes per side spanning
    /// [-half, half].
    pub fn square(half: f64, n: usize) -> GridGeom {
        let step = 2.0 * half / (n - 1) as f64;
        GridGeom {
            x0: -half,
            y0: -half,
            dx: step,
            dy: step,
            nx: n,
            ny: n,
        }
    }

    pub fn rect(x0: f64, y0: f64, dx: f64, dy: f64, nx: usize, ny: usize) -> GridGeom {
        GridGeom {
            x0,
            y0,
            dx,
            dy,
            nx,
            ny,
        }
    }

    pub fn node(&self, i: usize, j: usize) -> Vec2 {
        vec2(self.x0 + i as f64 * self.dx, self.y0 + j as f64 * self.dy)
    }

    pub fn x_max(&self) -> f64 {
        self.x0 + (self.nx - 1) as f64 * self.dx
    }

    pub fn y_max(&self) -> f64 {
        self.y0 + (self.ny - 1) as f64 * self.dy
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x0 && p.x <= self.x_max() && p.y >= self.y0 && p.y <= self.y_max()
    }

    /// Fractional indices of a point; unclamped.
    pub fn frac_index(&self, p: Vec2) -> (f64, f64) {
        ((p.x - self.x0) / self.dx, (p.y - self.y0) / self.dy)
    }
}

/// Scalar samples over a [`GridGeom`], row-major with `i` (x-index) varying
/// slowest. Interpolation clamps the stencil at the boundary, so queries must
/// stay inside the geometric domain for full cubic accuracy.
#[derive(Debug, Clone)]
pub struct GridTable {
    pub geom: GridGeom,
    pub values: Vec<f64>,
}

impl GridTable {
    pub fn zeros(geom: GridGeom) -> GridTable {
        GridTable {
            values: vec![0.0; geom.nx * geom.ny],
            geom,
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.geom.ny + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.geom.ny + j] = v;
    }

    #[inline]
    fn clamped(&self, i: isize, j: isize) -> f64 {
        let ic = i.clamp(0, self.geom.nx as isize - 1) as usize;
        let jc = j.clamp(0, self.geom.ny as isize - 1) as usize;
        self.at(ic, jc)
    }

    fn cell(&self, p: Vec2) -> (isize, isize, f64, f64) {
        let (fi, fj) = self.geom.frac_index(p);
        let fi = fi.clamp(0.0, (self.geom.nx - 1) as f64);
        let fj = fj.clamp(0.0, (self.geom.ny - 1) as f64);
        let i = (fi.floor() as isize).min(self.geom.nx as isize - 2);
        let j = (fj.floor() as isize).min(self.geom.ny as isize - 2);
        (i, j, fi - i as f64, fj - j as f64)
    }

    /// Bicubic (separable Catmull-Rom) interpolation.
    pub fn value(&self, p: Vec2) -> f64 {
        let (i, j, tx, ty) = self.cell(p);
        let mut rows = [0.0; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            let jj = j + r as isize - 1;
            *row = cr_value(
                [
                    self.clamped(i - 1, jj),
                    self.clamped(i, jj),
                    self.clamped(i + 1, jj),
                    self.clamped(i + 2, jj),
                ],
                tx,
            );
        }
        cr_value(rows, ty)
    }

    /// Value and spatial gradient in one pass.
    pub fn value_grad(&self, p: Vec2) -> (f64, Vec2) {
        let (i, j, tx, ty) = self.cell(p);
        let mut rows = [0.0; 4];
        let mut drows = [0.0; 4];
        for r in 0..4 {
            let jj = j + r as isize - 1;
            let q = [
                self.clamped(i - 1, jj),
                self.clamped(i, jj),
                self.clamped(i + 1, jj),
                self.clamped(i + 2, jj),
            ];
            rows[r] = cr_value(q, tx);
            drows[r] = cr_deriv(q, tx);
        }
        let v = cr_value(rows, ty);
        let dx = cr_value(drows, ty);
        let dy = cr_deriv(rows, ty);
        (v, vec2(dx / self.geom.dx, dy / self.geom.dy))
    }
}

/// Golden-section search for the maximum of a unimodal function on [a, b].
/// Returns (argmax, max). `tol` bounds the final bracket width.
pub fn golden_max(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    let mid = 0.5 * (lo + hi);
    let fm = f(mid);
    if fm >= f1 && fm >= f2 {
        (mid, fm)
    } else if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Vertex of the parabola through (x0,y0), (x0+h,y1), (x0+2h,y2); used to
/// refine discrete minima of sampled curves. Falls back to the middle sample
/// when the points are collinear.
pub fn parabola_vertex(x0: f64, h: f64, y0: f64, y1: f64, y2: f64) -> f64 {
    let denom = y0 - 2.0 * y1 + y2;
    if denom.abs() < 1e-300 {
        return x0 + h;
    }
    let t = 0.5 * (y0 - y2) / denom;
    x0 + h * (1.0 + t.clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_cubic_reproduces_smooth_samples() {
        let n = 64;
        let vals: Vec<f64> = (0..n)
            .map(|k| (2.0 * std::f64::consts::PI * k as f64 / n as f64).sin())
            .collect();
        let mut worst: f64 = 0.0;
        for m in 0..640 {
            let u = m as f64 * 0.1;
            let exact = (2.0 * std::f64::consts::PI * u / n as f64).sin();
            worst = worst.max((periodic_cubic(&vals, u) - exact).abs());
        }
        assert!(worst < 2e-5, "cubic error {worst}");
    }

    #[test]
    fn periodic_cubic_wraps() {
        let vals = vec![1.0, 2.0, 3.0, 2.0, 1.0, 0.0];
        let a = periodic_cubic(&vals, -0.25);
        let b = periodic_cubic(&vals, 6.0 - 0.25);
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn bicubic_gradient_matches_fd() {
        let geom = GridGeom::rect(-1.0, -1.2, 2.0 / 32.0, 2.4 / 40.0, 33, 41);
        let mut table = GridTable::zeros(geom);
        for i in 0..geom.nx {
            for j in 0..geom.ny {
                let p = geom.node(i, j);
                table.set(i, j, (1.3 * p.x).sin() * (0.7 * p.y).cos() + 0.2 * p.x * p.y);
            }
        }
        let p = vec2(0.21, -0.37);
        let (v, g) = table.value_grad(p);
        let h = 1e-5;
        let gx = (table.value(p + vec2(h, 0.0)) - table.value(p - vec2(h, 0.0))) / (2.0 * h);
        let gy = (table.value(p + vec2(0.0, h)) - table.value(p - vec2(0.0, h))) / (2.0 * h);
        assert!((v - table.value(p)).abs() < 1e-14);
        assert!((g.x - gx).abs() < 1e-7, "{} vs {}", g.x, gx);
        assert!((g.y - gy).abs() < 1e-7);
    }

    #[test]
    fn cr_derivatives_match_fd() {
        let p = [0.3, 1.1, 0.9, -0.4];
        let h = 1e-6;
        for k in 1..10 {
            let t = k as f64 * 0.1;
            let d_fd = (cr_value(p, t + h) - cr_value(p, t - h)) / (2.0 * h);
            let d2_fd = (cr_deriv(p, t + h) - cr_deriv(p, t - h)) / (2.0 * h);
            assert!((cr_deriv(p, t) - d_fd).abs() < 1e-8);
            assert!((cr_deriv2(p, t) - d2_fd).abs() < 1e-8);
        }
    }

    #[test]
    fn golden_finds_quadratic_peak() {
        let (x, v) = golden_max(|t| 3.0 - (t - 0.7) * (t - 0.7), 0.0, 2.0, 1e-12);
        assert!((x - 0.7).abs() < 1e-7);
        assert!((v - 3.0).abs() < 1e-13);
    }

    #[test]
    fn spline_moments_satisfy_cyclic_system() {
        let n = 11;
        let step = 0.37;
        let f: Vec<f64> = (0..n).map(|k| (k as f64 * 1.7).sin() + 0.3 * k as f64 % 2.0).collect();
        let m = periodic_spline_moments(&f, step);
        for k in 0..n {
            let lhs = m[(k + n - 1) % n] + 4.0 * m[k] + m[(k + 1) % n];
            let rhs = 6.0 * (f[(k + n - 1) % n] - 2.0 * f[k] + f[(k + 1) % n]) / (step * step);
            assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()), "row {k}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn spline_moments_approximate_second_derivative() {
        let n = 64;
        let step = std::f64::consts::TAU / n as f64;
        let f: Vec<f64> = (0..n).map(|k| (k as f64 * step).sin()).collect();
        let m = periodic_spline_moments(&f, step);
        for k in 0..n {
            let exact = -(k as f64 * step).sin();
            assert!((m[k] - exact).abs() < 2e-3, "node {k}: {} vs {exact}", m[k]);
        }
    }

    #[test]
    fn spline_moments_of_odd_samples_are_odd() {
        let n = 16;
        let f: Vec<f64> = (0..n)
            .map(|k| {
                let t = k as f64 / n as f64 * std::f64::consts::TAU;
                t.sin() + 0.2 * (3.0 * t).sin()
            })
            .collect();
        let m = periodic_spline_moments(&f, 0.5);
        for k in 0..n / 2 {
            assert!((m[k] + m[k + n / 2]).abs() < 1e-12, "pair {k}");
        }
    }
}
