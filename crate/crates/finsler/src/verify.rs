//! Certification suites for constructed torus metrics: conjugate-point scans
//! along seeded geodesics, calibration and minimality checks on gradient-flow
//! curves, isometry spot checks against the source chart, and symmetry
//! sweeps. Each suite returns plain report entries; a report serializes to
//! JSON and renders as a text table, and its overall verdict is the
//! conjunction of the entry verdicts.

use crate::envelope::EnvelopeField;
use crate::error::{FinslerError, Result};
use crate::geodesics::{FinslerChart, GeodesicPath};
use crate::geom::{vec2, Vec2};
use crate::glue::RecoveredMetric;
use crate::rng::XorShift64Star;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;

/// Angular opening of the launch variation that seeds the Jacobi field.
pub const VARIATION_DELTA: f64 = 1e-4;
/// Time offset realizing the basepoint variation along the flow.
pub const BASEPOINT_DELTA: f64 = 1e-4;
/// Determinant roots at or below this time are the trivial zero at t = 0.
pub const T_MIN: f64 = 1e-2;

/// Allowed drift of F(theta, x(t)) - t along a calibrated curve.
pub const CALIBRATION_TOL: f64 = 1e-3;
/// Allowed gap between curve span and the boundary-value distance.
pub const MINIMALITY_TOL: f64 = 2e-3;
/// Relative norm agreement on the original patch.
pub const ISOMETRY_INTERIOR_TOL: f64 = 1e-3;
/// Relative norm agreement on the flat collar, where the taper is exactly
/// zero and recovery reduces to the reference norm.
pub const ISOMETRY_EXTERIOR_TOL: f64 = 1e-10;
/// Absolute symmetry defect allowed for distances and norms.
pub const SYMMETRY_TOL: f64 = 1e-6;

const FLOW_SPAN: f64 = 0.35;
const FLOW_DT: f64 = 1e-3;
const FLOW_CHECKPOINTS: usize = 7;

/// One named check: the worst violation seen, the bar it had to clear, and
/// human-readable context for the worst offender when it failed.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationEntry {
    pub name: String,
    pub max_violation: f64,
    pub threshold: f64,
    pub pass: bool,
    pub witnesses: Vec<String>,
}

impl VerificationEntry {
    pub fn new(
        name: &str,
        max_violation: f64,
        threshold: f64,
        witnesses: Vec<String>,
    ) -> VerificationEntry {
        VerificationEntry {
            name: name.to_string(),
            // NaN must not pass; `<=` already rejects it.
            pass: max_violation <= threshold,
            max_violation,
            threshold,
            witnesses,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerificationReport {
    pub entries: Vec<VerificationEntry>,
    pub pass: bool,
}

impl VerificationReport {
    pub fn new() -> VerificationReport {
        VerificationReport {
            entries: Vec::new(),
            pass: true,
        }
    }

    pub fn push(&mut self, entry: VerificationEntry) {
        self.pass = self.pass && entry.pass;
        self.entries.push(entry);
    }

    pub fn extend(&mut self, entries: impl IntoIterator<Item = VerificationEntry>) {
        for e in entries {
            self.push(e);
        }
    }

    /// Plain table, one line per entry, witnesses indented underneath.
    pub fn to_text(&self) -> String {
        let width = self
            .entries
            .iter()
            .map(|e| e.name.len())
            .max()
            .unwrap_or(0)
            .max("check".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>12}  {:>12}  status",
            "check", "violation", "threshold"
        );
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:<width$}  {:>12.3e}  {:>12.3e}  {}",
                e.name,
                e.max_violation,
                e.threshold,
                if e.pass { "PASS" } else { "FAIL" }
            );
            for w in &e.witnesses {
                let _ = writeln!(out, "{:width$}    witness: {w}", "");
            }
        }
        let _ = writeln!(out, "overall: {}", if self.pass { "PASS" } else { "FAIL" });
        out
    }
}

/// First conjugate time along the geodesic from `x0` at launch angle
/// `theta0`, or None when none occurs on (T_MIN, t_max].
///
/// Two variation fields are bracketed against each other: the launch-angle
/// difference quotient (a Jacobi field vanishing at t = 0) and the basepoint
/// shift along the flow, realized as a time offset of the central path (the
/// velocity field, up to O(delta^2)). Their cross-determinant vanishes
/// exactly where the angle field returns to the flow line, so a sign change
/// brackets a conjugate point. The time-translation realization keeps the
/// second field free of time-rescaling components, which would otherwise
/// plant a spurious root at t = -1/b for a rescaling weight b.
pub fn conjugate_scan(
    chart: &FinslerChart,
    x0: Vec2,
    theta0: f64,
    t_max: f64,
    dt: f64,
) -> Result<Option<f64>> {
    conjugate_scan_with_delta(chart, x0, theta0, t_max, dt, VARIATION_DELTA)
}

fn conjugate_scan_with_delta(
    chart: &FinslerChart,
    x0: Vec2,
    theta0: f64,
    t_max: f64,
    dt: f64,
    delta: f64,
) -> Result<Option<f64>> {
    let launch = |th: f64| -> Result<GeodesicPath> {
        let v0 = chart.unit_vector(x0, Vec2::from_angle(th))?;
        let path = chart.shoot(x0, v0, t_max, dt)?;
        if !path.complete {
            return Err(FinslerError::Numerical(format!(
                "geodesic from ({:.4}, {:.4}) at angle {:.4} left the domain before t = {:.4}",
                x0.x, x0.y, th, t_max
            )));
        }
        Ok(path)
    };
    let center = launch(theta0)?;
    let plus = launch(theta0 + delta)?;
    let minus = launch(theta0 - delta)?;
    let det_at = |t: f64| -> f64 {
        let j_angle = (plus.position(t) - minus.position(t)) * (0.5 / delta);
        let j_flow = (center.position(t + BASEPOINT_DELTA)
            - center.position(t - BASEPOINT_DELTA))
            * (0.5 / BASEPOINT_DELTA);
        j_angle.cross(j_flow)
    };
    let n = center.len().min(plus.len()).min(minus.len());
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..n {
        let t = center.ts[i];
        // position() clamps beyond the recorded span; stay a basepoint
        // offset short of the end so the flow difference stays centered.
        if t <= T_MIN || t + BASEPOINT_DELTA > center.end_time() {
            continue;
        }
        let d = det_at(t);
        if let Some((tp, dp)) = prev {
            if d == 0.0 || (d < 0.0) != (dp < 0.0) {
                return Ok(Some(refine_root(&det_at, tp, dp, t, d)));
            }
        }
        prev = Some((t, d));
    }
    Ok(None)
}

/// One bisection of the bracket, then a secant placement inside whichever
/// half still brackets. Resolves the root to a fraction of a grid step.
fn refine_root(det: &dyn Fn(f64) -> f64, t_lo: f64, d_lo: f64, t_hi: f64, d_hi: f64) -> f64 {
    let tm = 0.5 * (t_lo + t_hi);
    let dm = det(tm);
    let (a, da, b, db) = if dm == 0.0 {
        return tm;
    } else if (dm < 0.0) != (d_lo < 0.0) {
        (t_lo, d_lo, tm, dm)
    } else {
        (tm, dm, t_hi, d_hi)
    };
    if db == da {
        return 0.5 * (a + b);
    }
    (a - da * (b - a) / (db - da)).clamp(t_lo, t_hi)
}

/// Scan seeded random launches from the fundamental square
/// [-half_width, half_width]^2 out to `t_max`. Passes iff no scan finds a
/// conjugate time; the violation is the fraction of horizon remaining past
/// the first conjugate time found. A scan that errors fails the entry with
/// the error as witness.
///
/// Samples are drawn sequentially from the seed, then scanned in parallel;
/// the first hit in sample order is reported, so the entry is reproducible
/// for a fixed seed regardless of thread count.
pub fn no_conjugate_points_suite(
    chart: &FinslerChart,
    half_width: f64,
    n_geodesics: usize,
    t_max: f64,
    dt: f64,
    seed: u64,
) -> VerificationEntry {
    let mut rng = XorShift64Star::new(seed);
    let samples: Vec<(Vec2, f64)> = (0..n_geodesics)
        .map(|_| {
            let x = vec2(
                rng.uniform(-half_width, half_width),
                rng.uniform(-half_width, half_width),
            );
            (x, rng.angle())
        })
        .collect();
    let hit = samples
        .par_iter()
        .find_map_first(
            |&(x0, th)| match conjugate_scan(chart, x0, th, t_max, dt) {
                Ok(None) => None,
                Ok(Some(t)) => Some((
                    (t_max - t) / t_max,
                    format!(
                        "conjugate time {:.4} before horizon {:.4} from ({:.4}, {:.4}) at angle {:.4}",
                        t, t_max, x0.x, x0.y, th
                    ),
                )),
                Err(e) => Some((
                    1.0,
                    format!(
                        "scan from ({:.4}, {:.4}) at angle {:.4} failed: {}",
                        x0.x, x0.y, th, e
                    ),
                )),
            },
        );
    let (violation, witnesses) = match hit {
        None => (0.0, Vec::new()),
        Some((v, w)) => (v, vec![w]),
    };
    VerificationEntry::new("no-conjugate-points", violation, 0.0, witnesses)
}

/// Integrate seeded calibrated curves and check the two properties that make
/// them useful: F(theta, .) grows at unit rate along them, and their spans
/// realize the torus distance between their endpoints (checked against the
/// boundary-value solver on the recovered chart).
pub fn calibration_suite(
    envelope: &EnvelopeField,
    metric: &RecoveredMetric,
    n_curves: usize,
    seed: u64,
) -> Result<[VerificationEntry; 2]> {
    let chart = metric.chart();
    let mut rng = XorShift64Star::new(seed);
    let samples: Vec<(Vec2, f64)> = (0..n_curves)
        .map(|_| {
            let x = vec2(
                rng.uniform(-metric.l, metric.l),
                rng.uniform(-metric.l, metric.l),
            );
            (x, rng.angle())
        })
        .collect();
    let per_curve = samples
        .par_iter()
        .map(|&(start, theta)| -> Result<(f64, f64)> {
            let f_start = envelope.value(theta, start);
            let steps = (FLOW_SPAN / FLOW_DT).round() as usize;
            let check_every = (steps / FLOW_CHECKPOINTS).max(1);
            let mut x = start;
            let mut worst_drift = 0.0f64;
            for k in 0..steps {
                let v1 = envelope.calibrated_vector(theta, x)?;
                let v2 = envelope.calibrated_vector(theta, x + v1 * (0.5 * FLOW_DT))?;
                x = x + v2 * FLOW_DT;
                if (k + 1) % check_every == 0 || k + 1 == steps {
                    let t = (k + 1) as f64 * FLOW_DT;
                    worst_drift = worst_drift.max((envelope.value(theta, x) - f_start - t).abs());
                }
            }
            let bvp = chart.distance(start, x)?;
            Ok((worst_drift, (bvp - FLOW_SPAN).abs()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut worst_cal = (0.0f64, 0usize);
    let mut worst_min = (0.0f64, 0usize);
    for (i, &(c, m)) in per_curve.iter().enumerate() {
        if c > worst_cal.0 {
            worst_cal = (c, i);
        }
        if m > worst_min.0 {
            worst_min = (m, i);
        }
    }
    let describe = |i: usize| {
        let (x, th) = samples[i];
        vec![format!(
            "curve from ({:.4}, {:.4}) along theta = {:.4}",
            x.x, x.y, th
        )]
    };
    let cal_w = if worst_cal.0 > CALIBRATION_TOL {
        describe(worst_cal.1)
    } else {
        Vec::new()
    };
    let min_w = if worst_min.0 > MINIMALITY_TOL {
        describe(worst_min.1)
    } else {
        Vec::new()
    };
    Ok([
        VerificationEntry::new("calibration-identity", worst_cal.0, CALIBRATION_TOL, cal_w),
        VerificationEntry::new("minimal-geodesic", worst_min.0, MINIMALITY_TOL, min_w),
    ])
}

/// Spot-check that the recovered norm reproduces the source chart on the
/// patch and collapses to the flat reference outside the blend region.
/// `chart` must be the basepoint-normalized source.
pub fn isometry_suite(
    metric: &RecoveredMetric,
    chart: &FinslerChart,
    n_samples: usize,
    seed: u64,
) -> [VerificationEntry; 2] {
    let mut rng = XorShift64Star::new(seed);
    let base = metric.envelope().base().clone();
    let mut interior = (0.0f64, Vec::new());
    let mut exterior = (0.0f64, Vec::new());
    for _ in 0..n_samples {
        let x = loop {
            let p = vec2(
                rng.uniform(-metric.eps, metric.eps),
                rng.uniform(-metric.eps, metric.eps),
            );
            if p.norm() < metric.eps {
                break p;
            }
        };
        let v = Vec2::from_angle(rng.angle()) * rng.uniform(0.5, 2.0);
        let want = chart.eval(x, v);
        let rel = (metric.norm(x, v) - want).abs() / want;
        if rel > interior.0 {
            interior = (
                rel,
                vec![format!(
                    "x = ({:.4}, {:.4}), v at angle {:.4}",
                    x.x,
                    x.y,
                    v.angle()
                )],
            );
        }
        let y = loop {
            let p = vec2(
                rng.uniform(-metric.l, metric.l),
                rng.uniform(-metric.l, metric.l),
            );
            if p.norm() > metric.r {
                break p;
            }
        };
        let want_flat = base.evaluate(v);
        let rel_flat = (metric.norm(y, v) - want_flat).abs() / want_flat;
        if rel_flat > exterior.0 {
            exterior = (
                rel_flat,
                vec![format!(
                    "x = ({:.4}, {:.4}), v at angle {:.4}",
                    y.x,
                    y.y,
                    v.angle()
                )],
            );
        }
    }
    let interior_w = if interior.0 > ISOMETRY_INTERIOR_TOL {
        interior.1
    } else {
        Vec::new()
    };
    let exterior_w = if exterior.0 > ISOMETRY_EXTERIOR_TOL {
        exterior.1
    } else {
        Vec::new()
    };
    [
        VerificationEntry::new(
            "isometry-interior",
            interior.0,
            ISOMETRY_INTERIOR_TOL,
            interior_w,
        ),
        VerificationEntry::new(
            "isometry-exterior",
            exterior.0,
            ISOMETRY_EXTERIOR_TOL,
            exterior_w,
        ),
    ]
}

/// The half of the isometry check that needs no source chart: outside D_r
/// the recovered norm must be the flat reference exactly. Used when
/// verifying an artifact on its own.
pub fn flat_collar_suite(metric: &RecoveredMetric, n_samples: usize, seed: u64) -> VerificationEntry {
    let mut rng = XorShift64Star::new(seed);
    let base = metric.envelope().base().clone();
    let mut worst = (0.0f64, Vec::new());
    for _ in 0..n_samples {
        let y = loop {
            let p = vec2(
                rng.uniform(-metric.l, metric.l),
                rng.uniform(-metric.l, metric.l),
            );
            if p.norm() > metric.r {
                break p;
            }
        };
        let v = Vec2::from_angle(rng.angle()) * rng.uniform(0.5, 2.0);
        let want = base.evaluate(v);
        let rel = (metric.norm(y, v) - want).abs() / want;
        if rel > worst.0 {
            worst = (
                rel,
                vec![format!(
                    "x = ({:.4}, {:.4}), v at angle {:.4}",
                    y.x,
                    y.y,
                    v.angle()
                )],
            );
        }
    }
    let w = if worst.0 > ISOMETRY_EXTERIOR_TOL {
        worst.1
    } else {
        Vec::new()
    };
    VerificationEntry::new("isometry-exterior", worst.0, ISOMETRY_EXTERIOR_TOL, w)
}

/// Check reversibility of a metric built in symmetric mode: distances agree
/// both ways and the norm is even in the velocity.
pub fn symmetry_suite(
    metric: &RecoveredMetric,
    n_samples: usize,
    seed: u64,
) -> [VerificationEntry; 2] {
    let mut rng = XorShift64Star::new(seed);
    let mut dist = (0.0f64, Vec::new());
    let mut norm = (0.0f64, Vec::new());
    for _ in 0..n_samples {
        let x = vec2(
            rng.uniform(-metric.l, metric.l),
            rng.uniform(-metric.l, metric.l),
        );
        let y = vec2(
            rng.uniform(-metric.l, metric.l),
            rng.uniform(-metric.l, metric.l),
        );
        let gap = (metric.distance(x, y) - metric.distance(y, x)).abs();
        if gap > dist.0 {
            dist = (
                gap,
                vec![format!(
                    "x = ({:.4}, {:.4}), y = ({:.4}, {:.4})",
                    x.x, x.y, y.x, y.y
                )],
            );
        }
        let v = Vec2::from_angle(rng.angle()) * rng.uniform(0.5, 2.0);
        let ngap = (metric.norm(x, v) - metric.norm(x, -v)).abs();
        if ngap > norm.0 {
            norm = (
                ngap,
                vec![format!(
                    "x = ({:.4}, {:.4}), v at angle {:.4}",
                    x.x,
                    x.y,
                    v.angle()
                )],
            );
        }
    }
    let dist_w = if dist.0 > SYMMETRY_TOL {
        dist.1
    } else {
        Vec::new()
    };
    let norm_w = if norm.0 > SYMMETRY_TOL { norm.1 } else { Vec::new() };
    [
        VerificationEntry::new("distance-symmetry", dist.0, SYMMETRY_TOL, dist_w),
        VerificationEntry::new("norm-symmetry", norm.0, SYMMETRY_TOL, norm_w),
    ]
}
