//! Gluing stages: extend the local envelope beyond its patch, blend it into
//! the flat reference with a radial bump, quotient onto the torus, and
//! optionally symmetrize. The pipeline driver chains all of it with the
//! automatic r-escalation retry.
//!
//! In the shared representation (flat part + tapered correction) every stage
//! is a reweighting of the same correction tables:
//!
//!   F_ext    = F0 + chi * C          chi = bump(eps, 2 eps)
//!   F_blend  = F0 + g * chi * C      g   = bump(eps, r)
//!
//! so "extend" and "blend" attach cutoffs rather than resampling. That keeps
//! the D_eps values bit-identical through the stages and makes smallness
//! budgets measurable structurally, as weighted table differences, instead
//! of as catastrophically cancelling subtractions of nearly equal fields.

use crate::envelope::{
    antisym_pair_index, build_envelope, Correction, EnvelopeField, EnvelopingReport, Stage,
    N_CORR, N_THETA, TOL_DL,
};
use crate::error::{FinslerError, Result};
use crate::geodesics::{FinslerChart, NormField};
use crate::geom::{vec2, Mat2, Vec2};
use crate::interp::{GridGeom, GridTable};
use crate::norms::MinkowskiNorm;
use crate::specs::{ChartSpec, MetricSpec};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Smallness budget for the raw finite differences of F_ext - F0 sampled at
/// the table step, orders 0 through 3.
pub const EXTENSION_BUDGET: f64 = 0.1;
/// Maximum number of r-doubling retries when enveloping verification fails.
pub const MAX_ESCALATIONS: u32 = 4;

/// Radial cutoff profile: 1 on [0, inner], 0 on [outer, inf), in between the
/// exponential transition h(s) = e^{-1/s} / (e^{-1/s} + e^{-1/(1-s)}) with
/// s = (outer - rho)/(outer - inner). Smooth to all orders; every derivative
/// bound scales as 1/(outer - inner)^i.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpProfile {
    inner: f64,
    outer: f64,
}

/// The transition h and h' evaluated in logistic form,
/// h = sigma(1/(1-s) - 1/s), which never forms e^{-1/s}/e^{-1/s} quotients
/// of subnormals.
fn transition(s: f64) -> (f64, f64) {
    if s <= 1e-12 {
        return (0.0, 0.0);
    }
    if s >= 1.0 - 1e-12 {
        return (1.0, 0.0);
    }
    let u = 1.0 / (1.0 - s) - 1.0 / s;
    let h = 1.0 / (1.0 + (-u).exp());
    let du = 1.0 / ((1.0 - s) * (1.0 - s)) + 1.0 / (s * s);
    (h, h * (1.0 - h) * du)
}

impl BumpProfile {
    pub fn inner(&self) -> f64 {
        self.inner
    }

    pub fn outer(&self) -> f64 {
        self.outer
    }

    /// Value and radial derivative at Euclidean radius rho.
    pub fn value_deriv(&self, rho: f64) -> (f64, f64) {
        let width = self.outer - self.inner;
        let (h, dh) = transition((self.outer - rho) / width);
        (h, -dh / width)
    }

    pub fn value(&self, rho: f64) -> f64 {
        self.value_deriv(rho).0
    }
}

/// The standard cutoff between the given radii.
pub fn make_bump(inner: f64, outer: f64) -> Result<BumpProfile> {
    if !(inner > 0.0 && outer > inner && outer.is_finite()) {
        return Err(FinslerError::InvalidArgument(format!(
            "bump radii must satisfy 0 < inner < outer, got ({inner}, {outer})"
        )));
    }
    Ok(BumpProfile { inner, outer })
}

/// Pipeline knobs before resolution. `None` means "derive a default": eps by
/// feasibility search, r = 8, l = ceil(r) + 1.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub eps: Option<f64>,
    pub r: Option<f64>,
    pub l: Option<u32>,
    /// Basepoint in chart coordinates; the pipeline normalizes it to the
    /// origin before building anything.
    pub p0: Vec2,
    pub n_theta: usize,
    pub n_corr: usize,
    pub tol_dl: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> PipelineConfig {
        PipelineConfig {
            eps: None,
            r: None,
            l: None,
            p0: Vec2::ZERO,
            n_theta: N_THETA,
            n_corr: N_CORR,
            tol_dl: TOL_DL,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// The middle tier of the precedence chain: values a chart file declares
    /// override defaults but lose to CLI flags.
    pub fn from_chart_spec(spec: &ChartSpec) -> PipelineConfig {
        PipelineConfig {
            eps: spec.eps,
            r: spec.r,
            l: spec.l,
            ..PipelineConfig::default()
        }
    }
}

/// Every knob pinned to the value actually used; recorded in manifests and
/// artifacts so runs are reproducible from the artifact alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub eps: f64,
    pub r: f64,
    pub l: u32,
    pub n_theta: usize,
    pub n_corr: usize,
    pub tol_dl: f64,
    pub seed: u64,
    pub p0: [f64; 2],
    pub symmetric: bool,
}

/// A norm field translated so that a chosen basepoint sits at the origin.
struct OffsetField {
    inner: Arc<dyn NormField>,
    offset: Vec2,
}

impl NormField for OffsetField {
    fn eval(&self, x: Vec2, v: Vec2) -> f64 {
        self.inner.eval(x + self.offset, v)
    }

    fn norm_at(&self, x: Vec2) -> MinkowskiNorm {
        self.inner.norm_at(x + self.offset)
    }

    fn tensor(&self, x: Vec2, v: Vec2) -> Mat2 {
        self.inner.tensor(x + self.offset, v)
    }

    fn is_flat_near(&self, x: Vec2, radius: f64) -> bool {
        self.inner.is_flat_near(x + self.offset, radius)
    }
}

/// Recenter the chart at p0. The usable radius shrinks by |p0| because the
/// domain disc stays where it was.
pub fn normalize_chart(chart: &FinslerChart, p0: Vec2) -> Result<FinslerChart> {
    if p0 == Vec2::ZERO {
        return Ok(FinslerChart::new(chart.field().clone(), chart.domain_radius));
    }
    let radius = chart.domain_radius - p0.norm();
    if !(radius > 0.0) {
        return Err(FinslerError::InvalidArgument(format!(
            "basepoint lies outside the chart domain (|p0| = {:.3} >= {:.3})",
            p0.norm(),
            chart.domain_radius
        )));
    }
    Ok(FinslerChart::new(
        Arc::new(OffsetField {
            inner: chart.field().clone(),
            offset: p0,
        }),
        radius,
    ))
}

/// Choose eps for a normalized chart: start at a quarter of the domain and
/// halve until the fan fits inside the chart with margin and the disc is
/// geodesically simple.
pub fn pick_eps(chart: &FinslerChart, n_corr: usize) -> Result<f64> {
    let mut eps = chart.domain_radius / 4.0;
    for _ in 0..40 {
        if crate::envelope::fan_reach(eps, n_corr) > 0.95 * chart.domain_radius {
            eps *= 0.5;
            continue;
        }
        if chart.check_simple(Vec2::ZERO, eps)? {
            return Ok(eps);
        }
        eps *= 0.5;
    }
    Err(FinslerError::Configuration(
        "no feasible eps: the chart stays non-simple down to negligible radii".into(),
    ))
}

/// The flat reference F0 of a chart: the enveloping function of the constant
/// norm frozen at the origin, evaluated analytically everywhere.
pub fn extend_reference(chart: &FinslerChart, n_theta: usize) -> EnvelopeField {
    EnvelopeField::flat_with(chart.norm_at(Vec2::ZERO), n_theta)
}

/// Raw finite differences, orders 0..=3 along both grid axes, of the tables
/// reweighted by `weight(|x|)`: the magnitude ledger for a perturbation
/// F - F0 = weight * C sampled at the table step. Computed from the stored
/// corrections directly so tiny budgets are measured exactly rather than as
/// differences of nearly equal field evaluations.
fn weighted_difference_gaps(c: &Correction, weight: impl Fn(f64) -> f64) -> [f64; 4] {
    let g = c.geom;
    let w: Vec<f64> = (0..g.nx * g.ny)
        .map(|idx| weight(g.node(idx / g.ny, idx % g.ny).norm()))
        .collect();
    let mut gaps = [0.0f64; 4];
    let mut u = vec![0.0f64; g.nx * g.ny];
    for table in &c.tables {
        for (ui, (wi, ci)) in u.iter_mut().zip(w.iter().zip(table.values.iter())) {
            *ui = wi * ci;
        }
        let at = |i: usize, j: usize| u[i * g.ny + j];
        for i in 0..g.nx {
            for j in 0..g.ny {
                let v = at(i, j);
                gaps[0] = gaps[0].max(v.abs());
                if i + 1 < g.nx {
                    gaps[1] = gaps[1].max((at(i + 1, j) - v).abs());
                }
                if j + 1 < g.ny {
                    gaps[1] = gaps[1].max((at(i, j + 1) - v).abs());
                }
                if i + 2 < g.nx {
                    gaps[2] = gaps[2].max((at(i + 2, j) - 2.0 * at(i + 1, j) + v).abs());
                }
                if j + 2 < g.ny {
                    gaps[2] = gaps[2].max((at(i, j + 2) - 2.0 * at(i, j + 1) + v).abs());
                }
                if i + 3 < g.nx {
                    gaps[3] = gaps[3].max(
                        (at(i + 3, j) - 3.0 * at(i + 2, j) + 3.0 * at(i + 1, j) - v).abs(),
                    );
                }
                if j + 3 < g.ny {
                    gaps[3] = gaps[3].max(
                        (at(i, j + 3) - 3.0 * at(i, j + 2) + 3.0 * at(i, j + 1) - v).abs(),
                    );
                }
            }
        }
    }
    gaps
}

/// Extend the local envelope to the whole plane: F_ext = F0 + chi (F_local -
/// F0) with chi the (eps, 2 eps) cutoff, so F_ext = F_local on D_eps exactly
/// and F_ext = F0 outside D_2eps. Fails when the sampled C^3 gap to F0
/// exceeds the smallness budget, which signals an eps too ambitious for this
/// chart.
pub fn extend_envelope(
    f_local: &EnvelopeField,
    f0: &EnvelopeField,
    eps: f64,
) -> Result<(EnvelopeField, [f64; 4])> {
    if f0.n_theta() != f_local.n_theta() {
        return Err(FinslerError::InvalidArgument(
            "reference and local envelopes tabulate different direction counts".into(),
        ));
    }
    let correction = f_local
        .correction()
        .ok_or_else(|| {
            FinslerError::InvalidState("extension needs a tabulated local envelope".into())
        })?
        .clone();
    let chi = make_bump(eps, 2.0 * eps)?;
    let gaps = weighted_difference_gaps(&correction, |rho| chi.value(rho));
    let worst = gaps.iter().cloned().fold(0.0, f64::max);
    if worst > EXTENSION_BUDGET {
        return Err(FinslerError::Configuration(format!(
            "extension is not a small perturbation of the flat reference \
             (worst sampled difference {worst:.3e} > {EXTENSION_BUDGET}); decrease eps"
        )));
    }
    Ok((
        f_local.derive(Some(correction), Some(chi), None, Stage::Extended),
        gaps,
    ))
}

/// Blend the extension into the flat reference: F = F_ext g + F0 (1 - g).
pub fn blend(f_ext: &EnvelopeField, g: BumpProfile) -> Result<EnvelopeField> {
    let (chi, _) = f_ext.cutoffs();
    let chi = chi.ok_or_else(|| {
        FinslerError::InvalidState("blend expects the extended stage, with chi attached".into())
    })?;
    let correction = f_ext
        .correction()
        .expect("extended stage carries a correction")
        .clone();
    Ok(f_ext.derive(Some(correction), Some(chi), Some(g), Stage::Blended))
}

/// Magnitude ledger of the blend residual F_blend - F_ext = (g - 1) chi C;
/// the part of the perturbation attributable to the outer cutoff alone. Its
/// first-order row shrinks like 1/(r - eps) as r grows.
pub fn blend_residual_gaps(f_ext: &EnvelopeField, g: BumpProfile) -> [f64; 4] {
    let Some(correction) = f_ext.correction() else {
        return [0.0; 4];
    };
    let (chi, _) = f_ext.cutoffs();
    weighted_difference_gaps(correction, |rho| {
        let c = chi.map_or(1.0, |b| b.value(rho));
        (1.0 - g.value(rho)) * c
    })
}

/// The recovered metric on the torus R^2 / (2l Z)^2: the blended envelope's
/// norm field wrapped into the fundamental square.
pub struct RecoveredMetric {
    envelope: Arc<EnvelopeField>,
    pub eps: f64,
    pub r: f64,
    pub l: f64,
    /// max phi0 / min phi0 over directions; bounds how far a minimizing
    /// lift can wander, hence how many lattice images distances must try.
    anisotropy: f64,
}

/// Quotient the blended envelope onto the torus. Requires the correction to
/// die out inside D_r and r < l so the flat collar wraps consistently.
pub fn periodize(f: EnvelopeField, eps: f64, r: f64, l: u32) -> Result<RecoveredMetric> {
    if !(r < l as f64) {
        return Err(FinslerError::InvalidArgument(format!(
            "periodization needs r < l, got r = {r}, l = {l}"
        )));
    }
    let support = f.support_radius();
    if !(support <= r) {
        return Err(FinslerError::InvalidState(format!(
            "envelope is not flat outside D_r (correction support {support} > r = {r}); \
             blend before periodizing"
        )));
    }
    Ok(RecoveredMetric::new(Arc::new(f), eps, r, l as f64))
}

fn wrap_coord(t: f64, l: f64) -> f64 {
    (t + l).rem_euclid(2.0 * l) - l
}

impl RecoveredMetric {
    fn new(envelope: Arc<EnvelopeField>, eps: f64, r: f64, l: f64) -> RecoveredMetric {
        let base = envelope.base();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for k in 0..64 {
            let s = base.evaluate(Vec2::from_angle(std::f64::consts::TAU * k as f64 / 64.0));
            lo = lo.min(s);
            hi = hi.max(s);
        }
        RecoveredMetric {
            envelope,
            eps,
            r,
            l,
            anisotropy: hi / lo,
        }
    }

    pub fn envelope(&self) -> &Arc<EnvelopeField> {
        &self.envelope
    }

    /// Representative of x in the fundamental square [-l, l)^2.
    pub fn wrap(&self, x: Vec2) -> Vec2 {
        vec2(wrap_coord(x.x, self.l), wrap_coord(x.y, self.l))
    }

    /// The torus norm phi~(x, v); exactly the flat norm outside D_r.
    pub fn norm(&self, x: Vec2, v: Vec2) -> f64 {
        self.envelope.recover_norm(self.wrap(x), v)
    }

    /// Torus distance d~([x], [y]): the plane formula against every lattice
    /// image of y that an anisotropy-bounded minimizer could reach.
    pub fn distance(&self, x: Vec2, y: Vec2) -> f64 {
        let w = self.wrap(x);
        let wy = self.wrap(y);
        let two_l = 2.0 * self.l;
        let direct = (wy - w).norm();
        let kmax = ((direct * (1.0 + self.anisotropy)) / two_l).ceil().min(6.0) as i32;
        let mut best = f64::INFINITY;
        for kx in -kmax..=kmax {
            for ky in -kmax..=kmax {
                let image = wy + vec2(kx as f64 * two_l, ky as f64 * two_l);
                best = best.min(self.envelope.recover_distance(w, image));
            }
        }
        best
    }

    /// Chart adapter over the periodized field, for geodesic work. The
    /// domain is unbounded: the field is defined on the whole cover. A
    /// correction of exact zeros (flat input) collapses the support so the
    /// spray short-circuits everywhere.
    pub fn chart(&self) -> FinslerChart {
        let support = match self.envelope.correction() {
            Some(c) if !c.is_zero() => self.envelope.support_radius(),
            _ => 0.0,
        };
        FinslerChart::new(
            Arc::new(RecoveredField {
                envelope: self.envelope.clone(),
                l: self.l,
                support,
            }),
            f64::INFINITY,
        )
    }
}

/// NormField view of the periodized envelope: integration-grade evaluation
/// and tensor, wrapped into the fundamental square.
struct RecoveredField {
    envelope: Arc<EnvelopeField>,
    l: f64,
    support: f64,
}

impl RecoveredField {
    fn wrap(&self, x: Vec2) -> Vec2 {
        vec2(wrap_coord(x.x, self.l), wrap_coord(x.y, self.l))
    }
}

impl NormField for RecoveredField {
    fn eval(&self, x: Vec2, v: Vec2) -> f64 {
        self.envelope.field_eval(self.wrap(x), v)
    }

    fn norm_at(&self, x: Vec2) -> MinkowskiNorm {
        let w = self.wrap(x);
        if w.norm() >= self.support {
            return self.envelope.base().clone();
        }
        let envelope = self.envelope.clone();
        MinkowskiNorm::general(move |v| envelope.field_eval(w, v))
    }

    fn tensor(&self, x: Vec2, v: Vec2) -> Mat2 {
        self.envelope.field_tensor(self.wrap(x), v)
    }

    fn is_flat_near(&self, x: Vec2, radius: f64) -> bool {
        if self.support == 0.0 {
            return true;
        }
        // Flat iff the ball stays clear of the bump around every lattice
        // image; |w| bounds the own-cell image, 2l - |w| the adjacent ones.
        let w = self.wrap(x);
        let d = w.norm();
        radius <= d - self.support && radius <= 2.0 * self.l - d - self.support
    }
}

/// Force the odd symmetry F(theta + pi, x) = -F(theta, x) on a tabulated
/// local envelope by antisymmetrizing tables and co-normals over antipodal
/// pairs; exact at nodes because (a - b)/2 and -(b - a)/2 are the same IEEE
/// value. Rejects asymmetric base norms, whose envelopes cannot be odd.
pub fn antisymmetrize_local(f: &EnvelopeField) -> Result<EnvelopeField> {
    if !f.base().is_symmetric_kind() {
        return Err(FinslerError::InvalidArgument(
            "symmetrization requires a symmetric base norm".into(),
        ));
    }
    let c = f.correction().ok_or_else(|| {
        FinslerError::InvalidState("symmetrization needs a tabulated local envelope".into())
    })?;
    let n = f.n_theta();
    let tables: Vec<GridTable> = (0..n)
        .map(|i| {
            let j = antisym_pair_index(i, n);
            let values = c.tables[i]
                .values
                .iter()
                .zip(c.tables[j].values.iter())
                .map(|(a, b)| 0.5 * (a - b))
                .collect();
            GridTable {
                geom: c.geom,
                values,
            }
        })
        .collect();
    let mut out = f.derive(
        Some(Arc::new(Correction {
            geom: c.geom,
            tables,
        })),
        None,
        None,
        Stage::Local,
    );
    out.enforce_antipodal_conormals();
    Ok(out)
}

/// One-call symmetric variant: antisymmetrize the local envelope, then run
/// the extend/blend/periodize tail at the given radii.
pub fn symmetrize(
    f_local: &EnvelopeField,
    f0: &EnvelopeField,
    eps: f64,
    r: f64,
    l: u32,
) -> Result<(Arc<EnvelopeField>, RecoveredMetric)> {
    let odd = antisymmetrize_local(f_local)?;
    let (f_ext, _) = extend_envelope(&odd, f0, eps)?;
    let blended = blend(&f_ext, make_bump(eps, r)?)?;
    let metric = periodize(blended, eps, r, l)?;
    Ok((metric.envelope().clone(), metric))
}

/// Everything a build produces: the blended envelope, the torus metric, the
/// resolved knobs, the final enveloping report, and the escalation count.
pub struct PipelineOutput {
    pub envelope: Arc<EnvelopeField>,
    pub metric: RecoveredMetric,
    pub resolved: ResolvedConfig,
    pub report: EnvelopingReport,
    pub extension_gaps: [f64; 4],
    pub escalations: u32,
}

/// Run the whole construction: normalize the chart, build the local
/// envelope, extend, blend, verify, periodize; doubling r (and raising l)
/// up to [`MAX_ESCALATIONS`] times when the enveloping check fails.
pub fn run_pipeline(
    chart: &FinslerChart,
    cfg: &PipelineConfig,
    symmetric: bool,
) -> Result<PipelineOutput> {
    let chart = normalize_chart(chart, cfg.p0)?;
    let eps = match cfg.eps {
        Some(e) => e,
        None => pick_eps(&chart, cfg.n_corr)?,
    };
    let mut r = cfg.r.unwrap_or(8.0);
    if !(r > eps) {
        return Err(FinslerError::InvalidArgument(format!(
            "blend radius r = {r} must exceed eps = {eps}"
        )));
    }
    let mut l = match cfg.l {
        Some(l) => {
            if (l as f64) <= r {
                return Err(FinslerError::InvalidArgument(format!(
                    "half-period l = {l} must exceed r = {r}"
                )));
            }
            l
        }
        None => r.ceil() as u32 + 1,
    };

    let mut f_local = build_envelope(&chart, eps, cfg.n_theta, cfg.n_corr)?;
    if symmetric {
        f_local = antisymmetrize_local(&f_local)?;
    }
    let f0 = f_local.derive(None, None, None, Stage::Flat);
    let (f_ext, extension_gaps) = extend_envelope(&f_local, &f0, eps)?;

    let mut escalations = 0;
    loop {
        let blended = blend(&f_ext, make_bump(eps, r)?)?;
        let report = blended.check_enveloping(Some(&chart), eps, cfg.tol_dl);
        if report.pass {
            let envelope = Arc::new(blended);
            let metric = RecoveredMetric::new(envelope.clone(), eps, r, l as f64);
            if !(r < l as f64) {
                return Err(FinslerError::InvalidArgument(format!(
                    "periodization needs r < l, got r = {r}, l = {l}"
                )));
            }
            return Ok(PipelineOutput {
                envelope,
                metric,
                resolved: ResolvedConfig {
                    eps,
                    r,
                    l,
                    n_theta: cfg.n_theta,
                    n_corr: cfg.n_corr,
                    tol_dl: cfg.tol_dl,
                    seed: cfg.seed,
                    p0: [cfg.p0.x, cfg.p0.y],
                    symmetric,
                },
                report,
                extension_gaps,
                escalations,
            });
        }
        if escalations >= MAX_ESCALATIONS {
            return Err(FinslerError::Configuration(format!(
                "enveloping verification still fails after {escalations} r-doublings \
                 (worst distance-likeness violation {:.3e}, turn margin {:.3e})",
                report.dl_violation, report.min_turn_margin
            )));
        }
        escalations += 1;
        r *= 2.0;
        l = l.max(r.ceil() as u32 + 1);
    }
}

/// On-disk torus metric artifact: everything needed to rebuild the
/// recovered metric without re-running the pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TorusArtifact {
    pub version: u32,
    pub config: ResolvedConfig,
    pub base: MetricSpec,
    /// (inner, outer) radii of the extension cutoff.
    pub chi: (f64, f64),
    /// (inner, outer) radii of the blend cutoff.
    pub blend: (f64, f64),
    pub grid: GridGeom,
    /// Correction tables, row-major, one per theta node.
    pub tables: Vec<Vec<f64>>,
}

pub fn to_artifact(output: &PipelineOutput) -> TorusArtifact {
    let f = &output.envelope;
    let (chi, blend) = f.cutoffs();
    let chi = chi.expect("blended envelope carries chi");
    let blend = blend.expect("blended envelope carries the blend cutoff");
    let correction = f.correction().expect("blended envelope carries tables");
    TorusArtifact {
        version: 1,
        config: output.resolved.clone(),
        base: MetricSpec::from_norm(f.base()),
        chi: (chi.inner(), chi.outer()),
        blend: (blend.inner(), blend.outer()),
        grid: correction.geom,
        tables: correction.tables.iter().map(|t| t.values.clone()).collect(),
    }
}

pub fn from_artifact(artifact: &TorusArtifact) -> Result<RecoveredMetric> {
    if artifact.version != 1 {
        return Err(FinslerError::InvalidArgument(format!(
            "unsupported artifact version {}",
            artifact.version
        )));
    }
    let n = artifact.tables.len();
    if n != artifact.config.n_theta || n < 8 || n % 2 != 0 {
        return Err(FinslerError::InvalidArgument(
            "artifact direction count is inconsistent".into(),
        ));
    }
    let cells = artifact.grid.nx * artifact.grid.ny;
    if artifact.tables.iter().any(|t| t.len() != cells) {
        return Err(FinslerError::InvalidArgument(
            "artifact table does not match its grid".into(),
        ));
    }
    let base = artifact.base.build()?;
    let tables = artifact
        .tables
        .iter()
        .map(|values| GridTable {
            geom: artifact.grid,
            values: values.clone(),
        })
        .collect();
    let mut envelope = EnvelopeField::flat_with(base, n).derive(
        Some(Arc::new(Correction {
            geom: artifact.grid,
            tables,
        })),
        Some(make_bump(artifact.chi.0, artifact.chi.1)?),
        Some(make_bump(artifact.blend.0, artifact.blend.1)?),
        Stage::Blended,
    );
    if artifact.config.symmetric {
        envelope.enforce_antipodal_conormals();
    }
    let cfg = &artifact.config;
    if !(cfg.r < cfg.l as f64) {
        return Err(FinslerError::InvalidArgument(format!(
            "artifact has r = {} >= l = {}",
            cfg.r, cfg.l
        )));
    }
    Ok(RecoveredMetric::new(
        Arc::new(envelope),
        cfg.eps,
        cfg.r,
        cfg.l as f64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::correction_geometry;
    use crate::geom::vec2;

    #[test]
    fn bump_boundary_and_midpoint_values() {
        let g = make_bump(0.5, 8.0).unwrap();
        assert_eq!(g.value(0.2), 1.0);
        assert_eq!(g.value(0.5), 1.0);
        assert_eq!(g.value(8.0), 0.0);
        assert_eq!(g.value(11.0), 0.0);
        assert!((g.value(0.5 * (0.5 + 8.0)) - 0.5).abs() < 1e-12);
        // Monotone nonincreasing across the transition.
        let mut prev = 1.0;
        for k in 0..=400 {
            let v = g.value(0.5 + 7.5 * k as f64 / 400.0);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn bump_derivative_matches_finite_differences() {
        let g = make_bump(1.0, 3.0).unwrap();
        let h = 1e-6;
        for k in 1..20 {
            let rho = 1.0 + 2.0 * k as f64 / 20.0;
            let (_, d) = g.value_deriv(rho);
            let fd = (g.value(rho + h) - g.value(rho - h)) / (2.0 * h);
            assert!((d - fd).abs() < 1e-6 * (1.0 + d.abs()), "rho {rho}: {d} vs {fd}");
        }
    }

    #[test]
    fn bump_rejects_degenerate_radii() {
        assert!(matches!(
            make_bump(0.5, 0.5),
            Err(FinslerError::InvalidArgument(_))
        ));
        assert!(matches!(
            make_bump(2.0, 1.0),
            Err(FinslerError::InvalidArgument(_))
        ));
    }

    #[test]
    fn bump_slope_scales_inversely_with_width() {
        let max_slope = |inner: f64, outer: f64| {
            let g = make_bump(inner, outer).unwrap();
            let mut worst = 0.0f64;
            for k in 0..=4000 {
                let rho = inner + (outer - inner) * k as f64 / 4000.0;
                worst = worst.max(g.value_deriv(rho).1.abs());
            }
            worst
        };
        let a = max_slope(0.5, 8.0);
        let b = max_slope(0.5, 16.0);
        let ratio = b / a;
        assert!(
            (0.4..0.6).contains(&ratio),
            "slope ratio {ratio} not close to 1/2"
        );
    }

    /// A synthetic local envelope with a smooth nonzero correction, for
    /// exercising the glue stages without running geodesic fans.
    fn synthetic_local(eps: f64, n_theta: usize) -> EnvelopeField {
        let geom = correction_geometry(eps, 33);
        let mut corr = Correction::zeros(geom, n_theta);
        for (t_idx, table) in corr.tables.iter_mut().enumerate() {
            let phase = std::f64::consts::TAU * t_idx as f64 / n_theta as f64;
            for i in 0..geom.nx {
                for j in 0..geom.ny {
                    let p = geom.node(i, j);
                    table.set(i, j, 1e-3 * (phase.cos() + p.x) * p.y);
                }
            }
        }
        EnvelopeField::with_correction(MinkowskiNorm::euclidean(), corr)
    }

    #[test]
    fn extension_of_flat_local_is_the_reference() {
        let geom = correction_geometry(0.25, 33);
        let f_local = EnvelopeField::with_correction(
            MinkowskiNorm::euclidean(),
            Correction::zeros(geom, 16),
        );
        let f0 = f_local.derive(None, None, None, Stage::Flat);
        let (f_ext, gaps) = extend_envelope(&f_local, &f0, 0.25).unwrap();
        assert_eq!(gaps, [0.0; 4]);
        for k in 0..30 {
            let theta = 0.21 * k as f64;
            let x = vec2((k as f64 * 0.033).sin(), (k as f64 * 0.07).cos());
            assert_eq!(f_ext.value(theta, x), f0.value(theta, x));
        }
    }

    #[test]
    fn extension_preserves_local_values_and_hits_reference_outside() {
        let eps = 0.25;
        let f_local = synthetic_local(eps, 16);
        let f0 = f_local.derive(None, None, None, Stage::Flat);
        let (f_ext, _) = extend_envelope(&f_local, &f0, eps).unwrap();
        // chi = 1 on D_eps: extended values equal local ones there.
        for k in 0..20 {
            let theta = 0.17 * k as f64;
            let x = Vec2::from_angle(1.1 * k as f64) * (eps * 0.9 * (k as f64 / 20.0));
            assert_eq!(f_ext.value(theta, x), f_local.value(theta, x));
        }
        // chi = 0 outside D_2eps.
        let far = vec2(2.0 * eps + 0.05, 0.2);
        assert_eq!(f_ext.value(0.3, far), f0.value(0.3, far));
    }

    #[test]
    fn extension_budget_rejects_large_corrections() {
        let geom = correction_geometry(0.25, 33);
        let mut corr = Correction::zeros(geom, 16);
        for table in &mut corr.tables {
            for i in 0..geom.nx {
                for j in 0..geom.ny {
                    table.set(i, j, 10.0);
                }
            }
        }
        let f_local = EnvelopeField::with_correction(MinkowskiNorm::euclidean(), corr);
        let f0 = f_local.derive(None, None, None, Stage::Flat);
        match extend_envelope(&f_local, &f0, 0.25) {
            Err(FinslerError::Configuration(msg)) => {
                assert!(msg.contains("decrease eps"), "{msg}");
            }
            Err(other) => panic!("expected a configuration error, got {other}"),
            Ok(_) => panic!("expected a configuration error, got a field"),
        }
    }

    #[test]
    fn blend_is_a_convex_combination() {
        let eps = 0.25;
        let r = 4.0;
        let f_local = synthetic_local(eps, 16);
        let f0 = f_local.derive(None, None, None, Stage::Flat);
        let (f_ext, _) = extend_envelope(&f_local, &f0, eps).unwrap();
        let g = make_bump(eps, r).unwrap();
        let blended = blend(&f_ext, g).unwrap();
        for k in 0..200 {
            let theta = 0.15 * k as f64;
            let x = Vec2::from_angle(2.3 * k as f64) * (0.6 * (k % 17) as f64 / 16.0);
            let a = f_ext.value(theta, x);
            let b = f0.value(theta, x);
            let m = blended.value(theta, x);
            assert!(m >= a.min(b) - 1e-12 && m <= a.max(b) + 1e-12);
            let manual = b + g.value(x.norm()) * (a - b);
            assert!((m - manual).abs() < 1e-12, "{m} vs {manual}");
        }
        // Outside D_r the blend is the flat reference bit for bit.
        let far = vec2(r + 0.5, -1.0);
        assert_eq!(blended.value(0.77, far), f0.value(0.77, far));
        assert_eq!(blended.support_radius(), 2.0 * eps);
    }

    #[test]
    fn blend_residual_shrinks_as_r_doubles() {
        let eps = 0.25;
        let f_local = synthetic_local(eps, 16);
        let f0 = f_local.derive(None, None, None, Stage::Flat);
        let (f_ext, _) = extend_envelope(&f_local, &f0, eps).unwrap();
        let near = blend_residual_gaps(&f_ext, make_bump(eps, 8.0).unwrap());
        let far = blend_residual_gaps(&f_ext, make_bump(eps, 16.0).unwrap());
        assert!(near[0] > 0.0);
        for order in 0..2 {
            let ratio = far[order] / near[order];
            assert!(
                ratio <= 0.75,
                "order {order}: residual ratio {ratio} exceeds 0.75"
            );
        }
    }

    #[test]
    fn periodize_rejects_r_not_less_than_l() {
        let eps = 0.25;
        let f_local = synthetic_local(eps, 16);
        let f0 = f_local.derive(None, None, None, Stage::Flat);
        let (f_ext, _) = extend_envelope(&f_local, &f0, eps).unwrap();
        let blended = blend(&f_ext, make_bump(eps, 8.0).unwrap()).unwrap();
        assert!(matches!(
            periodize(blended, eps, 8.0, 8),
            Err(FinslerError::InvalidArgument(_))
        ));
    }

    #[test]
    fn periodize_rejects_unblended_envelopes() {
        let eps = 0.25;
        let f_local = synthetic_local(eps, 16);
        assert!(matches!(
            periodize(
                f_local.derive(
                    Some(f_local.correction().unwrap().clone()),
                    None,
                    None,
                    Stage::Local
                ),
                eps,
                8.0,
                9
            ),
            Err(FinslerError::InvalidState(_))
        ));
    }

    fn small_pipeline_metric() -> RecoveredMetric {
        let eps = 0.25;
        let f_local = synthetic_local(eps, 16);
        let f0 = f_local.derive(None, None, None, Stage::Flat);
        let (f_ext, _) = extend_envelope(&f_local, &f0, eps).unwrap();
        let blended = blend(&f_ext, make_bump(eps, 2.0).unwrap()).unwrap();
        periodize(blended, eps, 2.0, 3).unwrap()
    }

    #[test]
    fn periodicity_is_exact_on_dyadic_samples() {
        let metric = small_pipeline_metric();
        let two_l = 2.0 * metric.l;
        for k in 0..50 {
            let x = vec2(
                (k as f64) * 0.125 - 2.875,
                (k as f64) * 0.0625 - 1.5,
            );
            let v = Vec2::from_angle(0.37 * k as f64);
            for shift in [vec2(two_l, 0.0), vec2(0.0, two_l), vec2(-two_l, two_l)] {
                assert_eq!(metric.norm(x + shift, v), metric.norm(x, v));
            }
        }
    }

    #[test]
    fn recovered_metric_is_flat_outside_the_blend() {
        let metric = small_pipeline_metric();
        let base = metric.envelope().base().clone();
        // Support ends at 2 eps = 0.5; sample the flat collar inside the
        // fundamental square.
        for k in 0..40 {
            let x = Vec2::from_angle(0.7 * k as f64) * (0.8 + 1.8 * (k as f64 / 40.0));
            let v = Vec2::from_angle(-1.3 * k as f64) * 1.7;
            assert_eq!(metric.norm(x, v), base.evaluate(v));
        }
    }

    #[test]
    fn torus_distance_wraps_around() {
        let metric = small_pipeline_metric();
        // l = 3: points near opposite edges of the square are close on the
        // torus even though the plane formula says ~5.8.
        let a = vec2(-2.9, 0.0);
        let b = vec2(2.9, 0.0);
        let d = metric.distance(a, b);
        assert!((d - 0.2).abs() < 1e-6, "wrapped distance {d}");
        assert!(metric.distance(a, a) == 0.0);
    }

    #[test]
    fn antisymmetrize_is_exact_at_nodes_and_rejects_asymmetric_bases() {
        let f = synthetic_local(0.25, 16);
        let odd = antisymmetrize_local(&f).unwrap();
        let c = odd.correction().unwrap();
        let n = odd.n_theta();
        for i in 0..n {
            let j = antisym_pair_index(i, n);
            for (a, b) in c.tables[i].values.iter().zip(c.tables[j].values.iter()) {
                assert_eq!(*a, -*b);
            }
        }
        // Node values are exactly odd, taper included.
        for k in 0..60 {
            let x = Vec2::from_angle(1.7 * k as f64) * (0.03 * k as f64);
            for i in 0..n {
                let a = odd.node_value(i, x);
                let b = odd.node_value(i + n / 2, x);
                assert!(a == -b, "node {i} at {x:?}: {a} vs {b}");
            }
        }

        let randers = MinkowskiNorm::randers(Mat2::IDENTITY, vec2(0.3, 0.0)).unwrap();
        let geom = correction_geometry(0.25, 33);
        let asym = EnvelopeField::with_correction(randers, Correction::zeros(geom, 16));
        assert!(matches!(
            antisymmetrize_local(&asym),
            Err(FinslerError::InvalidArgument(_))
        ));
    }

    #[test]
    fn pipeline_on_constant_chart_is_exactly_flat() {
        let chart = FinslerChart::constant(MinkowskiNorm::euclidean(), 10.0);
        let cfg = PipelineConfig {
            n_theta: 16,
            n_corr: 17,
            ..PipelineConfig::default()
        };
        let out = run_pipeline(&chart, &cfg, false).unwrap();
        assert_eq!(out.escalations, 0);
        assert_eq!(out.extension_gaps, [0.0; 4]);
        assert!(out.report.pass);
        let m = &out.metric;
        for k in 0..60 {
            let x = vec2(3.0 * (0.31 * k as f64).sin(), 3.0 * (0.57 * k as f64).cos());
            let v = Vec2::from_angle(0.9 * k as f64) * 2.0;
            // Exact outside the taper, sup-refined to roundoff inside.
            let got = m.norm(x, v);
            let want = v.norm();
            assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
        }
        let d = m.distance(vec2(0.3, 0.4), vec2(1.3, 0.4));
        assert!((d - 1.0).abs() < 1e-9, "flat distance {d}");
    }

    #[test]
    fn pick_eps_quarters_then_halves_to_fit() {
        let chart = FinslerChart::conformal(
            MinkowskiNorm::euclidean(),
            |p: Vec2| 0.1 * p.x,
            2.0,
        );
        let eps = pick_eps(&chart, 65).unwrap();
        assert!((eps - 0.25).abs() < 1e-12, "picked eps {eps}");
    }

    #[test]
    fn artifact_round_trip_preserves_the_metric() {
        let metric = small_pipeline_metric();
        let out = PipelineOutput {
            envelope: metric.envelope().clone(),
            resolved: ResolvedConfig {
                eps: metric.eps,
                r: metric.r,
                l: metric.l as u32,
                n_theta: 16,
                n_corr: 33,
                tol_dl: TOL_DL,
                seed: 0,
                p0: [0.0, 0.0],
                symmetric: false,
            },
            report: metric
                .envelope()
                .check_enveloping(None, 0.0, TOL_DL),
            extension_gaps: [0.0; 4],
            escalations: 0,
            metric,
        };
        let artifact = to_artifact(&out);
        let text = serde_json::to_string(&artifact).unwrap();
        let parsed: TorusArtifact = serde_json::from_str(&text).unwrap();
        let rebuilt = from_artifact(&parsed).unwrap();
        for k in 0..60 {
            let x = Vec2::from_angle(0.41 * k as f64) * (0.09 * k as f64);
            let v = Vec2::from_angle(-0.77 * k as f64) * 1.3;
            let a = out.metric.norm(x, v);
            let b = rebuilt.norm(x, v);
            assert!((a - b).abs() <= 1e-15 * (1.0 + a), "{a} vs {b}");
        }
    }
}
