//! The `finsler` command line: check a metric file for convexity, build a
//! torus artifact from a chart file, certify an artifact, and dump plot
//! data. Exit codes: 0 success, 1 when a check fails or a solver breaks
//! down, 2 when the input or configuration is unusable.

use crate::error::{FinslerError, Result};
use crate::geodesics::{FinslerChart, NormField, DEFAULT_DT};
use crate::geom::{vec2, Vec2};
use crate::glue::{
    from_artifact, normalize_chart, run_pipeline, to_artifact, PipelineConfig, RecoveredMetric,
    ResolvedConfig, TorusArtifact,
};
use crate::norms::MinkowskiNorm;
use crate::specs::{ChartSpec, MetricSpec};
use crate::verify::{
    calibration_suite, flat_collar_suite, isometry_suite, no_conjugate_points_suite,
    symmetry_suite, VerificationReport,
};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Parser)]
#[command(name = "finsler", version, about = "Build and certify Finsler tori from metric patches")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads for the parallel stages; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Suppress progress output; exit codes and files still tell the story.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Where artifacts, reports, and CSVs land.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Sampling seed; falls back to FINSLER_SEED, then 17.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check quadratic convexity of a metric file and print the minimum
    /// fundamental-tensor eigenvalue.
    CheckNorm {
        spec: PathBuf,
        /// Directions sampled on the indicatrix.
        #[arg(long, default_value_t = 256)]
        dirs: usize,
    },
    /// Run the full pipeline on a chart file and write the torus artifact.
    Build {
        spec: PathBuf,
        /// Patch radius; overrides the chart file and the feasibility search.
        #[arg(long)]
        eps: Option<f64>,
        /// Blend radius; must exceed eps.
        #[arg(long)]
        r: Option<f64>,
        /// Torus half-width; must exceed r.
        #[arg(long)]
        l: Option<u32>,
        /// Direction nodes of the envelope family.
        #[arg(long)]
        n_theta: Option<usize>,
        /// Correction grid nodes per axis.
        #[arg(long)]
        n_corr: Option<usize>,
        /// Artifact filename; defaults to <out-dir>/torus.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the certification suites on an artifact and write the report.
    Verify {
        artifact: PathBuf,
        /// Geodesics scanned for conjugate points.
        #[arg(long, default_value_t = 100)]
        geodesics: usize,
        /// Scan horizon; defaults to 4l.
        #[arg(long)]
        length: Option<f64>,
        /// Calibrated curves integrated.
        #[arg(long, default_value_t = 50)]
        curves: usize,
        /// Samples per isometry / symmetry sweep.
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Chart file the artifact was built from; enables the on-patch
        /// isometry check.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Inject a periodic conformal curvature bump before scanning; the
        /// report must then fail. Positive control for the scan itself.
        #[arg(long)]
        sabotage: bool,
    },
    /// Dump deterministic CSVs for external plotting.
    PlotData {
        artifact: PathBuf,
        #[arg(value_enum)]
        what: PlotKind,
    },
}

#[derive(Debug, Copy, Clone, ValueEnum)]
pub enum PlotKind {
    /// Unit-ball boundary of the torus norm on a 9x9 grid of basepoints.
    Indicatrices,
    /// A 16-curve geodesic fan through the origin.
    Geodesics,
    /// Co-sphere curves (envelope differentials over theta) at five points.
    Cosphere,
    /// Heat-map table of F(0, x) over the fundamental square.
    Envelope,
}

/// Everything the run needs: paths, manifest path, resolved PipelineConfig,
/// written files, wall times, and the crate version that produced them.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub input: String,
    pub resolved: ResolvedConfig,
    pub artifacts: Vec<String>,
    pub timings_ms: BTreeMap<String, u128>,
    pub tool_version: String,
}

struct Ctx {
    quiet: bool,
    out_dir: PathBuf,
    seed: u64,
}

impl Ctx {
    fn say(&self, line: &str) {
        if !self.quiet {
            // Tolerate a closed pipe (`finsler ... | head`): the exit code
            // should reflect the checks, not the consumer hanging up.
            use std::io::Write;
            let _ = writeln!(std::io::stdout(), "{line}");
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        // Once a pool exists (tests, repeated calls) this is a no-op.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let seed = cli.seed.or_else(env_seed).unwrap_or(17);
    let ctx = Ctx {
        quiet: cli.quiet,
        out_dir: cli.out_dir,
        seed,
    };
    let outcome = match cli.command {
        Command::CheckNorm { spec, dirs } => cmd_check_norm(&ctx, &spec, dirs),
        Command::Build {
            spec,
            eps,
            r,
            l,
            n_theta,
            n_corr,
            out,
        } => cmd_build(&ctx, &spec, eps, r, l, n_theta, n_corr, out),
        Command::Verify {
            artifact,
            geodesics,
            length,
            curves,
            samples,
            spec,
            sabotage,
        } => cmd_verify(
            &ctx, &artifact, geodesics, length, curves, samples, spec, sabotage,
        ),
        Command::PlotData { artifact, what } => cmd_plot_data(&ctx, &artifact, what),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn env_seed() -> Option<u64> {
    std::env::var("FINSLER_SEED").ok()?.parse().ok()
}

/// User-input problems exit 2; failed checks and solver breakdowns exit 1.
fn exit_code(e: &FinslerError) -> i32 {
    match e {
        FinslerError::InvalidArgument(_) | FinslerError::Io(_) | FinslerError::Json(_) => 2,
        FinslerError::Singular(_)
        | FinslerError::Numerical(_)
        | FinslerError::Configuration(_)
        | FinslerError::InvalidState(_) => 1,
    }
}

/// Write-temp-rename so readers never observe a half-written file.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn cmd_check_norm(ctx: &Ctx, spec: &Path, dirs: usize) -> Result<i32> {
    let text = fs::read_to_string(spec)?;
    let norm = MetricSpec::from_json(&text)?.build()?;
    let report = norm.check_quadratic_convexity(dirs)?;
    ctx.say(&format!(
        "min fundamental eigenvalue {:.6e} at v = ({:.4}, {:.4}): {}",
        report.min_eigenvalue,
        report.witness.x,
        report.witness.y,
        if report.pass { "PASS" } else { "FAIL" }
    ));
    Ok(if report.pass { 0 } else { 1 })
}

#[allow(clippy::too_many_arguments)]
fn cmd_build(
    ctx: &Ctx,
    spec_path: &Path,
    eps: Option<f64>,
    r: Option<f64>,
    l: Option<u32>,
    n_theta: Option<usize>,
    n_corr: Option<usize>,
    out: Option<PathBuf>,
) -> Result<i32> {
    let text = fs::read_to_string(spec_path)?;
    let spec = ChartSpec::from_json(&text)?;
    let chart = FinslerChart::from_spec(&spec)?;
    let mut cfg = PipelineConfig::from_chart_spec(&spec);
    if eps.is_some() {
        cfg.eps = eps;
    }
    if r.is_some() {
        cfg.r = r;
    }
    if l.is_some() {
        cfg.l = l;
    }
    if let Some(n) = n_theta {
        cfg.n_theta = n;
    }
    if let Some(n) = n_corr {
        cfg.n_corr = n;
    }
    cfg.seed = ctx.seed;

    let t0 = Instant::now();
    let output = run_pipeline(&chart, &cfg, spec.symmetric)?;
    let build_ms = t0.elapsed().as_millis();

    let t1 = Instant::now();
    let artifact = to_artifact(&output);
    let artifact_path = out.unwrap_or_else(|| ctx.out_dir.join("torus.json"));
    write_atomic(&artifact_path, &serde_json::to_string_pretty(&artifact)?)?;
    let write_ms = t1.elapsed().as_millis();

    let mut timings = BTreeMap::new();
    timings.insert("build_ms".to_string(), build_ms);
    timings.insert("write_ms".to_string(), write_ms);
    let manifest = RunManifest {
        input: spec_path.display().to_string(),
        resolved: output.resolved.clone(),
        artifacts: vec![artifact_path.display().to_string()],
        timings_ms: timings,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_atomic(
        &ctx.out_dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest)?,
    )?;

    let rc = &output.resolved;
    ctx.say(&format!(
        "built torus: eps = {}, r = {}, l = {}, escalations = {}, max |phi*(dF) - 1| = {:.3e}",
        rc.eps, rc.r, rc.l, output.escalations, output.report.dl_violation
    ));
    ctx.say(&format!("artifact: {}", artifact_path.display()));
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    ctx: &Ctx,
    artifact_path: &Path,
    geodesics: usize,
    length: Option<f64>,
    curves: usize,
    samples: usize,
    spec: Option<PathBuf>,
    sabotage: bool,
) -> Result<i32> {
    let artifact: TorusArtifact = serde_json::from_str(&fs::read_to_string(artifact_path)?)?;
    let metric = from_artifact(&artifact)?;
    let horizon = length.unwrap_or(4.0 * metric.l);

    let scan_chart = if sabotage {
        sabotaged_chart(&metric)
    } else {
        metric.chart()
    };
    let mut report = VerificationReport::new();
    report.push(no_conjugate_points_suite(
        &scan_chart,
        metric.l,
        geodesics,
        horizon,
        DEFAULT_DT,
        ctx.seed,
    ));
    report.extend(calibration_suite(
        metric.envelope(),
        &metric,
        curves,
        ctx.seed.wrapping_add(1),
    )?);
    match &spec {
        Some(p) => {
            let chart_spec = ChartSpec::from_json(&fs::read_to_string(p)?)?;
            let source = FinslerChart::from_spec(&chart_spec)?;
            let p0 = vec2(artifact.config.p0[0], artifact.config.p0[1]);
            let normalized = normalize_chart(&source, p0)?;
            report.extend(isometry_suite(
                &metric,
                &normalized,
                samples,
                ctx.seed.wrapping_add(2),
            ));
        }
        None => report.push(flat_collar_suite(
            &metric,
            samples,
            ctx.seed.wrapping_add(2),
        )),
    }
    if artifact.config.symmetric {
        report.extend(symmetry_suite(&metric, samples, ctx.seed.wrapping_add(3)));
    }

    write_atomic(
        &ctx.out_dir.join("report.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    write_atomic(&ctx.out_dir.join("report.txt"), &report.to_text())?;
    ctx.say(report.to_text().trim_end());
    Ok(if report.pass { 0 } else { 1 })
}

fn cmd_plot_data(ctx: &Ctx, artifact_path: &Path, what: PlotKind) -> Result<i32> {
    let artifact: TorusArtifact = serde_json::from_str(&fs::read_to_string(artifact_path)?)?;
    let metric = from_artifact(&artifact)?;
    let envelope = metric.envelope().clone();
    let l = metric.l;
    let (name, csv) = match what {
        PlotKind::Indicatrices => {
            let mut csv = String::from("x,y,theta,phi\n");
            for i in 0..9 {
                for j in 0..9 {
                    let x = vec2(
                        -l + (i as f64 + 0.5) * 2.0 * l / 9.0,
                        -l + (j as f64 + 0.5) * 2.0 * l / 9.0,
                    );
                    for k in 0..64 {
                        let th = TAU * k as f64 / 64.0;
                        let phi = metric.norm(x, Vec2::from_angle(th));
                        let _ = writeln!(
                            csv,
                            "{:.16e},{:.16e},{:.16e},{:.16e}",
                            x.x, x.y, th, phi
                        );
                    }
                }
            }
            ("indicatrices.csv", csv)
        }
        PlotKind::Geodesics => {
            let chart = metric.chart();
            let mut csv = String::from("curve,t,x,y\n");
            for k in 0..16 {
                let v0 = chart.unit_vector(Vec2::ZERO, Vec2::from_angle(TAU * k as f64 / 16.0))?;
                let path = chart.shoot(Vec2::ZERO, v0, 2.0 * l, DEFAULT_DT)?;
                let mut i = 0;
                while i < path.len() {
                    let _ = writeln!(
                        csv,
                        "{k},{:.16e},{:.16e},{:.16e}",
                        path.ts[i], path.xs[i].x, path.xs[i].y
                    );
                    i += 10;
                }
            }
            ("geodesics.csv", csv)
        }
        PlotKind::Cosphere => {
            let h = metric.eps / 2.0;
            let points = [
                Vec2::ZERO,
                vec2(h, 0.0),
                vec2(-h, 0.0),
                vec2(0.0, h),
                vec2(0.0, -h),
            ];
            let n = envelope.n_theta();
            let mut csv = String::from("x,y,theta,a,b\n");
            for x in points {
                for k in 0..n {
                    let th = TAU * k as f64 / n as f64;
                    let a = envelope.gradient(th, x);
                    let _ = writeln!(
                        csv,
                        "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                        x.x, x.y, th, a.a, a.b
                    );
                }
            }
            ("cosphere.csv", csv)
        }
        PlotKind::Envelope => {
            let mut csv = String::from("x,y,f\n");
            for i in 0..129 {
                for j in 0..129 {
                    let x = vec2(-l + i as f64 * l / 64.0, -l + j as f64 * l / 64.0);
                    let _ = writeln!(
                        csv,
                        "{:.16e},{:.16e},{:.16e}",
                        x.x,
                        x.y,
                        envelope.value(0.0, x)
                    );
                }
            }
            ("envelope.csv", csv)
        }
    };
    let path = ctx.out_dir.join(name);
    write_atomic(&path, &csv)?;
    ctx.say(&format!("wrote {}", path.display()));
    Ok(0)
}

/// The verify positive control: multiply the recovered field by a periodic
/// conformal bump whose core carries positive curvature, so the scan has
/// something real to find.
struct SabotagedField {
    inner: Arc<dyn NormField>,
    l: f64,
    width: f64,
}

impl SabotagedField {
    fn factor(&self, x: Vec2) -> f64 {
        let two_l = 2.0 * self.l;
        let wc = |t: f64| (t + self.l).rem_euclid(two_l) - self.l;
        let w = vec2(wc(x.x), wc(x.y));
        let mut s = 0.0;
        for kx in -1..=1 {
            for ky in -1..=1 {
                let p = w + vec2(kx as f64 * two_l, ky as f64 * two_l);
                s += 0.8 * (-p.norm_sq() / self.width).exp();
            }
        }
        s.exp()
    }
}

impl NormField for SabotagedField {
    fn eval(&self, x: Vec2, v: Vec2) -> f64 {
        self.factor(x) * self.inner.eval(x, v)
    }

    fn norm_at(&self, x: Vec2) -> MinkowskiNorm {
        let scale = self.factor(x);
        let base = self.inner.norm_at(x);
        MinkowskiNorm::general(move |v| scale * base.evaluate(v))
    }
}

fn sabotaged_chart(metric: &RecoveredMetric) -> FinslerChart {
    let torus = metric.chart();
    FinslerChart::new(
        Arc::new(SabotagedField {
            inner: torus.field().clone(),
            l: metric.l,
            // Narrow enough that small tori still focus inside their
            // horizon, capped at the width used for full-size ones.
            width: (metric.l * metric.l / 6.0).min(9.0),
        }),
        f64::INFINITY,
    )
}
