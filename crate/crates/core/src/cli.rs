//! Command-line experiment runner: every subcommand reads one scenario file and writes CSV/JSON
//! artifacts, the resolved configuration and a text summary into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::boundary::{conformal_jet_oracle, fit_slope, jet_recover, linearize_distance};
use crate::config::{ExperimentConfig, GaugeMode, Route};
use crate::decomp::DecompOperator;
use crate::error::{Error, Result};
use crate::gauge::{gauge_normalize_boundary, gauge_normalize_global, semigeodesic_chart};
use crate::geodesic::distance_table;
use crate::inversion::{
    closed_loop_operators, holder_fit, reconstruct_solenoidal, relative_error,
    stability_ratio_sweep, InversionOptions, InversionReport,
};
use crate::metric::Family;
use crate::simplicity::check_simplicity;
use crate::synth::random_tensor;
use crate::tensorfield::{inner, norm, Field, Support};
use crate::xray::{forward, normal_kernel_field, InflowGrid, XrayOperator};

#[derive(Debug, Parser)]
#[command(
    name = "geotomo",
    version,
    about = "Geodesic X-ray tomography experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output` in the scenario.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `seed` in the scenario.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Normal-operator route (normal-op only).
    #[arg(long, value_enum)]
    pub route: Option<Route>,
    /// Suppress the summary on standard output.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Sampled convexity and conjugate-point check.
    SimplicityCheck(RunArgs),
    /// Squared boundary distances between equispaced boundary points.
    DistanceTable(RunArgs),
    /// Geodesic X-ray transform of the input field.
    Sinogram(RunArgs),
    /// Normal operator of the input field.
    NormalOp(RunArgs),
    /// Solenoidal/potential decomposition.
    Decompose(RunArgs),
    /// Boundary or global gauge normalization.
    GaugeNormalize(RunArgs),
    /// Boundary jets of `g − g₀` from boundary distances.
    JetRecover(RunArgs),
    /// Linearization remainder of the boundary distance.
    Linearize(RunArgs),
    /// Closed-loop reconstruction of the solenoidal part.
    Invert(RunArgs),
    /// Stability ratios over random fields.
    StabilitySweep(RunArgs),
    /// Boundary-distance gap against metric gap.
    HolderFit(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SimplicityCheck(_) => "simplicity-check",
            Command::DistanceTable(_) => "distance-table",
            Command::Sinogram(_) => "sinogram",
            Command::NormalOp(_) => "normal-op",
            Command::Decompose(_) => "decompose",
            Command::GaugeNormalize(_) => "gauge-normalize",
            Command::JetRecover(_) => "jet-recover",
            Command::Linearize(_) => "linearize",
            Command::Invert(_) => "invert",
            Command::StabilitySweep(_) => "stability-sweep",
            Command::HolderFit(_) => "holder-fit",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::SimplicityCheck(a)
            | Command::DistanceTable(a)
            | Command::Sinogram(a)
            | Command::NormalOp(a)
            | Command::Decompose(a)
            | Command::GaugeNormalize(a)
            | Command::JetRecover(a)
            | Command::Linearize(a)
            | Command::Invert(a)
            | Command::StabilitySweep(a)
            | Command::HolderFit(a) => a,
        }
    }
}

/// Write-to-temporary-then-rename into one output directory.
pub struct Artifacts {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Artifacts> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &target)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)
            .map_err(|e| Error::Format(format!("cannot serialize {name}: {e}")))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn field<const K: usize>(&mut self, name: &str, f: &Field<K>) -> Result<()> {
        let mut buf = Vec::new();
        f.write_csv(&mut buf)?;
        self.write(name, &buf)
    }
}

/// Outcome of one subcommand.
pub struct RunOutcome {
    pub summary: String,
    pub files: Vec<String>,
    pub dir: PathBuf,
}

/// Resolves the configuration with the command-line overrides and runs the subcommand.
pub fn run(cmd: &Command) -> Result<RunOutcome> {
    let args = cmd.args();
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    if let Some(route) = args.route {
        if !matches!(cmd, Command::NormalOp(_)) {
            return Err(Error::Config("--route applies to normal-op only".into()));
        }
        cfg.normal_op.route = route;
    }
    let base = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut art = Artifacts::new(&cfg.output)?;
    let body = dispatch(cmd, &cfg, &base, &mut art).map_err(|e| {
        let ctx = format!("scenario '{}', {}", cfg.scenario, cmd.name());
        match e {
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
            e => Error::Input(format!("{ctx}: {e}")),
        }
    })?;
    art.write("resolved_config.toml", cfg.to_toml()?.as_bytes())?;
    let mut summary = format!(
        "scenario: {}\nsubcommand: {}\nseed: {}\nmetric family: {:?}\n",
        cfg.scenario,
        cmd.name(),
        cfg.seed,
        cfg.metric.family()
    );
    summary.push_str(&body);
    let mut files = art.files.clone();
    files.push("summary.txt".into());
    summary.push_str(&format!("artifacts: {}\n", files.join(", ")));
    art.write("summary.txt", summary.as_bytes())?;
    Ok(RunOutcome {
        summary,
        files,
        dir: art.dir,
    })
}

fn dispatch(
    cmd: &Command,
    cfg: &ExperimentConfig,
    base: &Path,
    art: &mut Artifacts,
) -> Result<String> {
    match cmd {
        Command::SimplicityCheck(_) => simplicity(cfg, art),
        Command::DistanceTable(_) => distances(cfg, art),
        Command::Sinogram(_) => sinogram(cfg, base, art),
        Command::NormalOp(_) => normal_op(cfg, base, art),
        Command::Decompose(_) => decompose(cfg, base, art),
        Command::GaugeNormalize(_) => gauge(cfg, base, art),
        Command::JetRecover(_) => jets(cfg, art),
        Command::Linearize(_) => linearize(cfg, art),
        Command::Invert(_) => invert(cfg, base, art),
        Command::StabilitySweep(_) => stability(cfg, art),
        Command::HolderFit(_) => holder(cfg, art),
    }
}

fn simplicity(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<String> {
    let r = check_simplicity(&cfg.metric, &cfg.simplicity)?;
    art.json("simplicity.json", &r)?;
    let mut s = format!(
        "simple: {}\nconvexity margin: {:.6e}\nconjugate point: {}\nmin Jacobi det/t: {:.6e}\ngeodesics sampled: {}\n",
        r.simple, r.convexity_margin, r.conjugate_point, r.min_jacobi, r.geodesics
    );
    for d in r.diagnostics.iter().take(5) {
        let _ = writeln!(s, "  {d}");
    }
    Ok(s)
}

fn distances(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<String> {
    let dc = &cfg.distance_table;
    let t = distance_table(&cfg.metric, dc.points, &dc.shooting)?;
    let mut csv = String::from("i,j,beta_i,beta_j,rho2,xi_x,xi_y\n");
    for (i, row) in t.rho2.iter().enumerate() {
        for (j, r2) in row.iter().enumerate() {
            let (a, b) = t.covectors[i][j].map_or((String::new(), String::new()), |xi| {
                (format!("{:.17e}", xi[0]), format!("{:.17e}", xi[1]))
            });
            let _ = writeln!(
                csv,
                "{i},{j},{:.17e},{:.17e},{r2:.17e},{a},{b}",
                t.angles[i], t.angles[j]
            );
        }
    }
    art.write("distances.csv", csv.as_bytes())?;
    let max = t.rho2.iter().flatten().fold(0.0f64, |m, v| m.max(*v));
    Ok(format!(
        "boundary points: {}\nmax rho^2: {max:.6e}\n",
        dc.points
    ))
}

fn sinogram(cfg: &ExperimentConfig, base: &Path, art: &mut Artifacts) -> Result<String> {
    let f = cfg.field(base)?;
    let inflow = Arc::new(InflowGrid::new(
        &cfg.metric,
        cfg.inflow.z_count,
        cfg.inflow.w_count,
    )?);
    let s = forward(&cfg.metric, &f, &inflow, &cfg.xray)?;
    let mut buf = Vec::new();
    s.write_csv(&mut buf)?;
    art.write("sinogram.csv", &buf)?;
    let mut bin = Vec::new();
    s.write_binary(&mut bin)?;
    art.write("sinogram.bin", &bin)?;
    Ok(format!(
        "inflow samples: {} x {}\nmax |If|: {:.6e}\n||If||_mu: {:.6e}\n",
        cfg.inflow.z_count,
        cfg.inflow.w_count,
        s.values.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        s.inner(&s).sqrt()
    ))
}

fn normal_op(cfg: &ExperimentConfig, base: &Path, art: &mut Artifacts) -> Result<String> {
    let f = cfg.field(base)?;
    let grid = cfg.grid()?;
    let nc = &cfg.normal_op;
    let (nf, extra) = match nc.route {
        Route::Composed => {
            let op = XrayOperator::new(
                &cfg.metric,
                grid,
                nc.support,
                cfg.inflow.z_count,
                cfg.inflow.w_count,
                cfg.xray,
            )?;
            (op.normal(&f)?, String::new())
        }
        Route::Kernel => {
            let stride = nc.stride.max(1);
            let nodes: Vec<usize> = (0..grid.len())
                .filter(|&idx| {
                    let (i, j) = grid.coords(idx);
                    i % stride == 0 && j % stride == 0 && grid.in_support(idx, Support::Inner)
                })
                .collect();
            let (nf, skipped) = normal_kernel_field(&cfg.metric, &f, &nodes, &nc.kernel)?;
            (
                nf,
                format!(
                    "kernel nodes: {}\nskipped quadrature points: {skipped}\n",
                    nodes.len()
                ),
            )
        }
    };
    art.field("normal.csv", &nf)?;
    Ok(format!(
        "route: {:?}\nmax |Nf|: {:.6e}\n{extra}",
        nc.route,
        nf.max_abs()
    ))
}

#[derive(Serialize)]
struct DecomposeReport {
    iterations: usize,
    residual: f64,
    norm_f: f64,
    norm_solenoidal: f64,
    norm_potential: f64,
    /// `|⟨f^s, dv⟩| / (‖f‖ ‖dv‖)`.
    orthogonality: f64,
}

fn decompose(cfg: &ExperimentConfig, base: &Path, art: &mut Artifacts) -> Result<String> {
    let f = cfg.field(base)?;
    let op = DecompOperator::new(&cfg.metric, cfg.grid()?, cfg.decompose)?;
    let d = op.decompose(&f.grid_only())?;
    let nf = norm(&op.geo, &f.grid_only())?;
    let ns = norm(&op.geo, &d.solenoidal)?;
    let np = norm(&op.geo, &d.potential_part)?;
    let cross = inner(&op.geo, &d.solenoidal, &d.potential_part)?.abs();
    let report = DecomposeReport {
        iterations: d.report.iterations,
        residual: d.report.residual,
        norm_f: nf,
        norm_solenoidal: ns,
        norm_potential: np,
        orthogonality: if nf * np > 0.0 {
            cross / (nf * np)
        } else {
            0.0
        },
    };
    art.field("solenoidal.csv", &d.solenoidal)?;
    art.field("potential.csv", &d.potential)?;
    art.field("potential_part.csv", &d.potential_part)?;
    art.json("decompose.json", &report)?;
    Ok(format!(
        "CG iterations: {}\nrelative residual: {:.3e}\n||f^s|| / ||f||: {:.6}\n||dv|| / ||f||: {:.6}\northogonality: {:.3e}\n",
        report.iterations, report.residual, ns / nf, np / nf, report.orthogonality
    ))
}

#[derive(Serialize)]
struct GaugeReport {
    mode: GaugeMode,
    max_nn: f64,
    max_tn: f64,
    scale: f64,
    relative: f64,
    points: usize,
    flagged_nodes: Option<usize>,
    node_relative: Option<f64>,
}

fn gauge(cfg: &ExperimentConfig, base: &Path, art: &mut Artifacts) -> Result<String> {
    let f = cfg.field(base)?;
    let report = match cfg.gauge.mode {
        GaugeMode::Boundary => {
            let g = gauge_normalize_boundary(&cfg.metric, &f, &cfg.gauge.boundary)?;
            art.field("f_tilde.csv", &g.f_tilde)?;
            art.field("potential.csv", &g.v)?;
            GaugeReport {
                mode: GaugeMode::Boundary,
                max_nn: g.residual.max_nn,
                max_tn: g.residual.max_tn,
                scale: g.residual.scale,
                relative: g.residual.relative(),
                points: g.residual.points,
                flagged_nodes: None,
                node_relative: None,
            }
        }
        GaugeMode::Global => {
            let chart = semigeodesic_chart(&cfg.metric, f.grid, cfg.gauge.semigeodesic)?;
            let g = gauge_normalize_global(&cfg.metric, &chart, &f)?;
            art.field("f_sharp.csv", &g.f_sharp)?;
            art.field("potential.csv", &g.v)?;
            GaugeReport {
                mode: GaugeMode::Global,
                max_nn: g.residual.max_nn,
                max_tn: g.residual.max_tn,
                scale: g.residual.scale,
                relative: g.residual.relative(),
                points: g.residual.points,
                flagged_nodes: Some(chart.flagged.iter().filter(|b| **b).count()),
                node_relative: Some(g.node_residual.relative()),
            }
        }
    };
    art.json("gauge.json", &report)?;
    Ok(format!(
        "mode: {:?}\nmax |f_nn|: {:.3e}\nmax |f_tn|: {:.3e}\nrelative to field scale: {:.3e}\n",
        report.mode, report.max_nn, report.max_tn, report.relative
    ))
}

#[derive(Serialize)]
struct JetReport {
    order: usize,
    base_points: usize,
    /// `max_j |f^(k) − oracle| / max_j |oracle|` per order, when an oracle applies.
    relative_error: Vec<Option<f64>>,
}

fn jets(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<String> {
    let g0 = cfg.reference_metric();
    let jet = jet_recover(&g0, &cfg.metric, &cfg.jets)?;
    let oracle = g0.family() == Family::Euclidean
        && cfg.metric.family() != Family::General
        && g0.domain == cfg.metric.domain;
    let mut csv = String::from("beta,k,value,oracle\n");
    let mut errs = Vec::new();
    for (k, fk) in jet.jets.iter().enumerate() {
        let (mut emax, mut omax) = (0.0f64, 0.0f64);
        for (j, &beta) in jet.betas.iter().enumerate() {
            let o = (oracle && k < 2).then(|| conformal_jet_oracle(&cfg.metric, beta)[k]);
            let os = o.map_or(String::new(), |v| format!("{v:.17e}"));
            let _ = writeln!(csv, "{beta:.17e},{k},{:.17e},{os}", fk[j]);
            if let Some(v) = o {
                emax = emax.max((fk[j] - v).abs());
                omax = omax.max(v.abs());
            }
        }
        errs.push((oracle && k < 2).then(|| if omax > 0.0 { emax / omax } else { emax }));
    }
    art.write("jets.csv", csv.as_bytes())?;
    let report = JetReport {
        order: cfg.jets.order,
        base_points: cfg.jets.base_points,
        relative_error: errs.clone(),
    };
    art.json("jets.json", &report)?;
    let mut s = format!(
        "jet orders: 0..={}\nbase points: {}\n",
        cfg.jets.order, cfg.jets.base_points
    );
    for (k, e) in errs.iter().enumerate() {
        match e {
            Some(e) => {
                let _ = writeln!(s, "order {k}: relative error vs closed form {e:.3e}");
            }
            None => {
                let _ = writeln!(s, "order {k}: no closed-form oracle");
            }
        }
    }
    Ok(s)
}

#[derive(Serialize)]
struct LinearizeReport {
    amplitudes: Vec<f64>,
    max_remainder: Vec<f64>,
    max_scaled_remainder: Vec<f64>,
    slope: f64,
}

fn linearize(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<String> {
    let lc = &cfg.linearize;
    let inflow = InflowGrid::new(&cfg.metric, lc.z_count, lc.w_count)?;
    let f = lc.perturbation();
    let mut csv =
        String::from("amplitude,beta,psi,exit_beta,rho,rho_perturbed,half_if,remainder\n");
    let mut maxes = Vec::new();
    let mut scaled = Vec::new();
    for &a in &lc.amplitudes {
        let t = linearize_distance(&cfg.metric, &f.scaled(a), &inflow, &lc.options)?;
        for r in &t.rows {
            let _ = writeln!(
                csv,
                "{a:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                r.beta, r.psi, r.exit_beta, r.rho, r.rho_perturbed, r.half_if, r.remainder
            );
        }
        maxes.push(t.max_remainder);
        scaled.push(t.max_scaled_remainder);
    }
    let pts: Vec<(f64, f64)> = lc
        .amplitudes
        .iter()
        .zip(&maxes)
        .filter(|(a, m)| **a > 0.0 && **m > 0.0)
        .map(|(a, m)| (a.ln(), m.ln()))
        .collect();
    let slope = if pts.len() >= 2 {
        fit_slope(&pts)
    } else {
        f64::NAN
    };
    art.write("remainder.csv", csv.as_bytes())?;
    let report = LinearizeReport {
        amplitudes: lc.amplitudes.clone(),
        max_remainder: maxes,
        max_scaled_remainder: scaled,
        slope,
    };
    art.json("linearize.json", &report)?;
    let mut s = String::new();
    for (a, m) in report.amplitudes.iter().zip(&report.max_remainder) {
        let _ = writeln!(s, "amplitude {a:.4}: max |R| = {m:.6e}");
    }
    let _ = writeln!(s, "log-log slope: {slope:.4}");
    Ok(s)
}

#[derive(Serialize)]
struct LCurvePoint {
    regularization: f64,
    residual: f64,
    solution_norm: f64,
    relative_error: f64,
}

/// Corner of the L-curve: the point of largest discrete curvature of
/// `(log residual, log solution norm)`.
fn l_curve_corner(points: &[LCurvePoint]) -> usize {
    if points.len() < 3 {
        return 0;
    }
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| {
            (
                p.residual.max(1e-300).ln(),
                p.solution_norm.max(1e-300).ln(),
            )
        })
        .collect();
    let mut best = (1, f64::NEG_INFINITY);
    for i in 1..xy.len() - 1 {
        let (a, b, c) = (xy[i - 1], xy[i], xy[i + 1]);
        let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
        let la = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let lb = ((c.0 - b.0).powi(2) + (c.1 - b.1).powi(2)).sqrt();
        let lc = ((c.0 - a.0).powi(2) + (c.1 - a.1).powi(2)).sqrt();
        let k = 2.0 * cross.abs() / (la * lb * lc).max(1e-300);
        if k > best.1 {
            best = (i, k);
        }
    }
    best.0
}

fn invert(cfg: &ExperimentConfig, base: &Path, art: &mut Artifacts) -> Result<String> {
    let grid = cfg.grid()?;
    let f = if cfg.field.is_some() {
        cfg.field(base)?
    } else {
        random_tensor(grid, Support::Inner, cfg.seed, 0.9, 2)
    };
    let ic = &cfg.invert;
    let (op, decomp) = closed_loop_operators(&cfg.metric, grid, &ic.closed_loop)?;
    let truth = decomp.solenoidal(&f.grid_only())?;
    let data = op.normal(&f)?;
    let mut opts = ic.closed_loop.inversion;
    let mut curve = Vec::new();
    if !ic.l_curve.is_empty() {
        let sd = decomp.solenoidal(&data.grid_only())?;
        for &reg in &ic.l_curve {
            let o = InversionOptions {
                regularization: reg,
                ..opts
            };
            let r = reconstruct_solenoidal(&op, &decomp, &data, &o)?;
            let fit = decomp.solenoidal(&op.normal(&r.reconstruction)?)?;
            curve.push(LCurvePoint {
                regularization: reg,
                residual: norm(&decomp.geo, &fit.sub(&sd)?)?,
                solution_norm: norm(&decomp.geo, &r.reconstruction)?,
                relative_error: relative_error(&decomp, &r.reconstruction, &truth)?,
            });
        }
        opts.regularization = curve[l_curve_corner(&curve)].regularization;
        let mut csv = String::from("regularization,residual,solution_norm,relative_error\n");
        for p in &curve {
            let _ = writeln!(
                csv,
                "{:.17e},{:.17e},{:.17e},{:.17e}",
                p.regularization, p.residual, p.solution_norm, p.relative_error
            );
        }
        art.write("l_curve.csv", csv.as_bytes())?;
    }
    let mut report: InversionReport = reconstruct_solenoidal(&op, &decomp, &data, &opts)?;
    report.relative_error = Some(relative_error(&decomp, &report.reconstruction, &truth)?);
    art.field("reconstruction.csv", &report.reconstruction)?;
    art.field("truth.csv", &truth)?;
    art.json("invert.json", &report)?;
    Ok(format!(
        "grid: {}\nrelative regularization: {:.3e}\nCG iterations: {} (best {})\nstagnated: {}\nrelative L2 error: {:.6}\n",
        grid.n,
        opts.regularization,
        report.iterations,
        report.best_iteration,
        report.stagnated,
        report.relative_error.unwrap_or(f64::NAN)
    ))
}

fn stability(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<String> {
    let s = stability_ratio_sweep(&cfg.metric, cfg.seed, &cfg.stability)?;
    let mut csv = String::from("trial,ratio,ratio_perturbed\n");
    for (t, r) in s.base.ratios.iter().enumerate() {
        let p = s
            .perturbed
            .as_ref()
            .map_or(String::new(), |p| format!("{:.17e}", p.ratios[t]));
        let _ = writeln!(csv, "{t},{r:.17e},{p}");
    }
    art.write("ratios.csv", csv.as_bytes())?;
    art.json("stability.json", &s)?;
    let mut out = format!(
        "trials: {}\nmedian ratio: {:.6e}\nmax ratio: {:.6e}\nmax / median: {:.4}\n",
        s.base.ratios.len(),
        s.base.median,
        s.base.max,
        s.base.max_over_median
    );
    if let (Some(p), Some(c)) = (&s.perturbed, s.max_trial_change) {
        let _ = writeln!(
            out,
            "perturbed median: {:.6e}\nperturbed max / median: {:.4}\nmax per-trial change: {c:.4}",
            p.median, p.max_over_median
        );
    }
    Ok(out)
}

fn holder(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<String> {
    let h = holder_fit(&cfg.metric, &cfg.holder)?;
    let mut csv = String::from("amplitude,delta,gap\n");
    for ((a, d), g) in h.amplitudes.iter().zip(&h.delta).zip(&h.gap) {
        let _ = writeln!(csv, "{a:.17e},{d:.17e},{g:.17e}");
    }
    art.write("holder.csv", csv.as_bytes())?;
    art.json("holder.json", &h)?;
    Ok(format!(
        "fitted exponent: {:.4}\ndelta monotone in amplitude: {}\ncaveat: the fit is a one-sided desk-scale witness over {} amplitudes, not an estimate of the optimal exponent; the theoretical exponent below 1 and its constants are not reproducible at desk scale\n",
        h.exponent,
        h.delta_monotone,
        h.amplitudes.len()
    ))
}
