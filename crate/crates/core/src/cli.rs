//! Command-line driver.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{MeshSource, RunConfig, TARGET_FIELD};
use crate::diagnostics::{self, LipschitzStudyRow};
use crate::elasticity::{compute_mu, ElasticityOperator};
use crate::error::{Error, Result};
use crate::mesh::{mesh_quality, write_msh, write_vtk, Mesh, VtkField};
use crate::optimizer::{self, RunWriter, Termination};
use crate::plot::{write_loglog, Series};
use crate::shape_calculus::{apply_restriction, evaluate_with_sample, fd_check};

#[derive(Debug, Parser)]
#[command(name = "shapeflow", version, about = "Stochastic shape optimization for interface identification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the initial (or target) mesh of a config and report its quality.
    GenMesh {
        #[arg(long)]
        config: PathBuf,
        /// Mesh the target geometry instead of the initial one.
        #[arg(long)]
        target: bool,
        /// Override the mesh size.
        #[arg(long)]
        h: Option<f64>,
        /// Output `.msh` path (a `.vtk` is written next to it).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve for the reference data on the target geometry.
    GenTarget {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the stochastic gradient method.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare the assembled shape derivative with difference quotients.
    CheckGradient {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lipschitz-quotient and second-moment studies on a run's checkpoints.
    Lipschitz {
        #[arg(long)]
        config: PathBuf,
        /// Run directory (default: the config's output directory).
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
}

/// Parses arguments, runs and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("SHAPEFLOW_LOG", "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::GenMesh { config, target, h, out } => gen_mesh(&config, target, h, out).map(|_| 0),
        Command::GenTarget { config, out } => gen_target(&config, out).map(|_| 0),
        Command::Optimize {
            config,
            out,
            iterations,
            seed,
        } => optimize(&config, out, iterations, seed),
        Command::CheckGradient { config, out } => check_gradient(&config, out).map(|_| 0),
        Command::Lipschitz { config, run, m, stride } => lipschitz(&config, run, m, stride).map(|_| 0),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn summary(mesh: &Mesh) -> String {
    format!(
        "{} nodes, {} triangles, {} interface loops",
        mesh.num_nodes(),
        mesh.num_triangles(),
        mesh.loops().len()
    )
}

fn gen_mesh(config: &Path, target: bool, h: Option<f64>, out: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let mut source = if target {
        cfg.target
            .geometry
            .clone()
            .ok_or_else(|| Error::Config("config has no target geometry".into()))?
    } else {
        cfg.geometry.clone()
    };
    if let (Some(h), MeshSource::Generate(spec)) = (h, &mut source) {
        if !(h > 0.0) {
            return Err(Error::Config(format!("mesh size must be positive, got {h}")));
        }
        spec.h = h;
    }
    let mesh = source.build(&cfg.base_dir)?;
    let out = out.unwrap_or_else(|| cfg.output_dir().join(if target { "target_mesh.msh" } else { "initial_mesh.msh" }));
    ensure_parent(&out)?;
    write_msh(&out, &mesh, &[])?;
    write_vtk(out.with_extension("vtk"), &mesh, &[])?;
    println!("{}", summary(&mesh));
    println!("{}", mesh_quality(&mesh));
    println!("wrote {}", out.display());
    Ok(())
}

fn gen_target(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let (mesh, y) = cfg.solve_target()?;
    let out = out.unwrap_or_else(|| cfg.output_dir().join("target.msh"));
    ensure_parent(&out)?;
    write_msh(&out, &mesh, &[(TARGET_FIELD, &y)])?;
    write_vtk(out.with_extension("vtk"), &mesh, &[VtkField::Scalar(TARGET_FIELD, &y)])?;
    println!("{}", summary(&mesh));
    println!("target range [{:.6e}, {:.6e}]", y.0.iter().cloned().fold(f64::INFINITY, f64::min), y.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct RunSummary {
    termination: Termination,
    iterations: usize,
    seed: u64,
    wall_time_s: f64,
    nodes: usize,
    triangles: usize,
}

fn optimize(config: &Path, out: Option<PathBuf>, iterations: Option<usize>, seed: Option<u64>) -> Result<i32> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(n) = iterations {
        cfg.optimizer.iterations = n;
    }
    if let Some(s) = seed {
        cfg.optimizer.seed = s;
    }
    let dir = out.unwrap_or_else(|| cfg.output_dir());
    let mesh = cfg.initial_mesh()?;
    let problem = cfg.problem()?;
    log::info!("initial mesh: {}", summary(&mesh));
    let mut writer = RunWriter::create(&dir)?;
    let report = optimizer::run(mesh, &problem, &cfg.optimizer, Some(&mut writer))?;

    write_msh(dir.join("final.msh"), &report.mesh, &[])?;
    write_vtk(dir.join("final.vtk"), &report.mesh, &[])?;
    let n: Vec<f64> = report.log.iter().map(|r| r.n as f64).collect();
    let pts = |f: fn(&optimizer::LogRow) -> f64| n.iter().copied().zip(report.log.iter().map(f)).collect::<Vec<_>>();
    write_loglog(
        dir.join("objective.svg"),
        "Objective",
        "iteration n",
        "J(u_n, xi_n)",
        &[Series {
            label: "J",
            points: pts(|r| r.j),
        }],
    )?;
    write_loglog(
        dir.join("deformation.svg"),
        "Deformation field",
        "iteration n",
        "|V_n|_H1",
        &[Series {
            label: "|V_n|_H1",
            points: pts(|r| r.v_h1),
        }],
    )?;
    let s = RunSummary {
        termination: report.termination,
        iterations: report.log.len(),
        seed: cfg.optimizer.seed,
        wall_time_s: report.wall_time.as_secs_f64(),
        nodes: report.mesh.num_nodes(),
        triangles: report.mesh.num_triangles(),
    };
    let p = dir.join("run.json");
    let text = serde_json::to_string_pretty(&s).map_err(|e| Error::Numerical(e.to_string()))?;
    std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
    println!(
        "{} iterations in {:.1} s, termination: {:?}, output in {}",
        s.iterations,
        s.wall_time_s,
        s.termination,
        dir.display()
    );
    Ok(match report.termination {
        Termination::MeshFailure => 3,
        _ => 0,
    })
}

fn check_gradient(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let mesh = cfg.initial_mesh()?;
    let problem = cfg.problem()?;
    let sc = cfg.scenario.mean_scenario();
    let sample = problem.target.sample(&mesh)?;
    let e = evaluate_with_sample(&mesh, &sc, &sample, cfg.optimizer.nu)?;
    let mu = compute_mu(&mesh, cfg.optimizer.mu_min, cfg.optimizer.mu_max)?;
    let v = ElasticityOperator::new(&mesh, &mu).solve(&apply_restriction(&mesh, &e.derivative, cfg.optimizer.restriction))?;
    let vmax = v.max_norm();
    if vmax == 0.0 {
        return Err(Error::Numerical("deformation field vanishes; nothing to check".into()));
    }
    let v = v.scaled(cfg.gradient_check.v_max / vmax);
    let rows = fd_check(&mesh, &sc, &problem.target, cfg.optimizer.nu, &v, &cfg.gradient_check.t)?;
    let out = out.unwrap_or_else(|| cfg.output_dir().join("gradient_check.csv"));
    write_csv(&out, &rows)?;
    println!("{:>10} {:>14} {:>14} {:>10}", "t", "quotient", "assembled", "rel_err");
    for r in &rows {
        println!("{:>10.1e} {:>14.6e} {:>14.6e} {:>10.2e}", r.t, r.quotient, r.assembled, r.rel_err);
    }
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct DistanceRow {
    n: usize,
    d_approx: f64,
}

fn lipschitz(config: &Path, run: Option<PathBuf>, m: Option<usize>, stride: Option<usize>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let dir = run.unwrap_or_else(|| cfg.output_dir());
    let m = m.unwrap_or(cfg.diagnostics.m).max(1);
    let stride = stride.unwrap_or(cfg.diagnostics.stride);
    let problem = cfg.problem()?;
    let checkpoints = diagnostics::load_checkpoints(&dir, stride)?;
    if checkpoints.is_empty() {
        return Err(Error::Config(format!("no checkpoints in {}", dir.display())));
    }
    let rows: Vec<LipschitzStudyRow> = diagnostics::lipschitz_study(&checkpoints, &problem, &cfg.optimizer, m)?;
    write_csv(&dir.join("lipschitz.csv"), &rows)?;
    let dist: Vec<DistanceRow> = rows.iter().map(|r| DistanceRow { n: r.n, d_approx: r.d_approx }).collect();
    write_csv(&dir.join("distance.csv"), &dist)?;
    write_loglog(
        dir.join("lipschitz.svg"),
        "Lipschitz quotient",
        "iteration n",
        "L_n",
        &[Series {
            label: "L_n",
            points: rows.iter().map(|r| (r.n as f64, r.l_n)).collect(),
        }],
    )?;

    // evenly spaced over the run, ending at the last checkpoint
    let later: Vec<&(usize, Mesh)> = checkpoints.iter().filter(|(n, _)| *n > 1).collect();
    let k = cfg.diagnostics.second_moment_points.min(later.len());
    if k > 0 {
        let picks: Vec<usize> = (1..=k).map(|i| i * later.len() / k - 1).collect();
        let mut moments = Vec::new();
        for i in picks {
            let (n, mesh) = later[i];
            let row = diagnostics::second_moment(mesh, &problem, &cfg.optimizer, m, *n)?;
            println!("n = {:5}  E|V|^2 ~ {:.6e} +- {:.1e}", row.n, row.mean_sq, row.stderr);
            moments.push(row);
        }
        write_csv(&dir.join("second_moment.csv"), &moments)?;
    }
    if let Some((lo, hi)) = finite_range(rows.iter().map(|r| r.l_n)) {
        println!("{} quotients, L_n in [{lo:.4e}, {hi:.4e}]", rows.len());
    }
    println!("wrote {}", dir.join("lipschitz.csv").display());
    Ok(())
}

fn finite_range(it: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    it.filter(|v| v.is_finite())
        .fold(None, |acc, v| Some(acc.map_or((v, v), |(a, b): (f64, f64)| (a.min(v), b.max(v)))))
}
