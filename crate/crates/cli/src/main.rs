//! `quadfit`: template generation, synthetic targets, fitting and evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use quadfit::fitter::{run_pipeline, BoundaryConstraintSet};
use quadfit::io::{
    aggregate_csv, metrics_csv, quality_csv, read_constraints, read_quad_mesh, read_tri_surface,
    write_constraints, write_json, write_quad_mesh, write_tri_surface, ReportFormat,
    RunConfig,
};
use quadfit::losses::gradcheck::{run_gradcheck, GradCheckSettings};
use quadfit::metrics::{aggregate, quality_report, MetricsReport, Region};
use quadfit::synth::{gen_target, gen_template, WarpSpec};
use quadfit::{Error, QuadMesh, Result};

const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "quadfit", version, about = "Structured quad-mesh template fitting")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Args)]
struct Global {
    /// JSON configuration; missing keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the fit seed and the composite warp seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Mesh output format.
    #[arg(long, global = true, value_parser = ["obj", "vtk"])]
    format: Option<String>,

    /// Report output format.
    #[arg(long, global = true, value_parser = ["json", "csv"])]
    report: Option<String>,

    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    print_defaults: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic valve template.
    Template,
    /// Write a warped target surface, boundary constraints and ground truth.
    Synth {
        /// Template mesh to warp instead of the generated one.
        #[arg(long)]
        template: Option<PathBuf>,
    },
    /// Fit the template to a target surface.
    Fit {
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        constraints: Option<PathBuf>,
        /// Ground-truth mesh; adds a metrics report.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Compare two meshes with the same connectivity.
    Eval { pred: PathBuf, truth: PathBuf },
    /// Element quality of a quad mesh.
    Quality { mesh: PathBuf },
    /// Check every loss gradient against finite differences.
    Gradcheck {
        #[arg(long, hide = true, value_name = "LOSS")]
        corrupt: Option<String>,
    },
    /// Mean and standard deviation of per-case metrics reports.
    Aggregate { dir: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut config = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        config.fit.random_seed = seed;
        if let WarpSpec::Composite { seed: s, .. } = &mut config.warp {
            *s = seed;
        }
    }
    if let Some(out) = &g.out {
        config.io.out_dir = out.clone();
    }
    if let Some(f) = &g.format {
        config.io.mesh_format = f.parse()?;
    }
    if let Some(r) = &g.report {
        config.io.report_format = r.parse()?;
    }
    config.check()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<u8> {
    let config = load_config(&cli.global)?;
    if cli.global.print_defaults {
        println!("{}", serde_json::to_string_pretty(&config)?);
        return Ok(0);
    }
    let Some(command) = cli.command else {
        eprintln!("error: no subcommand given (see --help)");
        return Ok(EXIT_USAGE);
    };
    let out = &config.io.out_dir;
    fs::create_dir_all(out)?;
    let mesh_path = |stem: &str| out.join(format!("{stem}.{}", config.io.mesh_format.extension()));
    let report_path = |stem: &str| out.join(format!("{stem}.{}", config.io.report_format.extension()));

    match command {
        Command::Template => {
            let mesh = gen_template(&config.template)?;
            let path = mesh_path("template");
            write_quad_mesh(&mesh, &path, config.io.mesh_format)?;
            println!("wrote {}", path.display());
        }
        Command::Synth { template } => {
            let mesh = template_mesh(template.as_ref().or(config.io.template.as_ref()), &config)?;
            let case = gen_target(&mesh, &config.warp, config.eval.target_level)?;
            write_quad_mesh(&mesh, &mesh_path("template"), config.io.mesh_format)?;
            write_tri_surface(&case.target, &mesh_path("target"), config.io.mesh_format)?;
            write_quad_mesh(&case.truth, &mesh_path("truth"), config.io.mesh_format)?;
            write_constraints(&case.constraints, &out.join("constraints.json"))?;
            println!(
                "wrote template, target ({} triangles), truth and constraints to {}",
                case.target.triangles.len(),
                out.display()
            );
        }
        Command::Fit {
            template,
            target,
            constraints,
            truth,
        } => {
            let mesh = template_mesh(template.as_ref().or(config.io.template.as_ref()), &config)?;
            let target_path = target
                .or_else(|| config.io.target.clone())
                .ok_or_else(|| Error::Config("fit needs a target (--target or io.target)".into()))?;
            let target = read_tri_surface(&target_path)?;
            let constraints = match constraints.or_else(|| config.io.constraints.clone()) {
                Some(path) => read_constraints(&path)?,
                None => BoundaryConstraintSet::default(),
            };
            let (fitted, report) = run_pipeline(&mesh, &target, &constraints, &config.fit)?;
            write_quad_mesh(&fitted, &mesh_path("fitted"), config.io.mesh_format)?;
            write_json(&report, &out.join("fit_report.json"))?;
            println!(
                "post-affine chamfer {:.6} mm, final chamfer {:.6} mm, inverted quads {}",
                report.post_affine_chamfer, report.final_chamfer, report.quality.inverted
            );
            if let Some(truth_path) = truth.or_else(|| config.io.truth.clone()) {
                let truth = read_quad_mesh(&truth_path, false)?;
                let metrics = MetricsReport::compute(&fitted, &truth)?;
                write_metrics(&metrics, &report_path("metrics"), config.io.report_format)?;
                if let Some(whole) = metrics.regions.get(&Region::Whole) {
                    println!("appd {:.6} mm against {}", whole.appd, truth_path.display());
                }
            }
        }
        Command::Eval { pred, truth } => {
            let pred = read_quad_mesh(&pred, false)?;
            let truth = read_quad_mesh(&truth, false)?;
            let metrics = MetricsReport::compute(&pred, &truth)?;
            write_metrics(&metrics, &report_path("metrics"), config.io.report_format)?;
            for (region, m) in &metrics.regions {
                println!(
                    "{:8} appd {:.6} chamfer {:.6} hausdorff {:.6}",
                    region.name(),
                    m.appd,
                    m.chamfer,
                    m.hausdorff
                );
            }
        }
        Command::Quality { mesh } => {
            let mesh = read_quad_mesh(&mesh, false)?;
            mesh.validate().into_result()?;
            let q = quality_report(&mesh);
            match config.io.report_format {
                ReportFormat::Json => write_json(&q, &report_path("quality"))?,
                ReportFormat::Csv => fs::write(report_path("quality"), quality_csv(&q)?)?,
            }
            println!(
                "quads {} degenerate {} inverted {} max corner deviation {:.3} deg",
                q.quads, q.degenerate, q.inverted, q.corner_deviation.max
            );
        }
        Command::Gradcheck { corrupt } => {
            let settings = GradCheckSettings {
                cases: config.eval.gradcheck_cases,
                step: config.eval.gradcheck_step,
                tolerance: config.eval.gradcheck_tolerance,
                seed: cli.global.seed.unwrap_or(0),
                corrupt,
            };
            let report = run_gradcheck(&settings)?;
            write_json(&report, &out.join("gradcheck.json"))?;
            for l in &report.losses {
                println!(
                    "{} {:16} checked {:3} excluded {:3} max relative error {:.3e}",
                    if l.passed { "PASS" } else { "FAIL" },
                    l.loss,
                    l.checked,
                    l.skipped,
                    l.max_error
                );
            }
            if !report.passed() {
                return Ok(1);
            }
        }
        Command::Aggregate { dir } => {
            let cases = read_cases(&dir)?;
            let report = aggregate(&cases);
            match config.io.report_format {
                ReportFormat::Json => write_json(&report, &report_path("aggregate"))?,
                ReportFormat::Csv => fs::write(report_path("aggregate"), aggregate_csv(&report)?)?,
            }
            for (region, metrics) in &report.regions {
                let cells: Vec<String> = metrics
                    .iter()
                    .map(|(name, m)| format!("{name} {:.6} ± {:.6}", m.mean, m.std))
                    .collect();
                println!("{:8} {}", region.name(), cells.join("  "));
            }
        }
    }
    Ok(0)
}

fn template_mesh(path: Option<&PathBuf>, config: &RunConfig) -> Result<QuadMesh> {
    match path {
        Some(p) => read_quad_mesh(p, false),
        None => gen_template(&config.template),
    }
}

fn write_metrics(metrics: &MetricsReport, path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Json => write_json(metrics, path),
        ReportFormat::Csv => Ok(fs::write(path, metrics_csv(metrics)?)?),
    }
}

/// Per-case JSON metrics reports in `dir`: every `<case>.json` file and every
/// `<case>/metrics.json`, except a previous `aggregate.json`.
fn read_cases(dir: &Path) -> Result<Vec<(String, MetricsReport)>> {
    let mut cases = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let (name, file) = if path.is_dir() {
            let file = path.join("metrics.json");
            if !file.is_file() {
                continue;
            }
            (path.file_name(), file)
        } else if path.extension().is_some_and(|e| e == "json") {
            if path.file_stem().is_some_and(|s| s == "aggregate") {
                continue;
            }
            (path.file_stem(), path.clone())
        } else {
            continue;
        };
        let name = name.map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let report: MetricsReport = serde_json::from_str(&fs::read_to_string(&file)?)
            .map_err(|e| Error::Config(format!("{}: not a metrics report: {e}", file.display())))?;
        cases.push((name, report));
    }
    if cases.is_empty() {
        return Err(Error::Config(format!("no metrics reports in {}", dir.display())));
    }
    cases.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(cases)
}
