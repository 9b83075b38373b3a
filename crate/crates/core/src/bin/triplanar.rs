//! Command-line frontend: kinematics queries, slice analysis, verification
//! and figure export.
//!
//! Exit status contract: 0 success, 1 verification mismatch, 2 usage error,
//! 3 validation/config error, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use triplanar::atlas::{self, SliceAtlas};
use triplanar::error::Error;
use triplanar::kinematics::{FkOptions, FkSolver, Mechanism, SlicePose};
use triplanar::model::{parse_config, Config};
use triplanar::plot;
use triplanar::singularity::AspectLabel;

const REFERENCE_CONFIG: &str = include_str!("../../../../configs/reference.cfg");

#[derive(Parser)]
#[command(
    name = "triplanar",
    version = triplanar::VERSION,
    about = "Singularity, cusp and node analysis for planar 3-RPR manipulators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Geometry/slice configuration file (defaults to the built-in reference
    /// geometry).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<(Config, String), Error> {
        let text = match &self.config {
            Some(path) => std::fs::read_to_string(path)?,
            None => REFERENCE_CONFIG.to_string(),
        };
        Ok((parse_config(&text)?, text))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Inverse kinematics: joint lengths of a workspace pose.
    Ik {
        #[command(flatten)]
        config: ConfigArg,
        /// Pose (theta1, alpha); radians unless --degrees.
        #[arg(long, num_args = 2, value_names = ["THETA1", "ALPHA"], required = true)]
        pose: Vec<f64>,
        /// Read and print angles in degrees.
        #[arg(long)]
        degrees: bool,
    },
    /// Forward kinematics: all solutions at a joint-space point.
    Fk {
        #[command(flatten)]
        config: ConfigArg,
        /// Joint lengths (rho1, rho2, rho3).
        #[arg(long, num_args = 3, value_names = ["R1", "R2", "R3"], required = true)]
        rho: Vec<f64>,
        /// Print angles in degrees.
        #[arg(long)]
        degrees: bool,
    },
    /// Full slice analysis; writes the atlas directory.
    Analyze {
        #[command(flatten)]
        config: ConfigArg,
        /// Override the trace grid resolution.
        #[arg(long, value_name = "N")]
        grid: Option<usize>,
        /// Output directory for the atlas.
        #[arg(long, value_name = "DIR", default_value = "atlas")]
        out: PathBuf,
    },
    /// Draw an SVG figure from a persisted atlas.
    Plot {
        /// Atlas directory written by `analyze`.
        #[arg(long, value_name = "DIR", default_value = "atlas")]
        out: PathBuf,
        /// Figure name: `workspace` or `jointspace`.
        #[arg(long, value_name = "NAME")]
        figure: String,
        /// Joint-slice axis bounds for the jointspace figure.
        #[arg(long, num_args = 4, value_names = ["R2MIN", "R2MAX", "R3MIN", "R3MAX"])]
        window: Option<Vec<f64>>,
    },
    /// Run the slice analysis and check the image census.
    Verify {
        #[command(flatten)]
        config: ConfigArg,
        /// Override the trace grid resolution.
        #[arg(long, value_name = "N")]
        grid: Option<usize>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::ConfigParse { .. } | Error::Validation { .. } | Error::ZeroLengthLeg { .. } => 3,
        Error::Numerical { .. } | Error::StepFailure { .. } | Error::MissingCurve { .. } => 4,
        Error::Io(_) => 1,
    }
}

fn run_analysis(config: &ConfigArg, grid: Option<usize>) -> Result<SliceAtlas, Error> {
    let (mut cfg, text) = config.load()?;
    if let Some(n) = grid {
        cfg.slice = triplanar::model::SliceConfig::new(cfg.slice.rho1, n)?;
    }
    atlas::analyze(cfg, &text)
}

fn print_census(atlas: &SliceAtlas) {
    let c = &atlas.report.census;
    println!("cusps: {}", c.cusps);
    println!("nodes: {}", c.nodes);
    println!("tangency points: {}", c.tangency_points);
    println!("characteristic-curve cusps: {}", c.char_cusps);
    println!("singular x characteristic crossings: {}", c.singular_crossings);
    println!("characteristic x characteristic crossings: {}", c.char_crossings);
    println!("basic regions: {}", atlas.decomposition.regions.len());
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Ik { config, pose, degrees } => {
            let (cfg, _) = config.load()?;
            let (mut theta1, mut alpha) = (pose[0], pose[1]);
            if degrees {
                theta1 = theta1.to_radians();
                alpha = alpha.to_radians();
            }
            let mech = Mechanism::new(cfg.geometry);
            let p = SlicePose::new(theta1, alpha, cfg.slice.rho1);
            let j = mech.inverse_kinematics(&p);
            println!("rho1: {:.12}", j.rho1);
            println!("rho2: {:.12}", j.rho2);
            println!("rho3: {:.12}", j.rho3);
            Ok(0)
        }
        Command::Fk { config, rho, degrees } => {
            let (cfg, _) = config.load()?;
            let solver = FkSolver::new(Mechanism::new(cfg.geometry), rho[0], FkOptions::default());
            let set = solver.solve(rho[1], rho[2])?;
            println!("count: {}", set.count());
            let unit = if degrees { "deg" } else { "rad" };
            for (k, c) in set.solutions.iter().enumerate() {
                let (t, a) = if degrees {
                    (c.pose.theta1.to_degrees(), c.pose.alpha.to_degrees())
                } else {
                    (c.pose.theta1, c.pose.alpha)
                };
                let aspect = match c.aspect {
                    AspectLabel::Wa1 => "aspect 1",
                    AspectLabel::Wa2 => "aspect 2",
                    AspectLabel::Singular => "singular",
                };
                println!(
                    "solution {}: theta1 {t:.15} {unit}, alpha {a:.15} {unit}, {aspect}, det {:.3e}",
                    k + 1,
                    c.det_value
                );
            }
            Ok(0)
        }
        Command::Analyze { config, grid, out } => {
            let atlas = run_analysis(&config, grid)?;
            atlas::write_atlas(&atlas, &out)?;
            print_census(&atlas);
            println!("atlas written to {}", out.display());
            Ok(0)
        }
        Command::Plot { out, figure, window } => {
            let curves = atlas::read_curves_csv(&std::fs::read_to_string(out.join("curves.csv"))?)?;
            let points = atlas::read_points_csv(&std::fs::read_to_string(out.join("points.csv"))?)?;
            let (name, svg) = match figure.as_str() {
                "workspace" => ("workspace.svg", plot::figure_workspace(&curves, &points)),
                "jointspace" => {
                    let w = window.map(|w| (w[0], w[1], w[2], w[3]));
                    ("jointspace.svg", plot::figure_jointspace(&curves, &points, w)?)
                }
                other => {
                    return Err(Error::validation(
                        "figure",
                        format!("unknown figure {other:?}; expected workspace or jointspace"),
                    ))
                }
            };
            let path = out.join(name);
            std::fs::write(&path, svg)?;
            println!("figure written to {}", path.display());
            Ok(0)
        }
        Command::Verify { config, grid } => {
            let atlas = run_analysis(&config, grid)?;
            print_census(&atlas);
            if atlas.report.ok() {
                println!("verification: ok");
                Ok(0)
            } else {
                for f in &atlas.report.failures {
                    println!("verification failure: {f}");
                }
                Ok(1)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
