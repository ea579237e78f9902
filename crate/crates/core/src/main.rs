use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use raycut::harness::{
    build_phantom_study, evaluate_manifest, exit_code, replay_input, run_segment, serve, serve_tcp, write_report,
    write_segmentation, Session, SessionConfig, SessionLog, StudyOptions,
};
use raycut::imaging::Point2D;
use raycut::phantom::{generate_suite, write_phantom};
use raycut::raygraph::{DEFAULT_DELTA_R, DEFAULT_MAX_RADIUS, DEFAULT_NODES_PER_RAY, DEFAULT_RAYS, DEFAULT_RHO};
use raycut::{Error, Result, SeedInput, SegmentParams};

#[derive(Parser)]
#[command(
    name = "raycut",
    version,
    about = "Seed-point graph-cut segmentation of dark lesions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct ParamArgs {
    /// Number of rays (R)
    #[arg(long, default_value_t = DEFAULT_RAYS)]
    rays: usize,
    /// Nodes per ray (N)
    #[arg(long, default_value_t = DEFAULT_NODES_PER_RAY)]
    nodes: usize,
    /// Longest ray length in pixels
    #[arg(long, default_value_t = DEFAULT_MAX_RADIUS)]
    max_radius: f64,
    /// Radius of the disk sampled around the seed for the lesion gray value
    #[arg(long, default_value_t = DEFAULT_RHO)]
    rho: f64,
    /// Largest cut-index jump between neighbouring rays
    #[arg(long, default_value_t = DEFAULT_DELTA_R)]
    delta_r: usize,
    /// Pixel spacing in mm, overriding image metadata
    #[arg(long)]
    spacing_mm: Option<f64>,
}

impl ParamArgs {
    fn params(&self) -> SegmentParams {
        SegmentParams {
            rays: self.rays,
            nodes_per_ray: self.nodes,
            max_radius: self.max_radius,
            rho: self.rho,
            delta_r: self.delta_r,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Segment one image from a seed point (or replay a session log)
    Segment {
        /// Image (PGM or PNG); defaults to the image named in --replay
        image: Option<PathBuf>,
        #[arg(long, num_args = 2, value_names = ["X", "Y"], allow_negative_numbers = true)]
        seed: Option<Vec<f64>>,
        /// Helper seed on the lesion border; repeatable
        #[arg(long, num_args = 2, value_names = ["X", "Y"], action = clap::ArgAction::Append, allow_negative_numbers = true)]
        helper: Vec<f64>,
        /// Session log (JSON) whose final state to reproduce
        #[arg(long, conflicts_with_all = ["seed", "helper"])]
        replay: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Evaluate a study manifest and write report tables
    Evaluate {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Bootstrap RNG seed, recorded in the report header
        #[arg(long, default_value_t = 1)]
        rng_seed: u64,
    },
    /// Generate synthetic lesion phantoms
    Phantom {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        rng_seed: u64,
        /// Also segment each phantom and write a study manifest
        #[arg(long)]
        manifest: bool,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Answer newline-delimited JSON requests on stdin/stdout or TCP
    Serve {
        /// Listen address, e.g. 127.0.0.1:7878
        #[arg(long)]
        tcp: Option<String>,
        /// Directory for finalized session logs
        #[arg(long)]
        log_dir: Option<PathBuf>,
        #[command(flatten)]
        params: ParamArgs,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Segment {
            image,
            seed,
            helper,
            replay,
            out,
            params,
        } => {
            let (image, input, seg_params, spacing) = match replay {
                Some(log_path) => {
                    let log = SessionLog::read(&log_path)?;
                    let input = replay_input(&log)?;
                    (
                        image.unwrap_or(log.image_path.clone()),
                        input,
                        log.params,
                        log.spacing_mm,
                    )
                }
                None => {
                    let image = image.ok_or_else(|| Error::InvalidParameter("an image path is required".into()))?;
                    let seed = seed.ok_or_else(|| Error::InvalidParameter("--seed X Y is required".into()))?;
                    let helpers = helper.chunks(2).map(|c| Point2D::new(c[0], c[1])).collect();
                    let input = SeedInput::with_helpers(Point2D::new(seed[0], seed[1]), helpers);
                    (image, input, params.params(), params.spacing_mm)
                }
            };
            let (_, res) = run_segment(&image, &input, &seg_params, spacing)?;
            write_segmentation(&out, &image, &input, &seg_params, &res)?;
            println!(
                "diameter_a_px={} diameter_b_px={} elapsed_ms={:.3}",
                res.diameters.a,
                res.diameters.b,
                res.elapsed * 1000.0
            );
        }
        Command::Evaluate {
            manifest,
            out,
            rng_seed,
        } => {
            let report = evaluate_manifest(&manifest, rng_seed)?;
            write_report(&out, &report)?;
            print!("{}", report.to_text());
        }
        Command::Phantom {
            out,
            count,
            rng_seed,
            manifest,
            params,
        } => {
            if manifest {
                let opts = StudyOptions {
                    count,
                    seed: rng_seed,
                    params: params.params(),
                    second_examiner: true,
                };
                let path = build_phantom_study(&out, &opts)?;
                println!("{}", path.display());
            } else {
                std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
                for (k, (spec, img, mask)) in generate_suite(count, rng_seed)?.iter().enumerate() {
                    let files = write_phantom(&out, &format!("phantom_{k:03}"), spec, img, mask)?;
                    println!("{}", files.image.display());
                }
            }
        }
        Command::Serve { tcp, log_dir, params } => {
            let config = SessionConfig {
                params: params.params(),
                spacing_mm: params.spacing_mm,
                log_dir,
            };
            match tcp {
                Some(addr) => {
                    let listener =
                        TcpListener::bind(&addr).map_err(|e| Error::Protocol(format!("cannot bind {addr}: {e}")))?;
                    let local = listener.local_addr().map_err(|e| Error::Protocol(e.to_string()))?;
                    eprintln!("listening on {local}");
                    serve_tcp(listener, config, None)?;
                }
                None => {
                    let mut session = Session::new(config);
                    serve(BufReader::new(io::stdin()), io::stdout().lock(), &mut session)?;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.reason());
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
