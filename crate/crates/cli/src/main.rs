use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use crosstrack::assignment::{bench_assignment, BenchOptions, Method, Precision, DEFAULT_MATCH_THRESHOLD};
use crosstrack::attention::PipelineWeights;
use crosstrack::gradcheck;
use crosstrack::harness::{
    parse_mot_file, synthesize_scene, track_sequence, write_detections_file, write_mot_file, SceneConfig, Sequence,
};
use crosstrack::io::write_atomic;
use crosstrack::metrics::clear_mot;
use crosstrack::tracker::TrackerConfig;

#[derive(Parser)]
#[command(
    name = "crosstrack",
    version,
    about = "Cross-softmax assignment and association tracking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare max-fusion, max-fusion + Hungarian and cross-softmax on random score maps.
    BenchAssign {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV report path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MATCH_THRESHOLD)]
        threshold: f64,
        /// Arithmetic for all three methods: f32 or f64.
        #[arg(long, default_value = "f64")]
        precision: Precision,
    },
    /// Track a MOT-format detection file.
    Track {
        #[arg(long)]
        dets: PathBuf,
        /// JSON weight file, see `init-weights`.
        #[arg(long)]
        weights: PathBuf,
        /// TOML or JSON tracker config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic scene as detection and ground-truth files.
    Simulate {
        /// TOML or JSON scene config; defaults apply when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out_dets: PathBuf,
        #[arg(long)]
        out_gt: PathBuf,
    },
    /// Score tracks against ground truth with CLEAR MOT and IDF1.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// JSON metrics path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
    },
    /// Run every finite-difference gradient suite; fails if any instance fails.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Write the hand-set dot-product association weights for feature size `dim`.
    InitWeights {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::BenchAssign {
            n,
            trials,
            seed,
            out,
            threshold,
            precision,
        } => {
            if n == 0 || trials == 0 {
                bail!("--n and --trials must be positive");
            }
            let opts = BenchOptions {
                threshold,
                precision,
                ..BenchOptions::new(n, trials, seed)
            };
            let report = bench_assignment(&opts);
            write_atomic(&out, report.to_csv().as_bytes()).with_context(|| format!("writing {}", out.display()))?;
            print!("{}", report.to_csv());
            let cross = report.row(Method::CrossSoftmax).mean_latency_us;
            println!(
                "hungarian solve {:.1} us, cross_softmax {:.1} us, ratio {:.1}x",
                report.hungarian_solve_us,
                cross,
                report.hungarian_solve_us / cross
            );
        }
        Command::Track {
            dets,
            weights,
            config,
            out,
        } => {
            let seq = parse_mot_file(&dets).with_context(|| format!("reading {}", dets.display()))?;
            let weights =
                PipelineWeights::<f64>::load(&weights).with_context(|| format!("reading {}", weights.display()))?;
            let config = match config {
                Some(p) => TrackerConfig::load(&p).with_context(|| format!("reading {}", p.display()))?,
                None => TrackerConfig::default(),
            };
            let run = track_sequence(&seq, &weights, &config)?;
            let tracked = Sequence {
                detections: Vec::new(),
                annotations: run.tracks,
            };
            write_mot_file(&tracked, &out).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Simulate {
            scene,
            out_dets,
            out_gt,
        } => {
            let cfg = match scene {
                Some(p) => SceneConfig::load(&p).with_context(|| format!("reading {}", p.display()))?,
                None => SceneConfig::default(),
            };
            let seq = synthesize_scene(&cfg)?;
            write_detections_file(&seq, &out_dets).with_context(|| format!("writing {}", out_dets.display()))?;
            write_mot_file(&seq, &out_gt).with_context(|| format!("writing {}", out_gt.display()))?;
        }
        Command::Eval { gt, pred, out, iou } => {
            let gt = parse_mot_file(&gt).with_context(|| format!("reading {}", gt.display()))?;
            let pred = parse_mot_file(&pred).with_context(|| format!("reading {}", pred.display()))?;
            let report = clear_mot(&gt.annotations, &pred.annotations, iou)?;
            write_atomic(&out, report.to_json().as_bytes()).with_context(|| format!("writing {}", out.display()))?;
            println!("{}", report.to_json());
        }
        Command::Gradcheck { seed, instances } => {
            let suites = gradcheck::run_all(instances, seed);
            for s in &suites {
                println!(
                    "{}: {} instances, {} failures, worst relative error {:.3e}",
                    s.name, s.instances, s.failures, s.worst_relative_error
                );
            }
            if !suites.iter().all(|s| s.passed()) {
                bail!("gradient check failed");
            }
        }
        Command::InitWeights { dim, out } => {
            if dim == 0 {
                bail!("--dim must be positive");
            }
            PipelineWeights::<f64>::association(dim)
                .save(&out)
                .with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(())
}
