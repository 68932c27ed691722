use std::collections::HashSet;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use xray::completion::{fuse_sequence, FusionConfig};
use xray::distill::{full_breakdown, DistillationConfig};
use xray::eval::{chamfer, coverage, tracking_score, ObjectReport};
use xray::geometry::{points_in_box, PointCloud};
use xray::io;
use xray::parallel::{thread_cap_from_env, with_thread_cap};
use xray::registration::{canonicalize, MergeStrategy};
use xray::simulate::{generate, SceneConfig};
use xray::tracking::{greedy_track, track_instances_from_ids};

#[derive(Parser)]
#[command(name = "xray", about = "Temporal fusion of LiDAR sequences into object-complete frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrackMode {
    Greedy,
    Ids,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Geometry,
    Icp,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and its ground truth
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track object instances across a sequence
    Track {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: TrackMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Produce the object-complete sequence for given tracks
    Fuse {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long, value_enum, default_value = "geometry")]
        strategy: Strategy,
        /// Budget for added points as a multiple of the original frame
        /// size; "inf" disables subsampling
        #[arg(long, default_value = "1.5")]
        subsample_factor: f64,
        #[arg(long, default_value = "0")]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a fused sequence against simulator ground truth
    Eval {
        #[arg(long)]
        fused: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value = "0.1")]
        coverage_radius: f64,
        /// Optional predicted tracks to score against the identity chains
        #[arg(long)]
        tracks: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distillation loss arithmetic over tensor files
    Losses(LossArgs),
    /// Export one frame as an ASCII PLY file
    ExportPly {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        frame: usize,
        #[arg(long)]
        out: PathBuf,
        /// Color points absent from --original red instead of gray
        #[arg(long)]
        highlight_added: bool,
        /// Original (pre-fusion) sequence used by --highlight-added
        #[arg(long)]
        original: Option<PathBuf>,
    },
}

#[derive(Args)]
struct LossArgs {
    #[arg(long)]
    teacher_cls: PathBuf,
    #[arg(long)]
    student_cls: PathBuf,
    #[arg(long)]
    teacher_reg: PathBuf,
    #[arg(long)]
    student_reg: PathBuf,
    #[arg(long)]
    teacher_feat: PathBuf,
    #[arg(long)]
    student_feat: PathBuf,
    #[arg(long, default_value = "0")]
    l_det: f64,
    #[arg(long, default_value = "2")]
    alpha1: f64,
    #[arg(long, default_value = "1")]
    alpha2: f64,
    #[arg(long, default_value = "0.7")]
    lambda1: f64,
    #[arg(long, default_value = "0.3")]
    lambda2: f64,
    #[arg(long, default_value = "1")]
    lambda3: f64,
}

#[derive(serde::Serialize)]
struct CliEvalReport {
    coverage_radius: f64,
    objects: Vec<ObjectReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tracking_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tracking_recall: Option<f64>,
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config, out } => {
            let cfg: SceneConfig = io::read_json(&config)
                .with_context(|| format!("reading scene config {}", config.display()))?;
            let (seq, gt) = generate(&cfg)?;
            io::write_sequence(&seq, &out)?;
            io::write_ground_truth(&gt, &out)?;
            println!(
                "wrote {} frames, {} objects to {}",
                seq.frames.len(),
                gt.full_surfaces.len(),
                out.display()
            );
        }
        Command::Track { input, mode, out } => {
            let seq = io::read_sequence(&input)?;
            let tracks = match mode {
                TrackMode::Greedy => greedy_track(&seq)?,
                TrackMode::Ids => track_instances_from_ids(&seq)?,
            };
            io::write_tracks(&out, &tracks)?;
            println!("wrote {} tracks to {}", tracks.len(), out.display());
        }
        Command::Fuse { input, tracks, strategy, subsample_factor, seed, out } => {
            let seq = io::read_sequence(&input)?;
            let tracks = io::read_tracks(&tracks)?;
            let cfg = FusionConfig {
                strategy: match strategy {
                    Strategy::Geometry => MergeStrategy::Geometry,
                    Strategy::Icp => MergeStrategy::Icp,
                },
                subsample_factor,
                seed,
                ..FusionConfig::default()
            };
            let (fused, report) = fuse_sequence(&seq, &tracks, &cfg)?;
            io::write_sequence(&fused, &out)?;
            io::write_json(&out.join("fusion_report.json"), &report)?;
            let added: usize = report.new_points_kept.iter().sum();
            println!("fused {} frames, added {added} points", fused.frames.len());
        }
        Command::Eval { fused, truth, coverage_radius, tracks, out } => {
            let fused_seq = io::read_sequence(&fused)?;
            let truth_seq = io::read_sequence(&truth)?;
            let (surfaces, gt_tracks) = io::read_ground_truth(&truth)?;
            if fused_seq.frames.len() != truth_seq.frames.len() {
                bail!(
                    "fused sequence has {} frames but truth has {}",
                    fused_seq.frames.len(),
                    truth_seq.frames.len()
                );
            }
            let mut objects = Vec::new();
            for (o, surface) in surfaces.iter().enumerate() {
                let mut per_frame = Vec::new();
                let mut chamfer_best = f64::INFINITY;
                for (tf, ff) in truth_seq.frames.iter().zip(&fused_seq.frames) {
                    let Some(inst) = tf.instances.get(o) else { continue };
                    let idx = points_in_box(&inst.bbox, &ff.cloud);
                    let extracted: PointCloud =
                        idx.iter().map(|&k| ff.cloud.points[k]).collect();
                    let canonical = canonicalize(&extracted, &inst.bbox);
                    per_frame.push(coverage(&canonical, surface, coverage_radius)?);
                    if !canonical.is_empty() {
                        chamfer_best = chamfer_best.min(chamfer(&canonical, surface)?);
                    }
                }
                let best = per_frame.iter().copied().fold(0.0, f64::max);
                objects.push(ObjectReport {
                    object_index: o,
                    coverage_per_frame: per_frame,
                    coverage_best: best,
                    chamfer_best,
                });
            }
            let (precision, recall) = match tracks {
                Some(path) => {
                    let pred = io::read_tracks(&path)?;
                    let (p, r) = tracking_score(&pred, &gt_tracks, &truth_seq)?;
                    (Some(p), Some(r))
                }
                None => (None, None),
            };
            for obj in &objects {
                println!(
                    "object {}: coverage best {:.4}, chamfer best {:.4} m",
                    obj.object_index, obj.coverage_best, obj.chamfer_best
                );
            }
            if let (Some(p), Some(r)) = (precision, recall) {
                println!("tracking precision {p:.4} recall {r:.4}");
            }
            io::write_json(
                &out,
                &CliEvalReport { coverage_radius, objects, tracking_precision: precision, tracking_recall: recall },
            )?;
        }
        Command::Losses(args) => {
            let cfg = DistillationConfig {
                alpha1: args.alpha1,
                alpha2: args.alpha2,
                lambda1: args.lambda1,
                lambda2: args.lambda2,
                lambda3: args.lambda3,
            };
            let s_cls = io::read_tensor(&args.student_cls)?;
            let t_cls = io::read_tensor(&args.teacher_cls)?;
            let s_reg = io::read_tensor(&args.student_reg)?;
            let t_reg = io::read_tensor(&args.teacher_reg)?;
            let s_feat = io::read_tensor(&args.student_feat)?;
            let t_feat = io::read_tensor(&args.teacher_feat)?;
            let breakdown =
                full_breakdown(&s_cls, &t_cls, &s_reg, &t_reg, &s_feat, &t_feat, args.l_det, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&breakdown)?);
        }
        Command::ExportPly { input, frame, out, highlight_added, original } => {
            let seq = io::read_sequence(&input)?;
            let f = seq
                .frames
                .get(frame)
                .with_context(|| format!("frame {frame} out of range (sequence has {} frames)", seq.frames.len()))?;
            if highlight_added {
                let orig_dir = original
                    .context("--highlight-added requires --original <dir>")?;
                let orig_seq = io::read_sequence(&orig_dir)?;
                let orig_frame = orig_seq
                    .frames
                    .get(frame)
                    .with_context(|| format!("frame {frame} missing from original sequence"))?;
                let known: HashSet<[u32; 3]> = orig_frame
                    .cloud
                    .iter()
                    .map(|p| {
                        [
                            (p.x as f32).to_bits(),
                            (p.y as f32).to_bits(),
                            (p.z as f32).to_bits(),
                        ]
                    })
                    .collect();
                let (mut kept, mut added) = (PointCloud::default(), PointCloud::default());
                for p in f.cloud.iter() {
                    let key =
                        [(p.x as f32).to_bits(), (p.y as f32).to_bits(), (p.z as f32).to_bits()];
                    if known.contains(&key) {
                        kept.points.push(*p);
                    } else {
                        added.points.push(*p);
                    }
                }
                io::export_ply_colored(&out, &[(&kept, (180, 180, 180)), (&added, (255, 40, 40))])?;
            } else {
                io::export_ply(&f.cloud, &out, (180, 180, 180))?;
            }
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cap = thread_cap_from_env();
    match with_thread_cap(cap, || run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // single-line machine-parseable diagnostics
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
