use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use nbb_core::annotate::draw_matches;
use nbb_core::mls::align_matches;
use nbb_core::pipeline::{load_image, RgbImage};
use nbb_core::{eval_pck, load_weights, match_images, AnnotationDocument, MatchDocument, MatchOptions};

#[derive(Parser)]
#[command(name = "nbb", version, about = "Sparse cross-domain correspondence with neural best-buddies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find correspondences between two images and print the match document.
    Match(MatchArgs),
    /// Warp both images so their correspondences meet at common midpoints.
    Align(AlignArgs),
    /// Score correspondences against annotated keypoint pairs.
    EvalPck(EvalArgs),
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// NBBW weight file.
    #[arg(long, env = "NBB_WEIGHTS")]
    weights: Option<PathBuf>,
    /// Number of correspondences to keep.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Activation threshold in [0, 1].
    #[arg(long, default_value_t = 0.05)]
    gamma: f32,
    /// Side of the square network input; a multiple of 16.
    #[arg(long, default_value_t = 224)]
    side: usize,
    /// Seed for k-means initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct MatchArgs {
    /// First image (A).
    image_a: PathBuf,
    /// Second image (B).
    image_b: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Write the match document here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Write a side-by-side image with numbered markers.
    #[arg(long)]
    annotate: Option<PathBuf>,
}

#[derive(Args)]
struct AlignArgs {
    /// First image (A).
    image_a: PathBuf,
    /// Second image (B).
    image_b: PathBuf,
    /// Match document to use; the pipeline runs inline when omitted.
    #[arg(long)]
    matches: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Output path for warped image A.
    #[arg(long)]
    out_a: PathBuf,
    /// Output path for warped image B.
    #[arg(long)]
    out_b: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Match document produced by `nbb match`.
    #[arg(long)]
    matches: PathBuf,
    /// Annotation document with ground-truth keypoint pairs.
    #[arg(long)]
    annotations: PathBuf,
    /// Tolerance as a fraction of max(height, width) of image B.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl PipelineArgs {
    fn options(&self) -> MatchOptions {
        MatchOptions { k: self.k, gamma: self.gamma, side: self.side, seed: self.seed, threads: self.threads }
    }

    fn run(&self, a: &Path, b: &Path) -> Result<nbb_core::MatchOutput> {
        let Some(weights_path) = &self.weights else {
            bail!("no weight file given; pass --weights or set NBB_WEIGHTS");
        };
        let weights = load_weights(weights_path)?;
        let img_a = load_image(a)?;
        let img_b = load_image(b)?;
        let out =
            match_images(&img_a, &img_b, (&a.to_string_lossy(), &b.to_string_lossy()), &weights, &self.options())?;
        info!("{} buddies found, {} selected", out.total_found, out.document.buddies.len());
        if out.document.buddies.is_empty() {
            warn!("no correspondences survived; try a lower --gamma");
        }
        Ok(out)
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn save_image(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

fn cmd_match(args: MatchArgs) -> Result<()> {
    let out = args.pipeline.run(&args.image_a, &args.image_b)?;
    if let Some(path) = &args.annotate {
        let img_a = load_image(&args.image_a)?;
        let img_b = load_image(&args.image_b)?;
        let pairs: Vec<_> = out.document.buddies.iter().map(|b| (b.pixel_a(), b.pixel_b())).collect();
        save_image(&draw_matches(&img_a, &img_b, &pairs), path)?;
    }
    write_or_print(args.out.as_deref(), &out.document.to_json())
}

fn cmd_align(args: AlignArgs) -> Result<()> {
    let doc = match &args.matches {
        Some(path) => MatchDocument::load(path)?,
        None => args.pipeline.run(&args.image_a, &args.image_b)?.document,
    };
    if doc.buddies.is_empty() {
        bail!("no correspondences to align with; lower --gamma and rerun match");
    }
    let img_a = load_image(&args.image_a)?;
    let img_b = load_image(&args.image_b)?;
    let (wa, wb) = align_matches(&img_a, &img_b, &doc.point_pairs())?;
    save_image(&wa, &args.out_a)?;
    save_image(&wb, &args.out_b)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let doc = MatchDocument::load(&args.matches)?;
    let ann = AnnotationDocument::load(&args.annotations)?;
    if doc.buddies.is_empty() {
        bail!("match document has no correspondences");
    }
    let report = eval_pck(&doc.point_pairs(), &ann, args.alpha)?;
    info!("PCK@{} = {:.4} ({}/{})", report.alpha, report.pck, report.correct, report.total);
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_or_print(args.out.as_deref(), &text)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Match(a) => cmd_match(a),
        Command::Align(a) => cmd_align(a),
        Command::EvalPck(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
