use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use inklayer::eval::{evaluate_scene, format_table, summarize, DatasetSummary};
use inklayer::inpaint::INPAINT_URL_ENV;
use inklayer::io::{self, AnnotationDoc, DetectionsDoc};
use inklayer::pipeline::{
    run_pipeline, write_outputs, PipelineConfig, PipelineInputs, PipelineOutput,
};
use inklayer::scene::{builtin_library, compose_scene, load_library, Layout};
use inklayer::service::{serve, ServiceConfig};

#[derive(Parser)]
#[command(
    name = "inklayer",
    version,
    about = "Segment raster scene sketches into depth-ordered layers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Refine detections into a label map and run report.
    Segment(RunArgs),
    /// Segment, then write the layer stack and its composite.
    Layers(RunArgs),
    /// Render a synthetic scene and its ground truth from a layout.
    Compose(ComposeArgs),
    /// Score prediction documents against ground truth.
    Eval(EvalArgs),
    /// Run the HTTP job service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, default_value_t = 0.5)]
    overlap_threshold: f64,
    #[arg(long, default_value_t = 1)]
    cleanup_radius: usize,
    #[arg(long, default_value_t = 10)]
    depth_bins: usize,
    /// Default: max(1024, ink pixels / 16).
    #[arg(long)]
    sample_points: Option<usize>,
    #[arg(long, default_value_t = 128)]
    binarize_threshold: u8,
    #[arg(long, default_value_t = 2.0)]
    watershed_bridge: f64,
    /// Assign overlaps by confidence and skip the marker flood.
    #[arg(long)]
    no_refinement: bool,
    #[arg(long, env = INPAINT_URL_ENV)]
    inpaint_url: Option<String>,
    #[arg(long, default_value_t = 30_000)]
    inpaint_timeout_ms: u64,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    /// Worker threads for parallel stages.
    #[arg(long)]
    threads: Option<usize>,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            overlap_threshold: self.overlap_threshold,
            cleanup_radius: self.cleanup_radius,
            depth_bins: self.depth_bins,
            sample_points: self.sample_points,
            binarize_threshold: self.binarize_threshold,
            inpaint_backend: self.inpaint_url.clone(),
            inpaint_timeout_ms: self.inpaint_timeout_ms,
            max_in_flight: self.max_in_flight,
            depth_refinement: !self.no_refinement,
            watershed_bridge: self.watershed_bridge,
            threads: self.threads,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Grayscale sketch PNG, dark ink on light paper.
    #[arg(long)]
    sketch: PathBuf,
    /// Detections document; mask files resolve next to it.
    #[arg(long)]
    detections: PathBuf,
    /// 16-bit depth PNG, larger = nearer.
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct ComposeArgs {
    #[arg(long)]
    layout: PathBuf,
    /// Directory of mask PNGs keyed by file stem; built-in shapes if absent.
    #[arg(long)]
    library: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// NAME GT_DIR PRED_DIR; repeat for each dataset. Files pair by name.
    #[arg(long, num_args = 3, value_names = ["NAME", "GT_DIR", "PRED_DIR"], required = true)]
    dataset: Vec<String>,
    /// Also write the summary as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value_t = 2)]
    workers: usize,
    #[arg(long, default_value_t = 16)]
    queue: usize,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Segment(a) => run(&a, false),
        Command::Layers(a) => run(&a, true),
        Command::Compose(a) => compose(&a),
        Command::Eval(a) => eval(&a),
        Command::Serve(a) => serve_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn segment(a: &RunArgs) -> anyhow::Result<PipelineOutput> {
    let config = a.pipeline.config();
    let inputs = PipelineInputs::load(&a.sketch, &a.detections, a.depth.as_deref())?;
    Ok(run_pipeline(&inputs, &config, config.backend().as_ref())?)
}

fn run(a: &RunArgs, layers: bool) -> anyhow::Result<()> {
    let out = segment(a)?;
    if layers {
        write_outputs(&out, &a.out)?;
    } else {
        std::fs::create_dir_all(&a.out)?;
        for (name, bytes) in out
            .files()?
            .into_iter()
            .filter(|(n, _)| !n.starts_with("layers/") && n != "composite.png")
        {
            std::fs::write(a.out.join(name), bytes)?;
        }
    }
    let r = &out.report;
    println!(
        "{} of {} detections kept, {} suppressed; {} of {} ink pixels labeled, {} unreachable; {} layers",
        r.kept.len(),
        r.input_detections,
        r.suppressed.len(),
        r.labeled_pixels,
        r.ink_pixels,
        r.unreachable_pixels,
        out.stack.layers.len()
    );
    Ok(())
}

fn compose(a: &ComposeArgs) -> anyhow::Result<()> {
    let layout = Layout::from_json(
        &std::fs::read(&a.layout).with_context(|| format!("reading {}", a.layout.display()))?,
    )?;
    let library = match &a.library {
        Some(dir) => load_library(dir)?,
        None => builtin_library(),
    };
    let (sketch, ann) = compose_scene(&layout, &library)?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("sketch.png"), io::encode_gray_png(&sketch)?)?;
    std::fs::write(a.out.join("annotation.json"), ann.to_doc().to_json()?)?;
    std::fs::write(
        a.out.join("depth.png"),
        io::encode_depth_png(&ann.synthetic_depth())?,
    )?;
    std::fs::write(
        a.out.join("gt_labels.png"),
        io::encode_label_png(&ann.label_map())?,
    )?;
    std::fs::write(
        a.out.join("detections.json"),
        DetectionsDoc::from_candidates(&ann.oracle_candidates()).to_json()?,
    )?;
    println!(
        "{} instances, occlusion-free: {}",
        ann.instances.len(),
        ann.is_occlusion_free()
    );
    Ok(())
}

fn json_files(dir: &Path) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            out.insert(
                path.file_name()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned(),
                path,
            );
        }
    }
    Ok(out)
}

fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let mut rows: Vec<DatasetSummary> = Vec::new();
    for triple in a.dataset.chunks(3) {
        let [name, gt_dir, pred_dir] = triple else {
            bail!("--dataset takes NAME GT_DIR PRED_DIR")
        };
        let gts = json_files(Path::new(gt_dir))?;
        let preds = json_files(Path::new(pred_dir))?;
        let mut reports = Vec::new();
        for (file, gt_path) in &gts {
            let gt = AnnotationDoc::from_json(&std::fs::read(gt_path)?)
                .with_context(|| format!("{}", gt_path.display()))?;
            let pred = match preds.get(file) {
                Some(p) => AnnotationDoc::from_json(&std::fs::read(p)?)
                    .with_context(|| format!("{}", p.display()))?,
                None => {
                    log::warn!("{name}: no prediction for {file}; scoring it as empty");
                    AnnotationDoc {
                        width: gt.width,
                        height: gt.height,
                        instances: Vec::new(),
                    }
                }
            };
            reports.push(evaluate_scene(&pred, &gt).with_context(|| format!("{name}/{file}"))?);
        }
        match summarize(name, &reports) {
            Some(s) => rows.push(s),
            None => bail!("dataset {name} has no ground-truth documents in {gt_dir}"),
        }
    }
    print!("{}", format_table(&rows));
    if let Some(path) = &a.json {
        let mut bytes = serde_json::to_vec_pretty(&rows)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)?;
    }
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> anyhow::Result<()> {
    let pipeline = a.pipeline.config();
    pipeline.validate()?;
    let backend = Arc::from(pipeline.backend());
    let config = ServiceConfig {
        pipeline,
        workers: a.workers,
        queue_capacity: a.queue,
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(serve(a.addr, config, backend))?;
    Ok(())
}
