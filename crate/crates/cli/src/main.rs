use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use ditpaint_core::dit::{Checkpoint, Dit};
use ditpaint_core::media::{read_frames, read_masks, write_frames};
use ditpaint_core::pipeline::{
    evaluate, inpaint, run_selftest, train, video_dirs, write_dataset, DatasetSpec, DirSource, InpaintOptions,
    TrainConfig, TrainEvent, DEFAULT_WINDOW,
};
use ditpaint_core::Error;

#[derive(Parser)]
#[command(
    name = "ditpaint",
    version,
    about = "Video inpainting with a flow-matching diffusion transformer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic moving-shapes dataset with masks.
    GenData(GenData),
    /// Train a model from a config file.
    Train(Train),
    /// Fill masked regions of a video (or a directory of videos).
    Inpaint(Inpaint),
    /// Score predicted videos against ground truth.
    Eval(Eval),
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    videos: usize,
    #[arg(long, default_value_t = 17)]
    frames: usize,
    /// Frame size as HxW.
    #[arg(long, default_value = "64x64", value_parser = parse_pair)]
    size: (usize, usize),
    #[arg(long, default_value_t = 3)]
    objects: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path; the loss log is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct Inpaint {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    steps: usize,
    /// Clip length in latent frames.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// Clip stride in latent frames; defaults to half the window.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Resize both sides to WxH before scoring.
    #[arg(long, value_parser = parse_pair)]
    resize: Option<(usize, usize)>,
    /// Report destination; printed to stdout when omitted.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected AxB, got {s:?}"))?;
    let a = a.trim().parse().map_err(|_| format!("bad number {a:?}"))?;
    let b = b.trim().parse().map_err(|_| format!("bad number {b:?}"))?;
    if a == 0 || b == 0 {
        return Err("sizes must be positive".into());
    }
    Ok((a, b))
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("io error on {}: {e}", path.display()))
}

fn require(path: &Path, what: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("{what} {} does not exist", path.display())))
    }
}

fn gen_data(args: GenData) -> Result<(), Failure> {
    let spec = DatasetSpec {
        videos: args.videos,
        frames: args.frames,
        height: args.size.0,
        width: args.size.1,
        objects: args.objects,
        seed: args.seed,
    };
    write_dataset(&args.out, &spec)?;
    println!("wrote {} videos to {}", spec.videos, args.out.display());
    Ok(())
}

fn loss_log_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.file_name().unwrap_or_default().to_os_string();
    name.push(".loss.csv");
    ckpt.with_file_name(name)
}

fn run_train(args: Train) -> Result<(), Failure> {
    require(&args.config, "config")?;
    require(&args.data, "data directory")?;
    if let Some(r) = &args.resume {
        require(r, "checkpoint")?;
    }
    let cfg = TrainConfig::load(&args.config)?;
    let resume = args.resume.as_ref().map(Checkpoint::load).transpose()?;
    let source = DirSource::open(&args.data)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    let log_path = loss_log_path(&args.out);
    let log_file = if resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path).and_then(|mut f| writeln!(f, "step,stage,loss").map(|_| f))
    }
    .map_err(|e| io_failure(&log_path, e))?;
    let mut log = BufWriter::new(log_file);

    let total = cfg.total_iterations();
    let start = Instant::now();
    eprintln!(
        "training {} parameters for {total} iterations on {} videos",
        ditpaint_core::dit::param_count(&cfg.model),
        source.len()
    );
    let outcome = train(&cfg, &source, resume, |event| {
        match event {
            TrainEvent::Step { step, stage, loss } => {
                writeln!(log, "{step},{stage},{loss}").map_err(|e| Error::Io {
                    path: log_path.clone(),
                    source: e,
                })?;
                if cfg.log_every > 0 && (step % cfg.log_every == 0 || step == total) {
                    eprintln!(
                        "step {step}/{total} stage {stage} loss {loss:.5} ({:.1}s)",
                        start.elapsed().as_secs_f64()
                    );
                }
            }
            TrainEvent::Checkpoint { step, checkpoint } => {
                checkpoint.save(&args.out)?;
                log.flush().map_err(|e| Error::Io {
                    path: log_path.clone(),
                    source: e,
                })?;
                eprintln!("checkpoint at step {step} -> {}", args.out.display());
            }
        }
        Ok(())
    })?;
    outcome.checkpoint.save(&args.out)?;
    log.flush().map_err(|e| io_failure(&log_path, e))?;
    println!("saved {} at step {}", args.out.display(), outcome.checkpoint.step);
    Ok(())
}

fn run_inpaint(args: Inpaint) -> Result<(), Failure> {
    require(&args.ckpt, "checkpoint")?;
    require(&args.video, "video directory")?;
    require(&args.mask, "mask directory")?;
    let ck = Checkpoint::load(&args.ckpt)?;
    let dit = Dit::new(ck.config, ck.params)?;
    let opts = InpaintOptions {
        steps: args.steps,
        window: args.window,
        stride: args.stride.unwrap_or((args.window / 2).max(1)),
        seed: args.seed,
    };
    let videos = video_dirs(&args.video)?;
    let single = videos.len() == 1 && videos[0].0 == ".";
    for (name, dir) in videos {
        let (mask_dir, out_dir) = if single {
            (args.mask.clone(), args.out.clone())
        } else {
            (args.mask.join(&name), args.out.join(&name))
        };
        let out = inpaint(&dit, &read_frames(&dir)?, &read_masks(&mask_dir)?, &opts)?;
        write_frames(&out, &out_dir)?;
        println!("{} -> {}", dir.display(), out_dir.display());
    }
    Ok(())
}

fn run_eval(args: Eval) -> Result<(), Failure> {
    require(&args.pred, "prediction directory")?;
    require(&args.gt, "ground-truth directory")?;
    let report = evaluate(&args.pred, &args.gt, args.resize)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.to_string()))?;
    match &args.json {
        Some(path) => {
            fs::write(path, json + "\n").map_err(|e| io_failure(path, e))?;
            for v in &report.videos {
                println!("{}: psnr {:.3} ssim {:.4}", v.name, v.psnr, v.ssim);
            }
            println!("mean: psnr {:.3} ssim {:.4}", report.mean_psnr, report.mean_ssim);
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn selftest() -> Result<(), Failure> {
    let results = run_selftest();
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} self-test checks failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => run_train(a),
        Command::Inpaint(a) => run_inpaint(a),
        Command::Eval(a) => run_eval(a),
        Command::Selftest => selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
