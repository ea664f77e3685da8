use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use dbn_core::align::{align_stack, AlignMode, AlignParams};
use dbn_core::blur::{generate_pairs, HighFpsSequence};
use dbn_core::eval::{eval_clip, EvalOptions, MetricReport, TileConfig};
use dbn_core::io::{load_checkpoint, parse_config, render_config, save_gray_u8, save_image, write_atomic, ConfigMap};
use dbn_core::model::{dump_filters, min_max_to_u8, render_filter, SPATIAL_MULTIPLE};
use dbn_core::train::{load_dataset, load_frames, load_video, make_stack, prepare_frames, split_by_video, TrainConfig, Trainer};
use dbn_core::{Error, FrameStack};

#[derive(Parser)]
#[command(name = "dbn", version, about = "Multi-frame video deblurring")]
struct Cli {
    /// Settings file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Frame alignment: none, homog or flow.
    #[arg(long, global = true)]
    align: Option<AlignMode>,
    /// Replicate the central frame five times instead of using neighbors.
    #[arg(long, global = true)]
    single: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build blurry/sharp pairs from high-framerate footage.
    Synthesize {
        /// A directory of frames, or a directory of such directories (one per video).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 240.0)]
        source_fps: f64,
        /// Frame rate of the synthesized video; must be an eighth of the source rate.
        #[arg(long, default_value_t = 30.0)]
        target_fps: f64,
    },
    /// Write aligned five-frame stacks of a video.
    Align {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train on a dataset of synthesized videos.
    Train {
        /// Root holding one directory per video with blurry/ and sharp/ frames.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        max_iters: Option<u64>,
    },
    /// Deblur every frame of one video.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Deblur and score one video or every video under a root.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Render first-layer filters and, given a video, their feature maps.
    DumpFilters {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        frame: usize,
    },
}

/// Every tunable after merging the settings file and command-line flags.
struct Settings {
    train: TrainConfig,
    tile: TileConfig,
}

impl Settings {
    fn resolve(cli: &Cli) -> anyhow::Result<Settings> {
        let mut s = Settings {
            train: TrainConfig::default(),
            tile: TileConfig::default(),
        };
        if let Some(path) = &cli.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut map = parse_config(&text)?;
            for (key, field) in [
                ("tile_width", &mut s.tile.width),
                ("tile_height", &mut s.tile.height),
                ("tile_overlap", &mut s.tile.overlap),
            ] {
                if let Some(v) = map.remove(key) {
                    *field = v.parse().map_err(|e| Error::Config(format!("{key}: {e}")))?;
                }
            }
            s.train.apply(&map)?;
        }
        if let Some(seed) = cli.seed {
            s.train.seed = seed;
        }
        if let Some(mode) = cli.align {
            s.train.align_mode = mode;
        }
        if cli.single {
            s.train.single_frame_mode = true;
        }
        if let Command::Train { max_iters: Some(n), .. } = cli.command {
            s.train.max_iters = n;
        }
        s.train.validate()?;
        if s.tile.width == 0 || s.tile.height == 0 {
            bail!(Error::Config("tile sizes must be positive".into()));
        }
        Ok(s)
    }

    fn to_map(&self) -> ConfigMap {
        let mut m = self.train.to_map();
        m.insert("tile_width".into(), self.tile.width.to_string());
        m.insert("tile_height".into(), self.tile.height.to_string());
        m.insert("tile_overlap".into(), self.tile.overlap.to_string());
        m
    }

    fn align_params(&self) -> AlignParams {
        let mut p = AlignParams::default();
        p.mlesac.seed = self.train.seed;
        p
    }

    fn eval_options(&self, out_dir: Option<PathBuf>) -> EvalOptions {
        EvalOptions {
            align_mode: self.train.align_mode,
            align: self.align_params(),
            tile: self.tile,
            single_frame_mode: self.train.single_frame_mode,
            out_dir,
        }
    }
}

fn prepare_output(dir: &Path, settings: &Settings) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_atomic(&dir.join("resolved_config.cfg"), render_config(&settings.to_map()).as_bytes())?;
    Ok(())
}

fn is_video_dir(dir: &Path) -> bool {
    dir.join("blurry").is_dir()
}

fn synthesize(input: &Path, output: &Path, source_fps: f64, target_fps: f64) -> anyhow::Result<()> {
    let mut videos: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    videos.sort();
    if videos.is_empty() {
        videos.push(input.to_path_buf());
    }
    let flow = AlignParams::default().flow;
    for dir in videos {
        let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "video".into());
        let seq = HighFpsSequence::new(load_frames(&dir)?, source_fps, target_fps)?;
        let rows = generate_pairs(&seq, &id, output, &flow)?;
        let skipped = rows.iter().filter(|r| r.skipped).count();
        log::info!("{id}: {} pairs written, {skipped} skipped", rows.len() - skipped);
    }
    Ok(())
}

fn align(input: &Path, output: &Path, settings: &Settings) -> anyhow::Result<()> {
    let clip = load_video(input)?;
    let params = settings.align_params();
    for i in 0..clip.blurry.len() {
        let stack = make_stack(&clip.blurry, i, settings.train.single_frame_mode)?;
        let aligned = align_stack(&stack, settings.train.align_mode, &params);
        let dir = output.join(format!("{i:05}"));
        for (k, f) in aligned.frames().iter().enumerate() {
            save_image(f, dir.join(format!("{k}.png")))?;
        }
    }
    log::info!("{} aligned stacks written", clip.blurry.len());
    Ok(())
}

fn train(data: &Path, output: &Path, resume: Option<&Path>, settings: &Settings) -> anyhow::Result<()> {
    let cfg = settings.train.clone();
    let (train_videos, val_videos) = split_by_video(load_dataset(data)?, cfg.val_videos);
    let align = settings.align_params();
    let frames = prepare_frames(&train_videos, &cfg, &align)?;
    let val = prepare_frames(&val_videos, &cfg, &align)?;
    log::info!("{} training frames, {} validation frames", frames.len(), val.len());
    let mut trainer = Trainer::new(cfg, frames, &val)?;
    if let Some(path) = resume {
        trainer.restore(load_checkpoint(path)?)?;
        log::info!("resumed at iteration {}", trainer.params.iteration);
    }
    trainer.run(Some(output))?;
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<dbn_core::model::ModelParams<f32>> {
    Ok(load_checkpoint(path)?.params)
}

fn infer(model: &Path, input: &Path, output: &Path, settings: &Settings) -> anyhow::Result<()> {
    let params = load_model(model)?;
    let mut clip = load_video(input)?;
    clip.sharp = None;
    let (_, frames) = eval_clip(&params, &clip, &settings.eval_options(Some(output.to_path_buf())))?;
    log::info!("{} frames written to {}", frames.len(), output.display());
    Ok(())
}

fn eval(model: &Path, input: &Path, output: &Path, settings: &Settings) -> anyhow::Result<()> {
    let params = load_model(model)?;
    let clips = if is_video_dir(input) || !input.is_dir() {
        vec![load_video(input)?]
    } else {
        match load_dataset(input) {
            Ok(c) => c,
            Err(_) => vec![load_video(input)?],
        }
    };
    let single = clips.len() == 1;
    let mut reports = vec![];
    for clip in &clips {
        let dir = if single { output.join("frames") } else { output.join(&clip.id) };
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let (mut report, _) = eval_clip(&params, clip, &settings.eval_options(Some(dir)))?;
        if !single {
            for r in report.per_frame.iter_mut().chain(report.input.iter_mut()) {
                r.frame_id = format!("{}/{}", clip.id, r.frame_id);
            }
        }
        reports.push(report);
    }
    let report = MetricReport::merge(&reports);
    report.write(output)?;
    print!("{}", report.summary());
    Ok(())
}

fn dump(model: &Path, output: &Path, input: Option<&Path>, frame: usize) -> anyhow::Result<()> {
    let params = load_model(model)?;
    let filters_dir = output.join("filters");
    let n = params.layers[0].def.spec.out_channels;
    for k in 0..n {
        save_image(&render_filter(&params, k), filters_dir.join(format!("filter_{k:02}.png")))?;
    }
    if let Some(input) = input {
        let clip = load_video(input)?;
        let stack = make_stack(&clip.blurry, frame, false)?;
        let m = SPATIAL_MULTIPLE;
        let (w, h) = (stack.width() / m * m, stack.height() / m * m);
        if w == 0 || h == 0 {
            bail!("frames smaller than {m}x{m}");
        }
        let stack: FrameStack = stack.map_frames(|f| f.crop(0, 0, w, h))?;
        let dump = dump_filters(&params, &stack)?;
        let maps_dir = output.join("feature_maps");
        for (k, map) in dump.feature_maps.iter().enumerate() {
            save_gray_u8(&min_max_to_u8(map.data()), map.width(), map.height(), maps_dir.join(format!("map_{k:02}.png")))?;
        }
    }
    log::info!("{n} filters written to {}", filters_dir.display());
    Ok(())
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("DBN_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("DBN_THREADS={v} is not a number"))?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let settings = Settings::resolve(&cli)?;
    match &cli.command {
        Command::Synthesize {
            input,
            output,
            source_fps,
            target_fps,
        } => {
            prepare_output(output, &settings)?;
            synthesize(input, output, *source_fps, *target_fps)
        }
        Command::Align { input, output } => {
            prepare_output(output, &settings)?;
            align(input, output, &settings)
        }
        Command::Train {
            data, output, resume, ..
        } => {
            prepare_output(output, &settings)?;
            train(data, output, resume.as_deref(), &settings)
        }
        Command::Infer { model, input, output } => {
            prepare_output(output, &settings)?;
            infer(model, input, output, &settings)
        }
        Command::Eval { model, input, output } => {
            prepare_output(output, &settings)?;
            eval(model, input, output, &settings)
        }
        Command::DumpFilters {
            model,
            output,
            input,
            frame,
        } => {
            prepare_output(output, &settings)?;
            dump(model, output, input.as_deref(), *frame)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
