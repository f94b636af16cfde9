use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use arcsep::dsp::{log_magnitude, AudioClip, Stft, StftConfig};
use arcsep::io::{
    evaluate_estimates, evaluate_model, load_checkpoint, load_song, load_split, read_wav, save_checkpoint,
    train_enhancers, train_separator, write_matrix, write_wav, Accompaniment, Checkpoint, IoError, RunConfig,
    WavFormat, DEFAULT_SOURCES,
};
use arcsep::{DType, Scalar};
use arcsep::training::{synthetic_songs, Song, SyntheticConfig, TrainReport, SYNTHETIC_SOURCES};

/// Music source separation: training, separation and SDR evaluation.
///
/// Configuration keys (see `inspect-checkpoint` for the full list) can be
/// given in a `--config` file as `key=value` lines and overridden on the
/// command line with `--<key> <value>` or `--<key>=<value>`, for example
/// `--model.skip_kind conv --train.lr_conv=0.0005`.
#[derive(Debug, Parser)]
#[command(name = "arcsep", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AccompanimentArg {
    Nonvocal,
    All4,
}

impl From<AccompanimentArg> for Accompaniment {
    fn from(a: AccompanimentArg) -> Self {
        match a {
            AccompanimentArg::Nonvocal => Accompaniment::NonVocal,
            AccompanimentArg::All4 => Accompaniment::All4,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    F32,
    Pcm16,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a separator (plain or residual) and write a checkpoint.
    Train {
        /// Dataset root holding `<split>/<track>/<source>.wav`.
        #[arg(long, required_unless_present = "synthetic")]
        data: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        split: String,
        /// Train on generated two-source songs (noise accompaniment, tonal
        /// vocals) with this many songs instead of a dataset.
        #[arg(long, conflicts_with = "data")]
        synthetic: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train per-source enhancers on top of a trained separator.
    TrainEnhancer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required_unless_present = "synthetic")]
        data: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, conflicts_with = "data")]
        synthetic: Option<usize>,
        /// Only `train.*` keys apply; the network comes from the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Separate a song into stems written as `<out-dir>/<stem>.wav`.
    Separate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "nonvocal")]
        accompaniment: AccompanimentArg,
        #[arg(long, value_enum, default_value = "f32")]
        format: FormatArg,
        /// Skip the enhancers stored in the checkpoint.
        #[arg(long)]
        no_enhancers: bool,
    },
    /// Score a split by SDR, either by running a checkpoint or from
    /// precomputed estimates in `<estimates>/<track>/<stem>.wav`.
    Evaluate {
        #[arg(long, required_unless_present = "estimates")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, conflicts_with = "checkpoint")]
        estimates: Option<PathBuf>,
        /// Stem names when scoring estimates.
        #[arg(long, value_delimiter = ',', default_values = DEFAULT_SOURCES)]
        sources: Vec<String>,
        #[arg(long, value_enum, default_value = "nonvocal")]
        accompaniment: AccompanimentArg,
        /// Also write the `track,source,sdr_db` rows here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write log-magnitude spectrograms as `F T` text matrices.
    ///
    /// For a WAV file this writes `mixture.txt`; for a track directory it
    /// writes `mixture.txt` and `groundtruth_<stem>.txt`. With a checkpoint,
    /// `estimate_<stem>.txt` is added for every estimated stem.
    DumpSpec {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Channel to dump.
        #[arg(long, default_value_t = 0)]
        channel: usize,
    },
    /// Print the header, configuration and contents of a checkpoint.
    InspectCheckpoint {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

const CONFIG_SECTIONS: [&str; 4] = ["model.", "train.", "stft.", "data."];

type Overrides = Vec<(String, String)>;

/// Pulls `--<section>.<key> value` and `--<section>.<key>=value` pairs out
/// of the argument list, leaving the rest for clap.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides), IoError> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let Some(body) = arg.strip_prefix("--").filter(|b| CONFIG_SECTIONS.iter().any(|s| b.starts_with(s))) else {
            rest.push(arg);
            continue;
        };
        match body.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                let v = iter
                    .next()
                    .ok_or_else(|| IoError::Config(format!("--{body} needs a value")))?;
                overrides.push((body.to_string(), v));
            }
        }
    }
    Ok((rest, overrides))
}

fn synthetic_preset(cfg: &mut RunConfig) -> Result<(), IoError> {
    cfg.set("model.sources", &SYNTHETIC_SOURCES.len().to_string())?;
    cfg.set("data.sources", &SYNTHETIC_SOURCES.join(","))
}

fn build_config(
    file: Option<&Path>,
    overrides: &[(String, String)],
    synthetic: bool,
) -> Result<RunConfig, IoError> {
    let mut cfg = RunConfig::default();
    if synthetic {
        synthetic_preset(&mut cfg)?;
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        cfg.apply_text(&text)?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_songs(
    data: Option<&Path>,
    split: &str,
    synthetic: Option<usize>,
    cfg: &RunConfig,
) -> Result<Vec<Song>, IoError> {
    if let Some(clips) = synthetic {
        if cfg.sources != SYNTHETIC_SOURCES {
            return Err(IoError::Config(format!(
                "synthetic data has stems {}; set data.sources accordingly",
                SYNTHETIC_SOURCES.join(",")
            )));
        }
        return Ok(synthetic_songs(&SyntheticConfig {
            clips,
            seconds: cfg.clip_seconds,
            seed: cfg.train.seed,
            ..SyntheticConfig::default()
        }));
    }
    let root = data.ok_or_else(|| IoError::Config("--data or --synthetic is required".into()))?;
    let loaded = load_split(root, split, &cfg.sources)?;
    for (track, reason) in &loaded.skipped {
        eprintln!("skipped {track}: {reason}");
    }
    Ok(loaded.songs)
}

fn print_report(report: &TrainReport) {
    println!("steps {}", report.steps);
    println!("epochs {}", report.epochs);
    println!("stopped_early {}", report.stopped_early);
    println!("best_validation {:.6e}", report.best_validation);
    println!("best_step {}", report.best_step);
    if let (Some(first), Some(last)) = (report.train_losses.first(), report.train_losses.last()) {
        println!("train_loss_first {first:.6e}");
        println!("train_loss_last {last:.6e}");
    }
}

fn create_dir(dir: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn dump_clip(stft: &Stft<f32>, clip: &AudioClip, channel: usize, path: &Path) -> Result<(), IoError> {
    if channel >= clip.num_channels() {
        return Err(IoError::Data(format!(
            "channel {channel} requested, clip has {}",
            clip.num_channels()
        )));
    }
    let features = log_magnitude(&stft.forward(clip.channel(channel))?);
    write_matrix(path, &features)
}

fn inspect<T: Scalar>(ckpt: &Checkpoint<T>, bytes: &[u8]) {
    let major = u16::from_le_bytes([bytes[8], bytes[9]]);
    let minor = u16::from_le_bytes([bytes[10], bytes[11]]);
    println!("format {major}.{minor}");
    println!("dtype {:?}", T::DTYPE);
    println!("seed {}", ckpt.meta.seed);
    println!("step {}", ckpt.meta.step);
    println!("best_validation {:.6e}", ckpt.meta.best_validation);
    println!("separator_params {}", ckpt.separator.num_params());
    println!("separator_checksum {:016x}", ckpt.separator.store().checksum());
    println!("optimizer_state {}", ckpt.separator_adam.is_some());
    match &ckpt.enhancers {
        Some(e) => println!(
            "enhancers {} x {} params",
            e.len(),
            e.models().first().map_or(0, |m| m.num_params())
        ),
        None => println!("enhancers none"),
    }
    println!("[config]");
    print!("{}", ckpt.config.to_text());
}

fn run(cli: Cli, overrides: Vec<(String, String)>) -> Result<(), IoError> {
    let reject_overrides = |verb: &str| {
        if overrides.is_empty() {
            Ok(())
        } else {
            Err(IoError::Config(format!("{verb} takes no configuration overrides")))
        }
    };
    match cli.command {
        Command::Train {
            data,
            split,
            synthetic,
            config,
            out,
        } => {
            let cfg = build_config(config.as_deref(), &overrides, synthetic.is_some())?;
            let songs = load_songs(data.as_deref(), &split, synthetic, &cfg)?;
            let (ckpt, report) = train_separator(&cfg, &songs)?;
            save_checkpoint(&out, &ckpt)?;
            print_report(&report);
        }
        Command::TrainEnhancer {
            checkpoint,
            data,
            split,
            synthetic,
            config,
            out,
        } => {
            let ckpt: Checkpoint<f32> = load_checkpoint(&checkpoint)?;
            let mut cfg = ckpt.config.clone();
            if let Some(path) = &config {
                let text = std::fs::read_to_string(path).map_err(|e| IoError::Io {
                    path: path.clone(),
                    source: e,
                })?;
                for line in text.lines().map(str::trim).filter(|l| l.starts_with("train.")) {
                    cfg.apply_text(line)?;
                }
            }
            for (k, v) in &overrides {
                if !k.starts_with("train.") {
                    return Err(IoError::Config(format!(
                        "--{k}: only train.* keys apply to enhancer training"
                    )));
                }
                cfg.set(k, v)?;
            }
            let songs = load_songs(data.as_deref(), &split, synthetic, &cfg)?;
            let train = cfg.train.clone();
            let (ckpt, report) = train_enhancers(ckpt, &train, &songs)?;
            save_checkpoint(&out, &ckpt)?;
            print_report(&report);
        }
        Command::Separate {
            checkpoint,
            input,
            out_dir,
            accompaniment,
            format,
            no_enhancers,
        } => {
            reject_overrides("separate")?;
            let mut ckpt: Checkpoint<f32> = load_checkpoint(&checkpoint)?;
            if no_enhancers {
                ckpt.enhancers = None;
            }
            let song = read_wav(&input)?;
            let separation = ckpt.separate(&song, accompaniment.into())?;
            create_dir(&out_dir)?;
            let format = match format {
                FormatArg::F32 => WavFormat::Float32,
                FormatArg::Pcm16 => WavFormat::Pcm16,
            };
            for (name, clip) in separation.outputs() {
                let path = out_dir.join(format!("{name}.wav"));
                write_wav(&path, clip, format)?;
                println!("{}", path.display());
            }
        }
        Command::Evaluate {
            checkpoint,
            data,
            split,
            estimates,
            sources,
            accompaniment,
            csv,
        } => {
            reject_overrides("evaluate")?;
            let report = match (&checkpoint, &estimates) {
                (_, Some(est)) => evaluate_estimates(&data, &split, est, &sources, accompaniment.into())?,
                (Some(path), None) => {
                    let ckpt: Checkpoint<f32> = load_checkpoint(path)?;
                    evaluate_model(&ckpt, &data, &split, accompaniment.into())?
                }
                (None, None) => return Err(IoError::Config("--checkpoint or --estimates is required".into())),
            };
            print!("{}", report.to_table());
            if let Some(path) = csv {
                std::fs::write(&path, report.to_csv()).map_err(|e| IoError::Io { path, source: e })?;
            }
        }
        Command::DumpSpec {
            input,
            out_dir,
            checkpoint,
            channel,
        } => {
            reject_overrides("dump-spec")?;
            let ckpt: Option<Checkpoint<f32>> = checkpoint.as_deref().map(load_checkpoint).transpose()?;
            let stft_cfg = ckpt.as_ref().map_or_else(StftConfig::default, |c| c.config.stft);
            let names: Vec<String> = ckpt.as_ref().map_or_else(
                || DEFAULT_SOURCES.iter().map(|s| s.to_string()).collect(),
                |c| c.config.sources.clone(),
            );
            let stft = Stft::<f32>::new(stft_cfg);
            create_dir(&out_dir)?;
            let mixture = if input.is_dir() {
                let song = load_song(&input, &names)?.map_err(IoError::Data)?;
                for (name, clip) in names.iter().zip(&song.stems) {
                    dump_clip(&stft, clip, channel, &out_dir.join(format!("groundtruth_{name}.txt")))?;
                }
                let path = input.join("mixture.wav");
                if path.is_file() {
                    read_wav(path)?
                } else {
                    song.mixture()
                }
            } else {
                read_wav(&input)?
            };
            dump_clip(&stft, &mixture, channel, &out_dir.join("mixture.txt"))?;
            if let Some(ckpt) = &ckpt {
                let separation = ckpt.separate(&mixture, Accompaniment::NonVocal)?;
                for (name, clip) in separation.outputs() {
                    dump_clip(&stft, clip, channel, &out_dir.join(format!("estimate_{name}.txt")))?;
                }
            }
        }
        Command::InspectCheckpoint { checkpoint } => {
            reject_overrides("inspect-checkpoint")?;
            let bytes = std::fs::read(&checkpoint).map_err(|e| IoError::Io {
                path: checkpoint.clone(),
                source: e,
            })?;
            match bytes.get(12).copied().and_then(DType::from_tag) {
                Some(DType::F64) => inspect(&Checkpoint::<f64>::from_bytes(&bytes)?, &bytes),
                _ => inspect(&Checkpoint::<f32>::from_bytes(&bytes)?, &bytes),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = Cli::parse_from(args);
    match run(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
