use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use emoarrange::arranger::{train_generator_toy, GenTrainConfig};
use emoarrange::features::{features, FeatureGroup, FeatureMask, FormCache, FormConfig};
use emoarrange::fusion::FusionKind;
use emoarrange::metrics::{evaluate, MetricConfig};
use emoarrange::pipeline::{ingest_dir, ingest_midi, read_label_csv, read_pieces, write_pieces, Ingested, Song};
use emoarrange::recognizer::{train_semi_supervised, train_supervised, LossKind, RecognizerConfig, SemiConfig};
use emoarrange::stream::{read_trajectory, recognize_stream, run_offline, serve, BackendKind, Models, ServerState, SessionConfig};
use emoarrange::synth::demo_song;
use emoarrange::{Error, Granularity, Result};

#[derive(Parser)]
#[command(name = "emoarrange", version, about = "Emotion-driven real-time music arrangement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fusion {
    Median,
    Concat,
    Features,
}

impl From<Fusion> for FusionKind {
    fn from(f: Fusion) -> Self {
        match f {
            Fusion::Median => FusionKind::Median,
            Fusion::Concat => FusionKind::Concat,
            Fusion::Features => FusionKind::Features,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Rule,
    Neural,
}

impl From<Backend> for BackendKind {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Rule => BackendKind::Rule,
            Backend::Neural => BackendKind::Neural,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Gran {
    Beat,
    Bar,
}

impl From<Gran> for Granularity {
    fn from(g: Gran) -> Self {
        match g {
            Gran::Beat => Granularity::Beat,
            Gran::Bar => Granularity::Bar,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Loss {
    Ce,
    Mse,
}

#[derive(Clone, Copy, ValueEnum)]
enum Group {
    HarmonicColor,
    RhythmPattern,
    ContourFactor,
    FormFactor,
}

#[derive(clap::Args)]
struct SessionArgs {
    #[arg(long, value_enum, default_value = "features")]
    fusion: Fusion,
    #[arg(long, value_enum, default_value = "rule")]
    backend: Backend,
    #[arg(long, value_enum, default_value = "beat")]
    granularity: Gran,
    /// Parameter bundle or recognizer file.
    #[arg(long, env = "REMAST_PARAMS")]
    params: Option<PathBuf>,
}

impl SessionArgs {
    fn config(&self) -> SessionConfig {
        SessionConfig {
            fusion: self.fusion.into(),
            backend: self.backend.into(),
            granularity: self.granularity.into(),
            ..Default::default()
        }
    }

    fn models(&self) -> Result<Models> {
        match &self.params {
            Some(p) => Models::load(p),
            None => {
                warn!("no parameters given; using untrained recognizer weights");
                Models::untrained()
            }
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse, screen and symbolize MIDI files into line-delimited pieces.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// CSV with header file,time,kind,a,b,c,label.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Write the 40 theory features of every piece as CSV rows.
    Features {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the emotion recognizer and save a parameter bundle.
    TrainRecognizer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 512)]
        hidden: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 40)]
        epochs: usize,
        #[arg(long, value_enum, default_value = "ce")]
        loss: Loss,
        /// Disable one feature group.
        #[arg(long, value_enum)]
        without: Option<Group>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also train the toy neural generator; uses the semi-supervised schedule when
        /// the data contains unlabeled pieces.
        #[arg(long)]
        generator: bool,
    },
    /// Arrange a song offline against a per-step emotion file.
    Arrange {
        /// MIDI file, or `demo` for the built-in song.
        #[arg(long = "in")]
        input: String,
        /// One `valence,arousal` row per four bars.
        #[arg(long)]
        emotions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Metric report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Score an arranged MIDI file against its original.
    Eval {
        #[arg(long)]
        original: String,
        #[arg(long)]
        arranged: PathBuf,
        #[arg(long)]
        emotions: PathBuf,
        /// Metric report as JSON; the table is printed to stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        octave_strict: bool,
        #[arg(long, env = "REMAST_PARAMS")]
        params: Option<PathBuf>,
    },
    /// Run the websocket session service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: String,
        /// Directory of MIDI files offered by file stem; `demo` is always present.
        #[arg(long)]
        songs: Option<PathBuf>,
        #[command(flatten)]
        session: SessionArgs,
    },
}

fn load_song(input: &str) -> Result<Song> {
    if input == "demo" {
        return Ok(demo_song());
    }
    match ingest_midi(&std::fs::read(input)?)? {
        Ingested::Song { song, .. } => Ok(song),
        Ingested::Rejected(r) => Err(Error::Invalid(format!("{input}: rejected: {r:?}"))),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { input, out, labels } => {
            let labels = match labels {
                Some(p) => read_label_csv(File::open(p)?)?,
                None => HashMap::new(),
            };
            let summary = ingest_dir(&input, &labels)?;
            for (path, why) in &summary.rejected {
                warn!("rejected {}: {why}", path.display());
            }
            let n = write_pieces(&out, &summary.pieces)?;
            let labeled = summary.pieces.iter().filter(|p| p.emotion.is_some()).count();
            println!("{} songs, {n} pieces ({labeled} labeled), {} rejected", summary.songs, summary.rejected.len());
        }
        Command::Features { input, out } => {
            let (pieces, skipped) = read_pieces(&input)?;
            let mut w = csv::Writer::from_path(&out).map_err(|e| Error::Invalid(e.to_string()))?;
            let mut caches: HashMap<Option<String>, FormCache> = HashMap::new();
            let cfg = FormConfig::default();
            let mut header = vec!["source".to_owned(), "index".to_owned()];
            header.extend((0..40).map(|i| format!("f{i}")));
            w.write_record(&header).map_err(|e| Error::Invalid(e.to_string()))?;
            for p in &pieces {
                let seg = p.segment()?;
                let f = features(&seg, caches.entry(p.source.clone()).or_default(), &cfg).flatten();
                let mut row = vec![p.source.clone().unwrap_or_default(), p.index.to_string()];
                row.extend(f.iter().map(|x| x.to_string()));
                w.write_record(&row).map_err(|e| Error::Invalid(e.to_string()))?;
            }
            w.flush()?;
            println!("{} rows written, {skipped} malformed pieces skipped", pieces.len());
        }
        Command::TrainRecognizer { data, out, hidden, lr, batch_size, epochs, loss, without, seed, generator } => {
            let (pieces, skipped) = read_pieces(&data)?;
            if skipped > 0 {
                warn!("{skipped} malformed pieces skipped");
            }
            let mask = match without {
                None => FeatureMask::all(),
                Some(Group::HarmonicColor) => FeatureMask::without(FeatureGroup::HarmonicColor),
                Some(Group::RhythmPattern) => FeatureMask::without(FeatureGroup::RhythmPattern),
                Some(Group::ContourFactor) => FeatureMask::without(FeatureGroup::ContourFactor),
                Some(Group::FormFactor) => FeatureMask::without(FeatureGroup::FormFactor),
            };
            let cfg = RecognizerConfig {
                hidden,
                lr,
                batch_size,
                max_epochs: epochs,
                loss: match loss {
                    Loss::Ce => LossKind::CrossEntropy,
                    Loss::Mse => LossKind::Mse,
                },
                mask,
                seed,
                ..Default::default()
            };
            let (labeled, unlabeled): (Vec<_>, Vec<_>) = pieces.into_iter().partition(|p| p.emotion.is_some());
            let mut models = if generator && !unlabeled.is_empty() {
                let semi = SemiConfig { recognizer: cfg, ..Default::default() };
                let (rec, gen, report) = train_semi_supervised(&labeled, &unlabeled, &semi)?;
                println!("semi-supervised: final generation loss {:.4}", report.final_gen_loss);
                let mut m = Models::new(rec)?;
                m.neural = Some(gen);
                m
            } else {
                let (rec, report) = train_supervised(&labeled, &cfg)?;
                println!(
                    "recognizer: {} epochs, best validation at epoch {}, converged {}",
                    report.train_loss.len(),
                    report.best_epoch,
                    report.converged
                );
                let mut m = Models::new(rec)?;
                if generator {
                    let (gen, r) = train_generator_toy(&labeled, &GenTrainConfig::default())?;
                    println!("generator: loss {:.4} -> {:.4}", r.initial_loss, r.epoch_loss.last().copied().unwrap_or(f64::NAN));
                    m.neural = Some(gen);
                }
                m
            };
            models.to_params()?.save(&out)?;
            info!("saved {}", out.display());
            drop(models.neural.take());
        }
        Command::Arrange { input, emotions, out, report, session } => {
            let song = load_song(&input)?;
            let trajectory = read_trajectory(File::open(&emotions)?)?;
            let run = run_offline(&song, &trajectory, session.config(), Arc::new(session.models()?))?;
            std::fs::write(&out, &run.midi)?;
            print!("{}", run.report.to_table());
            let worst = run.steps.iter().map(|s| s.latency_ms).fold(0.0, f64::max);
            println!("{} steps, slowest {worst:.1} ms", run.steps.len());
            if let Some(p) = report {
                write_json(&p, &run.report)?;
            }
        }
        Command::Eval { original, arranged, emotions, report, octave_strict, params } => {
            let original = load_song(&original)?;
            let arranged = load_song(arranged.to_str().ok_or_else(|| Error::Invalid("non-UTF-8 path".into()))?)?;
            let targets = read_trajectory(File::open(&emotions)?)?;
            let models = match params {
                Some(p) => Models::load(&p)?,
                None => Models::untrained()?,
            };
            let orig = original.segments()?;
            let arr = arranged.segments()?;
            let recognized = recognize_stream(&models.recognizer, &arr, &FormConfig::default())?;
            let cfg = MetricConfig { octave_strict, ..Default::default() };
            let r = evaluate(&orig, &arr, &targets, &recognized, &cfg)?;
            print!("{}", r.to_table());
            if let Some(p) = report {
                write_json(&p, &r)?;
            }
        }
        Command::Serve { bind, songs, session } => {
            let mut catalog = BTreeMap::from([("demo".to_owned(), demo_song())]);
            if let Some(dir) = songs {
                for entry in std::fs::read_dir(&dir)? {
                    let path = entry?.path();
                    let Some(stem) = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned) else { continue };
                    match std::fs::read(&path).map_err(Error::from).and_then(|b| ingest_midi(&b)) {
                        Ok(Ingested::Song { song, .. }) => {
                            catalog.insert(stem, song);
                        }
                        Ok(Ingested::Rejected(r)) => warn!("{}: rejected: {r:?}", path.display()),
                        Err(e) => warn!("{}: {e}", path.display()),
                    }
                }
            }
            info!("{} songs available", catalog.len());
            let state = Arc::new(ServerState { songs: catalog, models: Arc::new(session.models()?), config: session.config() });
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(bind, state))?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
