//! The per-segment loop: recognize the last emitted segment, fuse with the
//! target, downsample the next four original bars, generate, render, score.

pub mod protocol;
pub mod server;

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use server::{serve, serve_listener, ServerState};

use crate::arranger::{assemble_tracks, generate, render_texture, GeneratorBackend, NeuralToy, RuleConfig, Texture};
use crate::error::{Error, Result};
use crate::features::{features, FormCache, FormConfig};
use crate::fusion::{calibrate_features_concat, make_conditioned_input, FusionKind, FusionMethod, LinearMap, PreviousSegment};
use crate::metrics::{evaluate, MetricConfig, MetricReport};
use crate::model::{downsample, EmotionSeq, EmotionVA, Granularity, Segment, SEGMENT_BARS};
use crate::params::ParamFile;
use crate::pipeline::{write_midi, Song, DEFAULT_PPQ};
use crate::recognizer::{build_examples, recognize_with_embedding, Recognizer, RecognizerConfig};
use crate::synth::labeled_corpus;

pub const PARAMS_ENV: &str = "REMAST_PARAMS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Rule,
    Neural,
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rule" | "rule-based" => Ok(BackendKind::Rule),
            "neural" | "neural-toy" => Ok(BackendKind::Neural),
            other => Err(Error::Invalid(format!("unknown backend {other:?} (rule|neural)"))),
        }
    }
}

/// Trained parameters shared read-only by every session.
#[derive(Debug)]
pub struct Models {
    pub recognizer: Recognizer,
    pub concat: LinearMap,
    pub features: LinearMap,
    pub neural: Option<NeuralToy>,
}

impl Models {
    /// Uses a median-initialized emotion-concat map and calibrates the features-concat map.
    pub fn new(recognizer: Recognizer) -> Result<Self> {
        let features = calibrate_features(&recognizer)?;
        Ok(Models { recognizer, concat: LinearMap::median_init(), features, neural: None })
    }

    pub fn untrained() -> Result<Self> {
        Models::new(Recognizer::new(RecognizerConfig::default()))
    }

    pub fn fusion(&self, kind: FusionKind) -> FusionMethod {
        match kind {
            FusionKind::Median => FusionMethod::MedianEmotion,
            FusionKind::Concat => FusionMethod::EmotionConcat(self.concat.clone()),
            FusionKind::Features => FusionMethod::FeaturesConcat(self.features.clone()),
        }
    }

    pub fn to_params(&self) -> Result<ParamFile> {
        let rec = self.recognizer.to_params()?;
        let concat = FusionMethod::EmotionConcat(self.concat.clone()).to_params()?;
        let feats = FusionMethod::FeaturesConcat(self.features.clone()).to_params()?;
        let mut parts = vec![("recognizer", &rec), ("concat", &concat), ("features", &feats)];
        let gen = self.neural.as_ref().map(NeuralToy::to_params).transpose()?;
        if let Some(g) = &gen {
            parts.push(("generator", g));
        }
        Ok(ParamFile::bundle(&parts))
    }

    /// Accepts a bundle or a bare recognizer file.
    pub fn from_params(pf: &ParamFile) -> Result<Self> {
        if pf.kind == "recognizer" {
            return Models::new(Recognizer::from_params(pf)?);
        }
        let rec = pf.part("recognizer")?.ok_or_else(|| Error::ParamFile("bundle lacks a recognizer".into()))?;
        let recognizer = Recognizer::from_params(&rec)?;
        let map = |name: &str| -> Result<Option<LinearMap>> {
            Ok(match pf.part(name)?.map(|p| FusionMethod::from_params(&p)).transpose()? {
                Some(FusionMethod::EmotionConcat(m) | FusionMethod::FeaturesConcat(m)) => Some(m),
                _ => None,
            })
        };
        let concat = map("concat")?.unwrap_or_else(LinearMap::median_init);
        let features = match map("features")? {
            Some(m) => m,
            None => calibrate_features(&recognizer)?,
        };
        let neural = pf.part("generator")?.map(|g| NeuralToy::from_params(&g)).transpose()?;
        Ok(Models { recognizer, concat, features, neural })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Models::from_params(&ParamFile::load(path)?)
    }

    /// Loads from the path in `REMAST_PARAMS`, or falls back to untrained weights.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(PARAMS_ENV) {
            Some(p) => {
                info!("loading parameters from {}", Path::new(&p).display());
                Models::load(Path::new(&p))
            }
            None => {
                warn!("{PARAMS_ENV} not set; using untrained recognizer weights");
                Models::untrained()
            }
        }
    }
}

/// Ridge-fits the features-concat map on a fixed synthetic corpus.
pub fn calibrate_features(rec: &Recognizer) -> Result<LinearMap> {
    let corpus = labeled_corpus(&mut ChaCha8Rng::seed_from_u64(7), 96, 0.0);
    let examples = build_examples(&corpus, &rec.config)?;
    let refs: Vec<_> = examples.iter().collect();
    let fwd = rec.forward(&refs);
    let embeddings: Vec<Vec<f64>> = fwd.embedding.rows().into_iter().map(|r| r.to_vec()).collect();
    let means: Vec<[f64; 2]> = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let n = ex.beats as f64;
            let v = (0..ex.beats).map(|b| fwd.out[[i, 2 * b]]).sum::<f64>() / n;
            let a = (0..ex.beats).map(|b| fwd.out[[i, 2 * b + 1]]).sum::<f64>() / n;
            [v, a]
        })
        .collect();
    calibrate_features_concat(&embeddings, &means, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub fusion: FusionKind,
    pub backend: BackendKind,
    pub granularity: Granularity,
    pub rule: RuleConfig,
    pub form: FormConfig,
    pub metrics: MetricConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            fusion: FusionKind::default(),
            backend: BackendKind::default(),
            granularity: Granularity::Beat,
            rule: RuleConfig::default(),
            form: FormConfig::default(),
            metrics: MetricConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub bar_index: usize,
    pub segment: Segment,
    pub texture: Texture,
    /// Recognized emotion of the previously emitted segment; `None` on the first step.
    pub recognized_prev: Option<EmotionSeq>,
    /// Recognized emotion of the segment emitted by this step.
    pub recognized: EmotionSeq,
    pub fused: EmotionSeq,
    pub metrics_so_far: MetricReport,
    pub latency_ms: f64,
}

/// One listener's pass through a song.
#[derive(Debug)]
pub struct Session {
    song: Song,
    cursor: usize,
    config: SessionConfig,
    models: Arc<Models>,
    form_cache: FormCache,
    last: Option<PreviousSegment>,
    original: Vec<Segment>,
    arranged: Vec<Segment>,
    targets: Vec<EmotionVA>,
    recognized: Vec<EmotionVA>,
}

impl Session {
    pub fn open(song: Song, config: SessionConfig, models: Arc<Models>) -> Result<Self> {
        if song.bars() < SEGMENT_BARS {
            return Err(Error::SongTooShort { bars: song.bars() });
        }
        if config.backend == BackendKind::Neural && models.neural.is_none() {
            return Err(Error::Invalid("neural backend requested but no generator parameters are loaded".into()));
        }
        Ok(Session {
            song,
            cursor: 0,
            config,
            models,
            form_cache: FormCache::new(),
            last: None,
            original: Vec::new(),
            arranged: Vec::new(),
            targets: Vec::new(),
            recognized: Vec::new(),
        })
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn steps_total(&self) -> usize {
        self.song.segment_count()
    }

    pub fn steps_done(&self) -> usize {
        self.arranged.len()
    }

    pub fn is_finished(&self) -> bool {
        self.cursor + SEGMENT_BARS > self.song.bars()
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn song(&self) -> &Song {
        &self.song
    }

    pub fn form_cache(&self) -> &FormCache {
        &self.form_cache
    }

    /// Changes fusion, backend or granularity for the following steps.
    pub fn set_config(&mut self, config: SessionConfig) -> Result<()> {
        if config.backend == BackendKind::Neural && self.models.neural.is_none() {
            return Err(Error::Invalid("neural backend requested but no generator parameters are loaded".into()));
        }
        self.config = config;
        Ok(())
    }

    pub fn arranged(&self) -> &[Segment] {
        &self.arranged
    }

    pub fn report(&self) -> Result<MetricReport> {
        evaluate(&self.original, &self.arranged, &self.targets, &self.recognized, &self.config.metrics)
    }

    pub fn step(&mut self, target: EmotionVA) -> Result<StepResult> {
        let t0 = Instant::now();
        if self.is_finished() {
            return Err(Error::EndOfSong);
        }
        let original = self.song.segment_at(self.cursor)?;
        let ts = original.time_signature;
        let target_seq = EmotionSeq::constant(target, original.beats());
        let fused = self.models.fusion(self.config.fusion).fuse(self.last.as_ref(), &target_seq)?;
        let anchors = downsample(&original.melody, self.config.granularity, ts);
        let cond = make_conditioned_input(&anchors, &fused)?;
        let segment = match self.config.backend {
            BackendKind::Rule => generate(&GeneratorBackend::RuleBased(self.config.rule), &cond, original.tonality, ts)?,
            BackendKind::Neural => {
                let model = self.models.neural.as_ref().ok_or_else(|| Error::Invalid("no generator parameters loaded".into()))?;
                model.generate(&cond, original.tonality, ts)?
            }
        };
        let texture = render_texture(&segment, cond.emotion_va());

        // recognized here, consumed by the next step's fusion
        let feats = features(&segment, &mut self.form_cache, &self.config.form);
        let (recognized, embedding) = recognize_with_embedding(&self.models.recognizer, &segment, &feats)?;
        let recognized_prev = self.last.replace(PreviousSegment { recognized: recognized.clone(), embedding }).map(|p| p.recognized);

        self.original.push(original);
        self.arranged.push(segment.clone());
        self.targets.push(target);
        self.recognized.push(recognized.mean().ok_or(Error::Empty("recognized emotion"))?);
        let metrics_so_far = self.report()?;
        let bar_index = self.cursor;
        self.cursor += SEGMENT_BARS;
        Ok(StepResult {
            bar_index,
            segment,
            texture,
            recognized_prev,
            recognized,
            fused: EmotionSeq::new(fused.iter().map(|[v, a]| EmotionVA::new(*v, *a)).collect()),
            metrics_so_far,
            latency_ms: t0.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Standard MIDI bytes for a run of step textures.
pub fn render_midi(steps: &[StepResult], song: &Song) -> Vec<u8> {
    let seg_ticks = song.time_signature.segment_beats() as u32 * DEFAULT_PPQ as u32;
    let tracks = assemble_tracks(steps.iter().enumerate().map(|(i, s)| (&s.texture, i as u32 * seg_ticks)));
    write_midi(&tracks, song.bpm, song.time_signature.beats_per_bar() as u8, DEFAULT_PPQ)
}

/// One segment's MIDI, for streaming to a client.
pub fn segment_midi(texture: &Texture, song: &Song) -> Vec<u8> {
    write_midi(&assemble_tracks([(texture, 0)]), song.bpm, song.time_signature.beats_per_bar() as u8, DEFAULT_PPQ)
}

/// Reads one `valence,arousal` row per four-bar step; `#` comments and a header row are allowed.
pub fn read_trajectory(input: impl std::io::Read) -> Result<Vec<EmotionVA>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Invalid(e.to_string()))?;
        let nums: Vec<Option<f64>> = rec.iter().take(2).map(|f| f.parse::<f64>().ok()).collect();
        match nums.as_slice() {
            [Some(v), Some(a)] if v.is_finite() && a.is_finite() => out.push(EmotionVA::new(*v, *a)),
            _ if i == 0 => continue,
            _ => return Err(Error::Invalid(format!("trajectory row {}: expected two numbers", i + 1))),
        }
    }
    Ok(out)
}

/// Recognized mean emotion of each segment, threading one form cache through the stream.
pub fn recognize_stream(rec: &Recognizer, segments: &[Segment], form: &FormConfig) -> Result<Vec<EmotionVA>> {
    let mut cache = FormCache::new();
    segments
        .iter()
        .map(|s| {
            let f = features(s, &mut cache, form);
            recognize_with_embedding(rec, s, &f)?.0.mean().ok_or(Error::Empty("segment beats"))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineRun {
    pub steps: Vec<StepResult>,
    pub midi: Vec<u8>,
    pub report: MetricReport,
}

/// Arranges the whole song against one target emotion per four-bar step.
pub fn run_offline(song: &Song, trajectory: &[EmotionVA], config: SessionConfig, models: Arc<Models>) -> Result<OfflineRun> {
    if trajectory.len() != song.segment_count() {
        return Err(Error::LengthMismatch { expected: song.segment_count(), actual: trajectory.len() });
    }
    let mut session = Session::open(song.clone(), config, models)?;
    let steps = trajectory.iter().map(|&t| session.step(t)).collect::<Result<Vec<_>>>()?;
    let midi = render_midi(&steps, song);
    Ok(OfflineRun { report: session.report()?, steps, midi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HarmonySeq, MelodyGrid, TimeSignature, Tonality};
    use crate::synth::{demo_song, random_song};
    use proptest::prelude::*;

    fn models() -> Arc<Models> {
        Arc::new(Models::new(Recognizer::new(RecognizerConfig { hidden: 16, ..Default::default() })).unwrap())
    }

    fn song_of(bars: usize) -> Song {
        let ts = TimeSignature::FourFour;
        Song::new(MelodyGrid::rest(bars * 16), HarmonySeq::new(vec![crate::model::Chord::rest(); bars * 4]), Tonality::major(0), ts, 120.0)
            .unwrap()
    }

    #[test]
    fn step_counts() {
        let m = models();
        let mut s = Session::open(song_of(60), SessionConfig::default(), m.clone()).unwrap();
        assert_eq!(s.steps_total(), 15);
        for i in 0..15 {
            assert_eq!(s.cursor(), 4 * i);
            s.step(EmotionVA::new(0.0, 0.0)).unwrap();
        }
        assert!(matches!(s.step(EmotionVA::new(0.0, 0.0)), Err(Error::EndOfSong)));
        assert_eq!(Session::open(song_of(4), SessionConfig::default(), m.clone()).unwrap().steps_total(), 1);
        assert!(matches!(Session::open(song_of(3), SessionConfig::default(), m), Err(Error::SongTooShort { bars: 3 })));
    }

    #[test]
    fn bootstrap_and_dataflow() {
        let m = models();
        let cfg = SessionConfig { fusion: FusionKind::Median, ..Default::default() };
        let mut s = Session::open(demo_song(), cfg, m.clone()).unwrap();
        let target = EmotionVA::new(0.6, -0.4);
        let first = s.step(target).unwrap();
        assert!(first.recognized_prev.is_none());
        assert!(first.fused.points.iter().all(|p| *p == target));
        let second = s.step(EmotionVA::new(-0.5, 0.5)).unwrap();
        // the fused input comes from the generated first segment, not the original
        let mut cache = FormCache::new();
        let f = features(&first.segment, &mut cache, &FormConfig::default());
        let (rec, _) = recognize_with_embedding(&m.recognizer, &first.segment, &f).unwrap();
        assert_eq!(second.recognized_prev.as_ref(), Some(&rec));
        assert_eq!(first.recognized, rec);
        let expected = crate::fusion::fuse_median(&rec, &EmotionSeq::constant(EmotionVA::new(-0.5, 0.5), 16)).unwrap();
        assert_eq!(second.fused, expected);
    }

    #[test]
    fn offline_run_checks_length_and_covers_song() {
        let m = models();
        let song = demo_song();
        assert!(run_offline(&song, &[EmotionVA::new(0.0, 0.0)], SessionConfig::default(), m.clone()).is_err());
        let traj = vec![EmotionVA::new(0.2, 0.1); song.segment_count()];
        let run = run_offline(&song, &traj, SessionConfig::default(), m).unwrap();
        assert_eq!(run.steps.len(), song.segment_count());
        let bars: usize = run.steps.iter().map(|s| s.segment.bar_count()).sum();
        assert_eq!(bars, song.bars());
        assert!(run.steps.iter().all(|s| s.latency_ms >= 0.0));
        let parsed = crate::pipeline::parse_midi(&run.midi).unwrap();
        assert_eq!(parsed.tracks.iter().filter(|t| !t.notes.is_empty()).count(), 2);
    }

    #[test]
    fn trajectory_file() {
        let t = read_trajectory("v,a\n0.5, -0.5\n# note\n-1 ,1\n".as_bytes()).unwrap();
        assert_eq!(t, vec![EmotionVA::new(0.5, -0.5), EmotionVA::new(-1.0, 1.0)]);
        assert!(read_trajectory("0.1,0.2\n0.3\n".as_bytes()).is_err());
    }

    #[test]
    fn stream_recognition_matches_steps() {
        let m = models();
        let song = demo_song();
        let traj = vec![EmotionVA::new(-0.3, 0.4); song.segment_count()];
        let run = run_offline(&song, &traj, SessionConfig::default(), m.clone()).unwrap();
        let segs: Vec<Segment> = run.steps.iter().map(|s| s.segment.clone()).collect();
        let rec = recognize_stream(&m.recognizer, &segs, &FormConfig::default()).unwrap();
        let from_steps: Vec<EmotionVA> = run.steps.iter().map(|s| s.recognized.mean().unwrap()).collect();
        assert_eq!(rec, from_steps);
    }

    #[test]
    fn neural_backend_needs_parameters() {
        let cfg = SessionConfig { backend: BackendKind::Neural, ..Default::default() };
        assert!(Session::open(demo_song(), cfg, models()).is_err());
    }

    #[test]
    fn models_bundle_roundtrip() {
        let m = models();
        let pf = ParamFile::from_bytes(&m.to_params().unwrap().to_bytes().unwrap()).unwrap();
        let back = Models::from_params(&pf).unwrap();
        assert_eq!(back.recognizer, m.recognizer);
        assert_eq!(back.features, m.features);
        assert_eq!(back.concat, m.concat);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        /// With median fusion the fused input sits halfway between the recognized
        /// emotion of the music just played and the new target.
        #[test]
        fn median_fusion_softens_jumps(seed in any::<u64>(), targets in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let song = random_song(&mut rng, Tonality::minor(9), TimeSignature::FourFour, 4, 110.0);
            let cfg = SessionConfig { fusion: FusionKind::Median, ..Default::default() };
            let mut s = Session::open(song, cfg, models()).unwrap();
            for (v, a) in targets {
                let t = EmotionVA::new(v, a);
                let r = s.step(t).unwrap();
                if let Some(prev) = &r.recognized_prev {
                    for (f, p) in r.fused.points.iter().zip(&prev.points) {
                        prop_assert!(f.distance(p) <= t.distance(p) + 1e-12);
                        prop_assert!((f.distance(p) - 0.5 * t.distance(p)).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
