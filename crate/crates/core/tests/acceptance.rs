//! Runs every primary acceptance criterion and prints one PASS/FAIL line each.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use base64::Engine;
use futures_util::{SinkExt, StreamExt};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio_tungstenite::tungstenite::Message;

use emoarrange::features::{harmonic_color, k_value};
use emoarrange::fusion::fuse_median;
use emoarrange::metrics::{cec, chord_histogram_entropy, mctc, mctd, overall_coherence, pcc, similarity};
use emoarrange::model::{downsample, voice_triad};
use emoarrange::pipeline::Song;
use emoarrange::recognizer::{
    blend_emotion, build_examples, gradient_check, rmse, train_examples, train_semi_supervised, BlendSchedule, Example,
    MeanPredictor, RecognizerConfig, SemiConfig,
};
use emoarrange::stream::protocol::{ClientFrame, ServerFrame};
use emoarrange::stream::{run_offline, serve_listener, Models, ServerState, Session, SessionConfig};
use emoarrange::synth::{labeled_corpus, random_melody_with_density, random_harmony, random_song, random_tonality};
use emoarrange::{Chord, EmotionSeq, EmotionVA, Granularity, HarmonySeq, MelodyGrid, PitchToken, Segment, TimeSignature, Tonality};

type Outcome = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn random_ts(rng: &mut impl Rng) -> TimeSignature {
    if rng.gen_bool(0.8) {
        TimeSignature::FourFour
    } else {
        TimeSignature::TwoFour
    }
}

fn random_segment_any(rng: &mut impl Rng) -> Segment {
    let tonality = random_tonality(rng);
    let ts = random_ts(rng);
    let density = rng.gen_range(0.0..1.0);
    let melody = random_melody_with_density(rng, tonality, ts.segment_slots(), density);
    let harmony = random_harmony(rng, tonality, ts, 4);
    Segment::new(melody, harmony, tonality, ts).unwrap()
}

fn table_ii() -> Outcome {
    let rows = [
        ("TG-Muhamed", 3.62, 7.51, 1.77, 1.10),
        ("mL-Ferreira", 3.12, 5.09, 1.35, 4.44),
        ("MT-Sulun", 3.38, 4.57, 1.73, 4.32),
        ("ours", 3.04, 3.71, 1.04, 6.21),
    ];
    let mut worst: f64 = 0.0;
    for (name, p, c, m, published) in rows {
        let got = overall_coherence(p, c, m);
        worst = worst.max((got - published).abs());
        ensure((got - published).abs() <= 0.02, || format!("{name}: {got:.4} vs published {published}"))?;
    }
    Ok(format!("4 rows, max deviation {worst:.4}"))
}

fn harmonic_color_suite() -> Outcome {
    let t0 = Instant::now();
    let mut triads = Vec::new();
    for root in 0..12 {
        triads.push(Tonality::major(root).tonic_triad());
        triads.push(Tonality::minor(root).tonic_triad());
    }
    for t in &triads {
        let hc = harmonic_color(t, t).map_err(err)?;
        ensure(hc == 0.0, || format!("HC(X,X) = {hc} for {:?}", t.notes()))?;
    }
    let mut all = Vec::new();
    for a in 0..12u8 {
        for b in a + 1..12 {
            for c in b + 1..12 {
                all.push(Chord::new([60 + a, 60 + b, 60 + c]).unwrap());
            }
        }
    }
    let mut pairs = 0;
    for x in &all {
        for y in &all {
            let hxy = harmonic_color(x, y).map_err(err)?;
            ensure(hxy.abs() <= 1.0, || format!("|HC| = {} for {:?} {:?}", hxy.abs(), x.notes(), y.notes()))?;
            if k_value(x).unwrap() != k_value(y).unwrap() {
                let hyx = harmonic_color(y, x).map_err(err)?;
                ensure(hxy.signum() == -hyx.signum() && hxy != 0.0, || format!("sign not antisymmetric: {hxy} {hyx}"))?;
            }
            pairs += 1;
        }
    }
    let k = k_value(&Chord::new([60, 64, 67]).unwrap()).map_err(err)?;
    ensure(k == 5.0 / 3.0, || format!("K(C major) = {k}"))?;
    let elapsed = t0.elapsed().as_secs_f64();
    ensure(elapsed < 1.0, || format!("took {elapsed:.2} s"))?;
    Ok(format!("24 triads, {pairs} triad pairs, K(C)=5/3, {:.0} ms", elapsed * 1e3))
}

fn held_segment(beats: &[(Vec<u8>, Vec<u8>)]) -> Segment {
    // each beat: four melody pitches, one per sixteenth, over a chord
    let melody: Vec<PitchToken> = beats.iter().flat_map(|(m, _)| m.iter().map(|&p| PitchToken::Pitch(p))).collect();
    let chords: Vec<Chord> = beats.iter().map(|(_, c)| Chord::new(c.iter().copied()).unwrap()).collect();
    Segment::new(MelodyGrid::new(melody).unwrap(), HarmonySeq::new(chords), Tonality::major(0), TimeSignature::FourFour).unwrap()
}

fn metric_oracles() -> Outcome {
    for k in 1..=8usize {
        let distinct: Vec<Chord> = (0..k as u8).map(|r| voice_triad(Tonality::major(r).triad_pcs(0), 48)).collect();
        let chords: Vec<Chord> = (0..3).flat_map(|_| distinct.iter().cloned()).collect();
        let h = chord_histogram_entropy(&HarmonySeq::new(chords));
        ensure((h - (k as f64).ln()).abs() < 1e-9, || format!("CHE of {k} uniform chords = {h}"))?;
    }
    let constant = chord_histogram_entropy(&HarmonySeq::new(vec![Chord::new([48, 52, 55]).unwrap(); 16]));
    ensure(constant == 0.0, || format!("CHE(constant) = {constant}"))?;

    // melody pitch classes spread exactly like the chord's
    let shapes: [(Vec<u8>, Vec<u8>); 4] = [
        (vec![60, 64, 67, 71], vec![48, 52, 55, 59]),
        (vec![62, 62, 69, 69], vec![50, 57]),
        (vec![65, 65, 65, 65], vec![53]),
        (vec![72, 67, 76, 71], vec![43, 47, 52, 60]),
    ];
    let beats: Vec<(Vec<u8>, Vec<u8>)> = (0..16).map(|i| shapes[i % 4].clone()).collect();
    let d = mctd(&held_segment(&beats));
    ensure(d.defined && d.value.abs() < 1e-12, || format!("MCTD of coinciding distributions = {}", d.value))?;

    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    runner
        .run(&(any::<u64>(), any::<u64>()), |(sa, sb)| {
            let a = random_segment_any(&mut ChaCha8Rng::seed_from_u64(sa));
            let b = random_segment_any(&mut ChaCha8Rng::seed_from_u64(sb));
            for (name, f) in [("PCC", pcc as fn(&Segment, &Segment) -> f64), ("CEC", cec), ("MCTC", mctc)] {
                prop_assert_eq!(f(&a, &b), f(&b, &a), "{} not symmetric", name);
                prop_assert_eq!(f(&a, &a), 0.0, "{}(a,a) != 0", name);
            }
            Ok(())
        })
        .map_err(err)?;
    Ok("CHE = ln k for k = 1..8, CHE(const) = 0, MCTD = 0, symmetry over 1000 random pairs".into())
}

fn fusion_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let prev = EmotionVA::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
        let target = EmotionVA::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
        let fused = fuse_median(&EmotionSeq::new(vec![prev]), &EmotionSeq::new(vec![target])).map_err(err)?.points[0];
        let dev = (fused.distance(&target) - 0.5 * prev.distance(&target)).abs();
        worst = worst.max(dev);
        ensure(dev <= 1e-12, || format!("median fusion off by {dev:e} for {prev:?} {target:?}"))?;
    }
    for n in 1..=50 {
        let label = EmotionSeq::new((0..16).map(|_| EmotionVA::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))).collect());
        let recog = EmotionSeq::new((0..16).map(|_| EmotionVA::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))).collect());
        let at0 = blend_emotion(&label, &recog, BlendSchedule::new(0, n).map_err(err)?).map_err(err)?;
        let at1 = blend_emotion(&label, &recog, BlendSchedule::new(n, n).map_err(err)?).map_err(err)?;
        ensure(at0 == label && at1 == recog, || format!("blend boundaries not exact for n = {n}"))?;
    }
    Ok(format!("10^4 pairs, max deviation {worst:.1e}; alpha 0 and 1 exact"))
}

fn anchor_preservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let models = Arc::new(Models::untrained().map_err(err)?);
    let config = SessionConfig { granularity: Granularity::Beat, ..Default::default() };
    let mut min_sim = f64::INFINITY;
    let mut total_sim = 0.0;
    let mut steps = 0;
    let mut below = 0;
    for i in 0..500 {
        let tonality = random_tonality(&mut rng);
        let ts = random_ts(&mut rng);
        let segments = rng.gen_range(1..=3);
        let song = random_song(&mut rng, tonality, ts, segments, 120.0);
        let trajectory: Vec<EmotionVA> =
            (0..segments).map(|_| EmotionVA::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))).collect();
        let run = run_offline(&song, &trajectory, config, models.clone()).map_err(err)?;
        let original = song.segments().map_err(err)?;
        for (orig, step) in original.iter().zip(&run.steps) {
            let want = downsample(&orig.melody, Granularity::Beat, ts);
            let got = downsample(&step.segment.melody, Granularity::Beat, ts);
            ensure(want == got, || format!("song {i} bar {}: anchors changed", step.bar_index))?;
            steps += 1;
        }
        let arranged: Vec<Segment> = run.steps.iter().map(|s| s.segment.clone()).collect();
        let sim = similarity(&original, &arranged).map_err(err)?;
        min_sim = min_sim.min(sim);
        total_sim += sim;
        below += usize::from(sim < 6.0);
    }
    // corpus mean, the statistic the published table reports
    let mean = total_sim / 500.0;
    ensure(mean >= 6.0, || format!("mean similarity {mean:.3} < 6.0"))?;
    Ok(format!("500 songs, {steps} steps, anchors kept; similarity mean {mean:.2}, min {min_sim:.2}, {below} songs below 6.0"))
}

fn recognizer_learning() -> Outcome {
    let t0 = Instant::now();
    let pieces = labeled_corpus(&mut ChaCha8Rng::seed_from_u64(1), 2400, 0.1);
    let cfg = RecognizerConfig::default();
    let examples = build_examples(&pieces, &cfg).map_err(err)?;
    let (train, test) = examples.split_at(2000);
    let test: Vec<&Example> = test.iter().collect();
    let (rec, _) = train_examples(train, &cfg).map_err(err)?;
    let minutes = t0.elapsed().as_secs_f64() / 60.0;
    let ours = rmse(&rec, &test).map_err(err)?;
    let base = rmse(&MeanPredictor::fit(train).map_err(err)?, &test).map_err(err)?;
    let gain = 1.0 - ours / base;
    ensure(gain >= 0.2, || format!("RMSE {ours:.4} vs mean {base:.4}: only {:.1}% better", gain * 100.0))?;
    ensure(minutes < 10.0, || format!("training took {minutes:.1} min"))?;
    let rel = gradient_check(&rec, &test[..8], 40, 1e-5, 7).map_err(err)?;
    ensure(rel <= 1e-4, || format!("gradient check relative error {rel:e}"))?;
    Ok(format!(
        "RMSE {ours:.4} vs mean predictor {base:.4} ({:.0}% better) in {:.1} min; gradient rel error {rel:.1e}",
        gain * 100.0,
        minutes
    ))
}

fn semi_supervised() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let labeled = labeled_corpus(&mut rng, 96, 0.05);
    let mut unlabeled = labeled_corpus(&mut rng, 48, 0.05);
    unlabeled.iter_mut().for_each(|p| p.emotion = None);
    let base = SemiConfig {
        recognizer: RecognizerConfig { hidden: 32, lr: 3e-3, batch_size: 16, max_epochs: 300, ..Default::default() },
        phase1_epochs: 4,
        phase2_epochs: 4,
        ..Default::default()
    };
    let (_, _, coupled) = train_semi_supervised(&labeled, &unlabeled, &base).map_err(err)?;
    let frozen_cfg = SemiConfig { freeze_recognizer: true, ..base };
    let (_, _, frozen) = train_semi_supervised(&labeled, &unlabeled, &frozen_cfg).map_err(err)?;
    for r in [&coupled, &frozen] {
        ensure(r.phase2_recog_loss_evals == 0, || format!("{} L_recog evaluations in phase 2", r.phase2_recog_loss_evals))?;
    }
    ensure(coupled.final_gen_loss <= frozen.final_gen_loss, || {
        format!("coupled L_gen {:.5} > frozen {:.5}", coupled.final_gen_loss, frozen.final_gen_loss)
    })?;
    Ok(format!(
        "L_gen coupled {:.5} <= frozen {:.5}; 0 L_recog evaluations in phase 2",
        coupled.final_gen_loss, frozen.final_gen_loss
    ))
}

fn song_60(seed: u64) -> Song {
    random_song(&mut ChaCha8Rng::seed_from_u64(seed), Tonality::major(7), TimeSignature::FourFour, 15, 120.0)
}

fn trajectory(seed: u64, n: usize) -> Vec<EmotionVA> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| EmotionVA::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))).collect()
}

fn realtime_budget() -> Outcome {
    // full-size recognizer, rule-based generation
    let models = Arc::new(Models::untrained().map_err(err)?);
    let song = song_60(8);
    let mut session = Session::open(song, SessionConfig::default(), models).map_err(err)?;
    let mut worst: f64 = 0.0;
    for t in trajectory(8, 15) {
        let t0 = Instant::now();
        session.step(t).map_err(err)?;
        worst = worst.max(t0.elapsed().as_secs_f64());
    }
    ensure(worst < 8.0, || format!("slowest step {worst:.3} s"))?;
    Ok(format!("15 steps, slowest {:.1} ms", worst * 1e3))
}

fn determinism() -> Outcome {
    let song = song_60(60);
    let traj = trajectory(60, 15);
    let run = || run_offline(&song, &traj, SessionConfig::default(), Arc::new(Models::untrained().unwrap())).map_err(err);
    let (a, b) = (run()?, run()?);
    ensure(a.steps.len() == 15, || format!("{} steps", a.steps.len()))?;
    ensure(a.midi == b.midi, || "MIDI differs".into())?;
    let ja = serde_json::to_string(&a.report).map_err(err)?;
    let jb = serde_json::to_string(&b.report).map_err(err)?;
    ensure(ja == jb && a.report == b.report, || "metric reports differ".into())?;
    Ok(format!("15 steps, {} MIDI bytes and metric reports identical", a.midi.len()))
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn send(ws: &mut Ws, text: String) {
    ws.send(Message::Text(text)).await.unwrap();
}

async fn recv(ws: &mut Ws) -> ServerFrame {
    loop {
        match ws.next().await.expect("connection open").expect("frame") {
            Message::Text(t) => return serde_json::from_str(&t).expect("schema-valid frame"),
            _ => continue,
        }
    }
}

fn target(e: EmotionVA) -> String {
    serde_json::to_string(&ClientFrame::Target { v: e.valence(), a: e.arousal() }).unwrap()
}

/// Plays a whole song; returns the notes of each segment and the frames after the last segment.
async fn play(ws: &mut Ws, select: ClientFrame, traj: &[EmotionVA]) -> (Vec<ServerFrame>, Vec<ServerFrame>) {
    send(ws, "{\"type\":\"target\",\"v\":0}".into()).await;
    assert!(matches!(recv(ws).await, ServerFrame::Error { .. }), "malformed frame before select");
    send(ws, serde_json::to_string(&select).unwrap()).await;
    let mut segments = Vec::new();
    for (i, &t) in traj.iter().enumerate() {
        if i == 7 {
            send(ws, "{not json".into()).await;
            assert!(matches!(recv(ws).await, ServerFrame::Error { .. }), "malformed frame mid-song");
        }
        send(ws, target(t)).await;
        let f = recv(ws).await;
        assert!(matches!(f, ServerFrame::Segment { .. }), "expected a segment, got {f:?}");
        segments.push(f);
    }
    let mut tail = vec![recv(ws).await, recv(ws).await];
    send(ws, target(traj[0])).await;
    tail.push(recv(ws).await);
    (segments, tail)
}

fn protocol() -> Outcome {
    let song_a = song_60(31);
    let song_b = song_60(32);
    let traj_a = trajectory(31, 15);
    let traj_b = trajectory(32, 15);
    let models = Arc::new(Models::untrained().map_err(err)?);
    let state = Arc::new(ServerState {
        songs: BTreeMap::from([("a".to_owned(), song_a.clone())]),
        models: models.clone(),
        config: SessionConfig::default(),
    });
    let rt = tokio::runtime::Runtime::new().map_err(err)?;
    let (got_a, got_b) = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let url = format!("ws://{}", listener.local_addr().unwrap());
        tokio::spawn(serve_listener(listener, state));
        let (mut wa, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
        let (mut wb, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
        let upload = base64::engine::general_purpose::STANDARD.encode(song_b.to_midi());
        let sel_a = ClientFrame::SelectSong { id: Some("a".into()), midi: None };
        let sel_b = ClientFrame::SelectSong { id: None, midi: Some(upload) };
        tokio::join!(play(&mut wa, sel_a, &traj_a), play(&mut wb, sel_b, &traj_b))
    });

    for (name, (segments, tail), song, traj) in [("a", got_a, &song_a, &traj_a), ("b", got_b, &song_b, &traj_b)] {
        ensure(segments.len() == 15, || format!("session {name}: {} segments", segments.len()))?;
        ensure(matches!(tail[0], ServerFrame::EndOfSong {}), || format!("session {name}: got {:?} after 15 segments", tail[0]))?;
        ensure(matches!(tail[1], ServerFrame::Metrics { steps: 15, .. }), || format!("session {name}: no metrics frame"))?;
        ensure(matches!(tail[2], ServerFrame::EndOfSong {}), || format!("session {name}: target after the end"))?;
        // each session matches an isolated offline run of its own song and targets
        let uploaded = match name {
            "b" => match emoarrange::pipeline::ingest_midi(&song.to_midi()).map_err(err)? {
                emoarrange::pipeline::Ingested::Song { song, .. } => song,
                other => return Err(format!("upload rejected: {other:?}")),
            },
            _ => song.clone(),
        };
        let offline = run_offline(&uploaded, traj, SessionConfig::default(), models.clone()).map_err(err)?;
        for (frame, step) in segments.iter().zip(&offline.steps) {
            let ServerFrame::Segment { bar_index, notes, .. } = frame else { unreachable!() };
            let ServerFrame::Segment { notes: want, .. } = ServerFrame::segment(step, &uploaded) else { unreachable!() };
            ensure(*bar_index == step.bar_index && *notes == want, || format!("session {name} bar {bar_index} differs from offline run"))?;
        }
    }
    Ok("2 concurrent sessions: 15 segments then end_of_song each, malformed frames answered with errors, outputs isolated".into())
}

#[test]
fn primary_criteria() {
    let criteria: [Criterion; 10] = [
        ("table-ii-overall", table_ii),
        ("harmonic-color", harmonic_color_suite),
        ("metric-oracles", metric_oracles),
        ("fusion-contract", fusion_contract),
        ("anchor-preservation", anchor_preservation),
        ("recognizer-learning", recognizer_learning),
        ("semi-supervised-coupling", semi_supervised),
        ("realtime-budget", realtime_budget),
        ("determinism", determinism),
        ("protocol", protocol),
    ];
    let mut failed = Vec::new();
    writeln!(std::io::stdout()).unwrap();
    for (name, check) in criteria {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = t0.elapsed().as_secs_f64();
        // straight to stdout so the lines survive output capture
        let mut out = std::io::stdout().lock();
        match &outcome {
            Ok(detail) => writeln!(out, "PASS {name:<26} {detail} [{secs:.1} s]").unwrap(),
            Err(why) => {
                writeln!(out, "FAIL {name:<26} {why} [{secs:.1} s]").unwrap();
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
