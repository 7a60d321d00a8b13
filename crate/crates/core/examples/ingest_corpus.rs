//! Writes a few synthetic songs as MIDI files with a label CSV, then ingests the directory.

use std::collections::HashMap;
use std::fmt::Write as _;

use emoarrange::model::TimeSignature;
use emoarrange::pipeline::{ingest_dir, read_label_csv, read_pieces, write_pieces};
use emoarrange::synth::{random_song, random_tonality, synthetic_emotion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> emoarrange::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut csv = String::from("file,time,kind,a,b,c,label\n");
    for i in 0..6 {
        let tonality = random_tonality(&mut rng);
        let song = random_song(&mut rng, tonality, TimeSignature::FourFour, 4, 96.0);
        let name = format!("song{i}.mid");
        std::fs::write(dir.path().join(&name), song.to_midi())?;
        if i % 3 != 2 {
            let e = synthetic_emotion(tonality, &song.melody);
            writeln!(csv, "{name},0,va,{},{},,", e.valence(), e.arousal()).unwrap();
        }
    }
    std::fs::write(dir.path().join("broken.mid"), b"MThd nope")?;

    let labels: HashMap<_, _> = read_label_csv(csv.as_bytes())?;
    let summary = ingest_dir(dir.path(), &labels)?;
    println!("{} songs -> {} pieces", summary.songs, summary.pieces.len());
    for (path, why) in &summary.rejected {
        println!("rejected {}: {why}", path.file_name().unwrap().to_string_lossy());
    }

    let out = dir.path().join("pieces.jsonl");
    write_pieces(&out, &summary.pieces)?;
    let (back, skipped) = read_pieces(&out)?;
    let labeled = back.iter().filter(|p| p.emotion.is_some()).count();
    println!("read back {} pieces ({labeled} labeled, {skipped} skipped)", back.len());
    Ok(())
}
