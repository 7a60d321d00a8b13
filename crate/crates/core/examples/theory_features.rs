//! The four theory features of each segment of the demo song.

use emoarrange::features::{features, FormCache, FormConfig, FEATURE_WIDTH};
use emoarrange::synth::demo_song;

fn main() -> emoarrange::Result<()> {
    let song = demo_song();
    let mut cache = FormCache::new();
    let cfg = FormConfig::default();
    for (i, seg) in song.segments()?.iter().enumerate() {
        let f = features(seg, &mut cache, &cfg);
        let hc: Vec<String> = f.harmonic_color.iter().map(|x| format!("{x:.2}")).collect();
        println!("segment {i} (bars {}-{})", i * 4, i * 4 + 3);
        println!("  harmonic color  [{}]", hc.join(" "));
        println!(
            "  contour         melody max {} trend {:+} concavity {:.2}; bass min {} trend {:+}",
            f.contour.melody_max, f.contour.melody_trend, f.contour.melody_concavity, f.contour.chord_min, f.contour.chord_trend
        );
        println!(
            "  form            melody rep {}@{} chord rep {}@{} tonality {} zone {} rhythm diff {}",
            f.form.melody_rep.sign,
            f.form.melody_rep.interval,
            f.form.chord_rep.sign,
            f.form.chord_rep.interval,
            f.form.tonality_transform,
            f.form.zone_transform,
            f.form.rhythm_difference
        );
        println!("  rhythm          {} runs over {} sixteenths", f.rhythm.entries.len(), f.rhythm.total());
        assert_eq!(f.flatten().len(), FEATURE_WIDTH);
    }
    Ok(())
}
