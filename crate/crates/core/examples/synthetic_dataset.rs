//! Generate a synthetic change-detection split on disk and read it back
//! through the manifest loader.
//!
//! cargo run --release --example synthetic_dataset -- [out_dir]

use changevit::data::{augment, augment_rng, batch_iter, load_dataset, synth_generate, write_sample, AugmentConfig, Split, SynthSpec};

fn main() -> changevit::Result<()> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("cvit_synth"));
    let spec = SynthSpec { objects: 5, size_range: (0.001, 0.2), ..SynthSpec::default() };
    let samples = synth_generate(&spec, 12, 42)?;
    for s in &samples {
        write_sample(&out.join("train"), s)?;
        println!("{}: {:.2}% changed", s.id, 100.0 * s.change_ratio());
    }

    let manifest = load_dataset(&out, Split::Train)?;
    println!("{} pairs under {}", manifest.len(), out.display());
    for batch in batch_iter(&manifest, 5, Some(0), 0)? {
        let b = batch?;
        println!("batch {:?} images {:?} masks {:?}", b.ids, b.img_a.shape(), b.mask.shape());
    }

    let first = manifest.load(0)?;
    let aug = augment(&first, &AugmentConfig::default(), &mut augment_rng(0, 0, &first.id));
    println!("augmented copy keeps {}x{} and {} changed pixels -> {}", aug.height(), aug.width(), first.mask.ones(), aug.mask.ones());
    Ok(())
}
