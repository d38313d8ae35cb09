//! Detail-only vs ViT-only models on a synthetic change-size ladder,
//! scored per change-size bucket.
//!
//! cargo run --release --example size_stratified -- [seeds]

use changevit::experiments::{size_ladder, LadderConfig};

fn main() -> changevit::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let cfg = LadderConfig::default();
    let mut wins = (0, 0);
    let stdout = std::io::stdout();
    for seed in 0..seeds {
        let out = size_ladder(&cfg, seed)?;
        out.write_csv(stdout.lock(), seed == 0)?;
        eprintln!(
            "seed {seed}: detail {:.0?}, vit {:.0?}; detail wins smallest bucket: {}, vit wins largest: {}",
            out.detail_time,
            out.vit_time,
            out.detail_wins_small(),
            out.vit_wins_large()
        );
        wins.0 += usize::from(out.detail_wins_small());
        wins.1 += usize::from(out.vit_wins_large());
    }
    eprintln!("detail wins bucket 1 in {}/{seeds} seeds, vit wins bucket 5 in {}/{seeds}", wins.0, wins.1);
    Ok(())
}
