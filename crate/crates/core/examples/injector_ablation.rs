//! Both injector query directions on the overfit task; writes a comparison CSV.
//!
//! cargo run --release --example injector_ablation -- [out.csv]

use changevit::experiments::{injector_ablation, write_ablation_csv, OverfitConfig};

fn main() -> changevit::Result<()> {
    let rows = injector_ablation(&OverfitConfig::default())?;
    write_ablation_csv(&rows, std::io::stdout().lock())?;
    if let Some(path) = std::env::args().nth(1) {
        write_ablation_csv(&rows, std::fs::File::create(path)?)?;
    }
    Ok(())
}
