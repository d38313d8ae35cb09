//! Drive the tiny model to a near-perfect fit of eight synthetic pairs.

use changevit::experiments::{overfit, OverfitConfig};

fn main() -> changevit::Result<()> {
    let cfg = OverfitConfig::default();
    let out = overfit(&cfg)?;
    for row in out.log.rows.iter().filter(|r| r.val.is_some()) {
        let v = row.val.as_ref().expect("filtered");
        println!("iter {:>4} loss {:.4} f1 {:.4} iou {:.4}", row.iter + 1, row.total, v.f1, v.iou);
    }
    println!(
        "{} iterations in {:.1?}: f1 {:.4}, iou {:.4}",
        out.iterations, out.elapsed, out.report.f1, out.report.iou
    );
    Ok(())
}
