//! Loss values on hand-made probability maps, then confusion-based scores.

use changevit::data::Mask;
use changevit::loss::total_loss;
use changevit::metrics::{confusion, metrics};
use cvit_tensor::{Graph, Tensor};

fn main() -> changevit::Result<()> {
    let truth = [0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0];
    let y = Tensor::<f64>::from_f64([1, 1, 2, 4], &truth)?;
    for (name, p) in [
        ("confident and right", [0.05, 0.1, 0.9, 0.95, 0.02, 0.8, 0.1, 0.05]),
        ("unsure", [0.5; 8]),
        ("confident and wrong", [0.9, 0.95, 0.1, 0.05, 0.9, 0.2, 0.9, 0.95]),
    ] {
        let g = Graph::new();
        let t = total_loss(g.param(Tensor::from_f64([1, 1, 2, 4], &p)?), &y)?;
        println!("{name:<20} bce {:.4} dice {:.4} total {:.4}", t.bce.value().item()?, t.dice.value().item()?, t.total.value().item()?);
    }

    let truth = Mask::new(2, 4, truth.iter().map(|&v| v as u8).collect())?;
    let pred = Mask::threshold(2, 4, &[0.1f32, 0.7, 0.9, 0.4, 0.0, 0.8, 0.0, 0.0], 0.5)?;
    let c = confusion(&pred, &truth)?;
    let r = metrics(&c)?;
    println!("tp {} fp {} fn {} tn {}", c.tp, c.fp, c.fn_, c.tn);
    println!("precision {:.3} recall {:.3} f1 {:.3} iou {:.3} oa {:.3}", r.precision, r.recall, r.f1, r.iou, r.oa);

    let empty = metrics(&confusion(&Mask::zeros(2, 4), &Mask::zeros(2, 4))?)?;
    println!("nothing to find: f1 {} (degenerate: {:?})", empty.f1, empty.degenerate);
    Ok(())
}
