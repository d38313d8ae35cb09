//! Walk one image pair through the model and print every intermediate shape
//! and the parameter count of each component.
//!
//! cargo run --release --example architecture_tour -- [tiny|vit_t|vit_s]

use changevit::{ChangeVit, ModelConfig};
use cvit_tensor::{Graph, Tensor};

fn main() -> changevit::Result<()> {
    let preset = std::env::args().nth(1).unwrap_or_else(|| "tiny".into());
    let cfg = ModelConfig::preset(&preset)?;
    let model = ChangeVit::<f32>::new(cfg.clone(), 0)?;
    let p = model.params();
    println!("{preset}: {} parameters", p.count());
    for prefix in ["vit.", "detail.", "injector.", "decoder."] {
        println!("  {prefix:<10} {:>10}", p.count_prefix(prefix));
    }

    let s = cfg.image_size;
    let img = |v: f32| Tensor::full(vec![1, 3, s, s], v);
    let g = Graph::inference();
    let ps = p.bind(&g);
    let t = model.forward_trace(g.constant(img(0.2)), g.constant(img(0.6)), &ps)?;
    let ph = &t.phases[0];
    if let Some(f) = ph.f_v {
        println!("F_V  (ViT tokens)         {:?}", f.shape());
    }
    if let Some(fc) = &ph.f_c {
        for (k, f) in fc.iter().enumerate() {
            println!("F_C{} (detail 1/{})        {:?}", k + 1, 2 << k, f.shape());
        }
    }
    if let Some(f) = ph.f_ve {
        println!("F_VE (injected tokens)    {:?}", f.shape());
    }
    let scale = ["1/16", "1/8", "1/4", "1/2"];
    for (lvl, f) in t.f_d.iter().enumerate() {
        if let Some(f) = f {
            println!("F_D at {:<5}              {:?}", scale[lvl], f.shape());
        }
    }
    println!("P                         {:?}", t.prob.shape());
    Ok(())
}
