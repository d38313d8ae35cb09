//! Training objective: base-2 binary cross-entropy plus Dice.

use cvit_tensor::{Element, Tensor, TensorError, Var};

pub const PROB_CLAMP: f64 = 1e-7;
pub const DICE_SMOOTH: f64 = 1e-5;

fn check<T: Element>(op: &'static str, p: &Var<'_, T>, y: &Tensor<T>) -> cvit_tensor::Result<()> {
    if p.shape() != y.shape() {
        return Err(TensorError::dim(op, format!("prediction {:?} vs target {:?}", p.shape(), y.shape())));
    }
    Ok(())
}

/// `-mean(Y log2 P + (1 - Y) log2 (1 - P))` with `P` clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss<'g, T: Element>(p: Var<'g, T>, y: &Tensor<T>) -> cvit_tensor::Result<Var<'g, T>> {
    check("bce_loss", &p, y)?;
    let g = p.graph();
    let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let not_y = Tensor::from_fn(y.shape(), |i| T::of(1.0) - y.data()[i]);
    let pos = pc.log2()?.mul(g.constant(y.clone()))?;
    let neg = pc.affine(-1.0, 1.0)?.log2()?.mul(g.constant(not_y))?;
    pos.add(neg)?.mean()?.scale(-1.0)
}

/// `1 - (2 sum(PY) + eps) / (sum(P^2) + sum(Y^2) + eps)` over the whole batch.
pub fn dice_loss<'g, T: Element>(p: Var<'g, T>, y: &Tensor<T>) -> cvit_tensor::Result<Var<'g, T>> {
    check("dice_loss", &p, y)?;
    let g = p.graph();
    let yy: f64 = y.data().iter().map(|&v| Element::to_f64(v) * Element::to_f64(v)).sum();
    let inter = p.mul(g.constant(y.clone()))?.sum()?.affine(2.0, DICE_SMOOTH)?;
    let denom = p.square()?.sum()?.affine(1.0, yy + DICE_SMOOTH)?;
    inter.div(denom)?.affine(-1.0, 1.0)
}

pub struct LossTerms<'g, T: Element> {
    pub bce: Var<'g, T>,
    pub dice: Var<'g, T>,
    pub total: Var<'g, T>,
}

pub fn total_loss<'g, T: Element>(p: Var<'g, T>, y: &Tensor<T>) -> cvit_tensor::Result<LossTerms<'g, T>> {
    let bce = bce_loss(p, y)?;
    let dice = dice_loss(p, y)?;
    let total = bce.add(dice)?;
    Ok(LossTerms { bce, dice, total })
}
