use cvit_tensor::{Element, Var};

use crate::error::{Error, Result};
use crate::nn::layers::{BatchNorm, Conv};
use crate::params::{Bound, ParamBuilder};

/// ResNet basic block: `relu(skip(x) + bn2(conv2(relu(bn1(conv1(x))))))`.
///
/// The skip path is a strided 1x1 conv + norm when the stride or channel
/// count changes, identity otherwise. Convolutions feeding a norm carry no
/// bias.
#[derive(Clone, Debug)]
pub struct ResBlockParams {
    pub conv1: Conv,
    pub norm1: BatchNorm,
    pub conv2: Conv,
    pub norm2: BatchNorm,
    pub proj: Option<(Conv, BatchNorm)>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl ResBlockParams {
    pub fn new<T: Element>(
        b: &mut ParamBuilder<T>,
        name: &str,
        input: usize,
        output: usize,
        stride: usize,
        std: f64,
    ) -> Result<Self> {
        if stride != 1 && stride != 2 {
            return Err(Error::Config(format!("residual block stride must be 1 or 2, got {stride}")));
        }
        let proj = (stride != 1 || input != output).then(|| {
            (
                Conv::new(b, &format!("{name}.proj"), input, output, 1, stride, 0, false, std),
                BatchNorm::new(b, &format!("{name}.proj_norm"), output),
            )
        });
        Ok(ResBlockParams {
            conv1: Conv::new(b, &format!("{name}.conv1"), input, output, 3, stride, 1, false, std),
            norm1: BatchNorm::new(b, &format!("{name}.norm1"), output),
            conv2: Conv::new(b, &format!("{name}.conv2"), output, output, 3, 1, 1, false, std),
            norm2: BatchNorm::new(b, &format!("{name}.norm2"), output),
            proj,
            in_channels: input,
            out_channels: output,
            stride,
        })
    }

    pub fn forward<'g, T: Element>(&self, x: Var<'g, T>, ps: &Bound<'g, T>) -> Result<Var<'g, T>> {
        let c = x.shape().get(1).copied().unwrap_or(0);
        if c != self.in_channels {
            return Err(Error::Config(format!(
                "residual block expects {} channels, got {c}",
                self.in_channels
            )));
        }
        let h = self.norm1.forward(self.conv1.forward(x, ps)?, ps)?.relu()?;
        let h = self.norm2.forward(self.conv2.forward(h, ps)?, ps)?;
        let skip = match &self.proj {
            Some((conv, norm)) => norm.forward(conv.forward(x, ps)?, ps)?,
            None => x,
        };
        Ok(skip.add(h)?.relu()?)
    }
}
