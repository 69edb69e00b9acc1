use std::ops::Range;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Softmax across the selected channels at every spatial site.
    ChannelSoftmax,
}

fn check_range<T: Scalar>(input: &Tensor<T>, kind: Activation, range: &Range<usize>) -> Result<()> {
    let channels = input.shape().channels;
    if range.start > range.end || range.end > channels {
        return Err(Error::InvalidArgument(format!(
            "channel range {range:?} out of bounds for {} channels",
            channels
        )));
    }
    if kind == Activation::ChannelSoftmax && range.is_empty() {
        return Err(Error::InvalidArgument(
            "channel_softmax needs a non-empty channel range".into(),
        ));
    }
    Ok(())
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Applies `kind` to the channels in `range`; other channels pass through.
pub fn activation<T: Scalar>(
    input: &Tensor<T>,
    kind: Activation,
    range: Range<usize>,
) -> Result<Tensor<T>> {
    check_range(input, kind, &range)?;
    let mut out = input.clone();
    out.clear_grad();
    let shape = input.shape();
    let plane = shape.plane();
    for b in 0..shape.batch {
        match kind {
            Activation::Relu | Activation::Sigmoid => {
                for c in range.clone() {
                    for v in out.plane_mut(b, c) {
                        *v = match kind {
                            Activation::Relu => v.max(T::zero()),
                            _ => sigmoid(*v),
                        };
                    }
                }
            }
            Activation::ChannelSoftmax => {
                let item = out.item_mut(b);
                for site in 0..plane {
                    let mut max = T::neg_infinity();
                    for c in range.clone() {
                        max = max.max(item[c * plane + site]);
                    }
                    let mut total = T::zero();
                    for c in range.clone() {
                        let e = (item[c * plane + site] - max).exp();
                        item[c * plane + site] = e;
                        total += e;
                    }
                    for c in range.clone() {
                        item[c * plane + site] = item[c * plane + site] / total;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of [`activation`] at `input`.
pub fn activation_grad<T: Scalar>(
    input: &Tensor<T>,
    kind: Activation,
    range: Range<usize>,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_range(input, kind, &range)?;
    if upstream.shape() != input.shape() {
        return Err(Error::shape("activation_grad", input.shape(), upstream.shape()));
    }
    let shape = input.shape();
    let plane = shape.plane();
    let mut grad = upstream.clone();
    grad.clear_grad();
    match kind {
        Activation::Relu => {
            for b in 0..shape.batch {
                for c in range.clone() {
                    let x = input.plane(b, c);
                    for (g, &xv) in grad.plane_mut(b, c).iter_mut().zip(x) {
                        if xv <= T::zero() {
                            *g = T::zero();
                        }
                    }
                }
            }
        }
        Activation::Sigmoid => {
            for b in 0..shape.batch {
                for c in range.clone() {
                    let x = input.plane(b, c);
                    for (g, &xv) in grad.plane_mut(b, c).iter_mut().zip(x) {
                        let s = sigmoid(xv);
                        *g = *g * s * (T::one() - s);
                    }
                }
            }
        }
        Activation::ChannelSoftmax => {
            let probs = activation(input, kind, range.clone())?;
            for b in 0..shape.batch {
                let p = probs.item(b);
                let u = upstream.item(b);
                let g = grad.item_mut(b);
                for site in 0..plane {
                    let mut dot = T::zero();
                    for c in range.clone() {
                        dot += p[c * plane + site] * u[c * plane + site];
                    }
                    for c in range.clone() {
                        let i = c * plane + site;
                        g[i] = p[i] * (u[i] - dot);
                    }
                }
            }
        }
    }
    Ok(grad)
}
