use crate::error::Result;
use crate::tensor::{Float, Tensor};

pub fn relu_forward<T: Float>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad_out` where `input > 0`; the subgradient at exactly zero is 0.
pub fn relu_backward<T: Float>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(grad_out, |x, g| if x > T::zero() { g } else { T::zero() })
}
