use crate::error::Result;
use crate::numerics::{Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Masks `grad` where `x <= 0`; the derivative at exactly zero is taken as 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    grad.expect_shape("relu grad", x.shape())?;
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Backward of `y = tanh(x)` expressed through the forward output `y`.
pub fn tanh_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    grad.expect_shape("tanh grad", y.shape())?;
    let data = y
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&yv, &g)| g * (T::one() - yv * yv))
        .collect();
    Tensor::from_vec(y.shape(), data)
}
