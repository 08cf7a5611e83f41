use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{gemm, MatRef, Scalar, Tensor};

/// Fully connected layer, `y = W·x + b` with `W` stored `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FcLayer<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> FcLayer<T> {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        FcLayer {
            weight: Tensor::zeros(&[out_features, in_features]),
            bias: Tensor::zeros(&[out_features]),
        }
    }

    /// Uniform in `±1/sqrt(in)` for weights and bias.
    pub fn random<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Self::uniform(
            in_features,
            out_features,
            1.0 / (in_features as f64).sqrt(),
            rng,
        )
    }

    /// Weights and biases drawn from `U(−bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(
        in_features: usize,
        out_features: usize,
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(in_features, out_features);
        for w in layer.weight.data_mut() {
            *w = T::from_f64_lossy(rng.random_range(-bound..bound));
        }
        for b in layer.bias.data_mut() {
            *b = T::from_f64_lossy(rng.random_range(-bound..bound));
        }
        layer
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let [out, _] = weight.shape()[..] else {
            return Err(Error::invalid(format!(
                "fc weight must be rank 2, got {:?}",
                weight.shape()
            )));
        };
        bias.expect_shape("fc bias", &[out])?;
        Ok(FcLayer { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn cast<U: Scalar>(&self) -> FcLayer<U> {
        FcLayer {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }

    fn batch_rows(&self, x: &Tensor<T>) -> Result<usize> {
        let inf = self.in_features();
        match x.shape()[..] {
            [n] if n == inf => Ok(1),
            [rows, n] if n == inf => Ok(rows),
            _ => Err(Error::shape("fc input", &[inf], x.shape())),
        }
    }

    /// Applies the layer to a single vector `[in]` or a batch `[N, in]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let rows = self.batch_rows(x)?;
        let mut y = vec![T::zero(); rows * self.out_features()];
        self.forward_into(x.data(), rows, &mut y);
        let shape: Vec<usize> = if x.ndim() == 1 {
            vec![self.out_features()]
        } else {
            vec![rows, self.out_features()]
        };
        Tensor::from_vec(&shape, y)
    }

    /// Raw batched forward on row-major `[rows, in]` input into `[rows, out]`.
    pub(crate) fn forward_into(&self, x: &[T], rows: usize, y: &mut [T]) {
        let out = self.out_features();
        for row in y.chunks_exact_mut(out).take(rows) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(
            MatRef::new(x, rows, self.in_features()),
            MatRef::new(self.weight.data(), out, self.in_features()).t(),
            y,
            true,
        );
    }

    /// Backward pass. Accumulates `∂L/∂W`, `∂L/∂b` into `grads` and returns `∂L/∂x`.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        grads: &mut FcLayer<T>,
    ) -> Result<Tensor<T>> {
        let rows = self.batch_rows(x)?;
        if grad_out.len() != rows * self.out_features() {
            return Err(Error::shape(
                "fc grad_out",
                &[rows, self.out_features()],
                grad_out.shape(),
            ));
        }
        grads.weight.expect_shape("fc grads", self.weight.shape())?;
        let mut dx = vec![T::zero(); rows * self.in_features()];
        self.backward_into(x.data(), grad_out.data(), rows, grads, Some(&mut dx));
        Tensor::from_vec(x.shape(), dx)
    }

    pub(crate) fn backward_into(
        &self,
        x: &[T],
        grad_out: &[T],
        rows: usize,
        grads: &mut FcLayer<T>,
        dx: Option<&mut [T]>,
    ) {
        let (inf, out) = (self.in_features(), self.out_features());
        // dW += dYᵀ·X
        gemm(
            MatRef::new(grad_out, rows, out).t(),
            MatRef::new(x, rows, inf),
            grads.weight.data_mut(),
            true,
        );
        let db = grads.bias.data_mut();
        for row in grad_out.chunks_exact(out).take(rows) {
            for (b, &g) in db.iter_mut().zip(row) {
                *b = *b + g;
            }
        }
        if let Some(dx) = dx {
            // dX = dY·W
            gemm(
                MatRef::new(grad_out, rows, out),
                MatRef::new(self.weight.data(), out, inf),
                dx,
                false,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn layer(w: &[f32], b: &[f32], inf: usize) -> FcLayer<f32> {
        FcLayer::from_parts(
            Tensor::from_vec(&[b.len(), inf], w.to_vec()).unwrap(),
            Tensor::from_vec(&[b.len()], b.to_vec()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_weights_pass_input() {
        let l = layer(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 2);
        let y = l
            .forward(&Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weights_pass_bias() {
        let l = layer(&[0.0, 0.0, 0.0], &[3.0], 3);
        let y = l
            .forward(&Tensor::from_vec(&[3], vec![-7.0, 1e3, 0.25]).unwrap())
            .unwrap();
        assert_eq!(y.data(), &[3.0]);
    }

    #[test]
    fn hand_multiply() {
        // [[1,1,1],[0,1,2]]·[1,2,3] + [0.5,-0.5] = [6.5, 7.5]
        let l = layer(&[1.0, 1.0, 1.0, 0.0, 1.0, 2.0], &[0.5, -0.5], 3);
        let y = l
            .forward(&Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap())
            .unwrap();
        assert_eq!(y.data(), &[6.5, 7.5]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let l = FcLayer::<f32>::zeros(3, 2);
        assert!(matches!(
            l.forward(&Tensor::zeros(&[2])),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(l.forward(&Tensor::zeros(&[4, 2])).is_err());
    }

    #[test]
    fn batch_rows_match_single_vectors() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let l = FcLayer::<f32>::random(3, 5, &mut rng);
        let batch = Tensor::from_vec(&[2, 3], vec![0.1, 0.2, 0.3, -1.0, 0.5, 2.0]).unwrap();
        let yb = l.forward(&batch).unwrap();
        for r in 0..2 {
            let x = Tensor::from_vec(&[3], batch.data()[r * 3..r * 3 + 3].to_vec()).unwrap();
            let y = l.forward(&x).unwrap();
            assert_eq!(&yb.data()[r * 5..r * 5 + 5], y.data());
        }
    }
}
