use crate::error::{Error, Result};
use crate::numerics::{ConvLayer, FcLayer, Scalar, Tensor};

/// A fixed, ordered collection of parameter tensors.
///
/// The order is stable and defines the layout used by weight files, the
/// optimizer state, and flattened gradient checks.
pub trait ParamSet<T: Scalar> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)>;

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn flatten(&self) -> Vec<T> {
        self.named_tensors()
            .into_iter()
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect()
    }

    fn load_flat(&mut self, flat: &[T]) -> Result<()> {
        let total = self.param_count();
        if flat.len() != total {
            return Err(Error::invalid(format!(
                "expected {total} flat parameters, got {}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }
}

pub(crate) fn prefixed<'a, T: Scalar>(
    prefix: &str,
    inner: Vec<(String, &'a Tensor<T>)>,
) -> impl Iterator<Item = (String, &'a Tensor<T>)> + use<'a, T> {
    let prefix = prefix.to_string();
    inner
        .into_iter()
        .map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

impl<T: Scalar> ParamSet<T> for FcLayer<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl<T: Scalar> ParamSet<T> for ConvLayer<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
