use super::scalar::Scalar;

/// Dense row-major tensor: flat storage plus a shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F: Scalar> {
    pub data: Vec<F>,
    pub shape: Vec<usize>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(data: Vec<F>, shape: Vec<usize>) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor { data, shape }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            data: vec![F::ZERO; n],
            shape,
        }
    }

    pub fn scalar(value: F) -> Self {
        Tensor {
            data: vec![value],
            shape: vec![1],
        }
    }

    pub fn from_f64_slice(values: &[f64], shape: Vec<usize>) -> Self {
        Tensor::new(values.iter().map(|&v| F::from_f64(v)).collect(), shape)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> F {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Tensor<F> {
        Tensor {
            data: self.data.iter().map(|&v| f(v)).collect(),
            shape: self.shape.clone(),
        }
    }

    pub fn zip(&self, other: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
        assert_eq!(self.shape, other.shape, "zip shape mismatch");
        Tensor {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            shape: self.shape.clone(),
        }
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.to_f64() * v.to_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            data: self.data.iter().map(|v| v.to_f64()).collect(),
            shape: self.shape.clone(),
        }
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            data: self.data.iter().map(|v| G::from_f64(v.to_f64())).collect(),
            shape: self.shape.clone(),
        }
    }
}

/// Argmax over a slice; ties resolve to the lowest index.
pub fn argmax<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_checked() {
        let t = Tensor::<f32>::new(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]);
        assert_eq!(t.len(), 4);
        assert_eq!(t.sum(), 10.0);
    }

    #[test]
    #[should_panic]
    fn bad_shape_panics() {
        let _ = Tensor::<f32>::new(vec![1.0, 2.0, 3.0], vec![2, 2]);
    }

    #[test]
    fn argmax_ties_take_first() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0, 0.0]), 1);
    }
}
