use serde::{Deserialize, Serialize};

/// Dense row-major f32 array. Image batches are `[batch, channels, height, width]`,
/// feature batches `[batch, features]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape {shape:?} vs {} values", data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn full(shape: Vec<usize>, v: f32) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![v; n] }
    }

    pub fn scalar(v: f32) -> Self {
        Self::new(vec![1], vec![v])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    /// `(batch, channels, height, width)` of a 4-d tensor.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected a 4-d tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    pub fn item(&self, b: usize) -> &[f32] {
        let n = self.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    /// Stacks equally shaped items along a new leading batch axis.
    pub fn stack(items: &[&[f32]], item_shape: &[usize]) -> Self {
        let mut shape = vec![items.len()];
        shape.extend_from_slice(item_shape);
        let mut data = Vec::with_capacity(shape.iter().product());
        for it in items {
            data.extend_from_slice(it);
        }
        Self::new(shape, data)
    }

    /// Concatenates along the batch axis.
    pub fn cat_batch(parts: &[&Tensor]) -> Self {
        let mut shape = parts[0].shape.clone();
        shape[0] = parts.iter().map(|p| p.shape[0]).sum();
        let mut data = Vec::with_capacity(shape.iter().product());
        for p in parts {
            assert_eq!(p.shape[1..], parts[0].shape[1..]);
            data.extend_from_slice(&p.data);
        }
        Self::new(shape, data)
    }

    /// Concatenates 4-d tensors along the channel axis.
    pub fn cat_channels(parts: &[&Tensor]) -> Self {
        let (b, _, h, w) = parts[0].dims4();
        let c: usize = parts.iter().map(|p| p.shape[1]).sum();
        let mut data = Vec::with_capacity(b * c * h * w);
        for bi in 0..b {
            for p in parts {
                data.extend_from_slice(p.item(bi));
            }
        }
        Self::new(vec![b, c, h, w], data)
    }

    /// Squared L2 norm of each batch item.
    pub fn item_sq_norms(&self) -> Vec<f64> {
        (0..self.batch())
            .map(|b| self.item(b).iter().map(|&v| (v as f64) * (v as f64)).sum())
            .collect()
    }
}
