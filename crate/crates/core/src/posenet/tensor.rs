use crate::error::{Error, Result};

/// Dense `(n, c, h, w)` array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::ShapeMismatch { expected: format!("{n} values for {shape:?}"), got: data.len().to_string() });
        }
        Ok(Self { shape, data })
    }

    /// Stacks equally shaped `(c, h, w)` maps into a batch.
    pub fn stack(maps: &[FeatureMap]) -> Result<Self> {
        let first = maps.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (c, h, w) = first.dims();
        let mut data = Vec::with_capacity(maps.len() * first.data.len());
        for m in maps {
            if m.dims() != (c, h, w) {
                return Err(Error::ShapeMismatch { expected: format!("{:?}", (c, h, w)), got: format!("{:?}", m.dims()) });
            }
            data.extend_from_slice(&m.data);
        }
        Ok(Self { shape: [maps.len(), c, h, w], data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Example `i` as a feature map.
    pub fn example(&self, i: usize) -> FeatureMap {
        let [_, c, h, w] = self.shape;
        let len = c * h * w;
        FeatureMap { c, h, w, data: self.data[i * len..(i + 1) * len].to_vec() }
    }
}

/// One example's `(c, h, w)` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }
}
