//! Single-channel 2-d maps used by metrics, ground truth and analysis.

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Element, Tensor};

/// A row-major `height × width` map of 64-bit values.
#[derive(Clone, Debug, PartialEq)]
pub struct Map {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Map {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Usage(format!("map extent {height}×{width} is empty")));
        }
        if data.len() != height * width {
            return Err(Error::dim("map", "element count", height * width, data.len()));
        }
        Ok(Map { height, width, data })
    }

    pub fn filled(height: usize, width: usize, v: f64) -> Self {
        Map::new(height, width, vec![v; height * width]).expect("nonempty extent")
    }

    /// The uniform distribution over the map.
    pub fn uniform(height: usize, width: usize) -> Self {
        Self::filled(height, width, 1.0 / (height * width) as f64)
    }

    /// Reads a `(1, h, w, 1)` tensor.
    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Result<Self> {
        let [n, h, w, c] = t.dims4("map")?;
        if n != 1 {
            return Err(Error::dim("map", "batch", 1, n));
        }
        if c != 1 {
            return Err(Error::dim("map", "channels", 1, c));
        }
        Map::new(h, w, t.to_f64_vec())
    }

    /// Extracts sample `i` of a `(n, h, w, 1)` tensor.
    pub fn from_batch<T: Element>(t: &Tensor<T>, i: usize) -> Result<Self> {
        let [n, h, w, c] = t.dims4("map")?;
        if c != 1 {
            return Err(Error::dim("map", "channels", 1, c));
        }
        if i >= n {
            return Err(Error::dim("map", "batch index", n, i));
        }
        let len = h * w;
        Map::new(h, w, t.data()[i * len..(i + 1) * len].iter().map(|v| v.to_f64().unwrap()).collect())
    }

    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::new(&[1, self.height, self.width, 1], self.data.iter().map(|&v| T::c(v)).collect()).expect("map extent")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    /// True when every value equals the first. Rounding in the mean can
    /// leave a tiny nonzero `std` for such maps.
    pub fn is_constant(&self) -> bool {
        self.data.iter().all(|&v| v == self.data[0])
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.data.iter().map(|v| (v - m).powi(2)).sum::<f64>() / self.len() as f64).sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Map {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Divides by the sum; fails unless the sum is positive.
    pub fn normalized(&self) -> Result<Self> {
        let s = self.sum();
        if !(s > 0.0) || self.data.iter().any(|&v| v < 0.0) {
            return Err(Error::Numeric(format!("cannot normalize a map with sum {s} or negative entries")));
        }
        Ok(self.map(|v| v / s))
    }

    /// Bilinear resize (half-pixel centres).
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Usage("resize target must be at least 1×1".into()));
        }
        if (height, width) == (self.height, self.width) {
            return Ok(self.clone());
        }
        let data = kernels::bilinear_forward(&self.data, [1, self.height, self.width, 1], height, width);
        Map::new(height, width, data)
    }

    pub(crate) fn check_same(&self, other: &Map, op: &'static str) -> Result<()> {
        if self.height != other.height {
            return Err(Error::dim(op, "height", self.height, other.height));
        }
        if self.width != other.width {
            return Err(Error::dim(op, "width", self.width, other.width));
        }
        Ok(())
    }
}
