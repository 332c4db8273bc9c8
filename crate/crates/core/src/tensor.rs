//! Dense NHWC tensors.

use std::fmt;
use std::sync::Arc;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

/// Floating-point element type of a tensor.
pub trait Element:
    Float + FromPrimitive + ToPrimitive + Default + fmt::Debug + fmt::Display + Send + Sync + std::iter::Sum + 'static
{
    const DTYPE: DType;

    /// `c = a · b` for row-major `a: m×k`, `b: k×n` given as strided views.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        c: &mut [Self],
        rsc: isize,
    );

    fn to_le_bytes_vec(data: &[Self]) -> Vec<u8>;
    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self>;

    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }
}

fn check_gemm_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm view out of bounds");
}

macro_rules! impl_element {
    ($t:ty, $dt:expr, $gemm:path, $bytes:expr) => {
        impl Element for $t {
            const DTYPE: DType = $dt;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                c: &mut [Self],
                rsc: isize,
            ) {
                check_gemm_extent(a.len(), m, k, rsa, csa);
                check_gemm_extent(b.len(), k, n, rsb, csb);
                check_gemm_extent(c.len(), m, n, rsc, 1);
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    for i in 0..m {
                        let row = i * rsc as usize;
                        c[row..row + n].fill(0.0);
                    }
                    return;
                }
                // SAFETY: every view was bounds-checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        0.0,
                        c.as_mut_ptr(),
                        rsc,
                        1,
                    );
                }
            }

            fn to_le_bytes_vec(data: &[Self]) -> Vec<u8> {
                data.iter().flat_map(|v| v.to_le_bytes()).collect()
            }

            fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self> {
                bytes
                    .chunks_exact($bytes)
                    .map(|c| <$t>::from_le_bytes(c.try_into().unwrap()))
                    .collect()
            }
        }
    };
}

impl_element!(f32, DType::F32, matrixmultiply::sgemm, 4);
impl_element!(f64, DType::F64, matrixmultiply::dgemm, 8);

/// An immutable dense tensor in row-major order.
///
/// Four-dimensional tensors use the (batch, height, width, channels)
/// layout. Cloning is cheap: the buffer is shared.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Usage(format!("zero extent in shape {shape:?}")));
        }
        if n != data.len() {
            return Err(Error::dim("tensor", "element count", n, data.len()));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    /// Constructor for buffers whose length is correct by construction.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::from_parts(shape.to_vec(), vec![value; shape.iter().product()])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(v: T) -> Self {
        Self::from_parts(vec![1], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|a| (*a).clone())
    }

    /// Returns the (batch, height, width, channels) extents.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[n, h, w, c] => Ok([n, h, w, c]),
            s => Err(Error::dim(op, "rank", 4, s.len())),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::dim("reshape", "element count", self.len(), n));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self::from_parts(
            self.shape.clone(),
            self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    /// Sum accumulated in 64-bit.
    pub fn sum(&self) -> T {
        T::c(self.data.iter().map(|v| v.to_f64().unwrap()).sum())
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
        )
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64().unwrap()).collect()
    }

    /// Extracts sample `n` of the batch axis as a batch of one.
    pub fn sample(&self, n: usize) -> Result<Self> {
        let [b, h, w, c] = self.dims4("sample")?;
        if n >= b {
            return Err(Error::dim("sample", "batch index", b, n));
        }
        let len = h * w * c;
        Ok(Self::from_parts(vec![1, h, w, c], self.data[n * len..(n + 1) * len].to_vec()))
    }

    /// Stacks equally shaped batch-of-one tensors along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::Usage("stack of zero tensors".into()))?;
        let [_, h, w, c] = first.dims4("stack")?;
        let mut data = Vec::with_capacity(items.len() * first.len());
        let mut n = 0;
        for t in items {
            let [tn, th, tw, tc] = t.dims4("stack")?;
            if (th, tw, tc) != (h, w, c) {
                return Err(Error::dim("stack", "sample extent", h * w * c, th * tw * tc));
            }
            n += tn;
            data.extend_from_slice(t.data());
        }
        Ok(Self::from_parts(vec![n, h, w, c], data))
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}
