//! Dense tensors, a reverse-mode tape over the layer set the backbone needs,
//! and the Adam optimizer.
//!
//! Everything is generic over [`Scalar`] so the same kernels run in 32-bit
//! precision for training and 64-bit precision for oracle and gradient checks.

mod adam;
pub mod kernels;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{BatchStats, Mode, Tape, Var};

/// Floating point element type of a [`Tensor`].
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + Sum + 'static
{
    const BITS: u32;

    /// `c = alpha * a·b + beta * c` on strided row/column layouts.
    ///
    /// # Safety
    /// The strides and extents must describe regions that lie inside the slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const BITS: u32 = 32;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const BITS: u32 = 64;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Row-major matrix view used by [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef { data, rows, cols, transposed: false }
    }

    /// View the transpose of a row-major `rows × cols` buffer.
    pub fn t(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef { data, rows: cols, cols: rows, transposed: true }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.rows as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out (m×n, row-major) = a·b + beta·out`.
pub(crate) fn gemm<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, out: &mut [T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    assert!(a.data.len() >= a.rows * a.cols);
    assert!(b.data.len() >= b.rows * b.cols);
    assert!(out.len() >= a.rows * b.cols);
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: extents checked above, strides describe dense row-major layouts.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

/// Dense n-dimensional array with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(Error::dim("tensor", format!("zero extent in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim("tensor", format!("shape {shape:?} needs {expected} elements, got {}", data.len())));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n], grad: None }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: vec![value], grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::dim(
                "set_grad",
                format!("gradient has {} elements, tensor has {}", grad.len(), self.data.len()),
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::dim("reshape", format!("cannot view {:?} as {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Extents of a rank-4 NCHW tensor.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::dim(op, format!("expected NCHW tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn dims2(&self, op: &'static str) -> Result<[usize; 2]> {
        match self.shape[..] {
            [r, c] => Ok([r, c]),
            _ => Err(Error::dim(op, format!("expected rank-2 tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let conv = |v: &T| U::from_f64_lossy(v.to_f64_lossy());
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(conv).collect(),
            grad: self.grad.as_ref().map(|g| g.iter().map(conv).collect()),
        }
    }

    /// Rows `start..start+count` along the leading axis.
    pub fn slice_outer(&self, start: usize, count: usize) -> Result<Tensor<T>> {
        let outer = self.shape[0];
        if count == 0 || start + count > outer {
            return Err(Error::dim("slice_outer", format!("rows {start}..{} out of range for {outer}", start + count)));
        }
        let stride = self.data.len() / outer;
        let mut shape = self.shape.clone();
        shape[0] = count;
        Ok(Tensor { shape, data: self.data[start * stride..(start + count) * stride].to_vec(), grad: None })
    }

    /// Stack equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = items.first().ok_or_else(|| Error::dim("stack", "no tensors to stack"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::dim("stack", format!("shape {:?} differs from {:?}", t.shape, first.shape)));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data, grad: None })
    }
}
