//! Dense row-major tensors, a tape-based reverse-mode autodiff graph, and
//! the small amount of numerical plumbing (RNG streams, Adam, finite
//! difference checks) the rest of the crate needs.
//!
//! Shapes are always explicit; there is no broadcasting.

mod gradcheck;
mod graph;
mod optim;
mod rng;

pub use gradcheck::{finite_diff_gradcheck, gradcheck_coords, GradCheck};
pub use graph::{CeReduction, CeTarget, Fault, Graph, MixField, NodeId};
pub use optim::{Adam, AdamState};
pub use rng::RngStream;

use std::fmt::Debug;

use crate::error::{Error, Result};

/// Floating point element type usable in a [`Graph`].
///
/// Training runs in `f32`; gradient checks rebuild the same graphs in `f64`.
pub trait Real:
    num_traits::Float + num_traits::FromPrimitive + Default + Debug + Send + Sync + 'static
{
    /// `c <- alpha * a * b + beta * c` for row-major strided matrices.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: callers pass slices that cover the strided extents;
                // checked loosely here on the linear span.
                debug_assert!(
                    k == 0 || a.len() >= 1 + (m - 1) * rsa as usize + (k - 1) * csa as usize
                );
                debug_assert!(
                    k == 0 || b.len() >= 1 + (k - 1) * rsb as usize + (n - 1) * csb as usize
                );
                debug_assert!(c.len() >= 1 + (m - 1) * rsc as usize + (n - 1) * csc as usize);
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Dense N-dimensional array with an optional gradient slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let numel = checked_numel(&shape)?;
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
            grad: None,
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(&mut f).collect(),
            grad: None,
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Adds `g` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::shape(
                "accumulate_grad",
                format!(
                    "gradient has {} values, tensor has {}",
                    g.len(),
                    self.data.len()
                ),
            ));
        }
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::shape(
                "item",
                format!("expected one element, shape is {:?}", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    /// Extent of dimension `dim`, or an error naming it.
    pub fn dim(&self, dim: usize) -> Result<usize> {
        self.shape.get(dim).copied().ok_or_else(|| {
            Error::shape(
                "dim",
                format!("tensor of rank {} has no dim {dim}", self.shape.len()),
            )
        })
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if checked_numel(&shape)? != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Converts the element type; the gradient slot is dropped.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            grad: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
            && self
                .grad
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::DimOverflow(format!("{shape:?}")))
}

/// `[C, H, W]` extents of a rank-3 tensor.
pub(crate) fn chw(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    match shape {
        [c, h, w] => Ok((*c, *h, *w)),
        _ => Err(Error::shape(op, format!("expected [C,H,W], got {shape:?}"))),
    }
}
