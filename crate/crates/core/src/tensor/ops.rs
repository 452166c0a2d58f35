use std::sync::Arc;

use super::{numel, Op, Tensor};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// For every flat index of `big`, the flat index of `small` that broadcasts
/// onto it. Ranks must agree; each `small` extent equals the `big` one or 1.
pub(crate) fn broadcast_map(small: &[usize], big: &[usize]) -> Result<Vec<usize>> {
    if small.len() != big.len()
        || small.iter().zip(big).any(|(&s, &b)| s != b && s != 1)
    {
        return Err(shape_err!("cannot broadcast {:?} to {:?}", small, big));
    }
    let rank = big.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        strides[d] = if small[d] == 1 { 0 } else { acc };
        acc *= small[d];
    }
    let total = numel(big);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        map.push(offset);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < big[d] {
                break;
            }
            offset -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    Ok(map)
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str, f: impl Fn(T, T) -> T) -> Result<Vec<T>> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    Ok(a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

fn pow_or_zero<T: Scalar>(x: T, p: T) -> T {
    if x == T::zero() && p <= T::zero() {
        T::zero()
    } else {
        x.powf(p)
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let data = zip_map(self, other, "add", |x, y| x + y)?;
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let data = zip_map(self, other, "sub", |x, y| x - y)?;
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Sub(self.clone(), other.clone())))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let data = zip_map(self, other, "mul", |x, y| x * y)?;
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Mul(self.clone(), other.clone())))
    }

    pub fn scale(&self, factor: T) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x * factor).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Scale(self.clone(), factor))
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-T::one())
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x + c).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Shift(self.clone()))
    }

    pub(crate) fn mask_mul(&self, mask: Arc<Vec<T>>) -> Tensor<T> {
        debug_assert_eq!(mask.len(), self.numel());
        let data = self.data().iter().zip(mask.iter()).map(|(&x, &m)| x * m).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::MaskMul(self.clone(), mask))
    }

    /// Multiplies by constant (non-differentiable) factors of the same shape.
    pub fn mul_const(&self, factors: &[T]) -> Result<Tensor<T>> {
        if factors.len() != self.numel() {
            return Err(shape_err!(
                "mul_const: {} factors for tensor of shape {:?}",
                factors.len(),
                self.shape()
            ));
        }
        Ok(self.mask_mul(Arc::new(factors.to_vec())))
    }

    /// Elementwise power. `0^p` for `p <= 0` is taken as 0 so gradients of
    /// `sqrt` vanish at the origin instead of producing infinities.
    pub fn powf(&self, p: T) -> Tensor<T> {
        let data = self.data().iter().map(|&x| pow_or_zero(x, p)).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Pow(self.clone(), p))
    }

    pub fn sqrt(&self) -> Tensor<T> {
        self.powf(T::of(0.5))
    }

    pub fn square(&self) -> Tensor<T> {
        self.mul(self).expect("same shape")
    }

    /// Natural logarithm.
    pub fn ln(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x.ln()).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Log(self.clone()))
    }

    /// Clamps into `[lo, hi]`; the gradient passes only where no clamping
    /// happened.
    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        let mut mask = Vec::with_capacity(self.numel());
        let data = self
            .data()
            .iter()
            .map(|&x| {
                let inside = x >= lo && x <= hi;
                mask.push(if inside { T::one() } else { T::zero() });
                x.max(lo).min(hi)
            })
            .collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Clamp(self.clone(), Arc::new(mask)))
    }

    /// Sums over every axis where `shape` has extent 1.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape == self.shape() {
            return Ok(self.clone());
        }
        let map = broadcast_map(shape, self.shape())?;
        let mut data = vec![T::zero(); numel(shape)];
        for (&v, &j) in self.data().iter().zip(&map) {
            data[j] = data[j] + v;
        }
        Ok(Tensor::from_op(shape.to_vec(), data, Op::SumTo(self.clone())))
    }

    /// Repeats along every axis where this tensor has extent 1.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape == self.shape() {
            return Ok(self.clone());
        }
        let map = broadcast_map(self.shape(), shape)?;
        let src = self.data();
        let data = map.iter().map(|&j| src[j]).collect();
        Ok(Tensor::from_op(shape.to_vec(), data, Op::BroadcastTo(self.clone())))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(shape_err!("cannot reshape {:?} to {:?}", self.shape(), shape));
        }
        if shape == self.shape() {
            return Ok(self.clone());
        }
        Ok(Tensor::from_op(shape.to_vec(), self.to_vec(), Op::Reshape(self.clone())))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Tensor<T> {
        let ones = vec![1; self.rank()];
        self.sum_to(&ones)
            .and_then(|s| s.reshape(&[]))
            .expect("full reduction is always valid")
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = T::from_usize(self.numel().max(1)).expect("count fits");
        self.sum().scale(T::one() / n)
    }

    /// Per-sample mean over all non-leading axes, shaped `[N, 1, ..., 1]`.
    pub fn mean_per_sample(&self) -> Result<Tensor<T>> {
        let n = *self.shape().first().ok_or_else(|| shape_err!("mean_per_sample on a scalar"))?;
        let mut target = vec![1; self.rank()];
        target[0] = n;
        let per = T::from_usize((self.numel() / n.max(1)).max(1)).expect("count fits");
        Ok(self.sum_to(&target)?.scale(T::one() / per))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(shape_err!("matmul needs rank-2 operands, got {:?} and {:?}", self.shape(), other.shape()));
        };
        if k != k2 {
            return Err(shape_err!("matmul inner extents differ: {:?} x {:?}", self.shape(), other.shape()));
        }
        let mut data = vec![T::zero(); m * n];
        T::gemm(
            m, k, n, T::one(),
            self.data(), (k as isize, 1),
            other.data(), (n as isize, 1),
            T::zero(), &mut data, (n as isize, 1),
        );
        Ok(Tensor::from_op(vec![m, n], data, Op::MatMul(self.clone(), other.clone())))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor<T>> {
        let &[m, n] = self.shape() else {
            return Err(shape_err!("transpose needs a rank-2 tensor, got {:?}", self.shape()));
        };
        let src = self.data();
        let mut data = Vec::with_capacity(m * n);
        for j in 0..n {
            for i in 0..m {
                data.push(src[i * n + j]);
            }
        }
        Ok(Tensor::from_op(vec![n, m], data, Op::Transpose(self.clone())))
    }
}
