//! Dense numeric kernels, activations and the seeded random source.
//!
//! Everything here is generic over [`Scalar`] so the same code path runs in
//! `f32` for training and inference and in `f64` for gradient checking.
//! Reductions always accumulate in ascending index order, which makes results
//! bitwise reproducible for a given precision and platform.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Floating point element type of a [`Tensor`].
pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        let len = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::dim(format!("invalid tensor dims {dims:?}")));
        }
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::dim(format!(
                "dims {dims:?} need {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }
}

/// `W·x + b` for a row-major `W` of shape `[m, n]`.
pub fn affine<T: Scalar>(w: &Tensor<T>, b: &[T], x: &[T]) -> Result<Vec<T>> {
    let (m, n) = match w.dims() {
        [m, n] => (*m, *n),
        d => return Err(Error::dim(format!("affine weight must be rank 2, got {d:?}"))),
    };
    if b.len() != m || x.len() != n {
        return Err(Error::dim(format!(
            "affine shapes: W {m}x{n}, b {}, x {}",
            b.len(),
            x.len()
        )));
    }
    let mut out = vec![T::zero(); m];
    affine_into(w.data(), b, x, &mut out);
    Ok(out)
}

/// Unchecked kernel behind [`affine`]; `w` is `out.len() × x.len()` row-major.
pub(crate) fn affine_into<T: Scalar>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let n = x.len();
    debug_assert_eq!(w.len(), out.len() * n);
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&w[i * n..(i + 1) * n], x) + b[i];
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::dim("softmax of an empty vector"));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    // Compensated (Neumaier) sum keeps the normalizer accurate for long f32 vectors.
    let mut sum = T::zero();
    let mut comp = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        let t = sum + *x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + *x;
        } else {
            comp += (*x - t) + sum;
        }
        sum = t;
    }
    let sum = sum + comp;
    for x in v.iter_mut() {
        *x = *x / sum;
    }
}

/// Logistic function, evaluated without overflow for any finite input.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Seeded pseudo-random source.
///
/// Backed by ChaCha8 (`rand_chacha`), whose output stream is fixed for a given
/// 64-bit seed on every platform. Normal draws use the Box-Muller cosine
/// branch, one uniform pair per draw.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::arg(format!("uniform bounds lo={lo} > hi={hi}")));
        }
        Ok(lo + (hi - lo) * self.unit())
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> Result<f64> {
        if sd.is_nan() || sd < 0.0 {
            return Err(Error::arg(format!("normal sd must be >= 0, got {sd}")));
        }
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        Ok(mean + sd * z)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    #[test]
    fn affine_examples() {
        let eye = Tensor::from_vec(&[2, 2], vec![1.0f64, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(affine(&eye, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);

        let w = Tensor::from_vec(&[2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(affine(&w, &[1.0, 1.0], &[1.0, 1.0]).unwrap(), vec![4.0, 8.0]);

        let z = Tensor::<f64>::zeros(&[3, 5]);
        let x = [0.3, -1.0, 8.0, 2.5, 1e3];
        assert_eq!(affine(&z, &[7.0; 3], &x).unwrap(), vec![7.0; 3]);
    }

    #[test]
    fn affine_shape_mismatch() {
        let w = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matches!(
            affine(&w, &[0.0; 2], &[0.0; 2]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            affine(&w, &[0.0; 3], &[0.0; 3]),
            Err(Error::Dimension(_))
        ));
        let v = Tensor::<f32>::zeros(&[6]);
        assert!(affine(&v, &[0.0; 6], &[0.0]).is_err());
    }

    #[test]
    fn tensor_rejects_bad_dims() {
        assert!(Tensor::from_vec(&[2, 2], vec![0.0f32; 3]).is_err());
        assert!(Tensor::from_vec(&[0, 2], Vec::<f32>::new()).is_err());
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&[0.0f64, 0.0, 0.0]).unwrap();
        for v in s {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&[1000.0f32, 0.0]).unwrap();
        assert!(s.iter().all(|v| v.is_finite()));
        assert!((s[0] - 1.0).abs() < 1e-6 && s[1] < 1e-30);
        let s = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(softmax::<f32>(&[]), Err(Error::Dimension(_))));
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        let tiny = sigmoid(-1000.0f64);
        assert!(tiny.is_finite() && tiny < 1e-300);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid(-800.0f32).is_finite());
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(-2.0f32), 0.0);
        assert_eq!(relu(5.0f32), 5.0);
    }

    #[test]
    fn rng_is_deterministic() {
        let mut a = Rng::new(99);
        let mut b = Rng::new(99);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = Rng::new(100);
        assert_ne!(Rng::new(99).next_u64(), c.next_u64());
    }

    #[test]
    fn rng_argument_errors() {
        let mut r = Rng::new(1);
        assert!(matches!(r.uniform(1.0, 0.0), Err(Error::Argument(_))));
        assert!(r.normal(0.0, -1.0).is_err());
        let u = r.uniform(-2.0, 3.0).unwrap();
        assert!((-2.0..3.0).contains(&u));
    }

    #[test]
    fn rng_normal_moments() {
        let mut r = Rng::new(5);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal(1.0, 2.0).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
        assert!((var.sqrt() - 2.0).abs() < 0.05, "sd {}", var.sqrt());
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(v in prop::collection::vec(-50.0f32..50.0, 1..4096)) {
            let s = softmax(&v).unwrap();
            let sum: f64 = s.iter().map(|&x| x as f64).sum();
            prop_assert!(s.iter().all(|&x| x >= 0.0));
            prop_assert!((sum - 1.0).abs() <= 1e-6, "sum {}", sum);
        }

        #[test]
        fn sigmoid_is_symmetric(x in -800.0f64..800.0) {
            prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn affine_is_linear(
            seed in any::<u64>(),
            alpha in -3.0f32..3.0,
            beta in -3.0f32..3.0,
        ) {
            let mut rng = Rng::new(seed);
            let (m, n) = (7, 11);
            let mut draw = |k: usize| -> Vec<f32> {
                (0..k).map(|_| rng.uniform(-1.0, 1.0).unwrap() as f32).collect()
            };
            let w = Tensor::from_vec(&[m, n], draw(m * n)).unwrap();
            let b = draw(m);
            let x = draw(n);
            let y = draw(n);
            let zero = vec![0.0f32; m];
            let mix: Vec<f32> = x.iter().zip(&y).map(|(a, c)| alpha * a + beta * c).collect();
            let lhs = affine(&w, &b, &mix).unwrap();
            let ax = affine(&w, &zero, &x).unwrap();
            let ay = affine(&w, &zero, &y).unwrap();
            for i in 0..m {
                let rhs = alpha * ax[i] + beta * ay[i] + b[i];
                // Relative to the summed magnitude of every product involved.
                let row = &w.data()[i * n..(i + 1) * n];
                let scale: f32 = row
                    .iter()
                    .zip(x.iter().zip(&y))
                    .map(|(wij, (xj, yj))| wij.abs() * ((alpha * xj).abs() + (beta * yj).abs()))
                    .sum::<f32>()
                    + b[i].abs();
                prop_assert!((lhs[i] - rhs).abs() <= 1e-6 * scale, "{} vs {}", lhs[i], rhs);
            }
        }
    }
}
