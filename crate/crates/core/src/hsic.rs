//! Empirical Hilbert–Schmidt independence criterion between two parameter
//! vectors, and the dynamic approval threshold derived from recent values.
//!
//! The `d` coordinates of the two vectors are read as `d` paired scalar
//! samples `(a_i, b_i)`. The biased estimator is
//!
//! ```text
//! HSIC(a, b) = tr(F_A H F_B H) / (n - 1)^2,    H = I - (1/n) 1 1ᵀ
//! ```
//!
//! where `F_A`, `F_B` are the Gram matrices of the kernel over the retained
//! samples. Vectors longer than `sample_cap` are thinned to `sample_cap`
//! coordinates at indices `floor(i * d / sample_cap)`, so the value does not
//! depend on any random seed.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_math::{check_dims, median_in_place};
use crate::scalar::{stable_sum, CompensatedSum, Scalar};

pub const DEFAULT_SAMPLE_CAP: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// Median pairwise distance of the pooled samples.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    /// Gaussian kernel `exp(-(x - y)^2 / (2 h^2))`.
    Rbf { bandwidth: Bandwidth },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if let KernelSpec::Rbf {
            bandwidth: Bandwidth::Fixed(h),
        } = self
        {
            if !(h.is_finite() && *h > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "rbf bandwidth must be positive, got {h}"
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Rbf { .. } => "rbf",
        }
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Rbf {
            bandwidth: Bandwidth::Auto,
        }
    }
}

/// A kernel with every parameter resolved.
#[derive(Debug, Clone, Copy)]
pub enum ResolvedKernel<T> {
    Linear,
    Rbf { bandwidth: T },
}

impl<T: Scalar> ResolvedKernel<T> {
    #[inline]
    pub fn eval(&self, x: T, y: T) -> T {
        match *self {
            ResolvedKernel::Linear => x * y,
            ResolvedKernel::Rbf { bandwidth } => {
                let diff = x - y;
                (-(diff * diff) / (T::of(2.0) * bandwidth * bandwidth)).exp()
            }
        }
    }
}

/// Indices kept when thinning `d` coordinates down to at most `cap`.
pub fn retained_indices(d: usize, cap: usize) -> Vec<usize> {
    if d <= cap {
        (0..d).collect()
    } else {
        (0..cap).map(|i| i * d / cap).collect()
    }
}

fn prepare<T: Scalar>(a: &[T], b: &[T], sample_cap: usize) -> Result<(Vec<T>, Vec<T>)> {
    check_dims(a.len(), b.len())?;
    if a.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            actual: a.len(),
        });
    }
    if sample_cap < 2 {
        return Err(Error::InvalidParameter(format!(
            "sample_cap must be at least 2, got {sample_cap}"
        )));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::NonFinite(i));
        }
    }
    let idx = retained_indices(a.len(), sample_cap);
    Ok((
        idx.iter().map(|&i| a[i]).collect(),
        idx.iter().map(|&i| b[i]).collect(),
    ))
}

/// Median of all pairwise absolute differences of `samples`; 1 when that
/// median is zero or fewer than two samples are given.
pub fn median_pairwise_distance<T: Scalar>(samples: &[T]) -> T {
    let n = samples.len();
    if n < 2 {
        return T::one();
    }
    let mut diffs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            diffs.push((samples[i] - samples[j]).abs());
        }
    }
    let m = median_in_place(&mut diffs);
    if m > T::zero() {
        m
    } else {
        T::one()
    }
}

/// Median-heuristic RBF bandwidth over the pooled coordinates of `a` and `b`.
pub fn median_bandwidth<T: Scalar>(a: &[T], b: &[T]) -> T {
    let pooled: Vec<T> = a.iter().chain(b).copied().collect();
    median_pairwise_distance(&pooled)
}

fn resolve<T: Scalar>(kernel: &KernelSpec, a: &[T], b: &[T]) -> ResolvedKernel<T> {
    match kernel {
        KernelSpec::Linear => ResolvedKernel::Linear,
        KernelSpec::Rbf {
            bandwidth: Bandwidth::Fixed(h),
        } => ResolvedKernel::Rbf { bandwidth: T::of(*h) },
        KernelSpec::Rbf {
            bandwidth: Bandwidth::Auto,
        } => ResolvedKernel::Rbf {
            bandwidth: median_bandwidth(a, b),
        },
    }
}

/// HSIC between `a` and `b`, coordinates as samples.
///
/// The linear kernel uses the closed form `(ãᵀb̃)^2 / (n-1)^2` over
/// mean-centred copies; other kernels go through [`hsic_gram`].
pub fn hsic<T: Scalar>(a: &[T], b: &[T], kernel: &KernelSpec, sample_cap: usize) -> Result<T> {
    kernel.validate()?;
    let (a, b) = prepare(a, b, sample_cap)?;
    let k = resolve(kernel, &a, &b);
    let v = match k {
        ResolvedKernel::Linear => linear_closed_form(&a, &b),
        ResolvedKernel::Rbf { .. } => gram_trace(&a, &b, k),
    };
    Ok(v.max(T::zero()))
}

/// HSIC through the Gram-matrix route for any kernel, including linear.
pub fn hsic_gram<T: Scalar>(a: &[T], b: &[T], kernel: &KernelSpec, sample_cap: usize) -> Result<T> {
    kernel.validate()?;
    let (a, b) = prepare(a, b, sample_cap)?;
    let k = resolve(kernel, &a, &b);
    Ok(gram_trace(&a, &b, k).max(T::zero()))
}

fn linear_closed_form<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = T::of_usize(a.len());
    let ma = stable_sum(a.iter().copied()) / n;
    let mb = stable_sum(b.iter().copied()) / n;
    let cross = stable_sum(a.iter().zip(b).map(|(x, y)| (*x - ma) * (*y - mb)));
    let denom = n - T::one();
    (cross * cross) / (denom * denom)
}

/// `tr(F_A H F_B H) / (n-1)^2` without forming `H`.
///
/// `tr(F_A H F_B H) = Σ_ij (H F_A H)_ij (F_B)_ij`, and the double-centred
/// entry is `F_ij - r_i - r_j + g` with row means `r` and grand mean `g`.
fn gram_trace<T: Scalar>(a: &[T], b: &[T], k: ResolvedKernel<T>) -> T {
    let n = a.len();
    let nt = T::of_usize(n);
    let mut fa = vec![T::zero(); n * n];
    for i in 0..n {
        fa[i * n + i] = k.eval(a[i], a[i]);
        for j in (i + 1)..n {
            let v = k.eval(a[i], a[j]);
            fa[i * n + j] = v;
            fa[j * n + i] = v;
        }
    }
    let row_means: Vec<T> = (0..n)
        .map(|i| stable_sum(fa[i * n..(i + 1) * n].iter().copied()) / nt)
        .collect();
    let grand = stable_sum(row_means.iter().copied()) / nt;

    let mut acc = CompensatedSum::new();
    let two = T::of(2.0);
    for i in 0..n {
        let ci = fa[i * n + i] - two * row_means[i] + grand;
        acc.add(ci * k.eval(b[i], b[i]));
        for j in (i + 1)..n {
            let cij = fa[i * n + j] - row_means[i] - row_means[j] + grand;
            acc.add(two * cij * k.eval(b[i], b[j]));
        }
    }
    let denom = nt - T::one();
    acc.value() / (denom * denom)
}

/// The most recent `capacity` HSIC values, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct HsicWindow<T> {
    values: VecDeque<T>,
    capacity: usize,
}

impl<T: Scalar> HsicWindow<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be at least 1");
        Self {
            values: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Keeps the last `capacity` items of `values`.
    pub fn from_values<I: IntoIterator<Item = T>>(capacity: usize, values: I) -> Self {
        let mut w = Self::new(capacity);
        for v in values {
            w.push(v);
        }
        w
    }

    pub fn push(&mut self, v: T) {
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(v);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.values.iter().copied()
    }

    pub fn last(&self) -> Option<T> {
        self.values.back().copied()
    }
}

/// Approval threshold `min(window) - lambda * sigma`, with `sigma` the
/// population standard deviation of the window.
pub fn threshold<T: Scalar>(window: &HsicWindow<T>, lambda: T) -> Result<T> {
    if window.len() < 2 {
        return Err(Error::WindowNotReady { len: window.len() });
    }
    let n = T::of_usize(window.len());
    let mean = stable_sum(window.values()) / n;
    let var = stable_sum(window.values().map(|v| (v - mean) * (v - mean))) / n;
    let min = window
        .values()
        .fold(T::infinity(), |m, v| if v < m { v } else { m });
    Ok(min - lambda * var.sqrt())
}
