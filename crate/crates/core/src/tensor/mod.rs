//! Dense tensors, the differentiable primitives and the reverse-mode tape.
//!
//! Feature maps are laid out row-major as `[batch, length, channels]`, so
//! the channel vector of one time step is contiguous in memory.

pub mod checkpoint;
pub mod kernels;
mod tape;

pub use tape::{BatchNormStats, ConvSpec, Gradients, NodeId, Tape, Var};

use std::fmt::Debug;

use crate::error::{Error, Result};

/// Floating point element type of a [`Tensor`].
///
/// Training and inference run in `f32`; `f64` exists for gradient checking.
pub trait Element:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
}

impl Element for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<F = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Element> Debug for Tensor<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?} [{} values]", self.shape, self.data.len())
        }
    }
}

impl<F: Element> Tensor<F> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} holds {} values but {} were supplied",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: F) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> F) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn scalar(v: F) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Interprets the tensor as `[batch, length, channels]`.
    ///
    /// Rank-2 tensors are read as a single batch item.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [b, l, c] => Ok((b, l, c)),
            [l, c] => Ok((1, l, c)),
            _ => Err(Error::Dimension(format!(
                "expected a [batch, length, channels] tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<G: Element>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| G::lit(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    /// Items `start..end` along the leading (batch) axis.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Self> {
        let (b, l, c) = self.dims3()?;
        if start > end || end > b {
            return Err(Error::Dimension(format!(
                "batch range {start}..{end} out of bounds for batch size {b}"
            )));
        }
        let row = l * c;
        Ok(Self {
            shape: vec![end - start, l, c],
            data: self.data[start * row..end * row].to_vec(),
        })
    }

    /// Stacks equally shaped `[length, channels]` items into a batch.
    pub fn stack(items: &[Tensor<F>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Parameter("cannot stack an empty list".into()))?;
        let (_, l, c) = first.dims3()?;
        let mut data = Vec::with_capacity(items.len() * l * c);
        for t in items {
            let (b, tl, tc) = t.dims3()?;
            if (tl, tc) != (l, c) {
                return Err(Error::Dimension(format!(
                    "cannot stack [{tl}, {tc}] with [{l}, {c}]"
                )));
            }
            let _ = b;
            data.extend_from_slice(&t.data);
        }
        let b = data.len() / (l * c).max(1);
        Ok(Self {
            shape: vec![b, l, c],
            data,
        })
    }
}

/// Whether batch normalization uses batch or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Infer,
}

/// Running statistics and hyperparameters of one batch-normalization layer.
///
/// `gamma` and `beta` are trainable and live with the other parameters; this
/// holds only the state that is updated outside of gradient descent.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<F = f32> {
    pub name: String,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
    pub momentum: F,
    pub epsilon: F,
    pub initialized: bool,
}

impl<F: Element> BatchNormState<F> {
    pub fn new(name: impl Into<String>, channels: usize, momentum: F, epsilon: F) -> Self {
        Self {
            name: name.into(),
            running_mean: vec![F::zero(); channels],
            running_var: vec![F::one(); channels],
            momentum,
            epsilon,
            initialized: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Marks the default mean 0 / variance 1 statistics as usable.
    pub fn seed_identity(&mut self) {
        self.running_mean.fill(F::zero());
        self.running_var.fill(F::one());
        self.initialized = true;
    }

    /// `running = momentum * running + (1 - momentum) * batch`
    pub fn update(&mut self, stats: &BatchNormStats<F>) {
        let m = self.momentum;
        let w = F::one() - m;
        for (r, &b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = m * *r + w * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = (m * *r + w * b).max(F::zero());
        }
        self.initialized = true;
    }

    /// Applies batch normalization in the given mode, folding batch statistics
    /// into the running averages in train mode.
    pub fn forward(
        &mut self,
        tape: &mut Tape<F>,
        x: &Var<F>,
        gamma: &Var<F>,
        beta: &Var<F>,
        mode: Mode,
    ) -> Result<Var<F>> {
        match mode {
            Mode::Train => {
                let (y, stats) = tape.batch_norm(x, gamma, beta, None, self.epsilon)?;
                if let Some(stats) = stats {
                    self.update(&stats);
                }
                Ok(y)
            }
            Mode::Infer => self.infer(tape, x, gamma, beta),
        }
    }

    pub fn infer(&self, tape: &mut Tape<F>, x: &Var<F>, gamma: &Var<F>, beta: &Var<F>) -> Result<Var<F>> {
        if !self.initialized {
            return Err(Error::UninitializedStatistics(self.name.clone()));
        }
        let (y, _) = tape.batch_norm(
            x,
            gamma,
            beta,
            Some((&self.running_mean, &self.running_var)),
            self.epsilon,
        )?;
        Ok(y)
    }
}

/// Per-position argmax over the trailing axis.
pub fn argmax_rows<F: Element>(t: &Tensor<F>) -> Vec<usize> {
    let k = *t.shape().last().unwrap_or(&1);
    t.data()
        .chunks(k.max(1))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f32>::new([2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::<f32>::new([2, 3], vec![0.0; 5]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn rank2_reads_as_single_batch() {
        let t = Tensor::<f32>::zeros([7, 2]);
        assert_eq!(t.dims3().unwrap(), (1, 7, 2));
    }

    #[test]
    fn stack_and_slice_roundtrip() {
        let a = Tensor::<f32>::from_fn([3, 2], |i| i as f32);
        let b = Tensor::<f32>::from_fn([3, 2], |i| 10.0 + i as f32);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), &[2, 3, 2]);
        assert_eq!(s.slice_batch(1, 2).unwrap().data(), b.data());
    }

    #[test]
    fn argmax_first_on_ties() {
        let t = Tensor::<f32>::new([2, 3], vec![1.0, 3.0, 3.0, 0.5, 0.1, 0.2]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0]);
    }
}
