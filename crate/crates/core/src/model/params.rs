use rand_distr::{Distribution, Normal};

use super::tensor::Real;
use crate::rng::Rng;

/// How a parameter tensor starts out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with standard deviation `gain / sqrt(fan_in)`.
    FanIn { fan_in: usize, gain: f64 },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<S>,
    pub grad: Vec<S>,
    /// Adam first moment.
    pub m: Vec<S>,
    /// Adam second moment.
    pub v: Vec<S>,
    /// Running normalization statistics are stored here too, untrained.
    pub trainable: bool,
}

impl<S: Real> Param<S> {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Flat store of every tensor of the network with gradient and optimizer
/// buffers of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    pub params: Vec<Param<S>>,
    /// Number of optimizer steps taken.
    pub step: u64,
}

impl<S: Real> ModelParams<S> {
    pub(crate) fn empty() -> Self {
        ModelParams {
            params: Vec::new(),
            step: 0,
        }
    }

    pub(crate) fn push(&mut self, name: String, shape: Vec<usize>, trainable: bool, value: Vec<S>) -> usize {
        let len = value.len();
        assert_eq!(len, shape.iter().product::<usize>());
        self.params.push(Param {
            name,
            shape,
            value,
            grad: vec![S::zero(); len],
            m: vec![S::zero(); len],
            v: vec![S::zero(); len],
            trainable,
        });
        self.params.len() - 1
    }

    pub fn get(&self, id: usize) -> &Param<S> {
        &self.params[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<S>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<S>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(S::zero());
        }
    }

    pub(crate) fn accumulate(&mut self, id: usize, grad: &[S]) {
        for (g, &d) in self.params[id].grad.iter_mut().zip(grad) {
            *g += d;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    /// Copies values into another precision; optimizer state is reset.
    pub fn cast<T: Real>(&self) -> ModelParams<T> {
        let mut out = ModelParams::empty();
        for p in &self.params {
            out.push(
                p.name.clone(),
                p.shape.clone(),
                p.trainable,
                p.value
                    .iter()
                    .map(|v| T::from_f64_lossy(v.to_f64().unwrap()))
                    .collect(),
            );
        }
        out
    }
}

pub(crate) fn sample_init<S: Real>(init: Init, len: usize, rng: &mut Rng) -> Vec<S> {
    match init {
        Init::Zeros => vec![S::zero(); len],
        Init::Ones => vec![S::one(); len],
        Init::FanIn { fan_in, gain } => {
            let std = gain / (fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            (0..len)
                .map(|_| S::from_f64_lossy(normal.sample(rng)))
                .collect()
        }
    }
}
