use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};

use super::scalar::Scalar;
use super::tape::{Grads, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors, keyed by stable dotted block paths
/// (e.g. `encoder.stage1.fugh.conv1.weight`).
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T> {
    tensors: BTreeMap<String, Rc<Tensor<T>>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), Rc::new(t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name).map(|t| &**t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name).map(Rc::make_mut)
    }

    pub fn shared(&self, name: &str) -> Result<Rc<Tensor<T>>> {
        self.tensors
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), &**v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors
            .iter_mut()
            .map(|(k, v)| (k.as_str(), Rc::make_mut(v)))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    pub fn map_all(&mut self, f: impl Fn(&str, &mut Tensor<T>)) {
        for (k, v) in self.tensors.iter_mut() {
            f(k, Rc::make_mut(v));
        }
    }

    pub fn zeroed(&self) -> Self {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Rc::new(Tensor::zeros(v.shape()))))
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Rc::new(v.cast())))
                .collect(),
        }
    }
}

/// Uniform `±1/sqrt(fan_in)` initialization.
pub fn fan_in_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..=bound)))
}

/// Forward-pass context: the tape, the parameters, and the train/eval switch.
///
/// With `track_grads` off, parameters enter the graph as constants and no
/// backward state is kept.
pub struct Ctx<'a, T: Scalar> {
    pub tape: &'a Tape<T>,
    params: &'a ParamSet<T>,
    bound: RefCell<BTreeMap<String, Var<T>>>,
    track_grads: bool,
    pub training: bool,
    rng: RefCell<Box<dyn rand::RngCore + 'a>>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(
        tape: &'a Tape<T>,
        params: &'a ParamSet<T>,
        track_grads: bool,
        training: bool,
        rng: impl rand::RngCore + 'a,
    ) -> Self {
        Ctx {
            tape,
            params,
            bound: RefCell::new(BTreeMap::new()),
            track_grads,
            training,
            rng: RefCell::new(Box::new(rng)),
        }
    }

    /// Evaluation-mode context without gradient tracking.
    pub fn inference(tape: &'a Tape<T>, params: &'a ParamSet<T>) -> Self {
        Ctx::new(tape, params, false, false, rand_chacha::ChaCha8Rng::seed_from_u64(0))
    }

    pub fn param(&self, name: &str) -> Result<Var<T>> {
        if let Some(v) = self.bound.borrow().get(name) {
            return Ok(v.clone());
        }
        let t = self.params.shared(name)?;
        let v = if self.track_grads {
            self.tape.leaf(t)
        } else {
            Var::from_shared(t)
        };
        self.bound.borrow_mut().insert(name.to_string(), v.clone());
        Ok(v)
    }

    pub fn uniform(&self) -> f64 {
        self.rng.borrow_mut().random::<f64>()
    }

    /// Gradients of every parameter touched during the forward pass.
    pub fn collect_grads(&self, grads: &mut Grads<T>) -> BTreeMap<String, Tensor<T>> {
        self.bound
            .borrow()
            .iter()
            .filter_map(|(k, v)| grads.take(v).map(|g| (k.clone(), g)))
            .collect()
    }
}
