use eaf_autograd::{Element, Tape, Var};
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

/// Index into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamEntry<E: Element> {
    pub name: String,
    pub value: ArrayD<E>,
    /// Participates in optimization.
    pub trainable: bool,
    /// Receives L2 weight decay (conv/affine weights only).
    pub decay: bool,
}

/// Flat, name-addressed registry of parameters and buffers.
#[derive(Debug, Clone)]
pub struct ParamStore<E: Element> {
    pub entries: Vec<ParamEntry<E>>,
    rng: ChaCha20Rng,
}

impl<E: Element> ParamStore<E> {
    pub fn new(seed: u64) -> Self {
        Self {
            entries: Vec::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn add(&mut self, name: &str, value: ArrayD<E>, trainable: bool, decay: bool) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            trainable,
            decay,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Fan-in-scaled random normal weight tensor.
    pub fn add_weight(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("valid std");
        let value = ArrayD::from_shape_fn(IxDyn(shape), |_| {
            E::from_f64(dist.sample(&mut self.rng))
        });
        self.add(name, value, true, true)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize], trainable: bool) -> ParamId {
        self.add(name, ArrayD::zeros(IxDyn(shape)), trainable, false)
    }

    pub fn add_ones(&mut self, name: &str, shape: &[usize], trainable: bool) -> ParamId {
        self.add(name, ArrayD::from_elem(IxDyn(shape), E::one()), trainable, false)
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<E> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<E> {
        &mut self.entries[id.0].value
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One forward pass: ties a tape to the store, inserting each used parameter
/// as a leaf exactly once so gradients can be read back per parameter.
pub struct ForwardCtx<'a, E: Element> {
    pub tape: &'a mut Tape<E>,
    pub training: bool,
    vars: Vec<Option<Var>>,
}

impl<'a, E: Element> ForwardCtx<'a, E> {
    pub fn new(tape: &'a mut Tape<E>, store: &ParamStore<E>, training: bool) -> Self {
        Self {
            tape,
            training,
            vars: vec![None; store.len()],
        }
    }

    pub fn param(&mut self, store: &ParamStore<E>, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let trainable = store.entries[id.0].trainable;
        let v = self.tape.leaf(store.value(id).clone(), trainable);
        self.vars[id.0] = Some(v);
        v
    }

    /// (param id, tape var) for every parameter touched by the pass.
    pub fn used_params(&self) -> Vec<(ParamId, Var)> {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect()
    }
}
