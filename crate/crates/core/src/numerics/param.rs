use std::cell::RefCell;
use std::collections::HashMap;

use super::{Real, Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Learning-rate group. `Lm` covers the text transformer stack and its heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Lm,
    Other,
}

#[derive(Debug, Clone)]
pub struct Param<F> {
    pub name: String,
    pub tensor: Tensor<F>,
    pub group: ParamGroup,
}

/// Named learnable tensors, kept in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
    index: HashMap<String, ParamId>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, mut tensor: Tensor<F>, group: ParamGroup) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(TensorError::Contract(format!("parameter `{name}` registered twice")));
        }
        tensor.set_requires_grad(true);
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            tensor,
            group,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<F> {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.id(name).map(|id| self.tensor(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<F>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Euclidean norm of all accumulated gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.tensor.grad())
            .flat_map(|g| g.iter().map(|x| x.to_f64_lossy().powi(2)))
            .sum::<f64>()
            .sqrt()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    group: p.group,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn accumulate(&mut self, grads: &[(ParamId, Vec<F>)]) {
        for (id, g) in grads {
            self.params[id.0].tensor.accumulate_grad(g);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.is_finite())
    }
}

/// Lazily places parameters on a tape as gradient-tracking leaves.
pub struct Binding<'t, 's, F: Real> {
    tape: &'t Tape<F>,
    store: &'s ParamStore<F>,
    vars: RefCell<Vec<Option<Var<'t, F>>>>,
    frozen: Option<ParamGroup>,
    pinned: Vec<ParamId>,
}

impl<'t, 's, F: Real> Binding<'t, 's, F> {
    pub fn new(tape: &'t Tape<F>, store: &'s ParamStore<F>) -> Self {
        Self {
            tape,
            store,
            vars: RefCell::new(vec![None; store.len()]),
            frozen: None,
            pinned: Vec::new(),
        }
    }

    /// Parameters of `group` are bound as constants and receive no gradient.
    pub fn freezing(mut self, group: Option<ParamGroup>) -> Self {
        self.frozen = group;
        self
    }

    /// Individual parameters bound as constants, in addition to any frozen group.
    pub fn pinning(mut self, ids: &[ParamId]) -> Self {
        self.pinned = ids.to_vec();
        self
    }

    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub fn store(&self) -> &'s ParamStore<F> {
        self.store
    }

    pub fn var(&self, id: ParamId) -> Var<'t, F> {
        if let Some(v) = self.vars.borrow()[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let trainable = self.frozen != Some(p.group) && !self.pinned.contains(&id);
        let v = self.tape.leaf(p.tensor.clone(), trainable);
        self.vars.borrow_mut()[id.0] = Some(v);
        v
    }

    /// Gradients of every bound parameter after `backward`.
    pub fn grads(&self) -> Vec<(ParamId, Vec<F>)> {
        self.vars
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.and_then(|v| v.grad()).map(|g| (ParamId(i), g)))
            .collect()
    }

    /// Adds the tape's parameter gradients into `store`.
    pub fn accumulate_into(&self, store: &mut ParamStore<F>) {
        for (id, g) in self.grads() {
            store.get_mut(id).tensor.accumulate_grad(&g);
        }
    }
}
