//! Named parameter tensors with per-tensor ADAM state.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`]; stable for the store's
/// lifetime (parameters are only ever appended).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub value: Vec<f64>,
    /// ADAM first moment.
    pub m: Vec<f64>,
    /// ADAM second moment.
    pub v: Vec<f64>,
    /// ADAM step counter.
    pub t: u64,
}

/// Ordered collection of named parameter tensors. Registration order is
/// fixed by construction, which keeps serialization deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor; `rows x cols` with `cols = 1` for plain vectors.
    pub fn register(&mut self, name: &str, rows: usize, cols: usize, value: Vec<f64>) -> ParamId {
        assert_eq!(value.len(), rows * cols, "parameter {name} shape mismatch");
        assert!(
            !self.index.contains_key(name),
            "parameter {name} registered twice"
        );
        let id = ParamId(self.entries.len());
        let len = value.len();
        self.entries.push(Param {
            name: name.to_string(),
            rows,
            cols,
            value,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        });
        self.index.insert(name.to_string(), id.0);
        id
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::Lookup(format!("unknown parameter '{name}'")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.entries[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Param> {
        Ok(self.get(self.id(name)?))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Result<&mut Param> {
        let id = self.id(name)?;
        Ok(self.get_mut(id))
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    /// Fresh gradient store aligned with this parameter store.
    pub fn grad_store(&self) -> GradStore {
        GradStore {
            grads: vec![None; self.entries.len()],
        }
    }
}

/// Gradients aligned to a [`ParamStore`]; `None` means the parameter did not
/// appear in the differentiated graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GradStore {
    grads: Vec<Option<Vec<f64>>>,
}

impl GradStore {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn by_name<'a>(&'a self, store: &ParamStore, name: &str) -> Result<Option<&'a [f64]>> {
        Ok(self.get(store.id(name)?))
    }

    /// Mutable accumulation buffer for `id`, zero-initialized on first touch.
    pub fn accum(&mut self, id: ParamId, len: usize) -> &mut [f64] {
        self.grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn set(&mut self, id: ParamId, grad: Vec<f64>) {
        self.grads[id.0] = Some(grad);
    }

    pub fn touched(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_deref().map(|g| (ParamId(i), g)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!(
                "adam: lr must be > 0, got {}",
                self.lr
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!(
                    "adam: {name} must be in [0, 1), got {b}"
                )));
            }
        }
        Ok(())
    }
}

/// One ADAM update with bias correction over every tensor present in
/// `grads`. A tensor's step counter advances whenever it is present;
/// elements whose gradient is exactly zero are left untouched, so a
/// zero-gradient step is the identity on parameters and embedding-style
/// tensors (speaker codes) only move when their speaker occurs in the batch.
pub fn adam_step(params: &mut ParamStore, grads: &GradStore, hyper: &AdamHyper) -> Result<()> {
    hyper.validate()?;
    if grads.grads.len() != params.entries.len() {
        return Err(Error::Shape(format!(
            "adam: gradient store covers {} tensors but the parameter store has {}",
            grads.grads.len(),
            params.entries.len()
        )));
    }
    for (entry, grad) in params.entries.iter_mut().zip(&grads.grads) {
        let Some(grad) = grad else { continue };
        if grad.len() != entry.value.len() {
            return Err(Error::Shape(format!(
                "adam: gradient for '{}' has {} elements, parameter has {}",
                entry.name,
                grad.len(),
                entry.value.len()
            )));
        }
        entry.t += 1;
        let t = entry.t as i32;
        let bias1 = 1.0 - hyper.beta1.powi(t);
        let bias2 = 1.0 - hyper.beta2.powi(t);
        for (((p, g), m), v) in entry
            .value
            .iter_mut()
            .zip(grad)
            .zip(entry.m.iter_mut())
            .zip(entry.v.iter_mut())
        {
            if *g == 0.0 {
                continue;
            }
            *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
            *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(p: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.register("p", 1, 1, vec![p]);
        (store, id)
    }

    #[test]
    fn zero_gradient_fresh_state_is_identity_and_counts() {
        let (mut store, id) = scalar_store(0.7);
        let mut grads = store.grad_store();
        grads.set(id, vec![0.0]);
        adam_step(&mut store, &grads, &AdamHyper::default()).unwrap();
        assert_eq!(store.get(id).value, vec![0.7]);
        assert_eq!(store.get(id).t, 1);
    }

    #[test]
    fn zero_gradient_is_identity_for_all_states() {
        let (mut store, id) = scalar_store(0.0);
        let hyper = AdamHyper::default();
        // Build up nonzero moments first.
        for _ in 0..5 {
            let mut grads = store.grad_store();
            grads.set(id, vec![1.0]);
            adam_step(&mut store, &grads, &hyper).unwrap();
        }
        let before = store.get(id).value.clone();
        let mut grads = store.grad_store();
        grads.set(id, vec![0.0]);
        adam_step(&mut store, &grads, &hyper).unwrap();
        assert_eq!(store.get(id).value, before);
    }

    #[test]
    fn first_step_magnitude_is_the_learning_rate() {
        // Bias-corrected first step: m_hat = g, v_hat = g^2, so the update is
        // lr * g / (|g| + eps) ~= lr * sign(g).
        let (mut store, id) = scalar_store(0.0);
        let mut grads = store.grad_store();
        grads.set(id, vec![1.0]);
        let hyper = AdamHyper {
            lr: 1e-4,
            ..Default::default()
        };
        adam_step(&mut store, &grads, &hyper).unwrap();
        let p = store.get(id).value[0];
        assert!((p + 1e-4).abs() < 1e-11, "first step {p}");
    }

    #[test]
    fn repeated_gradient_keeps_update_sign() {
        let (mut store, id) = scalar_store(0.0);
        let hyper = AdamHyper::default();
        let mut prev = 0.0;
        for _ in 0..2 {
            let mut grads = store.grad_store();
            grads.set(id, vec![0.3]);
            adam_step(&mut store, &grads, &hyper).unwrap();
            let p = store.get(id).value[0];
            assert!(p < prev, "update must move against the gradient");
            prev = p;
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (mut store, id) = scalar_store(0.0);
        let mut grads = store.grad_store();
        grads.set(id, vec![1.0, 2.0]);
        assert!(matches!(
            adam_step(&mut store, &grads, &AdamHyper::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn untouched_tensors_do_not_advance() {
        let mut store = ParamStore::new();
        let a = store.register("a", 1, 1, vec![1.0]);
        let b = store.register("b", 1, 1, vec![2.0]);
        let mut grads = store.grad_store();
        grads.set(a, vec![0.5]);
        adam_step(&mut store, &grads, &AdamHyper::default()).unwrap();
        assert_eq!(store.get(b).t, 0);
        assert_eq!(store.get(b).value, vec![2.0]);
        assert_ne!(store.get(a).value, vec![1.0]);
    }
}
