use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Handle to a node in the recorded graph of one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    pub(crate) idx: usize,
}

/// Handle to a trainable parameter registered on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

type BackFn<E> = Box<dyn Fn(&Tensor<E>, &mut GradBuf<E>) + Send>;

struct Node<E> {
    value: Tensor<E>,
    back: Option<BackFn<E>>,
    param: Option<usize>,
}

/// Per-node gradient slots used during one backward sweep.
pub struct GradBuf<E> {
    slots: Vec<Option<Tensor<E>>>,
}

impl<E: Scalar> GradBuf<E> {
    /// Add a full gradient contribution for `v`.
    pub fn accum(&mut self, v: Var, g: Tensor<E>) {
        match &mut self.slots[v.idx] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Accumulate into the (possibly fresh, zero-filled) gradient of `v` in place.
    pub fn accum_map(&mut self, v: Var, shape: &[usize], f: impl FnOnce(&mut [E])) {
        let slot = &mut self.slots[v.idx];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(shape));
        }
        f(slot.as_mut().unwrap().data_mut());
    }
}

/// Trainable parameter: value plus a gradient buffer of equal shape.
pub struct Param<E> {
    name: String,
    value: Tensor<E>,
    grad: Tensor<E>,
}

/// Parameter registry plus the operation graph recorded for one forward pass.
///
/// The registry persists across passes; the graph is rebuilt every episode
/// with `clear_graph`. The tape is confined to one training thread; evaluation
/// workers get their own tape via `fork_params`.
pub struct Tape<E> {
    params: Vec<Param<E>>,
    nodes: Vec<Node<E>>,
    recording: bool,
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Tape { params: Vec::new(), nodes: Vec::new(), recording: true }
    }

    /// When off, ops compute values but record no backward closures.
    pub fn set_recording(&mut self, on: bool) {
        self.recording = on;
    }

    pub fn recording(&self) -> bool {
        self.recording
    }

    pub fn register_param(&mut self, name: &str, init: Tensor<E>) -> ParamId {
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(init.shape());
        self.params.push(Param { name: name.to_string(), value: init, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn param_name(&self, p: ParamId) -> &str {
        &self.params[p.0].name
    }

    pub fn param_value(&self, p: ParamId) -> &Tensor<E> {
        &self.params[p.0].value
    }

    pub fn param_grad(&self, p: ParamId) -> &Tensor<E> {
        &self.params[p.0].grad
    }

    pub fn set_param_value(&mut self, p: ParamId, value: Tensor<E>) {
        assert_eq!(value.shape(), self.params[p.0].value.shape(), "param shape is fixed");
        self.params[p.0].value = value;
    }

    pub fn find_param(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Bring a parameter into the current graph as a leaf.
    pub fn param(&mut self, p: ParamId) -> Var {
        let value = self.params[p.0].value.clone();
        self.nodes.push(Node { value, back: None, param: Some(p.0) });
        Var { idx: self.nodes.len() - 1 }
    }

    /// Record a constant (non-differentiable) leaf.
    pub fn leaf(&mut self, value: Tensor<E>) -> Var {
        self.nodes.push(Node { value, back: None, param: None });
        Var { idx: self.nodes.len() - 1 }
    }

    pub(crate) fn push(&mut self, value: Tensor<E>, back: Option<BackFn<E>>) -> Var {
        let back = if self.recording { back } else { None };
        self.nodes.push(Node { value, back, param: None });
        Var { idx: self.nodes.len() - 1 }
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.idx].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.idx].value.shape()
    }

    /// Reverse sweep from a scalar root; accumulates into parameter gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.recording {
            return Err(Error::invalid("backward", "tape is not recording".to_string()));
        }
        let root_val = self.value(root);
        if root_val.len() != 1 {
            return Err(Error::shape("backward", format!("root has shape {:?}, want scalar", root_val.shape())));
        }
        if !root_val.item().is_finite() {
            return Err(Error::NonFinite("backward root".to_string()));
        }
        let mut grads = GradBuf { slots: (0..self.nodes.len()).map(|_| None).collect() };
        grads.slots[root.idx] = Some(Tensor::scalar(E::one()));
        let (nodes, params) = (&self.nodes, &mut self.params);
        for idx in (0..=root.idx).rev() {
            let Some(g) = grads.slots[idx].take() else { continue };
            let node = &nodes[idx];
            if let Some(pid) = node.param {
                params[pid].grad.add_assign(&g);
            }
            if let Some(back) = &node.back {
                back(&g, &mut grads);
            }
        }
        Ok(())
    }

    /// Drop the recorded graph; parameters and their gradients survive.
    pub fn clear_graph(&mut self) {
        self.nodes.clear();
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.value.shape());
        }
    }

    /// Clear the tape: drop the graph and zero every gradient buffer.
    pub fn clear(&mut self) {
        self.clear_graph();
        self.zero_grads();
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// New tape sharing this tape's parameter values (fresh zero gradients,
    /// empty graph). ParamIds remain valid on the fork.
    pub fn fork_params(&self) -> Tape<E> {
        let params = self
            .params
            .iter()
            .map(|p| Param {
                name: p.name.clone(),
                value: p.value.clone(),
                grad: Tensor::zeros(p.value.shape()),
            })
            .collect();
        Tape { params, nodes: Vec::new(), recording: true }
    }

    /// Parameters in registration order, for checkpointing.
    pub fn params_snapshot(&self) -> Vec<(String, Tensor<E>)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clearing_zeroes_gradients() {
        let mut tape = Tape::<f64>::new();
        let p = tape.register_param("w", Tensor::filled(&[3], 2.0));
        let v = tape.param(p);
        let s = tape.sum_all(v);
        tape.backward(s).unwrap();
        assert_eq!(tape.param_grad(p).data(), &[1.0, 1.0, 1.0]);
        tape.clear();
        assert_eq!(tape.param_grad(p).data(), &[0.0, 0.0, 0.0]);
        assert_eq!(tape.node_count(), 0);
    }

    #[test]
    fn grad_buffer_shape_matches_param() {
        let mut tape = Tape::<f32>::new();
        let p = tape.register_param("w", Tensor::zeros(&[2, 3]));
        assert_eq!(tape.param_grad(p).shape(), tape.param_value(p).shape());
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::<f64>::new();
        let v = tape.leaf(Tensor::zeros(&[2]));
        assert!(tape.backward(v).is_err());
    }

    #[test]
    fn backward_rejects_non_finite_root() {
        let mut tape = Tape::<f64>::new();
        let v = tape.leaf(Tensor::scalar(f64::NAN));
        assert!(tape.backward(v).is_err());
    }

    #[test]
    fn param_gradient_accumulates_over_reuse() {
        let mut tape = Tape::<f64>::new();
        let p = tape.register_param("w", Tensor::scalar(3.0));
        let a = tape.param(p);
        let b = tape.param(p);
        let s = tape.mul(a, b).unwrap(); // w^2
        tape.backward(s).unwrap();
        assert_eq!(tape.param_grad(p).item(), 6.0);
    }
}
