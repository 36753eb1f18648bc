//! Dynamic reverse-mode tape.
//!
//! Every op evaluates eagerly and, if any input requires a gradient, pushes a
//! closure that maps the output gradient to input gradients. Nodes are
//! appended in evaluation order, so walking them backwards is a valid
//! topological order.

use std::cell::RefCell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &mut GradSink)>;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    pub(crate) graph: &'g Graph,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

impl<'g> Var<'g> {
    pub fn value(&self) -> Rc<Tensor> {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.graph.nodes.borrow()[self.id].value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var { graph: self, id: nodes.len() - 1 }
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(Node { value: Rc::new(value), requires_grad: false, backward: None, param: None })
    }

    /// Leaf that receives a gradient but is not a stored parameter.
    pub fn input(&self, value: Tensor) -> Var<'_> {
        self.push_node(Node { value: Rc::new(value), requires_grad: true, backward: None, param: None })
    }

    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        let value = store.get(id).clone();
        self.push_node(Node { value: Rc::new(value), requires_grad: true, backward: None, param: Some(id) })
    }

    /// Binds every parameter of the store as a leaf, indexed by `ParamId`.
    pub fn bind(&self, store: &ParamStore) -> Vec<Var<'_>> {
        (0..store.len()).map(|i| self.param(store, ParamId(i))).collect()
    }

    /// Binds every parameter as a constant, for gradient-free evaluation.
    pub fn bind_frozen(&self, store: &ParamStore) -> Vec<Var<'_>> {
        store.entries.iter().map(|e| self.constant(e.value.clone())).collect()
    }

    /// Records an op result. The backward closure is dropped when no input
    /// needs a gradient.
    pub(crate) fn record(&self, value: Tensor, inputs: &[Var<'_>], backward: BackwardFn) -> Var<'_> {
        self.record_shared(Rc::new(value), inputs, backward)
    }

    /// Like [`Graph::record`] for a value the backward closure also holds.
    pub(crate) fn record_shared(&self, value: Rc<Tensor>, inputs: &[Var<'_>], backward: BackwardFn) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        self.push_node(Node {
            value,
            requires_grad,
            backward: requires_grad.then_some(backward),
            param: None,
        })
    }

    /// Runs reverse accumulation from a scalar output.
    pub fn backward(&self, output: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let n = output.id + 1;
        let mut sink = GradSink {
            grads: (0..n).map(|_| None).collect(),
            lens: nodes[..n].iter().map(|nd| nd.value.numel()).collect(),
            requires: nodes[..n].iter().map(|nd| nd.requires_grad).collect(),
        };
        assert_eq!(nodes[output.id].value.numel(), 1, "backward() needs a scalar output");
        sink.grads[output.id] = Some(vec![1.0]);
        for id in (0..n).rev() {
            let Some(grad) = sink.grads[id].take() else { continue };
            match &nodes[id].backward {
                // Interior gradients are dropped once propagated.
                Some(bw) => bw(&grad, &mut sink),
                None => sink.grads[id] = Some(grad),
            }
        }
        let params = nodes[..n].iter().map(|nd| nd.param).collect();
        Gradients { grads: sink.grads, params }
    }
}

/// Output-to-input gradient accumulator handed to backward closures.
pub struct GradSink {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
    requires: Vec<bool>,
}

impl GradSink {
    /// Mutable gradient buffer of `var`, or `None` when it needs no gradient.
    pub fn slot(&mut self, var: usize) -> Option<&mut [f64]> {
        if !self.requires[var] {
            return None;
        }
        let len = self.lens[var];
        Some(self.grads[var].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
    }

    pub fn wants(&self, var: usize) -> bool {
        self.requires[var]
    }

    pub fn add(&mut self, var: usize, g: &[f64]) {
        if let Some(slot) = self.slot(var) {
            for (s, v) in slot.iter_mut().zip(g) {
                *s += v;
            }
        }
    }
}

pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<Option<ParamId>>,
}

impl Gradients {
    pub fn of(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    /// Per-parameter gradients, summed over every leaf bound to the same id.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = store.entries.iter().map(|e| vec![0.0; e.value.numel()]).collect();
        for (g, p) in self.grads.iter().zip(&self.params) {
            if let (Some(g), Some(p)) = (g, p) {
                for (o, v) in out[p.0].iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Optimizer group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Weight-decayed matrices.
    Main,
    /// Biases, norms and gate scalars: main hyperparameters, no decay.
    NoDecay,
    /// Per-(head, cursor) position-score coefficients.
    Alpha,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, group, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }
}
