//! Reverse-mode automatic differentiation over [`Tensor`] kernels.
//!
//! A [`Tape`] records every tracked operation in execution order. [`Var`] is a
//! tensor bound to a tape; the lifetime ties each `Var` to exactly one tape.
//! `backward` walks the records strictly in reverse and sums the contributions
//! of every use of a value.
//!
//! ```
//! use vmat_core::autograd::Tape;
//! use vmat_core::tensor::Tensor;
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.var(Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
//! let loss = x.mul(&x).unwrap().sum();
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.get(&x).unwrap().data(), &[2.0, -4.0, 1.0]);
//! ```

mod check;
mod ops;

use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub use check::{finite_difference_check, FdOptions, FdReport};

/// Identity of a recorded value on its tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Maps the upstream gradient to one gradient per parent.
/// The `needs` mask says which parents are tracked; others may be `None`.
pub type BackwardFn<E> = Box<dyn Fn(&Tensor<E>, &[bool]) -> Result<Vec<Option<Tensor<E>>>>>;

struct Record<E: Element> {
    parents: Vec<Option<NodeId>>,
    backward: Option<BackwardFn<E>>,
}

pub struct Tape<E: Element> {
    records: RefCell<Vec<Record<E>>>,
    recording: bool,
    elements: Cell<usize>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape {
            records: RefCell::new(Vec::new()),
            recording: true,
            elements: Cell::new(0),
        }
    }

    /// A tape that records nothing: every op runs forward only.
    pub fn no_grad() -> Self {
        Tape {
            records: RefCell::new(Vec::new()),
            recording: false,
            elements: Cell::new(0),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total elements of every recorded op output; a proxy for the memory a backward pass keeps alive.
    pub fn recorded_elements(&self) -> usize {
        self.elements.get()
    }

    /// A leaf that receives a gradient.
    pub fn var(&self, value: Tensor<E>) -> Var<'_, E> {
        if !self.recording {
            return self.constant(value);
        }
        let mut records = self.records.borrow_mut();
        records.push(Record {
            parents: Vec::new(),
            backward: None,
        });
        Var {
            tape: self,
            value,
            node: Some(NodeId(records.len() - 1)),
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<E>) -> Var<'_, E> {
        Var {
            tape: self,
            value,
            node: None,
        }
    }

    /// Records an op producing `value` from `parents`. Untracked results skip the closure.
    pub fn record<'t, F>(&'t self, value: Tensor<E>, parents: &[&Var<'t, E>], backward: F) -> Var<'t, E>
    where
        F: Fn(&Tensor<E>, &[bool]) -> Result<Vec<Option<Tensor<E>>>> + 'static,
    {
        let parent_ids: Vec<Option<NodeId>> = parents.iter().map(|p| p.node).collect();
        if !self.recording || parent_ids.iter().all(Option::is_none) {
            return self.constant(value);
        }
        self.elements.set(self.elements.get() + value.numel());
        let mut records = self.records.borrow_mut();
        records.push(Record {
            parents: parent_ids,
            backward: Some(Box::new(backward)),
        });
        Var {
            tape: self,
            value,
            node: Some(NodeId(records.len() - 1)),
        }
    }

    /// Gradients of a scalar `loss` with respect to every leaf it depends on.
    pub fn backward(&self, loss: &Var<'_, E>) -> Result<Gradients<E>> {
        if loss.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.value.dims()
            )));
        }
        let root = loss
            .node
            .ok_or_else(|| Error::Contract("loss does not depend on any tracked variable".into()))?;
        let records = self.records.borrow();
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(loss.value.dims().to_vec(), E::one())?);
        let mut leaves = HashMap::new();
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let rec = &records[i];
            let Some(backward) = &rec.backward else {
                leaves.insert(NodeId(i), g);
                continue;
            };
            let needs: Vec<bool> = rec.parents.iter().map(Option::is_some).collect();
            let parent_grads = backward(&g, &needs)?;
            for (parent, pg) in rec.parents.iter().zip(parent_grads) {
                let (Some(p), Some(pg)) = (parent, pg) else { continue };
                grads[p.0] = Some(match grads[p.0].take() {
                    None => pg,
                    Some(acc) => acc.zip_map(&pg, "gradient accumulation", |a, b| a + b)?,
                });
            }
        }
        Ok(Gradients { leaves })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<E: Element> {
    leaves: HashMap<NodeId, Tensor<E>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, var: &Var<'_, E>) -> Option<&Tensor<E>> {
        var.node.and_then(|id| self.leaves.get(&id))
    }

    /// Gradient of `var`, or zeros when the loss does not reach it.
    pub fn get_or_zero(&self, var: &Var<'_, E>) -> Tensor<E> {
        self.get(var).cloned().unwrap_or_else(|| var.value.zeros_like())
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}

/// A tensor bound to a tape.
#[derive(Clone)]
pub struct Var<'t, E: Element> {
    tape: &'t Tape<E>,
    value: Tensor<E>,
    node: Option<NodeId>,
}

impl<E: Element> std::fmt::Debug for Var<'_, E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({:?}, node={:?})", self.value, self.node)
    }
}

impl<'t, E: Element> Var<'t, E> {
    pub fn value(&self) -> &Tensor<E> {
        &self.value
    }

    pub fn into_value(self) -> Tensor<E> {
        self.value
    }

    pub fn dims(&self) -> &[usize] {
        self.value.dims()
    }

    pub fn tape(&self) -> &'t Tape<E> {
        self.tape
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, E> {
        self.tape.constant(self.value.clone())
    }
}
