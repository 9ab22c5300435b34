//! Dense-tensor compute graph with reverse-mode differentiation.
//!
//! Every forward pass builds a fresh [`Graph`]. Nodes hold row-major `f64`
//! buffers behind `Rc` so backward closures can capture inputs cheaply.
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients;
//! parameter leaves remember their [`ParamStore`] name so the gradients can
//! be written back after the walk.

mod ops;
#[cfg(test)]
mod tests;

pub use ops::{erf, norm_cdf, sigmoid};

use std::collections::HashMap;
use std::rc::Rc;

use thiserror::Error;

use crate::params::ParamStore;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {op} on {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGrad(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
}

/// Handle into a [`Graph`]. Cheap to copy; only valid for the graph that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor(pub(crate) usize);

type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

struct Node {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    // leaf node -> parameter name, for writing gradients back
    param_leaves: Vec<(usize, String)>,
    grads: HashMap<usize, Vec<f64>>,
    /// Post-softmax attention tensors in call order, for debug dumps.
    pub attn_probes: Vec<Tensor>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.nodes[t.0].shape
    }

    pub fn data(&self, t: Tensor) -> &[f64] {
        &self.nodes[t.0].data
    }

    pub fn grad(&self, t: Tensor) -> Option<Vec<f64>> {
        // recomputed only through backward(); exposed for tests
        self.grads.get(&t.0).cloned()
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.0].requires_grad
    }

    /// Scalar value of a 1-element tensor.
    pub fn scalar(&self, t: Tensor) -> f64 {
        debug_assert_eq!(numel(self.shape(t)), 1);
        self.nodes[t.0].data[0]
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(
            numel(shape),
            data.len(),
            "constant: shape {:?} vs data len {}",
            shape,
            data.len()
        );
        self.push(shape.to_vec(), data, false, vec![], None)
    }

    pub fn scalar_const(&mut self, v: f64) -> Tensor {
        self.constant(&[1], vec![v])
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Tensor {
        self.constant(shape, vec![0.0; numel(shape)])
    }

    /// Leaf carrying a named parameter; gradients from [`Graph::backward`]
    /// are written back to the store via [`Graph::write_grads`].
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Tensor {
        let p = store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        let t = self.push(p.shape.clone(), p.data.clone(), true, vec![], None);
        self.param_leaves.push((t.0, name.to_string()));
        t
    }

    /// Constant copy of another node; gradient does not flow through.
    pub fn detach(&mut self, t: Tensor) -> Tensor {
        let shape = self.nodes[t.0].shape.clone();
        let data = self.nodes[t.0].data.clone();
        self.nodes.push(Node {
            shape,
            data,
            requires_grad: false,
            parents: vec![],
            backward: None,
        });
        Tensor(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
    ) -> Tensor {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced by a forward op (shape {shape:?})"
        );
        self.nodes.push(Node {
            shape,
            data: Rc::new(data),
            requires_grad,
            parents,
            backward,
        });
        Tensor(self.nodes.len() - 1)
    }

    fn unary(
        &mut self,
        a: Tensor,
        shape: Vec<usize>,
        data: Vec<f64>,
        back: impl Fn(&[f64]) -> Vec<f64> + 'static,
    ) -> Tensor {
        let rg = self.nodes[a.0].requires_grad;
        let backward: Option<BackwardFn> = if rg {
            Some(Box::new(move |g| vec![back(g)]))
        } else {
            None
        };
        self.push(shape, data, rg, vec![a.0], backward)
    }

    fn binary(
        &mut self,
        a: Tensor,
        b: Tensor,
        shape: Vec<usize>,
        data: Vec<f64>,
        back: impl Fn(&[f64]) -> (Vec<f64>, Vec<f64>) + 'static,
    ) -> Tensor {
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        let backward: Option<BackwardFn> = if rg {
            Some(Box::new(move |g| {
                let (ga, gb) = back(g);
                vec![ga, gb]
            }))
        } else {
            None
        };
        self.push(shape, data, rg, vec![a.0, b.0], backward)
    }
}

// gradient storage, kept out of Node so backward can borrow node data freely
impl Graph {
    /// Reverse-mode sweep from a scalar loss. Gradients for every node that
    /// requires grad are accumulated; fetch them with [`Graph::grad`] or
    /// flush parameter gradients with [`Graph::write_grads`].
    pub fn backward(&mut self, loss: Tensor) -> Result<(), TensorError> {
        if numel(self.shape(loss)) != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: HashMap<usize, Vec<f64>> = HashMap::new();
        grads.insert(loss.0, vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads.get(&id) else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(back) = &self.nodes[id].backward else {
                continue;
            };
            let parent_grads = back(g);
            let parents = self.nodes[id].parents.clone();
            debug_assert_eq!(parent_grads.len(), parents.len());
            for (pid, pg) in parents.into_iter().zip(parent_grads) {
                if pg.is_empty() || !self.nodes[pid].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.len(), numel(&self.nodes[pid].shape));
                grads
                    .entry(pid)
                    .and_modify(|acc| {
                        for (a, b) in acc.iter_mut().zip(&pg) {
                            *a += b;
                        }
                    })
                    .or_insert(pg);
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Accumulate gradients of all parameter leaves into the store.
    /// Parameters not touched by this graph keep whatever gradient they had.
    pub fn write_grads(&self, store: &mut ParamStore) -> Result<(), TensorError> {
        for (node, name) in &self.param_leaves {
            if let Some(g) = self.grads.get(node) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }
}

impl Graph {
    pub(crate) fn node_data_rc(&self, t: Tensor) -> Rc<Vec<f64>> {
        self.nodes[t.0].data.clone()
    }

    /// Names of every parameter leaf registered on this graph, in
    /// registration order. Used by weight-sharing and dead-parameter audits.
    pub fn param_leaf_names(&self) -> Vec<String> {
        self.param_leaves.iter().map(|(_, n)| n.clone()).collect()
    }
}
