use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::tensor::{Parameter, Tensor};
use crate::error::{Error, Result};

/// Forward value held by a tape node.
#[derive(Debug, Clone)]
pub struct Value {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Value {
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[1..].iter().product()
        }
    }
}

pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &mut GradAcc)>;

struct Node {
    value: Rc<Value>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Records one forward pass. Dropped after the matching backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.value();
        write!(f, "Var#{}{:?}", self.id, v.shape)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(
        &self,
        value: Value,
        requires_grad: bool,
        backward: Option<BackwardFn>,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            backward: if requires_grad { backward } else { None },
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf node; tracks gradients iff `t.requires_grad`.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push(
            Value {
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            },
            t.requires_grad,
            None,
        )
    }

    pub fn constant(&self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var<'_>> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(
            Value {
                shape: t.shape().to_vec(),
                data: t.into_data(),
            },
            false,
            None,
        ))
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.push(
            Value {
                shape: vec![1],
                data: vec![v],
            },
            false,
            None,
        )
    }

    /// Binds a parameter. Frozen parameters still carry gradient *through*
    /// them to upstream nodes but never receive one themselves.
    pub fn param(&self, p: &Parameter, trainable: bool) -> Var<'_> {
        self.push(
            Value {
                shape: p.tensor.shape().to_vec(),
                data: p.tensor.data().to_vec(),
            },
            trainable,
            None,
        )
    }

    /// Reverse pass from a single-element root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let rv = &nodes[root.id].value;
        if rv.data.len() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar root, got shape {:?}",
                rv.shape
            )));
        }
        let mut acc = GradAcc {
            grads: (0..nodes.len()).map(|_| None).collect(),
            lens: nodes.iter().map(|n| n.value.data.len()).collect(),
        };
        if nodes[root.id].requires_grad {
            acc.grads[root.id] = Some(vec![1.0]);
        }
        for id in (0..=root.id).rev() {
            let Some(g) = acc.grads[id].take() else {
                continue;
            };
            if let Some(bw) = &nodes[id].backward {
                bw(&g, &mut acc);
            }
            acc.grads[id] = Some(g);
        }
        Ok(Gradients { grads: acc.grads })
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Value> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

/// Gradient accumulator handed to backward closures.
pub(crate) struct GradAcc {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl GradAcc {
    /// Zero-initialized (on first use) gradient buffer of node `id`.
    pub fn slot(&mut self, id: usize) -> &mut [f64] {
        let n = self.lens[id];
        self.grads[id].get_or_insert_with(|| vec![0.0; n])
    }
}

/// Result of a backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var<'_>) -> Option<Vec<f64>> {
        self.grads.get_mut(v.id).and_then(Option::take)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Value> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape.clone()
    }

    pub fn data(&self) -> Vec<f64> {
        self.value().data.clone()
    }

    pub fn item(&self) -> f64 {
        self.value().data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    pub fn to_tensor(&self) -> Tensor {
        let v = self.value();
        Tensor::new(v.shape.clone(), v.data.clone()).expect("tape values are well-formed")
    }
}
