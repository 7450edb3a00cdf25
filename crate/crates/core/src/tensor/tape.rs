use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Everything a backward rule may look at.
pub struct BackwardCtx<'a, T: Element> {
    /// Upstream gradient, same layout as `output`.
    pub grad: &'a [T],
    pub output: &'a Tensor<T>,
    pub inputs: Vec<&'a Tensor<T>>,
    /// Whether each input wants a gradient.
    pub needs_grad: Vec<bool>,
}

/// Vector-Jacobian product of one recorded operation.
///
/// Returns one entry per input; `None` for inputs that need no gradient.
pub trait Backward<T: Element> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Element> {
    value: Tensor<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
    inputs: Vec<Var>,
    op: Option<Box<dyn Backward<T>>>,
}

/// Linear record of a forward computation.
///
/// Nodes are appended in execution order, so inputs always precede their
/// consumers and a reverse sweep is a valid topological traversal.
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            inputs: Vec::new(),
            op: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn any_requires_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    /// Accumulated gradient of `v`, if any reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).expect("grad shape"))
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].grad.take()
    }

    /// Record the result of an operation. The backward rule is only kept when
    /// some input requires a gradient.
    pub fn record<B: Backward<T> + 'static>(&mut self, inputs: &[Var], output: Tensor<T>, op: B) -> Var {
        let requires_grad = self.any_requires_grad(inputs);
        self.nodes.push(Node {
            value: output,
            requires_grad,
            grad: None,
            inputs: inputs.to_vec(),
            op: requires_grad.then(|| Box::new(op) as Box<dyn Backward<T>>),
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate additively
    /// into every reachable node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(Error::Contract(
                "backward() on a value that does not depend on any parameter".into(),
            ));
        }
        accumulate(&mut self.nodes[loss.0].grad, vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &mut tail[0];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(grad) = node.grad.as_ref() else { continue };
            let ctx = BackwardCtx {
                grad,
                output: &node.value,
                inputs: node.inputs.iter().map(|v| &head[v.0].value).collect(),
                needs_grad: node.inputs.iter().map(|v| head[v.0].requires_grad).collect(),
            };
            let grads = op.backward(&ctx);
            debug_assert_eq!(grads.len(), node.inputs.len());
            for (v, g) in node.inputs.iter().zip(grads) {
                if let Some(g) = g {
                    let target = &mut head[v.0];
                    if target.requires_grad {
                        debug_assert_eq!(g.len(), target.value.numel());
                        accumulate(&mut target.grad, g);
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Element>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}
