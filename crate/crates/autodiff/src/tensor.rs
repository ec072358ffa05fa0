//! Dense row-major `f64` tensors that record the operations producing them.
//!
//! Every op builds its result eagerly and, when gradients are enabled and at
//! least one input requires them, attaches a backward node. Backward rules are
//! themselves written in terms of tensor ops, so running [`crate::grad`] with
//! `create_graph = true` yields gradients that can be differentiated again.

use std::cell::Cell;
use std::fmt;
use std::rc::Rc;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<u64> = const { Cell::new(1) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Whether newly created ops record backward nodes on this thread.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Restores the previous grad mode on drop.
pub struct GradModeGuard {
    prev: bool,
}

impl GradModeGuard {
    pub fn new(enabled: bool) -> Self {
        let prev = GRAD_ENABLED.with(|c| c.replace(enabled));
        GradModeGuard { prev }
    }
}

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|c| c.set(self.prev));
    }
}

/// Runs `f` without recording any backward nodes.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = GradModeGuard::new(false);
    f()
}

pub(crate) trait BackwardOp {
    fn name(&self) -> &'static str;

    /// Gradients for each input given the gradient of the output.
    /// `needs[i]` is false when the caller will discard input `i`'s gradient.
    fn backward(
        &self,
        inputs: &[Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

pub(crate) struct Node {
    pub(crate) op: Box<dyn BackwardOp>,
    pub(crate) inputs: Vec<Tensor>,
}

pub(crate) struct Inner {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Rc<Vec<f64>>,
    pub(crate) node: Option<Node>,
    pub(crate) requires_grad: bool,
}

impl Drop for Inner {
    // Long recurrent graphs would otherwise drop recursively, one stack frame
    // per op.
    fn drop(&mut self) {
        let Some(node) = self.node.take() else {
            return;
        };
        let mut stack: Vec<Tensor> = node.inputs;
        while let Some(t) = stack.pop() {
            if let Ok(mut inner) = Rc::try_unwrap(t.0) {
                if let Some(n) = inner.node.take() {
                    stack.extend(n.inputs);
                }
            }
        }
    }
}

#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("op", &self.0.node.as_ref().map(|n| n.op.name()))
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn make(data: Rc<Vec<f64>>, shape: Vec<usize>, node: Option<Node>, requires_grad: bool) -> Tensor {
        assert_eq!(
            data.len(),
            numel(&shape),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Rc::new(Inner {
            id: next_id(),
            shape,
            data,
            node,
            requires_grad,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Tensor {
        Tensor::make(Rc::new(data), shape.to_vec(), None, false)
    }

    /// Leaf tensor that gradients can be taken with respect to.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Tensor {
        Tensor::make(Rc::new(data), shape.to_vec(), None, true)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(vec![v], &[])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::from_vec(vec![0.0; numel(shape)], shape)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::from_vec(vec![1.0; numel(shape)], shape)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        Tensor::from_vec(vec![v; numel(shape)], shape)
    }

    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        op: impl BackwardOp + 'static,
        inputs: Vec<Tensor>,
    ) -> Tensor {
        let track = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if track {
            Tensor::make(
                Rc::new(data),
                shape,
                Some(Node {
                    op: Box::new(op),
                    inputs,
                }),
                true,
            )
        } else {
            Tensor::make(Rc::new(data), shape, None, false)
        }
    }

    /// Same data, new shape, constant. Shares storage.
    pub(crate) fn share_reshaped(&self, shape: Vec<usize>) -> Tensor {
        Tensor::make(self.0.data.clone(), shape, None, false)
    }

    pub(crate) fn share_reshaped_op(
        &self,
        shape: Vec<usize>,
        op: impl BackwardOp + 'static,
    ) -> Tensor {
        let track = is_grad_enabled() && self.requires_grad();
        let node = track.then(|| Node {
            op: Box::new(op),
            inputs: vec![self.clone()],
        });
        Tensor::make(self.0.data.clone(), shape, node, track)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// Constant view of the same values; gradients stop here.
    pub fn detach(&self) -> Tensor {
        self.share_reshaped(self.0.shape.clone())
    }

    /// Constant copy that is a gradient leaf.
    pub fn detach_requiring_grad(&self) -> Tensor {
        Tensor::make(self.0.data.clone(), self.0.shape.clone(), None, true)
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    pub(crate) fn node(&self) -> Option<&Node> {
        self.0.node.as_ref()
    }
}
