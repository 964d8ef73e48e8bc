use std::collections::{HashMap, HashSet};

use super::{Inner, Real, Result, Tensor, TensorError};

/// Backward rule of a recorded operation.
pub trait Backward<T: Real> {
    fn name(&self) -> &'static str;

    /// Vector-Jacobian product: given the gradient flowing into `output`,
    /// return one entry per input (in input order), `None` where the input
    /// receives no gradient.
    fn backward(
        &self,
        inputs: &[Tensor<T>],
        output: &Tensor<T>,
        grad: &[T],
    ) -> Result<Vec<Option<Vec<T>>>>;
}

/// Recorded operation without a gradient.
pub(crate) struct NotDifferentiable(pub(crate) &'static str);

impl<T: Real> Backward<T> for NotDifferentiable {
    fn name(&self) -> &'static str {
        self.0
    }

    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, _: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        Err(TensorError::NoBackwardRule(self.0))
    }
}

/// Nodes reachable from `root` that require a gradient, consumers before
/// their inputs.
fn reverse_topological<T: Real>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut post = Vec::new();
    let mut seen: HashSet<*const Inner<T>> = HashSet::new();
    // (tensor, inputs expanded?)
    let mut stack = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            post.push(t);
            continue;
        }
        if !seen.insert(t.ptr()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(node) = t.node() {
            for input in node.inputs.iter().rev() {
                if input.requires_grad() && !seen.contains(&input.ptr()) {
                    stack.push((input.clone(), false));
                }
            }
        }
    }
    post.reverse();
    post
}

impl<T: Real> Tensor<T> {
    /// Accumulates `d self / d leaf` into the gradient slot of every leaf that
    /// requires a gradient. Calling it twice without [`Tensor::zero_grad`]
    /// adds the gradients twice.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(TensorError::NonScalarRoot(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = reverse_topological(self);
        let mut pending: HashMap<*const Inner<T>, Vec<T>> = HashMap::new();
        pending.insert(self.ptr(), vec![T::one()]);
        for t in &order {
            let Some(g) = pending.remove(&t.ptr()) else {
                continue;
            };
            let Some(node) = t.node() else {
                t.accumulate_grad(&g);
                continue;
            };
            let input_grads = node.op.backward(&node.inputs, t, &g)?;
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.op.name());
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !input.requires_grad() {
                    continue;
                }
                if ig.len() != input.len() {
                    return Err(TensorError::ShapeMismatch {
                        op: node.op.name(),
                        lhs: vec![ig.len()],
                        rhs: input.shape().to_vec(),
                    });
                }
                match pending.get_mut(&input.ptr()) {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, &b)| *a = *a + b),
                    None => {
                        pending.insert(input.ptr(), ig);
                    }
                }
            }
        }
        Ok(())
    }
}
