use std::collections::HashMap;

use crate::tensor::{GradModeGuard, Tensor};

/// Gradients of `sum(outputs)` with respect to each tensor in `wrt`.
///
/// Each output is seeded with ones of its own shape. Tensors in `wrt` that do
/// not influence any output get a zero gradient. With `create_graph`, the
/// returned gradients carry their own backward graph and can be
/// differentiated again.
pub fn grad(outputs: &[Tensor], wrt: &[Tensor], create_graph: bool) -> Vec<Tensor> {
    let _mode = GradModeGuard::new(create_graph);

    let wanted: HashMap<u64, usize> = wrt.iter().enumerate().map(|(i, t)| (t.id(), i)).collect();
    let order = topo_order(outputs);

    // needed[id]: a path exists from this tensor down to some `wrt` tensor.
    let mut needed: HashMap<u64, bool> = HashMap::with_capacity(order.len());
    for t in &order {
        let mut need = wanted.contains_key(&t.id());
        if let Some(node) = t.node() {
            for inp in &node.inputs {
                if needed.get(&inp.id()).copied().unwrap_or(false) {
                    need = true;
                }
            }
        }
        needed.insert(t.id(), need);
    }

    let mut grads: HashMap<u64, Tensor> = HashMap::new();
    for out in outputs {
        if out.requires_grad() && needed.get(&out.id()).copied().unwrap_or(false) {
            accumulate(&mut grads, out.id(), Tensor::ones(out.shape()));
        }
    }

    let mut results: Vec<Option<Tensor>> = vec![None; wrt.len()];
    for t in order.iter().rev() {
        if !needed[&t.id()] {
            continue;
        }
        let Some(g) = grads.remove(&t.id()) else {
            continue;
        };
        if let Some(&slot) = wanted.get(&t.id()) {
            results[slot] = Some(g.clone());
        }
        let Some(node) = t.node() else {
            continue;
        };
        let needs: Vec<bool> = node
            .inputs
            .iter()
            .map(|inp| inp.requires_grad() && needed.get(&inp.id()).copied().unwrap_or(false))
            .collect();
        if !needs.iter().any(|&n| n) {
            continue;
        }
        let input_grads = node.op.backward(&node.inputs, t, &g, &needs);
        debug_assert_eq!(input_grads.len(), node.inputs.len(), "{} backward arity", node.op.name());
        for ((inp, gi), need) in node.inputs.iter().zip(input_grads).zip(&needs) {
            if let (Some(gi), true) = (gi, *need) {
                debug_assert_eq!(gi.shape(), inp.shape(), "{} backward shape", node.op.name());
                accumulate(&mut grads, inp.id(), gi);
            }
        }
    }

    results
        .into_iter()
        .zip(wrt)
        .map(|(g, w)| g.unwrap_or_else(|| Tensor::zeros(w.shape())))
        .collect()
}

fn accumulate(grads: &mut HashMap<u64, Tensor>, id: u64, g: Tensor) {
    match grads.remove(&id) {
        Some(prev) => {
            grads.insert(id, &prev + &g);
        }
        None => {
            grads.insert(id, g);
        }
    }
}

/// Post-order over tensors that require grad: every tensor appears after all
/// of its inputs.
fn topo_order(outputs: &[Tensor]) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashMap<u64, ()> = HashMap::new();
    let mut stack: Vec<(Tensor, bool)> = outputs
        .iter()
        .rev()
        .filter(|t| t.requires_grad())
        .map(|t| (t.clone(), false))
        .collect();
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if visited.insert(t.id(), ()).is_some() {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(node) = t.node() {
            for inp in node.inputs.iter().rev() {
                if inp.requires_grad() && !visited.contains_key(&inp.id()) {
                    stack.push((inp.clone(), false));
                }
            }
        }
    }
    order
}
