use super::tape::{Input, Node, Op, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[cfg(test)]
thread_local! {
    /// Mutation hook for tests: flips the sign of the `tanh` backward rule.
    pub(crate) static FLIP_TANH_BACKWARD: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

/// Gradient of the scalar `output` with respect to each tensor in `wrt`.
///
/// With `create_graph` the backward computation is itself recorded onto
/// the tape, so the returned gradients can be differentiated again.
/// A `wrt` tensor that `output` does not depend on gets zeros.
pub fn gradient(output: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    if !output.is_scalar() {
        return Err(Error::Autodiff(format!(
            "gradient needs a scalar output, got shape {:?}",
            output.shape()
        )));
    }
    let out_ref = output
        .node
        .as_ref()
        .ok_or_else(|| Error::Autodiff("output is not attached to a tape".into()))?;
    let tape = out_ref.tape.clone();
    let out_id = out_ref.id;

    let mut wrt_ids = Vec::with_capacity(wrt.len());
    for (i, w) in wrt.iter().enumerate() {
        match &w.node {
            Some(n) if n.tape.same(&tape) => wrt_ids.push(n.id),
            Some(_) => {
                return Err(Error::Autodiff(format!(
                    "wrt[{i}] lives on a different tape than the output"
                )))
            }
            None => return Err(Error::Autodiff(format!("wrt[{i}] is not attached to a tape"))),
        }
    }

    let n = out_id + 1;
    let mut is_wrt = vec![false; n];
    for &id in &wrt_ids {
        if id < n {
            is_wrt[id] = true;
        }
    }
    // A node needs a gradient iff some wrt tensor lies beneath it.
    let needs: Vec<bool> = {
        let inner = tape.lock();
        let mut needs = vec![false; n];
        for i in 0..n {
            needs[i] = is_wrt[i]
                || inner.nodes[i]
                    .inputs
                    .iter()
                    .any(|inp| inp.id.is_some_and(|j| needs[j]));
        }
        needs
    };

    let mut grads: Vec<Option<Tensor>> = vec![None; n];
    let mut results: Vec<Option<Tensor>> = vec![None; n];
    grads[out_id] = Some(Tensor::ones(output.shape().to_vec()));
    let graph_tape = create_graph.then_some(&tape);

    for i in (0..n).rev() {
        if !needs[i] {
            continue;
        }
        let Some(g) = grads[i].take() else { continue };
        if is_wrt[i] {
            results[i] = Some(g.clone());
        }
        let node: Node = tape.lock().nodes[i].clone();
        if node.op == Op::Leaf {
            continue;
        }
        let wanted: Vec<bool> = node
            .inputs
            .iter()
            .map(|inp| inp.id.is_some_and(|j| needs[j]))
            .collect();
        if !wanted.iter().any(|&w| w) {
            continue;
        }
        let inputs: Vec<Tensor> = node.inputs.iter().map(|x| x.to_tensor(graph_tape)).collect();
        let out_self = Input {
            id: Some(i),
            shape: node.shape.clone(),
            data: node.data.clone(),
        }
        .to_tensor(graph_tape);
        let g = if create_graph { g } else { g.detach() };
        let input_grads = vjp(&node.op, &inputs, &out_self, &g, &wanted)?;
        for ((inp, want), ig) in node.inputs.iter().zip(&wanted).zip(input_grads) {
            if !want {
                continue;
            }
            let (Some(j), Some(ig)) = (inp.id, ig) else {
                continue;
            };
            let ig = if create_graph { ig } else { ig.detach() };
            grads[j] = Some(match grads[j].take() {
                None => ig,
                Some(acc) => acc.add(&ig)?,
            });
        }
    }

    Ok(wrt
        .iter()
        .zip(&wrt_ids)
        .map(|(w, &id)| {
            results
                .get(id)
                .and_then(|r| r.clone())
                .unwrap_or_else(|| Tensor::zeros(w.shape().to_vec()))
        })
        .collect())
}

/// Returns `d output / d input_k` contracted with `g`, for each input `k`
/// flagged in `wanted`. All rules are written with recordable ops so a
/// second backward pass can run through them.
fn vjp(
    op: &Op,
    x: &[Tensor],
    out: &Tensor,
    g: &Tensor,
    wanted: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    let want = |k: usize| wanted.get(k).copied().unwrap_or(false);
    let one = |v: Result<Tensor>| -> Result<Vec<Option<Tensor>>> { Ok(vec![Some(v?)]) };
    match op {
        Op::Leaf => Ok(vec![]),
        Op::Add => Ok(vec![Some(g.clone()), Some(g.clone())]),
        Op::Sub => Ok(vec![Some(g.clone()), want(1).then(|| g.neg())]),
        Op::Mul => Ok(vec![
            if want(0) { Some(g.mul(&x[1])?) } else { None },
            if want(1) { Some(g.mul(&x[0])?) } else { None },
        ]),
        Op::Div => Ok(vec![
            if want(0) { Some(g.div(&x[1])?) } else { None },
            if want(1) {
                Some(g.mul(out)?.div(&x[1])?.neg())
            } else {
                None
            },
        ]),
        Op::Scale(c) => Ok(vec![Some(g.scale(*c))]),
        Op::Offset(_) => Ok(vec![Some(g.clone())]),
        Op::MatMul => Ok(vec![
            if want(0) {
                Some(g.matmul(&x[1].transpose()?)?)
            } else {
                None
            },
            if want(1) {
                Some(x[0].transpose()?.matmul(g)?)
            } else {
                None
            },
        ]),
        Op::Transpose => one(g.transpose()),
        Op::Tanh => {
            let d = g.mul(&out.square().neg().offset(1.0))?;
            #[cfg(test)]
            let d = if FLIP_TANH_BACKWARD.with(|f| f.get()) {
                d.neg()
            } else {
                d
            };
            Ok(vec![Some(d)])
        }
        Op::Softplus => one(g.mul(&x[0].sigmoid())),
        Op::Sigmoid => one(g.mul(&out.mul(&out.neg().offset(1.0))?)),
        Op::Square => one(g.mul(&x[0]).map(|t| t.scale(2.0))),
        Op::Sqrt => one(g.scale(0.5).div(out)),
        Op::Sum => one(g.broadcast_to(x[0].shape())),
        Op::Mean => {
            let n = x[0].numel() as f64;
            one(g.broadcast_to(x[0].shape()).map(|t| t.scale(1.0 / n)))
        }
        Op::Concat(widths) => {
            let mut start = 0;
            let mut v = Vec::with_capacity(widths.len());
            for (k, &w) in widths.iter().enumerate() {
                v.push(if want(k) {
                    Some(g.slice(start, start + w)?)
                } else {
                    None
                });
                start += w;
            }
            Ok(v)
        }
        Op::Slice(start, end) => {
            let full = x[0].cols();
            let lead = &x[0].shape()[..x[0].rank() - 1];
            let pad = |w: usize| {
                let mut s = lead.to_vec();
                s.push(w);
                Tensor::zeros(s)
            };
            let (left, right) = (pad(*start), pad(full - end));
            let mut parts: Vec<&Tensor> = Vec::with_capacity(3);
            if *start > 0 {
                parts.push(&left);
            }
            parts.push(g);
            if *end < full {
                parts.push(&right);
            }
            one(Tensor::concat(&parts))
        }
        Op::Broadcast => one(g.sum_to(x[0].shape())),
        Op::SumTo => one(g.broadcast_to(x[0].shape())),
        Op::Reshape => one(g.reshape(x[0].shape())),
        Op::Bmv(m, k) => Ok(vec![
            if want(0) { Some(g.bouter(&x[1])?) } else { None },
            if want(1) {
                Some(x[0].bmtv(g, *m, *k)?)
            } else {
                None
            },
        ]),
        Op::Bmtv(m, k) => Ok(vec![
            if want(0) { Some(x[1].bouter(g)?) } else { None },
            if want(1) {
                Some(x[0].bmv(g, *m, *k)?)
            } else {
                None
            },
        ]),
        Op::Bouter(m, k) => Ok(vec![
            if want(0) {
                Some(g.bmv(&x[1], *m, *k)?)
            } else {
                None
            },
            if want(1) {
                Some(g.bmtv(&x[0], *m, *k)?)
            } else {
                None
            },
        ]),
    }
}

/// Convenience: attaches `values` as leaves on a fresh tape.
pub fn leaves(tape: &Tape, values: &[Tensor]) -> Vec<Tensor> {
    values.iter().map(|v| tape.leaf(v)).collect()
}
