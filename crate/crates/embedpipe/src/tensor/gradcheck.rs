use super::{Graph, NodeId, Tensor, TensorResult};

/// Compare analytic gradients of a scalar-valued graph function against
/// central finite differences.
///
/// `build` receives a fresh graph plus one grad-enabled leaf per input
/// tensor and must return the scalar loss node. Returns the max over all
/// parameter elements of |analytic − numeric| / max(1, |numeric|).
pub fn grad_check<F>(build: F, params: &[Tensor], fd_step: f64) -> TensorResult<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> TensorResult<NodeId>,
{
    let eval = |tensors: &[Tensor]| -> TensorResult<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = tensors
            .iter()
            .map(|t| g.leaf(t, true))
            .collect::<TensorResult<_>>()?;
        let loss = build(&mut g, &leaves)?;
        g.backward(loss)?;
        let grads = leaves
            .iter()
            .map(|id| g.grad(*id).map(|s| s.to_vec()).unwrap_or_default())
            .collect();
        Ok((g.value(loss).item(), grads))
    };

    let (_, analytic) = eval(params)?;
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for j in 0..p.numel() {
            let orig = p.data()[j];
            work[pi].data_mut()[j] = orig + fd_step;
            let (up, _) = eval(&work)?;
            work[pi].data_mut()[j] = orig - fd_step;
            let (down, _) = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * fd_step);
            let analytic_v = if analytic[pi].is_empty() {
                0.0
            } else {
                analytic[pi][j]
            };
            let err = (analytic_v - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
