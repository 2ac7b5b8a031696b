//! Neural building blocks: the sine network with input jets, a chunked
//! loss/gradient driver, optimizers and parameter checkpoints.

pub mod checkpoint;
pub mod network;
pub mod optim;

pub use network::{
    backward, forward, init_params, input_jet, input_jet_with_tape, pairwise_sum, InputScaling, Jet, JetRequest,
    NetworkParams, NetworkSpec, OutputScaling, Tape,
};
pub use optim::{lbfgs, Adam, LbfgsConfig, LbfgsReport, LbfgsStop, Objective};

use crate::units::PointSet;

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("invalid network: {0}")]
    Spec(String),
    #[error("input width {got} does not match network input width {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("non-finite input coordinate")]
    NonFiniteInput,
    #[error("non-finite loss or gradient at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Points evaluated with one jet request. `align` keeps groups of
/// consecutive points (e.g. periodic pairs) inside the same chunk.
#[derive(Debug, Clone)]
pub struct JetBatch {
    pub points: PointSet,
    pub request: JetRequest,
    pub align: usize,
}

/// A loss that is a sum of per-point (or per-group) terms over batches.
pub trait JetLoss {
    fn batches(&self) -> &[JetBatch];

    /// Contribution of points `start..start + jet.n` of `batch`. When
    /// `adjoint` is given it receives `∂(contribution)/∂jet`.
    fn chunk(&self, batch: usize, start: usize, jet: &Jet, adjoint: Option<&mut Jet>) -> f64;
}

/// Points per forward/backward chunk.
pub const CHUNK_POINTS: usize = 2048;

fn chunks(batch: &JetBatch) -> impl Iterator<Item = (usize, usize)> + '_ {
    let align = batch.align.max(1);
    let size = (CHUNK_POINTS / align).max(1) * align;
    let n = batch.points.len();
    (0..n).step_by(size).map(move |s| (s, (s + size).min(n)))
}

fn slice_points(points: &PointSet, start: usize, end: usize) -> PointSet {
    PointSet::from_coords(points.width, points.coords[start * points.width..end * points.width].to_vec())
}

/// Loss of every batch without gradients.
pub fn batch_losses<L: JetLoss + ?Sized>(params: &NetworkParams, loss: &L) -> Result<Vec<f64>, NeuralError> {
    loss.batches()
        .iter()
        .enumerate()
        .map(|(b, batch)| {
            let mut parts = Vec::new();
            for (s, e) in chunks(batch) {
                let jet = input_jet(params, &slice_points(&batch.points, s, e), &batch.request)?;
                parts.push(loss.chunk(b, s, &jet, None));
            }
            Ok(pairwise_sum(&parts))
        })
        .collect()
}

/// Per-batch losses and the gradient of their sum.
pub fn loss_gradient<L: JetLoss + ?Sized>(
    params: &NetworkParams,
    loss: &L,
) -> Result<(Vec<f64>, Vec<f64>), NeuralError> {
    let mut grad = vec![0.0; params.spec.param_count()];
    let mut totals = Vec::new();
    for (b, batch) in loss.batches().iter().enumerate() {
        let mut parts = Vec::new();
        for (s, e) in chunks(batch) {
            let (jet, tape) = input_jet_with_tape(params, &slice_points(&batch.points, s, e), &batch.request)?;
            let mut adjoint = jet.zeros_like();
            parts.push(loss.chunk(b, s, &jet, Some(&mut adjoint)));
            backward(params, &tape, &adjoint, &mut grad);
        }
        totals.push(pairwise_sum(&parts));
    }
    Ok((totals, grad))
}
