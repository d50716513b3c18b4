//! One training step's loss graph: supervised profiling on labeled audio,
//! pair discrimination and consistency on speaker triplets, and the
//! backward pass producing gradients for every parameter array.

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    concat_pairs, encoder_backward, encoder_forward, encoder_forward_traced, mlp_backward,
    mlp_forward, rows_to_predictions, EncoderParams, MlpTrace, ModelConfig, ModelParams, TaskMode,
};
use crate::objectives::{
    consistency_loss_grad, representation_loss_grad, supervised_profile_loss_grad, total_loss,
    LossBreakdown, LossWeights, ProfilePrediction, ProfileTarget,
};
use crate::scalar::Scalar;
use crate::seed::fnv1a;

/// Rows whose encoder gradients are computed concurrently before being
/// summed in row order. The sum order is fixed, so results do not depend on
/// the thread count.
const GRAD_WINDOW: usize = 8;

/// How the three loss paths are combined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathConfig {
    pub weights: LossWeights,
    pub task_mode: TaskMode,
    /// Multiplier on the pair-discrimination loss; 0 disables the path.
    pub repr_weight: f64,
    /// Multiplier on the consistency loss; 0 disables the path.
    pub consistency_weight: f64,
    /// Treat the positive branch of the consistency loss as a constant.
    pub stop_gradient: bool,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            task_mode: TaskMode::Multi,
            repr_weight: 1.0,
            consistency_weight: 1.0,
            stop_gradient: true,
        }
    }
}

pub struct SupervisedInput<'a, T> {
    pub waves: &'a [Vec<T>],
    pub targets: &'a [ProfileTarget],
}

pub struct TripletInput<'a, T> {
    pub anchors: &'a [Vec<T>],
    pub positives: &'a [Vec<T>],
    pub negatives: &'a [Vec<T>],
    /// Replaces the regressor output on `positives` in the consistency loss
    /// with fixed values (a detached target).
    pub fixed_positive_predictions: Option<&'a [ProfilePrediction]>,
}

#[derive(Default)]
pub struct StepInput<'a, T> {
    pub supervised: Option<SupervisedInput<'a, T>>,
    pub triplets: Option<TripletInput<'a, T>>,
}

/// Loss values plus by-products useful for logging.
#[derive(Debug, Clone, Default)]
pub struct StepOutput {
    pub breakdown: LossBreakdown,
    pub pos_logits: Vec<f64>,
    pub neg_logits: Vec<f64>,
    /// Hash of every ReLU on/off state in the graph; only filled by
    /// [`evaluate_with_signature`].
    pub relu_signature: Option<u64>,
}

struct Forward<T> {
    out: StepOutput,
    // latent-code gradients from the head backward pass
    sup_dz: Option<Array2<T>>,
    anchor_dz: Option<Array2<T>>,
    positive_dz: Option<Array2<T>>,
    negative_dz: Option<Array2<T>>,
    grads: Option<ModelParams<T>>,
}

#[derive(Default)]
struct SignHasher(Vec<u8>);

impl SignHasher {
    fn push<'a, T: Scalar>(&mut self, acts: impl IntoIterator<Item = &'a T>) {
        let mut byte = 0u8;
        let mut n = 0;
        for a in acts {
            byte = (byte << 1) | (*a > T::zero()) as u8;
            n += 1;
            if n == 8 {
                self.0.push(byte);
                byte = 0;
                n = 0;
            }
        }
        self.0.push(byte);
        self.0.push(0xA5);
    }

    fn mlp<T: Scalar>(&mut self, trace: &MlpTrace<T>) {
        for hidden in &trace.inputs[1..] {
            self.push(hidden.iter());
        }
    }

    fn finish(&self) -> u64 {
        fnv1a(&self.0)
    }
}

fn to_matrix<T: Scalar>(rows: &[ProfilePrediction]) -> Array2<T> {
    Array2::from_shape_fn((rows.len(), 3), |(i, k)| {
        let r = &rows[i];
        T::of([r.height, r.age, r.gender_logit][k])
    })
}

fn encode<T: Scalar>(
    enc: &EncoderParams<T>,
    cfg: &ModelConfig,
    waves: &[Vec<T>],
    hasher: Option<&mut SignHasher>,
) -> Result<Array2<T>> {
    match hasher {
        None => encoder_forward(enc, cfg, waves),
        Some(h) => {
            let traced: Vec<_> = waves
                .par_iter()
                .map(|w| encoder_forward_traced(enc, cfg, w))
                .collect::<Result<_>>()?;
            let mut z = Array2::<T>::zeros((waves.len(), enc.lstm.hidden()));
            for (i, (code, trace)) in traced.iter().enumerate() {
                z.row_mut(i).assign(code);
                for acts in trace.relu_outputs() {
                    h.push(acts.iter());
                }
            }
            Ok(z)
        }
    }
}

fn run<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    input: &StepInput<'_, T>,
    paths: &PathConfig,
    want_grads: bool,
    want_signature: bool,
) -> Result<Forward<T>> {
    let mut hasher = want_signature.then(SignHasher::default);
    let mut grads = want_grads.then(|| params.zeros_like());
    let mut fwd = Forward {
        out: StepOutput::default(),
        sup_dz: None,
        anchor_dz: None,
        positive_dz: None,
        negative_dz: None,
        grads: None,
    };

    let mut l_p = 0.0;
    if let Some(sup) = &input.supervised {
        if sup.waves.len() != sup.targets.len() {
            return Err(Error::Shape(format!(
                "{} supervised waveforms but {} targets",
                sup.waves.len(),
                sup.targets.len()
            )));
        }
        let z = encode(&params.encoder, cfg, sup.waves, hasher.as_mut())?;
        let (out, trace) = mlp_forward(&params.regressor, z.view())?;
        if let Some(h) = hasher.as_mut() {
            h.mlp(&trace);
        }
        let preds = rows_to_predictions(&out);
        let (loss, dpred) =
            supervised_profile_loss_grad(&preds, sup.targets, &paths.weights, paths.task_mode)?;
        l_p = loss;
        if let Some(g) = grads.as_mut() {
            let dz = mlp_backward(&params.regressor, &trace, to_matrix(&dpred).view(), &mut g.regressor);
            fwd.sup_dz = Some(dz);
        }
    }

    let mut l_repr = 0.0;
    let mut l_c = 0.0;
    if let Some(tri) = &input.triplets {
        let n = tri.anchors.len();
        if tri.positives.len() != n || tri.negatives.len() != n {
            return Err(Error::Shape("triplet batches differ in size".into()));
        }
        let repr_on = paths.repr_weight != 0.0;
        let cons_on = paths.consistency_weight != 0.0;
        if (repr_on || cons_on) && n > 0 {
            let za = encode(&params.encoder, cfg, tri.anchors, hasher.as_mut())?;
            let need_zp = repr_on || tri.fixed_positive_predictions.is_none();
            let zp = if need_zp {
                Some(encode(&params.encoder, cfg, tri.positives, hasher.as_mut())?)
            } else {
                None
            };
            let latent = za.ncols();
            let mut d_za = Array2::<T>::zeros(za.dim());
            let mut d_zp = Array2::<T>::zeros(za.dim());
            let mut d_zn = None;

            if repr_on {
                let zn = encode(&params.encoder, cfg, tri.negatives, hasher.as_mut())?;
                let zp = zp.as_ref().expect("positives encoded");
                let pos_pairs = concat_pairs(za.view(), zp.view())?;
                let neg_pairs = concat_pairs(za.view(), zn.view())?;
                let pairs = ndarray::concatenate(ndarray::Axis(0), &[pos_pairs.view(), neg_pairs.view()])
                    .expect("same width");
                let (logits, trace) = mlp_forward(&params.discriminator, pairs.view())?;
                if let Some(h) = hasher.as_mut() {
                    h.mlp(&trace);
                }
                let logits: Vec<f64> = logits.column(0).iter().map(|v| v.as_f64()).collect();
                let (pos, neg) = logits.split_at(n);
                let (loss, dpos, dneg) = representation_loss_grad(pos, neg)?;
                l_repr = paths.repr_weight * loss;
                fwd.out.pos_logits = pos.to_vec();
                fwd.out.neg_logits = neg.to_vec();
                if let Some(g) = grads.as_mut() {
                    let dl = Array2::from_shape_fn((2 * n, 1), |(i, _)| {
                        let d = if i < n { dpos[i] } else { dneg[i - n] };
                        T::of(paths.repr_weight * d)
                    });
                    let dpairs = mlp_backward(&params.discriminator, &trace, dl.view(), &mut g.discriminator);
                    d_za += &dpairs.slice(s![..n, ..latent]);
                    d_za += &dpairs.slice(s![n.., ..latent]);
                    d_zp += &dpairs.slice(s![..n, latent..]);
                    d_zn = Some(dpairs.slice(s![n.., latent..]).to_owned());
                }
            }

            if cons_on {
                let (out_a, trace_a) = mlp_forward(&params.regressor, za.view())?;
                if let Some(h) = hasher.as_mut() {
                    h.mlp(&trace_a);
                }
                let pred_a = rows_to_predictions(&out_a);
                let (pred_p, trace_p) = match tri.fixed_positive_predictions {
                    Some(fixed) => (fixed.to_vec(), None),
                    None => {
                        let zp = zp.as_ref().expect("positives encoded");
                        let (out_p, trace_p) = mlp_forward(&params.regressor, zp.view())?;
                        if let Some(h) = hasher.as_mut() {
                            h.mlp(&trace_p);
                        }
                        (rows_to_predictions(&out_p), Some(trace_p))
                    }
                };
                let cg = consistency_loss_grad(
                    &pred_a,
                    &pred_p,
                    &paths.weights,
                    paths.task_mode,
                    paths.stop_gradient,
                )?;
                l_c = paths.consistency_weight * cg.loss;
                if let Some(g) = grads.as_mut() {
                    let cw = T::of(paths.consistency_weight);
                    let da = to_matrix::<T>(&cg.d_anchor) * cw;
                    d_za += &mlp_backward(&params.regressor, &trace_a, da.view(), &mut g.regressor);
                    if let (false, Some(trace_p)) = (paths.stop_gradient, trace_p.as_ref()) {
                        let dp = to_matrix::<T>(&cg.d_positive) * cw;
                        d_zp += &mlp_backward(&params.regressor, trace_p, dp.view(), &mut g.regressor);
                    }
                }
            }
            if grads.is_some() {
                fwd.anchor_dz = Some(d_za);
                fwd.positive_dz = Some(d_zp);
                fwd.negative_dz = d_zn;
            }
        }
    }

    fwd.out.breakdown = total_loss(l_p, l_repr, l_c)?;
    fwd.out.relu_signature = hasher.map(|h| h.finish());
    fwd.grads = grads;
    Ok(fwd)
}

/// Forward pass only.
pub fn evaluate_loss<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    input: &StepInput<'_, T>,
    paths: &PathConfig,
) -> Result<StepOutput> {
    Ok(run(params, cfg, input, paths, false, false)?.out)
}

/// Forward pass that also fingerprints the ReLU activation pattern, so a
/// caller can tell whether two parameter settings lie in the same linear
/// region.
pub fn evaluate_with_signature<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    input: &StepInput<'_, T>,
    paths: &PathConfig,
) -> Result<StepOutput> {
    Ok(run(params, cfg, input, paths, false, true)?.out)
}

fn nonzero<T: Scalar>(row: ArrayView1<T>) -> bool {
    row.iter().any(|v| *v != T::zero())
}

/// Gradient of the total loss with respect to every parameter array.
///
/// The returned arrays have the same names and shapes as `params`.
pub fn parameter_gradients<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    input: &StepInput<'_, T>,
    paths: &PathConfig,
) -> Result<(StepOutput, ModelParams<T>)> {
    let fwd = run(params, cfg, input, paths, true, false)?;
    let mut grads = fwd.grads.expect("gradients requested");

    let mut jobs: Vec<(&[T], ArrayView1<T>)> = Vec::new();
    if let Some(sup) = &input.supervised {
        push_jobs(&mut jobs, sup.waves, &fwd.sup_dz);
    }
    if let Some(tri) = &input.triplets {
        push_jobs(&mut jobs, tri.anchors, &fwd.anchor_dz);
        push_jobs(&mut jobs, tri.positives, &fwd.positive_dz);
        push_jobs(&mut jobs, tri.negatives, &fwd.negative_dz);
    }
    accumulate_encoder_grads(&params.encoder, cfg, &jobs, &mut grads.encoder)?;
    Ok((fwd.out, grads))
}

fn push_jobs<'a, T: Scalar>(
    jobs: &mut Vec<(&'a [T], ArrayView1<'a, T>)>,
    waves: &'a [Vec<T>],
    dz: &'a Option<Array2<T>>,
) {
    if let Some(dz) = dz {
        for (w, row) in waves.iter().zip(dz.rows()) {
            if nonzero(row) {
                jobs.push((w.as_slice(), row));
            }
        }
    }
}

fn accumulate_encoder_grads<T: Scalar>(
    enc: &EncoderParams<T>,
    cfg: &ModelConfig,
    jobs: &[(&[T], ArrayView1<T>)],
    acc: &mut EncoderParams<T>,
) -> Result<()> {
    for window in jobs.chunks(GRAD_WINDOW) {
        let parts: Vec<EncoderParams<T>> = window
            .par_iter()
            .map(|(w, dz)| encoder_backward(enc, cfg, w, dz.view()))
            .collect::<Result<_>>()?;
        for p in &parts {
            acc.add_assign(p);
        }
    }
    Ok(())
}

/// Latent codes for a batch, e.g. for embedding export.
pub fn encode_batch<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    waves: &[Vec<T>],
) -> Result<Array2<T>> {
    encoder_forward(&params.encoder, cfg, waves)
}

/// Regressor predictions for a batch of waveforms.
pub fn predict<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    waves: &[Vec<T>],
) -> Result<Vec<ProfilePrediction>> {
    if waves.is_empty() {
        return Ok(Vec::new());
    }
    let z = encoder_forward(&params.encoder, cfg, waves)?;
    let (out, _) = mlp_forward(&params.regressor, z.view())?;
    Ok(rows_to_predictions(&out))
}

/// Discriminator logits for `(anchor, other)` latent pairs.
pub fn pair_logits<T: Scalar>(
    params: &ModelParams<T>,
    anchors: ArrayView2<T>,
    others: ArrayView2<T>,
) -> Result<Vec<f64>> {
    Ok(crate::model::discriminator_forward(params, anchors, others)?
        .into_iter()
        .map(|v| v.as_f64())
        .collect())
}
