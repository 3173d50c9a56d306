//! Adaptive cognition detection: the early RNN trigger and the real-time
//! MLP hallucination flag, with their training pipelines.

mod dataset;
mod net;

pub use dataset::{
    build_early_dataset, build_realtime_dataset, continuation_prompt, early_feature_sequence,
    entity_match, label_answer, realtime_features, truncate_at_entity, EarlySample,
    RealtimeSample, EARLY_FEATURES, REALTIME_FEATURES,
};
pub use net::{MlpNet, RnnNet, TrainConfig, DEFAULT_HIDDEN};

use crate::adapter::{GenerationStep, ModelAdapter};
use crate::attribution::{build_profile, AttributionProfile};
use crate::error::Result;
use crate::text::last_token_is_entity;

/// Decides before generation whether the model needs retrieval for this
/// question. The classifier's positive class reads "not confident", so a
/// score above 0.5 triggers retrieval. Also returns the attribution
/// profile so the caller can reuse its candidate tokens.
pub fn early_trigger(
    question: &str,
    adapter: &dyn ModelAdapter,
    rnn: &RnnNet,
) -> Result<(bool, AttributionProfile)> {
    let raw = adapter.attributions(question)?;
    let profile = build_profile(question, &raw)?;
    let features = early_feature_sequence(&raw)?;
    let score = rnn.forward(&features)?;
    Ok((score > 0.5, profile))
}

/// Everything the real-time detector needs beyond the step itself.
#[derive(Debug, Clone, Copy)]
pub struct RealtimeContext<'a> {
    /// 1-based index of this token across the whole generation.
    pub position: usize,
    /// Token budget, for the position fraction feature.
    pub max_tokens: usize,
    /// Text emitted so far including this step's token.
    pub text_so_far: &'a str,
}

/// Flags one generated token as a hallucination.
///
/// The net scores the probability that the token is sound; strictly below
/// 0.5 means flagged, exactly 0.5 passes.
pub fn realtime_flag(
    step: &GenerationStep,
    ctx: &RealtimeContext<'_>,
    mlp: &MlpNet,
) -> Result<bool> {
    let is_entity = last_token_is_entity(ctx.text_so_far);
    let features = realtime_features(
        &step.token.surface,
        step.token.logprob.unwrap_or(0.0),
        step.next_dist_entropy,
        ctx.position,
        ctx.max_tokens,
        is_entity,
    );
    let score = mlp.forward(&features)?;
    Ok(score < 0.5)
}

/// Trains the early RNN. Targets are inverted: a 0-labeled (hallucinated)
/// sample teaches the positive "retrieve" class.
pub fn train_early_detector(
    samples: &[EarlySample],
    hidden_dim: usize,
    cfg: &TrainConfig,
) -> Result<(RnnNet, Vec<f64>)> {
    let batch: Vec<(Vec<Vec<f64>>, f64)> = samples
        .iter()
        .map(|s| Ok((early_feature_sequence(&s.ig)?, f64::from(1 - s.label))))
        .collect::<Result<_>>()?;
    RnnNet::train(&batch, EARLY_FEATURES, hidden_dim, cfg)
}

/// Trains the real-time MLP on the label directly: 1 means sound.
pub fn train_realtime_detector(
    samples: &[RealtimeSample],
    hidden_dim: usize,
    cfg: &TrainConfig,
) -> Result<(MlpNet, Vec<f64>)> {
    let batch: Vec<(Vec<f64>, f64)> =
        samples.iter().map(|s| (s.features.clone(), f64::from(s.label))).collect();
    MlpNet::train(&batch, REALTIME_FEATURES, hidden_dim, cfg)
}
