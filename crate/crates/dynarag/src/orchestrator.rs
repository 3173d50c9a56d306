//! The end-to-end generation loop: early detection before the first pass,
//! per-token real-time detection during passes, truncation-point retrieval
//! between passes, and the rc/gc/hc/tc/sc bookkeeping.

use serde::{Deserialize, Serialize};

use crate::adapter::ModelAdapter;
use crate::config::EngineConfig;
use crate::detectors::{
    early_trigger, realtime_flag, MlpNet, RealtimeContext, RnnNet, EARLY_FEATURES,
    REALTIME_FEATURES,
};
use crate::error::{Error, Result};
use crate::index::InvertedIndex;
use crate::retrieval::{
    assemble_plain_prompt, assemble_prompt, chunk_document, score_keywords, single_shot_retrieve,
    stepwise_retrieve, Block, StepwiseRetrieval,
};
use crate::text::{extract_entities, join_tokens, split_sentences, tokenize};
use crate::types::{Counters, Document, QAExample, TokenRecord};

/// Candidate pool size for each retrieval round.
pub const CANDIDATE_POOL: usize = 25;

/// The per-token detector variant to run.
#[derive(Debug, Clone)]
pub enum RealtimeDetector {
    Mlp(MlpNet),
    /// Static fallback rule: flag a token whose generation probability is
    /// strictly below one half.
    LowProbability,
}

/// Trained classifiers handed to the loop. A missing detector is an error
/// unless the matching ablation flag disables that stage.
#[derive(Debug, Clone, Default)]
pub struct Detectors {
    pub early: Option<RnnNet>,
    pub realtime: Option<RealtimeDetector>,
}

/// One notable moment in a generation, in occurrence order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    EarlyTrigger,
    RealtimeTrigger { position: usize },
    Retrieval { batch_sizes: Vec<usize>, doc_ids: Vec<String>, keywords: Vec<String> },
    Truncation { position: usize },
}

/// Everything one question produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub question: String,
    pub final_answer: String,
    /// Every emitted token across passes; flagged ones keep their
    /// `hallucinated` mark and are absent from the final answer.
    pub tokens: Vec<TokenRecord>,
    pub events: Vec<TraceEvent>,
    pub counters: Counters,
    /// The prompt that opened each pass.
    pub prompts: Vec<String>,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config_fingerprint: String,
}

/// Runs the full detection-gated loop for one question.
///
/// Adapter failures mid-generation do not error: the trace comes back
/// marked failed with whatever content was produced. Configuration
/// problems (a missing or mis-shaped detector) error immediately.
pub fn answer(
    question: &str,
    index: &InvertedIndex,
    adapter: &dyn ModelAdapter,
    detectors: &Detectors,
    config: &EngineConfig,
) -> Result<GenerationTrace> {
    let early: Option<&RnnNet> = if config.disable_early {
        None
    } else {
        let rnn = detectors.early.as_ref().ok_or_else(|| {
            Error::Config("no early detector provided and early detection is not disabled".into())
        })?;
        if rnn.input_dim != EARLY_FEATURES {
            return Err(Error::Config(format!(
                "early detector expects {} input features, found {}",
                EARLY_FEATURES, rnn.input_dim
            )));
        }
        Some(rnn)
    };
    let realtime: Option<&RealtimeDetector> = if config.disable_realtime {
        None
    } else {
        let rule = detectors.realtime.as_ref().ok_or_else(|| {
            Error::Config(
                "no realtime detector provided and realtime detection is not disabled".into(),
            )
        })?;
        if let RealtimeDetector::Mlp(net) = rule {
            if net.input_dim != REALTIME_FEATURES {
                return Err(Error::Config(format!(
                    "realtime detector expects {} input features, found {}",
                    REALTIME_FEATURES, net.input_dim
                )));
            }
        }
        Some(rule)
    };

    let mut trace = GenerationTrace {
        question: question.to_string(),
        final_answer: String::new(),
        tokens: Vec::new(),
        events: Vec::new(),
        counters: Counters::default(),
        prompts: Vec::new(),
        failed: false,
        error: None,
        config_fingerprint: config.fingerprint(),
    };
    let mut kept: Vec<String> = Vec::new();

    // Decide the opening prompt.
    let mut prompt = question.to_string();
    if let Some(rnn) = early {
        match early_trigger(question, adapter, rnn) {
            Err(e) => {
                trace.failed = true;
                trace.error = Some(e.to_string());
                return Ok(trace);
            }
            Ok((false, _)) => {}
            Ok((true, profile)) => {
                trace.events.push(TraceEvent::EarlyTrigger);
                let mut candidates: Vec<TokenRecord> = if profile.candidates.is_empty() {
                    profile.tokens.clone()
                } else {
                    profile.candidates.iter().map(|&pos| profile.tokens[pos - 1].clone()).collect()
                };
                // Keyword ranking reads attention; before any generation the
                // attribution weight is the closest stand-in.
                for t in &mut candidates {
                    t.attention = t.attribution;
                }
                let keywords =
                    rank_keywords(&candidates, profile.tokens.len(), question, index, config)?;
                let retrieval = retrieve(&keywords, index, config);
                trace.counters.rc += 1;
                trace.events.push(retrieval_event(&retrieval, keywords));
                prompt = knowledge_prompt(&retrieval.documents, question, "", config);
            }
        }
    }

    let mut pass_emitted: Vec<TokenRecord> = Vec::new();
    'generation: loop {
        trace.counters.gc += 1;
        trace.prompts.push(prompt.clone());
        pass_emitted.clear();
        loop {
            if trace.counters.tc >= config.max_tokens as u64 {
                break 'generation;
            }
            let step = match adapter.generate_step(&prompt, &pass_emitted) {
                Ok(s) => s,
                Err(e) => {
                    trace.failed = true;
                    trace.error = Some(e.to_string());
                    break 'generation;
                }
            };
            trace.counters.tc += 1;
            let global_pos = trace.counters.tc as usize;
            let mut token = step.token.clone();
            token.position = global_pos;
            pass_emitted.push(token.clone());

            let flagged = match realtime {
                None => false,
                Some(RealtimeDetector::LowProbability) => {
                    token.logprob.map(|lp| lp.exp() < 0.5).unwrap_or(false)
                }
                Some(RealtimeDetector::Mlp(net)) => {
                    let text_so_far =
                        join_tokens(pass_emitted.iter().map(|t| t.surface.as_str()));
                    let ctx = RealtimeContext {
                        position: global_pos,
                        max_tokens: config.max_tokens,
                        text_so_far: &text_so_far,
                    };
                    realtime_flag(&step, &ctx, net)?
                }
            };

            if flagged {
                token.hallucinated = true;
                trace.tokens.push(token);
                trace.counters.hc += 1;
                trace.events.push(TraceEvent::RealtimeTrigger { position: global_pos });
                if trace.counters.rc < config.max_retrievals as u64 {
                    let truncated = join_tokens(kept.iter().map(String::as_str));
                    let keywords = continuation_keywords(&truncated, question, index, config)?;
                    let retrieval = retrieve(&keywords, index, config);
                    trace.counters.rc += 1;
                    trace.events.push(retrieval_event(&retrieval, keywords));
                    trace.events.push(TraceEvent::Truncation { position: global_pos });
                    close_pass(&mut trace.counters, &pass_emitted);
                    prompt = knowledge_prompt(&retrieval.documents, question, &truncated, config);
                    continue 'generation;
                }
                // Retrieval budget spent: drop the token, keep generating.
            } else {
                kept.push(token.surface.clone());
                trace.tokens.push(token);
            }
            if step.is_end {
                break 'generation;
            }
        }
    }
    close_pass(&mut trace.counters, &pass_emitted);

    trace.final_answer = join_tokens(kept.iter().map(String::as_str));
    Ok(trace)
}

/// Adds one finished pass to the sentence counter.
fn close_pass(counters: &mut Counters, pass_emitted: &[TokenRecord]) {
    let text = join_tokens(pass_emitted.iter().map(|t| t.surface.as_str()));
    counters.sc += split_sentences(&text).len() as u64;
}

/// Ranks keyword records into lowercased surfaces, preserving appearance
/// order when pre-ranking is disabled.
fn rank_keywords(
    candidates: &[TokenRecord],
    n_tokens: usize,
    query: &str,
    index: &InvertedIndex,
    config: &EngineConfig,
) -> Result<Vec<String>> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    if config.disable_prerank {
        return Ok(candidates.iter().map(|t| t.surface.to_lowercase()).collect());
    }
    let scored =
        score_keywords(candidates, n_tokens, query, index, &config.importance_weights)?;
    Ok(scored.into_iter().map(|k| k.surface.to_lowercase()).collect())
}

/// Keywords for a continuation pass: entities of the truncated answer, or
/// the question's own tokens when it has none yet.
fn continuation_keywords(
    truncated: &str,
    question: &str,
    index: &InvertedIndex,
    config: &EngineConfig,
) -> Result<Vec<String>> {
    let entities = extract_entities(truncated);
    let records: Vec<TokenRecord> = if entities.is_empty() {
        tokenize(question)
    } else {
        entities
            .iter()
            .enumerate()
            .map(|(k, e)| TokenRecord::new(e.surface.clone(), k + 1))
            .collect()
    };
    let n = records.len();
    rank_keywords(&records, n, question, index, config)
}

fn retrieve(keywords: &[String], index: &InvertedIndex, config: &EngineConfig) -> StepwiseRetrieval {
    if config.disable_stepwise {
        single_shot_retrieve(keywords, config.retrieval_top_k, index, CANDIDATE_POOL)
    } else {
        stepwise_retrieve(keywords, config.retrieval_top_k, index, CANDIDATE_POOL)
    }
}

fn retrieval_event(retrieval: &StepwiseRetrieval, keywords: Vec<String>) -> TraceEvent {
    TraceEvent::Retrieval {
        batch_sizes: retrieval.batch_sizes.clone(),
        doc_ids: retrieval.documents.iter().map(|d| d.id.clone()).collect(),
        keywords,
    }
}

fn knowledge_prompt(
    docs: &[Document],
    question: &str,
    truncated: &str,
    config: &EngineConfig,
) -> String {
    if config.disable_chunk {
        assemble_plain_prompt(docs, question, truncated)
    } else {
        let per_doc: Vec<Vec<Block>> = docs
            .iter()
            .map(|d| chunk_document(d, config.chunk_length_penalty, config.chunk_max_tokens))
            .collect();
        assemble_prompt(&per_doc, question, truncated)
    }
}

/// Maps [`answer`] over a dataset, isolating failures per example.
pub fn run_batch(
    dataset: &[QAExample],
    index: &InvertedIndex,
    adapter: &dyn ModelAdapter,
    detectors: &Detectors,
    config: &EngineConfig,
) -> Vec<GenerationTrace> {
    dataset
        .iter()
        .map(|example| {
            answer(&example.question, index, adapter, detectors, config).unwrap_or_else(|e| {
                GenerationTrace {
                    question: example.question.clone(),
                    final_answer: String::new(),
                    tokens: Vec::new(),
                    events: Vec::new(),
                    counters: Counters::default(),
                    prompts: Vec::new(),
                    failed: true,
                    error: Some(e.to_string()),
                    config_fingerprint: config.fingerprint(),
                }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{
        MockAdapter, Scenario, ScriptedAttribution, ScriptedGeneration, ScriptedStep,
    };
    use crate::text::EMBED_DIM;

    fn corpus() -> Vec<Document> {
        vec![
            Document {
                id: "d1".into(),
                title: "Rovaniemi".into(),
                text: "Rovaniemi is a city in Finland. Santa Claus lives near Rovaniemi.".into(),
            },
            Document {
                id: "d2".into(),
                title: "Lapland".into(),
                text: "Lapland is the northern region of Finland. Reindeer roam across Lapland."
                    .into(),
            },
            Document {
                id: "d3".into(),
                title: "Mars".into(),
                text: "Mars is the fourth planet from the Sun. Mars has two small moons.".into(),
            },
        ]
    }

    fn indexed() -> InvertedIndex {
        InvertedIndex::build(&corpus()).expect("corpus indexes")
    }

    fn zeroed_rnn() -> RnnNet {
        let mut net = RnnNet::init(EARLY_FEATURES, 2, 0);
        let n = net.n_params();
        net.set_params(&vec![0.0; n]).unwrap();
        net
    }

    fn zeroed_mlp() -> MlpNet {
        let mut net = MlpNet::init(REALTIME_FEATURES, 1, 0);
        let n = net.n_params();
        net.set_params(&vec![0.0; n]).unwrap();
        net
    }

    /// An early detector forced to a constant verdict through its output bias.
    fn forced_rnn(trigger: bool) -> RnnNet {
        let mut net = zeroed_rnn();
        net.b_out = if trigger { 10.0 } else { -10.0 };
        net
    }

    /// A realtime detector forced to a constant verdict. Flagging needs a
    /// negative pre-activation because the rule is strict less-than.
    fn forced_mlp(flag: bool) -> MlpNet {
        let mut net = zeroed_mlp();
        net.b2 = if flag { -10.0 } else { 10.0 };
        net
    }

    /// A realtime detector that flags a token exactly when the scripted
    /// next-distribution entropy exceeds one.
    fn entropy_mlp() -> MlpNet {
        let mut net = zeroed_mlp();
        net.w1[0][EMBED_DIM + 1] = 1.0;
        net.b1[0] = -1.0;
        net.w2[0] = -100.0;
        net.b2 = 10.0;
        net
    }

    fn quiet_detectors() -> Detectors {
        Detectors {
            early: Some(forced_rnn(false)),
            realtime: Some(RealtimeDetector::Mlp(forced_mlp(false))),
        }
    }

    fn config() -> EngineConfig {
        EngineConfig { max_tokens: 32, retrieval_top_k: 2, max_retrievals: 3, ..Default::default() }
    }

    /// Scripts each `(prompt_prefix, [(surface, entropy)])` pair; the last
    /// step of every script carries the end marker unless `end_last` is off.
    fn adapter_with(
        question: &str,
        generations: &[(&str, Vec<(&str, f64)>)],
        ig: &[f64],
        end_last: bool,
    ) -> MockAdapter {
        let generations = generations
            .iter()
            .map(|(prefix, tokens)| ScriptedGeneration {
                prompt_prefix: prefix.to_string(),
                steps: tokens
                    .iter()
                    .enumerate()
                    .map(|(i, (surface, entropy))| ScriptedStep {
                        token: surface.to_string(),
                        logprob: -0.1,
                        attention: 0.5,
                        entropy: *entropy,
                        is_end: end_last && i + 1 == tokens.len(),
                    })
                    .collect(),
            })
            .collect();
        let scenario = Scenario {
            version: 1,
            generations,
            attributions: vec![ScriptedAttribution {
                question_prefix: question.to_string(),
                values: ig.to_vec(),
            }],
        };
        MockAdapter::new(scenario).expect("valid scenario")
    }

    fn adapter(
        question: &str,
        generations: &[(&str, Vec<(&str, f64)>)],
        ig: &[f64],
    ) -> MockAdapter {
        adapter_with(question, generations, ig, true)
    }

    const QUESTION: &str = "Who lives near Rovaniemi in Finland";
    const QUESTION_IG: [f64; 6] = [0.05, 0.05, 0.1, 0.5, 0.1, 0.1];

    #[test]
    fn quiet_run_is_a_single_pass() {
        let adapter = adapter(
            QUESTION,
            &[(QUESTION, vec![("Santa", 0.2), ("Claus", 0.2), ("does", 0.2), (".", 0.2)])],
            &QUESTION_IG,
        );
        let trace =
            answer(QUESTION, &indexed(), &adapter, &quiet_detectors(), &config()).unwrap();
        assert!(!trace.failed);
        assert_eq!(trace.final_answer, "Santa Claus does.");
        assert_eq!(trace.events, Vec::new());
        assert_eq!(trace.counters.gc, 1);
        assert_eq!(trace.counters.rc, 0);
        assert_eq!(trace.counters.hc, 0);
        assert_eq!(trace.counters.tc, 4);
        assert_eq!(trace.counters.sc, 1);
        assert_eq!(trace.prompts, vec![QUESTION.to_string()]);
        let positions: Vec<usize> = trace.tokens.iter().map(|t| t.position).collect();
        assert_eq!(positions, vec![1, 2, 3, 4]);
    }

    #[test]
    fn early_trigger_retrieves_before_the_first_token() {
        let detectors = Detectors {
            early: Some(forced_rnn(true)),
            realtime: Some(RealtimeDetector::Mlp(forced_mlp(false))),
        };
        let adapter = adapter(
            QUESTION,
            &[("External Knowledge After Chunk:", vec![("Santa", 0.2), (".", 0.2)])],
            &QUESTION_IG,
        );
        let trace = answer(QUESTION, &indexed(), &adapter, &detectors, &config()).unwrap();
        assert!(!trace.failed, "error: {:?}", trace.error);
        assert_eq!(trace.counters.rc, 1);
        assert_eq!(trace.counters.gc, 1);
        assert_eq!(trace.events.len(), 2);
        assert_eq!(trace.events[0], TraceEvent::EarlyTrigger);
        match &trace.events[1] {
            TraceEvent::Retrieval { doc_ids, keywords, batch_sizes } => {
                assert!(keywords.contains(&"rovaniemi".to_string()));
                assert!(doc_ids.contains(&"d1".to_string()));
                assert!(!batch_sizes.is_empty());
            }
            other => panic!("expected retrieval, got {other:?}"),
        }
        assert!(trace.prompts[0].starts_with("External Knowledge After Chunk:"));
        assert!(trace.prompts[0].ends_with("Answer: "));
        assert_eq!(trace.final_answer, "Santa.");
    }

    #[test]
    fn early_keywords_come_from_attribution_candidates() {
        let detectors = Detectors { early: Some(forced_rnn(true)), ..quiet_detectors() };
        let adapter = adapter(
            QUESTION,
            &[("External Knowledge After Chunk:", vec![(".", 0.2)])],
            &QUESTION_IG,
        );
        let trace = answer(QUESTION, &indexed(), &adapter, &detectors, &config()).unwrap();
        match &trace.events[1] {
            TraceEvent::Retrieval { keywords, .. } => {
                // Only position 4 attributes above the mean.
                assert_eq!(keywords, &vec!["rovaniemi".to_string()]);
            }
            other => panic!("expected retrieval, got {other:?}"),
        }
    }

    fn flagging_scenario() -> MockAdapter {
        adapter(
            QUESTION,
            &[
                (
                    QUESTION,
                    vec![("Santa", 0.2), ("Claus", 0.2), ("visits", 0.2), ("Mars", 3.0), ("often", 0.2)],
                ),
                (
                    "External Knowledge After Chunk:",
                    vec![("lives", 0.2), ("in", 0.2), ("Lapland", 0.2), (".", 0.2)],
                ),
            ],
            &QUESTION_IG,
        )
    }

    fn flagging_detectors() -> Detectors {
        Detectors {
            early: Some(forced_rnn(false)),
            realtime: Some(RealtimeDetector::Mlp(entropy_mlp())),
        }
    }

    #[test]
    fn realtime_flag_truncates_and_retrieves() {
        let trace = answer(
            QUESTION,
            &indexed(),
            &flagging_scenario(),
            &flagging_detectors(),
            &config(),
        )
        .unwrap();
        assert!(!trace.failed, "error: {:?}", trace.error);
        assert_eq!(trace.final_answer, "Santa Claus visits lives in Lapland.");
        assert_eq!(trace.counters.rc, 1);
        assert_eq!(trace.counters.gc, 2);
        assert_eq!(trace.counters.hc, 1);
        assert_eq!(trace.counters.tc, 8);
        assert_eq!(trace.counters.sc, 2);
        assert_eq!(trace.events.len(), 3);
        assert_eq!(trace.events[0], TraceEvent::RealtimeTrigger { position: 4 });
        match &trace.events[1] {
            TraceEvent::Retrieval { keywords, .. } => {
                // Entities of the kept prefix "Santa Claus visits".
                assert_eq!(keywords, &vec!["santa claus".to_string()]);
            }
            other => panic!("expected retrieval, got {other:?}"),
        }
        assert_eq!(trace.events[2], TraceEvent::Truncation { position: 4 });
        let flagged: Vec<&TokenRecord> =
            trace.tokens.iter().filter(|t| t.hallucinated).collect();
        assert_eq!(flagged.len(), 1);
        assert_eq!(flagged[0].surface, "Mars");
        assert_eq!(flagged[0].position, 4);
        assert!(!trace.final_answer.contains("Mars"));
        assert_eq!(trace.prompts.len(), 2);
        assert!(trace.prompts[1].contains("Answer: Santa Claus visits"));
        // Positions stay global across the pass boundary.
        let positions: Vec<usize> = trace.tokens.iter().map(|t| t.position).collect();
        assert_eq!(positions, vec![1, 2, 3, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn exhausted_retrieval_budget_drops_the_token_and_continues() {
        let cfg = EngineConfig { max_retrievals: 0, ..config() };
        let trace = answer(
            QUESTION,
            &indexed(),
            &flagging_scenario(),
            &flagging_detectors(),
            &cfg,
        )
        .unwrap();
        assert!(!trace.failed);
        // The same pass keeps going, so the script continues past the flag.
        assert_eq!(trace.final_answer, "Santa Claus visits often");
        assert_eq!(trace.counters.rc, 0);
        assert_eq!(trace.counters.gc, 1);
        assert_eq!(trace.counters.hc, 1);
        assert_eq!(trace.counters.tc, 5);
        assert_eq!(trace.events, vec![TraceEvent::RealtimeTrigger { position: 4 }]);
    }

    #[test]
    fn token_budget_stops_generation() {
        let cfg = EngineConfig { max_tokens: 2, ..config() };
        let adapter = adapter(
            QUESTION,
            &[(QUESTION, vec![("one", 0.2), ("two", 0.2), ("three", 0.2)])],
            &QUESTION_IG,
        );
        let trace = answer(QUESTION, &indexed(), &adapter, &quiet_detectors(), &cfg).unwrap();
        assert!(!trace.failed);
        assert_eq!(trace.counters.tc, 2);
        assert_eq!(trace.final_answer, "one two");
    }

    #[test]
    fn adapter_failure_yields_a_failed_trace_with_partial_answer() {
        // Script runs dry after two tokens without an end marker.
        let adapter = adapter_with(
            QUESTION,
            &[(QUESTION, vec![("Santa", 0.2), ("Claus", 0.2)])],
            &QUESTION_IG,
            false,
        );
        let trace =
            answer(QUESTION, &indexed(), &adapter, &quiet_detectors(), &config()).unwrap();
        assert!(trace.failed);
        assert!(trace.error.is_some());
        assert_eq!(trace.final_answer, "Santa Claus");
        assert_eq!(trace.counters.tc, 2);
        assert_eq!(trace.counters.gc, 1);
    }

    #[test]
    fn missing_detectors_are_config_errors() {
        let adapter = adapter(QUESTION, &[], &QUESTION_IG);
        let err = answer(
            QUESTION,
            &indexed(),
            &adapter,
            &Detectors::default(),
            &config(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));

        let only_early = Detectors { early: Some(forced_rnn(false)), realtime: None };
        let err =
            answer(QUESTION, &indexed(), &adapter, &only_early, &config()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn mis_shaped_detector_is_a_config_error() {
        let adapter = adapter(QUESTION, &[], &QUESTION_IG);
        let detectors = Detectors {
            early: Some(RnnNet::init(3, 2, 1)),
            realtime: Some(RealtimeDetector::Mlp(forced_mlp(false))),
        };
        let err = answer(QUESTION, &indexed(), &adapter, &detectors, &config()).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("input features")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn disabled_stages_need_no_detectors() {
        let cfg = EngineConfig { disable_early: true, disable_realtime: true, ..config() };
        let adapter = adapter(
            QUESTION,
            &[(QUESTION, vec![("done", 0.2), (".", 0.2)])],
            &QUESTION_IG,
        );
        let trace =
            answer(QUESTION, &indexed(), &adapter, &Detectors::default(), &cfg).unwrap();
        assert!(!trace.failed);
        assert_eq!(trace.final_answer, "done.");
    }

    #[test]
    fn disable_realtime_ignores_a_flagging_detector() {
        let cfg = EngineConfig { disable_realtime: true, ..config() };
        let detectors = Detectors {
            early: Some(forced_rnn(false)),
            realtime: Some(RealtimeDetector::Mlp(forced_mlp(true))),
        };
        let adapter = adapter(
            QUESTION,
            &[(QUESTION, vec![("fine", 0.2), (".", 0.2)])],
            &QUESTION_IG,
        );
        let trace = answer(QUESTION, &indexed(), &adapter, &detectors, &cfg).unwrap();
        assert_eq!(trace.counters.hc, 0);
        assert_eq!(trace.final_answer, "fine.");
    }

    #[test]
    fn low_probability_rule_flags_improbable_tokens() {
        let detectors = Detectors {
            early: Some(forced_rnn(false)),
            realtime: Some(RealtimeDetector::LowProbability),
        };
        // ln(0.4) falls below the ln(0.5) cut, ln(0.9) stays above it.
        let step = |surface: &str, logprob: f64, is_end: bool| ScriptedStep {
            token: surface.to_string(),
            logprob,
            attention: 0.5,
            entropy: 0.2,
            is_end,
        };
        let scenario = Scenario {
            version: 1,
            generations: vec![
                ScriptedGeneration {
                    prompt_prefix: QUESTION.to_string(),
                    steps: vec![
                        step("Santa", (0.9f64).ln(), false),
                        step("Mars", (0.4f64).ln(), false),
                        step("waves", (0.9f64).ln(), true),
                    ],
                },
                ScriptedGeneration {
                    prompt_prefix: "External Knowledge After Chunk:".to_string(),
                    steps: vec![
                        step("smiles", (0.9f64).ln(), false),
                        step(".", (0.9f64).ln(), true),
                    ],
                },
            ],
            attributions: vec![ScriptedAttribution {
                question_prefix: QUESTION.to_string(),
                values: QUESTION_IG.to_vec(),
            }],
        };
        let adapter = MockAdapter::new(scenario).unwrap();
        let trace =
            answer(QUESTION, &indexed(), &adapter, &detectors, &config()).unwrap();
        assert!(!trace.failed, "error: {:?}", trace.error);
        assert_eq!(trace.counters.hc, 1);
        assert_eq!(trace.counters.rc, 1);
        assert_eq!(trace.final_answer, "Santa smiles.");
        assert_eq!(trace.events[0], TraceEvent::RealtimeTrigger { position: 2 });
    }

    #[test]
    fn prerank_toggle_changes_recorded_keyword_order() {
        let detectors = Detectors { early: Some(forced_rnn(true)), ..quiet_detectors() };
        // Two attribution candidates, positions 4 and 6, with position 6
        // weighted heavier. Attribution-only importance weights make the
        // ranked order provably differ from appearance order.
        let ig = [0.01, 0.01, 0.01, 0.4, 0.01, 0.55];
        let script: &[(&str, Vec<(&str, f64)>)] =
            &[("External Knowledge", vec![(".", 0.2)])];
        let adapter = adapter(QUESTION, script, &ig);
        let base = EngineConfig { importance_weights: [1.0, 0.0, 0.0, 0.0], ..config() };

        let keywords_of = |cfg: &EngineConfig| -> Vec<String> {
            let trace = answer(QUESTION, &indexed(), &adapter, &detectors, cfg).unwrap();
            match &trace.events[1] {
                TraceEvent::Retrieval { keywords, .. } => keywords.clone(),
                other => panic!("expected retrieval, got {other:?}"),
            }
        };
        let ranked = keywords_of(&base);
        let unranked = keywords_of(&EngineConfig { disable_prerank: true, ..base });
        // Appearance order keeps "rovaniemi" first; ranking favors the
        // heavier-attributed "finland".
        assert_eq!(unranked, vec!["rovaniemi".to_string(), "finland".to_string()]);
        assert_eq!(ranked, vec!["finland".to_string(), "rovaniemi".to_string()]);
    }

    #[test]
    fn disable_chunk_switches_the_prompt_template() {
        let detectors = Detectors { early: Some(forced_rnn(true)), ..quiet_detectors() };
        let cfg = EngineConfig { disable_chunk: true, ..config() };
        let adapter = adapter(
            QUESTION,
            &[("External Knowledge:", vec![(".", 0.2)])],
            &QUESTION_IG,
        );
        let trace = answer(QUESTION, &indexed(), &adapter, &detectors, &cfg).unwrap();
        assert!(trace.prompts[0].starts_with("External Knowledge:\n"));
        assert!(!trace.prompts[0].contains("After Chunk"));
    }

    #[test]
    fn disable_stepwise_retrieves_one_batch() {
        let detectors = Detectors { early: Some(forced_rnn(true)), ..quiet_detectors() };
        let cfg = EngineConfig { disable_stepwise: true, ..config() };
        let adapter = adapter(
            QUESTION,
            &[("External Knowledge After Chunk:", vec![(".", 0.2)])],
            &QUESTION_IG,
        );
        let trace = answer(QUESTION, &indexed(), &adapter, &detectors, &cfg).unwrap();
        match &trace.events[1] {
            TraceEvent::Retrieval { batch_sizes, doc_ids, .. } => {
                assert_eq!(batch_sizes.len(), 1);
                assert_eq!(batch_sizes[0], doc_ids.len());
            }
            other => panic!("expected retrieval, got {other:?}"),
        }
    }

    #[test]
    fn run_batch_isolates_failures_and_averages() {
        let examples = vec![
            QAExample {
                question: QUESTION.into(),
                answers: vec!["Santa Claus".into()],
                metadata: Default::default(),
            },
            QAExample {
                question: "Unknown question with no script".into(),
                answers: vec!["nothing".into()],
                metadata: Default::default(),
            },
        ];
        let adapter = adapter(
            QUESTION,
            &[(QUESTION, vec![("Santa", 0.2), ("Claus", 0.2), (".", 0.2)])],
            &QUESTION_IG,
        );
        let traces =
            run_batch(&examples, &indexed(), &adapter, &quiet_detectors(), &config());
        assert_eq!(traces.len(), 2);
        assert!(!traces[0].failed);
        assert_eq!(traces[0].final_answer, "Santa Claus.");
        assert!(traces[1].failed);
        assert!(traces[1].error.is_some());
        let means = Counters::mean(&traces.iter().map(|t| t.counters).collect::<Vec<_>>());
        assert_eq!(means.gc, 0.5);
        assert_eq!(means.tc, 1.5);
    }

    #[test]
    fn traces_are_deterministic() {
        let run = || {
            answer(
                QUESTION,
                &indexed(),
                &flagging_scenario(),
                &flagging_detectors(),
                &config(),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn trace_events_serialize_with_kind_tags() {
        let events = vec![
            TraceEvent::EarlyTrigger,
            TraceEvent::RealtimeTrigger { position: 4 },
            TraceEvent::Truncation { position: 4 },
        ];
        let json = serde_json::to_string(&events).unwrap();
        assert!(json.contains(r#""kind":"early_trigger""#));
        assert!(json.contains(r#""kind":"realtime_trigger""#));
        assert!(json.contains(r#""position":4"#));
        let back: Vec<TraceEvent> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, events);
    }

    #[test]
    fn fingerprint_matches_the_config() {
        let cfg = config();
        let adapter = adapter(
            QUESTION,
            &[(QUESTION, vec![(".", 0.2)])],
            &QUESTION_IG,
        );
        let trace = answer(QUESTION, &indexed(), &adapter, &quiet_detectors(), &cfg).unwrap();
        assert_eq!(trace.config_fingerprint, cfg.fingerprint());
        assert_ne!(
            trace.config_fingerprint,
            EngineConfig { max_tokens: 999, ..cfg }.fingerprint()
        );
    }
}
