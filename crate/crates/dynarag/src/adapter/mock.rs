//! Scripted deterministic adapter for tests and offline runs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_attribution_len, check_step_values, GenerationStep, ModelAdapter};
use crate::error::{Error, Result};
use crate::types::TokenRecord;

const SCENARIO_VERSION: u32 = 1;

/// A scripted model: prompt prefixes map to token scripts, question
/// prefixes map to attribution vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub generations: Vec<ScriptedGeneration>,
    #[serde(default)]
    pub attributions: Vec<ScriptedAttribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedGeneration {
    /// Matched against the head of the prompt; the longest matching
    /// pattern wins.
    pub prompt_prefix: String,
    pub steps: Vec<ScriptedStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedStep {
    pub token: String,
    pub logprob: f64,
    pub attention: f64,
    pub entropy: f64,
    #[serde(default)]
    pub is_end: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedAttribution {
    pub question_prefix: String,
    pub values: Vec<f64>,
}

impl Scenario {
    pub fn from_json_str(json: &str) -> Result<Self> {
        let scenario: Scenario =
            serde_json::from_str(json).map_err(|e| Error::Format(format!("scenario: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&json)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCENARIO_VERSION {
            return Err(Error::Format(format!(
                "unsupported scenario version {} (expected {SCENARIO_VERSION})",
                self.version
            )));
        }
        for (i, g) in self.generations.iter().enumerate() {
            if g.steps.is_empty() {
                return Err(Error::Validation(format!(
                    "scenario generation {i} ({:?}) has no steps",
                    g.prompt_prefix
                )));
            }
            for (j, s) in g.steps.iter().enumerate() {
                check_step_values(&s.token, s.logprob, s.attention, s.entropy).map_err(|e| {
                    Error::Validation(format!("scenario generation {i} step {j}: {e}"))
                })?;
            }
            if self.generations[..i].iter().any(|o| o.prompt_prefix == g.prompt_prefix) {
                return Err(Error::Validation(format!(
                    "duplicate prompt pattern {:?}",
                    g.prompt_prefix
                )));
            }
        }
        for (i, a) in self.attributions.iter().enumerate() {
            if a.values.is_empty() {
                return Err(Error::Validation(format!("scenario attribution {i} is empty")));
            }
            if self.attributions[..i].iter().any(|o| o.question_prefix == a.question_prefix) {
                return Err(Error::Validation(format!(
                    "duplicate question pattern {:?}",
                    a.question_prefix
                )));
            }
        }
        Ok(())
    }
}

/// Replays a [`Scenario`]. Pure: every answer is a function of the
/// scenario and the call arguments, so replays are byte-identical.
#[derive(Debug, Clone)]
pub struct MockAdapter {
    scenario: Scenario,
}

impl MockAdapter {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        Ok(MockAdapter { scenario })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(MockAdapter { scenario: Scenario::load(path)? })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    fn find_generation(&self, prompt: &str) -> Result<&ScriptedGeneration> {
        self.scenario
            .generations
            .iter()
            .filter(|g| prompt.starts_with(&g.prompt_prefix))
            .max_by_key(|g| g.prompt_prefix.len())
            .ok_or_else(|| {
                Error::Scenario(format!("no script matches prompt {:?}", head(prompt)))
            })
    }
}

impl ModelAdapter for MockAdapter {
    fn generate_step(&self, prompt: &str, emitted: &[TokenRecord]) -> Result<GenerationStep> {
        let generation = self.find_generation(prompt)?;
        let step = generation.steps.get(emitted.len()).ok_or_else(|| {
            Error::Scenario(format!(
                "script for {:?} exhausted after {} steps",
                generation.prompt_prefix,
                generation.steps.len()
            ))
        })?;
        let mut token = TokenRecord::new(step.token.clone(), emitted.len() + 1);
        token.logprob = Some(step.logprob);
        token.attention = Some(step.attention);
        Ok(GenerationStep {
            token,
            next_dist_entropy: step.entropy,
            is_end: step.is_end,
        })
    }

    fn attributions(&self, question: &str) -> Result<Vec<f64>> {
        let scripted = self
            .scenario
            .attributions
            .iter()
            .filter(|a| question.starts_with(&a.question_prefix))
            .max_by_key(|a| a.question_prefix.len())
            .ok_or_else(|| {
                Error::Scenario(format!("no attribution script matches {:?}", head(question)))
            })?;
        check_attribution_len(question, &scripted.values)?;
        Ok(scripted.values.clone())
    }
}

/// First 80 chars of a string, for error messages.
fn head(s: &str) -> String {
    if s.chars().count() <= 80 {
        return s.to_string();
    }
    s.chars().take(80).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario_json() -> String {
        serde_json::json!({
            "version": 1,
            "generations": [
                {
                    "prompt_prefix": "Q1",
                    "steps": [
                        {"token": "The", "logprob": -0.1, "attention": 0.5, "entropy": 0.2},
                        {"token": "answer", "logprob": -0.2, "attention": 0.6, "entropy": 0.3},
                        {"token": "is", "logprob": -0.1, "attention": 0.4, "entropy": 0.1},
                        {"token": "no", "logprob": -0.8, "attention": 0.9, "entropy": 1.4},
                        {"token": ".", "logprob": -0.05, "attention": 0.2, "entropy": 0.1, "is_end": true}
                    ]
                },
                {
                    "prompt_prefix": "Q1 with more context",
                    "steps": [
                        {"token": "yes", "logprob": -0.3, "attention": 0.7, "entropy": 0.5, "is_end": true}
                    ]
                }
            ],
            "attributions": [
                {"question_prefix": "capital of America", "values": [0.1, 0.05, 0.7]}
            ]
        })
        .to_string()
    }

    fn adapter() -> MockAdapter {
        MockAdapter::new(Scenario::from_json_str(&scenario_json()).unwrap()).unwrap()
    }

    fn run_script(adapter: &MockAdapter, prompt: &str) -> Vec<GenerationStep> {
        let mut emitted = Vec::new();
        let mut steps = Vec::new();
        loop {
            let step = adapter.generate_step(prompt, &emitted).unwrap();
            emitted.push(step.token.clone());
            let done = step.is_end;
            steps.push(step);
            if done {
                break;
            }
        }
        steps
    }

    #[test]
    fn scripts_replay_in_order() {
        let adapter = adapter();
        let steps = run_script(&adapter, "Q1: anything");
        let surfaces: Vec<&str> = steps.iter().map(|s| s.token.surface.as_str()).collect();
        assert_eq!(surfaces, ["The", "answer", "is", "no", "."]);
        assert!(steps[4].is_end);
        assert!(!steps[3].is_end);
        assert_eq!(steps[0].token.position, 1);
        assert_eq!(steps[4].token.position, 5);
    }

    #[test]
    fn replays_are_identical() {
        let adapter = adapter();
        assert_eq!(run_script(&adapter, "Q1: anything"), run_script(&adapter, "Q1: anything"));
    }

    #[test]
    fn longest_prefix_wins() {
        let adapter = adapter();
        let step = adapter.generate_step("Q1 with more context, please", &[]).unwrap();
        assert_eq!(step.token.surface, "yes");
    }

    #[test]
    fn pattern_miss_is_a_scenario_error() {
        let adapter = adapter();
        assert!(matches!(adapter.generate_step("unknown", &[]), Err(Error::Scenario(_))));
        assert!(matches!(adapter.attributions("unknown question"), Err(Error::Scenario(_))));
    }

    #[test]
    fn exhausted_script_is_a_scenario_error() {
        let adapter = adapter();
        let mut emitted = Vec::new();
        for _ in 0..5 {
            emitted.push(adapter.generate_step("Q1", &emitted).unwrap().token);
        }
        assert!(matches!(adapter.generate_step("Q1", &emitted), Err(Error::Scenario(_))));
    }

    #[test]
    fn scripted_attributions_are_length_checked() {
        let adapter = adapter();
        // "capital of America" tokenizes to 3 tokens; the script has 3.
        assert_eq!(adapter.attributions("capital of America").unwrap(), vec![0.1, 0.05, 0.7]);
        // One more token than scripted values: contract error.
        let err = adapter.attributions("capital of America today").unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn malformed_steps_rejected_at_load() {
        let bad = serde_json::json!({
            "version": 1,
            "generations": [{
                "prompt_prefix": "Q",
                "steps": [{"token": "x", "logprob": 0.5, "attention": 0.5, "entropy": 0.0}]
            }]
        });
        let err = Scenario::from_json_str(&bad.to_string()).unwrap_err();
        assert!(err.to_string().contains("logprob"), "{err}");
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = serde_json::json!({"version": 1, "generations": [], "extra": true});
        assert!(matches!(
            Scenario::from_json_str(&bad.to_string()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn duplicate_patterns_rejected() {
        let bad = serde_json::json!({
            "version": 1,
            "generations": [
                {"prompt_prefix": "Q", "steps": [{"token": "a", "logprob": -0.1, "attention": 0.1, "entropy": 0.1, "is_end": true}]},
                {"prompt_prefix": "Q", "steps": [{"token": "b", "logprob": -0.1, "attention": 0.1, "entropy": 0.1, "is_end": true}]}
            ]
        });
        assert!(Scenario::from_json_str(&bad.to_string()).is_err());
    }

    #[test]
    fn wrong_version_rejected() {
        let bad = serde_json::json!({"version": 2, "generations": []});
        assert!(matches!(Scenario::from_json_str(&bad.to_string()), Err(Error::Format(_))));
    }
}
