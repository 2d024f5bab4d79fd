use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{
    build_few_shot_prompt, parse_response, sample_shots, ChatTransport, LlmError, ParseError, ParsedLLMResponse,
    ProviderConfig, ShotFormat, CLASS_COUNT,
};
use crate::attention::ao_score;
use crate::ingest::{AnnotatedPost, Span};
use crate::metrics::{multiclass_metrics_with_abstain, Averaging, MetricRow};
use crate::schema::LabelVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmRunConfig {
    /// 0 gives the zero-shot prompt.
    pub shots_per_class: usize,
    pub shot_seed: u64,
    pub shot_format: ShotFormat,
    pub provider: ProviderConfig,
}

impl Default for LlmRunConfig {
    fn default() -> Self {
        LlmRunConfig {
            shots_per_class: 0,
            shot_seed: 200,
            shot_format: ShotFormat::WithExplanation,
            provider: ProviderConfig::default(),
        }
    }
}

/// One post's exchange: the raw reply and its parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmOutcome {
    pub sample_id: String,
    pub template_id: String,
    pub reply: String,
    pub parsed: Result<ParsedLLMResponse, ParseError>,
}

/// Prompts the model once per post. Shots (if any) are sampled once from
/// `train` and shared by every prompt. Transport errors abort the run;
/// parse failures are kept in the outcomes.
pub fn run_llm(
    posts: &[AnnotatedPost],
    train: &[AnnotatedPost],
    cfg: &LlmRunConfig,
    transport: &mut dyn ChatTransport,
) -> Result<Vec<LlmOutcome>, LlmError> {
    let shots = sample_shots(train, cfg.shots_per_class, cfg.shot_seed)?;
    posts
        .iter()
        .map(|post| {
            let bundle = build_few_shot_prompt(&post.id, &post.text, &shots, cfg.shot_format)?;
            let reply = transport.send(&bundle.rendered_text, &cfg.provider)?;
            Ok(LlmOutcome {
                sample_id: post.id.clone(),
                template_id: bundle.template_id,
                parsed: parse_response(&reply),
                reply,
            })
        })
        .collect()
}

/// What happens to replies that could not be parsed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    /// Scored as wrong predictions and as non-overlapping explanations.
    #[default]
    Incorrect,
    /// Left out of every metric (diagnostics only).
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmSampleResult {
    pub sample_id: String,
    pub gold_class: usize,
    pub predicted_class: Option<usize>,
    pub overlap: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmEvaluation {
    pub metrics: MetricRow,
    pub ao_score: Option<f64>,
    pub format_failures: usize,
    pub failure_mode: FailureMode,
    pub per_sample: Vec<LlmSampleResult>,
}

/// Lower-cased runs of letters, digits and inner apostrophes.
pub fn word_bag(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '\u{2019}'))
        .map(|w| w.trim_matches(|c| c == '\'' || c == '\u{2019}').to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// True iff at least half of the explanation's words (with repetition)
/// occur in some gold span.
pub fn explanation_overlaps(explanation: &str, spans: &[Span]) -> bool {
    let gold: HashSet<String> = spans.iter().flat_map(|s| word_bag(&s.text)).collect();
    let bag = word_bag(explanation);
    if bag.is_empty() {
        return false;
    }
    let inside = bag.iter().filter(|w| gold.contains(*w)).count();
    2 * inside >= bag.len()
}

/// Multi-class metrics and word-bag AO over LLM outcomes. Every outcome
/// needs a multi-class gold post with the same id.
pub fn evaluate_llm(
    outcomes: &[LlmOutcome],
    gold: &[AnnotatedPost],
    failure_mode: FailureMode,
    averaging: Averaging,
) -> Result<LlmEvaluation, LlmError> {
    if outcomes.is_empty() {
        return Err(LlmError::Evaluation("no LLM outcomes to score".into()));
    }
    let by_id: HashMap<&str, &AnnotatedPost> = gold.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    let mut flags = Vec::new();
    let mut per_sample = Vec::with_capacity(outcomes.len());
    let mut failures = 0;
    for o in outcomes {
        let post = by_id
            .get(o.sample_id.as_str())
            .ok_or_else(|| LlmError::Evaluation(format!("no gold post for {}", o.sample_id)))?;
        let LabelVector::MultiClass { class: gold_class } = post.gold else {
            return Err(LlmError::Evaluation(format!("gold post {} is not multi-class", post.id)));
        };
        if gold_class >= CLASS_COUNT {
            return Err(LlmError::Evaluation(format!("gold post {} has class index {gold_class}", post.id)));
        }
        let parsed = o.parsed.as_ref().ok();
        if parsed.is_none() {
            failures += 1;
        }
        let counted = parsed.is_some() || failure_mode == FailureMode::Incorrect;
        let predicted = parsed.map(ParsedLLMResponse::class_index);
        let overlap = if post.spans.is_empty() || !counted {
            None
        } else {
            Some(parsed.is_some_and(|p| explanation_overlaps(&p.explanation, &post.spans)))
        };
        if counted {
            preds.push(predicted);
            golds.push(gold_class);
            flags.extend(overlap);
        }
        per_sample.push(LlmSampleResult { sample_id: o.sample_id.clone(), gold_class, predicted_class: predicted, overlap });
    }
    if golds.is_empty() {
        return Err(LlmError::Evaluation("every reply failed to parse and failures are excluded".into()));
    }
    let metrics = multiclass_metrics_with_abstain(&preds, &golds, CLASS_COUNT, averaging)
        .map_err(|e| LlmError::Evaluation(e.to_string()))?;
    let ao = if flags.is_empty() { None } else { Some(ao_score(&flags).map_err(|e| LlmError::Evaluation(e.to_string()))?) };
    Ok(LlmEvaluation { metrics, ao_score: ao, format_failures: failures, failure_mode, per_sample })
}
