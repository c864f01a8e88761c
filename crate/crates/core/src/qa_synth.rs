//! Synthetic evaluation set: one generated question per chunk, with automated
//! quality filtering and manual keep/drop overrides.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chunker::Chunk;
use crate::embedder::tokenize;
use crate::http::{map_in_flight, JsonClient};
use crate::jsonl::{self, JsonlError};

pub const MIN_QUESTION_CHARS: usize = 10;
pub const MAX_QUESTION_CHARS: usize = 300;
pub const CHUNK_PLACEHOLDER: &str = "{chunk}";

pub const DEFAULT_PROMPT: &str = "Below is an excerpt from a meeting transcript.\n\n\
{chunk}\n\n\
Write a single question that a resident might search for and that this excerpt answers. \
Reply with the question only, on one line.";

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("invalid generator configuration: {0}")]
    Config(String),
    #[error("chunk has no content tokens to ask about")]
    NoContentTokens,
    #[error("empty completion")]
    EmptyCompletion,
    #[error("question service failed: {0}")]
    Remote(String),
    #[error("override for unknown query_id {0:?}")]
    UnknownOverride(String),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

impl GenError {
    /// Short reason recorded in `pairs.jsonl` when generation fails.
    pub fn reason(&self) -> &'static str {
        match self {
            Self::NoContentTokens => "no_content_tokens",
            Self::EmptyCompletion => "empty_completion",
            Self::Remote(_) => "generation_failed",
            Self::Config(_) | Self::UnknownOverride(_) | Self::Jsonl(_) => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GenConfig {
    #[serde(rename = "remote_llm")]
    RemoteLlm {
        endpoint: String,
        model_name: String,
        #[serde(default = "default_prompt")]
        prompt_template: String,
        #[serde(default = "default_temperature")]
        temperature: f64,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_in_flight")]
        in_flight: usize,
    },
    TemplateStub {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

fn default_prompt() -> String {
    DEFAULT_PROMPT.to_string()
}
fn default_temperature() -> f64 {
    0.2
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_in_flight() -> usize {
    crate::http::DEFAULT_IN_FLIGHT
}

impl Default for GenConfig {
    fn default() -> Self {
        Self::TemplateStub { seed: None }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        if let Self::RemoteLlm { prompt_template, .. } = self {
            if !prompt_template.contains(CHUNK_PLACEHOLDER) {
                return Err(GenError::Config(format!("prompt_template must contain {CHUNK_PLACEHOLDER}")));
            }
        }
        Ok(())
    }

    /// Provider/model tag stored with every pair.
    pub fn tag(&self) -> String {
        match self {
            Self::RemoteLlm { model_name, .. } => format!("remote/{model_name}"),
            Self::TemplateStub { .. } => "template-stub/v1".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryChunkPair {
    pub query_id: String,
    pub chunk_id: String,
    pub query_text: String,
    pub generator: String,
    pub filtered: bool,
    pub filter_reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    TooShort,
    TooLong,
    NoQuestionMark,
    NoOverlap,
}

impl FilterReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::TooShort => "too_short",
            Self::TooLong => "too_long",
            Self::NoQuestionMark => "no_question_mark",
            Self::NoOverlap => "no_overlap",
        }
    }
}

/// A configured question source.
#[derive(Debug, Clone)]
pub enum QuestionGenerator {
    Template,
    Remote { client: JsonClient, model_name: String, prompt_template: String, temperature: f64, in_flight: usize },
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

impl QuestionGenerator {
    pub fn new(config: &GenConfig) -> Result<Self, GenError> {
        config.validate()?;
        Ok(match config {
            GenConfig::TemplateStub { .. } => Self::Template,
            GenConfig::RemoteLlm { endpoint, model_name, prompt_template, temperature, timeout_ms, in_flight } => {
                Self::Remote {
                    client: JsonClient::new(endpoint, *timeout_ms).map_err(|e| GenError::Config(e.to_string()))?,
                    model_name: model_name.clone(),
                    prompt_template: prompt_template.clone(),
                    temperature: *temperature,
                    in_flight: *in_flight,
                }
            }
        })
    }

    fn in_flight(&self) -> usize {
        match self {
            Self::Template => 1,
            Self::Remote { in_flight, .. } => *in_flight,
        }
    }
}

/// Template questions name the two most frequent content tokens of the chunk.
pub fn template_question(text: &str) -> Result<String, GenError> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in tokenize(text) {
        *counts.entry(t).or_default() += 1;
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    match ranked.as_slice() {
        [] => Err(GenError::NoContentTokens),
        [(only, _)] => Ok(format!("What is discussed regarding {only}?")),
        [(first, _), (second, _), ..] => Ok(format!("What is discussed regarding {first} and {second}?")),
    }
}

pub fn generate_question(generator: &QuestionGenerator, chunk: &Chunk) -> Result<String, GenError> {
    match generator {
        QuestionGenerator::Template => template_question(&chunk.text),
        QuestionGenerator::Remote { client, model_name, prompt_template, temperature, .. } => {
            let prompt = prompt_template.replace(CHUNK_PLACEHOLDER, &chunk.text);
            let req = ChatRequest {
                model: model_name,
                messages: [ChatMessage { role: "user", content: &prompt }],
                temperature: *temperature,
            };
            let resp: ChatResponse = client.post(&req).map_err(|e| GenError::Remote(e.to_string()))?;
            let content = resp.choices.into_iter().next().and_then(|c| c.message.content).unwrap_or_default();
            let line = content.trim().lines().next().unwrap_or("").trim().to_string();
            if line.is_empty() {
                Err(GenError::EmptyCompletion)
            } else {
                Ok(line)
            }
        }
    }
}

/// Length in 10..=300 chars, ends with '?', and shares a content token with the
/// chunk. Rules are checked in that order; the first failure is reported.
pub fn quality_filter(question: &str, chunk: &Chunk) -> Result<(), FilterReason> {
    let len = question.chars().count();
    if len < MIN_QUESTION_CHARS {
        return Err(FilterReason::TooShort);
    }
    if len > MAX_QUESTION_CHARS {
        return Err(FilterReason::TooLong);
    }
    if !question.ends_with('?') {
        return Err(FilterReason::NoQuestionMark);
    }
    let chunk_tokens: HashSet<String> = tokenize(&chunk.text).into_iter().collect();
    if !tokenize(question).iter().any(|t| chunk_tokens.contains(t)) {
        return Err(FilterReason::NoOverlap);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub attempted: usize,
    pub generated: usize,
    pub filtered: usize,
    pub retained: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<QueryChunkPair>,
    pub summary: DatasetSummary,
}

impl Dataset {
    pub fn retained(&self) -> impl Iterator<Item = &QueryChunkPair> {
        self.pairs.iter().filter(|p| !p.filtered)
    }
}

pub fn query_id(index: usize) -> String {
    format!("q{index:06}")
}

pub fn summarize(pairs: &[QueryChunkPair]) -> DatasetSummary {
    let filtered = pairs.iter().filter(|p| p.filtered).count();
    DatasetSummary {
        attempted: pairs.len(),
        generated: pairs.iter().filter(|p| !p.query_text.is_empty()).count(),
        filtered,
        retained: pairs.len() - filtered,
    }
}

/// One pair per chunk, in chunk order. Failed generations and filtered
/// questions stay in the list with `filtered = true`.
pub fn build_dataset(config: &GenConfig, chunks: &[Chunk]) -> Result<Dataset, GenError> {
    let generator = QuestionGenerator::new(config)?;
    let tag = config.tag();
    let mut seen = HashSet::new();
    if let Some(dup) = chunks.iter().find(|c| !seen.insert(c.chunk_id.as_str())) {
        return Err(GenError::Config(format!("duplicate chunk_id {:?}", dup.chunk_id)));
    }
    let questions = map_in_flight(chunks, generator.in_flight(), |_, c| generate_question(&generator, c));
    let pairs: Vec<QueryChunkPair> = chunks
        .iter()
        .zip(questions)
        .enumerate()
        .map(|(i, (chunk, q))| {
            let (query_text, reason) = match q {
                Ok(text) => {
                    let reason = quality_filter(&text, chunk).err().map(|r| r.as_str().to_string());
                    (text, reason)
                }
                Err(e) => {
                    log::warn!("question generation failed for {}: {e}", chunk.chunk_id);
                    (String::new(), Some(e.reason().to_string()))
                }
            };
            QueryChunkPair {
                query_id: query_id(i),
                chunk_id: chunk.chunk_id.clone(),
                query_text,
                generator: tag.clone(),
                filtered: reason.is_some(),
                filter_reason: reason,
            }
        })
        .collect();
    let summary = summarize(&pairs);
    Ok(Dataset { pairs, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Keep,
    Drop,
}

/// Row of `overrides.jsonl`, written by a human reviewer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Override {
    pub query_id: String,
    pub decision: Decision,
}

pub fn read_overrides(path: &Path) -> Result<Vec<Override>, GenError> {
    Ok(jsonl::read(path)?)
}

/// Apply reviewer decisions. `keep` restores a filtered pair only when it has
/// a question; `drop` always filters. Returns how many pairs changed.
pub fn apply_overrides(pairs: &mut [QueryChunkPair], overrides: &[Override]) -> Result<usize, GenError> {
    let index: HashMap<&str, usize> = pairs.iter().enumerate().map(|(i, p)| (p.query_id.as_str(), i)).collect();
    let mut resolved = Vec::with_capacity(overrides.len());
    for o in overrides {
        let i = *index.get(o.query_id.as_str()).ok_or_else(|| GenError::UnknownOverride(o.query_id.clone()))?;
        resolved.push((i, o.decision));
    }
    let mut changed = 0;
    for (i, decision) in resolved {
        let p = &mut pairs[i];
        match decision {
            Decision::Drop if !p.filtered || p.filter_reason.as_deref() != Some("manual_drop") => {
                p.filtered = true;
                p.filter_reason = Some("manual_drop".into());
                changed += 1;
            }
            Decision::Keep if p.filtered && !p.query_text.is_empty() => {
                p.filtered = false;
                p.filter_reason = None;
                changed += 1;
            }
            _ => {}
        }
    }
    Ok(changed)
}
