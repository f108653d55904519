//! Affect-conditioned prompt synthesis from a memory description.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ValenceState;
use crate::error::{Error, Result};

pub const WORD_BANK_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_WORDS_PER_PROMPT: usize = 2;

const DEFAULT_BANK: &str = include_str!("../data/affect_words.txt");

/// Identifier sent with every rewrite request so results can be traced to
/// the exact instruction text.
pub const REWRITE_INSTRUCTION_VERSION: &str = "rewrite-v1";
pub const REWRITE_INSTRUCTION: &str = "Rewrite the memory description so that it conveys the given \
mood. Weave in the given affect words, keep every concrete scene element, write a single \
sentence suitable as an image and music generation prompt, and return only the rewritten text.";

/// Descriptive terms per non-neutral state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffectWordBank {
    positive: Vec<String>,
    negative: Vec<String>,
}

impl AffectWordBank {
    pub fn new(positive: Vec<String>, negative: Vec<String>) -> Result<Self> {
        let clean = |list: Vec<String>, name: &str| -> Result<Vec<String>> {
            let mut seen = BTreeSet::new();
            let mut out = Vec::new();
            for w in list {
                let w = w.trim().to_lowercase();
                if !w.is_empty() && seen.insert(w.clone()) {
                    out.push(w);
                }
            }
            if out.is_empty() {
                return Err(Error::invalid(format!("{name} word list is empty")));
            }
            Ok(out)
        };
        let positive = clean(positive, "positive")?;
        let negative = clean(negative, "negative")?;
        if let Some(w) = positive.iter().find(|w| negative.contains(w)) {
            return Err(Error::invalid(format!("{w:?} appears in both word lists")));
        }
        Ok(AffectWordBank { positive, negative })
    }

    /// `[positive]` / `[negative]` sections, one term per line, `#` comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut positive = Vec::new();
        let mut negative = Vec::new();
        let mut current: Option<&mut Vec<String>> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[positive]" => current = Some(&mut positive),
                "[negative]" => current = Some(&mut negative),
                _ if line.starts_with('[') => {
                    return Err(Error::parse(
                        format!("word bank line {}", i + 1),
                        format!("unknown section {line}"),
                    ))
                }
                _ => match current.as_deref_mut() {
                    Some(list) => list.push(line.to_string()),
                    None => {
                        return Err(Error::parse(
                            format!("word bank line {}", i + 1),
                            "term outside a section",
                        ))
                    }
                },
            }
        }
        AffectWordBank::new(positive, negative)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        AffectWordBank::parse(&text)
    }

    pub fn words(&self, state: ValenceState) -> &[String] {
        match state {
            ValenceState::Positive => &self.positive,
            ValenceState::Negative => &self.negative,
            ValenceState::Neutral => &[],
        }
    }
}

impl Default for AffectWordBank {
    fn default() -> Self {
        AffectWordBank::parse(DEFAULT_BANK).expect("bundled word bank is valid")
    }
}

/// `n` distinct terms for `state`, sampled without replacement; always empty
/// for neutral.
pub fn select_affect_words(
    bank: &AffectWordBank,
    state: ValenceState,
    n: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if state == ValenceState::Neutral {
        return Ok(Vec::new());
    }
    let words = bank.words(state);
    if n > words.len() {
        return Err(Error::invalid(format!(
            "requested {n} {state} words, bank has {}",
            words.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, words.len(), n)
        .into_iter()
        .map(|i| words[i].clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptProvenance {
    Template,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub base_text: String,
    pub state: ValenceState,
    pub chosen_words: Vec<String>,
    pub final_prompt: String,
    pub provenance: PromptProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteRequest {
    pub base_text: String,
    pub words: Vec<String>,
    pub state: ValenceState,
    pub instruction: String,
    pub instruction_version: String,
}

/// A language-model endpoint that rewrites a prompt toward an affect.
pub trait Rewriter: Send + Sync {
    fn rewrite(&self, request: &RewriteRequest) -> Result<String>;
}

/// Offline stand-in that folds the request fields into the text.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoRewriter;

impl Rewriter for EchoRewriter {
    fn rewrite(&self, r: &RewriteRequest) -> Result<String> {
        Ok(format!("{} ({}: {})", r.base_text, r.state, r.words.join(", ")))
    }
}

/// `"{base}, {w1}, {w2}, ... mood"`.
pub fn template_prompt(base_text: &str, words: &[String]) -> String {
    if words.is_empty() {
        return base_text.to_string();
    }
    format!("{base_text}, {} mood", words.join(", "))
}

pub fn synthesize_prompt(
    base_text: &str,
    state: ValenceState,
    words: &[String],
    rewriter: Option<&dyn Rewriter>,
) -> Result<PromptSpec> {
    if base_text.trim().is_empty() {
        return Err(Error::invalid("base_text is empty"));
    }
    if state == ValenceState::Neutral {
        return Ok(PromptSpec {
            base_text: base_text.to_string(),
            state,
            chosen_words: Vec::new(),
            final_prompt: base_text.to_string(),
            provenance: PromptProvenance::Template,
        });
    }
    let (final_prompt, provenance) = match rewriter {
        Some(client) => {
            let text = client.rewrite(&RewriteRequest {
                base_text: base_text.to_string(),
                words: words.to_vec(),
                state,
                instruction: REWRITE_INSTRUCTION.to_string(),
                instruction_version: REWRITE_INSTRUCTION_VERSION.to_string(),
            })?;
            if text.trim().is_empty() {
                return Err(Error::Client {
                    message: "rewriter returned empty text".into(),
                    retryable: false,
                });
            }
            (text, PromptProvenance::Llm)
        }
        None => (template_prompt(base_text, words), PromptProvenance::Template),
    };
    Ok(PromptSpec {
        base_text: base_text.to_string(),
        state,
        chosen_words: words.to_vec(),
        final_prompt,
        provenance,
    })
}
