//! The four prompt templates and their rendering. P1–P3 are shipped as
//! versioned text assets; P4 is derived mechanically from P3 by removing
//! the study-context lines (everything in the context block except the
//! category-naming consideration), which its metadata records.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::StudyConfig;

const P1_TEMPLATE: &str = include_str!("../templates/p1.txt");
const P2_TEMPLATE: &str = include_str!("../templates/p2.txt");
const P3_TEMPLATE: &str = include_str!("../templates/p3.txt");

/// Context lines that distinguish P3 from P4. The "Additional
/// considerations" line of the same block is intentionally kept in P4.
const CONTEXT_LINES: [&str; 4] = [
    "Group the cards from the perspective of participants with the following context:",
    "- Demographic attributes for respondents are: {demographicAttributes}",
    "- Welcome message received by participants is: \"{welcomeMessage}\"",
    "- Instructions before the task received by participants are: \"{instructions}\"",
];

/// Rendering for optional context fields that a study left unset; keeps
/// the P3 structure constant so P3-vs-P4 comparisons isolate context.
pub const NOT_SPECIFIED: &str = "not specified";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptVariant {
    /// Raw-data simulation (`respondent,category,card`).
    P1,
    /// Similarity-matrix generation.
    P2,
    /// Clustering generation with study context.
    P3,
    /// Clustering generation without context (P3 minus the context block).
    P4,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 4] =
        [PromptVariant::P1, PromptVariant::P2, PromptVariant::P3, PromptVariant::P4];

    pub fn tag(&self) -> &'static str {
        match self {
            PromptVariant::P1 => "p1",
            PromptVariant::P2 => "p2",
            PromptVariant::P3 => "p3",
            PromptVariant::P4 => "p4",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown prompt variant `{0}`, expected p1|p2|p3|p4")]
pub struct UnknownVariant(String);

impl FromStr for PromptVariant {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<PromptVariant, UnknownVariant> {
        match s.to_ascii_lowercase().as_str() {
            "p1" => Ok(PromptVariant::P1),
            "p2" => Ok(PromptVariant::P2),
            "p3" => Ok(PromptVariant::P3),
            "p4" => Ok(PromptVariant::P4),
            other => Err(UnknownVariant(other.to_string())),
        }
    }
}

/// The exact template text for a variant (P4 computed from P3).
pub fn template_text(variant: PromptVariant) -> String {
    match variant {
        PromptVariant::P1 => P1_TEMPLATE.to_string(),
        PromptVariant::P2 => P2_TEMPLATE.to_string(),
        PromptVariant::P3 => P3_TEMPLATE.to_string(),
        PromptVariant::P4 => derive_p4(P3_TEMPLATE),
    }
}

fn derive_p4(p3: &str) -> String {
    let mut out = String::with_capacity(p3.len());
    let mut skipped_block = false;
    for line in p3.lines() {
        if CONTEXT_LINES.contains(&line) {
            skipped_block = true;
            continue;
        }
        // The context header leaves a doubled blank line behind; collapse it.
        if skipped_block && line.is_empty() && out.ends_with("\n\n") {
            continue;
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}

fn sha256_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Template provenance: version, checksum of the exact text, and whether
/// the template is derived rather than shipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateInfo {
    pub variant: PromptVariant,
    pub version: String,
    pub checksum: String,
    pub derived_from: Option<PromptVariant>,
}

pub fn template_info(variant: PromptVariant) -> TemplateInfo {
    TemplateInfo {
        variant,
        version: "1".to_string(),
        checksum: sha256_hex(&template_text(variant)),
        derived_from: if variant == PromptVariant::P4 { Some(PromptVariant::P3) } else { None },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub variant: PromptVariant,
    pub text: String,
    pub placeholders_filled: BTreeMap<String, String>,
    pub template_checksum: String,
}

impl RenderedPrompt {
    /// Checksum of the rendered prompt text, recorded with every archived
    /// generation attempt.
    pub fn checksum(&self) -> String {
        sha256_hex(&self.text)
    }
}

/// Fills a variant's template from the study configuration. Card labels
/// are rendered one per line, byte-identical to the config; missing
/// optional context fields render as the literal `not specified`.
pub fn render(config: &StudyConfig, variant: PromptVariant) -> RenderedPrompt {
    let cards = config
        .cards
        .iter()
        .map(|c| c.label.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let or_not_specified =
        |field: &Option<String>| field.clone().unwrap_or_else(|| NOT_SPECIFIED.to_string());
    let mut placeholders = BTreeMap::new();
    placeholders.insert("numberOfParticipants".to_string(), config.number_of_participants.to_string());
    placeholders.insert("demographicAttributes".to_string(), or_not_specified(&config.demographics));
    placeholders.insert("welcomeMessage".to_string(), or_not_specified(&config.welcome_message));
    placeholders.insert("instructions".to_string(), or_not_specified(&config.instructions));
    placeholders.insert("cards".to_string(), cards);
    placeholders.insert("numberOfCards".to_string(), config.n_cards().to_string());

    let template = template_text(variant);
    let mut text = template;
    for (name, value) in &placeholders {
        text = text.replace(&format!("{{{name}}}"), value);
    }
    debug_assert!(
        placeholders.keys().all(|name| !text.contains(&format!("{{{name}}}"))),
        "unfilled placeholder left in rendered prompt"
    );

    let placeholders_filled = placeholders
        .into_iter()
        .filter(|(name, _)| variant != PromptVariant::P4 || !is_context_placeholder(name))
        .collect();
    RenderedPrompt {
        variant,
        text,
        placeholders_filled,
        template_checksum: template_info(variant).checksum,
    }
}

fn is_context_placeholder(name: &str) -> bool {
    matches!(name, "demographicAttributes" | "welcomeMessage" | "instructions")
}
