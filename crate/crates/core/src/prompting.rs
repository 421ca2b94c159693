//! Prompt templates for the highlighter, summarizer and distillation roles,
//! and parsing of highlighter output back into evidence.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::table::{Evidence, Table, TableError};
use crate::transforms::{self, TransformError};

/// Marker after which the model output goes.
pub const OUTPUT_MARKER: &str = "###Output";

pub const DEFAULT_MAX_PROMPT_TOKENS: usize = 2048;

const DEFAULT_HIGHLIGHTER: &str = include_str!("../templates/highlighter.txt");
const DEFAULT_SUMMARIZER: &str = include_str!("../templates/summarizer.txt");
const DEFAULT_DISTILL: &str = include_str!("../templates/distill.txt");
const DEFAULT_EXAMPLES: &str = include_str!("../templates/distill_examples.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template `{role}`: {detail}")]
    Template { role: PromptRole, detail: String },
    #[error("prompt for `{role}` is ~{estimate} tokens, budget is {budget}")]
    TooLong {
        role: PromptRole,
        estimate: usize,
        budget: usize,
    },
    #[error("no row indices found in output: {0:?}")]
    NoIndices(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<TableError> for PromptError {
    fn from(e: TableError) -> Self {
        PromptError::Transform(TransformError::Range(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptRole {
    Highlighter,
    Summarizer,
    Distill,
}

impl fmt::Display for PromptRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptRole::Highlighter => "highlighter",
            PromptRole::Summarizer => "summarizer",
            PromptRole::Distill => "distill",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Table,
    Query,
    Reference,
    Examples,
}

impl Slot {
    const ALL: [Slot; 4] = [Slot::Table, Slot::Query, Slot::Reference, Slot::Examples];

    fn name(self) -> &'static str {
        match self {
            Slot::Table => "TABLE",
            Slot::Query => "QUERY",
            Slot::Reference => "REFERENCE",
            Slot::Examples => "EXAMPLES",
        }
    }

    fn from_name(name: &str) -> Option<Slot> {
        Slot::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl PromptRole {
    fn slots(self) -> &'static [Slot] {
        match self {
            PromptRole::Highlighter | PromptRole::Summarizer => &[Slot::Table, Slot::Query],
            PromptRole::Distill => &[Slot::Examples, Slot::Table, Slot::Query, Slot::Reference],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(Slot),
}

/// A parsed template. Everything after `###Output` is discarded at load
/// time; it must be whitespace.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    role: PromptRole,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(role: PromptRole, source: &str) -> Result<Self, PromptError> {
        let err = |detail: String| PromptError::Template { role, detail };

        let count = source.matches(OUTPUT_MARKER).count();
        if count != 1 {
            return Err(err(format!("expected exactly one {OUTPUT_MARKER}, found {count}")));
        }
        let (body, after) = source.split_once(OUTPUT_MARKER).unwrap_or((source, ""));
        if !after.trim().is_empty() {
            return Err(err(format!("content after {OUTPUT_MARKER}")));
        }

        let mut segments = Vec::new();
        let mut rest = body;
        while let Some(start) = rest.find("{{") {
            let Some(len) = rest[start + 2..].find("}}") else {
                return Err(err("unterminated slot marker".into()));
            };
            let name = &rest[start + 2..start + 2 + len];
            let slot = Slot::from_name(name).ok_or_else(|| err(format!("unknown slot {{{{{name}}}}}")))?;
            if start > 0 {
                segments.push(Segment::Text(rest[..start].to_string()));
            }
            segments.push(Segment::Slot(slot));
            rest = &rest[start + 2 + len + 2..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Text(rest.to_string()));
        }

        for slot in Slot::ALL {
            let n = segments.iter().filter(|s| **s == Segment::Slot(slot)).count();
            let expected = usize::from(role.slots().contains(&slot));
            if n != expected {
                return Err(err(format!(
                    "slot {{{{{}}}}} must appear {expected} time(s), found {n}",
                    slot.name()
                )));
            }
        }
        Ok(PromptTemplate { role, segments })
    }

    pub fn from_file(role: PromptRole, path: &Path) -> Result<Self, PromptError> {
        let src = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(role, &src)
    }

    pub fn role(&self) -> PromptRole {
        self.role
    }

    fn render(&self, fill: impl Fn(Slot) -> String, output: Option<&str>) -> String {
        let mut text = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => text.push_str(t),
                Segment::Slot(s) => text.push_str(&fill(*s)),
            }
        }
        text.push_str(OUTPUT_MARKER);
        text.push('\n');
        if let Some(out) = output {
            text.push_str(out);
        }
        text
    }
}

/// A fully rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub role: PromptRole,
    pub sample_id: Option<String>,
}

impl RenderedPrompt {
    /// Splits at the output marker: (prompt through `###Output\n`, output).
    pub fn split_output(&self) -> (&str, &str) {
        let at = self
            .text
            .rfind(OUTPUT_MARKER)
            .map(|i| i + OUTPUT_MARKER.len() + 1)
            .unwrap_or(self.text.len())
            .min(self.text.len());
        self.text.split_at(at)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.sample_id = Some(id.into());
        self
    }
}

/// Rough token estimate used by the length guard (4 chars per token).
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Breaks up `###` runs in free text so it cannot forge the output marker.
fn neutralize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut prev = None;
    for ch in text.chars() {
        if ch == '#' && prev == Some('#') {
            out.push('\\');
        }
        out.push(ch);
        prev = Some(ch);
    }
    out
}

/// Splits an examples file into blocks separated by lines of `---`.
pub fn parse_example_blocks(source: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in source.lines() {
        if line.trim() == "---" {
            blocks.push(current.join("\n"));
            current.clear();
        } else {
            current.push(line);
        }
    }
    blocks.push(current.join("\n"));
    blocks
        .into_iter()
        .map(|b| b.trim().to_string())
        .filter(|b| !b.is_empty())
        .collect()
}

/// Holds the three templates, the few-shot blocks and the length budget.
#[derive(Debug, Clone)]
pub struct PromptBuilder {
    highlighter: PromptTemplate,
    summarizer: PromptTemplate,
    distill: PromptTemplate,
    examples: Vec<String>,
    max_prompt_tokens: Option<usize>,
}

impl Default for PromptBuilder {
    fn default() -> Self {
        PromptBuilder {
            highlighter: PromptTemplate::parse(PromptRole::Highlighter, DEFAULT_HIGHLIGHTER)
                .expect("bundled highlighter template"),
            summarizer: PromptTemplate::parse(PromptRole::Summarizer, DEFAULT_SUMMARIZER)
                .expect("bundled summarizer template"),
            distill: PromptTemplate::parse(PromptRole::Distill, DEFAULT_DISTILL).expect("bundled distill template"),
            examples: parse_example_blocks(DEFAULT_EXAMPLES),
            max_prompt_tokens: Some(DEFAULT_MAX_PROMPT_TOKENS),
        }
    }
}

impl PromptBuilder {
    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        match template.role() {
            PromptRole::Highlighter => self.highlighter = template,
            PromptRole::Summarizer => self.summarizer = template,
            PromptRole::Distill => self.distill = template,
        }
        self
    }

    pub fn with_examples(mut self, examples: Vec<String>) -> Result<Self, PromptError> {
        if let Some(bad) = examples.iter().find(|e| e.contains(OUTPUT_MARKER)) {
            return Err(PromptError::Template {
                role: PromptRole::Distill,
                detail: format!("example block contains {OUTPUT_MARKER}: {bad:?}"),
            });
        }
        self.examples = examples;
        Ok(self)
    }

    /// `None` disables the length guard.
    pub fn with_max_prompt_tokens(mut self, budget: Option<usize>) -> Self {
        self.max_prompt_tokens = budget;
        self
    }

    pub fn examples(&self) -> &[String] {
        &self.examples
    }

    fn guard(&self, role: PromptRole, text: String) -> Result<RenderedPrompt, PromptError> {
        if let Some(budget) = self.max_prompt_tokens {
            let estimate = estimate_tokens(&text);
            if estimate > budget {
                return Err(PromptError::TooLong { role, estimate, budget });
            }
        }
        Ok(RenderedPrompt {
            text,
            role,
            sample_id: None,
        })
    }

    /// Highlighter prompt. With `golden` set (training), the evidence is
    /// written after the output marker; otherwise the output area is blank.
    pub fn build_highlighter_prompt(
        &self,
        table: &Table,
        query: &str,
        golden: Option<&Evidence>,
    ) -> Result<RenderedPrompt, PromptError> {
        if let Some(e) = golden {
            e.check_range(table.n_rows())?;
        }
        let lin = transforms::linearize(table).text;
        let output = golden.map(|e| e.to_string());
        let text = self.highlighter.render(
            |slot| match slot {
                Slot::Table => lin.clone(),
                Slot::Query => neutralize(query),
                _ => String::new(),
            },
            output.as_deref(),
        );
        self.guard(PromptRole::Highlighter, text)
    }

    /// Summarizer prompt over the table highlighted with `evidence` (if any).
    /// With `reference` set (training), it is written after the output marker.
    pub fn build_summarizer_prompt(
        &self,
        table: &Table,
        evidence: Option<&Evidence>,
        query: &str,
        reference: Option<&str>,
    ) -> Result<RenderedPrompt, PromptError> {
        let lin = transforms::linearize_with_evidence(table, evidence)?.text;
        let text = self.summarizer.render(
            |slot| match slot {
                Slot::Table => lin.clone(),
                Slot::Query => neutralize(query),
                _ => String::new(),
            },
            reference,
        );
        self.guard(PromptRole::Summarizer, text)
    }

    /// Few-shot distillation prompt; the reference answer is part of the input.
    pub fn build_distill_prompt(
        &self,
        table: &Table,
        query: &str,
        reference: &str,
        examples: &[String],
    ) -> Result<RenderedPrompt, PromptError> {
        if examples.is_empty() {
            return Err(PromptError::Template {
                role: PromptRole::Distill,
                detail: "at least one example block is required".into(),
            });
        }
        let lin = transforms::linearize(table).text;
        let joined = examples.join("\n\n");
        let text = self.distill.render(
            |slot| match slot {
                Slot::Examples => joined.clone(),
                Slot::Table => lin.clone(),
                Slot::Query => neutralize(query),
                Slot::Reference => neutralize(reference),
            },
            None,
        );
        self.guard(PromptRole::Distill, text)
    }

    /// Distillation prompt using the configured example blocks.
    pub fn build_distill_prompt_default(
        &self,
        table: &Table,
        query: &str,
        reference: &str,
    ) -> Result<RenderedPrompt, PromptError> {
        self.build_distill_prompt(table, query, reference, &self.examples)
    }
}

/// Extracts row indices from free-form model output.
///
/// Every run of ASCII digits is read as an index; duplicates are dropped and
/// indices outside `[1, n_rows]` are dropped with one warning each.
pub fn parse_evidence_output(raw: &str, n_rows: usize) -> Result<(Evidence, Vec<String>), PromptError> {
    let mut found = Vec::new();
    let mut warnings = Vec::new();
    let mut any = false;
    for run in raw.split(|c: char| !c.is_ascii_digit()).filter(|s| !s.is_empty()) {
        any = true;
        match run.parse::<usize>() {
            Ok(i) if (1..=n_rows).contains(&i) => found.push(i),
            _ => {
                let w = format!("{run} out of range");
                if !warnings.contains(&w) {
                    warnings.push(w);
                }
            }
        }
    }
    if !any {
        return Err(PromptError::NoIndices(raw.to_string()));
    }
    Ok((Evidence::from_unsorted(found), warnings))
}
