//! Few-shot prompt assembly.
//!
//! A template file has three sections introduced by `[system]`,
//! `[demonstration]` and `[query]` header lines. Section bodies may use the
//! placeholders `{image}`, `{text}` and `{label}` (the latter only in the
//! demonstration section). `{image}` becomes an image content part when the
//! prompt is sent; everything else is text.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kb::{Label, Sample};

pub const DEFAULT_TEMPLATE: &str = include_str!("../../../templates/default.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum ContentPart {
    Text(String),
    /// Unresolved image locator (path, URL or data URL).
    Image(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChatMessage {
    pub role: Role,
    pub parts: Vec<ContentPart>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Image,
    Text,
    Label,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub system: String,
    demonstration: Vec<Segment>,
    query: Vec<Segment>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::parse("default", DEFAULT_TEMPLATE).expect("built-in template parses")
    }
}

fn split_placeholders(body: &str, allow_label: bool) -> Result<Vec<Segment>> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut rest = body;
    while let Some(start) = rest.find('{') {
        literal.push_str(&rest[..start]);
        let tail = &rest[start..];
        let token = [("{image}", Segment::Image), ("{text}", Segment::Text), ("{label}", Segment::Label)]
            .into_iter()
            .find(|(name, _)| tail.starts_with(name));
        match token {
            Some((name, seg)) => {
                if seg == Segment::Label && !allow_label {
                    return Err(Error::Template("{label} is not allowed in the query section".into()));
                }
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(seg);
                rest = &tail[name.len()..];
            }
            None => {
                literal.push('{');
                rest = &tail[1..];
            }
        }
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

impl PromptTemplate {
    pub fn parse(id: impl Into<String>, source: &str) -> Result<Self> {
        let mut sections: [Option<String>; 3] = [None, None, None];
        let mut current: Option<usize> = None;
        for line in source.lines() {
            let slot = match line.trim() {
                "[system]" => Some(0),
                "[demonstration]" => Some(1),
                "[query]" => Some(2),
                _ => None,
            };
            if let Some(slot) = slot {
                if sections[slot].is_some() {
                    return Err(Error::Template(format!("duplicate section {}", line.trim())));
                }
                sections[slot] = Some(String::new());
                current = Some(slot);
                continue;
            }
            match current {
                Some(slot) => {
                    let body = sections[slot].as_mut().expect("section opened");
                    body.push_str(line);
                    body.push('\n');
                }
                None if line.trim().is_empty() || line.starts_with('#') => {}
                None => {
                    return Err(Error::Template(format!(
                        "text before the first section header: {line:?}"
                    )))
                }
            }
        }
        let [system, demo, query] = sections.map(|s| s.map(|b| b.trim_end_matches('\n').to_string()));
        let system = system.ok_or_else(|| Error::Template("missing [system] section".into()))?;
        let demo = demo.ok_or_else(|| Error::Template("missing [demonstration] section".into()))?;
        let query = query.ok_or_else(|| Error::Template("missing [query] section".into()))?;
        Ok(PromptTemplate {
            id: id.into(),
            system,
            demonstration: split_placeholders(&demo, true)?,
            query: split_placeholders(&query, false)?,
        })
    }

    /// Loads a template file; the template id is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let source = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "template".into());
        Self::parse(id, &source)
    }

    fn render(segments: &[Segment], image: &str, text: &str, label: Option<Label>) -> Vec<ContentPart> {
        let mut parts: Vec<ContentPart> = Vec::new();
        let push_text = |parts: &mut Vec<ContentPart>, s: &str| match parts.last_mut() {
            Some(ContentPart::Text(prev)) => prev.push_str(s),
            _ => parts.push(ContentPart::Text(s.to_string())),
        };
        for seg in segments {
            match seg {
                Segment::Literal(s) => push_text(&mut parts, s),
                Segment::Text => push_text(&mut parts, text),
                Segment::Label => push_text(&mut parts, label.map_or("", Label::word)),
                Segment::Image => parts.push(ContentPart::Image(image.to_string())),
            }
        }
        // whitespace-only text between parts carries no content
        parts.retain(|p| !matches!(p, ContentPart::Text(s) if s.trim().is_empty()));
        for p in parts.iter_mut() {
            if let ContentPart::Text(s) = p {
                *s = s.trim().to_string();
            }
        }
        parts
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Demonstration {
    pub sample_id: String,
    pub image_ref: String,
    pub text: String,
    pub label: Label,
}

impl Demonstration {
    pub fn label_word(&self) -> &'static str {
        self.label.word()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueryBlock {
    pub sample_id: String,
    pub image_ref: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptBundle {
    pub template_id: String,
    pub system_text: String,
    /// Demonstrations in score order, best first.
    pub demonstrations: Vec<Demonstration>,
    pub query: QueryBlock,
    pub answer_format: Vec<String>,
    /// Rendered chat: one system message, one user message per
    /// demonstration, and a final user message for the query.
    pub messages: Vec<ChatMessage>,
}

impl PromptBundle {
    /// Plain-text rendering of `messages`, with images written as
    /// `<image:REF>`.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for msg in &self.messages {
            out.push_str(match msg.role {
                Role::System => "### system\n",
                Role::User => "### user\n",
            });
            for part in &msg.parts {
                match part {
                    ContentPart::Text(t) => out.push_str(t),
                    ContentPart::Image(r) => {
                        out.push_str("<image:");
                        out.push_str(r);
                        out.push('>');
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

pub fn build_prompt(
    exemplars: &[&Sample],
    query: &Sample,
    template: &PromptTemplate,
) -> Result<PromptBundle> {
    for s in exemplars.iter().copied().chain(std::iter::once(query)) {
        if s.image_ref.trim().is_empty() {
            return Err(Error::MissingImageRef(s.id.clone()));
        }
    }
    let mut messages = Vec::with_capacity(exemplars.len() + 2);
    messages.push(ChatMessage {
        role: Role::System,
        parts: vec![ContentPart::Text(template.system.clone())],
    });
    let demonstrations: Vec<Demonstration> = exemplars
        .iter()
        .map(|s| Demonstration {
            sample_id: s.id.clone(),
            image_ref: s.image_ref.clone(),
            text: s.text.clone(),
            label: s.label,
        })
        .collect();
    for d in &demonstrations {
        messages.push(ChatMessage {
            role: Role::User,
            parts: PromptTemplate::render(&template.demonstration, &d.image_ref, &d.text, Some(d.label)),
        });
    }
    messages.push(ChatMessage {
        role: Role::User,
        parts: PromptTemplate::render(&template.query, &query.image_ref, &query.text, None),
    });
    Ok(PromptBundle {
        template_id: template.id.clone(),
        system_text: template.system.clone(),
        demonstrations,
        query: QueryBlock {
            sample_id: query.id.clone(),
            image_ref: query.image_ref.clone(),
            text: query.text.clone(),
        },
        answer_format: vec![Label::Authentic.word().into(), Label::Manipulated.word().into()],
        messages,
    })
}
