//! Knowledge base of labeled image-text samples and their embeddings.
//!
//! On disk the knowledge base is JSON Lines, one sample per line:
//!
//! ```text
//! {"id":"kb-0001","image_ref":"img/0001.jpg","text":"...","label":"manipulated",
//!  "manipulation_type":"face_swap","visual":[...],"textual":[...]}
//! ```
//!
//! Vectors are renormalized to unit L2 norm on load. The visual and textual
//! dimensions are taken from the first record. Query files use the same
//! schema, optionally with a `library` field naming the manipulation-type
//! library a query is evaluated under.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::RetrievalMode;
use crate::scalar::{normalize_in_place, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Authentic,
    Manipulated,
}

impl Label {
    /// Word used for this label inside prompts.
    pub fn word(self) -> &'static str {
        match self {
            Label::Authentic => "real",
            Label::Manipulated => "fake",
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Label::Authentic => Label::Manipulated,
            Label::Manipulated => Label::Authentic,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Authentic => "authentic",
            Label::Manipulated => "manipulated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManipulationType {
    FaceSwap,
    FaceAttribute,
    TextSwap,
    TextAttribute,
    None,
}

impl ManipulationType {
    pub const FORGERIES: [ManipulationType; 4] = [
        ManipulationType::FaceSwap,
        ManipulationType::FaceAttribute,
        ManipulationType::TextSwap,
        ManipulationType::TextAttribute,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ManipulationType::FaceSwap => "face_swap",
            ManipulationType::FaceAttribute => "face_attribute",
            ManipulationType::TextSwap => "text_swap",
            ManipulationType::TextAttribute => "text_attribute",
            ManipulationType::None => "none",
        }
    }
}

impl fmt::Display for ManipulationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub image_ref: String,
    pub text: String,
    pub label: Label,
    pub manipulation_type: ManipulationType,
    /// Evaluation library for query samples. Not part of the knowledge-base
    /// contract; ignored everywhere except report grouping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library: Option<ManipulationType>,
}

impl Sample {
    /// Group a query is reported under: its library if set, otherwise its
    /// manipulation type.
    pub fn group(&self) -> ManipulationType {
        self.library.unwrap_or(self.manipulation_type)
    }

    fn check_label(&self) -> std::result::Result<(), String> {
        let authentic = self.label == Label::Authentic;
        let untouched = self.manipulation_type == ManipulationType::None;
        if authentic != untouched {
            return Err(format!(
                "label {} inconsistent with manipulation_type {}",
                self.label, self.manipulation_type
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord<F = f64> {
    pub sample_id: String,
    pub visual: Vec<F>,
    pub textual: Vec<F>,
}

/// Concatenation of the visual and textual vectors, renormalized to unit norm.
pub fn joint_embedding<F: Scalar>(rec: &EmbeddingRecord<F>) -> Vec<F> {
    let mut joint = Vec::with_capacity(rec.visual.len() + rec.textual.len());
    joint.extend_from_slice(&rec.visual);
    joint.extend_from_slice(&rec.textual);
    normalize_in_place(&mut joint);
    joint
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    id: String,
    image_ref: String,
    text: String,
    label: Label,
    manipulation_type: ManipulationType,
    visual: Vec<f64>,
    textual: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    library: Option<ManipulationType>,
}

/// Immutable collection of samples with per-modality unit-norm embeddings.
#[derive(Debug, Clone)]
pub struct KnowledgeBase<F = f64> {
    samples: Vec<Sample>,
    embeddings: Vec<EmbeddingRecord<F>>,
    joint: Vec<Vec<F>>,
    index: HashMap<String, usize>,
    dim_visual: usize,
    dim_textual: usize,
}

/// Borrowed view of one knowledge-base row.
#[derive(Debug, Clone, Copy)]
pub struct Entry<'a, F = f64> {
    pub sample: &'a Sample,
    pub embedding: &'a EmbeddingRecord<F>,
    joint: &'a [F],
}

impl<'a, F: Scalar> Entry<'a, F> {
    pub fn id(&self) -> &'a str {
        &self.sample.id
    }

    /// Embedding in the feature space of `mode`.
    pub fn vector(&self, mode: RetrievalMode) -> &'a [F] {
        match mode {
            RetrievalMode::I2I => &self.embedding.visual,
            RetrievalMode::T2T => &self.embedding.textual,
            RetrievalMode::TI2TI => self.joint,
        }
    }
}

impl<F: Scalar> KnowledgeBase<F> {
    /// Builds a knowledge base from already-parsed parts. Vectors are
    /// normalized and every invariant is checked; `line` numbers in errors
    /// are 1-based positions in `embeddings`.
    pub fn from_parts(samples: Vec<Sample>, embeddings: Vec<EmbeddingRecord<F>>) -> Result<Self> {
        if samples.is_empty() && embeddings.is_empty() {
            return Err(Error::EmptyKnowledgeBase);
        }
        let mut index = HashMap::with_capacity(samples.len());
        for (pos, s) in samples.iter().enumerate() {
            if s.id.is_empty() {
                return Err(Error::MalformedLine {
                    line: pos + 1,
                    reason: "empty id".into(),
                });
            }
            s.check_label().map_err(|reason| Error::MalformedLine {
                line: pos + 1,
                reason,
            })?;
            if index.insert(s.id.clone(), pos).is_some() {
                return Err(Error::DuplicateId {
                    line: pos + 1,
                    id: s.id.clone(),
                });
            }
        }

        let dim_visual = embeddings.first().map_or(0, |e| e.visual.len());
        let dim_textual = embeddings.first().map_or(0, |e| e.textual.len());
        let mut ordered: Vec<Option<EmbeddingRecord<F>>> = vec![None; samples.len()];
        for (pos, mut rec) in embeddings.into_iter().enumerate() {
            let line = pos + 1;
            let Some(&slot) = index.get(&rec.sample_id) else {
                return Err(Error::DanglingSampleId {
                    line,
                    id: rec.sample_id,
                });
            };
            if ordered[slot].is_some() {
                return Err(Error::DuplicateId {
                    line,
                    id: rec.sample_id,
                });
            }
            check_vector(line, "visual", &rec.sample_id, &mut rec.visual, dim_visual)?;
            check_vector(line, "textual", &rec.sample_id, &mut rec.textual, dim_textual)?;
            ordered[slot] = Some(rec);
        }
        let mut embeddings = Vec::with_capacity(samples.len());
        for (s, rec) in samples.iter().zip(ordered) {
            match rec {
                Some(rec) => embeddings.push(rec),
                None => {
                    return Err(Error::MalformedLine {
                        line: index[&s.id] + 1,
                        reason: format!("sample {:?} has no embedding record", s.id),
                    })
                }
            }
        }
        let joint = embeddings.iter().map(joint_embedding).collect();
        Ok(KnowledgeBase {
            samples,
            embeddings,
            joint,
            index,
            dim_visual,
            dim_textual,
        })
    }

    /// Parses JSON Lines text. Blank lines are skipped but still counted
    /// for error line numbers.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        let mut embeddings = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut dims: Option<(usize, usize)> = None;

        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            let raw: WireRecord =
                serde_json::from_str(line).map_err(|e| Error::MalformedLine {
                    line: line_no,
                    reason: e.to_string(),
                })?;
            if raw.id.is_empty() {
                return Err(Error::MalformedLine {
                    line: line_no,
                    reason: "empty id".into(),
                });
            }
            let (d_v, d_t) = *dims.get_or_insert((raw.visual.len(), raw.textual.len()));
            let sample = Sample {
                id: raw.id,
                image_ref: raw.image_ref,
                text: raw.text,
                label: raw.label,
                manipulation_type: raw.manipulation_type,
                library: raw.library,
            };
            sample.check_label().map_err(|reason| Error::MalformedLine {
                line: line_no,
                reason,
            })?;
            if index.insert(sample.id.clone(), samples.len()).is_some() {
                return Err(Error::DuplicateId {
                    line: line_no,
                    id: sample.id,
                });
            }
            let mut visual = convert(raw.visual, line_no, "visual")?;
            let mut textual = convert(raw.textual, line_no, "textual")?;
            check_vector(line_no, "visual", &sample.id, &mut visual, d_v)?;
            check_vector(line_no, "textual", &sample.id, &mut textual, d_t)?;
            embeddings.push(EmbeddingRecord {
                sample_id: sample.id.clone(),
                visual,
                textual,
            });
            samples.push(sample);
        }
        if samples.is_empty() {
            return Err(Error::EmptyKnowledgeBase);
        }
        let (dim_visual, dim_textual) = dims.unwrap_or_default();
        let joint = embeddings.iter().map(joint_embedding).collect();
        Ok(KnowledgeBase {
            samples,
            embeddings,
            joint,
            index,
            dim_visual,
            dim_textual,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    /// Canonical JSON Lines rendering, one record per line in load order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for entry in self.iter() {
            let s = entry.sample;
            let wire = WireRecord {
                id: s.id.clone(),
                image_ref: s.image_ref.clone(),
                text: s.text.clone(),
                label: s.label,
                manipulation_type: s.manipulation_type,
                visual: entry.embedding.visual.iter().map(|x| x.as_f64()).collect(),
                textual: entry.embedding.textual.iter().map(|x| x.as_f64()).collect(),
                library: s.library,
            };
            serde_json::to_writer(&mut out, &wire)?;
            out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_jsonl(&mut out)?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim_visual(&self) -> usize {
        self.dim_visual
    }

    pub fn dim_textual(&self) -> usize {
        self.dim_textual
    }

    /// Dimension of the embedding space for `mode`.
    pub fn dim(&self, mode: RetrievalMode) -> usize {
        match mode {
            RetrievalMode::I2I => self.dim_visual,
            RetrievalMode::T2T => self.dim_textual,
            RetrievalMode::TI2TI => self.dim_visual + self.dim_textual,
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn embeddings(&self) -> &[EmbeddingRecord<F>] {
        &self.embeddings
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn entry(&self, pos: usize) -> Entry<'_, F> {
        Entry {
            sample: &self.samples[pos],
            embedding: &self.embeddings[pos],
            joint: &self.joint[pos],
        }
    }

    pub fn get(&self, id: &str) -> Option<Entry<'_, F>> {
        self.position(id).map(|pos| self.entry(pos))
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = Entry<'_, F>> + '_ {
        (0..self.len()).map(move |pos| self.entry(pos))
    }
}

fn convert<F: Scalar>(values: Vec<f64>, line: usize, field: &'static str) -> Result<Vec<F>> {
    values
        .into_iter()
        .map(|x| {
            F::from_f64(x)
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::MalformedLine {
                    line,
                    reason: format!("{field} component {x} is not representable"),
                })
        })
        .collect()
}

fn check_vector<F: Scalar>(
    line: usize,
    field: &'static str,
    id: &str,
    v: &mut [F],
    expected: usize,
) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            line,
            field,
            expected,
            got: v.len(),
        });
    }
    if v.is_empty() {
        return Err(Error::MalformedLine {
            line,
            reason: format!("{field} vector is empty"),
        });
    }
    if !normalize_in_place(v) {
        return Err(Error::ZeroNorm {
            line,
            field,
            id: id.to_string(),
        });
    }
    Ok(())
}
