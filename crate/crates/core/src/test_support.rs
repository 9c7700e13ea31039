use crate::kb::{EmbeddingRecord, KnowledgeBase, Label, ManipulationType, Sample};

pub fn kb_labeled(rows: &[(&str, Label, Vec<f64>, Vec<f64>)]) -> KnowledgeBase<f64> {
    let samples = rows
        .iter()
        .map(|(id, label, _, _)| Sample {
            id: id.to_string(),
            image_ref: format!("img/{id}.png"),
            text: format!("caption {id}"),
            label: *label,
            manipulation_type: match label {
                Label::Authentic => ManipulationType::None,
                Label::Manipulated => ManipulationType::FaceSwap,
            },
            library: None,
        })
        .collect();
    let embeddings = rows
        .iter()
        .map(|(id, _, v, t)| EmbeddingRecord {
            sample_id: id.to_string(),
            visual: v.clone(),
            textual: t.clone(),
        })
        .collect();
    KnowledgeBase::from_parts(samples, embeddings).unwrap()
}

pub fn kb_from_dyn(rows: &[(&str, Vec<f64>, Vec<f64>)]) -> KnowledgeBase<f64> {
    let labeled: Vec<_> = rows
        .iter()
        .map(|(id, v, t)| (*id, Label::Authentic, v.clone(), t.clone()))
        .collect();
    kb_labeled(&labeled)
}

pub fn kb_from_vectors(rows: &[(&str, [f64; 2], [f64; 2])]) -> KnowledgeBase<f64> {
    let dynamic: Vec<_> = rows
        .iter()
        .map(|(id, v, t)| (*id, v.to_vec(), t.to_vec()))
        .collect();
    kb_from_dyn(&dynamic)
}
