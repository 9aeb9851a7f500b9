use super::{LocalizationError, QueryFrame, ReferenceModel};

/// Ranks reference frames by cosine similarity of global descriptors and
/// returns the top `k` as `(frame_id, similarity)`, descending. Ties break
/// toward the lower frame id. `k` larger than the frame count returns all
/// frames.
pub fn retrieve_candidates(
    query: &QueryFrame,
    model: &ReferenceModel,
    k: usize,
) -> Result<Vec<(u64, f64)>, LocalizationError> {
    let mut scored: Vec<(u64, f64)> = Vec::with_capacity(model.frames().len());
    for frame in model.frames() {
        if frame.global_descriptor.len() != query.global_descriptor.len() {
            return Err(LocalizationError::DimensionMismatch {
                query: query.global_descriptor.len(),
                model: frame.global_descriptor.len(),
            });
        }
        scored.push((frame.frame_id, cosine(&query.global_descriptor, &frame.global_descriptor)));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Cosine similarity; zero-norm inputs score 0 (an empty frame matches
/// nothing rather than erroring).
fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}
