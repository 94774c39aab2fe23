//! Object grounding and visual search: crop the region of interest, embed it,
//! and query the local retrieval index for the most similar entity.

use crate::backends::EmbedBackend;
use crate::retrieval::{self, Index, QueryError};

use super::{crop, BBox, Category, ToolError};

/// Render the observation line for a retrieval hit. Confidence is the
/// cosine-mapped score to two decimals.
pub fn render_hit(name: &str, confidence: f64) -> String {
    format!("名称：{name}, 检索置信度：{confidence:.2}")
}

/// Crop `bbox` out of the image, embed the crop, and return the rendered
/// top-1 line for `category`.
pub async fn visual_search(
    image_bytes: &[u8],
    bbox: &BBox,
    category: Category,
    embed: &dyn EmbedBackend,
    index: &Index,
) -> Result<String, ToolError> {
    let crop_png = crop::crop_zoom(image_bytes, bbox)?;
    let raw = embed.embed_image(&crop_png).await?;
    let vector = unit_norm(raw)
        .ok_or_else(|| ToolError::BackendFailure("embedding backend returned a zero vector".into()))?;
    let (name, confidence) = retrieval::query_top1(&vector, category, index).map_err(|e| match e {
        QueryError::EmptyIndexForCategory(c) => ToolError::EmptyIndexForCategory(c),
        QueryError::DimensionMismatch { .. } => ToolError::BackendFailure(e.to_string()),
    })?;
    Ok(render_hit(&name, confidence))
}

fn unit_norm(mut v: Vec<f32>) -> Option<Vec<f32>> {
    let norm: f64 = v.iter().map(|x| *x as f64 * *x as f64).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    for x in &mut v {
        *x = (*x as f64 / norm) as f32;
    }
    Some(v)
}
