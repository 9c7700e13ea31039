//! Turning `image_ref` locators into something a chat endpoint accepts.

use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use crate::ClientError;

/// MIME type guessed from the file extension.
pub fn mime_for(path: &Path) -> &'static str {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        Some("tif") | Some("tiff") => "image/tiff",
        _ => "application/octet-stream",
    }
}

pub fn data_url(mime: &str, bytes: &[u8]) -> String {
    format!("data:{mime};base64,{}", STANDARD.encode(bytes))
}

/// Resolves an image reference to a URL for an `image_url` content part.
///
/// `data:` and `http(s)://` references pass through untouched. Anything else
/// is a file path, relative paths being joined onto `root` when given; the
/// file is read and embedded as a base64 data URL.
pub fn resolve(image_ref: &str, root: Option<&Path>) -> Result<String, ClientError> {
    let lower = image_ref.trim_start().to_ascii_lowercase();
    if lower.starts_with("data:") || lower.starts_with("http://") || lower.starts_with("https://") {
        return Ok(image_ref.to_string());
    }
    let raw = image_ref.strip_prefix("file://").unwrap_or(image_ref);
    let mut path = PathBuf::from(raw);
    if path.is_relative() {
        if let Some(root) = root {
            path = root.join(path);
        }
    }
    let bytes = std::fs::read(&path).map_err(|source| ClientError::Image {
        path: path.clone(),
        source,
    })?;
    Ok(data_url(mime_for(&path), &bytes))
}
