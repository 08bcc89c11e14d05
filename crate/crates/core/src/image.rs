//! Opaque image handling shared by tasks, memories, clients and the judge.
//!
//! Images are never decoded by the core; they travel as bytes plus a media
//! type and are identified by their SHA-256 digest.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// The two evaluation targets of a submission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Prompt,
    Image,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Prompt, Modality::Image];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Prompt => "prompt",
            Modality::Image => "image",
        }
    }

    /// The four subjective rubric dimensions scored for this modality.
    pub fn dimensions(self) -> &'static [&'static str; 4] {
        match self {
            Modality::Prompt => &PROMPT_DIMENSIONS,
            Modality::Image => &IMAGE_DIMENSIONS,
        }
    }
}

pub const PROMPT_DIMENSIONS: [&str; 4] = [
    "Instructional Clarity",
    "Creative Elaboration",
    "Terminology Proficiency",
    "Intent Formalization",
];

pub const IMAGE_DIMENSIONS: [&str; 4] = [
    "Mood & Atmosphere",
    "Visual Composition",
    "Color & Lighting",
    "Technical Flawlessness",
];

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot read image {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("content hash mismatch for {path}: expected {expected}, found {actual}")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },
}

/// Image bytes with their media type.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageData {
    pub media_type: String,
    pub bytes: Vec<u8>,
}

impl fmt::Debug for ImageData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageData")
            .field("media_type", &self.media_type)
            .field("len", &self.bytes.len())
            .field("sha256", &self.sha256_hex())
            .finish()
    }
}

impl ImageData {
    pub fn new(media_type: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            media_type: media_type.into(),
            bytes,
        }
    }

    /// Wraps raw bytes, sniffing the media type from magic numbers.
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        let media_type = sniff_media_type(&bytes).to_string();
        Self { media_type, bytes }
    }

    pub fn read(path: &Path) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_bytes(bytes))
    }

    pub fn sha256_hex(&self) -> String {
        sha256_hex(&self.bytes)
    }

    /// `data:` URL form used by chat-completions style APIs.
    pub fn data_url(&self) -> String {
        use base64::Engine;
        format!(
            "data:{};base64,{}",
            self.media_type,
            base64::engine::general_purpose::STANDARD.encode(&self.bytes)
        )
    }
}

/// A content-addressed reference to an image file, relative to some root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: String,
    pub sha256: String,
}

impl ImageRef {
    /// Reads the referenced file below `root` and checks its digest.
    pub fn load(&self, root: &Path) -> Result<ImageData, ImageError> {
        let path = root.join(&self.path);
        let data = ImageData::read(&path)?;
        let actual = data.sha256_hex();
        if !actual.eq_ignore_ascii_case(&self.sha256) {
            return Err(ImageError::HashMismatch {
                path,
                expected: self.sha256.clone(),
                actual,
            });
        }
        Ok(data)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn sniff_media_type(bytes: &[u8]) -> &'static str {
    match bytes {
        [0x89, b'P', b'N', b'G', ..] => "image/png",
        [0xFF, 0xD8, 0xFF, ..] => "image/jpeg",
        [b'G', b'I', b'F', b'8', ..] => "image/gif",
        [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => "image/webp",
        [b'P', b'6', ..] => "image/x-portable-pixmap",
        _ => "application/octet-stream",
    }
}
