use serde::Serialize;

use super::CorpusError;

pub const DEFAULT_CHUNK_SIZE: usize = 2000;
pub const DEFAULT_OVERLAP_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkConfig {
    chunk_size: usize,
    overlap_fraction: f64,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap_fraction: DEFAULT_OVERLAP_FRACTION,
        }
    }
}

impl ChunkConfig {
    pub fn new(chunk_size: usize, overlap_fraction: f64) -> Result<Self, CorpusError> {
        if chunk_size == 0 {
            return Err(CorpusError::ChunkConfig("chunk_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&overlap_fraction) {
            return Err(CorpusError::ChunkConfig(format!(
                "overlap fraction {overlap_fraction} is outside [0, 1)"
            )));
        }
        Ok(Self {
            chunk_size,
            overlap_fraction,
        })
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn overlap_fraction(&self) -> f64 {
        self.overlap_fraction
    }

    /// ceil(fraction * size), never the whole chunk.
    pub fn overlap_tokens(&self) -> usize {
        let exact = self.overlap_fraction * self.chunk_size as f64;
        let overlap = (exact - 1e-9).ceil().max(0.0) as usize;
        overlap.min(self.chunk_size - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Chunk {
    pub doc_id: String,
    pub index: usize,
    /// Source text from the first to the last token of the chunk, with its
    /// original line breaks.
    pub text: String,
    /// Half-open token range `[start, end)`.
    pub token_span: (usize, usize),
}

impl Chunk {
    pub fn token_count(&self) -> usize {
        self.token_span.1 - self.token_span.0
    }
}

fn token_ranges(text: &str) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                ranges.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        ranges.push((s, text.len()));
    }
    ranges
}

/// Splits `text` into windows of whitespace-delimited tokens. Each window
/// after the first starts `overlap_tokens()` before the previous one ended.
pub fn chunk_text(doc_id: &str, text: &str, config: &ChunkConfig) -> Vec<Chunk> {
    let tokens = token_ranges(text);
    let n = tokens.len();
    let size = config.chunk_size;
    let overlap = config.overlap_tokens();
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + size).min(n);
        chunks.push(Chunk {
            doc_id: doc_id.to_string(),
            index: chunks.len(),
            text: text[tokens[start].0..tokens[end - 1].1].to_string(),
            token_span: (start, end),
        });
        if end == n {
            break;
        }
        start = end - overlap;
    }
    chunks
}
