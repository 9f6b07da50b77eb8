//! Word-level vocabularies and byte-fallback BPE subword models.

mod bpe;
mod vocab;

pub use bpe::{BpeModel, Piece, Symbol, BOUNDARY};
pub use vocab::{Vocabulary, EOS, EOS_ID, UNK, UNK_ID};

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::sha256_hex;

/// A finalized tokenizer of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum Tokenizer {
    Word(Vocabulary),
    Bpe(BpeModel),
}

impl Tokenizer {
    /// Encodes one line, appending the end-of-sentence id.
    pub fn encode(&self, line: &str) -> Vec<u32> {
        match self {
            Tokenizer::Word(v) => v.encode(line),
            Tokenizer::Bpe(m) => m.encode(line),
        }
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        match self {
            Tokenizer::Word(v) => v.decode(ids),
            Tokenizer::Bpe(m) => m.decode(ids),
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Tokenizer::Word(v) => v.len(),
            Tokenizer::Bpe(m) => m.vocab_size(),
        }
    }

    pub fn to_file_string(&self) -> String {
        match self {
            Tokenizer::Word(v) => v.to_file_string(),
            Tokenizer::Bpe(m) => m.to_file_string(),
        }
    }

    /// Content hash of the serialized tokenizer; checkpoints record it.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_file_string().as_bytes())
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text.starts_with(vocab::HEADER) {
            Ok(Tokenizer::Word(Vocabulary::parse(text)?))
        } else if text.starts_with(bpe::HEADER) {
            Ok(Tokenizer::Bpe(BpeModel::parse(text)?))
        } else {
            Err(Error::data("unrecognized tokenizer file header"))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    /// Encodes every line and concatenates them into one stream.
    pub fn encode_corpus<'a>(&self, lines: impl IntoIterator<Item = &'a str>) -> Vec<u32> {
        lines.into_iter().flat_map(|l| self.encode(l)).collect()
    }

    pub fn unk_id(&self) -> Option<u32> {
        match self {
            Tokenizer::Word(_) => Some(UNK_ID),
            Tokenizer::Bpe(_) => None,
        }
    }
}
