use std::collections::HashMap;

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";
pub const UNK_ID: u32 = 0;
pub const EOS_ID: u32 = 1;

pub(super) const HEADER: &str = "#word-vocab";

/// Word-level vocabulary with reserved unknown and end-of-sentence ids.
///
/// Ids are dense: `<unk>` is 0, `<eos>` is 1, then tokens by descending count
/// with ties broken lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Counts whitespace-separated tokens; tokens seen fewer than `min_count`
    /// times are left out and later encode to `<unk>`. A literal `<unk>` in the
    /// corpus counts towards the reserved entry.
    pub fn build<'a>(lines: impl IntoIterator<Item = &'a str>, min_count: u64) -> Result<Self> {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        let mut unk_count = 0;
        let mut eos_count = 0;
        let mut any = false;
        for line in lines {
            eos_count += 1;
            for tok in line.split_whitespace() {
                any = true;
                if tok == UNK {
                    unk_count += 1;
                } else {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        if !any {
            return Err(Error::data("cannot build a vocabulary from an empty corpus"));
        }
        let mut kept: Vec<(&str, u64)> = Vec::new();
        for (tok, c) in counts {
            if c >= min_count.max(1) && tok != EOS {
                kept.push((tok, c));
            } else if tok != EOS {
                unk_count += c;
            }
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens = vec![UNK.to_string(), EOS.to_string()];
        let mut counts = vec![unk_count, eos_count];
        for (t, c) in kept {
            tokens.push(t.to_string());
            counts.push(c);
        }
        Ok(Self::from_parts(tokens, counts))
    }

    fn from_parts(tokens: Vec<String>, counts: Vec<u64>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens, counts, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| Error::data(format!("token id {id} out of range")))
    }

    pub fn count(&self, token: &str) -> u64 {
        self.index.get(token).map(|&i| self.counts[i as usize]).unwrap_or(0)
    }

    pub fn encode(&self, line: &str) -> Vec<u32> {
        line.split_whitespace()
            .map(|t| self.id(t))
            .chain(std::iter::once(EOS_ID))
            .collect()
    }

    /// Joins tokens with single spaces; `<eos>` ends the line and is dropped.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self.token(id)?;
            if id != EOS_ID {
                words.push(tok);
            }
        }
        Ok(words.join(" "))
    }

    /// Fraction of non-eos tokens in `lines` that map to `<unk>`.
    pub fn unk_rate<'a>(&self, lines: impl IntoIterator<Item = &'a str>) -> f64 {
        let (mut unk, mut total) = (0usize, 0usize);
        for line in lines {
            for tok in line.split_whitespace() {
                total += 1;
                if self.id(tok) == UNK_ID {
                    unk += 1;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            unk as f64 / total as f64
        }
    }

    /// Header line, then one `token<TAB>count` per line; line order is id order.
    pub fn to_file_string(&self) -> String {
        let mut out = format!("{HEADER} unk={UNK} eos={EOS}\n");
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            out.push_str(t);
            out.push('\t');
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != format!("{HEADER} unk={UNK} eos={EOS}") {
            return Err(Error::data(format!("bad vocabulary header: {header}")));
        }
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (n, line) in lines.enumerate() {
            let (tok, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::data(format!("vocabulary line {}: missing count", n + 2)))?;
            let count = count
                .parse()
                .map_err(|_| Error::data(format!("vocabulary line {}: bad count", n + 2)))?;
            tokens.push(tok.to_string());
            counts.push(count);
        }
        if tokens.len() < 2 || tokens[0] != UNK || tokens[1] != EOS {
            return Err(Error::data("vocabulary is missing reserved tokens"));
        }
        let vocab = Self::from_parts(tokens, counts);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::data("vocabulary contains duplicate tokens"));
        }
        Ok(vocab)
    }
}
