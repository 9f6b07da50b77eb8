use crate::error::{Error, Result};

/// One truncated-BPTT block across all parallel streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    /// `inputs[s]` is the slice of stream `s` fed in this block.
    pub inputs: Vec<Vec<u32>>,
    /// `targets[s][t] == inputs[s][t + 1]` within the stream.
    pub targets: Vec<Vec<u32>>,
    /// True when the hidden state should be carried in from the previous block.
    pub carry: bool,
}

impl Block {
    pub fn len(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn predictions(&self) -> usize {
        self.inputs.iter().map(Vec::len).sum()
    }
}

/// Splits `tokens` into `batch_size` contiguous streams of equal length
/// (trailing remainder dropped) and cuts them into blocks of at most
/// `truncation` predictions. The last block may be shorter.
pub fn batch_stream(tokens: &[u32], batch_size: usize, truncation: usize) -> Result<Vec<Block>> {
    if batch_size == 0 || truncation == 0 {
        return Err(Error::config("batch size and truncation length must be positive"));
    }
    let per_stream = tokens.len() / batch_size;
    if per_stream < 2 {
        return Err(Error::data(format!(
            "corpus of {} tokens is too short for {batch_size} streams",
            tokens.len()
        )));
    }
    let streams: Vec<&[u32]> = (0..batch_size)
        .map(|s| &tokens[s * per_stream..(s + 1) * per_stream])
        .collect();
    let mut blocks = Vec::new();
    let mut start = 0;
    while start + 1 < per_stream {
        let len = truncation.min(per_stream - 1 - start);
        blocks.push(Block {
            inputs: streams.iter().map(|s| s[start..start + len].to_vec()).collect(),
            targets: streams.iter().map(|s| s[start + 1..start + len + 1].to_vec()).collect(),
            carry: start > 0,
        });
        start += len;
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_tokens_two_streams() {
        let toks: Vec<u32> = (0..10).collect();
        let blocks = batch_stream(&toks, 2, 2).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].inputs, vec![vec![0, 1], vec![5, 6]]);
        assert_eq!(blocks[0].targets, vec![vec![1, 2], vec![6, 7]]);
        assert_eq!(blocks[1].inputs, vec![vec![2, 3], vec![7, 8]]);
        assert!(!blocks[0].carry && blocks[1].carry);
    }

    #[test]
    fn too_short_rejected() {
        assert!(batch_stream(&[1, 2, 3], 4, 2).is_err());
    }

    #[test]
    fn prediction_count_matches_enumeration() {
        for (n, b, t) in [(10, 2, 2), (101, 3, 7), (50, 5, 35), (37, 1, 4)] {
            let toks: Vec<u32> = (0..n).collect();
            let blocks = batch_stream(&toks, b, t).unwrap();
            // brute force: every adjacent (x, next) pair inside each stream
            let per = n as usize / b;
            let mut expected = Vec::new();
            for s in 0..b {
                for i in 0..per - 1 {
                    expected.push((toks[s * per + i], toks[s * per + i + 1]));
                }
            }
            let mut got = Vec::new();
            for blk in &blocks {
                for s in 0..b {
                    for (x, y) in blk.inputs[s].iter().zip(&blk.targets[s]) {
                        got.push((*x, *y));
                    }
                }
            }
            got.sort();
            expected.sort();
            assert_eq!(got, expected);
            assert_eq!(blocks.iter().map(Block::predictions).sum::<usize>(), (per - 1) * b);
        }
    }
}
