use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use super::vocab::{EOS_ID, UNK_ID};
use crate::error::{Error, Result};

/// Word-boundary marker. Every space in the input, plus one at the start of
/// each line, becomes this symbol and is glued onto the following piece.
pub const BOUNDARY: char = '\u{2581}';

pub(super) const HEADER: &str = "#bpe-model v1";
const BOUNDARY_LINE: &str = "boundary=\u{2581} prefix";

/// One atom of text. Characters outside the learned alphabet (and any literal
/// boundary character) are carried as their UTF-8 bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    Boundary,
    Char(char),
    Byte(u8),
}

/// A vocabulary entry: a non-empty run of symbols.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Piece(pub Vec<Symbol>);

impl Piece {
    fn single(s: Symbol) -> Self {
        Piece(vec![s])
    }

    fn concat(&self, other: &Piece) -> Piece {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Piece(v)
    }

    /// Escaped, whitespace-free rendering used in model files.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.0 {
            match *s {
                Symbol::Boundary => out.push(BOUNDARY),
                Symbol::Byte(b) => {
                    let _ = write!(out, "\\x{b:02X}");
                }
                Symbol::Char('\\') => out.push_str("\\\\"),
                Symbol::Char(c) if c.is_whitespace() || c.is_control() || c == BOUNDARY => {
                    let _ = write!(out, "\\u{{{:X}}}", c as u32);
                }
                Symbol::Char(c) => out.push(c),
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Piece> {
        let bad = || Error::data(format!("malformed piece {text:?}"));
        let mut out = Vec::new();
        let mut chars = text.chars();
        while let Some(c) = chars.next() {
            match c {
                BOUNDARY => out.push(Symbol::Boundary),
                '\\' => match chars.next().ok_or_else(bad)? {
                    '\\' => out.push(Symbol::Char('\\')),
                    'x' => {
                        let hex: String = chars.by_ref().take(2).collect();
                        let b = u8::from_str_radix(&hex, 16).map_err(|_| bad())?;
                        out.push(Symbol::Byte(b));
                    }
                    'u' => {
                        if chars.next() != Some('{') {
                            return Err(bad());
                        }
                        let hex: String = chars.by_ref().take_while(|&c| c != '}').collect();
                        let code = u32::from_str_radix(&hex, 16).map_err(|_| bad())?;
                        out.push(Symbol::Char(char::from_u32(code).ok_or_else(bad)?));
                    }
                    _ => return Err(bad()),
                },
                c => out.push(Symbol::Char(c)),
            }
        }
        if out.is_empty() {
            return Err(bad());
        }
        Ok(Piece(out))
    }
}

/// Splits a line into boundary-prefixed words of raw symbols.
fn words_of(line: &str, alphabet: Option<&BTreeSet<char>>) -> Vec<Vec<Symbol>> {
    let mut words: Vec<Vec<Symbol>> = Vec::new();
    if line.is_empty() {
        return words;
    }
    words.push(vec![Symbol::Boundary]);
    for c in line.chars() {
        if c == ' ' {
            words.push(vec![Symbol::Boundary]);
            continue;
        }
        let word = words.last_mut().expect("at least one word");
        let known = c != BOUNDARY && alphabet.is_none_or(|a| a.contains(&c));
        if known {
            word.push(Symbol::Char(c));
        } else {
            let mut buf = [0u8; 4];
            word.extend(c.encode_utf8(&mut buf).bytes().map(Symbol::Byte));
        }
    }
    words
}

/// Initial pieces of a word: the boundary is glued onto a following character.
fn initial_pieces(word: &[Symbol]) -> Vec<Piece> {
    match word {
        [Symbol::Boundary, c @ Symbol::Char(_), rest @ ..] => std::iter::once(Piece(vec![Symbol::Boundary, *c]))
            .chain(rest.iter().map(|s| Piece::single(*s)))
            .collect(),
        _ => word.iter().map(|s| Piece::single(*s)).collect(),
    }
}

/// Byte-pair-encoding model with byte fallback, so every UTF-8 string encodes
/// without unknown tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct BpeModel {
    alphabet: BTreeSet<char>,
    merges: Vec<(Piece, Piece)>,
    pieces: Vec<Piece>,
    index: HashMap<Piece, u32>,
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

const FIRST_PIECE_ID: u32 = 2;

impl BpeModel {
    fn from_parts(alphabet: BTreeSet<char>, merges: Vec<(Piece, Piece)>) -> Result<Self> {
        let mut model = BpeModel {
            alphabet,
            merges: Vec::new(),
            pieces: Vec::new(),
            index: HashMap::new(),
            ranks: HashMap::new(),
        };
        model.add_piece(Piece::single(Symbol::Boundary));
        for b in 0..=255u8 {
            model.add_piece(Piece::single(Symbol::Byte(b)));
        }
        let chars: Vec<char> = model.alphabet.iter().copied().collect();
        for &c in &chars {
            model.add_piece(Piece::single(Symbol::Char(c)));
            model.add_piece(Piece(vec![Symbol::Boundary, Symbol::Char(c)]));
        }
        for (rank, (l, r)) in merges.into_iter().enumerate() {
            let (Some(&li), Some(&ri)) = (model.index.get(&l), model.index.get(&r)) else {
                return Err(Error::data(format!(
                    "merge {} {} refers to an unknown piece",
                    l.render(),
                    r.render()
                )));
            };
            let merged = model.add_piece(l.concat(&r));
            model.ranks.entry((li, ri)).or_insert((rank, merged));
            model.merges.push((l, r));
        }
        Ok(model)
    }

    fn add_piece(&mut self, piece: Piece) -> u32 {
        if let Some(&id) = self.index.get(&piece) {
            return id;
        }
        let id = FIRST_PIECE_ID + self.pieces.len() as u32;
        self.index.insert(piece.clone(), id);
        self.pieces.push(piece);
        id
    }

    /// Learns up to `num_merges` merges by repeatedly joining the most frequent
    /// adjacent pair. Equal counts go to the lexicographically smallest pair of
    /// rendered pieces. Stops early once no pair occurs at least twice.
    pub fn learn<'a>(lines: impl IntoIterator<Item = &'a str>, num_merges: usize) -> Self {
        let mut word_counts: HashMap<Vec<Symbol>, u64> = HashMap::new();
        let mut alphabet = BTreeSet::new();
        for line in lines {
            for w in words_of(line, None) {
                for s in &w {
                    if let Symbol::Char(c) = s {
                        alphabet.insert(*c);
                    }
                }
                *word_counts.entry(w).or_default() += 1;
            }
        }

        // Work on interned piece ids; `table` maps id -> piece.
        let mut table: Vec<Piece> = Vec::new();
        let mut interned: HashMap<Piece, u32> = HashMap::new();
        let mut intern = |p: Piece, table: &mut Vec<Piece>| -> u32 {
            *interned.entry(p.clone()).or_insert_with(|| {
                table.push(p);
                (table.len() - 1) as u32
            })
        };
        let mut words: Vec<(Vec<u32>, u64)> = word_counts
            .into_iter()
            .map(|(w, c)| {
                let ids = initial_pieces(&w).into_iter().map(|p| intern(p, &mut table)).collect();
                (ids, c)
            })
            .collect();
        words.sort();
        let mut rendered: Vec<String> = table.iter().map(Piece::render).collect();

        let mut merges = Vec::new();
        for _ in 0..num_merges {
            let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
            for (w, c) in &words {
                for pair in w.windows(2) {
                    *pair_counts.entry((pair[0], pair[1])).or_default() += c;
                }
            }
            let best = pair_counts.into_iter().min_by(|a, b| {
                b.1.cmp(&a.1)
                    .then_with(|| rendered[a.0 .0 as usize].cmp(&rendered[b.0 .0 as usize]))
                    .then_with(|| rendered[a.0 .1 as usize].cmp(&rendered[b.0 .1 as usize]))
            });
            let Some(((l, r), count)) = best else { break };
            if count < 2 {
                break;
            }
            let merged = intern(table[l as usize].concat(&table[r as usize]), &mut table);
            if rendered.len() < table.len() {
                rendered.push(table[merged as usize].render());
            }
            for (w, _) in &mut words {
                apply_merge(w, l, r, merged);
            }
            merges.push((table[l as usize].clone(), table[r as usize].clone()));
        }
        Self::from_parts(alphabet, merges).expect("learned merges are self-consistent")
    }

    pub fn merges(&self) -> &[(Piece, Piece)] {
        &self.merges
    }

    pub fn vocab_size(&self) -> usize {
        FIRST_PIECE_ID as usize + self.pieces.len()
    }

    pub fn piece(&self, id: u32) -> Result<&Piece> {
        id.checked_sub(FIRST_PIECE_ID)
            .and_then(|i| self.pieces.get(i as usize))
            .ok_or_else(|| Error::data(format!("piece id {id} out of range")))
    }

    pub fn piece_id(&self, piece: &Piece) -> Option<u32> {
        self.index.get(piece).copied()
    }

    fn encode_word(&self, word: &[Symbol], out: &mut Vec<u32>) {
        let mut ids: Vec<u32> = Vec::with_capacity(word.len());
        for p in initial_pieces(word) {
            match self.index.get(&p) {
                Some(&id) => ids.push(id),
                None => {
                    // glued boundary for a char that never followed a space
                    for s in p.0 {
                        ids.push(self.index[&Piece::single(s)]);
                    }
                }
            }
        }
        loop {
            let best = ids
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0], p[1])).map(|&(rank, m)| (rank, p[0], p[1], m)))
                .min();
            let Some((_, l, r, m)) = best else { break };
            apply_merge(&mut ids, l, r, m);
        }
        out.extend(ids);
    }

    /// Encodes one line and appends `<eos>`.
    pub fn encode(&self, line: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for w in words_of(line, Some(&self.alphabet)) {
            self.encode_word(&w, &mut out);
        }
        out.push(EOS_ID);
        out
    }

    /// Inverse of [`encode`](Self::encode). `<eos>` separates lines.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut lines = Vec::new();
        let mut bytes: Vec<u8> = Vec::new();
        let mut flush = |bytes: &mut Vec<u8>| -> Result<()> {
            let start = usize::from(bytes.first() == Some(&b' '));
            let line = std::str::from_utf8(&bytes[start..])
                .map_err(|_| Error::data("decoded pieces are not valid UTF-8"))?
                .to_string();
            lines.push(line);
            bytes.clear();
            Ok(())
        };
        for &id in ids {
            if id == EOS_ID {
                flush(&mut bytes)?;
                continue;
            }
            if id == UNK_ID {
                return Err(Error::data("BPE models never emit the unknown id"));
            }
            for s in &self.piece(id)?.0 {
                match *s {
                    Symbol::Boundary => bytes.push(b' '),
                    Symbol::Byte(b) => bytes.push(b),
                    Symbol::Char(c) => {
                        let mut buf = [0u8; 4];
                        bytes.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                    }
                }
            }
        }
        if !bytes.is_empty() {
            flush(&mut bytes)?;
        }
        Ok(lines.join("\n"))
    }

    pub fn to_file_string(&self) -> String {
        let mut out = format!("{HEADER}\n{BOUNDARY_LINE}\nalphabet=");
        let alphabet: Vec<String> = self
            .alphabet
            .iter()
            .map(|&c| Piece::single(Symbol::Char(c)).render())
            .collect();
        out.push_str(&alphabet.join(" "));
        out.push('\n');
        for (l, r) in &self.merges {
            out.push_str(&l.render());
            out.push(' ');
            out.push_str(&r.render());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::data("bad BPE model header"));
        }
        if lines.next() != Some(BOUNDARY_LINE) {
            return Err(Error::data("unsupported word-boundary convention"));
        }
        let alphabet_line = lines
            .next()
            .and_then(|l| l.strip_prefix("alphabet="))
            .ok_or_else(|| Error::data("missing alphabet line"))?;
        let mut alphabet = BTreeSet::new();
        for tok in alphabet_line.split(' ').filter(|t| !t.is_empty()) {
            match Piece::parse(tok)?.0.as_slice() {
                [Symbol::Char(c)] => {
                    alphabet.insert(*c);
                }
                _ => return Err(Error::data(format!("bad alphabet entry {tok:?}"))),
            }
        }
        let mut merges = Vec::new();
        for (n, line) in lines.enumerate() {
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| Error::data(format!("merge line {}: expected two pieces", n + 4)))?;
            merges.push((Piece::parse(l)?, Piece::parse(r)?));
        }
        Self::from_parts(alphabet, merges)
    }
}

fn apply_merge(ids: &mut Vec<u32>, l: u32, r: u32, merged: u32) {
    let mut i = 0;
    let mut out = Vec::with_capacity(ids.len());
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == l && ids[i + 1] == r {
            out.push(merged);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    *ids = out;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn piece(s: &str) -> Piece {
        Piece::parse(s).unwrap()
    }

    /// Brute-force count of adjacent pairs in the initial segmentation.
    fn brute_pair_count(corpus: &[&str], l: &Piece, r: &Piece) -> usize {
        let mut n = 0;
        for line in corpus {
            for w in words_of(line, None) {
                let ps = initial_pieces(&w);
                for i in 1..ps.len() {
                    if &ps[i - 1] == l && &ps[i] == r {
                        n += 1;
                    }
                }
            }
        }
        n
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let corpus = ["ab ab ac"];
        let m = BpeModel::learn(corpus, 1);
        assert_eq!(m.merges().len(), 1);
        let (l, r) = &m.merges()[0];
        assert_eq!(l, &piece("\u{2581}a"));
        assert_eq!(r, &piece("b"));
        assert_eq!(brute_pair_count(&corpus, l, r), 2);
        assert_eq!(brute_pair_count(&corpus, l, &piece("c")), 1);
    }

    #[test]
    fn zero_merges_is_character_level() {
        let m = BpeModel::learn(["hello world"], 0);
        assert!(m.merges().is_empty());
        let ids = m.encode("hello");
        // boundary+h, e, l, l, o, eos
        assert_eq!(ids.len(), 6);
    }

    #[test]
    fn single_character_corpus_learns_nothing() {
        let m = BpeModel::learn(["a a a a", "a"], 10);
        assert!(m.merges().is_empty());
    }

    #[test]
    fn fully_merged_word_is_one_id() {
        let corpus = ["low lower low low", "lowest low"];
        let m = BpeModel::learn(corpus, 10);
        // replayed by hand: (▁l,o) and (o,w) both occur 7 times and "o" sorts
        // before "▁l", so (o,w) is first, then (▁l,ow)
        assert_eq!(m.merges()[0], (piece("o"), piece("w")));
        assert_eq!(m.merges()[1], (piece("\u{2581}l"), piece("ow")));
        let ids = m.encode("low");
        assert_eq!(ids.len(), 2);
        assert_eq!(m.piece(ids[0]).unwrap(), &piece("\u{2581}low"));
    }

    #[test]
    fn empty_line_encodes_to_eos() {
        let m = BpeModel::learn(["abc"], 5);
        assert_eq!(m.encode(""), vec![EOS_ID]);
        assert_eq!(m.decode(&[EOS_ID]).unwrap(), "");
    }

    #[test]
    fn unseen_characters_fall_back_to_bytes() {
        let m = BpeModel::learn(["abc abc"], 5);
        for s in [
            "zebra ü 猫",
            "  double  spaces ",
            "tab\there",
            "literal \u{2581} marker",
            "back\\slash",
        ] {
            let ids = m.encode(s);
            assert_eq!(m.decode(&ids).unwrap(), s);
        }
    }

    #[test]
    fn out_of_range_id_rejected() {
        let m = BpeModel::learn(["abc"], 1);
        assert!(m.decode(&[m.vocab_size() as u32]).is_err());
    }

    #[test]
    fn piece_rendering_round_trips() {
        let p = Piece(vec![
            Symbol::Boundary,
            Symbol::Char('\\'),
            Symbol::Char('\t'),
            Symbol::Byte(0xE2),
            Symbol::Char('x'),
            Symbol::Char(' '),
        ]);
        let text = p.render();
        assert!(!text.contains(' '));
        assert_eq!(Piece::parse(&text).unwrap(), p);
    }

    #[test]
    fn file_round_trip_preserves_encoding() {
        let corpus = ["the cat sat", "the\tcat ran", "über alles", "cat\\dog"];
        let m = BpeModel::learn(corpus, 20);
        let parsed = BpeModel::parse(&m.to_file_string()).unwrap();
        assert_eq!(parsed, m);
        assert_eq!(parsed.encode("the cat"), m.encode("the cat"));
    }
}
