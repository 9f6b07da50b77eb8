//! Synthetic corpora for controlled domain-shift experiments.
//!
//! Both corpora follow the same agreement grammar and spell their words with
//! the same letters, but their word lists are disjoint.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::rng;

const ALPHABET: &[u8] = b"abcdefghijklmnop";

/// Word lists for each grammatical category.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub determiners: Vec<String>,
    pub adjectives: Vec<String>,
    pub nouns_singular: Vec<String>,
    pub nouns_plural: Vec<String>,
    pub verbs_singular: Vec<String>,
    pub verbs_plural: Vec<String>,
    pub prepositions: Vec<String>,
    pub conjunctions: Vec<String>,
}

const SIZES: [usize; 8] = [4, 8, 10, 10, 8, 8, 4, 2];

impl Lexicon {
    fn categories(&self) -> [&Vec<String>; 8] {
        [
            &self.determiners,
            &self.adjectives,
            &self.nouns_singular,
            &self.nouns_plural,
            &self.verbs_singular,
            &self.verbs_plural,
            &self.prepositions,
            &self.conjunctions,
        ]
    }

    pub fn words(&self) -> BTreeSet<&str> {
        self.categories()
            .iter()
            .flat_map(|c| c.iter().map(String::as_str))
            .collect()
    }

    fn from_pool(pool: &mut Vec<String>) -> Lexicon {
        let mut take = |n: usize| pool.drain(..n).collect::<Vec<_>>();
        let [d, a, ns, np, vs, vp, p, c] = SIZES;
        Lexicon {
            determiners: take(d),
            adjectives: take(a),
            nouns_singular: take(ns),
            nouns_plural: take(np),
            verbs_singular: take(vs),
            verbs_plural: take(vp),
            prepositions: take(p),
            conjunctions: take(c),
        }
    }
}

/// Generator for one corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    pub lexicon: Lexicon,
}

impl Grammar {
    /// Two grammars with identical structure and disjoint vocabularies.
    pub fn pair(seed: u64) -> (Grammar, Grammar) {
        let mut rng = rng::stream(seed, "synth-lexicon");
        let per: usize = SIZES.iter().sum();
        let mut seen = BTreeSet::new();
        let mut pool = Vec::with_capacity(2 * per);
        while pool.len() < 2 * per {
            let len = rng.gen_range(2..=5);
            let w: String = (0..len).map(|_| *ALPHABET.choose(&mut rng).unwrap() as char).collect();
            if seen.insert(w.clone()) {
                pool.push(w);
            }
        }
        let a = Lexicon::from_pool(&mut pool);
        let b = Lexicon::from_pool(&mut pool);
        (Grammar { lexicon: a }, Grammar { lexicon: b })
    }

    fn noun_phrase(&self, rng: &mut impl Rng, out: &mut Vec<String>, plural: bool, depth: usize) {
        let lx = &self.lexicon;
        out.push(lx.determiners.choose(rng).unwrap().clone());
        if rng.gen_bool(0.4) {
            out.push(lx.adjectives.choose(rng).unwrap().clone());
        }
        let nouns = if plural { &lx.nouns_plural } else { &lx.nouns_singular };
        out.push(nouns.choose(rng).unwrap().clone());
        if depth == 0 && rng.gen_bool(0.3) {
            out.push(lx.prepositions.choose(rng).unwrap().clone());
            let p = rng.gen_bool(0.5);
            self.noun_phrase(rng, out, p, depth + 1);
        }
    }

    fn clause(&self, rng: &mut impl Rng, out: &mut Vec<String>) {
        let plural = rng.gen_bool(0.5);
        self.noun_phrase(rng, out, plural, 0);
        let verbs = if plural {
            &self.lexicon.verbs_plural
        } else {
            &self.lexicon.verbs_singular
        };
        out.push(verbs.choose(rng).unwrap().clone());
        let object_plural = rng.gen_bool(0.5);
        self.noun_phrase(rng, out, object_plural, 0);
    }

    pub fn sentence(&self, rng: &mut impl Rng) -> String {
        let mut words = Vec::new();
        self.clause(rng, &mut words);
        if rng.gen_bool(0.25) {
            words.push(self.lexicon.conjunctions.choose(rng).unwrap().clone());
            self.clause(rng, &mut words);
        }
        words.join(" ")
    }

    pub fn sentences(&self, rng: &mut impl Rng, n: usize) -> Vec<String> {
        (0..n).map(|_| self.sentence(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabularies_are_disjoint() {
        let (a, b) = Grammar::pair(7);
        let (wa, wb) = (a.lexicon.words(), b.lexicon.words());
        assert_eq!(wa.len(), SIZES.iter().sum::<usize>());
        assert!(wa.is_disjoint(&wb));
        let mut rng = rng::stream(7, "t");
        for line in a.sentences(&mut rng, 200) {
            assert!(line.split(' ').all(|w| wa.contains(w)), "{line}");
        }
    }

    #[test]
    fn generation_is_seeded() {
        let (a, _) = Grammar::pair(1);
        let x = a.sentences(&mut rng::stream(1, "s"), 20);
        let y = a.sentences(&mut rng::stream(1, "s"), 20);
        assert_eq!(x, y);
        assert_ne!(Grammar::pair(2).0, a);
    }
}
