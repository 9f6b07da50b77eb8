use proptest::prelude::*;
use rndlm::tokenization::{BpeModel, Tokenizer, Vocabulary, EOS_ID, UNK_ID};

const TRAIN: &[&str] = &[
    "the cat sat on the mat",
    "the dog sat on the log",
    "a cat and a dog met on the mat",
    "lower lowest low slow",
];

fn model(merges: usize) -> BpeModel {
    BpeModel::learn(TRAIN.iter().copied(), merges)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn bpe_round_trips_any_line(line in "[^\n]{0,40}", merges in 0usize..30) {
        let m = model(merges);
        let ids = m.encode(&line);
        prop_assert_eq!(ids.last(), Some(&EOS_ID));
        prop_assert!(!ids.contains(&UNK_ID));
        prop_assert_eq!(m.decode(&ids).unwrap(), line);
    }

    #[test]
    fn bpe_round_trips_after_reload(words in prop::collection::vec("[a-zé]{1,6}", 1..8)) {
        let line = words.join(" ");
        let m = model(12);
        let back = BpeModel::parse(&m.to_file_string()).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.decode(&back.encode(&line)).unwrap(), line);
    }

    #[test]
    fn word_vocab_maps_unseen_to_unk(word in "[A-Z]{3,8}") {
        let v = Vocabulary::build(TRAIN.iter().copied(), 1).unwrap();
        let ids = v.encode(&format!("the {word} sat"));
        prop_assert_eq!(ids.len(), 4);
        prop_assert_eq!(ids[1], UNK_ID);
    }
}

#[test]
fn merges_are_deterministic_and_prefix_stable() {
    let a = model(25);
    let b = model(25);
    assert_eq!(a.merges(), b.merges());
    assert_eq!(a.to_file_string(), b.to_file_string());
    // learning fewer merges yields a prefix of the longer list
    let short = model(10);
    assert_eq!(short.merges(), &a.merges()[..short.merges().len()]);
}

#[test]
fn merges_ignore_line_order_of_equal_counts() {
    let mut rev: Vec<&str> = TRAIN.to_vec();
    rev.reverse();
    assert_eq!(BpeModel::learn(rev, 25).merges(), model(25).merges());
}

#[test]
fn tokenizer_file_identifies_family() {
    let w = Tokenizer::Word(Vocabulary::build(TRAIN.iter().copied(), 1).unwrap());
    let b = Tokenizer::Bpe(model(5));
    for t in [w, b] {
        let back = Tokenizer::parse(&t.to_file_string()).unwrap();
        assert_eq!(back.hash(), t.hash());
        assert_eq!(back.encode("the cat"), t.encode("the cat"));
    }
    assert!(Tokenizer::parse("garbage").is_err());
}
