//! Input sequence construction for the encoder.
//!
//! Pair layout is `[CLS] first [SEP] second [SEP]` with segment id 0 up to and
//! including the first `[SEP]` and 1 afterwards.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tokenizer::Vocab;

/// Smallest accepted `max_len`.
pub const MIN_MAX_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
    pub max_len: usize,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Which segment loses tokens first when the pair is over budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncate {
    FirstThenSecond,
    SecondThenFirst,
}

/// Lays out a token pair, trimming from the end of segments per `policy`.
pub fn pair(vocab: &Vocab, mut first: Vec<u32>, mut second: Vec<u32>, max_len: usize, policy: Truncate) -> EncodedSequence {
    let max_len = max_len.max(MIN_MAX_LEN);
    let budget = max_len - 3;
    let mut excess = (first.len() + second.len()).saturating_sub(budget);
    let (a, b) = match policy {
        Truncate::FirstThenSecond => (&mut first, &mut second),
        Truncate::SecondThenFirst => (&mut second, &mut first),
    };
    let cut = excess.min(a.len());
    a.truncate(a.len() - cut);
    excess -= cut;
    let cut = excess.min(b.len());
    b.truncate(b.len() - cut);

    let mut token_ids = Vec::with_capacity(first.len() + second.len() + 3);
    token_ids.push(vocab.cls());
    token_ids.extend_from_slice(&first);
    token_ids.push(vocab.sep());
    let seg0 = token_ids.len();
    token_ids.extend_from_slice(&second);
    token_ids.push(vocab.sep());
    let mut segment_ids = vec![0u8; seg0];
    segment_ids.resize(token_ids.len(), 1);
    let attention_mask = vec![1u8; token_ids.len()];
    EncodedSequence { token_ids, segment_ids, attention_mask, max_len }
}

/// `[CLS] K [SEP] q a [SEP]`; the background `K` is trimmed before the
/// question and option.
pub fn build_sequence(vocab: &Vocab, background: &str, question: &str, option: &str, max_len: usize) -> EncodedSequence {
    let mut qa = vocab.encode(question);
    qa.extend(vocab.encode(option));
    pair(vocab, vocab.encode(background), qa, max_len, Truncate::FirstThenSecond)
}

/// `[CLS] q [SEP] ls [SEP]` for true/false entailment; the premise `ls` is
/// trimmed first.
pub fn build_sequence_tf(vocab: &Vocab, question: &str, premise: &str, max_len: usize) -> EncodedSequence {
    pair(vocab, vocab.encode(question), vocab.encode(premise), max_len, Truncate::SecondThenFirst)
}

/// `[CLS] text [SEP]`, used to embed a single text.
pub fn single(vocab: &Vocab, text: &str, max_len: usize) -> EncodedSequence {
    let max_len = max_len.max(MIN_MAX_LEN);
    let mut ids = vocab.encode(text);
    ids.truncate(max_len - 2);
    let mut token_ids = Vec::with_capacity(ids.len() + 2);
    token_ids.push(vocab.cls());
    token_ids.extend(ids);
    token_ids.push(vocab.sep());
    let n = token_ids.len();
    EncodedSequence { token_ids, segment_ids: vec![0; n], attention_mask: vec![1; n], max_len }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::String;

    fn vocab() -> Vocab {
        let words: Vec<String> = (0..400).map(|i| format!("w{i}")).collect();
        let mut text = words.join(" ");
        text.push_str(" is water wet true");
        Vocab::build([text.as_str()])
    }

    fn check_grammar(s: &EncodedSequence, vocab: &Vocab) {
        assert_eq!(s.token_ids[0], vocab.cls());
        assert_eq!(s.token_ids.iter().filter(|&&t| t == vocab.sep()).count(), 2);
        assert_eq!(*s.token_ids.last().unwrap(), vocab.sep());
        assert!(s.segment_ids.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(s.token_ids.len(), s.segment_ids.len());
        assert_eq!(s.token_ids.len(), s.attention_mask.len());
        assert!(s.len() <= s.max_len);
    }

    #[test]
    fn empty_background() {
        let v = vocab();
        let s = build_sequence(&v, "", "is water wet", "true", 64);
        let ids: Vec<u32> = ["[CLS]", "[SEP]", "is", "water", "wet", "true", "[SEP]"]
            .iter()
            .map(|t| v.id(t).unwrap())
            .collect();
        assert_eq!(s.token_ids, ids);
        assert_eq!(s.segment_ids, [0, 0, 1, 1, 1, 1, 1]);
        check_grammar(&s, &v);
    }

    #[test]
    fn long_background_trimmed_first() {
        let v = vocab();
        let k: Vec<String> = (0..300).map(|i| format!("w{i}")).collect();
        let s = build_sequence(&v, &k.join(" "), "is water wet", "true", 180);
        assert_eq!(s.len(), 180);
        assert_eq!(&s.token_ids[176..179], &v.encode("water wet true")[..]);
        assert_eq!(s.token_ids[1], v.id("w0").unwrap());
        check_grammar(&s, &v);
    }

    #[test]
    fn question_trimmed_once_background_exhausted() {
        let v = vocab();
        let q: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let s = build_sequence(&v, "w1 w2", &q.join(" "), "", 10);
        assert_eq!(s.len(), 10);
        assert_eq!(s.token_ids[1], v.sep());
        check_grammar(&s, &v);
    }

    #[test]
    fn tf_layout_counts() {
        let v = vocab();
        let s = build_sequence_tf(&v, "is water wet", "w1 w2 w3", 64);
        assert_eq!(s.len(), 9);
        check_grammar(&s, &v);
        let ls: Vec<String> = (0..100).map(|i| format!("w{i}")).collect();
        let s = build_sequence_tf(&v, "is water wet", &ls.join(" "), 64);
        assert_eq!(s.len(), 64);
        assert_eq!(&s.token_ids[1..4], &v.encode("is water wet")[..]);
        check_grammar(&s, &v);
    }
}
