use isaaq_core::encoder::{EncoderSpec, Mode, TextEncoder};
use isaaq_core::sequence::{build_sequence, build_sequence_tf, single, EncodedSequence};
use isaaq_core::tokenizer::{tokenize, Vocab};
use isaaq_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vocab() -> Vocab {
    Vocab::build(["is water wet true false rocks melt into magma deep underground a b c d e f g h , ."])
}

fn ids(v: &Vocab, text: &str) -> Vec<u32> {
    text.split_whitespace().map(|t| v.id(t).unwrap()).collect()
}

fn assert_grammar(s: &EncodedSequence, v: &Vocab) {
    assert!(s.len() <= s.max_len);
    assert_eq!(s.segment_ids.len(), s.len());
    assert_eq!(s.attention_mask.len(), s.len());
    assert_eq!(s.token_ids[0], v.cls());
    assert_eq!(s.token_ids.iter().filter(|&&t| t == v.cls()).count(), 1);
    let seps: Vec<usize> = (0..s.len()).filter(|&i| s.token_ids[i] == v.sep()).collect();
    assert_eq!(seps.len(), 2);
    assert_eq!(*seps.last().unwrap(), s.len() - 1);
    assert!(s.segment_ids.windows(2).all(|w| w[0] <= w[1]));
    assert!(s.segment_ids[..=seps[0]].iter().all(|&x| x == 0));
    assert!(s.segment_ids[seps[0] + 1..].iter().all(|&x| x == 1));
}

#[test]
fn empty_background_layout() {
    let v = vocab();
    let s = build_sequence(&v, "", "is water wet", "true", 64);
    let mut want = vec![v.cls(), v.sep()];
    want.extend(ids(&v, "is water wet true"));
    want.push(v.sep());
    assert_eq!(s.token_ids, want);
    assert_eq!(s.segment_ids, [0, 0, 1, 1, 1, 1, 1]);
    assert_grammar(&s, &v);
}

#[test]
fn background_is_cut_first() {
    let v = vocab();
    let k = vec!["rocks"; 300].join(" ");
    let s = build_sequence(&v, &k, "is water wet", "true", 180);
    assert_eq!(s.len(), 180);
    assert_eq!(s.token_ids[177..].to_vec(), [ids(&v, "wet true"), vec![v.sep()]].concat());
    assert_eq!(s.token_ids[1..174], vec![v.id("rocks").unwrap(); 173][..]);
    assert_eq!(s.token_ids[174], v.sep());
    assert_grammar(&s, &v);

    let qa = vec!["a"; 200].join(" ");
    let s = build_sequence(&v, "rocks melt", &qa, "b", 64);
    assert_eq!(s.len(), 64);
    assert_eq!(s.token_ids[1], v.sep());
    assert_grammar(&s, &v);
}

#[test]
fn tf_layout_and_truncation() {
    let v = vocab();
    let s = build_sequence_tf(&v, "is water wet", "rocks melt deep", 64);
    assert_eq!(s.len(), 9);
    assert_grammar(&s, &v);
    let ls = vec!["magma"; 100].join(" ");
    let s = build_sequence_tf(&v, "is water wet", &ls, 64);
    assert_eq!(s.len(), 64);
    assert_eq!(s.token_ids[1..5].to_vec(), [ids(&v, "is water wet"), vec![v.sep()]].concat());
    assert_grammar(&s, &v);
}

#[test]
fn tokenizer_and_vocab() {
    assert_eq!(tokenize("Rocks, melt.  Into MAGMA!"), ["rocks", ",", "melt", ".", "into", "magma", "!"]);
    let v = vocab();
    assert_eq!(v.encode("Quartz"), [v.unk()]);
    let again = Vocab::parse(&v.to_text()).unwrap();
    assert_eq!(again, v);
    assert!(Vocab::parse("a\nb\n").is_err());
    assert_eq!(&v.to_text().lines().take(4).collect::<Vec<_>>(), &["[PAD]", "[UNK]", "[CLS]", "[SEP]"]);
}

fn encoder(pooler: bool) -> TextEncoder {
    let v = vocab();
    let mut spec = EncoderSpec::toy(v.len(), 16, 2);
    spec.pooler = pooler;
    TextEncoder::new(v, spec, 3).unwrap()
}

#[test]
fn encode_contract() {
    let e = encoder(false);
    let s = build_sequence(&e.vocab, "rocks melt into magma", "is water wet", "true", 64);
    let a = e.encode(&s, &mut Mode::Eval).unwrap();
    assert_eq!(a.token_reps.shape(), (s.len(), 16));
    assert_eq!(a.pooled, a.token_reps.row(0));
    assert!(a.token_reps.is_finite());
    let b = e.encode(&s, &mut Mode::Eval).unwrap();
    assert_eq!(a, b);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = e.encode(&s, &mut Mode::Train(&mut rng)).unwrap();
    assert_ne!(t, a);

    let pooled = encoder(true);
    let p = pooled.encode(&s, &mut Mode::Eval).unwrap();
    assert!(p.pooled.iter().all(|x| x.abs() < 1.0));
    assert_ne!(p.pooled, p.token_reps.row(0));

    let mut bad = s.clone();
    bad.token_ids[1] = 10_000;
    assert!(matches!(e.encode(&bad, &mut Mode::Eval), Err(Error::OutOfVocab { id: 10_000, .. })));
}

#[test]
fn spec_validation() {
    let mut s = EncoderSpec::toy(10, 16, 1);
    s.heads = 3;
    assert!(s.validate().is_err());
    let mut s = EncoderSpec::toy(10, 16, 1);
    s.dropout = 1.0;
    assert!(s.validate().is_err());
    let e = encoder(false);
    let mut spec = e.spec.clone();
    spec.hidden = 8;
    spec.heads = 2;
    assert!(TextEncoder::from_parts(e.vocab.clone(), spec, e.params.clone()).is_err());
    assert!(TextEncoder::from_parts(e.vocab.clone(), e.spec.clone(), e.params.clone()).is_ok());
}

proptest! {
    #[test]
    fn layout_grammar_holds(k in 0usize..300, q in 0usize..120, a in 0usize..40, max_len in 8usize..200) {
        let v = vocab();
        let rep = |w: &str, n: usize| vec![w; n].join(" ");
        let s = build_sequence(&v, &rep("rocks", k), &rep("water", q), &rep("magma", a), max_len);
        assert_grammar(&s, &v);
        let kept_k = s.token_ids.iter().filter(|&&t| t == v.id("rocks").unwrap()).count();
        let kept_qa = s.len() - 3 - kept_k;
        // question and option lose nothing until the background is gone
        prop_assert!(kept_qa == q + a || kept_k == 0);
        prop_assert_eq!(s.len(), (k + q + a + 3).min(max_len));

        let t = build_sequence_tf(&v, &rep("water", q), &rep("rocks", k), max_len);
        assert_grammar(&t, &v);
        let kept_q = t.token_ids.iter().filter(|&&x| x == v.id("water").unwrap()).count();
        prop_assert!(kept_q == q || t.len() == 3 + kept_q);

        let s1 = single(&v, &rep("rocks", k), max_len);
        prop_assert!(s1.len() <= max_len);
        prop_assert_eq!(s1.token_ids[0], v.cls());
    }
}
