#![allow(dead_code)]

use isaaq_core::corpus::QuestionKind;
use isaaq_core::encoder::{EncoderSpec, TextEncoder};
use isaaq_core::retrieval::RetrieverKind;
use isaaq_core::toy::{self, ToyDataset, ToySizes};
use isaaq_core::train::TrainConfig;

pub fn toy_dataset() -> ToyDataset {
    toy::dataset(ToySizes { true_false: 16, text_mc: 32, diagram_mc: 16 }, 11).unwrap()
}

pub fn toy_encoder(ds: &ToyDataset, hidden: usize, seed: u64) -> TextEncoder {
    let vocab = ds.vocab();
    let spec = EncoderSpec::toy(vocab.len(), hidden, 2);
    TextEncoder::new(vocab, spec, seed).unwrap()
}

/// Fast settings for the synthetic fixtures.
pub fn toy_config(task: QuestionKind, epochs: usize) -> TrainConfig {
    TrainConfig {
        peak_lr: 2e-3,
        warmup_fraction: 0.05,
        epochs,
        max_len: 48,
        target_train_accuracy: Some(100.0),
        ..TrainConfig::paper(task, RetrieverKind::Ir)
    }
}

use isaaq_core::params::Parameters;
use isaaq_core::tensor::Matrix;

/// Below this magnitude an entry is compared on an absolute scale.
pub const GRAD_FLOOR: f64 = 1e-6;

fn set_entry<P: Parameters + ?Sized>(p: &mut P, tensor: usize, index: usize, value: f64) -> f64 {
    let mut t = 0;
    let mut old = 0.0;
    p.visit_mut("", &mut |_, m| {
        if t == tensor {
            old = m.data()[index];
            m.data_mut()[index] = value;
        }
        t += 1;
    });
    old
}

/// Largest `|a − n| / max(|a|, |n|, GRAD_FLOOR)` over every parameter entry,
/// with `n` the central difference of `loss`. Also returns the name of the
/// worst tensor.
pub fn max_rel_error<P: Parameters>(p: &mut P, analytic: &[Matrix], mut loss: impl FnMut(&P) -> f64) -> (f64, String) {
    let h = 1e-5;
    let mut tensors = Vec::new();
    p.visit("", &mut |name, m| tensors.push((name.to_string(), m.len())));
    assert_eq!(tensors.len(), analytic.len(), "one gradient per tensor");
    let mut worst = (0.0, String::new());
    for (t, (name, len)) in tensors.iter().enumerate() {
        assert_eq!(analytic[t].len(), *len, "{name}");
        for i in 0..*len {
            let x = set_entry(p, t, i, 0.0);
            set_entry(p, t, i, x + h);
            let up = loss(p);
            set_entry(p, t, i, x - h);
            let down = loss(p);
            set_entry(p, t, i, x);
            let n = (up - down) / (2.0 * h);
            let a = analytic[t].data()[i];
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{i}] analytic {a:e} numeric {n:e}"));
            }
        }
    }
    worst
}
