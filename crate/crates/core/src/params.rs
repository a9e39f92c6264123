//! Named parameter traversal and initialisation helpers.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Matrix;

/// A set of named tensors visited in a fixed order.
///
/// The visit order must match the order in which the owner creates graph
/// parameters when binding, so that gradients line up with tensors.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix));

    fn named_tensors(&self) -> Vec<(String, Matrix)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, m| out.push((String::from(n), m.clone())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, m| n += m.len());
        n
    }

    /// Overwrites every tensor from `tensors` by name, collecting mismatches.
    fn load_named(&mut self, tensors: &[(String, Matrix)]) -> crate::Result<()> {
        let mut problems = Vec::new();
        let mut seen = 0usize;
        self.visit_mut("", &mut |name, m| match tensors.iter().find(|(n, _)| n == name) {
            Some((_, t)) if t.shape() == m.shape() => {
                *m = t.clone();
                seen += 1;
            }
            Some((_, t)) => problems.push(format!("{name}: expected {:?}, found {:?}", m.shape(), t.shape())),
            None => problems.push(format!("{name}: missing")),
        });
        if seen != tensors.len() && problems.is_empty() {
            let mut known = Vec::new();
            self.visit("", &mut |n, _| known.push(String::from(n)));
            for (n, _) in tensors {
                if !known.contains(n) {
                    problems.push(format!("{n}: unexpected tensor"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(crate::Error::ParamMismatch(problems))
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

/// Glorot-uniform `rows × cols` weights.
pub fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let limit = libm::sqrt(6.0 / (rows + cols) as f64);
    uniform(rng, rows, cols, limit)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, limit: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect())
}
