#![allow(dead_code)]

use std::path::{Path, PathBuf};

use isaaq::dataset::{boxes_path, image_path, save_boxes, save_dataset, save_image};
use isaaq_core::corpus::QuestionKind;
use isaaq_core::toy::{dataset, ToyDataset, ToySizes};

pub fn toy() -> ToyDataset {
    dataset(ToySizes { true_false: 10, text_mc: 10, diagram_mc: 10 }, 5).unwrap()
}

/// Writes a toy dataset root with its diagrams and box files.
pub fn write_toy(root: &Path) -> ToyDataset {
    let ds = toy();
    save_dataset(&ds.corpus, root).unwrap();
    for (id, img) in &ds.images {
        save_image(&image_path(root, id), img).unwrap();
    }
    for (id, b) in &ds.boxes {
        save_boxes(&boxes_path(root, id), b).unwrap();
    }
    ds
}

/// A small config file so end-to-end runs finish in seconds.
pub fn tiny_config(dir: &Path, task: QuestionKind, epochs: usize) -> PathBuf {
    let text = format!(
        r#"
[train]
task = "{}"
retriever = "ir"
peak_lr = 2e-3
warmup_fraction = 0.05
epochs = {epochs}
batch_size = 4
dropout = 0.1
max_len = 48
seed = 3

[encoder]
hidden = 16
layers = 1
heads = 2
ffn = 32

[retrieval]
n = 3

[vision]
max_rois = 32
feature_dim = 1000
"#,
        task.as_str()
    );
    let path = dir.join(format!("{}.toml", task.as_str()));
    std::fs::write(&path, text).unwrap();
    path
}
