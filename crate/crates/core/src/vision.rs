//! Bottom-up regions of interest and their embeddings.
//!
//! Each region carries a visual feature `f` (length `d_f`) and its four
//! normalised corner coordinates `p`. The embedding is
//! `v = (LN(f·W_F + b_F) + LN(p·W_P + b_P)) / 2`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::encoder::LAYER_NORM_EPS;
use crate::params::{glorot, join, Parameters};
use crate::tensor::Matrix;
use crate::{Error, Result};

/// Visual feature width of the built-in featurizer.
pub const FEATURE_DIM: usize = 1000;
/// Positional vector width: `[x1, y1, x2, y2]`.
pub const POSITION_DIM: usize = 4;
/// Default region embedding width.
pub const EMBED_DIM: usize = 1024;
/// Most regions kept per diagram.
pub const MAX_ROIS: usize = 32;

/// A box in normalised image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x1, y1, x2, y2]: [f64; 4]) -> Self {
        Self { x1, y1, x2, y2 }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub const WHOLE: BBox = BBox { x1: 0.0, y1: 0.0, x2: 1.0, y2: 1.0 };

    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn is_valid(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        self.x1 < self.x2 && self.y1 < self.y2 && unit(self.x1) && unit(self.y1) && unit(self.x2) && unit(self.y2)
    }

    pub fn position(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// One entry of a `<id>.boxes.json` annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub bbox: BBox,
    #[serde(default)]
    pub label: String,
    pub confidence: f64,
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Config(format!("bad image buffer {width}x{height} with {} pixels", pixels.len())));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Pixel-space bounds `[x0, x1) × [y0, y1)` of a normalised box, at least one pixel wide.
    pub fn pixel_bounds(&self, b: &BBox) -> (usize, usize, usize, usize) {
        let clamp = |v: f64, n: usize| libm::floor(v.clamp(0.0, 1.0) * n as f64) as usize;
        let x0 = clamp(b.x1, self.width).min(self.width - 1);
        let y0 = clamp(b.y1, self.height).min(self.height - 1);
        let x1 = (libm::ceil(b.x2.clamp(0.0, 1.0) * self.width as f64) as usize).clamp(x0 + 1, self.width);
        let y1 = (libm::ceil(b.y2.clamp(0.0, 1.0) * self.height as f64) as usize).clamp(y0 + 1, self.height);
        (x0, y0, x1, y1)
    }
}

/// Maps an image region to a fixed-length visual feature.
pub trait DiagramFeaturizer {
    fn dim(&self) -> usize;
    fn featurize(&self, image: &GrayImage, region: &BBox) -> Vec<f64>;
}

/// Spatial grid of grayscale histograms.
///
/// The region is split into `grid × grid` cells; each cell contributes a
/// `bins`-bucket histogram of pixel intensities normalised by the cell's pixel
/// count. The default 10 × 10 × 10 layout yields 1000 features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridHistogram {
    pub grid: usize,
    pub bins: usize,
}

impl Default for GridHistogram {
    fn default() -> Self {
        Self { grid: 10, bins: 10 }
    }
}

impl DiagramFeaturizer for GridHistogram {
    fn dim(&self) -> usize {
        self.grid * self.grid * self.bins
    }

    fn featurize(&self, image: &GrayImage, region: &BBox) -> Vec<f64> {
        let (x0, y0, x1, y1) = image.pixel_bounds(region);
        let (w, h) = (x1 - x0, y1 - y0);
        let mut out = vec![0.0; self.dim()];
        let mut counts = vec![0usize; self.grid * self.grid];
        for y in y0..y1 {
            let gy = (y - y0) * self.grid / h;
            for x in x0..x1 {
                let gx = (x - x0) * self.grid / w;
                let cell = gy * self.grid + gx;
                let bin = (image.get(x, y) as usize * self.bins / 256).min(self.bins - 1);
                out[cell * self.bins + bin] += 1.0;
                counts[cell] += 1;
            }
        }
        for (cell, &n) in counts.iter().enumerate() {
            if n > 0 {
                for v in &mut out[cell * self.bins..(cell + 1) * self.bins] {
                    *v /= n as f64;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoI {
    pub bbox: BBox,
    pub confidence: f64,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoISet {
    pub diagram_id: String,
    pub rois: Vec<RoI>,
}

impl RoISet {
    pub fn len(&self) -> usize {
        self.rois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rois.is_empty()
    }

    /// `m × d_f` features and `m × 4` positions.
    pub fn matrices(&self) -> (Matrix, Matrix) {
        let f: Vec<Vec<f64>> = self.rois.iter().map(|r| r.feature.clone()).collect();
        let p: Vec<Vec<f64>> = self.rois.iter().map(|r| r.bbox.position().to_vec()).collect();
        (Matrix::from_rows(&f), Matrix::from_rows(&p))
    }
}

/// Where regions come from.
#[derive(Debug, Clone, Copy)]
pub enum RoiSource<'a> {
    Annotations(&'a [BoxAnnotation]),
    /// The whole image plus its four quadrants.
    TrivialDetector,
}

/// Canonical region order: confidence, then area (both descending), then
/// top-left raster order.
pub fn canonical_order(a: &BoxAnnotation, b: &BoxAnnotation) -> Ordering {
    let desc = |x: f64, y: f64| y.partial_cmp(&x).unwrap_or(Ordering::Equal);
    let asc = |x: f64, y: f64| x.partial_cmp(&y).unwrap_or(Ordering::Equal);
    desc(a.confidence, b.confidence)
        .then_with(|| desc(a.bbox.area(), b.bbox.area()))
        .then_with(|| asc(a.bbox.y1, b.bbox.y1))
        .then_with(|| asc(a.bbox.x1, b.bbox.x1))
        .then_with(|| asc(a.bbox.y2, b.bbox.y2))
        .then_with(|| asc(a.bbox.x2, b.bbox.x2))
        .then_with(|| a.label.cmp(&b.label))
}

/// Sorts canonically and keeps at most `cap` boxes.
pub fn select_boxes(boxes: &[BoxAnnotation], cap: usize) -> Vec<BoxAnnotation> {
    let mut sorted = boxes.to_vec();
    sorted.sort_by(canonical_order);
    sorted.truncate(cap);
    sorted
}

fn trivial_boxes() -> Vec<BoxAnnotation> {
    let mk = |x1, y1, x2, y2, c| BoxAnnotation { bbox: BBox::new(x1, y1, x2, y2), label: String::new(), confidence: c };
    vec![
        mk(0.0, 0.0, 1.0, 1.0, 1.0),
        mk(0.0, 0.0, 0.5, 0.5, 0.5),
        mk(0.5, 0.0, 1.0, 0.5, 0.5),
        mk(0.0, 0.5, 0.5, 1.0, 0.5),
        mk(0.5, 0.5, 1.0, 1.0, 0.5),
    ]
}

/// Builds the region set of one diagram. Never returns an empty set.
pub fn acquire_rois(
    diagram_id: &str,
    image: &GrayImage,
    source: RoiSource<'_>,
    featurizer: &dyn DiagramFeaturizer,
) -> Result<RoISet> {
    acquire_rois_capped(diagram_id, image, source, featurizer, MAX_ROIS)
}

/// [`acquire_rois`] keeping at most `cap` regions.
pub fn acquire_rois_capped(
    diagram_id: &str,
    image: &GrayImage,
    source: RoiSource<'_>,
    featurizer: &dyn DiagramFeaturizer,
    cap: usize,
) -> Result<RoISet> {
    if cap == 0 {
        return Err(Error::Config("region cap must be at least 1".into()));
    }
    let boxes = match source {
        RoiSource::Annotations(b) => b.to_vec(),
        RoiSource::TrivialDetector => trivial_boxes(),
    };
    if let Some(bad) = boxes.iter().find(|b| !b.bbox.is_valid()) {
        return Err(Error::Validation { id: diagram_id.into(), reason: format!("invalid box {:?}", bad.bbox) });
    }
    let mut kept = select_boxes(&boxes, cap);
    if kept.is_empty() {
        kept.push(BoxAnnotation { bbox: BBox::WHOLE, label: String::new(), confidence: 1.0 });
    }
    let rois = kept
        .into_iter()
        .map(|b| RoI { feature: featurizer.featurize(image, &b.bbox), bbox: b.bbox, confidence: b.confidence })
        .collect();
    Ok(RoISet { diagram_id: diagram_id.into(), rois })
}

/// Learned projections of region features and positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoIEmbedderParams {
    /// `d_f × d_v`
    pub feature_weight: Matrix,
    pub feature_bias: Matrix,
    pub feature_norm_gain: Matrix,
    pub feature_norm_bias: Matrix,
    /// `d_p × d_v`
    pub position_weight: Matrix,
    pub position_bias: Matrix,
    pub position_norm_gain: Matrix,
    pub position_norm_bias: Matrix,
}

pub struct RoIEmbedderVars {
    fw: Var,
    fb: Var,
    fg: Var,
    fbeta: Var,
    pw: Var,
    pb: Var,
    pg: Var,
    pbeta: Var,
}

impl RoIEmbedderParams {
    pub fn init(feature_dim: usize, position_dim: usize, embed_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            feature_weight: glorot(&mut rng, feature_dim, embed_dim),
            feature_bias: Matrix::zeros(1, embed_dim),
            feature_norm_gain: Matrix::filled(1, embed_dim, 1.0),
            feature_norm_bias: Matrix::zeros(1, embed_dim),
            position_weight: glorot(&mut rng, position_dim, embed_dim),
            position_bias: Matrix::zeros(1, embed_dim),
            position_norm_gain: Matrix::filled(1, embed_dim, 1.0),
            position_norm_bias: Matrix::zeros(1, embed_dim),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_weight.rows()
    }

    pub fn position_dim(&self) -> usize {
        self.position_weight.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.feature_weight.cols()
    }

    pub fn bind(&self, g: &mut Graph) -> RoIEmbedderVars {
        RoIEmbedderVars {
            fw: g.param(&self.feature_weight),
            fb: g.param(&self.feature_bias),
            fg: g.param(&self.feature_norm_gain),
            fbeta: g.param(&self.feature_norm_bias),
            pw: g.param(&self.position_weight),
            pb: g.param(&self.position_bias),
            pg: g.param(&self.position_norm_gain),
            pbeta: g.param(&self.position_norm_bias),
        }
    }
}

impl Parameters for RoIEmbedderParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix)) {
        f(&join(prefix, "feature.weight"), &self.feature_weight);
        f(&join(prefix, "feature.bias"), &self.feature_bias);
        f(&join(prefix, "feature.norm.gain"), &self.feature_norm_gain);
        f(&join(prefix, "feature.norm.bias"), &self.feature_norm_bias);
        f(&join(prefix, "position.weight"), &self.position_weight);
        f(&join(prefix, "position.bias"), &self.position_bias);
        f(&join(prefix, "position.norm.gain"), &self.position_norm_gain);
        f(&join(prefix, "position.norm.bias"), &self.position_norm_bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f(&join(prefix, "feature.weight"), &mut self.feature_weight);
        f(&join(prefix, "feature.bias"), &mut self.feature_bias);
        f(&join(prefix, "feature.norm.gain"), &mut self.feature_norm_gain);
        f(&join(prefix, "feature.norm.bias"), &mut self.feature_norm_bias);
        f(&join(prefix, "position.weight"), &mut self.position_weight);
        f(&join(prefix, "position.bias"), &mut self.position_bias);
        f(&join(prefix, "position.norm.gain"), &mut self.position_norm_gain);
        f(&join(prefix, "position.norm.bias"), &mut self.position_norm_bias);
    }
}

/// Embeds `m` regions on the tape: `features` is `m × d_f`, `positions` `m × d_p`.
pub fn embed_rois_graph(g: &mut Graph, vars: &RoIEmbedderVars, features: Var, positions: Var) -> Var {
    let f = g.affine(features, vars.fw, vars.fb);
    let f = g.layer_norm(f, vars.fg, vars.fbeta, LAYER_NORM_EPS);
    let p = g.affine(positions, vars.pw, vars.pb);
    let p = g.layer_norm(p, vars.pg, vars.pbeta, LAYER_NORM_EPS);
    let s = g.add(f, p);
    g.scale(s, 0.5)
}

fn expect_len(context: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Shape { context: context.into(), expected: (1, want), got: (1, got) })
    }
}

/// Embeds a single region.
pub fn embed_roi(feature: &[f64], position: &[f64], params: &RoIEmbedderParams) -> Result<Vec<f64>> {
    expect_len("region feature", feature.len(), params.feature_dim())?;
    expect_len("region position", position.len(), params.position_dim())?;
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let f = g.constant(Matrix::row_vector(feature.to_vec()));
    let p = g.constant(Matrix::row_vector(position.to_vec()));
    let v = embed_rois_graph(&mut g, &vars, f, p);
    Ok(g.value(v).data().to_vec())
}

/// Embeds every region of a set, `m × d_v`.
pub fn embed_set(set: &RoISet, params: &RoIEmbedderParams) -> Result<Matrix> {
    let (f, p) = set.matrices();
    if f.cols() != params.feature_dim() {
        return Err(Error::Shape {
            context: format!("features of {}", set.diagram_id),
            expected: (set.len(), params.feature_dim()),
            got: f.shape(),
        });
    }
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let f = g.constant(f);
    let p = g.constant(p);
    let v = embed_rois_graph(&mut g, &vars, f, p);
    Ok(g.value(v).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> GrayImage {
        let (w, h) = (20, 20);
        GrayImage::new(w, h, (0..w * h).map(|i| (i * 7 % 256) as u8).collect()).unwrap()
    }

    fn boxes(n: usize) -> Vec<BoxAnnotation> {
        (0..n)
            .map(|i| BoxAnnotation {
                bbox: BBox::new(0.01 * (i % 10) as f64, 0.02 * (i / 10) as f64, 0.5, 0.9),
                label: format!("b{i}"),
                confidence: (i as f64 + 1.0) / (n as f64 + 1.0),
            })
            .collect()
    }

    #[test]
    fn histogram_has_declared_width_and_normalised_cells() {
        let f = GridHistogram::default().featurize(&image(), &BBox::WHOLE);
        assert_eq!(f.len(), FEATURE_DIM);
        for cell in f.chunks(10) {
            assert!((cell.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_crop_still_featurizes() {
        let f = GridHistogram::default().featurize(&image(), &BBox::new(0.5, 0.5, 0.51, 0.51));
        assert_eq!(f.len(), FEATURE_DIM);
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_boxes_three_rois() {
        let set = acquire_rois("d", &image(), RoiSource::Annotations(&boxes(3)), &GridHistogram::default()).unwrap();
        assert_eq!(set.len(), 3);
    }

    #[test]
    fn cap_keeps_most_confident() {
        let b = boxes(40);
        let set = acquire_rois("d", &image(), RoiSource::Annotations(&b), &GridHistogram::default()).unwrap();
        assert_eq!(set.len(), MAX_ROIS);
        let min_kept = set.rois.iter().map(|r| r.confidence).fold(1.0, f64::min);
        assert!((min_kept - 9.0 / 41.0).abs() < 1e-12);
    }

    #[test]
    fn empty_annotations_fall_back_to_whole_image() {
        let set = acquire_rois("d", &image(), RoiSource::Annotations(&[]), &GridHistogram::default()).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.rois[0].bbox, BBox::WHOLE);
        assert_eq!(set.rois[0].confidence, 1.0);
    }

    #[test]
    fn ties_broken_by_area_then_raster() {
        let mk = |b: BBox| BoxAnnotation { bbox: b, label: String::new(), confidence: 0.5 };
        let small = mk(BBox::new(0.0, 0.0, 0.1, 0.1));
        let big = mk(BBox::new(0.5, 0.5, 1.0, 1.0));
        let left = mk(BBox::new(0.0, 0.2, 0.1, 0.3));
        let sel = select_boxes(&[left.clone(), small.clone(), big.clone()], 2);
        assert_eq!(sel, vec![big, small]);
    }

    #[test]
    fn rejects_malformed_boxes() {
        let b = [BoxAnnotation { bbox: BBox::new(0.5, 0.0, 0.2, 1.0), label: String::new(), confidence: 1.0 }];
        assert!(acquire_rois("d", &image(), RoiSource::Annotations(&b), &GridHistogram::default()).is_err());
    }

    #[test]
    fn embed_roi_shape_errors() {
        let params = RoIEmbedderParams::init(8, 4, 6, 1);
        assert!(embed_roi(&[0.0; 7], &[0.0; 4], &params).is_err());
        assert_eq!(embed_roi(&[0.1; 8], &[0.2; 4], &params).unwrap().len(), 6);
    }

    #[test]
    fn equal_branches_average_to_themselves() {
        let mut params = RoIEmbedderParams::init(4, 4, 6, 2);
        params.position_weight = params.feature_weight.clone();
        let f = [0.3, -0.1, 0.7, 0.2];
        let v = embed_roi(&f, &f, &params).unwrap();
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let x = g.constant(Matrix::row_vector(f.to_vec()));
        let a = g.affine(x, vars.fw, vars.fb);
        let fhat = g.layer_norm(a, vars.fg, vars.fbeta, LAYER_NORM_EPS);
        assert_eq!(v, g.value(fhat).data());
    }

    #[test]
    fn layer_norm_branch_statistics() {
        let params = RoIEmbedderParams::init(8, 4, 6, 3);
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let x = g.constant(Matrix::row_vector((0..8).map(|i| i as f64 * 0.37 - 1.0).collect()));
        let a = g.affine(x, vars.fw, vars.fb);
        let y = g.layer_norm(a, vars.fg, vars.fbeta, LAYER_NORM_EPS);
        let d = g.value(y).data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d.len() as f64;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-3);
    }
}
