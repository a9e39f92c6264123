//! Small synthetic datasets with a learnable signal in every question type.
//!
//! True/false premises either repeat or negate the statement. Text multiple
//! choice always asks for the animal among objects. Diagram multiple choice
//! asks for the shade of the single filled square, so only the image can
//! answer it.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, DatasetSplit, DiagramRef, Lesson, Question, QuestionKind, Sentence, SplitName, Subject, TRUE_FALSE_OPTIONS};
use crate::eval::DiagramInput;
use crate::solvers::Example;
use crate::tokenizer::Vocab;
use crate::vision::{acquire_rois, BBox, BoxAnnotation, DiagramFeaturizer, GrayImage, RoI, RoiSource};
use crate::Result;

const NOUNS: [&str; 16] = [
    "rocks", "water", "plants", "magnets", "clouds", "metals", "ice", "sand", "lava", "seeds", "roots", "wind", "fossils",
    "glaciers", "volcanoes", "minerals",
];
const ADJECTIVES: [&str; 8] = ["hard", "wet", "green", "strong", "white", "shiny", "cold", "dry"];
const ANIMALS: [&str; 8] = ["frog", "whale", "eagle", "snake", "bee", "shark", "deer", "owl"];
const OBJECTS: [&str; 10] = ["rock", "spoon", "cloud", "lamp", "chair", "coin", "river", "glass", "brick", "rope"];
/// Shade names and the gray level each is drawn with.
pub const SHADES: [(&str, u8); 4] = [("black", 20), ("dark", 90), ("gray", 150), ("pale", 210)];

/// Side length of the square toy diagrams, in pixels.
pub const IMAGE_SIZE: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToySizes {
    pub true_false: usize,
    pub text_mc: usize,
    pub diagram_mc: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub corpus: Corpus,
    pub images: BTreeMap<String, GrayImage>,
    pub boxes: BTreeMap<String, Vec<BoxAnnotation>>,
}

/// One lesson per question; lessons are assigned to splits in a fixed
/// 6/2/2 rotation.
pub fn dataset(sizes: ToySizes, seed: u64) -> Result<ToyDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lessons = Vec::new();
    let mut questions = Vec::new();
    let mut images = BTreeMap::new();
    let mut boxes = BTreeMap::new();
    let mut splits: BTreeMap<SplitName, DatasetSplit> = BTreeMap::new();
    let mut add = |lesson: Lesson, question: Question, lessons: &mut Vec<Lesson>, questions: &mut Vec<Question>| {
        let k = lessons.len() % 10;
        let name = match k {
            0..=5 => SplitName::Train,
            6 | 7 => SplitName::Validation,
            _ => SplitName::Test,
        };
        splits
            .entry(name)
            .or_insert_with(|| DatasetSplit { name, lesson_ids: Default::default() })
            .lesson_ids
            .insert(lesson.id.clone());
        lessons.push(lesson);
        questions.push(question);
    };
    let subject = |i: usize| Subject::ALL[i % 3];
    let sentences = |lid: &str, texts: Vec<String>| {
        texts
            .into_iter()
            .enumerate()
            .map(|(i, text)| Sentence { id: format!("{lid}.s{i}"), text, position: i })
            .collect::<Vec<_>>()
    };

    for i in 0..sizes.true_false {
        let lid = format!("tf-l{i:03}");
        let noun = NOUNS[i % NOUNS.len()];
        let adj = ADJECTIVES[(i / NOUNS.len() + i) % ADJECTIVES.len()];
        let truth = rng.gen_bool(0.5);
        let premise = if truth { format!("{noun} are {adj} .") } else { format!("{noun} are not {adj} .") };
        let filler = format!("scientists study {noun} in the field .");
        let lesson = Lesson { id: lid.clone(), subject: subject(i), sentences: sentences(&lid, vec![premise, filler]), diagrams: vec![] };
        let q = Question {
            id: format!("tf-q{i:03}"),
            kind: QuestionKind::TrueFalse,
            stem: format!("{noun} are {adj}"),
            options: TRUE_FALSE_OPTIONS.iter().map(|s| s.to_string()).collect(),
            answer_index: usize::from(!truth),
            lesson_id: lid,
            diagram: None,
        };
        add(lesson, q, &mut lessons, &mut questions);
    }

    for i in 0..sizes.text_mc {
        let lid = format!("mc-l{i:03}");
        let animal = *ANIMALS.choose(&mut rng).expect("non-empty");
        let mut options: Vec<&str> = OBJECTS.choose_multiple(&mut rng, 3).copied().collect();
        let answer = rng.gen_range(0..4);
        options.insert(answer, animal);
        let mut texts: Vec<String> = options
            .iter()
            .map(|&o| if o == animal { format!("the {o} is a living animal .") } else { format!("the {o} is a nonliving thing .") })
            .collect();
        texts.shuffle(&mut rng);
        let lesson = Lesson { id: lid.clone(), subject: subject(i), sentences: sentences(&lid, texts), diagrams: vec![] };
        let q = Question {
            id: format!("mc-q{i:03}"),
            kind: QuestionKind::TextMc,
            stem: "which one is an animal ?".into(),
            options: options.iter().map(|s| s.to_string()).collect(),
            answer_index: answer,
            lesson_id: lid,
            diagram: None,
        };
        add(lesson, q, &mut lessons, &mut questions);
    }

    for i in 0..sizes.diagram_mc {
        let lid = format!("dq-l{i:03}");
        let qd = format!("dq-d{i:03}");
        let bd = format!("dq-bg{i:03}");
        let shade = i % SHADES.len();
        let (img, b) = square_diagram(&mut rng, SHADES[shade].1);
        images.insert(qd.clone(), img);
        boxes.insert(qd.clone(), b);
        let other = SHADES[rng.gen_range(0..SHADES.len())].1;
        let (bimg, bb) = square_diagram(&mut rng, other);
        images.insert(bd.clone(), bimg);
        boxes.insert(bd.clone(), bb);
        let mut options: Vec<usize> = (0..SHADES.len()).collect();
        options.shuffle(&mut rng);
        let answer = options.iter().position(|&o| o == shade).expect("present");
        let texts = SHADES.iter().map(|(name, _)| format!("{name} is a shade of gray .")).collect();
        let lesson = Lesson {
            id: lid.clone(),
            subject: subject(i),
            sentences: sentences(&lid, texts),
            diagrams: vec![DiagramRef::new(bd)],
        };
        let q = Question {
            id: format!("dq-q{i:03}"),
            kind: QuestionKind::DiagramMc,
            stem: "which shade fills the square ?".into(),
            options: options.iter().map(|&o| SHADES[o].0.to_string()).collect(),
            answer_index: answer,
            lesson_id: lid,
            diagram: Some(DiagramRef::new(qd)),
        };
        add(lesson, q, &mut lessons, &mut questions);
    }

    let corpus = Corpus::new(lessons, questions, splits.into_values().collect())?;
    Ok(ToyDataset { corpus, images, boxes })
}

/// White canvas with one filled square, annotated together with an empty
/// distractor box.
fn square_diagram(rng: &mut ChaCha8Rng, level: u8) -> (GrayImage, Vec<BoxAnnotation>) {
    let n = IMAGE_SIZE;
    let side = rng.gen_range(12..20);
    let x0 = rng.gen_range(0..n - side);
    let y0 = rng.gen_range(0..n - side);
    let mut px = vec![255u8; n * n];
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            px[y * n + x] = level;
        }
    }
    let norm = |v: usize| v as f64 / n as f64;
    let shape = BBox::new(norm(x0), norm(y0), norm(x0 + side), norm(y0 + side));
    // a box in whichever corner lies furthest from the square
    let (cx, cy) = (x0 + side / 2, y0 + side / 2);
    let dx = if cx < n / 2 { 0.75 } else { 0.0 };
    let dy = if cy < n / 2 { 0.75 } else { 0.0 };
    let empty = BBox::new(dx, dy, dx + 0.25, dy + 0.25);
    let boxes = vec![
        BoxAnnotation { bbox: shape, label: "square".into(), confidence: 0.9 },
        BoxAnnotation { bbox: empty, label: "blank".into(), confidence: 0.4 },
    ];
    (GrayImage::new(n, n, px).expect("sized buffer"), boxes)
}

impl ToyDataset {
    pub fn vocab(&self) -> Vocab {
        Vocab::build(self.corpus.texts())
    }

    /// Questions of `kind`, optionally restricted to one split, in corpus order.
    pub fn questions(&self, kind: QuestionKind, split: Option<SplitName>) -> Vec<&Question> {
        let pool: Vec<&Question> = match split {
            Some(s) => self.corpus.questions_in(s),
            None => self.corpus.questions().iter().collect(),
        };
        pool.into_iter().filter(|q| q.kind == kind).collect()
    }

    /// Examples whose backgrounds are the lesson sentences that mention each
    /// option (true/false: the premise sentence).
    pub fn examples(&self, kind: QuestionKind, split: Option<SplitName>) -> Vec<Example> {
        self.questions(kind, split).into_iter().map(|q| self.example(q)).collect()
    }

    pub fn example(&self, q: &Question) -> Example {
        let lesson = self.corpus.lesson(&q.lesson_id).expect("validated corpus");
        let backgrounds = match q.kind {
            QuestionKind::TrueFalse => vec![lesson.sentences[0].text.clone()],
            _ => q
                .options
                .iter()
                .map(|o| {
                    let hit = lesson.sentences.iter().find(|s| crate::tokenizer::words(&s.text).iter().any(|w| w == o));
                    hit.map_or_else(String::new, |s| s.text.clone())
                })
                .collect(),
        };
        Example { question: q.clone(), backgrounds, rois: None, background_rois: None }
    }

    /// Diagram examples with annotated regions, the lesson diagram as
    /// background, and whole-image regions for both.
    pub fn diagram_inputs(&self, split: Option<SplitName>, featurizer: &dyn DiagramFeaturizer) -> Result<Vec<DiagramInput>> {
        let mut out = Vec::new();
        for q in self.questions(QuestionKind::DiagramMc, split) {
            let mut example = self.example(q);
            let qd = q.diagram.as_ref().expect("diagram question").id();
            let img = &self.images[qd];
            example.rois = Some(acquire_rois(qd, img, RoiSource::Annotations(&self.boxes[qd]), featurizer)?);
            let lesson = self.corpus.lesson(&q.lesson_id)?;
            let mut background_global = None;
            if let Some(bd) = lesson.diagrams.first() {
                let bimg = &self.images[bd.id()];
                example.background_rois = Some(acquire_rois(bd.id(), bimg, RoiSource::Annotations(&self.boxes[bd.id()]), featurizer)?);
                background_global = Some(whole(bimg, featurizer));
            }
            out.push(DiagramInput { example, global: whole(img, featurizer), background_global });
        }
        Ok(out)
    }
}

/// The whole-image region of a diagram.
pub fn whole(image: &GrayImage, featurizer: &dyn DiagramFeaturizer) -> RoI {
    RoI { bbox: BBox::WHOLE, confidence: 1.0, feature: featurizer.featurize(image, &BBox::WHOLE) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vision::GridHistogram;

    #[test]
    fn sizes_and_splits() {
        let ds = dataset(ToySizes { true_false: 16, text_mc: 32, diagram_mc: 16 }, 7).unwrap();
        assert_eq!(ds.corpus.questions().len(), 64);
        assert_eq!(ds.examples(QuestionKind::TextMc, None).len(), 32);
        let total: usize = [SplitName::Train, SplitName::Validation, SplitName::Test]
            .iter()
            .map(|&s| ds.corpus.questions_in(s).len())
            .sum();
        assert_eq!(total, 64);
        for ex in ds.examples(QuestionKind::TextMc, None) {
            assert!(ex.backgrounds.iter().all(|b| !b.is_empty()));
            let right = &ex.backgrounds[ex.label()];
            assert!(right.contains("living animal"));
        }
        let d = ds.diagram_inputs(None, &GridHistogram::default()).unwrap();
        assert_eq!(d.len(), 16);
        assert_eq!(d[0].example.rois.as_ref().unwrap().len(), 2);
        assert_eq!(d[0].global.feature.len(), 1000);
    }
}
