use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attributes::{Attributes, Color, Shape, SizeClass, VisibilityMask};
use crate::util::{keyed_rng, stable_key};

const CAPTION_TAG: u64 = 0x4341_5054; // "CAPT"

/// Simulated image captioner: describes exactly the attributes a view exposes,
/// replacing each mention with a wrong value of the same class with
/// probability `error_rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyCaptioner {
    pub error_rate: f64,
    pub seed: u64,
}

/// A caption together with how many attribute mentions it carries and how
/// many of those were corrupted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionSample {
    pub text: String,
    pub mentions: usize,
    pub corrupted: usize,
}

/// Noun phrase for the given (possibly hidden) attributes, e.g. "large red cube",
/// "red object", "object".
pub fn describe(shape: Option<Shape>, color: Option<Color>, size: Option<SizeClass>) -> String {
    let mut words: Vec<&str> = Vec::with_capacity(3);
    if let Some(s) = size {
        words.push(s.token());
    }
    if let Some(c) = color {
        words.push(c.token());
    }
    words.push(shape.map_or("object", Shape::token));
    words.join(" ")
}

pub fn describe_masked(attributes: &Attributes, mask: VisibilityMask) -> String {
    describe(
        mask.shape.then_some(attributes.shape),
        mask.color.then_some(attributes.color),
        mask.size.then_some(attributes.size_class()),
    )
}

fn article(phrase: &str) -> &'static str {
    match phrase.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// Caption surface forms, cycled by caption index.
pub fn template(index: usize, phrase: &str) -> String {
    match index % 5 {
        0 => format!("{} {phrase}", article(phrase)),
        1 => format!("a 3d model of {} {phrase}", article(phrase)),
        2 => format!("the {phrase}"),
        3 => phrase.to_string(),
        _ => format!("a view of {} {phrase}", article(phrase)),
    }
}

fn corrupt<T: Copy + PartialEq, R: Rng>(value: T, all: &[T], rate: f64, rng: &mut R) -> (T, bool) {
    if rate > 0.0 && rng.random_bool(rate.min(1.0)) {
        let others: Vec<T> = all.iter().copied().filter(|v| *v != value).collect();
        (*others.choose(rng).expect("every class has alternatives"), true)
    } else {
        (value, false)
    }
}

impl Default for ToyCaptioner {
    fn default() -> Self {
        ToyCaptioner {
            error_rate: 0.0,
            seed: 0,
        }
    }
}

impl ToyCaptioner {
    pub fn new(error_rate: f64, seed: u64) -> Self {
        ToyCaptioner { error_rate, seed }
    }

    /// Caption `caption_index` of `view_id` of `object_id`. Deterministic in
    /// `(seed, object_id, view_id, caption_index)`.
    pub fn caption_detailed(
        &self,
        object_id: &str,
        attributes: &Attributes,
        view_id: u32,
        mask: VisibilityMask,
        caption_index: u32,
    ) -> CaptionSample {
        let mut rng = keyed_rng([
            self.seed,
            CAPTION_TAG,
            stable_key(object_id),
            (view_id as u64) << 32 | caption_index as u64,
        ]);
        let mut mentions = 0;
        let mut corrupted = 0;
        let mut tally = |hit: bool| {
            mentions += 1;
            corrupted += hit as usize;
        };
        let shape = mask.shape.then(|| {
            let (v, hit) = corrupt(attributes.shape, &Shape::ALL, self.error_rate, &mut rng);
            tally(hit);
            v
        });
        let color = mask.color.then(|| {
            let (v, hit) = corrupt(attributes.color, &Color::ALL, self.error_rate, &mut rng);
            tally(hit);
            v
        });
        let size = mask.size.then(|| {
            let (v, hit) = corrupt(attributes.size_class(), &SizeClass::ALL, self.error_rate, &mut rng);
            tally(hit);
            v
        });
        CaptionSample {
            text: template(caption_index as usize, &describe(shape, color, size)),
            mentions,
            corrupted,
        }
    }

    pub fn captions(
        &self,
        object_id: &str,
        attributes: &Attributes,
        view_id: u32,
        mask: VisibilityMask,
        n: usize,
    ) -> Vec<String> {
        (0..n as u32)
            .map(|j| self.caption_detailed(object_id, attributes, view_id, mask, j).text)
            .collect()
    }
}
