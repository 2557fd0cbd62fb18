//! Caption-level object hallucination ratios.
//!
//! Captions come annotated with the set of objects they mention and the set
//! actually present. An object mention is hallucinated when it is absent
//! from the ground truth. Names are compared case-insensitively after
//! trimming, and duplicates within one caption count once.

use crate::error::{Error, Result};
use serde::Deserialize;
use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionAnnotation {
    mentioned: BTreeSet<String>,
    ground_truth: BTreeSet<String>,
}

fn normalize<I, S>(items: I) -> BTreeSet<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    items
        .into_iter()
        .map(|s| s.as_ref().trim().to_lowercase())
        .filter(|s| !s.is_empty())
        .collect()
}

impl CaptionAnnotation {
    pub fn new<I, J, S, U>(mentioned: I, ground_truth: J) -> Self
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = U>,
        S: AsRef<str>,
        U: AsRef<str>,
    {
        Self {
            mentioned: normalize(mentioned),
            ground_truth: normalize(ground_truth),
        }
    }

    pub fn mentioned(&self) -> &BTreeSet<String> {
        &self.mentioned
    }

    pub fn ground_truth(&self) -> &BTreeSet<String> {
        &self.ground_truth
    }

    /// Mentions with no ground-truth support.
    pub fn hallucinated(&self) -> BTreeSet<&str> {
        self.mentioned
            .iter()
            .filter(|m| !self.ground_truth.contains(*m))
            .map(String::as_str)
            .collect()
    }

    pub fn has_hallucination(&self) -> bool {
        self.mentioned
            .iter()
            .any(|m| !self.ground_truth.contains(m))
    }
}

/// Hallucinated object mentions over all object mentions, counted per
/// caption occurrence across the batch. Undefined when nothing is mentioned.
pub fn chair_object_ratio(batch: &[CaptionAnnotation]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mentioned: usize = batch.iter().map(|c| c.mentioned.len()).sum();
    if mentioned == 0 {
        return Err(Error::NoMentions);
    }
    let hallucinated: usize = batch.iter().map(|c| c.hallucinated().len()).sum();
    Ok(hallucinated as f64 / mentioned as f64)
}

/// Fraction of captions containing at least one hallucinated mention.
pub fn chair_caption_ratio(batch: &[CaptionAnnotation]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let offending = batch.iter().filter(|c| c.has_hallucination()).count();
    Ok(offending as f64 / batch.len() as f64)
}

#[derive(Deserialize)]
struct RawAnnotation {
    mentioned: Vec<String>,
    ground_truth: Vec<String>,
}

/// Read annotations from JSON lines: one object per line with `mentioned`
/// and `ground_truth` string arrays. Blank lines are skipped; a malformed
/// line fails with its 1-based line number.
pub fn read_annotations<R: Read>(reader: R) -> Result<Vec<CaptionAnnotation>> {
    let mut out = Vec::new();
    for (num, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawAnnotation =
            serde_json::from_str(&line).map_err(|source| Error::FixtureLine {
                line: num + 1,
                source,
            })?;
        out.push(CaptionAnnotation::new(raw.mentioned, raw.ground_truth));
    }
    Ok(out)
}

pub fn read_annotations_file(path: &Path) -> Result<Vec<CaptionAnnotation>> {
    read_annotations(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn caption(mentioned: &[&str], truth: &[&str]) -> CaptionAnnotation {
        CaptionAnnotation::new(mentioned, truth)
    }

    #[test]
    fn single_caption_object_ratio() {
        let batch = [caption(&["dog", "cat", "car"], &["dog", "car"])];
        let ratio = chair_object_ratio(&batch).unwrap();
        assert!((ratio - 1.0 / 3.0).abs() < 1e-15);
        assert!((chair_caption_ratio(&batch).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn caption_ratio_counts_offending_captions() {
        let batch = [
            caption(&["dog", "cat"], &["dog"]),
            caption(&["dog"], &["dog", "tree"]),
        ];
        assert!((chair_caption_ratio(&batch).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn clean_batch_scores_zero_on_both_ratios() {
        let batch = [
            caption(&["dog"], &["dog", "cat"]),
            caption(&["cat", "tree"], &["cat", "tree"]),
        ];
        assert_eq!(chair_object_ratio(&batch).unwrap(), 0.0);
        assert_eq!(chair_caption_ratio(&batch).unwrap(), 0.0);
    }

    #[test]
    fn mentions_are_case_folded_trimmed_and_deduplicated() {
        let c = caption(&[" Dog", "dog ", "DOG", "cat"], &["doG"]);
        assert_eq!(c.mentioned().len(), 2);
        let batch = [c];
        // only "cat" is unsupported: 1 hallucinated of 2 mentions
        assert!((chair_object_ratio(&batch).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_and_mention_free_batches_are_errors() {
        assert!(matches!(chair_object_ratio(&[]), Err(Error::EmptyBatch)));
        assert!(matches!(chair_caption_ratio(&[]), Err(Error::EmptyBatch)));
        let no_mentions = [caption(&[], &["dog"])];
        assert!(matches!(
            chair_object_ratio(&no_mentions),
            Err(Error::NoMentions)
        ));
        // the caption ratio stays defined: zero captions offend
        assert_eq!(chair_caption_ratio(&no_mentions).unwrap(), 0.0);
    }

    #[test]
    fn jsonl_reader_parses_and_reports_bad_lines() {
        let good = "{\"mentioned\":[\"Dog\",\"cat\"],\"ground_truth\":[\"dog\"]}\n\n{\"mentioned\":[\"car\"],\"ground_truth\":[\"car\"]}\n";
        let batch = read_annotations(good.as_bytes()).unwrap();
        assert_eq!(batch.len(), 2);
        assert!((chair_object_ratio(&batch).unwrap() - 1.0 / 3.0).abs() < 1e-15);

        let bad = "{\"mentioned\":[\"dog\"],\"ground_truth\":[]}\nnot json\n";
        match read_annotations(bad.as_bytes()) {
            Err(Error::FixtureLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected a line error, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ratios_stay_in_the_unit_interval(
            captions in proptest::collection::vec(
                (
                    proptest::collection::vec("[a-z]{1,6}", 1..5),
                    proptest::collection::vec("[a-z]{1,6}", 0..5),
                ),
                1..8
            )
        ) {
            let batch: Vec<CaptionAnnotation> = captions
                .iter()
                .map(|(m, t)| CaptionAnnotation::new(m, t))
                .collect();
            let object = chair_object_ratio(&batch).unwrap();
            let caption = chair_caption_ratio(&batch).unwrap();
            prop_assert!((0.0..=1.0).contains(&object));
            prop_assert!((0.0..=1.0).contains(&caption));
        }

        #[test]
        fn appending_a_clean_caption_never_raises_either_ratio(
            captions in proptest::collection::vec(
                (
                    proptest::collection::vec("[a-z]{1,6}", 1..5),
                    proptest::collection::vec("[a-z]{1,6}", 0..5),
                ),
                1..8
            )
        ) {
            let mut batch: Vec<CaptionAnnotation> = captions
                .iter()
                .map(|(m, t)| CaptionAnnotation::new(m, t))
                .collect();
            let object_before = chair_object_ratio(&batch).unwrap();
            let caption_before = chair_caption_ratio(&batch).unwrap();
            batch.push(CaptionAnnotation::new(["anchor"], ["anchor"]));
            prop_assert!(chair_object_ratio(&batch).unwrap() <= object_before);
            prop_assert!(chair_caption_ratio(&batch).unwrap() <= caption_before);
        }
    }
}
