use proptest::prelude::*;

use diffurank_core::audit::{
    calibrate_thresholds, clip_flag, clip_stats, dataset_stats, flag_stats, read_captions_csv, text_flag, tokenize,
    write_captions_csv, AuditThresholds, CaptionRecord, CaptionSource, ClipStats, TextFlagger, ValidationEntry,
    CALIBRATION_EPSILON,
};

fn unit(angle: f64) -> Vec<f64> {
    vec![angle.cos(), angle.sin()]
}

#[test]
fn flag_requires_both_statistics_below_threshold() {
    let t = AuditThresholds { mean_threshold: 0.3, max_threshold: 0.5 };
    assert!(flag_stats(&ClipStats { mean: 0.2, max: 0.4 }, &t));
    assert!(!flag_stats(&ClipStats { mean: 0.2, max: 0.6 }, &t));
    assert!(!flag_stats(&ClipStats { mean: 0.4, max: 0.45 }, &t));
}

#[test]
fn clip_stats_are_mean_and_max_cosine() {
    let caption = unit(0.0);
    let views = vec![unit(0.0), unit(std::f64::consts::FRAC_PI_2), unit(std::f64::consts::PI)];
    let stats = clip_stats(&views, &caption).unwrap();
    assert!((stats.mean - 0.0).abs() < 1e-12);
    assert!((stats.max - 1.0).abs() < 1e-12);
    assert!(clip_stats(&[], &caption).is_err());
    assert!(clip_stats(&[vec![2.0, 0.0]], &caption).is_err());
}

#[test]
fn calibration_flags_every_bad_record() {
    let entry = |mean, max, is_bad| ValidationEntry {
        record: CaptionRecord::new("x", "c"),
        stats: ClipStats { mean, max },
        is_bad,
    };
    let validation = vec![entry(0.10, 0.30, true), entry(0.25, 0.20, true), entry(0.60, 0.90, false)];
    let t = calibrate_thresholds(&validation).unwrap();
    assert_eq!(t.mean_threshold, 0.25 + CALIBRATION_EPSILON);
    assert_eq!(t.max_threshold, 0.30 + CALIBRATION_EPSILON);
    for e in &validation {
        assert_eq!(flag_stats(&e.stats, &t), e.is_bad);
    }
    assert!(calibrate_thresholds(&[entry(0.5, 0.5, false)]).is_err());
}

#[test]
fn clip_flag_uses_embeddings() {
    let record = CaptionRecord::new("a", "a chair");
    let caption = unit(0.0);
    let far = vec![unit(2.0), unit(2.5)];
    let near = vec![unit(0.1), unit(2.5)];
    let t = AuditThresholds { mean_threshold: 0.5, max_threshold: 0.9 };
    assert!(clip_flag(&record, &far, &caption, &t).unwrap());
    assert!(!clip_flag(&record, &near, &caption, &t).unwrap());
}

#[test]
fn text_flag_matches_whole_words_only() {
    for caption in ["An IMAGE of a lamp", "render of a car", "3d Renderings: boat", "images."] {
        assert!(text_flag(&CaptionRecord::new("x", caption)), "{caption}");
    }
    for caption in ["imagery", "the renderer", "imagined", "rendered chair", "image_3"] {
        assert!(!text_flag(&CaptionRecord::new("x", caption)), "{caption}");
    }
    let custom = TextFlagger::new(&["Screenshot", " "]).unwrap();
    assert_eq!(custom.terms().len(), 6);
    assert!(custom.flag(&CaptionRecord::new("x", "a screenshot of a chair")));
}

#[test]
fn tokenize_drops_punctuation_and_lowercases() {
    assert_eq!(tokenize("A red, WOODEN chair!"), ["a", "red", "wooden", "chair"]);
    assert_eq!(tokenize("it's  3-legged"), ["its", "3legged"]);
    assert!(tokenize(" ... ").is_empty());
}

#[test]
fn ngrams_do_not_span_captions() {
    let records = [CaptionRecord::new("1", "red chair"), CaptionRecord::new("2", "chair red")];
    let stats = dataset_stats(&records);
    assert_eq!((stats.unigrams, stats.bigrams, stats.trigrams), (2, 2, 0));
    assert_eq!(stats.length_histogram.get(&2), Some(&2));
}

#[test]
fn csv_without_header_parses_sources() {
    let text = "uid1,\"a chair, red\",CAP3D\nuid1,a red chair,ours\nuid2,a lamp,HUMAN\n";
    let records = read_captions_csv(text.as_bytes(), false).unwrap();
    assert_eq!(records.len(), 3);
    assert_eq!(records[0].caption, "a chair, red");
    assert_eq!(records[1].source, Some(CaptionSource::Ours));
    assert!(read_captions_csv("uid1,a,b,c\n".as_bytes(), false).is_err());
    assert!(read_captions_csv("uid1,a,MACHINE\n".as_bytes(), false).is_err());
    assert!(read_captions_csv("uid1,a\nuid1,b\n".as_bytes(), false).is_err());
    assert!(read_captions_csv(",a\n".as_bytes(), false).is_err());
}

#[test]
fn csv_header_is_optional() {
    let records = vec![CaptionRecord::new("u", "a lamp")];
    let mut out = Vec::new();
    write_captions_csv(&mut out, &records, true).unwrap();
    assert_eq!(String::from_utf8(out.clone()).unwrap(), "identifier,caption\nu,a lamp\n");
    assert_eq!(read_captions_csv(out.as_slice(), true).unwrap(), records);
}

proptest! {
    #[test]
    fn csv_round_trips(captions in proptest::collection::vec("[a-zA-Z0-9 ,\"'.\n-]{0,40}", 1..20), with_source in any::<bool>()) {
        let records: Vec<CaptionRecord> = captions
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let r = CaptionRecord::new(format!("obj{i}"), c.clone());
                if with_source { r.with_source(CaptionSource::Ours) } else { r }
            })
            .collect();
        let mut out = Vec::new();
        write_captions_csv(&mut out, &records, false).unwrap();
        prop_assert_eq!(read_captions_csv(out.as_slice(), false).unwrap(), records);
    }

    #[test]
    fn raising_thresholds_never_unflags(mean in -1.0..1.0f64, max in -1.0..1.0f64,
                                        tm in -1.0..1.0f64, tx in -1.0..1.0f64,
                                        dm in 0.0..1.0f64, dx in 0.0..1.0f64) {
        let stats = ClipStats { mean, max };
        let low = AuditThresholds { mean_threshold: tm, max_threshold: tx };
        let high = AuditThresholds { mean_threshold: tm + dm, max_threshold: tx + dx };
        prop_assert!(!flag_stats(&stats, &low) || flag_stats(&stats, &high));
    }
}

fn bad(mean: f64, max: f64) -> ValidationEntry {
    ValidationEntry {
        record: CaptionRecord::new("v", "c"),
        stats: ClipStats { mean, max },
        is_bad: true,
    }
}

#[test]
fn calibration_is_the_componentwise_max_of_bad_records() {
    let one = calibrate_thresholds(&[bad(0.5, 0.7)]).unwrap();
    assert_eq!((one.mean_threshold, one.max_threshold), (0.5 + CALIBRATION_EPSILON, 0.7 + CALIBRATION_EPSILON));
    let two = calibrate_thresholds(&[bad(0.5, 0.7), bad(0.6, 0.65)]).unwrap();
    assert_eq!((two.mean_threshold, two.max_threshold), (0.6 + CALIBRATION_EPSILON, 0.7 + CALIBRATION_EPSILON));
}

#[test]
fn twenty_record_fixture_flags_the_expected_superset() {
    let stats = [
        (0.12, 0.30, true),
        (0.18, 0.41, true),
        (0.09, 0.22, true),
        (0.21, 0.38, true),
        (0.15, 0.44, true),
        (0.05, 0.19, true),
        (0.19, 0.35, true),
        (0.20, 0.40, false),
        (0.10, 0.50, false),
        (0.30, 0.30, false),
        (0.35, 0.62, false),
        (0.41, 0.70, false),
        (0.22, 0.43, false),
        (0.17, 0.25, false),
        (0.50, 0.80, false),
        (0.28, 0.55, false),
        (0.33, 0.47, false),
        (0.08, 0.46, false),
        (0.45, 0.66, false),
        (0.26, 0.39, false),
    ];
    let validation: Vec<ValidationEntry> = stats
        .iter()
        .map(|&(mean, max, is_bad)| ValidationEntry { is_bad, ..bad(mean, max) })
        .collect();
    let t = calibrate_thresholds(&validation).unwrap();
    let flagged: Vec<usize> = (0..20).filter(|&i| flag_stats(&validation[i].stats, &t)).collect();
    // bad records reach mean 0.21 and max 0.44; records 7 and 13 also fall under both
    assert_eq!(flagged, vec![0, 1, 2, 3, 4, 5, 6, 7, 13]);
}
