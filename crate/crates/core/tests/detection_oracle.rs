mod support;

use chrono::{TimeZone, Utc};
use feedstack_core::{detect_mentions_lexicon, Lexicon, Message, Principle, PrincipleCatalog, Role};
use proptest::prelude::*;

use support::oracle::{catalog_terms, naive_detect};

fn message(text: &str) -> Message {
    Message {
        id: "m0".into(),
        index: 0,
        role: Role::User,
        text: text.into(),
        created_at: Utc.timestamp_opt(0, 0).unwrap(),
    }
}

/// Random catalogs over a tiny alphabet so terms collide with text often.
fn small_catalog() -> impl Strategy<Value = PrincipleCatalog> {
    prop::collection::vec(
        prop::collection::vec("[abAé]{1,3}( [abé]{1,2})?", 1..4),
        1..4,
    )
    .prop_filter_map("terms must be unique across principles", |groups| {
        let principles = groups
            .iter()
            .enumerate()
            .map(|(i, terms)| {
                let terms: Vec<&str> = terms.iter().map(String::as_str).collect();
                Principle::new(&format!("p{i}"), &format!("P{i}"), "d", &terms)
            })
            .collect();
        PrincipleCatalog::new("t", principles).ok()
    })
}

fn text() -> impl Strategy<Value = String> {
    "[abAéÉ \\-.\nİx]{0,40}"
}

fn detect(text: &str, catalog: &PrincipleCatalog) -> Vec<(usize, usize, String)> {
    detect_mentions_lexicon(&message(text), &Lexicon::from_catalog(catalog))
        .into_iter()
        .map(|s| (s.start, s.end, s.principle_id))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn matches_naive_oracle(catalog in small_catalog(), text in text()) {
        prop_assert_eq!(detect(&text, &catalog), naive_detect(&text, &catalog_terms(&catalog)));
    }

    #[test]
    fn spans_are_sorted_in_bounds_and_disjoint(catalog in small_catalog(), text in text()) {
        let spans = detect_mentions_lexicon(&message(&text), &Lexicon::from_catalog(&catalog));
        let len = text.chars().count();
        for span in &spans {
            prop_assert!(span.start < span.end && span.end <= len);
            let covered: String = text.chars().skip(span.start).take(span.len()).collect();
            prop_assert_eq!(covered.to_lowercase(), span.matched_term.to_lowercase());
        }
        for pair in spans.windows(2) {
            prop_assert!(pair[0].end <= pair[1].start);
        }
    }

    #[test]
    fn case_changes_that_keep_length_do_not_matter(catalog in small_catalog(), text in text()) {
        let flipped: String = text
            .chars()
            .map(|c| {
                let upper: Vec<char> = c.to_uppercase().collect();
                if upper.len() == 1 { upper[0] } else { c }
            })
            .collect();
        prop_assume!(flipped.chars().count() == text.chars().count());
        prop_assert_eq!(detect(&text, &catalog), detect(&flipped, &catalog));
    }

    #[test]
    fn detection_is_idempotent(catalog in small_catalog(), text in text()) {
        let lexicon = Lexicon::from_catalog(&catalog);
        let m = message(&text);
        prop_assert_eq!(detect_mentions_lexicon(&m, &lexicon), detect_mentions_lexicon(&m, &lexicon));
    }
}

#[test]
fn default_lexicon_agrees_with_oracle_on_fixture_sentences() {
    let catalog = PrincipleCatalog::default_catalog();
    let terms = catalog_terms(&catalog);
    for text in [
        "The contrast between header and background is low",
        "Balance and alignment both need work",
        "high-contrast",
        "Add alt text; the screen reader skips it. Negative space, visual weight!",
        "",
    ] {
        assert_eq!(detect(text, &catalog), naive_detect(text, &terms), "{text}");
    }
    assert_eq!(
        naive_detect("The contrast between header and background is low", &terms),
        [(4, 12, "contrast".to_string())]
    );
    assert_eq!(
        naive_detect("Balance and alignment both need work", &terms),
        [(0, 7, "balance".to_string()), (12, 21, "alignment-and-spacing".to_string())]
    );
}
