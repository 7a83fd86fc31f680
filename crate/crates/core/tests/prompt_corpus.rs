use std::collections::HashSet;
use std::path::PathBuf;

use formatbias::dataset::{circular_expand, QuestionRecord};
use formatbias::prompt::{enumerate_formats, parse_prompt, render_prompt, PromptFormat};
use proptest::prelude::*;

const QUESTION: &str = "What is shown in the image?";
const OPTIONS: [&str; 5] = ["a red bus", "a bicycle", "a sailing boat", "a horse", "a train"];

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("test-data/golden")
}

fn golden_name(f: PromptFormat, k: usize) -> String {
    format!("{}__{}__{}__{k}.txt", f.separator.name(), f.delimiter.name(), f.id_set.name())
}

#[test]
fn golden_corpus_is_byte_exact() {
    let mut checked = 0;
    for f in enumerate_formats() {
        for k in 2..=5 {
            let path = golden_dir().join(golden_name(f, k));
            let want = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            let got = render_prompt(QUESTION, &OPTIONS[..k], f).unwrap();
            assert_eq!(got.as_bytes(), &want[..], "{}", path.display());
            checked += 1;
        }
    }
    assert_eq!(checked, 192);
    assert_eq!(std::fs::read_dir(golden_dir()).unwrap().count(), 192);
}

#[test]
fn formats_are_distinct_and_indexed() {
    let all = enumerate_formats();
    assert_eq!(all.len(), 48);
    assert_eq!(all.iter().collect::<HashSet<_>>().len(), 48);
    for (i, f) in all.iter().enumerate() {
        assert_eq!(f.index(), i);
        assert_eq!(f.key().parse::<PromptFormat>().unwrap(), *f);
    }
}

#[test]
fn rejects_out_of_range_counts() {
    let f = enumerate_formats()[0];
    assert!(render_prompt(QUESTION, &OPTIONS[..1], f).is_err());
    assert!(render_prompt(QUESTION, &["a"; 6], f).is_err());
    assert!(render_prompt("  ", &OPTIONS[..2], f).is_err());
}

fn text() -> impl Strategy<Value = String> {
    "[a-z][a-z ]{0,12}[a-z]"
}

fn record() -> impl Strategy<Value = QuestionRecord> {
    (2usize..=5).prop_flat_map(|k| {
        (
            text(),
            proptest::collection::hash_set(text(), k),
            0..k,
        )
            .prop_map(|(q, opts, gold)| QuestionRecord {
                id: "r".into(),
                image_ref: None,
                question: format!("{q}?"),
                options: opts.into_iter().collect(),
                gold_index: gold,
            })
    })
}

proptest! {
    #[test]
    fn render_is_deterministic_and_parses_back(r in record(), fi in 0usize..48) {
        let f = enumerate_formats()[fi];
        let a = render_prompt(&r.question, &r.options, f).unwrap();
        prop_assert_eq!(&a, &render_prompt(&r.question, &r.options, f).unwrap());
        let p = parse_prompt(&a).unwrap();
        prop_assert_eq!(p.question, r.question.clone());
        prop_assert_eq!(p.options, r.options.clone());
        // A format that renders the same text is equally valid; it must re-render identically.
        prop_assert_eq!(render_prompt(&r.question, &r.options, p.format).unwrap(), a);
    }

    #[test]
    fn rotations_visit_every_position(r in record()) {
        let k = r.options.len();
        let inst = circular_expand(&r);
        prop_assert_eq!(inst.len(), k);
        let mut seen = vec![false; k];
        for i in &inst {
            prop_assert_eq!(&i.options[i.gold_position], r.gold_text());
            seen[i.gold_position] = true;
            let mut a = i.options.clone();
            let mut b = r.options.clone();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
        prop_assert!(seen.iter().all(|&s| s));
    }
}
