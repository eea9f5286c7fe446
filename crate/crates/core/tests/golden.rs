mod common;

use std::path::{Path, PathBuf};

use handmotion_core::hms::render_hms_block;
use handmotion_core::phonology::{assemble_prompt, attributes_to_lines, bundled_exemplars, parse_record, AttributeLexicon};
use handmotion_core::Handedness;

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn read(name: &str) -> String {
    std::fs::read_to_string(golden(name)).unwrap()
}

/// Compares against a stored golden file; `UPDATE_GOLDEN=1` rewrites it.
fn check_generated(name: &str, actual: &str) {
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(golden(name), actual).unwrap();
    }
    assert!(read(name) == actual, "golden {name} differs");
}

#[test]
fn hms_block_right_handed() {
    assert_eq!(render_hms_block(&common::crafted_table(), Handedness::Right), read("hms_block_right.txt"));
}

#[test]
fn hms_block_left_handed() {
    assert_eq!(render_hms_block(&common::crafted_table(), Handedness::Left), read("hms_block_left.txt"));
}

const RECORD: &str = r#"{"gloss_id":"FUN","word_keywords":["fun"],"handshape_initial":{"dominant":"v"},"handshape_final":{"dominant":"bent"},"location_initial":"nose","facing_parts":{"dominant_facing_location":"fingertips"},"tags":["one_handed","handshape_change"]}"#;

#[test]
fn prompt_without_hms() {
    let r = parse_record(RECORD).unwrap();
    let lines = attributes_to_lines(&r, &AttributeLexicon::bundled(), 0).unwrap();
    let prompt = assemble_prompt(&lines, None, &bundled_exemplars());
    assert!(!prompt.contains("DISTANCE"));
    check_generated("prompt_plain.txt", &prompt);
}

#[test]
fn prompt_with_hms() {
    let r = parse_record(RECORD).unwrap();
    let lines = attributes_to_lines(&r, &AttributeLexicon::bundled(), 0).unwrap();
    let block = read("hms_block_right.txt");
    let prompt = assemble_prompt(&lines, Some(&block), &bundled_exemplars());
    assert!(prompt.contains("HAND ORIENTATIONS:"));
    check_generated("prompt_hms.txt", &prompt);
}
