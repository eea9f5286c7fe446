use std::path::{Path, PathBuf};

use handmotion_cli::eval::EvalReport;
use handmotion_cli::io::{read_json, read_jsonl, tree_hash};
use handmotion_cli::stages::{build_requests, hms_blocks, HmsRecord};
use handmotion_cli::pipeline::{Layout, Manifest};
use handmotion_cli::{run_pipeline, PipelineConfig, Stage};
use handmotion_core::metrics::mean_std;
use handmotion_core::phonology::{read_records, FixtureClient, LlmClient};

fn bundled() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/micro")
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let p = e.unwrap().path();
        let target = to.join(p.file_name().unwrap());
        if p.is_dir() {
            copy_dir(&p, &target);
        } else {
            std::fs::copy(&p, &target).unwrap();
        }
    }
}

fn corpus() -> (tempfile::TempDir, PipelineConfig) {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&bundled(), dir.path());
    let cfg = PipelineConfig::load(&dir.path().join("pipeline.json")).unwrap();
    (dir, cfg)
}

#[test]
fn bundled_corpus_matches_its_generator() {
    let dir = tempfile::tempdir().unwrap();
    handmotion_cli::fixtures::write_micro_corpus(dir.path()).unwrap();
    assert_eq!(tree_hash(dir.path()).unwrap(), tree_hash(&bundled()).unwrap());
}

#[test]
fn micro_corpus_end_to_end_and_idempotent() {
    let (_dir, cfg) = corpus();
    let first = run_pipeline(&cfg).unwrap();
    assert_eq!(first.executed, Stage::ALL.to_vec());
    let l = Layout { out: cfg.out() };
    for s in Stage::ALL {
        let m: Manifest = read_json(&l.manifest(s)).unwrap();
        assert_eq!(m.stage, s);
        assert!(!m.outputs.is_empty());
    }
    let report: EvalReport = read_json(&l.report()).unwrap();
    assert_eq!(report.repeats, 4);
    assert_eq!(report.r1_mean, 100.0);
    assert!(report.fid.abs() < 1e-6, "{}", report.fid);
    for (raw, mean, std) in [
        (&report.raw.r1, report.r1_mean, report.r1_std),
        (&report.raw.r3, report.r3_mean, report.r3_std),
        (&report.raw.fid, report.fid, report.fid_std),
        (&report.raw.diversity, report.diversity, report.diversity_std),
    ] {
        let (m, s) = mean_std(raw);
        assert!((m - mean).abs() <= 1e-12 && (s - std).abs() <= 1e-12);
    }

    let again = run_pipeline(&cfg).unwrap();
    assert!(again.executed.is_empty());
    assert_eq!(again.skipped, Stage::ALL.to_vec());
}

#[test]
fn changed_input_byte_reruns_downstream_only() {
    let (dir, cfg) = corpus();
    run_pipeline(&cfg).unwrap();
    let labels = dir.path().join("labels.jsonl");
    let mut text = std::fs::read_to_string(&labels).unwrap();
    // Flip one digit of a confidence value.
    let pos = text.find("\"confidence\":0.").unwrap() + "\"confidence\":0.".len();
    let digit = text.as_bytes()[pos];
    let flipped = if digit == b'9' { '8' } else { (digit + 1) as char };
    text.replace_range(pos..pos + 1, &flipped.to_string());
    std::fs::write(&labels, text).unwrap();
    let out = run_pipeline(&cfg).unwrap();
    assert_eq!(out.executed.first(), Some(&Stage::Segments));
    for s in [Stage::Stitch, Stage::Hms, Stage::Describe] {
        assert!(out.skipped.contains(&s));
    }

    // Tampering with an output also forces a rerun of its stage.
    let l = Layout { out: cfg.out() };
    std::fs::write(l.hms(), "{}\n").unwrap();
    let out = run_pipeline(&cfg).unwrap();
    assert!(out.executed.contains(&Stage::Hms));
}

#[test]
fn stage_subset_requires_upstream_outputs() {
    let (_dir, mut cfg) = corpus();
    cfg.stages = vec![Stage::Hms];
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert_eq!(err.to_json()["stage"], "hms");
}

#[test]
fn seed_reaches_stochastic_stages() {
    let (_a, cfg_a) = corpus();
    let (b, mut cfg_b) = corpus();
    cfg_b.seed = 1;
    run_pipeline(&cfg_a).unwrap();
    let la = Layout { out: cfg_a.out() };
    let lb = Layout { out: cfg_b.out() };

    // The LLM requests carry the seed, so record the same answers under the
    // new request keys first.
    let records = read_records(&b.path().join("phonology.jsonl")).unwrap();
    let hms: Vec<HmsRecord> = read_jsonl(&la.hms()).unwrap();
    let blocks = hms_blocks(&hms);
    let old = build_requests(&records, Some(&blocks), &cfg_b.describe, 0).unwrap();
    let new = build_requests(&records, Some(&blocks), &cfg_b.describe, 1).unwrap();
    let client = FixtureClient::new(b.path().join("llm"));
    for (o, n) in old.iter().zip(&new) {
        assert_ne!(o.fixture_key(), n.fixture_key());
        client.record(n, &client.complete(o).unwrap()).unwrap();
    }
    run_pipeline(&cfg_b).unwrap();
    assert_eq!(tree_hash(&la.stitched()).unwrap(), tree_hash(&lb.stitched()).unwrap());
    assert_ne!(tree_hash(&la.thmr()).unwrap(), tree_hash(&lb.thmr()).unwrap());
    assert_ne!(tree_hash(&la.diffusion()).unwrap(), tree_hash(&lb.diffusion()).unwrap());
}
