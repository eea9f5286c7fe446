//! Seeded synthetic micro-corpus: 8 continuous-signing episodes over two
//! words, 4 dictionary variants (2 per word) with their motions, phonology
//! records, recorded LLM answers and a small pipeline config.

use std::collections::BTreeMap;
use std::path::Path;

use handmotion_core::assigner::{DictionaryIndex, FrameLabel};
use handmotion_core::layout::{hand_block, Side, ARM_BLOCKS, NUM_HAND_JOINTS};
use handmotion_core::motion::{write_motion, MOTION_EXTENSION};
use handmotion_core::phonology::{parse_record, FixtureClient, PhonologyRecord};
use handmotion_core::rotation::{axis_angle, matrix_to_rot6d};
use handmotion_core::stitcher::{write_hands, HandEstimate, HANDS_EXTENSION};
use handmotion_core::{Handedness, MotionSequence, Skeleton};
use handmotion_models::diffusion::DiffusionConfig;
use handmotion_models::ThmrConfig;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::Result;
use crate::io::{create_dir, write_json, write_jsonl};
use crate::pipeline::{Corpus, PipelineConfig, Stage};
use crate::stages::{build_requests, hms_blocks, hms_records, stitch_dir, LabelStream};

pub const SEED: u64 = 2024;
const FPS: f64 = 25.0;
const DICT_FRAMES: usize = 16;
const LEAD: usize = 6;
const SIGN_FRAMES: usize = 12;
const TAIL: usize = 6;

/// (gloss, word, word label)
pub const GLOSSES: [(&str, &str, u32); 4] = [("HAPPY", "happy", 1), ("HAPPYb", "happy", 1), ("FUN", "fun", 2), ("FUNb", "fun", 2)];

const PHONOLOGY: [&str; 4] = [
    r#"{"gloss_id":"HAPPY","word_keywords":["happy"],"handshape_initial":{"dominant":"flat"},"location_initial":"chest","facing_parts":{"dominant_facing_location":"palm"},"tags":["one_handed"]}"#,
    r#"{"gloss_id":"HAPPYb","word_keywords":["happy"],"handshape_initial":{"dominant":"spread","nondominant":"spread"},"location_initial":"neutral","tags":["two_handed","symmetric"]}"#,
    r#"{"gloss_id":"FUN","word_keywords":["fun"],"handshape_initial":{"dominant":"v"},"handshape_final":{"dominant":"bent"},"location_initial":"nose","facing_parts":{"dominant_facing_location":"fingertips"},"tags":["one_handed","handshape_change"]}"#,
    r#"{"gloss_id":"FUNb","word_keywords":["fun"],"handshape_initial":{"dominant":"bent","nondominant":"flat"},"location_initial":"chin","location_final":"chest","tags":["two_handed","alternating"]}"#,
];

const ANSWERS: [[&str; 3]; 4] = [
    [
        "The dominant hand is held flat with the palm facing the chest and brushes upward twice. The non-dominant hand remains still.",
        "A flat dominant hand circles on the chest, palm in, in a small upward motion.",
        "With the palm toward the torso, the flat dominant hand moves up the chest.",
    ],
    [
        "Both hands are open with fingers spread and move up and down together in front of the body.",
        "Two spread hands bounce symmetrically in neutral space, palms facing each other.",
        "The hands, fingers wide apart, rise and fall in unison in front of the chest.",
    ],
    [
        "The dominant hand forms a V near the nose, then the fingers bend while moving down and forward.",
        "Starting at the nose with two extended fingers, the dominant hand bends its fingers as it drops.",
        "A V handshape brushes off the nose and ends with bent fingers. The other hand stays still.",
    ],
    [
        "Both hands alternate, the dominant hand with bent fingers moving from the chin to the chest.",
        "The bent dominant hand and the flat non-dominant hand move in alternation from chin level down to the chest.",
        "In an alternating motion, the hands travel from near the chin to the torso.",
    ],
];

/// Per-block rotation axes and angles that define one gloss's movement.
struct Signature(Vec<(usize, Vector3<f64>, f64)>);

fn random_axis(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

fn signature(rng: &mut ChaCha8Rng) -> Signature {
    let mut blocks: Vec<usize> = ARM_BLOCKS.to_vec();
    for side in [Side::Left, Side::Right] {
        blocks.extend((0..NUM_HAND_JOINTS).map(|j| hand_block(side, j)));
    }
    Signature(blocks.into_iter().map(|b| (b, random_axis(rng), rng.gen_range(0.2..1.0))).collect())
}

/// Rest frames with the gloss's movement in frames `start..start+len`:
/// angles swing around their mean once over the sign.
fn perform(sig: &Signature, m: &mut MotionSequence, start: usize, len: usize, jitter: f64, rng: &mut ChaCha8Rng) {
    let sig: Vec<(usize, Vector3<f64>, f64)> = sig
        .0
        .iter()
        .map(|(b, axis, angle)| (*b, axis + random_axis(rng) * jitter, angle * (1.0 + jitter * rng.gen_range(-1.0..1.0))))
        .collect();
    for k in 0..len {
        let phase = 0.7 + 0.3 * (2.0 * std::f64::consts::PI * k as f64 / len as f64).sin();
        for (b, axis, angle) in &sig {
            let r = matrix_to_rot6d(&axis_angle(*axis, angle * phase)).expect("rotation");
            m.set_rotation(start + k, *b, &r);
        }
    }
}

/// The body estimate: arm blocks perturbed, hand blocks at rest.
fn body_estimate(m: &MotionSequence, rng: &mut ChaCha8Rng) -> MotionSequence {
    let mut b = MotionSequence::rest(m.id.clone(), m.num_frames(), m.fps);
    b.handedness = m.handedness;
    for t in 0..m.num_frames() {
        for blk in 0..handmotion_core::layout::NUM_BODY_JOINTS {
            b.set_rotation(t, blk, &m.rotation(t, blk));
        }
        for &blk in &ARM_BLOCKS {
            let noise = matrix_to_rot6d(&(axis_angle(random_axis(rng), 0.15) * m.rotation(t, blk).to_matrix().unwrap())).unwrap();
            b.set_rotation(t, blk, &noise);
        }
    }
    b
}

fn write_pair(dir: &Path, m: &MotionSequence, skeleton: &Skeleton, rng: &mut ChaCha8Rng) -> Result<()> {
    write_motion(&dir.join("body").join(format!("{}.{MOTION_EXTENSION}", m.id)), &body_estimate(m, rng))?;
    let hands = HandEstimate::from_motion(m, skeleton)?;
    write_hands(&dir.join("hands").join(format!("{}.{HANDS_EXTENSION}", m.id)), &hands)?;
    Ok(())
}

pub fn pipeline_config() -> PipelineConfig {
    let mut cfg = PipelineConfig {
        seed: 0,
        workers: 2,
        stages: Stage::ALL.to_vec(),
        ..Default::default()
    };
    cfg.stitch.max_iterations = 30;
    cfg.describe.model = "fixture-llm".into();
    cfg.thmr = ThmrConfig {
        width: 32,
        heads: 2,
        depth: 1,
        ff: 64,
        latent_dim: 32,
        batch_size: 8,
        epochs: 5,
        learning_rate: 1e-3,
        max_frames: 32,
        ..Default::default()
    };
    cfg.diffusion = DiffusionConfig {
        width: 32,
        heads: 2,
        depth: 1,
        ff: 64,
        max_len: 32,
        steps: 10,
        epochs: 5,
        batch_size: 8,
        learning_rate: 1e-3,
        ..Default::default()
    };
    cfg
}

/// Writes the corpus into `dir` (which should be empty). Everything is
/// derived from [`SEED`].
pub fn write_micro_corpus(dir: &Path) -> Result<()> {
    let skeleton = Skeleton::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    create_dir(&dir.join("body"))?;
    create_dir(&dir.join("hands"))?;
    let sigs: Vec<Signature> = GLOSSES.iter().map(|_| signature(&mut rng)).collect();

    for (g, (gloss, _, _)) in GLOSSES.iter().enumerate() {
        let mut m = MotionSequence::rest(*gloss, DICT_FRAMES, FPS);
        perform(&sigs[g], &mut m, 0, DICT_FRAMES, 0.0, &mut rng);
        write_pair(dir, &m, &skeleton, &mut rng)?;
    }

    let mut streams = Vec::new();
    for e in 0..8 {
        let g = e % GLOSSES.len();
        let id = format!("ep{e}");
        let mut m = MotionSequence::rest(id.clone(), LEAD + SIGN_FRAMES + TAIL, FPS);
        if e == 5 {
            m.handedness = Handedness::Left;
        }
        perform(&sigs[g], &mut m, LEAD, SIGN_FRAMES, 0.1, &mut rng);
        write_pair(dir, &m, &skeleton, &mut rng)?;
        let mut frames: Vec<FrameLabel> = (0..m.num_frames())
            .map(|t| {
                let inside = (LEAD..LEAD + SIGN_FRAMES).contains(&t);
                FrameLabel {
                    label: if inside { GLOSSES[g].2 } else { 0 },
                    confidence: if inside { rng.gen_range(0.7..0.95) } else { rng.gen_range(0.05..0.3) },
                }
            })
            .collect();
        // A low-confidence dip inside the sign, bridged by merging.
        if e % 2 == 1 {
            frames[LEAD + SIGN_FRAMES / 2].confidence = 0.2;
        }
        streams.push(LabelStream { motion_id: id, frames });
    }
    write_jsonl(&dir.join("labels.jsonl"), &streams)?;

    let records: Vec<PhonologyRecord> = PHONOLOGY.iter().map(|r| parse_record(r)).collect::<handmotion_core::Result<_>>()?;
    write_jsonl(&dir.join("phonology.jsonl"), &records)?;
    let index = DictionaryIndex {
        glosses: GLOSSES.iter().map(|(g, w, _)| (g.to_string(), vec![w.to_string()])).collect(),
    };
    write_json(&dir.join("dictionary.json"), &index)?;
    let corpus = Corpus {
        label_words: GLOSSES.iter().map(|(_, w, l)| (*l, w.to_string())).collect::<BTreeMap<_, _>>(),
    };
    write_json(&dir.join("corpus.json"), &corpus)?;
    let cfg = pipeline_config();
    write_json(&dir.join("pipeline.json"), &cfg)?;

    // The prompts contain HMS blocks, so record answers against the same
    // stitching and HMS the pipeline will run.
    let stitched = dir.join(".scratch");
    stitch_dir(&dir.join("body"), &dir.join("hands"), &stitched, &cfg.stitch, &skeleton, 1)?;
    let hms = hms_records(&stitched, &records, &cfg.hms, &skeleton, 1)?;
    std::fs::remove_dir_all(&stitched).map_err(|e| crate::error::Error::io(&stitched, e))?;
    let reqs = build_requests(&records, Some(&hms_blocks(&hms)), &cfg.describe, cfg.seed)?;
    let client = FixtureClient::new(dir.join("llm"));
    for (req, answer) in reqs.iter().zip(ANSWERS) {
        let text = serde_json::to_string_pretty(&json!({
            "Description 1": answer[0],
            "Description 2": answer[1],
            "Description 3": answer[2],
        }))?;
        client.record(req, &text)?;
    }
    Ok(())
}
