use std::collections::BTreeMap;

use handmotion_core::assigner::{assign_variants, cosine_distance_matrix, extract_segments, k_medoids, FrameLabel};
use handmotion_core::hms::{extract_framecodes, postprocess, Anchor, UsedHands};
use handmotion_core::layout::{FRAME_WIDTH, NUM_ROT_BLOCKS};
use handmotion_core::metrics::retrieval;
use handmotion_core::motion::{decode_motion, encode_motion};
use handmotion_core::phonology::localize_handedness;
use handmotion_core::rotation::{axis_angle, matrix_to_rot6d, orthonormality_error, project_rot6d, rot6d_to_matrix};
use handmotion_core::{Handedness, MotionSequence, RootTransform, Rotation6D, Skeleton};
use nalgebra::Vector3;
use proptest::prelude::*;

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn rot6d() -> impl Strategy<Value = Rotation6D> {
    prop::array::uniform6(-2.0..2.0f64)
        .prop_filter("non-degenerate", |a| rot6d_to_matrix(&Rotation6D(*a)).is_ok())
        .prop_map(Rotation6D)
}

/// A motion whose rotation blocks are random rotations up to `max_angle`.
fn motion(frames: std::ops::Range<usize>, max_angle: f64) -> impl Strategy<Value = MotionSequence> {
    (frames, any::<u64>(), any::<bool>()).prop_map(move |(n, seed, left)| {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = MotionSequence::rest("p", n, 25.0);
        if left {
            m.handedness = Handedness::Left;
        }
        for t in 0..n {
            for b in 0..NUM_ROT_BLOCKS {
                let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                m.set_rotation(t, b, &matrix_to_rot6d(&axis_angle(axis, rng.gen_range(0.0..max_angle))).unwrap());
            }
        }
        m
    })
}

fn label_stream() -> impl Strategy<Value = Vec<FrameLabel>> {
    prop::collection::vec((0u32..3, 0.0..1.0f64), 0..60)
        .prop_map(|v| v.into_iter().map(|(label, confidence)| FrameLabel { label, confidence }).collect())
}

fn unit_cloud(n: std::ops::Range<usize>, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0..1.0f64, dim), n)
        .prop_filter("nonzero", |v| v.iter().all(|p| p.iter().map(|x| x * x).sum::<f64>() > 1e-6))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decoded_6d_is_a_rotation(r in rot6d()) {
        let m = rot6d_to_matrix(&r).unwrap();
        prop_assert!(orthonormality_error(&m) < 1e-9);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
        let back = rot6d_to_matrix(&matrix_to_rot6d(&m).unwrap()).unwrap();
        prop_assert!((back - m).abs().max() < 1e-12);
    }

    #[test]
    fn projection_is_idempotent(r in rot6d()) {
        let mut once = r.0;
        project_rot6d(&mut once);
        let mut twice = once;
        project_rot6d(&mut twice);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fk_is_equivariant_under_root_translation(m in motion(1..2, 2.0), shift in vec3()) {
        let s = Skeleton::bundled();
        let a = s.forward_kinematics(m.frame(0), &RootTransform::default()).unwrap();
        let b = s.forward_kinematics(m.frame(0), &RootTransform::translation(shift)).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((q - p - shift).norm() < 1e-12);
        }
    }

    #[test]
    fn motion_container_round_trips(m in motion(1..6, 3.0)) {
        let bytes = encode_motion(&m);
        let back = decode_motion("p", &bytes).unwrap();
        prop_assert_eq!(encode_motion(&back), bytes);
        prop_assert_eq!(back.data().len(), m.num_frames() * FRAME_WIDTH);
        prop_assert_eq!(back.handedness, m.handedness);
    }

    #[test]
    fn hms_postprocess_is_idempotent_and_collapsed(m in motion(4..24, 1.0)) {
        let s = Skeleton::bundled();
        let anchors = [Anchor::Head, Anchor::Torso, Anchor::OppositeShoulder, Anchor::NeutralSpace];
        let raw = extract_framecodes(&m, &s, &anchors, UsedHands::Both, &Default::default()).unwrap();
        for c in &raw.channels {
            prop_assert_eq!(c.raw.len(), m.num_frames());
        }
        let once = postprocess(&raw, 3);
        prop_assert_eq!(&postprocess(&once, 3), &once);
        for c in &once.channels {
            if let Some(p) = &c.processed {
                prop_assert!(!p.is_empty());
                prop_assert!(p.windows(2).all(|w| w[0] != w[1]));
            }
        }
    }

    #[test]
    fn segments_are_long_disjoint_and_sorted(stream in label_stream(), m in 1usize..8) {
        let segs = extract_segments(&stream, 0.5, m, m);
        prop_assert!(segs.windows(2).all(|w| w[0].start <= w[1].start));
        for s in &segs {
            prop_assert!(s.end - s.start + 1 >= m);
            prop_assert!(stream[s.start].confidence >= 0.5 && stream[s.start].label == s.label);
            prop_assert!(stream[s.end].confidence >= 0.5 && stream[s.end].label == s.label);
        }
        for (i, a) in segs.iter().enumerate() {
            for b in &segs[i + 1..] {
                if a.label == b.label {
                    prop_assert!(a.end < b.start || b.end < a.start);
                }
            }
        }
    }

    #[test]
    fn k_medoids_cost_never_rises_and_labels_are_a_fixed_point(
        points in unit_cloud(2..25, 3),
        pick in prop::collection::vec(any::<prop::sample::Index>(), 1..5),
    ) {
        let d = cosine_distance_matrix(&points).unwrap();
        let mut init: Vec<usize> = pick.iter().map(|i| i.index(points.len())).collect();
        init.sort_unstable();
        init.dedup();
        let km = k_medoids(&d, &init).unwrap();
        prop_assert!(km.costs.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        for (i, &l) in km.labels.iter().enumerate() {
            let best = km.medoids.iter().map(|&m| d[i][m]).fold(f64::INFINITY, f64::min);
            prop_assert!(d[i][km.medoids[l]] <= best);
        }
    }

    #[test]
    fn variant_assignment_ignores_sample_order(
        variants in unit_cloud(1..4, 3),
        samples in unit_cloud(1..12, 3),
        rotate in 0usize..12,
    ) {
        let vmap: BTreeMap<String, Vec<f64>> = variants.iter().enumerate().map(|(i, v)| (format!("V{i}"), v.clone())).collect();
        let names: Vec<String> = (0..samples.len()).map(|i| format!("s{i:02}")).collect();
        let a: BTreeMap<String, Vec<f64>> = names.iter().cloned().zip(samples.iter().cloned()).collect();
        // Same vectors under rotated ids, so they are visited in another order.
        let n = samples.len();
        let k = rotate % n;
        let b: BTreeMap<String, Vec<f64>> = (0..n).map(|i| (format!("r{:02}", (i + k) % n), samples[i].clone())).collect();
        let back = |id: &str| (id[1..].parse::<usize>().unwrap() + n - k) % n;
        let ra = assign_variants(&a, &vmap).unwrap();
        let rb = assign_variants(&b, &vmap).unwrap();
        for (id, asg) in &rb {
            prop_assert_eq!(asg, &ra[&names[back(id)]]);
        }
    }

    #[test]
    fn samples_equal_to_variants_get_that_variant(variants in unit_cloud(1..5, 4), reps in 1usize..4) {
        let distinct = variants.iter().enumerate().all(|(i, a)| {
            variants[..i].iter().all(|b| handmotion_core::metrics::cosine_similarity(a, b) < 1.0 - 1e-9)
        });
        prop_assume!(distinct);
        let vmap: BTreeMap<String, Vec<f64>> = variants.iter().enumerate().map(|(i, v)| (format!("V{i}"), v.clone())).collect();
        let mut samples = BTreeMap::new();
        for (i, v) in variants.iter().enumerate() {
            for r in 0..reps {
                samples.insert(format!("s{i}_{r}"), v.clone());
            }
        }
        let out = assign_variants(&samples, &vmap).unwrap();
        for (id, a) in &out {
            let i: usize = id[1..id.find('_').unwrap()].parse().unwrap();
            let expected = format!("V{i}");
            prop_assert_eq!(a.variant(), Some(expected.as_str()));
        }
    }

    #[test]
    fn retrieval_ignores_positive_rescaling(
        queries in unit_cloud(1..8, 4),
        gallery in unit_cloud(2..10, 4),
        scale in 0.01..100.0f64,
        which in any::<prop::sample::Index>(),
    ) {
        let correct = |q: usize, g: usize| q % gallery.len() == g;
        let a = retrieval(&queries, &gallery, correct, &[1, 3]).unwrap();
        let mut scaled = gallery.clone();
        let i = which.index(gallery.len());
        scaled[i] = scaled[i].iter().map(|x| x * scale).collect();
        let b = retrieval(&queries, &scaled, correct, &[1, 3]).unwrap();
        prop_assert_eq!(&a.recall, &b.recall);
        prop_assert!(b.recall_at(1) <= b.recall_at(3));
    }

    #[test]
    fn localized_text_has_no_role_words(words in prop::collection::vec(
        prop::sample::select(vec!["the", "dominant", "non-dominant", "Dominant", "Non-dominant", "hand", "moves", "nondominant", "."]),
        0..20,
    ), left in any::<bool>()) {
        let text = words.join(" ");
        let h = if left { Handedness::Left } else { Handedness::Right };
        let once = localize_handedness(&text, h);
        prop_assert!(!once.to_lowercase().contains("dominant"));
        prop_assert_eq!(localize_handedness(&once, h), once);
    }
}
