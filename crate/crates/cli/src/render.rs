//! Static skeleton plots: orthographic front view, one color per frame.

use std::path::Path;

use handmotion_core::{MotionSequence, RootTransform, Skeleton};
use image::codecs::png::PngEncoder;
use image::{ImageEncoder, Rgb, RgbImage};
use imageproc::drawing::{draw_filled_circle_mut, draw_line_segment_mut};
use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::io::ensure_parent;

pub const IMAGE_SIZE: u32 = 512;
const MARGIN: f64 = 0.08;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const EARLY: [f64; 3] = [30.0, 80.0, 220.0];
const LATE: [f64; 3] = [220.0, 50.0, 40.0];

fn frame_color(k: usize, count: usize) -> Rgb<u8> {
    let t = if count > 1 { k as f64 / (count - 1) as f64 } else { 0.0 };
    let c = |i: usize| (EARLY[i] + t * (LATE[i] - EARLY[i])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// PNG bytes of the skeleton at the given frames, drawn in order from blue
/// (first) to red (last). The view is fitted to the drawn joints.
pub fn render_skeleton(m: &MotionSequence, skeleton: &Skeleton, frames: &[usize]) -> Result<Vec<u8>> {
    if frames.is_empty() {
        return Err(Error::Config("no frames requested".into()));
    }
    let n = m.num_frames();
    if let Some(&bad) = frames.iter().find(|&&f| f >= n) {
        return Err(Error::BadFrameIndex { index: bad, frames: n });
    }
    let root = RootTransform::default();
    let poses: Vec<Vec<Vector3<f64>>> = frames
        .iter()
        .map(|&f| skeleton.forward_kinematics(m.frame(f), &root))
        .collect::<handmotion_core::Result<_>>()?;

    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in poses.iter().flatten() {
        lo = [lo[0].min(p.x), lo[1].min(p.y)];
        hi = [hi[0].max(p.x), hi[1].max(p.y)];
    }
    let size = IMAGE_SIZE as f64;
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-6);
    let s = size * (1.0 - 2.0 * MARGIN) / extent;
    let cx = size / 2.0 - s * (lo[0] + hi[0]) / 2.0;
    let cy = size / 2.0 + s * (lo[1] + hi[1]) / 2.0;
    let project = |p: &Vector3<f64>| ((cx + p.x * s) as f32, (cy - p.y * s) as f32);

    let mut img = RgbImage::from_pixel(IMAGE_SIZE, IMAGE_SIZE, BACKGROUND);
    for (k, pose) in poses.iter().enumerate() {
        let color = frame_color(k, poses.len());
        for (j, joint) in skeleton.joints.iter().enumerate() {
            if let Some(parent) = joint.parent {
                draw_line_segment_mut(&mut img, project(&pose[parent]), project(&pose[j]), color);
            }
        }
        for p in pose {
            let (u, v) = project(p);
            draw_filled_circle_mut(&mut img, (u.round() as i32, v.round() as i32), 2, color);
        }
    }
    let mut buf = Vec::new();
    PngEncoder::new(&mut buf)
        .write_image(img.as_raw(), IMAGE_SIZE, IMAGE_SIZE, image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::Config(format!("png encoding: {e}")))?;
    Ok(buf)
}

pub fn render_to_file(m: &MotionSequence, skeleton: &Skeleton, frames: &[usize], out: &Path) -> Result<()> {
    let bytes = render_skeleton(m, skeleton, frames)?;
    ensure_parent(out)?;
    std::fs::write(out, bytes).map_err(|e| Error::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colors_run_from_blue_to_red() {
        assert_eq!(frame_color(0, 3), Rgb([30, 80, 220]));
        assert_eq!(frame_color(2, 3), Rgb([220, 50, 40]));
        assert_eq!(frame_color(0, 1), Rgb([30, 80, 220]));
    }

    #[test]
    fn bad_frame_index() {
        let m = MotionSequence::rest("r", 4, 25.0);
        let err = render_skeleton(&m, &Skeleton::bundled(), &[0, 4]).unwrap_err();
        assert!(matches!(err, Error::BadFrameIndex { index: 4, frames: 4 }));
    }

    #[test]
    fn image_is_a_png_of_the_right_size() {
        let m = MotionSequence::rest("r", 2, 25.0);
        let bytes = render_skeleton(&m, &Skeleton::bundled(), &[0, 1]).unwrap();
        let img = image::load_from_memory(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (IMAGE_SIZE, IMAGE_SIZE));
        assert_eq!(bytes, render_skeleton(&m, &Skeleton::bundled(), &[0, 1]).unwrap());
    }
}
