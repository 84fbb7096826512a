//! 7-channel binary occupancy frames and forward-prediction accuracy.
//!
//! A frame stores one label per pixel (channel 0-5 for body colors in the
//! order red, green, blue, purple, gray, black; 6 for background), which
//! makes the "exactly one channel per pixel" invariant structural. Pixels
//! are sampled at their centers with row 0 at the top of the world.

use crate::geom::Vec2;
use crate::physics2d::{Body, Shape, WorldState};
use thiserror::Error;

/// Default frame resolution.
pub const FRAME_SIDE: usize = 256;
/// Channel index for background pixels.
pub const BACKGROUND: u8 = 6;
/// Channels 0..=4 (red, green, blue, purple, gray) mark dynamic colors.
pub const DYNAMIC_CHANNELS: std::ops::RangeInclusive<u8> = 0..=4;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Square occupancy frame with one channel label per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    side: usize,
    labels: Vec<u8>,
}

impl Frame {
    pub fn background(side: usize) -> Frame {
        Frame {
            side,
            labels: vec![BACKGROUND; side * side],
        }
    }

    /// Build from explicit labels (row-major, row 0 on top).
    pub fn from_labels(side: usize, labels: Vec<u8>) -> Frame {
        assert_eq!(labels.len(), side * side);
        assert!(labels.iter().all(|&l| l <= BACKGROUND));
        Frame { side, labels }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn label(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.side + col]
    }

    pub fn set_label(&mut self, row: usize, col: usize, label: u8) {
        assert!(label <= BACKGROUND);
        self.labels[row * self.side + col] = label;
    }

    /// Binary occupancy of one of the seven channels.
    pub fn channel_bit(&self, channel: u8, row: usize, col: usize) -> bool {
        self.label(row, col) == channel
    }

    pub fn count_channel(&self, channel: u8) -> usize {
        self.labels.iter().filter(|&&l| l == channel).count()
    }

    fn is_dynamic_pixel(label: u8) -> bool {
        DYNAMIC_CHANNELS.contains(&label)
    }
}

/// Renders a world state into a 256x256 frame.
///
/// Bodies are painted with an analytic point-in-shape test at each pixel
/// center, static bodies first and then dynamic ones, each group in
/// ascending body id, so later paints win overlaps deterministically.
pub fn rasterize(world: &WorldState) -> Frame {
    rasterize_with_side(world, FRAME_SIDE)
}

pub fn rasterize_with_side(world: &WorldState, side: usize) -> Frame {
    let mut frame = Frame::background(side);
    let statics = world.bodies.iter().filter(|b| !b.dynamic);
    let dynamics = world.bodies.iter().filter(|b| b.dynamic);
    for body in statics.chain(dynamics) {
        paint_body(&mut frame, body);
    }
    frame
}

fn paint_body(frame: &mut Frame, body: &Body) {
    let side = frame.side;
    let sidef = side as f64;
    let reach = body.shape.bounding_radius();
    let (cx, cy) = (body.position.x, body.position.y);

    // Pixel index ranges whose centers can fall inside the shape.
    let col_lo = ((cx - reach) * sidef - 0.5).ceil().max(0.0) as usize;
    let col_hi = ((cx + reach) * sidef - 0.5).floor().min(sidef - 1.0);
    let row_lo = ((1.0 - (cy + reach)) * sidef - 0.5).ceil().max(0.0) as usize;
    let row_hi = ((1.0 - (cy - reach)) * sidef - 0.5).floor().min(sidef - 1.0);
    if col_hi < 0.0 || row_hi < 0.0 {
        return;
    }
    let (col_hi, row_hi) = (col_hi as usize, row_hi as usize);

    let label = body.color.channel() as u8;
    match body.shape {
        Shape::Ball { radius } => {
            let r2 = radius * radius;
            for row in row_lo..=row_hi {
                let py = 1.0 - (row as f64 + 0.5) / sidef;
                for col in col_lo..=col_hi {
                    let px = (col as f64 + 0.5) / sidef;
                    let dx = px - cx;
                    let dy = py - cy;
                    if dx * dx + dy * dy <= r2 {
                        frame.set_label(row, col, label);
                    }
                }
            }
        }
        Shape::Bar {
            half_length,
            half_thickness,
        } => {
            let (cos, sin) = (body.angle.cos(), body.angle.sin());
            for row in row_lo..=row_hi {
                let py = 1.0 - (row as f64 + 0.5) / sidef;
                for col in col_lo..=col_hi {
                    let px = (col as f64 + 0.5) / sidef;
                    let d = Vec2::new(px - cx, py - cy);
                    // Rotate into the bar frame.
                    let lx = d.x * cos + d.y * sin;
                    let ly = -d.x * sin + d.y * cos;
                    if lx.abs() <= half_length && ly.abs() <= half_thickness {
                        frame.set_label(row, col, label);
                    }
                }
            }
        }
    }
}

/// Forward-prediction accuracy between two equal-length frame sequences.
///
/// Per frame the mask is every pixel where either frame carries a dynamic
/// color (channels 0-4); a masked pixel matches when all seven channel bits
/// agree. Scores are percentages averaged over frames; an empty mask scores
/// 100 for its frame.
pub fn forward_prediction_accuracy(
    predicted: &[Frame],
    ground_truth: &[Frame],
) -> Result<f64, RasterError> {
    if predicted.len() != ground_truth.len() {
        return Err(RasterError::Shape(format!(
            "frame count mismatch: {} vs {}",
            predicted.len(),
            ground_truth.len()
        )));
    }
    if predicted.is_empty() {
        return Ok(100.0);
    }
    let mut total = 0.0;
    for (p, g) in predicted.iter().zip(ground_truth) {
        if p.side != g.side {
            return Err(RasterError::Shape(format!(
                "frame side mismatch: {} vs {}",
                p.side, g.side
            )));
        }
        let mut mask = 0u64;
        let mut matches = 0u64;
        for (lp, lg) in p.labels.iter().zip(&g.labels) {
            if Frame::is_dynamic_pixel(*lp) || Frame::is_dynamic_pixel(*lg) {
                mask += 1;
                if lp == lg {
                    matches += 1;
                }
            }
        }
        total += if mask == 0 {
            100.0
        } else {
            100.0 * matches as f64 / mask as f64
        };
    }
    Ok(total / predicted.len() as f64)
}

/// RGB palette for channel composites, indexed by label.
pub const PALETTE: [[u8; 3]; 7] = [
    [220, 48, 35],   // red
    [50, 168, 82],   // green
    [45, 100, 245],  // blue
    [130, 60, 190],  // purple
    [128, 128, 128], // gray
    [0, 0, 0],       // black
    [255, 255, 255], // background
];

/// Composite RGB bytes (row-major) for a frame.
pub fn composite_rgb(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.labels.len() * 3);
    for &l in &frame.labels {
        out.extend_from_slice(&PALETTE[l as usize]);
    }
    out
}

/// Encode an RGB pixel buffer as a binary PPM (P6) image.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics2d::BodyColor;
    use proptest::prelude::*;

    fn gray_ball_world(x: f64, y: f64, r: f64) -> WorldState {
        WorldState::new(vec![Body::new(
            0,
            Shape::Ball { radius: r },
            BodyColor::Gray,
            Vec2::new(x, y),
            0.0,
        )])
    }

    #[test]
    fn empty_scene_is_all_background() {
        let frame = rasterize(&WorldState::new(vec![]));
        assert_eq!(frame.count_channel(BACKGROUND), 256 * 256);
    }

    #[test]
    fn disk_pixel_count_matches_analytic_area() {
        let frame = rasterize(&gray_ball_world(0.5, 0.5, 0.1));
        let count = frame.count_channel(4) as f64;
        let expect = std::f64::consts::PI * (0.1 * 256.0) * (0.1 * 256.0);
        assert!(
            (count - expect).abs() <= 0.03 * expect,
            "count {count} vs analytic {expect}"
        );
    }

    #[test]
    fn rasterization_is_deterministic() {
        let world = gray_ball_world(0.3, 0.62, 0.07);
        assert_eq!(rasterize(&world), rasterize(&world));
    }

    #[test]
    fn overlap_resolution_paints_dynamic_over_static() {
        let world = WorldState::new(vec![
            Body::new(
                0,
                Shape::Bar {
                    half_length: 0.2,
                    half_thickness: 0.05,
                },
                BodyColor::Black,
                Vec2::new(0.5, 0.5),
                0.0,
            ),
            Body::new(
                1,
                Shape::Ball { radius: 0.05 },
                BodyColor::Green,
                Vec2::new(0.5, 0.5),
                0.0,
            ),
        ]);
        let frame = rasterize(&world);
        // Center pixel belongs to the green ball even though the bar covers it.
        assert_eq!(frame.label(128, 128), 1);
        assert!(frame.count_channel(5) > 0);
    }

    #[test]
    fn one_pixel_translation_shifts_disk_one_column() {
        let a = rasterize(&gray_ball_world(0.37, 0.52, 0.06));
        let b = rasterize(&gray_ball_world(0.37 + 1.0 / 256.0, 0.52, 0.06));
        for row in 0..256 {
            for col in 0..255 {
                assert_eq!(a.label(row, col), b.label(row, col + 1));
            }
        }
    }

    #[test]
    fn fpa_identity_is_100() {
        let frames: Vec<Frame> = (0..10)
            .map(|k| rasterize(&gray_ball_world(0.3 + 0.02 * k as f64, 0.5, 0.05)))
            .collect();
        let fpa = forward_prediction_accuracy(&frames, &frames).unwrap();
        assert_eq!(fpa, 100.0);
    }

    #[test]
    fn fpa_is_zero_when_all_dynamics_deleted() {
        let gt: Vec<Frame> = (0..10)
            .map(|k| rasterize(&gray_ball_world(0.3 + 0.02 * k as f64, 0.5, 0.05)))
            .collect();
        let empty: Vec<Frame> = (0..10).map(|_| Frame::background(256)).collect();
        let fpa = forward_prediction_accuracy(&empty, &gt).unwrap();
        assert_eq!(fpa, 0.0);
    }

    #[test]
    fn fpa_hand_enumerated_4x4_example() {
        // GT dynamic pixels {(1,1),(1,2)}; predicted {(1,2),(1,3)}.
        let mut gt = Frame::background(4);
        gt.set_label(1, 1, 0);
        gt.set_label(1, 2, 0);
        let mut pred = Frame::background(4);
        pred.set_label(1, 2, 0);
        pred.set_label(1, 3, 0);
        let fpa = forward_prediction_accuracy(&[pred], &[gt]).unwrap();
        assert!((fpa - 100.0 / 3.0).abs() < 1e-3, "fpa {fpa}");
    }

    #[test]
    fn fpa_rejects_length_mismatch() {
        let f = Frame::background(4);
        assert!(forward_prediction_accuracy(&[f.clone()], &[f.clone(), f]).is_err());
    }

    #[test]
    fn ppm_encoding_is_byte_stable() {
        let frame = rasterize(&gray_ball_world(0.5, 0.5, 0.1));
        let a = encode_ppm(256, 256, &composite_rgb(&frame));
        let b = encode_ppm(256, 256, &composite_rgb(&frame));
        assert_eq!(a, b);
        assert!(a.starts_with(b"P6\n256 256\n255\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        // FPA is symmetric and bounded; the union mask makes swap harmless.
        #[test]
        fn fpa_symmetric_and_bounded(
            ax in 0.1f64..0.9, ay in 0.1f64..0.9,
            bx in 0.1f64..0.9, by in 0.1f64..0.9,
            r in 0.02f64..0.1,
        ) {
            let fa = vec![rasterize_with_side(&gray_ball_world(ax, ay, r), 64)];
            let fb = vec![rasterize_with_side(&gray_ball_world(bx, by, r), 64)];
            let ab = forward_prediction_accuracy(&fa, &fb).unwrap();
            let ba = forward_prediction_accuracy(&fb, &fa).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=100.0).contains(&ab));
        }
    }
}
