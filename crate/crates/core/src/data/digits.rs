//! Colored-digit construction: grayscale 28×28 digits copied into RGB
//! channels, three quarters of them tinted red, green or blue; plus a
//! built-in procedural glyph set used when no IDX files are available.

use super::LabeledExample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const COLOR_NAMES: [&str; 4] = ["white", "red", "green", "blue"];

pub const IMG_SIDE: usize = 28;
pub const IMG_PIXELS: usize = IMG_SIDE * IMG_SIDE;
/// Input width after colorization: three channel planes of 28×28.
pub const COLOR_INPUT_DIM: usize = 3 * IMG_PIXELS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorizeConfig {
    pub seed: u64,
}

impl Default for ColorizeConfig {
    fn default() -> Self {
        Self { seed: 0 }
    }
}

/// Assign each grayscale image a color drawn uniformly from
/// {white, red, green, blue} (white keeps all three channels; a tint keeps
/// its own channel and zeroes the others). The flat layout is the three
/// channel planes [R | G | B], 2352 values. `artifact_flag` records
/// "colored", the binary confounder.
pub fn colorize_digits(
    images: &[Vec<f64>],
    labels: &[usize],
    cfg: &ColorizeConfig,
) -> Result<Vec<LabeledExample>, super::DataError> {
    assert_eq!(images.len(), labels.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(images.len());
    for (i, (img, &label)) in images.iter().zip(labels).enumerate() {
        if img.len() != IMG_PIXELS {
            return Err(super::DataError::Format {
                path: "<memory>".into(),
                detail: format!("image {i} has {} pixels, expected {IMG_PIXELS}", img.len()),
            });
        }
        if let Some(bad) = img.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(super::DataError::Format {
                path: "<memory>".into(),
                detail: format!("image {i} has out-of-range pixel {bad}"),
            });
        }
        let color = rng.random_range(0..4u8);
        let mut x = vec![0.0; COLOR_INPUT_DIM];
        match color {
            0 => {
                for c in 0..3 {
                    x[c * IMG_PIXELS..(c + 1) * IMG_PIXELS].copy_from_slice(img);
                }
            }
            c => {
                let c = (c - 1) as usize;
                x[c * IMG_PIXELS..(c + 1) * IMG_PIXELS].copy_from_slice(img);
            }
        }
        out.push(LabeledExample {
            x,
            task_label: label,
            subject_id: i as u32,
            artifact_flag: color != 0,
            color_id: Some(color),
        });
    }
    Ok(out)
}

// ── Built-in glyphs ─────────────────────────────────────────────────────

/// Seven-segment layout in a unit square: (x0, y0, x1, y1) per segment.
const SEGMENTS: [(f64, f64, f64, f64); 7] = [
    (0.25, 0.15, 0.75, 0.15), // A top
    (0.75, 0.15, 0.75, 0.50), // B top right
    (0.75, 0.50, 0.75, 0.85), // C bottom right
    (0.25, 0.85, 0.75, 0.85), // D bottom
    (0.25, 0.50, 0.25, 0.85), // E bottom left
    (0.25, 0.15, 0.25, 0.50), // F top left
    (0.25, 0.50, 0.75, 0.50), // G middle
];

const DIGIT_SEGMENTS: [u8; 10] = [
    0b0111111, // 0: ABCDEF
    0b0000110, // 1: BC
    0b1011011, // 2: ABDEG
    0b1001111, // 3: ABCDG
    0b1100110, // 4: BCFG
    0b1101101, // 5: ACDFG
    0b1111101, // 6: ACDEFG
    0b0000111, // 7: ABC
    0b1111111, // 8
    0b1101111, // 9: ABCDFG
];

fn dist_to_segment(px: f64, py: f64, seg: (f64, f64, f64, f64)) -> f64 {
    let (x0, y0, x1, y1) = seg;
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - x0) * dx + (py - y0) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (x0 + t * dx, y0 + t * dy);
    ((px - cx) * (px - cx) + (py - cy) * (py - cy)).sqrt()
}

/// Render one digit with per-image style jitter (shift, scale, stroke width,
/// ink level). Pixel values stay inside [0, 1].
fn render_glyph<R: Rng>(digit: usize, rng: &mut R) -> Vec<f64> {
    let shift_x = rng.random_range(-0.07..0.07);
    let shift_y = rng.random_range(-0.07..0.07);
    let scale = rng.random_range(0.85..1.15);
    let stroke = rng.random_range(0.045..0.085);
    let ink = rng.random_range(0.7..1.0);
    let mask = DIGIT_SEGMENTS[digit];
    let mut img = vec![0.0; IMG_PIXELS];
    for r in 0..IMG_SIDE {
        for c in 0..IMG_SIDE {
            // map pixel into the jittered glyph frame
            let px = ((c as f64 + 0.5) / IMG_SIDE as f64 - 0.5 - shift_x) / scale + 0.5;
            let py = ((r as f64 + 0.5) / IMG_SIDE as f64 - 0.5 - shift_y) / scale + 0.5;
            let mut v: f64 = 0.0;
            for (s, seg) in SEGMENTS.iter().enumerate() {
                if mask & (1 << s) == 0 {
                    continue;
                }
                let d = dist_to_segment(px, py, *seg);
                // soft edge one half-pixel wide
                let edge = 0.5 / IMG_SIDE as f64;
                let a = 1.0 - ((d - stroke) / edge).clamp(0.0, 1.0);
                v = v.max(a);
            }
            img[r * IMG_SIDE + c] = (ink * v).clamp(0.0, 1.0);
        }
    }
    img
}

/// Built-in MNIST stand-in: `n` jittered seven-segment glyphs with balanced
/// labels, deterministic in the seed.
pub fn synth_digit_glyphs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = i % 10;
        images.push(render_glyph(digit, &mut rng));
        labels.push(digit);
    }
    (images, labels)
}
