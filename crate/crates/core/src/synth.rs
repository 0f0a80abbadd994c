//! Synthetic RGB + event scenes: bright rectangles translating over a static
//! textured background, seen by a static camera.
//!
//! The window is sampled at fixed sub-steps; a pixel whose log intensity
//! changes by more than the contrast threshold between consecutive sub-steps
//! fires one event, timestamped uniformly inside that sub-step. A sprinkle of
//! isolated noise events is added on top. The image and the object mask show
//! the scene at the end of the window.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::event::{validate_stream, Event, EventStream, SensorGeometry};
use crate::netpbm::RgbImage;

/// Window length in microseconds (one 20 Hz frame interval).
pub const WINDOW_US: u64 = 50_000;
const SUB_STEPS: usize = 25;
const CONTRAST_THRESHOLD: f64 = 0.15;
/// Noise events per sensor pixel.
const NOISE_RATE: f64 = 0.002;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Complexity {
    Sparse,
    Medium,
    Dense,
}

impl std::str::FromStr for Complexity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sparse" => Ok(Complexity::Sparse),
            "medium" => Ok(Complexity::Medium),
            "dense" => Ok(Complexity::Dense),
            other => Err(format!("unknown complexity {other:?} (sparse|medium|dense)")),
        }
    }
}

impl std::fmt::Display for Complexity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Complexity::Sparse => "sparse",
            Complexity::Medium => "medium",
            Complexity::Dense => "dense",
        })
    }
}

struct Ranges {
    count: (usize, usize),
    size: (f64, f64),
    travel: (f64, f64),
}

impl Complexity {
    fn ranges(self) -> Ranges {
        match self {
            Complexity::Sparse => Ranges {
                count: (1, 1),
                size: (6.0, 9.0),
                travel: (3.0, 6.0),
            },
            Complexity::Medium => Ranges {
                count: (2, 3),
                size: (9.0, 14.0),
                travel: (6.0, 10.0),
            },
            Complexity::Dense => Ranges {
                count: (5, 7),
                size: (12.0, 18.0),
                travel: (8.0, 13.0),
            },
        }
    }
}

#[derive(Clone, Debug)]
struct Rect {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    vx: f64,
    vy: f64,
    color: [f64; 3],
}

impl Rect {
    fn covers(&self, px: usize, py: usize, frac: f64) -> bool {
        let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
        let left = self.x0 + self.vx * frac;
        let top = self.y0 + self.vy * frac;
        x >= left && x < left + self.w && y >= top && y < top + self.h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: RgbImage,
    pub stream: EventStream,
    /// `height x width`, true on object pixels at the end of the window.
    pub object_mask: Vec<bool>,
    pub complexity: Complexity,
}

fn background(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Vec<f64> {
    // coarse 8x8 lattice, bilinearly upsampled, plus fine grain
    let (gw, gh) = (width / 8 + 2, height / 8 + 2);
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(0.08..0.3)).collect();
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64 / 8.0, y as f64 / 8.0);
            let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
            let (tx, ty) = (fx - ix as f64, fy - iy as f64);
            let l = |i: usize, j: usize| lattice[j * gw + i];
            let v = l(ix, iy) * (1.0 - tx) * (1.0 - ty)
                + l(ix + 1, iy) * tx * (1.0 - ty)
                + l(ix, iy + 1) * (1.0 - tx) * ty
                + l(ix + 1, iy + 1) * tx * ty;
            out[y * width + x] = v + rng.gen_range(-0.02..0.02);
        }
    }
    out
}

/// Generates a deterministic scene of `width x height` pixels.
pub fn synth_scene(seed: u64, complexity: Complexity, width: usize, height: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_0000_0000);
    let bg = background(&mut rng, width, height);
    let ranges = complexity.ranges();
    let count = rng.gen_range(ranges.count.0..=ranges.count.1);
    let rects: Vec<Rect> = (0..count)
        .map(|_| {
            let w = rng.gen_range(ranges.size.0..=ranges.size.1);
            let h = rng.gen_range(ranges.size.0..=ranges.size.1);
            let travel = rng.gen_range(ranges.travel.0..=ranges.travel.1);
            let angle =
                [0.25f64, 0.75, 1.25, 1.75].choose(&mut rng).unwrap() * std::f64::consts::PI + rng.gen_range(-0.3..0.3);
            let (vx, vy) = (travel * angle.cos(), travel * angle.sin());
            // keep the whole trajectory on the sensor
            let x_lo = (-vx).max(0.0);
            let x_hi = (width as f64 - w - vx.max(0.0)).max(x_lo + 1e-9);
            let y_lo = (-vy).max(0.0);
            let y_hi = (height as f64 - h - vy.max(0.0)).max(y_lo + 1e-9);
            Rect {
                x0: rng.gen_range(x_lo..x_hi),
                y0: rng.gen_range(y_lo..y_hi),
                w,
                h,
                vx,
                vy,
                color: [
                    rng.gen_range(0.6..1.0),
                    rng.gen_range(0.6..1.0),
                    rng.gen_range(0.6..1.0),
                ],
            }
        })
        .collect();

    // topmost object index per pixel, or None for background
    let occupancy = |frac: f64| -> Vec<Option<usize>> {
        (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| rects.iter().rposition(|r| r.covers(x, y, frac)))
            .collect()
    };
    let luminance = |occ: &[Option<usize>]| -> Vec<f64> {
        occ.iter()
            .zip(&bg)
            .map(|(o, &b)| match o {
                Some(k) => rects[*k].color.iter().sum::<f64>() / 3.0,
                None => b,
            })
            .collect()
    };

    let step_us = WINDOW_US / SUB_STEPS as u64;
    let mut events = Vec::new();
    let mut prev = luminance(&occupancy(0.0));
    for k in 1..=SUB_STEPS {
        let occ = occupancy(k as f64 / SUB_STEPS as f64);
        let cur = luminance(&occ);
        for (i, (&a, &b)) in prev.iter().zip(&cur).enumerate() {
            let delta = b.max(1e-3).ln() - a.max(1e-3).ln();
            if delta.abs() > CONTRAST_THRESHOLD {
                let t = (k as u64 - 1) * step_us + rng.gen_range(1..=step_us);
                events.push(Event::new(
                    (i % width) as u16,
                    (i / width) as u16,
                    t,
                    if delta > 0.0 { 1 } else { -1 },
                ));
            }
        }
        prev = cur;
    }
    let noise = (NOISE_RATE * (width * height) as f64).round() as usize;
    for _ in 0..noise {
        events.push(Event::new(
            rng.gen_range(0..width) as u16,
            rng.gen_range(0..height) as u16,
            rng.gen_range(0..=WINDOW_US),
            if rng.gen_bool(0.5) { 1 } else { -1 },
        ));
    }

    let geometry = SensorGeometry::new(width as u32, height as u32, 0, WINDOW_US).expect("scene geometry is valid");
    let stream = validate_stream(events, geometry).expect("generated events are in range");

    let final_occ = occupancy(1.0);
    let mut image = RgbImage::new(width, height);
    for (i, occ) in final_occ.iter().enumerate() {
        let rgb = match occ {
            Some(k) => rects[*k].color,
            None => [bg[i]; 3],
        };
        image.set_pixel(
            i % width,
            i / width,
            rgb.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    Scene {
        image,
        stream,
        object_mask: final_occ.iter().map(Option::is_some).collect(),
        complexity,
    }
}

/// The standard evaluation suite: 20 scenes cycling through the three
/// complexities with seeds `base_seed..base_seed + 20`.
pub fn default_suite(base_seed: u64, width: usize, height: usize) -> Vec<Scene> {
    const ORDER: [Complexity; 3] = [Complexity::Sparse, Complexity::Medium, Complexity::Dense];
    (0..20)
        .map(|i| synth_scene(base_seed + i as u64, ORDER[i % 3], width, height))
        .collect()
}

/// Object pixels with at least one 4-neighbour outside the object (or on the
/// sensor border).
pub fn object_boundary(mask: &[bool], width: usize, height: usize) -> Vec<bool> {
    let at = |x: i64, y: i64| -> bool {
        x >= 0 && y >= 0 && x < width as i64 && y < height as i64 && mask[y as usize * width + x as usize]
    };
    (0..height as i64)
        .flat_map(|y| (0..width as i64).map(move |x| (x, y)))
        .map(|(x, y)| at(x, y) && (!at(x - 1, y) || !at(x + 1, y) || !at(x, y - 1) || !at(x, y + 1)))
        .collect()
}

/// Tokens at `stride` containing at least one set pixel of `pixels`.
pub fn tokens_touching(pixels: &[bool], width: usize, height: usize, stride: usize) -> Vec<bool> {
    let ws = width / stride;
    let mut out = vec![false; (height / stride) * ws];
    for (i, &p) in pixels.iter().enumerate() {
        if p {
            out[(i / width / stride) * ws + (i % width) / stride] = true;
        }
    }
    out
}
