//! Procedural HDR content for training and tests.

use crate::frame::{ColorSpace, Frame, Video};
use crate::rng::{Cursor, Rng};

#[derive(Debug, Clone, Copy)]
struct Blob {
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    radius: f64,
    log2_gain: f64,
    tint: [f64; 3],
}

impl Blob {
    fn random(w: usize, h: usize, c: &mut Cursor, gain: (f64, f64), speed: f64) -> Self {
        let scale = w.min(h) as f64;
        Blob {
            cx: c.uniform_range(0.0, w as f64),
            cy: c.uniform_range(0.0, h as f64),
            vx: c.uniform_range(-speed, speed),
            vy: c.uniform_range(-speed, speed),
            radius: c.uniform_range(0.06, 0.22) * scale,
            log2_gain: c.uniform_range(gain.0, gain.1),
            tint: [
                1.0 + 0.25 * c.uniform_range(-1.0, 1.0),
                1.0,
                1.0 + 0.25 * c.uniform_range(-1.0, 1.0),
            ],
        }
    }

    fn weight(&self, x: f64, y: f64, t: f64) -> f64 {
        let dx = x - (self.cx + self.vx * t);
        let dy = y - (self.cy + self.vy * t);
        (-(dx * dx + dy * dy) / (2.0 * self.radius * self.radius)).exp()
    }
}

/// A static HDR scene: a smooth log-radiance gradient with bright colored blobs.
///
/// Radiance spans roughly 2^-3 .. 2^8 so that a 4 EV ladder around a well-exposed
/// reference covers it.
pub fn hdr_scene(width: usize, height: usize, rng: &Rng) -> Frame {
    hdr_sequence(width, height, 1, rng).into_frames().remove(0)
}

/// A short HDR clip with blobs drifting across a gradient background.
pub fn hdr_sequence(width: usize, height: usize, frames: usize, rng: &Rng) -> Video {
    let mut c = rng.cursor();
    let g0 = c.uniform_range(-3.0, 0.0);
    let g1 = g0 + c.uniform_range(0.5, 3.0);
    let angle = c.uniform_range(0.0, std::f64::consts::TAU);
    let (ax, ay) = (angle.cos(), angle.sin());
    let bg_tint = [
        1.0 + 0.15 * c.uniform_range(-1.0, 1.0),
        1.0,
        1.0 + 0.15 * c.uniform_range(-1.0, 1.0),
    ];
    let count = 2 + c.below(4);
    let blobs: Vec<Blob> = (0..count)
        .map(|_| Blob::random(width, height, &mut c, (2.0, 8.0), 1.0))
        .collect();
    let diag = ((width * width + height * height) as f64).sqrt().max(1.0);
    let out = (0..frames)
        .map(|t| {
            Frame::from_fn(width, height, |x, y| {
                let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
                let s = ((xf - width as f64 / 2.0) * ax + (yf - height as f64 / 2.0) * ay) / diag + 0.5;
                let bg = (g0 + (g1 - g0) * s).exp2();
                let mut rgb = bg_tint.map(|k| k * bg);
                for b in &blobs {
                    let w = b.weight(xf, yf, t as f64);
                    let amp = b.log2_gain.exp2() * w;
                    for ch in 0..3 {
                        rgb[ch] += amp * b.tint[ch];
                    }
                }
                rgb.map(|v| v as f32)
            })
        })
        .collect();
    Video::new(out, ColorSpace::LinearRadiance).expect("synthetic radiance is valid")
}

/// Dim background with a few moving Gaussian blobs of known radiance; used by the
/// toy generator, where frames are tiny.
pub fn blob_sequence(width: usize, height: usize, frames: usize, rng: &Rng) -> Video {
    let mut c = rng.cursor();
    let bg = c.uniform_range(0.02, 0.1);
    let count = 1 + c.below(3);
    let blobs: Vec<Blob> = (0..count)
        .map(|_| {
            let mut b = Blob::random(width, height, &mut c, (-1.0, 4.0), 1.5);
            b.radius = c.uniform_range(1.5, 0.3 * width.min(height) as f64);
            b
        })
        .collect();
    let out = (0..frames)
        .map(|t| {
            Frame::from_fn(width, height, |x, y| {
                let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut rgb = [bg; 3];
                for b in &blobs {
                    let amp = b.log2_gain.exp2() * b.weight(xf, yf, t as f64);
                    for ch in 0..3 {
                        rgb[ch] += amp * b.tint[ch];
                    }
                }
                rgb.map(|v| v as f32)
            })
        })
        .collect();
    Video::new(out, ColorSpace::LinearRadiance).expect("synthetic radiance is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bracket::exposure_range;

    #[test]
    fn scenes_have_valid_exposure_ranges() {
        for s in 0..20 {
            let f = hdr_scene(32, 32, &Rng::new(s, 0));
            let r = exposure_range(&f).unwrap();
            assert!(r.e_min < r.e_max, "seed {s}: {r:?}");
        }
    }

    #[test]
    fn deterministic() {
        let a = blob_sequence(16, 16, 3, &Rng::new(1, 2));
        let b = blob_sequence(16, 16, 3, &Rng::new(1, 2));
        assert_eq!(a, b);
        assert_ne!(a.frames()[0], a.frames()[1]);
    }
}
