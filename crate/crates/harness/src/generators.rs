//! Synthetic stand-ins for the quantum-dot stability diagrams and the
//! transcription-factor binding-site sequences.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use legoqml_core::rng::stream;
use legoqml_core::{Dataset, Error, Result};

pub const DOT_SIDE: usize = 50;
pub const TFBS_LENGTH: usize = 101;
pub const BASES: [u8; 4] = *b"ACGT";

#[derive(Debug, Clone, PartialEq)]
pub struct DotImage {
    /// Row-major `50 × 50`, values in `[0, 1]`.
    pub pixels: Vec<f64>,
    /// 0 = single dot, 1 = double dot.
    pub label: usize,
    pub seed: u64,
}

/// Soft line intensity at perpendicular distance `d`.
fn profile(d: f64, width: f64) -> f64 {
    (-0.5 * (d / width).powi(2)).exp()
}

/// Distance from `(x, y)` to the nearest member of the family of lines
/// `y = slope·x + offset + k·spacing`, measured perpendicular to the lines.
fn family_distance(x: f64, y: f64, slope: f64, offset: f64, spacing: f64) -> f64 {
    let r = (y - slope * x - offset).rem_euclid(spacing);
    r.min(spacing - r) / (1.0 + slope * slope).sqrt()
}

struct Family {
    slope: f64,
    offset: f64,
    spacing: f64,
    width: f64,
}

impl Family {
    fn draw<R: Rng>(rng: &mut R, slopes: (f64, f64), spacing: (f64, f64)) -> Self {
        let spacing = rng.random_range(spacing.0..spacing.1);
        Self {
            slope: rng.random_range(slopes.0..slopes.1),
            offset: rng.random_range(0.0..spacing),
            spacing,
            width: rng.random_range(0.6..1.0),
        }
    }

    /// Vertical spacing in pixel rows, scaled with the slope so the
    /// perpendicular spacing stays within the drawn range.
    fn intensity(&self, x: f64, y: f64) -> f64 {
        let vertical = self.spacing * (1.0 + self.slope * self.slope).sqrt();
        profile(family_distance(x, y, self.slope, self.offset, vertical), self.width)
    }
}

/// One diagram. Label 0 is a single family of parallel transition lines;
/// label 1 overlays a second, steeper family.
fn dot_image(label: usize, noise_level: f64, seed: u64) -> DotImage {
    let mut rng = stream(seed, &[]);
    let mut pixels = vec![0.0; DOT_SIDE * DOT_SIDE];
    let a = if label == 0 {
        Family::draw(&mut rng, (0.2, 0.8), (7.0, 12.0))
    } else {
        Family::draw(&mut rng, (0.2, 0.6), (7.0, 12.0))
    };
    let b = (label == 1).then(|| Family::draw(&mut rng, (2.0, 5.0), (7.0, 12.0)));
    let brightness = rng.random_range(0.7..1.0);
    for r in 0..DOT_SIDE {
        for c in 0..DOT_SIDE {
            let (x, y) = (c as f64, r as f64);
            let ia = a.intensity(x, y);
            let v = b.as_ref().map_or(ia, |b| ia.max(b.intensity(x, y)));
            pixels[r * DOT_SIDE + c] = brightness * v;
        }
    }
    if noise_level > 0.0 {
        let gauss = Normal::new(0.0, 0.15 * noise_level).expect("finite std");
        for p in pixels.iter_mut() {
            *p += gauss.sample(&mut rng);
        }
        // Telegraph streaks: a band of rows where a charge switching event
        // shifts the pattern sideways and lifts the background.
        let streaks = rng.random_range(0..=3);
        for _ in 0..streaks {
            let row = rng.random_range(0..DOT_SIDE);
            let height = rng.random_range(1..=4);
            let shift = rng.random_range(1..=8) as isize;
            let level = rng.random_range(1.0..2.0) * noise_level;
            for r in row..(row + height).min(DOT_SIDE) {
                let line: Vec<f64> = pixels[r * DOT_SIDE..(r + 1) * DOT_SIDE].to_vec();
                for c in 0..DOT_SIDE {
                    let src = (c as isize - shift).clamp(0, DOT_SIDE as isize - 1) as usize;
                    pixels[r * DOT_SIDE + c] = line[src] + level;
                }
            }
        }
    }
    for p in pixels.iter_mut() {
        *p = p.clamp(0.0, 1.0);
    }
    DotImage { pixels, label, seed }
}

/// `n` diagrams, exactly half of each class when `n` is even, in a
/// seeded shuffled order.
pub fn gen_quantum_dot(n: usize, noise_level: f64, seed: u64) -> Result<Vec<DotImage>> {
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 samples for two classes, got {n}")));
    }
    if !(0.0..=1.0).contains(&noise_level) {
        return Err(Error::Argument(format!("noise_level {noise_level} outside [0, 1]")));
    }
    let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
    labels.shuffle(&mut stream(seed, &[0]));
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| dot_image(label, noise_level, legoqml_core::rng::derive_seed(seed, &[1, i as u64])))
        .collect())
}

pub fn dots_to_dataset(images: &[DotImage]) -> Result<Dataset> {
    Dataset::new(images.iter().map(|d| d.pixels.clone()).collect(), images.iter().map(|d| d.label).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfbsSample {
    pub sequence: String,
    pub one_hot: Vec<u8>,
    pub label: usize,
}

/// Four entries per base in A, C, G, T order.
pub fn one_hot(sequence: &str) -> Result<Vec<u8>> {
    let mut out = vec![0u8; 4 * sequence.len()];
    for (i, ch) in sequence.bytes().enumerate() {
        let k = BASES
            .iter()
            .position(|&b| b == ch)
            .ok_or_else(|| Error::Argument(format!("invalid base {:?} at position {i}", ch as char)))?;
        out[4 * i + k] = 1;
    }
    Ok(out)
}

/// Balanced sequences: negatives are uniform background, positives carry
/// `motif` at a uniform position with up to `max_mutations` point mutations.
pub fn gen_tfbs(n: usize, motif: &str, max_mutations: usize, seed: u64) -> Result<Vec<TfbsSample>> {
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 samples for two classes, got {n}")));
    }
    if motif.is_empty() || motif.len() >= TFBS_LENGTH {
        return Err(Error::Argument(format!("motif length {} must lie in 1..{TFBS_LENGTH}", motif.len())));
    }
    if let Some(c) = motif.bytes().find(|b| !BASES.contains(b)) {
        return Err(Error::Argument(format!("motif contains invalid base {:?}", c as char)));
    }
    let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
    labels.shuffle(&mut stream(seed, &[0]));
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let mut rng = stream(seed, &[1, i as u64]);
            let mut seq: Vec<u8> = (0..TFBS_LENGTH).map(|_| BASES[rng.random_range(0..4)]).collect();
            if label == 1 {
                let at = rng.random_range(0..=TFBS_LENGTH - motif.len());
                seq[at..at + motif.len()].copy_from_slice(motif.as_bytes());
                for _ in 0..rng.random_range(0..=max_mutations) {
                    let p = at + rng.random_range(0..motif.len());
                    seq[p] = BASES[rng.random_range(0..4)];
                }
            }
            let sequence = String::from_utf8(seq).expect("ASCII bases");
            Ok(TfbsSample { one_hot: one_hot(&sequence)?, sequence, label })
        })
        .collect()
}

pub fn tfbs_to_dataset(samples: &[TfbsSample]) -> Result<Dataset> {
    Dataset::new(
        samples.iter().map(|s| s.one_hot.iter().map(|&b| f64::from(b)).collect()).collect(),
        samples.iter().map(|s| s.label).collect(),
    )
}
