use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Four labeled 2-D Gaussian clusters.
    GaussianMixture,
    /// Seven-segment style 8×8 digit glyphs with geometric and pixel jitter.
    Digits8x8,
}

pub const MIXTURE_CLUSTERS: usize = 4;
pub const MIXTURE_RADIUS: f64 = 0.6;
pub const MIXTURE_STD: f64 = 0.15;

pub fn mixture_mean(label: usize) -> [f64; 2] {
    let angle = 2.0 * std::f64::consts::PI * label as f64 / MIXTURE_CLUSTERS as f64;
    [MIXTURE_RADIUS * angle.cos(), MIXTURE_RADIUS * angle.sin()]
}

pub fn synth_dataset(kind: SynthKind, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "synthetic dataset needs n ≥ 1".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    match kind {
        SynthKind::GaussianMixture => {
            let mut xs = Vec::with_capacity(2 * n);
            let mut ys = Vec::with_capacity(n);
            for i in 0..n {
                let label = i % MIXTURE_CLUSTERS;
                let mu = mixture_mean(label);
                for m in mu {
                    xs.push(m + MIXTURE_STD * rng.sample::<f64, _>(StandardNormal));
                }
                ys.push(label);
            }
            Dataset::new(Tensor::matrix(n, 2, xs)?, ys, MIXTURE_CLUSTERS, None)
        }
        SynthKind::Digits8x8 => {
            let mut xs = Vec::with_capacity(64 * n);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let label = rng.gen_range(0..10);
                xs.extend(render_digit(label, &mut rng));
                ys.push(label);
            }
            Dataset::new(Tensor::matrix(n, 64, xs)?, ys, 10, Some((8, 8)))
        }
    }
}

// Segment endpoints in a 1×2 glyph box, y pointing down.
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.0, 0.0), (1.0, 0.0)), // a: top
    ((1.0, 0.0), (1.0, 1.0)), // b: upper right
    ((1.0, 1.0), (1.0, 2.0)), // c: lower right
    ((0.0, 2.0), (1.0, 2.0)), // d: bottom
    ((0.0, 1.0), (0.0, 2.0)), // e: lower left
    ((0.0, 0.0), (0.0, 1.0)), // f: upper left
    ((0.0, 1.0), (1.0, 1.0)), // g: middle
];

// Bit k set = segment k lit.
const DIGIT_SEGMENTS: [u8; 10] = [
    0b011_1111, // 0: abcdef
    0b000_0110, // 1: bc
    0b101_1011, // 2: abdeg
    0b100_1111, // 3: abcdg
    0b110_0110, // 4: bcfg
    0b110_1101, // 5: acdfg
    0b111_1101, // 6: acdefg
    0b000_0111, // 7: abc
    0b111_1111, // 8
    0b110_1111, // 9: abcdfg
];

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (cx * cx + cy * cy).sqrt()
}

/// Render one 8×8 glyph with values in `[-1, 1]`.
fn render_digit<R: Rng>(label: usize, rng: &mut R) -> Vec<f64> {
    let sx = rng.gen_range(2.4..3.4);
    let sy = rng.gen_range(2.4..3.1);
    let ox = rng.gen_range(1.8..3.2);
    let oy = rng.gen_range(0.6..1.4);
    let slant = rng.gen_range(-0.35..0.35);
    let thickness = rng.gen_range(0.45..0.9);
    let mask = DIGIT_SEGMENTS[label];
    let map = |(x, y): (f64, f64)| (ox + sx * x + slant * (y - 1.0), oy + sy * y);
    let segs: Vec<_> = SEGMENTS
        .iter()
        .enumerate()
        .filter(|(k, _)| mask & (1 << k) != 0)
        .map(|(_, &(a, b))| (map(a), map(b)))
        .collect();
    let mut px = Vec::with_capacity(64);
    for row in 0..8 {
        for col in 0..8 {
            let p = (col as f64 + 0.5, row as f64 + 0.5);
            let d = segs
                .iter()
                .map(|&(a, b)| segment_distance(p, a, b))
                .fold(f64::INFINITY, f64::min);
            let ink = (1.0 - (d - thickness / 2.0) / 0.7).clamp(0.0, 1.0);
            let noisy = (ink + 0.12 * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0);
            px.push(2.0 * noisy - 1.0);
        }
    }
    px
}
