//! Oriented FAST corners and steered binary descriptors.

use std::path::Path;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{GrayImage, RgbImage};
use crate::rng::{self, purpose};

pub const DEFAULT_FAST_THRESHOLD: u8 = 20;
pub const DEFAULT_MAX_KEYPOINTS: usize = 1000;
pub const FAST_ARC: usize = 9;
/// Keypoints closer than this to any border cannot be described.
pub const DESCRIBE_BORDER: u32 = 16;
pub const ORIENTATION_RADIUS: i32 = 15;
pub const ORIENTATION_BINS: usize = 30;
pub const DESCRIPTOR_BITS: usize = 256;
const PATTERN_RADIUS: f64 = 13.0;
const PATTERN_SEED: u64 = 0x0B5E_55ED;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub response: f64,
    /// Intensity-centroid angle in image coordinates (y down), radians.
    pub orientation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct BinaryDescriptor(pub [u64; 4]);

impl BinaryDescriptor {
    #[inline]
    pub fn hamming(&self, other: &Self) -> u32 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        (self.0[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set_bit(&mut self, i: usize, v: bool) {
        if v {
            self.0[i / 64] |= 1 << (i % 64);
        } else {
            self.0[i / 64] &= !(1 << (i % 64));
        }
    }

    /// 32 bytes; byte `i` holds bits `8i..8i+7`, least significant first.
    pub fn to_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        for (w, chunk) in self.0.iter().zip(out.chunks_exact_mut(8)) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8; 32]) -> Self {
        let mut words = [0u64; 4];
        for (w, chunk) in words.iter_mut().zip(b.chunks_exact(8)) {
            *w = u64::from_le_bytes(chunk.try_into().unwrap());
        }
        BinaryDescriptor(words)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match {
    pub query_index: usize,
    pub db_index: usize,
    pub distance: u32,
}

/// Keypoints with descriptors, index-aligned.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Features {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<BinaryDescriptor>,
}

impl Features {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

pub fn to_grayscale(rgb: &RgbImage) -> GrayImage {
    let data = rgb
        .data
        .chunks_exact(3)
        .map(|p| {
            (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                .round()
                .clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage {
        width: rgb.width,
        height: rgb.height,
        data,
    }
}

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
pub const FAST_CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Segment-test response: zero unless some arc of [`FAST_ARC`] contiguous
/// circle pixels is entirely brighter than center + t or entirely darker
/// than center - t; otherwise the summed absolute difference of the circle
/// pixels beyond the threshold on the stronger side (always > t).
fn fast_score(img: &GrayImage, x: u32, y: u32, threshold: u8) -> u16 {
    let c = img.get(x, y) as i16;
    let mut ring = [0i16; 16];
    for (v, (dx, dy)) in ring.iter_mut().zip(FAST_CIRCLE) {
        *v = img.get((x as i32 + dx) as u32, (y as i32 + dy) as u32) as i16 - c;
    }
    let t = threshold as i16;
    // any qualifying arc covers at least two of the four compass pixels
    let bright = [0, 4, 8, 12].iter().filter(|&&i| ring[i] > t).count();
    let dark = [0, 4, 8, 12].iter().filter(|&&i| ring[i] < -t).count();
    if bright < 2 && dark < 2 {
        return 0;
    }
    let mut arc = 0i16;
    for start in 0..16 {
        let mut lo_b = i16::MAX;
        let mut lo_d = i16::MAX;
        for k in 0..FAST_ARC {
            let d = ring[(start + k) % 16];
            lo_b = lo_b.min(d);
            lo_d = lo_d.min(-d);
        }
        arc = arc.max(lo_b).max(lo_d);
    }
    if arc <= t {
        return 0;
    }
    let sum_b: i16 = ring.iter().filter(|&&d| d > t).sum();
    let sum_d: i16 = ring.iter().filter(|&&d| d < -t).map(|d| -d).sum();
    sum_b.max(sum_d) as u16
}

fn orientation(img: &GrayImage, x: u32, y: u32) -> f64 {
    let r = ORIENTATION_RADIUS;
    let (mut m10, mut m01) = (0i64, 0i64);
    for dy in -r..=r {
        let yy = y as i32 + dy;
        if yy < 0 || yy >= img.height as i32 {
            continue;
        }
        for dx in -r..=r {
            let xx = x as i32 + dx;
            if dx * dx + dy * dy > r * r || xx < 0 || xx >= img.width as i32 {
                continue;
            }
            let v = img.get(xx as u32, yy as u32) as i64;
            m10 += dx as i64 * v;
            m01 += dy as i64 * v;
        }
    }
    (m01 as f64).atan2(m10 as f64)
}

/// FAST-9 corners with 3x3 non-maximum suppression, strongest first.
///
/// `response` is the summed contrast of the circle pixels beyond the
/// threshold, which always exceeds `threshold`.
pub fn detect(img: &GrayImage, max_keypoints: usize, threshold: u8) -> Vec<Keypoint> {
    let (w, h) = (img.width, img.height);
    if w < 7 || h < 7 || max_keypoints == 0 {
        return Vec::new();
    }
    let scores: Vec<u16> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            (0..w).map(move |x| {
                if x < 3 || y < 3 || x >= w - 3 || y >= h - 3 {
                    0
                } else {
                    fast_score(img, x, y, threshold)
                }
            })
        })
        .collect();
    let at = |x: u32, y: u32| scores[(y * w + x) as usize];
    let mut corners = Vec::new();
    for y in 3..h - 3 {
        for x in 3..w - 3 {
            let s = at(x, y);
            if s == 0 {
                continue;
            }
            let mut keep = true;
            'nms: for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = at((x as i32 + dx) as u32, (y as i32 + dy) as u32);
                    // plateaus keep their first pixel in raster order
                    let later = dy > 0 || (dy == 0 && dx > 0);
                    if n > s || (n == s && !later) {
                        keep = false;
                        break 'nms;
                    }
                }
            }
            if keep {
                corners.push((s, x, y));
            }
        }
    }
    corners.sort_by(|a, b| b.0.cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
    corners.truncate(max_keypoints);
    corners
        .into_iter()
        .map(|(s, x, y)| Keypoint {
            x: x as f64,
            y: y as f64,
            response: s as f64,
            orientation: orientation(img, x, y),
        })
        .collect()
}

type Pattern = Vec<[(i32, i32); 2]>;

fn base_pattern() -> Vec<[(f64, f64); 2]> {
    let mut rng = rng::stream(PATTERN_SEED, &[purpose::BRIEF_PATTERN]);
    let normal = Normal::<f64>::new(0.0, 31.0 / 5.0).unwrap();
    let sample = |rng: &mut rng::StreamRng| loop {
        let p: (f64, f64) = (normal.sample(rng).round(), normal.sample(rng).round());
        if p.0 * p.0 + p.1 * p.1 <= PATTERN_RADIUS * PATTERN_RADIUS {
            return p;
        }
    };
    let mut pairs = Vec::with_capacity(DESCRIPTOR_BITS);
    while pairs.len() < DESCRIPTOR_BITS {
        let a = sample(&mut rng);
        let b = sample(&mut rng);
        // a coin flip keeps the pair orientation unbiased
        let pair = if rng.random_bool(0.5) { [a, b] } else { [b, a] };
        if a != b && !pairs.contains(&pair) {
            pairs.push(pair);
        }
    }
    pairs
}

/// Sampling pattern pre-rotated for each orientation bin.
fn rotated_patterns() -> &'static [Pattern] {
    static PATTERNS: OnceLock<Vec<Pattern>> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        let base = base_pattern();
        (0..ORIENTATION_BINS)
            .map(|bin| {
                let theta = bin as f64 * std::f64::consts::TAU / ORIENTATION_BINS as f64;
                let (s, c) = theta.sin_cos();
                let rot = |(x, y): (f64, f64)| {
                    ((c * x - s * y).round() as i32, (s * x + c * y).round() as i32)
                };
                base.iter().map(|[a, b]| [rot(*a), rot(*b)]).collect()
            })
            .collect()
    })
}

pub fn orientation_bin(theta: f64) -> usize {
    let step = std::f64::consts::TAU / ORIENTATION_BINS as f64;
    ((theta / step).round() as i64).rem_euclid(ORIENTATION_BINS as i64) as usize
}

/// 5x5 box sums with edge clamping.
fn box_sums(img: &GrayImage) -> Vec<u16> {
    let (w, h) = (img.width as i32, img.height as i32);
    let mut out = vec![0u16; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0u16;
            for dy in -2..=2 {
                let yy = (y + dy).clamp(0, h - 1) as u32;
                for dx in -2..=2 {
                    let xx = (x + dx).clamp(0, w - 1) as u32;
                    s += img.get(xx, yy) as u16;
                }
            }
            out[(y * w + x) as usize] = s;
        }
    }
    out
}

/// Descriptors for the keypoints far enough from the border; returns the
/// descriptors and, for each, the index of its keypoint in `keypoints`.
pub fn describe(img: &GrayImage, keypoints: &[Keypoint]) -> (Vec<BinaryDescriptor>, Vec<usize>) {
    let (w, h) = (img.width, img.height);
    let b = DESCRIBE_BORDER as f64;
    let kept: Vec<usize> = keypoints
        .iter()
        .enumerate()
        .filter(|(_, k)| k.x >= b && k.y >= b && k.x < w as f64 - b && k.y < h as f64 - b)
        .map(|(i, _)| i)
        .collect();
    if kept.is_empty() {
        return (Vec::new(), kept);
    }
    let sums = box_sums(img);
    let patterns = rotated_patterns();
    let descriptors = kept
        .iter()
        .map(|&i| {
            let kp = &keypoints[i];
            let (x, y) = (kp.x.round() as i32, kp.y.round() as i32);
            let pattern = &patterns[orientation_bin(kp.orientation)];
            let at = |(dx, dy): (i32, i32)| sums[((y + dy) as u32 * w + (x + dx) as u32) as usize];
            let mut d = BinaryDescriptor::default();
            for (bit, [a, b]) in pattern.iter().enumerate() {
                d.set_bit(bit, at(*a) < at(*b));
            }
            d
        })
        .collect();
    (descriptors, kept)
}

/// Detects and describes, keeping only described keypoints.
pub fn extract(img: &GrayImage, max_keypoints: usize, threshold: u8) -> Features {
    let kps = detect(img, max_keypoints, threshold);
    let (descriptors, kept) = describe(img, &kps);
    Features {
        keypoints: kept.into_iter().map(|i| kps[i]).collect(),
        descriptors,
    }
}

const NO_SECOND: u32 = u32::MAX;

/// Nearest neighbor (lowest index on ties) plus nearest and second-nearest
/// distances; the second distance is [`NO_SECOND`] for single-element sets.
fn best_two(d: &BinaryDescriptor, set: &[BinaryDescriptor]) -> Option<(usize, u32, u32)> {
    let mut best = (usize::MAX, NO_SECOND);
    let mut second = NO_SECOND;
    for (j, e) in set.iter().enumerate() {
        let dist = d.hamming(e);
        if dist < best.1 {
            second = best.1;
            best = (j, dist);
        } else if dist < second {
            second = dist;
        }
    }
    (best.0 != usize::MAX).then_some((best.0, best.1, second))
}

fn ratio_ok(best: u32, second: u32, ratio: f64) -> bool {
    second == NO_SECOND || (best as f64) < ratio * second as f64
}

/// Hamming matching with Lowe's ratio test.
///
/// With `mutual`, a pair survives only if each side is the other's nearest
/// neighbor and passes the ratio test in both directions, which makes the
/// result symmetric. Output is sorted by distance, then indices.
pub fn match_descriptors(
    a: &[BinaryDescriptor],
    b: &[BinaryDescriptor],
    ratio: f64,
    mutual: bool,
) -> Vec<Match> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out: Vec<Match> = a
        .par_iter()
        .enumerate()
        .filter_map(|(i, da)| {
            let (j, d1, d2) = best_two(da, b)?;
            if !ratio_ok(d1, d2, ratio) {
                return None;
            }
            if mutual {
                let (back, e1, e2) = best_two(&b[j], a)?;
                if back != i || !ratio_ok(e1, e2, ratio) {
                    return None;
                }
            }
            Some(Match {
                query_index: i,
                db_index: j,
                distance: d1,
            })
        })
        .collect();
    out.sort_by_key(|m| (m.distance, m.query_index, m.db_index));
    out
}

/// Debug/training dump: `count` and `bits` as big-endian u32, then
/// `count * 32` descriptor bytes.
pub fn encode_descriptors(descriptors: &[BinaryDescriptor]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 32 * descriptors.len());
    out.extend_from_slice(&(descriptors.len() as u32).to_be_bytes());
    out.extend_from_slice(&(DESCRIPTOR_BITS as u32).to_be_bytes());
    for d in descriptors {
        out.extend_from_slice(&d.to_bytes());
    }
    out
}

pub fn decode_descriptors(bytes: &[u8], path: &Path) -> Result<Vec<BinaryDescriptor>> {
    if bytes.len() < 8 {
        return Err(Error::format(path, "truncated header"));
    }
    let count = u32::from_be_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let bits = u32::from_be_bytes(bytes[4..8].try_into().unwrap());
    if bits as usize != DESCRIPTOR_BITS {
        return Err(Error::format(path, format!("unsupported descriptor width {bits}")));
    }
    let body = &bytes[8..];
    if body.len() != 32 * count {
        return Err(Error::format(path, "descriptor count disagrees with file size"));
    }
    Ok(body
        .chunks_exact(32)
        .map(|c| BinaryDescriptor::from_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, Strategy};
    use proptest::{prop_assert, prop_assert_eq, proptest};

    fn square_image() -> GrayImage {
        GrayImage::from_fn(64, 64, |x, y| {
            if (20..44).contains(&x) && (20..44).contains(&y) {
                255
            } else {
                0
            }
        })
    }

    /// Direct segment test: some run of >= 9 contiguous circle pixels all
    /// brighter (or all darker) than center by more than `t`.
    fn brute_force_corner(img: &GrayImage, x: u32, y: u32, t: i32) -> bool {
        let c = img.get(x, y) as i32;
        let vals: Vec<i32> = FAST_CIRCLE
            .iter()
            .map(|(dx, dy)| img.get((x as i32 + dx) as u32, (y as i32 + dy) as u32) as i32)
            .collect();
        for sign in [1, -1] {
            let flags: Vec<bool> = vals.iter().map(|v| sign * (v - c) > t).collect();
            let mut run = 0;
            for i in 0..32 {
                run = if flags[i % 16] { run + 1 } else { 0 };
                if run >= 9 {
                    return true;
                }
            }
        }
        false
    }

    #[test]
    fn grayscale_values() {
        let mut img = RgbImage::new(3, 1);
        img.put(0, 0, [255, 255, 255]);
        img.put(1, 0, [255, 0, 0]);
        img.put(2, 0, [37, 37, 37]);
        assert_eq!(to_grayscale(&img).data, vec![255, 76, 37]);
        for v in 0..=255u8 {
            let mut g = RgbImage::new(1, 1);
            g.put(0, 0, [v, v, v]);
            assert_eq!(to_grayscale(&g).data[0], v);
        }
    }

    #[test]
    fn constant_image_has_no_corners() {
        let img = GrayImage::from_fn(64, 64, |_, _| 99);
        assert!(detect(&img, 1000, DEFAULT_FAST_THRESHOLD).is_empty());
    }

    #[test]
    fn square_corners_detected() {
        let img = square_image();
        let kps = detect(&img, 1000, DEFAULT_FAST_THRESHOLD);
        let corners = [(20.0, 20.0), (43.0, 20.0), (20.0, 43.0), (43.0, 43.0)];
        for (cx, cy) in corners {
            assert!(
                kps.iter().any(|k| (k.x - cx).abs() <= 1.0 && (k.y - cy).abs() <= 1.0),
                "no keypoint near ({cx}, {cy}): {kps:?}"
            );
        }
        for k in &kps {
            assert!(corners
                .iter()
                .any(|(cx, cy)| (k.x - cx).abs() <= 1.0 && (k.y - cy).abs() <= 1.0));
            assert!(k.response > DEFAULT_FAST_THRESHOLD as f64);
        }
    }

    #[test]
    fn segment_test_matches_brute_force() {
        let mut rng = rng::stream(3, &[]);
        let img = GrayImage::from_fn(48, 48, |_, _| rng.random_range(0..=255u8));
        let t = DEFAULT_FAST_THRESHOLD;
        for y in 3..45 {
            for x in 3..45 {
                let fast = fast_score(&img, x, y, t) > 0;
                assert_eq!(fast, brute_force_corner(&img, x, y, t as i32), "({x},{y})");
            }
        }
    }

    #[test]
    fn cap_and_determinism() {
        let mut rng = rng::stream(4, &[]);
        let img = GrayImage::from_fn(96, 96, |_, _| rng.random_range(0..=255u8));
        let all = detect(&img, 10_000, DEFAULT_FAST_THRESHOLD);
        assert!(all.len() > 50);
        let capped = detect(&img, 50, DEFAULT_FAST_THRESHOLD);
        assert_eq!(capped.len(), 50);
        assert_eq!(&all[..50], &capped[..]);
        let copy = GrayImage {
            data: img.data.clone(),
            ..img.clone()
        };
        assert_eq!(detect(&copy, 50, DEFAULT_FAST_THRESHOLD), capped);
        let f1 = extract(&img, 200, DEFAULT_FAST_THRESHOLD);
        let f2 = extract(&img, 200, DEFAULT_FAST_THRESHOLD);
        assert_eq!(f1, f2);
    }

    #[test]
    fn describe_drops_border_keypoints() {
        let img = GrayImage::from_fn(64, 64, |x, y| ((x * 7 + y * 13) % 251) as u8);
        let kps = [
            Keypoint { x: 5.0, y: 30.0, response: 30.0, orientation: 0.0 },
            Keypoint { x: 30.0, y: 30.0, response: 30.0, orientation: 1.0 },
            Keypoint { x: 30.0, y: 60.0, response: 30.0, orientation: 0.0 },
            Keypoint { x: 16.0, y: 47.0, response: 30.0, orientation: 2.0 },
        ];
        let (d, kept) = describe(&img, &kps);
        assert_eq!(kept, vec![1, 3]);
        assert_eq!(d.len(), 2);
        let (again, _) = describe(&img, &kps);
        assert_eq!(d, again);
    }

    #[test]
    fn match_identity_and_empty() {
        let mut rng = rng::stream(8, &[]);
        let a: Vec<BinaryDescriptor> = (0..50)
            .map(|_| BinaryDescriptor(std::array::from_fn(|_| rng.random())))
            .collect();
        let m = match_descriptors(&a, &a, 0.8, true);
        assert_eq!(m.len(), 50);
        assert!(m.iter().all(|m| m.query_index == m.db_index && m.distance == 0));
        assert!(match_descriptors(&a, &[], 0.8, true).is_empty());
        assert!(match_descriptors(&[], &a, 0.8, false).is_empty());
    }

    fn reference_match(
        a: &[BinaryDescriptor],
        b: &[BinaryDescriptor],
        ratio: f64,
        mutual: bool,
    ) -> Vec<Match> {
        // full distance matrix, then the same rules evaluated naively
        let dist: Vec<Vec<u32>> = a.iter().map(|x| b.iter().map(|y| x.hamming(y)).collect()).collect();
        let row_best = |i: usize| -> (usize, u32, Option<u32>) {
            let mut idx: Vec<usize> = (0..b.len()).collect();
            idx.sort_by_key(|&j| (dist[i][j], j));
            (idx[0], dist[i][idx[0]], idx.get(1).map(|&j| dist[i][j]))
        };
        let col_best = |j: usize| -> (usize, u32, Option<u32>) {
            let mut idx: Vec<usize> = (0..a.len()).collect();
            idx.sort_by_key(|&i| (dist[i][j], i));
            (idx[0], dist[idx[0]][j], idx.get(1).map(|&i| dist[i][j]))
        };
        let pass = |d1: u32, d2: Option<u32>| d2.is_none_or(|d2| (d1 as f64) < ratio * d2 as f64);
        let mut out = Vec::new();
        for i in 0..a.len() {
            let (j, d1, d2) = row_best(i);
            if !pass(d1, d2) {
                continue;
            }
            if mutual {
                let (back, e1, e2) = col_best(j);
                if back != i || !pass(e1, e2) {
                    continue;
                }
            }
            out.push(Match { query_index: i, db_index: j, distance: d1 });
        }
        out.sort_by_key(|m| (m.distance, m.query_index, m.db_index));
        out
    }

    /// Descriptors clustered around a few centers so that near matches exist.
    fn clustered(rng: &mut rng::StreamRng, n: usize) -> Vec<BinaryDescriptor> {
        let centers: Vec<[u64; 4]> = (0..10).map(|_| std::array::from_fn(|_| rng.random())).collect();
        (0..n)
            .map(|_| {
                let mut d = BinaryDescriptor(centers[rng.random_range(0..10)]);
                for _ in 0..rng.random_range(0..40) {
                    let bit = rng.random_range(0..256);
                    let v = d.bit(bit);
                    d.set_bit(bit, !v);
                }
                d
            })
            .collect()
    }

    #[test]
    fn match_equals_quadratic_reference() {
        for seed in 0..5 {
            let mut rng = rng::stream(100 + seed, &[]);
            let a = clustered(&mut rng, 100);
            let b = clustered(&mut rng, 100);
            for mutual in [true, false] {
                let got = match_descriptors(&a, &b, 0.8, mutual);
                assert_eq!(got, reference_match(&a, &b, 0.8, mutual));
            }
        }
    }

    #[test]
    fn dump_round_trip() {
        let d = vec![BinaryDescriptor([1, 2, 3, u64::MAX]), BinaryDescriptor::default()];
        let bytes = encode_descriptors(&d);
        assert_eq!(&bytes[..8], &[0, 0, 0, 2, 0, 0, 1, 0]);
        assert_eq!(bytes[8], 1);
        assert_eq!(decode_descriptors(&bytes, Path::new("d")).unwrap(), d);
        assert!(decode_descriptors(&bytes[..20], Path::new("d")).is_err());
    }

    #[test]
    fn descriptors_survive_quarter_turn() {
        // smooth random blobs give well-defined corners and orientations
        let mut rng = rng::stream(21, &[]);
        let blobs: Vec<(f64, f64, f64, f64)> = (0..60)
            .map(|_| {
                (
                    rng.random_range(0.0..128.0),
                    rng.random_range(0.0..128.0),
                    rng.random_range(3.0..9.0),
                    rng.random_range(-120.0..120.0),
                )
            })
            .collect();
        let n = 128u32;
        let img = GrayImage::from_fn(n, n, |x, y| {
            let mut v = 128.0;
            for &(bx, by, r, a) in &blobs {
                let in_box = (x as f64 - bx).abs() < r && (y as f64 - by).abs() < r * 0.6;
                if in_box {
                    v += a;
                }
            }
            v.clamp(0.0, 255.0) as u8
        });
        // rotate by 90 degrees: (x, y) -> (n - 1 - y, x)
        let rot = GrayImage::from_fn(n, n, |x, y| img.get(y, n - 1 - x));
        let fa = extract(&img, 500, DEFAULT_FAST_THRESHOLD);
        let fb = extract(&rot, 500, DEFAULT_FAST_THRESHOLD);
        let mut total = 0;
        let mut good = 0;
        for (ka, da) in fa.keypoints.iter().zip(&fa.descriptors) {
            let (ex, ey) = (n as f64 - 1.0 - ka.y, ka.x);
            let hit = fb
                .keypoints
                .iter()
                .position(|kb| kb.x == ex && kb.y == ey);
            if let Some(j) = hit {
                total += 1;
                if da.hamming(&fb.descriptors[j]) < 64 {
                    good += 1;
                }
            }
        }
        assert!(total >= 20, "only {total} re-detected keypoints");
        assert!(good as f64 >= 0.7 * total as f64, "{good}/{total}");
    }

    fn arb_descriptor() -> impl Strategy<Value = BinaryDescriptor> {
        prop::array::uniform4(any::<u64>()).prop_map(BinaryDescriptor)
    }

    proptest! {
        #[test]
        fn hamming_metric_axioms(a in arb_descriptor(), b in arb_descriptor(), c in arb_descriptor()) {
            prop_assert_eq!(a.hamming(&a), 0);
            prop_assert_eq!(a.hamming(&b), b.hamming(&a));
            prop_assert!(a.hamming(&b) <= 256);
            prop_assert!(a.hamming(&c) <= a.hamming(&b) + b.hamming(&c));
            if a != b {
                prop_assert!(a.hamming(&b) > 0);
            }
        }

        #[test]
        fn mutual_matching_symmetric(seed in 0u64..1000) {
            let mut rng = rng::stream(seed, &[9]);
            let na = rng.random_range(1..60);
            let nb = rng.random_range(1..60);
            let a = clustered(&mut rng, na);
            let b = clustered(&mut rng, nb);
            let mut ab: Vec<(usize, usize)> = match_descriptors(&a, &b, 0.8, true)
                .iter().map(|m| (m.query_index, m.db_index)).collect();
            let mut ba: Vec<(usize, usize)> = match_descriptors(&b, &a, 0.8, true)
                .iter().map(|m| (m.db_index, m.query_index)).collect();
            ab.sort_unstable();
            ba.sort_unstable();
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn descriptor_bytes_round_trip(d in arb_descriptor()) {
            prop_assert_eq!(BinaryDescriptor::from_bytes(&d.to_bytes()), d);
        }
    }
}
