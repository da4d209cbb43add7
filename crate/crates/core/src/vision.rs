//! Image states, modular state changes and network input encoding.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default side length of the square network input.
pub const DEFAULT_INPUT_SIDE: usize = 64;

/// 8-bit grayscale frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageState {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageState {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::shape("image pixels", width * height, pixels.len()));
        }
        Ok(ImageState {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, level: u8) -> Self {
        ImageState {
            width,
            height,
            pixels: vec![level; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeDirection {
    Forward,
    Inverse,
}

/// Wraparound difference between two frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateChange {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    direction: ChangeDirection,
}

impl StateChange {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn direction(&self) -> ChangeDirection {
        self.direction
    }

    pub fn is_zero(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0)
    }
}

/// `(next - prev) mod 256` per pixel, tagged forward.
pub fn modular_subtract(next: &ImageState, prev: &ImageState) -> Result<StateChange> {
    if next.width != prev.width || next.height != prev.height {
        return Err(Error::shape(
            "modular subtraction",
            prev.width * prev.height,
            next.width * next.height,
        ));
    }
    let pixels = next
        .pixels
        .iter()
        .zip(&prev.pixels)
        .map(|(&a, &b)| a.wrapping_sub(b))
        .collect();
    Ok(StateChange {
        width: next.width,
        height: next.height,
        pixels,
        direction: ChangeDirection::Forward,
    })
}

/// Reverses a forward change: `(256 - p) mod 256` per pixel.
pub fn inverse_change(ds: &StateChange) -> Result<StateChange> {
    if ds.direction != ChangeDirection::Forward {
        return Err(Error::Usage("inverse_change applied to an inverse change"));
    }
    Ok(StateChange {
        width: ds.width,
        height: ds.height,
        pixels: ds.pixels.iter().map(|p| p.wrapping_neg()).collect(),
        direction: ChangeDirection::Inverse,
    })
}

/// Network input: `side x side` box averages scaled into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputVector {
    side: usize,
    values: Vec<f64>,
}

impl InputVector {
    /// Wraps a raw feature vector; `side` is the integer square root of its length.
    pub fn from_values(values: Vec<f64>) -> Self {
        let side = libm::sqrt(values.len() as f64) as usize;
        InputVector { side, values }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Box-average downsample to `side x side`, divided by 255.
///
/// When the frame does not split evenly, the bottom/right edge rows and
/// columns are replicated to fill the last boxes.
pub fn preprocess(ds: &StateChange, side: usize) -> Result<InputVector> {
    if side == 0 {
        return Err(Error::config("input side must be positive"));
    }
    let bw = ds.width.div_ceil(side);
    let bh = ds.height.div_ceil(side);
    let norm = 1.0 / (255.0 * (bw * bh) as f64);
    let mut values = vec![0.0; side * side];
    for by in 0..side {
        for bx in 0..side {
            let mut sum: u32 = 0;
            for dy in 0..bh {
                let y = (by * bh + dy).min(ds.height - 1);
                let row = &ds.pixels[y * ds.width..(y + 1) * ds.width];
                for dx in 0..bw {
                    let x = (bx * bw + dx).min(ds.width - 1);
                    sum += u32::from(row[x]);
                }
            }
            values[by * side + bx] = f64::from(sum) * norm;
        }
    }
    Ok(InputVector { side, values })
}

/// One observed transition encoded in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionPair {
    pub plus: InputVector,
    pub minus: InputVector,
    pub demo: usize,
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub pairs: Vec<TransitionPair>,
    pub seed: u64,
    /// Demonstrations dropped for having fewer than two frames.
    pub skipped_demos: usize,
}

impl TransitionDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.pairs.first().map(|p| p.plus.values.len())
    }
}

/// Builds one `(ds+, ds-)` pair per consecutive frame pair of every
/// demonstration and shuffles them with `seed`.
pub fn build_transition_dataset<'a, I>(demos: I, side: usize, seed: u64) -> Result<TransitionDataset>
where
    I: IntoIterator<Item = &'a [ImageState]>,
{
    if side == 0 {
        return Err(Error::config("input side must be positive"));
    }
    let mut pairs = Vec::new();
    let mut skipped_demos = 0;
    for (demo, frames) in demos.into_iter().enumerate() {
        if frames.len() < 2 {
            skipped_demos += 1;
            continue;
        }
        for (frame, w) in frames.windows(2).enumerate() {
            let plus = modular_subtract(&w[1], &w[0])?;
            let minus = inverse_change(&plus)?;
            pairs.push(TransitionPair {
                plus: preprocess(&plus, side)?,
                minus: preprocess(&minus, side)?,
                demo,
                frame,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    Ok(TransitionDataset {
        pairs,
        seed,
        skipped_demos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(w: usize, h: usize, px: &[u8]) -> ImageState {
        ImageState::new(w, h, px.to_vec()).unwrap()
    }

    #[test]
    fn identical_frames_give_zero_change() {
        let a = img(2, 2, &[1, 2, 3, 4]);
        assert!(modular_subtract(&a, &a).unwrap().is_zero());
    }

    #[test]
    fn wraparound_difference() {
        let next = img(1, 1, &[10]);
        let prev = img(1, 1, &[250]);
        assert_eq!(modular_subtract(&next, &prev).unwrap().pixels(), &[16]);
    }

    #[test]
    fn dimension_mismatch() {
        let a = img(2, 1, &[0, 0]);
        let b = img(1, 2, &[0, 0]);
        assert!(matches!(modular_subtract(&a, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn inverse_values() {
        let next = img(3, 1, &[16, 0, 128]);
        let prev = img(3, 1, &[0, 0, 0]);
        let ds = modular_subtract(&next, &prev).unwrap();
        let inv = inverse_change(&ds).unwrap();
        assert_eq!(inv.pixels(), &[240, 0, 128]);
        assert_eq!(inv.direction(), ChangeDirection::Inverse);
        assert!(matches!(inverse_change(&inv), Err(Error::Usage(_))));
    }

    #[test]
    fn preprocess_cases() {
        let full = StateChange {
            width: 4,
            height: 4,
            pixels: vec![255; 16],
            direction: ChangeDirection::Forward,
        };
        assert!(preprocess(&full, 2).unwrap().values().iter().all(|&v| v == 1.0));

        let zero = StateChange {
            pixels: vec![0; 16],
            ..full.clone()
        };
        assert!(preprocess(&zero, 2).unwrap().values().iter().all(|&v| v == 0.0));

        let block = StateChange {
            width: 2,
            height: 2,
            pixels: vec![0, 255, 255, 0],
            direction: ChangeDirection::Forward,
        };
        assert_eq!(preprocess(&block, 1).unwrap().values(), &[0.5]);
        assert!(matches!(preprocess(&block, 0), Err(Error::Config(_))));
    }

    #[test]
    fn preprocess_replicates_edges_when_uneven() {
        // 3x1 row [0, 0, 255] into 2 boxes of width 2: second box covers
        // column 2 and its replica.
        let ds = StateChange {
            width: 3,
            height: 1,
            pixels: vec![0, 0, 255],
            direction: ChangeDirection::Forward,
        };
        let v = preprocess(&ds, 2).unwrap();
        assert_eq!(v.values(), &[0.0, 1.0, 0.0, 1.0]);
    }

    fn demo(n: usize, seed: u8) -> Vec<ImageState> {
        (0..n)
            .map(|i| img(4, 4, &[(i as u8).wrapping_mul(seed); 16]))
            .collect()
    }

    #[test]
    fn dataset_counts() {
        let one = [demo(12, 3)];
        let ds = build_transition_dataset(one.iter().map(Vec::as_slice), 2, 0).unwrap();
        assert_eq!(ds.len(), 11);

        let many: Vec<_> = (0..11).map(|i| demo(20, i as u8 + 1)).collect();
        let ds = build_transition_dataset(many.iter().map(Vec::as_slice), 2, 0).unwrap();
        assert_eq!(ds.len(), 209);
    }

    #[test]
    fn dataset_skips_short_demos() {
        let demos = [demo(1, 1), demo(3, 2)];
        let ds = build_transition_dataset(demos.iter().map(Vec::as_slice), 2, 0).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.skipped_demos, 1);
    }

    #[test]
    fn dataset_shuffle_is_deterministic_permutation() {
        let demos: Vec<_> = (0..4).map(|i| demo(6, i as u8 + 1)).collect();
        let a = build_transition_dataset(demos.iter().map(Vec::as_slice), 2, 5).unwrap();
        let b = build_transition_dataset(demos.iter().map(Vec::as_slice), 2, 5).unwrap();
        assert_eq!(a, b);
        let mut keys: Vec<_> = a.pairs.iter().map(|p| (p.demo, p.frame)).collect();
        keys.sort_unstable();
        let expected: Vec<_> = (0..4).flat_map(|d| (0..5).map(move |f| (d, f))).collect();
        assert_eq!(keys, expected);
    }

    fn frame_pair() -> impl Strategy<Value = (ImageState, ImageState)> {
        (1usize..8, 1usize..8).prop_flat_map(|(w, h)| {
            (
                proptest::collection::vec(any::<u8>(), w * h),
                proptest::collection::vec(any::<u8>(), w * h),
            )
                .prop_map(move |(a, b)| (img(w, h, &a), img(w, h, &b)))
        })
    }

    proptest! {
        #[test]
        fn swapped_subtraction_is_pixelwise_negation((a, b) in frame_pair()) {
            let ab = modular_subtract(&a, &b).unwrap();
            let ba = modular_subtract(&b, &a).unwrap();
            for (x, y) in ab.pixels().iter().zip(ba.pixels()) {
                prop_assert_eq!(u16::from(*y), (256 - u16::from(*x)) % 256);
            }
        }

        #[test]
        fn inverse_equals_swapped_recomputation((a, b) in frame_pair()) {
            let fwd = modular_subtract(&b, &a).unwrap();
            let inv = inverse_change(&fwd).unwrap();
            let swapped = modular_subtract(&a, &b).unwrap();
            prop_assert_eq!(inv.pixels(), swapped.pixels());
        }

        #[test]
        fn preprocess_stays_in_unit_interval((a, b) in frame_pair(), side in 1usize..6) {
            let ds = modular_subtract(&a, &b).unwrap();
            let v = preprocess(&ds, side).unwrap();
            prop_assert_eq!(v.values().len(), side * side);
            prop_assert!(v.values().iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert_eq!(v, preprocess(&ds, side).unwrap());
        }
    }
}
