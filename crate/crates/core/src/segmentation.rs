//! Per-window speaker activity matrices.
//!
//! Providers produce an `F x K_max` matrix of activity probabilities for
//! each buffer position. The oracle provider rasterizes a reference
//! annotation into binary activities and shuffles channel order per window
//! with a seeded permutation, emulating the channel swapping caused by
//! permutation-invariant training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::BufferWindow;
use crate::timebase::{Annotation, FrameGrid};
use crate::{Error, Result};

/// Deterministic per-window RNG derived from the run seed.
pub(crate) fn window_rng(seed: u64, window_index: u64, salt: u64) -> ChaCha8Rng {
    // splitmix64 over the combined key
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(window_index)
        .wrapping_mul(0xBF58_476D_1CE4_E5B9)
        .wrapping_add(salt);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Frame x channel activity probabilities for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMatrix {
    /// `F` rows of `k_max` probabilities in `[0, 1]`.
    pub probs: Vec<Vec<f64>>,
    pub window_index: usize,
    pub k_max: usize,
}

impl SegmentationMatrix {
    pub fn zeros(frames: usize, k_max: usize, window_index: usize) -> Self {
        Self {
            probs: vec![vec![0.0; k_max]; frames],
            window_index,
            k_max,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.probs.len()
    }

    /// Shape and range check against the expected geometry.
    pub fn validate(&self, expected_frames: usize) -> Result<()> {
        if self.probs.len() != expected_frames
            || self.probs.iter().any(|r| r.len() != self.k_max)
        {
            return Err(Error::ShapeMismatch {
                expected_rows: expected_frames,
                expected_cols: self.k_max,
                rows: self.probs.len(),
                cols: self.probs.first().map_or(0, |r| r.len()),
            });
        }
        for row in &self.probs {
            for &p in row {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Provider {
                        window_index: self.window_index,
                        message: format!("activity probability {p} outside [0,1]"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Activity mass per channel: sum of raw probabilities over frames.
    pub fn activity_mass(&self, channel: usize) -> f64 {
        self.probs.iter().map(|r| r[channel]).sum()
    }
}

/// Channels whose activity exceeds the threshold somewhere in the window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalSpeakers {
    /// Sorted, unique channel indices.
    pub active: Vec<usize>,
}

impl LocalSpeakers {
    pub fn k_buffer(&self) -> usize {
        self.active.len()
    }
}

/// Channel `k` is active iff `max_f s_fk > tau_active` (strict: a single
/// frame exceedance suffices, and `tau = 1` means never active).
pub fn active_speakers(s: &SegmentationMatrix, tau_active: f64) -> LocalSpeakers {
    let mut active = Vec::new();
    for k in 0..s.k_max {
        let peak = s.probs.iter().map(|r| r[k]).fold(0.0, f64::max);
        if peak > tau_active {
            active.push(k);
        }
    }
    LocalSpeakers { active }
}

/// Source of segmentation matrices.
pub trait SegmentationProvider {
    fn k_max(&self) -> usize;
    fn segment(&self, window: &BufferWindow, grid: &FrameGrid) -> Result<SegmentationMatrix>;
}

/// Perfect binary segmentation derived from a reference annotation.
///
/// Each window assigns its reference speakers to channels through a
/// permutation drawn from `hash(seed, window_index)`, so channel identity
/// is inconsistent across windows while runs stay reproducible.
pub struct OracleSegmentation {
    pub reference: Annotation,
    pub k_max: usize,
    pub seed: u64,
}

impl OracleSegmentation {
    pub fn new(reference: Annotation, k_max: usize, seed: u64) -> Self {
        Self {
            reference,
            k_max,
            seed,
        }
    }

    /// Reference speakers with at least one active frame in the window,
    /// in label order.
    fn window_speakers(&self, window: &BufferWindow, grid: &FrameGrid) -> Vec<String> {
        let first = window.first_frame(grid);
        let mut labels: Vec<String> = Vec::new();
        for label in self.reference.labels() {
            let timeline = self.reference.speaker_timeline(&label);
            let active = (0..grid.frames_per_window()).any(|i| {
                let g = first + i as i64;
                if g < 0 {
                    return false;
                }
                let mid = (g as f64 + 0.5) * grid.frame_step;
                timeline.iter().any(|s| s.onset <= mid && mid < s.end())
            });
            if active {
                labels.push(label);
            }
        }
        labels
    }
}

/// Rasterize a reference into a binary matrix for one window, assigning
/// speakers to channels by a seed-deterministic per-window permutation.
pub fn oracle_segmentation(
    reference: &Annotation,
    window: &BufferWindow,
    grid: &FrameGrid,
    k_max: usize,
    seed: u64,
) -> Result<SegmentationMatrix> {
    let provider = OracleSegmentation {
        reference: reference.clone(),
        k_max,
        seed,
    };
    provider.segment(window, grid)
}

impl SegmentationProvider for OracleSegmentation {
    fn k_max(&self) -> usize {
        self.k_max
    }

    fn segment(&self, window: &BufferWindow, grid: &FrameGrid) -> Result<SegmentationMatrix> {
        let f = grid.frames_per_window();
        let speakers = self.window_speakers(window, grid);
        if speakers.len() > self.k_max {
            return Err(Error::CapacityExceeded {
                window_index: window.window_index,
                k_max: self.k_max,
            });
        }

        let mut channels: Vec<usize> = (0..self.k_max).collect();
        let mut rng = window_rng(self.seed, window.window_index as u64, 0x5347); // "SG"
        channels.shuffle(&mut rng);

        let mut m = SegmentationMatrix::zeros(f, self.k_max, window.window_index);
        let first = window.first_frame(grid);
        for (i, label) in speakers.iter().enumerate() {
            let channel = channels[i];
            let timeline = self.reference.speaker_timeline(label);
            for (fi, row) in m.probs.iter_mut().enumerate() {
                let g = first + fi as i64;
                if g < 0 {
                    continue; // zero-padded warm-up frames stay silent
                }
                let mid = (g as f64 + 0.5) * grid.frame_step;
                if timeline.iter().any(|s| s.onset <= mid && mid < s.end()) {
                    row[channel] = 1.0;
                }
            }
        }
        Ok(m)
    }
}

/// Wrapper that perturbs another provider's probabilities with uniform
/// jitter in `[-epsilon, epsilon]`, clipped to `[0, 1]`. No flips: binary
/// structure is preserved up to the jitter amplitude.
pub struct NoisyProvider<P> {
    pub inner: P,
    pub epsilon: f64,
    pub seed: u64,
}

impl<P: SegmentationProvider> SegmentationProvider for NoisyProvider<P> {
    fn k_max(&self) -> usize {
        self.inner.k_max()
    }

    fn segment(&self, window: &BufferWindow, grid: &FrameGrid) -> Result<SegmentationMatrix> {
        let mut m = self.inner.segment(window, grid)?;
        let mut rng = window_rng(self.seed, window.window_index as u64, 0x4A54); // "JT"
        for row in &mut m.probs {
            for p in row {
                let jitter: f64 = rng.gen_range(-self.epsilon..=self.epsilon);
                *p = (*p + jitter).clamp(0.0, 1.0);
            }
        }
        Ok(m)
    }
}

/// Precomputed matrices keyed by window index (file-backed).
pub struct StoredSegmentation {
    pub k_max: usize,
    pub windows: Vec<Vec<Vec<f64>>>,
}

impl SegmentationProvider for StoredSegmentation {
    fn k_max(&self) -> usize {
        self.k_max
    }

    fn segment(&self, window: &BufferWindow, _grid: &FrameGrid) -> Result<SegmentationMatrix> {
        let probs = self
            .windows
            .get(window.window_index)
            .ok_or(Error::MissingWindow(window.window_index))?
            .clone();
        Ok(SegmentationMatrix {
            probs,
            window_index: window.window_index,
            k_max: self.k_max,
        })
    }
}
