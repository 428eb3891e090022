//! Global speaker tracking: centroid pool, constrained mapping of local
//! speakers onto it, new-speaker detection and duration-gated updates.
//!
//! Centroids are stored as running sums of unit embeddings; cosine
//! distance normalizes on the fly, so sum and mean directions coincide.
//! The pool only grows; centroids are never removed or merged.

use crate::assignment::constrained_assign;
use crate::pooling::SpeakerEmbedding;
use crate::{Error, Result};

/// Where a local speaker ended up after one clustering step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignmentTarget {
    /// Mapped onto an existing centroid (returning speaker).
    Centroid(usize),
    /// First appearance; a fresh centroid was appended at this index.
    NewSpeaker(usize),
}

/// Outcome of mapping one window's local speakers to the pool.
#[derive(Debug, Clone)]
pub struct AssignmentResult {
    /// Per local speaker, in channel order.
    pub targets: Vec<AssignmentTarget>,
    /// Cosine distance to the centroid proposed by the constrained
    /// assignment; `None` when no column was available.
    pub distances: Vec<Option<f64>>,
}

impl AssignmentResult {
    pub fn new_speaker_count(&self) -> usize {
        self.targets
            .iter()
            .filter(|t| matches!(t, AssignmentTarget::NewSpeaker(_)))
            .count()
    }
}

/// Cosine distance in `[0, 2]` between two nonzero vectors.
pub fn cosine_distance(c: &[f64], e: &[f64]) -> Result<f64> {
    let dot: f64 = c.iter().zip(e).map(|(a, b)| a * b).sum();
    let nc: f64 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ne: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nc == 0.0 || ne == 0.0 {
        return Err(Error::DegenerateVector);
    }
    Ok(1.0 - dot / (nc * ne))
}

/// The pool of global speaker centroids.
#[derive(Debug, Clone, Default)]
pub struct CentroidSet {
    /// Running sums of assigned unit embeddings, one row per speaker.
    pub sums: Vec<Vec<f64>>,
    /// Number of embeddings accumulated into each row.
    pub counts: Vec<u64>,
    /// Global speaker ids, `speaker_0`, `speaker_1`, ...
    pub labels: Vec<String>,
}

impl CentroidSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }

    fn append(&mut self, embedding: &[f64]) -> usize {
        let index = self.sums.len();
        self.sums.push(embedding.to_vec());
        self.counts.push(1);
        self.labels.push(format!("speaker_{index}"));
        index
    }

    /// `K_buffer x K` matrix of cosine distances from each embedding to
    /// each centroid.
    pub fn distance_matrix(&self, embeddings: &[SpeakerEmbedding]) -> Result<Vec<Vec<f64>>> {
        embeddings
            .iter()
            .map(|e| {
                self.sums
                    .iter()
                    .map(|c| cosine_distance(c, &e.vector))
                    .collect()
            })
            .collect()
    }

    /// One incremental clustering step: constrained assignment, new-speaker
    /// detection against `delta_new`, and duration-gated centroid updates.
    ///
    /// Returns the assignment outcome and the local channel to global label
    /// map. An empty pool turns every local into a new speaker, which is
    /// how the pool gets initialized on the first window.
    pub fn step_update(
        &mut self,
        embeddings: &[SpeakerEmbedding],
        delta_new: f64,
        rho_update: f64,
        frame_step: f64,
    ) -> Result<(AssignmentResult, Vec<(usize, String)>)> {
        let dm = self.distance_matrix(embeddings)?;
        let mapping = constrained_assign(&dm);

        let mut targets = Vec::with_capacity(embeddings.len());
        let mut distances = Vec::with_capacity(embeddings.len());
        let mut label_map = Vec::with_capacity(embeddings.len());

        for (k, e) in embeddings.iter().enumerate() {
            let target = match mapping[k] {
                Some(j) => {
                    let d = dm[k][j];
                    distances.push(Some(d));
                    if d > delta_new {
                        // too far from every remaining centroid: first
                        // appearance of this speaker
                        AssignmentTarget::NewSpeaker(self.append(&e.vector))
                    } else {
                        if e.activity_seconds(frame_step) > rho_update {
                            for (s, &v) in self.sums[j].iter_mut().zip(&e.vector) {
                                *s += v;
                            }
                            self.counts[j] += 1;
                        }
                        AssignmentTarget::Centroid(j)
                    }
                }
                None => {
                    distances.push(None);
                    AssignmentTarget::NewSpeaker(self.append(&e.vector))
                }
            };
            let index = match target {
                AssignmentTarget::Centroid(j) | AssignmentTarget::NewSpeaker(j) => j,
            };
            label_map.push((e.channel, self.labels[index].clone()));
            targets.push(target);
        }

        Ok((AssignmentResult { targets, distances }, label_map))
    }
}
