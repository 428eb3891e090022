//! Synthetic conversation fixtures: seeded reference annotations,
//! per-speaker signature vectors, and an oracle frame source that turns
//! them into pooled-feature streams for closed-loop testing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ingest::FrameSource;
use crate::segmentation::window_rng;
use crate::timebase::{Annotation, FrameGrid, Segment};

/// Parameters of a synthetic conversation.
#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub uri: String,
    pub speakers: usize,
    pub duration: f64,
    /// Target fraction of speech time involving two simultaneous speakers.
    pub overlap_ratio: f64,
    /// Expected norm of the additive frame noise.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Dimensionality of the signature vectors.
    pub dim: usize,
    /// Pairwise cosine similarity between speaker signatures; 0 makes
    /// them orthogonal, larger values make speakers harder to separate.
    pub signature_similarity: f64,
    /// Turn duration range in seconds. Longer turns bound how many
    /// distinct speakers one buffer can span.
    pub turn_min: f64,
    pub turn_max: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            uri: "fixture".into(),
            speakers: 3,
            duration: 300.0,
            overlap_ratio: 0.1,
            noise_sigma: 0.0,
            seed: 0,
            dim: 32,
            signature_similarity: 0.0,
            turn_min: 1.0,
            turn_max: 3.0,
        }
    }
}

/// A generated conversation plus everything the oracle providers need.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub reference: Annotation,
    pub signatures: Vec<(String, Vec<f64>)>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub grid: FrameGrid,
}

/// Generate a turn-taking conversation with controlled overlap and
/// mutually similar unit signatures.
pub fn generate(spec: &FixtureSpec) -> Fixture {
    assert!(spec.speakers >= 1);
    assert!(spec.dim > spec.speakers, "dim must exceed speaker count");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0xA5A5).wrapping_add(1));

    let labels: Vec<String> = (0..spec.speakers).map(|i| format!("spk_{i}")).collect();
    let mut reference = Annotation::new(spec.uri.clone());

    // mean overlap per overlapped transition is ~0.65s
    let mean_turn = 0.5 * (spec.turn_min + spec.turn_max);
    let p_overlap = (spec.overlap_ratio * mean_turn / 0.65).clamp(0.0, 1.0);
    let mut t = 0.0f64;
    let mut prev_speaker = usize::MAX;
    let mut turn_count = 0usize;
    while t < spec.duration {
        // the first round cycles through everyone so all speakers appear early
        let speaker = if turn_count < spec.speakers {
            turn_count
        } else {
            let mut s = rng.gen_range(0..spec.speakers);
            while spec.speakers > 1 && s == prev_speaker {
                s = rng.gen_range(0..spec.speakers);
            }
            s
        };
        let duration = rng
            .gen_range(spec.turn_min..spec.turn_max)
            .min(spec.duration - t);
        if duration > 0.05 {
            reference.add(Segment::new(t, duration).unwrap(), labels[speaker].clone());
        }
        let end = t + duration;
        if spec.speakers > 1 && rng.gen_bool(p_overlap) {
            let overlap = rng.gen_range(0.3..1.0f64).min(duration * 0.8);
            t = end - overlap;
        } else {
            t = end + rng.gen_range(0.1..0.5);
        }
        prev_speaker = speaker;
        turn_count += 1;
    }

    let signatures = make_signatures(&labels, spec.dim, spec.signature_similarity, &mut rng);
    Fixture {
        reference,
        signatures,
        noise_sigma: spec.noise_sigma,
        seed: spec.seed,
        grid: FrameGrid::default(),
    }
}

/// Unit vectors with pairwise cosine exactly `similarity`, built from an
/// orthonormal basis mixed with one shared component.
fn make_signatures(
    labels: &[String],
    dim: usize,
    similarity: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(String, Vec<f64>)> {
    let n = labels.len();
    // Gram-Schmidt on random gaussian vectors: n per-speaker axes + 1 shared
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    while basis.len() < n + 1 {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for x in &mut v {
                *x /= norm;
            }
            basis.push(v);
        }
    }
    let shared = basis.pop().unwrap();
    let a = similarity.clamp(0.0, 0.999).sqrt();
    let b = (1.0 - similarity.clamp(0.0, 0.999)).sqrt();
    labels
        .iter()
        .zip(basis)
        .map(|(label, axis)| {
            let v: Vec<f64> = shared
                .iter()
                .zip(&axis)
                .map(|(s, x)| a * s + b * x)
                .collect();
            (label.clone(), v)
        })
        .collect()
}

/// Frame source synthesizing oracle features from a fixture. Noise is
/// redrawn per buffer position, so different windows see independently
/// perturbed views of the same frame.
pub struct OracleFrameSource {
    timelines: Vec<(Vec<Segment>, Vec<f64>)>,
    grid: FrameGrid,
    num_frames: usize,
    dim: usize,
    noise_sigma: f64,
    seed: u64,
}

impl OracleFrameSource {
    pub fn new(fixture: &Fixture) -> Self {
        Self::with_stream_length(fixture, fixture.reference.extent_end())
    }

    pub fn with_stream_length(fixture: &Fixture, duration: f64) -> Self {
        let timelines = fixture
            .signatures
            .iter()
            .map(|(label, sig)| (fixture.reference.speaker_timeline(label), sig.clone()))
            .collect();
        let dim = fixture.signatures.first().map_or(0, |(_, v)| v.len());
        let num_frames = (duration / fixture.grid.frame_step).round() as usize;
        Self {
            timelines,
            grid: fixture.grid,
            num_frames,
            dim,
            noise_sigma: fixture.noise_sigma,
            seed: fixture.seed,
        }
    }

    /// Synthesize one frame: normalized signature mixture plus noise.
    pub(crate) fn synthesize(&self, window_index: usize, frame: usize, out: &mut [f64]) {
        out.fill(0.0);
        let mid = (frame as f64 + 0.5) * self.grid.frame_step;
        let mut any = false;
        for (timeline, sig) in &self.timelines {
            if timeline.iter().any(|s| s.onset <= mid && mid < s.end()) {
                for (o, &v) in out.iter_mut().zip(sig) {
                    *o += v;
                }
                any = true;
            }
        }
        if any {
            let norm: f64 = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for o in out.iter_mut() {
                    *o /= norm;
                }
            }
        }
        if self.noise_sigma > 0.0 {
            let key = ((window_index as u64) << 32) ^ frame as u64;
            let mut rng = window_rng(self.seed, key, 0x4654); // "FT"
            let normal =
                Normal::new(0.0, self.noise_sigma / (self.dim.max(1) as f64).sqrt()).unwrap();
            for o in out.iter_mut() {
                *o += normal.sample(&mut rng);
            }
        }
    }

    /// Materialize the whole stream with a single noise draw (window 0),
    /// e.g. for writing a feature file.
    pub fn materialize(&self) -> Vec<Vec<f64>> {
        (0..self.num_frames)
            .map(|g| {
                let mut row = vec![0.0; self.dim];
                self.synthesize(0, g, &mut row);
                row
            })
            .collect()
    }
}

impl FrameSource for OracleFrameSource {
    fn num_frames(&self) -> usize {
        self.num_frames
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn frame(&self, window_index: usize, frame: usize, out: &mut [f64]) {
        self.synthesize(window_index, frame, out);
    }
}

/// Shuffle speaker labels of an annotation deterministically; handy for
/// testing label-invariance of the scorer.
pub fn shuffle_labels(a: &Annotation, seed: u64) -> Annotation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = a.labels();
    labels.shuffle(&mut rng);
    let original = a.labels();
    let mut out = Annotation::new(a.uri.clone());
    for (seg, label) in a.segments() {
        let idx = original.iter().position(|l| l == label).unwrap();
        out.add(*seg, format!("ren_{}", labels[idx]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_deterministic() {
        let spec = FixtureSpec::default();
        let a = generate(&spec);
        let b = generate(&spec);
        assert_eq!(a.reference, b.reference);
        assert_eq!(a.signatures, b.signatures);
    }

    #[test]
    fn all_speakers_appear() {
        let f = generate(&FixtureSpec {
            speakers: 4,
            duration: 60.0,
            ..Default::default()
        });
        assert_eq!(f.reference.labels().len(), 4);
    }

    #[test]
    fn overlap_ratio_roughly_hit() {
        let f = generate(&FixtureSpec {
            duration: 600.0,
            overlap_ratio: 0.1,
            seed: 3,
            ..Default::default()
        });
        // measure overlapped speech by sampling
        let extent = f.reference.extent_end();
        let timelines: Vec<_> = f
            .reference
            .labels()
            .iter()
            .map(|l| f.reference.speaker_timeline(l))
            .collect();
        let mut overlap = 0usize;
        let mut speech = 0usize;
        let mut t = 0.0;
        while t < extent {
            let active = timelines
                .iter()
                .filter(|tl| tl.iter().any(|s| s.onset <= t && t < s.end()))
                .count();
            if active >= 1 {
                speech += active;
            }
            if active >= 2 {
                overlap += active;
            }
            t += 0.01;
        }
        let ratio = overlap as f64 / speech as f64;
        assert!(ratio > 0.02 && ratio < 0.3, "ratio {ratio}");
    }

    #[test]
    fn signatures_have_requested_similarity() {
        let f = generate(&FixtureSpec {
            speakers: 3,
            signature_similarity: 0.4,
            ..Default::default()
        });
        for i in 0..3 {
            let (_, a) = &f.signatures[i];
            let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
            for j in (i + 1)..3 {
                let (_, b) = &f.signatures[j];
                let cos: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                assert!((cos - 0.4).abs() < 1e-9, "cos {cos}");
            }
        }
    }

    #[test]
    fn oracle_source_noise_varies_per_window() {
        let f = generate(&FixtureSpec {
            noise_sigma: 0.2,
            duration: 20.0,
            ..Default::default()
        });
        let src = OracleFrameSource::new(&f);
        let mut a = vec![0.0; src.dim()];
        let mut b = vec![0.0; src.dim()];
        src.frame(0, 100, &mut a);
        src.frame(1, 100, &mut b);
        assert_ne!(a, b);
        let mut c = vec![0.0; src.dim()];
        src.frame(0, 100, &mut c);
        assert_eq!(a, c);
    }
}
