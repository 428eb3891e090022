//! Overlap-aware frame weighting and weighted statistics pooling.
//!
//! Weights derive from the segmentation probabilities:
//! `w_f = (s_f * softmax_k(beta * s_f))^gamma`. The softmax factor pushes
//! down frames where several speakers are active at once, and the exponent
//! pushes down low-confidence frames. Pooling then collapses frame
//! features into one (mean, std) embedding per locally active speaker.

use rand_distr::{Distribution, Normal};

use crate::ingest::{BufferWindow, FrameFeatures};
use crate::segmentation::{window_rng, LocalSpeakers, SegmentationMatrix};
use crate::timebase::{Annotation, FrameGrid};
use crate::{Error, Result};

/// Variance denominator below this yields a zero std vector (single-frame
/// support is legitimate in short speech turns).
const EPS_VAR: f64 = 1e-9;

/// Frame x channel pooling weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingWeights {
    pub weights: Vec<Vec<f64>>,
}

impl PoolingWeights {
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.weights.iter().map(|r| r[k]).collect()
    }
}

/// One pooled embedding for a locally active speaker.
#[derive(Debug, Clone)]
pub struct SpeakerEmbedding {
    /// Unit-normalized (mean, std) concatenation.
    pub vector: Vec<f64>,
    /// Activity mass in frames: sum of raw probabilities for the channel.
    pub activity_mass: f64,
    /// Local channel index the embedding was pooled from.
    pub channel: usize,
}

impl SpeakerEmbedding {
    /// Activity mass converted to seconds.
    pub fn activity_seconds(&self, frame_step: f64) -> f64 {
        self.activity_mass * frame_step
    }
}

/// Overlap-aware weights: `w_fk = (s_fk * softmax_k(beta * s_f)_k)^gamma`,
/// softmax taken over all channels including inactive ones.
pub fn overlap_weights(s: &SegmentationMatrix, beta: f64, gamma: f64) -> PoolingWeights {
    let weights = s
        .probs
        .iter()
        .map(|row| {
            let soft = softmax_scaled(row, beta);
            row.iter()
                .zip(soft.iter())
                .map(|(&p, &q)| (p * q).powf(gamma))
                .collect()
        })
        .collect();
    PoolingWeights { weights }
}

/// Ablation weighting: pass the activity probabilities through unchanged.
pub fn direct_weights(s: &SegmentationMatrix) -> PoolingWeights {
    PoolingWeights {
        weights: s.probs.clone(),
    }
}

fn softmax_scaled(row: &[f64], beta: f64) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(beta * b));
    let exps: Vec<f64> = row.iter().map(|&p| (beta * p - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Weighted mean and standard deviation over frames for one weight column.
///
/// `sigma^2 = sum_f w_f (x_f - mu)^2 / (W1 - W2 / W1)` with `W1 = sum w`,
/// `W2 = sum w^2`; for uniform unit weights this reduces to the unbiased
/// sample variance. A degenerate denominator yields sigma = 0.
pub fn weighted_stats_pool(x: &FrameFeatures, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    assert_eq!(x.num_frames(), w.len());
    let w1: f64 = w.iter().sum();
    if w1 <= 0.0 {
        return Err(Error::EmptySupport(0));
    }
    let dim = x.dim();
    let mut mu = vec![0.0; dim];
    for (row, &wf) in x.rows.iter().zip(w) {
        for (m, &v) in mu.iter_mut().zip(row) {
            *m += wf * v;
        }
    }
    for m in &mut mu {
        *m /= w1;
    }

    let w2: f64 = w.iter().map(|&v| v * v).sum();
    let denom = w1 - w2 / w1;
    let mut sigma = vec![0.0; dim];
    if denom > EPS_VAR {
        for (row, &wf) in x.rows.iter().zip(w) {
            for ((s, &v), &m) in sigma.iter_mut().zip(row).zip(mu.iter()) {
                let d = v - m;
                *s += wf * d * d;
            }
        }
        for s in &mut sigma {
            *s = (*s / denom).sqrt();
        }
    }
    Ok((mu, sigma))
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v {
            *x /= norm;
        }
    }
}

/// Pool one embedding per active channel: concat(mean, std), unit
/// normalized. Activity mass comes from the raw probabilities, not the
/// weights.
pub fn embed_locals(
    x: &FrameFeatures,
    w: &PoolingWeights,
    s: &SegmentationMatrix,
    locals: &LocalSpeakers,
) -> Result<Vec<SpeakerEmbedding>> {
    let mut out = Vec::with_capacity(locals.active.len());
    for &k in &locals.active {
        let col = w.column(k);
        let (mu, sigma) =
            weighted_stats_pool(x, &col).map_err(|_| Error::EmptySupport(k))?;
        let mut vector = mu;
        vector.extend(sigma);
        l2_normalize(&mut vector);
        out.push(SpeakerEmbedding {
            vector,
            activity_mass: s.activity_mass(k),
            channel: k,
        });
    }
    Ok(out)
}

/// Synthesize frame features for a window from per-speaker signature
/// vectors: each speech frame is the normalized sum of the signatures of
/// the speakers active there, plus isotropic noise with expected norm
/// `noise_sigma`; silence frames carry noise only.
pub fn oracle_frame_features(
    reference: &Annotation,
    window: &BufferWindow,
    grid: &FrameGrid,
    signatures: &[(String, Vec<f64>)],
    noise_sigma: f64,
    seed: u64,
) -> FrameFeatures {
    let f = grid.frames_per_window();
    let dim = signatures.first().map_or(0, |(_, v)| v.len());
    let timelines: Vec<_> = signatures
        .iter()
        .map(|(label, sig)| (reference.speaker_timeline(label), sig))
        .collect();
    let first = window.first_frame(grid);
    let mut rng = window_rng(seed, window.window_index as u64, 0x4654); // "FT"
    let normal = Normal::new(0.0, noise_sigma / (dim.max(1) as f64).sqrt()).unwrap();

    let mut rows = Vec::with_capacity(f);
    for i in 0..f {
        let g = first + i as i64;
        let mut row = vec![0.0; dim];
        if g >= 0 {
            let mid = (g as f64 + 0.5) * grid.frame_step;
            let mut any = false;
            for (timeline, sig) in &timelines {
                if timeline.iter().any(|s| s.onset <= mid && mid < s.end()) {
                    for (r, &v) in row.iter_mut().zip(sig.iter()) {
                        *r += v;
                    }
                    any = true;
                }
            }
            if any {
                l2_normalize(&mut row);
            }
            if noise_sigma > 0.0 {
                for r in &mut row {
                    *r += normal.sample(&mut rng);
                }
            }
        }
        rows.push(row);
    }
    FrameFeatures {
        start_time: window.start_time,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{open_stream, MemoryFrameSource};
    use crate::segmentation::oracle_segmentation;
    use crate::timebase::Segment;
    use rand::Rng as _;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matrix_of(rows: Vec<Vec<f64>>) -> SegmentationMatrix {
        let k_max = rows[0].len();
        SegmentationMatrix {
            probs: rows,
            window_index: 0,
            k_max,
        }
    }

    /// Independent high-precision evaluation of the weight formula, kept
    /// deliberately different from the implementation (no max-shift trick).
    fn naive_weight(row: &[f64], beta: f64, gamma: f64, k: usize) -> f64 {
        let z: f64 = row.iter().map(|&p| (beta * p).exp()).sum();
        let soft = (beta * row[k]).exp() / z;
        (row[k] * soft).powf(gamma)
    }

    #[test]
    fn overlap_weights_worked_examples() {
        let m = matrix_of(vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.8, 0.8, 0.0, 0.0],
        ]);
        let w = overlap_weights(&m, 10.0, 3.0);
        assert_eq!(w.weights[0], vec![0.0; 4]);

        // softmax(10,0,0,0)_0 = e^10 / (e^10 + 3)
        let soft = 10f64.exp() / (10f64.exp() + 3.0);
        assert!((w.weights[1][0] - soft.powi(3)).abs() < 1e-12);
        assert!((w.weights[1][0] - 0.9996).abs() < 1e-4);

        assert!((w.weights[2][0] - w.weights[2][1]).abs() < 1e-15);
        assert!((w.weights[2][0] - 0.0639).abs() < 5e-4);
        let expect = (0.8 * (8f64.exp() / (2.0 * 8f64.exp() + 2.0))).powi(3);
        assert!((w.weights[2][0] - expect).abs() < 1e-12);
    }

    #[test]
    fn overlap_weights_match_naive_evaluator() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let row: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let m = matrix_of(vec![row.clone()]);
            let w = overlap_weights(&m, 10.0, 3.0);
            for k in 0..4 {
                let expect = naive_weight(&row, 10.0, 3.0, k);
                assert!((w.weights[0][k] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn overlap_weights_gamma1_beta0_is_uniform_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let row: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let m = matrix_of(vec![row.clone()]);
            let w = overlap_weights(&m, 0.0, 1.0);
            for (k, r) in row.iter().enumerate() {
                assert!((w.weights[0][k] - r / 4.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn overlap_weights_below_direct_pow_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let row: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let m = matrix_of(vec![row.clone()]);
            let w = overlap_weights(&m, 10.0, 3.0);
            let d = direct_weights(&m);
            for k in 0..4 {
                assert!(w.weights[0][k] <= d.weights[0][k].powi(3) + 1e-15);
            }
        }
    }

    #[test]
    fn direct_weights_identity() {
        let m = matrix_of(vec![vec![0.3, 0.9, 0.0, 1.0]]);
        assert_eq!(direct_weights(&m).weights, m.probs);
    }

    fn features_of(rows: Vec<Vec<f64>>) -> FrameFeatures {
        FrameFeatures {
            start_time: 0.0,
            rows,
        }
    }

    #[test]
    fn pool_uniform_weights_is_plain_stats() {
        let x = features_of(vec![vec![1.0], vec![2.0], vec![3.0], vec![6.0]]);
        let (mu, sigma) = weighted_stats_pool(&x, &[1.0; 4]).unwrap();
        assert!((mu[0] - 3.0).abs() < 1e-12);
        // unbiased sample std of 1,2,3,6
        let var: f64 = (4.0 + 1.0 + 0.0 + 9.0) / 3.0;
        assert!((sigma[0] - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pool_hand_worked_example() {
        let x = features_of(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let (mu, sigma) = weighted_stats_pool(&x, &[1.0, 3.0]).unwrap();
        assert!((mu[0] - 2.5).abs() < 1e-12);
        assert!((mu[1] - 3.5).abs() < 1e-12);
        assert!((sigma[0] - 2f64.sqrt()).abs() < 1e-12);
        assert!((sigma[1] - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pool_single_support_degenerates_to_zero_std() {
        let x = features_of(vec![vec![1.0, 2.0], vec![5.0, 7.0]]);
        let (mu, sigma) = weighted_stats_pool(&x, &[0.0, 0.4]).unwrap();
        assert_eq!(mu, vec![5.0, 7.0]);
        assert_eq!(sigma, vec![0.0, 0.0]);
    }

    #[test]
    fn pool_zero_weights_rejected() {
        let x = features_of(vec![vec![1.0]]);
        assert!(matches!(
            weighted_stats_pool(&x, &[0.0]),
            Err(Error::EmptySupport(_))
        ));
    }

    #[test]
    fn pool_invariant_under_weight_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = features_of(
                (0..8)
                    .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
                    .collect(),
            );
            let w: Vec<f64> = (0..8).map(|_| rng.gen_range(0.01..1.0)).collect();
            let scaled: Vec<f64> = w.iter().map(|v| v * 37.5).collect();
            let (mu1, s1) = weighted_stats_pool(&x, &w).unwrap();
            let (mu2, s2) = weighted_stats_pool(&x, &scaled).unwrap();
            for d in 0..3 {
                assert!((mu1[d] - mu2[d]).abs() <= 1e-12 * mu1[d].abs().max(1.0));
                assert!((s1[d] - s2[d]).abs() <= 1e-12 * s1[d].abs().max(1.0));
            }
        }
    }

    #[test]
    fn pool_mean_in_convex_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let w: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
            if w.iter().sum::<f64>() == 0.0 {
                continue;
            }
            let x = features_of(rows.clone());
            let (mu, _) = weighted_stats_pool(&x, &w).unwrap();
            for d in 0..2 {
                let lo = rows.iter().map(|r| r[d]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r[d]).fold(f64::NEG_INFINITY, f64::max);
                assert!(mu[d] >= lo - 1e-12 && mu[d] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn embed_locals_unit_norm_and_channels() {
        let m = matrix_of(vec![vec![1.0, 0.0, 0.8, 0.0]; 4]);
        let x = features_of(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![0.5, 0.2],
        ]);
        let locals = active_speakers_of(&m);
        let w = overlap_weights(&m, 10.0, 3.0);
        let embeddings = embed_locals(&x, &w, &m, &locals).unwrap();
        assert_eq!(embeddings.len(), 2);
        assert_eq!(embeddings[0].channel, 0);
        assert_eq!(embeddings[1].channel, 2);
        for e in &embeddings {
            let norm: f64 = e.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
        assert!((embeddings[0].activity_mass - 4.0).abs() < 1e-12);
        assert!((embeddings[1].activity_mass - 3.2).abs() < 1e-12);
    }

    fn active_speakers_of(m: &SegmentationMatrix) -> LocalSpeakers {
        crate::segmentation::active_speakers(m, 0.5)
    }

    #[test]
    fn split_turn_yields_one_embedding() {
        // speaker active in two separate turns within the window
        let mut rows = vec![vec![0.0; 4]; 100];
        for r in rows.iter_mut().take(20) {
            r[1] = 1.0;
        }
        for r in rows.iter_mut().skip(70).take(20) {
            r[1] = 1.0;
        }
        let m = matrix_of(rows);
        let x = features_of(vec![vec![1.0, 0.5]; 100]);
        let locals = active_speakers_of(&m);
        let embeddings =
            embed_locals(&x, &direct_weights(&m), &m, &locals).unwrap();
        assert_eq!(embeddings.len(), 1);
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn overlap_weights_beat_direct_on_overlap_fixture() {
        // two speakers, half the window overlapped; overlap-aware pooling
        // should land closer to the true signature than direct pooling
        let grid = FrameGrid::default();
        let mut reference = Annotation::new("u");
        reference.add(Segment::new(0.0, 5.0).unwrap(), "A");
        reference.add(Segment::new(2.5, 2.5).unwrap(), "B");
        let dim = 8;
        let mut sig_a = vec![0.0; dim];
        sig_a[0] = 1.0;
        let mut sig_b = vec![0.0; dim];
        sig_b[1] = 1.0;
        let signatures = vec![("A".to_string(), sig_a.clone()), ("B".to_string(), sig_b)];

        let src = MemoryFrameSource::new(vec![vec![0.0; dim]; 313]);
        let window = open_stream(&src, grid, false).next().unwrap();
        let x = oracle_frame_features(&reference, &window, &grid, &signatures, 0.0, 0);
        let s = oracle_segmentation(&reference, &window, &grid, 4, 0).unwrap();
        let locals = crate::segmentation::active_speakers(&s, 0.5);

        // channel carrying speaker A: active over the whole window
        let chan_a = *locals
            .active
            .iter()
            .max_by(|a, b| s.activity_mass(**a).total_cmp(&s.activity_mass(**b)))
            .unwrap();
        let idx = locals.active.iter().position(|c| *c == chan_a).unwrap();

        let aware = embed_locals(&x, &overlap_weights(&s, 10.0, 3.0), &s, &locals).unwrap();
        let direct = embed_locals(&x, &direct_weights(&s), &s, &locals).unwrap();

        let mut target = sig_a;
        target.extend(vec![0.0; dim]); // (mean, std) layout
        let cos_aware = cosine(&aware[idx].vector, &target);
        let cos_direct = cosine(&direct[idx].vector, &target);
        assert!(
            cos_aware > cos_direct,
            "aware {cos_aware} vs direct {cos_direct}"
        );
    }

    #[test]
    fn oracle_features_solo_and_overlap_frames() {
        let grid = FrameGrid::default();
        let mut reference = Annotation::new("u");
        reference.add(Segment::new(0.0, 2.0).unwrap(), "A");
        reference.add(Segment::new(1.0, 3.0).unwrap(), "B");
        let sig_a = vec![1.0, 0.0];
        let sig_b = vec![0.0, 1.0];
        let signatures = vec![("A".to_string(), sig_a.clone()), ("B".to_string(), sig_b.clone())];
        let src = MemoryFrameSource::new(vec![vec![0.0; 2]; 313]);
        let window = open_stream(&src, grid, false).next().unwrap();
        let x = oracle_frame_features(&reference, &window, &grid, &signatures, 0.0, 0);

        let solo = grid.time_to_frame(0.5).unwrap();
        assert_eq!(x.rows[solo], sig_a);
        let overlap = grid.time_to_frame(1.5).unwrap();
        assert!((cosine(&x.rows[overlap], &sig_a) - cosine(&x.rows[overlap], &sig_b)).abs() < 1e-12);
        let silence = grid.time_to_frame(4.8).unwrap();
        assert_eq!(x.rows[silence], vec![0.0, 0.0]);
    }

    #[test]
    fn oracle_features_noise_keeps_cosine_high() {
        // Monte-Carlo: at sigma = 0.1 and D = 32, per-frame cosine to the
        // true signature should exceed 0.9 virtually always
        let grid = FrameGrid::default();
        let mut reference = Annotation::new("u");
        reference.add(Segment::new(0.0, 5.0).unwrap(), "A");
        let dim = 32;
        let mut sig = vec![0.0; dim];
        sig[0] = 1.0;
        let signatures = vec![("A".to_string(), sig.clone())];
        let src = MemoryFrameSource::new(vec![vec![0.0; dim]; 320]);

        let mut total = 0usize;
        let mut good = 0usize;
        for seed in 0..40u64 {
            let window = open_stream(&src, grid, false).next().unwrap();
            let x = oracle_frame_features(&reference, &window, &grid, &signatures, 0.1, seed);
            for row in &x.rows {
                total += 1;
                if cosine(row, &sig) > 0.9 {
                    good += 1;
                }
            }
        }
        assert!(total > 10_000);
        assert!(good as f64 / total as f64 >= 0.99, "{good}/{total}");
    }
}
