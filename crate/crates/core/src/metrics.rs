//! Diarization error rate scoring: no forgiveness collar, overlapped
//! speech fully counted.
//!
//! The timeline is partitioned at every segment boundary; within a region
//! the sets of active reference and hypothesis speakers are constant, so
//! missed speech, false alarm and speaker confusion reduce to counting
//! speakers per region. Hypothesis labels are mapped one-to-one onto
//! reference labels by maximizing total co-occurrence duration.

use std::collections::BTreeMap;

use crate::assignment::constrained_assign;
use crate::timebase::{Annotation, Segment};
use crate::{Error, Result};

/// DER components in seconds plus the rate itself.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DerBreakdown {
    pub false_alarm: f64,
    pub missed: f64,
    pub confusion: f64,
    pub total_reference: f64,
    pub der: f64,
}

impl DerBreakdown {
    fn finish(mut self) -> Self {
        let errors = self.false_alarm + self.missed + self.confusion;
        self.der = if self.total_reference > 0.0 {
            errors / self.total_reference
        } else if errors > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        self
    }
}

/// Merged timeline per label.
fn timelines(a: &Annotation) -> Vec<(String, Vec<Segment>)> {
    a.labels()
        .into_iter()
        .map(|l| {
            let t = a.speaker_timeline(&l);
            (l, t)
        })
        .collect()
}

fn covers(timeline: &[Segment], t: f64) -> bool {
    timeline.iter().any(|s| s.onset <= t && t < s.end())
}

fn cooccurrence(a: &[Segment], b: &[Segment]) -> f64 {
    let mut total = 0.0;
    for x in a {
        for y in b {
            total += x.intersection(y);
        }
    }
    total
}

/// One-to-one partial mapping from hypothesis labels to reference labels
/// maximizing total co-occurrence duration.
pub fn optimal_label_mapping(
    reference: &Annotation,
    hypothesis: &Annotation,
) -> BTreeMap<String, String> {
    let ref_tl = timelines(reference);
    let hyp_tl = timelines(hypothesis);
    if ref_tl.is_empty() || hyp_tl.is_empty() {
        return BTreeMap::new();
    }
    // minimize negated overlap; unmatched rows cost 0, matching the
    // convention that an unmapped hypothesis speaker contributes nothing
    let cost: Vec<Vec<f64>> = hyp_tl
        .iter()
        .map(|(_, h)| ref_tl.iter().map(|(_, r)| -cooccurrence(h, r)).collect())
        .collect();
    let mapping = constrained_assign(&cost);
    let mut out = BTreeMap::new();
    for (i, target) in mapping.iter().enumerate() {
        if let Some(j) = target {
            if -cost[i][*j] > 0.0 {
                out.insert(hyp_tl[i].0.clone(), ref_tl[*j].0.clone());
            }
        }
    }
    out
}

/// Score with a fixed hypothesis-to-reference label mapping.
pub fn score_with_mapping(
    reference: &Annotation,
    hypothesis: &Annotation,
    mapping: &BTreeMap<String, String>,
) -> DerBreakdown {
    let ref_tl = timelines(reference);
    let hyp_tl = timelines(hypothesis);

    let mut boundaries: Vec<f64> = Vec::new();
    for (_, tl) in ref_tl.iter().chain(hyp_tl.iter()) {
        for s in tl {
            boundaries.push(s.onset);
            boundaries.push(s.end());
        }
    }
    boundaries.sort_by(f64::total_cmp);
    boundaries.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut out = DerBreakdown {
        total_reference: reference.total_speech(),
        ..Default::default()
    };
    for pair in boundaries.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let len = b - a;
        if len <= 0.0 {
            continue;
        }
        let mid = 0.5 * (a + b);
        let ref_active: Vec<&String> = ref_tl
            .iter()
            .filter(|(_, tl)| covers(tl, mid))
            .map(|(l, _)| l)
            .collect();
        let hyp_active: Vec<&String> = hyp_tl
            .iter()
            .filter(|(_, tl)| covers(tl, mid))
            .map(|(l, _)| l)
            .collect();
        let r = ref_active.len() as f64;
        let h = hyp_active.len() as f64;
        let matched = hyp_active
            .iter()
            .filter(|hl| {
                mapping
                    .get(**hl)
                    .map(|rl| ref_active.contains(&rl))
                    .unwrap_or(false)
            })
            .count() as f64;
        out.missed += len * (r - h).max(0.0);
        out.false_alarm += len * (h - r).max(0.0);
        out.confusion += len * (r.min(h) - matched);
    }
    out.finish()
}

/// Diarization error rate with optimal label mapping, no collar, overlap
/// regions fully counted.
pub fn der(reference: &Annotation, hypothesis: &Annotation) -> Result<DerBreakdown> {
    if reference.uri != hypothesis.uri {
        return Err(Error::UriMismatch {
            reference: reference.uri.clone(),
            hypothesis: hypothesis.uri.clone(),
        });
    }
    let mapping = optimal_label_mapping(reference, hypothesis);
    Ok(score_with_mapping(reference, hypothesis, &mapping))
}

/// DER restricted to consecutive `bin_size` windows, with the label
/// mapping fixed once from the whole file.
pub fn local_der_curve(
    reference: &Annotation,
    hypothesis: &Annotation,
    bin_size: f64,
) -> Result<Vec<(f64, DerBreakdown)>> {
    if bin_size <= 0.0 {
        return Err(Error::InvalidConfig(format!("bad bin size {bin_size}")));
    }
    if reference.uri != hypothesis.uri {
        return Err(Error::UriMismatch {
            reference: reference.uri.clone(),
            hypothesis: hypothesis.uri.clone(),
        });
    }
    let mapping = optimal_label_mapping(reference, hypothesis);
    let extent = reference.extent_end().max(hypothesis.extent_end());
    let bins = (extent / bin_size).ceil().max(1.0) as usize;
    let mut out = Vec::with_capacity(bins);
    for i in 0..bins {
        let lo = i as f64 * bin_size;
        let hi = lo + bin_size;
        let r = reference.crop(lo, hi);
        let h = hypothesis.crop(lo, hi);
        out.push((lo, score_with_mapping(&r, &h, &mapping)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ann(uri: &str, segs: &[(f64, f64, &str)]) -> Annotation {
        let mut a = Annotation::new(uri);
        for &(onset, dur, label) in segs {
            a.add(Segment::new(onset, dur).unwrap(), label);
        }
        a
    }

    #[test]
    fn perfect_hypothesis_scores_zero() {
        let r = ann("u", &[(0.0, 10.0, "A"), (5.0, 10.0, "B")]);
        let b = der(&r, &r).unwrap();
        assert!(b.der.abs() < 1e-12);
        assert!(b.false_alarm.abs() < 1e-12);
        assert!((b.total_reference - 20.0).abs() < 1e-12);
    }

    #[test]
    fn renamed_labels_score_zero() {
        let r = ann("u", &[(0.0, 10.0, "A"), (5.0, 10.0, "B")]);
        let h = ann("u", &[(0.0, 10.0, "x9"), (5.0, 10.0, "x3")]);
        assert!(der(&r, &h).unwrap().der.abs() < 1e-12);
        let m = optimal_label_mapping(&r, &h);
        assert_eq!(m.get("x9").unwrap(), "A");
        assert_eq!(m.get("x3").unwrap(), "B");
    }

    #[test]
    fn missed_detection_worked_example() {
        let r = ann("u", &[(0.0, 10.0, "A")]);
        let h = ann("u", &[(0.0, 8.0, "X")]);
        let b = der(&r, &h).unwrap();
        assert!((b.missed - 2.0).abs() < 1e-12);
        assert!(b.false_alarm.abs() < 1e-12);
        assert!(b.confusion.abs() < 1e-12);
        assert!((b.der - 0.2).abs() < 1e-12);
    }

    #[test]
    fn confusion_worked_example() {
        let r = ann("u", &[(0.0, 10.0, "A")]);
        let h = ann("u", &[(0.0, 5.0, "X"), (5.0, 5.0, "Y")]);
        let b = der(&r, &h).unwrap();
        assert!((b.confusion - 5.0).abs() < 1e-12);
        assert!((b.der - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_hypothesis_all_missed() {
        let r = ann("u", &[(0.0, 10.0, "A")]);
        let h = Annotation::new("u");
        let b = der(&r, &h).unwrap();
        assert!((b.missed - 10.0).abs() < 1e-12);
        assert!(optimal_label_mapping(&r, &h).is_empty());
    }

    #[test]
    fn uri_mismatch_rejected() {
        let r = ann("a", &[(0.0, 1.0, "A")]);
        let h = ann("b", &[(0.0, 1.0, "A")]);
        assert!(matches!(der(&r, &h), Err(Error::UriMismatch { .. })));
    }

    /// Independent oracle: enumerate every injective hypothesis-to-
    /// reference label mapping and keep the lowest DER.
    pub(crate) fn brute_force_der(reference: &Annotation, hypothesis: &Annotation) -> DerBreakdown {
        let ref_labels = reference.labels();
        let hyp_labels = hypothesis.labels();
        let mut best: Option<DerBreakdown> = None;
        let mut assignment: Vec<Option<usize>> = vec![None; hyp_labels.len()];
        fn recurse(
            reference: &Annotation,
            hypothesis: &Annotation,
            ref_labels: &[String],
            hyp_labels: &[String],
            idx: usize,
            assignment: &mut Vec<Option<usize>>,
            best: &mut Option<DerBreakdown>,
        ) {
            if idx == hyp_labels.len() {
                let mut mapping = BTreeMap::new();
                for (h, r) in assignment.iter().enumerate() {
                    if let Some(r) = r {
                        mapping.insert(hyp_labels[h].clone(), ref_labels[*r].clone());
                    }
                }
                let b = score_with_mapping(reference, hypothesis, &mapping);
                if best.is_none_or(|x| b.der < x.der) {
                    *best = Some(b);
                }
                return;
            }
            recurse(reference, hypothesis, ref_labels, hyp_labels, idx + 1, assignment, best);
            for r in 0..ref_labels.len() {
                if assignment.contains(&Some(r)) {
                    continue;
                }
                assignment[idx] = Some(r);
                recurse(reference, hypothesis, ref_labels, hyp_labels, idx + 1, assignment, best);
                assignment[idx] = None;
            }
        }
        recurse(
            reference,
            hypothesis,
            &ref_labels,
            &hyp_labels,
            0,
            &mut assignment,
            &mut best,
        );
        best.unwrap_or_default()
    }

    pub(crate) fn random_annotation(rng: &mut ChaCha8Rng, uri: &str, speakers: usize) -> Annotation {
        let mut a = Annotation::new(uri);
        for s in 0..speakers {
            let turns = rng.gen_range(1..=3);
            for _ in 0..turns {
                let onset = rng.gen_range(0.0..20.0);
                let dur = rng.gen_range(0.5..6.0);
                a.add(Segment::new(onset, dur).unwrap(), format!("s{s}"));
            }
        }
        a
    }

    #[test]
    fn der_matches_brute_force_on_random_fixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..60 {
            let n_ref = rng.gen_range(1..=4);
            let r = random_annotation(&mut rng, "u", n_ref);
            let h = {
                let n_hyp = rng.gen_range(1..=4);
                let mut h = random_annotation(&mut rng, "u", n_hyp);
                let relabeled: Vec<_> = h
                    .segments()
                    .iter()
                    .map(|(s, l)| (*s, format!("h_{l}")))
                    .collect();
                h = Annotation::new("u");
                for (s, l) in relabeled {
                    h.add(s, l);
                }
                h
            };
            let fast = der(&r, &h).unwrap();
            let brute = brute_force_der(&r, &h);
            assert!(
                (fast.der - brute.der).abs() < 1e-9,
                "trial {trial}: {} vs {}",
                fast.der,
                brute.der
            );
            assert!((fast.confusion - brute.confusion).abs() < 1e-9);
        }
    }

    #[test]
    fn local_curve_perfect_and_locality() {
        let r = ann("u", &[(0.0, 10.0, "A"), (12.0, 5.0, "B")]);
        let curve = local_der_curve(&r, &r, 5.0).unwrap();
        assert!(curve.iter().all(|(_, b)| b.der.abs() < 1e-12));

        // error confined to the first bin
        let h = ann("u", &[(0.0, 8.0, "A"), (12.0, 5.0, "B")]);
        let mut h2 = Annotation::new("u");
        for (s, l) in h.segments() {
            h2.add(*s, l.clone());
        }
        let curve = local_der_curve(&r, &h2, 10.0).unwrap();
        assert!(curve[0].1.missed > 0.0);
        assert!(curve[1].1.missed.abs() < 1e-12);
    }

    #[test]
    fn local_curve_components_sum_to_global() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let r = random_annotation(&mut rng, "u", 3);
            let h = random_annotation(&mut rng, "u", 3);
            let global = der(&r, &h).unwrap();
            let curve = local_der_curve(&r, &h, 4.0).unwrap();
            let fa: f64 = curve.iter().map(|(_, b)| b.false_alarm).sum();
            let miss: f64 = curve.iter().map(|(_, b)| b.missed).sum();
            let conf: f64 = curve.iter().map(|(_, b)| b.confusion).sum();
            assert!((fa - global.false_alarm).abs() < 1e-9);
            assert!((miss - global.missed).abs() < 1e-9);
            assert!((conf - global.confusion).abs() < 1e-9);
        }
    }
}
