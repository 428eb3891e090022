//! Frame/time arithmetic and the core annotation types.
//!
//! All times are 64-bit floating seconds. Frame indexing uses a single
//! global grid of `frame_step`-sized frames; frame `i` covers
//! `[i * frame_step, (i + 1) * frame_step)`.

use crate::{Error, Result};

/// Guard against quotients like `4.992 / 0.016` landing a hair below an
/// integer before flooring.
const FLOOR_EPS: f64 = 1e-9;

/// Floor of `x` that tolerates float round-off just below an integer.
pub(crate) fn floor_eps(x: f64) -> i64 {
    (x + FLOOR_EPS).floor() as i64
}

/// Frame geometry shared by every module: frame step, rolling-buffer
/// duration and hop between consecutive buffer positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGrid {
    pub frame_step: f64,
    pub window_duration: f64,
    pub hop: f64,
}

impl Default for FrameGrid {
    fn default() -> Self {
        Self {
            frame_step: 0.016,
            window_duration: 5.0,
            hop: 0.5,
        }
    }
}

impl FrameGrid {
    pub fn new(frame_step: f64, window_duration: f64, hop: f64) -> Result<Self> {
        let grid = Self {
            frame_step,
            window_duration,
            hop,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_step > 0.0 && self.frame_step.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "frame_step must be positive, got {}",
                self.frame_step
            )));
        }
        if !(self.window_duration > 0.0 && self.window_duration.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "window_duration must be positive, got {}",
                self.window_duration
            )));
        }
        if !(self.hop > 0.0 && self.hop.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "hop must be positive, got {}",
                self.hop
            )));
        }
        if self.hop > self.window_duration {
            return Err(Error::InvalidConfig(format!(
                "hop {} exceeds window_duration {}",
                self.hop, self.window_duration
            )));
        }
        if self.frames_per_window() < 1 {
            return Err(Error::InvalidConfig(
                "window shorter than one frame".into(),
            ));
        }
        Ok(())
    }

    /// Number of whole frames in one window; constant for a run.
    pub fn frames_per_window(&self) -> usize {
        floor_eps(self.window_duration / self.frame_step).max(0) as usize
    }

    /// Map a time to the index of the frame containing it.
    pub fn time_to_frame(&self, t: f64) -> Result<usize> {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::NegativeTime(t));
        }
        Ok(floor_eps(t / self.frame_step) as usize)
    }

    /// Onset time of a frame.
    pub fn frame_to_time(&self, frame: usize) -> f64 {
        frame as f64 * self.frame_step
    }
}

/// A contiguous stretch of time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub onset: f64,
    pub duration: f64,
}

impl Segment {
    pub fn new(onset: f64, duration: f64) -> Result<Self> {
        if !(onset >= 0.0 && onset.is_finite()) {
            return Err(Error::InvalidConfig(format!("bad segment onset {onset}")));
        }
        if !(duration > 0.0 && (onset + duration).is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "bad segment duration {duration}"
            )));
        }
        Ok(Self { onset, duration })
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }

    /// Overlap duration with another segment (0 when disjoint).
    pub fn intersection(&self, other: &Segment) -> f64 {
        (self.end().min(other.end()) - self.onset.max(other.onset)).max(0.0)
    }
}

/// A diarization timeline: who spoke when, overlap between different
/// speakers allowed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Annotation {
    pub uri: String,
    segments: Vec<(Segment, String)>,
}

impl Annotation {
    pub fn new(uri: impl Into<String>) -> Self {
        Self {
            uri: uri.into(),
            segments: Vec::new(),
        }
    }

    /// Insert a labeled segment, keeping the list sorted by onset.
    pub fn add(&mut self, segment: Segment, label: impl Into<String>) {
        let label = label.into();
        debug_assert!(!label.is_empty());
        let pos = self
            .segments
            .partition_point(|(s, _)| s.onset <= segment.onset);
        self.segments.insert(pos, (segment, label));
    }

    pub fn segments(&self) -> &[(Segment, String)] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Distinct labels in first-appearance order.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (_, l) in &self.segments {
            if !out.iter().any(|x| x == l) {
                out.push(l.clone());
            }
        }
        out
    }

    /// End of the last segment, 0 when empty.
    pub fn extent_end(&self) -> f64 {
        self.segments
            .iter()
            .map(|(s, _)| s.end())
            .fold(0.0, f64::max)
    }

    /// Merged (union) intervals for one speaker.
    pub fn speaker_timeline(&self, label: &str) -> Vec<Segment> {
        let mut intervals: Vec<Segment> = self
            .segments
            .iter()
            .filter(|(_, l)| l == label)
            .map(|(s, _)| *s)
            .collect();
        intervals.sort_by(|a, b| a.onset.total_cmp(&b.onset));
        merge_intervals(&intervals)
    }

    /// Total speech: sum over speakers of the measure of the union of that
    /// speaker's intervals. This is the DER denominator.
    pub fn total_speech(&self) -> f64 {
        self.labels()
            .iter()
            .map(|l| {
                self.speaker_timeline(l)
                    .iter()
                    .map(|s| s.duration)
                    .sum::<f64>()
            })
            .sum()
    }

    /// Restrict to `[start, end)`, cropping segments at the boundary.
    pub fn crop(&self, start: f64, end: f64) -> Annotation {
        let mut out = Annotation::new(self.uri.clone());
        for (seg, label) in &self.segments {
            let lo = seg.onset.max(start);
            let hi = seg.end().min(end);
            if hi - lo > 0.0 {
                out.add(
                    Segment {
                        onset: lo,
                        duration: hi - lo,
                    },
                    label.clone(),
                );
            }
        }
        out
    }
}

/// Merge touching or overlapping sorted intervals.
fn merge_intervals(sorted: &[Segment]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for seg in sorted {
        match out.last_mut() {
            Some(last) if seg.onset <= last.end() => {
                let end = last.end().max(seg.end());
                last.duration = end - last.onset;
            }
            _ => out.push(*seg),
        }
    }
    out
}
