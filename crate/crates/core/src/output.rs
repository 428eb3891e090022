//! Latency-controlled output assembly.
//!
//! Each window contributes only its rightmost `[t - lambda, t]` region.
//! With `lambda` equal to the hop those regions tile the stream; with a
//! larger `lambda` several windows cover each frame and their activity
//! probabilities are averaged before the final thresholding. A frame is
//! finalized once no future window can still touch it, and finalized
//! output is never revised.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::ingest::BufferWindow;
use crate::segmentation::SegmentationMatrix;
use crate::timebase::{floor_eps, Annotation, FrameGrid, Segment};
use crate::{Error, Result};

/// Globally relabeled probabilities for the emitted part of one window.
#[derive(Debug, Clone)]
pub struct GlobalSlice {
    pub window_index: usize,
    /// Absolute frame range `[start_frame, end_frame)`.
    pub start_frame: usize,
    pub end_frame: usize,
    /// Active global labels, parallel to the columns of `probs`.
    pub labels: Vec<String>,
    /// One row per frame in the range.
    pub probs: Vec<Vec<f64>>,
}

/// Exclusive global end frame of a (possibly virtual) window ending at
/// `end_time`; mirrors the warm-up padding convention of the ingest
/// module so slice boundaries line up with window boundaries exactly.
fn global_end_frame(grid: &FrameGrid, end_time: f64) -> i64 {
    let f = grid.frames_per_window() as i64;
    if end_time < grid.window_duration - 1e-9 {
        f - floor_eps((grid.window_duration - end_time) / grid.frame_step)
    } else {
        floor_eps(end_time / grid.frame_step)
    }
}

/// Keep only active channels, rename them to global labels, and trim to
/// the rightmost `latency` of the window. `already_covered` (the
/// accumulator's coverage) guards against leaving a gap before a final
/// partial-hop window.
pub fn relabel(
    s: &SegmentationMatrix,
    label_map: &[(usize, String)],
    window: &BufferWindow,
    grid: &FrameGrid,
    latency: f64,
    already_covered: Option<usize>,
) -> GlobalSlice {
    let first_frame = window.first_frame(grid);
    let hi = window.end_frame;
    let mut lo = global_end_frame(grid, window.end_time - latency)
        .max(first_frame)
        .max(0) as usize;
    if let Some(covered) = already_covered {
        lo = lo.min(covered);
    }
    lo = lo.max(first_frame.max(0) as usize).min(hi);

    let labels: Vec<String> = label_map.iter().map(|(_, l)| l.clone()).collect();
    let mut probs = Vec::with_capacity(hi - lo);
    for g in lo..hi {
        let row_index = (g as i64 - first_frame) as usize;
        let row = &s.probs[row_index];
        probs.push(label_map.iter().map(|(ch, _)| row[*ch]).collect());
    }
    GlobalSlice {
        window_index: window.window_index,
        start_frame: lo,
        end_frame: hi,
        labels,
        probs,
    }
}

/// One finalized frame: averaged probability per global label.
#[derive(Debug, Clone)]
pub struct FinalizedFrame {
    pub frame: usize,
    /// Label to averaged probability, deterministic label order.
    pub probs: Vec<(String, f64)>,
}

/// Accumulates slices in window order and finalizes frames once all
/// contributing windows have reported. A label absent from a contributing
/// slice counts as probability zero from that slice.
#[derive(Debug, Default)]
pub struct FrameAccumulator {
    next_window: usize,
    /// First pending frame; everything below is finalized.
    base: usize,
    started: bool,
    counts: Vec<u32>,
    sums: BTreeMap<String, Vec<f64>>,
}

impl FrameAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Exclusive upper bound of frames touched so far.
    pub fn covered(&self) -> usize {
        self.base + self.counts.len()
    }

    /// Add a slice and return the frames it finalizes (all frames below
    /// the slice's start, which no later window can touch).
    pub fn aggregate(&mut self, slice: &GlobalSlice) -> Result<Vec<FinalizedFrame>> {
        if slice.window_index < self.next_window {
            return Err(Error::OrderViolation {
                expected: self.next_window,
                got: slice.window_index,
            });
        }
        self.next_window = slice.window_index + 1;
        if !self.started {
            self.base = slice.start_frame;
            self.started = true;
        }

        if slice.end_frame > self.covered() {
            let grow = slice.end_frame - self.covered();
            self.counts.extend(std::iter::repeat_n(0, grow));
            for col in self.sums.values_mut() {
                col.extend(std::iter::repeat_n(0.0, grow));
            }
        }
        let width = self.counts.len();
        for label in &slice.labels {
            self.sums
                .entry(label.clone())
                .or_insert_with(|| vec![0.0; width]);
        }
        for (i, row) in slice.probs.iter().enumerate() {
            let offset = slice.start_frame + i - self.base;
            self.counts[offset] += 1;
            for (label, &p) in slice.labels.iter().zip(row) {
                self.sums.get_mut(label).unwrap()[offset] += p;
            }
        }

        Ok(self.finalize_below(slice.start_frame))
    }

    /// Finalize everything still pending (end of stream).
    pub fn flush(&mut self) -> Vec<FinalizedFrame> {
        self.finalize_below(self.covered())
    }

    fn finalize_below(&mut self, frame: usize) -> Vec<FinalizedFrame> {
        let n = frame.saturating_sub(self.base).min(self.counts.len());
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let count = self.counts[i];
            let probs = self
                .sums
                .iter()
                .map(|(label, col)| {
                    let p = if count > 0 { col[i] / count as f64 } else { 0.0 };
                    (label.clone(), p)
                })
                .collect();
            out.push(FinalizedFrame {
                frame: self.base + i,
                probs,
            });
        }
        self.counts.drain(..n);
        for col in self.sums.values_mut() {
            col.drain(..n);
        }
        self.base += n;
        out
    }
}

/// Streaming binarizer: turns finalized frames into maximal per-speaker
/// segment runs with `prob > tau_active` (strict).
#[derive(Debug)]
pub struct Binarizer {
    tau_active: f64,
    frame_step: f64,
    /// Open run start frame per label.
    open: BTreeMap<String, usize>,
    annotation: Annotation,
}

impl Binarizer {
    pub fn new(uri: impl Into<String>, tau_active: f64, frame_step: f64) -> Self {
        Self {
            tau_active,
            frame_step,
            open: BTreeMap::new(),
            annotation: Annotation::new(uri),
        }
    }

    pub fn push(&mut self, frame: &FinalizedFrame) {
        for (label, p) in &frame.probs {
            let p = *p;
            let active = p > self.tau_active;
            match (active, self.open.get(label.as_str())) {
                (true, None) => {
                    self.open.insert(label.clone(), frame.frame);
                }
                (false, Some(&start)) => {
                    self.close(label.clone(), start, frame.frame);
                }
                _ => {}
            }
        }
        // labels that disappeared from the maps entirely keep their runs;
        // the accumulator always reports every known label, so this only
        // matters at flush time
    }

    fn close(&mut self, label: String, start: usize, end: usize) {
        self.open.remove(&label);
        if end > start {
            let onset = start as f64 * self.frame_step;
            let duration = (end - start) as f64 * self.frame_step;
            self.annotation.add(Segment { onset, duration }, label);
        }
    }

    /// Close open runs at `end_frame` and return the annotation.
    pub fn finish(mut self, end_frame: usize) -> Annotation {
        let open: Vec<(String, usize)> =
            self.open.iter().map(|(l, s)| (l.clone(), *s)).collect();
        for (label, start) in open {
            self.close(label, start, end_frame);
        }
        self.annotation
    }
}

/// Batch binarization over a full finalized stream.
pub fn binarize(
    frames: &[FinalizedFrame],
    tau_active: f64,
    uri: &str,
    frame_step: f64,
) -> Annotation {
    let mut b = Binarizer::new(uri, tau_active, frame_step);
    for f in frames {
        b.push(f);
    }
    let end = frames.last().map_or(0, |f| f.frame + 1);
    b.finish(end)
}

/// Serialize an annotation as RTTM, onset/duration fixed to 3 decimals.
pub fn write_rttm(annotation: &Annotation, sink: &mut dyn Write) -> Result<()> {
    for (segment, label) in annotation.segments() {
        if label.chars().any(char::is_whitespace) || annotation.uri.chars().any(char::is_whitespace)
        {
            return Err(Error::InvalidConfig(format!(
                "RTTM labels and uris must not contain whitespace: '{label}'"
            )));
        }
        writeln!(
            sink,
            "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
            annotation.uri, segment.onset, segment.duration, label
        )?;
    }
    Ok(())
}

pub fn rttm_to_string(annotation: &Annotation) -> Result<String> {
    let mut buf = Vec::new();
    write_rttm(annotation, &mut buf)?;
    Ok(String::from_utf8(buf).expect("rttm output is ascii"))
}

/// Parse RTTM text into one annotation per uri, in order of appearance.
pub fn parse_rttm(source: impl BufRead) -> Result<Vec<Annotation>> {
    let mut by_uri: Vec<Annotation> = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let number = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with(';') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 8 || fields[0] != "SPEAKER" {
            return Err(Error::ParseError {
                line: number,
                message: format!("expected 'SPEAKER <uri> 1 <onset> <dur> ...', got '{trimmed}'"),
            });
        }
        let uri = fields[1];
        let onset: f64 = fields[3].parse().map_err(|_| Error::ParseError {
            line: number,
            message: format!("bad onset '{}'", fields[3]),
        })?;
        let duration: f64 = fields[4].parse().map_err(|_| Error::ParseError {
            line: number,
            message: format!("bad duration '{}'", fields[4]),
        })?;
        let label = fields[7];
        let segment = Segment::new(onset, duration).map_err(|e| Error::ParseError {
            line: number,
            message: e.to_string(),
        })?;
        match by_uri.iter_mut().find(|a| a.uri == uri) {
            Some(a) => a.add(segment, label),
            None => {
                let mut a = Annotation::new(uri);
                a.add(segment, label);
                by_uri.push(a);
            }
        }
    }
    Ok(by_uri)
}

/// Parse an RTTM expected to describe a single recording.
pub fn parse_rttm_one(source: impl BufRead) -> Result<Annotation> {
    let mut all = parse_rttm(source)?;
    match all.len() {
        0 => Ok(Annotation::default()),
        1 => Ok(all.remove(0)),
        n => Err(Error::ParseError {
            line: 0,
            message: format!("expected a single uri, found {n}"),
        }),
    }
}
