//! Rolling-buffer windowing over a frame-aligned feature stream.
//!
//! A source yields frames on the global grid; the iterator re-slices them
//! into fixed-size windows stepped by the hop. With warm-up padding the
//! first windows are left-filled with zero frames so output starts after a
//! single hop instead of a full buffer fill. A final partial hop at
//! end-of-stream is emitted as one extra window ending exactly at the
//! stream end, so no tail frames are dropped.

use crate::timebase::{floor_eps, FrameGrid};

/// Per-frame representations fed to statistics pooling, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub start_time: f64,
    pub rows: Vec<Vec<f64>>,
}

impl FrameFeatures {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    pub fn num_frames(&self) -> usize {
        self.rows.len()
    }
}

/// One position of the rolling buffer.
#[derive(Debug, Clone)]
pub struct BufferWindow {
    pub window_index: usize,
    /// Nominal start, `end_time - window_duration`; negative during warm-up.
    pub start_time: f64,
    pub end_time: f64,
    /// Exclusive global frame index of the last content frame.
    pub end_frame: usize,
    /// Leading zero-filled frames (warm-up / short final buffer).
    pub padded_frames: usize,
    pub features: FrameFeatures,
}

impl BufferWindow {
    /// Signed global index of the window's first frame row (row 0 of the
    /// feature matrix); negative rows are zero padding.
    pub fn first_frame(&self, grid: &FrameGrid) -> i64 {
        self.end_frame as i64 - grid.frames_per_window() as i64
    }
}

/// Source of frame-aligned data. `frame` may depend on the window index so
/// synthetic sources can redraw noise per buffer position.
pub trait FrameSource {
    fn num_frames(&self) -> usize;
    fn dim(&self) -> usize;
    fn frame(&self, window_index: usize, frame: usize, out: &mut [f64]);
}

/// In-memory frame matrix, the backing for feature files.
#[derive(Debug, Clone)]
pub struct MemoryFrameSource {
    pub rows: Vec<Vec<f64>>,
    dim: usize,
}

impl MemoryFrameSource {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        let dim = rows.first().map_or(0, |r| r.len());
        Self { rows, dim }
    }
}

impl FrameSource for MemoryFrameSource {
    fn num_frames(&self) -> usize {
        self.rows.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn frame(&self, _window_index: usize, frame: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.rows[frame]);
    }
}

/// Iterator over rolling-buffer windows.
pub struct WindowIterator<'a> {
    source: &'a dyn FrameSource,
    grid: FrameGrid,
    pad_warmup: bool,
    next_index: usize,
    /// Nominal end times of all windows, precomputed from stream length.
    end_times: Vec<f64>,
}

/// Exclusive global end frame for a window ending at `end_time`.
///
/// During warm-up this follows the padding rule
/// `padded = floor((window_duration - end_time) / frame_step)`; past
/// warm-up it is plain time-to-frame flooring.
fn end_frame_for(grid: &FrameGrid, end_time: f64) -> i64 {
    let f = grid.frames_per_window() as i64;
    if end_time < grid.window_duration - 1e-9 {
        f - floor_eps((grid.window_duration - end_time) / grid.frame_step)
    } else {
        floor_eps(end_time / grid.frame_step)
    }
}

/// Open a windowed view over `source`. Without padding the first window is
/// emitted once a full buffer of data exists; with padding after one hop.
pub fn open_stream(
    source: &dyn FrameSource,
    grid: FrameGrid,
    pad_warmup: bool,
) -> WindowIterator<'_> {
    let n = source.num_frames();
    let stream_end = n as f64 * grid.frame_step;
    let mut end_times = Vec::new();
    let first = if pad_warmup {
        grid.hop
    } else {
        grid.window_duration
    };
    let mut t = first;
    while t < stream_end - 1e-9 {
        end_times.push(t);
        t += grid.hop;
    }
    // Final partial buffer ending exactly at the stream end. Streams that
    // fall short of the first nominal end time by less than one frame
    // still hold all the content frames that window needs, so emit it.
    if n > 0 {
        if stream_end >= first - 1e-9 {
            end_times.push(stream_end);
        } else if end_frame_for(&grid, first) <= n as i64 {
            end_times.push(first);
        }
    }
    WindowIterator {
        source,
        grid,
        pad_warmup,
        next_index: 0,
        end_times,
    }
}

impl WindowIterator<'_> {
    pub fn num_windows(&self) -> usize {
        self.end_times.len()
    }

    pub fn grid(&self) -> &FrameGrid {
        &self.grid
    }
}

impl Iterator for WindowIterator<'_> {
    type Item = BufferWindow;

    fn next(&mut self) -> Option<BufferWindow> {
        let idx = self.next_index;
        let end_time = *self.end_times.get(idx)?;
        self.next_index += 1;

        let f = self.grid.frames_per_window();
        let dim = self.source.dim();
        let end_frame = (end_frame_for(&self.grid, end_time).max(0) as usize)
            .min(self.source.num_frames());
        let first_frame = end_frame as i64 - f as i64;
        let padded = (-first_frame).max(0) as usize;
        debug_assert!(self.pad_warmup || padded == 0);

        let mut rows = Vec::with_capacity(f);
        for i in 0..f {
            let g = first_frame + i as i64;
            let mut row = vec![0.0; dim];
            if g >= 0 && (g as usize) < self.source.num_frames() {
                self.source.frame(idx, g as usize, &mut row);
            }
            rows.push(row);
        }

        Some(BufferWindow {
            window_index: idx,
            start_time: end_time - self.grid.window_duration,
            end_time,
            end_frame,
            padded_frames: padded,
            features: FrameFeatures {
                start_time: end_time - self.grid.window_duration,
                rows,
            },
        })
    }
}
