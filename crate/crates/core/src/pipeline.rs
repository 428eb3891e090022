//! End-to-end orchestration: windowing, segmentation, pooling, clustering
//! and output assembly driven by one [`PipelineConfig`], plus grid-search
//! tuning and step-latency benchmarking.

use std::time::{Duration, Instant};

use crate::clustering::CentroidSet;
use crate::config::{PipelineConfig, WeightingMode};
use crate::fixtures::{self, Fixture, FixtureSpec, OracleFrameSource};
use crate::formats::EmbeddingWindow;
use crate::ingest::{open_stream, FrameSource};
use crate::metrics;
use crate::output::{relabel, Binarizer, FrameAccumulator};
use crate::pooling::{direct_weights, embed_locals, overlap_weights, SpeakerEmbedding};
use crate::segmentation::{active_speakers, OracleSegmentation, SegmentationProvider};
use crate::timebase::Annotation;
use crate::{Error, Result};

/// Per-window processing record.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub window_index: usize,
    /// Locally active speakers in this window.
    pub k_buffer: usize,
    /// Centroids appended during this step.
    pub new_speakers: usize,
    /// Frames finalized by this step.
    pub frames_finalized: usize,
    pub elapsed: Duration,
}

/// Everything a run produces.
#[derive(Debug)]
pub struct RunOutput {
    pub hypothesis: Annotation,
    pub steps: Vec<StepReport>,
    pub pool: CentroidSet,
}

impl RunOutput {
    pub fn num_speakers(&self) -> usize {
        self.pool.len()
    }
}

/// Process a full stream. `stored_embeddings` overrides pooling with
/// precomputed per-window embeddings when given.
pub fn run(
    config: &PipelineConfig,
    uri: &str,
    source: &dyn FrameSource,
    segmentation: &dyn SegmentationProvider,
    stored_embeddings: Option<&[EmbeddingWindow]>,
) -> Result<RunOutput> {
    config.validate()?;
    let grid = config.grid();
    let frames = grid.frames_per_window();

    let mut pool = CentroidSet::new();
    let mut acc = FrameAccumulator::new();
    let mut binarizer = Binarizer::new(uri, config.tau_active, config.frame_step);
    let mut steps = Vec::new();
    let mut last_end_frame = 0usize;
    let mut first_window = true;

    for window in open_stream(source, grid, config.pad_warmup) {
        let t0 = Instant::now();
        let s = segmentation.segment(&window, &grid)?;
        s.validate(frames)?;
        let mut locals = active_speakers(&s, config.tau_active);

        let embeddings: Vec<SpeakerEmbedding> = match stored_embeddings {
            Some(stored) => {
                let win = stored
                    .get(window.window_index)
                    .ok_or(Error::MissingWindow(window.window_index))?;
                win.channels
                    .iter()
                    .zip(&win.vectors)
                    .map(|(&channel, vector)| {
                        let channel = channel as usize;
                        if channel >= s.k_max {
                            return Err(Error::Provider {
                                window_index: window.window_index,
                                message: format!("embedding channel {channel} out of range"),
                            });
                        }
                        Ok(SpeakerEmbedding {
                            vector: vector.clone(),
                            activity_mass: s.activity_mass(channel),
                            channel,
                        })
                    })
                    .collect::<Result<_>>()?
            }
            None => {
                let weights = match config.weighting_mode {
                    WeightingMode::OverlapAware => {
                        overlap_weights(&s, config.beta, config.gamma)
                    }
                    WeightingMode::Direct => direct_weights(&s),
                };
                // a channel can clear the activity threshold yet collect no
                // weight mass (all-padded support); drop it instead of failing
                locals
                    .active
                    .retain(|&k| weights.column(k).iter().sum::<f64>() > 0.0);
                embed_locals(&window.features, &weights, &s, &locals)?
            }
        };

        let (result, label_map) = pool.step_update(
            &embeddings,
            config.delta_new,
            config.rho_update,
            config.frame_step,
        )?;

        let covered = if first_window { None } else { Some(acc.covered()) };
        let slice = relabel(&s, &label_map, &window, &grid, config.latency, covered);
        last_end_frame = slice.end_frame.max(last_end_frame);
        let finalized = acc.aggregate(&slice)?;
        for frame in &finalized {
            binarizer.push(frame);
        }

        steps.push(StepReport {
            window_index: window.window_index,
            k_buffer: embeddings.len(),
            new_speakers: result.new_speaker_count(),
            frames_finalized: finalized.len(),
            elapsed: t0.elapsed(),
        });
        first_window = false;
    }

    for frame in acc.flush() {
        binarizer.push(&frame);
    }
    let hypothesis = binarizer.finish(last_end_frame);
    Ok(RunOutput {
        hypothesis,
        steps,
        pool,
    })
}

/// Run a synthetic fixture end to end with oracle segmentation and
/// oracle frame features.
pub fn run_fixture(fixture: &Fixture, config: &PipelineConfig) -> Result<RunOutput> {
    let source = OracleFrameSource::new(fixture);
    let segmentation =
        OracleSegmentation::new(fixture.reference.clone(), config.k_max, config.seed);
    run(
        config,
        &fixture.reference.uri,
        &source,
        &segmentation,
        None,
    )
}

/// Candidate values for the tunable thresholds.
#[derive(Debug, Clone)]
pub struct TuneGrid {
    pub tau_active: Vec<f64>,
    pub delta_new: Vec<f64>,
    pub rho_update: Vec<f64>,
}

impl Default for TuneGrid {
    fn default() -> Self {
        Self {
            tau_active: vec![0.3, 0.5, 0.7],
            delta_new: vec![0.4, 0.6, 0.8, 1.0],
            rho_update: vec![0.05, 0.1, 0.2],
        }
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy)]
pub struct TunePoint {
    pub tau_active: f64,
    pub delta_new: f64,
    pub rho_update: f64,
    /// Mean DER over the dev set.
    pub mean_der: f64,
}

/// Full audit of a grid search.
#[derive(Debug, Clone)]
pub struct TuneReport {
    /// Every evaluated point, in grid order.
    pub points: Vec<TunePoint>,
    pub best: TunePoint,
}

/// Exhaustive grid search minimizing mean DER over a dev set of
/// fixtures. Ties keep the earliest grid point, so results are
/// deterministic.
pub fn tune(base: &PipelineConfig, grid: &TuneGrid, dev: &[Fixture]) -> Result<TuneReport> {
    if dev.is_empty() {
        return Err(Error::EmptyDevSet);
    }
    if grid.tau_active.is_empty() || grid.delta_new.is_empty() || grid.rho_update.is_empty() {
        return Err(Error::InvalidConfig("empty tuning grid axis".into()));
    }
    let mut points = Vec::new();
    let mut best: Option<TunePoint> = None;
    for &tau in &grid.tau_active {
        for &delta in &grid.delta_new {
            for &rho in &grid.rho_update {
                let mut config = base.clone();
                config.tau_active = tau;
                config.delta_new = delta;
                config.rho_update = rho;
                config.validate()?;
                let mut total = 0.0;
                for fixture in dev {
                    let out = run_fixture(fixture, &config)?;
                    total += metrics::der(&fixture.reference, &out.hypothesis)?.der;
                }
                let point = TunePoint {
                    tau_active: tau,
                    delta_new: delta,
                    rho_update: rho,
                    mean_der: total / dev.len() as f64,
                };
                if best.is_none_or(|b| point.mean_der < b.mean_der) {
                    best = Some(point);
                }
                points.push(point);
            }
        }
    }
    Ok(TuneReport {
        points,
        best: best.unwrap(),
    })
}

/// Wall-time summary over the per-window step reports.
#[derive(Debug, Clone, Copy)]
pub struct BenchStats {
    pub windows: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

pub fn bench_summary(steps: &[StepReport]) -> BenchStats {
    let mut ms: Vec<f64> = steps
        .iter()
        .map(|s| s.elapsed.as_secs_f64() * 1e3)
        .collect();
    ms.sort_by(f64::total_cmp);
    let windows = ms.len();
    if windows == 0 {
        return BenchStats {
            windows: 0,
            mean_ms: 0.0,
            p95_ms: 0.0,
            max_ms: 0.0,
        };
    }
    let mean_ms = ms.iter().sum::<f64>() / windows as f64;
    let p95_index = ((windows as f64 * 0.95).ceil() as usize).clamp(1, windows) - 1;
    BenchStats {
        windows,
        mean_ms,
        p95_ms: ms[p95_index],
        max_ms: *ms.last().unwrap(),
    }
}

/// Benchmark one realistic load: many global speakers, full windows and
/// a feature dimensionality that doubles into the embedding size.
pub fn bench_run(config: &PipelineConfig, speakers: usize, duration: f64, feature_dim: usize) -> Result<BenchStats> {
    let fixture = fixtures::generate(&FixtureSpec {
        uri: "bench".into(),
        speakers,
        duration,
        overlap_ratio: 0.0,
        noise_sigma: 0.05,
        seed: config.seed,
        dim: feature_dim,
        // long turns keep concurrent buffer speakers within k_max even
        // with many global speakers
        turn_min: 3.0,
        turn_max: 5.0,
        ..Default::default()
    });
    let out = run_fixture(&fixture, config)?;
    Ok(bench_summary(&out.steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::generate;
    use crate::output::rttm_to_string;

    fn quick_fixture(seed: u64) -> Fixture {
        generate(&FixtureSpec {
            speakers: 2,
            duration: 30.0,
            overlap_ratio: 0.1,
            noise_sigma: 0.0,
            seed,
            dim: 16,
            uri: "t".into(),
            ..Default::default()
        })
    }

    #[test]
    fn clean_fixture_runs_near_zero_der() {
        let fixture = quick_fixture(1);
        let out = run_fixture(&fixture, &PipelineConfig::default()).unwrap();
        assert_eq!(out.num_speakers(), 2);
        let b = metrics::der(&fixture.reference, &out.hypothesis).unwrap();
        assert!(b.der < 0.02, "der {}", b.der);
    }

    #[test]
    fn run_is_deterministic() {
        let fixture = quick_fixture(2);
        let config = PipelineConfig::default();
        let a = run_fixture(&fixture, &config).unwrap();
        let b = run_fixture(&fixture, &config).unwrap();
        assert_eq!(
            rttm_to_string(&a.hypothesis).unwrap(),
            rttm_to_string(&b.hypothesis).unwrap()
        );
    }

    #[test]
    fn latency_only_affects_output_not_clustering() {
        let fixture = quick_fixture(3);
        let short = PipelineConfig { latency: 0.5, ..Default::default() };
        let long = PipelineConfig { latency: 5.0, ..Default::default() };
        let a = run_fixture(&fixture, &short).unwrap();
        let b = run_fixture(&fixture, &long).unwrap();
        assert_eq!(a.pool.labels, b.pool.labels);
        assert_eq!(a.pool.counts, b.pool.counts);
    }

    #[test]
    fn step_reports_cover_all_windows() {
        let fixture = quick_fixture(4);
        let out = run_fixture(&fixture, &PipelineConfig::default()).unwrap();
        for (i, s) in out.steps.iter().enumerate() {
            assert_eq!(s.window_index, i);
        }
        let finalized: usize = out.steps.iter().map(|s| s.frames_finalized).sum();
        assert!(finalized > 0);
    }

    #[test]
    fn tune_finds_best_point() {
        let dev = vec![quick_fixture(5)];
        let grid = TuneGrid {
            tau_active: vec![0.5],
            delta_new: vec![0.6, 1.0],
            rho_update: vec![0.1],
        };
        let report = tune(&PipelineConfig::default(), &grid, &dev).unwrap();
        assert_eq!(report.points.len(), 2);
        assert!(report
            .points
            .iter()
            .all(|p| p.mean_der >= report.best.mean_der));
    }

    #[test]
    fn tune_rejects_empty_dev() {
        let err = tune(&PipelineConfig::default(), &TuneGrid::default(), &[]);
        assert!(matches!(err, Err(Error::EmptyDevSet)));
    }

    #[test]
    fn bench_summary_percentiles() {
        let steps: Vec<StepReport> = (0..100)
            .map(|i| StepReport {
                window_index: i,
                k_buffer: 0,
                new_speakers: 0,
                frames_finalized: 0,
                elapsed: Duration::from_millis(i as u64 + 1),
            })
            .collect();
        let b = bench_summary(&steps);
        assert_eq!(b.windows, 100);
        assert!((b.mean_ms - 50.5).abs() < 1e-9);
        assert!((b.p95_ms - 95.0).abs() < 1e-9);
        assert!((b.max_ms - 100.0).abs() < 1e-9);
    }
}
