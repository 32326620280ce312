//! Two-step ground-truth pipeline: CQP probes bound the useful bitrate range
//! per resolution, rate-controlled encodes run only inside those bounds, and
//! the measured points are assembled into an RD surface.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Codec, CodecError, SequenceSource, QP_LOWER_BOUND, QP_UPPER_BOUND};
use crate::model::{EncodingRecipe, ModelError, RDPoint, RDSurface, Resolution};

/// Admissible target range of one resolution: QP 48 gives the lower bound,
/// QP 16 the upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitrateBounds {
    pub resolution: Resolution,
    pub lower_kbps: f64,
    pub upper_kbps: f64,
}

impl BitrateBounds {
    /// Inclusive on both ends.
    pub fn admits(&self, bitrate_kbps: u32) -> bool {
        let b = bitrate_kbps as f64;
        self.lower_kbps <= b && b <= self.upper_kbps
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodeJob {
    pub sequence_id: String,
    pub resolution: Resolution,
    pub target_bitrate_kbps: u32,
    pub job_id: String,
}

impl EncodeJob {
    pub fn new(sequence_id: &str, resolution: Resolution, target_bitrate_kbps: u32) -> Self {
        Self {
            job_id: format!("{sequence_id}/{resolution}/{target_bitrate_kbps}"),
            sequence_id: sequence_id.to_string(),
            resolution,
            target_bitrate_kbps,
        }
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("probe failed for {}", .failures.iter().map(|(r, e)| format!("{r}: {e}")).collect::<Vec<_>>().join("; "))]
    Probe { failures: Vec<(Resolution, CodecError)>, partial: Vec<BitrateBounds> },
    #[error("probe at {resolution} returned invalid bounds [{lower_kbps}, {upper_kbps}]")]
    InvalidBounds { resolution: Resolution, lower_kbps: f64, upper_kbps: f64 },
    #[error("no bounds for resolution {0}")]
    MissingBounds(Resolution),
    #[error("incomplete coverage: no admissible resolution at {0:?} Kbps")]
    IncompleteCoverage(Vec<u32>),
    #[error("worker limit must be at least 1")]
    WorkerLimit,
    #[error("job {0} references an unknown sequence")]
    UnknownSequence(String),
    #[error("{} job(s) failed: {}", .0.len(), .0.join(", "))]
    JobsFailed(Vec<String>),
    #[error("result for {got} in the surface of {want}")]
    ForeignResult { want: String, got: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("journal {path}: {source}")]
    Journal { path: PathBuf, source: std::io::Error },
}

/// Probes every recipe resolution at QP 16 and QP 48.
///
/// Failures are collected per resolution; the successful bounds travel with
/// the error.
pub fn probe_bounds(
    source: &SequenceSource,
    recipe: &EncodingRecipe,
    codec: &dyn Codec,
) -> Result<Vec<BitrateBounds>, OrchestratorError> {
    let mut partial = Vec::with_capacity(recipe.num_resolutions());
    let mut failures = Vec::new();
    for &resolution in &recipe.resolutions {
        let probe = codec.encode_cqp(source, resolution, QP_LOWER_BOUND).and_then(|lo| {
            codec.encode_cqp(source, resolution, QP_UPPER_BOUND).map(|hi| (lo.actual_bitrate_kbps, hi.actual_bitrate_kbps))
        });
        match probe {
            Ok((lower_kbps, upper_kbps)) => {
                if !(lower_kbps > 0.0 && lower_kbps <= upper_kbps) {
                    return Err(OrchestratorError::InvalidBounds { resolution, lower_kbps, upper_kbps });
                }
                partial.push(BitrateBounds { resolution, lower_kbps, upper_kbps });
            }
            Err(e) => failures.push((resolution, e)),
        }
    }
    if failures.is_empty() {
        Ok(partial)
    } else {
        Err(OrchestratorError::Probe { failures, partial })
    }
}

/// One job per admissible `(resolution, target bitrate)` pair, ordered by
/// resolution index and then bitrate.
pub fn plan_jobs(
    sequence_id: &str,
    bounds: &[BitrateBounds],
    recipe: &EncodingRecipe,
) -> Result<Vec<EncodeJob>, OrchestratorError> {
    let mut jobs = Vec::new();
    let mut covered = vec![false; recipe.num_bitrates()];
    for &resolution in &recipe.resolutions {
        let b = bounds
            .iter()
            .find(|b| b.resolution == resolution)
            .ok_or(OrchestratorError::MissingBounds(resolution))?;
        for (i, &rate) in recipe.target_bitrates_kbps.iter().enumerate() {
            if b.admits(rate) {
                covered[i] = true;
                jobs.push(EncodeJob::new(sequence_id, resolution, rate));
            }
        }
    }
    let uncovered: Vec<u32> = recipe
        .target_bitrates_kbps
        .iter()
        .zip(&covered)
        .filter(|(_, &c)| !c)
        .map(|(&b, _)| b)
        .collect();
    if !uncovered.is_empty() {
        return Err(OrchestratorError::IncompleteCoverage(uncovered));
    }
    Ok(jobs)
}

/// A completed job as stored in the journal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub actual_bitrate_kbps: f64,
    pub quality: f64,
}

#[derive(Serialize, Deserialize)]
struct JournalLine {
    job_id: String,
    actual_bitrate_kbps: f64,
    quality: f64,
}

/// Append-only JSON-lines log of completed jobs, used to resume a run.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
    done: BTreeMap<String, JournalRecord>,
}

impl Journal {
    /// Opens (creating if needed) the journal and loads completed jobs. A
    /// truncated trailing line from an interrupted run is ignored.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, OrchestratorError> {
        let path = path.as_ref().to_path_buf();
        let err = |source| OrchestratorError::Journal { path: path.clone(), source };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(err)?;
        }
        let mut done = BTreeMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(err)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(err)?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<JournalLine>(&line) {
                    Ok(rec) => {
                        done.insert(
                            rec.job_id,
                            JournalRecord { actual_bitrate_kbps: rec.actual_bitrate_kbps, quality: rec.quality },
                        );
                    }
                    Err(e) => warn!("{}: skipping line {}: {e}", path.display(), n + 1),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(err)?;
        // terminate a torn last line so the next record starts cleanly
        let len = file.metadata().map_err(err)?.len();
        if len > 0 && fs::read(&path).map_err(err)?.last() != Some(&b'\n') {
            file.write_all(b"\n").map_err(err)?;
        }
        Ok(Self { path, file, done })
    }

    pub fn get(&self, job_id: &str) -> Option<&JournalRecord> {
        self.done.get(job_id)
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, job_id: &str, record: JournalRecord) -> Result<(), OrchestratorError> {
        let line = JournalLine {
            job_id: job_id.to_string(),
            actual_bitrate_kbps: record.actual_bitrate_kbps,
            quality: record.quality,
        };
        let mut text = serde_json::to_string(&line).expect("journal line");
        text.push('\n');
        self.file
            .write_all(text.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|source| OrchestratorError::Journal { path: self.path.clone(), source })?;
        self.done.insert(job_id.to_string(), record);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobFailure {
    pub job_id: String,
    pub message: String,
}

/// Outcome of a plan run. `results` follow the plan order regardless of
/// completion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecutionReport {
    pub results: Vec<(EncodeJob, RDPoint)>,
    pub failures: Vec<JobFailure>,
    /// Jobs answered from the journal instead of being run.
    pub resumed: usize,
}

impl ExecutionReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    /// Fails with the list of failed job ids, if any.
    pub fn check(&self) -> Result<(), OrchestratorError> {
        if self.failures.is_empty() {
            Ok(())
        } else {
            Err(OrchestratorError::JobsFailed(self.failures.iter().map(|f| f.job_id.clone()).collect()))
        }
    }
}

fn run_job(job: &EncodeJob, source: &SequenceSource, codec: &dyn Codec) -> Result<RDPoint, String> {
    let encoded = codec
        .encode_cbr(source, job.resolution, job.target_bitrate_kbps)
        .map_err(|e| e.to_string())?;
    let quality = codec
        .measure_quality(source, &encoded, source.resolution())
        .map_err(|e| e.to_string())?;
    let point = RDPoint {
        resolution: job.resolution,
        target_bitrate_kbps: job.target_bitrate_kbps,
        actual_bitrate_kbps: encoded.actual_bitrate_kbps,
        quality,
    };
    point.check().map_err(|e| e.to_string())?;
    Ok(point)
}

/// Runs every job (CBR encode, upscale, quality) on at most `worker_limit`
/// threads.
///
/// Jobs already present in `journal` are not re-run. Only the collector
/// thread writes the journal. Job failures are recorded in the report rather
/// than aborting the run.
pub fn execute_plan(
    jobs: &[EncodeJob],
    sources: &BTreeMap<String, SequenceSource>,
    codec: &dyn Codec,
    worker_limit: usize,
    mut journal: Option<&mut Journal>,
) -> Result<ExecutionReport, OrchestratorError> {
    if worker_limit == 0 {
        return Err(OrchestratorError::WorkerLimit);
    }
    for job in jobs {
        if !sources.contains_key(&job.sequence_id) {
            return Err(OrchestratorError::UnknownSequence(job.job_id.clone()));
        }
    }
    let mut slots: Vec<Option<Result<RDPoint, String>>> = vec![None; jobs.len()];
    let mut pending = Vec::new();
    let mut resumed = 0;
    for (i, job) in jobs.iter().enumerate() {
        match journal.as_deref().and_then(|j| j.get(&job.job_id)) {
            Some(rec) => {
                slots[i] = Some(Ok(RDPoint {
                    resolution: job.resolution,
                    target_bitrate_kbps: job.target_bitrate_kbps,
                    actual_bitrate_kbps: rec.actual_bitrate_kbps,
                    quality: rec.quality,
                }));
                resumed += 1;
            }
            None => pending.push(i),
        }
    }
    if resumed > 0 {
        info!("resuming: {resumed} of {} jobs already journaled", jobs.len());
    }

    let next = AtomicUsize::new(0);
    let workers = worker_limit.min(pending.len());
    let mut journal_error = None;
    thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, Result<RDPoint, String>)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending) = (&next, &pending);
            scope.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&i) = pending.get(k) else { break };
                let job = &jobs[i];
                let outcome = run_job(job, &sources[&job.sequence_id], codec);
                if tx.send((i, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, outcome) in rx {
            if let (Ok(point), Some(j)) = (&outcome, journal.as_deref_mut()) {
                let rec = JournalRecord { actual_bitrate_kbps: point.actual_bitrate_kbps, quality: point.quality };
                if let Err(e) = j.append(&jobs[i].job_id, rec) {
                    journal_error.get_or_insert(e);
                }
            }
            slots[i] = Some(outcome);
        }
    });
    if let Some(e) = journal_error {
        return Err(e);
    }

    let mut report = ExecutionReport { resumed, ..Default::default() };
    for (job, slot) in jobs.iter().zip(slots) {
        match slot.expect("every job settles") {
            Ok(point) => report.results.push((job.clone(), point)),
            Err(message) => {
                warn!("job {} failed: {message}", job.job_id);
                report.failures.push(JobFailure { job_id: job.job_id.clone(), message });
            }
        }
    }
    Ok(report)
}

/// Groups one sequence's results into per-resolution curves.
pub fn assemble_surface(
    sequence_id: &str,
    quality_metric: &str,
    recipe: &EncodingRecipe,
    results: &[(EncodeJob, RDPoint)],
) -> Result<RDSurface, OrchestratorError> {
    let mut seen = HashSet::new();
    let mut points = Vec::with_capacity(results.len());
    for (job, point) in results {
        if job.sequence_id != sequence_id {
            return Err(OrchestratorError::ForeignResult { want: sequence_id.into(), got: job.sequence_id.clone() });
        }
        if !seen.insert((point.resolution, point.target_bitrate_kbps)) {
            return Err(ModelError::DuplicatePoint { resolution: point.resolution, bitrate_kbps: point.target_bitrate_kbps }.into());
        }
        points.push(*point);
    }
    Ok(RDSurface::from_points(sequence_id, quality_metric, recipe, points)?)
}

/// Bounds file: probe results for every sequence of a manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundsFile {
    pub sequences: Vec<SequenceBounds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceBounds {
    pub sequence_id: String,
    pub bounds: Vec<BitrateBounds>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}
