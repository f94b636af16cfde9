use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::dsp::{sdr, AudioClip};
use crate::io::dataset::track_name;
use crate::io::{load_song, read_wav, track_dirs, Accompaniment, Checkpoint, IoError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub track: String,
    pub source: String,
    /// `None` when the reference is silent.
    pub sdr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSummary {
    pub source: String,
    pub median: Option<f64>,
    pub mean: Option<f64>,
    /// Tracks with a defined SDR.
    pub defined: usize,
}

/// Track-level SDR per source with median and mean across tracks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    /// Column order, accompaniment last when present.
    pub sources: Vec<String>,
    /// Sorted by track, then in `sources` order.
    pub rows: Vec<EvalRow>,
    /// `(track, reason)` for tracks left out.
    pub skipped: Vec<(String, String)>,
    /// Settings the report was produced with.
    pub config: Vec<(String, String)>,
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2])),
    }
}

fn fmt_db(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

impl EvalReport {
    /// Aggregates over the defined entries of each source.
    pub fn summaries(&self) -> Vec<SourceSummary> {
        self.sources
            .iter()
            .map(|s| {
                let mut vals: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| &r.source == s)
                    .filter_map(|r| r.sdr_db)
                    .collect();
                vals.sort_by(f64::total_cmp);
                SourceSummary {
                    source: s.clone(),
                    median: median(&vals),
                    mean: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
                    defined: vals.len(),
                }
            })
            .collect()
    }

    /// Machine-readable rows under the header `track,source,sdr_db`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("track,source,sdr_db\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.track, r.source, fmt_db(r.sdr_db));
        }
        out
    }

    /// Human-readable table: configuration, one line per track, skipped
    /// tracks, then the aggregates.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.config {
            let _ = writeln!(out, "# {k}={v}");
        }
        let width = self
            .rows
            .iter()
            .map(|r| r.track.len())
            .chain(["median".len()])
            .max()
            .unwrap_or(0);
        let col = self.sources.iter().map(|s| s.len().max(10)).collect::<Vec<_>>();
        let _ = write!(out, "{:width$}", "track");
        for (s, w) in self.sources.iter().zip(&col) {
            let _ = write!(out, "  {s:>w$}");
        }
        out.push('\n');
        let mut tracks: Vec<&str> = self.rows.iter().map(|r| r.track.as_str()).collect();
        tracks.dedup();
        for t in tracks {
            let _ = write!(out, "{t:width$}");
            for (s, w) in self.sources.iter().zip(&col) {
                let v = self.rows.iter().find(|r| r.track == t && &r.source == s).and_then(|r| r.sdr_db);
                let _ = write!(out, "  {:>w$}", fmt_db(v));
            }
            out.push('\n');
        }
        let summaries = self.summaries();
        for (label, pick) in [
            ("median", (|s: &SourceSummary| s.median) as fn(&SourceSummary) -> Option<f64>),
            ("mean", |s: &SourceSummary| s.mean),
        ] {
            let _ = write!(out, "{label:width$}");
            for (s, w) in summaries.iter().zip(&col) {
                let _ = write!(out, "  {:>w$}", fmt_db(pick(s)));
            }
            out.push('\n');
        }
        for (t, reason) in &self.skipped {
            let _ = writeln!(out, "skipped {t}: {reason}");
        }
        out
    }
}

type TrackOutcome = Result<Result<Vec<EvalRow>, String>, IoError>;

/// Runs `job` on every track with one worker per available core; results
/// are collected by track index so the output order never depends on
/// scheduling.
fn for_each_track(dirs: &[PathBuf], job: impl Fn(&Path) -> TrackOutcome + Sync) -> Vec<TrackOutcome> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(dirs.len()).max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<TrackOutcome>>> = Mutex::new((0..dirs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= dirs.len() {
                    break;
                }
                let outcome = job(&dirs[i]);
                results.lock().expect("result collector")[i] = Some(outcome);
            });
        }
    });
    results
        .into_inner()
        .expect("result collector")
        .into_iter()
        .map(|r| r.expect("every track visited"))
        .collect()
}

fn score(track: &str, names: &[String], references: &[AudioClip], estimates: &[AudioClip]) -> Result<Vec<EvalRow>, String> {
    names
        .iter()
        .zip(references.iter().zip(estimates))
        .map(|(name, (r, e))| {
            Ok(EvalRow {
                track: track.to_string(),
                source: name.clone(),
                sdr_db: sdr(r, e).map_err(|err| format!("{name}: {err}"))?,
            })
        })
        .collect()
}

fn with_accompaniment(
    names: &[String],
    clips: &[AudioClip],
    accompaniment: Accompaniment,
) -> Result<(Vec<String>, Vec<AudioClip>), String> {
    let mut names = names.to_vec();
    let mut clips = clips.to_vec();
    if let Some(idx) = accompaniment.members(&names) {
        let sum = AudioClip::sum(idx.iter().map(|&i| &clips[i])).map_err(|e| e.to_string())?;
        names.push("accompaniment".into());
        clips.push(sum);
    }
    Ok((names, clips))
}

fn assemble(
    dirs: &[PathBuf],
    outcomes: Vec<TrackOutcome>,
    names: &[String],
    accompaniment: Accompaniment,
    config: Vec<(String, String)>,
) -> Result<EvalReport, IoError> {
    let mut sources = names.to_vec();
    if accompaniment.members(names).is_some() {
        sources.push("accompaniment".into());
    }
    let mut report = EvalReport {
        sources,
        config,
        ..EvalReport::default()
    };
    for (dir, outcome) in dirs.iter().zip(outcomes) {
        match outcome? {
            Ok(rows) => report.rows.extend(rows),
            Err(reason) => {
                log::warn!("skipping {}: {reason}", dir.display());
                report.skipped.push((track_name(dir), reason));
            }
        }
    }
    Ok(report)
}

fn reference_mixture(dir: &Path, stems: &[AudioClip]) -> Result<AudioClip, IoError> {
    let path = dir.join("mixture.wav");
    if path.is_file() {
        read_wav(path)
    } else {
        Ok(AudioClip::sum(stems)?)
    }
}

/// Separates every track of `<root>/<split>` with the checkpoint and
/// scores the estimates against the reference stems. The mixture is read
/// from `mixture.wav`, or summed from the stems when that file is absent.
pub fn evaluate_model<T: Scalar>(
    ckpt: &Checkpoint<T>,
    root: &Path,
    split: &str,
    accompaniment: Accompaniment,
) -> Result<EvalReport, IoError> {
    let names = &ckpt.config.sources;
    let dirs = track_dirs(root, split)?;
    let outcomes = for_each_track(&dirs, |dir| {
        let song = match load_song(dir, names)? {
            Ok(s) => s,
            Err(reason) => return Ok(Err(reason)),
        };
        let mixture = reference_mixture(dir, &song.stems)?;
        if mixture.len() != song.len() || mixture.num_channels() != song.stems[0].num_channels() {
            return Ok(Err("mixture is not aligned with the stems".into()));
        }
        let est = ckpt.separate(&mixture, accompaniment)?;
        let (all_names, refs) = match with_accompaniment(names, &song.stems, accompaniment) {
            Ok(v) => v,
            Err(reason) => return Ok(Err(reason)),
        };
        let ests: Vec<AudioClip> = est.outputs().into_iter().map(|(_, c)| c.clone()).collect();
        Ok(score(&song.name, &all_names, &refs, &ests))
    });
    let mut config = vec![
        ("split".to_string(), split.to_string()),
        ("accompaniment".to_string(), accompaniment.as_str().to_string()),
    ];
    config.extend(ckpt.config.entries());
    assemble(&dirs, outcomes, names, accompaniment, config)
}

/// Scores precomputed estimates laid out as `<estimates>/<track>/<source>.wav`
/// against `<root>/<split>`. The accompaniment estimate is the sum of the
/// estimated member stems.
pub fn evaluate_estimates(
    root: &Path,
    split: &str,
    estimates: &Path,
    names: &[String],
    accompaniment: Accompaniment,
) -> Result<EvalReport, IoError> {
    let dirs = track_dirs(root, split)?;
    let outcomes = for_each_track(&dirs, |dir| {
        let song = match load_song(dir, names)? {
            Ok(s) => s,
            Err(reason) => return Ok(Err(reason)),
        };
        let est_song = match load_song(&estimates.join(&song.name), names)? {
            Ok(s) => s,
            Err(reason) => return Ok(Err(format!("estimates: {reason}"))),
        };
        let refs = with_accompaniment(names, &song.stems, accompaniment);
        let ests = with_accompaniment(names, &est_song.stems, accompaniment);
        match (refs, ests) {
            (Ok((all, refs)), Ok((_, ests))) => Ok(score(&song.name, &all, &refs, &ests)),
            (Err(reason), _) | (_, Err(reason)) => Ok(Err(reason)),
        }
    });
    let config = vec![
        ("split".to_string(), split.to_string()),
        ("estimates".to_string(), estimates.display().to_string()),
        ("data.sources".to_string(), names.join(",")),
        ("accompaniment".to_string(), accompaniment.as_str().to_string()),
    ];
    assemble(&dirs, outcomes, names, accompaniment, config)
}
