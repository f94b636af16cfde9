//! Dataset layout: `<root>/<split>/<track>/{mixture,<source>...}.wav`.

use std::path::{Path, PathBuf};

use crate::dsp::AudioClip;
use crate::io::{read_wav, IoError};
use crate::training::Song;

/// Songs of one split plus the tracks that could not be used.
#[derive(Debug)]
pub struct LoadedSplit {
    pub songs: Vec<Song>,
    /// `(track, reason)` for every skipped track.
    pub skipped: Vec<(String, String)>,
}

/// Track directories of `<root>/<split>`, sorted by name.
pub fn track_dirs(root: &Path, split: &str) -> Result<Vec<PathBuf>, IoError> {
    let dir = root.join(split);
    let entries = std::fs::read_dir(&dir).map_err(|e| IoError::io(&dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| IoError::io(&dir, e))?;
        if entry.file_type().map_err(|e| IoError::io(entry.path(), e))?.is_dir() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

pub(crate) fn track_name(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Reads the named stems of one track. A missing stem is reported as
/// `Ok(Err(reason))` so callers can skip the track.
pub fn load_song(dir: &Path, sources: &[String]) -> Result<Result<Song, String>, IoError> {
    let missing: Vec<&str> = sources
        .iter()
        .filter(|s| !dir.join(format!("{s}.wav")).is_file())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Ok(Err(format!("missing stems: {}", missing.join(", "))));
    }
    let stems = sources
        .iter()
        .map(|s| read_wav(dir.join(format!("{s}.wav"))))
        .collect::<Result<Vec<AudioClip>, _>>()?;
    Ok(Song::new(track_name(dir), stems).map_err(|e| e.to_string()))
}

/// Loads every usable track of a split.
pub fn load_split(root: &Path, split: &str, sources: &[String]) -> Result<LoadedSplit, IoError> {
    let mut out = LoadedSplit {
        songs: Vec::new(),
        skipped: Vec::new(),
    };
    for dir in track_dirs(root, split)? {
        match load_song(&dir, sources)? {
            Ok(song) => out.songs.push(song),
            Err(reason) => {
                log::warn!("skipping {}: {reason}", dir.display());
                out.skipped.push((track_name(&dir), reason));
            }
        }
    }
    Ok(out)
}
