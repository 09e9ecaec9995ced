use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Corpus, EventSpan, TranscriptSentence, VideoRecord};
use crate::error::{Error, Result};

static FRAME_FILE_READS: AtomicUsize = AtomicUsize::new(0);

/// Number of frame-feature files opened by this process so far.
pub fn frame_file_reads() -> usize {
    FRAME_FILE_READS.load(Ordering::SeqCst)
}

#[derive(Serialize, Deserialize)]
struct FeatureMeta {
    video_id: String,
    n_frames: usize,
    feature_dim: usize,
    fps: f64,
}

#[derive(Serialize, Deserialize)]
struct VideoEntry {
    video_id: String,
    duration_s: f64,
    event_timeline: Vec<EventSpan>,
}

#[derive(Serialize, Deserialize)]
struct LabelRow<'a> {
    video_id: &'a str,
    frame_index: usize,
    class_id: usize,
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(row);
    }
    Ok(out)
}

fn feature_paths(dir: &Path, video_id: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{video_id}.f32")),
        dir.join(format!("{video_id}.meta.json")),
    )
}

/// Writes `<split>.transcripts.jsonl`, `<split>.labels.jsonl`,
/// `<split>.videos.jsonl` and one `.f32`/`.meta.json` pair per video.
pub fn write_corpus(dir: &Path, split: &str, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_jsonl(&dir.join(format!("{split}.transcripts.jsonl")), &corpus.transcripts)?;
    let labels = corpus.labels();
    write_jsonl(
        &dir.join(format!("{split}.labels.jsonl")),
        labels.iter().map(|(v, f, c)| LabelRow {
            video_id: v,
            frame_index: *f,
            class_id: *c,
        }),
    )?;
    write_jsonl(
        &dir.join(format!("{split}.videos.jsonl")),
        corpus.videos.iter().map(|v| VideoEntry {
            video_id: v.video_id.clone(),
            duration_s: v.duration_s,
            event_timeline: v.event_timeline.clone(),
        }),
    )?;
    for v in &corpus.videos {
        let (bin, meta) = feature_paths(dir, &v.video_id);
        let mut w = BufWriter::new(File::create(bin)?);
        for x in &v.frame_features {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()?;
        let m = FeatureMeta {
            video_id: v.video_id.clone(),
            n_frames: v.n_frames,
            feature_dim: v.feature_dim,
            fps: v.fps,
        };
        fs::write(meta, serde_json::to_vec_pretty(&m)?)?;
    }
    Ok(())
}

/// Reads one video's features and validates them against the sidecar.
/// Returns `(frame_features, n_frames, feature_dim, fps)`.
pub fn read_features(dir: &Path, video_id: &str) -> Result<(Vec<f32>, usize, usize, f64)> {
    let (bin, meta_path) = feature_paths(dir, video_id);
    let meta: FeatureMeta = serde_json::from_slice(&fs::read(&meta_path)?).map_err(|e| Error::Parse {
        path: meta_path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if meta.video_id != video_id {
        return Err(Error::Parse {
            path: meta_path,
            line: 1,
            msg: format!("sidecar names video {:?}, expected {video_id:?}", meta.video_id),
        });
    }
    FRAME_FILE_READS.fetch_add(1, Ordering::SeqCst);
    let bytes = fs::read(&bin)?;
    let expected = (meta.n_frames * meta.feature_dim * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::Integrity {
            path: bin,
            expected,
            actual: bytes.len() as u64,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((data, meta.n_frames, meta.feature_dim, meta.fps))
}

pub fn read_corpus(dir: &Path, split: &str) -> Result<Corpus> {
    let transcripts: Vec<TranscriptSentence> = read_jsonl(&dir.join(format!("{split}.transcripts.jsonl")))?;
    let entries: Vec<VideoEntry> = read_jsonl(&dir.join(format!("{split}.videos.jsonl")))?;
    let mut videos = Vec::with_capacity(entries.len());
    for entry in entries {
        let (frame_features, n_frames, feature_dim, fps) = read_features(dir, &entry.video_id)?;
        videos.push(VideoRecord {
            video_id: entry.video_id,
            duration_s: entry.duration_s,
            fps,
            n_frames,
            feature_dim,
            frame_features,
            event_timeline: entry.event_timeline,
        });
    }
    Ok(Corpus { videos, transcripts })
}
