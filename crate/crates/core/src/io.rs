//! Corpus directories on disk.
//!
//! ```text
//! corpus.manifest.json
//! embeddings.json
//! video_0000.transcript.json
//! video_0000.frames.bin
//! video_0000.gold.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ActionGraph;
use crate::optimizer::VideoData;
use crate::simulator::{SimConfig, SimCorpus};
use crate::transcript::Transcript;
use crate::visual::{FrameSequence, WordEmbedder};

pub const CORPUS_MANIFEST: &str = "corpus.manifest.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub videos: usize,
    pub seed: u64,
    pub embeddings: String,
    pub config: SimConfig,
}

pub fn video_stem(k: usize) -> String {
    format!("video_{k:04}")
}

pub fn transcript_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("{}.transcript.json", video_stem(k)))
}

pub fn frames_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("{}.frames.bin", video_stem(k)))
}

pub fn gold_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("{}.gold.json", video_stem(k)))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_corpus(dir: &Path, corpus: &SimCorpus) -> Result<()> {
    create_dir(dir)?;
    let manifest = CorpusManifest {
        videos: corpus.videos.len(),
        seed: corpus.config.seed,
        embeddings: EMBEDDINGS_FILE.to_string(),
        config: corpus.config.clone(),
    };
    write_text(&dir.join(CORPUS_MANIFEST), &serde_json::to_string_pretty(&manifest)?)?;
    write_text(&dir.join(EMBEDDINGS_FILE), &serde_json::to_string_pretty(&corpus.embedder)?)?;
    for (k, v) in corpus.videos.iter().enumerate() {
        write_text(&transcript_path(dir, k), &v.transcript.to_json())?;
        v.frames.write(&frames_path(dir, k))?;
        write_text(&gold_path(dir, k), &v.gold.to_json())?;
    }
    Ok(())
}

/// A corpus as the learner sees it, plus gold labels when present.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub embedder: WordEmbedder,
    pub videos: Vec<VideoData>,
}

impl Corpus {
    pub fn gold(&self) -> Option<Vec<ActionGraph>> {
        self.videos.iter().map(|v| v.gold.clone()).collect()
    }

    pub fn frame_counts(&self) -> Vec<usize> {
        self.videos.iter().map(|v| v.transcript.frames).collect()
    }
}

/// Loads a corpus. Frame files are only opened when `with_frames` is set.
pub fn read_corpus(dir: &Path, with_frames: bool) -> Result<Corpus> {
    let manifest: CorpusManifest = serde_json::from_str(&read_text(&dir.join(CORPUS_MANIFEST))?)?;
    if manifest.videos == 0 {
        return Err(Error::EmptyCorpus);
    }
    let embedder: WordEmbedder = serde_json::from_str(&read_text(&dir.join(&manifest.embeddings))?)?;
    let mut videos = Vec::with_capacity(manifest.videos);
    for k in 0..manifest.videos {
        let transcript = Transcript::from_json(&read_text(&transcript_path(dir, k))?)?;
        let frames = if with_frames { Some(FrameSequence::read(&frames_path(dir, k))?) } else { None };
        let gp = gold_path(dir, k);
        let gold = if gp.exists() { Some(ActionGraph::from_json(&read_text(&gp)?)?) } else { None };
        videos.push(VideoData { transcript, frames, gold });
    }
    Ok(Corpus { manifest, embedder, videos })
}
