//! Line-delimited JSON corpus file and a JSON embedding matrix.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusConfig, VideoRecord};
use crate::error::{Error, Result};

pub const CORPUS_FORMAT: u64 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    corpus_format: u64,
    seed: u64,
    config: CorpusConfig,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingFile<'a> {
    corpus_format: u64,
    d_meta: usize,
    d_content: usize,
    n_videos: usize,
    #[serde(borrow)]
    data: std::borrow::Cow<'a, [f64]>,
}

/// Writes `corpus.jsonl` and `embeddings.json` into `dir`.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("corpus.jsonl"))?);
    let header = Header {
        corpus_format: CORPUS_FORMAT,
        seed: corpus.seed,
        config: corpus.config.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for v in &corpus.videos {
        serde_json::to_writer(&mut w, v)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;

    let emb = EmbeddingFile {
        corpus_format: CORPUS_FORMAT,
        d_meta: corpus.embeddings.d_meta,
        d_content: corpus.embeddings.d_content,
        n_videos: corpus.len(),
        data: std::borrow::Cow::Borrowed(&corpus.embeddings.data),
    };
    let mut w = BufWriter::new(File::create(dir.join("embeddings.json"))?);
    serde_json::to_writer(&mut w, &emb)?;
    w.flush()?;
    Ok(())
}

/// Reads `corpus.jsonl` from `dir` (or a direct file path). Embeddings are
/// recomputed from the records, which reproduces the saved matrix exactly.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = if path.is_dir() {
        path.join("corpus.jsonl")
    } else {
        path.to_path_buf()
    };
    let reader = BufReader::new(File::open(&file)?);
    let mut lines = reader.lines().enumerate();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: file.clone(),
        line,
        msg,
    };

    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))?;
    let header: Header = serde_json::from_str(&first?).map_err(|e| parse_err(1, e.to_string()))?;
    if header.corpus_format != CORPUS_FORMAT {
        return Err(Error::Format {
            found: header.corpus_format,
            expected: CORPUS_FORMAT,
        });
    }
    let mut videos = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: VideoRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
        videos.push(v);
    }
    Corpus::from_records(header.config, header.seed, videos)
}
