//! Streaming extraction driver.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::heuristic::HeuristicExtractor;
use super::preparsed::parse_preparsed_line;
use super::segment::split_sentences;
use super::{ExtractedSentence, Result};

/// Paragraphs longer than this are split before segmentation so that a file
/// without blank lines cannot grow the buffer without bound.
pub const MAX_PARAGRAPH_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionBackend {
    /// Raw text scanned with the built-in antecedent rule.
    #[default]
    Heuristic,
    /// JSONL records from an offline parser.
    PreparsedIngest,
}

/// Progress counters; merge by addition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExtractionStats {
    pub documents: u64,
    pub lines: u64,
    pub malformed: u64,
    pub sentences: u64,
    pub extracted: u64,
}

impl ExtractionStats {
    pub fn merge(&mut self, other: &ExtractionStats) {
        self.documents += other.documents;
        self.lines += other.lines;
        self.malformed += other.malformed;
        self.sentences += other.sentences;
        self.extracted += other.extracted;
    }
}

#[derive(Debug, Clone)]
pub struct Extractor {
    names: HeuristicExtractor,
    backend: ExtractionBackend,
}

impl Extractor {
    pub fn new<I, S>(names: I, backend: ExtractionBackend) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            names: HeuristicExtractor::new(names),
            backend,
        }
    }

    pub fn backend(&self) -> ExtractionBackend {
        self.backend
    }

    pub fn heuristic(&self) -> &HeuristicExtractor {
        &self.names
    }

    fn flush_paragraph<F>(
        &self,
        paragraph: &mut String,
        source: &str,
        line: u64,
        stats: &mut ExtractionStats,
        sink: &mut F,
    ) where
        F: FnMut(ExtractedSentence),
    {
        if paragraph.trim().is_empty() {
            paragraph.clear();
            return;
        }
        let source_id = format!("{source}:{line}");
        for sentence in split_sentences(paragraph) {
            stats.sentences += 1;
            for e in self.names.extract_sentence(&sentence, &source_id) {
                stats.extracted += 1;
                sink(e);
            }
        }
        paragraph.clear();
    }

    /// Stream one document through the active backend.
    ///
    /// Lines that are not valid UTF-8 (or, for preparsed input, not a valid
    /// record) are counted as malformed and skipped.
    pub fn extract_reader<R, F>(&self, mut reader: R, source: &str, sink: &mut F) -> ExtractionStats
    where
        R: BufRead,
        F: FnMut(ExtractedSentence),
    {
        let mut stats = ExtractionStats {
            documents: 1,
            ..Default::default()
        };
        let mut buf = Vec::new();
        let mut paragraph = String::new();
        let mut paragraph_line = 1u64;
        loop {
            buf.clear();
            match reader.read_until(b'\n', &mut buf) {
                Ok(0) => break,
                Ok(_) => {}
                Err(e) => {
                    log::warn!("{source}: read error after line {}: {e}", stats.lines);
                    stats.malformed += 1;
                    break;
                }
            }
            stats.lines += 1;
            let Ok(line) = std::str::from_utf8(&buf) else {
                stats.malformed += 1;
                continue;
            };
            match self.backend {
                ExtractionBackend::PreparsedIngest => {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let id = format!("{source}:{}", stats.lines);
                    match parse_preparsed_line(line, &self.names, &id) {
                        Ok(Some(e)) => {
                            stats.sentences += 1;
                            stats.extracted += 1;
                            sink(e);
                        }
                        Ok(None) => stats.sentences += 1,
                        Err(_) => stats.malformed += 1,
                    }
                }
                ExtractionBackend::Heuristic => {
                    if line.trim().is_empty() {
                        self.flush_paragraph(&mut paragraph, source, paragraph_line, &mut stats, sink);
                        paragraph_line = stats.lines + 1;
                        continue;
                    }
                    if paragraph.is_empty() {
                        paragraph_line = stats.lines;
                    }
                    paragraph.push_str(line);
                    if paragraph.len() > MAX_PARAGRAPH_BYTES {
                        self.flush_paragraph(&mut paragraph, source, paragraph_line, &mut stats, sink);
                    }
                }
            }
        }
        if self.backend == ExtractionBackend::Heuristic {
            self.flush_paragraph(&mut paragraph, source, paragraph_line, &mut stats, sink);
        }
        stats
    }
}

/// Convenience wrapper around [`Extractor::extract_reader`].
pub fn extract_reader<R, F>(extractor: &Extractor, reader: R, source: &str, mut sink: F) -> ExtractionStats
where
    R: BufRead,
    F: FnMut(ExtractedSentence),
{
    extractor.extract_reader(reader, source, &mut sink)
}

/// Every `.txt` (heuristic) or `.jsonl` (preparsed) file under `path`,
/// sorted; a file path is returned as is.
pub fn collect_text_files(path: &Path, backend: ExtractionBackend) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let ext = match backend {
        ExtractionBackend::Heuristic => "txt",
        ExtractionBackend::PreparsedIngest => "jsonl",
    };
    let mut out = Vec::new();
    for entry in WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(std::io::Error::from)?;
        let p = entry.path();
        if entry.file_type().is_file() && p.extension().is_some_and(|e| e == ext) {
            out.push(p.to_path_buf());
        }
    }
    out.sort();
    Ok(out)
}

/// Extract from every matching file under `path`, in sorted order.
pub fn extract_path<F>(extractor: &Extractor, path: &Path, mut sink: F) -> Result<ExtractionStats>
where
    F: FnMut(ExtractedSentence),
{
    let mut stats = ExtractionStats::default();
    let files = collect_text_files(path, extractor.backend())?;
    for file in files {
        let source = file
            .strip_prefix(path)
            .ok()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(&file)
            .to_string_lossy()
            .into_owned();
        let reader = BufReader::new(File::open(&file)?);
        stats.merge(&extractor.extract_reader(reader, &source, &mut sink));
    }
    Ok(stats)
}
