//! Weighted mixing of newline-delimited document sources into an infinite,
//! deterministic stream of filter-surviving documents.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::filter::{filter_sequence, FilterPolicy, SkipReason};
use super::tokenizer::Tokenizer;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    pub path: PathBuf,
    /// Relative sampling mass; draws land on this source with probability
    /// weight / sum of weights.
    pub weight: f64,
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(Error::Data(format!(
                "source {}: weight must be positive, got {}",
                self.name, self.weight
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct Manifest {
    source: Vec<SourceSpec>,
}

/// Read a source manifest. Relative document paths are resolved against the
/// manifest's own directory.
pub fn load_sources(manifest_path: &Path) -> Result<Vec<SourceSpec>> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: Manifest = toml::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
    if manifest.source.is_empty() {
        return Err(Error::Data(format!("{}: no sources listed", manifest_path.display())));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut sources = manifest.source;
    for s in &mut sources {
        s.validate()?;
        if s.path.is_relative() {
            s.path = base.join(&s.path);
        }
    }
    Ok(sources)
}

fn read_documents(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

#[derive(Debug)]
struct LoadedSource {
    /// Documents that survived the filter, in file order.
    survivors: Vec<String>,
    /// Shuffled indices into `survivors` not yet emitted this epoch.
    queue: Vec<usize>,
    epoch: u64,
}

/// Infinite document stream. Each draw picks a source in proportion to its
/// weight, then emits that source's next surviving document; a source that
/// runs out recycles with a fresh shuffle seeded by base_seed + epoch.
#[derive(Debug)]
pub struct DocStream {
    sources: Vec<LoadedSource>,
    cumulative_weights: Vec<f64>,
    base_seed: u64,
    choice_rng: ChaCha8Rng,
}

/// Build the stream: documents are read fully, filtered once up front, and
/// retained in memory. A source whose file holds no surviving documents can
/// never satisfy a draw, so it is rejected here rather than mid-stream.
pub fn mix_stream(
    sources: &[SourceSpec],
    tokenizer: &dyn Tokenizer,
    policy: &FilterPolicy,
    seed: u64,
) -> Result<DocStream> {
    if sources.is_empty() {
        return Err(Error::Data("document mixing needs at least one source".into()));
    }
    let mut loaded = Vec::with_capacity(sources.len());
    let mut cumulative_weights = Vec::with_capacity(sources.len());
    let mut total = 0.0;
    for spec in sources {
        spec.validate()?;
        let docs = read_documents(&spec.path)?;
        if docs.is_empty() {
            return Err(Error::Exhausted(format!("source {} is empty", spec.name)));
        }
        let survivors: Vec<String> = docs
            .into_iter()
            .filter(|doc| {
                filter_sequence(doc, tokenizer.encode(doc).len(), policy).keep()
            })
            .collect();
        if survivors.is_empty() {
            return Err(Error::Exhausted(format!(
                "source {}: every document was filtered out",
                spec.name
            )));
        }
        total += spec.weight;
        cumulative_weights.push(total);
        let mut source = LoadedSource { survivors, queue: Vec::new(), epoch: 0 };
        reshuffle(&mut source, seed);
        loaded.push(source);
    }
    Ok(DocStream {
        sources: loaded,
        cumulative_weights,
        base_seed: seed,
        choice_rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

fn reshuffle(source: &mut LoadedSource, base_seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(source.epoch));
    source.queue = (0..source.survivors.len()).collect();
    source.queue.shuffle(&mut rng);
    // Popped from the back; reverse so the shuffled order is emission order.
    source.queue.reverse();
}

impl Iterator for DocStream {
    type Item = String;

    fn next(&mut self) -> Option<String> {
        let total = *self.cumulative_weights.last().unwrap();
        let mark = self.choice_rng.gen::<f64>() * total;
        let pick = self.cumulative_weights.iter().position(|&c| mark < c).unwrap_or(0);
        let source = &mut self.sources[pick];
        if source.queue.is_empty() {
            source.epoch += 1;
            reshuffle(source, self.base_seed);
        }
        let idx = source.queue.pop().expect("survivor set is never empty");
        Some(source.survivors[idx].clone())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SourceStats {
    pub kept: usize,
    pub skipped_chars: usize,
    pub skipped_tokens: usize,
}

impl SourceStats {
    pub fn total(&self) -> usize {
        self.kept + self.skipped_chars + self.skipped_tokens
    }
}

/// Per-source keep/skip counts under a policy, for the diagnostics command.
pub fn filter_stats(
    sources: &[SourceSpec],
    tokenizer: &dyn Tokenizer,
    policy: &FilterPolicy,
) -> Result<Vec<(String, SourceStats)>> {
    let mut out = Vec::with_capacity(sources.len());
    for spec in sources {
        spec.validate()?;
        let mut stats = SourceStats::default();
        for doc in read_documents(&spec.path)? {
            match filter_sequence(&doc, tokenizer.encode(&doc).len(), policy) {
                super::filter::FilterDecision::Keep => stats.kept += 1,
                super::filter::FilterDecision::Skip(SkipReason::TooFewChars) => {
                    stats.skipped_chars += 1
                }
                super::filter::FilterDecision::Skip(SkipReason::TooFewTokens) => {
                    stats.skipped_tokens += 1
                }
            }
        }
        out.push((spec.name.clone(), stats));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::tokenizer::ByteTokenizer;
    use super::*;
    use std::collections::BTreeMap;
    use std::io::Write;

    fn write_source(dir: &Path, name: &str, docs: &[&str]) -> SourceSpec {
        let path = dir.join(format!("{name}.txt"));
        let mut f = fs::File::create(&path).unwrap();
        for d in docs {
            writeln!(f, "{d}").unwrap();
        }
        SourceSpec { name: name.into(), path, weight: 1.0 }
    }

    fn multiset(docs: &[String]) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for d in docs {
            *m.entry(d.clone()).or_insert(0) += 1;
        }
        m
    }

    #[test]
    fn same_seed_gives_identical_streams() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_source(dir.path(), "a", &["alpha doc", "beta doc", "gamma doc"]);
        let b = write_source(dir.path(), "b", &["delta doc", "epsilon doc"]);
        let sources = [a, b];
        let policy = FilterPolicy::keep_all();
        let first: Vec<String> =
            mix_stream(&sources, &ByteTokenizer, &policy, 9).unwrap().take(50).collect();
        let second: Vec<String> =
            mix_stream(&sources, &ByteTokenizer, &policy, 9).unwrap().take(50).collect();
        assert_eq!(first, second);
        let other: Vec<String> =
            mix_stream(&sources, &ByteTokenizer, &policy, 10).unwrap().take(50).collect();
        assert_ne!(first, other);
    }

    #[test]
    fn single_source_epoch_is_a_shuffled_pass_over_survivors() {
        let dir = tempfile::tempdir().unwrap();
        let docs = ["one fish", "two fish", "red fish", "blue fish", "old fish"];
        let source = write_source(dir.path(), "only", &docs);
        let policy = FilterPolicy::keep_all();
        let stream = mix_stream(&[source], &ByteTokenizer, &policy, 4).unwrap();
        let emitted: Vec<String> = stream.take(10).collect();
        // Each epoch of length five is a permutation of the full file.
        let want: Vec<String> = docs.iter().map(|s| s.to_string()).collect();
        assert_eq!(multiset(&emitted[..5]), multiset(&want));
        assert_eq!(multiset(&emitted[5..]), multiset(&want));
    }

    #[test]
    fn draw_fractions_track_the_weights() {
        let dir = tempfile::tempdir().unwrap();
        let mut heavy = write_source(dir.path(), "heavy", &["h1", "h2", "h3"]);
        let light = write_source(dir.path(), "light", &["l1", "l2"]);
        heavy.weight = 3.0;
        let policy = FilterPolicy::keep_all();
        let stream = mix_stream(&[heavy, light], &ByteTokenizer, &policy, 7).unwrap();
        let n = 100_000;
        let heavy_draws =
            stream.take(n).filter(|d| d.starts_with('h')).count();
        let fraction = heavy_draws as f64 / n as f64;
        assert!((0.74..=0.76).contains(&fraction), "heavy fraction {fraction}");
    }

    #[test]
    fn filtering_before_or_after_mixing_yields_the_same_survivors() {
        let dir = tempfile::tempdir().unwrap();
        let keep1 = "k".repeat(30);
        let keep2 = "q".repeat(25);
        let mixed = write_source(
            dir.path(),
            "mixed",
            &[keep1.as_str(), "tiny", keep2.as_str(), "small"],
        );
        let prefiltered = write_source(dir.path(), "pre", &[keep1.as_str(), keep2.as_str()]);
        let policy = FilterPolicy { min_chars: 20, min_tokens: 20 };
        let with_filter: Vec<String> =
            mix_stream(&[mixed], &ByteTokenizer, &policy, 3).unwrap().take(2).collect();
        let without: Vec<String> = mix_stream(&[prefiltered], &ByteTokenizer, &FilterPolicy::keep_all(), 3)
            .unwrap()
            .take(2)
            .collect();
        assert_eq!(multiset(&with_filter), multiset(&without));
    }

    #[test]
    fn empty_or_fully_filtered_sources_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let empty = write_source(dir.path(), "empty", &[]);
        let err = mix_stream(&[empty], &ByteTokenizer, &FilterPolicy::keep_all(), 1).unwrap_err();
        assert!(matches!(err, Error::Exhausted(_)), "{err}");

        let tiny = write_source(dir.path(), "tiny", &["a", "b"]);
        let err =
            mix_stream(&[tiny], &ByteTokenizer, &FilterPolicy::default(), 1).unwrap_err();
        assert!(matches!(err, Error::Exhausted(_)), "{err}");
    }

    #[test]
    fn manifest_resolves_relative_paths_and_validates_weights() {
        let dir = tempfile::tempdir().unwrap();
        write_source(dir.path(), "corpus", &["doc one", "doc two"]);
        let manifest = dir.path().join("sources.toml");
        fs::write(
            &manifest,
            "[[source]]\nname = \"corpus\"\npath = \"corpus.txt\"\nweight = 2.0\n",
        )
        .unwrap();
        let sources = load_sources(&manifest).unwrap();
        assert_eq!(sources.len(), 1);
        assert!(sources[0].path.is_absolute() || sources[0].path.starts_with(dir.path()));
        assert!(sources[0].path.exists());

        fs::write(
            &manifest,
            "[[source]]\nname = \"corpus\"\npath = \"corpus.txt\"\nweight = 0.0\n",
        )
        .unwrap();
        assert!(load_sources(&manifest).is_err());
    }

    #[test]
    fn filter_stats_count_reasons_separately() {
        let dir = tempfile::tempdir().unwrap();
        let long = "x".repeat(40);
        let source = write_source(dir.path(), "s", &["ab", "cd", long.as_str()]);
        let policy = FilterPolicy { min_chars: 10, min_tokens: 50 };
        let stats = filter_stats(&[source], &ByteTokenizer, &policy).unwrap();
        assert_eq!(stats[0].1, SourceStats { kept: 0, skipped_chars: 2, skipped_tokens: 1 });
        assert_eq!(stats[0].1.total(), 3);
    }
}
