//! Tokenization, vocabulary, corpus ingestion, and deterministic batching.
//!
//! Two on-disk layouts are understood. The file-per-attribute layout holds
//! one sentence per line in `<split>.<name>` files, one file per value of a
//! single binary aspect: items from the first configured file get attribute
//! 0.0, items from the second get 1.0. The TSV layout holds one item per
//! row, column 0 the sentence and columns 1..=A decimal ratings in [0, 1],
//! which covers multi-aspect corpora. Optional `<split>.<name>.ref` files
//! carry line-aligned reference sentences for test items.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::numerics::seeded_rng;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, thiserror::Error)]
pub enum TextDataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {what}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        what: String,
    },
    #[error("dataset in {}: {what}", dir.display())]
    Layout { dir: PathBuf, what: String },
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },
}

/// Lowercased whitespace tokenization. The released corpora ship with
/// punctuation already split off, so nothing smarter is needed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

// ---- vocabulary ----

#[derive(Clone, Debug)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from tokenized sentences: tokens with frequency
    /// at least `min_count`, ordered by descending frequency with
    /// lexicographic tie-breaks, truncated so the table (reserved entries
    /// included) has at most `max_size` rows.
    pub fn build<'a, I, S>(
        sentences: I,
        min_count: usize,
        max_size: usize,
    ) -> Result<Vocab, TextDataError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[&'a str]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut saw_any = false;
        for sent in sentences {
            saw_any = true;
            for &tok in sent.as_ref() {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        if !saw_any {
            return Err(TextDataError::EmptyCorpus);
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        for (tok, _) in ranked {
            if tokens.len() >= max_size {
                break;
            }
            tokens.push(tok.to_string());
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id for a token, UNK when absent.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Result<&str, TextDataError> {
        self.tokens
            .get(id)
            .map(|s| s.as_str())
            .ok_or(TextDataError::IdOutOfRange { id, size: self.tokens.len() })
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Maps tokens to ids, appends EOS, then truncates to `max_len`. A
    /// sentence at the cap therefore loses its EOS, matching the hard
    /// length limits the corpora are distributed with.
    pub fn encode(&self, tokens: &[String], max_len: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = tokens.iter().map(|t| self.id(t)).collect();
        ids.push(EOS);
        ids.truncate(max_len);
        ids
    }

    /// Maps ids back to tokens, stopping at the first EOS and dropping
    /// reserved tokens.
    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>, TextDataError> {
        let mut out = Vec::new();
        for &id in ids {
            if id == EOS {
                break;
            }
            let tok = self.token(id)?;
            // UNK stays visible; PAD and BOS are structural and dropped.
            if id != PAD && id != BOS {
                out.push(tok.to_string());
            }
        }
        Ok(out)
    }
}

// ---- corpora ----

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct CorpusItem {
    pub tokens: Vec<String>,
    pub attrs: Vec<f64>,
    pub reference: Option<Vec<String>>,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub split: Split,
    pub items: Vec<CorpusItem>,
    pub attr_names: Vec<String>,
    pub max_len: usize,
}

impl Corpus {
    /// Width of the items' attribute vectors. `attr_names` cannot stand in
    /// for this: in the file-per-attribute layout it holds the two value
    /// names of a single binary aspect.
    pub fn n_aspects(&self) -> usize {
        self.items.first().map_or(1, |it| it.attrs.len())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Layout {
    /// `<split>.<name>` sentence files, one per value of one binary aspect.
    FilePerAttribute,
    /// `<split>.tsv` with sentence and A rating columns.
    Tsv,
}

/// All splits of a dataset. Train is mandatory; dev and test are not.
#[derive(Clone, Debug)]
pub struct DatasetSplits {
    pub train: Corpus,
    pub dev: Option<Corpus>,
    pub test: Option<Corpus>,
}

/// Loads a dataset directory. For [`Layout::FilePerAttribute`],
/// `attr_names` must hold exactly the two value names (first maps to 0.0,
/// second to 1.0) and A is 1. For [`Layout::Tsv`], `attr_names` names the
/// rating columns and A is its length. Sentences longer than `max_len`
/// tokens are truncated, not dropped.
pub fn load_dataset(
    dir: &Path,
    layout: Layout,
    attr_names: &[String],
    max_len: usize,
) -> Result<DatasetSplits, TextDataError> {
    let load = |split: Split| -> Result<Option<Corpus>, TextDataError> {
        match layout {
            Layout::FilePerAttribute => load_file_per_attr(dir, split, attr_names, max_len),
            Layout::Tsv => load_tsv(dir, split, attr_names, max_len),
        }
    };
    let train = load(Split::Train)?.ok_or_else(|| TextDataError::Layout {
        dir: dir.to_path_buf(),
        what: "no training files found".into(),
    })?;
    if train.is_empty() {
        return Err(TextDataError::Layout {
            dir: dir.to_path_buf(),
            what: "training split is empty".into(),
        });
    }
    Ok(DatasetSplits {
        train,
        dev: load(Split::Dev)?,
        test: load(Split::Test)?,
    })
}

fn read_lines(path: &Path) -> Result<Vec<String>, TextDataError> {
    let text = std::fs::read_to_string(path).map_err(|source| TextDataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

fn load_file_per_attr(
    dir: &Path,
    split: Split,
    attr_names: &[String],
    max_len: usize,
) -> Result<Option<Corpus>, TextDataError> {
    if attr_names.len() != 2 {
        return Err(TextDataError::Layout {
            dir: dir.to_path_buf(),
            what: format!(
                "file-per-attribute layout describes one binary aspect and needs \
                 exactly 2 attribute value names, got {}",
                attr_names.len()
            ),
        });
    }
    let paths: Vec<PathBuf> = attr_names
        .iter()
        .map(|name| dir.join(format!("{split}.{name}")))
        .collect();
    if paths.iter().all(|p| !p.exists()) {
        return Ok(None);
    }
    let mut items = Vec::new();
    for (value_idx, path) in paths.iter().enumerate() {
        let lines = read_lines(path)?;
        let refs: Option<Vec<String>> = {
            let ref_path = dir.join(format!("{split}.{}.ref", attr_names[value_idx]));
            if ref_path.exists() {
                let ref_lines = read_lines(&ref_path)?;
                if ref_lines.len() != lines.len() {
                    return Err(TextDataError::Malformed {
                        path: ref_path,
                        line: ref_lines.len(),
                        what: format!(
                            "reference file has {} lines, source has {}",
                            ref_lines.len(),
                            lines.len()
                        ),
                    });
                }
                Some(ref_lines)
            } else {
                None
            }
        };
        for (i, line) in lines.iter().enumerate() {
            let mut tokens = tokenize(line);
            tokens.truncate(max_len);
            let reference = refs.as_ref().map(|r| {
                let mut t = tokenize(&r[i]);
                t.truncate(max_len);
                t
            });
            items.push(CorpusItem {
                tokens,
                attrs: vec![value_idx as f64],
                reference,
            });
        }
    }
    Ok(Some(Corpus {
        split,
        items,
        attr_names: attr_names.to_vec(),
        max_len,
    }))
}

fn load_tsv(
    dir: &Path,
    split: Split,
    attr_names: &[String],
    max_len: usize,
) -> Result<Option<Corpus>, TextDataError> {
    let path = dir.join(format!("{split}.tsv"));
    if !path.exists() {
        return Ok(None);
    }
    let a = attr_names.len();
    let lines = read_lines(&path)?;
    let mut items = Vec::new();
    for (lineno, line) in lines.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != a + 1 {
            return Err(TextDataError::Malformed {
                path: path.clone(),
                line: lineno + 1,
                what: format!("expected {} tab-separated columns, got {}", a + 1, cols.len()),
            });
        }
        let mut attrs = Vec::with_capacity(a);
        for (k, raw) in cols[1..].iter().enumerate() {
            let v: f64 = raw.trim().parse().map_err(|_| TextDataError::Malformed {
                path: path.clone(),
                line: lineno + 1,
                what: format!("rating column {} is not a number: {raw:?}", k + 1),
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(TextDataError::Malformed {
                    path: path.clone(),
                    line: lineno + 1,
                    what: format!("rating {v} in column {} is outside [0, 1]", k + 1),
                });
            }
            attrs.push(v);
        }
        let mut tokens = tokenize(cols[0]);
        tokens.truncate(max_len);
        items.push(CorpusItem {
            tokens,
            attrs,
            reference: None,
        });
    }
    Ok(Some(Corpus {
        split,
        items,
        attr_names: attr_names.to_vec(),
        max_len,
    }))
}

// ---- batching ----

/// Ids are padded to the longest sequence in the batch; the mask is 1.0
/// exactly where the id is not PAD.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub mask: Vec<f64>,
    pub lengths: Vec<usize>,
    pub attrs: Vec<f64>,
    pub batch: usize,
    pub time: usize,
    pub n_aspects: usize,
}

impl Batch {
    pub fn row_ids(&self, b: usize) -> &[usize] {
        &self.ids[b * self.time..(b + 1) * self.time]
    }
}

/// Encodes `items` (already in batch order) into one padded batch.
pub fn make_batch(items: &[&CorpusItem], vocab: &Vocab, max_len: usize) -> Batch {
    let encoded: Vec<Vec<usize>> = items
        .iter()
        .map(|it| vocab.encode(&it.tokens, max_len))
        .collect();
    let time = encoded.iter().map(|e| e.len()).max().unwrap_or(1).max(1);
    let batch = items.len();
    let n_aspects = items.first().map(|it| it.attrs.len()).unwrap_or(0);
    let mut ids = vec![PAD; batch * time];
    let mut mask = vec![0.0; batch * time];
    let mut lengths = Vec::with_capacity(batch);
    let mut attrs = Vec::with_capacity(batch * n_aspects);
    for (b, e) in encoded.iter().enumerate() {
        for (t, &id) in e.iter().enumerate() {
            ids[b * time + t] = id;
            mask[b * time + t] = 1.0;
        }
        lengths.push(e.len());
        attrs.extend_from_slice(&items[b].attrs);
    }
    Batch {
        ids,
        mask,
        lengths,
        attrs,
        batch,
        time,
        n_aspects,
    }
}

/// Deterministic batch stream. The same (corpus, batch_size, shuffle, seed)
/// always yields the same batches; the final partial batch is emitted.
pub fn batch_iter<'a>(
    corpus: &'a Corpus,
    vocab: &'a Vocab,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> impl Iterator<Item = Batch> + 'a {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..corpus.items.len()).collect();
    if shuffle {
        order.shuffle(&mut seeded_rng(seed));
    }
    let max_len = corpus.max_len;
    (0..order.len().div_ceil(batch_size)).map(move |chunk| {
        let slice = &order[chunk * batch_size..((chunk + 1) * batch_size).min(order.len())];
        let items: Vec<&CorpusItem> = slice.iter().map(|&i| &corpus.items[i]).collect();
        make_batch(&items, vocab, max_len)
    })
}
