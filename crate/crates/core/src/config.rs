//! Run configuration files.
//!
//! The format is a small INI dialect: `key = value` lines, `#` full-line
//! comments, and the four sections `[ae]`, `[classifier]`, `[fgim]`,
//! `[data]`. The keys `seed` and `output_dir` sit above the first section
//! header. Every key is optional and falls back to its default, unknown
//! keys and sections are rejected, and duplicate keys within one file are
//! errors rather than silently last-wins. [`serialize`] emits a canonical
//! rendering with every key explicit, so `normalize` is a fixed point:
//! normalizing twice equals normalizing once.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autoencoder::AeHyperParams;
use crate::fgim::FgimConfig;
use crate::latent_classifier::ClfHyperParams;
use crate::textdata::Layout;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {what}")]
    Syntax { line: usize, what: String },
    #[error("line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: unknown key {key:?} in {section}")]
    UnknownKey {
        line: usize,
        section: &'static str,
        key: String,
    },
    #[error("line {line}: key {key:?}: {what}")]
    BadValue {
        line: usize,
        key: String,
        what: String,
    },
    #[error("section [{section}]: {what}")]
    Domain { section: &'static str, what: String },
}

/// Dataset location and vocabulary limits.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub layout: Layout,
    /// Attribute value names (file-per-attribute layout, exactly two) or
    /// rating column names (tsv layout, one per aspect).
    pub attrs: Vec<String>,
    pub min_count: usize,
    pub max_vocab: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: PathBuf::from("data"),
            layout: Layout::FilePerAttribute,
            attrs: vec!["neg".into(), "pos".into()],
            min_count: 1,
            max_vocab: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub ae: AeHyperParams,
    pub classifier: ClfHyperParams,
    pub fgim: FgimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            output_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            ae: AeHyperParams::default(),
            classifier: ClfHyperParams::default(),
            fgim: FgimConfig::default(),
        }
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    // Top-level keys use the empty section name internally.
    let mut section: &'static str = "";
    let mut seen: Vec<(String, String)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                line,
                what: format!("section header {trimmed:?} is missing its closing bracket"),
            })?;
            section = match name {
                "ae" => "ae",
                "classifier" => "classifier",
                "fgim" => "fgim",
                "data" => "data",
                _ => {
                    return Err(ConfigError::UnknownSection {
                        line,
                        name: name.to_string(),
                    })
                }
            };
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            what: format!("expected `key = value`, got {trimmed:?}"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                what: "empty key".into(),
            });
        }
        if seen.iter().any(|(s, k)| s == section && k == key) {
            return Err(ConfigError::Syntax {
                line,
                what: format!("duplicate key {key:?}"),
            });
        }
        seen.push((section.to_string(), key.to_string()));
        apply(&mut cfg, section, key, value, line)?;
    }

    validate(&cfg)?;
    Ok(cfg)
}

fn apply(
    cfg: &mut RunConfig,
    section: &'static str,
    key: &str,
    value: &str,
    line: usize,
) -> Result<(), ConfigError> {
    let unknown = || {
        Err(ConfigError::UnknownKey {
            line,
            section: if section.is_empty() { "the top level" } else { section },
            key: key.to_string(),
        })
    };
    match section {
        "" => match key {
            "seed" => cfg.seed = parse_num(key, value, line)?,
            "output_dir" => cfg.output_dir = PathBuf::from(value),
            _ => return unknown(),
        },
        "data" => match key {
            "dir" => cfg.data.dir = PathBuf::from(value),
            "layout" => {
                cfg.data.layout = match value {
                    "file_per_attribute" => Layout::FilePerAttribute,
                    "tsv" => Layout::Tsv,
                    _ => {
                        return Err(ConfigError::BadValue {
                            line,
                            key: key.to_string(),
                            what: format!(
                                "{value:?} is not a layout (file_per_attribute or tsv)"
                            ),
                        })
                    }
                }
            }
            "attrs" => {
                let names: Vec<String> = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                if names.is_empty() {
                    return Err(ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        what: "needs at least one attribute name".into(),
                    });
                }
                cfg.data.attrs = names;
            }
            "min_count" => cfg.data.min_count = parse_num(key, value, line)?,
            "max_vocab" => cfg.data.max_vocab = parse_num(key, value, line)?,
            _ => return unknown(),
        },
        "ae" => match key {
            "embed_dim" => cfg.ae.embed_dim = parse_num(key, value, line)?,
            "latent_dim" => cfg.ae.latent_dim = parse_num(key, value, line)?,
            "attn_dim" => cfg.ae.attn_dim = parse_num(key, value, line)?,
            "ffn_dim" => cfg.ae.ffn_dim = parse_num(key, value, line)?,
            "gru_hidden" => cfg.ae.gru_hidden = parse_num(key, value, line)?,
            "enc_layers" => cfg.ae.enc_layers = parse_num(key, value, line)?,
            "dec_layers" => cfg.ae.dec_layers = parse_num(key, value, line)?,
            "heads" => cfg.ae.heads = parse_num(key, value, line)?,
            "max_len" => cfg.ae.max_len = parse_num(key, value, line)?,
            "smoothing" => cfg.ae.smoothing = parse_num(key, value, line)?,
            "lr" => cfg.ae.lr = parse_num(key, value, line)?,
            "batch" => cfg.ae.batch = parse_num(key, value, line)?,
            "dropout" => cfg.ae.dropout = parse_num(key, value, line)?,
            "latent_noise" => cfg.ae.latent_noise = parse_num(key, value, line)?,
            "epochs" => cfg.ae.epochs = parse_num(key, value, line)?,
            _ => return unknown(),
        },
        "classifier" => match key {
            "hidden1" => cfg.classifier.hidden1 = parse_num(key, value, line)?,
            "hidden2" => cfg.classifier.hidden2 = parse_num(key, value, line)?,
            "lr" => cfg.classifier.lr = parse_num(key, value, line)?,
            "batch" => cfg.classifier.batch = parse_num(key, value, line)?,
            "epochs" => cfg.classifier.epochs = parse_num(key, value, line)?,
            "input_noise" => cfg.classifier.input_noise = parse_num(key, value, line)?,
            _ => return unknown(),
        },
        "fgim" => match key {
            "weights" => {
                let mut weights = Vec::new();
                for part in value.split(',') {
                    weights.push(parse_num::<f64>(key, part.trim(), line)?);
                }
                cfg.fgim.weights = weights;
            }
            "lambda" => {
                let v: f64 = parse_num(key, value, line)?;
                // The in-range check lives here so the error names the
                // file's key, not the struct field.
                if !(v > 0.0 && v < 1.0) {
                    return Err(ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        what: format!("{v} must lie strictly between 0 and 1"),
                    });
                }
                cfg.fgim.decay = v;
            }
            "threshold" => cfg.fgim.threshold = parse_num(key, value, line)?,
            "s_steps" => cfg.fgim.s_steps = parse_num(key, value, line)?,
            _ => return unknown(),
        },
        _ => unreachable!("section names are fixed at parse time"),
    }
    Ok(())
}

fn parse_num<N: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<N, ConfigError>
where
    N::Err: std::fmt::Display,
{
    value.parse().map_err(|e: N::Err| ConfigError::BadValue {
        line,
        key: key.to_string(),
        what: format!("{value:?}: {e}"),
    })
}

fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    cfg.ae.validate().map_err(|e| ConfigError::Domain {
        section: "ae",
        what: e.to_string(),
    })?;
    cfg.classifier.validate().map_err(|e| ConfigError::Domain {
        section: "classifier",
        what: e.to_string(),
    })?;
    cfg.fgim.validate().map_err(|e| ConfigError::Domain {
        section: "fgim",
        what: e.to_string(),
    })?;
    if cfg.data.min_count == 0 {
        return Err(ConfigError::Domain {
            section: "data",
            what: "min_count must be at least 1".into(),
        });
    }
    Ok(())
}

/// Canonical rendering: every key explicit, fixed order. Parsing the
/// output reproduces the config exactly.
pub fn serialize(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "seed = {}", cfg.seed);
    let _ = writeln!(w, "output_dir = {}", cfg.output_dir.display());
    let _ = writeln!(w);
    let _ = writeln!(w, "[data]");
    let _ = writeln!(w, "dir = {}", cfg.data.dir.display());
    let layout = match cfg.data.layout {
        Layout::FilePerAttribute => "file_per_attribute",
        Layout::Tsv => "tsv",
    };
    let _ = writeln!(w, "layout = {layout}");
    let _ = writeln!(w, "attrs = {}", cfg.data.attrs.join(","));
    let _ = writeln!(w, "min_count = {}", cfg.data.min_count);
    let _ = writeln!(w, "max_vocab = {}", cfg.data.max_vocab);
    let _ = writeln!(w);
    let _ = writeln!(w, "[ae]");
    let _ = writeln!(w, "embed_dim = {}", cfg.ae.embed_dim);
    let _ = writeln!(w, "latent_dim = {}", cfg.ae.latent_dim);
    let _ = writeln!(w, "attn_dim = {}", cfg.ae.attn_dim);
    let _ = writeln!(w, "ffn_dim = {}", cfg.ae.ffn_dim);
    let _ = writeln!(w, "gru_hidden = {}", cfg.ae.gru_hidden);
    let _ = writeln!(w, "enc_layers = {}", cfg.ae.enc_layers);
    let _ = writeln!(w, "dec_layers = {}", cfg.ae.dec_layers);
    let _ = writeln!(w, "heads = {}", cfg.ae.heads);
    let _ = writeln!(w, "max_len = {}", cfg.ae.max_len);
    let _ = writeln!(w, "smoothing = {}", cfg.ae.smoothing);
    let _ = writeln!(w, "lr = {}", cfg.ae.lr);
    let _ = writeln!(w, "batch = {}", cfg.ae.batch);
    let _ = writeln!(w, "dropout = {}", cfg.ae.dropout);
    let _ = writeln!(w, "latent_noise = {}", cfg.ae.latent_noise);
    let _ = writeln!(w, "epochs = {}", cfg.ae.epochs);
    let _ = writeln!(w);
    let _ = writeln!(w, "[classifier]");
    let _ = writeln!(w, "hidden1 = {}", cfg.classifier.hidden1);
    let _ = writeln!(w, "hidden2 = {}", cfg.classifier.hidden2);
    let _ = writeln!(w, "lr = {}", cfg.classifier.lr);
    let _ = writeln!(w, "batch = {}", cfg.classifier.batch);
    let _ = writeln!(w, "epochs = {}", cfg.classifier.epochs);
    let _ = writeln!(w, "input_noise = {}", cfg.classifier.input_noise);
    let _ = writeln!(w);
    let _ = writeln!(w, "[fgim]");
    let weights: Vec<String> = cfg.fgim.weights.iter().map(f64::to_string).collect();
    let _ = writeln!(w, "weights = {}", weights.join(","));
    let _ = writeln!(w, "lambda = {}", cfg.fgim.decay);
    let _ = writeln!(w, "threshold = {}", cfg.fgim.threshold);
    let _ = writeln!(w, "s_steps = {}", cfg.fgim.s_steps);
    s
}

/// Parses and re-serializes, producing the canonical form of `text`.
pub fn normalize(text: &str) -> Result<String, ConfigError> {
    Ok(serialize(&parse_str(text)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_all_defaults() {
        let cfg = parse_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.fgim.weights, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(cfg.fgim.threshold, 0.001);
        assert_eq!(cfg.fgim.decay, 0.9);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = parse_str("# a comment\n\n   # indented comment\nseed = 9\n").unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn lambda_out_of_range_is_rejected_with_its_key() {
        let err = parse_str("[fgim]\nlambda = 1.5\n").unwrap_err();
        match err {
            ConfigError::BadValue { line, key, .. } => {
                assert_eq!(line, 2);
                assert_eq!(key, "lambda");
            }
            other => panic!("expected BadValue, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected_with_line_number() {
        let err = parse_str("[ae]\nwidth = 3\n").unwrap_err();
        match err {
            ConfigError::UnknownKey { line, section, key } => {
                assert_eq!(line, 2);
                assert_eq!(section, "ae");
                assert_eq!(key, "width");
            }
            other => panic!("expected UnknownKey, got {other:?}"),
        }
    }

    #[test]
    fn unknown_section_is_rejected() {
        let err = parse_str("[decoder]\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownSection { line: 1, .. }));
    }

    #[test]
    fn line_without_equals_is_a_syntax_error() {
        let err = parse_str("seed = 1\njust words\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }));
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = parse_str("[ae]\nheads = 2\nheads = 4\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 3, .. }));
    }

    #[test]
    fn same_key_in_different_sections_is_fine() {
        let cfg = parse_str("[ae]\nlr = 0.01\n[classifier]\nlr = 0.5\n").unwrap();
        assert_eq!(cfg.ae.lr, 0.01);
        assert_eq!(cfg.classifier.lr, 0.5);
    }

    #[test]
    fn top_level_keys_are_rejected_inside_sections() {
        let err = parse_str("[ae]\nseed = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { .. }));
    }

    #[test]
    fn cross_field_domain_errors_surface_with_their_section() {
        // latent_dim must stay at twice gru_hidden.
        let err = parse_str("[ae]\nlatent_dim = 100\n").unwrap_err();
        match err {
            ConfigError::Domain { section, what } => {
                assert_eq!(section, "ae");
                assert!(what.contains("latent_dim"), "message was {what:?}");
            }
            other => panic!("expected Domain, got {other:?}"),
        }
    }

    #[test]
    fn layouts_parse_and_bad_ones_do_not() {
        let cfg = parse_str("[data]\nlayout = tsv\nattrs = looks,taste\n").unwrap();
        assert_eq!(cfg.data.layout, Layout::Tsv);
        assert_eq!(cfg.data.attrs, vec!["looks", "taste"]);
        let err = parse_str("[data]\nlayout = json\n").unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { .. }));
    }

    #[test]
    fn weights_accept_spaces_around_commas() {
        let cfg = parse_str("[fgim]\nweights = 0.5, 1.5 ,2.5\n").unwrap();
        assert_eq!(cfg.fgim.weights, vec![0.5, 1.5, 2.5]);
    }

    #[test]
    fn descending_weights_fail_domain_validation() {
        let err = parse_str("[fgim]\nweights = 3,2,1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Domain { section: "fgim", .. }));
    }

    const MESSY: &str = "\
# toy run
seed = 7
output_dir = runs/toy

[fgim]
threshold = 0.01
weights = 2,4

[ae]
heads   =   2
embed_dim = 32
attn_dim = 32
latent_dim = 16
gru_hidden = 8

[data]
attrs = bad, good
";

    #[test]
    fn normalization_is_a_fixed_point() {
        let once = normalize(MESSY).unwrap();
        let twice = normalize(&once).unwrap();
        assert_eq!(once, twice);
        assert_eq!(parse_str(&once).unwrap(), parse_str(MESSY).unwrap());
    }

    #[test]
    fn serialize_then_parse_is_identity() {
        let mut cfg = RunConfig::default();
        cfg.seed = 99;
        cfg.output_dir = PathBuf::from("elsewhere");
        cfg.data.attrs = vec!["a".into(), "b".into(), "c".into()];
        cfg.data.layout = Layout::Tsv;
        cfg.ae.smoothing = 0.15;
        cfg.ae.epochs = 3;
        cfg.classifier.hidden2 = 12;
        cfg.fgim.weights = vec![0.25, 1.0, 8.0];
        cfg.fgim.decay = 0.75;
        cfg.fgim.s_steps = 5;
        let parsed = parse_str(&serialize(&cfg)).unwrap();
        assert_eq!(parsed, cfg);
    }
}
