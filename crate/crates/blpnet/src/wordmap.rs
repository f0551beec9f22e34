//! Key-character word mapping: replaces recognized character groups with
//! predefined words (registration-area codes, vehicle-class words) and
//! assembles the final plate string.

use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WordMapError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key<TAB>word`, got {text:?}")]
    Parse { line: usize, text: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
}

/// Ordered replacement rules plus the digit-separator convention.
///
/// A table with no rules is pure passthrough: labels are concatenated
/// unchanged and no digit grouping is applied.
#[derive(Debug, Clone, Default)]
pub struct WordMapTable {
    rules: Vec<(String, String)>,
    /// Group a run of at least this many digits as `NN-NN..` (hyphen after
    /// the first two). `None` disables grouping.
    digit_group_min: Option<usize>,
}

impl WordMapTable {
    /// The passthrough table: no rules, no digit grouping.
    pub fn empty() -> WordMapTable {
        WordMapTable::default()
    }

    /// Build from rule pairs; grouping defaults to runs of four or more
    /// digits when any rule is present.
    pub fn from_rules(rules: Vec<(String, String)>) -> Result<WordMapTable, WordMapError> {
        for (i, (key, _)) in rules.iter().enumerate() {
            if let Some(j) = rules[..i].iter().position(|(k, _)| k == key) {
                let _ = j;
                return Err(WordMapError::DuplicateKey {
                    line: i + 1,
                    key: key.clone(),
                });
            }
        }
        let grouping = if rules.is_empty() { None } else { Some(4) };
        Ok(WordMapTable {
            rules,
            digit_group_min: grouping,
        })
    }

    /// Override the digit-grouping convention.
    pub fn with_digit_grouping(mut self, min_run: Option<usize>) -> WordMapTable {
        self.digit_group_min = min_run;
        self
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> &[(String, String)] {
        &self.rules
    }
}

/// Load a table file: UTF-8, one `key<TAB>word` rule per line, `#` comments
/// and blank lines allowed. Duplicate keys are rejected with their line
/// number. An empty file yields the passthrough table.
pub fn load_table(path: impl AsRef<Path>) -> Result<WordMapTable, WordMapError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| WordMapError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_table(&text)
}

/// Parse table text (see [`load_table`] for the format).
pub fn parse_table(text: &str) -> Result<WordMapTable, WordMapError> {
    let mut rules: Vec<(String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, word)) = trimmed.split_once('\t') else {
            return Err(WordMapError::Parse {
                line,
                text: trimmed.to_string(),
            });
        };
        let (key, word) = (key.trim(), word.trim());
        if key.is_empty() || word.is_empty() {
            return Err(WordMapError::Parse {
                line,
                text: trimmed.to_string(),
            });
        }
        if rules.iter().any(|(k, _)| k == key) {
            return Err(WordMapError::DuplicateKey {
                line,
                key: key.to_string(),
            });
        }
        rules.push((key.to_string(), word.to_string()));
    }
    let grouping = if rules.is_empty() { None } else { Some(4) };
    Ok(WordMapTable {
        rules,
        digit_group_min: grouping,
    })
}

fn is_digit_label(label: &str) -> bool {
    label.len() == 1 && label.as_bytes()[0].is_ascii_digit()
}

/// Greedy longest-prefix rule matching at position `i`: a rule applies only
/// when its key equals the concatenation of whole labels starting there.
/// Returns (labels consumed, replacement word).
fn match_rule<'t>(labels: &[&str], i: usize, table: &'t WordMapTable) -> Option<(usize, &'t str)> {
    let mut best: Option<(usize, usize, &str)> = None; // (key chars, labels, word)
    for (key, word) in &table.rules {
        let mut consumed = 0;
        let mut remaining: &str = key;
        while !remaining.is_empty() {
            let Some(next) = labels.get(i + consumed) else {
                remaining = "!"; // ran out of labels; mark as mismatch
                break;
            };
            let Some(rest) = remaining.strip_prefix(next) else {
                remaining = "!";
                break;
            };
            remaining = rest;
            consumed += 1;
        }
        if remaining.is_empty() {
            let score = (key.len(), consumed);
            if best.is_none_or(|(kl, lc, _)| score > (kl, lc)) {
                best = Some((key.len(), consumed, word));
            }
        }
    }
    best.map(|(_, consumed, word)| (consumed, word))
}

/// Assemble the plate string from recognized labels in reading order.
///
/// Scanning left to right: the longest matching rule key (aligned to label
/// boundaries) is replaced by its word; a run of `digit_group_min`+ digit
/// labels becomes a hyphenated group (`1,2,3,4` → `12-34`); everything else
/// passes through verbatim, consecutive unmatched labels concatenated.
/// Words, digit groups, and passthrough runs are joined with single spaces.
/// Deterministic and total; with an empty table the output is exactly the
/// concatenation of the input labels.
pub fn map_plate(labels: &[&str], table: &WordMapTable) -> String {
    let mut tokens: Vec<String> = Vec::new();
    let mut raw = String::new();
    let mut i = 0;
    while i < labels.len() {
        if let Some((consumed, word)) = match_rule(labels, i, table) {
            if !raw.is_empty() {
                tokens.push(std::mem::take(&mut raw));
            }
            tokens.push(word.to_string());
            i += consumed;
            continue;
        }
        if let Some(min_run) = table.digit_group_min {
            let run = labels[i..]
                .iter()
                .take_while(|l| is_digit_label(l))
                .count();
            if run >= min_run {
                if !raw.is_empty() {
                    tokens.push(std::mem::take(&mut raw));
                }
                let digits: String = labels[i..i + run].concat();
                tokens.push(format!("{}-{}", &digits[..2], &digits[2..]));
                i += run;
                continue;
            }
        }
        raw.push_str(labels[i]);
        i += 1;
    }
    if !raw.is_empty() {
        tokens.push(raw);
    }
    tokens.join(" ")
}
