//! word2vec text-format embedding tables.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const UNK_TOKEN: &str = "<unk>";

/// Frozen word vectors plus an unknown-word row.
///
/// Rows are stored in file order; when the file has no `<unk>` row, a zero row
/// is appended after them and used for every absent token.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    /// `[rows, dim]`, row-major.
    matrix: Vec<f64>,
    rows: usize,
    unk: usize,
    /// Tokens that appeared more than once in the source file.
    pub duplicates: usize,
}

impl EmbeddingTable {
    /// Builds a table from `(token, vector)` pairs. Later duplicates replace earlier ones.
    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        if dim == 0 {
            return Err(Error::domain("embeddings", "dimension must be positive"));
        }
        let mut table = EmbeddingTable {
            dim,
            index: HashMap::new(),
            matrix: Vec::new(),
            rows: 0,
            unk: 0,
            duplicates: 0,
        };
        for (tok, v) in entries {
            let tok = tok.into();
            if v.len() != dim {
                return Err(Error::domain(
                    "embeddings",
                    format!("vector for {tok:?} has {} values, expected {dim}", v.len()),
                ));
            }
            table.push(tok, &v);
        }
        table.finish();
        Ok(table)
    }

    fn push(&mut self, tok: String, v: &[f64]) {
        if let Some(&row) = self.index.get(&tok) {
            self.duplicates += 1;
            self.matrix[row * self.dim..(row + 1) * self.dim].copy_from_slice(v);
        } else {
            self.index.insert(tok, self.rows);
            self.matrix.extend_from_slice(v);
            self.rows += 1;
        }
    }

    fn finish(&mut self) {
        self.unk = match self.index.get(UNK_TOKEN) {
            Some(&row) => row,
            None => {
                self.matrix.extend(std::iter::repeat_n(0.0, self.dim));
                self.rows += 1;
                self.rows - 1
            }
        };
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored vectors, excluding a synthesized unknown row.
    pub fn vocab_size(&self) -> usize {
        self.index.len()
    }

    /// Row count of [`Self::matrix`], including the unknown row.
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Row index for `token`, falling back to the unknown row.
    pub fn row_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.unk)
    }

    pub fn lookup(&self, token: &str) -> &[f64] {
        let r = self.row_of(token);
        &self.matrix[r * self.dim..(r + 1) * self.dim]
    }

    /// The full `[rows, dim]` table.
    pub fn matrix(&self) -> Tensor {
        Tensor::matrix(self.rows, self.dim, self.matrix.clone()).expect("consistent table")
    }

    pub fn rows_for(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.row_of(t)).collect()
    }

    /// Writes the table in text format, omitting a synthesized unknown row.
    pub fn to_text(&self) -> String {
        let mut by_row: Vec<(&String, usize)> = self.index.iter().map(|(t, &r)| (t, r)).collect();
        by_row.sort_by_key(|&(_, r)| r);
        let mut out = format!("{} {}\n", by_row.len(), self.dim);
        for (tok, r) in by_row {
            out.push_str(tok);
            for v in &self.matrix[r * self.dim..(r + 1) * self.dim] {
                out.push(' ');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Parses the text format: a `V D` header, then `V` lines of `token v1 … vD`.
pub fn parse_embeddings(text: &str, path: &Path) -> Result<EmbeddingTable> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| perr(1, "missing \"V D\" header".into()))?;
    let nums: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| perr(1, format!("bad header {header:?}: {e}")))?;
    let [count, dim] = nums[..] else {
        return Err(perr(1, format!("header must be \"V D\", got {header:?}")));
    };
    if dim == 0 {
        return Err(perr(1, "dimension must be positive".into()));
    }
    let mut table = EmbeddingTable {
        dim,
        index: HashMap::with_capacity(count),
        matrix: Vec::with_capacity((count + 1) * dim),
        rows: 0,
        unk: 0,
        duplicates: 0,
    };
    let mut seen = 0;
    let mut buf = Vec::with_capacity(dim);
    for (i, line) in lines {
        let lineno = i + 1;
        let mut parts = line.split_whitespace();
        let tok = parts.next().expect("non-blank line");
        buf.clear();
        for p in parts {
            buf.push(p.parse::<f64>().map_err(|e| perr(lineno, format!("bad value {p:?}: {e}")))?);
        }
        if buf.len() != dim {
            return Err(perr(lineno, format!("expected {dim} values for {tok:?}, found {}", buf.len())));
        }
        table.push(tok.to_string(), &buf);
        seen += 1;
    }
    if seen != count {
        return Err(perr(1, format!("header declares {count} vectors, file has {seen}")));
    }
    if table.duplicates > 0 {
        log::warn!("{}: {} duplicate tokens, last occurrence kept", path.display(), table.duplicates);
    }
    table.finish();
    Ok(table)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path)?;
    parse_embeddings(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<EmbeddingTable> {
        parse_embeddings(text, Path::new("test.vec"))
    }

    #[test]
    fn parses_small_table() {
        let t = parse("2 3\na 1 2 3\nb 4 5 6\n").unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.vocab_size(), 2);
        assert_eq!(t.lookup("a"), &[1.0, 2.0, 3.0]);
        assert_eq!(t.lookup("b"), &[4.0, 5.0, 6.0]);
        assert_eq!(t.lookup("zzz"), &[0.0, 0.0, 0.0]);
        assert_eq!(t.rows(), 3);
    }

    #[test]
    fn short_row_reports_line() {
        let err = parse("2 3\na 1 2 3\nb 4 5\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn explicit_unk_row_is_used() {
        let t = parse("2 2\n<unk> 9 9\na 1 1\n").unwrap();
        assert_eq!(t.lookup("missing"), &[9.0, 9.0]);
        assert_eq!(t.rows(), 2);
    }

    #[test]
    fn duplicates_keep_last() {
        let t = parse("3 1\na 1\nb 2\na 3\n").unwrap();
        assert_eq!(t.duplicates, 1);
        assert_eq!(t.lookup("a"), &[3.0]);
        assert_eq!(t.vocab_size(), 2);
    }

    #[test]
    fn header_errors() {
        assert!(parse("").is_err());
        assert!(parse("2\na 1\n").is_err());
        assert!(parse("3 1\na 1\n").is_err());
        assert!(parse("1 1\na x\n").is_err());
    }

    #[test]
    fn text_round_trip() {
        let t = parse("2 2\nfoo 0.5 -1.25\nbar 3 4\n").unwrap();
        assert_eq!(parse(&t.to_text()).unwrap(), t);
    }
}
