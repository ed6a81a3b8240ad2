use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math::Mat;

/// Token ↔ index map with reserved unknown and padding entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    unk: usize,
    pad: usize,
    hash: String,
}

impl Vocab {
    pub const UNK: &'static str = "<unk>";
    pub const PAD: &'static str = "<pad>";

    /// Builds a vocabulary from distinct tokens in index order, appending the
    /// reserved tokens when they are not already present.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut tokens = tokens;
        let mut index = HashMap::with_capacity(tokens.len() + 2);
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Domain(format!("duplicate vocabulary token {t:?}")));
            }
        }
        for reserved in [Self::UNK, Self::PAD] {
            if !index.contains_key(reserved) {
                index.insert(reserved.to_string(), tokens.len());
                tokens.push(reserved.to_string());
            }
        }
        let unk = index[Self::UNK];
        let pad = index[Self::PAD];
        let hash = vocab_hash(&tokens);
        Ok(Vocab { tokens, index, unk, pad, hash })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Total lookup: anything unseen maps to the unknown index.
    pub fn lookup(&self, token: &str) -> usize {
        self.get(token).unwrap_or(self.unk)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn unk(&self) -> usize {
        self.unk
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    /// Stable fingerprint of the token list, used to bind artifacts to a vocabulary.
    pub fn hash(&self) -> &str {
        &self.hash
    }
}

fn vocab_hash(tokens: &[String]) -> String {
    let mut h = Sha256::new();
    for t in tokens {
        h.update(t.as_bytes());
        h.update(b"\n");
    }
    let digest = h.finalize();
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Vocabulary-indexed matrix of word vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: Arc<Vocab>,
    matrix: Mat,
}

impl EmbeddingTable {
    pub fn new(vocab: Arc<Vocab>, matrix: Mat) -> Result<Self> {
        if matrix.rows() != vocab.len() {
            return Err(Error::Domain(format!(
                "embedding matrix has {} rows for a vocabulary of {}",
                matrix.rows(),
                vocab.len()
            )));
        }
        if matrix.cols() == 0 {
            return Err(Error::Domain("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingTable { vocab, matrix })
    }

    pub fn vocab(&self) -> &Arc<Vocab> {
        &self.vocab
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut Mat {
        &mut self.matrix
    }

    pub fn into_matrix(self) -> Mat {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.matrix.row(id)
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.vocab.get(token).map(|i| self.matrix.row(i))
    }

    /// Writes the table, reserved rows included, in the text word-vector format.
    pub fn write_word2vec<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim())?;
        for (i, tok) in self.vocab.tokens().iter().enumerate() {
            write!(w, "{tok}")?;
            for v in self.matrix.row(i) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_word2vec(&mut buf)?;
        super::write_atomic(path.as_ref(), &buf)
    }
}

/// Reads a text word-vector file: a `count dim` header followed by one
/// `token v1 … vd` line per word.
///
/// Repeated tokens keep their first index and take the last vector. Unless
/// the file provides them, an unknown row (mean of all vectors) and a zero
/// padding row are appended. Returns the table and any warnings raised.
pub fn read_word2vec<R: BufRead>(reader: R) -> Result<(EmbeddingTable, Vec<String>)> {
    let mut lines = reader.lines().enumerate();
    let (count, dim) = loop {
        let Some((i, line)) = lines.next() else {
            return Err(Error::Format { line: 1, msg: "missing header".into() });
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(Error::Parse { line: i + 1, msg: "header must be \"count dim\"".into() });
        }
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|e| Error::Parse { line: i + 1, msg: format!("bad header field {s:?}: {e}") })
        };
        let (count, dim) = (parse(parts[0])?, parse(parts[1])?);
        if dim == 0 {
            return Err(Error::Format { line: i + 1, msg: "dimension must be positive".into() });
        }
        break (count, dim);
    };

    let mut warnings = Vec::new();
    let mut tokens: Vec<String> = Vec::with_capacity(count + 2);
    let mut index: HashMap<String, usize> = HashMap::with_capacity(count + 2);
    let mut data: Vec<f64> = Vec::with_capacity((count + 2) * dim);
    let mut seen_lines = 0usize;

    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        seen_lines += 1;
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line has a first field").to_string();
        let mut values = Vec::with_capacity(dim);
        for p in parts {
            let v: f64 = p.parse().map_err(|e| Error::Parse { line: lineno, msg: format!("bad value {p:?}: {e}") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line: lineno, msg: format!("non-finite value {p:?}") });
            }
            values.push(v);
        }
        if values.len() != dim {
            return Err(Error::Format {
                line: lineno,
                msg: format!("token {token:?} has {} values, header declares {dim}", values.len()),
            });
        }
        match index.get(&token) {
            Some(&row) => {
                let msg = format!("line {lineno}: duplicate token {token:?}, keeping the last vector");
                log::warn!("{msg}");
                warnings.push(msg);
                data[row * dim..(row + 1) * dim].copy_from_slice(&values);
            }
            None => {
                index.insert(token.clone(), tokens.len());
                tokens.push(token);
                data.extend_from_slice(&values);
            }
        }
    }
    if seen_lines != count {
        return Err(Error::Format { line: 1, msg: format!("header declares {count} vectors, file has {seen_lines}") });
    }

    let word_rows = tokens.len();
    if !index.contains_key(Vocab::UNK) {
        let mut mean = vec![0.0; dim];
        for r in 0..word_rows {
            for (m, v) in mean.iter_mut().zip(&data[r * dim..(r + 1) * dim]) {
                *m += v;
            }
        }
        if word_rows > 0 {
            mean.iter_mut().for_each(|m| *m /= word_rows as f64);
        }
        tokens.push(Vocab::UNK.to_string());
        data.extend_from_slice(&mean);
    }
    if !index.contains_key(Vocab::PAD) {
        tokens.push(Vocab::PAD.to_string());
        data.extend(std::iter::repeat_n(0.0, dim));
    }
    let vocab = Vocab::new(tokens)?;
    let matrix = Mat::from_vec(vocab.len(), dim, data)?;
    Ok((EmbeddingTable::new(Arc::new(vocab), matrix)?, warnings))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let file = File::open(path.as_ref())?;
    Ok(read_word2vec(BufReader::new(file))?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(s: &str) -> Result<(EmbeddingTable, Vec<String>)> {
        read_word2vec(s.as_bytes())
    }

    #[test]
    fn counts_reserved_rows() {
        let (t, w) = read("2 3\ngood 1 2 3\nbad 3 2 1\n").unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.dim(), 3);
        assert!(w.is_empty());
        let v = t.vocab();
        assert_eq!(t.row(v.unk()), &[2.0, 2.0, 2.0]);
        assert_eq!(t.row(v.pad()), &[0.0, 0.0, 0.0]);
        assert_eq!(v.lookup("missing"), v.unk());
    }

    #[test]
    fn short_line_names_its_line() {
        let err = read("2 3\ngood 1 2 3\nbad 3 2\n").unwrap_err();
        assert!(matches!(err, Error::Format { line: 3, .. }), "{err}");
    }

    #[test]
    fn garbage_value_is_a_parse_error() {
        let err = read("1 2\ngood 1 x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_token_last_wins() {
        let (t, w) = read("2 2\nword 1 1\nword 5 7\n").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.vector("word").unwrap(), &[5.0, 7.0]);
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("duplicate"));
    }

    #[test]
    fn text_round_trip_preserves_everything() {
        let (t, _) = read("3 2\na 0.1 -0.25\nb 1e-3 3.5\nc 2 2\n").unwrap();
        let mut buf = Vec::new();
        t.write_word2vec(&mut buf).unwrap();
        let (back, _) = read_word2vec(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.vocab().hash(), t.vocab().hash());
    }

    #[test]
    fn count_mismatch_is_format_error() {
        assert!(matches!(read("3 2\na 1 1\n"), Err(Error::Format { .. })));
    }
}
