//! Tokenization, the token vocabulary, and corpus segmentation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
/// The interaction token; always position 0 of a segment and the pooling position.
pub const INT: TokenId = 2;
pub const MASK: TokenId = 3;
pub const SEP: TokenId = 4;

const RESERVED: [&str; 5] = ["[PAD]", "[UNK]", "[INT]", "[MASK]", "[SEP]"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Byte range in the source string.
    pub span: Range<usize>,
}

/// Lowercases and splits into alphanumeric runs; every other non-space
/// character becomes a token of its own.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut word: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            word.get_or_insert(i);
            continue;
        }
        if let Some(start) = word.take() {
            out.push(Token {
                text: text[start..i].to_lowercase(),
                span: start..i,
            });
        }
        if !c.is_whitespace() {
            let end = i + c.len_utf8();
            out.push(Token {
                text: text[i..end].to_lowercase(),
                span: i..end,
            });
        }
    }
    if let Some(start) = word {
        out.push(Token {
            text: text[start..].to_lowercase(),
            span: start..text.len(),
        });
    }
    out
}

/// Canonical surface form used for alias matching: tokens joined by one space.
pub fn normalize_surface(text: &str) -> String {
    tokenize(text)
        .into_iter()
        .map(|t| t.text)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenVocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl TokenVocab {
    fn with_reserved() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
        Self { tokens, index }
    }

    /// Vocabulary of every token seen at least `min_freq` times, most frequent first.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok.text).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut vocab = Self::with_reserved();
        for (tok, _) in kept {
            vocab.push(tok);
        }
        vocab
    }

    fn push(&mut self, tok: String) {
        if !self.index.contains_key(&tok) {
            self.index.insert(tok.clone(), self.tokens.len() as TokenId);
            self.tokens.push(tok);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of a normalized token, `[UNK]` when absent.
    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens.get(id as usize).map_or("[UNK]", String::as_str)
    }

    pub fn is_reserved(id: TokenId) -> bool {
        (id as usize) < RESERVED.len()
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).iter().map(|t| self.id(&t.text)).collect()
    }

    /// `token<TAB>id` per line.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(s, "{t}\t{i}");
        }
        s
    }

    pub fn from_tsv(text: &str, origin: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let parse_err = |msg: &str| Error::Parse {
                path: origin.to_string(),
                line: n + 1,
                msg: msg.to_string(),
            };
            let (tok, id) = line.split_once('\t').ok_or_else(|| parse_err("expected token<TAB>id"))?;
            let id: usize = id.trim().parse().map_err(|_| parse_err("invalid id"))?;
            if id != tokens.len() {
                return Err(parse_err("ids must be dense and in order"));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()].iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: 1,
                msg: "reserved tokens missing".into(),
            });
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
        Ok(Self { tokens, index })
    }
}

/// Token ids of one input, position 0 is always `[INT]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextSegment {
    pub ids: Vec<TokenId>,
    /// Source byte span per position; `None` for inserted special tokens.
    pub spans: Vec<Option<Range<usize>>>,
}

impl TextSegment {
    pub fn empty() -> Self {
        Self {
            ids: vec![INT],
            spans: vec![None],
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.len() <= 1
    }

    pub fn push_special(&mut self, id: TokenId) {
        self.ids.push(id);
        self.spans.push(None);
    }

    pub fn decode(&self, vocab: &TokenVocab) -> Vec<String> {
        self.ids.iter().map(|&i| vocab.token(i).to_string()).collect()
    }
}

/// A packed run of sentences from one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSegment {
    pub doc: usize,
    pub text: String,
    pub n_tokens: usize,
}

fn is_terminal(tok: &str) -> bool {
    matches!(tok, "." | "!" | "?")
}

/// Splits blank-line separated documents and greedily packs consecutive
/// sentences into segments of at most `max_seq_len - 1` tokens.
pub fn segment_documents(corpus: &str, max_seq_len: usize) -> Vec<RawSegment> {
    let budget = max_seq_len.saturating_sub(1).max(1);
    let mut out = Vec::new();
    for (doc, text) in split_documents(corpus).into_iter().enumerate() {
        let toks = tokenize(text);
        let mut sentences: Vec<Range<usize>> = Vec::new();
        let mut start = 0;
        for (i, t) in toks.iter().enumerate() {
            if is_terminal(&t.text) {
                sentences.push(start..i + 1);
                start = i + 1;
            }
        }
        if start < toks.len() {
            sentences.push(start..toks.len());
        }
        // Sentences longer than the budget are hard-wrapped.
        let pieces = sentences.into_iter().flat_map(|r| {
            let mut v = Vec::new();
            let mut s = r.start;
            while s < r.end {
                let e = (s + budget).min(r.end);
                v.push(s..e);
                s = e;
            }
            v
        });
        let mut current: Option<Range<usize>> = None;
        let emit = |r: Range<usize>, out: &mut Vec<RawSegment>| {
            let span = toks[r.start].span.start..toks[r.end - 1].span.end;
            out.push(RawSegment {
                doc,
                text: text[span].to_string(),
                n_tokens: r.len(),
            });
        };
        for p in pieces {
            current = match current {
                Some(c) if c.len() + p.len() <= budget => Some(c.start..p.end),
                Some(c) => {
                    emit(c, &mut out);
                    Some(p)
                }
                None => Some(p),
            };
        }
        if let Some(c) = current {
            emit(c, &mut out);
        }
    }
    out
}

pub fn segment_corpus(path: &Path, max_seq_len: usize) -> Result<Vec<RawSegment>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(segment_documents(&text, max_seq_len))
}

/// Documents are separated by one or more blank lines.
pub fn split_documents(corpus: &str) -> Vec<&str> {
    let mut docs = Vec::new();
    let mut start: Option<usize> = None;
    let mut offset = 0;
    let mut last_end = 0;
    for line in corpus.split_inclusive('\n') {
        let blank = line.trim().is_empty();
        if blank {
            if let Some(s) = start.take() {
                docs.push(corpus[s..last_end].trim_end());
            }
        } else {
            start.get_or_insert(offset);
            last_end = offset + line.len();
        }
        offset += line.len();
    }
    if let Some(s) = start {
        docs.push(corpus[s..last_end].trim_end());
    }
    docs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_words_and_punctuation() {
        let toks: Vec<String> = tokenize("Round-brush, is an ART supply.").into_iter().map(|t| t.text).collect();
        assert_eq!(toks, ["round", "-", "brush", ",", "is", "an", "art", "supply", "."]);
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn reserved_tokens_never_come_from_text() {
        let vocab = TokenVocab::build(["[INT] [MASK] [INT] [MASK]"], 1);
        assert_eq!(vocab.encode("[INT]").len(), 3);
        assert!(vocab.encode("[MASK]").iter().all(|&i| i != MASK));
    }

    #[test]
    fn vocab_min_frequency_and_tsv() {
        let vocab = TokenVocab::build(["a a b c c c"], 2);
        assert_eq!(vocab.len(), 7);
        assert_eq!(vocab.token(5), "c");
        assert_eq!(vocab.id("b"), UNK);
        let back = TokenVocab::from_tsv(&vocab.to_tsv(), "mem").unwrap();
        assert_eq!(back, vocab);
    }

    #[test]
    fn small_document_is_one_segment() {
        let segs = segment_documents("w1 w2 w3 w4 w5 w6 w7 w8 w9 w10", 512);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].n_tokens + 1, 11);
    }

    #[test]
    fn long_document_splits_within_budget() {
        let doc: Vec<String> = (0..600).map(|i| format!("w{i}")).collect();
        let segs = segment_documents(&doc.join(" "), 512);
        assert!(segs.len() >= 2);
        assert!(segs.iter().all(|s| s.n_tokens < 512));
    }

    #[test]
    fn segments_reproduce_token_stream_without_crossing_documents() {
        let corpus = "a b c. d e f g.\nh i j!\n\n\nk l m. n o p q r s t.\n\nu v";
        let segs = segment_documents(corpus, 6);
        for (d, doc) in split_documents(corpus).iter().enumerate() {
            let expect: Vec<String> = tokenize(doc).into_iter().map(|t| t.text).collect();
            let got: Vec<String> = segs
                .iter()
                .filter(|s| s.doc == d)
                .flat_map(|s| tokenize(&s.text).into_iter().map(|t| t.text))
                .collect();
            assert_eq!(got, expect);
        }
        assert!(segs.iter().all(|s| s.n_tokens <= 5 && tokenize(&s.text).len() == s.n_tokens));
    }
}
