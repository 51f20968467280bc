//! Urdu text cleaning, whitespace tokenization and stopword removal.
//!
//! Cleaning is a character whitelist: Arabic-script letters and combining
//! marks survive, URLs are cut out first, zero-width format characters are
//! deleted, and every other character becomes a space.

use std::collections::HashSet;
use std::fs;
use std::ops::Deref;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

const PACKAGED_STOPWORDS: &str = include_str!("../data/urdu_stopwords.txt");

fn url_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:https?://|www\.)\S*").expect("valid regex"))
}

fn is_zero_width(c: char) -> bool {
    matches!(c, '\u{200B}'..='\u{200F}' | '\u{2060}' | '\u{FEFF}' | '\u{00AD}' | '\u{061C}')
}

/// Arabic-script letters and marks kept by [`clean`]. Digits, punctuation
/// and sign characters inside the Arabic blocks are excluded.
pub fn is_kept_char(c: char) -> bool {
    match c {
        '\u{0600}'..='\u{060F}' => false, // number signs, currency, comma, misc signs
        '\u{061B}'..='\u{061F}' => false, // semicolon, marks, question mark
        '\u{0660}'..='\u{0669}' => false, // Arabic-Indic digits
        '\u{066A}'..='\u{066D}' => false, // percent, decimal/thousands separators, star
        '\u{06D4}' => false,              // Urdu full stop
        '\u{06DD}' | '\u{06DE}' | '\u{06E9}' => false,
        '\u{06F0}'..='\u{06F9}' => false, // Eastern Arabic-Indic digits
        '\u{06FD}' | '\u{06FE}' => false,
        '\u{0610}'..='\u{06FF}' => true,
        '\u{0750}'..='\u{077F}' => true,
        '\u{08A0}'..='\u{08FF}' => true,
        '\u{FD3E}' | '\u{FD3F}' | '\u{FDFC}' | '\u{FDFD}' => false,
        '\u{FB50}'..='\u{FDFF}' => true,
        '\u{FE70}'..='\u{FEFE}' => true,
        _ => false,
    }
}

/// Removes URLs, Latin letters, digits, punctuation and symbols, then
/// collapses whitespace runs to single spaces.
pub fn clean(text: &str) -> String {
    let without_urls = url_pattern().replace_all(text, " ");
    let mut buf = String::with_capacity(without_urls.len());
    for c in without_urls.chars() {
        if is_zero_width(c) {
            continue;
        }
        buf.push(if is_kept_char(c) { c } else { ' ' });
    }
    buf.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Ordered tokens; none is empty and none contains whitespace.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if let Some(bad) = tokens
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::InvalidArgument(format!("invalid token {bad:?}")));
        }
        Ok(TokenSequence(tokens))
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

impl Deref for TokenSequence {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

impl TryFrom<Vec<String>> for TokenSequence {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        TokenSequence::new(v)
    }
}

impl From<TokenSequence> for Vec<String> {
    fn from(t: TokenSequence) -> Self {
        t.0
    }
}

pub fn tokenize(text: &str) -> TokenSequence {
    TokenSequence(text.split_whitespace().map(str::to_string).collect())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StopwordList {
    entries: HashSet<String>,
}

impl StopwordList {
    /// Every entry must be a single token that [`clean`] leaves untouched.
    pub fn new<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = HashSet::new();
        for e in entries {
            let e: String = e.into();
            let cleaned = clean(&e);
            if cleaned != e || cleaned.contains(' ') || cleaned.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "stopword {e:?} does not survive cleaning"
                )));
            }
            set.insert(e);
        }
        Ok(StopwordList { entries: set })
    }

    pub fn empty() -> Self {
        StopwordList::default()
    }

    /// The packaged Urdu list (function words and common auxiliaries).
    pub fn default_urdu() -> Self {
        StopwordList::parse(PACKAGED_STOPWORDS).expect("packaged stopword list is valid")
    }

    /// One token per line; blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        StopwordList::new(
            text.lines()
                .map(|l| l.trim().trim_start_matches('\u{feff}'))
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        StopwordList::parse(&text)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains(token)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in sorted order.
    pub fn entries(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.entries.iter().map(String::as_str).collect();
        v.sort_unstable();
        v
    }
}

pub fn remove_stopwords(tokens: &TokenSequence, stoplist: &StopwordList) -> TokenSequence {
    TokenSequence(
        tokens
            .iter()
            .filter(|t| !stoplist.contains(t))
            .cloned()
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreprocessOptions {
    pub remove_stopwords: bool,
    pub stopwords: StopwordList,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            remove_stopwords: true,
            stopwords: StopwordList::default_urdu(),
        }
    }
}

impl PreprocessOptions {
    pub fn without_stopwords() -> Self {
        PreprocessOptions {
            remove_stopwords: false,
            stopwords: StopwordList::empty(),
        }
    }
}

pub fn preprocess_text(text: &str, options: &PreprocessOptions) -> TokenSequence {
    let tokens = tokenize(&clean(text));
    if options.remove_stopwords {
        remove_stopwords(&tokens, &options.stopwords)
    } else {
        tokens
    }
}

pub fn preprocess_document(doc: &Document, options: &PreprocessOptions) -> TokenSequence {
    preprocess_text(&doc.text, options)
}
