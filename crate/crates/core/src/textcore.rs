//! Character handling for segmentation: de-spacing segmented text into
//! (characters, boundary labels) pairs, Hangul Jamo arithmetic, character
//! vocabularies and line-oriented corpus ingestion.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use unicode_normalization::UnicodeNormalization;

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("label count {labels} does not match {chars} characters (expected {expected})")]
    LabelLength {
        chars: usize,
        labels: usize,
        expected: usize,
    },
    #[error("character sequence may not contain whitespace (found {0:?})")]
    Whitespace(char),
    #[error("{path}: line {line}: {reason}")]
    Ingest { path: PathBuf, line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("min_count must be at least 1")]
    MinCount,
}

/// An NFC-normalized character string with no whitespace.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct CharSequence {
    chars: Vec<char>,
}

impl CharSequence {
    /// Builds a sequence from text that already has no whitespace.
    pub fn new(text: &str) -> Result<Self, TextError> {
        let chars: Vec<char> = text.nfc().collect();
        if let Some(&c) = chars.iter().find(|c| c.is_whitespace()) {
            return Err(TextError::Whitespace(c));
        }
        Ok(Self { chars })
    }

    pub fn from_chars(chars: Vec<char>) -> Result<Self, TextError> {
        Self::new(&chars.into_iter().collect::<String>())
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Number of gaps between adjacent characters, `max(L - 1, 0)`.
    pub fn gap_count(&self) -> usize {
        self.chars.len().saturating_sub(1)
    }

    /// Sub-sequence `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> CharSequence {
        CharSequence {
            chars: self.chars[start..end].to_vec(),
        }
    }
}

impl fmt::Display for CharSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.chars.iter().try_for_each(|c| write!(f, "{c}"))
    }
}

/// `labels[i]` is true when a space follows character `i`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct BoundaryLabels(Vec<bool>);

impl BoundaryLabels {
    pub fn new(labels: Vec<bool>) -> Self {
        Self(labels)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![false; len])
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        Self(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [bool] {
        &mut self.0
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.0.iter().map(|&b| u8::from(b)).collect()
    }

    /// Element-wise OR. Both sides must have equal length.
    pub fn union(&self, other: &BoundaryLabels) -> BoundaryLabels {
        assert_eq!(self.len(), other.len(), "label union length mismatch");
        BoundaryLabels(self.0.iter().zip(&other.0).map(|(a, b)| *a || *b).collect())
    }
}

/// Splits segmented text into its characters and the boundary labels between
/// them. Whitespace runs count as a single boundary; leading and trailing
/// whitespace is ignored.
pub fn despace(segmented: &str) -> (CharSequence, BoundaryLabels) {
    let mut chars = Vec::new();
    let mut labels = Vec::new();
    let mut pending_space = false;
    for c in segmented.nfc() {
        if c.is_whitespace() {
            pending_space = !chars.is_empty();
            continue;
        }
        if !chars.is_empty() {
            labels.push(pending_space);
        }
        pending_space = false;
        chars.push(c);
    }
    (CharSequence { chars }, BoundaryLabels(labels))
}

/// Renders characters with a single ASCII space after every labelled gap.
pub fn apply_labels(chars: &CharSequence, labels: &BoundaryLabels) -> Result<String, TextError> {
    let expected = chars.gap_count();
    if labels.len() != expected {
        return Err(TextError::LabelLength {
            chars: chars.len(),
            labels: labels.len(),
            expected,
        });
    }
    let mut out = String::with_capacity(chars.len() * 4 + labels.count_ones());
    for (i, &c) in chars.chars.iter().enumerate() {
        out.push(c);
        if labels.0.get(i).copied().unwrap_or(false) {
            out.push(' ');
        }
    }
    Ok(out)
}

/// Collapses whitespace runs to one ASCII space and trims both ends, after NFC.
pub fn normalize_whitespace(text: &str) -> String {
    let (chars, labels) = despace(text);
    apply_labels(&chars, &labels).expect("despace output is consistent")
}

pub const HANGUL_SYLLABLE_FIRST: u32 = 0xAC00;
pub const HANGUL_SYLLABLE_LAST: u32 = 0xD7A3;
const LEAD_BASE: u32 = 0x1100;
const VOWEL_BASE: u32 = 0x1161;
const TRAIL_BASE: u32 = 0x11A7;
const VOWEL_COUNT: u32 = 21;
const TRAIL_COUNT: u32 = 28;
const BLOCK: u32 = VOWEL_COUNT * TRAIL_COUNT; // 588

/// CV(C) structure of a precomposed Hangul syllable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct JamoDecomposition {
    /// Lead consonant index, 0..=18.
    pub lead: u8,
    /// Vowel index, 0..=20.
    pub vowel: u8,
    /// Trailing consonant index, 1..=27.
    pub trail: Option<u8>,
}

impl JamoDecomposition {
    pub fn recompose(&self) -> char {
        let cp = HANGUL_SYLLABLE_FIRST
            + u32::from(self.lead) * BLOCK
            + u32::from(self.vowel) * TRAIL_COUNT
            + self.trail.map_or(0, u32::from);
        char::from_u32(cp).expect("jamo indices stay inside the syllable block")
    }

    /// Conjoining jamo code points (U+1100, U+1161, U+11A8 blocks), which keep
    /// lead and trailing consonants distinct.
    pub fn conjoining(&self) -> (char, char, Option<char>) {
        let c = |cp| char::from_u32(cp).expect("conjoining jamo are valid scalars");
        (
            c(LEAD_BASE + u32::from(self.lead)),
            c(VOWEL_BASE + u32::from(self.vowel)),
            self.trail.map(|t| c(TRAIL_BASE + u32::from(t))),
        )
    }
}

pub fn decompose_jamo(syllable: char) -> Option<JamoDecomposition> {
    let cp = syllable as u32;
    if !(HANGUL_SYLLABLE_FIRST..=HANGUL_SYLLABLE_LAST).contains(&cp) {
        return None;
    }
    let offset = cp - HANGUL_SYLLABLE_FIRST;
    let trail = offset % TRAIL_COUNT;
    Some(JamoDecomposition {
        lead: (offset / BLOCK) as u8,
        vowel: ((offset % BLOCK) / TRAIL_COUNT) as u8,
        trail: (trail != 0).then_some(trail as u8),
    })
}

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
const FIRST_CHAR_ID: u32 = 2;

/// Character inventory with frequency-ordered ids. Ids 0 and 1 are reserved
/// for padding and unknown characters.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<char, u32>,
    chars: Vec<char>,
    counts: Vec<u64>,
}

impl Vocabulary {
    /// Number of real characters, excluding the reserved ids.
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn get(&self, c: char) -> Option<u32> {
        self.ids.get(&c).copied()
    }

    /// Id of `c`, or [`UNK_ID`].
    pub fn id(&self, c: char) -> u32 {
        self.get(c).unwrap_or(UNK_ID)
    }

    pub fn char_of(&self, id: u32) -> Option<char> {
        id.checked_sub(FIRST_CHAR_ID)
            .and_then(|i| self.chars.get(i as usize).copied())
    }

    pub fn count(&self, c: char) -> u64 {
        self.get(c).map_or(0, |id| self.counts[(id - FIRST_CHAR_ID) as usize])
    }

    /// `(char, id, count)` in id order.
    pub fn entries(&self) -> impl Iterator<Item = (char, u32, u64)> + '_ {
        self.chars
            .iter()
            .zip(&self.counts)
            .enumerate()
            .map(|(i, (&c, &n))| (c, i as u32 + FIRST_CHAR_ID, n))
    }

    fn from_sorted(entries: Vec<(char, u64)>) -> Self {
        let mut vocab = Vocabulary::default();
        for (i, (c, n)) in entries.into_iter().enumerate() {
            vocab.ids.insert(c, i as u32 + FIRST_CHAR_ID);
            vocab.chars.push(c);
            vocab.counts.push(n);
        }
        vocab
    }

    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        let io_err = |source| TextError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        writeln!(w, "{}", self.len()).map_err(io_err)?;
        for (c, id, n) in self.entries() {
            writeln!(w, "{c}\t{id}\t{n}").map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        let bad = |line: usize, reason: String| TextError::Ingest {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|source| TextError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut lines = text.lines();
        let size: usize = lines
            .next()
            .and_then(|h| h.trim().parse().ok())
            .ok_or_else(|| bad(1, "missing or malformed size header".into()))?;
        let mut entries = Vec::with_capacity(size);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let mut fields = line.split('\t');
            let (Some(c), Some(id), Some(n), None) = (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad(lineno, "expected <char>\\t<id>\\t<count>".into()));
            };
            let mut cs = c.chars();
            let (Some(c), None) = (cs.next(), cs.next()) else {
                return Err(bad(lineno, format!("{c:?} is not a single character")));
            };
            let id: u32 = id.parse().map_err(|_| bad(lineno, format!("bad id {id:?}")))?;
            let n: u64 = n.parse().map_err(|_| bad(lineno, format!("bad count {n:?}")))?;
            if id != entries.len() as u32 + FIRST_CHAR_ID {
                return Err(bad(lineno, format!("id {id} out of sequence")));
            }
            entries.push((c, n));
        }
        if entries.len() != size {
            return Err(bad(1, format!("header says {size} entries, found {}", entries.len())));
        }
        Ok(Self::from_sorted(entries))
    }
}

/// Counts de-spaced characters over `corpus` and keeps those seen at least
/// `min_count` times. Ids follow (frequency desc, code point asc).
pub fn build_vocabulary<I, S>(corpus: I, min_count: u64) -> Result<Vocabulary, TextError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if min_count == 0 {
        return Err(TextError::MinCount);
    }
    let mut counts: HashMap<char, u64> = HashMap::new();
    for line in corpus {
        for &c in despace(line.as_ref()).0.chars() {
            *counts.entry(c).or_default() += 1;
        }
    }
    let mut entries: Vec<(char, u64)> = counts.into_iter().filter(|&(_, n)| n >= min_count).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(Vocabulary::from_sorted(entries))
}

/// Streams `(chars, labels)` pairs from a corpus file, one sentence per line.
/// Blank lines are skipped silently; lines longer than `max_chars` characters
/// are skipped and counted.
pub struct CorpusReader<R> {
    reader: R,
    path: PathBuf,
    line: usize,
    max_chars: Option<usize>,
    skipped_long: usize,
    buf: Vec<u8>,
    failed: bool,
}

impl CorpusReader<BufReader<File>> {
    pub fn open(path: &Path, max_chars: Option<usize>) -> Result<Self, TextError> {
        let file = File::open(path).map_err(|source| TextError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_reader(BufReader::new(file), path, max_chars))
    }
}

impl<R: BufRead> CorpusReader<R> {
    pub fn from_reader(reader: R, path: &Path, max_chars: Option<usize>) -> Self {
        Self {
            reader,
            path: path.to_path_buf(),
            line: 0,
            max_chars,
            skipped_long: 0,
            buf: Vec::new(),
            failed: false,
        }
    }

    /// Lines skipped so far for exceeding the length limit.
    pub fn skipped_long(&self) -> usize {
        self.skipped_long
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<(CharSequence, BoundaryLabels), TextError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.buf.clear();
            self.line += 1;
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    self.failed = true;
                    return Some(Err(TextError::Ingest {
                        path: self.path.clone(),
                        line: self.line,
                        reason: e.to_string(),
                    }));
                }
            }
            let text = match std::str::from_utf8(&self.buf) {
                Ok(t) => t,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(TextError::Ingest {
                        path: self.path.clone(),
                        line: self.line,
                        reason: format!("invalid UTF-8: {e}"),
                    }));
                }
            };
            let (chars, labels) = despace(text);
            if chars.is_empty() {
                continue;
            }
            if self.max_chars.is_some_and(|max| chars.len() > max) {
                self.skipped_long += 1;
                continue;
            }
            return Some(Ok((chars, labels)));
        }
    }
}

/// Convenience wrapper over [`CorpusReader::open`].
pub fn load_corpus(path: &Path, max_chars: Option<usize>) -> Result<CorpusReader<BufReader<File>>, TextError> {
    CorpusReader::open(path, max_chars)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn bits(labels: &BoundaryLabels) -> Vec<u8> {
        labels.to_bits()
    }

    #[test]
    fn despace_korean_sentence() {
        let (chars, labels) = despace("아버지 친구분 당선되셨어요");
        assert_eq!(chars.to_string(), "아버지친구분당선되셨어요");
        assert_eq!(chars.len(), 12);
        assert_eq!(bits(&labels), vec![0, 0, 1, 0, 0, 1, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn despace_edge_cases() {
        let (c, l) = despace("가");
        assert_eq!((c.to_string().as_str(), l.len()), ("가", 0));
        let (c, l) = despace("a  b");
        assert_eq!(c.to_string(), "ab");
        assert_eq!(bits(&l), vec![1]);
        let (c, l) = despace("  \t ");
        assert!(c.is_empty() && l.is_empty());
        let (c, l) = despace("  x y\r\n");
        assert_eq!(c.to_string(), "xy");
        assert_eq!(bits(&l), vec![1]);
    }

    #[test]
    fn despace_normalizes_to_nfc() {
        // U+1100 U+1161 is the decomposed form of '가'.
        let (c, _) = despace("\u{1100}\u{1161}");
        assert_eq!(c.chars(), &['가']);
    }

    #[test]
    fn apply_labels_examples() {
        let abc = CharSequence::new("abc").unwrap();
        assert_eq!(apply_labels(&abc, &BoundaryLabels::from_bits(&[1, 0])).unwrap(), "a bc");
        let chars = CharSequence::new("아버지친구분당선되셨어요").unwrap();
        let labels = BoundaryLabels::from_bits(&[0, 0, 1, 0, 0, 1, 0, 1, 0, 0, 0]);
        assert_eq!(apply_labels(&chars, &labels).unwrap(), "아버지 친구분 당선 되셨어요");
    }

    #[test]
    fn apply_labels_rejects_length_mismatch() {
        let abc = CharSequence::new("abc").unwrap();
        assert!(matches!(
            apply_labels(&abc, &BoundaryLabels::zeros(3)),
            Err(TextError::LabelLength { expected: 2, .. })
        ));
        let empty = CharSequence::default();
        assert_eq!(apply_labels(&empty, &BoundaryLabels::zeros(0)).unwrap(), "");
    }

    #[test]
    fn char_sequence_rejects_whitespace() {
        assert!(matches!(CharSequence::new("a b"), Err(TextError::Whitespace(' '))));
    }

    #[test]
    fn jamo_block_ends() {
        let first = decompose_jamo('가').unwrap();
        assert_eq!((first.lead, first.vowel, first.trail), (0, 0, None));
        let last = decompose_jamo('힣').unwrap();
        assert_eq!((last.lead, last.vowel, last.trail), (18, 20, Some(27)));
        assert_eq!(decompose_jamo('a'), None);
        assert_eq!(decompose_jamo('ㄱ'), None);
    }

    #[test]
    fn jamo_recompose_is_identity_over_block() {
        for cp in HANGUL_SYLLABLE_FIRST..=HANGUL_SYLLABLE_LAST {
            let c = char::from_u32(cp).unwrap();
            let d = decompose_jamo(c).unwrap();
            assert!(d.lead <= 18 && d.vowel <= 20);
            assert!(d.trail.is_none_or(|t| (1..=27).contains(&t)));
            assert_eq!(d.recompose(), c);
            // Conjoining jamo compose back to the syllable under NFC.
            let (l, v, t) = d.conjoining();
            let s: String = [Some(l), Some(v), t].into_iter().flatten().collect();
            assert_eq!(s.nfc().collect::<String>(), c.to_string());
        }
    }

    #[test]
    fn vocabulary_counts_and_ids() {
        let v = build_vocabulary(["ab a", "b"], 1).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!((v.count('a'), v.count('b')), (2, 2));
        // Equal frequency: code point order decides.
        assert_eq!((v.id('a'), v.id('b')), (2, 3));
        assert_eq!(v.id('z'), UNK_ID);
        assert_eq!(v.char_of(3), Some('b'));
        assert_eq!(v.char_of(PAD_ID), None);

        assert!(build_vocabulary(["ab a", "b"], 3).unwrap().is_empty());
        assert!(build_vocabulary(Vec::<String>::new(), 1).unwrap().is_empty());
        assert!(matches!(build_vocabulary(["a"], 0), Err(TextError::MinCount)));
    }

    #[test]
    fn vocabulary_frequency_order() {
        let v = build_vocabulary(["c c c b b a"], 1).unwrap();
        let order: Vec<char> = v.entries().map(|(c, _, _)| c).collect();
        assert_eq!(order, vec!['c', 'b', 'a']);
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        let v = build_vocabulary(["나 너 본 지", "한 세 달"], 1).unwrap();
        v.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("7\n"));
        assert_eq!(Vocabulary::load(&path).unwrap(), v);

        std::fs::write(&path, "2\na\t2\t5\n").unwrap();
        assert!(Vocabulary::load(&path).is_err());
        std::fs::write(&path, "1\na\t9\t5\n").unwrap();
        assert!(Vocabulary::load(&path).is_err());
    }

    fn read_all(data: &[u8], max: Option<usize>) -> (Vec<Result<(CharSequence, BoundaryLabels), TextError>>, usize) {
        let mut r = CorpusReader::from_reader(Cursor::new(data.to_vec()), Path::new("mem"), max);
        let items: Vec<_> = r.by_ref().collect();
        (items, r.skipped_long())
    }

    #[test]
    fn corpus_skips_blank_lines() {
        let (items, _) = read_all("나 너 본 지\n\n한 세\n".as_bytes(), None);
        assert_eq!(items.len(), 2);
        let (chars, labels) = items[0].as_ref().unwrap();
        assert_eq!(chars.to_string(), "나너본지");
        assert_eq!(bits(labels), vec![1, 1, 1]);
    }

    #[test]
    fn corpus_crlf_matches_lf() {
        let (lf, _) = read_all(b"ab c\nd e\n", None);
        let (crlf, _) = read_all(b"ab c\r\nd e\r\n", None);
        let lf: Vec<_> = lf.into_iter().map(Result::unwrap).collect();
        let crlf: Vec<_> = crlf.into_iter().map(Result::unwrap).collect();
        assert_eq!(lf, crlf);
    }

    #[test]
    fn corpus_counts_long_lines() {
        let (items, skipped) = read_all(b"abcdef\nab\nabc d\n", Some(4));
        assert_eq!(items.len(), 2);
        assert_eq!(skipped, 1);
    }

    #[test]
    fn corpus_reports_invalid_utf8_line() {
        let (items, _) = read_all(b"ok\n\xff\xfe\nnever\n", None);
        assert_eq!(items.len(), 2);
        match &items[1] {
            Err(TextError::Ingest { line, .. }) => assert_eq!(*line, 2),
            other => panic!("expected ingest error, got {other:?}"),
        }
    }

    #[test]
    fn corpus_missing_file() {
        assert!(matches!(
            load_corpus(Path::new("/nonexistent/corpus.txt"), None),
            Err(TextError::Io { .. })
        ));
    }
}
