//! Light text deformation applied to the sentence of a generated negative:
//! random deletion, swap, insertion, synonym substitution and adjacent
//! character swapping.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{pick, sample_distinct};

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords.txt");
const BUNDLED_SYNONYMS: &str = include_str!("../data/synonyms.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    Deletion,
    Swap,
    Insertion,
    Synonym,
    CharSwap,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 5] = [
        AugmentKind::Deletion,
        AugmentKind::Swap,
        AugmentKind::Insertion,
        AugmentKind::Synonym,
        AugmentKind::CharSwap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AugmentKind::Deletion => "deletion",
            AugmentKind::Swap => "swap",
            AugmentKind::Insertion => "insertion",
            AugmentKind::Synonym => "synonym",
            AugmentKind::CharSwap => "char_swap",
        }
    }
}

impl FromStr for AugmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown augmentation kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Share of tokens touched by one transform (at least one token).
    pub strength: f64,
    pub kinds: Vec<AugmentKind>,
    /// Transforms applied per generated negative. One by default.
    pub stack: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            strength: 0.1,
            kinds: AugmentKind::ALL.to_vec(),
            stack: 1,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.strength > 0.0 && self.strength <= 1.0) {
            return Err(Error::invalid(format!("augmentation strength {} is outside (0, 1]", self.strength)));
        }
        Ok(())
    }

    /// Number of edits for a sentence of `n` tokens.
    pub fn edits(&self, n: usize) -> usize {
        ((self.strength * n as f64).floor() as usize).max(1)
    }
}

/// Token to replacement tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    map: BTreeMap<String, Vec<String>>,
}

impl SynonymLexicon {
    pub fn bundled() -> SynonymLexicon {
        SynonymLexicon::parse(BUNDLED_SYNONYMS).expect("bundled synonyms are valid")
    }

    pub fn load<R: Read>(mut reader: R) -> Result<SynonymLexicon> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        SynonymLexicon::parse(&text)
    }

    /// Lines of `token<TAB>syn1,syn2,...`.
    pub fn parse(text: &str) -> Result<SynonymLexicon> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (token, syns) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(line_no, "expected `token<TAB>syn1,syn2,...`"))?;
            let token = token.trim();
            if token.is_empty() {
                return Err(Error::parse(line_no, "empty token"));
            }
            let syns: Vec<String> = syns
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            if syns.is_empty() {
                return Err(Error::parse(line_no, format!("`{token}` has no synonyms")));
            }
            if syns.iter().any(|s| s == token) {
                return Err(Error::parse(line_no, format!("`{token}` lists itself as a synonym")));
            }
            map.insert(token.to_string(), syns);
        }
        Ok(SynonymLexicon { map })
    }

    pub fn get(&self, token: &str) -> Option<&[String]> {
        self.map.get(token).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Tokens exempt from synonym substitution.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn bundled() -> Stopwords {
        Stopwords::parse(BUNDLED_STOPWORDS)
    }

    /// One token per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Stopwords {
        Stopwords(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }
}

/// Lexical resources used by the transforms.
#[derive(Clone, Debug, Default)]
pub struct Resources {
    pub synonyms: SynonymLexicon,
    pub stopwords: Stopwords,
}

impl Resources {
    pub fn bundled() -> Resources {
        Resources {
            synonyms: SynonymLexicon::bundled(),
            stopwords: Stopwords::bundled(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Augmented {
    pub tokens: Vec<String>,
    /// Set when no change was possible and the input came back unchanged.
    pub noop: bool,
}

impl Augmented {
    fn unchanged(tokens: &[String]) -> Augmented {
        Augmented {
            tokens: tokens.to_vec(),
            noop: true,
        }
    }

    fn changed(tokens: Vec<String>) -> Augmented {
        Augmented { tokens, noop: false }
    }
}

/// Applies one transform.
pub fn eda_transform<R: Rng + ?Sized>(
    tokens: &[String],
    kind: AugmentKind,
    cfg: &AugmentConfig,
    res: &Resources,
    rng: &mut R,
) -> Augmented {
    let n = tokens.len();
    if n == 0 {
        return Augmented::unchanged(tokens);
    }
    let k = cfg.edits(n);
    match kind {
        AugmentKind::Deletion => {
            if n == 1 {
                return Augmented::unchanged(tokens);
            }
            // never empties a sentence
            let k = k.min(n - 1);
            let gone: HashSet<usize> = sample_distinct(rng, n, k).into_iter().collect();
            Augmented::changed(
                tokens
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !gone.contains(i))
                    .map(|(_, t)| t.clone())
                    .collect(),
            )
        }
        AugmentKind::Swap => {
            let distinct: HashSet<&String> = tokens.iter().collect();
            if distinct.len() < 2 {
                return Augmented::unchanged(tokens);
            }
            // With two distinct tokens present every position has a partner
            // holding a different token, so each swap is a visible edit.
            let swap_once = |out: &mut Vec<String>, rng: &mut R| {
                let i = pick(rng, n);
                let partners: Vec<usize> = (0..n).filter(|&j| out[j] != out[i]).collect();
                let j = partners[pick(rng, partners.len())];
                out.swap(i, j);
            };
            let mut out = tokens.to_vec();
            for _ in 0..k {
                swap_once(&mut out, rng);
            }
            if out == tokens {
                // later swaps undid earlier ones
                swap_once(&mut out, rng);
            }
            Augmented::changed(out)
        }
        AugmentKind::Insertion => {
            if !tokens.iter().any(|t| res.synonyms.get(t).is_some()) {
                return Augmented::unchanged(tokens);
            }
            let mut out = tokens.to_vec();
            for _ in 0..k {
                let covered: Vec<usize> = (0..out.len()).filter(|&i| res.synonyms.get(&out[i]).is_some()).collect();
                let src = &out[covered[pick(rng, covered.len())]];
                let syns = res.synonyms.get(src).expect("covered");
                let word = syns[pick(rng, syns.len())].clone();
                let at = pick(rng, out.len() + 1);
                out.insert(at, word);
            }
            Augmented::changed(out)
        }
        AugmentKind::Synonym => {
            let eligible: Vec<usize> = (0..n)
                .filter(|&i| !res.stopwords.contains(&tokens[i]) && res.synonyms.get(&tokens[i]).is_some())
                .collect();
            if eligible.is_empty() {
                return Augmented::unchanged(tokens);
            }
            let mut out = tokens.to_vec();
            for p in sample_distinct(rng, eligible.len(), k) {
                let i = eligible[p];
                let syns = res.synonyms.get(&tokens[i]).expect("eligible");
                out[i] = syns[pick(rng, syns.len())].clone();
            }
            Augmented::changed(out)
        }
        AugmentKind::CharSwap => {
            // positions whose adjacent characters differ, in tokens of 3+ chars
            let candidates: Vec<(usize, Vec<usize>)> = tokens
                .iter()
                .enumerate()
                .filter_map(|(i, t)| {
                    let chars: Vec<char> = t.chars().collect();
                    if chars.len() < 3 {
                        return None;
                    }
                    let spots: Vec<usize> = (0..chars.len() - 1).filter(|&p| chars[p] != chars[p + 1]).collect();
                    (!spots.is_empty()).then_some((i, spots))
                })
                .collect();
            if candidates.is_empty() {
                return Augmented::unchanged(tokens);
            }
            let (i, spots) = &candidates[pick(rng, candidates.len())];
            let p = spots[pick(rng, spots.len())];
            let mut chars: Vec<char> = tokens[*i].chars().collect();
            chars.swap(p, p + 1);
            let mut out = tokens.to_vec();
            out[*i] = chars.into_iter().collect();
            Augmented::changed(out)
        }
    }
}

/// Deforms a sentence with `cfg.stack` transforms, each of a kind drawn
/// uniformly from the enabled kinds.
pub fn deform<R: Rng + ?Sized>(tokens: &[String], cfg: &AugmentConfig, res: &Resources, rng: &mut R) -> Vec<String> {
    if cfg.kinds.is_empty() {
        return tokens.to_vec();
    }
    let mut out = tokens.to_vec();
    for _ in 0..cfg.stack.max(1) {
        let kind = cfg.kinds[pick(rng, cfg.kinds.len())];
        out = eda_transform(&out, kind, cfg, res, rng).tokens;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn char_swap_single_token() {
        let cfg = AugmentConfig::default();
        let res = Resources::default();
        let swaps = ["hpone", "pohne", "phnoe", "phoen"];
        let mut seen = HashSet::new();
        for seed in 0..200 {
            let out = eda_transform(&toks(&["phone"]), AugmentKind::CharSwap, &cfg, &res, &mut seeded(seed));
            assert!(!out.noop);
            assert!(swaps.contains(&out.tokens[0].as_str()), "{:?}", out.tokens);
            seen.insert(out.tokens[0].clone());
        }
        assert!(seen.contains("pohne"));
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn char_swap_noop_on_short_tokens() {
        let out = eda_transform(
            &toks(&["a", "is", "to"]),
            AugmentKind::CharSwap,
            &AugmentConfig::default(),
            &Resources::default(),
            &mut seeded(1),
        );
        assert!(out.noop);
        assert_eq!(out.tokens, toks(&["a", "is", "to"]));
    }

    #[test]
    fn deletion_count() {
        let input = toks(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"]);
        let out = eda_transform(&input, AugmentKind::Deletion, &AugmentConfig::default(), &Resources::default(), &mut seeded(3));
        assert_eq!(out.tokens.len(), 9);
        let single = eda_transform(&toks(&["x"]), AugmentKind::Deletion, &AugmentConfig::default(), &Resources::default(), &mut seeded(3));
        assert!(single.noop);
        assert_eq!(single.tokens.len(), 1);
    }

    #[test]
    fn synonym_forced_outcome() {
        let res = Resources {
            synonyms: SynonymLexicon::parse("important\tvital\n").unwrap(),
            stopwords: Stopwords::bundled(),
        };
        let out = eda_transform(
            &toks(&["phone", "is", "important"]),
            AugmentKind::Synonym,
            &AugmentConfig::default(),
            &res,
            &mut seeded(9),
        );
        assert_eq!(out.tokens, toks(&["phone", "is", "vital"]));
    }

    #[test]
    fn stopwords_are_protected() {
        let res = Resources {
            synonyms: SynonymLexicon::parse("is\tequals\n").unwrap(),
            stopwords: Stopwords::bundled(),
        };
        let out = eda_transform(&toks(&["phone", "is", "ok"]), AugmentKind::Synonym, &AugmentConfig::default(), &res, &mut seeded(1));
        assert!(out.noop);
    }

    #[test]
    fn lexicon_parsing() {
        let lex = SynonymLexicon::parse("big\tlarge,huge\n").unwrap();
        assert_eq!(lex.get("big").unwrap(), &["large".to_string(), "huge".to_string()]);
        assert!(matches!(SynonymLexicon::parse("big\tbig\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(SynonymLexicon::parse("ok\tfine\nbig\t , \n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(SynonymLexicon::parse("no tab here\n"), Err(Error::Parse { line: 1, .. })));
        assert!(SynonymLexicon::parse("").unwrap().is_empty());
        assert!(!SynonymLexicon::bundled().is_empty());
    }

    #[test]
    fn empty_lexicon_makes_insertion_noop() {
        let out = eda_transform(&toks(&["a", "b"]), AugmentKind::Insertion, &AugmentConfig::default(), &Resources::default(), &mut seeded(0));
        assert!(out.noop);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in AugmentKind::ALL {
            assert_eq!(k.as_str().parse::<AugmentKind>().unwrap(), k);
        }
        assert!("shuffle".parse::<AugmentKind>().is_err());
    }
}
