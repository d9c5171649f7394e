//! Prompt tokenization and object-group extraction.
//!
//! Prompts are read as a list of noun phrases of the form
//! `[det]? modifier* noun+`, joined by `and` or commas. Every phrase becomes
//! one [`ObjectGroup`]; determiners and conjunctions become outside tokens.
//! Word classes come from a [`WordLexicon`], with unknown words resolved by
//! position: phrase-final means noun, anything earlier means modifier.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::TextError;

/// Syntactic role of a prompt token inside the attention losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Noun,
    Modifier,
    Outside,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub index: usize,
    pub text: String,
    pub role: Role,
}

/// One object of the prompt: its nouns, the modifiers attached to them, and
/// every modifier/noun pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectGroup {
    pub noun_indices: Vec<usize>,
    pub modifier_indices: Vec<usize>,
    pub pairs: Vec<(usize, usize)>,
}

impl ObjectGroup {
    /// Builds a group and fills `pairs` with the full modifier x noun product.
    pub fn new(mut noun_indices: Vec<usize>, mut modifier_indices: Vec<usize>) -> Self {
        noun_indices.sort_unstable();
        noun_indices.dedup();
        modifier_indices.sort_unstable();
        modifier_indices.dedup();
        let pairs = modifier_indices
            .iter()
            .flat_map(|&m| noun_indices.iter().map(move |&n| (m, n)))
            .collect();
        Self {
            noun_indices,
            modifier_indices,
            pairs,
        }
    }

    /// Modifier and noun indices, ascending.
    pub fn members(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .noun_indices
            .iter()
            .chain(self.modifier_indices.iter())
            .copied()
            .collect();
        set.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedPrompt {
    pub tokens: Vec<Token>,
    pub groups: Vec<ObjectGroup>,
    pub outside: Vec<usize>,
    /// Special tokens (BOS/EOS in imported bundles) that belong to no set.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<usize>,
}

impl ParsedPrompt {
    /// Union of all group members, ascending.
    pub fn object_tokens(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.groups.iter().flat_map(|g| g.members()).collect();
        set.into_iter().collect()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parsed prompt serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordClass {
    Det,
    Conj,
    Mod,
    Noun,
}

const DETERMINERS: &[&str] = &["a", "an", "the", "one", "some", "this", "that"];
const CONJUNCTIONS: &[&str] = &["and"];
const MODIFIERS: &[&str] = &[
    "red", "blue", "green", "yellow", "purple", "pink", "orange", "brown", "black", "white",
    "gray", "grey", "beige", "silver", "golden", "gold", "wooden", "metal", "glass", "plastic",
    "spotted", "striped", "sliced", "curved", "round", "square", "small", "big", "large", "tiny",
    "fluffy", "baby", "old", "young", "shiny", "furry", "fresh", "broken", "tall", "short",
];
const NOUNS: &[&str] = &[
    // animals
    "frog", "cat", "dog", "bird", "monkey", "bear", "horse", "rabbit", "turtle", "mouse", "lion",
    "elephant", "fox", "owl", "duck", "dolphin", "giraffe", "penguin", "lizard", "koala", "tiger",
    "zebra", "cow", "pig", "sheep",
    // objects
    "crown", "bowl", "tomato", "guitar", "chair", "apple", "car", "balloon", "bench", "clock",
    "backpack", "bow", "suitcase", "bag", "book", "cup", "vase", "hat", "shirt", "jacket", "ball",
    "flower", "cake", "box", "plate", "lamp", "bottle", "umbrella", "glasses", "banana", "bus",
    "plane", "sidewalk", "table", "pot", "toy", "robot",
];

/// Word-class table consulted by [`parse`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WordLexicon {
    classes: HashMap<String, WordClass>,
}

impl WordLexicon {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Built-in English lexicon covering the templated benchmark vocabulary.
    pub fn builtin() -> Self {
        let mut lex = Self::empty();
        for (words, class) in [
            (DETERMINERS, WordClass::Det),
            (CONJUNCTIONS, WordClass::Conj),
            (MODIFIERS, WordClass::Mod),
            (NOUNS, WordClass::Noun),
        ] {
            for w in words {
                lex.insert(w, class);
            }
        }
        lex
    }

    pub fn insert(&mut self, word: &str, class: WordClass) {
        self.classes.insert(word.to_lowercase(), class);
    }

    pub fn class_of(&self, word: &str) -> Option<WordClass> {
        self.classes.get(word).copied()
    }

    pub fn words_of(&self, class: WordClass) -> Vec<&str> {
        let mut words: Vec<&str> = self
            .classes
            .iter()
            .filter(|(_, c)| **c == class)
            .map(|(w, _)| w.as_str())
            .collect();
        words.sort_unstable();
        words
    }

    /// Overlays entries from a JSON object `{ "word": "det|conj|mod|noun" }`.
    pub fn extend_from_json(&mut self, json: &str) -> Result<(), TextError> {
        let entries: BTreeMap<String, WordClass> =
            serde_json::from_str(json).map_err(|e| TextError::Lexicon(e.to_string()))?;
        for (w, c) in entries {
            self.insert(&w, c);
        }
        Ok(())
    }

    /// Built-in lexicon extended with the entries of a JSON lexicon file.
    pub fn load(path: &Path) -> Result<Self, TextError> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| TextError::Lexicon(format!("{}: {e}", path.display())))?;
        let mut lex = Self::builtin();
        lex.extend_from_json(&json)?;
        Ok(lex)
    }

    pub fn to_json(&self) -> String {
        let sorted: BTreeMap<&str, WordClass> =
            self.classes.iter().map(|(w, c)| (w.as_str(), *c)).collect();
        serde_json::to_string_pretty(&sorted).expect("lexicon serializes")
    }
}

fn clean_word(raw: &str) -> String {
    raw.chars()
        .filter(|c| c.is_alphanumeric() || *c == '-' || *c == '\'')
        .collect::<String>()
        .trim_matches(|c| c == '-' || c == '\'')
        .to_lowercase()
}

/// Words plus a flag telling whether a comma (or semicolon) followed them.
fn lex(prompt: &str) -> Vec<(String, bool)> {
    let is_break = |c: char| c == ',' || c == ';';
    let mut out: Vec<(String, bool)> = Vec::new();
    for raw in prompt.split_whitespace() {
        let word = clean_word(raw);
        let core_start = raw.find(char::is_alphanumeric).unwrap_or(raw.len());
        let core_end = raw
            .rfind(char::is_alphanumeric)
            .map_or(core_start, |i| i + raw[i..].chars().next().map_or(1, char::len_utf8));
        let leading = raw[..core_start].contains(is_break);
        let trailing = raw[core_end.max(core_start)..].contains(is_break);
        if leading || (word.is_empty() && trailing) {
            if let Some(last) = out.last_mut() {
                last.1 = true;
            }
        }
        if !word.is_empty() {
            out.push((word, trailing));
        }
    }
    out
}

/// Splits a prompt into lowercase words with punctuation removed.
pub fn tokenize(prompt: &str) -> Result<Vec<String>, TextError> {
    let words: Vec<String> = lex(prompt).into_iter().map(|(w, _)| w).collect();
    if words.is_empty() {
        return Err(TextError::EmptyPrompt);
    }
    Ok(words)
}

fn grammar_error(position: usize, word: &str, reason: &str) -> TextError {
    TextError::Grammar {
        position,
        word: word.to_string(),
        reason: reason.to_string(),
    }
}

/// Parses a prompt into object groups and outside tokens.
pub fn parse(prompt: &str, lexicon: &WordLexicon) -> Result<ParsedPrompt, TextError> {
    let words = lex(prompt);
    if words.is_empty() {
        return Err(TextError::EmptyPrompt);
    }

    let mut roles = vec![Role::Outside; words.len()];
    let mut groups = Vec::new();
    let mut phrase: Vec<usize> = Vec::new();

    let mut after_comma = false;
    for (i, (word, comma_after)) in words.iter().enumerate() {
        if lexicon.class_of(word) == Some(WordClass::Conj) {
            // ", and" closes nothing new
            if !(after_comma && phrase.is_empty()) {
                groups.push(parse_phrase(&phrase, &words, lexicon, &mut roles, i)?);
                phrase.clear();
            }
            after_comma = false;
            continue;
        }
        after_comma = *comma_after;
        phrase.push(i);
        if *comma_after {
            groups.push(parse_phrase(&phrase, &words, lexicon, &mut roles, i + 1)?);
            phrase.clear();
        }
    }
    if !phrase.is_empty() || groups.is_empty() {
        groups.push(parse_phrase(&phrase, &words, lexicon, &mut roles, words.len())?);
    } else if lexicon.class_of(&words[words.len() - 1].0) == Some(WordClass::Conj) {
        let last = words.len() - 1;
        return Err(grammar_error(last, &words[last].0, "dangling conjunction"));
    }

    let tokens: Vec<Token> = words
        .iter()
        .zip(&roles)
        .enumerate()
        .map(|(index, ((text, _), role))| Token {
            index,
            text: text.clone(),
            role: *role,
        })
        .collect();
    let outside = roles
        .iter()
        .enumerate()
        .filter(|(_, r)| **r == Role::Outside)
        .map(|(i, _)| i)
        .collect();

    Ok(ParsedPrompt {
        tokens,
        groups,
        outside,
        excluded: Vec::new(),
    })
}

/// Matches `[det]? modifier* noun+` over the token indices of one phrase.
/// `end` is the position reported when the phrase is empty.
fn parse_phrase(
    phrase: &[usize],
    words: &[(String, bool)],
    lexicon: &WordLexicon,
    roles: &mut [Role],
    end: usize,
) -> Result<ObjectGroup, TextError> {
    let Some(&first) = phrase.first() else {
        let pos = end.min(words.len().saturating_sub(1));
        return Err(grammar_error(pos, &words[pos].0, "empty noun phrase"));
    };
    let body = if lexicon.class_of(&words[first].0) == Some(WordClass::Det) {
        &phrase[1..]
    } else {
        phrase
    };
    let Some(&last) = body.last() else {
        return Err(grammar_error(first, &words[first].0, "no noun in phrase"));
    };

    let mut nouns = Vec::new();
    let mut modifiers = Vec::new();
    for &i in body {
        let word = &words[i].0;
        let class = match lexicon.class_of(word) {
            Some(WordClass::Det) => {
                return Err(grammar_error(i, word, "determiner inside noun phrase"))
            }
            Some(c) => c,
            None if i == last => WordClass::Noun,
            None => WordClass::Mod,
        };
        match class {
            WordClass::Noun => nouns.push(i),
            WordClass::Mod if !nouns.is_empty() => {
                return Err(grammar_error(i, word, "modifier after noun"))
            }
            WordClass::Mod => modifiers.push(i),
            WordClass::Det | WordClass::Conj => unreachable!("filtered above"),
        }
    }
    if nouns.is_empty() {
        return Err(grammar_error(last, &words[last].0, "no noun in phrase"));
    }
    for &n in &nouns {
        roles[n] = Role::Noun;
    }
    for &m in &modifiers {
        roles[m] = Role::Modifier;
    }
    Ok(ObjectGroup::new(nouns, modifiers))
}

/// Structural problems found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonConsecutiveIndex { position: usize, index: usize },
    IndexOutOfRange { index: usize },
    MissingNoun { group: usize },
    NounModifierOverlap { group: usize, token: usize },
    PairSetMismatch { group: usize },
    GroupOverlap { first: usize, second: usize, token: usize },
    /// Token claimed by zero or several of: object set, outside set, excluded set.
    PartitionViolation { token: usize, claims: usize },
    RoleMismatch { token: usize },
}

/// Lists every invariant violation of a parsed prompt; empty means valid.
pub fn validate(parsed: &ParsedPrompt) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = parsed.tokens.len();
    for (pos, t) in parsed.tokens.iter().enumerate() {
        if t.index != pos {
            out.push(Violation::NonConsecutiveIndex {
                position: pos,
                index: t.index,
            });
        }
    }

    let mut owner: HashMap<usize, usize> = HashMap::new();
    for (g, group) in parsed.groups.iter().enumerate() {
        if group.noun_indices.is_empty() {
            out.push(Violation::MissingNoun { group: g });
        }
        for &i in group.noun_indices.iter().chain(&group.modifier_indices) {
            if i >= n {
                out.push(Violation::IndexOutOfRange { index: i });
            }
        }
        for &m in &group.modifier_indices {
            if group.noun_indices.contains(&m) {
                out.push(Violation::NounModifierOverlap { group: g, token: m });
            }
        }
        let expected: BTreeSet<(usize, usize)> = group
            .modifier_indices
            .iter()
            .flat_map(|&m| group.noun_indices.iter().map(move |&j| (m, j)))
            .collect();
        let actual: BTreeSet<(usize, usize)> = group.pairs.iter().copied().collect();
        if expected != actual || actual.len() != group.pairs.len() {
            out.push(Violation::PairSetMismatch { group: g });
        }
        for i in group.members() {
            if let Some(&prev) = owner.get(&i) {
                out.push(Violation::GroupOverlap {
                    first: prev,
                    second: g,
                    token: i,
                });
            } else {
                owner.insert(i, g);
            }
        }
    }

    for &i in parsed.outside.iter().chain(&parsed.excluded) {
        if i >= n {
            out.push(Violation::IndexOutOfRange { index: i });
        }
    }
    let object = parsed.object_tokens();
    for idx in 0..n {
        let claims = usize::from(object.contains(&idx))
            + parsed.outside.iter().filter(|&&o| o == idx).count()
            + parsed.excluded.iter().filter(|&&e| e == idx).count();
        if claims != 1 {
            out.push(Violation::PartitionViolation { token: idx, claims });
        }
    }

    for t in &parsed.tokens {
        let in_nouns = parsed.groups.iter().any(|g| g.noun_indices.contains(&t.index));
        let in_mods = parsed
            .groups
            .iter()
            .any(|g| g.modifier_indices.contains(&t.index));
        let ok = match t.role {
            Role::Noun => in_nouns,
            Role::Modifier => in_mods && !in_nouns,
            Role::Outside => !in_nouns && !in_mods,
        };
        if !ok {
            out.push(Violation::RoleMismatch { token: t.index });
        }
    }
    out
}
