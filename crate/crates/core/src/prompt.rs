//! Prompt-format grammar.
//!
//! A multiple-choice prompt is built from three blocks: the question, the
//! option block and the instruction. The option block is shaped by three
//! independent factors:
//!
//! | factor    | levels                                           |
//! |-----------|--------------------------------------------------|
//! | ID set    | `A/B/C/D`, `a/b/c/d`, `1/2/3/4`, `I/II/III/IV`   |
//! | delimiter | `{id}.`, `{id}:`, `{id})`, `({id})`              |
//! | separator | `\n`, `, `, `; `                                 |
//!
//! giving 4 · 4 · 3 = 48 formats. Rendering is pure and byte-deterministic.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest option count supported by every ID set.
pub const MAX_OPTIONS: usize = 5;
pub const MIN_OPTIONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionIdSet {
    Uppercase,
    Lowercase,
    Numbers,
    #[serde(rename = "roman")]
    RomanNumbers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionDelimiter {
    Dot,
    Colon,
    Bracket,
    DoubleBrackets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionSeparator {
    Comma,
    LineBreak,
    Semicolon,
}

impl OptionIdSet {
    pub const ALL: [OptionIdSet; 4] = [
        OptionIdSet::Uppercase,
        OptionIdSet::Lowercase,
        OptionIdSet::Numbers,
        OptionIdSet::RomanNumbers,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptionIdSet::Uppercase => "uppercase",
            OptionIdSet::Lowercase => "lowercase",
            OptionIdSet::Numbers => "numbers",
            OptionIdSet::RomanNumbers => "roman",
        }
    }

    /// Noun used in the instruction ("Respond with only the ...").
    pub fn noun(self) -> &'static str {
        match self {
            OptionIdSet::Uppercase | OptionIdSet::Lowercase => "letter",
            OptionIdSet::Numbers => "number",
            OptionIdSet::RomanNumbers => "roman number",
        }
    }

    /// The first `count` IDs of this set.
    pub fn ids(self, count: usize) -> Result<Vec<String>> {
        (0..count).map(|i| option_id(self, i)).collect()
    }
}

impl OptionDelimiter {
    pub const ALL: [OptionDelimiter; 4] = [
        OptionDelimiter::Dot,
        OptionDelimiter::Colon,
        OptionDelimiter::Bracket,
        OptionDelimiter::DoubleBrackets,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptionDelimiter::Dot => "dot",
            OptionDelimiter::Colon => "colon",
            OptionDelimiter::Bracket => "bracket",
            OptionDelimiter::DoubleBrackets => "double_brackets",
        }
    }

    pub fn apply(self, id: &str) -> String {
        match self {
            OptionDelimiter::Dot => format!("{id}."),
            OptionDelimiter::Colon => format!("{id}:"),
            OptionDelimiter::Bracket => format!("{id})"),
            OptionDelimiter::DoubleBrackets => format!("({id})"),
        }
    }
}

impl OptionSeparator {
    pub const ALL: [OptionSeparator; 3] = [
        OptionSeparator::Comma,
        OptionSeparator::LineBreak,
        OptionSeparator::Semicolon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptionSeparator::Comma => "comma",
            OptionSeparator::LineBreak => "line_break",
            OptionSeparator::Semicolon => "semicolon",
        }
    }

    pub fn joiner(self) -> &'static str {
        match self {
            OptionSeparator::LineBreak => "\n",
            OptionSeparator::Comma => ", ",
            OptionSeparator::Semicolon => "; ",
        }
    }
}

fn normalize(s: &str) -> String {
    s.trim().to_ascii_lowercase().replace(['-', ' '], "_")
}

impl FromStr for OptionIdSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match normalize(s).as_str() {
            "uppercase" | "upper" | "upp" => Ok(OptionIdSet::Uppercase),
            "lowercase" | "lower" | "low" => Ok(OptionIdSet::Lowercase),
            "numbers" | "number" | "num" => Ok(OptionIdSet::Numbers),
            "roman" | "roman_numbers" | "rom" => Ok(OptionIdSet::RomanNumbers),
            other => Err(Error::invalid(format!("unknown option ID set `{other}`"))),
        }
    }
}

impl FromStr for OptionDelimiter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match normalize(s).as_str() {
            "dot" => Ok(OptionDelimiter::Dot),
            "colon" => Ok(OptionDelimiter::Colon),
            "bracket" => Ok(OptionDelimiter::Bracket),
            "double_brackets" | "double_bracket" | "doublebrackets" => {
                Ok(OptionDelimiter::DoubleBrackets)
            }
            other => Err(Error::invalid(format!("unknown option delimiter `{other}`"))),
        }
    }
}

impl FromStr for OptionSeparator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match normalize(s).as_str() {
            "comma" => Ok(OptionSeparator::Comma),
            "line_break" | "linebreak" | "newline" => Ok(OptionSeparator::LineBreak),
            "semicolon" => Ok(OptionSeparator::Semicolon),
            other => Err(Error::invalid(format!("unknown option separator `{other}`"))),
        }
    }
}

impl fmt::Display for OptionIdSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for OptionDelimiter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for OptionSeparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The three format factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    IdSet,
    Delimiter,
    Separator,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::IdSet, Factor::Delimiter, Factor::Separator];

    pub fn name(self) -> &'static str {
        match self {
            Factor::IdSet => "id_set",
            Factor::Delimiter => "delimiter",
            Factor::Separator => "separator",
        }
    }

    pub fn levels(self) -> Vec<FactorLevel> {
        match self {
            Factor::IdSet => OptionIdSet::ALL.map(FactorLevel::IdSet).to_vec(),
            Factor::Delimiter => OptionDelimiter::ALL.map(FactorLevel::Delimiter).to_vec(),
            Factor::Separator => OptionSeparator::ALL.map(FactorLevel::Separator).to_vec(),
        }
    }
}

/// A single level of one factor, e.g. `double_brackets`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FactorLevel {
    IdSet(OptionIdSet),
    Delimiter(OptionDelimiter),
    Separator(OptionSeparator),
}

impl FactorLevel {
    /// All 11 levels: ID sets, then delimiters, then separators.
    pub fn all() -> Vec<FactorLevel> {
        Factor::ALL.iter().flat_map(|f| f.levels()).collect()
    }

    pub fn factor(self) -> Factor {
        match self {
            FactorLevel::IdSet(_) => Factor::IdSet,
            FactorLevel::Delimiter(_) => Factor::Delimiter,
            FactorLevel::Separator(_) => Factor::Separator,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FactorLevel::IdSet(v) => v.name(),
            FactorLevel::Delimiter(v) => v.name(),
            FactorLevel::Separator(v) => v.name(),
        }
    }

    pub fn matches(self, format: &PromptFormat) -> bool {
        match self {
            FactorLevel::IdSet(v) => format.id_set == v,
            FactorLevel::Delimiter(v) => format.delimiter == v,
            FactorLevel::Separator(v) => format.separator == v,
        }
    }
}

impl fmt::Display for FactorLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FactorLevel {
    type Err = Error;

    /// Level names are unique across factors, so a bare name suffices.
    fn from_str(s: &str) -> Result<Self> {
        if let Ok(v) = s.parse() {
            return Ok(FactorLevel::IdSet(v));
        }
        if let Ok(v) = s.parse() {
            return Ok(FactorLevel::Delimiter(v));
        }
        if let Ok(v) = s.parse() {
            return Ok(FactorLevel::Separator(v));
        }
        Err(Error::invalid(format!("unknown factor level `{s}`")))
    }
}

/// One point of the 48-element format space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptFormat {
    pub id_set: OptionIdSet,
    pub delimiter: OptionDelimiter,
    pub separator: OptionSeparator,
}

impl PromptFormat {
    pub const fn new(
        id_set: OptionIdSet,
        delimiter: OptionDelimiter,
        separator: OptionSeparator,
    ) -> Self {
        PromptFormat {
            id_set,
            delimiter,
            separator,
        }
    }

    /// Position in [`enumerate_formats`] order.
    pub fn index(&self) -> usize {
        self.separator as usize * 16 + self.delimiter as usize * 4 + self.id_set as usize
    }

    /// Stable textual key, `separator/delimiter/id_set`.
    pub fn key(&self) -> String {
        format!(
            "{}/{}/{}",
            self.separator.name(),
            self.delimiter.name(),
            self.id_set.name()
        )
    }
}

impl PartialOrd for PromptFormat {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PromptFormat {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.index().cmp(&other.index())
    }
}

impl fmt::Display for PromptFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

impl FromStr for PromptFormat {
    type Err = Error;

    /// Accepts `separator/delimiter/id_set`; `:` works as a separator too.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(['/', ':']).collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!(
                "format `{s}` must look like separator/delimiter/id_set"
            )));
        }
        Ok(PromptFormat {
            separator: parts[0].parse()?,
            delimiter: parts[1].parse()?,
            id_set: parts[2].parse()?,
        })
    }
}

/// All 48 formats: separator-major, then delimiter, then ID set.
pub fn enumerate_formats() -> Vec<PromptFormat> {
    let mut out = Vec::with_capacity(48);
    for separator in OptionSeparator::ALL {
        for delimiter in OptionDelimiter::ALL {
            for id_set in OptionIdSet::ALL {
                out.push(PromptFormat::new(id_set, delimiter, separator));
            }
        }
    }
    out
}

const ROMAN_TABLE: [(usize, &str); 6] = [
    (10, "X"),
    (9, "IX"),
    (5, "V"),
    (4, "IV"),
    (1, "I"),
    (0, ""),
];

pub fn roman_numeral(n: usize) -> Result<String> {
    if !(1..=20).contains(&n) {
        return Err(Error::domain(format!("roman numeral {n} outside 1..=20")));
    }
    let mut rest = n;
    let mut out = String::new();
    for &(value, glyph) in ROMAN_TABLE.iter().take_while(|(v, _)| *v > 0) {
        while rest >= value {
            out.push_str(glyph);
            rest -= value;
        }
    }
    Ok(out)
}

pub fn option_id(set: OptionIdSet, index: usize) -> Result<String> {
    if index >= MAX_OPTIONS {
        return Err(Error::domain(format!(
            "option index {index} outside 0..{MAX_OPTIONS}"
        )));
    }
    let id = match set {
        OptionIdSet::Uppercase => char::from(b'A' + index as u8).to_string(),
        OptionIdSet::Lowercase => char::from(b'a' + index as u8).to_string(),
        OptionIdSet::Numbers => (index + 1).to_string(),
        OptionIdSet::RomanNumbers => roman_numeral(index + 1)?,
    };
    Ok(id)
}

fn check_count(count: usize) -> Result<()> {
    if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&count) {
        return Err(Error::domain(format!(
            "option count {count} outside {MIN_OPTIONS}..={MAX_OPTIONS}"
        )));
    }
    Ok(())
}

pub fn render_option_block<S: AsRef<str>>(format: PromptFormat, options: &[S]) -> Result<String> {
    if options.is_empty() {
        return Err(Error::invalid("empty option list"));
    }
    check_count(options.len())?;
    let mut fragments = Vec::with_capacity(options.len());
    for (i, text) in options.iter().enumerate() {
        let text = text.as_ref();
        if text.is_empty() {
            return Err(Error::invalid(format!("option {i} has empty text")));
        }
        let id = option_id(format.id_set, i)?;
        fragments.push(format!("{} {}", format.delimiter.apply(&id), text));
    }
    Ok(fragments.join(format.separator.joiner()))
}

pub fn build_instruction(set: OptionIdSet, count: usize) -> Result<String> {
    check_count(count)?;
    let ids = set.ids(count)?;
    let examples = if count == 2 {
        format!("{}, or {}", ids[0], ids[1])
    } else {
        format!("{} or {}", ids[..count - 1].join(", "), ids[count - 1])
    };
    Ok(format!(
        "Select the best answer to the above multiple-choice question based on the image. \
         Respond with only the {} (e.g., {}) of the correct option and no bracket, colon, or dot.",
        set.noun(),
        examples
    ))
}

/// How the three prompt blocks are joined.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLayout {
    pub block_separator: String,
}

impl Default for PromptLayout {
    fn default() -> Self {
        PromptLayout {
            block_separator: "\n".to_string(),
        }
    }
}

pub fn render_prompt<S: AsRef<str>>(
    question: &str,
    options: &[S],
    format: PromptFormat,
) -> Result<String> {
    render_prompt_with(&PromptLayout::default(), question, options, format)
}

pub fn render_prompt_with<S: AsRef<str>>(
    layout: &PromptLayout,
    question: &str,
    options: &[S],
    format: PromptFormat,
) -> Result<String> {
    if question.trim().is_empty() {
        return Err(Error::invalid("empty question"));
    }
    let block = render_option_block(format, options)?;
    let instruction = build_instruction(format.id_set, options.len())?;
    let sep = &layout.block_separator;
    Ok(format!("{question}{sep}{block}{sep}{instruction}"))
}

/// A prompt decoded back into its parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub question: String,
    pub options: Vec<String>,
    pub format: PromptFormat,
}

/// Inverse of [`render_prompt`] for the default layout.
///
/// The instruction fixes the ID set and option count. The delimiter and
/// separator are found by locating each option marker from the end of the
/// block backwards; the first format in enumeration order that decodes
/// wins. Returns `None` for text that no format could have produced.
pub fn parse_prompt(prompt: &str) -> Option<ParsedPrompt> {
    let (head, instruction) = prompt.rsplit_once('\n')?;
    let (id_set, count) = OptionIdSet::ALL.iter().find_map(|&set| {
        (MIN_OPTIONS..=MAX_OPTIONS)
            .find(|&k| build_instruction(set, k).ok().as_deref() == Some(instruction))
            .map(|k| (set, k))
    })?;
    let ids = id_set.ids(count).ok()?;
    for separator in OptionSeparator::ALL {
        for delimiter in OptionDelimiter::ALL {
            if let Some((question, options)) = split_block(head, &ids, delimiter, separator) {
                return Some(ParsedPrompt {
                    question,
                    options,
                    format: PromptFormat::new(id_set, delimiter, separator),
                });
            }
        }
    }
    None
}

fn split_block(
    head: &str,
    ids: &[String],
    delimiter: OptionDelimiter,
    separator: OptionSeparator,
) -> Option<(String, Vec<String>)> {
    let mut end = head.len();
    let mut options = Vec::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate().rev() {
        let lead = if i == 0 { "\n" } else { separator.joiner() };
        let needle = format!("{lead}{} ", delimiter.apply(id));
        let at = head[..end].rfind(&needle)?;
        let text = &head[at + needle.len()..end];
        if text.is_empty() {
            return None;
        }
        options.push(text.to_string());
        end = at;
    }
    options.reverse();
    let question = &head[..end];
    if question.trim().is_empty() {
        return None;
    }
    Some((question.to_string(), options))
}

#[cfg(test)]
mod tests {
    use super::*;
    use OptionDelimiter::*;
    use OptionIdSet::*;
    use OptionSeparator::*;

    #[test]
    fn roman_numerals() {
        assert_eq!(roman_numeral(4).unwrap(), "IV");
        assert_eq!(roman_numeral(1).unwrap(), "I");
        assert_eq!(roman_numeral(5).unwrap(), "V");
        assert_eq!(roman_numeral(9).unwrap(), "IX");
        assert_eq!(roman_numeral(14).unwrap(), "XIV");
        assert_eq!(roman_numeral(19).unwrap(), "XIX");
        assert_eq!(roman_numeral(20).unwrap(), "XX");
        assert!(roman_numeral(0).is_err());
        assert!(roman_numeral(21).is_err());
    }

    #[test]
    fn option_ids() {
        assert_eq!(option_id(Uppercase, 2).unwrap(), "C");
        assert_eq!(option_id(Numbers, 0).unwrap(), "1");
        assert_eq!(option_id(RomanNumbers, 3).unwrap(), "IV");
        assert_eq!(option_id(Lowercase, 4).unwrap(), "e");
        assert!(matches!(option_id(Uppercase, 5), Err(Error::Domain(_))));
    }

    #[test]
    fn option_block_examples() {
        let f = PromptFormat::new(Uppercase, Dot, Comma);
        assert_eq!(render_option_block(f, &["cat", "dog"]).unwrap(), "A. cat, B. dog");
        let f = PromptFormat::new(Lowercase, DoubleBrackets, LineBreak);
        assert_eq!(render_option_block(f, &["x", "y"]).unwrap(), "(a) x\n(b) y");
        let f = PromptFormat::new(Numbers, Bracket, Semicolon);
        assert_eq!(
            render_option_block(f, &["p", "q", "r"]).unwrap(),
            "1) p; 2) q; 3) r"
        );
    }

    #[test]
    fn option_block_rejects_bad_counts() {
        let f = PromptFormat::new(Uppercase, Dot, Comma);
        let empty: [&str; 0] = [];
        assert!(render_option_block(f, &empty).is_err());
        assert!(render_option_block(f, &["only"]).is_err());
        assert!(render_option_block(f, &["a", "b", "c", "d", "e", "f"]).is_err());
        assert!(render_option_block(f, &["a", ""]).is_err());
    }

    #[test]
    fn instructions() {
        assert_eq!(
            build_instruction(Uppercase, 4).unwrap(),
            "Select the best answer to the above multiple-choice question based on the image. \
             Respond with only the letter (e.g., A, B, C or D) of the correct option and no bracket, colon, or dot."
        );
        assert!(build_instruction(Uppercase, 2).unwrap().contains("(e.g., A, or B)"));
        assert!(build_instruction(RomanNumbers, 4)
            .unwrap()
            .contains("Respond with only the roman number (e.g., I, II, III or IV)"));
        assert!(build_instruction(Numbers, 5)
            .unwrap()
            .contains("the number (e.g., 1, 2, 3, 4 or 5)"));
        assert!(build_instruction(Lowercase, 3).unwrap().contains("(e.g., a, b or c)"));
        assert!(build_instruction(Uppercase, 1).is_err());
        assert!(build_instruction(Uppercase, 6).is_err());
    }

    #[test]
    fn prompt_layout() {
        let f = PromptFormat::new(Uppercase, Dot, LineBreak);
        let p = render_prompt("Q?", &["a-text", "b-text"], f).unwrap();
        assert!(p.starts_with("Q?\nA. a-text\nB. b-text\nSelect the best answer"));
        assert_eq!(p, render_prompt("Q?", &["a-text", "b-text"], f).unwrap());
        assert!(render_prompt("", &["a", "b"], f).is_err());

        let wide = PromptLayout {
            block_separator: "\n\n".into(),
        };
        let p = render_prompt_with(&wide, "Q?", &["a", "b"], f).unwrap();
        assert!(p.starts_with("Q?\n\nA. a\nB. b\n\nSelect"));
    }

    #[test]
    fn format_enumeration() {
        let all = enumerate_formats();
        assert_eq!(all.len(), 48);
        assert_eq!(all[0], PromptFormat::new(Uppercase, Dot, Comma));
        assert_eq!(all[47], PromptFormat::new(RomanNumbers, DoubleBrackets, Semicolon));
        let set: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(set.len(), 48);
        for (i, f) in all.iter().enumerate() {
            assert_eq!(f.index(), i);
            assert_eq!(f.key().parse::<PromptFormat>().unwrap(), *f);
        }
    }

    #[test]
    fn parse_inverts_render() {
        let options = ["red bus", "a bike, maybe", "boat; sail", "horse"];
        for f in enumerate_formats() {
            let p = render_prompt("What is it?\nLook closely.", &options, f).unwrap();
            let parsed = parse_prompt(&p).unwrap();
            assert_eq!(parsed.format, f);
            assert_eq!(parsed.question, "What is it?\nLook closely.");
            assert_eq!(parsed.options, options);
        }
        assert!(parse_prompt("no instruction here").is_none());
    }

    #[test]
    fn factor_levels() {
        let all = FactorLevel::all();
        assert_eq!(all.len(), 11);
        for level in &all {
            assert_eq!(level.name().parse::<FactorLevel>().unwrap(), *level);
            let n = enumerate_formats().iter().filter(|f| level.matches(f)).count();
            let expected = if level.factor() == Factor::Separator { 16 } else { 12 };
            assert_eq!(n, expected);
        }
    }
}
