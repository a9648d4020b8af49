//! Action programs: the parsed form of model-generated API calls.
//!
//! The grammar is line-oriented: every non-empty line is either one API call
//! (`receiver.name(args)` or `name(args)`), one assignment binding a local
//! name (`x = Ctor(...)`), or a `#` comment. Argument literals cover strings,
//! integers, floats, booleans, bare symbols, and constructor forms such as
//! `Loc("San Francisco")` nested at most two levels deep.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum nesting depth for constructor arguments.
pub const MAX_CTOR_DEPTH: usize = 2;

/// Error produced when a completion cannot be parsed into an action program.
///
/// `line` is 1-based; the offending text is embedded in `reason`.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("line {line}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

impl ParseError {
    fn new(line: usize, reason: impl Into<String>) -> Self {
        ParseError {
            line,
            reason: reason.into(),
        }
    }
}

/// One argument literal.
///
/// `Symbol` covers bare identifiers such as the object names in
/// `Find(novel)`. Numeric comparisons are cross-type: `Int(2)` equals
/// `Float(2.0)`, since tool arguments are compared numerically.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Symbol { sym: String },
    Ctor { ctor: String, args: Vec<Literal> },
}

impl PartialEq for Literal {
    fn eq(&self, other: &Self) -> bool {
        use Literal::*;
        match (self, other) {
            (Bool(a), Bool(b)) => a == b,
            (Int(a), Int(b)) => a == b,
            (Float(a), Float(b)) => a == b,
            (Int(a), Float(b)) | (Float(b), Int(a)) => *a as f64 == *b,
            (Str(a), Str(b)) => a == b,
            (Symbol { sym: a }, Symbol { sym: b }) => a == b,
            (Ctor { ctor: a, args: x }, Ctor { ctor: b, args: y }) => a == b && x == y,
            _ => false,
        }
    }
}

impl Literal {
    /// Canonical text form. Floats with no fractional part render as
    /// integers so that numerically equal literals render identically.
    pub fn canon(&self) -> String {
        match self {
            Literal::Bool(b) => b.to_string(),
            Literal::Int(i) => i.to_string(),
            Literal::Float(f) => {
                if f.fract() == 0.0 && f.is_finite() && f.abs() < 9e15 {
                    format!("{}", *f as i64)
                } else {
                    format!("{f}")
                }
            }
            Literal::Str(s) => format!("\"{}\"", escape_str(s)),
            Literal::Symbol { sym } => sym.clone(),
            Literal::Ctor { ctor, args } => {
                let inner: Vec<String> = args.iter().map(Literal::canon).collect();
                format!("{}({})", ctor, inner.join(", "))
            }
        }
    }
}

fn escape_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            other => out.push(other),
        }
    }
    out
}

/// One API call: function name plus ordered argument literals. Receiver
/// prefixes (`API.`, `robot.`) are stripped during parsing; they carry no
/// meaning for execution or comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiCall {
    pub name: String,
    pub args: Vec<Literal>,
}

impl ApiCall {
    pub fn new(name: impl Into<String>, args: Vec<Literal>) -> Self {
        ApiCall {
            name: name.into(),
            args,
        }
    }

    /// Canonical `name(arg, ...)` form, used for step comparison.
    pub fn canon(&self) -> String {
        let args: Vec<String> = self.args.iter().map(Literal::canon).collect();
        format!("{}({})", self.name, args.join(", "))
    }
}

impl fmt::Display for ApiCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canon())
    }
}

/// A parsed sequence of API calls plus the source text it came from.
///
/// Equality compares the parsed calls only; `raw_text` is provenance.
#[derive(Debug, Clone, Serialize)]
pub struct ActionProgram {
    pub calls: Vec<ApiCall>,
    pub raw_text: String,
}

impl PartialEq for ActionProgram {
    fn eq(&self, other: &Self) -> bool {
        self.calls == other.calls
    }
}

impl ActionProgram {
    /// Wrap text that is not in the call grammar (e.g. a curl command) as a
    /// program with no parsed calls.
    pub fn from_raw(text: impl Into<String>) -> Self {
        ActionProgram {
            calls: Vec::new(),
            raw_text: text.into(),
        }
    }

    /// Canonical rendering: one call per line. Re-parsing the result yields
    /// an equal program.
    pub fn render(&self) -> String {
        self.calls
            .iter()
            .map(ApiCall::canon)
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Multiset of called function names, with multiplicity. Constructor
    /// names inside arguments do not contribute.
    pub fn api_multiset(&self) -> Multiset {
        Multiset::from_names(self.calls.iter().map(|c| c.name.as_str()))
    }

    /// Multiset of canonical full-call strings (name plus arguments).
    pub fn call_multiset(&self) -> Multiset {
        Multiset::from_names(self.calls.iter().map(|c| c.canon()).collect::<Vec<_>>())
    }

    /// Canonical step strings, in order.
    pub fn steps(&self) -> Vec<String> {
        self.calls.iter().map(ApiCall::canon).collect()
    }
}

// Accept either a plain string (parsed, or kept raw if not in the grammar)
// or the full {raw_text, calls} object when deserializing.
impl<'de> Deserialize<'de> for ActionProgram {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Full {
                raw_text: String,
                calls: Vec<ApiCall>,
            },
        }
        Ok(match Repr::deserialize(deserializer)? {
            Repr::Text(text) => match parse_action_program(&text) {
                Ok(p) => p,
                Err(_) => ActionProgram::from_raw(text),
            },
            Repr::Full { raw_text, calls } => ActionProgram { calls, raw_text },
        })
    }
}

/// A multiset of names (or canonical call strings) with multiplicity.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Multiset(pub BTreeMap<String, usize>);

impl Multiset {
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for name in names {
            *map.entry(name.into()).or_insert(0) += 1;
        }
        Multiset(map)
    }

    /// Total element count, with multiplicity.
    pub fn total(&self) -> usize {
        self.0.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self, name: &str) -> usize {
        self.0.get(name).copied().unwrap_or(0)
    }

    /// `|self ∖ other|`: elements of self not covered by other, with
    /// multiplicity.
    pub fn difference_size(&self, other: &Multiset) -> usize {
        self.0
            .iter()
            .map(|(name, &n)| n.saturating_sub(other.count(name)))
            .sum()
    }

    /// `|self ∩ other|` with multiplicity: Σ min(count_a, count_b).
    pub fn intersection_size(&self, other: &Multiset) -> usize {
        self.0
            .iter()
            .map(|(name, &n)| n.min(other.count(name)))
            .sum()
    }
}

/// Return the first line whose first whitespace-separated token is `curl`,
/// trimmed; `None` when no such line exists.
pub fn extract_curl_line(text: &str) -> Option<String> {
    text.lines()
        .map(str::trim)
        .find(|line| line.split_whitespace().next() == Some("curl"))
        .map(str::to_string)
}

/// Parse post-processed completion text into an action program.
///
/// Blank lines and `#` comments are skipped. Assignments bind a local name
/// that later calls may reference; referencing a name before its assignment
/// line is an error. Prose, an empty input, or malformed calls produce a
/// `ParseError` carrying the offending line.
pub fn parse_action_program(text: &str) -> Result<ActionProgram, ParseError> {
    let lines: Vec<&str> = text.lines().collect();

    // Assignment targets by first line of definition, for use-before-def
    // detection on names that are bound somewhere in the program.
    let mut def_line: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, line) in lines.iter().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if let Some(name) = assignment_target(t) {
            def_line.entry(name).or_insert(idx);
        }
    }

    let mut locals: BTreeMap<String, Literal> = BTreeMap::new();
    let mut calls = Vec::new();

    for (idx, line) in lines.iter().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let lineno = idx + 1;
        let mut cursor = Cursor::new(trimmed, lineno, &locals, &def_line, idx);
        match cursor.parse_line()? {
            LineItem::Call(call) => calls.push(call),
            LineItem::Assign(name, value) => {
                locals.insert(name, value);
            }
        }
    }

    if calls.is_empty() {
        return Err(ParseError::new(
            lines.len().max(1),
            "no API calls found in input",
        ));
    }

    Ok(ActionProgram {
        calls,
        raw_text: text.to_string(),
    })
}

fn assignment_target(line: &str) -> Option<String> {
    let bytes = line.as_bytes();
    let mut i = 0;
    while i < bytes.len() && is_ident_char(bytes[i] as char, i == 0) {
        i += 1;
    }
    if i == 0 {
        return None;
    }
    let rest = line[i..].trim_start();
    if rest.starts_with('=') && !rest.starts_with("==") {
        Some(line[..i].to_string())
    } else {
        None
    }
}

fn is_ident_char(c: char, first: bool) -> bool {
    if first {
        c.is_ascii_alphabetic() || c == '_'
    } else {
        c.is_ascii_alphanumeric() || c == '_'
    }
}

enum LineItem {
    Call(ApiCall),
    Assign(String, Literal),
}

struct Cursor<'a> {
    chars: Vec<char>,
    pos: usize,
    line: &'a str,
    lineno: usize,
    locals: &'a BTreeMap<String, Literal>,
    def_line: &'a BTreeMap<String, usize>,
    line_idx: usize,
}

impl<'a> Cursor<'a> {
    fn new(
        line: &'a str,
        lineno: usize,
        locals: &'a BTreeMap<String, Literal>,
        def_line: &'a BTreeMap<String, usize>,
        line_idx: usize,
    ) -> Self {
        Cursor {
            chars: line.chars().collect(),
            pos: 0,
            line,
            lineno,
            locals,
            def_line,
            line_idx,
        }
    }

    fn error(&self, what: &str) -> ParseError {
        ParseError::new(self.lineno, format!("{what} in {:?}", self.line))
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn ident(&mut self) -> Option<String> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if is_ident_char(c, self.pos == start) {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            None
        } else {
            Some(self.chars[start..self.pos].iter().collect())
        }
    }

    fn parse_line(&mut self) -> Result<LineItem, ParseError> {
        self.skip_ws();
        let first = self
            .ident()
            .ok_or_else(|| self.error("expected an API call"))?;

        // Dotted receiver chain: keep only the final segment as the name.
        let mut name = first;
        while self.peek() == Some('.') {
            self.bump();
            name = self
                .ident()
                .ok_or_else(|| self.error("expected a name after '.'"))?;
        }

        self.skip_ws();
        match self.peek() {
            Some('(') => {
                self.bump();
                let args = self.parse_args()?;
                self.skip_ws();
                if self.peek().is_some() {
                    return Err(self.error("unexpected trailing text after call"));
                }
                Ok(LineItem::Call(ApiCall { name, args }))
            }
            Some('=') => {
                self.bump();
                self.skip_ws();
                let value = self.parse_expr(0)?;
                self.skip_ws();
                if self.peek().is_some() {
                    return Err(self.error("unexpected trailing text after assignment"));
                }
                Ok(LineItem::Assign(name, value))
            }
            _ => Err(self.error("expected '(' or '='")),
        }
    }

    fn parse_args(&mut self) -> Result<Vec<Literal>, ParseError> {
        let mut args = Vec::new();
        self.skip_ws();
        if self.peek() == Some(')') {
            self.bump();
            return Ok(args);
        }
        loop {
            args.push(self.parse_expr(0)?);
            self.skip_ws();
            match self.bump() {
                Some(',') => self.skip_ws(),
                Some(')') => return Ok(args),
                _ => return Err(self.error("expected ',' or ')' in argument list")),
            }
        }
    }

    fn parse_expr(&mut self, ctor_depth: usize) -> Result<Literal, ParseError> {
        self.skip_ws();
        match self.peek() {
            Some('"') | Some('\'') => self.parse_string(),
            Some(c) if c.is_ascii_digit() || c == '-' => self.parse_number(),
            Some(c) if is_ident_char(c, true) => {
                let name = self.ident().expect("ident start checked");
                if self.peek() == Some('(') {
                    if ctor_depth + 1 > MAX_CTOR_DEPTH {
                        return Err(self.error("constructor nesting deeper than 2"));
                    }
                    self.bump();
                    let mut args = Vec::new();
                    self.skip_ws();
                    if self.peek() == Some(')') {
                        self.bump();
                    } else {
                        loop {
                            args.push(self.parse_expr(ctor_depth + 1)?);
                            self.skip_ws();
                            match self.bump() {
                                Some(',') => self.skip_ws(),
                                Some(')') => break,
                                _ => {
                                    return Err(
                                        self.error("expected ',' or ')' in constructor arguments")
                                    )
                                }
                            }
                        }
                    }
                    return Ok(Literal::Ctor { ctor: name, args });
                }
                match name.as_str() {
                    "true" | "True" => Ok(Literal::Bool(true)),
                    "false" | "False" => Ok(Literal::Bool(false)),
                    _ => {
                        if let Some(value) = self.locals.get(&name) {
                            Ok(value.clone())
                        } else if matches!(self.def_line.get(&name), Some(&d) if d > self.line_idx)
                        {
                            Err(ParseError::new(
                                self.lineno,
                                format!("local name {name:?} used before assignment"),
                            ))
                        } else {
                            Ok(Literal::Symbol { sym: name })
                        }
                    }
                }
            }
            _ => Err(self.error("expected an argument literal")),
        }
    }

    fn parse_string(&mut self) -> Result<Literal, ParseError> {
        let quote = self.bump().expect("quote checked");
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(self.error("unterminated string literal")),
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('\\') => out.push('\\'),
                    Some('"') => out.push('"'),
                    Some('\'') => out.push('\''),
                    Some(other) => {
                        out.push('\\');
                        out.push(other);
                    }
                    None => return Err(self.error("unterminated escape in string literal")),
                },
                Some(c) if c == quote => return Ok(Literal::Str(out)),
                Some(c) => out.push(c),
            }
        }
    }

    fn parse_number(&mut self) -> Result<Literal, ParseError> {
        let start = self.pos;
        if self.peek() == Some('-') {
            self.bump();
        }
        let mut saw_digit = false;
        let mut is_float = false;
        while let Some(c) = self.peek() {
            match c {
                '0'..='9' => {
                    saw_digit = true;
                    self.bump();
                }
                '.' => {
                    if is_float {
                        break;
                    }
                    is_float = true;
                    self.bump();
                }
                'e' | 'E' => {
                    is_float = true;
                    self.bump();
                    if matches!(self.peek(), Some('+') | Some('-')) {
                        self.bump();
                    }
                }
                _ => break,
            }
        }
        if !saw_digit {
            return Err(self.error("expected digits in numeric literal"));
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        if is_float {
            text.parse::<f64>()
                .map(Literal::Float)
                .map_err(|_| self.error("invalid float literal"))
        } else {
            match text.parse::<i64>() {
                Ok(i) => Ok(Literal::Int(i)),
                // Out-of-range integers degrade to floats.
                Err(_) => text
                    .parse::<f64>()
                    .map(Literal::Float)
                    .map_err(|_| self.error("invalid numeric literal")),
            }
        }
    }
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn literal_strategy() -> impl Strategy<Value = Literal> {
        let scalar = prop_oneof![
            any::<bool>().prop_map(Literal::Bool),
            any::<i64>().prop_map(Literal::Int),
            (-1e9f64..1e9).prop_map(Literal::Float),
            "[ -~]{0,12}".prop_map(Literal::Str),
            "[a-z_][a-z0-9_]{0,8}"
                .prop_filter("bool keywords parse as booleans", |s| {
                    s != "true" && s != "false"
                })
                .prop_map(|s| Literal::Symbol { sym: s }),
        ];
        scalar.prop_recursive(2, 6, 3, |inner| {
            ("[A-Z][a-zA-Z]{0,6}", prop::collection::vec(inner, 0..3))
                .prop_map(|(ctor, args)| Literal::Ctor { ctor, args })
        })
    }

    fn program_strategy() -> impl Strategy<Value = ActionProgram> {
        prop::collection::vec(
            (
                "[a-z_][a-z0-9_]{0,10}",
                prop::collection::vec(literal_strategy(), 0..4),
            ),
            1..6,
        )
        .prop_map(|calls| ActionProgram {
            calls: calls
                .into_iter()
                .map(|(name, args)| ApiCall::new(name, args))
                .collect(),
            raw_text: String::new(),
        })
    }

    proptest! {
        // Canonical render re-parses to an equal program.
        #[test]
        fn round_trip(program in program_strategy()) {
            let rendered = program.render();
            let reparsed = parse_action_program(&rendered).expect("canonical text parses");
            prop_assert_eq!(&program, &reparsed);
        }

        // Arbitrary input never panics; it parses or reports an error.
        #[test]
        fn parse_never_panics(text in "\\PC{0,200}") {
            let _ = parse_action_program(&text);
        }

        #[test]
        fn multiset_cardinality_matches_call_count(program in program_strategy()) {
            prop_assert_eq!(program.api_multiset().total(), program.calls.len());
        }
    }
}
