//! Fixed-precision text dialect, digit-level tokenizer and task prompts.
//!
//! Layout of one record:
//!
//! ```text
//! 5.6 5.6 5.6
//! 90 90 90
//! Na
//! 0.00 0.00 0.00
//! Cl
//! 0.50 0.50 0.50
//! ```
//!
//! Line 1 holds the lattice lengths (Å, one decimal), line 2 the angles
//! (degrees, integers), then each atom contributes a symbol line followed by
//! a line of three fractional coordinates with two decimals. Every line ends
//! with `\n`. Rounding is half-up at the stated precision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crystal::{self, Crystal, GeometryError, LatticeParams};
use crate::crystal::Composition;
use crate::elements;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextError {
    #[error("syntax error on line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown element {0:?}")]
    UnknownElement(String),
    #[error("degenerate lattice: {0}")]
    DegenerateLattice(GeometryError),
    #[error("structure has no atoms")]
    EmptyStructure,
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("malformed formula {0:?}")]
    BadFormula(String),
    #[error("space group {0} outside 1..=230")]
    BadSpaceGroup(u32),
}

/// Tolerance added before flooring so decimal ties survive binary rounding.
const TIE_EPS: f64 = 1e-9;

fn round_half_up(x: f64, decimals: i32) -> i64 {
    let s = 10f64.powi(decimals);
    (x * s + 0.5 + TIE_EPS).floor() as i64
}

fn fmt_fixed(x: f64, decimals: usize) -> String {
    let n = round_half_up(x, decimals as i32);
    if decimals == 0 {
        return n.to_string();
    }
    let s = 10i64.pow(decimals as u32);
    format!("{}.{:0width$}", n / s, n % s, width = decimals)
}

fn fmt_coord(x: f64) -> String {
    let n = round_half_up(crystal::wrap_scalar(x), 2);
    // 0.995 and above rounds to the periodic image 0.00
    let n = if n >= 100 { 0 } else { n };
    format!("0.{n:02}")
}

/// Renders a crystal in the fixed-precision dialect.
pub fn serialize(c: &Crystal) -> String {
    let p = c.params();
    let mut out = String::new();
    out.push_str(&format!(
        "{} {} {}\n",
        fmt_fixed(p.a, 1),
        fmt_fixed(p.b, 1),
        fmt_fixed(p.c, 1)
    ));
    out.push_str(&format!(
        "{} {} {}\n",
        fmt_fixed(p.alpha, 0),
        fmt_fixed(p.beta, 0),
        fmt_fixed(p.gamma, 0)
    ));
    for (z, x) in c.atom_types().iter().zip(c.frac_coords()) {
        out.push_str(elements::symbol(*z).expect("validated element"));
        out.push('\n');
        out.push_str(&format!(
            "{} {} {}\n",
            fmt_coord(x[0]),
            fmt_coord(x[1]),
            fmt_coord(x[2])
        ));
    }
    out
}

fn syntax(line: usize, message: impl Into<String>) -> TextError {
    TextError::Syntax {
        line,
        message: message.into(),
    }
}

fn parse_triple(line_no: usize, line: &str) -> Result<[f64; 3], TextError> {
    let fields: Vec<&str> = line.split(' ').collect();
    if fields.len() != 3 {
        return Err(syntax(
            line_no,
            format!("expected 3 space-separated numbers, found {}", fields.len()),
        ));
    }
    let mut out = [0.0; 3];
    for (slot, f) in out.iter_mut().zip(&fields) {
        if f.is_empty() || !f.chars().all(|ch| ch.is_ascii_digit() || ch == '.') {
            return Err(syntax(line_no, format!("bad number {f:?}")));
        }
        *slot = f
            .parse()
            .map_err(|_| syntax(line_no, format!("bad number {f:?}")))?;
    }
    Ok(out)
}

fn looks_like_symbol(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => chars.all(|c| c.is_ascii_alphabetic()),
        _ => false,
    }
}

/// Parses the fixed-precision dialect back into a validated crystal.
///
/// Trailing newlines are tolerated; coordinates are wrapped.
pub fn parse(text: &str) -> Result<Crystal, TextError> {
    let body = text.trim_end_matches('\n');
    let lines: Vec<&str> = if body.is_empty() {
        Vec::new()
    } else {
        body.split('\n').collect()
    };
    if lines.len() < 2 {
        return Err(syntax(lines.len() + 1, "missing lattice header"));
    }
    let lengths = parse_triple(1, lines[0])?;
    let angles = parse_triple(2, lines[1])?;
    let atom_lines = &lines[2..];
    if atom_lines.is_empty() {
        return Err(TextError::EmptyStructure);
    }
    if atom_lines.len() % 2 != 0 {
        return Err(syntax(lines.len(), "element line without coordinates"));
    }
    let mut types = Vec::with_capacity(atom_lines.len() / 2);
    let mut coords = Vec::with_capacity(atom_lines.len() / 2);
    for (k, pair) in atom_lines.chunks(2).enumerate() {
        let sym_line = 3 + 2 * k;
        let sym = pair[0];
        if !looks_like_symbol(sym) {
            return Err(syntax(sym_line, format!("expected element symbol, found {sym:?}")));
        }
        let z = elements::atomic_number(sym).ok_or_else(|| TextError::UnknownElement(sym.into()))?;
        types.push(z);
        coords.push(parse_triple(sym_line + 1, pair[1])?);
    }
    let params = LatticeParams::new(
        lengths[0], lengths[1], lengths[2], angles[0], angles[1], angles[2],
    );
    let lattice = crystal::lattice_from_params(&params).map_err(TextError::DegenerateLattice)?;
    Crystal::new(types, coords, lattice).map_err(|e| match e {
        GeometryError::EmptyStructure => TextError::EmptyStructure,
        other => TextError::DegenerateLattice(other),
    })
}

/// Parses a corpus of records separated by blank lines.
pub fn parse_corpus(text: &str) -> Vec<Result<Crystal, TextError>> {
    split_corpus(text).map(parse).collect()
}

/// Splits a corpus into record strings (each with a trailing newline).
pub fn split_corpus(text: &str) -> impl Iterator<Item = &str> {
    text.split("\n\n")
        .map(|r| r.trim_start_matches('\n'))
        .filter(|r| !r.trim().is_empty())
}

pub fn join_corpus<'a>(records: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for r in records {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(r);
        if !r.ends_with('\n') {
            out.push('\n');
        }
    }
    out
}

/// Token id; see [`Vocab`] for the layout.
pub type Token = u16;

/// Fixed vocabulary: `BOS`, `EOS`, newline, space, `.`, digits `0`–`9`,
/// then the element symbols in atomic-number order.
pub struct Vocab;

impl Vocab {
    pub const BOS: Token = 0;
    pub const EOS: Token = 1;
    pub const NEWLINE: Token = 2;
    pub const SPACE: Token = 3;
    pub const DOT: Token = 4;
    pub const DIGIT0: Token = 5;
    pub const FIRST_ELEMENT: Token = 15;

    pub const fn size() -> usize {
        Self::FIRST_ELEMENT as usize + elements::MAX_Z as usize
    }

    pub fn element(z: u8) -> Token {
        Self::FIRST_ELEMENT + z as Token - 1
    }

    /// Surface text of a token; `None` for BOS/EOS and out-of-range ids.
    pub fn text(tok: Token) -> Option<&'static str> {
        const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
        match tok {
            Self::NEWLINE => Some("\n"),
            Self::SPACE => Some(" "),
            Self::DOT => Some("."),
            t if (Self::DIGIT0..Self::DIGIT0 + 10).contains(&t) => {
                Some(DIGITS[(t - Self::DIGIT0) as usize])
            }
            t if (Self::FIRST_ELEMENT as usize..Self::size()).contains(&(t as usize)) => {
                elements::symbol((t - Self::FIRST_ELEMENT + 1) as u8)
            }
            _ => None,
        }
    }
}

/// Splits text into single-character tokens and whole element symbols,
/// framed by BOS and EOS.
pub fn tokenize(text: &str) -> Result<Vec<Token>, TextError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = vec![Vocab::BOS];
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let tok = match c {
            '\n' => Vocab::NEWLINE,
            ' ' => Vocab::SPACE,
            '.' => Vocab::DOT,
            '0'..='9' => Vocab::DIGIT0 + (c as u8 - b'0') as Token,
            'A'..='Z' => {
                let two: Option<String> = chars
                    .get(i + 1)
                    .filter(|n| n.is_ascii_lowercase())
                    .map(|n| [c, *n].iter().collect());
                if let Some(z) = two.as_deref().and_then(elements::atomic_number) {
                    i += 1;
                    Vocab::element(z)
                } else if let Some(z) = elements::atomic_number(&c.to_string()) {
                    Vocab::element(z)
                } else {
                    return Err(TextError::UnknownToken(two.unwrap_or_else(|| c.to_string())));
                }
            }
            other => return Err(TextError::UnknownToken(other.to_string())),
        };
        out.push(tok);
        i += 1;
    }
    out.push(Vocab::EOS);
    Ok(out)
}

/// Inverse of [`tokenize`]; BOS/EOS framing is dropped.
pub fn detokenize(tokens: &[Token]) -> Result<String, TextError> {
    let mut out = String::new();
    for &t in tokens {
        if t == Vocab::BOS || t == Vocab::EOS {
            continue;
        }
        out.push_str(Vocab::text(t).ok_or_else(|| TextError::UnknownToken(format!("#{t}")))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptKind {
    Unconditional,
    Composition(String),
    SpaceGroup(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub kind: PromptKind,
    pub text: String,
}

impl Prompt {
    /// Target composition for composition-conditioned prompts.
    pub fn target_composition(&self) -> Option<Composition> {
        match &self.kind {
            PromptKind::Composition(f) => Composition::parse_formula(f).ok(),
            _ => None,
        }
    }
}

const PROMPT_HEAD: &str = "Below is a description of a bulk material.";
const PROMPT_TAIL: &str = "Generate a description of the lengths and angles of the lattice vectors and then the element type and coordinates for each atom within the lattice:";

pub fn build_prompt(kind: PromptKind) -> Result<Prompt, TextError> {
    let clause = match &kind {
        PromptKind::Unconditional => None,
        PromptKind::Composition(f) => {
            Composition::parse_formula(f).map_err(|_| TextError::BadFormula(f.clone()))?;
            Some(format!("The chemical formula is {f}."))
        }
        PromptKind::SpaceGroup(n) => {
            if !(1..=230).contains(n) {
                return Err(TextError::BadSpaceGroup(*n));
            }
            Some(format!("The spacegroup number is {n}."))
        }
    };
    let text = match clause {
        Some(c) => format!("{PROMPT_HEAD} {c} {PROMPT_TAIL}"),
        None => format!("{PROMPT_HEAD} {PROMPT_TAIL}"),
    };
    Ok(Prompt { kind, text })
}
