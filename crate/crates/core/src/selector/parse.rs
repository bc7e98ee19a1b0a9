use super::SelectorExpr;
use crate::store::{TensorKind, ZoneComponent};
use std::fmt;

/// Parse failure with the byte offset where the parser stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub offset: usize,
    pub expected: Vec<&'static str>,
    pub found: Option<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at byte {}: expected {}", self.offset, self.expected.join(" | "))?;
        match &self.found {
            Some(t) => write!(f, ", found `{t}`"),
            None => write!(f, ", found end of input"),
        }
    }
}

impl std::error::Error for ParseError {}

const ATOM_START: &[&str] = &["kind:", "name:", "zone:", "layer:", "all", "none", "not", "("];
const KIND_IDENTS: &[&str] = &["weight", "bias", "ln_gain", "ln_bias", "embedding", "other"];
const ZONE_IDENTS: &[&str] = &["encoder", "decoder", "head", "none"];

pub fn parse_selector(text: &str) -> Result<SelectorExpr, ParseError> {
    let mut p = Parser { src: text, pos: 0 };
    let expr = p.expr()?;
    p.skip_ws();
    if p.pos < text.len() {
        return Err(p.error(&["and", "or", "end of input"]));
    }
    Ok(expr)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn is_glob_byte(b: u8) -> bool {
    is_word_byte(b) || matches!(b, b'.' | b'*' | b'?')
}

impl<'a> Parser<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn error(&self, expected: &[&'static str]) -> ParseError {
        let found = self.rest().split_whitespace().next().map(|s| s.chars().take(16).collect());
        ParseError { offset: self.pos, expected: expected.to_vec(), found }
    }

    /// Run of bytes satisfying `pred` at the cursor, not consumed.
    fn peek_run(&self, pred: fn(u8) -> bool) -> &'a str {
        let rest = self.rest();
        let len = rest.bytes().take_while(|&b| pred(b)).count();
        &rest[..len]
    }

    fn peek_keyword(&mut self, kw: &str) -> bool {
        self.skip_ws();
        let word = self.peek_run(is_word_byte);
        word.eq_ignore_ascii_case(kw) && !self.rest()[word.len()..].starts_with(':')
    }

    fn expr(&mut self) -> Result<SelectorExpr, ParseError> {
        let mut lhs = self.term()?;
        while self.peek_keyword("or") {
            self.pos += 2;
            let rhs = self.term()?;
            lhs = SelectorExpr::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<SelectorExpr, ParseError> {
        let mut lhs = self.factor()?;
        while self.peek_keyword("and") {
            self.pos += 3;
            let rhs = self.factor()?;
            lhs = SelectorExpr::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<SelectorExpr, ParseError> {
        self.skip_ws();
        if self.rest().starts_with('(') {
            self.pos += 1;
            let inner = self.expr()?;
            self.skip_ws();
            if !self.rest().starts_with(')') {
                return Err(self.error(&[")", "and", "or"]));
            }
            self.pos += 1;
            return Ok(inner);
        }
        let word = self.peek_run(is_word_byte);
        let lower = word.to_ascii_lowercase();
        let has_colon = self.rest()[word.len()..].starts_with(':');
        if !has_colon {
            match lower.as_str() {
                "not" => {
                    self.pos += word.len();
                    return Ok(SelectorExpr::negate(self.factor()?));
                }
                "all" => {
                    self.pos += word.len();
                    return Ok(SelectorExpr::All);
                }
                "none" => {
                    self.pos += word.len();
                    return Ok(SelectorExpr::None);
                }
                _ => return Err(self.error(ATOM_START)),
            }
        }
        let start = self.pos;
        self.pos += word.len() + 1;
        self.skip_ws();
        match lower.as_str() {
            "kind" => {
                let ident = self.peek_run(is_word_byte);
                let kind = match ident.to_ascii_lowercase().as_str() {
                    "weight" | "weights" => TensorKind::Weight,
                    "bias" => TensorKind::Bias,
                    "ln_gain" | "layernorm_gain" | "layer_norm_gain" => TensorKind::LayerNormGain,
                    "ln_bias" | "layernorm_bias" | "layer_norm_bias" => TensorKind::LayerNormBias,
                    "embedding" => TensorKind::Embedding,
                    "other" => TensorKind::Other,
                    _ => return Err(self.error(KIND_IDENTS)),
                };
                self.pos += ident.len();
                Ok(SelectorExpr::KindIs(kind))
            }
            "zone" => {
                let ident = self.peek_run(is_word_byte);
                let zone = match ident.to_ascii_lowercase().as_str() {
                    "encoder" | "enc" => ZoneComponent::Encoder,
                    "decoder" | "dec" => ZoneComponent::Decoder,
                    "head" => ZoneComponent::Head,
                    "none" => ZoneComponent::None,
                    _ => return Err(self.error(ZONE_IDENTS)),
                };
                self.pos += ident.len();
                Ok(SelectorExpr::ZoneIs(zone))
            }
            "name" => {
                let glob = self.peek_run(is_glob_byte);
                if glob.is_empty() {
                    return Err(self.error(&["glob pattern"]));
                }
                self.pos += glob.len();
                Ok(SelectorExpr::NameGlob(glob.to_owned()))
            }
            "layer" => {
                let lo = self.integer()?;
                if !self.rest().starts_with("..") {
                    return Err(self.error(&[".."]));
                }
                self.pos += 2;
                let hi_at = self.pos;
                let hi = self.integer()?;
                if lo >= hi {
                    self.pos = hi_at;
                    return Err(self.error(&["upper bound greater than lower bound"]));
                }
                Ok(SelectorExpr::LayerIn(lo, hi))
            }
            _ => {
                self.pos = start;
                Err(self.error(ATOM_START))
            }
        }
    }

    fn integer(&mut self) -> Result<u32, ParseError> {
        let digits = self.peek_run(|b| b.is_ascii_digit());
        match digits.parse::<u32>() {
            Ok(v) => {
                self.pos += digits.len();
                Ok(v)
            }
            Err(_) => Err(self.error(&["integer"])),
        }
    }
}
