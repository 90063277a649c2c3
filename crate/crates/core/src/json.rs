//! Tolerant JSON reader for model output and hand-edited configs.
//!
//! Accepts standard JSON plus `//` line comments, `/* */` block comments,
//! trailing commas in arrays and objects, and single-quoted strings. Number
//! and string lexemes are handed to `serde_json`, so any document that is
//! valid strict JSON yields exactly the value `serde_json` would produce.

use serde_json::{Map, Value};
use thiserror::Error;

const MAX_DEPTH: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} at line {line} column {column} (offset {offset})")]
pub struct JsonError {
    pub message: String,
    pub offset: usize,
    pub line: usize,
    pub column: usize,
}

pub fn parse_lenient_json(text: &str) -> Result<Value, JsonError> {
    let mut p = Parser {
        src: text,
        bytes: text.as_bytes(),
        pos: 0,
        depth: 0,
    };
    if text.starts_with('\u{feff}') {
        p.pos = '\u{feff}'.len_utf8();
    }
    p.skip_trivia()?;
    if p.pos >= p.bytes.len() {
        return Err(p.error("expected a JSON value, found end of input"));
    }
    let value = p.value()?;
    p.skip_trivia()?;
    if p.pos < p.bytes.len() {
        return Err(p.error("trailing characters after JSON value"));
    }
    Ok(value)
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    depth: usize,
}

impl<'a> Parser<'a> {
    fn error_at(&self, offset: usize, message: impl Into<String>) -> JsonError {
        let before = &self.src[..offset.min(self.src.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        JsonError {
            message: message.into(),
            offset,
            line,
            column,
        }
    }

    fn error(&self, message: impl Into<String>) -> JsonError {
        self.error_at(self.pos, message)
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_trivia(&mut self) -> Result<(), JsonError> {
        loop {
            match self.peek() {
                Some(b' ' | b'\t' | b'\n' | b'\r') => self.pos += 1,
                Some(b'/') => match self.bytes.get(self.pos + 1) {
                    Some(b'/') => {
                        self.pos += 2;
                        while let Some(b) = self.peek() {
                            if b == b'\n' {
                                break;
                            }
                            self.pos += 1;
                        }
                    }
                    Some(b'*') => {
                        let start = self.pos;
                        match self.src[self.pos + 2..].find("*/") {
                            Some(end) => self.pos += 2 + end + 2,
                            None => {
                                return Err(self.error_at(start, "unterminated block comment"))
                            }
                        }
                    }
                    _ => return Err(self.error("unexpected `/`")),
                },
                _ => return Ok(()),
            }
        }
    }

    fn value(&mut self) -> Result<Value, JsonError> {
        match self.peek() {
            Some(b'{') => self.nested(Self::object),
            Some(b'[') => self.nested(Self::array),
            Some(b'"') => self.double_quoted().map(Value::String),
            Some(b'\'') => self.single_quoted().map(Value::String),
            Some(b'-' | b'0'..=b'9') => self.number(),
            Some(b't') => self.literal("true", Value::Bool(true)),
            Some(b'f') => self.literal("false", Value::Bool(false)),
            Some(b'n') => self.literal("null", Value::Null),
            Some(_) => Err(self.error("expected a JSON value")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn nested(
        &mut self,
        inner: fn(&mut Self) -> Result<Value, JsonError>,
    ) -> Result<Value, JsonError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.error("recursion limit exceeded"));
        }
        let v = inner(self);
        self.depth -= 1;
        v
    }

    fn literal(&mut self, word: &str, value: Value) -> Result<Value, JsonError> {
        if self.src[self.pos..].starts_with(word) {
            self.pos += word.len();
            Ok(value)
        } else {
            Err(self.error("invalid literal"))
        }
    }

    fn object(&mut self) -> Result<Value, JsonError> {
        self.pos += 1;
        let mut map = Map::new();
        self.skip_trivia()?;
        if self.peek() == Some(b'}') {
            self.pos += 1;
            return Ok(Value::Object(map));
        }
        loop {
            self.skip_trivia()?;
            let key = match self.peek() {
                Some(b'"') => self.double_quoted()?,
                Some(b'\'') => self.single_quoted()?,
                _ => return Err(self.error("expected object key")),
            };
            self.skip_trivia()?;
            if self.peek() != Some(b':') {
                return Err(self.error("expected `:` after object key"));
            }
            self.pos += 1;
            self.skip_trivia()?;
            let value = self.value()?;
            map.insert(key, value);
            self.skip_trivia()?;
            match self.peek() {
                Some(b',') => {
                    self.pos += 1;
                    self.skip_trivia()?;
                    if self.peek() == Some(b'}') {
                        self.pos += 1;
                        return Ok(Value::Object(map));
                    }
                }
                Some(b'}') => {
                    self.pos += 1;
                    return Ok(Value::Object(map));
                }
                Some(_) => return Err(self.error("expected `,` or `}` in object")),
                None => return Err(self.error("unterminated object")),
            }
        }
    }

    fn array(&mut self) -> Result<Value, JsonError> {
        self.pos += 1;
        let mut items = Vec::new();
        self.skip_trivia()?;
        if self.peek() == Some(b']') {
            self.pos += 1;
            return Ok(Value::Array(items));
        }
        loop {
            self.skip_trivia()?;
            items.push(self.value()?);
            self.skip_trivia()?;
            match self.peek() {
                Some(b',') => {
                    self.pos += 1;
                    self.skip_trivia()?;
                    if self.peek() == Some(b']') {
                        self.pos += 1;
                        return Ok(Value::Array(items));
                    }
                }
                Some(b']') => {
                    self.pos += 1;
                    return Ok(Value::Array(items));
                }
                Some(_) => return Err(self.error("expected `,` or `]` in array")),
                None => return Err(self.error("unterminated array")),
            }
        }
    }

    /// Finds the closing quote, honouring backslash escapes. Returns the
    /// offset of the closing quote.
    fn scan_string(&self, quote: u8) -> Result<usize, JsonError> {
        let mut i = self.pos + 1;
        while i < self.bytes.len() {
            match self.bytes[i] {
                b'\\' => i += 2,
                b if b == quote => return Ok(i),
                _ => i += 1,
            }
        }
        Err(self.error("unterminated string"))
    }

    fn double_quoted(&mut self) -> Result<String, JsonError> {
        let start = self.pos;
        let end = self.scan_string(b'"')?;
        let lexeme = &self.src[start..=end];
        let s = serde_json::from_str::<String>(lexeme)
            .map_err(|e| self.error_at(start, format!("invalid string: {e}")))?;
        self.pos = end + 1;
        Ok(s)
    }

    fn single_quoted(&mut self) -> Result<String, JsonError> {
        let start = self.pos;
        let end = self.scan_string(b'\'')?;
        let body = &self.src[start + 1..end];
        let mut converted = String::with_capacity(body.len() + 2);
        converted.push('"');
        let mut chars = body.chars();
        while let Some(c) = chars.next() {
            match c {
                '\\' => match chars.next() {
                    Some('\'') => converted.push('\''),
                    Some(other) => {
                        converted.push('\\');
                        converted.push(other);
                    }
                    None => converted.push('\\'),
                },
                '"' => converted.push_str("\\\""),
                other => converted.push(other),
            }
        }
        converted.push('"');
        let s = serde_json::from_str::<String>(&converted)
            .map_err(|e| self.error_at(start, format!("invalid string: {e}")))?;
        self.pos = end + 1;
        Ok(s)
    }

    fn number(&mut self) -> Result<Value, JsonError> {
        let start = self.pos;
        let mut i = self.pos;
        let digits = |i: &mut usize, bytes: &[u8]| {
            let from = *i;
            while *i < bytes.len() && bytes[*i].is_ascii_digit() {
                *i += 1;
            }
            *i - from
        };
        if self.bytes[i] == b'-' {
            i += 1;
        }
        match self.bytes.get(i) {
            Some(b'0') => i += 1,
            Some(b'1'..=b'9') => {
                digits(&mut i, self.bytes);
            }
            _ => return Err(self.error_at(i, "invalid number")),
        }
        if self.bytes.get(i) == Some(&b'.') {
            i += 1;
            if digits(&mut i, self.bytes) == 0 {
                return Err(self.error_at(i, "expected digits after decimal point"));
            }
        }
        if matches!(self.bytes.get(i), Some(b'e' | b'E')) {
            i += 1;
            if matches!(self.bytes.get(i), Some(b'+' | b'-')) {
                i += 1;
            }
            if digits(&mut i, self.bytes) == 0 {
                return Err(self.error_at(i, "expected exponent digits"));
            }
        }
        let lexeme = &self.src[start..i];
        let v = serde_json::from_str::<Value>(lexeme)
            .map_err(|e| self.error_at(start, format!("invalid number: {e}")))?;
        self.pos = i;
        Ok(v)
    }
}
