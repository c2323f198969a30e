//! Dynamic values carried in tool parameters and tool outputs.
//!
//! Planner output is not always strict JSON: the transcripts the planner is
//! trained on mix JSON with Python-repr style maps (`{'boxes': [...]}`), so the
//! reader here accepts single- or double-quoted strings, `True`/`False`/`None`
//! and trailing commas. Number literals keep their source text so that golden
//! transcripts stay byte-stable through a parse/serialize cycle.

use std::fmt;

use indexmap::IndexMap;
use serde::de::{self, MapAccess, SeqAccess, Visitor};
use serde::ser::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;
use thiserror::Error;

/// Ordered string-keyed map used for tool params and outputs.
pub type ValueMap = IndexMap<String, Value>;

/// A JSON number kept exactly as it was written.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NumberLit(String);

impl NumberLit {
    /// Validates `text` against the JSON number grammar.
    pub fn parse(text: &str) -> Option<Self> {
        is_json_number(text).then(|| NumberLit(text.to_owned()))
    }

    /// Renders `value` with a fixed number of decimals.
    pub fn fixed(value: f64, decimals: usize) -> Self {
        let mut text = format!("{value:.decimals$}");
        if text.starts_with("-") && text[1..].chars().all(|c| c == '0' || c == '.') {
            text.remove(0);
        }
        NumberLit(text)
    }

    pub fn from_u64(value: u64) -> Self {
        NumberLit(value.to_string())
    }

    /// Shortest round-trip rendering of a finite float.
    pub fn from_f64(value: f64) -> Option<Self> {
        if !value.is_finite() {
            return None;
        }
        let mut text = format!("{value:?}");
        if text.contains('e') || text.contains('E') {
            text = format!("{value}");
        }
        NumberLit::parse(&text)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_f64(&self) -> f64 {
        // The grammar check guarantees Rust's float parser accepts the text.
        self.0.parse().unwrap_or(f64::NAN)
    }
}

impl fmt::Display for NumberLit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn is_json_number(text: &str) -> bool {
    let b = text.as_bytes();
    let mut i = 0;
    if b.get(i) == Some(&b'-') {
        i += 1;
    }
    match b.get(i) {
        Some(b'0') => i += 1,
        Some(c) if c.is_ascii_digit() => {
            while b.get(i).is_some_and(u8::is_ascii_digit) {
                i += 1;
            }
        }
        _ => return false,
    }
    if b.get(i) == Some(&b'.') {
        i += 1;
        let start = i;
        while b.get(i).is_some_and(u8::is_ascii_digit) {
            i += 1;
        }
        if i == start {
            return false;
        }
    }
    if matches!(b.get(i), Some(b'e' | b'E')) {
        i += 1;
        if matches!(b.get(i), Some(b'+' | b'-')) {
            i += 1;
        }
        let start = i;
        while b.get(i).is_some_and(u8::is_ascii_digit) {
            i += 1;
        }
        if i == start {
            return false;
        }
    }
    i == b.len()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Number(NumberLit),
    Text(String),
    List(Vec<Value>),
    Map(ValueMap),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    /// Number with a fixed decimal rendering.
    pub fn fixed(value: f64, decimals: usize) -> Self {
        Value::Number(NumberLit::fixed(value, decimals))
    }

    pub fn int(value: u64) -> Self {
        Value::Number(NumberLit::from_u64(value))
    }

    pub fn numbers(values: &[f64], decimals: usize) -> Self {
        Value::List(values.iter().map(|v| Value::fixed(*v, decimals)).collect())
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(n.as_f64()),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(items) => Some(items),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&ValueMap> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }

    /// Strict JSON rendering with `", "` / `": "` separators.
    pub fn to_json(&self) -> String {
        let mut out = String::new();
        write_value(&mut out, self, Style::Json);
        out
    }

    /// Python-repr style rendering (`{'key': 'text', 'flag': True}`).
    pub fn to_repr(&self) -> String {
        let mut out = String::new();
        write_value(&mut out, self, Style::Repr);
        out
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_owned())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl From<NumberLit> for Value {
    fn from(n: NumberLit) -> Self {
        Value::Number(n)
    }
}

/// Renders a map as strict JSON.
pub fn map_to_json(map: &ValueMap) -> String {
    let mut out = String::new();
    write_map(&mut out, map, Style::Json);
    out
}

/// Renders a map in Python-repr style.
pub fn map_to_repr(map: &ValueMap) -> String {
    let mut out = String::new();
    write_map(&mut out, map, Style::Repr);
    out
}

#[derive(Clone, Copy)]
enum Style {
    Json,
    Repr,
}

fn write_value(out: &mut String, value: &Value, style: Style) {
    match value {
        Value::Null => out.push_str(match style {
            Style::Json => "null",
            Style::Repr => "None",
        }),
        Value::Bool(b) => out.push_str(match (style, b) {
            (Style::Json, true) => "true",
            (Style::Json, false) => "false",
            (Style::Repr, true) => "True",
            (Style::Repr, false) => "False",
        }),
        Value::Number(n) => out.push_str(n.as_str()),
        Value::Text(s) => match style {
            Style::Json => write_json_string(out, s),
            Style::Repr => write_repr_string(out, s),
        },
        Value::List(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_value(out, item, style);
            }
            out.push(']');
        }
        Value::Map(map) => write_map(out, map, style),
    }
}

fn write_map(out: &mut String, map: &ValueMap, style: Style) {
    out.push('{');
    for (i, (key, item)) in map.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        match style {
            Style::Json => write_json_string(out, key),
            Style::Repr => write_repr_string(out, key),
        }
        out.push_str(": ");
        write_value(out, item, style);
    }
    out.push('}');
}

pub(crate) fn write_json_string(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '\u{08}' => out.push_str("\\b"),
            '\u{0c}' => out.push_str("\\f"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
}

fn write_repr_string(out: &mut String, s: &str) {
    let quote = if s.contains('\'') && !s.contains('"') {
        '"'
    } else {
        '\''
    };
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c if (c as u32) < 0x20 => out.push_str(&format!("\\x{:02x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push(quote);
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} at offset {offset}")]
pub struct ValueParseError {
    pub offset: usize,
    pub message: String,
}

/// Parses one value from the whole input (surrounding whitespace allowed).
pub fn parse_value(input: &str) -> Result<Value, ValueParseError> {
    let mut reader = Reader::new(input);
    let value = reader.value()?;
    reader.skip_ws();
    if reader.pos < input.len() {
        return Err(reader.error("trailing characters"));
    }
    Ok(value)
}

/// Parses one value from the start of `input` and returns it with the
/// number of bytes consumed.
pub fn parse_value_prefix(input: &str) -> Result<(Value, usize), ValueParseError> {
    let mut reader = Reader::new(input);
    let value = reader.value()?;
    Ok((value, reader.pos))
}

struct Reader<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(src: &'a str) -> Self {
        Reader { src, pos: 0 }
    }

    fn error(&self, message: &str) -> ValueParseError {
        ValueParseError {
            offset: self.pos,
            message: message.to_owned(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn value(&mut self) -> Result<Value, ValueParseError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some('{') => self.map(),
            Some('[') => self.list(),
            Some('"') | Some('\'') => Ok(Value::Text(self.string()?)),
            Some(c) if c == '-' || c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.word(),
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn word(&mut self) -> Result<Value, ValueParseError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            self.pos += 1;
        }
        match &self.src[start..self.pos] {
            "true" | "True" => Ok(Value::Bool(true)),
            "false" | "False" => Ok(Value::Bool(false)),
            "null" | "None" => Ok(Value::Null),
            _ => {
                self.pos = start;
                Err(self.error("unknown bare word"))
            }
        }
    }

    fn number(&mut self) -> Result<Value, ValueParseError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E'))
        {
            self.pos += 1;
        }
        let text = &self.src[start..self.pos];
        NumberLit::parse(text).map(Value::Number).ok_or_else(|| {
            self.pos = start;
            self.error("malformed number")
        })
    }

    fn string(&mut self) -> Result<String, ValueParseError> {
        let quote = self.bump().expect("caller checked quote");
        let mut out = String::new();
        loop {
            let Some(c) = self.bump() else {
                return Err(self.error("unterminated string"));
            };
            match c {
                c if c == quote => return Ok(out),
                '\\' => {
                    let Some(esc) = self.bump() else {
                        return Err(self.error("unterminated escape"));
                    };
                    match esc {
                        'n' => out.push('\n'),
                        't' => out.push('\t'),
                        'r' => out.push('\r'),
                        'b' => out.push('\u{08}'),
                        'f' => out.push('\u{0c}'),
                        '/' => out.push('/'),
                        '\\' => out.push('\\'),
                        '"' => out.push('"'),
                        '\'' => out.push('\''),
                        'x' => {
                            let code = self.hex(2)?;
                            out.push(
                                char::from_u32(code).ok_or_else(|| self.error("bad \\x escape"))?,
                            );
                        }
                        'u' => {
                            let high = self.hex(4)?;
                            let code = if (0xD800..0xDC00).contains(&high) {
                                if !self.src[self.pos..].starts_with("\\u") {
                                    return Err(self.error("unpaired surrogate"));
                                }
                                self.pos += 2;
                                let low = self.hex(4)?;
                                if !(0xDC00..0xE000).contains(&low) {
                                    return Err(self.error("unpaired surrogate"));
                                }
                                0x10000 + ((high - 0xD800) << 10) + (low - 0xDC00)
                            } else {
                                high
                            };
                            out.push(
                                char::from_u32(code).ok_or_else(|| self.error("bad \\u escape"))?,
                            );
                        }
                        _ => return Err(self.error("unknown escape")),
                    }
                }
                c => out.push(c),
            }
        }
    }

    fn hex(&mut self, digits: usize) -> Result<u32, ValueParseError> {
        let end = self.pos + digits;
        let text = self
            .src
            .get(self.pos..end)
            .ok_or_else(|| self.error("truncated escape"))?;
        let code = u32::from_str_radix(text, 16).map_err(|_| self.error("bad hex escape"))?;
        self.pos = end;
        Ok(code)
    }

    fn list(&mut self) -> Result<Value, ValueParseError> {
        self.bump();
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() == Some(']') {
                self.bump();
                return Ok(Value::List(items));
            }
            items.push(self.value()?);
            self.skip_ws();
            match self.bump() {
                Some(',') => continue,
                Some(']') => return Ok(Value::List(items)),
                _ => return Err(self.error("expected ',' or ']'")),
            }
        }
    }

    fn map(&mut self) -> Result<Value, ValueParseError> {
        self.bump();
        let mut map = ValueMap::new();
        loop {
            self.skip_ws();
            match self.peek() {
                Some('}') => {
                    self.bump();
                    return Ok(Value::Map(map));
                }
                Some('"') | Some('\'') => {}
                _ => return Err(self.error("expected quoted key")),
            }
            let key_at = self.pos;
            let key = self.string()?;
            self.skip_ws();
            if self.bump() != Some(':') {
                return Err(self.error("expected ':'"));
            }
            let item = self.value()?;
            if map.insert(key, item).is_some() {
                return Err(ValueParseError {
                    offset: key_at,
                    message: "duplicate key".into(),
                });
            }
            self.skip_ws();
            match self.bump() {
                Some(',') => continue,
                Some('}') => return Ok(Value::Map(map)),
                _ => return Err(self.error("expected ',' or '}'")),
            }
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Null => serializer.serialize_unit(),
            Value::Bool(b) => serializer.serialize_bool(*b),
            Value::Number(n) => RawValue::from_string(n.as_str().to_owned())
                .map_err(S::Error::custom)?
                .serialize(serializer),
            Value::Text(s) => serializer.serialize_str(s),
            Value::List(items) => items.serialize(serializer),
            Value::Map(map) => map.serialize(serializer),
        }
    }
}

// serde_json hands number literals to visitors as this one-entry map when
// its `arbitrary_precision` feature is on, which keeps them exact even
// through buffered (tagged or flattened) deserialization.
const NUMBER_TOKEN: &str = "$serde_json::private::Number";

struct ValueVisitor;

impl<'de> Visitor<'de> for ValueVisitor {
    type Value = Value;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a JSON value")
    }

    fn visit_bool<E: de::Error>(self, v: bool) -> Result<Value, E> {
        Ok(Value::Bool(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Value, E> {
        Ok(Value::Number(NumberLit(v.to_string())))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Value, E> {
        Ok(Value::Number(NumberLit::from_u64(v)))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Value, E> {
        NumberLit::from_f64(v)
            .map(Value::Number)
            .ok_or_else(|| E::custom("non-finite number"))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Value, E> {
        Ok(Value::Text(v.to_owned()))
    }

    fn visit_string<E: de::Error>(self, v: String) -> Result<Value, E> {
        Ok(Value::Text(v))
    }

    fn visit_unit<E: de::Error>(self) -> Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_none<E: de::Error>(self) -> Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_some<D: Deserializer<'de>>(self, d: D) -> Result<Value, D::Error> {
        Value::deserialize(d)
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Value, A::Error> {
        let mut items = Vec::new();
        while let Some(item) = seq.next_element()? {
            items.push(item);
        }
        Ok(Value::List(items))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Value, A::Error> {
        let mut map = ValueMap::new();
        while let Some(key) = access.next_key::<String>()? {
            if key == NUMBER_TOKEN && map.is_empty() {
                let literal: String = access.next_value()?;
                return NumberLit::parse(&literal)
                    .map(Value::Number)
                    .ok_or_else(|| de::Error::custom(format!("bad number `{literal}`")));
            }
            let value = access.next_value()?;
            if map.insert(key.clone(), value).is_some() {
                return Err(de::Error::custom(format!("duplicate key `{key}`")));
            }
        }
        Ok(Value::Map(map))
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(ValueVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repr_map_parses_like_json() {
        let repr = "{'boxes': [[0.35, 0.37, 0.66, 0.97], [0.0, 0.57, 0.69, 1.0]], 'logits': [0.58, 0.41], 'phrases': ['little girl', 'cart']}";
        let value = parse_value(repr).unwrap();
        assert_eq!(value.to_repr(), repr);
        let json = value.to_json();
        assert_eq!(parse_value(&json).unwrap(), value);
        assert!(json.starts_with("{\"boxes\": [[0.35, 0.37"));
    }

    #[test]
    fn number_literals_survive_round_trip() {
        let v = parse_value("[1.0, 0.350, -0, 1e5, 2E-3]").unwrap();
        assert_eq!(v.to_json(), "[1.0, 0.350, -0, 1e5, 2E-3]");
    }

    #[test]
    fn rejects_bad_numbers_and_words() {
        assert!(parse_value("01").is_err());
        assert!(parse_value("1.").is_err());
        assert!(parse_value("nan").is_err());
        assert!(parse_value("[1, 2").is_err());
        assert!(parse_value("{'a': 1, 'a': 2}").is_err());
    }

    #[test]
    fn escapes_and_surrogates() {
        let v = parse_value(r#""a\"b\\c\n😀""#).unwrap();
        assert_eq!(v, Value::text("a\"b\\c\n😀"));
        assert_eq!(parse_value(&v.to_json()).unwrap(), v);
        assert_eq!(parse_value(&v.to_repr()).unwrap(), v);
    }

    #[test]
    fn serde_round_trip_keeps_literals() {
        let v = parse_value(r#"{"k": [0.10, 3], "t": "x", "n": null}"#).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"{"k":[0.10,3],"t":"x","n":null}"#);
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn fixed_rendering() {
        assert_eq!(NumberLit::fixed(0.0, 2).as_str(), "0.00");
        assert_eq!(NumberLit::fixed(-0.001, 2).as_str(), "0.00");
        assert_eq!(NumberLit::fixed(0.449999, 2).as_str(), "0.45");
        assert_eq!(NumberLit::from_f64(1.0).unwrap().as_str(), "1.0");
    }
}
