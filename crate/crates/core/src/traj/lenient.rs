//! Dictionary-literal fallback reader for tool payloads.
//!
//! The code-interpreter tool card accepts "a standard JSON object or a Python
//! dictionary literal", and models routinely emit the latter. This reader
//! accepts single- or double-quoted strings, trailing commas, and the Python
//! constants `True`/`False`/`None`, and normalizes everything into a
//! `serde_json::Value` (which keeps keys in canonical lexicographic order).

use serde_json::{Map, Number, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{msg} at offset {offset}")]
pub struct LenientError {
    pub msg: String,
    pub offset: usize,
}

struct Reader<'a> {
    chars: Vec<char>,
    pos: usize,
    _src: &'a str,
}

pub fn parse_value(input: &str) -> Result<Value, LenientError> {
    let mut r = Reader { chars: input.chars().collect(), pos: 0, _src: input };
    r.skip_ws();
    let v = r.value()?;
    r.skip_ws();
    if r.pos != r.chars.len() {
        return Err(r.err("trailing characters after value"));
    }
    Ok(v)
}

impl<'a> Reader<'a> {
    fn err(&self, msg: &str) -> LenientError {
        LenientError { msg: msg.to_string(), offset: self.pos }
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

    fn expect(&mut self, c: char) -> Result<(), LenientError> {
        if self.bump() == Some(c) {
            Ok(())
        } else {
            self.pos = self.pos.saturating_sub(1);
            Err(self.err(&format!("expected '{c}'")))
        }
    }

    fn value(&mut self) -> Result<Value, LenientError> {
        match self.peek() {
            Some('{') => self.object(),
            Some('[') => self.array(),
            Some('"') | Some('\'') => Ok(Value::String(self.string()?)),
            Some(c) if c == '-' || c == '+' || c.is_ascii_digit() => self.number(),
            Some(c) if c.is_alphabetic() => self.ident(),
            Some(_) => Err(self.err("unexpected character")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn object(&mut self) -> Result<Value, LenientError> {
        self.expect('{')?;
        let mut map = Map::new();
        loop {
            self.skip_ws();
            if self.peek() == Some('}') {
                self.bump();
                return Ok(Value::Object(map));
            }
            let key = match self.peek() {
                Some('"') | Some('\'') => self.string()?,
                _ => return Err(self.err("object key must be a quoted string")),
            };
            self.skip_ws();
            self.expect(':')?;
            self.skip_ws();
            let val = self.value()?;
            map.insert(key, val);
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some('}') => {}
                _ => return Err(self.err("expected ',' or '}'")),
            }
        }
    }

    fn array(&mut self) -> Result<Value, LenientError> {
        self.expect('[')?;
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() == Some(']') {
                self.bump();
                return Ok(Value::Array(items));
            }
            items.push(self.value()?);
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some(']') => {}
                _ => return Err(self.err("expected ',' or ']'")),
            }
        }
    }

    fn string(&mut self) -> Result<String, LenientError> {
        let quote = self.bump().expect("caller checked quote");
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(self.err("unterminated string")),
                Some(c) if c == quote => return Ok(out),
                Some('\\') => match self.bump() {
                    None => return Err(self.err("unterminated escape")),
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('r') => out.push('\r'),
                    Some('b') => out.push('\u{0008}'),
                    Some('f') => out.push('\u{000C}'),
                    Some('u') => {
                        let mut code = 0u32;
                        for _ in 0..4 {
                            let d = self
                                .bump()
                                .and_then(|c| c.to_digit(16))
                                .ok_or_else(|| self.err("bad \\u escape"))?;
                            code = code * 16 + d;
                        }
                        out.push(
                            char::from_u32(code).ok_or_else(|| self.err("bad \\u codepoint"))?,
                        );
                    }
                    // Unknown escapes pass the character through.
                    Some(other) => out.push(other),
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn number(&mut self) -> Result<Value, LenientError> {
        let start = self.pos;
        if matches!(self.peek(), Some('-') | Some('+')) {
            self.bump();
        }
        let mut is_float = false;
        while let Some(c) = self.peek() {
            match c {
                '0'..='9' => {
                    self.bump();
                }
                '.' | 'e' | 'E' => {
                    is_float = true;
                    self.bump();
                    if matches!(self.peek(), Some('-') | Some('+')) {
                        self.bump();
                    }
                }
                _ => break,
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        let text = text.strip_prefix('+').unwrap_or(&text).to_string();
        if !is_float {
            if let Ok(i) = text.parse::<i64>() {
                return Ok(Value::Number(Number::from(i)));
            }
        }
        let f: f64 = text
            .parse()
            .map_err(|_| LenientError { msg: "bad number".into(), offset: start })?;
        Number::from_f64(f)
            .map(Value::Number)
            .ok_or_else(|| LenientError { msg: "non-finite number".into(), offset: start })
    }

    fn ident(&mut self) -> Result<Value, LenientError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_alphanumeric() || c == '_') {
            self.bump();
        }
        let word: String = self.chars[start..self.pos].iter().collect();
        match word.as_str() {
            "true" | "True" => Ok(Value::Bool(true)),
            "false" | "False" => Ok(Value::Bool(false)),
            "null" | "None" => Ok(Value::Null),
            _ => Err(LenientError { msg: format!("unknown identifier '{word}'"), offset: start }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn python_literal_dict() {
        let v = parse_value("{'a': 1, 'b': [True, None, 'x'],}").unwrap();
        assert_eq!(v["a"], 1);
        assert_eq!(v["b"][0], true);
        assert_eq!(v["b"][1], Value::Null);
        assert_eq!(v["b"][2], "x");
    }

    #[test]
    fn strict_json_still_parses() {
        let v = parse_value(r#"{"q": "é", "n": -2.5e3}"#).unwrap();
        assert_eq!(v["q"], "é");
        assert_eq!(v["n"], -2500.0);
    }

    #[test]
    fn escaped_quote_inside_single_quoted() {
        let v = parse_value(r"{'s': 'it\'s'}").unwrap();
        assert_eq!(v["s"], "it's");
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_value("{'a': }").is_err());
        assert!(parse_value("{'a': 1} extra").is_err());
        assert!(parse_value("{a: 1}").is_err());
        assert!(parse_value("").is_err());
    }

    #[test]
    fn integer_stays_integer() {
        let v = parse_value("{'n': 42}").unwrap();
        assert!(v["n"].is_i64());
    }
}
