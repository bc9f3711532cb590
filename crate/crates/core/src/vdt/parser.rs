//! Restricted parser for the mapping literal an LLM returns.
//!
//! Model output is untrusted and never evaluated. The grammar accepted is
//!
//! ```text
//! map    := '{' (entry (',' entry)* ','?)? '}'
//! entry  := string ':' (list | string)
//! list   := '[' (string (',' string)* ','?)? ']'
//! string := ('"' ... '"' | '\'' ... '\'')+      adjacent literals concatenate
//! ```
//!
//! Only the first balanced brace block of the response is read, so prose
//! before or after it is ignored.

use indexmap::IndexMap;

use crate::error::ParseError;

pub type VdtMapping = IndexMap<String, Vec<String>>;

/// Byte range of the first balanced `{...}` block, skipping braces inside strings.
fn first_brace_block(text: &str) -> Result<(usize, usize), ParseError> {
    let bytes = text.as_bytes();
    let start = text.find('{').ok_or(ParseError::NoBraceBlock)?;
    let mut depth = 0usize;
    let mut quote: Option<u8> = None;
    let mut i = start;
    while i < bytes.len() {
        let b = bytes[i];
        match quote {
            Some(q) => {
                if b == b'\\' {
                    i += 1;
                } else if b == q {
                    quote = None;
                }
            }
            None => match b {
                b'"' | b'\'' => quote = Some(b),
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Ok((start, i + 1));
                    }
                }
                _ => {}
            },
        }
        i += 1;
    }
    Err(ParseError::UnbalancedBraces { start })
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    base: usize,
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, reason: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Malformed {
            offset: self.base + self.pos,
            reason: reason.into(),
        })
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
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

    fn eat(&mut self, want: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(want) {
            self.pos += want.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, want: char) -> Result<(), ParseError> {
        if self.eat(want) {
            Ok(())
        } else {
            self.err(format!("expected {want:?}"))
        }
    }

    fn at_string(&mut self) -> bool {
        self.skip_ws();
        matches!(self.peek(), Some('"') | Some('\''))
    }

    fn single_string(&mut self) -> Result<String, ParseError> {
        let quote = self.peek().expect("caller checked");
        self.pos += 1;
        let mut out = String::new();
        loop {
            let Some(c) = self.peek() else {
                return self.err("unterminated string");
            };
            self.pos += c.len_utf8();
            if c == quote {
                return Ok(out);
            }
            if c != '\\' {
                out.push(c);
                continue;
            }
            let Some(esc) = self.peek() else {
                return self.err("dangling escape");
            };
            self.pos += esc.len_utf8();
            match esc {
                'n' => out.push('\n'),
                't' => out.push('\t'),
                'r' => out.push('\r'),
                '0' => out.push('\0'),
                'u' => {
                    let hex = self.src.get(self.pos..self.pos + 4).unwrap_or("");
                    match u32::from_str_radix(hex, 16).ok().and_then(char::from_u32) {
                        Some(ch) if hex.len() == 4 => {
                            out.push(ch);
                            self.pos += 4;
                        }
                        _ => return self.err("bad \\u escape"),
                    }
                }
                '\n' => {}
                other => out.push(other),
            }
        }
    }

    /// One or more adjacent string literals.
    fn string(&mut self) -> Result<String, ParseError> {
        if !self.at_string() {
            return self.err("expected a string");
        }
        let mut out = self.single_string()?;
        while self.at_string() {
            out.push_str(&self.single_string()?);
        }
        Ok(out)
    }

    /// A list of strings, or a bare string read as a one-element list.
    fn string_list(&mut self, key: &str) -> Result<Vec<String>, ParseError> {
        let non_string = || ParseError::NonStringValue {
            key: key.to_string(),
        };
        if self.at_string() {
            return Ok(vec![self.string()?]);
        }
        if !self.eat('[') {
            return Err(non_string());
        }
        let mut items = Vec::new();
        loop {
            if self.eat(']') {
                return Ok(items);
            }
            if !self.at_string() {
                return match self.peek() {
                    None => self.err("unterminated list"),
                    Some(_) => Err(non_string()),
                };
            }
            items.push(self.string()?);
            if !self.eat(',') {
                self.expect(']')?;
                return Ok(items);
            }
        }
    }
}

/// Parses the first mapping literal in `text` into class name -> sentences.
///
/// Keys and sentences are trimmed; empty sentences are kept so the caller
/// can decide how to treat them.
pub fn parse_vdt_response(text: &str) -> Result<VdtMapping, ParseError> {
    let (start, end) = first_brace_block(text)?;
    let mut cur = Cursor {
        src: &text[start..end],
        pos: 0,
        base: start,
    };
    cur.expect('{')?;
    let mut map = VdtMapping::new();
    loop {
        if cur.eat('}') {
            break;
        }
        let key = cur.string()?.trim().to_string();
        cur.expect(':')?;
        let values = cur.string_list(&key)?;
        map.insert(key, values.into_iter().map(|s| s.trim().to_string()).collect());
        if !cur.eat(',') {
            cur.expect('}')?;
            break;
        }
    }
    Ok(map)
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            '\0' => out.push_str("\\0"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Renders a mapping in the literal syntax [`parse_vdt_response`] reads.
pub fn serialize_vdt_mapping(map: &VdtMapping) -> String {
    let mut out = String::from("{\n");
    let n = map.len();
    for (i, (k, v)) in map.iter().enumerate() {
        out.push_str(&format!("  {}: [\n", quote(k)));
        for (j, s) in v.iter().enumerate() {
            out.push_str("    ");
            out.push_str(&quote(s));
            if j + 1 < v.len() {
                out.push(',');
            }
            out.push('\n');
        }
        out.push_str("  ]");
        if i + 1 < n {
            out.push(',');
        }
        out.push('\n');
    }
    out.push('}');
    out
}
