use super::SqlError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Word(String),
    QuotedIdent(String),
    Str(String),
    Number(String),
    Sym(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub offset: usize,
}

impl Token {
    pub fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.tok, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    pub fn is_sym(&self, s: &str) -> bool {
        matches!(self.tok, Tok::Sym(x) if x == s)
    }
}

const SYMBOLS: [&str; 19] = [
    "<=", ">=", "<>", "!=", "==", "||", "(", ")", ",", "*", ";", ".", "=", "<", ">", "+", "-", "/",
    "%",
];

pub(crate) fn lex(src: &str) -> Result<Vec<Token>, SqlError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if src[i..].starts_with("--") {
            i = src[i..].find('\n').map_or(bytes.len(), |n| i + n);
            continue;
        }
        let start = i;
        let tok = match b {
            b'\'' => {
                let (s, end) = quoted(src, i, '\'')?;
                i = end;
                Tok::Str(s)
            }
            b'"' | b'`' => {
                let (s, end) = quoted(src, i, b as char)?;
                i = end;
                Tok::QuotedIdent(s)
            }
            b'[' => {
                let close = src[i..].find(']').ok_or_else(|| SqlError::syntax(i, "unterminated [identifier]"))?;
                let s = src[i + 1..i + close].to_owned();
                i += close + 1;
                Tok::QuotedIdent(s)
            }
            b'0'..=b'9' => {
                i = number_end(bytes, i);
                Tok::Number(src[start..i].to_owned())
            }
            b'.' if bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => {
                i = number_end(bytes, i);
                Tok::Number(src[start..i].to_owned())
            }
            _ if b.is_ascii_alphabetic() || b == b'_' || b >= 0x80 => {
                let end = src[i..]
                    .char_indices()
                    .find(|&(_, c)| !(c.is_alphanumeric() || c == '_' || c == '$'))
                    .map_or(src.len(), |(o, _)| i + o);
                let w = src[i..end].to_owned();
                i = end;
                Tok::Word(w)
            }
            _ => {
                let sym = SYMBOLS
                    .iter()
                    .find(|s| src[i..].starts_with(**s))
                    .ok_or_else(|| SqlError::syntax(i, format!("unexpected character {:?}", src[i..].chars().next().unwrap())))?;
                i += sym.len();
                Tok::Sym(sym)
            }
        };
        out.push(Token { tok, offset: start });
    }
    Ok(out)
}

fn quoted(src: &str, start: usize, q: char) -> Result<(String, usize), SqlError> {
    let mut s = String::new();
    let mut it = src[start + 1..].char_indices().peekable();
    while let Some((o, c)) = it.next() {
        if c == q {
            if it.peek().is_some_and(|&(_, n)| n == q) {
                s.push(q);
                it.next();
            } else {
                return Ok((s, start + 1 + o + 1));
            }
        } else {
            s.push(c);
        }
    }
    Err(SqlError::syntax(start, "unterminated quoted string"))
}

fn number_end(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        if j < bytes.len() && bytes[j].is_ascii_digit() {
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            i = j;
        }
    }
    i
}
