use super::{Diagnostic, DiagnosticCode, Pos};

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Int(i64),
    Real(f64),
    Str(String),
    LBracket,
    RBracket,
    LParen,
    RParen,
    Semi,
    Colon,
    Comma,
    Arrow,
    Plus,
    Minus,
    Star,
    Slash,
    Eq,
    Neq,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
    Not,
    Prime,
    DotDot,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(i) => format!("`{i}`"),
            Tok::Real(r) => format!("`{r}`"),
            Tok::Str(s) => format!("\"{s}\""),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{}`", other.symbol()),
        }
    }

    fn symbol(&self) -> &'static str {
        match self {
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::Semi => ";",
            Tok::Colon => ":",
            Tok::Comma => ",",
            Tok::Arrow => "->",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Eq => "=",
            Tok::Neq => "!=",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            Tok::And => "&",
            Tok::Or => "|",
            Tok::Not => "!",
            Tok::Prime => "'",
            Tok::DotDot => "..",
            _ => "?",
        }
    }
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<(Tok, Pos)>, Diagnostic> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < bytes.len() {
        let c = bytes[i];
        let pos = Pos { line, col };
        if c == b'\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            col += i - start;
            out.push((Tok::Ident(src[start..i].to_string()), pos));
            continue;
        }
        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let start = i;
            let mut real = false;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            // `..` is a range separator, not a decimal point
            if i < bytes.len() && bytes[i] == b'.' && bytes.get(i + 1) != Some(&b'.') {
                real = true;
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
                    real = true;
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            col += i - start;
            let tok = if real {
                text.parse::<f64>().map(Tok::Real).ok()
            } else {
                text.parse::<i64>().map(Tok::Int).ok()
            };
            match tok {
                Some(t) => out.push((t, pos)),
                None => {
                    return Err(Diagnostic::error(
                        DiagnosticCode::Syntax,
                        pos,
                        format!("malformed number `{text}`"),
                    ))
                }
            }
            continue;
        }
        if c == b'"' {
            let start = i + 1;
            i += 1;
            while i < bytes.len() && bytes[i] != b'"' && bytes[i] != b'\n' {
                i += 1;
            }
            if i >= bytes.len() || bytes[i] != b'"' {
                return Err(Diagnostic::error(DiagnosticCode::Syntax, pos, "unterminated string"));
            }
            out.push((Tok::Str(src[start..i].to_string()), pos));
            col += i + 1 - (start - 1);
            i += 1;
            continue;
        }
        let two = bytes.get(i..i + 2);
        let (tok, width) = match two {
            Some(b"->") => (Tok::Arrow, 2),
            Some(b"!=") => (Tok::Neq, 2),
            Some(b"<=") => (Tok::Le, 2),
            Some(b">=") => (Tok::Ge, 2),
            Some(b"..") => (Tok::DotDot, 2),
            Some(b"=>") => return Err(unsupported(pos, "=>")),
            _ => match c {
                b'[' => (Tok::LBracket, 1),
                b']' => (Tok::RBracket, 1),
                b'(' => (Tok::LParen, 1),
                b')' => (Tok::RParen, 1),
                b';' => (Tok::Semi, 1),
                b':' => (Tok::Colon, 1),
                b',' => (Tok::Comma, 1),
                b'+' => (Tok::Plus, 1),
                b'-' => (Tok::Minus, 1),
                b'*' => (Tok::Star, 1),
                b'/' => (Tok::Slash, 1),
                b'=' => (Tok::Eq, 1),
                b'<' => (Tok::Lt, 1),
                b'>' => (Tok::Gt, 1),
                b'&' => (Tok::And, 1),
                b'|' => (Tok::Or, 1),
                b'!' => (Tok::Not, 1),
                b'\'' => (Tok::Prime, 1),
                b'?' => return Err(unsupported(pos, "? (conditional expression)")),
                b'{' | b'}' => return Err(unsupported(pos, "{ } (reward or filter syntax)")),
                _ => {
                    let ch = src[i..].chars().next().unwrap_or('?');
                    return Err(Diagnostic::error(
                        DiagnosticCode::Syntax,
                        pos,
                        format!("unexpected character `{ch}`"),
                    ));
                }
            },
        };
        out.push((tok, pos));
        i += width;
        col += width;
    }
    out.push((Tok::Eof, Pos { line, col }));
    Ok(out)
}

fn unsupported(pos: Pos, what: &str) -> Diagnostic {
    Diagnostic::error(
        DiagnosticCode::Unsupported,
        pos,
        format!("unsupported construct: {what}"),
    )
}
