//! Lexer for the Java subset, plus the inverse operation used to print
//! canonical code. Tokens are plain strings; the grammar decides which of
//! them are meaningful.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LexError {
    #[error("unterminated {kind} literal at offset {offset}")]
    Unterminated { kind: &'static str, offset: usize },
    #[error("unterminated block comment at offset {offset}")]
    UnterminatedComment { offset: usize },
    #[error("illegal character `{ch}` at offset {offset}")]
    Illegal { ch: char, offset: usize },
}

/// Multi-character operators, longest first so maximal munch falls out of
/// ordered probing.
const OPERATORS: &[&str] = &[
    "<<=", ">>>", ">>=", "==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=", "-=", "*=", "/=",
    "%=", "&=", "|=", "^=", "<<", ">>", "->", "+", "-", "*", "/", "%", "=", "<", ">", "!", "&",
    "|", "^", "~", "?", ":", ";", ",", ".", "(", ")", "[", "]", "{", "}",
];

/// Splits method source text into tokens: identifiers, numeric/string/char
/// literals (quotes kept in the token text), and operators under maximal
/// munch. Whitespace and `//`/`/* */` comments are skipped.
pub fn tokenize_code(text: &str) -> Result<Vec<String>, LexError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            let start = i;
            i += 2;
            loop {
                if i + 1 >= chars.len() {
                    return Err(LexError::UnterminatedComment { offset: start });
                }
                if chars[i] == '*' && chars[i + 1] == '/' {
                    i += 2;
                    break;
                }
                i += 1;
            }
            continue;
        }
        if c == '"' || c == '\'' {
            let kind = if c == '"' { "string" } else { "char" };
            let start = i;
            let mut tok = String::new();
            tok.push(c);
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err(LexError::Unterminated { kind, offset: start }),
                    Some('\n') => return Err(LexError::Unterminated { kind, offset: start }),
                    Some('\\') => {
                        tok.push('\\');
                        match chars.get(i + 1) {
                            None => {
                                return Err(LexError::Unterminated { kind, offset: start })
                            }
                            Some(&e) => {
                                tok.push(e);
                                i += 2;
                            }
                        }
                    }
                    Some(&q) if q == c => {
                        tok.push(q);
                        i += 1;
                        break;
                    }
                    Some(&ch) => {
                        tok.push(ch);
                        i += 1;
                    }
                }
            }
            out.push(tok);
            continue;
        }
        if c.is_ascii_digit() {
            // Digits, then any alphanumeric/underscore run (covers hex and
            // type suffixes), with `.` accepted when a digit follows.
            let mut tok = String::new();
            while i < chars.len() {
                let ch = chars[i];
                if ch.is_ascii_alphanumeric() || ch == '_' {
                    tok.push(ch);
                    i += 1;
                } else if ch == '.'
                    && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())
                    && !tok.contains('.')
                {
                    tok.push(ch);
                    i += 1;
                } else {
                    break;
                }
            }
            out.push(tok);
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' || c == '$' {
            let mut tok = String::new();
            while i < chars.len() {
                let ch = chars[i];
                if ch.is_ascii_alphanumeric() || ch == '_' || ch == '$' {
                    tok.push(ch);
                    i += 1;
                } else {
                    break;
                }
            }
            out.push(tok);
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
        match OPERATORS.iter().find(|op| rest.starts_with(**op)) {
            Some(op) => {
                out.push(op.to_string());
                i += op.chars().count();
            }
            None => return Err(LexError::Illegal { ch: c, offset: i }),
        }
    }
    Ok(out)
}

/// Joins tokens back into source text. A space goes between two word-like
/// tokens (identifiers, keywords, literals) and wherever the concatenation
/// would not re-lex into the same two tokens. This keeps `loc0=arg0;` tight
/// while producing `return "str"` and separating `-` `-` (which would
/// otherwise munch into `--`).
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut prev: Option<&str> = None;
    for tok in tokens {
        let tok = tok.as_ref();
        if let Some(p) = prev {
            if needs_space(p, tok) {
                out.push(' ');
            }
        }
        out.push_str(tok);
        prev = Some(tok);
    }
    out
}

fn needs_space(a: &str, b: &str) -> bool {
    if wordlike(a) && wordlike(b) {
        return true;
    }
    let joined = format!("{a}{b}");
    match tokenize_code(&joined) {
        Ok(toks) => !(toks.len() == 2 && toks[0] == a && toks[1] == b),
        Err(_) => true,
    }
}

fn wordlike(tok: &str) -> bool {
    tok.chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$' || c == '"' || c == '\'')
}
