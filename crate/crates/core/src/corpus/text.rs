//! Documentation text normalization: Javadoc stripping and camel-case
//! splitting into the lower-cased word stream the encoder consumes.

/// Turns raw documentation text into the NL token list.
///
/// Javadoc comment furniture (`/**`, `*/`, leading `*`) is removed, the text
/// is truncated at the first `@param`/`@return`/`@throws` block, inline tags
/// such as `{@link Foo}` and `{@code x}` are unwrapped keeping their content,
/// and HTML tags are dropped. Remaining words are lower-cased; camel-cased
/// words additionally yield their sub-words, followed by the original word.
pub fn strip_doc(doc: &str) -> Vec<String> {
    let mut prose = String::new();
    for line in doc.lines() {
        let mut body = line.trim_start();
        body = body.strip_prefix("/**").unwrap_or(body);
        body = body.trim_start().strip_prefix('*').unwrap_or(body);
        let body = body.strip_suffix("*/").unwrap_or(body).trim();
        if is_field_block_tag(body) {
            break;
        }
        prose.push_str(body);
        prose.push(' ');
    }
    let unwrapped = unwrap_inline_tags(&prose);
    let cleaned = strip_html(&unwrapped);

    let mut out = Vec::new();
    for word in words(&cleaned) {
        let pieces = camel_split(word);
        let whole = word.to_lowercase();
        let split = pieces.len() > 1;
        out.extend(pieces);
        if split {
            out.push(whole);
        }
    }
    out
}

fn is_field_block_tag(line: &str) -> bool {
    ["@param", "@return", "@throws"]
        .iter()
        .any(|tag| line.starts_with(tag))
}

/// Drops `{@tag` ... `}` markers while keeping the enclosed text.
fn unwrap_inline_tags(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("{@") {
        out.push_str(&rest[..start]);
        let after_tag = rest[start + 2..]
            .find(|c: char| c.is_whitespace() || c == '}')
            .map(|i| start + 2 + i)
            .unwrap_or(rest.len());
        match rest[after_tag..].find('}') {
            Some(close) => {
                out.push_str(rest[after_tag..after_tag + close].trim_start());
                out.push(' ');
                rest = &rest[after_tag + close + 1..];
            }
            None => {
                out.push_str(&rest[after_tag..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Removes `<tag ...>` runs; a `<` not followed by a letter or `/` is kept so
/// comparisons in prose survive.
fn strip_html(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<'
            && i + 1 < bytes.len()
            && (bytes[i + 1].is_ascii_alphabetic() || bytes[i + 1] == b'/')
        {
            match text[i..].find('>') {
                Some(close) => {
                    out.push(' ');
                    i += close + 1;
                    continue;
                }
                None => break,
            }
        }
        // Safe: we only land on ASCII or the start of a UTF-8 sequence.
        let ch = text[i..].chars().next().unwrap();
        out.push(ch);
        i += ch.len_utf8();
    }
    out
}

/// Maximal runs of identifier-ish characters.
fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '$'))
        .filter(|w| !w.is_empty())
}

/// Splits an identifier at camel-case boundaries, lower-casing the pieces.
/// An acronym run stays together until its final capital: the boundary falls
/// before an upper-case letter that follows a lower-case letter or digit, or
/// before the last capital of a run when a lower-case letter follows it.
pub fn camel_split(name: &str) -> Vec<String> {
    let chars: Vec<char> = name.chars().collect();
    if chars.is_empty() {
        return Vec::new();
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    for i in 1..chars.len() {
        let prev = chars[i - 1];
        let cur = chars[i];
        let next_lower = chars.get(i + 1).is_some_and(|c| c.is_lowercase());
        let boundary = cur.is_uppercase()
            && (prev.is_lowercase() || prev.is_ascii_digit() || (prev.is_uppercase() && next_lower));
        if boundary {
            pieces.push(chars[start..i].iter().collect::<String>().to_lowercase());
            start = i;
        }
    }
    pieces.push(chars[start..].iter().collect::<String>().to_lowercase());
    pieces
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(s: &str) -> Vec<String> {
        camel_split(s)
    }

    #[test]
    fn camel_split_basic() {
        assert_eq!(split("vecElements"), ["vec", "elements"]);
        assert_eq!(split("add"), ["add"]);
        assert_eq!(split("parseHTMLFile"), ["parse", "html", "file"]);
    }

    #[test]
    fn camel_split_edges() {
        assert_eq!(split("HTML"), ["html"]);
        assert_eq!(split("getX"), ["get", "x"]);
        assert_eq!(split("X"), ["x"]);
        assert_eq!(split("arg0Value"), ["arg0", "value"]);
        assert_eq!(split("x2"), ["x2"]);
        assert!(split("").is_empty());
    }

    #[test]
    fn strip_doc_plain_sentence() {
        assert_eq!(strip_doc("Increment this vector"), ["increment", "this", "vector"]);
    }

    #[test]
    fn strip_doc_unwraps_inline_tags() {
        assert_eq!(strip_doc("{@link Foo} adds x"), ["foo", "adds", "x"]);
        assert_eq!(strip_doc("use {@code maxValue} here"), [
            "use", "max", "value", "maxvalue", "here"
        ]);
        assert_eq!(strip_doc("{@inheritDoc}"), Vec::<String>::new());
    }

    #[test]
    fn strip_doc_empty() {
        assert_eq!(strip_doc(""), Vec::<String>::new());
    }

    #[test]
    fn strip_doc_drops_field_blocks() {
        let doc = "Sets the size.\n@param n the new size\n@return nothing";
        assert_eq!(strip_doc(doc), ["sets", "the", "size"]);
    }

    #[test]
    fn strip_doc_handles_comment_furniture() {
        let doc = "/**\n * Returns the count.\n * @return the count\n */";
        assert_eq!(strip_doc(doc), ["returns", "the", "count"]);
    }

    #[test]
    fn strip_doc_strips_html_but_keeps_comparisons() {
        assert_eq!(strip_doc("<p>true if a < b</p>"), ["true", "if", "a", "b"]);
    }

    #[test]
    fn strip_doc_keeps_camel_originals_after_pieces() {
        assert_eq!(strip_doc("increment vecElements"), [
            "increment",
            "vec",
            "elements",
            "vecelements"
        ]);
    }
}
