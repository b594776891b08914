//! Lexical scanning of SQL text: just enough to find statement boundaries
//! and top-level keywords while skipping literals, quoted identifiers and
//! comments.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tok<'a> {
    Word(&'a str),
    Open,
    Close,
    Semicolon,
    Other,
}

/// Yields (byte offset, token) pairs. Unterminated literals or comments run to
/// the end of the input.
fn scan(sql: &str) -> Vec<(usize, Tok<'_>)> {
    let bytes = sql.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let skip_until = |start: usize, close: u8, doubled: bool| -> usize {
        let mut j = start;
        while j < bytes.len() {
            if bytes[j] == close {
                if doubled && j + 1 < bytes.len() && bytes[j + 1] == close {
                    j += 2;
                    continue;
                }
                return j + 1;
            }
            j += 1;
        }
        bytes.len()
    };
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b'\'' | b'"' | b'`' => {
                i = skip_until(i + 1, b, true);
                out.push((i, Tok::Other));
            }
            b'[' => {
                i = skip_until(i + 1, b']', false);
                out.push((i, Tok::Other));
            }
            b'-' if bytes.get(i + 1) == Some(&b'-') => {
                i = sql[i..].find('\n').map_or(bytes.len(), |n| i + n + 1);
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                i = sql[i + 2..].find("*/").map_or(bytes.len(), |n| i + 2 + n + 2);
            }
            b'(' => {
                out.push((i, Tok::Open));
                i += 1;
            }
            b')' => {
                out.push((i, Tok::Close));
                i += 1;
            }
            b';' => {
                out.push((i, Tok::Semicolon));
                i += 1;
            }
            _ if b.is_ascii_alphabetic() || b == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Word(&sql[start..i])));
            }
            _ if b.is_ascii_whitespace() => i += 1,
            _ => {
                // Step over the whole UTF-8 sequence.
                let len = sql[i..].chars().next().map_or(1, char::len_utf8);
                out.push((i, Tok::Other));
                i += len;
            }
        }
    }
    out
}

/// Splits off the first statement. The remainder starts after the first
/// top-level `;` (empty when there is none).
pub fn split_first_statement(sql: &str) -> (&str, &str) {
    for (pos, tok) in scan(sql) {
        if tok == Tok::Semicolon {
            return (&sql[..pos], &sql[pos + 1..]);
        }
    }
    (sql, "")
}

/// True when the text holds only whitespace, comments and semicolons.
pub fn is_blank(sql: &str) -> bool {
    scan(sql).iter().all(|(_, t)| *t == Tok::Semicolon)
}

/// Whether the outermost statement carries `ORDER BY` (outside any
/// parentheses, so subqueries, CTE bodies and window clauses don't count).
pub fn has_top_level_order_by(sql: &str) -> bool {
    let (first, _) = split_first_statement(sql);
    let toks = scan(first);
    let mut depth = 0usize;
    for (i, (_, tok)) in toks.iter().enumerate() {
        match tok {
            Tok::Open => depth += 1,
            Tok::Close => depth = depth.saturating_sub(1),
            Tok::Word(w) if depth == 0 && w.eq_ignore_ascii_case("order") => {
                if let Some((_, Tok::Word(next))) = toks.get(i + 1) {
                    if next.eq_ignore_ascii_case("by") {
                        return true;
                    }
                }
            }
            _ => {}
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_top_level_semicolon_only() {
        assert_eq!(split_first_statement("SELECT 1; SELECT 2"), ("SELECT 1", " SELECT 2"));
        assert_eq!(split_first_statement("SELECT ';' -- ;\n"), ("SELECT ';' -- ;\n", ""));
        assert_eq!(split_first_statement("SELECT 1 /* ; */;"), ("SELECT 1 /* ; */", ""));
        assert!(is_blank(" ;  -- trailing\n /* c */ "));
        assert!(!is_blank("DROP TABLE x"));
    }

    #[test]
    fn order_by_detection() {
        assert!(has_top_level_order_by("SELECT name FROM singer ORDER BY age"));
        assert!(has_top_level_order_by("select a from t union select b from u order  by 1"));
        assert!(!has_top_level_order_by("SELECT * FROM (SELECT a FROM t ORDER BY a)"));
        assert!(!has_top_level_order_by("SELECT rank() OVER (ORDER BY x) FROM t"));
        assert!(!has_top_level_order_by("SELECT 'ORDER BY' FROM t"));
        assert!(!has_top_level_order_by("SELECT \"order\" FROM t -- ORDER BY x"));
        assert!(has_top_level_order_by("WITH c AS (SELECT 1 AS x) SELECT x FROM c ORDER BY x DESC"));
    }

    #[test]
    fn scanning_handles_non_ascii() {
        assert!(!has_top_level_order_by("SELECT '格里公园' ， x FROM t"));
        assert_eq!(split_first_statement("SELECT '公园';x").1, "x");
    }
}
