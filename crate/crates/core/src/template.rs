//! Plain-text prompt templates with `{slot}` placeholders. `{{` and `}}`
//! render as literal braces.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template `{template}`: unterminated placeholder at byte {offset}")]
    Unterminated { template: String, offset: usize },
    #[error("template `{template}`: unknown slot `{slot}`")]
    UnknownSlot { template: String, slot: String },
    #[error("template `{template}`: slot `{slot}` has no value")]
    MissingValue { template: String, slot: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    /// Parses `text`, accepting only slots listed in `allowed`.
    pub fn parse(name: &str, text: &str, allowed: &[&str]) -> Result<Self, TemplateError> {
        let mut pieces = Vec::new();
        let mut buf = String::new();
        let mut chars = text.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            match c {
                '{' if chars.peek().map(|(_, n)| *n) == Some('{') => {
                    chars.next();
                    buf.push('{');
                }
                '}' if chars.peek().map(|(_, n)| *n) == Some('}') => {
                    chars.next();
                    buf.push('}');
                }
                '{' => {
                    let mut slot = String::new();
                    let mut closed = false;
                    for (_, n) in chars.by_ref() {
                        if n == '}' {
                            closed = true;
                            break;
                        }
                        slot.push(n);
                    }
                    if !closed {
                        return Err(TemplateError::Unterminated {
                            template: name.into(),
                            offset: i,
                        });
                    }
                    if !allowed.contains(&slot.as_str()) {
                        return Err(TemplateError::UnknownSlot {
                            template: name.into(),
                            slot,
                        });
                    }
                    if !buf.is_empty() {
                        pieces.push(Piece::Text(std::mem::take(&mut buf)));
                    }
                    pieces.push(Piece::Slot(slot));
                }
                _ => buf.push(c),
            }
        }
        if !buf.is_empty() {
            pieces.push(Piece::Text(buf));
        }
        Ok(Self {
            name: name.into(),
            pieces,
        })
    }

    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot(s) => Some(s.as_str()),
            Piece::Text(_) => None,
        })
    }

    pub fn render(&self, values: &BTreeMap<&str, &str>) -> Result<String, TemplateError> {
        let mut out = String::new();
        for p in &self.pieces {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => out.push_str(values.get(s.as_str()).ok_or_else(|| TemplateError::MissingValue {
                    template: self.name.clone(),
                    slot: s.clone(),
                })?),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_slots_and_escapes() {
        let t = PromptTemplate::parse("t", "a {x} {{b}} {y}", &["x", "y"]).unwrap();
        let vals = BTreeMap::from([("x", "1"), ("y", "{2}")]);
        assert_eq!(t.render(&vals).unwrap(), "a 1 {b} {2}");
        assert_eq!(t.slots().collect::<Vec<_>>(), ["x", "y"]);
    }

    #[test]
    fn rejects_bad_templates() {
        assert!(matches!(
            PromptTemplate::parse("t", "{nope}", &["x"]),
            Err(TemplateError::UnknownSlot { .. })
        ));
        assert!(matches!(
            PromptTemplate::parse("t", "abc {x", &["x"]),
            Err(TemplateError::Unterminated { offset: 4, .. })
        ));
        let t = PromptTemplate::parse("t", "{x}", &["x"]).unwrap();
        assert!(matches!(t.render(&BTreeMap::new()), Err(TemplateError::MissingValue { .. })));
    }
}
