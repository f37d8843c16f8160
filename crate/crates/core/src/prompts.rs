//! Prompt templates with `{PLACEHOLDER}` substitution.
//!
//! Templates are looked up as `<dir>/<lang_pair>/<component>.txt`; anything
//! missing falls back to the built-in set. Leading lines starting with `##`
//! are comments and one trailing newline is dropped.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Extractor,
    SrcSummary,
    TgtSummary,
    SrcMerge,
    TgtMerge,
    Retriever,
    Translator,
    SentenceBaseline,
    ContextBaseline,
    Doc2Doc,
}

impl Component {
    pub const ALL: [Component; 10] = [
        Component::Extractor,
        Component::SrcSummary,
        Component::TgtSummary,
        Component::SrcMerge,
        Component::TgtMerge,
        Component::Retriever,
        Component::Translator,
        Component::SentenceBaseline,
        Component::ContextBaseline,
        Component::Doc2Doc,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Component::Extractor => "extractor",
            Component::SrcSummary => "src_summary",
            Component::TgtSummary => "tgt_summary",
            Component::SrcMerge => "src_merge",
            Component::TgtMerge => "tgt_merge",
            Component::Retriever => "retriever",
            Component::Translator => "translator",
            Component::SentenceBaseline => "sentence_baseline",
            Component::ContextBaseline => "context_baseline",
            Component::Doc2Doc => "doc2doc",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.tag() == tag)
    }

    fn builtin(self) -> &'static str {
        match self {
            Component::Extractor => include_str!("../templates/en-zh/extractor.txt"),
            Component::SrcSummary => include_str!("../templates/en-zh/src_summary.txt"),
            Component::TgtSummary => include_str!("../templates/en-zh/tgt_summary.txt"),
            Component::SrcMerge => include_str!("../templates/en-zh/src_merge.txt"),
            Component::TgtMerge => include_str!("../templates/en-zh/tgt_merge.txt"),
            Component::Retriever => include_str!("../templates/en-zh/retriever.txt"),
            Component::Translator => include_str!("../templates/en-zh/translator.txt"),
            Component::SentenceBaseline => include_str!("../templates/en-zh/sentence_baseline.txt"),
            Component::ContextBaseline => include_str!("../templates/en-zh/context_baseline.txt"),
            Component::Doc2Doc => include_str!("../templates/en-zh/doc2doc.txt"),
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Every placeholder a template may reference.
pub const PLACEHOLDERS: &[&str] = &[
    "SOURCE_SENTENCE",
    "TARGET_SENTENCE",
    "SOURCE_SEGMENT",
    "SUMMARY_1",
    "SUMMARY_2",
    "TOP_NUM",
    "QUERY",
    "SRC_LANG",
    "TGT_LANG",
    "SRC_SUMMARY",
    "TGT_SUMMARY",
    "HISTORY",
    "SRC_CONTEXT",
    "TGT_CONTEXT",
    "RELEVANT_INSTANCES",
    "SOURCE",
    "SENTENCE_LIST",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template '{component}' references unknown placeholder {{{name}}}")]
    UnknownPlaceholder { component: String, name: String },
    #[error("template '{component}' placeholder {{{name}}} is not bound")]
    Unbound { component: String, name: String },
    #[error("cannot read template {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    component: Component,
    pieces: Vec<Piece>,
}

/// Finds `{NAME}` at the start of `s` where NAME is `[A-Z0-9_]+`.
fn slot_at(s: &str) -> Option<&str> {
    let rest = s.strip_prefix('{')?;
    let end = rest.find('}')?;
    let name = &rest[..end];
    (!name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'_'))
    .then_some(name)
}

impl PromptTemplate {
    pub fn parse(component: Component, raw: &str) -> Result<Self, TemplateError> {
        let text = strip_file_framing(raw);
        let mut pieces = Vec::new();
        let mut literal = String::new();
        let mut i = 0;
        while i < text.len() {
            let rest = &text[i..];
            if let Some(name) = slot_at(rest) {
                let known = PLACEHOLDERS.iter().find(|p| **p == name).ok_or_else(|| {
                    TemplateError::UnknownPlaceholder {
                        component: component.tag().to_string(),
                        name: name.to_string(),
                    }
                })?;
                if !literal.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut literal)));
                }
                pieces.push(Piece::Slot(known));
                i += name.len() + 2;
            } else {
                let ch = rest.chars().next().expect("non-empty");
                literal.push(ch);
                i += ch.len_utf8();
            }
        }
        if !literal.is_empty() {
            pieces.push(Piece::Text(literal));
        }
        Ok(Self { component, pieces })
    }

    pub fn component(&self) -> Component {
        self.component
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot(n) => Some(*n),
            Piece::Text(_) => None,
        })
    }

    pub fn uses(&self, name: &str) -> bool {
        self.placeholders().any(|p| p == name)
    }

    /// Single-pass substitution: bound values are never re-scanned.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => {
                    let value = bindings
                        .iter()
                        .find(|(k, _)| k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| TemplateError::Unbound {
                            component: self.component.tag().to_string(),
                            name: name.to_string(),
                        })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

fn strip_file_framing(raw: &str) -> &str {
    let mut text = raw;
    while text.starts_with("##") {
        text = match text.find('\n') {
            Some(nl) => &text[nl + 1..],
            None => "",
        };
    }
    let text = text.strip_suffix('\n').unwrap_or(text);
    text.strip_suffix('\r').unwrap_or(text)
}

/// Display name of a language code (`en` -> `English`); unknown codes pass through.
pub fn language_name(code: &str) -> &str {
    match code.to_ascii_lowercase().as_str() {
        "en" => "English",
        "zh" => "Chinese",
        "de" => "German",
        "fr" => "French",
        "ja" => "Japanese",
        "es" => "Spanish",
        "ru" => "Russian",
        "ko" => "Korean",
        "it" => "Italian",
        "pt" => "Portuguese",
        "ar" => "Arabic",
        _ => code,
    }
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: HashMap<Component, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = Component::ALL
            .into_iter()
            .map(|c| {
                let t = PromptTemplate::parse(c, c.builtin()).expect("built-in templates are valid");
                (c, t)
            })
            .collect();
        Self { templates }
    }

    /// Overlays `<dir>/<lang_pair>/<component>.txt` files on the built-in set.
    pub fn load(dir: &Path, lang_pair: &str) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        let pair_dir = dir.join(lang_pair);
        for c in Component::ALL {
            let path = pair_dir.join(format!("{}.txt", c.tag()));
            if !path.exists() {
                continue;
            }
            let raw = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                path: path.clone(),
                message: e.to_string(),
            })?;
            set.templates.insert(c, PromptTemplate::parse(c, &raw)?);
        }
        Ok(set)
    }

    pub fn get(&self, component: Component) -> &PromptTemplate {
        &self.templates[&component]
    }

    pub fn set(&mut self, template: PromptTemplate) {
        self.templates.insert(template.component(), template);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_cover_every_component() {
        let set = TemplateSet::builtin();
        for c in Component::ALL {
            assert_eq!(set.get(c).component(), c);
            assert_eq!(Component::from_tag(c.tag()), Some(c));
        }
        assert!(set.get(Component::Translator).uses("RELEVANT_INSTANCES"));
        assert!(!set.get(Component::Doc2Doc).pieces.iter().any(
            |p| matches!(p, Piece::Text(t) if t.contains("##"))
        ));
    }

    #[test]
    fn render_is_single_pass() {
        let t = PromptTemplate::parse(Component::Translator, "a {SOURCE} b {SOURCE}").unwrap();
        assert_eq!(t.render(&[("SOURCE", "{HISTORY}")]).unwrap(), "a {HISTORY} b {HISTORY}");
    }

    #[test]
    fn unbound_and_unknown_placeholders() {
        let t = PromptTemplate::parse(Component::Translator, "x {SOURCE}").unwrap();
        assert!(matches!(t.render(&[]), Err(TemplateError::Unbound { .. })));
        assert!(matches!(
            PromptTemplate::parse(Component::Translator, "{NOPE}"),
            Err(TemplateError::UnknownPlaceholder { .. })
        ));
        // Braces that are not placeholders stay literal.
        let t = PromptTemplate::parse(Component::Translator, "{a} {} {").unwrap();
        assert_eq!(t.render(&[]).unwrap(), "{a} {} {");
    }

    #[test]
    fn file_framing() {
        assert_eq!(strip_file_framing("## c\n## d\nbody\n"), "body");
        assert_eq!(strip_file_framing("body\n\n"), "body\n");
        assert_eq!(strip_file_framing("x ## y"), "x ## y");
    }

    #[test]
    fn directory_override() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("en-de")).unwrap();
        std::fs::write(
            dir.path().join("en-de/src_summary.txt"),
            "Fasse zusammen: {SOURCE_SEGMENT}\n",
        )
        .unwrap();
        let set = TemplateSet::load(dir.path(), "en-de").unwrap();
        assert_eq!(
            set.get(Component::SrcSummary).render(&[("SOURCE_SEGMENT", "x")]).unwrap(),
            "Fasse zusammen: x"
        );
        // Untouched components keep the built-in text.
        assert_eq!(set.get(Component::Translator), TemplateSet::builtin().get(Component::Translator));
    }

    #[test]
    fn language_names() {
        assert_eq!(language_name("en"), "English");
        assert_eq!(language_name("ZH"), "Chinese");
        assert_eq!(language_name("Klingon"), "Klingon");
    }
}
