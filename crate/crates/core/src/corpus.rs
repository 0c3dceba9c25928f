//! Hierarchical section store for judgment documents.
//!
//! Every addressable unit of a document is a [`Section`] keyed by a
//! colon-separated [`SectionId`] such as `2021_SGCA_3:judgement:introduction:p1`.
//! Dropping the last segment of an ID yields its parent, and the store is
//! closed under that operation, so agents can always hop upwards.
//!
//! The on-disk format is a small XML dialect:
//!
//! ```text
//! <corpus>
//!   <doc id="D1" heading="...">
//!     <part id="j" heading="Judgment">
//!       <text>...</text>
//!       <part id="p1"><text>...</text></part>
//!     </part>
//!   </doc>
//! </corpus>
//! ```
//!
//! A part's full ID is its ancestors' segments joined with `:`. A part may
//! also declare its full ID, which must then be exactly the parent ID plus
//! one segment.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("invalid section id {0:?}: {1}")]
    InvalidId(String, &'static str),
    #[error("unknown section id {0:?}")]
    UnknownId(String),
    #[error("malformed XML at byte {position}: {message}")]
    Xml { position: u64, message: String },
    #[error("corpus is not valid UTF-8: {0}")]
    Encoding(String),
    #[error("duplicate section id {0:?}")]
    DuplicateId(String),
    #[error("part {declared:?} is not a direct child of {parent:?}")]
    NonContiguous { parent: String, declared: String },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("I/O error: {0}")]
    Io(String),
}

/// Hierarchical colon-path address of a section.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SectionId(String);

fn check_segment(seg: &str) -> Result<(), &'static str> {
    if seg.is_empty() {
        return Err("empty segment");
    }
    if seg.contains(':') {
        return Err("segment contains ':'");
    }
    if seg.chars().any(char::is_whitespace) {
        return Err("contains whitespace");
    }
    Ok(())
}

impl SectionId {
    pub fn new(path: impl Into<String>) -> Result<Self, CorpusError> {
        let path = path.into();
        for seg in path.split(':') {
            check_segment(seg).map_err(|why| CorpusError::InvalidId(path.clone(), why))?;
        }
        Ok(Self(path))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split(':')
    }

    pub fn depth(&self) -> usize {
        self.segments().count()
    }

    /// First segment, naming the document the section belongs to.
    pub fn doc_id(&self) -> &str {
        self.0.split(':').next().unwrap_or(&self.0)
    }

    /// The ID with its final segment removed, or `None` for a document root.
    pub fn parent(&self) -> Option<SectionId> {
        self.0.rfind(':').map(|at| SectionId(self.0[..at].to_string()))
    }

    pub fn child(&self, segment: &str) -> Result<SectionId, CorpusError> {
        check_segment(segment)
            .map_err(|why| CorpusError::InvalidId(format!("{}:{segment}", self.0), why))?;
        Ok(SectionId(format!("{}:{segment}", self.0)))
    }

    /// True when `self` lies strictly below `ancestor` in the hierarchy.
    pub fn is_descendant_of(&self, ancestor: &SectionId) -> bool {
        self.0.len() > ancestor.0.len()
            && self.0.starts_with(&ancestor.0)
            && self.0.as_bytes()[ancestor.0.len()] == b':'
    }

    fn last_segment(&self) -> &str {
        self.0.rsplit(':').next().unwrap_or(&self.0)
    }
}

/// Free-function form of [`SectionId::parent`].
pub fn parent_id(id: &SectionId) -> Option<SectionId> {
    id.parent()
}

impl fmt::Display for SectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for SectionId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SectionId::new(s)
    }
}

impl TryFrom<String> for SectionId {
    type Error = CorpusError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        SectionId::new(value)
    }
}

impl From<SectionId> for String {
    fn from(id: SectionId) -> Self {
        id.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub id: SectionId,
    pub doc_id: String,
    pub heading: Option<String>,
    /// May be empty for pure container sections.
    pub text: String,
    pub child_ids: Vec<SectionId>,
}

impl Section {
    pub fn is_leaf(&self) -> bool {
        self.child_ids.is_empty()
    }

    /// Heading and text joined, the unit that gets indexed.
    pub fn searchable_text(&self) -> String {
        match &self.heading {
            Some(h) if !self.text.is_empty() => format!("{h}\n{}", self.text),
            Some(h) => h.clone(),
            None => self.text.clone(),
        }
    }
}

/// Immutable store of every section of every document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    sections: BTreeMap<SectionId, Section>,
    doc_ids: Vec<String>,
}

impl Corpus {
    pub fn from_xml(input: &[u8]) -> Result<Self, CorpusError> {
        parse_corpus_xml(input)
    }

    pub fn from_reader(mut reader: impl Read) -> Result<Self, CorpusError> {
        let mut buf = Vec::new();
        reader
            .read_to_end(&mut buf)
            .map_err(|e| CorpusError::Io(e.to_string()))?;
        parse_corpus_xml(&buf)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let bytes =
            std::fs::read(path).map_err(|e| CorpusError::Io(format!("{}: {e}", path.display())))?;
        parse_corpus_xml(&bytes)
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn contains(&self, id: &SectionId) -> bool {
        self.sections.contains_key(id)
    }

    pub fn get(&self, id: &SectionId) -> Result<&Section, CorpusError> {
        self.sections
            .get(id)
            .ok_or_else(|| CorpusError::UnknownId(id.to_string()))
    }

    /// Looks up a raw, possibly malformed, ID string.
    pub fn get_str(&self, raw: &str) -> Result<&Section, CorpusError> {
        let id = SectionId::new(raw).map_err(|_| CorpusError::UnknownId(raw.to_string()))?;
        self.get(&id)
    }

    pub fn list_children(&self, id: &SectionId) -> Result<&[SectionId], CorpusError> {
        self.get(id).map(|s| s.child_ids.as_slice())
    }

    pub fn sections(&self) -> impl Iterator<Item = &Section> {
        self.sections.values()
    }

    /// Leaf sections in document order.
    pub fn leaves(&self) -> Vec<&Section> {
        let mut out = Vec::new();
        let mut stack: Vec<&SectionId> = Vec::new();
        for doc in &self.doc_ids {
            let root = &self.sections[doc.as_str()];
            stack.push(&root.id);
            while let Some(id) = stack.pop() {
                let section = &self.sections[id];
                if section.is_leaf() {
                    out.push(section);
                } else {
                    stack.extend(section.child_ids.iter().rev());
                }
            }
        }
        out
    }

    /// Serializes back to the corpus XML dialect.
    pub fn to_xml(&self) -> String {
        let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<corpus>\n");
        for doc in &self.doc_ids {
            self.write_section(&self.sections[doc.as_str()], 1, &mut out);
        }
        out.push_str("</corpus>\n");
        out
    }

    fn write_section(&self, section: &Section, depth: usize, out: &mut String) {
        let indent = "  ".repeat(depth);
        let tag = if depth == 1 { "doc" } else { "part" };
        let id = if depth == 1 {
            section.id.as_str()
        } else {
            section.id.last_segment()
        };
        out.push_str(&format!("{indent}<{tag} id=\"{}\"", escape(id)));
        if let Some(h) = &section.heading {
            out.push_str(&format!(" heading=\"{}\"", escape(h.as_str())));
        }
        out.push_str(">\n");
        if !section.text.is_empty() {
            out.push_str(&format!(
                "{indent}  <text>{}</text>\n",
                escape(section.text.as_str())
            ));
        }
        for child in &section.child_ids {
            self.write_section(&self.sections[child], depth + 1, out);
        }
        out.push_str(&format!("{indent}</{tag}>\n"));
    }
}

// Lets `sections[&str]` index the BTreeMap through the newtype.
impl std::borrow::Borrow<str> for SectionId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

struct OpenSection {
    section: Section,
    /// Accumulates the current `<text>` body while inside one.
    text_buf: Option<String>,
    seen_text: bool,
}

fn xml_err(reader: &Reader<&[u8]>, message: impl fmt::Display) -> CorpusError {
    CorpusError::Xml {
        position: reader.error_position().max(reader.buffer_position()),
        message: message.to_string(),
    }
}

fn attributes(reader: &Reader<&[u8]>, e: &BytesStart) -> Result<(Option<String>, Option<String>), CorpusError> {
    let mut id = None;
    let mut heading = None;
    for attr in e.attributes() {
        let attr = attr.map_err(|err| xml_err(reader, err))?;
        let value = attr
            .normalized_value(quick_xml::XmlVersion::Implicit1_0)
            .map_err(|err| xml_err(reader, err))?
            .into_owned();
        match attr.key.as_ref() {
            "id" => id = Some(value),
            "heading" => heading = Some(value),
            other => {
                return Err(CorpusError::Schema(format!("unexpected attribute {other:?}")));
            }
        }
    }
    Ok((id, heading))
}

fn resolve_entity(name: &str) -> Option<char> {
    match name {
        "lt" => Some('<'),
        "gt" => Some('>'),
        "amp" => Some('&'),
        "apos" => Some('\''),
        "quot" => Some('"'),
        _ => None,
    }
}

/// Parses the corpus XML dialect into a [`Corpus`].
pub fn parse_corpus_xml(input: &[u8]) -> Result<Corpus, CorpusError> {
    let text = std::str::from_utf8(input).map_err(|e| CorpusError::Encoding(e.to_string()))?;
    let mut reader = Reader::from_str(text);

    let mut sections: BTreeMap<SectionId, Section> = BTreeMap::new();
    let mut doc_ids: Vec<String> = Vec::new();
    let mut seen_docs: HashSet<String> = HashSet::new();
    let mut stack: Vec<OpenSection> = Vec::new();
    let mut in_corpus = false;
    let mut corpus_closed = false;

    let insert = |section: Section, sections: &mut BTreeMap<SectionId, Section>| {
        if sections.contains_key(&section.id) {
            return Err(CorpusError::DuplicateId(section.id.to_string()));
        }
        sections.insert(section.id.clone(), section);
        Ok(())
    };

    loop {
        let event = reader.read_event().map_err(|e| xml_err(&reader, e))?;
        match event {
            Event::Decl(_) | Event::Comment(_) | Event::PI(_) | Event::DocType(_) => {}
            Event::Start(ref e) | Event::Empty(ref e) => {
                let is_empty = matches!(event, Event::Empty(_));
                let name = e.name();
                let name = name.as_ref();
                if corpus_closed {
                    return Err(xml_err(&reader, "content after </corpus>"));
                }
                match name {
                    "corpus" => {
                        if in_corpus {
                            return Err(CorpusError::Schema("nested <corpus>".into()));
                        }
                        in_corpus = true;
                        if is_empty {
                            corpus_closed = true;
                        }
                    }
                    "doc" | "part" => {
                        if !in_corpus {
                            return Err(CorpusError::Schema(format!("<{name}> outside <corpus>")));
                        }
                        if let Some(top) = stack.last() {
                            if top.text_buf.is_some() {
                                return Err(CorpusError::Schema("element inside <text>".into()));
                            }
                        }
                        let is_doc = name == "doc";
                        if is_doc != stack.is_empty() {
                            return Err(CorpusError::Schema(if is_doc {
                                "<doc> nested inside another section".into()
                            } else {
                                "<part> directly under <corpus>".into()
                            }));
                        }
                        let (declared, heading) = attributes(&reader, e)?;
                        let declared = declared
                            .ok_or_else(|| CorpusError::Schema(format!("<{name}> without id")))?;
                        let id = match stack.last() {
                            None => {
                                let id = SectionId::new(declared.clone())?;
                                if id.depth() != 1 {
                                    return Err(CorpusError::InvalidId(
                                        declared,
                                        "document id must be a single segment",
                                    ));
                                }
                                id
                            }
                            Some(parent) => {
                                let parent_id = &parent.section.id;
                                if declared.contains(':') {
                                    let full = SectionId::new(declared.clone())?;
                                    if full.parent().as_ref() != Some(parent_id) {
                                        return Err(CorpusError::NonContiguous {
                                            parent: parent_id.to_string(),
                                            declared,
                                        });
                                    }
                                    full
                                } else {
                                    parent_id.child(&declared)?
                                }
                            }
                        };
                        if let Some(parent) = stack.last_mut() {
                            parent.section.child_ids.push(id.clone());
                        } else {
                            if !seen_docs.insert(id.to_string()) {
                                return Err(CorpusError::DuplicateId(id.to_string()));
                            }
                            doc_ids.push(id.to_string());
                        }
                        let section = Section {
                            doc_id: id.doc_id().to_string(),
                            id,
                            heading,
                            text: String::new(),
                            child_ids: Vec::new(),
                        };
                        if is_empty {
                            insert(section, &mut sections)?;
                        } else {
                            stack.push(OpenSection {
                                section,
                                text_buf: None,
                                seen_text: false,
                            });
                        }
                    }
                    "text" => {
                        let top = stack
                            .last_mut()
                            .ok_or_else(|| CorpusError::Schema("<text> outside a section".into()))?;
                        if top.seen_text || top.text_buf.is_some() {
                            return Err(CorpusError::Schema(format!(
                                "section {} has more than one <text>",
                                top.section.id
                            )));
                        }
                        top.seen_text = true;
                        if !is_empty {
                            top.text_buf = Some(String::new());
                        }
                    }
                    other => {
                        return Err(CorpusError::Schema(format!("unexpected element <{other}>")));
                    }
                }
            }
            Event::End(ref e) => {
                let name = e.name();
                match name.as_ref() {
                    "corpus" => {
                        in_corpus = false;
                        corpus_closed = true;
                    }
                    "text" => {
                        let top = stack.last_mut().expect("reader checks end names");
                        let body = top.text_buf.take().unwrap_or_default();
                        top.section.text = body.trim().to_string();
                    }
                    _ => {
                        let open = stack.pop().expect("reader checks end names");
                        insert(open.section, &mut sections)?;
                    }
                }
            }
            Event::Text(ref t) => {
                let content = t.xml10_content();
                match stack.last_mut().and_then(|top| top.text_buf.as_mut()) {
                    Some(buf) => buf.push_str(&content),
                    None if content.trim().is_empty() => {}
                    None => {
                        return Err(CorpusError::Schema(format!(
                            "text outside <text>: {:?}",
                            content.trim()
                        )));
                    }
                }
            }
            Event::CData(ref c) => {
                let content = c.xml10_content().into_owned();
                match stack.last_mut().and_then(|top| top.text_buf.as_mut()) {
                    Some(buf) => buf.push_str(&content),
                    None => return Err(CorpusError::Schema("CDATA outside <text>".into())),
                }
            }
            Event::GeneralRef(ref r) => {
                let ch = match r.resolve_char_ref().map_err(|e| xml_err(&reader, e))? {
                    Some(ch) => ch,
                    None => resolve_entity(r.as_ref())
                        .ok_or_else(|| xml_err(&reader, format!("unknown entity &{};", r.as_ref())))?,
                };
                match stack.last_mut().and_then(|top| top.text_buf.as_mut()) {
                    Some(buf) => buf.push(ch),
                    None => return Err(CorpusError::Schema("entity outside <text>".into())),
                }
            }
            Event::Eof => break,
        }
    }

    if !stack.is_empty() || (in_corpus && !corpus_closed) {
        return Err(xml_err(&reader, "unexpected end of input"));
    }
    if !corpus_closed {
        return Err(CorpusError::Schema("missing <corpus> root".into()));
    }

    Ok(Corpus { sections, doc_ids })
}
