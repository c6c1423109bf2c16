//! Minimal owned XML tree used for scenario documents and blocks.
//!
//! Parsing is delegated to `roxmltree`; the tree here is mutable and keeps
//! attributes in insertion order so that serialization is byte-stable.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum XmlError {
    #[error("malformed XML: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Element(Element),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Element {
    pub name: String,
    pub attrs: Vec<(String, String)>,
    pub children: Vec<Node>,
}

/// A parsed document: the root element plus any comments preceding it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedDocument {
    pub root: Element,
    pub leading_comments: Vec<String>,
}

impl Element {
    pub fn new(name: impl Into<String>) -> Self {
        Element {
            name: name.into(),
            attrs: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.set_attr(key, value);
        self
    }

    pub fn with_child(mut self, child: Element) -> Self {
        self.children.push(Node::Element(child));
        self
    }

    pub fn with_children(mut self, children: impl IntoIterator<Item = Element>) -> Self {
        self.children
            .extend(children.into_iter().map(Node::Element));
        self
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Numeric attribute value, if present and parseable.
    pub fn attr_f64(&self, key: &str) -> Option<f64> {
        self.attr(key).and_then(|v| v.trim().parse().ok())
    }

    /// Sets an attribute, replacing in place when it exists so order is kept.
    pub fn set_attr(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        match self.attrs.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.attrs.push((key, value)),
        }
    }

    pub fn push(&mut self, child: Element) {
        self.children.push(Node::Element(child));
    }

    pub fn elements(&self) -> impl Iterator<Item = &Element> {
        self.children.iter().filter_map(|n| match n {
            Node::Element(e) => Some(e),
            Node::Text(_) => None,
        })
    }

    pub fn elements_mut(&mut self) -> impl Iterator<Item = &mut Element> {
        self.children.iter_mut().filter_map(|n| match n {
            Node::Element(e) => Some(e),
            Node::Text(_) => None,
        })
    }

    pub fn child(&self, name: &str) -> Option<&Element> {
        self.elements().find(|e| e.name == name)
    }

    pub fn child_mut(&mut self, name: &str) -> Option<&mut Element> {
        self.elements_mut().find(|e| e.name == name)
    }

    pub fn children_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Element> + 'a {
        self.elements().filter(move |e| e.name == name)
    }

    /// Follows a `/`-separated path of child element names.
    pub fn find(&self, path: &str) -> Option<&Element> {
        path.split('/')
            .filter(|s| !s.is_empty())
            .try_fold(self, |cur, seg| cur.child(seg))
    }

    pub fn find_mut(&mut self, path: &str) -> Option<&mut Element> {
        let mut cur = self;
        for seg in path.split('/').filter(|s| !s.is_empty()) {
            cur = cur.child_mut(seg)?;
        }
        Some(cur)
    }

    /// Depth-first pre-order traversal including `self`.
    pub fn descendants(&self) -> Vec<&Element> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(e) = stack.pop() {
            out.push(e);
            let kids: Vec<&Element> = e.elements().collect();
            stack.extend(kids.into_iter().rev());
        }
        out
    }

    /// Removes and returns every direct child element matching `pred`.
    pub fn take_children_where(&mut self, mut pred: impl FnMut(&Element) -> bool) -> Vec<Element> {
        let mut taken = Vec::new();
        let mut kept = Vec::with_capacity(self.children.len());
        for node in self.children.drain(..) {
            match node {
                Node::Element(e) if pred(&e) => taken.push(e),
                other => kept.push(other),
            }
        }
        self.children = kept;
        taken
    }

    pub fn element_count(&self) -> usize {
        self.children.len()
    }

    /// Pretty serialization without XML declaration.
    pub fn to_xml_string(&self) -> String {
        let mut out = String::new();
        write_element(&mut out, self, 0);
        out
    }
}

/// Parses text into an owned element tree. Whitespace-only text is dropped.
pub fn parse(text: &str) -> Result<ParsedDocument, XmlError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| XmlError::Malformed(e.to_string()))?;
    let mut leading_comments = Vec::new();
    for node in doc.root().children() {
        if node.is_element() {
            break;
        }
        if node.is_comment() {
            if let Some(t) = node.text() {
                leading_comments.push(t.to_string());
            }
        }
    }
    Ok(ParsedDocument {
        root: convert(doc.root_element()),
        leading_comments,
    })
}

/// Parses a single fragment (one root element).
pub fn parse_fragment(text: &str) -> Result<Element, XmlError> {
    parse(text).map(|d| d.root)
}

fn convert(node: roxmltree::Node<'_, '_>) -> Element {
    let mut el = Element::new(node.tag_name().name());
    for a in node.attributes() {
        el.attrs.push((a.name().to_string(), a.value().to_string()));
    }
    for child in node.children() {
        if child.is_element() {
            el.children.push(Node::Element(convert(child)));
        } else if child.is_text() {
            if let Some(t) = child.text() {
                if !t.trim().is_empty() {
                    el.children.push(Node::Text(t.to_string()));
                }
            }
        }
    }
    el
}

/// Serializes a full document with declaration and optional leading comment.
pub fn write_document(root: &Element, comment: Option<&str>) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    if let Some(c) = comment {
        // "--" is illegal inside XML comments.
        let _ = writeln!(out, "<!--{}-->", c.replace("--", "- -"));
    }
    write_element(&mut out, root, 0);
    out
}

fn write_element(out: &mut String, el: &Element, depth: usize) {
    let indent = "  ".repeat(depth);
    out.push_str(&indent);
    out.push('<');
    out.push_str(&el.name);
    for (k, v) in &el.attrs {
        let _ = write!(out, " {}=\"{}\"", k, escape(v));
    }
    if el.children.is_empty() {
        out.push_str("/>\n");
        return;
    }
    let only_text = el.children.iter().all(|c| matches!(c, Node::Text(_)));
    if only_text {
        out.push('>');
        for c in &el.children {
            if let Node::Text(t) = c {
                out.push_str(&escape(t));
            }
        }
        let _ = writeln!(out, "</{}>", el.name);
        return;
    }
    out.push_str(">\n");
    for c in &el.children {
        match c {
            Node::Element(e) => write_element(out, e, depth + 1),
            Node::Text(t) => {
                let _ = writeln!(out, "{}  {}", indent, escape(t.trim()));
            }
        }
    }
    let _ = writeln!(out, "{}</{}>", indent, el.name);
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Fixed-precision decimal rendering (at most six fractional digits, no
/// trailing zeros) so numeric attributes serialize identically everywhere.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let s = format!("{:.6}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}
