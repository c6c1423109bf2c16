//! Element/attribute graph of the supported OpenSCENARIO subset.
//!
//! The graph is loaded from a JSON catalog (see `data/schema_catalog.json`
//! and the README for the format). Class elements list their children as an
//! ordered sequence with cardinalities; a child entry naming an abstract
//! element accepts any concrete element that transitively `extends` it.
//! Attributes and children are inherited along `extends`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::ScenarioBlock;
use crate::xml::Element;

const BUILTIN_CATALOG: &str = include_str!("../data/schema_catalog.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("cannot parse schema catalog: {0}")]
    CatalogParseError(String),
    #[error("schema invariant violated: {0}")]
    InvariantViolation(String),
    #[error("unknown attribute {element}.{attribute}")]
    UnknownAttribute { element: String, attribute: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Class,
    Enumeration,
    Primitive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum PrimitiveBase {
    Double,
    Int,
    UnsignedInt,
    UnsignedShort,
    String,
    Boolean,
    DateTime,
}

impl PrimitiveBase {
    fn xsd(self) -> &'static str {
        match self {
            PrimitiveBase::Double => "xs:double",
            PrimitiveBase::Int => "xs:int",
            PrimitiveBase::UnsignedInt => "xs:unsignedInt",
            PrimitiveBase::UnsignedShort => "xs:unsignedShort",
            PrimitiveBase::String => "xs:string",
            PrimitiveBase::Boolean => "xs:boolean",
            PrimitiveBase::DateTime => "xs:dateTime",
        }
    }

    fn integer_bounds(self) -> Option<(f64, f64)> {
        match self {
            PrimitiveBase::Int => Some((i32::MIN as f64, i32::MAX as f64)),
            PrimitiveBase::UnsignedInt => Some((0.0, u32::MAX as f64)),
            PrimitiveBase::UnsignedShort => Some((0.0, u16::MAX as f64)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cardinality {
    pub min: u32,
    /// `None` means unbounded.
    pub max: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChildDef {
    pub element: String,
    pub cardinality: Cardinality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementDef {
    pub name: String,
    pub kind: ElementKind,
    pub is_abstract: bool,
    pub extends: Option<String>,
    pub literals: Vec<String>,
    pub base: Option<PrimitiveBase>,
    pub children: Vec<ChildDef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeDef {
    pub element: String,
    pub name: String,
    pub type_name: String,
    pub required: bool,
    pub range: (Option<f64>, Option<f64>),
    pub units: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Containment,
    Inheritance,
    HasAttribute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaEdge {
    pub from: String,
    /// Element name, or `Element.attribute` for `has_attribute` edges.
    pub to: String,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueDomain {
    NumericRange {
        min: Option<f64>,
        max: Option<f64>,
        integer: bool,
        units: Option<String>,
    },
    EnumLiterals {
        literals: Vec<String>,
    },
    FreeText {
        date_time: bool,
    },
}

impl ValueDomain {
    /// Whether a raw attribute value lies in the domain.
    pub fn accepts(&self, raw: &str) -> bool {
        match self {
            ValueDomain::NumericRange { min, max, integer, .. } => {
                let Ok(v) = raw.trim().parse::<f64>() else {
                    return false;
                };
                if !v.is_finite() || (*integer && v.fract() != 0.0) {
                    return false;
                }
                min.map_or(true, |m| v >= m) && max.map_or(true, |m| v <= m)
            }
            ValueDomain::EnumLiterals { literals } => literals.iter().any(|l| l == raw),
            ValueDomain::FreeText { date_time } => !date_time || is_date_time(raw),
        }
    }

    pub fn literals(&self) -> Option<&[String]> {
        match self {
            ValueDomain::EnumLiterals { literals } => Some(literals),
            _ => None,
        }
    }
}

fn is_date_time(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() < 19 {
        return false;
    }
    let digits = |r: std::ops::Range<usize>| b[r].iter().all(u8::is_ascii_digit);
    digits(0..4)
        && b[4] == b'-'
        && digits(5..7)
        && b[7] == b'-'
        && digits(8..10)
        && b[10] == b'T'
        && digits(11..13)
        && b[13] == b':'
        && digits(14..16)
        && b[16] == b':'
        && digits(17..19)
}

#[derive(Debug, Clone)]
pub struct SchemaGraph {
    pub dialect: String,
    pub root: String,
    pub elements: BTreeMap<String, ElementDef>,
    pub attributes: BTreeMap<(String, String), AttributeDef>,
    pub edges: Vec<SchemaEdge>,
    /// Element names in catalog order, used for stable exports.
    order: Vec<String>,
    /// Inherited attributes and child slots per class, resolved once.
    flat: HashMap<String, FlatClass>,
}

#[derive(Debug, Clone)]
struct FlatClass {
    attributes: Vec<AttributeDef>,
    children: Vec<ChildDef>,
    /// First slot accepting each element name.
    slot_of: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    UnknownElement,
    AbstractElement,
    Containment,
    Order,
    Cardinality,
    MissingAttribute,
    UnknownAttribute,
    Domain,
    UnexpectedText,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub path: String,
    pub kind: FindingKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn count(&self, kind: FindingKind) -> usize {
        self.findings.iter().filter(|f| f.kind == kind).count()
    }

    fn push(&mut self, path: &str, kind: FindingKind, message: String) {
        self.findings.push(Finding {
            path: path.to_string(),
            kind,
            message,
        });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for finding in &self.findings {
            writeln!(f, "{:?} at {}: {}", finding.kind, finding.path, finding.message)?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawCatalog {
    #[serde(default)]
    dialect: String,
    root: String,
    elements: Vec<RawElement>,
}

#[derive(Deserialize)]
struct RawElement {
    name: String,
    kind: ElementKind,
    #[serde(default, rename = "abstract")]
    is_abstract: bool,
    #[serde(default)]
    extends: Option<String>,
    #[serde(default)]
    literals: Vec<String>,
    #[serde(default)]
    base: Option<PrimitiveBase>,
    #[serde(default)]
    children: Vec<RawChild>,
    #[serde(default)]
    attributes: Vec<RawAttribute>,
}

#[derive(Deserialize)]
struct RawChild {
    element: String,
    min: u32,
    max: Option<u32>,
}

#[derive(Deserialize)]
struct RawAttribute {
    name: String,
    #[serde(rename = "type")]
    type_name: String,
    #[serde(default)]
    required: bool,
    #[serde(default)]
    range: Option<(Option<f64>, Option<f64>)>,
    #[serde(default)]
    units: Option<String>,
}

/// Parses and checks a schema catalog.
pub fn load_schema(catalog: &str) -> Result<SchemaGraph, SchemaError> {
    if catalog.trim().is_empty() {
        return Err(SchemaError::CatalogParseError("empty catalog".into()));
    }
    let raw: RawCatalog =
        serde_json::from_str(catalog).map_err(|e| SchemaError::CatalogParseError(e.to_string()))?;
    if raw.elements.is_empty() {
        return Err(SchemaError::CatalogParseError("catalog declares no elements".into()));
    }
    let violation = |m: String| Err(SchemaError::InvariantViolation(m));

    let mut elements = BTreeMap::new();
    let mut attributes = BTreeMap::new();
    let mut order = Vec::new();
    for e in raw.elements {
        if elements.contains_key(&e.name) {
            return violation(format!("duplicate element {}", e.name));
        }
        match e.kind {
            ElementKind::Enumeration if e.literals.is_empty() => {
                return violation(format!("enumeration {} has no literals", e.name))
            }
            ElementKind::Primitive if e.base.is_none() => {
                return violation(format!("primitive {} has no base", e.name))
            }
            _ => {}
        }
        let mut children = Vec::new();
        for c in e.children {
            if let Some(max) = c.max {
                if c.min > max || max == 0 {
                    return violation(format!("{}: bad cardinality for {}", e.name, c.element));
                }
            }
            children.push(ChildDef {
                element: c.element,
                cardinality: Cardinality { min: c.min, max: c.max },
            });
        }
        for a in e.attributes {
            let key = (e.name.clone(), a.name.clone());
            if attributes.contains_key(&key) {
                return violation(format!("duplicate attribute {}.{}", e.name, a.name));
            }
            let range = a.range.unwrap_or((None, None));
            if let (Some(lo), Some(hi)) = range {
                if lo >= hi {
                    return violation(format!("{}.{}: empty range", e.name, a.name));
                }
            }
            attributes.insert(
                key,
                AttributeDef {
                    element: e.name.clone(),
                    name: a.name,
                    type_name: a.type_name,
                    required: a.required,
                    range,
                    units: a.units,
                },
            );
        }
        order.push(e.name.clone());
        elements.insert(
            e.name.clone(),
            ElementDef {
                name: e.name,
                kind: e.kind,
                is_abstract: e.is_abstract,
                extends: e.extends,
                literals: e.literals,
                base: e.base,
                children,
            },
        );
    }

    let mut edges = Vec::new();
    for name in &order {
        let def = &elements[name];
        for c in &def.children {
            match elements.get(&c.element) {
                Some(t) if t.kind == ElementKind::Class => {}
                Some(_) => return violation(format!("{name} contains non-class {}", c.element)),
                None => return violation(format!("{name} contains missing element {}", c.element)),
            }
            edges.push(SchemaEdge {
                from: name.clone(),
                to: c.element.clone(),
                relation: Relation::Containment,
            });
        }
        if let Some(parent) = &def.extends {
            if !elements.contains_key(parent) {
                return violation(format!("{name} extends missing element {parent}"));
            }
            edges.push(SchemaEdge {
                from: name.clone(),
                to: parent.clone(),
                relation: Relation::Inheritance,
            });
        }
    }
    for a in attributes.values() {
        match elements.get(&a.type_name).map(|t| t.kind) {
            Some(ElementKind::Enumeration) | Some(ElementKind::Primitive) => {}
            _ => {
                return violation(format!(
                    "{}.{} has unknown value type {}",
                    a.element, a.name, a.type_name
                ))
            }
        }
        match elements.get(&a.element).map(|t| t.kind) {
            Some(ElementKind::Class) => {}
            _ => return violation(format!("attribute {}.{} on non-class", a.element, a.name)),
        }
        edges.push(SchemaEdge {
            from: a.element.clone(),
            to: format!("{}.{}", a.element, a.name),
            relation: Relation::HasAttribute,
        });
    }
    // Inheritance is single-parent, so a DAG means no chain revisits a node.
    for name in &order {
        let mut seen = BTreeSet::new();
        let mut cur = Some(name.clone());
        while let Some(n) = cur {
            if !seen.insert(n.clone()) {
                return violation(format!("inheritance cycle through {n}"));
            }
            cur = elements[&n].extends.clone();
        }
    }
    if !elements.contains_key(&raw.root) {
        return violation(format!("root element {} is not declared", raw.root));
    }

    let mut schema = SchemaGraph {
        dialect: raw.dialect,
        root: raw.root,
        elements,
        attributes,
        edges,
        order,
        flat: HashMap::new(),
    };
    schema.flat = schema
        .order
        .iter()
        .filter(|n| schema.elements[*n].kind == ElementKind::Class)
        .map(|n| {
            let slots = schema.all_children(n);
            let slot_of = schema
                .order
                .iter()
                .filter_map(|c| schema.slot_for(&slots, c).map(|i| (c.clone(), i)))
                .collect();
            let flat = FlatClass {
                attributes: schema.all_attributes(n).into_iter().cloned().collect(),
                children: slots.into_iter().cloned().collect(),
                slot_of,
            };
            (n.clone(), flat)
        })
        .collect();
    Ok(schema)
}

/// The catalog shipped with the crate.
pub fn builtin_schema() -> &'static SchemaGraph {
    static SCHEMA: OnceLock<SchemaGraph> = OnceLock::new();
    SCHEMA.get_or_init(|| load_schema(BUILTIN_CATALOG).expect("shipped catalog is valid"))
}

pub fn builtin_catalog_text() -> &'static str {
    BUILTIN_CATALOG
}

/// Declared domain of `element.attribute`, following inheritance.
pub fn attribute_domain(schema: &SchemaGraph, element: &str, attribute: &str) -> Result<ValueDomain, SchemaError> {
    let def = schema
        .find_attribute(element, attribute)
        .ok_or_else(|| SchemaError::UnknownAttribute {
            element: element.to_string(),
            attribute: attribute.to_string(),
        })?;
    Ok(schema.domain_of(def))
}

impl SchemaGraph {
    /// `name` followed by its ancestors.
    pub fn lineage(&self, name: &str) -> Vec<&ElementDef> {
        let mut out = Vec::new();
        let mut cur = self.elements.get(name);
        while let Some(def) = cur {
            out.push(def);
            cur = def.extends.as_ref().and_then(|p| self.elements.get(p));
        }
        out
    }

    pub fn is_a(&self, name: &str, ancestor: &str) -> bool {
        self.lineage(name).iter().any(|d| d.name == ancestor)
    }

    pub fn find_attribute(&self, element: &str, attribute: &str) -> Option<&AttributeDef> {
        self.lineage(element)
            .iter()
            .find_map(|d| self.attributes.get(&(d.name.clone(), attribute.to_string())))
    }

    /// All attributes of an element including inherited ones, ancestors first.
    pub fn all_attributes(&self, element: &str) -> Vec<&AttributeDef> {
        let mut out = Vec::new();
        for def in self.lineage(element).into_iter().rev() {
            out.extend(
                self.attributes
                    .range((def.name.clone(), String::new())..)
                    .take_while(|((e, _), _)| *e == def.name)
                    .map(|(_, a)| a),
            );
        }
        out
    }

    /// Children including inherited ones, ancestors first.
    pub fn all_children(&self, element: &str) -> Vec<&ChildDef> {
        self.lineage(element)
            .into_iter()
            .rev()
            .flat_map(|d| d.children.iter())
            .collect()
    }

    pub fn domain_of(&self, attr: &AttributeDef) -> ValueDomain {
        let ty = &self.elements[&attr.type_name];
        match ty.kind {
            ElementKind::Enumeration => ValueDomain::EnumLiterals {
                literals: ty.literals.clone(),
            },
            _ => match ty.base.expect("primitive has base") {
                PrimitiveBase::Boolean => ValueDomain::EnumLiterals {
                    literals: vec!["true".into(), "false".into()],
                },
                PrimitiveBase::String => ValueDomain::FreeText { date_time: false },
                PrimitiveBase::DateTime => ValueDomain::FreeText { date_time: true },
                base => {
                    let (mut lo, mut hi) = attr.range;
                    if let Some((blo, bhi)) = base.integer_bounds() {
                        lo = Some(lo.map_or(blo, |l| l.max(blo)));
                        hi = Some(hi.map_or(bhi, |h| h.min(bhi)));
                    }
                    ValueDomain::NumericRange {
                        min: lo,
                        max: hi,
                        integer: base.integer_bounds().is_some(),
                        units: attr.units.clone(),
                    }
                }
            },
        }
    }

    /// Enumeration values checked without materializing the domain.
    fn accepts_fast(&self, attr: &AttributeDef, raw: &str) -> bool {
        let ty = &self.elements[&attr.type_name];
        ty.kind == ElementKind::Enumeration && ty.literals.iter().any(|l| l == raw)
    }

    /// Index of the child slot of `parent` that accepts an element named `child`.
    fn slot_for(&self, slots: &[&ChildDef], child: &str) -> Option<usize> {
        slots.iter().position(|c| {
            c.element == child || (self.elements.get(&c.element).is_some_and(|d| d.is_abstract) && self.is_a(child, &c.element))
        })
    }

    /// Whether `parent` may directly contain `child`.
    pub fn allows_child(&self, parent: &str, child: &str) -> bool {
        self.slot_for(&self.all_children(parent), child).is_some()
    }

    /// Validates one element subtree. `parent` is the schema name of the
    /// element it sits in, if any; containment against it is checked too.
    pub fn validate_element(&self, parent: Option<&str>, el: &Element, path: &str, report: &mut ValidationReport) {
        if let Some(p) = parent {
            if self.elements.contains_key(&el.name) && !self.allows_child(p, &el.name) {
                report.push(path, FindingKind::Containment, format!("<{}> is not allowed inside <{p}>", el.name));
            }
        }
        self.validate_subtree(el, path, report);
    }

    fn validate_subtree(&self, el: &Element, path: &str, report: &mut ValidationReport) {
        let Some(def) = self.elements.get(&el.name) else {
            report.push(path, FindingKind::UnknownElement, format!("<{}> is not in the schema subset", el.name));
            return;
        };
        if def.kind != ElementKind::Class {
            report.push(path, FindingKind::UnknownElement, format!("<{}> is a value type, not an element", el.name));
            return;
        }
        if def.is_abstract {
            report.push(path, FindingKind::AbstractElement, format!("<{}> is abstract", el.name));
        }

        let flat = &self.flat[&el.name];
        let declared = &flat.attributes;
        for (k, v) in &el.attrs {
            match declared.iter().find(|a| a.name == *k) {
                None => report.push(path, FindingKind::UnknownAttribute, format!("unknown attribute '{k}'")),
                Some(a) if self.accepts_fast(a, v) => {}
                Some(a) => {
                    let dom = self.domain_of(a);
                    if !dom.accepts(v) {
                        report.push(
                            path,
                            FindingKind::Domain,
                            format!("{}.{} = '{v}' is outside {}", el.name, k, describe_domain(&dom)),
                        );
                    }
                }
            }
        }
        for a in declared.iter().filter(|a| a.required) {
            if el.attr(&a.name).is_none() {
                report.push(path, FindingKind::MissingAttribute, format!("missing required attribute '{}'", a.name));
            }
        }
        if el.children.iter().any(|c| matches!(c, crate::xml::Node::Text(_))) {
            report.push(path, FindingKind::UnexpectedText, format!("<{}> carries text content", el.name));
        }

        let slots = &flat.children;
        let mut counts = vec![0u32; slots.len()];
        let mut last_slot = 0usize;
        let mut seen_names: HashMap<&str, usize> = HashMap::new();
        for child in el.elements() {
            let idx = seen_names.entry(child.name.as_str()).or_insert(0);
            let child_path = format!("{path}/{}[{}]", child.name, *idx);
            *idx += 1;
            match flat.slot_of.get(&child.name).copied() {
                Some(i) => {
                    counts[i] += 1;
                    if i < last_slot {
                        report.push(
                            &child_path,
                            FindingKind::Order,
                            format!("<{}> appears after <{}>", child.name, slots[last_slot].element),
                        );
                    }
                    last_slot = last_slot.max(i);
                }
                None => {
                    if self.elements.contains_key(&child.name) {
                        report.push(
                            &child_path,
                            FindingKind::Containment,
                            format!("<{}> is not allowed inside <{}>", child.name, el.name),
                        );
                    }
                }
            }
            self.validate_subtree(child, &child_path, report);
        }
        for (slot, n) in slots.iter().zip(counts) {
            let c = slot.cardinality;
            if n < c.min || c.max.is_some_and(|m| n > m) {
                report.push(
                    path,
                    FindingKind::Cardinality,
                    format!(
                        "<{}> occurs {n} times, expected {}..{}",
                        slot.element,
                        c.min,
                        c.max.map_or("*".to_string(), |m| m.to_string())
                    ),
                );
            }
        }
    }

    /// Validates a whole scenario document: structure from the root plus
    /// entity and storyboard references.
    pub fn validate_document(&self, root: &Element) -> ValidationReport {
        let mut report = ValidationReport::default();
        if root.name != self.root {
            report.push("/", FindingKind::Containment, format!("root is <{}>, expected <{}>", root.name, self.root));
        }
        let root_path = format!("/{}", root.name);
        self.validate_subtree(root, &root_path, &mut report);
        check_references(root, &mut report);
        report
    }

    /// XML Schema rendering of the catalog, for external validators.
    pub fn to_xsd(&self) -> String {
        let mut out = String::new();
        out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let _ = writeln!(out, "<!-- {} subset exported from the crashscen schema catalog -->", self.dialect);
        out.push_str("<xs:schema xmlns:xs=\"http://www.w3.org/2001/XMLSchema\" elementFormDefault=\"qualified\">\n");
        for name in &self.order {
            let def = &self.elements[name];
            if def.kind == ElementKind::Enumeration {
                let _ = writeln!(out, "  <xs:simpleType name=\"{name}\">");
                out.push_str("    <xs:restriction base=\"xs:string\">\n");
                for l in &def.literals {
                    let _ = writeln!(out, "      <xs:enumeration value=\"{l}\"/>");
                }
                out.push_str("    </xs:restriction>\n  </xs:simpleType>\n");
            }
        }
        for name in &self.order {
            let def = &self.elements[name];
            if def.kind != ElementKind::Class {
                continue;
            }
            if def.is_abstract {
                let _ = writeln!(out, "  <xs:element name=\"{name}\" abstract=\"true\"/>");
                continue;
            }
            let subst = def
                .extends
                .as_ref()
                .map(|p| format!(" substitutionGroup=\"{p}\""))
                .unwrap_or_default();
            let _ = writeln!(out, "  <xs:element name=\"{name}\" type=\"{name}_T\"{subst}/>");
            let _ = writeln!(out, "  <xs:complexType name=\"{name}_T\">");
            let children = self.all_children(name);
            if !children.is_empty() {
                out.push_str("    <xs:sequence>\n");
                for c in children {
                    let max = c.cardinality.max.map_or("unbounded".to_string(), |m| m.to_string());
                    let _ = writeln!(
                        out,
                        "      <xs:element ref=\"{}\" minOccurs=\"{}\" maxOccurs=\"{max}\"/>",
                        c.element, c.cardinality.min
                    );
                }
                out.push_str("    </xs:sequence>\n");
            }
            for a in self.all_attributes(name) {
                let usage = if a.required { "required" } else { "optional" };
                let ty = &self.elements[&a.type_name];
                if ty.kind == ElementKind::Enumeration {
                    let _ = writeln!(out, "    <xs:attribute name=\"{}\" use=\"{usage}\" type=\"{}\"/>", a.name, ty.name);
                    continue;
                }
                let base = ty.base.expect("primitive has base").xsd();
                let (lo, hi) = a.range;
                if lo.is_none() && hi.is_none() {
                    let _ = writeln!(out, "    <xs:attribute name=\"{}\" use=\"{usage}\" type=\"{base}\"/>", a.name);
                    continue;
                }
                let _ = writeln!(out, "    <xs:attribute name=\"{}\" use=\"{usage}\">", a.name);
                let _ = writeln!(out, "      <xs:simpleType><xs:restriction base=\"{base}\">");
                if let Some(lo) = lo {
                    let _ = writeln!(out, "        <xs:minInclusive value=\"{}\"/>", xsd_num(lo));
                }
                if let Some(hi) = hi {
                    let _ = writeln!(out, "        <xs:maxInclusive value=\"{}\"/>", xsd_num(hi));
                }
                out.push_str("      </xs:restriction></xs:simpleType>\n    </xs:attribute>\n");
            }
            out.push_str("  </xs:complexType>\n");
        }
        out.push_str("</xs:schema>\n");
        out
    }
}

fn xsd_num(v: f64) -> String {
    format!("{v:?}")
}

fn describe_domain(d: &ValueDomain) -> String {
    match d {
        ValueDomain::NumericRange { min, max, .. } => format!(
            "[{}, {}]",
            min.map_or("-inf".to_string(), |v| v.to_string()),
            max.map_or("inf".to_string(), |v| v.to_string())
        ),
        ValueDomain::EnumLiterals { literals } => format!("{{{}}}", literals.join(", ")),
        ValueDomain::FreeText { .. } => "a date-time".to_string(),
    }
}

fn check_references(root: &Element, report: &mut ValidationReport) {
    let mut entities = BTreeSet::new();
    if let Some(ents) = root.child("Entities") {
        for obj in ents.children_named("ScenarioObject") {
            let name = obj.attr("name").unwrap_or("");
            if !entities.insert(name.to_string()) {
                report.push("/OpenSCENARIO/Entities", FindingKind::Reference, format!("duplicate entity name '{name}'"));
            }
        }
    }
    let mut storyboard_names: BTreeMap<&'static str, BTreeSet<String>> = BTreeMap::new();
    let kinds = [
        ("Story", "story"),
        ("Act", "act"),
        ("ManeuverGroup", "maneuverGroup"),
        ("Maneuver", "maneuver"),
        ("Event", "event"),
        ("Action", "action"),
    ];
    let all = root.descendants();
    for el in &all {
        if let Some((_, k)) = kinds.iter().find(|(tag, _)| *tag == el.name) {
            if let Some(n) = el.attr("name") {
                if !storyboard_names.entry(k).or_default().insert(n.to_string()) && *k == "event" {
                    report.push("/OpenSCENARIO/Storyboard", FindingKind::Reference, format!("duplicate event name '{n}'"));
                }
            }
        }
    }
    for el in &all {
        let entity_ref = match el.name.as_str() {
            "Private" | "EntityRef" => el.attr("entityRef"),
            _ => None,
        };
        if let Some(r) = entity_ref {
            if !entities.contains(r) {
                report.push(&el.name, FindingKind::Reference, format!("entityRef '{r}' names no ScenarioObject"));
            }
        }
        if el.name == "StoryboardElementStateCondition" {
            let ty = el.attr("storyboardElementType").unwrap_or("");
            let r = el.attr("storyboardElementRef").unwrap_or("");
            let known = storyboard_names.get(ty).is_some_and(|s| s.contains(r));
            if !known {
                report.push(&el.name, FindingKind::Reference, format!("storyboard {ty} '{r}' does not exist"));
            }
        }
    }
}

/// Validates every part of a block against the element its slot sits in.
pub fn validate_block(schema: &SchemaGraph, block: &ScenarioBlock) -> ValidationReport {
    let mut report = ValidationReport::default();
    for part in &block.parts {
        let parent = part.slot.parent_element();
        let path = format!("{}/{}", part.slot.label(), part.element.name);
        schema.validate_element(Some(parent), &part.element, &path, &mut report);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_loads() {
        let s = builtin_schema();
        assert!(s.elements.len() > 50);
        assert!(s.is_a("SpeedActionDynamics", "TransitionDynamics"));
        assert!(s.allows_child("ScenarioObject", "Vehicle"));
        assert!(!s.allows_child("Entities", "Event"));
    }

    #[test]
    fn domain_accepts() {
        let d = ValueDomain::NumericRange {
            min: Some(0.0),
            max: Some(1.0),
            integer: false,
            units: None,
        };
        assert!(d.accepts("0.5") && d.accepts("1") && !d.accepts("1.01") && !d.accepts("NaN") && !d.accepts("x"));
        assert!(is_date_time("2024-01-01T00:00:00"));
        assert!(!is_date_time("2024-01-01"));
    }

    #[test]
    fn integer_domain_from_base() {
        let s = builtin_schema();
        let d = attribute_domain(s, "ManeuverGroup", "maximumExecutionCount").unwrap();
        assert!(d.accepts("1") && !d.accepts("-1") && !d.accepts("1.5"));
    }
}
