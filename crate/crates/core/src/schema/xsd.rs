//! Loader for the subset of XML Schema used by mission plan schemas.
//!
//! Supported: global `element`, named `complexType`/`simpleType`/`group`,
//! `sequence` and `choice` with `minOccurs`/`maxOccurs`, local and `ref`
//! element particles, `attribute` with `use="required"`, and `restriction`
//! over `xs:string`, `xs:decimal`, `xs:integer` or `xs:boolean` with the
//! `enumeration`, `minInclusive`, `maxInclusive`, `minLength` and
//! `maxLength` facets. Two extensions live in `xs:appinfo`:
//! `<mp:taskPool/>` marks the enumeration holding the robot's atomic action
//! pool and `<mp:requires param="..."/>` on an enumeration value lists the
//! sibling attributes that value needs.

use std::collections::{BTreeSet, HashMap};

use roxmltree::{Document, Node};

pub const XS_NS: &str = "http://www.w3.org/2001/XMLSchema";

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("schema is not well-formed XML: {0}")]
    Malformed(String),
    #[error("schema root must be xs:schema")]
    NotASchema,
    #[error("unsupported schema construct <xs:{0}>")]
    Unsupported(String),
    #[error("schema element <xs:{element}> lacks attribute \"{attribute}\"")]
    MissingAttribute { element: String, attribute: String },
    #[error("invalid value \"{value}\" for schema attribute \"{attribute}\"")]
    BadAttribute { attribute: String, value: String },
    #[error("unresolved reference to {kind} \"{name}\"")]
    Unresolved { kind: &'static str, name: String },
    #[error("schema declares no global element")]
    NoRootElement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    String,
    Decimal,
    Integer,
    Boolean,
}

impl Builtin {
    fn from_qname(name: &str) -> Option<Self> {
        match name.strip_prefix("xs:").or_else(|| name.strip_prefix("xsd:"))? {
            "string" => Some(Self::String),
            "decimal" => Some(Self::Decimal),
            "integer" => Some(Self::Integer),
            "boolean" => Some(Self::Boolean),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumValue {
    pub value: String,
    pub requires: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimpleType {
    pub base: String,
    pub enumeration: Option<Vec<EnumValue>>,
    pub min_inclusive: Option<f64>,
    pub max_inclusive: Option<f64>,
    pub min_length: Option<usize>,
    pub max_length: Option<usize>,
    pub task_pool: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TypeRef {
    Named(String),
    InlineComplex(Box<ComplexType>),
    InlineSimple(Box<SimpleType>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementDecl {
    pub name: String,
    pub ty: TypeRef,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Element(ElementDecl),
    ElementRef(String),
    Sequence(Vec<Particle>),
    Choice(Vec<Particle>),
    Group(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub term: Term,
    pub min: usize,
    /// `None` means unbounded.
    pub max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeDecl {
    pub name: String,
    pub ty: TypeRef,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComplexType {
    pub content: Option<Particle>,
    pub attributes: Vec<AttributeDecl>,
}

/// A loaded plan schema.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaDoc {
    pub(crate) elements: Vec<ElementDecl>,
    pub(crate) complex_types: HashMap<String, ComplexType>,
    pub(crate) simple_types: HashMap<String, SimpleType>,
    pub(crate) groups: HashMap<String, Particle>,
}

/// Resolved view of a type reference.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Resolved<'a> {
    Builtin(Builtin),
    Simple(&'a SimpleType),
    Complex(&'a ComplexType),
}

const BUILTIN_SCHEMA: &str = include_str!("../../schema/mission_plan.xsd");

impl SchemaDoc {
    /// The mission plan schema shipped with this crate.
    pub fn builtin() -> &'static SchemaDoc {
        static SCHEMA: std::sync::OnceLock<SchemaDoc> = std::sync::OnceLock::new();
        SCHEMA.get_or_init(|| SchemaDoc::parse(BUILTIN_SCHEMA).expect("shipped schema is valid"))
    }

    pub fn builtin_text() -> &'static str {
        BUILTIN_SCHEMA
    }

    pub fn parse(text: &str) -> Result<SchemaDoc, SchemaError> {
        let doc = Document::parse(text).map_err(|e| SchemaError::Malformed(e.to_string()))?;
        let root = doc.root_element();
        if !is_xs(root, "schema") {
            return Err(SchemaError::NotASchema);
        }
        let mut schema = SchemaDoc {
            elements: Vec::new(),
            complex_types: HashMap::new(),
            simple_types: HashMap::new(),
            groups: HashMap::new(),
        };
        for child in xs_children(root) {
            match child.tag_name().name() {
                "element" => schema.elements.push(parse_element_decl(child)?),
                "complexType" => {
                    let name = required_attr(child, "name")?;
                    schema.complex_types.insert(name, parse_complex_type(child)?);
                }
                "simpleType" => {
                    let name = required_attr(child, "name")?;
                    schema.simple_types.insert(name, parse_simple_type(child)?);
                }
                "group" => {
                    let name = required_attr(child, "name")?;
                    let body = xs_children(child)
                        .find(|n| matches!(n.tag_name().name(), "sequence" | "choice"))
                        .ok_or_else(|| SchemaError::MissingAttribute {
                            element: "group".into(),
                            attribute: "sequence|choice".into(),
                        })?;
                    schema.groups.insert(name, parse_particle(body)?);
                }
                "annotation" => {}
                other => return Err(SchemaError::Unsupported(other.to_string())),
            }
        }
        if schema.elements.is_empty() {
            return Err(SchemaError::NoRootElement);
        }
        schema.check_references()?;
        Ok(schema)
    }

    pub(crate) fn global_element(&self, name: &str) -> Option<&ElementDecl> {
        self.elements.iter().find(|e| e.name == name)
    }

    pub(crate) fn resolve<'a>(&'a self, ty: &'a TypeRef) -> Option<Resolved<'a>> {
        match ty {
            TypeRef::InlineComplex(c) => Some(Resolved::Complex(c)),
            TypeRef::InlineSimple(s) => Some(Resolved::Simple(s)),
            TypeRef::Named(name) => self.resolve_name(name),
        }
    }

    pub(crate) fn resolve_name(&self, name: &str) -> Option<Resolved<'_>> {
        if let Some(b) = Builtin::from_qname(name) {
            return Some(Resolved::Builtin(b));
        }
        if let Some(c) = self.complex_types.get(name) {
            return Some(Resolved::Complex(c));
        }
        self.simple_types.get(name).map(Resolved::Simple)
    }

    /// Builtin a simple type ultimately restricts, following named bases.
    pub(crate) fn builtin_base(&self, ty: &SimpleType) -> Option<Builtin> {
        let mut base = ty.base.as_str();
        for _ in 0..32 {
            match self.resolve_name(base)? {
                Resolved::Builtin(b) => return Some(b),
                Resolved::Simple(s) => base = &s.base,
                Resolved::Complex(_) => return None,
            }
        }
        None
    }

    /// Every element name declared anywhere in the schema.
    pub(crate) fn declared_names(&self) -> BTreeSet<&str> {
        let mut names = BTreeSet::new();
        fn walk<'a>(p: &'a Particle, names: &mut BTreeSet<&'a str>) {
            match &p.term {
                Term::Element(e) => {
                    names.insert(e.name.as_str());
                    if let TypeRef::InlineComplex(c) = &e.ty {
                        if let Some(p) = &c.content {
                            walk(p, names);
                        }
                    }
                }
                Term::Sequence(ps) | Term::Choice(ps) => ps.iter().for_each(|p| walk(p, names)),
                Term::ElementRef(_) | Term::Group(_) => {}
            }
        }
        for e in &self.elements {
            names.insert(e.name.as_str());
            if let TypeRef::InlineComplex(c) = &e.ty {
                if let Some(p) = &c.content {
                    walk(p, &mut names);
                }
            }
        }
        for c in self.complex_types.values() {
            if let Some(p) = &c.content {
                walk(p, &mut names);
            }
        }
        for p in self.groups.values() {
            walk(p, &mut names);
        }
        names
    }

    /// Values of the enumeration marked as the task pool.
    pub fn task_pool(&self) -> Vec<&str> {
        let mut pool: Vec<&str> = self
            .simple_types
            .values()
            .filter(|t| t.task_pool)
            .flat_map(|t| t.enumeration.iter().flatten().map(|v| v.value.as_str()))
            .collect();
        pool.sort_unstable();
        pool
    }

    fn check_references(&self) -> Result<(), SchemaError> {
        let check_type = |ty: &TypeRef| -> Result<(), SchemaError> {
            match ty {
                TypeRef::Named(n) if self.resolve_name(n).is_none() => {
                    Err(SchemaError::Unresolved { kind: "type", name: n.clone() })
                }
                TypeRef::InlineSimple(s) => self.check_simple(s),
                _ => Ok(()),
            }
        };
        let mut pending: Vec<&Particle> = Vec::new();
        let mut complex: Vec<&ComplexType> = self.complex_types.values().collect();
        for e in &self.elements {
            check_type(&e.ty)?;
            if let TypeRef::InlineComplex(c) = &e.ty {
                complex.push(c);
            }
        }
        for s in self.simple_types.values() {
            self.check_simple(s)?;
        }
        pending.extend(self.groups.values());
        while let Some(c) = complex.pop() {
            for a in &c.attributes {
                check_type(&a.ty)?;
                if let Some(Resolved::Complex(_)) = self.resolve(&a.ty) {
                    return Err(SchemaError::BadAttribute {
                        attribute: a.name.clone(),
                        value: "complex attribute type".into(),
                    });
                }
            }
            if let Some(p) = &c.content {
                pending.push(p);
            }
            while let Some(p) = pending.pop() {
                match &p.term {
                    Term::Element(e) => {
                        check_type(&e.ty)?;
                        if let TypeRef::InlineComplex(c) = &e.ty {
                            complex.push(c);
                        }
                    }
                    Term::ElementRef(n) if self.global_element(n).is_none() => {
                        return Err(SchemaError::Unresolved { kind: "element", name: n.clone() })
                    }
                    Term::Group(n) if !self.groups.contains_key(n) => {
                        return Err(SchemaError::Unresolved { kind: "group", name: n.clone() })
                    }
                    Term::Sequence(ps) | Term::Choice(ps) => pending.extend(ps),
                    _ => {}
                }
            }
        }
        Ok(())
    }

    fn check_simple(&self, s: &SimpleType) -> Result<(), SchemaError> {
        if self.builtin_base(s).is_none() {
            return Err(SchemaError::Unresolved { kind: "simple base type", name: s.base.clone() });
        }
        Ok(())
    }
}

fn is_xs(node: Node, name: &str) -> bool {
    node.is_element() && node.tag_name().name() == name && node.tag_name().namespace() == Some(XS_NS)
}

fn xs_children<'a, 'i>(node: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children()
        .filter(|n| n.is_element() && n.tag_name().namespace() == Some(XS_NS))
}

fn required_attr(node: Node, name: &str) -> Result<String, SchemaError> {
    node.attribute(name).map(str::to_string).ok_or_else(|| SchemaError::MissingAttribute {
        element: node.tag_name().name().to_string(),
        attribute: name.to_string(),
    })
}

fn occurs(node: Node) -> Result<(usize, Option<usize>), SchemaError> {
    let parse = |attr: &str, v: &str| {
        v.parse::<usize>().map_err(|_| SchemaError::BadAttribute {
            attribute: attr.to_string(),
            value: v.to_string(),
        })
    };
    let min = node.attribute("minOccurs").map(|v| parse("minOccurs", v)).transpose()?.unwrap_or(1);
    let max = match node.attribute("maxOccurs") {
        None => Some(1),
        Some("unbounded") => None,
        Some(v) => Some(parse("maxOccurs", v)?),
    };
    if max.is_some_and(|m| m < min) {
        return Err(SchemaError::BadAttribute {
            attribute: "maxOccurs".into(),
            value: format!("{max:?} < minOccurs {min}"),
        });
    }
    Ok((min, max))
}

fn parse_element_decl(node: Node) -> Result<ElementDecl, SchemaError> {
    let name = required_attr(node, "name")?;
    let ty = if let Some(t) = node.attribute("type") {
        TypeRef::Named(t.to_string())
    } else if let Some(c) = xs_children(node).find(|n| n.tag_name().name() == "complexType") {
        TypeRef::InlineComplex(Box::new(parse_complex_type(c)?))
    } else if let Some(s) = xs_children(node).find(|n| n.tag_name().name() == "simpleType") {
        TypeRef::InlineSimple(Box::new(parse_simple_type(s)?))
    } else {
        TypeRef::Named("xs:string".into())
    };
    Ok(ElementDecl { name, ty })
}

fn parse_particle(node: Node) -> Result<Particle, SchemaError> {
    let (min, max) = occurs(node)?;
    let term = match node.tag_name().name() {
        "element" => match node.attribute("ref") {
            Some(r) => Term::ElementRef(r.to_string()),
            None => Term::Element(parse_element_decl(node)?),
        },
        "sequence" | "choice" => {
            let parts = xs_children(node)
                .filter(|n| n.tag_name().name() != "annotation")
                .map(parse_particle)
                .collect::<Result<Vec<_>, _>>()?;
            if node.tag_name().name() == "sequence" {
                Term::Sequence(parts)
            } else {
                Term::Choice(parts)
            }
        }
        "group" => Term::Group(required_attr(node, "ref")?),
        other => return Err(SchemaError::Unsupported(other.to_string())),
    };
    Ok(Particle { term, min, max })
}

fn parse_complex_type(node: Node) -> Result<ComplexType, SchemaError> {
    let mut ty = ComplexType::default();
    for child in xs_children(node) {
        match child.tag_name().name() {
            "sequence" | "choice" | "group" => {
                if ty.content.is_some() {
                    return Err(SchemaError::Unsupported("multiple content models".into()));
                }
                ty.content = Some(parse_particle(child)?);
            }
            "attribute" => {
                let name = required_attr(child, "name")?;
                let required = match child.attribute("use") {
                    None | Some("optional") => false,
                    Some("required") => true,
                    Some(v) => {
                        return Err(SchemaError::BadAttribute { attribute: "use".into(), value: v.into() })
                    }
                };
                let ty_ref = match child.attribute("type") {
                    Some(t) => TypeRef::Named(t.to_string()),
                    None => match xs_children(child).find(|n| n.tag_name().name() == "simpleType") {
                        Some(s) => TypeRef::InlineSimple(Box::new(parse_simple_type(s)?)),
                        None => TypeRef::Named("xs:string".into()),
                    },
                };
                ty.attributes.push(AttributeDecl { name, ty: ty_ref, required });
            }
            "annotation" => {}
            other => return Err(SchemaError::Unsupported(other.to_string())),
        }
    }
    Ok(ty)
}

fn appinfo_children<'a, 'i>(node: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    xs_children(node)
        .filter(|n| n.tag_name().name() == "annotation")
        .flat_map(xs_children)
        .filter(|n| n.tag_name().name() == "appinfo")
        .flat_map(|n| n.children().filter(|c| c.is_element()))
}

fn parse_simple_type(node: Node) -> Result<SimpleType, SchemaError> {
    let task_pool = appinfo_children(node).any(|n| n.tag_name().name() == "taskPool");
    let restriction = xs_children(node)
        .find(|n| n.tag_name().name() == "restriction")
        .ok_or_else(|| SchemaError::Unsupported("simpleType without restriction".into()))?;
    let mut ty = SimpleType {
        base: required_attr(restriction, "base")?,
        enumeration: None,
        min_inclusive: None,
        max_inclusive: None,
        min_length: None,
        max_length: None,
        task_pool,
    };
    let number = |n: Node, facet: &str| -> Result<f64, SchemaError> {
        let v = required_attr(n, "value")?;
        v.trim().parse::<f64>().map_err(|_| SchemaError::BadAttribute { attribute: facet.into(), value: v })
    };
    for facet in xs_children(restriction) {
        let name = facet.tag_name().name();
        match name {
            "enumeration" => {
                let requires = appinfo_children(facet)
                    .filter(|n| n.tag_name().name() == "requires")
                    .map(|n| {
                        n.attribute("param").map(str::to_string).ok_or_else(|| {
                            SchemaError::MissingAttribute { element: "requires".into(), attribute: "param".into() }
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                ty.enumeration.get_or_insert_with(Vec::new).push(EnumValue {
                    value: required_attr(facet, "value")?,
                    requires,
                });
            }
            "minInclusive" => ty.min_inclusive = Some(number(facet, name)?),
            "maxInclusive" => ty.max_inclusive = Some(number(facet, name)?),
            "minLength" => ty.min_length = Some(number(facet, name)? as usize),
            "maxLength" => ty.max_length = Some(number(facet, name)? as usize),
            "annotation" => {}
            other => return Err(SchemaError::Unsupported(other.to_string())),
        }
    }
    Ok(ty)
}
