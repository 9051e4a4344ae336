//! Instance validation against a [`SchemaDoc`], reporting every violation
//! with the path of the offending element.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use roxmltree::{Document, Node};
use serde::{Deserialize, Serialize};

use super::xsd::{Builtin, ComplexType, ElementDecl, Particle, Resolved, SchemaDoc, SimpleType, Term};

/// Maximum element nesting accepted before validation gives up on a subtree.
pub const MAX_DEPTH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    MalformedXml,
    UnknownElement,
    UnexpectedElement,
    MissingElement,
    MissingAttr,
    UnknownAttr,
    InvalidValue,
    UnknownTask,
    MissingParam,
    UnexpectedText,
    TooDeep,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::MalformedXml => "MALFORMED_XML",
            Self::UnknownElement => "UNKNOWN_ELEMENT",
            Self::UnexpectedElement => "UNEXPECTED_ELEMENT",
            Self::MissingElement => "MISSING_ELEMENT",
            Self::MissingAttr => "MISSING_ATTR",
            Self::UnknownAttr => "UNKNOWN_ATTR",
            Self::InvalidValue => "INVALID_VALUE",
            Self::UnknownTask => "UNKNOWN_TASK",
            Self::MissingParam => "MISSING_PARAM",
            Self::UnexpectedText => "UNEXPECTED_TEXT",
            Self::TooDeep => "TOO_DEEP",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationError {
    pub path: String,
    pub code: ErrorCode,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.path, self.code, self.message)
    }
}

/// Outcome of [`validate`]. Empty means the document is schema-valid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<ValidationError>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn codes(&self) -> Vec<ErrorCode> {
        self.errors.iter().map(|e| e.code).collect()
    }

    fn push(&mut self, path: &str, code: ErrorCode, message: impl Into<String>) {
        self.errors.push(ValidationError { path: path.to_string(), code, message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.errors.is_empty() {
            return f.write_str("valid");
        }
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

pub(crate) fn parse_options() -> roxmltree::ParsingOptions {
    roxmltree::ParsingOptions { allow_dtd: false, nodes_limit: 1 << 20 }
}

/// Validates `xml_text` against `schema`. Malformed XML is reported as a
/// single `MALFORMED_XML` entry.
pub fn validate(xml_text: &str, schema: &SchemaDoc) -> ValidationReport {
    match Document::parse_with_options(xml_text, parse_options()) {
        Ok(doc) => validate_document(&doc, schema),
        Err(e) => {
            let mut report = ValidationReport::default();
            report.push("/", ErrorCode::MalformedXml, e.to_string());
            report
        }
    }
}

pub(crate) fn validate_document(doc: &Document, schema: &SchemaDoc) -> ValidationReport {
    let mut v = Validator { schema, report: ValidationReport::default(), declared: schema.declared_names() };
    let root = doc.root_element();
    let path = format!("/{}", root.tag_name().name());
    match schema.global_element(root.tag_name().name()) {
        Some(decl) if root.tag_name().namespace().is_none() => v.element(root, decl, &path, 0),
        _ => v.report.push(
            &path,
            ErrorCode::UnknownElement,
            format!("root element <{}> is not declared by the schema", qualified(root)),
        ),
    }
    v.report
}

fn qualified(node: Node) -> String {
    match node.tag_name().namespace() {
        Some(ns) => format!("{{{ns}}}{}", node.tag_name().name()),
        None => node.tag_name().name().to_string(),
    }
}

/// Child paths in XPath style; the `[k]` suffix appears only when siblings
/// share the name.
pub(crate) fn child_paths(parent_path: &str, children: &[Node]) -> Vec<String> {
    let mut totals: HashMap<&str, usize> = HashMap::new();
    for c in children {
        *totals.entry(c.tag_name().name()).or_default() += 1;
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    children
        .iter()
        .map(|c| {
            let name = c.tag_name().name();
            let k = seen.entry(name).or_default();
            *k += 1;
            if totals[name] > 1 {
                format!("{parent_path}/{name}[{k}]")
            } else {
                format!("{parent_path}/{name}")
            }
        })
        .collect()
}

struct Validator<'s> {
    schema: &'s SchemaDoc,
    report: ValidationReport,
    declared: BTreeSet<&'s str>,
}

impl<'s> Validator<'s> {
    fn element(&mut self, node: Node, decl: &'s ElementDecl, path: &str, depth: usize) {
        if depth >= MAX_DEPTH {
            self.report.push(path, ErrorCode::TooDeep, format!("nesting exceeds {MAX_DEPTH} levels"));
            return;
        }
        let Some(resolved) = self.schema.resolve(&decl.ty) else {
            // check_references guarantees resolution for loaded schemas.
            self.report.push(path, ErrorCode::InvalidValue, "element type cannot be resolved");
            return;
        };
        match resolved {
            Resolved::Complex(ty) => self.complex(node, ty, path, depth),
            simple => {
                for attr in node.attributes() {
                    self.report.push(
                        path,
                        ErrorCode::UnknownAttr,
                        format!("attribute \"{}\" is not allowed on <{}>", attr.name(), decl.name),
                    );
                }
                let children: Vec<Node> = node.children().filter(|c| c.is_element()).collect();
                let paths = child_paths(path, &children);
                for p in &paths {
                    self.report.push(
                        p,
                        ErrorCode::UnexpectedElement,
                        format!("<{}> has text-only content", decl.name),
                    );
                }
                let text: String = node.children().filter(|c| c.is_text()).filter_map(|c| c.text()).collect();
                if let Err(msg) = self.check_simple_value(simple, &text) {
                    self.report.push(path, ErrorCode::InvalidValue, format!("content of <{}>: {msg}", decl.name));
                }
            }
        }
    }

    fn complex(&mut self, node: Node, ty: &'s ComplexType, path: &str, depth: usize) {
        let name = node.tag_name().name();

        for attr in node.attributes() {
            let decl = attr
                .namespace()
                .is_none()
                .then(|| ty.attributes.iter().find(|a| a.name == attr.name()))
                .flatten();
            let Some(decl) = decl else {
                self.report.push(
                    path,
                    ErrorCode::UnknownAttr,
                    format!("attribute \"{}\" is not allowed on <{name}>", attr.name()),
                );
                continue;
            };
            let Some(resolved) = self.schema.resolve(&decl.ty) else { continue };
            match self.check_simple_value(resolved, attr.value()) {
                Ok(()) => {
                    if let Resolved::Simple(st) = resolved {
                        self.check_requires(node, st, attr.value(), path);
                    }
                }
                Err(msg) => {
                    let is_pool = matches!(resolved, Resolved::Simple(st) if st.task_pool);
                    let code = if is_pool { ErrorCode::UnknownTask } else { ErrorCode::InvalidValue };
                    let message = if is_pool {
                        format!("task type \"{}\" is not in the robot task pool", attr.value())
                    } else {
                        format!("attribute \"{}\": {msg}", decl.name)
                    };
                    self.report.push(path, code, message);
                }
            }
        }
        for decl in ty.attributes.iter().filter(|a| a.required) {
            if node.attribute(decl.name.as_str()).is_none() {
                self.report.push(
                    path,
                    ErrorCode::MissingAttr,
                    format!("<{name}> is missing required attribute \"{}\"", decl.name),
                );
            }
        }

        if node.children().any(|c| c.is_text() && c.text().is_some_and(|t| !t.trim().is_empty())) {
            self.report.push(path, ErrorCode::UnexpectedText, format!("<{name}> does not allow text content"));
        }

        let children: Vec<Node> = node.children().filter(|c| c.is_element()).collect();
        let paths = child_paths(path, &children);
        let names: Vec<&str> = children.iter().map(|c| c.tag_name().name()).collect();

        let Some(content) = &ty.content else {
            for (c, p) in children.iter().zip(&paths) {
                self.report_stray(*c, p, name);
            }
            return;
        };

        let mut matcher = Matcher { schema: self.schema, names: &names, furthest: 0 };
        let accepted = matcher.ends(content, 0).contains(&names.len());
        let mut divergence = None;
        if !accepted {
            if matcher.furthest < names.len() {
                divergence = Some(matcher.furthest);
                self.report_stray(children[matcher.furthest], &paths[matcher.furthest], name);
            } else {
                let expected = self.expected_after(content, &names);
                let list = expected.iter().map(|n| format!("<{n}>")).collect::<Vec<_>>().join(", ");
                self.report.push(
                    path,
                    ErrorCode::MissingElement,
                    format!("<{name}> is incomplete; expected {list}"),
                );
            }
        }

        for (i, (child, child_path)) in children.iter().zip(&paths).enumerate() {
            if child.tag_name().namespace().is_some() {
                if divergence != Some(i) {
                    self.report_stray(*child, child_path, name);
                }
                continue;
            }
            match self.find_decl(content, child.tag_name().name(), 0) {
                Some(decl) => self.element(*child, decl, child_path, depth + 1),
                None if divergence != Some(i) => self.report_stray(*child, child_path, name),
                None => {}
            }
        }
    }

    fn report_stray(&mut self, child: Node, path: &str, parent: &str) {
        let child_name = child.tag_name().name();
        if child.tag_name().namespace().is_none() && self.declared.contains(child_name) {
            self.report.push(
                path,
                ErrorCode::UnexpectedElement,
                format!("<{child_name}> is not allowed here inside <{parent}>"),
            );
        } else {
            self.report.push(
                path,
                ErrorCode::UnknownElement,
                format!("unknown element <{}>", qualified(child)),
            );
        }
    }

    /// Names that would let the content model make progress after `names`.
    fn expected_after(&self, content: &'s Particle, names: &[&str]) -> Vec<&'s str> {
        let mut candidates: Vec<&'s str> = Vec::new();
        self.collect_names(content, &mut candidates, 0);
        candidates.sort_unstable();
        candidates.dedup();
        candidates
            .into_iter()
            .filter(|cand| {
                let mut extended = names.to_vec();
                extended.push(cand);
                let mut m = Matcher { schema: self.schema, names: &extended, furthest: 0 };
                m.ends(content, 0);
                m.furthest == extended.len()
            })
            .collect()
    }

    fn collect_names(&self, p: &'s Particle, out: &mut Vec<&'s str>, depth: usize) {
        if depth > 32 {
            return;
        }
        match &p.term {
            Term::Element(e) => out.push(&e.name),
            Term::ElementRef(r) => out.push(r),
            Term::Sequence(ps) | Term::Choice(ps) => ps.iter().for_each(|q| self.collect_names(q, out, depth + 1)),
            Term::Group(g) => {
                if let Some(q) = self.schema.groups.get(g) {
                    self.collect_names(q, out, depth + 1);
                }
            }
        }
    }

    fn find_decl(&self, p: &'s Particle, name: &str, depth: usize) -> Option<&'s ElementDecl> {
        if depth > 32 {
            return None;
        }
        match &p.term {
            Term::Element(e) => (e.name == name).then_some(e),
            Term::ElementRef(r) => (r == name).then(|| self.schema.global_element(r)).flatten(),
            Term::Sequence(ps) | Term::Choice(ps) => ps.iter().find_map(|q| self.find_decl(q, name, depth + 1)),
            Term::Group(g) => self.schema.groups.get(g).and_then(|q| self.find_decl(q, name, depth + 1)),
        }
    }

    fn check_requires(&mut self, node: Node, ty: &SimpleType, value: &str, path: &str) {
        let Some(values) = &ty.enumeration else { return };
        let Some(entry) = values.iter().find(|v| v.value == value) else { return };
        for param in &entry.requires {
            if node.attribute(param.as_str()).is_none() {
                self.report.push(
                    path,
                    ErrorCode::MissingParam,
                    format!("task type \"{value}\" requires attribute \"{param}\""),
                );
            }
        }
    }

    fn check_simple_value(&self, ty: Resolved, value: &str) -> Result<(), String> {
        match ty {
            Resolved::Builtin(b) => check_builtin(b, value).map(|_| ()),
            Resolved::Complex(_) => Err("complex type used for a simple value".into()),
            Resolved::Simple(st) => {
                // Base facets first, then this type's own.
                if let Some(base) = self.schema.resolve_name(&st.base) {
                    self.check_simple_value(base, value)?;
                }
                let builtin = self.schema.builtin_base(st).ok_or("unresolvable base type")?;
                let number = check_builtin(builtin, value)?;
                let lexical = if builtin == Builtin::String { value } else { value.trim() };
                if let Some(values) = &st.enumeration {
                    let hit = values.iter().any(|v| match (builtin, number) {
                        (Builtin::Decimal | Builtin::Integer, Some(n)) => {
                            v.value.trim().parse::<f64>().is_ok_and(|e| e == n)
                        }
                        _ => v.value == lexical,
                    });
                    if !hit {
                        return Err(format!("\"{value}\" is not one of the allowed values"));
                    }
                }
                if let Some(n) = number {
                    if st.min_inclusive.is_some_and(|m| n < m) {
                        return Err(format!("{value} is below the minimum {}", st.min_inclusive.unwrap()));
                    }
                    if st.max_inclusive.is_some_and(|m| n > m) {
                        return Err(format!("{value} is above the maximum {}", st.max_inclusive.unwrap()));
                    }
                }
                let len = lexical.chars().count();
                if st.min_length.is_some_and(|m| len < m) {
                    return Err(format!("value must have at least {} characters", st.min_length.unwrap()));
                }
                if st.max_length.is_some_and(|m| len > m) {
                    return Err(format!("value must have at most {} characters", st.max_length.unwrap()));
                }
                Ok(())
            }
        }
    }
}

/// Checks the lexical form; numeric types also return their value.
pub(crate) fn check_builtin(b: Builtin, value: &str) -> Result<Option<f64>, String> {
    let v = value.trim();
    match b {
        Builtin::String => Ok(None),
        Builtin::Boolean => match v {
            "true" | "false" | "1" | "0" => Ok(None),
            _ => Err(format!("\"{value}\" is not a boolean")),
        },
        Builtin::Decimal | Builtin::Integer => {
            let body = v.strip_prefix(['+', '-']).unwrap_or(v);
            let (int, frac) = match body.split_once('.') {
                Some((i, f)) if b == Builtin::Decimal => (i, Some(f)),
                Some(_) => return Err(format!("\"{value}\" is not an integer")),
                None => (body, None),
            };
            let digits = |s: &str| s.bytes().all(|c| c.is_ascii_digit());
            let ok = digits(int)
                && frac.map_or(true, digits)
                && (!int.is_empty() || frac.is_some_and(|f| !f.is_empty()));
            if !ok {
                let kind = if b == Builtin::Decimal { "decimal" } else { "integer" };
                return Err(format!("\"{value}\" is not a valid {kind}"));
            }
            let n: f64 = v.parse().map_err(|_| format!("\"{value}\" is not a number"))?;
            if !n.is_finite() {
                return Err(format!("\"{value}\" is out of numeric range"));
            }
            Ok(Some(n))
        }
    }
}

/// Content-model matcher over child element names. Tracks the furthest
/// position any partial match reached for diagnostics.
struct Matcher<'a, 's> {
    schema: &'s SchemaDoc,
    names: &'a [&'a str],
    furthest: usize,
}

impl Matcher<'_, '_> {
    fn ends(&mut self, p: &Particle, pos: usize) -> BTreeSet<usize> {
        self.ends_depth(p, pos, 0)
    }

    fn ends_depth(&mut self, p: &Particle, pos: usize, depth: usize) -> BTreeSet<usize> {
        let mut result = BTreeSet::new();
        if depth > 32 {
            return result;
        }
        let mut frontier = BTreeSet::from([pos]);
        if p.min == 0 {
            result.insert(pos);
        }
        let limit = p.max.unwrap_or(usize::MAX).min(self.names.len() + 1);
        let mut seen = BTreeSet::new();
        for count in 1..=limit {
            let mut next = BTreeSet::new();
            for &start in &frontier {
                next.extend(self.term_ends(&p.term, start, depth));
            }
            if next.is_empty() {
                break;
            }
            if count >= p.min {
                result.extend(next.iter().copied());
            }
            if count >= p.min && next.is_subset(&seen) {
                break;
            }
            seen.extend(next.iter().copied());
            frontier = next;
        }
        result
    }

    fn term_ends(&mut self, term: &Term, pos: usize, depth: usize) -> BTreeSet<usize> {
        let single = |name: &str, this: &mut Self| {
            if this.names.get(pos) == Some(&name) {
                this.furthest = this.furthest.max(pos + 1);
                BTreeSet::from([pos + 1])
            } else {
                BTreeSet::new()
            }
        };
        match term {
            Term::Element(e) => single(&e.name, self),
            Term::ElementRef(r) => single(r, self),
            Term::Sequence(parts) => {
                let mut frontier = BTreeSet::from([pos]);
                for part in parts {
                    let mut next = BTreeSet::new();
                    for &start in &frontier {
                        next.extend(self.ends_depth(part, start, depth + 1));
                    }
                    frontier = next;
                    if frontier.is_empty() {
                        break;
                    }
                }
                frontier
            }
            Term::Choice(parts) => {
                let mut all = BTreeSet::new();
                for part in parts {
                    all.extend(self.ends_depth(part, pos, depth + 1));
                }
                all
            }
            Term::Group(g) => match self.schema.groups.get(g) {
                Some(body) => {
                    let body = body.clone();
                    self.ends_depth(&body, pos, depth + 1)
                }
                None => BTreeSet::new(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(body: &str) -> String {
        format!(
            r#"<MissionPlan name="t"><Metadata><Rationale>r</Rationale></Metadata><BehaviorTree>{body}</BehaviorTree></MissionPlan>"#
        )
    }

    fn report(body: &str) -> ValidationReport {
        validate(&plan(body), SchemaDoc::builtin())
    }

    #[test]
    fn valid_minimal_plan() {
        let r = report(
            r#"<Sequence><Task type="navigate_to_tree" tree_id="t1"/><Task type="take_picture"/><Task type="return_home"/></Sequence>"#,
        );
        assert!(r.is_valid(), "{r}");
    }

    #[test]
    fn unknown_task_type() {
        let r = report(r#"<Sequence><Task type="take_picture"/><Task type="fly_drone"/></Sequence>"#);
        assert_eq!(r.codes(), vec![ErrorCode::UnknownTask]);
        assert_eq!(r.errors[0].path, "/MissionPlan/BehaviorTree/Sequence/Task[2]");
    }

    #[test]
    fn missing_threshold_named() {
        let r = report(r#"<Condition sensor="measure_co2" operator="lt"><Then><Task type="take_picture"/></Then></Condition>"#);
        assert_eq!(r.codes(), vec![ErrorCode::MissingAttr]);
        assert!(r.errors[0].message.contains("threshold"));
        assert_eq!(r.errors[0].path, "/MissionPlan/BehaviorTree/Condition");
    }

    #[test]
    fn missing_param_path() {
        let r = report(r#"<Sequence><Task type="navigate_to_tree"/><Task type="take_picture"/></Sequence>"#);
        assert_eq!(r.codes(), vec![ErrorCode::MissingParam]);
        assert_eq!(r.errors[0].path, "/MissionPlan/BehaviorTree/Sequence/Task[1]");
    }

    #[test]
    fn several_violations_all_listed() {
        let r = report(
            r#"<Sequence><Task type="take_picture" color="red"/><Drone/><Condition sensor="take_picture" operator="eq" threshold="x"><Then><Task type="return_home"/></Then></Condition></Sequence>"#,
        );
        let codes: BTreeSet<_> = r.codes().into_iter().collect();
        assert!(codes.contains(&ErrorCode::UnknownAttr));
        assert!(codes.contains(&ErrorCode::UnknownElement));
        assert!(codes.contains(&ErrorCode::InvalidValue));
        assert_eq!(r.errors.iter().filter(|e| e.code == ErrorCode::InvalidValue).count(), 3);
    }

    #[test]
    fn structural_errors() {
        let empty_seq = report("<Sequence/>");
        assert_eq!(empty_seq.codes(), vec![ErrorCode::MissingElement]);

        let two_roots = report(r#"<Task type="take_picture"/><Task type="return_home"/>"#);
        assert_eq!(two_roots.codes(), vec![ErrorCode::UnexpectedElement]);
        assert_eq!(two_roots.errors[0].path, "/MissionPlan/BehaviorTree/Task[2]");

        let text = report(r#"<Sequence>hello<Task type="take_picture"/></Sequence>"#);
        assert_eq!(text.codes(), vec![ErrorCode::UnexpectedText]);

        let no_then = report(r#"<Condition sensor="measure_co2" operator="lt" threshold="1"/>"#);
        assert_eq!(no_then.codes(), vec![ErrorCode::MissingElement]);
        assert!(no_then.errors[0].message.contains("<Then>"));
    }

    #[test]
    fn ranges_and_lexical_forms() {
        let r = report(r#"<Task type="navigate_to_point" lat="91" lon="1e3"/>"#);
        assert_eq!(r.codes(), vec![ErrorCode::InvalidValue, ErrorCode::InvalidValue]);
        assert!(check_builtin(Builtin::Decimal, " -.5 ").is_ok());
        assert!(check_builtin(Builtin::Decimal, "1.").is_ok());
        assert!(check_builtin(Builtin::Decimal, ".").is_err());
        assert!(check_builtin(Builtin::Decimal, "NaN").is_err());
        assert!(check_builtin(Builtin::Decimal, &"9".repeat(400)).is_err());
        assert!(check_builtin(Builtin::Integer, "4.0").is_err());
    }

    #[test]
    fn malformed_and_wrong_root() {
        let r = validate("<MissionPlan>\n  <Metadata></Meta>", SchemaDoc::builtin());
        assert_eq!(r.codes(), vec![ErrorCode::MalformedXml]);
        assert!(r.errors[0].message.contains("2:"), "{}", r.errors[0].message);
        let r = validate("<Plan/>", SchemaDoc::builtin());
        assert_eq!(r.codes(), vec![ErrorCode::UnknownElement]);
    }
}
