//! Keyword and advanced (provider JSON criteria) queries.
//!
//! Advanced criteria follow the provider's JSON query language restricted to
//! the operators in [`Op`] and the combinators in [`Combinator`]. Anything else
//! is rejected with a structured [`QueryError`].

mod catalog;

use std::fmt;

use chrono::NaiveDate;
use serde_json::{json, Map, Number, Value};
use thiserror::Error;

use crate::canonical::canonical_value;
pub use catalog::{FieldCatalog, FieldType};

pub const MAX_DEPTH: usize = 32;
pub const MAX_LEAVES: usize = 1024;

/// Response fields requested for every patent.
pub const RESPONSE_FIELDS: &[&str] = &[
    "assignee_country",
    "assignee_organization",
    "cited_patent_date",
    "cited_patent_number",
    "cited_patent_title",
    "cpc_subgroup_id",
    "inventor_country",
    "inventor_first_name",
    "inventor_last_name",
    "patent_date",
    "patent_number",
    "patent_title",
];

/// Full-text fields a keyword query is matched against.
pub const KEYWORD_FIELDS: &[&str] = &["patent_title", "patent_abstract"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("malformed JSON at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unsupported operator or combinator `{key}`")]
    UnsupportedOperator { key: String },
    #[error("unknown field `{field}`{}", suggestion_suffix(.suggestions))]
    UnknownField {
        field: String,
        suggestions: Vec<String>,
    },
    #[error("operator `{op}` cannot be applied to field `{field}`")]
    IncompatibleOperator { op: String, field: String },
    #[error("invalid value for `{field}`: {reason}")]
    InvalidValue { field: String, reason: String },
    #[error("malformed criterion: {0}")]
    Malformed(String),
    #[error("query is empty")]
    EmptyQuery,
    #[error("criteria nested deeper than {MAX_DEPTH} levels")]
    TooDeep,
    #[error("criteria contain more than {MAX_LEAVES} leaf conditions")]
    TooManyLeaves,
    #[error("per_page {per_page} outside 1..={max}")]
    PerPageOutOfBounds { per_page: u32, max: u32 },
    #[error("page numbers start at 1")]
    PageOutOfBounds,
}

fn suggestion_suffix(suggestions: &[String]) -> String {
    if suggestions.is_empty() {
        String::new()
    } else {
        format!(" (did you mean: {})", suggestions.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Eq,
    Neq,
    Gt,
    Gte,
    Lt,
    Lte,
    Begins,
    Contains,
    TextAny,
    TextAll,
    TextPhrase,
}

impl Op {
    pub const ALL: [Op; 11] = [
        Op::Eq,
        Op::Neq,
        Op::Gt,
        Op::Gte,
        Op::Lt,
        Op::Lte,
        Op::Begins,
        Op::Contains,
        Op::TextAny,
        Op::TextAll,
        Op::TextPhrase,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Op::Eq => "_eq",
            Op::Neq => "_neq",
            Op::Gt => "_gt",
            Op::Gte => "_gte",
            Op::Lt => "_lt",
            Op::Lte => "_lte",
            Op::Begins => "_begins",
            Op::Contains => "_contains",
            Op::TextAny => "_text_any",
            Op::TextAll => "_text_all",
            Op::TextPhrase => "_text_phrase",
        }
    }

    fn from_key(key: &str) -> Option<Op> {
        Op::ALL.into_iter().find(|op| op.key() == key)
    }

    fn is_text(self) -> bool {
        matches!(self, Op::TextAny | Op::TextAll | Op::TextPhrase)
    }

    fn is_string_match(self) -> bool {
        matches!(self, Op::Begins | Op::Contains)
    }

    fn applies_to(self, field: FieldType) -> bool {
        match field {
            FieldType::Fulltext => !matches!(self, Op::Gt | Op::Gte | Op::Lt | Op::Lte),
            FieldType::String => !self.is_text(),
            FieldType::Date | FieldType::Integer => !self.is_text() && !self.is_string_match(),
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key()[1..])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Combinator {
    And,
    Or,
    Not,
}

impl Combinator {
    pub fn key(self) -> &'static str {
        match self {
            Combinator::And => "_and",
            Combinator::Or => "_or",
            Combinator::Not => "_not",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CriterionValue {
    Str(String),
    Num(Number),
    Date(NaiveDate),
}

impl CriterionValue {
    fn to_json(&self) -> Value {
        match self {
            CriterionValue::Str(s) => Value::String(s.clone()),
            CriterionValue::Num(n) => Value::Number(n.clone()),
            CriterionValue::Date(d) => Value::String(d.format("%Y-%m-%d").to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryNode {
    Leaf {
        field: String,
        op: Op,
        value: CriterionValue,
    },
    Branch {
        combinator: Combinator,
        children: Vec<QueryNode>,
    },
}

impl QueryNode {
    pub fn leaf(field: impl Into<String>, op: Op, value: CriterionValue) -> Self {
        QueryNode::Leaf {
            field: field.into(),
            op,
            value,
        }
    }

    /// Provider JSON for this criterion. Equality leaves use the bare
    /// `{field: value}` form.
    pub fn to_json(&self) -> Value {
        match self {
            QueryNode::Leaf { field, op, value } => {
                let inner = single(field, value.to_json());
                if *op == Op::Eq {
                    inner
                } else {
                    single(op.key(), inner)
                }
            }
            QueryNode::Branch {
                combinator: Combinator::Not,
                children,
            } => single(Combinator::Not.key(), children[0].to_json()),
            QueryNode::Branch {
                combinator,
                children,
            } => single(
                combinator.key(),
                Value::Array(children.iter().map(QueryNode::to_json).collect()),
            ),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            QueryNode::Leaf { .. } => 1,
            QueryNode::Branch { children, .. } => {
                1 + children.iter().map(QueryNode::depth).max().unwrap_or(0)
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            QueryNode::Leaf { .. } => 1,
            QueryNode::Branch { children, .. } => children.iter().map(QueryNode::leaf_count).sum(),
        }
    }
}

fn single(key: &str, value: Value) -> Value {
    let mut map = Map::new();
    map.insert(key.to_string(), value);
    Value::Object(map)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Query {
    Keyword(String),
    Advanced(QueryNode),
}

impl Query {
    /// Provider criteria after lowering keyword phrases to a full-text
    /// `text_any` match over title and abstract.
    pub fn criteria(&self) -> Value {
        match self {
            Query::Advanced(node) => node.to_json(),
            Query::Keyword(phrase) => {
                let children = KEYWORD_FIELDS
                    .iter()
                    .map(|field| {
                        QueryNode::leaf(*field, Op::TextAny, CriterionValue::Str(phrase.clone()))
                    })
                    .collect();
                QueryNode::Branch {
                    combinator: Combinator::Or,
                    children,
                }
                .to_json()
            }
        }
    }

    /// Short human-readable form, e.g. `keyword:"photovoltaic cells"`.
    pub fn describe(&self) -> String {
        match self {
            Query::Keyword(phrase) => format!("keyword:{}", Value::String(phrase.clone())),
            Query::Advanced(node) => format!("advanced:{}", canonical_value(&node.to_json())),
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

pub fn parse_keyword(text: &str) -> Result<Query, QueryError> {
    let phrase = text.trim();
    if phrase.is_empty() {
        return Err(QueryError::EmptyQuery);
    }
    Ok(Query::Keyword(phrase.to_string()))
}

/// Parses provider JSON criteria such as `{"cpc_subgroup_id":"Y02E10V541"}`.
pub fn parse_advanced(text: &str) -> Result<Query, QueryError> {
    if text.trim().is_empty() {
        return Err(QueryError::EmptyQuery);
    }
    let value: Value = serde_json::from_str(text).map_err(|err| QueryError::Syntax {
        offset: byte_offset(text, err.line(), err.column()),
        message: err.to_string(),
    })?;
    parse_advanced_value(&value)
}

/// Same as [`parse_advanced`] for criteria that are already decoded.
pub fn parse_advanced_value(value: &Value) -> Result<Query, QueryError> {
    let mut leaves = 0;
    let node = parse_node(value, 1, &mut leaves, FieldCatalog::bundled())?;
    Ok(Query::Advanced(node))
}

/// Accepts the search-box form: `ADVANCED=<criteria>` for advanced queries,
/// anything else as a keyword phrase.
pub fn parse_query_string(text: &str) -> Result<Query, QueryError> {
    let trimmed = text.trim();
    match trimmed.strip_prefix("ADVANCED=") {
        Some(criteria) => parse_advanced(criteria),
        None => parse_keyword(trimmed),
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let preceding: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (preceding + column).min(text.len())
}

fn parse_node(
    value: &Value,
    depth: usize,
    leaves: &mut usize,
    catalog: &FieldCatalog,
) -> Result<QueryNode, QueryError> {
    if depth > MAX_DEPTH {
        return Err(QueryError::TooDeep);
    }
    let Value::Object(map) = value else {
        return Err(QueryError::Malformed(format!(
            "expected an object, found {}",
            kind_of(value)
        )));
    };
    let mut entries = map.iter();
    let (Some((key, inner)), None) = (entries.next(), entries.next()) else {
        return Err(QueryError::Malformed(format!(
            "a criterion object needs exactly one key, found {}",
            map.len()
        )));
    };

    match key.as_str() {
        "_and" | "_or" => {
            let combinator = if key == "_and" {
                Combinator::And
            } else {
                Combinator::Or
            };
            let Value::Array(items) = inner else {
                return Err(QueryError::Malformed(format!("`{key}` takes a list")));
            };
            if items.is_empty() {
                return Err(QueryError::Malformed(format!("`{key}` list is empty")));
            }
            let children = items
                .iter()
                .map(|item| parse_node(item, depth + 1, leaves, catalog))
                .collect::<Result<_, _>>()?;
            Ok(QueryNode::Branch {
                combinator,
                children,
            })
        }
        "_not" => {
            let child = match inner {
                Value::Array(items) if items.len() == 1 => &items[0],
                Value::Array(_) => {
                    return Err(QueryError::Malformed("`_not` takes exactly one criterion".into()))
                }
                other => other,
            };
            Ok(QueryNode::Branch {
                combinator: Combinator::Not,
                children: vec![parse_node(child, depth + 1, leaves, catalog)?],
            })
        }
        op_key if op_key.starts_with('_') => {
            let op = Op::from_key(op_key).ok_or_else(|| QueryError::UnsupportedOperator {
                key: op_key.to_string(),
            })?;
            let Value::Object(operand) = inner else {
                return Err(QueryError::Malformed(format!(
                    "`{op_key}` takes an object of the form {{field: value}}"
                )));
            };
            let mut fields = operand.iter();
            let (Some((field, raw)), None) = (fields.next(), fields.next()) else {
                return Err(QueryError::Malformed(format!(
                    "`{op_key}` needs exactly one field, found {}",
                    operand.len()
                )));
            };
            parse_leaf(field, op, raw, leaves, catalog)
        }
        field => parse_leaf(field, Op::Eq, inner, leaves, catalog),
    }
}

fn parse_leaf(
    field: &str,
    op: Op,
    raw: &Value,
    leaves: &mut usize,
    catalog: &FieldCatalog,
) -> Result<QueryNode, QueryError> {
    *leaves += 1;
    if *leaves > MAX_LEAVES {
        return Err(QueryError::TooManyLeaves);
    }
    let field_type = catalog
        .field_type(field)
        .ok_or_else(|| QueryError::UnknownField {
            field: field.to_string(),
            suggestions: catalog.nearest(field),
        })?;
    if !op.applies_to(field_type) {
        return Err(QueryError::IncompatibleOperator {
            op: op.to_string(),
            field: field.to_string(),
        });
    }
    let invalid = |reason: String| QueryError::InvalidValue {
        field: field.to_string(),
        reason,
    };
    let value = match (field_type, raw) {
        (FieldType::String | FieldType::Fulltext, Value::String(s)) => CriterionValue::Str(s.clone()),
        (FieldType::Date, Value::String(s)) => NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map(CriterionValue::Date)
            .map_err(|_| invalid(format!("`{s}` is not a YYYY-MM-DD date")))?,
        (FieldType::Integer, Value::Number(n)) if n.is_i64() || n.is_u64() => {
            CriterionValue::Num(n.clone())
        }
        (expected, other) => {
            return Err(invalid(format!(
                "expected {} value, found {}",
                match expected {
                    FieldType::String | FieldType::Fulltext => "a string",
                    FieldType::Date => "a date string",
                    FieldType::Integer => "an integer",
                },
                kind_of(other)
            )))
        }
    };
    Ok(QueryNode::Leaf {
        field: field.to_string(),
        op,
        value,
    })
}

fn kind_of(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "a list",
        Value::Object(_) => "an object",
    }
}

/// Canonical provider request body for one page of results. Keys are sorted
/// so the text can be hashed into a cache key.
pub fn to_request(query: &Query, page: u32, per_page: u32) -> Result<String, QueryError> {
    let max = FieldCatalog::bundled().max_per_page;
    if page == 0 {
        return Err(QueryError::PageOutOfBounds);
    }
    if per_page == 0 || per_page > max {
        return Err(QueryError::PerPageOutOfBounds { per_page, max });
    }
    if let Query::Advanced(node) = query {
        if node.depth() > MAX_DEPTH {
            return Err(QueryError::TooDeep);
        }
        if node.leaf_count() > MAX_LEAVES {
            return Err(QueryError::TooManyLeaves);
        }
    }
    let body = json!({
        "q": query.criteria(),
        "f": RESPONSE_FIELDS,
        "o": {"page": page, "per_page": per_page},
        "s": [{"patent_number": "asc"}],
    });
    Ok(canonical_value(&body))
}
