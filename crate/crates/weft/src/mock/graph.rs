//! In-memory property graph behind an MCP tool surface.
//!
//! Nodes are keyed by (label, uid) and relationships by (type, from, to),
//! which is exactly what makes `MERGE` idempotent: re-running any query
//! converges to the same graph. The query language is the slice of Cypher
//! the sync workflows emit, nothing more:
//!
//! ```text
//! MERGE (n:Label {uid: "x"}) SET n.prop = "v" ...
//! MERGE (a:L1 {uid: "x"}) MERGE (b:L2 {uid: "y"}) MERGE (a)-[:TYPE]->(b)
//! MATCH (a:L1) MATCH (b:L2) WHERE a.prop = b.prop MERGE (a)-[:TYPE]->(b)
//! MATCH (n:Label) [WHERE n.prop = "v"] RETURN count(n)
//! ```
//!
//! Responses report `nodesCreated`, `relationshipsCreated` and `matched` so
//! callers can observe (non-)creation directly.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use async_trait::async_trait;
use serde_json::{json, Value};

use crate::rpc::{JsonRpcError, McpService, ServerIdentity, ToolDescriptor, ToolResult};

type NodeKey = (String, String);

#[derive(Debug, Default, Clone)]
pub struct PropertyGraph {
    nodes: BTreeMap<NodeKey, BTreeMap<String, Value>>,
    rels: BTreeSet<(String, NodeKey, NodeKey)>,
}

impl PropertyGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn rel_count(&self) -> usize {
        self.rels.len()
    }

    pub fn label_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (label, _) in self.nodes.keys() {
            *out.entry(label.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn rel_type_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (rel_type, _, _) in &self.rels {
            *out.entry(rel_type.clone()).or_insert(0) += 1;
        }
        out
    }

    fn upsert(&mut self, label: &str, uid: &str) -> bool {
        let key = (label.to_owned(), uid.to_owned());
        if self.nodes.contains_key(&key) {
            return false;
        }
        let mut props = BTreeMap::new();
        props.insert("uid".to_owned(), Value::String(uid.to_owned()));
        self.nodes.insert(key, props);
        true
    }

    fn by_label(&self, label: &str) -> Vec<NodeKey> {
        self.nodes
            .keys()
            .filter(|(l, _)| l == label)
            .cloned()
            .collect()
    }

    fn prop(&self, key: &NodeKey, name: &str) -> Value {
        self.nodes
            .get(key)
            .and_then(|props| props.get(name))
            .cloned()
            .unwrap_or(Value::Null)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Str(String),
    Num(serde_json::Number),
    Sym(char),
}

impl std::fmt::Display for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Token::Ident(s) => write!(f, "{s}"),
            Token::Str(s) => write!(f, "\"{s}\""),
            Token::Num(n) => write!(f, "{n}"),
            Token::Sym(c) => write!(f, "{c}"),
        }
    }
}

fn tokenize(query: &str) -> Result<Vec<Token>, String> {
    let mut tokens = Vec::new();
    let bytes = query.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c == '"' {
            let start = i + 1;
            let mut j = start;
            while j < bytes.len() && bytes[j] != b'"' {
                j += 1;
            }
            if j >= bytes.len() {
                return Err("unterminated string literal".into());
            }
            tokens.push(Token::Str(query[start..j].to_owned()));
            i = j + 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len()
                && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
            {
                i += 1;
            }
            tokens.push(Token::Ident(query[start..i].to_owned()));
        } else if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len()
                && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.')
            {
                i += 1;
            }
            let text = &query[start..i];
            let num = if text.contains('.') {
                serde_json::Number::from_f64(
                    text.parse::<f64>().map_err(|_| format!("bad number '{text}'"))?,
                )
                .ok_or_else(|| format!("bad number '{text}'"))?
            } else {
                text.parse::<i64>()
                    .map_err(|_| format!("bad number '{text}'"))?
                    .into()
            };
            tokens.push(Token::Num(num));
        } else if "(){}[]:,.=->".contains(c) {
            tokens.push(Token::Sym(c));
            i += 1;
        } else {
            return Err(format!("unsupported query syntax at '{c}'"));
        }
    }
    Ok(tokens)
}

#[derive(Debug, Clone)]
enum Rhs {
    Prop(String, String),
    Literal(Value),
}

#[derive(Debug, Clone)]
enum Clause {
    MergeNode {
        var: String,
        label: String,
        uid: String,
    },
    MatchNode {
        var: String,
        label: String,
        uid: Option<String>,
    },
    SetProp {
        var: String,
        prop: String,
        value: Value,
    },
    Where {
        var: String,
        prop: String,
        rhs: Rhs,
    },
    MergeRel {
        from: String,
        rel: String,
        to: String,
    },
    ReturnCount {
        var: String,
    },
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Result<Token, String> {
        let token = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or("query ended unexpectedly")?;
        self.pos += 1;
        Ok(token)
    }

    fn expect_sym(&mut self, c: char) -> Result<(), String> {
        match self.next()? {
            Token::Sym(got) if got == c => Ok(()),
            other => Err(format!("expected '{c}', found '{other}'")),
        }
    }

    fn expect_ident(&mut self) -> Result<String, String> {
        match self.next()? {
            Token::Ident(s) => Ok(s),
            other => Err(format!("expected identifier, found '{other}'")),
        }
    }

    fn value(&mut self) -> Result<Value, String> {
        match self.next()? {
            Token::Str(s) => Ok(Value::String(s)),
            Token::Num(n) => Ok(Value::Number(n)),
            other => Err(format!("expected a value, found '{other}'")),
        }
    }

    /// `(var:Label {uid: "x"})` or, for MERGE rel form, `(var)-[:TYPE]->(var)`.
    fn pattern(&mut self, is_merge: bool) -> Result<Clause, String> {
        self.expect_sym('(')?;
        let var = self.expect_ident()?;
        if self.peek() == Some(&Token::Sym(')')) {
            // relationship pattern
            self.expect_sym(')')?;
            self.expect_sym('-')?;
            self.expect_sym('[')?;
            self.expect_sym(':')?;
            let rel = self.expect_ident()?;
            self.expect_sym(']')?;
            self.expect_sym('-')?;
            self.expect_sym('>')?;
            self.expect_sym('(')?;
            let to = self.expect_ident()?;
            self.expect_sym(')')?;
            if !is_merge {
                return Err("relationship patterns are only supported under MERGE".into());
            }
            return Ok(Clause::MergeRel { from: var, rel, to });
        }
        self.expect_sym(':')?;
        let label = self.expect_ident()?;
        let mut uid = None;
        if self.peek() == Some(&Token::Sym('{')) {
            self.expect_sym('{')?;
            let key = self.expect_ident()?;
            if key != "uid" {
                return Err(format!("node key must be 'uid', found '{key}'"));
            }
            self.expect_sym(':')?;
            match self.value()? {
                Value::String(s) => uid = Some(s),
                other => return Err(format!("uid must be a string, found '{other}'")),
            }
            self.expect_sym('}')?;
        }
        self.expect_sym(')')?;
        if is_merge {
            let uid = uid.ok_or("MERGE requires a {uid: ...} key")?;
            Ok(Clause::MergeNode { var, label, uid })
        } else {
            Ok(Clause::MatchNode { var, label, uid })
        }
    }

    fn parse(mut self) -> Result<Vec<Clause>, String> {
        let mut clauses = Vec::new();
        while let Some(token) = self.peek() {
            let keyword = match token {
                Token::Ident(s) => s.clone(),
                other => return Err(format!("unsupported query syntax at '{other}'")),
            };
            self.pos += 1;
            match keyword.as_str() {
                "MERGE" => clauses.push(self.pattern(true)?),
                "MATCH" => clauses.push(self.pattern(false)?),
                "SET" => {
                    let var = self.expect_ident()?;
                    self.expect_sym('.')?;
                    let prop = self.expect_ident()?;
                    self.expect_sym('=')?;
                    let value = self.value()?;
                    clauses.push(Clause::SetProp { var, prop, value });
                }
                "WHERE" => {
                    let var = self.expect_ident()?;
                    self.expect_sym('.')?;
                    let prop = self.expect_ident()?;
                    self.expect_sym('=')?;
                    let rhs = match self.peek() {
                        Some(Token::Ident(_)) => {
                            let rvar = self.expect_ident()?;
                            self.expect_sym('.')?;
                            let rprop = self.expect_ident()?;
                            Rhs::Prop(rvar, rprop)
                        }
                        _ => Rhs::Literal(self.value()?),
                    };
                    clauses.push(Clause::Where { var, prop, rhs });
                }
                "RETURN" => {
                    let func = self.expect_ident()?;
                    if func != "count" {
                        return Err(format!("unsupported query syntax at '{func}'"));
                    }
                    self.expect_sym('(')?;
                    let var = self.expect_ident()?;
                    self.expect_sym(')')?;
                    clauses.push(Clause::ReturnCount { var });
                }
                other => return Err(format!("unsupported query syntax at '{other}'")),
            }
        }
        Ok(clauses)
    }
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct QueryStats {
    pub nodes_created: usize,
    pub relationships_created: usize,
    pub matched: usize,
}

fn run(graph: &mut PropertyGraph, query: &str) -> Result<QueryStats, String> {
    let clauses = Parser {
        tokens: tokenize(query)?,
        pos: 0,
    }
    .parse()?;
    if clauses.is_empty() {
        return Err("empty query".into());
    }

    let mut stats = QueryStats::default();
    // var → candidate node keys (singletons for MERGEd/keyed vars)
    let mut candidates: BTreeMap<String, Vec<NodeKey>> = BTreeMap::new();
    let mut wheres = Vec::new();
    let mut rel_merges = Vec::new();
    let mut count_var = None;

    for clause in &clauses {
        match clause {
            Clause::MergeNode { var, label, uid } => {
                if graph.upsert(label, uid) {
                    stats.nodes_created += 1;
                } else {
                    stats.matched += 1;
                }
                candidates.insert(var.clone(), vec![(label.clone(), uid.clone())]);
            }
            Clause::MatchNode { var, label, uid } => {
                let keys = match uid {
                    Some(uid) => {
                        let key = (label.clone(), uid.clone());
                        if graph.nodes.contains_key(&key) {
                            vec![key]
                        } else {
                            Vec::new()
                        }
                    }
                    None => graph.by_label(label),
                };
                candidates.insert(var.clone(), keys);
            }
            Clause::SetProp { var, prop, value } => {
                let keys = candidates
                    .get(var)
                    .ok_or_else(|| format!("SET references unknown variable '{var}'"))?
                    .clone();
                for key in keys {
                    graph
                        .nodes
                        .get_mut(&key)
                        .expect("candidate nodes exist")
                        .insert(prop.clone(), value.clone());
                }
            }
            Clause::Where { var, prop, rhs } => {
                if !candidates.contains_key(var) {
                    return Err(format!("WHERE references unknown variable '{var}'"));
                }
                if let Rhs::Prop(rvar, _) = rhs {
                    if !candidates.contains_key(rvar) {
                        return Err(format!("WHERE references unknown variable '{rvar}'"));
                    }
                }
                wheres.push((var.clone(), prop.clone(), rhs.clone()));
            }
            Clause::MergeRel { from, rel, to } => {
                if !candidates.contains_key(from) || !candidates.contains_key(to) {
                    return Err(format!(
                        "relationship MERGE references unknown variables '{from}'/'{to}'"
                    ));
                }
                rel_merges.push((from.clone(), rel.clone(), to.clone()));
            }
            Clause::ReturnCount { var } => {
                if !candidates.contains_key(var) {
                    return Err(format!("RETURN references unknown variable '{var}'"));
                }
                count_var = Some(var.clone());
            }
        }
    }

    // literal filters narrow their variable's candidate set directly
    for (var, prop, rhs) in &wheres {
        if let Rhs::Literal(value) = rhs {
            let keys = candidates.get_mut(var).expect("checked above");
            keys.retain(|key| &graph.prop(key, prop) == value);
        }
    }

    for (from, rel, to) in &rel_merges {
        let from_keys = candidates[from].clone();
        let to_keys = candidates[to].clone();
        for fk in &from_keys {
            for tk in &to_keys {
                let pair_ok = wheres.iter().all(|(var, prop, rhs)| match rhs {
                    Rhs::Literal(_) => true, // already applied
                    Rhs::Prop(rvar, rprop) => {
                        let lhs_key = if var == from {
                            fk
                        } else if var == to {
                            tk
                        } else {
                            return true;
                        };
                        let rhs_key = if rvar == from {
                            fk
                        } else if rvar == to {
                            tk
                        } else {
                            return true;
                        };
                        let left = graph.prop(lhs_key, prop);
                        left != Value::Null && left == graph.prop(rhs_key, rprop)
                    }
                });
                if !pair_ok {
                    continue;
                }
                let entry = (rel.clone(), fk.clone(), tk.clone());
                if graph.rels.insert(entry) {
                    stats.relationships_created += 1;
                } else {
                    stats.matched += 1;
                }
            }
        }
    }

    if let Some(var) = count_var {
        stats.matched = candidates[&var].len();
    }
    Ok(stats)
}

/// The graph-side mock MCP server.
pub struct GraphServer {
    graph: Mutex<PropertyGraph>,
    /// Graph database names received via run_query, for tests asserting
    /// parameter pass-through.
    graphs_seen: Mutex<BTreeSet<String>>,
}

impl Default for GraphServer {
    fn default() -> Self {
        Self::new()
    }
}

impl GraphServer {
    pub fn new() -> Self {
        Self {
            graph: Mutex::new(PropertyGraph::default()),
            graphs_seen: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn snapshot(&self) -> PropertyGraph {
        self.graph.lock().unwrap().clone()
    }

    pub fn graphs_seen(&self) -> Vec<String> {
        self.graphs_seen.lock().unwrap().iter().cloned().collect()
    }

    pub fn run_query(&self, query: &str) -> Result<QueryStats, String> {
        run(&mut self.graph.lock().unwrap(), query)
    }
}

#[async_trait]
impl McpService for GraphServer {
    fn identity(&self) -> ServerIdentity {
        ServerIdentity {
            name: "weft-mock-graph".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    async fn list_tools(&self) -> Vec<ToolDescriptor> {
        vec![
            ToolDescriptor {
                name: "run_query".into(),
                description: "Run a Cypher-style MERGE/MATCH query against the graph".into(),
                input_schema: json!({
                    "type": "object",
                    "properties": {
                        "query": {"type": "string"},
                        "graph": {"type": "string", "description": "target graph name"}
                    },
                    "required": ["query"]
                }),
            },
            ToolDescriptor {
                name: "graph_stats".into(),
                description: "Node and relationship totals, by label and type".into(),
                input_schema: json!({"type": "object", "properties": {}}),
            },
        ]
    }

    async fn call_tool(&self, name: &str, arguments: Value) -> Result<ToolResult, JsonRpcError> {
        match name {
            "run_query" => {
                let Some(query) = arguments.get("query").and_then(Value::as_str) else {
                    return Ok(ToolResult::error("run_query requires a \"query\" string"));
                };
                if let Some(graph) = arguments.get("graph").and_then(Value::as_str) {
                    self.graphs_seen.lock().unwrap().insert(graph.to_owned());
                }
                match self.run_query(query) {
                    Ok(stats) => Ok(ToolResult::json(&json!({
                        "nodesCreated": stats.nodes_created,
                        "relationshipsCreated": stats.relationships_created,
                        "matched": stats.matched,
                    }))),
                    Err(message) => Ok(ToolResult::error(message)),
                }
            }
            "graph_stats" => {
                let graph = self.graph.lock().unwrap();
                Ok(ToolResult::json(&json!({
                    "nodes": graph.node_count(),
                    "relationships": graph.rel_count(),
                    "labels": graph.label_counts(),
                    "relationshipTypes": graph.rel_type_counts(),
                })))
            }
            other => Err(JsonRpcError::new(
                crate::rpc::INVALID_PARAMS,
                format!("unknown tool '{other}'"),
            )),
        }
    }
}
