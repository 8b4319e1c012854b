//! Surface syntax: a Scribble dialect with `mixed { } or { }` blocks, commit
//! markers and failed-role annotations, plus printers for Scribble and the
//! mathematical notation.
//!
//! Grammar:
//!
//! ```text
//! file     ::= pragma* "global" "protocol" IDENT "(" roles ")" block
//! pragma   ::= "@" STRING
//! roles    ::= "role" IDENT ("," "role" IDENT)*
//! block    ::= "{" stmt* "}"
//! stmt     ::= IDENT payload "from" IDENT "to" IDENT "*"? ";" ("@" STRING)*
//!            | "choice" "at" IDENT block ("or" block)*
//!            | "rec" IDENT block
//!            | "continue" IDENT ";"
//!            | "mixed" ("@" IDENT)? block "or" block
//! payload  ::= "(" (item ("," item)*)? ")"
//! item     ::= IDENT (":" IDENT)? | "..."
//! ```
//!
//! Statements after a `choice`, `rec` or `mixed` block continue every branch
//! of that block. Within a `mixed` block, directed choices are desugared first.

mod lexer;
mod parser;
mod render;

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::model::{GlobalType, Label, McName, Role};

pub use parser::parse;
pub use render::{render_global, render_local, render_local_scribble, render_protocol, Style};

pub const PRAGMA_EXPLICIT_OBSERVER: &str = "explicit-observer-left-commits";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    McShape,
    UndeclaredRole,
    UnboundContinue,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{pos}: {}{message}", kind_prefix(*.kind))]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub pos: Pos,
    pub message: String,
}

fn kind_prefix(kind: ParseErrorKind) -> &'static str {
    match kind {
        ParseErrorKind::Syntax => "syntax error: ",
        ParseErrorKind::McShape => "MC shape error: ",
        _ => "",
    }
}

impl ParseError {
    pub(crate) fn new(kind: ParseErrorKind, pos: Pos, message: impl Into<String>) -> Self {
        Self { kind, pos, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationKind {
    FailedRole,
}

/// A trailing `@'failed R'` attached to the interaction `from→to:label`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceAnnotation {
    pub kind: AnnotationKind,
    pub role: Role,
    pub pos: Pos,
    pub from: Role,
    pub to: Role,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Protocol {
    pub name: String,
    pub roles: Vec<Role>,
    pub body: GlobalType,
    pub annotations: Vec<SourceAnnotation>,
    pub commit_markers: BTreeSet<(McName, Label)>,
    pub pragmas: BTreeSet<String>,
}

impl Protocol {
    pub fn has_pragma(&self, pragma: &str) -> bool {
        self.pragmas.contains(pragma)
    }

    /// GC labels per MC name, from `*` markers, when the explicit-observer
    /// pragma is on.
    pub fn gc_labels(&self) -> Option<std::collections::BTreeMap<McName, BTreeSet<Label>>> {
        if !self.has_pragma(PRAGMA_EXPLICIT_OBSERVER) {
            return None;
        }
        let mut out: std::collections::BTreeMap<McName, BTreeSet<Label>> = Default::default();
        for (c, l) in &self.commit_markers {
            out.entry(c.clone()).or_default().insert(l.clone());
        }
        Some(out)
    }

    pub fn role_set(&self) -> crate::model::RoleSet {
        self.roles.iter().cloned().collect()
    }
}
