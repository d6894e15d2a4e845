//! Typed PDDL model for the ADL fragment with action costs, together with a
//! position-aware parser and a canonical printer.

mod model;
mod parse;
mod print;
pub mod sexp;

use std::fmt;

use thiserror::Error;

pub use model::*;
pub use parse::{
    parse_action, parse_domain, parse_goal, parse_init_entry, parse_objects, parse_predicate_decl,
    parse_problem, parse_typed_list, Builder, InitEntry, TypedItem,
};
pub use print::{
    effect_to_string, formula_to_string, print_action, print_domain, print_objects,
    print_predicate, print_problem, print_types,
};
pub use sexp::{Sexp, SexpKind, Span};

/// Parse failure with a source position and a one-line repair hint.
///
/// Line and column are 1-based; both are 0 when the input ended early.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub message: String,
    pub hint: String,
}

impl ParseError {
    pub fn at(span: Span, message: impl Into<String>, hint: impl Into<String>) -> Self {
        ParseError {
            line: span.line,
            col: span.col,
            message: message.into(),
            hint: hint.into(),
        }
    }

    pub fn eof(message: impl Into<String>) -> Self {
        ParseError {
            line: 0,
            col: 0,
            message: message.into(),
            hint: "check for missing parentheses or truncated input".into(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "at end of input: {} (hint: {})", self.message, self.hint)
        } else {
            write!(f, "line {}, column {}: {} (hint: {})", self.line, self.col, self.message, self.hint)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("undeclared type '{0}'")]
    UndeclaredType(String),
    #[error("invalid identifier '{0}'")]
    InvalidIdentifier(String),
    #[error("invalid type hierarchy: {0}")]
    InvalidHierarchy(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}
