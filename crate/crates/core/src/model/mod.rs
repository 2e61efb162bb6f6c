//! The guarded-command modeling language: parsing into [`ExplicitMdp`],
//! emitting models back to text, and structural validation.
//!
//! Supported subset: an `mdp` header; `const int|double NAME = expr;`;
//! `formula NAME = expr;`; one `module ... endmodule` with bounded integer
//! variables `x : [lo..hi] init v;` and labelled commands
//! `[a] guard -> p1:(x'=e1)&(y'=e2) + p2:... ;`; and `label "name" = expr;`.
//! Expressions cover `+ - * /`, comparisons, `& | !`, parentheses and two-way
//! `min`/`max`. Other constructs of the reference language are rejected with
//! an explicit "unsupported construct" diagnostic.
//!
//! States are the reachable valuations, numbered in lexicographic order of
//! the variable values (declaration order). Actions are numbered by first
//! appearance among the commands. A reachable state with no enabled command
//! becomes absorbing through a self-loop on action 0.

mod build;
mod emit;
mod lexer;
mod parser;
mod validate;

use std::fmt;

use crate::mdp::ExplicitMdp;

pub use build::MAX_STATES;
pub use emit::{emit_model, emit_model_with_header};
pub use validate::validate;

pub(crate) use build::fmt_prob;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DiagnosticCode {
    Syntax,
    Unsupported,
    UndefinedIdentifier,
    NotConstant,
    Type,
    OutOfRange,
    Stochasticity,
    DuplicateAction,
    ScaleLimit,
    EmptyLabel,
    Structure,
}

/// A located message about a model. Models built in code (no source) use
/// line and column 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagnosticCode,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl Diagnostic {
    pub fn error(code: DiagnosticCode, pos: Pos, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            code,
            line: pos.line,
            column: pos.col,
            message: message.into(),
        }
    }

    pub fn warning(code: DiagnosticCode, pos: Pos, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            ..Diagnostic::error(code, pos, message)
        }
    }

    pub fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            col: self.column,
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}:{}:{}: {}", self.line, self.column, self.message)
    }
}

/// Model text plus where it came from (a path or an inline tag).
#[derive(Clone, Debug)]
pub struct ModelSource {
    pub text: String,
    pub origin: String,
}

impl ModelSource {
    pub fn new(text: impl Into<String>, origin: impl Into<String>) -> Self {
        ModelSource {
            text: text.into(),
            origin: origin.into(),
        }
    }

    pub fn inline(text: impl Into<String>) -> Self {
        ModelSource::new(text, "<inline>")
    }

    pub fn from_file(path: &std::path::Path) -> std::io::Result<Self> {
        Ok(ModelSource::new(
            std::fs::read_to_string(path)?,
            path.display().to_string(),
        ))
    }
}

/// Parse and build a model, returning any warnings alongside it.
pub fn parse_model_with_warnings(src: &ModelSource) -> Result<(ExplicitMdp, Vec<Diagnostic>), Vec<Diagnostic>> {
    if src.text.trim().is_empty() {
        return Err(vec![Diagnostic::error(
            DiagnosticCode::Syntax,
            Pos { line: 1, col: 1 },
            "empty model source",
        )]);
    }
    let prog = parser::parse_program(&src.text).map_err(|d| vec![d])?;
    let (m, mut warnings) = build::build(&prog)?;
    let structural = validate(&m);
    if structural.iter().any(|d| d.severity == Severity::Error) {
        return Err(structural);
    }
    for d in structural {
        if !warnings.iter().any(|w| w.message == d.message) {
            warnings.push(d);
        }
    }
    Ok((m, warnings))
}

pub fn parse_model(src: &ModelSource) -> Result<ExplicitMdp, Vec<Diagnostic>> {
    parse_model_with_warnings(src).map(|(m, _)| m)
}
