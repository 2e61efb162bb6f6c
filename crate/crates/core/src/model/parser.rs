use super::lexer::{tokenize, Tok};
use super::{Diagnostic, DiagnosticCode, Pos};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Neq,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
    Min,
    Max,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum ExprKind {
    Int(i64),
    Real(f64),
    Bool(bool),
    Ident(String),
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Expr {
    pub pos: Pos,
    pub kind: ExprKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ConstType {
    Int,
    Double,
}

#[derive(Clone, Debug)]
pub(crate) struct ConstDecl {
    pub name: String,
    pub ty: ConstType,
    pub value: Expr,
    pub pos: Pos,
}

#[derive(Clone, Debug)]
pub(crate) struct NamedExpr {
    pub name: String,
    pub expr: Expr,
    pub pos: Pos,
}

#[derive(Clone, Debug)]
pub(crate) struct VarDecl {
    pub name: String,
    pub lo: Expr,
    pub hi: Expr,
    pub init: Option<Expr>,
    pub pos: Pos,
}

#[derive(Clone, Debug)]
pub(crate) struct Update {
    pub var: String,
    pub value: Expr,
    pub pos: Pos,
}

#[derive(Clone, Debug)]
pub(crate) struct Branch {
    pub prob: Option<Expr>,
    pub updates: Vec<Update>,
    pub pos: Pos,
}

#[derive(Clone, Debug)]
pub(crate) struct Command {
    pub label: String,
    pub guard: Expr,
    pub branches: Vec<Branch>,
    pub pos: Pos,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Program {
    pub consts: Vec<ConstDecl>,
    pub formulas: Vec<NamedExpr>,
    pub labels: Vec<NamedExpr>,
    pub vars: Vec<VarDecl>,
    pub commands: Vec<Command>,
}

const UNSUPPORTED_KEYWORDS: &[(&str, &str)] = &[
    ("dtmc", "dtmc model type"),
    ("ctmc", "ctmc model type"),
    ("pta", "pta model type"),
    ("probabilistic", "dtmc model type"),
    ("stochastic", "ctmc model type"),
    ("nondeterministic", "`nondeterministic` header (use `mdp`)"),
    ("rewards", "reward structures"),
    ("endrewards", "reward structures"),
    ("system", "system composition"),
    ("endsystem", "system composition"),
    ("global", "global variables"),
    ("bool", "boolean variables or constants"),
    ("clock", "clock variables"),
    ("floor", "function floor"),
    ("ceil", "function ceil"),
    ("pow", "function pow"),
    ("mod", "function mod"),
    ("log", "function log"),
    ("round", "function round"),
    ("func", "func(...) syntax"),
    ("filter", "filters"),
    ("endinit", "init ... endinit blocks"),
    ("invariant", "invariants"),
];

fn unsupported_keyword(word: &str) -> Option<&'static str> {
    UNSUPPORTED_KEYWORDS
        .iter()
        .find(|(k, _)| *k == word)
        .map(|(_, what)| *what)
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
}

type PResult<T> = Result<T, Diagnostic>;

pub(crate) fn parse_program(src: &str) -> PResult<Program> {
    let toks = tokenize(src)?;
    let mut p = Parser { toks, at: 0 };
    p.program()
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.at + k).min(self.toks.len() - 1)].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn error<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(Diagnostic::error(DiagnosticCode::Syntax, self.pos(), msg))
    }

    fn unsupported<T>(&self, what: &str) -> PResult<T> {
        Err(Diagnostic::error(
            DiagnosticCode::Unsupported,
            self.pos(),
            format!("unsupported construct: {what}"),
        ))
    }

    fn expect(&mut self, tok: Tok) -> PResult<Pos> {
        if *self.peek() == tok {
            Ok(self.bump().1)
        } else {
            self.error(format!("expected {}, found {}", tok.describe(), self.peek().describe()))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<Pos> {
        if self.is_kw(kw) {
            Ok(self.bump().1)
        } else {
            self.error(format!("expected `{kw}`, found {}", self.peek().describe()))
        }
    }

    fn check_unsupported_ident(&self) -> PResult<()> {
        if let Tok::Ident(word) = self.peek() {
            if let Some(what) = unsupported_keyword(word) {
                return self.unsupported(what);
            }
        }
        Ok(())
    }

    fn ident(&mut self) -> PResult<(String, Pos)> {
        self.check_unsupported_ident()?;
        match self.peek().clone() {
            Tok::Ident(s) if !is_reserved(&s) => {
                let pos = self.bump().1;
                Ok((s, pos))
            }
            other => self.error(format!("expected identifier, found {}", other.describe())),
        }
    }

    fn program(&mut self) -> PResult<Program> {
        self.check_unsupported_ident()?;
        if !self.is_kw("mdp") {
            return self.error(format!("expected model type `mdp`, found {}", self.peek().describe()));
        }
        self.bump();
        let mut prog = Program::default();
        let mut seen_module = false;
        loop {
            self.check_unsupported_ident()?;
            match self.peek().clone() {
                Tok::Eof => break,
                Tok::Ident(kw) if kw == "const" => prog.consts.push(self.const_decl()?),
                Tok::Ident(kw) if kw == "formula" => {
                    let pos = self.bump().1;
                    let (name, _) = self.ident()?;
                    self.expect(Tok::Eq)?;
                    let expr = self.expr()?;
                    self.expect(Tok::Semi)?;
                    prog.formulas.push(NamedExpr { name, expr, pos });
                }
                Tok::Ident(kw) if kw == "label" => {
                    let pos = self.bump().1;
                    let name = match self.bump().0 {
                        Tok::Str(s) => s,
                        other => {
                            return Err(Diagnostic::error(
                                DiagnosticCode::Syntax,
                                pos,
                                format!("expected quoted label name, found {}", other.describe()),
                            ))
                        }
                    };
                    self.expect(Tok::Eq)?;
                    let expr = self.expr()?;
                    self.expect(Tok::Semi)?;
                    prog.labels.push(NamedExpr { name, expr, pos });
                }
                Tok::Ident(kw) if kw == "module" => {
                    if seen_module {
                        return self.unsupported("multiple modules (synchronisation/renaming)");
                    }
                    seen_module = true;
                    self.module(&mut prog)?;
                }
                Tok::Ident(kw) if kw == "init" => {
                    return self.unsupported("init ... endinit blocks");
                }
                other => {
                    return self.error(format!(
                        "expected `const`, `formula`, `module` or `label`, found {}",
                        other.describe()
                    ))
                }
            }
        }
        if !seen_module {
            return self.error("model has no module");
        }
        Ok(prog)
    }

    fn const_decl(&mut self) -> PResult<ConstDecl> {
        let pos = self.expect_kw("const")?;
        self.check_unsupported_ident()?;
        let ty = if self.is_kw("int") {
            self.bump();
            ConstType::Int
        } else if self.is_kw("double") {
            self.bump();
            ConstType::Double
        } else {
            // untyped constants default to int in the reference language
            ConstType::Int
        };
        let (name, _) = self.ident()?;
        if *self.peek() == Tok::Semi {
            return self.unsupported(&format!("undefined constant `{name}`"));
        }
        self.expect(Tok::Eq)?;
        let value = self.expr()?;
        self.expect(Tok::Semi)?;
        Ok(ConstDecl { name, ty, value, pos })
    }

    fn module(&mut self, prog: &mut Program) -> PResult<()> {
        self.expect_kw("module")?;
        self.ident()?;
        loop {
            self.check_unsupported_ident()?;
            match self.peek().clone() {
                Tok::Ident(kw) if kw == "endmodule" => {
                    self.bump();
                    return Ok(());
                }
                Tok::LBracket => prog.commands.push(self.command()?),
                Tok::Ident(_) => prog.vars.push(self.var_decl()?),
                Tok::Eof => return self.error("missing `endmodule`"),
                other => {
                    return self.error(format!(
                        "expected variable declaration or command, found {}",
                        other.describe()
                    ))
                }
            }
        }
    }

    fn var_decl(&mut self) -> PResult<VarDecl> {
        let (name, pos) = self.ident()?;
        self.expect(Tok::Colon)?;
        self.check_unsupported_ident()?;
        self.expect(Tok::LBracket)?;
        let lo = self.expr()?;
        self.expect(Tok::DotDot)?;
        let hi = self.expr()?;
        self.expect(Tok::RBracket)?;
        let init = if self.is_kw("init") {
            self.bump();
            Some(self.expr()?)
        } else {
            None
        };
        self.expect(Tok::Semi)?;
        Ok(VarDecl {
            name,
            lo,
            hi,
            init,
            pos,
        })
    }

    fn command(&mut self) -> PResult<Command> {
        let pos = self.expect(Tok::LBracket)?;
        if *self.peek() == Tok::RBracket {
            return self.unsupported("unlabelled command `[]`");
        }
        let (label, _) = self.ident()?;
        self.expect(Tok::RBracket)?;
        let guard = self.expr()?;
        self.expect(Tok::Arrow)?;
        let mut branches = vec![self.branch()?];
        while *self.peek() == Tok::Plus {
            self.bump();
            branches.push(self.branch()?);
        }
        self.expect(Tok::Semi)?;
        Ok(Command {
            label,
            guard,
            branches,
            pos,
        })
    }

    fn starts_update_list(&self) -> bool {
        let is_update =
            *self.peek() == Tok::LParen && matches!(self.peek_at(1), Tok::Ident(_)) && *self.peek_at(2) == Tok::Prime;
        let is_true = self.is_kw("true") && matches!(self.peek_at(1), Tok::Semi | Tok::Plus);
        is_update || is_true
    }

    fn branch(&mut self) -> PResult<Branch> {
        let pos = self.pos();
        let prob = if self.starts_update_list() {
            None
        } else {
            let e = self.expr()?;
            self.expect(Tok::Colon)?;
            Some(e)
        };
        let updates = self.update_list()?;
        Ok(Branch { prob, updates, pos })
    }

    fn update_list(&mut self) -> PResult<Vec<Update>> {
        if self.is_kw("true") {
            self.bump();
            return Ok(Vec::new());
        }
        let mut ups = vec![self.update()?];
        while *self.peek() == Tok::And {
            self.bump();
            ups.push(self.update()?);
        }
        Ok(ups)
    }

    fn update(&mut self) -> PResult<Update> {
        self.expect(Tok::LParen)?;
        let (var, pos) = self.ident()?;
        self.expect(Tok::Prime)?;
        self.expect(Tok::Eq)?;
        let value = self.expr()?;
        self.expect(Tok::RParen)?;
        Ok(Update { var, value, pos })
    }

    pub(crate) fn expr(&mut self) -> PResult<Expr> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.and_expr()?;
        while *self.peek() == Tok::Or {
            let pos = self.bump().1;
            let rhs = self.and_expr()?;
            lhs = bin(pos, BinOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.not_expr()?;
        while *self.peek() == Tok::And {
            let pos = self.bump().1;
            let rhs = self.not_expr()?;
            lhs = bin(pos, BinOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if *self.peek() == Tok::Not {
            let pos = self.bump().1;
            let inner = self.not_expr()?;
            return Ok(Expr {
                pos,
                kind: ExprKind::Not(Box::new(inner)),
            });
        }
        self.rel_expr()
    }

    fn rel_expr(&mut self) -> PResult<Expr> {
        let lhs = self.add_expr()?;
        let op = match self.peek() {
            Tok::Eq => BinOp::Eq,
            Tok::Neq => BinOp::Neq,
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            _ => return Ok(lhs),
        };
        let pos = self.bump().1;
        let rhs = self.add_expr()?;
        Ok(bin(pos, op, lhs, rhs))
    }

    fn add_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            // `p : (x'=1) + q : ...` separates branches; never reached here
            // because update lists end before the `+`.
            let pos = self.bump().1;
            let rhs = self.mul_expr()?;
            lhs = bin(pos, op, lhs, rhs);
        }
    }

    fn mul_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            let pos = self.bump().1;
            let rhs = self.unary()?;
            lhs = bin(pos, op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if *self.peek() == Tok::Minus {
            let pos = self.bump().1;
            let inner = self.unary()?;
            return Ok(Expr {
                pos,
                kind: ExprKind::Neg(Box::new(inner)),
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        self.check_unsupported_ident()?;
        let (tok, pos) = self.toks[self.at].clone();
        let kind = match tok {
            Tok::Int(i) => {
                self.bump();
                ExprKind::Int(i)
            }
            Tok::Real(r) => {
                self.bump();
                ExprKind::Real(r)
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                return Ok(e);
            }
            Tok::Ident(word) if word == "true" || word == "false" => {
                self.bump();
                ExprKind::Bool(word == "true")
            }
            Tok::Ident(word) if word == "min" || word == "max" => {
                self.bump();
                self.expect(Tok::LParen)?;
                let a = self.expr()?;
                self.expect(Tok::Comma)?;
                let b = self.expr()?;
                if *self.peek() == Tok::Comma {
                    return self.unsupported(&format!("{word} with more than two arguments"));
                }
                self.expect(Tok::RParen)?;
                let op = if word == "min" { BinOp::Min } else { BinOp::Max };
                return Ok(bin(pos, op, a, b));
            }
            Tok::Ident(word) if !is_reserved(&word) => {
                self.bump();
                if *self.peek() == Tok::LParen {
                    return self.unsupported(&format!("function `{word}`"));
                }
                ExprKind::Ident(word)
            }
            other => return self.error(format!("expected expression, found {}", other.describe())),
        };
        Ok(Expr { pos, kind })
    }
}

fn bin(pos: Pos, op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
    Expr {
        pos,
        kind: ExprKind::Bin(op, Box::new(lhs), Box::new(rhs)),
    }
}

fn is_reserved(word: &str) -> bool {
    matches!(
        word,
        "mdp"
            | "const"
            | "int"
            | "double"
            | "formula"
            | "module"
            | "endmodule"
            | "init"
            | "label"
            | "true"
            | "false"
            | "min"
            | "max"
    )
}
