//! Lisp-style s-expression reader with source positions.
//!
//! Comments (`;` to end of line) are not dropped entirely: a comment that
//! follows a node on the same line is attached to that node as its trailing
//! comment. The domain and problem builders use this to carry free-text
//! descriptions of types, predicates and actions through a round trip.

use std::fmt;

use super::ParseError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SexpKind {
    Atom(String),
    List(Vec<Sexp>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sexp {
    pub kind: SexpKind,
    pub span: Span,
    /// Comment found on the same line directly after this node.
    pub comment: Option<String>,
}

impl Sexp {
    pub fn atom(text: impl Into<String>) -> Self {
        Sexp {
            kind: SexpKind::Atom(text.into()),
            span: Span::default(),
            comment: None,
        }
    }

    pub fn list(items: Vec<Sexp>) -> Self {
        Sexp {
            kind: SexpKind::List(items),
            span: Span::default(),
            comment: None,
        }
    }

    pub fn as_atom(&self) -> Option<&str> {
        match &self.kind {
            SexpKind::Atom(a) => Some(a),
            SexpKind::List(_) => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Sexp]> {
        match &self.kind {
            SexpKind::List(items) => Some(items),
            SexpKind::Atom(_) => None,
        }
    }

    /// Lowercased head atom of a list, if any.
    pub fn head(&self) -> Option<String> {
        self.as_list()
            .and_then(|items| items.first())
            .and_then(Sexp::as_atom)
            .map(str::to_ascii_lowercase)
    }

    pub fn is_keyword(&self) -> bool {
        self.as_atom().is_some_and(|a| a.starts_with(':'))
    }
}

/// Single-line rendering, used for messages and for printing drafts that
/// cannot be converted into the typed model.
impl fmt::Display for Sexp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            SexpKind::Atom(a) => f.write_str(a),
            SexpKind::List(items) => {
                f.write_str("(")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Atom(String),
    Comment(String),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    span: Span,
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut line = 1u32;
    let mut col = 1u32;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        let span = Span { line, col };
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            '(' => {
                chars.next();
                col += 1;
                out.push(Token { tok: Tok::Open, span });
            }
            ')' => {
                chars.next();
                col += 1;
                out.push(Token { tok: Tok::Close, span });
            }
            ';' => {
                let mut body = String::new();
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    body.push(c);
                    chars.next();
                    col += 1;
                }
                let body = body.trim_start_matches(';').trim().to_string();
                out.push(Token { tok: Tok::Comment(body), span });
            }
            _ => {
                let mut atom = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                        break;
                    }
                    atom.push(c);
                    chars.next();
                    col += 1;
                }
                out.push(Token { tok: Tok::Atom(atom), span });
            }
        }
    }
    out
}

struct Reader {
    tokens: Vec<Token>,
    pos: usize,
}

impl Reader {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn skip_comments(&mut self) {
        while let Some(Token { tok: Tok::Comment(_), .. }) = self.peek() {
            self.pos += 1;
        }
    }

    fn take_trailing_comment(&mut self, end_line: u32) -> Option<String> {
        if let Some(Token { tok: Tok::Comment(text), span }) = self.peek() {
            if span.line == end_line {
                let text = text.clone();
                self.pos += 1;
                return Some(text);
            }
        }
        None
    }

    fn read(&mut self) -> Result<Sexp, ParseError> {
        self.skip_comments();
        let Some(token) = self.tokens.get(self.pos).cloned() else {
            return Err(ParseError::eof("expected an expression"));
        };
        self.pos += 1;
        match token.tok {
            Tok::Atom(a) => {
                let comment = self.take_trailing_comment(token.span.line);
                Ok(Sexp {
                    kind: SexpKind::Atom(a),
                    span: token.span,
                    comment,
                })
            }
            Tok::Close => Err(ParseError::at(
                token.span,
                "unexpected ')'",
                "remove the extra closing parenthesis",
            )),
            Tok::Open => {
                let mut items = Vec::new();
                loop {
                    self.skip_comments();
                    match self.peek() {
                        None => {
                            return Err(ParseError::at(
                                token.span,
                                "unclosed '('",
                                "add the missing closing parenthesis",
                            ))
                        }
                        Some(Token { tok: Tok::Close, span }) => {
                            let end = span.line;
                            self.pos += 1;
                            let comment = self.take_trailing_comment(end);
                            return Ok(Sexp {
                                kind: SexpKind::List(items),
                                span: token.span,
                                comment,
                            });
                        }
                        Some(_) => items.push(self.read()?),
                    }
                }
            }
            Tok::Comment(_) => unreachable!("comments are skipped"),
        }
    }
}

/// Reads every top-level expression in `text`.
pub fn read_all(text: &str) -> Result<Vec<Sexp>, ParseError> {
    let mut reader = Reader {
        tokens: tokenize(text),
        pos: 0,
    };
    let mut out = Vec::new();
    loop {
        reader.skip_comments();
        if reader.peek().is_none() {
            break;
        }
        out.push(reader.read()?);
    }
    Ok(out)
}

/// Reads exactly one top-level expression.
pub fn read_one(text: &str) -> Result<Sexp, ParseError> {
    let mut all = read_all(text)?;
    match all.len() {
        0 => Err(ParseError::eof("expected an expression, found nothing")),
        1 => Ok(all.remove(0)),
        _ => Err(ParseError::at(
            all[1].span,
            "unexpected trailing expression",
            "wrap the whole definition in a single (define ...) form",
        )),
    }
}
