use std::collections::BTreeSet;

use super::lexer::{lex, Tok};
use super::{AnnotationKind, ParseError, ParseErrorKind, Pos, Protocol, SourceAnnotation};
use crate::model::{Branches, GlobalType, Label, McName, RecVar, Role};

#[derive(Debug)]
enum Stmt {
    Msg {
        label: String,
        from: (String, Pos),
        to: (String, Pos),
        star: bool,
        annotations: Vec<(String, Pos)>,
        pos: Pos,
    },
    Choice {
        at: (String, Pos),
        blocks: Vec<Vec<Stmt>>,
        pos: Pos,
    },
    Rec {
        var: String,
        body: Vec<Stmt>,
        pos: Pos,
    },
    Continue {
        var: String,
        pos: Pos,
    },
    Mixed {
        name: Option<String>,
        lhs: Vec<Stmt>,
        rhs: Vec<Stmt>,
        pos: Pos,
    },
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
}

const KEYWORDS: &[&str] = &["global", "protocol", "role", "from", "to", "choice", "at", "or", "rec", "continue", "mixed"];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn next(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn syntax<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::new(ParseErrorKind::Syntax, self.pos(), msg))
    }

    fn expect(&mut self, want: Tok) -> Result<Pos, ParseError> {
        if *self.peek() == want {
            Ok(self.next().1)
        } else {
            self.syntax(format!("expected {}, found {}", want.describe(), self.peek().describe()))
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<Pos, ParseError> {
        match self.peek() {
            Tok::Ident(s) if s == kw => Ok(self.next().1),
            t => {
                let found = t.describe();
                self.syntax(format!("expected `{kw}`, found {found}"))
            }
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn ident(&mut self) -> Result<(String, Pos), ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let p = self.next().1;
                Ok((s, p))
            }
            t => self.syntax(format!("expected identifier, found {}", t.describe())),
        }
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect(Tok::LBrace)?;
        let mut out = Vec::new();
        while *self.peek() != Tok::RBrace {
            if *self.peek() == Tok::Eof {
                return self.syntax("unclosed block");
            }
            out.push(self.stmt()?);
        }
        self.expect(Tok::RBrace)?;
        Ok(out)
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let pos = self.pos();
        if self.is_keyword("choice") {
            self.next();
            self.keyword("at")?;
            let at = self.ident()?;
            let mut blocks = vec![self.block()?];
            while self.is_keyword("or") {
                self.next();
                blocks.push(self.block()?);
            }
            return Ok(Stmt::Choice { at, blocks, pos });
        }
        if self.is_keyword("rec") {
            self.next();
            let (var, _) = self.ident()?;
            let body = self.block()?;
            return Ok(Stmt::Rec { var, body, pos });
        }
        if self.is_keyword("continue") {
            self.next();
            let (var, _) = self.ident()?;
            self.expect(Tok::Semi)?;
            return Ok(Stmt::Continue { var, pos });
        }
        if self.is_keyword("mixed") {
            self.next();
            let name = if *self.peek() == Tok::At {
                self.next();
                Some(self.ident()?.0)
            } else {
                None
            };
            let lhs = self.block()?;
            if !self.is_keyword("or") {
                return Err(ParseError::new(ParseErrorKind::McShape, self.pos(), "`mixed` needs exactly two blocks"));
            }
            self.next();
            let rhs = self.block()?;
            if self.is_keyword("or") {
                return Err(ParseError::new(ParseErrorKind::McShape, self.pos(), "`mixed` needs exactly two blocks"));
            }
            return Ok(Stmt::Mixed { name, lhs, rhs, pos });
        }
        let (label, _) = self.ident()?;
        self.payload()?;
        self.keyword("from")?;
        let from = self.ident()?;
        self.keyword("to")?;
        let to = self.ident()?;
        let star = if *self.peek() == Tok::Star {
            self.next();
            true
        } else {
            false
        };
        self.expect(Tok::Semi)?;
        let mut annotations = Vec::new();
        while *self.peek() == Tok::At {
            let apos = self.next().1;
            match self.next() {
                (Tok::Str(s), _) => annotations.push((s, apos)),
                (t, p) => {
                    return Err(ParseError::new(
                        ParseErrorKind::Syntax,
                        p,
                        format!("expected annotation string, found {}", t.describe()),
                    ))
                }
            }
        }
        Ok(Stmt::Msg { label, from, to, star, annotations, pos })
    }

    fn payload(&mut self) -> Result<(), ParseError> {
        self.expect(Tok::LParen)?;
        if *self.peek() == Tok::RParen {
            self.next();
            return Ok(());
        }
        loop {
            if *self.peek() == Tok::Ellipsis {
                self.next();
            } else {
                self.ident()?;
                if *self.peek() == Tok::Colon {
                    self.next();
                    self.ident()?;
                }
            }
            match self.peek() {
                Tok::Comma => {
                    self.next();
                }
                Tok::RParen => {
                    self.next();
                    return Ok(());
                }
                t => {
                    let found = t.describe();
                    return self.syntax(format!("expected `,` or `)`, found {found}"));
                }
            }
        }
    }
}

struct Desugar {
    roles: BTreeSet<Role>,
    user_names: BTreeSet<String>,
    next_auto: usize,
    seen_names: BTreeSet<String>,
    annotations: Vec<SourceAnnotation>,
    markers: BTreeSet<(McName, Label)>,
}

struct Scope<'a> {
    recs: Vec<&'a str>,
    mc: Option<McName>,
}

impl Desugar {
    fn role(&self, (name, pos): &(String, Pos)) -> Result<Role, ParseError> {
        let r = Role::new(name);
        if self.roles.contains(&r) {
            Ok(r)
        } else {
            Err(ParseError::new(ParseErrorKind::UndeclaredRole, *pos, format!("undeclared role `{name}`")))
        }
    }

    fn fresh_name(&mut self) -> String {
        loop {
            self.next_auto += 1;
            let n = format!("c{}", self.next_auto);
            if !self.user_names.contains(&n) {
                return n;
            }
        }
    }

    /// Names are assigned in source order before any tail is copied, so that
    /// copies of one `mixed` block share a name.
    fn assign_names(&mut self, stmts: &[Stmt], out: &mut Vec<String>) -> Result<(), ParseError> {
        for s in stmts {
            match s {
                Stmt::Msg { .. } | Stmt::Continue { .. } => {}
                Stmt::Choice { blocks, .. } => {
                    for b in blocks {
                        self.assign_names(b, out)?;
                    }
                }
                Stmt::Rec { body, .. } => self.assign_names(body, out)?,
                Stmt::Mixed { name, lhs, rhs, pos } => {
                    let n = match name {
                        Some(n) => n.clone(),
                        None => self.fresh_name(),
                    };
                    if !self.seen_names.insert(n.clone()) {
                        return Err(ParseError::new(ParseErrorKind::Invalid, *pos, format!("duplicate MC name `{n}`")));
                    }
                    out.push(n);
                    self.assign_names(lhs, out)?;
                    self.assign_names(rhs, out)?;
                }
            }
        }
        Ok(())
    }

    fn collect_user_names(stmts: &[Stmt], out: &mut BTreeSet<String>) {
        for s in stmts {
            match s {
                Stmt::Msg { .. } | Stmt::Continue { .. } => {}
                Stmt::Choice { blocks, .. } => blocks.iter().for_each(|b| Self::collect_user_names(b, out)),
                Stmt::Rec { body, .. } => Self::collect_user_names(body, out),
                Stmt::Mixed { name, lhs, rhs, .. } => {
                    if let Some(n) = name {
                        out.insert(n.clone());
                    }
                    Self::collect_user_names(lhs, out);
                    Self::collect_user_names(rhs, out);
                }
            }
        }
    }

    fn seq<'a>(
        &mut self,
        stmts: &'a [Stmt],
        tail: &GlobalType,
        scope: &mut Scope<'a>,
        names: &mut std::slice::Iter<'_, String>,
        record: bool,
    ) -> Result<GlobalType, ParseError> {
        let Some((first, rest)) = stmts.split_first() else {
            return Ok(tail.clone());
        };
        match first {
            Stmt::Msg { label, from, to, star, annotations, pos } => {
                let f = self.role(from)?;
                let t = self.role(to)?;
                if f == t {
                    return Err(ParseError::new(ParseErrorKind::Invalid, *pos, format!("role `{f}` sends to itself")));
                }
                let label = Label::new(label);
                if record {
                    if *star {
                        match &scope.mc {
                            Some(c) => {
                                self.markers.insert((c.clone(), label.clone()));
                            }
                            None => {
                                return Err(ParseError::new(
                                    ParseErrorKind::Invalid,
                                    to.1,
                                    "commit marker `*` outside a `mixed` block",
                                ))
                            }
                        }
                    }
                    for (text, apos) in annotations {
                        let mut words = text.split_whitespace();
                        match (words.next(), words.next(), words.next()) {
                            (Some("failed"), Some(r), None) => {
                                let role = self.role(&(r.to_string(), *apos))?;
                                self.annotations.push(SourceAnnotation {
                                    kind: AnnotationKind::FailedRole,
                                    role,
                                    pos: *apos,
                                    from: f.clone(),
                                    to: t.clone(),
                                    label: label.clone(),
                                });
                            }
                            _ => {
                                return Err(ParseError::new(
                                    ParseErrorKind::Invalid,
                                    *apos,
                                    format!("unknown annotation '{text}'"),
                                ))
                            }
                        }
                    }
                }
                let cont = self.seq(rest, tail, scope, names, record)?;
                Ok(GlobalType::Interaction { from: f, to: t, branches: Branches::single(label, cont) })
            }
            Stmt::Continue { var, pos } => {
                if !scope.recs.contains(&var.as_str()) {
                    return Err(ParseError::new(ParseErrorKind::UnboundContinue, *pos, format!("unbound `continue {var}`")));
                }
                if let Some(next) = rest.first() {
                    return Err(ParseError::new(
                        ParseErrorKind::Invalid,
                        stmt_pos(next),
                        format!("statement after `continue {var}` is unreachable"),
                    ));
                }
                Ok(GlobalType::Var(RecVar::new(var)))
            }
            Stmt::Rec { var, body, pos } => {
                if scope.recs.contains(&var.as_str()) {
                    return Err(ParseError::new(ParseErrorKind::Invalid, *pos, format!("`rec {var}` shadows an enclosing `rec {var}`")));
                }
                if body.is_empty() {
                    return Err(ParseError::new(ParseErrorKind::Invalid, *pos, format!("empty `rec {var}` block")));
                }
                // Names inside the body come before names in the rest.
                let mut body_names = names.clone();
                skip_names(body, names);
                let after = self.seq(rest, tail, scope, names, record)?;
                scope.recs.push(var);
                let b = self.seq(body, &after, scope, &mut body_names, record);
                scope.recs.pop();
                Ok(GlobalType::Rec { var: RecVar::new(var), body: Box::new(b?) })
            }
            Stmt::Choice { at, blocks, pos } => {
                let chooser = self.role(at)?;
                let mut block_names = Vec::new();
                for b in blocks {
                    block_names.push(names.clone());
                    skip_names(b, names);
                }
                let after = self.seq(rest, tail, scope, names, record)?;
                let mut receiver: Option<Role> = None;
                let mut branches: Vec<(Label, GlobalType)> = Vec::new();
                for (i, (b, mut bn)) in blocks.iter().zip(block_names).enumerate() {
                    let g = self.seq(b, &after, scope, &mut bn, record)?;
                    let bpos = b.first().map(stmt_pos).unwrap_or(*pos);
                    match g {
                        GlobalType::Interaction { from, to, branches: bs } => {
                            if from != chooser {
                                return Err(ParseError::new(
                                    ParseErrorKind::Invalid,
                                    bpos,
                                    format!("branch {} of `choice at {chooser}` starts with a message from `{from}`", i + 1),
                                ));
                            }
                            match &receiver {
                                None => receiver = Some(to),
                                Some(r) if *r == to => {}
                                Some(r) => {
                                    return Err(ParseError::new(
                                        ParseErrorKind::Invalid,
                                        bpos,
                                        format!("`choice at {chooser}` sends to both `{r}` and `{to}`"),
                                    ))
                                }
                            }
                            for (l, c) in bs.into_vec() {
                                if branches.iter().any(|(x, _)| *x == l) {
                                    return Err(ParseError::new(
                                        ParseErrorKind::Invalid,
                                        bpos,
                                        format!("label `{l}` occurs in two branches of `choice at {chooser}`"),
                                    ));
                                }
                                branches.push((l, c));
                            }
                        }
                        _ => {
                            return Err(ParseError::new(
                                ParseErrorKind::Invalid,
                                bpos,
                                format!("branch {} of `choice at {chooser}` must start with a message", i + 1),
                            ))
                        }
                    }
                }
                Ok(GlobalType::Interaction {
                    from: chooser,
                    to: receiver.expect("at least one block"),
                    branches: Branches::new(branches).expect("checked nonempty and distinct"),
                })
            }
            Stmt::Mixed { lhs, rhs, pos, .. } => {
                let name = McName::new(names.next().expect("names assigned"));
                let mut lhs_names = names.clone();
                skip_names(lhs, names);
                let mut rhs_names = names.clone();
                skip_names(rhs, names);
                let after = self.seq(rest, tail, scope, names, record)?;
                let outer = scope.mc.replace(name.clone());
                let l = self.seq(lhs, &after, scope, &mut lhs_names, record);
                let r = self.seq(rhs, &after, scope, &mut rhs_names, record);
                scope.mc = outer;
                let (l, r) = (l?, r?);
                let shape = |g: &GlobalType, side: &str, stmts: &[Stmt]| -> Result<(), ParseError> {
                    if matches!(g, GlobalType::Interaction { .. }) {
                        Ok(())
                    } else {
                        Err(ParseError::new(
                            ParseErrorKind::McShape,
                            stmts.first().map(stmt_pos).unwrap_or(*pos),
                            format!("the {side} block of `mixed` must start with a message"),
                        ))
                    }
                };
                shape(&l, "left", lhs)?;
                shape(&r, "right", rhs)?;
                Ok(GlobalType::McDef { name, lhs: Box::new(l), rhs: Box::new(r) })
            }
        }
    }
}

fn stmt_pos(s: &Stmt) -> Pos {
    match s {
        Stmt::Msg { pos, .. } | Stmt::Choice { pos, .. } | Stmt::Rec { pos, .. } | Stmt::Continue { pos, .. } | Stmt::Mixed { pos, .. } => *pos,
    }
}

fn count_names(stmts: &[Stmt]) -> usize {
    stmts
        .iter()
        .map(|s| match s {
            Stmt::Msg { .. } | Stmt::Continue { .. } => 0,
            Stmt::Choice { blocks, .. } => blocks.iter().map(|b| count_names(b)).sum(),
            Stmt::Rec { body, .. } => count_names(body),
            Stmt::Mixed { lhs, rhs, .. } => 1 + count_names(lhs) + count_names(rhs),
        })
        .sum()
}

fn skip_names(stmts: &[Stmt], names: &mut std::slice::Iter<'_, String>) {
    for _ in 0..count_names(stmts) {
        names.next();
    }
}

pub fn parse(src: &str) -> Result<Protocol, ParseError> {
    let mut p = Parser { toks: lex(src)?, at: 0 };
    let mut pragmas = BTreeSet::new();
    while *p.peek() == Tok::At {
        p.next();
        match p.next() {
            (Tok::Str(s), _) => {
                pragmas.insert(s);
            }
            (t, pos) => return Err(ParseError::new(ParseErrorKind::Syntax, pos, format!("expected pragma string, found {}", t.describe()))),
        }
    }
    p.keyword("global")?;
    p.keyword("protocol")?;
    let (name, _) = p.ident()?;
    p.expect(Tok::LParen)?;
    let mut roles = Vec::new();
    loop {
        p.keyword("role")?;
        let (r, rpos) = p.ident()?;
        let r = Role::new(r);
        if roles.contains(&r) {
            return Err(ParseError::new(ParseErrorKind::Invalid, rpos, format!("role `{r}` declared twice")));
        }
        roles.push(r);
        match p.peek() {
            Tok::Comma => {
                p.next();
            }
            _ => break,
        }
    }
    p.expect(Tok::RParen)?;
    let body_stmts = p.block()?;
    if *p.peek() != Tok::Eof {
        return p.syntax(format!("unexpected {} after protocol", p.peek().describe()));
    }

    let mut user_names = BTreeSet::new();
    Desugar::collect_user_names(&body_stmts, &mut user_names);
    let mut d = Desugar {
        roles: roles.iter().cloned().collect(),
        user_names,
        next_auto: 0,
        seen_names: BTreeSet::new(),
        annotations: Vec::new(),
        markers: BTreeSet::new(),
    };
    let mut names = Vec::new();
    d.assign_names(&body_stmts, &mut names)?;
    let mut scope = Scope { recs: Vec::new(), mc: None };
    let body = d.seq(&body_stmts, &GlobalType::End, &mut scope, &mut names.iter(), true)?;
    // Tails copied into several branches record their annotations once per copy.
    d.annotations.sort_by(|a, b| (a.pos, &a.role).cmp(&(b.pos, &b.role)));
    d.annotations.dedup();
    Ok(Protocol { name, roles, body, annotations: d.annotations, commit_markers: d.markers, pragmas })
}
