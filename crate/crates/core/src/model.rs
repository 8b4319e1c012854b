//! Syntax trees for global and local types, together with messages, queues,
//! configurations and the structural operations shared by every other module.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! name_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Arc<str>);

        impl $name {
            /// Panics on an empty name; the parser never produces one.
            pub fn new(name: impl AsRef<str>) -> Self {
                let name = name.as_ref();
                assert!(!name.is_empty(), concat!(stringify!($name), " must be nonempty"));
                Self(Arc::from(name))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self::new(s)
            }
        }
    };
}

name_type!(
    /// A protocol participant.
    Role
);
name_type!(
    /// A message label.
    Label
);
name_type!(
    /// A recursion variable.
    RecVar
);
name_type!(
    /// The name of a mixed-choice definition.
    McName
);

pub type RoleSet = BTreeSet<Role>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("a choice needs at least one branch")]
    EmptyBranches,
    #[error("label `{0}` occurs twice in one choice")]
    DuplicateLabel(Label),
}

/// Source-ordered branch map. Semantics treat it as a set keyed by label.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Branches<T>(Vec<(Label, T)>);

impl<T> Branches<T> {
    pub fn new(branches: Vec<(Label, T)>) -> Result<Self, ModelError> {
        if branches.is_empty() {
            return Err(ModelError::EmptyBranches);
        }
        let mut seen = BTreeSet::new();
        for (l, _) in &branches {
            if !seen.insert(l.clone()) {
                return Err(ModelError::DuplicateLabel(l.clone()));
            }
        }
        Ok(Self(branches))
    }

    pub fn single(label: Label, cont: T) -> Self {
        Self(vec![(label, cont)])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Label, &T)> {
        self.0.iter().map(|(l, t)| (l, t))
    }

    pub fn labels(&self) -> impl Iterator<Item = &Label> {
        self.0.iter().map(|(l, _)| l)
    }

    pub fn conts(&self) -> impl Iterator<Item = &T> {
        self.0.iter().map(|(_, t)| t)
    }

    pub fn get(&self, label: &Label) -> Option<&T> {
        self.0.iter().find(|(l, _)| l == label).map(|(_, t)| t)
    }

    pub fn position(&self, label: &Label) -> Option<usize> {
        self.0.iter().position(|(l, _)| l == label)
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.position(label).is_some()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[(Label, T)] {
        &self.0
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Branches<U> {
        Branches(self.0.iter().map(|(l, t)| (l.clone(), f(t))).collect())
    }

    pub fn try_map<U, E>(&self, mut f: impl FnMut(&Label, &T) -> Result<U, E>) -> Result<Branches<U>, E> {
        let mut out = Vec::with_capacity(self.0.len());
        for (l, t) in &self.0 {
            out.push((l.clone(), f(l, t)?));
        }
        Ok(Branches(out))
    }

    /// Replaces the continuation at `idx`.
    pub fn with(&self, idx: usize, cont: T) -> Self
    where
        T: Clone,
    {
        let mut v = self.0.clone();
        v[idx].1 = cont;
        Branches(v)
    }

    pub fn into_vec(self) -> Vec<(Label, T)> {
        self.0
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum GlobalType {
    Interaction {
        from: Role,
        to: Role,
        branches: Branches<GlobalType>,
    },
    InTransit {
        from: Role,
        to: Role,
        chosen: Label,
        branches: Branches<GlobalType>,
    },
    Rec {
        var: RecVar,
        body: Box<GlobalType>,
    },
    Var(RecVar),
    End,
    McDef {
        name: McName,
        lhs: Box<GlobalType>,
        rhs: Box<GlobalType>,
    },
    McActive {
        name: McName,
        instance: u32,
        lset: RoleSet,
        rset: RoleSet,
        lhs: Box<GlobalType>,
        rhs: Box<GlobalType>,
    },
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum LocalType {
    Branch {
        peer: Role,
        branches: Branches<LocalType>,
    },
    Select {
        peer: Role,
        branches: Branches<LocalType>,
    },
    Rec {
        var: RecVar,
        body: Box<LocalType>,
    },
    Var(RecVar),
    End,
    McDef {
        name: McName,
        lhs: Box<LocalType>,
        rhs: Box<LocalType>,
    },
    McActive {
        name: McName,
        lhs: Box<LocalType>,
        rhs: Box<LocalType>,
    },
    /// Committed left: `T ▷ •`.
    McLeft {
        name: McName,
        lhs: Box<LocalType>,
    },
    /// Committed right: `• ▷ T`.
    McRight {
        name: McName,
        rhs: Box<LocalType>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Side {
    L,
    R,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Path(Vec<Side>);

impl Path {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn from_sides(sides: impl IntoIterator<Item = Side>) -> Self {
        Self(sides.into_iter().collect())
    }

    /// The path extended by one more side at the end.
    pub fn child(&self, side: Side) -> Self {
        let mut v = self.0.clone();
        v.push(side);
        Self(v)
    }

    pub fn sides(&self) -> &[Side] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn split_first(&self) -> Option<(Side, Path)> {
        self.0.split_first().map(|(s, rest)| (*s, Path(rest.to_vec())))
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("ε");
        }
        let parts: Vec<&str> = self
            .0
            .iter()
            .map(|s| match s {
                Side::L => "L",
                Side::R => "R",
            })
            .collect();
        f.write_str(&parts.join("."))
    }
}

impl fmt::Debug for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct Message {
    pub label: Label,
    pub path: Path,
}

impl Message {
    pub fn new(label: Label, path: Path) -> Self {
        Self { label, path }
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.label, self.path)
    }
}

/// Input queues of one role, one FIFO per sender. Empty FIFOs are not stored,
/// so two queues are equal exactly when every sender's sequence is equal.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default)]
pub struct Queue(BTreeMap<Role, Vec<Message>>);

impl Queue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, sender: &Role) -> &[Message] {
        self.0.get(sender).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn push(&mut self, sender: &Role, msg: Message) {
        self.0.entry(sender.clone()).or_default().push(msg);
    }

    pub fn prepend(&mut self, sender: &Role, msg: Message) {
        self.0.entry(sender.clone()).or_default().insert(0, msg);
    }

    pub fn remove(&mut self, sender: &Role, idx: usize) -> Message {
        let fifo = self.0.get_mut(sender).expect("sender has messages");
        let m = fifo.remove(idx);
        if fifo.is_empty() {
            self.0.remove(sender);
        }
        m
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.values().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Role, &[Message])> {
        self.0.iter().map(|(r, v)| (r, v.as_slice()))
    }

    /// Per-sender concatenation: `self` first, then `other`.
    pub fn concat(&self, other: &Queue) -> Queue {
        let mut out = self.clone();
        for (r, msgs) in other.iter() {
            for m in msgs {
                out.push(r, m.clone());
            }
        }
        out
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&Role, &Message) -> bool) {
        for (r, fifo) in self.0.iter_mut() {
            fifo.retain(|m| keep(r, m));
        }
        self.0.retain(|_, v| !v.is_empty());
    }
}

impl fmt::Display for Queue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        f.write_str("{")?;
        for (r, msgs) in self.iter() {
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            let ms: Vec<String> = msgs.iter().map(ToString::to_string).collect();
            write!(f, "{r} ↦ {}", ms.join("·"))?;
        }
        f.write_str("}")
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Configuration {
    pub role: Role,
    pub behavior: LocalType,
    pub inbox: Queue,
}

impl Configuration {
    pub fn new(role: Role, behavior: LocalType, inbox: Queue) -> Self {
        Self { role, behavior, inbox }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("role `{0}` has two configurations")]
pub struct DuplicateRole(pub Role);

/// A set of configurations with pairwise-distinct roles, kept sorted by role.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default)]
pub struct System(BTreeMap<Role, Configuration>);

impl System {
    pub fn new(configs: impl IntoIterator<Item = Configuration>) -> Result<Self, DuplicateRole> {
        let mut map = BTreeMap::new();
        for c in configs {
            let role = c.role.clone();
            if map.insert(role.clone(), c).is_some() {
                return Err(DuplicateRole(role));
            }
        }
        Ok(Self(map))
    }

    pub fn get(&self, role: &Role) -> Option<&Configuration> {
        self.0.get(role)
    }

    pub fn get_mut(&mut self, role: &Role) -> Option<&mut Configuration> {
        self.0.get_mut(role)
    }

    pub fn configs(&self) -> impl Iterator<Item = &Configuration> {
        self.0.values()
    }

    pub fn roles(&self) -> impl Iterator<Item = &Role> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn replace(&mut self, c: Configuration) {
        self.0.insert(c.role.clone(), c);
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransitionLabel {
    Send { from: Role, to: Role, label: Label },
    Recv { from: Role, to: Role, label: Label },
    New { mc: McName, instance: Option<u32> },
    Purge,
}

impl TransitionLabel {
    pub fn send(from: &str, to: &str, label: &str) -> Self {
        Self::Send { from: from.into(), to: to.into(), label: label.into() }
    }

    pub fn recv(from: &str, to: &str, label: &str) -> Self {
        Self::Recv { from: from.into(), to: to.into(), label: label.into() }
    }

    /// ν and purge steps are silent for correspondence purposes.
    pub fn is_tau(&self) -> bool {
        matches!(self, Self::New { .. } | Self::Purge)
    }
}

impl fmt::Display for TransitionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Send { from, to, label } => write!(f, "{from}{to}!{label}"),
            Self::Recv { from, to, label } => write!(f, "{from}{to}?{label}"),
            Self::New { mc, instance: Some(n) } => write!(f, "ν {mc}#{n}"),
            Self::New { mc, instance: None } => write!(f, "ν {mc}"),
            Self::Purge => f.write_str("gc"),
        }
    }
}

pub fn subject(label: &TransitionLabel) -> RoleSet {
    match label {
        TransitionLabel::Send { from, .. } => [from.clone()].into(),
        TransitionLabel::Recv { to, .. } => [to.clone()].into(),
        TransitionLabel::New { .. } | TransitionLabel::Purge => RoleSet::new(),
    }
}

impl GlobalType {
    pub fn interaction(from: &str, to: &str, branches: Vec<(&str, GlobalType)>) -> Self {
        let bs = branches.into_iter().map(|(l, g)| (Label::new(l), g)).collect();
        Self::Interaction {
            from: from.into(),
            to: to.into(),
            branches: Branches::new(bs).expect("valid branches"),
        }
    }

    /// `from→to:label.cont`
    pub fn msg(from: &str, to: &str, label: &str, cont: GlobalType) -> Self {
        Self::interaction(from, to, vec![(label, cont)])
    }

    pub fn rec(var: &str, body: GlobalType) -> Self {
        Self::Rec { var: var.into(), body: Box::new(body) }
    }

    pub fn var(var: &str) -> Self {
        Self::Var(var.into())
    }

    pub fn mc(name: &str, lhs: GlobalType, rhs: GlobalType) -> Self {
        Self::McDef { name: name.into(), lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    /// Roles that still have to act. Roles committed to one side of an active
    /// MC no longer count the other side.
    pub fn roles(&self) -> RoleSet {
        let mut out = RoleSet::new();
        self.collect_roles(&mut out);
        out
    }

    fn collect_roles(&self, out: &mut RoleSet) {
        match self {
            Self::Interaction { from, to, branches } => {
                out.insert(from.clone());
                out.insert(to.clone());
                for g in branches.conts() {
                    g.collect_roles(out);
                }
            }
            Self::InTransit { to, chosen, branches, .. } => {
                out.insert(to.clone());
                if let Some(g) = branches.get(chosen) {
                    g.collect_roles(out);
                }
            }
            Self::Rec { body, .. } => body.collect_roles(out),
            Self::Var(_) | Self::End => {}
            Self::McDef { lhs, rhs, .. } => {
                lhs.collect_roles(out);
                rhs.collect_roles(out);
            }
            Self::McActive { lset, rset, lhs, rhs, .. } => {
                out.extend(lhs.roles().difference(rset).cloned());
                out.extend(rhs.roles().difference(lset).cloned());
            }
        }
    }

    /// Every role mentioned anywhere in the term, ignoring commitment.
    pub fn all_roles(&self) -> RoleSet {
        let mut out = RoleSet::new();
        self.visit(&mut |g| match g {
            Self::Interaction { from, to, .. } | Self::InTransit { from, to, .. } => {
                out.insert(from.clone());
                out.insert(to.clone());
            }
            _ => {}
        });
        out
    }

    /// Pre-order traversal over every subterm.
    pub fn visit(&self, f: &mut impl FnMut(&GlobalType)) {
        f(self);
        match self {
            Self::Interaction { branches, .. } | Self::InTransit { branches, .. } => {
                for g in branches.conts() {
                    g.visit(f);
                }
            }
            Self::Rec { body, .. } => body.visit(f),
            Self::Var(_) | Self::End => {}
            Self::McDef { lhs, rhs, .. } | Self::McActive { lhs, rhs, .. } => {
                lhs.visit(f);
                rhs.visit(f);
            }
        }
    }

    /// Replaces free occurrences of `var` by `with`.
    pub fn subst(&self, var: &RecVar, with: &GlobalType) -> GlobalType {
        match self {
            Self::Interaction { from, to, branches } => Self::Interaction {
                from: from.clone(),
                to: to.clone(),
                branches: branches.map(|g| g.subst(var, with)),
            },
            Self::InTransit { from, to, chosen, branches } => Self::InTransit {
                from: from.clone(),
                to: to.clone(),
                chosen: chosen.clone(),
                branches: branches.map(|g| g.subst(var, with)),
            },
            Self::Rec { var: v, body } => {
                if v == var {
                    self.clone()
                } else {
                    Self::Rec { var: v.clone(), body: Box::new(body.subst(var, with)) }
                }
            }
            Self::Var(v) => {
                if v == var {
                    with.clone()
                } else {
                    self.clone()
                }
            }
            Self::End => Self::End,
            Self::McDef { name, lhs, rhs } => Self::McDef {
                name: name.clone(),
                lhs: Box::new(lhs.subst(var, with)),
                rhs: Box::new(rhs.subst(var, with)),
            },
            Self::McActive { name, instance, lset, rset, lhs, rhs } => Self::McActive {
                name: name.clone(),
                instance: *instance,
                lset: lset.clone(),
                rset: rset.clone(),
                lhs: Box::new(lhs.subst(var, with)),
                rhs: Box::new(rhs.subst(var, with)),
            },
        }
    }

    /// `μt.G ↦ G[μt.G/t]`, once per binder of the original term.
    pub fn unfold_all_once(&self) -> GlobalType {
        match self {
            Self::Rec { var, body } => body.unfold_all_once().subst(var, self),
            Self::Interaction { from, to, branches } => Self::Interaction {
                from: from.clone(),
                to: to.clone(),
                branches: branches.map(GlobalType::unfold_all_once),
            },
            Self::InTransit { from, to, chosen, branches } => Self::InTransit {
                from: from.clone(),
                to: to.clone(),
                chosen: chosen.clone(),
                branches: branches.map(GlobalType::unfold_all_once),
            },
            Self::Var(_) | Self::End => self.clone(),
            Self::McDef { name, lhs, rhs } => Self::McDef {
                name: name.clone(),
                lhs: Box::new(lhs.unfold_all_once()),
                rhs: Box::new(rhs.unfold_all_once()),
            },
            Self::McActive { name, instance, lset, rset, lhs, rhs } => Self::McActive {
                name: name.clone(),
                instance: *instance,
                lset: lset.clone(),
                rset: rset.clone(),
                lhs: Box::new(lhs.unfold_all_once()),
                rhs: Box::new(rhs.unfold_all_once()),
            },
        }
    }

    /// `⌊G⌋`: recursion and `end` become `end`.
    pub fn truncate(&self) -> GlobalType {
        match self {
            Self::Rec { .. } | Self::Var(_) | Self::End => Self::End,
            Self::Interaction { from, to, branches } => Self::Interaction {
                from: from.clone(),
                to: to.clone(),
                branches: branches.map(GlobalType::truncate),
            },
            Self::InTransit { from, to, chosen, branches } => Self::InTransit {
                from: from.clone(),
                to: to.clone(),
                chosen: chosen.clone(),
                branches: branches.map(GlobalType::truncate),
            },
            Self::McDef { name, lhs, rhs } => Self::McDef {
                name: name.clone(),
                lhs: Box::new(lhs.truncate()),
                rhs: Box::new(rhs.truncate()),
            },
            Self::McActive { name, instance, lset, rset, lhs, rhs } => Self::McActive {
                name: name.clone(),
                instance: *instance,
                lset: lset.clone(),
                rset: rset.clone(),
                lhs: Box::new(lhs.truncate()),
                rhs: Box::new(rhs.truncate()),
            },
        }
    }

    /// No message in transit and no active MC.
    pub fn is_initial(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |g| {
            if matches!(g, Self::InTransit { .. } | Self::McActive { .. }) {
                ok = false;
            }
        });
        ok
    }

    pub fn free_vars(&self) -> BTreeSet<RecVar> {
        fn go(g: &GlobalType, bound: &mut Vec<RecVar>, out: &mut BTreeSet<RecVar>) {
            match g {
                GlobalType::Interaction { branches, .. } | GlobalType::InTransit { branches, .. } => {
                    for c in branches.conts() {
                        go(c, bound, out);
                    }
                }
                GlobalType::Rec { var, body } => {
                    bound.push(var.clone());
                    go(body, bound, out);
                    bound.pop();
                }
                GlobalType::Var(v) => {
                    if !bound.contains(v) {
                        out.insert(v.clone());
                    }
                }
                GlobalType::End => {}
                GlobalType::McDef { lhs, rhs, .. } | GlobalType::McActive { lhs, rhs, .. } => {
                    go(lhs, bound, out);
                    go(rhs, bound, out);
                }
            }
        }
        let mut out = BTreeSet::new();
        go(self, &mut Vec::new(), &mut out);
        out
    }

    pub fn is_closed(&self) -> bool {
        self.free_vars().is_empty()
    }

    /// Greatest instance counter per MC name.
    pub fn theta(&self) -> BTreeMap<McName, u32> {
        let mut out: BTreeMap<McName, u32> = BTreeMap::new();
        self.visit(&mut |g| {
            if let Self::McActive { name, instance, .. } = g {
                let e = out.entry(name.clone()).or_insert(0);
                *e = (*e).max(*instance);
            }
        });
        out
    }

    pub fn mc_names(&self) -> BTreeSet<McName> {
        let mut out = BTreeSet::new();
        self.visit(&mut |g| {
            if let Self::McDef { name, .. } | Self::McActive { name, .. } = g {
                out.insert(name.clone());
            }
        });
        out
    }

    /// Syntactic equality up to renaming of bound recursion variables.
    pub fn alpha_eq(&self, other: &GlobalType) -> bool {
        fn go(a: &GlobalType, b: &GlobalType, env: &mut Vec<(RecVar, RecVar)>) -> bool {
            use GlobalType as G;
            match (a, b) {
                (G::Interaction { from: f1, to: t1, branches: b1 }, G::Interaction { from: f2, to: t2, branches: b2 }) => {
                    f1 == f2 && t1 == t2 && branches_eq(b1, b2, env)
                }
                (
                    G::InTransit { from: f1, to: t1, chosen: c1, branches: b1 },
                    G::InTransit { from: f2, to: t2, chosen: c2, branches: b2 },
                ) => f1 == f2 && t1 == t2 && c1 == c2 && branches_eq(b1, b2, env),
                (G::Rec { var: v1, body: x }, G::Rec { var: v2, body: y }) => {
                    env.push((v1.clone(), v2.clone()));
                    let r = go(x, y, env);
                    env.pop();
                    r
                }
                (G::Var(v1), G::Var(v2)) => match env.iter().rev().find(|(a, b)| a == v1 || b == v2) {
                    Some((a, b)) => a == v1 && b == v2,
                    None => v1 == v2,
                },
                (G::End, G::End) => true,
                (G::McDef { name: n1, lhs: l1, rhs: r1 }, G::McDef { name: n2, lhs: l2, rhs: r2 }) => {
                    n1 == n2 && go(l1, l2, env) && go(r1, r2, env)
                }
                (
                    G::McActive { name: n1, instance: i1, lset: ls1, rset: rs1, lhs: l1, rhs: r1 },
                    G::McActive { name: n2, instance: i2, lset: ls2, rset: rs2, lhs: l2, rhs: r2 },
                ) => n1 == n2 && i1 == i2 && ls1 == ls2 && rs1 == rs2 && go(l1, l2, env) && go(r1, r2, env),
                _ => false,
            }
        }
        fn branches_eq(b1: &Branches<GlobalType>, b2: &Branches<GlobalType>, env: &mut Vec<(RecVar, RecVar)>) -> bool {
            b1.len() == b2.len()
                && b1.iter().zip(b2.iter()).all(|((l1, g1), (l2, g2))| l1 == l2 && go(g1, g2, env))
        }
        go(self, other, &mut Vec::new())
    }

    /// Chain of leading `μ` binders ending in a variable: `μt.t`, `μt.μs.t`, ...
    pub fn is_unguarded_loop(&self) -> bool {
        let mut cur = self;
        let mut binders = Vec::new();
        while let Self::Rec { var, body } = cur {
            binders.push(var);
            cur = body;
        }
        matches!(cur, Self::Var(v) if binders.contains(&v))
    }
}

impl LocalType {
    pub fn branch(peer: &str, branches: Vec<(&str, LocalType)>) -> Self {
        let bs = branches.into_iter().map(|(l, t)| (Label::new(l), t)).collect();
        Self::Branch { peer: peer.into(), branches: Branches::new(bs).expect("valid branches") }
    }

    pub fn select(peer: &str, branches: Vec<(&str, LocalType)>) -> Self {
        let bs = branches.into_iter().map(|(l, t)| (Label::new(l), t)).collect();
        Self::Select { peer: peer.into(), branches: Branches::new(bs).expect("valid branches") }
    }

    /// `peer&label.cont`
    pub fn recv(peer: &str, label: &str, cont: LocalType) -> Self {
        Self::branch(peer, vec![(label, cont)])
    }

    /// `peer⊕label.cont`
    pub fn send(peer: &str, label: &str, cont: LocalType) -> Self {
        Self::select(peer, vec![(label, cont)])
    }

    pub fn rec(var: &str, body: LocalType) -> Self {
        Self::Rec { var: var.into(), body: Box::new(body) }
    }

    pub fn var(var: &str) -> Self {
        Self::Var(var.into())
    }

    pub fn mc(name: &str, lhs: LocalType, rhs: LocalType) -> Self {
        Self::McDef { name: name.into(), lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    pub fn subst(&self, var: &RecVar, with: &LocalType) -> LocalType {
        match self {
            Self::Branch { peer, branches } => {
                Self::Branch { peer: peer.clone(), branches: branches.map(|t| t.subst(var, with)) }
            }
            Self::Select { peer, branches } => {
                Self::Select { peer: peer.clone(), branches: branches.map(|t| t.subst(var, with)) }
            }
            Self::Rec { var: v, body } => {
                if v == var {
                    self.clone()
                } else {
                    Self::Rec { var: v.clone(), body: Box::new(body.subst(var, with)) }
                }
            }
            Self::Var(v) => {
                if v == var {
                    with.clone()
                } else {
                    self.clone()
                }
            }
            Self::End => Self::End,
            Self::McDef { name, lhs, rhs } => Self::McDef {
                name: name.clone(),
                lhs: Box::new(lhs.subst(var, with)),
                rhs: Box::new(rhs.subst(var, with)),
            },
            Self::McActive { name, lhs, rhs } => Self::McActive {
                name: name.clone(),
                lhs: Box::new(lhs.subst(var, with)),
                rhs: Box::new(rhs.subst(var, with)),
            },
            Self::McLeft { name, lhs } => Self::McLeft { name: name.clone(), lhs: Box::new(lhs.subst(var, with)) },
            Self::McRight { name, rhs } => Self::McRight { name: name.clone(), rhs: Box::new(rhs.subst(var, with)) },
        }
    }

    /// `end` up to `end ▷ •`, `• ▷ end` and `end ▷ end`.
    pub fn is_final(&self) -> bool {
        match self {
            Self::End => true,
            Self::McLeft { lhs, .. } => lhs.is_final(),
            Self::McRight { rhs, .. } => rhs.is_final(),
            Self::McActive { lhs, rhs, .. } => lhs.is_final() && rhs.is_final(),
            _ => false,
        }
    }

    /// Neither an active nor a committed MC occurs.
    pub fn is_source_form(&self) -> bool {
        match self {
            Self::Branch { branches, .. } | Self::Select { branches, .. } => {
                branches.conts().all(LocalType::is_source_form)
            }
            Self::Rec { body, .. } => body.is_source_form(),
            Self::Var(_) | Self::End => true,
            Self::McDef { lhs, rhs, .. } => lhs.is_source_form() && rhs.is_source_form(),
            Self::McActive { .. } | Self::McLeft { .. } | Self::McRight { .. } => false,
        }
    }

    pub fn is_unguarded_loop(&self) -> bool {
        let mut cur = self;
        let mut binders = Vec::new();
        while let Self::Rec { var, body } = cur {
            binders.push(var);
            cur = body;
        }
        matches!(cur, Self::Var(v) if binders.contains(&v))
    }

    pub fn has_mc(&self) -> bool {
        match self {
            Self::Branch { branches, .. } | Self::Select { branches, .. } => branches.conts().any(LocalType::has_mc),
            Self::Rec { body, .. } => body.has_mc(),
            Self::Var(_) | Self::End => false,
            _ => true,
        }
    }
}

pub fn local_final(c: &Configuration) -> bool {
    c.behavior.is_final()
}

#[cfg(test)]
mod tests {
    use super::*;
    use GlobalType as G;

    fn set(rs: &[&str]) -> RoleSet {
        rs.iter().map(Role::new).collect()
    }

    fn timeout() -> GlobalType {
        G::mc(
            "c1",
            G::msg("A", "B", "a1", G::msg("A", "C", "a2", G::msg("B", "C", "a3", G::msg("B", "A", "a4", G::msg("C", "A", "a5", G::End))))),
            G::msg("B", "A", "TOa", G::msg("B", "C", "TOc", G::End)),
        )
    }

    #[test]
    fn roles_of_end_and_timeout() {
        assert!(G::End.roles().is_empty());
        assert_eq!(timeout().roles(), set(&["A", "B", "C"]));
    }

    #[test]
    fn roles_of_active_mc_drop_committed_sides() {
        let side = || G::msg("p", "q", "a", G::End);
        let active = |lset: &[&str], rset: &[&str]| G::McActive {
            name: "c".into(),
            instance: 1,
            lset: set(lset),
            rset: set(rset),
            lhs: Box::new(side()),
            rhs: Box::new(side()),
        };
        assert_eq!(active(&[], &["p", "q"]).roles(), set(&["p", "q"]));
        assert!(active(&["p", "q"], &["p", "q"]).roles().is_empty());
    }

    #[test]
    fn subjects() {
        assert_eq!(subject(&TransitionLabel::send("A", "B", "a1")), set(&["A"]));
        assert_eq!(subject(&TransitionLabel::recv("A", "B", "a1")), set(&["B"]));
        assert!(subject(&TransitionLabel::New { mc: "c".into(), instance: None }).is_empty());
        assert!(subject(&TransitionLabel::Purge).is_empty());
    }

    #[test]
    fn unfold_once() {
        assert_eq!(G::End.unfold_all_once(), G::End);
        let g = G::rec("t", G::msg("p", "q", "a", G::var("t")));
        assert_eq!(g.unfold_all_once(), G::msg("p", "q", "a", g.clone()));
    }

    #[test]
    fn unfold_nested_binders_are_closed() {
        let g = G::rec("t", G::msg("p", "q", "a", G::rec("s", G::interaction("q", "p", vec![("b", G::var("s")), ("c", G::var("t"))]))));
        let u = g.unfold_all_once();
        assert!(u.is_closed());
        match &u {
            G::Interaction { branches, .. } => {
                let inner = branches.get(&"a".into()).unwrap();
                assert!(matches!(inner, G::Interaction { .. }));
            }
            _ => panic!("expected interaction"),
        }
    }

    #[test]
    fn truncation() {
        assert_eq!(G::End.truncate(), G::End);
        assert_eq!(G::rec("t", G::msg("p", "q", "a", G::var("t"))).truncate(), G::End);
        let g = G::interaction("p", "q", vec![("a", G::rec("t", G::msg("p", "q", "x", G::var("t")))), ("b", G::End)]);
        assert_eq!(g.truncate(), G::interaction("p", "q", vec![("a", G::End), ("b", G::End)]));
    }

    #[test]
    fn initial_detection() {
        assert!(timeout().is_initial());
        let in_transit = G::InTransit {
            from: "p".into(),
            to: "q".into(),
            chosen: "a".into(),
            branches: Branches::single("a".into(), G::End),
        };
        assert!(!in_transit.is_initial());
        let nested = G::interaction(
            "p",
            "q",
            vec![
                ("a", G::End),
                (
                    "b",
                    G::McActive {
                        name: "c".into(),
                        instance: 1,
                        lset: RoleSet::new(),
                        rset: RoleSet::new(),
                        lhs: Box::new(G::End),
                        rhs: Box::new(G::End),
                    },
                ),
            ],
        );
        assert!(!nested.is_initial());
    }

    #[test]
    fn finality_up_to_structural_equivalence() {
        let cfg = |t| Configuration::new("p".into(), t, Queue::new());
        assert!(local_final(&cfg(LocalType::End)));
        assert!(local_final(&cfg(LocalType::McRight { name: "c".into(), rhs: Box::new(LocalType::End) })));
        assert!(!local_final(&cfg(LocalType::recv("q", "a", LocalType::End))));
        let nested = LocalType::McActive {
            name: "c".into(),
            lhs: Box::new(LocalType::McLeft { name: "d".into(), lhs: Box::new(LocalType::End) }),
            rhs: Box::new(LocalType::End),
        };
        assert!(local_final(&cfg(nested)));
    }

    #[test]
    fn branches_reject_duplicates() {
        assert_eq!(Branches::<()>::new(vec![]), Err(ModelError::EmptyBranches));
        assert_eq!(
            Branches::new(vec![("a".into(), ()), ("a".into(), ())]),
            Err(ModelError::DuplicateLabel("a".into()))
        );
    }

    #[test]
    fn alpha_equivalence() {
        let a = G::rec("t", G::msg("p", "q", "a", G::var("t")));
        let b = G::rec("s", G::msg("p", "q", "a", G::var("s")));
        assert!(a.alpha_eq(&b));
        assert_ne!(a, b);
        let c = G::rec("s", G::rec("t", G::msg("p", "q", "a", G::var("s"))));
        let d = G::rec("t", G::rec("s", G::msg("p", "q", "a", G::var("s"))));
        assert!(!c.alpha_eq(&d));
    }

    #[test]
    fn queue_concat_keeps_left_first() {
        let mut l = Queue::new();
        l.push(&"p".into(), Message::new("a".into(), Path::from_sides([Side::L])));
        let mut r = Queue::new();
        r.push(&"p".into(), Message::new("b".into(), Path::from_sides([Side::R])));
        let q = l.concat(&r);
        let labels: Vec<_> = q.get(&"p".into()).iter().map(|m| m.label.as_str().to_string()).collect();
        assert_eq!(labels, ["a", "b"]);
    }
}
