use std::collections::BTreeSet;
use std::fmt::Write;

use super::{Protocol, SourceAnnotation};
use crate::model::{Branches, GlobalType, Label, LocalType, McName, Role, RoleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Scribble,
    Math,
}

pub fn render_global(g: &GlobalType, style: Style) -> String {
    match style {
        Style::Math => math_global(g, true),
        Style::Scribble => {
            let mut out = String::new();
            let ctx = ScribbleCtx { markers: &BTreeSet::new(), annotations: &[], mc: None };
            scribble_global(g, 0, &ctx, &mut out);
            out
        }
    }
}

pub fn render_local(t: &LocalType, style: Style) -> String {
    match style {
        Style::Math => math_local(t, true),
        Style::Scribble => render_local_scribble(t, None),
    }
}

pub fn render_protocol(p: &Protocol) -> String {
    let mut out = String::new();
    for pragma in &p.pragmas {
        let _ = writeln!(out, "@'{pragma}'");
    }
    let roles: Vec<String> = p.roles.iter().map(|r| format!("role {r}")).collect();
    let _ = writeln!(out, "global protocol {}({}) {{", p.name, roles.join(", "));
    let ctx = ScribbleCtx { markers: &p.commit_markers, annotations: &p.annotations, mc: None };
    scribble_global(&p.body, 1, &ctx, &mut out);
    out.push_str("}\n");
    out
}

struct ScribbleCtx<'a> {
    markers: &'a BTreeSet<(McName, Label)>,
    annotations: &'a [SourceAnnotation],
    mc: Option<&'a McName>,
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn roles_str(rs: &RoleSet) -> String {
    let v: Vec<&str> = rs.iter().map(Role::as_str).collect();
    format!("{{{}}}", v.join(","))
}

fn scribble_msg(from: &Role, to: &Role, label: &Label, depth: usize, ctx: &ScribbleCtx<'_>, out: &mut String) {
    indent(out, depth);
    let star = match ctx.mc {
        Some(c) if ctx.markers.contains(&(c.clone(), label.clone())) => "*",
        _ => "",
    };
    let _ = write!(out, "{label}() from {from} to {to}{star};");
    let mut seen = BTreeSet::new();
    for a in ctx.annotations {
        if a.from == *from && a.to == *to && a.label == *label && seen.insert(a.role.clone()) {
            let _ = write!(out, " @'failed {}'", a.role);
        }
    }
    out.push('\n');
}

fn scribble_global<'a>(g: &'a GlobalType, depth: usize, ctx: &ScribbleCtx<'a>, out: &mut String) {
    match g {
        GlobalType::Interaction { from, to, branches } if branches.len() == 1 => {
            let (l, cont) = branches.iter().next().expect("one branch");
            scribble_msg(from, to, l, depth, ctx, out);
            scribble_global(cont, depth, ctx, out);
        }
        GlobalType::Interaction { from, to, branches } => {
            indent(out, depth);
            let _ = writeln!(out, "choice at {from} {{");
            for (i, (l, cont)) in branches.iter().enumerate() {
                if i > 0 {
                    indent(out, depth);
                    out.push_str("} or {\n");
                }
                scribble_msg(from, to, l, depth + 1, ctx, out);
                scribble_global(cont, depth + 1, ctx, out);
            }
            indent(out, depth);
            out.push_str("}\n");
        }
        GlobalType::InTransit { from, to, chosen, branches } => {
            // Runtime form; shown for diagnostics only.
            indent(out, depth);
            let _ = writeln!(out, "// in transit: {chosen}() from {from} to {to}");
            if let Some(cont) = branches.get(chosen) {
                scribble_global(cont, depth, ctx, out);
            }
        }
        GlobalType::Rec { var, body } => {
            indent(out, depth);
            let _ = writeln!(out, "rec {var} {{");
            scribble_global(body, depth + 1, ctx, out);
            indent(out, depth);
            out.push_str("}\n");
        }
        GlobalType::Var(v) => {
            indent(out, depth);
            let _ = writeln!(out, "continue {v};");
        }
        GlobalType::End => {}
        GlobalType::McDef { name, lhs, rhs } => {
            let inner = ScribbleCtx { markers: ctx.markers, annotations: ctx.annotations, mc: Some(name) };
            indent(out, depth);
            let _ = writeln!(out, "mixed @{name} {{");
            scribble_global(lhs, depth + 1, &inner, out);
            indent(out, depth);
            out.push_str("} or {\n");
            scribble_global(rhs, depth + 1, &inner, out);
            indent(out, depth);
            out.push_str("}\n");
        }
        GlobalType::McActive { name, instance, lset, rset, lhs, rhs } => {
            let inner = ScribbleCtx { markers: ctx.markers, annotations: ctx.annotations, mc: Some(name) };
            indent(out, depth);
            let _ = writeln!(out, "// active {name}#{instance} L={} R={}", roles_str(lset), roles_str(rset));
            indent(out, depth);
            let _ = writeln!(out, "mixed @{name} {{");
            scribble_global(lhs, depth + 1, &inner, out);
            indent(out, depth);
            out.push_str("} or {\n");
            scribble_global(rhs, depth + 1, &inner, out);
            indent(out, depth);
            out.push_str("}\n");
        }
    }
}

fn math_branches<T>(branches: &Branches<T>, f: impl Fn(&T) -> String) -> String {
    if branches.len() == 1 {
        let (l, t) = branches.iter().next().expect("one branch");
        format!("{l}.{}", f(t))
    } else {
        let parts: Vec<String> = branches.iter().map(|(l, t)| format!("{l}.{}", f(t))).collect();
        format!("{{{}}}", parts.join(", "))
    }
}

fn math_global(g: &GlobalType, top: bool) -> String {
    let wrap = |s: String| if top { s } else { format!("({s})") };
    match g {
        GlobalType::Interaction { from, to, branches } => {
            format!("{from}→{to}:{}", math_branches(branches, |c| math_global(c, false)))
        }
        GlobalType::InTransit { from, to, chosen, branches } => {
            if branches.len() == 1 {
                format!("{from}⇝{to}:{}", math_branches(branches, |c| math_global(c, false)))
            } else {
                format!("{from}⇝{to}:{chosen}{}", math_branches(branches, |c| math_global(c, false)))
            }
        }
        GlobalType::Rec { var, body } => format!("μ{var}.{}", math_global(body, false)),
        GlobalType::Var(v) => v.to_string(),
        GlobalType::End => "end".into(),
        GlobalType::McDef { lhs, rhs, .. } => wrap(format!("{} ▷ {}", math_global(lhs, false), math_global(rhs, false))),
        GlobalType::McActive { name, instance, lset, rset, lhs, rhs } => wrap(format!(
            "{} ▶[{name}#{instance} L={} R={}] {}",
            math_global(lhs, false),
            roles_str(lset),
            roles_str(rset),
            math_global(rhs, false)
        )),
    }
}

fn math_local(t: &LocalType, top: bool) -> String {
    let wrap = |s: String| if top { s } else { format!("({s})") };
    match t {
        LocalType::Branch { peer, branches } => format!("{peer}&{}", math_branches(branches, |c| math_local(c, false))),
        LocalType::Select { peer, branches } => format!("{peer}⊕{}", math_branches(branches, |c| math_local(c, false))),
        LocalType::Rec { var, body } => format!("μ{var}.{}", math_local(body, false)),
        LocalType::Var(v) => v.to_string(),
        LocalType::End => "end".into(),
        LocalType::McDef { lhs, rhs, .. } => wrap(format!("{} ▷ {}", math_local(lhs, false), math_local(rhs, false))),
        LocalType::McActive { lhs, rhs, .. } => wrap(format!("{} ▶ {}", math_local(lhs, false), math_local(rhs, false))),
        LocalType::McLeft { lhs, .. } => wrap(format!("{} ▶ •", math_local(lhs, false))),
        LocalType::McRight { rhs, .. } => wrap(format!("• ▶ {}", math_local(rhs, false))),
    }
}

/// Scribble-style local protocol body; `me` names the projected role.
pub fn render_local_scribble(t: &LocalType, me: Option<&Role>) -> String {
    let mut out = String::new();
    local_scribble(t, 0, me, &mut out);
    out
}

fn local_scribble(t: &LocalType, depth: usize, me: Option<&Role>, out: &mut String) {
    let choice = |out: &mut String, at: &str, branches: &Branches<LocalType>, dir: &str, peer: &Role| {
        if branches.len() == 1 {
            let (l, c) = branches.iter().next().expect("one branch");
            indent(out, depth);
            let _ = writeln!(out, "{l}() {dir} {peer};");
            local_scribble(c, depth, me, out);
            return;
        }
        indent(out, depth);
        let _ = writeln!(out, "choice at {at} {{");
        for (i, (l, c)) in branches.iter().enumerate() {
            if i > 0 {
                indent(out, depth);
                out.push_str("} or {\n");
            }
            indent(out, depth + 1);
            let _ = writeln!(out, "{l}() {dir} {peer};");
            local_scribble(c, depth + 1, me, out);
        }
        indent(out, depth);
        out.push_str("}\n");
    };
    let mc = |out: &mut String, head: String, lhs: Option<&LocalType>, rhs: Option<&LocalType>| {
        indent(out, depth);
        let _ = writeln!(out, "{head} {{");
        match lhs {
            Some(l) => local_scribble(l, depth + 1, me, out),
            None => {
                indent(out, depth + 1);
                out.push_str("// •\n");
            }
        }
        indent(out, depth);
        out.push_str("} or {\n");
        match rhs {
            Some(r) => local_scribble(r, depth + 1, me, out),
            None => {
                indent(out, depth + 1);
                out.push_str("// •\n");
            }
        }
        indent(out, depth);
        out.push_str("}\n");
    };
    match t {
        LocalType::Select { peer, branches } => {
            let at = me.map(Role::as_str).unwrap_or("self");
            choice(out, at, branches, "to", peer);
        }
        LocalType::Branch { peer, branches } => choice(out, peer.as_str(), branches, "from", peer),
        LocalType::Rec { var, body } => {
            indent(out, depth);
            let _ = writeln!(out, "rec {var} {{");
            local_scribble(body, depth + 1, me, out);
            indent(out, depth);
            out.push_str("}\n");
        }
        LocalType::Var(v) => {
            indent(out, depth);
            let _ = writeln!(out, "continue {v};");
        }
        LocalType::End => {}
        LocalType::McDef { name, lhs, rhs } => mc(out, format!("mixed @{name}"), Some(lhs), Some(rhs)),
        LocalType::McActive { name, lhs, rhs } => mc(out, format!("mixed @{name} /* active */"), Some(lhs), Some(rhs)),
        LocalType::McLeft { name, lhs } => mc(out, format!("mixed @{name} /* committed left */"), Some(lhs), None),
        LocalType::McRight { name, rhs } => mc(out, format!("mixed @{name} /* committed right */"), None, Some(rhs)),
    }
}
