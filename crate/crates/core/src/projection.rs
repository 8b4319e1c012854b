//! Projection of global types onto local types and input queues.

use thiserror::Error;

use crate::frontend::{render_global, Protocol, Style};
use crate::model::{Branches, Configuration, GlobalType, LocalType, Message, Path, Queue, Role, RoleSet, Side, System};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProjectionError {
    #[error("projection onto {role} is undefined at {at}: branches do not merge")]
    Unmergeable { role: Role, at: String },
    #[error("projection onto {role} at {at}: branches disagree on the queue")]
    QueueMismatch { role: Role, at: String },
    #[error("projection onto {role} at {at}: an unchosen branch has queued messages")]
    DeadBranchQueue { role: Role, at: String },
    #[error("projection onto {role} at {at}: a definition side has queued messages")]
    DefinitionQueue { role: Role, at: String },
}

/// Merge for third-party roles. `None` when undefined.
pub fn merge(a: &LocalType, b: &LocalType) -> Option<LocalType> {
    if a == b {
        return Some(a.clone());
    }
    match (a, b) {
        (LocalType::Branch { peer: p1, branches: b1 }, LocalType::Branch { peer: p2, branches: b2 }) if p1 == p2 => {
            let mut out: Vec<_> = b1.iter().map(|(l, t)| (l.clone(), t.clone())).collect();
            for (l, t) in b2.iter() {
                match b1.get(l) {
                    Some(t1) if t1 != t => return None,
                    Some(_) => {}
                    None => out.push((l.clone(), t.clone())),
                }
            }
            Some(LocalType::Branch { peer: p1.clone(), branches: Branches::new(out).ok()? })
        }
        (LocalType::Rec { var: v1, body: x }, LocalType::Rec { var: v2, body: y }) if v1 == v2 => {
            Some(LocalType::Rec { var: v1.clone(), body: Box::new(merge(x, y)?) })
        }
        _ => None,
    }
}

fn site(g: &GlobalType) -> String {
    let s = render_global(g, Style::Math);
    if s.chars().count() > 60 {
        let cut: String = s.chars().take(57).collect();
        format!("{cut}...")
    } else {
        s
    }
}

/// `G ↾ r` under context path `path`.
pub fn project(g: &GlobalType, r: &Role, path: &Path) -> Result<(LocalType, Queue), ProjectionError> {
    match g {
        GlobalType::Interaction { from, to, branches } => {
            let parts = branches.try_map(|_, c| project(c, r, path))?;
            let queue = parts.as_slice()[0].1 .1.clone();
            if parts.conts().any(|(_, q)| *q != queue) {
                return Err(ProjectionError::QueueMismatch { role: r.clone(), at: site(g) });
            }
            let conts = parts.map(|(t, _)| t.clone());
            let t = if r == from {
                LocalType::Select { peer: to.clone(), branches: conts }
            } else if r == to {
                LocalType::Branch { peer: from.clone(), branches: conts }
            } else {
                let mut it = conts.conts();
                let first = it.next().expect("branches are non-empty").clone();
                it.try_fold(first, |acc, t| merge(&acc, t))
                    .ok_or_else(|| ProjectionError::Unmergeable { role: r.clone(), at: site(g) })?
            };
            Ok((t, queue))
        }
        GlobalType::InTransit { from, to, chosen, branches } => {
            let k = branches.position(chosen).expect("chosen label is a branch");
            let parts = branches.try_map(|_, c| project(c, r, path))?;
            for (i, (_, (_, q))) in parts.iter().enumerate() {
                if i != k && !q.is_empty() {
                    return Err(ProjectionError::DeadBranchQueue { role: r.clone(), at: site(g) });
                }
            }
            let (tk, mut qk) = parts.as_slice()[k].1.clone();
            if r == to {
                qk.prepend(from, Message::new(chosen.clone(), path.clone()));
                Ok((LocalType::Branch { peer: from.clone(), branches: parts.map(|(t, _)| t.clone()) }, qk))
            } else {
                Ok((tk, qk))
            }
        }
        GlobalType::McDef { name, lhs, rhs } => {
            let (l, ql) = project(lhs, r, path)?;
            let (rt, qr) = project(rhs, r, path)?;
            if !ql.is_empty() || !qr.is_empty() {
                return Err(ProjectionError::DefinitionQueue { role: r.clone(), at: site(g) });
            }
            Ok((LocalType::McDef { name: name.clone(), lhs: Box::new(l), rhs: Box::new(rt) }, Queue::new()))
        }
        GlobalType::McActive { name, lset, rset, lhs, rhs, .. } => {
            if lset.contains(r) {
                let (l, q) = project(lhs, r, &path.child(Side::L))?;
                Ok((LocalType::McLeft { name: name.clone(), lhs: Box::new(l) }, q))
            } else if rset.contains(r) {
                let (rt, q) = project(rhs, r, &path.child(Side::R))?;
                Ok((LocalType::McRight { name: name.clone(), rhs: Box::new(rt) }, q))
            } else {
                let (l, ql) = project(lhs, r, &path.child(Side::L))?;
                let (rt, qr) = project(rhs, r, &path.child(Side::R))?;
                Ok((LocalType::McActive { name: name.clone(), lhs: Box::new(l), rhs: Box::new(rt) }, ql.concat(&qr)))
            }
        }
        GlobalType::Rec { var, body } => {
            let (t, q) = project(body, r, path)?;
            match t {
                LocalType::Var(v) if v == *var => Ok((LocalType::End, Queue::new())),
                LocalType::Var(v) => Ok((LocalType::Var(v), Queue::new())),
                t => Ok((LocalType::Rec { var: var.clone(), body: Box::new(t) }, q)),
            }
        }
        GlobalType::Var(v) => Ok((LocalType::Var(v.clone()), Queue::new())),
        GlobalType::End => Ok((LocalType::End, Queue::new())),
    }
}

/// One configuration per role in `roles`.
pub fn derive_system(g: &GlobalType, roles: &RoleSet) -> Result<System, ProjectionError> {
    let mut configs = Vec::with_capacity(roles.len());
    for r in roles {
        let (t, q) = project(g, r, &Path::empty())?;
        configs.push(Configuration::new(r.clone(), t, q));
    }
    Ok(System::new(configs).expect("roles are a set"))
}

pub fn derive_protocol(p: &Protocol) -> Result<System, ProjectionError> {
    derive_system(&p.body, &p.role_set())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::render_local;
    use crate::model::{Label, LocalType as L};
    use GlobalType as G;

    fn timeout() -> GlobalType {
        G::mc(
            "c1",
            G::msg("A", "B", "a1", G::msg("A", "C", "a2", G::msg("B", "C", "a3", G::msg("B", "A", "a4", G::msg("C", "A", "a5", G::End))))),
            G::msg("B", "A", "TOa", G::msg("B", "C", "TOc", G::End)),
        )
    }

    fn proj(g: &GlobalType, r: &str) -> (LocalType, Queue) {
        project(g, &Role::new(r), &Path::empty()).unwrap()
    }

    #[test]
    fn timeout_projections() {
        let g = timeout();
        let a = L::mc(
            "c1",
            L::send("B", "a1", L::send("C", "a2", L::recv("B", "a4", L::recv("C", "a5", L::End)))),
            L::recv("B", "TOa", L::End),
        );
        let b = L::mc("c1", L::recv("A", "a1", L::send("C", "a3", L::send("A", "a4", L::End))), L::send("A", "TOa", L::send("C", "TOc", L::End)));
        let c = L::mc("c1", L::recv("A", "a2", L::recv("B", "a3", L::send("A", "a5", L::End))), L::recv("B", "TOc", L::End));
        assert_eq!(proj(&g, "A"), (a, Queue::new()));
        assert_eq!(proj(&g, "B"), (b, Queue::new()));
        assert_eq!(proj(&g, "C"), (c, Queue::new()));
        assert_eq!(render_local(&proj(&g, "A").0, Style::Math), "B⊕a1.C⊕a2.B&a4.C&a5.end ▷ B&TOa.end");
    }

    #[test]
    fn merge_cases() {
        let x = L::recv("p", "a1", L::End);
        assert_eq!(merge(&x, &x), Some(x.clone()));
        let y = L::recv("p", "a2", L::End);
        assert_eq!(merge(&x, &y), Some(L::branch("p", vec![("a1", L::End), ("a2", L::End)])));
        assert_eq!(merge(&L::send("p", "a", L::End), &L::send("p", "b", L::End)), None);
        assert_eq!(merge(&x, &L::recv("p", "a1", L::send("q", "z", L::End))), None);
        let g = G::interaction("p", "q", vec![("a1", G::msg("q", "r", "a1", G::End)), ("a2", G::msg("q", "r", "a2", G::End))]);
        assert_eq!(proj(&g, "r").0, L::branch("q", vec![("a1", L::End), ("a2", L::End)]));
    }

    #[test]
    fn in_transit_receiver_gets_the_message() {
        let g = G::InTransit {
            from: "p".into(),
            to: "q".into(),
            chosen: "a".into(),
            branches: Branches::single(Label::new("a"), G::End),
        };
        let sys = derive_system(&g, &[Role::new("p"), Role::new("q")].into()).unwrap();
        let q = sys.get(&Role::new("q")).unwrap();
        assert_eq!(q.inbox.get(&Role::new("p")), &[Message::new(Label::new("a"), Path::empty())]);
        assert_eq!(q.behavior, L::recv("p", "a", L::End));
        assert_eq!(sys.get(&Role::new("p")).unwrap().behavior, L::End);
    }

    #[test]
    fn committed_right_drops_left_messages() {
        // p⇝q:a.q→p:b.end ▶[∅, {p,q}] p⇝q:d.end
        let lhs = G::InTransit {
            from: "p".into(),
            to: "q".into(),
            chosen: "a".into(),
            branches: Branches::single(Label::new("a"), G::msg("q", "p", "b", G::End)),
        };
        let rhs = G::InTransit { from: "p".into(), to: "q".into(), chosen: "d".into(), branches: Branches::single(Label::new("d"), G::End) };
        let g = G::McActive {
            name: "c".into(),
            instance: 1,
            lset: RoleSet::new(),
            rset: [Role::new("p"), Role::new("q")].into(),
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        };
        let (t, q) = proj(&g, "q");
        assert_eq!(t, L::McRight { name: "c".into(), rhs: Box::new(L::recv("p", "d", L::End)) });
        assert_eq!(q.get(&Role::new("p")), &[Message::new(Label::new("d"), Path::from_sides([Side::R]))]);
    }

    #[test]
    fn loops_without_the_role_project_to_end() {
        let g = G::rec("t", G::msg("p", "q", "a", G::var("t")));
        assert_eq!(proj(&g, "r").0, L::End);
        assert_eq!(proj(&g, "p").0, L::rec("t", L::send("q", "a", L::var("t"))));
        assert_eq!(proj(&G::End, "r"), (L::End, Queue::new()));
    }

    #[test]
    fn unmergeable_choice_is_reported() {
        let g = G::interaction("p", "q", vec![("a", G::msg("r", "q", "x", G::End)), ("b", G::msg("r", "q", "y", G::End))]);
        let e = project(&g, &Role::new("r"), &Path::empty()).unwrap_err();
        assert!(matches!(e, ProjectionError::Unmergeable { .. }));
    }

    #[test]
    fn corpus_projects() {
        for e in crate::corpus::ALL.iter().filter(|e| e.name != "unbalanced") {
            let p = crate::corpus::load(e.name).unwrap();
            let sys = derive_protocol(&p).unwrap_or_else(|err| panic!("{}: {err}", e.name));
            assert_eq!(sys.len(), p.roles.len());
        }
        // The third party r cannot tell the branches apart.
        let p = crate::corpus::load("unbalanced").unwrap();
        assert!(matches!(derive_protocol(&p), Err(ProjectionError::Unmergeable { role, .. }) if role.as_str() == "r"));
    }
}
