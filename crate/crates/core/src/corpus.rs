//! Protocols shipped with the crate, used by tests, benches and the CLI.

use crate::frontend::{parse, ParseError, Protocol};

pub struct Entry {
    pub name: &'static str,
    pub source: &'static str,
}

macro_rules! corpus {
    ($($name:literal),* $(,)?) => {
        pub const ALL: &[Entry] = &[
            $(Entry { name: $name, source: include_str!(concat!("../corpus/", $name, ".mscr")) },)*
        ];
    };
}

corpus!(
    "timeout",
    "timeout_drop_a4",
    "timeout_rename_toc",
    "timeout_drop_a3",
    "loop_good",
    "loop_bad",
    "capture",
    "stuck_left",
    "stream",
    "third_party",
    "unbalanced",
    "failh",
    "failh_extra",
    "interr",
    "amqp",
);

/// Protocols expected to pass validation.
pub const VALID: &[&str] = &["timeout", "timeout_drop_a4", "loop_good", "stream", "third_party", "failh", "interr", "amqp"];

pub fn source(name: &str) -> Option<&'static str> {
    ALL.iter().find(|e| e.name == name).map(|e| e.source)
}

/// Parses a shipped protocol. Panics on an unknown name.
pub fn load(name: &str) -> Result<Protocol, ParseError> {
    parse(source(name).unwrap_or_else(|| panic!("no corpus entry `{name}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_entry_parses() {
        for e in ALL {
            let p = parse(e.source).unwrap_or_else(|err| panic!("{}: {err}", e.name));
            assert!(p.body.is_initial(), "{}", e.name);
            assert!(p.body.is_closed(), "{}", e.name);
        }
        for v in VALID {
            assert!(source(v).is_some(), "{v}");
        }
    }
}
