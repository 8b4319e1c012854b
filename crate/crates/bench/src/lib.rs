//! Fixtures shared by the benchmarks.

use mixst::corpus;
use mixst::global_lts::GlobalLts;
use mixst::Protocol;

/// Corpus protocols small enough to verify in a benchmark loop.
pub const VERIFIED: &[&str] = &["timeout", "timeout_drop_a4", "stream", "third_party", "interr", "amqp"];

pub fn protocol(name: &str) -> Protocol {
    corpus::load(name).unwrap_or_else(|e| panic!("corpus protocol {name}: {e}"))
}

pub fn lts(name: &str) -> GlobalLts {
    GlobalLts::from_protocol(&protocol(name)).unwrap_or_else(|e| panic!("corpus protocol {name}: {e}"))
}
