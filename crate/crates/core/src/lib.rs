//! Executable model of NGN and evolved-NGN control planes: protocol
//! state machines with checkable traces, a discrete-event simulator, an
//! exact Markov-chain oracle, and scalability analysis on top of both.

pub mod ctmc;
pub mod engine;
pub mod model;
pub mod perf;
pub mod protocol;
pub mod scaling;
pub mod sim;

#[cfg(test)]
pub(crate) mod testutil {
    use std::fs;
    use std::path::{Path, PathBuf};

    use crate::model::{scenario_from_json, RawScenario, ValidatedScenario};

    pub fn fixture_path(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures")
            .join(name)
    }

    pub fn fixture(name: &str) -> ValidatedScenario {
        let text = fs::read_to_string(fixture_path(name)).expect("fixture exists");
        scenario_from_json(&text).expect("fixture validates")
    }

    pub fn raw_fixture(name: &str) -> RawScenario {
        let text = fs::read_to_string(fixture_path(name)).expect("fixture exists");
        serde_json::from_str(&text).expect("fixture parses")
    }
}
