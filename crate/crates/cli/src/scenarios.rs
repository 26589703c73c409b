//! Scenario files compiled into the binary.

pub const BUILTIN: &[(&str, &str)] = &[
    ("dissipative-ladder", include_str!("../scenarios/dissipative-ladder.toml")),
    ("divergent-linear", include_str!("../scenarios/divergent-linear.toml")),
    ("example-4.2.1", include_str!("../scenarios/example-4.2.1.toml")),
    ("example-4.2.2", include_str!("../scenarios/example-4.2.2.toml")),
    ("example-4.2.3", include_str!("../scenarios/example-4.2.3.toml")),
    ("example-4.2.4", include_str!("../scenarios/example-4.2.4.toml")),
    ("example-4.2.5", include_str!("../scenarios/example-4.2.5.toml")),
    ("example-4.3.1", include_str!("../scenarios/example-4.3.1.toml")),
    ("example-4.3.2", include_str!("../scenarios/example-4.3.2.toml")),
    ("example-4.3.3", include_str!("../scenarios/example-4.3.3.toml")),
    ("example-4.3.4", include_str!("../scenarios/example-4.3.4.toml")),
    ("ldp-brownian", include_str!("../scenarios/ldp-brownian.toml")),
    ("ldp-ou", include_str!("../scenarios/ldp-ou.toml")),
    ("linear-constant", include_str!("../scenarios/linear-constant.toml")),
    ("pfield-constant", include_str!("../scenarios/pfield-constant.toml")),
    ("reduce-random", include_str!("../scenarios/reduce-random.toml")),
    ("reduce-rotation", include_str!("../scenarios/reduce-rotation.toml")),
    ("smoke-zero", include_str!("../scenarios/smoke-zero.toml")),
];

/// Ids accepted by `reproduce`.
pub const EXAMPLE_IDS: [&str; 9] = [
    "4.2.1", "4.2.2", "4.2.3", "4.2.4", "4.2.5", "4.3.1", "4.3.2", "4.3.3", "4.3.4",
];

pub fn find(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn example(id: &str) -> Option<&'static str> {
    find(&format!("example-{id}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load;

    #[test]
    fn every_builtin_parses_and_validates() {
        for (name, text) in BUILTIN {
            let l = load(text, &[]).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&l.scenario.name, name);
        }
    }

    #[test]
    fn every_example_id_has_a_scenario() {
        for id in EXAMPLE_IDS {
            assert!(example(id).is_some(), "{id}");
        }
        assert!(example("9.9.9").is_none());
    }
}
