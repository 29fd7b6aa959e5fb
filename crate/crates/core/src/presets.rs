//! Scenario files shipped with the crate.

use crate::error::{Error, Result};
use crate::scenario::{parse_scenario, KeyPolicy, Scenario};

const PRESETS: &[(&str, &str)] = &[
    ("gibrat-lognormal", include_str!("../presets/gibrat-lognormal.toml")),
    ("growth-mixture", include_str!("../presets/growth-mixture.toml")),
    ("laplace-price", include_str!("../presets/laplace-price.toml")),
    ("lifecycle-bwtv", include_str!("../presets/lifecycle-bwtv.toml")),
    ("mean-price", include_str!("../presets/mean-price.toml")),
    ("pareto-tail", include_str!("../presets/pareto-tail.toml")),
    ("profit-invariant", include_str!("../presets/profit-invariant.toml")),
    ("size-variance", include_str!("../presets/size-variance.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// Raw TOML text of a preset.
pub fn preset_text(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let known: Vec<_> = preset_names().collect();
            Error::Validation(format!(
                "unknown preset '{name}' (known: {})",
                known.join(", ")
            ))
        })
}

pub fn preset(name: &str) -> Result<Scenario> {
    let text = preset_text(name)?;
    Ok(parse_scenario(text, &format!("preset:{name}"), KeyPolicy::Strict)?.scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_strictly_and_validates() {
        for name in preset_names() {
            let s = preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(s.name, name);
            s.validate().unwrap();
        }
    }

    #[test]
    fn unknown_preset_lists_known_names() {
        let err = preset("nope").unwrap_err().to_string();
        assert!(err.contains("lifecycle-bwtv"), "{err}");
    }
}
