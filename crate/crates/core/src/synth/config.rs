//! Run parameters and their flat `key = value` file format.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::powerflow::SolverOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    /// DG active output over DN active demand, per instance.
    pub penetration_level: f64,
    /// Share of DG output assigned to the controllable units.
    pub generation_split: f64,
    /// Raise DN demand by the DG output so the TN sees the original import.
    pub constant_load: bool,
    /// Perturb penetration and split by up to ±5% per instance.
    pub random: bool,
    pub rng_seed: u64,
    /// Replace every load outside the Equiv area (true) or only Central loads.
    pub large_system: bool,
    /// Factor applied to the DN capacity when counting replicas (≥ 1).
    pub oversize: f64,
    pub run_opf: bool,
    pub export_format: String,
    pub dn_v_min: f64,
    pub dn_v_max: f64,
    pub oltc_v_set: f64,
    pub pf_tolerance: f64,
    pub pf_max_iterations: usize,
    pub oltc_max_rounds: usize,
    pub opf_rounds: usize,
    pub opf_initial_slack: f64,
    pub capacity_ceiling: f64,
    pub tn_template: String,
    pub dn_template: String,
    /// Output sub-directory name; defaults to `seed-<rng_seed>`.
    pub run_id: Option<String>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            penetration_level: 0.5,
            generation_split: 0.5,
            constant_load: false,
            random: false,
            rng_seed: 0,
            large_system: true,
            oversize: 1.0,
            run_opf: false,
            export_format: "matpower".into(),
            dn_v_min: 0.95,
            dn_v_max: 1.05,
            oltc_v_set: 1.03,
            pf_tolerance: 1e-8,
            pf_max_iterations: 20,
            oltc_max_rounds: 30,
            opf_rounds: 5,
            opf_initial_slack: 0.1,
            capacity_ceiling: 10.0,
            tn_template: "mini-tn".into(),
            dn_template: "mini-dn".into(),
            run_id: None,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

fn value<T: FromStr>(field: &str, raw: &str) -> Result<T, ConfigError> {
    raw.parse()
        .map_err(|_| ConfigError::new(field, format!("cannot parse `{raw}`")))
}

fn flag(field: &str, raw: &str) -> Result<bool, ConfigError> {
    match raw.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(ConfigError::new(field, format!("expected true/false, got `{raw}`"))),
    }
}

fn unquote(raw: &str) -> &str {
    raw.strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(raw)
}

impl SynthesisConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = SynthesisConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, raw)) = line.split_once('=') else {
                return Err(ConfigError::new(
                    line,
                    format!("line {}: expected `key = value`", lineno + 1),
                ));
            };
            let (key, raw) = (key.trim(), unquote(raw.trim()));
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::new(key, "given more than once"));
            }
            cfg.set(key, raw)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Assigns one field from its text form. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        match key {
            "penetration_level" => self.penetration_level = value(key, raw)?,
            "generation_split" => self.generation_split = value(key, raw)?,
            "constant_load" => self.constant_load = flag(key, raw)?,
            "random" => self.random = flag(key, raw)?,
            "rng_seed" => self.rng_seed = value(key, raw)?,
            "large_system" => self.large_system = flag(key, raw)?,
            "oversize" => self.oversize = value(key, raw)?,
            "run_opf" => self.run_opf = flag(key, raw)?,
            "export_format" => self.export_format = raw.to_string(),
            "dn_v_min" => self.dn_v_min = value(key, raw)?,
            "dn_v_max" => self.dn_v_max = value(key, raw)?,
            "oltc_v_set" => self.oltc_v_set = value(key, raw)?,
            "pf_tolerance" => self.pf_tolerance = value(key, raw)?,
            "pf_max_iterations" => self.pf_max_iterations = value(key, raw)?,
            "oltc_max_rounds" => self.oltc_max_rounds = value(key, raw)?,
            "opf_rounds" => self.opf_rounds = value(key, raw)?,
            "opf_initial_slack" => self.opf_initial_slack = value(key, raw)?,
            "capacity_ceiling" => self.capacity_ceiling = value(key, raw)?,
            "tn_template" => self.tn_template = raw.to_string(),
            "dn_template" => self.dn_template = raw.to_string(),
            "run_id" => self.run_id = Some(raw.to_string()),
            _ => return Err(ConfigError::new(key, "unknown field")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let finite = |field: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::new(field, "must be finite"))
            }
        };
        finite("penetration_level", self.penetration_level)?;
        if self.penetration_level < 0.0 {
            return Err(ConfigError::new("penetration_level", "must be non-negative"));
        }
        finite("generation_split", self.generation_split)?;
        if !(0.0..=1.0).contains(&self.generation_split) {
            return Err(ConfigError::new("generation_split", "must lie in [0, 1]"));
        }
        finite("oversize", self.oversize)?;
        if self.oversize < 1.0 {
            return Err(ConfigError::new("oversize", "must be at least 1.0"));
        }
        if !(self.dn_v_min > 0.0) {
            return Err(ConfigError::new("dn_v_min", "must be positive"));
        }
        if !(self.dn_v_max > self.dn_v_min) || !self.dn_v_max.is_finite() {
            return Err(ConfigError::new("dn_v_max", "must exceed dn_v_min"));
        }
        if !(self.oltc_v_set > 0.0) || !self.oltc_v_set.is_finite() {
            return Err(ConfigError::new("oltc_v_set", "must be positive"));
        }
        if !(self.pf_tolerance > 0.0) {
            return Err(ConfigError::new("pf_tolerance", "must be positive"));
        }
        for (field, v) in [
            ("pf_max_iterations", self.pf_max_iterations),
            ("oltc_max_rounds", self.oltc_max_rounds),
            ("opf_rounds", self.opf_rounds),
        ] {
            if v == 0 {
                return Err(ConfigError::new(field, "must be at least 1"));
            }
        }
        if !(self.opf_initial_slack >= 0.0) || !self.opf_initial_slack.is_finite() {
            return Err(ConfigError::new("opf_initial_slack", "must be non-negative"));
        }
        if !(self.capacity_ceiling > 0.0) || !self.capacity_ceiling.is_finite() {
            return Err(ConfigError::new("capacity_ceiling", "must be positive"));
        }
        if self.export_format.is_empty() {
            return Err(ConfigError::new("export_format", "must not be empty"));
        }
        if let Some(id) = &self.run_id {
            let ok = !id.is_empty()
                && id
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
                && id != "."
                && id != "..";
            if !ok {
                return Err(ConfigError::new("run_id", "use letters, digits, '-', '_' or '.'"));
            }
        }
        Ok(())
    }

    pub fn run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("seed-{}", self.rng_seed))
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tolerance: self.pf_tolerance,
            max_iterations: self.pf_max_iterations,
            ..SolverOptions::default()
        }
    }

    /// Renders every field in the file format accepted by [`parse`](Self::parse).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "penetration_level = {}", self.penetration_level);
        let _ = writeln!(s, "generation_split = {}", self.generation_split);
        let _ = writeln!(s, "constant_load = {}", self.constant_load);
        let _ = writeln!(s, "random = {}", self.random);
        let _ = writeln!(s, "rng_seed = {}", self.rng_seed);
        let _ = writeln!(s, "large_system = {}", self.large_system);
        let _ = writeln!(s, "oversize = {}", self.oversize);
        let _ = writeln!(s, "run_opf = {}", self.run_opf);
        let _ = writeln!(s, "export_format = {}", self.export_format);
        let _ = writeln!(s, "dn_v_min = {}", self.dn_v_min);
        let _ = writeln!(s, "dn_v_max = {}", self.dn_v_max);
        let _ = writeln!(s, "oltc_v_set = {}", self.oltc_v_set);
        let _ = writeln!(s, "pf_tolerance = {:e}", self.pf_tolerance);
        let _ = writeln!(s, "pf_max_iterations = {}", self.pf_max_iterations);
        let _ = writeln!(s, "oltc_max_rounds = {}", self.oltc_max_rounds);
        let _ = writeln!(s, "opf_rounds = {}", self.opf_rounds);
        let _ = writeln!(s, "opf_initial_slack = {}", self.opf_initial_slack);
        let _ = writeln!(s, "capacity_ceiling = {}", self.capacity_ceiling);
        let _ = writeln!(s, "tn_template = {}", self.tn_template);
        let _ = writeln!(s, "dn_template = {}", self.dn_template);
        if let Some(id) = &self.run_id {
            let _ = writeln!(s, "run_id = {id}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_comments() {
        let cfg = SynthesisConfig::parse("# nothing but a comment\n\n").unwrap();
        assert_eq!(cfg, SynthesisConfig::default());
        assert!(cfg.large_system);
        let cfg = SynthesisConfig::parse("penetration_level = 1.5 # high\nrandom=yes\n").unwrap();
        assert_eq!(cfg.penetration_level, 1.5);
        assert!(cfg.random);
    }

    #[test]
    fn negative_penetration_names_the_field() {
        let err = SynthesisConfig::parse("penetration_level = -0.1").unwrap_err();
        assert_eq!(err.field, "penetration_level");
    }

    #[test]
    fn unknown_and_malformed_fields_rejected() {
        assert_eq!(SynthesisConfig::parse("colour = red").unwrap_err().field, "colour");
        assert_eq!(SynthesisConfig::parse("oversize = big").unwrap_err().field, "oversize");
        assert_eq!(SynthesisConfig::parse("oversize = 0.5").unwrap_err().field, "oversize");
        assert_eq!(
            SynthesisConfig::parse("generation_split = 1.2").unwrap_err().field,
            "generation_split"
        );
        assert_eq!(
            SynthesisConfig::parse("random = 1\nrandom = 0").unwrap_err().field,
            "random"
        );
    }

    #[test]
    fn text_form_round_trips() {
        let cfg = SynthesisConfig {
            penetration_level: 1.25,
            random: true,
            rng_seed: 99,
            run_id: Some("sweep-1".into()),
            ..SynthesisConfig::default()
        };
        assert_eq!(SynthesisConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
