//! Run configuration: `key = value` lines grouped in `[section]`s. Every key
//! has a default; a file overrides defaults and command-line flags override
//! the file. Unknown sections or keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;

use crate::CliError;

#[derive(Clone, Copy, Debug)]
enum Kind {
    Int,
    Float,
    Bool,
    Text,
    FloatList,
    TextList,
    Choice(&'static [&'static str]),
}

const AMPLITUDES: &str = "2.0,2.2,2.4,2.6,2.8,3.0,3.2,3.4,3.6,3.8,4.0,4.2,4.4,4.6,4.8,5.0,5.2,5.4";

#[rustfmt::skip]
const SCHEMA: &[(&str, &str, &str, Kind)] = &[
    ("system", "viscosity", "0.05", Kind::Float),
    ("system", "forcing_wavenumber", "4", Kind::Int),
    ("system", "dt_solver", "0.005", Kind::Float),
    ("system", "grid", "32", Kind::Int),
    ("system", "stride", "20", Kind::Int),
    ("system", "burn_in", "2000", Kind::Int),
    ("system", "frames", "1000", Kind::Int),
    ("system", "amplitudes", AMPLITUDES, Kind::FloatList),
    ("system", "seed", "0", Kind::Int),

    ("dataset", "dir", "data", Kind::Text),
    ("dataset", "split_seed", "0", Kind::Int),

    ("model", "precision", "f64", Kind::Choice(&["f32", "f64"])),
    ("model", "dim", "64", Kind::Int),
    ("model", "patch", "4", Kind::Int),
    ("model", "layers", "4", Kind::Int),
    ("model", "heads", "2", Kind::Int),
    ("model", "mlp_ratio", "4", Kind::Int),
    ("model", "history", "8", Kind::Int),
    ("model", "forecast", "4", Kind::Int),
    ("model", "ar_context", "2", Kind::Int),
    ("model", "init_seed", "0", Kind::Int),

    ("training", "run_dir", "runs", Kind::Text),
    ("training", "steps", "20000", Kind::Int),
    ("training", "batch", "16", Kind::Int),
    ("training", "lr_start", "5e-7", Kind::Float),
    ("training", "lr_peak", "1e-4", Kind::Float),
    ("training", "lr_end", "1e-5", Kind::Float),
    ("training", "warmup", "1000", Kind::Int),
    ("training", "weight_decay", "0.05", Kind::Float),
    ("training", "seed", "0", Kind::Int),
    ("training", "probes_min", "25", Kind::Int),
    ("training", "probes_max", "25", Kind::Int),
    ("training", "window_dropout", "0", Kind::Float),
    ("training", "weight_alpha", "9", Kind::Float),
    ("training", "weight_sigma", "2", Kind::Float),
    ("training", "checkpoint_every", "1000", Kind::Int),

    ("twin", "mode", "sequence", Kind::Choice(&["sequence", "sliding-single"])),
    ("twin", "seeds", "10", Kind::Int),
    ("twin", "steps", "20", Kind::Int),
    ("twin", "seed", "0", Kind::Int),
    ("twin", "history", "8", Kind::Int),
    ("twin", "constellation", "grid", Kind::Choice(&["grid", "vertical", "file"])),
    ("twin", "grid_rows", "10", Kind::Int),
    ("twin", "grid_cols", "10", Kind::Int),
    ("twin", "vertical_count", "25", Kind::Int),
    ("twin", "probe_file", "", Kind::Text),
    ("twin", "inlet", "true", Kind::Bool),
    ("twin", "noise_sigma", "0", Kind::Float),
    ("twin", "noise_seed", "0", Kind::Int),

    ("eval", "out_dir", "runs/eval", Kind::Text),
    ("eval", "split", "test", Kind::Choice(&["train", "val", "test"])),
    ("eval", "t0", "8", Kind::Int),
    ("eval", "horizon", "200", Kind::Int),
    ("eval", "models", "paint,ar", Kind::TextList),
    ("eval", "constellations", "grid,vertical", Kind::TextList),
    ("eval", "jacobian_steps", "50", Kind::Int),
    ("eval", "jacobian_iters", "20", Kind::Int),
    ("eval", "logistic_r", "4.0", Kind::Float),
    ("eval", "logistic_eps", "1e-4,1e-6,1e-8", Kind::FloatList),
    ("eval", "logistic_starts", "200", Kind::Int),
];

fn kind_of(section: &str, key: &str) -> Option<Kind> {
    SCHEMA.iter().find(|(s, k, _, _)| *s == section && *k == key).map(|e| e.3)
}

fn check(section: &str, key: &str, value: &str) -> Result<(), CliError> {
    let kind = kind_of(section, key).ok_or_else(|| CliError::Config(format!("unknown key '{section}.{key}'")))?;
    let bad = |what: &str| CliError::Config(format!("{section}.{key} = '{value}' is not {what}"));
    let ok = match kind {
        Kind::Int => value.parse::<u64>().is_ok(),
        Kind::Float => value.parse::<f64>().is_ok_and(f64::is_finite),
        Kind::Bool => value.parse::<bool>().is_ok(),
        Kind::Text => true,
        Kind::FloatList => !value.is_empty() && value.split(',').all(|v| v.trim().parse::<f64>().is_ok_and(f64::is_finite)),
        Kind::TextList => value.split(',').all(|v| !v.trim().is_empty()),
        Kind::Choice(opts) => {
            if !opts.contains(&value) {
                return Err(bad(&format!("one of {}", opts.join(" | "))));
            }
            true
        }
    };
    if ok {
        Ok(())
    } else {
        Err(bad(match kind {
            Kind::Int => "a non-negative integer",
            Kind::Float => "a finite number",
            Kind::Bool => "true or false",
            Kind::FloatList => "a comma-separated list of numbers",
            _ => "a comma-separated list",
        }))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: BTreeMap<(String, String), String>,
}

impl Default for Config {
    fn default() -> Self {
        let values = SCHEMA.iter().map(|(s, k, v, _)| ((s.to_string(), k.to_string()), v.to_string())).collect();
        Config { values }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Config::default();
        cfg.merge_text(&text)?;
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<(), CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(format!("config syntax: {e}")))?;
        for (section, props) in ini.iter() {
            for (key, value) in props.iter() {
                let Some(section) = section else {
                    return Err(CliError::Config(format!("key '{key}' appears before any [section]")));
                };
                self.set(section, key, value)?;
            }
        }
        Ok(())
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        check(section, key, value)?;
        self.values.insert((section.into(), key.into()), value.into());
        Ok(())
    }

    /// Applies a `section.key=value` override.
    pub fn set_dotted(&mut self, spec: &str) -> Result<(), CliError> {
        let (path, value) =
            spec.split_once('=').ok_or_else(|| CliError::Config(format!("override '{spec}' is not section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| CliError::Config(format!("override '{spec}' is not section.key=value")))?;
        self.set(section, key, value)
    }

    pub fn str(&self, section: &str, key: &str) -> &str {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .unwrap_or_else(|| panic!("{section}.{key} missing from the schema"))
    }

    /// Typed value; the schema check guarantees the parse succeeds for the
    /// declared kind.
    pub fn get<V: FromStr>(&self, section: &str, key: &str) -> V {
        self.str(section, key)
            .parse()
            .unwrap_or_else(|_| panic!("{section}.{key} does not parse as its declared type"))
    }

    pub fn list<V: FromStr>(&self, section: &str, key: &str) -> Vec<V> {
        self.str(section, key).split(',').filter_map(|v| v.trim().parse().ok()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (section, key, _, _) in SCHEMA {
            if *section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section;
            }
            let _ = writeln!(out, "{key} = {}", self.str(section, key));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_defaults_parse_back() {
        let d = Config::default();
        let mut back = Config::default();
        back.set("model", "dim", "8").unwrap();
        back.merge_text(&d.to_text()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn rejects_unknown_and_malformed_entries() {
        let mut c = Config::default();
        assert!(c.merge_text("[model]\nwidth = 3\n").is_err());
        assert!(c.merge_text("[nonsense]\ndim = 3\n").is_err());
        assert!(c.merge_text("dim = 3\n").is_err());
        assert!(c.set("model", "dim", "-1").is_err());
        assert!(c.set("twin", "mode", "both").is_err());
        assert!(c.set("system", "amplitudes", "1,x").is_err());
        assert!(c.set_dotted("model.dim").is_err());
        c.set_dotted("model.dim = 16").unwrap();
        assert_eq!(c.get::<usize>("model", "dim"), 16);
    }
}
