//! Sectioned `key = value` run configuration.
//!
//! ```text
//! # comment
//! [eos]
//! family = composite
//! gamma0 = 1.6666666666666667
//!
//! [model]
//! mu = 25
//!
//! [numerics]
//! tol = 1e-10
//! ```
//!
//! Parsing is fail-closed: unknown sections, unknown keys, keys belonging to
//! another EOS family, duplicates and unparsable values are all errors.
//! Every key has a default except `table_path` for tabulated laws.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { line, message: message.into() })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EosConfig {
    Polytrope {
        #[serde(rename = "K")]
        k: f64,
        gamma: f64,
    },
    WhiteDwarf {
        #[serde(rename = "A")]
        a: f64,
        #[serde(rename = "B")]
        b: f64,
    },
    Composite { c_minus: f64, gamma0: f64, gamma_inf: f64, rho_blend: f64 },
    Tabulated { table_path: PathBuf },
}

impl Default for EosConfig {
    fn default() -> Self {
        EosConfig::Polytrope { k: 1.0, gamma: 5.0 / 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Numerics {
    pub tol: f64,
    pub n_grid: usize,
    pub n_mu: usize,
    /// Cells across the star for the radial operators.
    pub n_radial: usize,
    pub r_out_factor: f64,
    pub seed: u64,
}

impl Default for Numerics {
    fn default() -> Self {
        Self { tol: 1e-10, n_grid: 2000, n_mu: 200, n_radial: 400, r_out_factor: 3.0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveConfig {
    pub mu_lo: f64,
    pub mu_hi: f64,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self { mu_lo: 1e-3, mu_hi: 1e3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorChoice {
    Schrodinger,
    Eddington,
    RadialHessian,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumConfig {
    pub operator: OperatorChoice,
    pub l: u32,
    pub k: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { operator: OperatorChoice::Schrodinger, l: 0, k: 6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityConfig {
    pub cross_check: bool,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { cross_check: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyConfig {
    pub count: usize,
    pub horizon: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { count: 200, horizon: 1e4 }
    }
}

/// Fully resolved run configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub eos: EosConfig,
    pub mu: f64,
    pub numerics: Numerics,
    pub curve: CurveConfig,
    pub spectrum: SpectrumConfig,
    pub stability: StabilityConfig,
    pub toy: ToyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            eos: EosConfig::default(),
            mu: 1.0,
            numerics: Numerics::default(),
            curve: CurveConfig::default(),
            spectrum: SpectrumConfig::default(),
            stability: StabilityConfig::default(),
            toy: ToyConfig::default(),
        }
    }
}

struct Entry {
    value: String,
    line: usize,
}

type Sections = BTreeMap<String, BTreeMap<String, Entry>>;

fn split(text: &str) -> Result<Sections, ConfigError> {
    let mut sections = Sections::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = match raw.find(['#', ';']) {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                return err(line, format!("malformed section header `{body}`"));
            };
            let name = name.trim().to_string();
            if sections.contains_key(&name) {
                return err(line, format!("section [{name}] appears twice"));
            }
            sections.insert(name.clone(), BTreeMap::new());
            current = Some(name);
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return err(line, format!("expected `key = value`, got `{body}`"));
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return err(line, format!("empty key or value in `{body}`"));
        }
        let Some(section) = &current else {
            return err(line, format!("key `{key}` outside any section"));
        };
        let map = sections.get_mut(section).expect("section was inserted");
        if map.insert(key.to_string(), Entry { value: value.to_string(), line }).is_some() {
            return err(line, format!("duplicate key `{key}` in [{section}]"));
        }
    }
    Ok(sections)
}

struct Section {
    name: String,
    entries: BTreeMap<String, Entry>,
}

impl Section {
    fn take<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(e) => match e.value.parse() {
                Ok(v) => Ok(v),
                Err(_) => err(e.line, format!("cannot parse `{}` for [{}] {key}", e.value, self.name)),
            },
        }
    }

    fn take_f64(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let line = self.entries.get(key).map_or(0, |e| e.line);
        let v: f64 = self.take(key, default)?;
        if !v.is_finite() {
            return err(line, format!("[{}] {key} must be finite", self.name));
        }
        Ok(v)
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.entries.into_iter().min_by_key(|(_, e)| e.line) {
            Some((key, e)) => err(e.line, format!("unknown key `{key}` in [{}]", self.name)),
            None => Ok(()),
        }
    }
}

/// Parses a configuration; relative `table_path`s resolve against `base`.
pub fn parse(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
    let mut sections = split(text)?;
    let mut section = |name: &str| Section {
        name: name.to_string(),
        entries: sections.remove(name).unwrap_or_default(),
    };
    let mut cfg = RunConfig::default();

    let mut eos = section("eos");
    let family_line = eos.entries.get("family").map_or(0, |e| e.line);
    let family: String = eos.take("family", "polytrope".to_string())?;
    cfg.eos = match family.as_str() {
        "polytrope" => EosConfig::Polytrope { k: eos.take_f64("K", 1.0)?, gamma: eos.take_f64("gamma", 5.0 / 3.0)? },
        "white_dwarf" => EosConfig::WhiteDwarf { a: eos.take_f64("A", 1.0)?, b: eos.take_f64("B", 1.0)? },
        "composite" => EosConfig::Composite {
            c_minus: eos.take_f64("c_minus", 1.0)?,
            gamma0: eos.take_f64("gamma0", 5.0 / 3.0)?,
            gamma_inf: eos.take_f64("gamma_inf", 1.1)?,
            rho_blend: eos.take_f64("rho_blend", 1.0)?,
        },
        "tabulated" => {
            let line = eos.entries.get("table_path").map_or(0, |e| e.line);
            let path: String = eos.take("table_path", String::new())?;
            if path.is_empty() {
                return err(line, "tabulated family needs table_path");
            }
            EosConfig::Tabulated { table_path: base.join(path) }
        }
        other => return err(family_line, format!("unknown EOS family `{other}`")),
    };
    eos.finish()?;

    let mut model = section("model");
    cfg.mu = model.take_f64("mu", 1.0)?;
    model.finish()?;

    let mut num = section("numerics");
    let d = Numerics::default();
    cfg.numerics = Numerics {
        tol: num.take_f64("tol", d.tol)?,
        n_grid: num.take("n_grid", d.n_grid)?,
        n_mu: num.take("n_mu", d.n_mu)?,
        n_radial: num.take("n_radial", d.n_radial)?,
        r_out_factor: num.take_f64("r_out_factor", d.r_out_factor)?,
        seed: num.take("seed", d.seed)?,
    };
    num.finish()?;

    let mut curve = section("curve");
    let d = CurveConfig::default();
    cfg.curve = CurveConfig { mu_lo: curve.take_f64("mu_lo", d.mu_lo)?, mu_hi: curve.take_f64("mu_hi", d.mu_hi)? };
    curve.finish()?;

    let mut spec = section("spectrum");
    let d = SpectrumConfig::default();
    let line = spec.entries.get("operator").map_or(0, |e| e.line);
    let op: String = spec.take("operator", "schrodinger".to_string())?;
    cfg.spectrum = SpectrumConfig {
        operator: match op.as_str() {
            "schrodinger" => OperatorChoice::Schrodinger,
            "eddington" => OperatorChoice::Eddington,
            "radial_hessian" => OperatorChoice::RadialHessian,
            other => return err(line, format!("unknown operator `{other}`")),
        },
        l: spec.take("l", d.l)?,
        k: spec.take("k", d.k)?,
    };
    spec.finish()?;

    let mut stab = section("stability");
    cfg.stability = StabilityConfig { cross_check: stab.take("cross_check", true)? };
    stab.finish()?;

    let mut toy = section("toy");
    let d = ToyConfig::default();
    cfg.toy = ToyConfig { count: toy.take("count", d.count)?, horizon: toy.take_f64("horizon", d.horizon)? };
    toy.finish()?;

    if let Some((name, entries)) = sections.into_iter().next() {
        let line = entries.values().map(|e| e.line).min().unwrap_or(0);
        return err(line, format!("unknown section [{name}]"));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = parse("", Path::new(".")).unwrap();
        assert_eq!(cfg.eos, EosConfig::default());
        assert_eq!(cfg.numerics, Numerics::default());
    }

    #[test]
    fn composite_block() {
        let text = "[eos]\nfamily = composite  # spiral\ngamma_inf = 1.05\n[numerics]\nn_mu = 64\n";
        let cfg = parse(text, Path::new(".")).unwrap();
        assert_eq!(
            cfg.eos,
            EosConfig::Composite { c_minus: 1.0, gamma0: 5.0 / 3.0, gamma_inf: 1.05, rho_blend: 1.0 }
        );
        assert_eq!(cfg.numerics.n_mu, 64);
    }

    #[test]
    fn rejects_unknown_and_foreign_keys() {
        for text in [
            "[eos]\nfamily = polytrope\ngama = 1.5\n",
            "[eos]\nfamily = polytrope\nA = 1\n",
            "[numerics]\ntol = 1e-10\ntol = 1e-9\n",
            "[plot]\ncolor = red\n",
            "tol = 1e-10\n",
            "[numerics]\nn_mu = many\n",
            "[eos\n",
        ] {
            assert!(parse(text, Path::new(".")).is_err(), "{text}");
        }
    }

    #[test]
    fn reports_the_offending_line() {
        let e = parse("[numerics]\n\ntol = 1e-10\nbogus = 3\n", Path::new(".")).unwrap_err();
        assert_eq!(e.line, 4);
    }
}
