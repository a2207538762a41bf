//! Flags shared by every subcommand, and the JSON config that mirrors them.
//!
//! Config keys are the long flag names (`gamma-range`, `self-check`, …).
//! A flag given on the command line replaces the config value; unknown keys
//! and ill-typed values are rejected before anything runs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

const COMMON_KEYS: [&str; 4] = ["seed", "out", "threads", "self-check"];

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// JSON file mirroring the flags; flags given on the command line win
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Root seed for every random stream
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output file (stdout when omitted)
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Worker threads (defaults to the number of cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Run the embedded consistency checks; failures give a nonzero exit
    #[arg(long, global = true)]
    pub self_check: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Common {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub self_check: bool,
}

impl Common {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

fn read_config(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    match serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))? {
        Value::Object(map) => Ok(map),
        _ => bail!("config {} must be a JSON object", path.display()),
    }
}

/// Unset flags serialize as `null` or `false` and leave the config alone.
fn overlay(base: &mut Map<String, Value>, flags: Value) {
    if let Value::Object(map) = flags {
        for (key, value) in map {
            if !(value.is_null() || value == Value::Bool(false)) {
                base.insert(key, value);
            }
        }
    }
}

/// Merges config file and flags into the common options and the
/// subcommand's own options.
pub fn resolve<T: Serialize + DeserializeOwned>(args: &CommonArgs, flags: &T) -> Result<(Common, T)> {
    let mut rest = match &args.config {
        Some(path) => read_config(path)?,
        None => Map::new(),
    };
    let mut common = Map::new();
    for key in COMMON_KEYS {
        if let Some(v) = rest.remove(key) {
            common.insert(key.to_string(), v);
        }
    }
    overlay(
        &mut common,
        serde_json::to_value(Common {
            seed: args.seed,
            out: args.out.clone(),
            threads: args.threads,
            self_check: args.self_check,
        })?,
    );
    overlay(&mut rest, serde_json::to_value(flags)?);
    let common: Common = serde_json::from_value(Value::Object(common)).context("invalid common options")?;
    let opts: T = serde_json::from_value(Value::Object(rest)).context("invalid options")?;
    if common.threads == Some(0) {
        bail!("--threads must be at least 1");
    }
    Ok((common, opts))
}

/// `lo:hi:count`, geometrically spaced (both ends included).
pub fn geometric_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, count] = parts[..] else {
        bail!("range {spec:?} must look like lo:hi:count");
    };
    let lo: f64 = lo.trim().parse().with_context(|| format!("range start in {spec:?}"))?;
    let hi: f64 = hi.trim().parse().with_context(|| format!("range end in {spec:?}"))?;
    let count: usize = count.trim().parse().with_context(|| format!("range count in {spec:?}"))?;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || count == 0 {
        bail!("range {spec:?} needs 0 < lo <= hi and count >= 1");
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi / lo).ln() / (count - 1) as f64;
    Ok((0..count)
        .map(|i| if i + 1 == count { hi } else { lo * (step * i as f64).exp() })
        .collect())
}

/// `lo:hi` or `lo:hi:step`, inclusive.
pub fn integer_range(spec: &str) -> Result<Vec<usize>> {
    let parts: Vec<usize> = spec
        .split(':')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("integer range {spec:?}"))?;
    let (lo, hi, step) = match parts[..] {
        [lo, hi] => (lo, hi, 1),
        [lo, hi, step] => (lo, hi, step),
        _ => bail!("integer range {spec:?} must look like lo:hi or lo:hi:step"),
    };
    if lo > hi || step == 0 {
        bail!("integer range {spec:?} needs lo <= hi and step >= 1");
    }
    Ok((lo..=hi).step_by(step).collect())
}

/// Values from an explicit list and/or a range, deduplicated in order.
pub fn values_or_range<V: Clone + PartialEq>(
    name: &str,
    list: Option<&[V]>,
    range: Option<Result<Vec<V>>>,
    default: Option<V>,
) -> Result<Vec<V>> {
    let mut out: Vec<V> = list.map(<[V]>::to_vec).unwrap_or_default();
    if let Some(r) = range {
        out.extend(r?);
    }
    if out.is_empty() {
        match default {
            Some(d) => out.push(d),
            None => bail!("no values given for {name}"),
        }
    }
    let mut seen: Vec<V> = Vec::with_capacity(out.len());
    for v in out {
        if !seen.contains(&v) {
            seen.push(v);
        }
    }
    Ok(seen)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
    struct Opts {
        k: Option<Vec<usize>>,
        gamma_range: Option<String>,
        #[serde(default)]
        allow_large: bool,
    }

    fn config_file(body: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, body).unwrap();
        (dir, path)
    }

    #[test]
    fn flags_override_config() {
        let (_d, path) = config_file(r#"{"seed": 4, "k": [1, 2], "gamma-range": "0.1:1:3", "allow-large": true}"#);
        let args = CommonArgs {
            config: Some(path),
            seed: Some(9),
            ..CommonArgs::default()
        };
        let flags = Opts {
            k: Some(vec![5]),
            ..Opts::default()
        };
        let (common, opts) = resolve(&args, &flags).unwrap();
        assert_eq!(common.seed, Some(9));
        assert_eq!(opts.k, Some(vec![5]));
        assert_eq!(opts.gamma_range.as_deref(), Some("0.1:1:3"));
        assert!(opts.allow_large);
    }

    #[test]
    fn unknown_and_ill_typed_keys_are_rejected() {
        for body in [r#"{"gama": 1}"#, r#"{"k": "three"}"#, r#"{"threads": -1}"#, "[1, 2]"] {
            let (_d, path) = config_file(body);
            let args = CommonArgs {
                config: Some(path),
                ..CommonArgs::default()
            };
            assert!(resolve(&args, &Opts::default()).is_err(), "{body}");
        }
    }

    #[test]
    fn ranges() {
        let g = geometric_range("0.1:10:3").unwrap();
        assert!((g[1] - 1.0).abs() < 1e-12 && g[2] == 10.0);
        assert_eq!(integer_range("2:8:3").unwrap(), vec![2, 5, 8]);
        assert!(geometric_range("0:1:3").is_err());
        assert!(geometric_range("1:2").is_err());
        assert!(integer_range("5:1").is_err());
        let v = values_or_range("k", Some(&[1usize, 2][..]), Some(integer_range("2:3")), None).unwrap();
        assert_eq!(v, vec![1, 2, 3]);
        assert!(values_or_range::<usize>("k", None, None, None).is_err());
    }
}
