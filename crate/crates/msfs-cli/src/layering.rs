//! Layered run configuration.
//!
//! Every subcommand owns a fixed set of keys with built-in defaults. Values
//! are merged from four sources with increasing precedence:
//!
//! 1. built-in defaults
//! 2. a `key = value` config file (`--config`)
//! 3. environment variables `MSFS_<KEY>` (key upper-cased)
//! 4. command-line flags
//!
//! Unknown keys in a config file are rejected. The effective configuration
//! is echoed as `config.txt` into the output directory of every run so that
//! any artifact directory records exactly how it was produced.

use anyhow::{anyhow, bail, Context, Result};
use std::path::{Path, PathBuf};

/// The merged key/value view for one command invocation.
#[derive(Debug)]
pub struct Layered {
    entries: Vec<(&'static str, String)>,
}

impl Layered {
    /// Merges `defaults`, then the config file, then `MSFS_*` environment
    /// variables, then explicit flag values. `flags` holds one entry per
    /// known key; `None` means the flag was not given.
    pub fn build(
        defaults: &[(&'static str, &str)],
        config_file: Option<&Path>,
        flags: &[(&'static str, Option<String>)],
    ) -> Result<Self> {
        let mut entries: Vec<(&'static str, String)> = defaults
            .iter()
            .map(|&(k, v)| (k, v.to_string()))
            .collect();

        if let Some(path) = config_file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            for (idx, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    anyhow!(
                        "{}:{}: expected `key = value`, got `{line}`",
                        path.display(),
                        idx + 1
                    )
                })?;
                let key = key.trim();
                let value = value.trim();
                let slot = entries
                    .iter_mut()
                    .find(|(name, _)| *name == key)
                    .ok_or_else(|| {
                        anyhow!("{}:{}: unknown key `{key}`", path.display(), idx + 1)
                    })?;
                slot.1 = value.to_string();
            }
        }

        for (name, value) in entries.iter_mut() {
            let var = format!("MSFS_{}", name.to_uppercase());
            if let Ok(v) = std::env::var(&var) {
                *value = v;
            }
        }

        for (key, flag) in flags {
            if let Some(v) = flag {
                let slot = entries
                    .iter_mut()
                    .find(|(name, _)| name == key)
                    .unwrap_or_else(|| panic!("flag `{key}` has no registered key"));
                slot.1 = v.clone();
            }
        }

        Ok(Self { entries })
    }

    fn raw(&self, key: &str) -> &str {
        &self
            .entries
            .iter()
            .find(|(name, _)| *name == key)
            .unwrap_or_else(|| panic!("unregistered key `{key}`"))
            .1
    }

    pub fn string(&self, key: &str) -> String {
        self.raw(key).to_string()
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.raw(key)
            .parse()
            .with_context(|| format!("{key}: expected a non-negative integer, got `{}`", self.raw(key)))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.raw(key)
            .parse()
            .with_context(|| format!("{key}: expected a non-negative integer, got `{}`", self.raw(key)))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.raw(key)
            .parse()
            .with_context(|| format!("{key}: expected a number, got `{}`", self.raw(key)))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" => Ok(true),
            "false" => Ok(false),
            other => bail!("{key}: expected true or false, got `{other}`"),
        }
    }

    pub fn list_usize(&self, key: &str) -> Result<Vec<usize>> {
        self.split_list(key)
            .map(|item| {
                item.parse()
                    .with_context(|| format!("{key}: bad list item `{item}`"))
            })
            .collect()
    }

    pub fn list_f64(&self, key: &str) -> Result<Vec<f64>> {
        self.split_list(key)
            .map(|item| {
                item.parse()
                    .with_context(|| format!("{key}: bad list item `{item}`"))
            })
            .collect()
    }

    fn split_list<'a>(&'a self, key: &str) -> impl Iterator<Item = &'a str> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
    }

    /// Overwrites one entry after merging (used to echo resolved paths).
    pub fn set(&mut self, key: &'static str, value: String) {
        let slot = self
            .entries
            .iter_mut()
            .find(|(name, _)| *name == key)
            .unwrap_or_else(|| panic!("unregistered key `{key}`"));
        slot.1 = value;
    }

    /// The effective configuration as diffable `key = value` lines.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

/// Resolves the output directory: an explicit `out` value is used as given;
/// otherwise a timestamped directory is created under `runs/`. The directory
/// is created here.
pub fn resolve_out_dir(out: &str, command: &str) -> Result<PathBuf> {
    let path = if out.is_empty() {
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        let base = PathBuf::from("runs");
        let mut candidate = base.join(format!("{command}-{stamp}"));
        let mut n = 1;
        while candidate.exists() {
            n += 1;
            candidate = base.join(format!("{command}-{stamp}-{n}"));
        }
        candidate
    } else {
        PathBuf::from(out)
    };
    std::fs::create_dir_all(&path)
        .with_context(|| format!("cannot create output directory {}", path.display()))?;
    Ok(path)
}

/// Writes the effective-config echo into the run directory.
pub fn write_echo(dir: &Path, layered: &Layered) -> Result<()> {
    let path = dir.join("config.txt");
    std::fs::write(&path, layered.echo())
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_then_file_then_env_then_flag() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        let mut f = std::fs::File::create(&cfg).unwrap();
        writeln!(f, "# comment line").unwrap();
        writeln!(f, "alpha = from_file").unwrap();
        writeln!(f, "beta = from_file").unwrap();
        drop(f);

        std::env::set_var("MSFS_BETA", "from_env");
        let layered = Layered::build(
            &[("alpha", "default"), ("beta", "default"), ("gamma", "default")],
            Some(&cfg),
            &[
                ("alpha", None),
                ("beta", None),
                ("gamma", Some("from_flag".to_string())),
            ],
        )
        .unwrap();
        std::env::remove_var("MSFS_BETA");

        assert_eq!(layered.string("alpha"), "from_file");
        assert_eq!(layered.string("beta"), "from_env");
        assert_eq!(layered.string("gamma"), "from_flag");
    }

    #[test]
    fn unknown_file_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "bogus = 1\n").unwrap();
        let err = Layered::build(&[("alpha", "0")], Some(&cfg), &[("alpha", None)])
            .unwrap_err()
            .to_string();
        assert!(err.contains("unknown key"), "{err}");
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn malformed_line_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "alpha\n").unwrap();
        let err = Layered::build(&[("alpha", "0")], Some(&cfg), &[("alpha", None)])
            .unwrap_err()
            .to_string();
        assert!(err.contains("key = value"), "{err}");
    }

    #[test]
    fn typed_getters_and_lists() {
        let layered = Layered::build(
            &[
                ("n", "8"),
                ("x", "0.25"),
                ("flag", "true"),
                ("levels", "3,4, 5"),
                ("empty", ""),
            ],
            None,
            &[],
        )
        .unwrap();
        assert_eq!(layered.usize("n").unwrap(), 8);
        assert_eq!(layered.f64("x").unwrap(), 0.25);
        assert!(layered.bool("flag").unwrap());
        assert_eq!(layered.list_usize("levels").unwrap(), vec![3, 4, 5]);
        assert!(layered.list_f64("empty").unwrap().is_empty());
        assert!(layered.usize("x").is_err());
        assert!(layered.bool("n").is_err());
    }

    #[test]
    fn echo_lists_keys_in_declaration_order() {
        let layered =
            Layered::build(&[("b", "2"), ("a", "1")], None, &[]).unwrap();
        assert_eq!(layered.echo(), "b = 2\na = 1\n");
    }
}
