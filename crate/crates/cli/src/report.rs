use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Report value rendering: floats in shortest round-trip form, switching to
/// exponent notation outside `[1e-4, 1e15)`.
pub trait Value {
    fn render(&self) -> String;
}

impl Value for f64 {
    fn render(&self) -> String {
        let a = self.abs();
        if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
            format!("{self:e}")
        } else {
            format!("{self}")
        }
    }
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(usize, u64, bool, &str, String, &String);

pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Human summary, ordered key-values and CSV attachments of one run.
/// Nothing time- or host-dependent is recorded, so equal configs give equal
/// bytes.
#[derive(Debug, Default)]
pub struct Report {
    lines: Vec<String>,
    kv: Vec<(String, String)>,
    csv: Vec<(String, Vec<u8>)>,
}

impl Report {
    pub fn new(subcommand: &str, config_hash: &str, seed: Option<u64>) -> Self {
        let mut r = Self::default();
        r.lines.push(format!("bsde {VERSION} {subcommand}"));
        r.lines.push(format!("config sha256 {config_hash}"));
        r.lines.push(match seed {
            Some(s) => format!("seed {s}"),
            None => "seed none".into(),
        });
        r.kv("version", VERSION);
        r.kv("subcommand", subcommand);
        r.kv("config_hash", config_hash);
        r.kv("seed", seed.map_or("none".to_string(), |s| s.to_string()));
        r
    }

    pub fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }

    pub fn kv(&mut self, key: &str, value: impl Value) {
        self.kv.push((key.to_string(), value.render()));
    }

    /// Adds `key = value` to both the summary and the key-values.
    pub fn both(&mut self, key: &str, value: impl Value) {
        let v = value.render();
        self.lines.push(format!("{key} = {v}"));
        self.kv.push((key.to_string(), v));
    }

    pub fn csv(&mut self, name: &str, body: Vec<u8>) {
        self.csv.push((name.to_string(), body));
    }

    pub fn value(&self, key: &str) -> Option<&str> {
        self.kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut txt = self.lines.join("\n");
        txt.push('\n');
        fs::write(dir.join("report.txt"), txt)?;
        let kv: String = self.kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        fs::write(dir.join("report.kv"), kv)?;
        for (name, body) in &self.csv {
            fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_hex_sha256() {
        assert_eq!(
            config_hash(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn header_keys_come_first() {
        let mut r = Report::new("solve", "ab", Some(7));
        r.both("y0", 1.5);
        assert_eq!(r.value("seed"), Some("7"));
        assert_eq!(r.value("y0"), Some("1.5"));
        assert_eq!(r.kv[0].0, "version");
    }

    #[test]
    fn floats_render_compactly() {
        assert_eq!(1.5f64.render(), "1.5");
        assert_eq!(1.2e-14f64.render(), "1.2e-14");
        assert_eq!(0.0f64.render(), "0");
    }
}
