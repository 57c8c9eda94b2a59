//! Flag values layered over an optional key-value config file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use srec::io::parse_kv;

use crate::commands::CliError;

#[derive(Debug, Default)]
pub struct Settings {
    section: &'static str,
    kv: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>, section: &'static str) -> Result<Self, CliError> {
        let kv = match path {
            Some(p) => parse_kv(&std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?)?,
            None => BTreeMap::new(),
        };
        Ok(Settings { section, kv })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.kv.get(&format!("{}.{key}", self.section)).or_else(|| self.kv.get(key)).map(String::as_str)
    }

    /// Flag if given, else `section.key` or `key` from the config file.
    pub fn opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| CliError::Config(format!("config key {key}: {e}"))))
            .transpose()
    }

    pub fn get<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn flags_win_over_sections_over_globals() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "repeats = 3\nhorizon = 5\n[eval]\nrepeats = 4").unwrap();
        let s = Settings::load(Some(f.path()), "eval").unwrap();
        assert_eq!(s.get(None, "repeats", 10usize).unwrap(), 4);
        assert_eq!(s.get(Some(9usize), "repeats", 10).unwrap(), 9);
        assert_eq!(s.get(None, "horizon", 7.0).unwrap(), 5.0);
        assert_eq!(s.get(None, "absent", 7.0).unwrap(), 7.0);
        assert!(s.get::<usize>(None, "horizon", 1).is_ok());
        let other = Settings::load(Some(f.path()), "train").unwrap();
        assert_eq!(other.get(None, "repeats", 10usize).unwrap(), 3);
    }

    #[test]
    fn bad_values_are_errors() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "repeats = many").unwrap();
        let s = Settings::load(Some(f.path()), "eval").unwrap();
        assert!(s.get(None, "repeats", 10usize).is_err());
    }
}
