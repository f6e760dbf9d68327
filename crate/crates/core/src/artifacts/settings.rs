use crate::bencode::{self, BValue};

use super::{as_dict, flag, flag_value, opt_int, u64_value, unknown_keys, ArtifactError, Dict, Result};

pub const DEFAULT_PIECE_LEN: u64 = 32 * 1024;
pub const DEFAULT_ARCHIVE_DAYS: u64 = 30;
pub const DEFAULT_CHECKIN_MINUTES: u64 = 30;
pub const CHECKIN_RANGE: std::ops::RangeInclusive<u64> = 10..=60;

const KEYS: &[&str] = &["sync_archive_enabled", "archive_days", "piece_len", "checkin_minutes"];

/// Client-wide settings from `settings.dat`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    pub sync_archive_enabled: bool,
    pub archive_days: u64,
    pub piece_len: u64,
    /// Tracker/DHT re-announce interval.
    pub checkin_minutes: u64,
    pub extra: Dict,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            sync_archive_enabled: false,
            archive_days: DEFAULT_ARCHIVE_DAYS,
            piece_len: DEFAULT_PIECE_LEN,
            checkin_minutes: DEFAULT_CHECKIN_MINUTES,
            extra: Dict::new(),
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<()> {
        if !CHECKIN_RANGE.contains(&self.checkin_minutes) {
            return Err(ArtifactError::Range {
                field: "checkin_minutes",
                value: i64::try_from(self.checkin_minutes).unwrap_or(i64::MAX),
                range: "10..=60",
            });
        }
        if self.piece_len == 0 {
            return Err(ArtifactError::Range {
                field: "piece_len",
                value: 0,
                range: "1..",
            });
        }
        Ok(())
    }

    pub fn checkin_ms(&self) -> u64 {
        self.checkin_minutes * 60_000
    }

    pub fn archive_ms(&self) -> u64 {
        self.archive_days * 86_400_000
    }
}

fn non_negative(field: &'static str, v: i64) -> Result<u64> {
    u64::try_from(v).map_err(|_| ArtifactError::Range {
        field,
        value: v,
        range: "0..",
    })
}

pub fn parse_settings(bytes: &[u8]) -> Result<Settings> {
    let v = bencode::decode(bytes)?;
    let d = as_dict(&v, "settings.dat")?;
    let ctx = "settings.dat";
    let defaults = Settings::default();
    let settings = Settings {
        sync_archive_enabled: flag(d, "sync_archive_enabled", ctx)?
            .unwrap_or(defaults.sync_archive_enabled),
        archive_days: match opt_int(d, "archive_days", ctx)? {
            Some(v) => non_negative("archive_days", v)?,
            None => defaults.archive_days,
        },
        piece_len: match opt_int(d, "piece_len", ctx)? {
            Some(v) => non_negative("piece_len", v)?,
            None => defaults.piece_len,
        },
        checkin_minutes: match opt_int(d, "checkin_minutes", ctx)? {
            Some(v) => non_negative("checkin_minutes", v)?,
            None => defaults.checkin_minutes,
        },
        extra: unknown_keys(d, KEYS),
    };
    settings.validate()?;
    Ok(settings)
}

pub fn write_settings(s: &Settings) -> Vec<u8> {
    let mut d = s.extra.clone();
    d.insert(b"sync_archive_enabled".to_vec(), flag_value(s.sync_archive_enabled));
    d.insert(b"archive_days".to_vec(), u64_value(s.archive_days));
    d.insert(b"piece_len".to_vec(), u64_value(s.piece_len));
    d.insert(b"checkin_minutes".to_vec(), u64_value(s.checkin_minutes));
    bencode::encode(&BValue::Dict(d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bencode::DictBuilder;

    #[test]
    fn empty_dictionary_gives_defaults() {
        let s = parse_settings(b"de").unwrap();
        assert_eq!(s.piece_len, 32768);
        assert_eq!(s.archive_days, 30);
        assert_eq!(s.checkin_minutes, 30);
        assert!(!s.sync_archive_enabled);
    }

    #[test]
    fn checkin_outside_range_is_rejected() {
        for bad in [5, 9, 61] {
            let b = DictBuilder::new().insert("checkin_minutes", bad).build().encode();
            assert!(
                matches!(parse_settings(&b), Err(ArtifactError::Range { field: "checkin_minutes", .. })),
                "{bad}"
            );
        }
        for ok in [10, 60] {
            let b = DictBuilder::new().insert("checkin_minutes", ok).build().encode();
            assert_eq!(parse_settings(&b).unwrap().checkin_minutes, ok as u64);
        }
    }

    #[test]
    fn custom_piece_len_and_type_errors() {
        let b = DictBuilder::new().insert("piece_len", 16384).build().encode();
        assert_eq!(parse_settings(&b).unwrap().piece_len, 16384);
        let b = DictBuilder::new().insert("piece_len", "big").build().encode();
        assert!(matches!(parse_settings(&b), Err(ArtifactError::SchemaViolation(_))));
        let b = DictBuilder::new().insert("piece_len", 0).build().encode();
        assert!(matches!(parse_settings(&b), Err(ArtifactError::Range { .. })));
    }

    #[test]
    fn round_trip() {
        let mut s = Settings {
            sync_archive_enabled: true,
            archive_days: 7,
            ..Settings::default()
        };
        s.extra.insert(b"lang".to_vec(), BValue::str("en"));
        let bytes = write_settings(&s);
        assert_eq!(parse_settings(&bytes).unwrap(), s);
    }
}
