//! `sync.log`: one event per LF-terminated line,
//! `<epoch> <EVENT> key=value ...`.
//!
//! Recognised keys are `peer` (40 hex chars), `host` (`address:port`),
//! `path` and `share` (40 hex chars). Spaces, `%` and `=` inside values are
//! percent-escaped. Lines that do not parse are returned as warnings with the
//! raw text rather than dropped.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::identity::{PeerId, ShareId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LogEventKind {
    SyncStart,
    Download,
    Upload,
    Delete,
    Invalidate,
    PeerConnect,
}

impl LogEventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LogEventKind::SyncStart => "SYNC_START",
            LogEventKind::Download => "DOWNLOAD",
            LogEventKind::Upload => "UPLOAD",
            LogEventKind::Delete => "DELETE",
            LogEventKind::Invalidate => "INVALIDATE",
            LogEventKind::PeerConnect => "PEER_CONNECT",
        }
    }
}

impl FromStr for LogEventKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "SYNC_START" => LogEventKind::SyncStart,
            "DOWNLOAD" => LogEventKind::Download,
            "UPLOAD" => LogEventKind::Upload,
            "DELETE" => LogEventKind::Delete,
            "INVALIDATE" => LogEventKind::Invalidate,
            "PEER_CONNECT" => LogEventKind::PeerConnect,
            _ => return Err(()),
        })
    }
}

impl fmt::Display for LogEventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEvent {
    /// Epoch seconds.
    pub timestamp: i64,
    pub event: LogEventKind,
    pub peer_id: Option<PeerId>,
    pub host: Option<String>,
    pub path: Option<String>,
    pub share: Option<ShareId>,
}

impl LogEvent {
    pub fn new(timestamp: i64, event: LogEventKind) -> LogEvent {
        LogEvent {
            timestamp,
            event,
            peer_id: None,
            host: None,
            path: None,
            share: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogWarning {
    /// 1-based.
    pub line: usize,
    pub raw: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SyncLog {
    pub events: Vec<LogEvent>,
    pub warnings: Vec<LogWarning>,
}

fn escape(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    for c in v.chars() {
        match c {
            ' ' | '%' | '=' | '\n' | '\r' | '\t' => out.push_str(&format!("%{:02X}", c as u32)),
            _ => out.push(c),
        }
    }
    out
}

fn unescape(v: &str) -> Option<String> {
    let bytes = v.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = v.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

fn parse_line(line: &str) -> Result<LogEvent, String> {
    let mut parts = line.split(' ').filter(|p| !p.is_empty());
    let ts = parts.next().ok_or("empty line")?;
    let timestamp: i64 = ts.parse().map_err(|_| format!("bad timestamp {ts:?}"))?;
    let kind = parts.next().ok_or("missing event name")?;
    let event: LogEventKind = kind.parse().map_err(|_| format!("unknown event {kind:?}"))?;
    let mut ev = LogEvent::new(timestamp, event);
    for part in parts {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| format!("field {part:?} is not key=value"))?;
        let v = unescape(v).ok_or_else(|| format!("bad escape in {part:?}"))?;
        match k {
            "peer" => ev.peer_id = Some(v.parse().map_err(|_| format!("bad peer id {v:?}"))?),
            "share" => ev.share = Some(v.parse().map_err(|_| format!("bad share id {v:?}"))?),
            "host" => ev.host = Some(v),
            "path" => ev.path = Some(v),
            other => return Err(format!("unknown field {other:?}")),
        }
    }
    Ok(ev)
}

pub fn parse_sync_log(text: &str) -> SyncLog {
    let mut log = SyncLog::default();
    let mut last_ts = i64::MIN;
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        match parse_line(raw) {
            Ok(ev) => {
                if ev.timestamp < last_ts {
                    log.warnings.push(LogWarning {
                        line: i + 1,
                        raw: raw.to_string(),
                        reason: format!("timestamp goes backwards from {last_ts}"),
                    });
                }
                last_ts = last_ts.max(ev.timestamp);
                log.events.push(ev);
            }
            Err(reason) => log.warnings.push(LogWarning {
                line: i + 1,
                raw: raw.to_string(),
                reason,
            }),
        }
    }
    log
}

pub fn format_event(ev: &LogEvent) -> String {
    let mut line = format!("{} {}", ev.timestamp, ev.event);
    if let Some(s) = &ev.share {
        line.push_str(&format!(" share={s}"));
    }
    if let Some(p) = &ev.peer_id {
        line.push_str(&format!(" peer={p}"));
    }
    if let Some(h) = &ev.host {
        line.push_str(&format!(" host={}", escape(h)));
    }
    if let Some(p) = &ev.path {
        line.push_str(&format!(" path={}", escape(p)));
    }
    line
}

pub fn format_sync_log(events: &[LogEvent]) -> String {
    events.iter().map(|e| format_event(e) + "\n").collect()
}
