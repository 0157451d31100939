use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of the raw event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub user: String,
    pub session: String,
    pub command: String,
    pub ts: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawEvent {
    pub command: String,
    pub ts: f64,
}

/// Events of one `(user, session)` pair, ordered by timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSession {
    pub user: String,
    pub session: String,
    pub events: Vec<RawEvent>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedLog {
    pub sessions: Vec<RawSession>,
    /// Lines that failed to parse or lacked a required field.
    pub skipped: usize,
}

/// Parses a JSONL event log and groups events into sessions.
///
/// Sessions come out ordered by `(user, session)`; events within a session
/// are stably sorted by timestamp. Blank lines are ignored without being
/// counted as skipped.
pub fn parse_log<R: BufRead>(reader: R) -> Result<ParsedLog> {
    let mut groups: BTreeMap<(String, String), Vec<RawEvent>> = BTreeMap::new();
    let mut skipped = 0;
    let mut valid = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogLine>(&line) {
            Ok(ev) if ev.ts.is_finite() => {
                valid += 1;
                groups
                    .entry((ev.user, ev.session))
                    .or_default()
                    .push(RawEvent {
                        command: ev.command,
                        ts: ev.ts,
                    });
            }
            _ => skipped += 1,
        }
    }
    if valid == 0 {
        return Err(Error::EmptyCorpus(format!(
            "no valid log lines ({skipped} skipped)"
        )));
    }
    let sessions = groups
        .into_iter()
        .map(|((user, session), mut events)| {
            events.sort_by(|a, b| a.ts.total_cmp(&b.ts));
            RawSession {
                user,
                session,
                events,
            }
        })
        .collect();
    Ok(ParsedLog { sessions, skipped })
}

/// Removes denylisted commands (UI events that were logged but not executed
/// by the user). Sessions left empty are dropped.
pub fn filter_denylist(sessions: Vec<RawSession>, denylist: &HashSet<String>) -> Vec<RawSession> {
    if denylist.is_empty() {
        return sessions;
    }
    sessions
        .into_iter()
        .filter_map(|mut s| {
            s.events.retain(|e| !denylist.contains(&e.command));
            (!s.events.is_empty()).then_some(s)
        })
        .collect()
}

/// Reads a plain-text list with one command name per line. Blank lines and
/// lines starting with `#` are skipped.
pub fn read_name_list<R: BufRead>(reader: R) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let name = line.trim();
        if name.is_empty() || name.starts_with('#') {
            continue;
        }
        out.push(name.to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_one_session() {
        let log = r#"{"user":"u1","session":"s","command":"b","ts":2.0}
{"user":"u1","session":"s","command":"a","ts":1.0}
{"user":"u1","session":"s","command":"c","ts":3.0}
"#;
        let parsed = parse_log(log.as_bytes()).unwrap();
        assert_eq!(parsed.sessions.len(), 1);
        let cmds: Vec<&str> = parsed.sessions[0]
            .events
            .iter()
            .map(|e| e.command.as_str())
            .collect();
        assert_eq!(cmds, ["a", "b", "c"]);
        assert_eq!(parsed.skipped, 0);
    }

    #[test]
    fn keeps_users_apart() {
        let log = r#"{"user":"u1","session":"s","command":"a","ts":1}
{"user":"u2","session":"s","command":"a","ts":1}
"#;
        let parsed = parse_log(log.as_bytes()).unwrap();
        let users: Vec<&str> = parsed.sessions.iter().map(|s| s.user.as_str()).collect();
        assert_eq!(users, ["u1", "u2"]);
    }

    #[test]
    fn skips_malformed_lines() {
        let log = r#"{"user":"u1","session":"s","command":"a","ts":1}
{"user":"u1","session":"s","ts":2}
not json at all
"#;
        let parsed = parse_log(log.as_bytes()).unwrap();
        assert_eq!(parsed.skipped, 2);
        assert_eq!(parsed.sessions[0].events.len(), 1);
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(matches!(
            parse_log("\n\n".as_bytes()),
            Err(Error::EmptyCorpus(_))
        ));
        assert!(matches!(
            parse_log("{}\n".as_bytes()),
            Err(Error::EmptyCorpus(_))
        ));
    }

    #[test]
    fn denylist_filters_events() {
        let log = r#"{"user":"u","session":"s","command":"hover","ts":1}
{"user":"u","session":"s","command":"sort","ts":2}
{"user":"v","session":"s","command":"hover","ts":2}
"#;
        let sessions = parse_log(log.as_bytes()).unwrap().sessions;
        let deny: HashSet<String> = ["hover".to_string()].into();
        let out = filter_denylist(sessions.clone(), &deny);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].events[0].command, "sort");
        assert_eq!(filter_denylist(sessions.clone(), &HashSet::new()), sessions);
    }

    #[test]
    fn name_lists_skip_comments() {
        let names = read_name_list("# ui events\nhover\n\n  scroll \n".as_bytes()).unwrap();
        assert_eq!(names, ["hover", "scroll"]);
    }
}
