use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer};

use super::RawReview;
use crate::error::{ManError, Result};

/// Aspect map that keeps every key in order so duplicates can be rejected.
#[derive(Debug, Default)]
struct AspectEntries(Vec<(String, Option<i64>)>);

impl<'de> Deserialize<'de> for AspectEntries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = AspectEntries;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from aspect name to rating")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some(entry) = map.next_entry::<String, Option<i64>>()? {
                    out.push(entry);
                }
                Ok(AspectEntries(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Debug, Deserialize)]
struct Record {
    text: String,
    overall: i64,
    #[serde(default)]
    aspects: AspectEntries,
    #[serde(default)]
    domain: Option<String>,
}

fn rating(v: i64, what: &str, line: usize) -> Result<u8> {
    if (1..=5).contains(&v) {
        Ok(v as u8)
    } else {
        Err(ManError::Validation(format!(
            "line {line}: {what} rating {v} is outside 1..5"
        )))
    }
}

/// Parses one JSON record against the configured aspect list.
pub fn parse_record(line: &str, lineno: usize, aspects: &[String]) -> Result<RawReview> {
    let rec: Record = serde_json::from_str(line).map_err(|e| ManError::Parse {
        line: lineno,
        msg: e.to_string(),
    })?;
    let overall = rating(rec.overall, "overall", lineno)?;
    let mut aspect_ratings = vec![None; aspects.len()];
    let mut seen = vec![false; aspects.len()];
    for (name, value) in rec.aspects.0 {
        let k = aspects.iter().position(|a| a == &name).ok_or_else(|| {
            ManError::Validation(format!(
                "line {lineno}: unknown aspect {name:?} (configured: {})",
                aspects.join(", ")
            ))
        })?;
        if seen[k] {
            return Err(ManError::Validation(format!(
                "line {lineno}: aspect {name:?} appears twice"
            )));
        }
        seen[k] = true;
        aspect_ratings[k] = value.map(|v| rating(v, &name, lineno)).transpose()?;
    }
    Ok(RawReview {
        text: rec.text,
        overall_rating: overall,
        aspect_ratings,
        domain: rec.domain.unwrap_or_default(),
    })
}

/// Reads line-delimited JSON reviews; blank lines are skipped.
pub fn ingest(path: impl AsRef<Path>, aspects: &[String]) -> Result<Vec<RawReview>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| ManError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ManError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line, i + 1, aspects)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;
    use crate::data::RESTAURANT_ASPECTS;

    fn aspects() -> Vec<String> {
        RESTAURANT_ASPECTS.map(String::from).to_vec()
    }

    fn write(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f.flush().unwrap();
        f
    }

    #[test]
    fn three_rated_aspects_leave_one_absent() {
        let f = write(&[
            r#"{"text":"Great pizza","overall":5,"aspects":{"Food":5,"Service":4,"Value":2},"domain":"restaurant"}"#,
        ]);
        let r = ingest(f.path(), &aspects()).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].overall_rating, 5);
        assert_eq!(r[0].aspect_ratings, vec![Some(5), Some(4), Some(2), None]);
        assert_eq!(r[0].domain, "restaurant");
    }

    #[test]
    fn empty_file_is_empty_list() {
        let f = write(&[]);
        assert!(ingest(f.path(), &aspects()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_and_unknown_aspects_rejected() {
        let f = write(&[r#"{"text":"x","overall":3,"aspects":{"Food":5,"Food":1}}"#]);
        assert!(matches!(ingest(f.path(), &aspects()), Err(ManError::Validation(_))));
        let f = write(&[r#"{"text":"x","overall":3,"aspects":{"Room":5}}"#]);
        assert!(matches!(ingest(f.path(), &aspects()), Err(ManError::Validation(_))));
    }

    #[test]
    fn bad_lines_carry_line_numbers() {
        let f = write(&[r#"{"text":"ok","overall":3}"#, "{not json"]);
        match ingest(f.path(), &aspects()) {
            Err(ManError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let f = write(&[r#"{"text":"ok","overall":6}"#]);
        let err = ingest(f.path(), &aspects()).unwrap_err();
        assert!(matches!(err, ManError::Validation(ref m) if m.contains("line 1")), "{err}");
    }
}
