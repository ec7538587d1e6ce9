//! Toponym dictionary and dictionary-based geoparsing.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{GeoError, GeoPoint, PointQuality};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToponymKind {
    City,
    District,
    Street,
    /// A full postal address, house-number precision.
    Address,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazetteerEntry {
    pub toponym: String,
    pub kind: ToponymKind,
    pub point: GeoPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToponymMatch {
    pub toponym: String,
    pub kind: ToponymKind,
    pub point: GeoPoint,
    /// Byte range into the input text.
    pub span: Range<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
    by_name: HashMap<String, Vec<usize>>,
    by_tokens: HashMap<Vec<String>, usize>,
    max_tokens: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    toponym: String,
    kind: ToponymKind,
    lat: f64,
    lon: f64,
}

impl Gazetteer {
    pub fn new(entries: Vec<GazetteerEntry>) -> Result<Self, GeoError> {
        let mut g = Gazetteer::default();
        for e in entries {
            g.insert(e)?;
        }
        Ok(g)
    }

    pub fn insert(&mut self, entry: GazetteerEntry) -> Result<(), GeoError> {
        let key = normalize_name(&entry.toponym);
        if key.is_empty() {
            return Err(GeoError::EmptyToponym);
        }
        let idx = self.entries.len();
        let bucket = self.by_name.entry(key).or_default();
        if bucket.iter().any(|&i| self.entries[i].kind == entry.kind) {
            return Err(GeoError::DuplicateToponym(entry.toponym.clone()));
        }
        bucket.push(idx);
        let toks: Vec<String> = tokenize(&entry.toponym).into_iter().map(|(t, _)| t).collect();
        if !toks.is_empty() {
            self.max_tokens = self.max_tokens.max(toks.len());
            self.by_tokens.entry(toks).or_insert(idx);
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[GazetteerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Case-insensitive exact lookup, in insertion order.
    pub fn lookup(&self, name: &str) -> Vec<&GazetteerEntry> {
        self.by_name
            .get(&normalize_name(name))
            .map(|ix| ix.iter().map(|&i| &self.entries[i]).collect())
            .unwrap_or_default()
    }

    pub fn lookup_kind(&self, name: &str, kind: ToponymKind) -> Option<&GazetteerEntry> {
        self.lookup(name).into_iter().find(|e| e.kind == kind)
    }

    /// CSV with header `toponym,kind,lat,lon`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, GeoError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut entries = Vec::new();
        for row in rdr.deserialize::<CsvRow>() {
            let row = row?;
            let point = GeoPoint::new(row.lat, row.lon, PointQuality::Geocoded)?;
            entries.push(GazetteerEntry {
                toponym: row.toponym,
                kind: row.kind,
                point,
            });
        }
        Gazetteer::new(entries)
    }

    pub fn to_csv<W: Write>(&self, writer: W) -> Result<(), GeoError> {
        let mut w = csv::Writer::from_writer(writer);
        for e in &self.entries {
            w.serialize(CsvRow {
                toponym: e.toponym.clone(),
                kind: e.kind,
                lat: e.point.lat,
                lon: e.point.lon,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

fn normalize_name(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Lowercased word tokens with their byte ranges. Words are runs of
/// alphanumerics, possibly joined by hyphens or apostrophes.
fn tokenize(text: &str) -> Vec<(String, Range<usize>)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let joiner = (c == '-' || c == '\'')
            && start.is_some()
            && chars.peek().is_some_and(|(_, n)| n.is_alphanumeric());
        if c.is_alphanumeric() || joiner {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            out.push((text[s..i].to_lowercase(), s..i));
        }
    }
    if let Some(s) = start {
        out.push((text[s..].to_lowercase(), s..text.len()));
    }
    out
}

/// Leftmost-longest, non-overlapping, case-insensitive toponym matches.
pub fn geoparse(text: &str, gaz: &Gazetteer) -> Vec<ToponymMatch> {
    let toks = tokenize(text);
    let words: Vec<String> = toks.iter().map(|(t, _)| t.clone()).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let longest = gaz.max_tokens.min(toks.len() - i);
        let hit = (1..=longest)
            .rev()
            .find_map(|len| gaz.by_tokens.get(&words[i..i + len]).map(|&idx| (len, idx)));
        match hit {
            Some((len, idx)) => {
                let e = &gaz.entries[idx];
                out.push(ToponymMatch {
                    toponym: e.toponym.clone(),
                    kind: e.kind,
                    point: e.point,
                    span: toks[i].1.start..toks[i + len - 1].1.end,
                });
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(name: &str, kind: ToponymKind, lat: f64, lon: f64) -> GazetteerEntry {
        GazetteerEntry {
            toponym: name.into(),
            kind,
            point: GeoPoint::new(lat, lon, PointQuality::Geocoded).unwrap(),
        }
    }

    fn sample() -> Gazetteer {
        Gazetteer::new(vec![
            entry("Leipzig", ToponymKind::City, 51.34, 12.37),
            entry("Gohlis", ToponymKind::District, 51.36, 12.37),
            entry("Leipzig Gohlis", ToponymKind::District, 51.361, 12.371),
            entry("Rosental", ToponymKind::District, 51.35, 12.36),
            entry("Karl-Heine-Straße", ToponymKind::Street, 51.33, 12.33),
        ])
        .unwrap()
    }

    #[test]
    fn finds_two_toponyms_with_spans() {
        let text = "nice flat in Gohlis near Rosental";
        let m = geoparse(text, &sample());
        assert_eq!(m.len(), 2);
        assert_eq!(&text[m[0].span.clone()], "Gohlis");
        assert_eq!(&text[m[1].span.clone()], "Rosental");
        assert_eq!(m[0].kind, ToponymKind::District);
    }

    #[test]
    fn empty_gazetteer_matches_nothing() {
        assert!(geoparse("Leipzig Gohlis", &Gazetteer::default()).is_empty());
    }

    #[test]
    fn longest_match_wins() {
        let text = "Wohnung in leipzig  GOHLIS, ruhig";
        let m = geoparse(text, &sample());
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].toponym, "Leipzig Gohlis");
        assert_eq!(&text[m[0].span.clone()], "leipzig  GOHLIS");
    }

    #[test]
    fn hyphenated_names_and_unicode() {
        let text = "Altbau an der Karl-Heine-Straße.";
        let m = geoparse(text, &sample());
        assert_eq!(m.len(), 1);
        assert_eq!(&text[m[0].span.clone()], "Karl-Heine-Straße");
    }

    #[test]
    fn duplicate_pairs_rejected() {
        let err = Gazetteer::new(vec![
            entry("Gohlis", ToponymKind::District, 1.0, 1.0),
            entry("gohlis", ToponymKind::District, 2.0, 2.0),
        ]);
        assert!(matches!(err, Err(GeoError::DuplicateToponym(_))));
        assert!(Gazetteer::new(vec![entry("  ", ToponymKind::City, 1.0, 1.0)]).is_err());
        // same name, different kind is fine
        assert!(Gazetteer::new(vec![
            entry("Gohlis", ToponymKind::District, 1.0, 1.0),
            entry("Gohlis", ToponymKind::Street, 2.0, 2.0),
        ])
        .is_ok());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let g = sample();
        let mut buf = Vec::new();
        g.to_csv(&mut buf).unwrap();
        let back = Gazetteer::from_csv(buf.as_slice()).unwrap();
        assert_eq!(back.entries(), g.entries());
        assert_eq!(back.lookup("leipzig").len(), 1);
    }

    proptest! {
        #[test]
        fn spans_sorted_and_disjoint(words in proptest::collection::vec(
            prop_oneof!["Leipzig", "Gohlis", "Rosental", "flat", "near", "in", "Karl-Heine-Straße"], 0..20)) {
            let text = words.join(" ");
            let m = geoparse(&text, &sample());
            for w in m.windows(2) {
                prop_assert!(w[0].span.end <= w[1].span.start);
            }
            for x in &m {
                prop_assert!(text.is_char_boundary(x.span.start) && text.is_char_boundary(x.span.end));
            }
        }
    }
}
