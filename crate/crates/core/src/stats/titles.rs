use std::collections::BTreeMap;
use std::io::Read;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use super::{Result, StatsError};
use crate::ingest::UserProfileStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TitleEntry {
    pub title: String,
    /// Occupational class 1..=9, lower is higher status.
    pub class: u8,
    pub mean_salary_usd: f64,
    /// Literal text; a description containing any of them is not assigned this title.
    pub exclusion_patterns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TitleLexicon {
    pub entries: Vec<TitleEntry>,
}

impl TitleLexicon {
    pub fn new(entries: Vec<TitleEntry>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            validate_entry(e, i as u64 + 2)?;
        }
        Ok(TitleLexicon { entries })
    }

    /// Reads `title,class,mean_salary_usd,exclusion_patterns` with the
    /// patterns separated by semicolons.
    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::Fields).flexible(true).from_reader(r);
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |reason: &str| StatsError::InvalidLexicon {
                line,
                reason: reason.to_string(),
            };
            let title = rec.get(0).filter(|t| !t.is_empty()).ok_or_else(|| bad("empty title"))?;
            let class = rec
                .get(1)
                .and_then(|c| c.parse::<u8>().ok())
                .ok_or_else(|| bad("class must be an integer 1..9"))?;
            let mean_salary_usd = rec
                .get(2)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| bad("salary must be a number"))?;
            let exclusion_patterns = rec
                .get(3)
                .unwrap_or("")
                .split(';')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(String::from)
                .collect();
            let e = TitleEntry {
                title: title.to_string(),
                class,
                mean_salary_usd,
                exclusion_patterns,
            };
            validate_entry(&e, line)?;
            entries.push(e);
        }
        Ok(TitleLexicon { entries })
    }

    pub fn get(&self, title: &str) -> Option<&TitleEntry> {
        self.entries.iter().find(|e| e.title == title)
    }
}

fn validate_entry(e: &TitleEntry, line: u64) -> Result<()> {
    if !(1..=9).contains(&e.class) {
        return Err(StatsError::InvalidLexicon {
            line,
            reason: format!("class {} outside 1..9", e.class),
        });
    }
    if !(e.mean_salary_usd > 0.0 && e.mean_salary_usd.is_finite()) {
        return Err(StatsError::InvalidLexicon {
            line,
            reason: format!("salary {} must be positive", e.mean_salary_usd),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchOptions {
    /// Titles with fewer assigned users are dropped from the output.
    pub min_matches: usize,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions { min_matches: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TitleAssignment {
    /// `(user_id, title)` sorted by user id.
    pub assignment: Vec<(String, String)>,
    /// Users matching more than one title.
    pub ambiguous: usize,
    /// Title matches suppressed by an exclusion pattern.
    pub excluded: usize,
    /// Titles dropped for too few matches, with their counts.
    pub dropped_titles: BTreeMap<String, usize>,
    pub counts: BTreeMap<String, usize>,
}

struct Matcher {
    title: Regex,
    exclusions: Vec<Regex>,
}

fn literal(text: &str, whole_word: bool) -> Regex {
    let esc = regex::escape(text);
    let pat = if whole_word { format!(r"\b{esc}\b") } else { esc };
    RegexBuilder::new(&pat)
        .case_insensitive(true)
        .build()
        .expect("escaped literal is a valid regex")
}

/// Assigns each profile the single lexicon title found in its description
/// as a case-insensitive whole word.
pub fn match_job_titles(profiles: &UserProfileStore, lexicon: &TitleLexicon, opts: &MatchOptions) -> TitleAssignment {
    let matchers: Vec<Matcher> = lexicon
        .entries
        .iter()
        .map(|e| Matcher {
            title: literal(&e.title, true),
            exclusions: e.exclusion_patterns.iter().map(|p| literal(p, false)).collect(),
        })
        .collect();

    let mut out = TitleAssignment::default();
    let mut raw: Vec<(String, usize)> = Vec::new();
    for p in profiles.profiles() {
        let desc = &p.description;
        let mut hit = None;
        let mut n_hits = 0;
        for (t, m) in matchers.iter().enumerate() {
            if !m.title.is_match(desc) {
                continue;
            }
            if m.exclusions.iter().any(|x| x.is_match(desc)) {
                out.excluded += 1;
                continue;
            }
            n_hits += 1;
            hit = Some(t);
        }
        match (n_hits, hit) {
            (1, Some(t)) => raw.push((p.user_id.clone(), t)),
            (0, _) => {}
            _ => out.ambiguous += 1,
        }
    }

    let mut counts = vec![0usize; lexicon.entries.len()];
    for (_, t) in &raw {
        counts[*t] += 1;
    }
    for (t, e) in lexicon.entries.iter().enumerate() {
        if counts[t] < opts.min_matches {
            if counts[t] > 0 {
                out.dropped_titles.insert(e.title.clone(), counts[t]);
            }
        } else {
            out.counts.insert(e.title.clone(), counts[t]);
        }
    }
    out.assignment = raw
        .into_iter()
        .filter(|(_, t)| counts[*t] >= opts.min_matches)
        .map(|(u, t)| (u, lexicon.entries[t].title.clone()))
        .collect();
    out.assignment.sort();
    out
}
