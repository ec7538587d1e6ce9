//! robots.txt parsing and longest-match access decisions (RFC 9309).

use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Allow,
    Disallow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub kind: RuleKind,
    pub pattern: String,
}

impl Rule {
    pub fn allow(pattern: impl Into<String>) -> Self {
        Rule {
            kind: RuleKind::Allow,
            pattern: pattern.into(),
        }
    }

    pub fn disallow(pattern: impl Into<String>) -> Self {
        Rule {
            kind: RuleKind::Disallow,
            pattern: pattern.into(),
        }
    }

    /// Whether this rule's pattern matches `path`.
    pub fn matches(&self, path: &str) -> bool {
        pattern_matches(&self.pattern, path)
    }

    /// Match priority: number of octets in the pattern.
    pub fn specificity(&self) -> usize {
        self.pattern.len()
    }
}

/// One record of the file: a set of user-agent lines followed by rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub agents: Vec<String>,
    pub rules: Vec<Rule>,
    pub crawl_delay_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotsPolicy {
    pub host: String,
    pub groups: Vec<Group>,
    /// Largest crawl delay declared by any group.
    pub crawl_delay_s: Option<f64>,
    pub fetched_at: DateTime<Utc>,
    /// Lines that could not be interpreted.
    pub skipped_lines: usize,
    pub warnings: Vec<String>,
}

/// Parse a robots.txt body. Never fails: anything unparseable is skipped and
/// counted, an empty body yields a permissive policy.
pub fn parse_robots(text: &str, host: &str) -> RobotsPolicy {
    RobotsPolicy::parse(text, host, Utc::now())
}

impl RobotsPolicy {
    /// Policy with no groups: every path is allowed.
    pub fn permissive(host: &str) -> Self {
        RobotsPolicy {
            host: host.to_string(),
            groups: Vec::new(),
            crawl_delay_s: None,
            fetched_at: Utc::now(),
            skipped_lines: 0,
            warnings: Vec::new(),
        }
    }

    pub fn parse(text: &str, host: &str, fetched_at: DateTime<Utc>) -> Self {
        let mut groups: Vec<Group> = Vec::new();
        let mut skipped = 0usize;
        let mut warnings = Vec::new();
        // true while consecutive user-agent lines are still being collected
        let mut collecting_agents = false;

        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once(':') else {
                skipped += 1;
                warnings.push(format!("line {}: missing ':' separator", lineno + 1));
                continue;
            };
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim();

            match key.as_str() {
                "user-agent" => {
                    if value.is_empty() {
                        skipped += 1;
                        warnings.push(format!("line {}: empty user-agent", lineno + 1));
                        continue;
                    }
                    if collecting_agents {
                        if let Some(g) = groups.last_mut() {
                            g.agents.push(value.to_string());
                        }
                    } else {
                        groups.push(Group {
                            agents: vec![value.to_string()],
                            rules: Vec::new(),
                            crawl_delay_s: None,
                        });
                        collecting_agents = true;
                    }
                }
                "allow" | "disallow" => {
                    collecting_agents = false;
                    let Some(group) = groups.last_mut() else {
                        skipped += 1;
                        warnings.push(format!("line {}: rule outside of a group", lineno + 1));
                        continue;
                    };
                    // An empty value carries no rule.
                    if value.is_empty() {
                        continue;
                    }
                    if !is_valid_pattern(value) {
                        skipped += 1;
                        warnings.push(format!("line {}: invalid path pattern {value:?}", lineno + 1));
                        continue;
                    }
                    let kind = if key == "allow" {
                        RuleKind::Allow
                    } else {
                        RuleKind::Disallow
                    };
                    group.rules.push(Rule {
                        kind,
                        pattern: value.to_string(),
                    });
                }
                "crawl-delay" => {
                    collecting_agents = false;
                    let Some(group) = groups.last_mut() else {
                        skipped += 1;
                        warnings.push(format!("line {}: crawl-delay outside of a group", lineno + 1));
                        continue;
                    };
                    match value.parse::<f64>() {
                        Ok(d) if d.is_finite() && d >= 0.0 => group.crawl_delay_s = Some(d),
                        _ => {
                            skipped += 1;
                            warnings.push(format!("line {}: invalid crawl-delay {value:?}", lineno + 1));
                        }
                    }
                }
                // recognized, not used
                "sitemap" | "host" | "request-rate" => {}
                _ => {
                    skipped += 1;
                    warnings.push(format!("line {}: unknown directive {key:?}", lineno + 1));
                }
            }
        }

        let crawl_delay_s = groups
            .iter()
            .filter_map(|g| g.crawl_delay_s)
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));

        RobotsPolicy {
            host: host.to_string(),
            groups,
            crawl_delay_s,
            fetched_at,
            skipped_lines: skipped,
            warnings,
        }
    }

    /// Groups that apply to `agent`: those naming its product token, or
    /// the `*` groups when none does.
    pub fn groups_for<'a>(&'a self, agent: &str) -> Vec<&'a Group> {
        let token = product_token(agent);
        let specific: Vec<&Group> = self
            .groups
            .iter()
            .filter(|g| g.agents.iter().any(|a| a.eq_ignore_ascii_case(&token)))
            .collect();
        if !specific.is_empty() {
            return specific;
        }
        self.groups
            .iter()
            .filter(|g| g.agents.iter().any(|a| a == "*"))
            .collect()
    }

    /// Crawl delay applying to `agent`, if any group declares one.
    pub fn crawl_delay_for(&self, agent: &str) -> Option<f64> {
        self.groups_for(agent)
            .iter()
            .filter_map(|g| g.crawl_delay_s)
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))))
    }

    /// The rule deciding `url_path` for `agent`, if any rule matches.
    pub fn decisive_rule<'a>(&'a self, url_path: &str, agent: &str) -> Option<&'a Rule> {
        let mut best: Option<&Rule> = None;
        for group in self.groups_for(agent) {
            for rule in group.rules.iter().filter(|r| r.matches(url_path)) {
                best = match best {
                    None => Some(rule),
                    Some(b) => {
                        let better = rule.specificity() > b.specificity()
                            || (rule.specificity() == b.specificity()
                                && rule.kind == RuleKind::Allow
                                && b.kind == RuleKind::Disallow);
                        Some(if better { rule } else { b })
                    }
                };
            }
        }
        best
    }

    /// Render back to robots.txt text. Parsing the output yields the same
    /// groups, rules and delays.
    pub fn to_robots_txt(&self) -> String {
        let mut out = String::new();
        for (i, g) in self.groups.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            for a in &g.agents {
                let _ = writeln!(out, "User-agent: {a}");
            }
            if let Some(d) = g.crawl_delay_s {
                let _ = writeln!(out, "Crawl-delay: {d}");
            }
            for r in &g.rules {
                let key = match r.kind {
                    RuleKind::Allow => "Allow",
                    RuleKind::Disallow => "Disallow",
                };
                let _ = writeln!(out, "{key}: {}", r.pattern);
            }
        }
        out
    }
}

/// Longest-match decision; no matching rule means allowed.
pub fn is_allowed(policy: &RobotsPolicy, url_path: &str, agent: &str) -> bool {
    if url_path == "/robots.txt" {
        return true;
    }
    policy
        .decisive_rule(url_path, agent)
        .is_none_or(|r| r.kind == RuleKind::Allow)
}

/// First token of a User-Agent header, e.g. `geoharvest` for
/// `geoharvest/0.1 (+mailto:x)`.
pub fn product_token(agent: &str) -> String {
    agent
        .split(|c: char| c == '/' || c.is_whitespace())
        .next()
        .unwrap_or("")
        .to_string()
}

fn is_valid_pattern(p: &str) -> bool {
    p.starts_with('/') || p.starts_with('*')
}

/// `*` matches any sequence, a trailing `$` anchors at the end; otherwise
/// the pattern is a prefix match.
pub(crate) fn pattern_matches(pattern: &str, path: &str) -> bool {
    let (pat, anchored) = match pattern.strip_suffix('$') {
        Some(p) => (p.as_bytes(), true),
        None => (pattern.as_bytes(), false),
    };
    let s = path.as_bytes();

    let (mut pi, mut si) = (0usize, 0usize);
    let mut star: Option<(usize, usize)> = None;
    while si < s.len() {
        if pi == pat.len() && !anchored {
            return true;
        }
        if pi < pat.len() && pat[pi] == b'*' {
            star = Some((pi, si));
            pi += 1;
        } else if pi < pat.len() && pat[pi] == s[si] {
            pi += 1;
            si += 1;
        } else if let Some((sp, ss)) = star {
            pi = sp + 1;
            si = ss + 1;
            star = Some((sp, ss + 1));
        } else {
            return false;
        }
    }
    pat[pi..].iter().all(|&c| c == b'*')
}
