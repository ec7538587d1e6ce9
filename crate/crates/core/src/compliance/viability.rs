//! Legal and ethical viability checklist, scored into a go/no-go verdict.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ComplianceError;

/// Checklist question number, 1 through 11.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct QuestionId(u8);

impl QuestionId {
    pub const COUNT: u8 = 11;

    pub fn new(n: u8) -> Option<Self> {
        (1..=Self::COUNT).contains(&n).then_some(QuestionId(n))
    }

    pub fn number(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = QuestionId> {
        (1..=Self::COUNT).map(QuestionId)
    }
}

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}", self.0)
    }
}

impl FromStr for QuestionId {
    type Err = ComplianceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        t.strip_prefix('Q')
            .or_else(|| t.strip_prefix('q'))
            .and_then(|n| n.parse::<u8>().ok())
            .and_then(QuestionId::new)
            .ok_or_else(|| ComplianceError::UnknownQuestion(t.to_string()))
    }
}

impl TryFrom<String> for QuestionId {
    type Error = ComplianceError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<QuestionId> for String {
    fn from(q: QuestionId) -> String {
        q.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
    Unknown,
}

impl FromStr for Answer {
    type Err = ComplianceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "yes" | "y" => Ok(Answer::Yes),
            "no" | "n" => Ok(Answer::No),
            "unknown" | "?" => Ok(Answer::Unknown),
            other => Err(ComplianceError::InvalidAnswer(other.to_string())),
        }
    }
}

/// Checklist entry: a short topic label and which definite answer is the
/// risk answer.
#[derive(Debug, Clone, Copy)]
pub struct Question {
    pub id: u8,
    pub topic: &'static str,
    pub risk_answer: Answer,
    /// Risk answer here is an enforceable prohibition.
    pub blocking: bool,
}

/// Fixed polarity table, in checklist order.
pub const CHECKLIST: [Question; 11] = [
    Question { id: 1, topic: "alternative data sources exist", risk_answer: Answer::Yes, blocking: false },
    Question { id: 2, topic: "terms of service prohibit scraping", risk_answer: Answer::Yes, blocking: true },
    Question { id: 3, topic: "copyright holder and license identified", risk_answer: Answer::No, blocking: false },
    Question { id: 4, topic: "potential material damage to the server", risk_answer: Answer::Yes, blocking: false },
    Question { id: 5, topic: "access blocked or cease-and-desist received", risk_answer: Answer::Yes, blocking: false },
    Question { id: 6, topic: "robots.txt restricts scraping", risk_answer: Answer::Yes, blocking: true },
    Question { id: 7, topic: "only a small fraction of the database", risk_answer: Answer::No, blocking: false },
    Question { id: 8, topic: "privacy or subject-rights risk", risk_answer: Answer::Yes, blocking: false },
    Question { id: 9, topic: "confidential organizational information", risk_answer: Answer::Yes, blocking: false },
    Question { id: 10, topic: "diminishes the value of the service", risk_answer: Answer::Yes, blocking: false },
    Question { id: 11, topic: "data quality may mislead decisions", risk_answer: Answer::Yes, blocking: false },
];

pub fn question(id: QuestionId) -> &'static Question {
    &CHECKLIST[(id.number() - 1) as usize]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViabilityAssessment {
    pub answers: BTreeMap<QuestionId, Answer>,
    pub notes: BTreeMap<QuestionId, String>,
}

impl ViabilityAssessment {
    /// Every question answered with its non-risk answer.
    pub fn benign() -> Self {
        let answers = CHECKLIST
            .iter()
            .map(|q| {
                let safe = match q.risk_answer {
                    Answer::Yes => Answer::No,
                    _ => Answer::Yes,
                };
                (QuestionId(q.id), safe)
            })
            .collect();
        ViabilityAssessment {
            answers,
            notes: BTreeMap::new(),
        }
    }

    pub fn with_answer(mut self, id: QuestionId, answer: Answer) -> Self {
        self.answers.insert(id, answer);
        self
    }

    /// Parse the answers file: one `Qn: yes|no|unknown` per line, optional
    /// `# note` after the answer, blank lines and full-line comments ignored.
    pub fn parse(text: &str) -> Result<Self, ComplianceError> {
        let mut a = ViabilityAssessment::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line
                .split_once(':')
                .ok_or_else(|| ComplianceError::Syntax { line: i + 1, text: line.to_string() })?;
            let id: QuestionId = key.parse()?;
            let (answer, note) = match rest.split_once('#') {
                Some((ans, note)) => (ans, Some(note.trim())),
                None => (rest, None),
            };
            if a.answers.insert(id, answer.parse()?).is_some() {
                return Err(ComplianceError::DuplicateQuestion(id));
            }
            if let Some(n) = note.filter(|n| !n.is_empty()) {
                a.notes.insert(id, n.to_string());
            }
        }
        Ok(a)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, ans) in &self.answers {
            let ans = match ans {
                Answer::Yes => "yes",
                Answer::No => "no",
                Answer::Unknown => "unknown",
            };
            out.push_str(&format!("{id}: {ans}"));
            if let Some(n) = self.notes.get(id) {
                out.push_str(&format!(" # {n}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictLevel {
    Proceed,
    Caution,
    Stop,
}

impl fmt::Display for VerdictLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictLevel::Proceed => "proceed",
            VerdictLevel::Caution => "caution",
            VerdictLevel::Stop => "stop",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceVerdict {
    pub level: VerdictLevel,
    pub triggered_questions: Vec<QuestionId>,
    pub robots_allows_target: bool,
}

impl ComplianceVerdict {
    /// Fold in the robots.txt decision for the target; a disallowed target
    /// always stops.
    pub fn with_robots(mut self, allowed: bool) -> Self {
        self.robots_allows_target = allowed;
        if !allowed {
            self.level = VerdictLevel::Stop;
        }
        self
    }

    pub fn render_text(&self) -> String {
        let mut out = format!("verdict: {}\n", self.level);
        out.push_str(&format!("robots.txt allows target: {}\n", self.robots_allows_target));
        if self.triggered_questions.is_empty() {
            out.push_str("warning signs: none\n");
        } else {
            out.push_str("warning signs:\n");
            for id in &self.triggered_questions {
                let q = question(*id);
                let tag = if q.blocking { " [blocking]" } else { "" };
                out.push_str(&format!("  {id}: {}{tag}\n", q.topic));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessmentPolicy {
    /// Count `unknown` as a warning sign. It never escalates to stop.
    pub unknown_is_risk: bool,
}

impl Default for AssessmentPolicy {
    fn default() -> Self {
        AssessmentPolicy { unknown_is_risk: true }
    }
}

pub fn assess_viability(a: &ViabilityAssessment) -> Result<ComplianceVerdict, ComplianceError> {
    assess_viability_with(a, &AssessmentPolicy::default())
}

pub fn assess_viability_with(
    a: &ViabilityAssessment,
    policy: &AssessmentPolicy,
) -> Result<ComplianceVerdict, ComplianceError> {
    let mut triggered = Vec::new();
    let mut stop = false;
    for id in QuestionId::all() {
        let answer = *a.answers.get(&id).ok_or(ComplianceError::MissingAnswer(id))?;
        let q = question(id);
        let risky = answer == q.risk_answer;
        if risky || (answer == Answer::Unknown && policy.unknown_is_risk) {
            triggered.push(id);
        }
        if risky && q.blocking {
            stop = true;
        }
    }
    let level = if stop {
        VerdictLevel::Stop
    } else if !triggered.is_empty() {
        VerdictLevel::Caution
    } else {
        VerdictLevel::Proceed
    };
    Ok(ComplianceVerdict {
        level,
        triggered_questions: triggered,
        robots_allows_target: true,
    })
}
