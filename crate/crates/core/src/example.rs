use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Qa,
    Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictLabel {
    Entailed,
    Refuted,
    Nei,
}

impl VerdictLabel {
    pub fn name(self) -> &'static str {
        match self {
            VerdictLabel::Entailed => "entailed",
            VerdictLabel::Refuted => "refuted",
            VerdictLabel::Nei => "nei",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ExampleError {
    #[error("example id is empty")]
    EmptyId,
    #[error("qa example {0} has no gold answers")]
    NoGoldAnswers(String),
    #[error("verdict example {0} has no label")]
    NoLabel(String),
}

/// One task instance: a question or statement over a table with its gold
/// answers (qa) or label (verdict).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub task: Task,
    pub question: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<VerdictLabel>,
    pub table_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sql: Option<String>,
}

impl Example {
    pub fn qa(id: &str, question: &str, gold: &[&str], table_id: &str) -> Self {
        Example {
            id: id.to_owned(),
            task: Task::Qa,
            question: question.to_owned(),
            gold_answers: gold.iter().map(|s| s.to_string()).collect(),
            label: None,
            table_id: table_id.to_owned(),
            gold_sql: None,
        }
    }

    pub fn verdict(id: &str, statement: &str, label: VerdictLabel, table_id: &str) -> Self {
        Example {
            id: id.to_owned(),
            task: Task::Verdict,
            question: statement.to_owned(),
            gold_answers: Vec::new(),
            label: Some(label),
            table_id: table_id.to_owned(),
            gold_sql: None,
        }
    }

    pub fn validate(&self) -> Result<(), ExampleError> {
        if self.id.is_empty() {
            return Err(ExampleError::EmptyId);
        }
        match self.task {
            Task::Qa if self.gold_answers.is_empty() => {
                Err(ExampleError::NoGoldAnswers(self.id.clone()))
            }
            Task::Verdict if self.label.is_none() => Err(ExampleError::NoLabel(self.id.clone())),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_round_trip() {
        let line = r#"{"id":"e1","task":"qa","question":"q?","gold_answers":["7"],"table_id":"t1","gold_sql":"SELECT c1 FROM w"}"#;
        let ex: Example = serde_json::from_str(line).unwrap();
        assert_eq!(ex.gold_sql.as_deref(), Some("SELECT c1 FROM w"));
        assert_eq!(serde_json::to_string(&ex).unwrap(), line);
        assert!(ex.validate().is_ok());
    }

    #[test]
    fn invariants() {
        let mut ex = Example::qa("e", "q", &[], "t");
        assert_eq!(ex.validate(), Err(ExampleError::NoGoldAnswers("e".into())));
        ex.task = Task::Verdict;
        assert_eq!(ex.validate(), Err(ExampleError::NoLabel("e".into())));
        ex.label = Some(VerdictLabel::Nei);
        assert!(ex.validate().is_ok());
    }
}
