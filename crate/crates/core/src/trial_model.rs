//! Trial and corpus domain types, inclusion filtering and recency
//! classification.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Minimum enrollment a trial needs to be kept.
pub const MIN_ENROLLMENT: u32 = 50;
/// Look-back window for completed trials.
pub const COMPLETED_WINDOW_YEARS: i32 = 5;
/// Look-back window for new (not completed) trials.
pub const NEW_WINDOW_YEARS: i32 = 2;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("trial {trial_id}: {which} date required for recency classification is missing")]
    MissingDate { trial_id: String, which: &'static str },
    #[error("trial id must not be empty")]
    EmptyId,
    #[error("duplicate trial id {0} in corpus")]
    DuplicateId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Recruiting,
    Active,
    Completed,
    Withdrawn,
    Other,
}

impl TrialStatus {
    /// Maps a registry status string (e.g. `ACTIVE_NOT_RECRUITING`).
    /// Returns the status and whether the raw string had to be kept because
    /// it is not one of the canonical values.
    pub fn from_registry(raw: &str) -> (Self, bool) {
        let norm = raw.trim().to_ascii_uppercase().replace([' ', '-'], "_");
        match norm.as_str() {
            "RECRUITING" => (Self::Recruiting, false),
            "ACTIVE" => (Self::Active, false),
            "ACTIVE_NOT_RECRUITING" | "NOT_YET_RECRUITING" | "ENROLLING_BY_INVITATION" => (Self::Active, true),
            "COMPLETED" => (Self::Completed, false),
            "WITHDRAWN" => (Self::Withdrawn, false),
            _ => (Self::Other, true),
        }
    }
}

/// Medical field a trial is annotated with. Unknown names are kept in
/// [`MedicalField::Custom`] rather than being folded into `Other`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MedicalField {
    Somnology,
    Gynecology,
    Obstetrics,
    Cardiology,
    GeneralPhysiology,
    Endocrinology,
    Bariatrics,
    Psychiatry,
    Oncology,
    Gastroenterology,
    Pulmonology,
    ChronicPain,
    Nephrology,
    Other,
    Custom(String),
}

impl MedicalField {
    pub const BUILTIN: [MedicalField; 14] = [
        Self::Somnology,
        Self::Gynecology,
        Self::Obstetrics,
        Self::Cardiology,
        Self::GeneralPhysiology,
        Self::Endocrinology,
        Self::Bariatrics,
        Self::Psychiatry,
        Self::Oncology,
        Self::Gastroenterology,
        Self::Pulmonology,
        Self::ChronicPain,
        Self::Nephrology,
        Self::Other,
    ];

    /// Lowercase snake form, e.g. `general_physiology`.
    pub fn key(&self) -> &str {
        match self {
            Self::Somnology => "somnology",
            Self::Gynecology => "gynecology",
            Self::Obstetrics => "obstetrics",
            Self::Cardiology => "cardiology",
            Self::GeneralPhysiology => "general_physiology",
            Self::Endocrinology => "endocrinology",
            Self::Bariatrics => "bariatrics",
            Self::Psychiatry => "psychiatry",
            Self::Oncology => "oncology",
            Self::Gastroenterology => "gastroenterology",
            Self::Pulmonology => "pulmonology",
            Self::ChronicPain => "chronic_pain",
            Self::Nephrology => "nephrology",
            Self::Other => "other",
            Self::Custom(name) => name,
        }
    }

    /// Human-readable name used inside prompts, e.g. `general physiology`.
    pub fn display_name(&self) -> String {
        self.key().replace('_', " ")
    }

    fn normalize(name: &str) -> String {
        let mut out = String::with_capacity(name.len());
        for c in name.trim().chars() {
            if c.is_alphanumeric() {
                out.extend(c.to_lowercase());
            } else if !out.ends_with('_') && !out.is_empty() {
                out.push('_');
            }
        }
        out.trim_end_matches('_').to_string()
    }
}

impl FromStr for MedicalField {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = Self::normalize(s);
        let field = match key.as_str() {
            "chronic_pain_diseases" | "chronic_diseases" | "chronic_pain" => Self::ChronicPain,
            "sleep" => Self::Somnology,
            _ => Self::BUILTIN
                .iter()
                .find(|f| f.key() == key)
                .cloned()
                .unwrap_or(Self::Custom(key)),
        };
        Ok(field)
    }
}

impl fmt::Display for MedicalField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl Serialize for MedicalField {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.key())
    }
}

impl<'de> Deserialize<'de> for MedicalField {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(s.parse().unwrap_or_else(|e: std::convert::Infallible| match e {}))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecencyClass {
    CompletedWithin5y,
    NewWithin2y,
    OutOfWindow,
}

impl FromStr for RecencyClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "completed_within_5y" | "completed" => Ok(Self::CompletedWithin5y),
            "new_within_2y" | "new" => Ok(Self::NewWithin2y),
            "out_of_window" => Ok(Self::OutOfWindow),
            other => Err(format!("unknown recency class `{other}`")),
        }
    }
}

impl fmt::Display for RecencyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::CompletedWithin5y => "completed_within_5y",
            Self::NewWithin2y => "new_within_2y",
            Self::OutOfWindow => "out_of_window",
        })
    }
}

/// One registry record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub id: String,
    pub title: String,
    pub brief_summary: String,
    pub status: TrialStatus,
    /// Registry status string when it is not one of the canonical values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status_raw: Option<String>,
    pub enrollment: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditions: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub field_labels: Vec<MedicalField>,
}

impl Trial {
    /// Minimal constructor for tests and synthetic corpora.
    pub fn new(id: impl Into<String>, title: impl Into<String>, brief_summary: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            brief_summary: brief_summary.into(),
            status: TrialStatus::Completed,
            status_raw: None,
            enrollment: MIN_ENROLLMENT,
            start_date: None,
            completion_date: None,
            conditions: Vec::new(),
            field_labels: Vec::new(),
        }
    }

    pub fn summary_missing(&self) -> bool {
        self.brief_summary.trim().is_empty()
    }
}

/// Keeps trials that are not withdrawn, enrolled at least
/// [`MIN_ENROLLMENT`] participants and carry a description.
pub fn filter_trials(trials: &[Trial], _reference_date: NaiveDate) -> Vec<Trial> {
    trials.iter().filter(|t| passes_filter(t)).cloned().collect()
}

/// Which inclusion rule (if any) rejects a trial. Rules are checked in the
/// order withdrawn, enrollment, missing summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    Withdrawn,
    LowEnrollment,
    SummaryMissing,
}

pub fn exclusion_reason(trial: &Trial) -> Option<Exclusion> {
    if trial.status == TrialStatus::Withdrawn {
        Some(Exclusion::Withdrawn)
    } else if trial.enrollment < MIN_ENROLLMENT {
        Some(Exclusion::LowEnrollment)
    } else if trial.summary_missing() {
        Some(Exclusion::SummaryMissing)
    } else {
        None
    }
}

fn passes_filter(trial: &Trial) -> bool {
    exclusion_reason(trial).is_none()
}

/// Shifts a date back by whole calendar years; Feb 29 clamps to Feb 28.
pub fn years_before(date: NaiveDate, years: i32) -> NaiveDate {
    let year = date.year() - years;
    date.with_year(year)
        .or_else(|| NaiveDate::from_ymd_opt(year, date.month(), 28))
        .expect("Feb 28 exists in every year")
}

pub fn classify_recency(trial: &Trial, reference_date: NaiveDate) -> Result<RecencyClass, ModelError> {
    let in_window = |d: NaiveDate, years| d >= years_before(reference_date, years) && d <= reference_date;
    if trial.status == TrialStatus::Completed {
        let date = trial.completion_date.ok_or_else(|| ModelError::MissingDate {
            trial_id: trial.id.clone(),
            which: "completion",
        })?;
        Ok(if in_window(date, COMPLETED_WINDOW_YEARS) {
            RecencyClass::CompletedWithin5y
        } else {
            RecencyClass::OutOfWindow
        })
    } else {
        let date = trial.start_date.ok_or_else(|| ModelError::MissingDate {
            trial_id: trial.id.clone(),
            which: "start",
        })?;
        Ok(if in_window(date, NEW_WINDOW_YEARS) {
            RecencyClass::NewWithin2y
        } else {
            RecencyClass::OutOfWindow
        })
    }
}

/// A filtered, ordered set of trials for one (device, field, recency)
/// combination. The 1-based position of a trial is its global reference
/// index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub device: String,
    pub field: MedicalField,
    pub recency: RecencyClass,
    trials: Vec<Trial>,
}

impl Corpus {
    pub fn new(
        device: impl Into<String>,
        field: MedicalField,
        recency: RecencyClass,
        trials: Vec<Trial>,
    ) -> Result<Self, ModelError> {
        let mut seen = HashSet::with_capacity(trials.len());
        for t in &trials {
            if t.id.trim().is_empty() {
                return Err(ModelError::EmptyId);
            }
            if !seen.insert(t.id.as_str()) {
                return Err(ModelError::DuplicateId(t.id.clone()));
            }
        }
        Ok(Self {
            device: device.into(),
            field,
            recency,
            trials,
        })
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Trial at a 1-based global reference index.
    pub fn by_reference(&self, index: usize) -> Option<&Trial> {
        index.checked_sub(1).and_then(|i| self.trials.get(i))
    }
}
