//! ClinicalTrials.gov v2 client and line-delimited JSON corpus store.
//!
//! Endpoint: `GET {base}/api/v2/studies?query.term=..&pageSize=..&pageToken=..`
//!
//! Field mapping from a study record:
//!   - id              = protocolSection.identificationModule.nctId (required)
//!   - title           = identificationModule.briefTitle (officialTitle fallback)
//!   - brief_summary   = descriptionModule.briefSummary
//!   - status          = statusModule.overallStatus
//!   - enrollment      = designModule.enrollmentInfo.count
//!   - start_date      = statusModule.startDateStruct.date
//!   - completion_date = statusModule.primaryCompletionDateStruct.date
//!   - conditions      = conditionsModule.conditions

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::retry::RetryPolicy;
use crate::trial_model::{Corpus, MedicalField, ModelError, RecencyClass, Trial, TrialStatus};

pub const DEFAULT_BASE_URL: &str = "https://clinicaltrials.gov";
pub const MAX_PAGE_SIZE: u32 = 1000;
/// Concurrent registry requests allowed per client.
pub const MAX_IN_FLIGHT: usize = 2;
pub const CORPUS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("network error: {0}")]
    Network(String),
    #[error("registry returned HTTP {status}: {body}")]
    Api { status: u16, body: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl IngestError {
    fn is_retryable(&self) -> bool {
        match self {
            IngestError::Network(_) => true,
            IngestError::Api { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub search_expression: String,
    pub page_size: u32,
    pub page_token: Option<String>,
}

impl Query {
    pub fn new(search_expression: impl Into<String>, page_size: u32) -> Result<Self, IngestError> {
        let q = Self {
            search_expression: search_expression.into(),
            page_size,
            page_token: None,
        };
        q.validate()?;
        Ok(q)
    }

    fn validate(&self) -> Result<(), IngestError> {
        if self.search_expression.trim().is_empty() {
            return Err(IngestError::InvalidQuery("search expression is empty".into()));
        }
        if !(1..=MAX_PAGE_SIZE).contains(&self.page_size) {
            return Err(IngestError::InvalidQuery(format!(
                "page size {} outside [1, {MAX_PAGE_SIZE}]",
                self.page_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyPage {
    pub trials: Vec<Trial>,
    pub next_page_token: Option<String>,
    pub total_count: Option<u64>,
}

/// Result of [`RegistryClient::fetch_all`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Fetched {
    pub trials: Vec<Trial>,
    pub warnings: Vec<String>,
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct InFlight {
    active: Mutex<usize>,
    released: Condvar,
    max: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|p| p.into_inner());
        while *active >= self.max {
            active = self.released.wait(active).unwrap_or_else(|p| p.into_inner());
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().unwrap_or_else(|p| p.into_inner());
        *active -= 1;
        self.0.released.notify_one();
    }
}

/// Blocking registry client. Cloning shares the in-flight limit.
#[derive(Clone)]
pub struct RegistryClient {
    agent: ureq::Agent,
    base_url: String,
    retry: RetryPolicy,
    in_flight: Arc<InFlight>,
}

impl RegistryClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build();
        Self {
            agent: config.into(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            retry: RetryPolicy::default(),
            in_flight: Arc::new(InFlight {
                active: Mutex::new(0),
                released: Condvar::new(),
                max: MAX_IN_FLIGHT,
            }),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn fetch_page(&self, query: &Query) -> Result<StudyPage, IngestError> {
        query.validate()?;
        let body = self
            .retry
            .run(|_| self.get_studies(query), IngestError::is_retryable, |_| None)?;
        let json: Value =
            serde_json::from_str(&body).map_err(|e| IngestError::Schema(format!("response is not JSON: {e}")))?;
        let mut page = parse_study_page(&json)?;
        if page.trials.len() > query.page_size as usize {
            log::warn!(
                "registry returned {} studies for page size {}; truncating",
                page.trials.len(),
                query.page_size
            );
            page.trials.truncate(query.page_size as usize);
        }
        Ok(page)
    }

    fn get_studies(&self, query: &Query) -> Result<String, IngestError> {
        let _permit = self.in_flight.acquire();
        let url = format!("{}/api/v2/studies", self.base_url);
        let mut req = self
            .agent
            .get(&url)
            .query("format", "json")
            .query("countTotal", "true")
            .query("query.term", &query.search_expression)
            .query("pageSize", query.page_size.to_string());
        if let Some(token) = &query.page_token {
            req = req.query("pageToken", token);
        }
        let mut resp = req.call().map_err(|e| IngestError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| IngestError::Network(e.to_string()))?;
        if (200..300).contains(&status) {
            Ok(body)
        } else {
            Err(IngestError::Api { status, body })
        }
    }

    /// Follows page tokens until exhausted or `max_records` trials are
    /// collected. Duplicate ids keep their first occurrence.
    pub fn fetch_all(&self, query: &Query, max_records: usize) -> Result<Fetched, IngestError> {
        if max_records == 0 {
            return Err(IngestError::InvalidQuery("max_records must be at least 1".into()));
        }
        let mut out = Fetched::default();
        let mut seen = HashSet::new();
        let mut q = query.clone();
        loop {
            let page = self.fetch_page(&q)?;
            for trial in page.trials {
                if out.trials.len() == max_records {
                    break;
                }
                if seen.insert(trial.id.clone()) {
                    out.trials.push(trial);
                } else {
                    let msg = format!("duplicate study {} dropped", trial.id);
                    log::warn!("{msg}");
                    out.warnings.push(msg);
                }
            }
            match page.next_page_token {
                Some(token) if out.trials.len() < max_records => q.page_token = Some(token),
                _ => break,
            }
        }
        Ok(out)
    }
}

/// Parses one registry response body into a page.
pub fn parse_study_page(json: &Value) -> Result<StudyPage, IngestError> {
    let studies = match json.get("studies") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(a)) => a.iter().map(map_study).collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(IngestError::Schema("`studies` is not an array".into())),
    };
    Ok(StudyPage {
        trials: studies,
        next_page_token: json
            .get("nextPageToken")
            .and_then(Value::as_str)
            .filter(|s| !s.is_empty())
            .map(String::from),
        total_count: json.get("totalCount").and_then(Value::as_u64),
    })
}

/// Maps one registry study object to a [`Trial`].
pub fn map_study(study: &Value) -> Result<Trial, IngestError> {
    let proto = &study["protocolSection"];
    let ident = &proto["identificationModule"];
    let status_mod = &proto["statusModule"];
    let text = |v: &Value| v.as_str().map(str::trim).filter(|s| !s.is_empty()).map(String::from);

    let id =
        text(&ident["nctId"]).ok_or_else(|| IngestError::Schema("study without identificationModule.nctId".into()))?;
    let title = text(&ident["briefTitle"])
        .or_else(|| text(&ident["officialTitle"]))
        .unwrap_or_default();
    let brief_summary = text(&proto["descriptionModule"]["briefSummary"]).unwrap_or_default();
    let (status, status_raw) = match text(&status_mod["overallStatus"]) {
        Some(raw) => {
            let (status, keep_raw) = TrialStatus::from_registry(&raw);
            (status, keep_raw.then_some(raw))
        }
        None => (TrialStatus::Other, None),
    };
    let enrollment = match proto["designModule"]["enrollmentInfo"]["count"].as_u64() {
        Some(n) => u32::try_from(n).unwrap_or(u32::MAX),
        None => {
            log::debug!("{id}: no enrollment count, recording 0");
            0
        }
    };
    let conditions = proto["conditionsModule"]["conditions"]
        .as_array()
        .map(|a| a.iter().filter_map(text).collect())
        .unwrap_or_default();

    Ok(Trial {
        start_date: parse_registry_date(&status_mod["startDateStruct"]["date"]),
        completion_date: parse_registry_date(&status_mod["primaryCompletionDateStruct"]["date"]),
        id,
        title,
        brief_summary,
        status,
        status_raw,
        enrollment,
        conditions,
        field_labels: Vec::new(),
    })
}

/// Registry dates are `YYYY-MM-DD` or month precision `YYYY-MM`; the latter
/// maps to the first of the month.
fn parse_registry_date(v: &Value) -> Option<NaiveDate> {
    let s = v.as_str()?.trim();
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .or_else(|| NaiveDate::parse_from_str(&format!("{s}-01"), "%Y-%m-%d").ok())
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusHeader {
    kind: String,
    schema_version: u32,
    device: String,
    field: MedicalField,
    recency: RecencyClass,
    trial_count: usize,
}

const HEADER_KIND: &str = "corpus_header";

/// Writes the corpus as one header line followed by one trial per line.
/// The file is replaced atomically.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        let header = CorpusHeader {
            kind: HEADER_KIND.into(),
            schema_version: CORPUS_SCHEMA_VERSION,
            device: corpus.device.clone(),
            field: corpus.field.clone(),
            recency: corpus.recency,
            trial_count: corpus.len(),
        };
        serde_json::to_writer(&mut w, &header).map_err(io::Error::other)?;
        w.write_all(b"\n")?;
        for t in corpus.trials() {
            serde_json::to_writer(&mut w, t).map_err(io::Error::other)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, IngestError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header: CorpusHeader = loop {
        match lines.next() {
            None => {
                return Err(IngestError::Parse {
                    line: 1,
                    message: "missing corpus header".into(),
                })
            }
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let h: CorpusHeader = serde_json::from_str(&line).map_err(|e| IngestError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                if h.kind != HEADER_KIND {
                    return Err(IngestError::Parse {
                        line: i + 1,
                        message: format!("unexpected record kind `{}`", h.kind),
                    });
                }
                if h.schema_version > CORPUS_SCHEMA_VERSION {
                    return Err(IngestError::Parse {
                        line: i + 1,
                        message: format!("unsupported schema version {}", h.schema_version),
                    });
                }
                break h;
            }
        }
    };
    let mut trials = Vec::with_capacity(header.trial_count);
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Trial = serde_json::from_str(&line).map_err(|e| IngestError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        trials.push(t);
    }
    Ok(Corpus::new(header.device, header.field, header.recency, trials)?)
}
