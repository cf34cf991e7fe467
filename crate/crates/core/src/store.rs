//! Local persistence of users, API tokens and incident history.
//!
//! The data directory holds two append-only, line-delimited logs:
//!
//! - `users.log`: account creations and tombstones
//! - `incidents.log`: one record per stored incident
//!
//! Each starts with a `{"format": ...}` header line. The in-memory state is
//! rebuilt by replaying both logs on open. Tokens are issued once and only a
//! salted SHA-256 of each token is written.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rules::{Detail, RuleId};
use crate::temporal::{Incident, TimeRange};

pub const USERS_LOG: &str = "users.log";
pub const INCIDENTS_LOG: &str = "incidents.log";
const USERS_FORMAT: &str = "PW1-users";
const INCIDENTS_FORMAT: &str = "PW1-incidents";
pub const MIN_SECRET_LEN: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("secret must be at least {MIN_SECRET_LEN} characters")]
    WeakSecret,
    #[error("display name is empty")]
    EmptyName,
    #[error("display name {0:?} is already in use")]
    AlreadyInUse(String),
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("invalid or revoked token")]
    Unauthorized,
    #[error("incident overlaps an existing incident starting at {existing_start_ms}")]
    Overlap { existing_start_ms: i64 },
    #[error("invalid incident: {0}")]
    InvalidIncident(String),
    #[error("{file}:{line}: {detail}")]
    Corrupt {
        file: String,
        line: usize,
        detail: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub display_name: String,
    pub token_salt: String,
    pub token_hash: String,
    pub secret_salt: String,
    pub secret_hash: String,
    pub created_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidentLogRecord {
    pub user_id: String,
    pub start_ms: i64,
    pub end_ms: Option<i64>,
    pub rules: BTreeSet<RuleId>,
    pub peak_detail: Option<Detail>,
    pub ongoing: bool,
    pub written_ms: i64,
}

impl IncidentLogRecord {
    pub fn incident(&self) -> Incident {
        Incident {
            start_ms: self.start_ms,
            end_ms: self.end_ms,
            rules: self.rules.clone(),
            peak_detail: self.peak_detail,
        }
    }

    fn end_or_max(&self) -> i64 {
        self.end_ms.unwrap_or(i64::MAX)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum UserEntry {
    Create(UserRecord),
    Tombstone { user_id: String, ts_ms: i64 },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
}

/// A freshly created account. The token is not recoverable later.
#[derive(Debug, Clone)]
pub struct NewUser {
    pub user: UserRecord,
    pub token: String,
}

#[derive(Debug, Default)]
struct State {
    users: HashMap<String, UserRecord>,
    names: HashMap<String, String>,
    tombstoned: BTreeSet<String>,
    incidents: HashMap<String, Vec<IncidentLogRecord>>,
}

impl State {
    fn apply_user(&mut self, entry: UserEntry) {
        match entry {
            UserEntry::Create(u) => {
                self.names.insert(u.display_name.clone(), u.user_id.clone());
                self.incidents.entry(u.user_id.clone()).or_default();
                self.users.insert(u.user_id.clone(), u);
            }
            UserEntry::Tombstone { user_id, .. } => {
                if let Some(u) = self.users.remove(&user_id) {
                    self.names.remove(&u.display_name);
                }
                self.incidents.remove(&user_id);
                self.tombstoned.insert(user_id);
            }
        }
    }

    fn apply_incident(&mut self, rec: IncidentLogRecord) {
        if let Some(list) = self.incidents.get_mut(&rec.user_id) {
            let at = list.partition_point(|r| r.start_ms <= rec.start_ms);
            list.insert(at, rec);
        }
    }

    fn live_user(&self, user_id: &str) -> Result<&UserRecord, StoreError> {
        self.users
            .get(user_id)
            .ok_or_else(|| StoreError::UnknownUser(user_id.to_string()))
    }
}

struct Writers {
    users: File,
    incidents: File,
}

pub struct Store {
    dir: PathBuf,
    state: RwLock<State>,
    writers: Mutex<Writers>,
}

fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

fn salted_hash(salt_hex: &str, value: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt_hex.as_bytes());
    h.update(value.as_bytes());
    hex::encode(h.finalize())
}

fn random_hex<const N: usize>() -> String {
    hex::encode(rand::random::<[u8; N]>())
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn open_log(path: &Path, format: &str) -> Result<(File, Vec<(usize, String)>), StoreError> {
    let file_name = path.display().to_string();
    let mut lines = Vec::new();
    if path.exists() {
        let reader = BufReader::new(File::open(path)?);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if i == 0 {
                let header: Header = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                    file: file_name.clone(),
                    line: 1,
                    detail: format!("bad header: {e}"),
                })?;
                if header.format != format {
                    return Err(StoreError::Corrupt {
                        file: file_name,
                        line: 1,
                        detail: format!("expected format {format}, found {}", header.format),
                    });
                }
                continue;
            }
            if !line.trim().is_empty() {
                lines.push((i + 1, line));
            }
        }
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    if file.metadata()?.len() == 0 {
        let header = serde_json::to_string(&Header {
            format: format.to_string(),
        })
        .expect("header serializes");
        writeln!(file, "{header}")?;
        file.flush()?;
    }
    Ok((file, lines))
}

fn append_line<T: Serialize>(file: &mut File, value: &T) -> Result<(), StoreError> {
    let mut line = serde_json::to_string(value).expect("log records serialize");
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.flush()?;
    Ok(())
}

impl Store {
    /// Opens (or initializes) the store under `dir`, replaying both logs.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let (users_file, user_lines) = open_log(&dir.join(USERS_LOG), USERS_FORMAT)?;
        let (incidents_file, incident_lines) = open_log(&dir.join(INCIDENTS_LOG), INCIDENTS_FORMAT)?;

        let mut state = State::default();
        for (line_no, line) in user_lines {
            let entry: UserEntry = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                file: USERS_LOG.into(),
                line: line_no,
                detail: e.to_string(),
            })?;
            state.apply_user(entry);
        }
        for (line_no, line) in incident_lines {
            let rec: IncidentLogRecord = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                file: INCIDENTS_LOG.into(),
                line: line_no,
                detail: e.to_string(),
            })?;
            state.apply_incident(rec);
        }

        Ok(Self {
            dir,
            state: RwLock::new(state),
            writers: Mutex::new(Writers {
                users: users_file,
                incidents: incidents_file,
            }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn create_user(&self, display_name: &str, secret: &str) -> Result<NewUser, StoreError> {
        let display_name = display_name.trim();
        if display_name.is_empty() {
            return Err(StoreError::EmptyName);
        }
        if secret.chars().count() < MIN_SECRET_LEN {
            return Err(StoreError::WeakSecret);
        }
        let mut writers = self.writers.lock().expect("store writer lock poisoned");
        if self.state.read().expect("store lock poisoned").names.contains_key(display_name) {
            return Err(StoreError::AlreadyInUse(display_name.to_string()));
        }

        let user_id = random_hex::<8>();
        let token = format!("{user_id}.{}", random_hex::<32>());
        let token_salt = random_hex::<16>();
        let secret_salt = random_hex::<16>();
        let user = UserRecord {
            user_id,
            display_name: display_name.to_string(),
            token_hash: salted_hash(&token_salt, &token),
            token_salt,
            secret_hash: salted_hash(&secret_salt, secret),
            secret_salt,
            created_ms: now_ms(),
        };
        append_line(&mut writers.users, &UserEntry::Create(user.clone()))?;
        self.state
            .write()
            .expect("store lock poisoned")
            .apply_user(UserEntry::Create(user.clone()));
        Ok(NewUser { user, token })
    }

    /// Resolves a bearer token to its live user id.
    pub fn authenticate(&self, token: &str) -> Result<String, StoreError> {
        let (user_id, _) = token.split_once('.').ok_or(StoreError::Unauthorized)?;
        let state = self.state.read().expect("store lock poisoned");
        let user = state.users.get(user_id).ok_or(StoreError::Unauthorized)?;
        let presented = salted_hash(&user.token_salt, token);
        if constant_time_eq(presented.as_bytes(), user.token_hash.as_bytes()) {
            Ok(user.user_id.clone())
        } else {
            Err(StoreError::Unauthorized)
        }
    }

    pub fn user(&self, user_id: &str) -> Result<UserRecord, StoreError> {
        self.state
            .read()
            .expect("store lock poisoned")
            .live_user(user_id)
            .cloned()
    }

    /// Marks the account deleted. Its records stay in the logs until
    /// [`compact`](Self::compact) runs but are no longer served.
    pub fn delete_user(&self, user_id: &str) -> Result<(), StoreError> {
        let mut writers = self.writers.lock().expect("store writer lock poisoned");
        self.state.read().expect("store lock poisoned").live_user(user_id)?;
        let entry = UserEntry::Tombstone {
            user_id: user_id.to_string(),
            ts_ms: now_ms(),
        };
        append_line(&mut writers.users, &entry)?;
        self.state.write().expect("store lock poisoned").apply_user(entry);
        Ok(())
    }

    pub fn record_incident(&self, user_id: &str, incident: &Incident) -> Result<IncidentLogRecord, StoreError> {
        if let Some(end) = incident.end_ms {
            if end <= incident.start_ms {
                return Err(StoreError::InvalidIncident(format!(
                    "end {end} is not after start {}",
                    incident.start_ms
                )));
            }
        }
        if incident.rules.is_empty() {
            return Err(StoreError::InvalidIncident("no rules recorded".into()));
        }
        let rec = IncidentLogRecord {
            user_id: user_id.to_string(),
            start_ms: incident.start_ms,
            end_ms: incident.end_ms,
            rules: incident.rules.clone(),
            peak_detail: incident.peak_detail,
            ongoing: incident.end_ms.is_none(),
            written_ms: now_ms(),
        };

        let mut writers = self.writers.lock().expect("store writer lock poisoned");
        {
            let state = self.state.read().expect("store lock poisoned");
            state.live_user(user_id)?;
            let existing = &state.incidents[user_id];
            if let Some(other) = existing
                .iter()
                .find(|o| rec.start_ms < o.end_or_max() && o.start_ms < rec.end_or_max())
            {
                return Err(StoreError::Overlap {
                    existing_start_ms: other.start_ms,
                });
            }
        }
        append_line(&mut writers.incidents, &rec)?;
        self.state
            .write()
            .expect("store lock poisoned")
            .apply_incident(rec.clone());
        Ok(rec)
    }

    /// Incidents intersecting `range`, ordered by start.
    pub fn query_incidents(&self, user_id: &str, range: TimeRange) -> Result<Vec<IncidentLogRecord>, StoreError> {
        let state = self.state.read().expect("store lock poisoned");
        state.live_user(user_id)?;
        Ok(state.incidents[user_id]
            .iter()
            .filter(|r| range.intersects(r.start_ms, r.end_ms))
            .cloned()
            .collect())
    }

    /// Rewrites both logs keeping only live users and their incidents.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut writers = self.writers.lock().expect("store writer lock poisoned");
        let state = self.state.read().expect("store lock poisoned");

        let mut users: Vec<&UserRecord> = state.users.values().collect();
        users.sort_by(|a, b| (a.created_ms, &a.user_id).cmp(&(b.created_ms, &b.user_id)));
        let mut incidents: Vec<&IncidentLogRecord> = state.incidents.values().flatten().collect();
        incidents.sort_by(|a, b| (a.written_ms, &a.user_id, a.start_ms).cmp(&(b.written_ms, &b.user_id, b.start_ms)));

        let rewrite = |name: &str, format: &str, lines: Vec<String>| -> Result<File, StoreError> {
            let tmp = self.dir.join(format!("{name}.compact"));
            {
                let mut f = File::create(&tmp)?;
                let header = serde_json::to_string(&Header {
                    format: format.to_string(),
                })
                .expect("header serializes");
                writeln!(f, "{header}")?;
                for l in lines {
                    writeln!(f, "{l}")?;
                }
                f.sync_all()?;
            }
            fs::rename(&tmp, self.dir.join(name))?;
            Ok(OpenOptions::new().append(true).open(self.dir.join(name))?)
        };
        let user_lines = users
            .into_iter()
            .map(|u| serde_json::to_string(&UserEntry::Create(u.clone())).expect("serializes"))
            .collect();
        let incident_lines = incidents
            .into_iter()
            .map(|r| serde_json::to_string(r).expect("serializes"))
            .collect();
        writers.users = rewrite(USERS_LOG, USERS_FORMAT, user_lines)?;
        writers.incidents = rewrite(INCIDENTS_LOG, INCIDENTS_FORMAT, incident_lines)?;
        Ok(())
    }
}
