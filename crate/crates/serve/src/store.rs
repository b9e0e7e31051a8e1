use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use upvtag::model::Model;
use upvtag::util::fnv1a;
use upvtag::LabelId;

use crate::error::ServeError;
use crate::session::{Action, Decision, DocumentSession};

type Shared = Arc<Mutex<DocumentSession>>;

/// Sessions in memory, backed by one text file and one JSON-lines decision
/// log per document under `dir`. Documents are keyed by a hash of their
/// text, so resubmitting a text reopens its session.
pub struct DocumentStore {
    dir: PathBuf,
    model: Arc<Model>,
    sessions: Mutex<HashMap<String, Shared>>,
}

fn valid_id(id: &str) -> bool {
    id.len() == 16 && id.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

impl DocumentStore {
    pub fn open(dir: impl Into<PathBuf>, model: Arc<Model>) -> Result<DocumentStore, ServeError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(DocumentStore {
            dir,
            model,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn model(&self) -> &Arc<Model> {
        &self.model
    }

    fn text_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.txt"))
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.decisions.jsonl"))
    }

    fn cached(&self, id: &str) -> Option<Shared> {
        self.sessions.lock().expect("session map").get(id).cloned()
    }

    fn insert(&self, s: DocumentSession) -> Shared {
        let mut map = self.sessions.lock().expect("session map");
        map.entry(s.id.clone()).or_insert_with(|| Arc::new(Mutex::new(s))).clone()
    }

    /// Opens the session for `text`, scoring it when it is new.
    pub fn create(&self, text: &str) -> Result<Shared, ServeError> {
        let mut salt = 0u64;
        let id = loop {
            let id = format!("{:016x}", fnv1a(text.as_bytes()) ^ salt);
            match fs::read_to_string(self.text_path(&id)) {
                Ok(stored) if stored != text => salt += 1,
                _ => break id,
            }
        };
        if let Some(s) = self.cached(&id) {
            return Ok(s);
        }
        if self.text_path(&id).exists() {
            return self.get(&id);
        }
        let session = DocumentSession::predict(&self.model, id.clone(), text)?;
        fs::write(self.text_path(&id), text)?;
        Ok(self.insert(session))
    }

    /// The session `id`, rebuilt from disk by re-scoring and log replay when
    /// it is not in memory.
    pub fn get(&self, id: &str) -> Result<Shared, ServeError> {
        if !valid_id(id) {
            return Err(ServeError::NotFound(id.to_string()));
        }
        if let Some(s) = self.cached(id) {
            return Ok(s);
        }
        let text = match fs::read_to_string(self.text_path(id)) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(ServeError::NotFound(id.to_string())),
            Err(e) => return Err(e.into()),
        };
        let mut session = DocumentSession::predict(&self.model, id, &text)?;
        session.replay(&read_log(&self.log_path(id))?)?;
        Ok(self.insert(session))
    }

    /// Records a decision in memory and appends it to the document's log.
    pub fn decide(&self, id: &str, idx: usize, label: LabelId, action: Action) -> Result<(Decision, Vec<LabelId>), ServeError> {
        let shared = self.get(id)?;
        let mut s = shared.lock().expect("session");
        let d = s.apply(idx, label, action)?;
        if let Err(e) = append(&self.log_path(id), &d) {
            s.undo_last();
            return Err(e);
        }
        let labels = s.final_labels(idx).into_iter().collect();
        Ok((d, labels))
    }
}

fn append(path: &Path, d: &Decision) -> Result<(), ServeError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(d)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.sync_data()?;
    Ok(())
}

/// Decisions from a log file; a missing file is an empty log.
pub fn read_log(path: &Path) -> Result<Vec<Decision>, ServeError> {
    let f = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
