//! Append-only session store: one JSON object per line in a single file.
//!
//! Each line is either a session creation or a generation. A torn final
//! line (a crash mid-append) is ignored on load.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// One generation as persisted, inputs included so it can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub session_id: String,
    pub generation_id: String,
    /// Milliseconds since the Unix epoch.
    pub created: u64,
    /// SHA-256 of the input photo, map and attributes.
    pub inputs_hash: String,
    pub caption: String,
    pub seed: u64,
    pub attributes: redress_core::types::Attributes,
    pub input_image: String,
    pub input_segmap: String,
    pub shape_map: String,
    pub image: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Entry {
    Session { session_id: String, created: u64 },
    Generation(Box<Generation>),
}

#[derive(Default)]
struct Index {
    sessions: HashMap<String, Vec<String>>,
    generations: HashMap<String, Generation>,
}

impl Index {
    fn apply(&mut self, e: Entry) {
        match e {
            Entry::Session { session_id, .. } => {
                self.sessions.entry(session_id).or_default();
            }
            Entry::Generation(g) => {
                self.sessions.entry(g.session_id.clone()).or_default().push(g.generation_id.clone());
                self.generations.insert(g.generation_id.clone(), *g);
            }
        }
    }
}

pub struct SessionStore {
    path: PathBuf,
    inner: Mutex<(File, Index)>,
}

impl SessionStore {
    /// Opens (or creates) the store file and replays it.
    pub fn open(path: &Path) -> anyhow::Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut index = Index::default();
        let text = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut valid = 0;
        for line in text.split_inclusive(|&b| b == b'\n') {
            if !line.ends_with(b"\n") {
                log::warn!("ignoring torn final record in {}", path.display());
                break;
            }
            index.apply(serde_json::from_slice(line)?);
            valid += line.len();
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        if valid < text.len() {
            file.set_len(valid as u64)?;
        }
        Ok(SessionStore {
            path: path.to_owned(),
            inner: Mutex::new((file, index)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn append(&self, e: Entry) -> anyhow::Result<()> {
        let mut line = serde_json::to_vec(&e)?;
        line.push(b'\n');
        let mut guard = self.inner.lock().expect("store lock");
        // one write per record, durable before it becomes visible
        guard.0.write_all(&line)?;
        guard.0.sync_data()?;
        guard.1.apply(e);
        Ok(())
    }

    pub fn create_session(&self, session_id: &str, created: u64) -> anyhow::Result<()> {
        self.append(Entry::Session {
            session_id: session_id.to_owned(),
            created,
        })
    }

    pub fn has_session(&self, session_id: &str) -> bool {
        self.inner.lock().expect("store lock").1.sessions.contains_key(session_id)
    }

    pub fn add(&self, g: Generation) -> anyhow::Result<()> {
        self.append(Entry::Generation(Box::new(g)))
    }

    pub fn get(&self, generation_id: &str) -> Option<Generation> {
        self.inner.lock().expect("store lock").1.generations.get(generation_id).cloned()
    }

    /// Generations of a session in creation order; `None` if unknown.
    pub fn history(&self, session_id: &str) -> Option<Vec<Generation>> {
        let guard = self.inner.lock().expect("store lock");
        let ids = guard.1.sessions.get(session_id)?;
        let mut out: Vec<Generation> = ids.iter().map(|id| guard.1.generations[id].clone()).collect();
        out.sort_by(|a, b| (a.created, &a.generation_id).cmp(&(b.created, &b.generation_id)));
        Some(out)
    }
}
