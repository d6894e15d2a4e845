use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::records::{PipelineRun, RunManifest, StepRecord};
use super::{PipelineError, StepId};
use crate::llm::{append_transcript, read_transcript, ChatExchange};
use crate::pddl::{parse_domain, parse_problem, Plan};

pub const MANIFEST: &str = "manifest.json";
pub const DOMAIN_FILE: &str = "domain.pddl";
pub const PROBLEM_FILE: &str = "problem.pddl";
pub const PLAN_FILE: &str = "plan.txt";
pub const NO_PLAN_FILE: &str = "NO_PLAN";
pub const USAGE_FILE: &str = "usage.json";
pub const TRANSCRIPTS: &str = "transcripts";

/// Run directories under one root, one directory per run id.
#[derive(Clone, Debug)]
pub struct RunStore {
    root: PathBuf,
}

fn step_file(step: StepId) -> String {
    format!("step_{}.json", step.number())
}

fn transcript_file(step: StepId) -> String {
    format!("{TRANSCRIPTS}/step_{}.jsonl", step.number())
}

/// Write to a sibling temporary file, then rename over the target.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().expect("run files live in a directory");
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{}.tmp", path.file_name().unwrap().to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("records serialize");
    s.push(b'\n');
    s
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn exists(&self, id: &str) -> bool {
        !id.is_empty() && !id.contains(['/', '\\', '.']) && self.dir(id).join(MANIFEST).is_file()
    }

    fn read_json<T: DeserializeOwned>(&self, path: &Path) -> Result<T, PipelineError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
    }

    pub fn create(&self, manifest: &mut RunManifest) -> Result<(), PipelineError> {
        fs::create_dir_all(self.dir(&manifest.id).join(TRANSCRIPTS))?;
        self.save_manifest(manifest)
    }

    pub fn load_manifest(&self, id: &str) -> Result<RunManifest, PipelineError> {
        if !self.exists(id) {
            return Err(PipelineError::UnknownRun(id.to_string()));
        }
        self.read_json(&self.dir(id).join(MANIFEST))
    }

    /// Refreshes the file index and writes the manifest.
    pub fn save_manifest(&self, manifest: &mut RunManifest) -> Result<(), PipelineError> {
        let dir = self.dir(&manifest.id);
        let mut files = Vec::new();
        for name in [DOMAIN_FILE, PROBLEM_FILE, PLAN_FILE, NO_PLAN_FILE, USAGE_FILE] {
            if dir.join(name).is_file() {
                files.push(name.to_string());
            }
        }
        for e in fs::read_dir(&dir)? {
            let name = e?.file_name().to_string_lossy().into_owned();
            if name.starts_with("step_") && name.ends_with(".json") {
                files.push(name);
            }
        }
        if let Ok(entries) = fs::read_dir(dir.join(TRANSCRIPTS)) {
            for e in entries {
                let name = e?.file_name().to_string_lossy().into_owned();
                if name.ends_with(".jsonl") {
                    files.push(format!("{TRANSCRIPTS}/{name}"));
                }
            }
        }
        files.sort();
        files.push(MANIFEST.to_string());
        manifest.files = files;
        write_atomic(&dir.join(MANIFEST), &to_json(manifest))?;
        Ok(())
    }

    pub fn load_step(&self, id: &str, step: StepId) -> Result<Option<StepRecord>, PipelineError> {
        let path = self.dir(id).join(step_file(step));
        if !path.is_file() {
            return Ok(None);
        }
        self.read_json(&path).map(Some)
    }

    pub fn save_step(&self, id: &str, record: &StepRecord) -> Result<(), PipelineError> {
        write_atomic(&self.dir(id).join(step_file(record.step)), &to_json(record))?;
        Ok(())
    }

    /// Renames a step's record and transcript out of the way; returns
    /// whether there was a record.
    pub fn supersede(&self, manifest: &mut RunManifest, step: StepId) -> Result<bool, PipelineError> {
        let dir = self.dir(&manifest.id);
        let record = dir.join(step_file(step));
        let transcript = dir.join(transcript_file(step));
        if !record.is_file() && !transcript.is_file() {
            return Ok(false);
        }
        let k = manifest.superseded.entry(step).or_insert(0);
        *k += 1;
        let n = step.number();
        if record.is_file() {
            fs::rename(&record, dir.join(format!("step_{n}.superseded-{k}.json")))?;
        }
        if transcript.is_file() {
            fs::rename(&transcript, dir.join(TRANSCRIPTS).join(format!("step_{n}.superseded-{k}.jsonl")))?;
        }
        Ok(true)
    }

    pub fn transcript_path(&self, id: &str, step: StepId) -> PathBuf {
        self.dir(id).join(transcript_file(step))
    }

    pub fn append_exchange(&self, id: &str, step: StepId, exchange: &ChatExchange) -> Result<(), PipelineError> {
        append_transcript(&self.transcript_path(id, step), exchange)?;
        Ok(())
    }

    /// Drops exchanges beyond the first `keep`, so that the transcript matches
    /// the calls of the persisted record after an interruption.
    pub fn truncate_transcript(&self, id: &str, step: StepId, keep: usize) -> Result<(), PipelineError> {
        let path = self.transcript_path(id, step);
        if !path.is_file() {
            return Ok(());
        }
        let all = read_transcript(&path)?;
        if all.len() <= keep {
            return Ok(());
        }
        let mut text = String::new();
        for e in &all[..keep] {
            text.push_str(&serde_json::to_string(e).expect("exchange serializes"));
            text.push('\n');
        }
        write_atomic(&path, text.as_bytes())?;
        Ok(())
    }

    pub fn read_text(&self, id: &str, name: &str) -> Result<Option<String>, PipelineError> {
        let path = self.dir(id).join(name);
        if !path.is_file() {
            return Ok(None);
        }
        Ok(Some(fs::read_to_string(path)?))
    }

    pub fn write_text(&self, id: &str, name: &str, text: &str) -> Result<(), PipelineError> {
        write_atomic(&self.dir(id).join(name), text.as_bytes())?;
        Ok(())
    }

    pub fn remove(&self, id: &str, name: &str) -> Result<(), PipelineError> {
        match fs::remove_file(self.dir(id).join(name)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    /// Every run, oldest first.
    pub fn list(&self) -> Result<Vec<RunManifest>, PipelineError> {
        let mut out = Vec::new();
        let Ok(entries) = fs::read_dir(&self.root) else { return Ok(out) };
        for e in entries {
            let id = e?.file_name().to_string_lossy().into_owned();
            if self.exists(&id) {
                out.push(self.load_manifest(&id)?);
            }
        }
        out.sort_by(|a, b| (&a.created, &a.id).cmp(&(&b.created, &b.id)));
        Ok(out)
    }

    /// Deletes run directories beyond the `keep` most recent.
    pub fn prune(&self, keep: usize) -> Result<Vec<String>, PipelineError> {
        let runs = self.list()?;
        let n = runs.len().saturating_sub(keep);
        let mut removed = Vec::new();
        for m in &runs[..n] {
            fs::remove_dir_all(self.dir(&m.id))?;
            removed.push(m.id.clone());
        }
        Ok(removed)
    }

    pub fn load(&self, id: &str) -> Result<PipelineRun, PipelineError> {
        let manifest = self.load_manifest(id)?;
        let mut steps = std::collections::BTreeMap::new();
        for s in StepId::ALL {
            if let Some(r) = self.load_step(id, s)? {
                steps.insert(s, r);
            }
        }
        let bad = |f: &str, e: String| PipelineError::Io(format!("{f}: {e}"));
        let domain = match self.read_text(id, DOMAIN_FILE)? {
            Some(t) => Some(parse_domain(&t).map_err(|e| bad(DOMAIN_FILE, e.to_string()))?),
            None => None,
        };
        let problem = match (&domain, self.read_text(id, PROBLEM_FILE)?) {
            (Some(d), Some(t)) => Some(parse_problem(&t, d).map_err(|e| bad(PROBLEM_FILE, e.to_string()))?),
            _ => None,
        };
        let plan = steps.get(&StepId::Planning).and_then(|r| match &r.artifact {
            Some(super::Artifact::Plan(p)) => Some(p.clone()),
            _ => None,
        });
        Ok(PipelineRun { manifest, steps, domain, problem, plan })
    }

    pub fn read_plan(&self, id: &str) -> Result<Option<Plan>, PipelineError> {
        match self.read_text(id, PLAN_FILE)? {
            Some(t) => Plan::from_plan_file(&t).map(Some).map_err(|e| PipelineError::Io(format!("{PLAN_FILE}: {e}"))),
            None => Ok(None),
        }
    }
}
