use std::fs;
use std::path::{Path, PathBuf};

use super::{GroundTruth, SimError, SyntheticTask};
use crate::domain::TaskInstance;

pub const TASK_SUFFIX: &str = ".task.json";
pub const TRUTH_SUFFIX: &str = ".truth.json";

fn io_err(path: &Path, err: impl std::fmt::Display) -> SimError {
    SimError::Io(format!("{}: {err}", path.display()))
}

/// Writes `<task_id>.task.json` and `<task_id>.truth.json` into `dir`.
pub fn write_task_files(dir: &Path, task: &SyntheticTask) -> Result<(PathBuf, PathBuf), SimError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let task_path = dir.join(format!("{}{TASK_SUFFIX}", task.task.task_id));
    let truth_path = dir.join(format!("{}{TRUTH_SUFFIX}", task.task.task_id));
    let task_json = serde_json::to_string_pretty(&task.task).map_err(|e| io_err(&task_path, e))?;
    let truth_json = serde_json::to_string_pretty(&task.truth).map_err(|e| io_err(&truth_path, e))?;
    fs::write(&task_path, task_json + "\n").map_err(|e| io_err(&task_path, e))?;
    fs::write(&truth_path, truth_json + "\n").map_err(|e| io_err(&truth_path, e))?;
    Ok((task_path, truth_path))
}

/// Reads a task file on its own, e.g. one produced by another benchmark
/// adapter.
pub fn load_task_instance(path: &Path) -> Result<TaskInstance, SimError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let task: TaskInstance = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
    task.validate().map_err(|e| io_err(path, e))?;
    Ok(task)
}

/// Loads every task in `dir` that has a matching truth file, sorted by id.
pub fn load_task_dir(dir: &Path) -> Result<Vec<SyntheticTask>, SimError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.to_str().is_some_and(|s| s.ends_with(TASK_SUFFIX)))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for task_path in paths {
        let task = load_task_instance(&task_path)?;
        let truth_path = dir.join(format!("{}{TRUTH_SUFFIX}", task.task_id));
        let text = fs::read_to_string(&truth_path).map_err(|e| io_err(&truth_path, e))?;
        let truth: GroundTruth = serde_json::from_str(&text).map_err(|e| io_err(&truth_path, e))?;
        if truth.task_id != task.task_id {
            return Err(io_err(&truth_path, format!("truth is for task `{}`", truth.task_id)));
        }
        if let Some(id) = task.market.ids().find(|id| !truth.tools.contains_key(*id)) {
            return Err(SimError::UnknownTool(id.to_string()));
        }
        out.push(SyntheticTask { task, truth });
    }
    Ok(out)
}
