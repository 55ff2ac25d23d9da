use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chem::Layout;

use super::{DataError, ReactionRecord, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "FWD")]
    Fwd,
    #[serde(rename = "RETRO")]
    Retro,
    #[serde(rename = "REAG")]
    Reag,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Fwd, Task::Retro, Task::Reag];

    pub fn tag(self) -> &'static str {
        match self {
            Task::Fwd => "FWD",
            Task::Retro => "RETRO",
            Task::Reag => "REAG",
        }
    }

    /// Multi-task prefix, including the trailing space.
    pub fn prefix(self) -> &'static str {
        match self {
            Task::Fwd => "Product: ",
            Task::Retro => "Reactants: ",
            Task::Reag => "Reagents: ",
        }
    }

    pub fn layout(self) -> Layout {
        match self {
            Task::Fwd => Layout::Forward,
            Task::Retro => Layout::Retro,
            Task::Reag => Layout::Reagents,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Task {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FWD" | "FORWARD" => Ok(Task::Fwd),
            "RETRO" => Ok(Task::Retro),
            "REAG" | "REAGENTS" => Ok(Task::Reag),
            other => Err(DataError::InvalidTasks(format!("unknown task {other:?}"))),
        }
    }
}

/// A non-empty task set kept in canonical order (FWD, RETRO, REAG).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tasks(Vec<Task>);

impl Tasks {
    pub fn new(tasks: &[Task]) -> Result<Self> {
        let mut v = tasks.to_vec();
        v.sort();
        v.dedup();
        if v.is_empty() {
            return Err(DataError::InvalidTasks("no tasks selected".into()));
        }
        Ok(Self(v))
    }

    /// Comma-separated tags, e.g. `"fwd,reag"`.
    pub fn parse(s: &str) -> Result<Self> {
        let tasks = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Task>>>()?;
        Self::new(&tasks)
    }

    pub fn as_slice(&self) -> &[Task] {
        &self.0
    }

    pub fn tags(&self) -> Vec<String> {
        self.0.iter().map(|t| t.tag().to_string()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskExample {
    pub task: Task,
    pub input_text: String,
    pub target_text: String,
}

fn build(r: &ReactionRecord, task: Task, multi_task: bool) -> TaskExample {
    let (body, target) = match task {
        Task::Fwd => {
            let left: Vec<&str> = r.reactants.iter().chain(&r.reagents).map(String::as_str).collect();
            (left.join("."), r.products.join("."))
        }
        Task::Retro => (r.products.join("."), r.reactants.join(".")),
        Task::Reag => (
            format!("{}.{}", r.reactants.join("."), r.products.join(".")),
            r.reagents.join("."),
        ),
    };
    let prefix = if multi_task { task.prefix() } else { "" };
    TaskExample {
        task,
        input_text: format!("{prefix}{body}>"),
        target_text: target,
    }
}

/// One example per (record, applicable task), records outermost.
///
/// REAG is skipped for records without reagents. Without `multi_task`
/// exactly one task may be selected and the prefix is omitted.
pub fn format_tasks(records: &[ReactionRecord], tasks: &Tasks, multi_task: bool) -> Result<Vec<TaskExample>> {
    if !multi_task && tasks.0.len() > 1 {
        return Err(DataError::InvalidTasks(format!(
            "single-task mode takes one task, got {}",
            tasks.tags().join(",")
        )));
    }
    let mut out = Vec::with_capacity(records.len() * tasks.0.len());
    let mut skipped = 0;
    for r in records {
        for &t in &tasks.0 {
            if t == Task::Reag && r.reagents.is_empty() {
                skipped += 1;
                continue;
            }
            out.push(build(r, t, multi_task));
        }
    }
    if skipped > 0 {
        log::info!("skipped REAG for {skipped} records without reagents");
    }
    Ok(out)
}
