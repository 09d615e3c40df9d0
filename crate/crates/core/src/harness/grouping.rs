use serde::{Deserialize, Serialize};

use crate::corpus::{SampleRecord, Task};

/// Which tasks' recordings a model is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupingStrategy {
    /// Only the evaluated task.
    TaskSpecific,
    /// The similarity group containing the evaluated task.
    TaskGrouping,
    /// All tasks.
    TaskIndependent,
}

impl GroupingStrategy {
    pub const ALL: [GroupingStrategy; 3] = [
        GroupingStrategy::TaskSpecific,
        GroupingStrategy::TaskGrouping,
        GroupingStrategy::TaskIndependent,
    ];

    pub fn label(self) -> &'static str {
        match self {
            GroupingStrategy::TaskSpecific => "Task-Specific",
            GroupingStrategy::TaskGrouping => "Task-Grouping",
            GroupingStrategy::TaskIndependent => "Task-Independent",
        }
    }

    /// Tasks whose recordings are used for training when evaluating `target`.
    pub fn training_tasks(self, target: Task) -> Vec<Task> {
        match self {
            GroupingStrategy::TaskSpecific => vec![target],
            GroupingStrategy::TaskGrouping => task_group(target).to_vec(),
            GroupingStrategy::TaskIndependent => Task::ALL.to_vec(),
        }
    }
}

/// The four similarity groups; together they partition the nine tasks.
pub const TASK_GROUPS: [&[Task]; 4] = [
    &[Task::A, Task::Mpt],
    &[Task::Words, Task::Ddk],
    &[Task::Sent, Task::ProsSent, Task::Text],
    &[Task::Frog, Task::Convers],
];

pub fn task_group(task: Task) -> &'static [Task] {
    TASK_GROUPS
        .iter()
        .find(|g| g.contains(&task))
        .expect("task groups cover every task")
}

/// Training pool for `target` under `strategy`.
pub fn select_task_data(
    records: &[SampleRecord],
    strategy: GroupingStrategy,
    target: Task,
) -> Vec<SampleRecord> {
    let tasks = strategy.training_tasks(target);
    records
        .iter()
        .filter(|r| tasks.contains(&r.task))
        .cloned()
        .collect()
}

/// Evaluation records are always those of the target task.
pub fn evaluation_data(records: &[SampleRecord], target: Task) -> Vec<SampleRecord> {
    records.iter().filter(|r| r.task == target).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Gender, State};

    fn all_records() -> Vec<SampleRecord> {
        Task::ALL
            .iter()
            .flat_map(|&t| {
                [State::On, State::Off].map(|s| SampleRecord {
                    sample_id: format!("{t}-{s}"),
                    speaker_id: "spk".into(),
                    gender: Gender::Male,
                    task: t,
                    state: s,
                    feature_path: String::new(),
                })
            })
            .collect()
    }

    fn tasks_of(recs: &[SampleRecord]) -> Vec<Task> {
        let mut t: Vec<Task> = recs.iter().map(|r| r.task).collect();
        t.sort();
        t.dedup();
        t
    }

    #[test]
    fn groups_partition_tasks() {
        let mut seen: Vec<Task> = TASK_GROUPS.iter().flat_map(|g| g.iter().copied()).collect();
        seen.sort();
        assert_eq!(seen, Task::ALL.to_vec());
    }

    #[test]
    fn strategies() {
        let recs = all_records();
        let specific = select_task_data(&recs, GroupingStrategy::TaskSpecific, Task::ProsSent);
        assert_eq!(tasks_of(&specific), vec![Task::ProsSent]);
        let grouped = select_task_data(&recs, GroupingStrategy::TaskGrouping, Task::Text);
        assert_eq!(tasks_of(&grouped), vec![Task::Sent, Task::ProsSent, Task::Text]);
        let all = select_task_data(&recs, GroupingStrategy::TaskIndependent, Task::A);
        assert_eq!(all.len(), recs.len());
        assert!(evaluation_data(&recs, Task::Text).iter().all(|r| r.task == Task::Text));
    }

    #[test]
    fn training_sets_are_nested() {
        let recs = all_records();
        for &t in &Task::ALL {
            let ids = |s| -> Vec<String> {
                select_task_data(&recs, s, t).into_iter().map(|r| r.sample_id).collect()
            };
            let (a, b, c) = (
                ids(GroupingStrategy::TaskSpecific),
                ids(GroupingStrategy::TaskGrouping),
                ids(GroupingStrategy::TaskIndependent),
            );
            assert!(a.iter().all(|x| b.contains(x)));
            assert!(b.iter().all(|x| c.contains(x)));
        }
    }
}
