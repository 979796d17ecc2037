use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Result};
use crate::model::{Ablation, Stage, SCENARIOS};
use crate::train::{DataBundle, Pipeline, TrainConfig};

use super::MetricsReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// 0 is the unablated model.
    pub scenario: u8,
    pub description: String,
    pub retrained: Vec<Stage>,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

/// Stages whose weights a scenario invalidates; every other stage reuses
/// the base checkpoint.
pub fn retrained_stages(id: u8) -> Result<Vec<Stage>> {
    Ablation::scenario(id)?;
    Ok(match id {
        1 => vec![Stage::Fusion],
        2 | 6 => vec![Stage::Van1, Stage::Fusion],
        3 | 5 => vec![Stage::Sam, Stage::Fusion],
        _ => Stage::ALL.to_vec(),
    })
}

/// Retrains what scenario `id` changes on top of the base checkpoints in
/// `base_dir` and evaluates on the test split. Outputs go to `out`.
pub fn run_ablation(id: u8, base: &TrainConfig, data: &DataBundle, base_dir: &Path, out: &Path) -> Result<AblationRow> {
    let mut cfg = base.clone();
    cfg.ablation = Ablation::scenario(id)?;
    let retrain = retrained_stages(id)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut p = Pipeline::new(cfg, data, out)?;
    for stage in p.stages() {
        if !retrain.contains(&stage) {
            p.load_stage(stage, &base_dir.join("checkpoints").join(stage.as_str()))?;
        }
    }
    p.run_remaining()?;
    let report = p.report()?;
    let path = out.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(io_err(&path))?;
    Ok(AblationRow {
        scenario: id,
        description: SCENARIOS[id as usize - 1].1.to_string(),
        retrained: p.stages().into_iter().filter(|s| retrain.contains(s)).collect(),
        metrics: report.test,
    })
}

/// Base row followed by the scenarios, one line each, with accuracy and F1
/// deltas against the base.
pub fn ablation_csv(table: &AblationTable) -> String {
    let base = table.rows.iter().find(|r| r.scenario == 0);
    let mut s = String::from("scenario,description,acc,auc,f1,precision,recall,delta_acc,delta_f1\n");
    for r in &table.rows {
        let m = &r.metrics;
        let (da, df) = base.map_or((0.0, 0.0), |b| (m.accuracy - b.metrics.accuracy, m.f1 - b.metrics.f1));
        s += &format!(
            "{},\"{}\",{:.4},{},{:.4},{:.4},{:.4},{:+.4},{:+.4}\n",
            r.scenario,
            r.description,
            m.accuracy,
            m.auc.map_or("NA".into(), |a| format!("{a:.4}")),
            m.f1,
            m.precision,
            m.recall,
            da,
            df
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retrain_sets() {
        assert_eq!(retrained_stages(1).unwrap(), vec![Stage::Fusion]);
        assert_eq!(retrained_stages(4).unwrap().len(), 5);
        assert!(retrained_stages(7).unwrap_err().to_string().contains("1"));
    }
}
