//! Grid-search orchestration: expand a sweep spec into configurations, run
//! each one over a shared seed set, and rank by final test accuracy.

use crate::config::{reference_config, set_toml_path_value, ExperimentConfig, SweepSpec};
use crate::engine::RunOutcome;
use crate::error::{Error, Result};
use crate::runner::execute_run;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub label: String,
    pub mean_final_acc: Option<f64>,
    pub per_seed: Vec<(u64, Option<f64>)>,
    pub dir_names: Vec<String>,
}

pub struct SweepOutcome {
    pub rows: Vec<LeaderboardRow>,
    pub best: ExperimentConfig,
    pub leaderboard_path: PathBuf,
}

/// Cartesian expansion of the axes in declaration order.
fn expand_axes(spec: &SweepSpec) -> Vec<Vec<(String, toml::Value)>> {
    let mut combos: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
    for axis in &spec.axes {
        let mut next = Vec::with_capacity(combos.len() * axis.values.len());
        for combo in &combos {
            for value in &axis.values {
                let mut grown = combo.clone();
                grown.push((axis.path.clone(), value.clone()));
                next.push(grown);
            }
        }
        combos = next;
    }
    combos
}

fn apply_combo(
    base: &ExperimentConfig,
    combo: &[(String, toml::Value)],
) -> Result<ExperimentConfig> {
    let text = base.to_toml_string()?;
    let mut value: toml::Value =
        toml::from_str(&text).map_err(|e| Error::config(e.to_string()))?;
    for (path, v) in combo {
        set_toml_path_value(&mut value, path, v.clone())?;
    }
    let config: ExperimentConfig = value
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

fn combo_label(combo: &[(String, toml::Value)]) -> String {
    if combo.is_empty() {
        return "base".to_string();
    }
    combo
        .iter()
        .map(|(p, v)| format!("{p}={v}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Run the whole sweep. Every configuration is validated before anything is
/// launched, so a malformed grid aborts with no partial output.
pub fn run_sweep(spec: &SweepSpec, out_dir: &Path) -> Result<SweepOutcome> {
    let base = spec.base.clone().unwrap_or_else(reference_config);
    let seeds = if spec.seeds.is_empty() {
        vec![base.seed]
    } else {
        spec.seeds.clone()
    };
    let combos = expand_axes(spec);
    if combos.is_empty() {
        return Err(Error::config("sweep expanded to no configurations"));
    }
    let mut configs = Vec::with_capacity(combos.len());
    for combo in &combos {
        configs.push(apply_combo(&base, combo)?);
    }

    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut rows = Vec::with_capacity(combos.len());
    for (index, (combo, config)) in combos.iter().zip(&configs).enumerate() {
        let mut per_seed = Vec::with_capacity(seeds.len());
        let mut dir_names = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            let mut run_config = config.clone();
            run_config.seed = seed;
            let dir_name = format!("c{index:03}-s{seed}");
            let artifacts = execute_run(&run_config, &out_dir.join(&dir_name))?;
            let acc = match artifacts.outcome {
                RunOutcome::Completed => artifacts.final_test_acc,
                RunOutcome::Diverged { .. } => None,
            };
            per_seed.push((seed, acc));
            dir_names.push(dir_name);
        }
        let mean = if per_seed.iter().all(|(_, a)| a.is_some()) {
            Some(
                per_seed.iter().map(|(_, a)| a.unwrap()).sum::<f64>() / per_seed.len() as f64,
            )
        } else {
            None
        };
        rows.push(LeaderboardRow {
            rank: 0,
            label: combo_label(combo),
            mean_final_acc: mean,
            per_seed,
            dir_names,
        });
    }

    // Rank by mean accuracy, failures last; ties keep declaration order.
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        let ka = rows[a].mean_final_acc.unwrap_or(f64::NEG_INFINITY);
        let kb = rows[b].mean_final_acc.unwrap_or(f64::NEG_INFINITY);
        kb.partial_cmp(&ka).unwrap().then(a.cmp(&b))
    });
    let mut ranked = Vec::with_capacity(rows.len());
    for (rank, &i) in order.iter().enumerate() {
        let mut row = rows[i].clone();
        row.rank = rank + 1;
        ranked.push(row);
    }

    let best_index = order[0];
    let best = configs[best_index].clone();
    let leaderboard_path = out_dir.join("leaderboard.csv");
    write_leaderboard(&ranked, &seeds, &leaderboard_path)?;
    std::fs::write(out_dir.join("best.toml"), best.to_toml_string()?)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    Ok(SweepOutcome {
        rows: ranked,
        best,
        leaderboard_path,
    })
}

fn write_leaderboard(rows: &[LeaderboardRow], seeds: &[u64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    let mut header = vec!["rank".to_string(), "config".to_string(), "mean_final_acc".to_string()];
    header.extend(seeds.iter().map(|s| format!("acc_seed_{s}")));
    w.write_record(&header)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    for row in rows {
        let mut record = vec![
            row.rank.to_string(),
            row.label.clone(),
            row.mean_final_acc
                .map_or_else(|| "DIV".to_string(), |a| format!("{a}")),
        ];
        record.extend(row.per_seed.iter().map(|(_, a)| {
            a.map_or_else(|| "DIV".to_string(), |v| format!("{v}"))
        }));
        w.write_record(&record)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}
