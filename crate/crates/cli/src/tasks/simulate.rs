use serde_json::json;

use super::{node_means, simulate_model, Context};
use crate::config::SimulateTask;
use crate::error::CliError;
use crate::output::{Artifacts, Cell, Table};

pub fn run(ctx: &Context) -> Result<Artifacts, CliError> {
    let task: SimulateTask = ctx.cfg.task("simulate")?;
    let paths = simulate_model(ctx)?;
    let names: Vec<String> = match &task.channels {
        Some(list) => {
            for c in list {
                if !paths.has(c) {
                    let known: Vec<&str> = paths.names().collect();
                    return Err(CliError::Config(format!(
                        "task.simulate: unknown channel `{c}`, expected one of {}",
                        known.join(", ")
                    )));
                }
            }
            list.clone()
        }
        None => paths.names().map(str::to_string).collect(),
    };
    if task.write_paths > paths.n_paths {
        return Err(CliError::Config(format!(
            "task.simulate: write_paths {} exceeds mc.n_paths {}",
            task.write_paths, paths.n_paths
        )));
    }
    let grid = paths.grid;
    let times = grid.times();
    let nn = grid.n_nodes();
    let mut art = Artifacts::default();

    let mut summary = Table::new("simulate_summary", &["channel", "t", "mean", "stderr"]);
    for name in &names {
        let means = node_means(paths.channel(name)?, nn);
        for (t, m) in times.iter().zip(&means) {
            summary.push(vec![Cell::from(name.as_str()), Cell::F(*t), Cell::F(m.mean), Cell::F(m.stderr)]);
            art.point(&format!("mean_{name}"), *t, m.mean, Some(m.stderr));
        }
    }
    art.tables.push(summary);

    if task.write_paths > 0 {
        let mut columns = vec!["path", "node", "t"];
        columns.extend(names.iter().map(String::as_str));
        let mut table = Table::new("paths", &columns);
        let data: Vec<&[f64]> = names.iter().map(|n| paths.channel(n)).collect::<Result<_, _>>()?;
        for p in 0..task.write_paths {
            for (i, &t) in times.iter().enumerate() {
                let mut row = vec![Cell::from(p), Cell::from(i), Cell::F(t)];
                row.extend(data.iter().map(|d| Cell::F(d[p * nn + i])));
                table.push(row);
            }
        }
        art.tables.push(table);
    }
    art.document(
        "simulate",
        json!({ "n_paths": paths.n_paths, "grid": grid, "channels": names }),
    );
    Ok(art)
}
