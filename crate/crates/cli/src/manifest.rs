//! Run manifests: a `[base]` scenario, optional `[[cells]]` overlays and a
//! `[sweep]` table whose arrays are expanded as a cartesian product.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use toml::{Table, Value};
use vhtmon::ScenarioConfig;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    seed: Option<u64>,
    #[serde(default)]
    base: Table,
    #[serde(default)]
    sweep: Table,
    #[serde(default)]
    cells: Vec<Table>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Expanded cells in output order.
    pub cells: Vec<ScenarioConfig>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        Manifest::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let raw: RawManifest = toml::from_str(text).map_err(|e| anyhow!("{e}"))?;
        let axes = sweep_axes(&raw.sweep)?;
        let overlays = if raw.cells.is_empty() { vec![Table::new()] } else { raw.cells };

        let mut cells = Vec::new();
        for (c, overlay) in overlays.iter().enumerate() {
            let mut merged = raw.base.clone();
            merge(&mut merged, overlay);
            for combo in cartesian(&axes) {
                let mut table = merged.clone();
                for (path, value) in &combo {
                    set_path(&mut table, path, value.clone());
                }
                let label = describe(c, &combo);
                let mut cfg: ScenarioConfig = Value::Table(table)
                    .try_into()
                    .map_err(|e: toml::de::Error| anyhow!("{label}: {}", e.message()))?;
                if let Some(seed) = raw.seed {
                    cfg.seed = seed;
                }
                cfg.validate().map_err(|e| anyhow!("{label}: {e}"))?;
                cells.push(cfg);
            }
        }
        Ok(Manifest { cells })
    }

    pub fn with_seed(mut self, seed: u64) -> Manifest {
        for c in &mut self.cells {
            c.seed = seed;
        }
        self
    }

    pub fn total_runs(&self) -> u64 {
        self.cells.iter().map(|c| c.replications as u64).sum()
    }
}

type Axis = (Vec<String>, Vec<Value>);

/// Flattens nested sweep tables into dotted paths, sorted by path.
fn sweep_axes(sweep: &Table) -> Result<Vec<Axis>> {
    fn walk(prefix: &[String], t: &Table, out: &mut Vec<Axis>) -> Result<()> {
        for (k, v) in t {
            let mut path = prefix.to_vec();
            path.extend(k.split('.').map(str::to_owned));
            match v {
                Value::Table(inner) => walk(&path, inner, out)?,
                Value::Array(values) if !values.is_empty() => out.push((path, values.clone())),
                Value::Array(_) => bail!("sweep.{} has no values", path.join(".")),
                _ => bail!("sweep.{} must be an array of values", path.join(".")),
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(&[], sweep, &mut out)?;
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Later axes vary fastest.
fn cartesian(axes: &[Axis]) -> Vec<Vec<(Vec<String>, Value)>> {
    let mut combos = vec![Vec::new()];
    for (path, values) in axes {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut next = prefix.clone();
                    next.push((path.clone(), v.clone()));
                    next
                })
            })
            .collect();
    }
    combos
}

fn merge(into: &mut Table, overlay: &Table) {
    for (k, v) in overlay {
        match (into.get_mut(k), v) {
            (Some(Value::Table(a)), Value::Table(b)) => merge(a, b),
            _ => {
                into.insert(k.clone(), v.clone());
            }
        }
    }
}

fn set_path(table: &mut Table, path: &[String], value: Value) {
    let (last, parents) = path.split_last().expect("sweep paths are non-empty");
    let mut t = table;
    for p in parents {
        let slot = t.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
        if !slot.is_table() {
            *slot = Value::Table(Table::new());
        }
        t = slot.as_table_mut().expect("just made a table");
    }
    t.insert(last.clone(), value);
}

fn describe(cell: usize, combo: &[(Vec<String>, Value)]) -> String {
    let mut s = format!("cell {cell}");
    for (path, v) in combo {
        s.push_str(&format!(" {}={v}", path.join(".")));
    }
    s
}
