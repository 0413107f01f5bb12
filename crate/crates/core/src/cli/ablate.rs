//! Multi-variant, multi-seed training runs summarised as a table of
//! mean ± std scores per variant.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::commands::{train, write_json, write_text};
use super::config::{set_path, RunConfig};
use crate::metrics::{mean_std, MetricSummary};
use crate::{Error, Result};

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    /// Config keys, nested or dotted, applied on top of the base.
    #[serde(default)]
    pub overrides: toml::Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationPlan {
    /// Base run config file, relative to the plan file.
    #[serde(default)]
    pub base: Option<PathBuf>,
    /// Inline config applied over `base` for every variant.
    #[serde(default)]
    pub config: toml::Table,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(rename = "variant")]
    pub variants: Vec<Variant>,
}

/// Dotted leaf paths of a table; arrays and scalars are leaves.
pub fn flatten(table: &toml::Table) -> Vec<(String, toml::Value)> {
    fn walk(prefix: &str, t: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
        for (k, v) in t {
            let key = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            match v {
                toml::Value::Table(inner) => walk(&key, inner, out),
                other => out.push((key, other.clone())),
            }
        }
    }
    let mut out = Vec::new();
    walk("", table, &mut out);
    out
}

impl AblationPlan {
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config {
            key: ".".into(),
            message: e.message().to_string(),
        })?;
        let plan: AblationPlan =
            serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
                key: e.path().to_string(),
                message: e.into_inner().message().to_string(),
            })?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan = Self::parse(&text)?;
        if let (Some(base), Some(dir)) = (&plan.base, path.parent()) {
            plan.base = Some(dir.join(base));
        }
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::InvalidConfig("ablation plan has no variants".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig(
                "ablation plan needs at least one seed".into(),
            ));
        }
        let mut names = BTreeSet::new();
        for v in &self.variants {
            if v.name.is_empty() || v.name.contains(['/', '\\']) {
                return Err(Error::InvalidConfig(format!(
                    "invalid variant name {:?}",
                    v.name
                )));
            }
            if !names.insert(v.name.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate variant name {:?}",
                    v.name
                )));
            }
        }
        Ok(())
    }

    /// Resolved config of one run.
    pub fn run_config(&self, variant: &Variant, seed: u64) -> Result<RunConfig> {
        let mut table = match &self.base {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str(&text).map_err(|e| Error::Config {
                    key: p.display().to_string(),
                    message: e.message().to_string(),
                })?
            }
            None => toml::Table::new(),
        };
        for (k, v) in flatten(&self.config)
            .into_iter()
            .chain(flatten(&variant.overrides))
        {
            set_path(&mut table, &k, v)?;
        }
        Ok(RunConfig::from_table(table)
            .map_err(|e| match e {
                Error::Config { key, message } => Error::Config {
                    key,
                    message: format!("{message} (variant {})", variant.name),
                },
                other => other,
            })?
            .with_seed(seed))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: String,
    pub seed: u64,
    pub metrics: Option<MetricSummary>,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub completed: usize,
    pub failed: usize,
    pub oa: Option<Stat>,
    pub fscd: Option<Stat>,
    pub miou: Option<Stat>,
    pub sek: Option<Stat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub seeds: Vec<u64>,
    pub rows: Vec<SummaryRow>,
    pub runs: Vec<RunRecord>,
}

impl AblationSummary {
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| r.failed > 0)
    }
}

/// Aggregates run records into one row per variant, in `order`.
pub fn summarize(order: &[String], seeds: &[u64], runs: &[RunRecord]) -> AblationSummary {
    let rows = order
        .iter()
        .map(|name| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| &r.variant == name).collect();
            let ok: Vec<MetricSummary> = mine.iter().filter_map(|r| r.metrics).collect();
            let stat = |f: fn(&MetricSummary) -> f64| {
                let vals: Vec<f64> = ok.iter().map(f).collect();
                mean_std(&vals).map(|(mean, std)| Stat { mean, std })
            };
            SummaryRow {
                variant: name.clone(),
                completed: ok.len(),
                failed: mine.len() - ok.len(),
                oa: stat(|m| m.oa),
                fscd: stat(|m| m.fscd),
                miou: stat(|m| m.miou),
                sek: stat(|m| m.sek),
            }
        })
        .collect();
    AblationSummary {
        seeds: seeds.to_vec(),
        rows,
        runs: runs.to_vec(),
    }
}

fn cell(s: Option<Stat>) -> String {
    match s {
        None => "failed".into(),
        Some(Stat {
            mean,
            std: Some(sd),
        }) => format!("{:.2}±{:.2}", 100.0 * mean, 100.0 * sd),
        Some(Stat { mean, std: None }) => format!("{:.2}±", 100.0 * mean),
    }
}

/// Markdown table with scores in percent.
pub fn render_table(summary: &AblationSummary) -> String {
    let mut out = String::new();
    let seeds: Vec<String> = summary.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(out, "Seeds: {}\n", seeds.join(", "));
    out.push_str("| Variant | OA (%) | F_scd (%) | mIoU (%) | SeK (%) | Runs |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for r in &summary.rows {
        let runs = if r.failed > 0 {
            format!(
                "{}/{} ({} failed)",
                r.completed,
                r.completed + r.failed,
                r.failed
            )
        } else {
            format!("{}/{}", r.completed, r.completed)
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            r.variant,
            cell(r.oa),
            cell(r.fscd),
            cell(r.miou),
            cell(r.sek),
            runs
        );
    }
    out
}

/// Runs every variant under every seed into `out_dir/<variant>/seed-<s>`,
/// then writes `runs.json`, `summary.json` and `summary.md`. Individual
/// failures are recorded rather than aborting the plan.
pub fn run_ablation(plan: &AblationPlan, out_dir: &Path) -> Result<AblationSummary> {
    plan.validate()?;
    // surface config errors before any training starts
    for v in &plan.variants {
        plan.run_config(v, plan.seeds[0])?;
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut runs = Vec::new();
    for v in &plan.variants {
        for &seed in &plan.seeds {
            let dir = out_dir.join(&v.name).join(format!("seed-{seed}"));
            let result = plan.run_config(v, seed).and_then(|cfg| train(&cfg, &dir));
            let record = match result {
                Ok(outcome) => RunRecord {
                    variant: v.name.clone(),
                    seed,
                    metrics: Some(outcome.report.summary()),
                    error: None,
                },
                Err(e) => RunRecord {
                    variant: v.name.clone(),
                    seed,
                    metrics: None,
                    error: Some(e.to_string()),
                },
            };
            runs.push(record);
        }
    }
    let order: Vec<String> = plan.variants.iter().map(|v| v.name.clone()).collect();
    let summary = summarize(&order, &plan.seeds, &runs);
    write_json(&out_dir.join("runs.json"), &runs)?;
    write_json(&out_dir.join("summary.json"), &summary)?;
    write_text(&out_dir.join("summary.md"), &render_table(&summary))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(variant: &str, seed: u64, fscd: Option<f64>) -> RunRecord {
        RunRecord {
            variant: variant.into(),
            seed,
            metrics: fscd.map(|f| MetricSummary {
                oa: 0.5,
                fscd: f,
                miou: 0.25,
                sek: 0.1,
            }),
            error: fscd.is_none().then(|| "boom".into()),
        }
    }

    #[test]
    fn plan_parses_nested_and_dotted_overrides() {
        let plan = AblationPlan::parse(
            r#"
seeds = [1, 2]
[config.trainer]
total_epochs = 3
[[variant]]
name = "baseline"
overrides = { "model.cbam.enabled" = false, "loss.lambda1" = 0.0 }
[[variant]]
name = "cbam"
[variant.overrides.loss]
lambda1 = 0.0
"#,
        )
        .unwrap();
        let base = plan.run_config(&plan.variants[0], 2).unwrap();
        assert!(!base.model.cbam.enabled);
        assert_eq!(base.loss.lambda1, 0.0);
        assert_eq!(base.trainer.total_epochs, 3);
        assert_eq!((base.model.seed, base.trainer.seed), (2, 2));
        let cbam = plan.run_config(&plan.variants[1], 1).unwrap();
        assert!(cbam.model.cbam.enabled);
        assert_eq!(cbam.loss.lambda1, 0.0);
    }

    #[test]
    fn default_seeds_are_five() {
        let plan = AblationPlan::parse("[[variant]]\nname = \"a\"\n").unwrap();
        assert_eq!(plan.seeds, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn duplicate_names_and_unknown_keys_are_rejected() {
        assert!(
            AblationPlan::parse("[[variant]]\nname = \"a\"\n[[variant]]\nname = \"a\"\n").is_err()
        );
        let err = AblationPlan::parse("[[variant]]\nname = \"a\"\nextra = 1\n").unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
        let plan =
            AblationPlan::parse("[[variant]]\nname = \"a\"\noverrides = { \"model.nope\" = 1 }\n")
                .unwrap();
        assert!(plan.run_config(&plan.variants[0], 0).is_err());
    }

    #[test]
    fn summary_matches_hand_arithmetic() {
        let runs = vec![
            rec("a", 0, Some(0.2)),
            rec("a", 1, Some(0.4)),
            rec("a", 2, Some(0.9)),
            rec("b", 0, Some(0.7)),
        ];
        let s = summarize(&["a".into(), "b".into()], &[0, 1, 2], &runs);
        let a = s.rows[0].fscd.unwrap();
        assert!((a.mean - 0.5).abs() < 1e-12);
        // deviations -0.3, -0.1, 0.4: squares sum 0.26, over n - 1
        assert!((a.std.unwrap() - 0.13f64.sqrt()).abs() < 1e-12);
        let b = s.rows[1].fscd.unwrap();
        assert_eq!((b.mean, b.std), (0.7, None));
        let table = render_table(&s);
        assert!(
            table.contains("| b | 50.00± | 70.00± | 25.00± | 10.00± | 1/1 |"),
            "{table}"
        );
        assert!(table.contains("50.00±36.06"), "{table}");
    }

    #[test]
    fn failures_are_marked() {
        let runs = vec![rec("a", 0, None), rec("a", 1, Some(0.5)), rec("b", 0, None)];
        let s = summarize(&["a".into(), "b".into()], &[0, 1], &runs);
        assert!(s.any_failed());
        assert_eq!((s.rows[0].completed, s.rows[0].failed), (1, 1));
        let table = render_table(&s);
        assert!(table.contains("1/2 (1 failed)"));
        assert!(
            table.contains("| b | failed | failed | failed | failed | 0/1 (1 failed) |"),
            "{table}"
        );
    }

    #[test]
    fn table_has_one_row_per_variant() {
        let runs: Vec<RunRecord> = ["baseline", "+CBAM", "+CBAM+Dice"]
            .iter()
            .flat_map(|v| (0..5).map(move |s| rec(v, s, Some(0.1 * s as f64))))
            .collect();
        let order: Vec<String> = ["baseline", "+CBAM", "+CBAM+Dice"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let table = render_table(&summarize(&order, &[0, 1, 2, 3, 4], &runs));
        let rows: Vec<&str> = table
            .lines()
            .filter(|l| l.starts_with("| ") && !l.starts_with("| Variant"))
            .collect();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.matches('±').count() == 4));
    }
}
