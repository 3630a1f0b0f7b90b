use std::fs;

use anyhow::{Context, Result};
use icl_core::evaluator::{load_sweep_csv, SweepRow};

use crate::run_dir::run_label;
use crate::{usage, Metric, ReportArgs};

fn fmt_value(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if (1e-3..1e4).contains(&v.abs()) {
        format!("{v:.4}")
    } else {
        format!("{v:.2e}")
    }
}

fn fmt_sigma(s: f64) -> String {
    if s.fract() == 0.0 {
        format!("{s:.0}")
    } else {
        format!("{s}")
    }
}

/// Markdown table with one row per model and one column per width, followed
/// by the least-squares and zero-predictor reference rows.
pub fn table(runs: &[(String, Vec<SweepRow>)], metric: Metric) -> Result<String> {
    let Some((_, first)) = runs.first() else {
        return usage("no runs given");
    };
    let sigmas: Vec<f64> = first.iter().map(|r| r.sigma).collect();
    for (name, rows) in runs {
        let theirs: Vec<f64> = rows.iter().map(|r| r.sigma).collect();
        if theirs != sigmas {
            return usage(format!("run {name} was swept over {theirs:?}, expected {sigmas:?}"));
        }
    }
    let mut out = String::from("| models \\ σ |");
    for s in &sigmas {
        out += &format!(" {} |", fmt_sigma(*s));
    }
    out += "\n|---|";
    out += &"---|".repeat(sigmas.len());
    out += "\n";
    let mut line = |name: &str, values: Vec<f64>| {
        out += &format!("| {name} |");
        for v in values {
            out += &format!(" {} |", fmt_value(v));
        }
        out += "\n";
    };
    for (name, rows) in runs {
        line(
            name,
            rows.iter()
                .map(|r| match metric {
                    Metric::Eps => r.eps_sigma,
                    Metric::REps => r.r_eps,
                })
                .collect(),
        );
    }
    let (ls, zero): (Vec<f64>, Vec<f64>) = match metric {
        Metric::Eps => (first.iter().map(|r| r.eps_star).collect(), first.iter().map(|r| r.eps_zero).collect()),
        Metric::REps => (vec![0.0; sigmas.len()], vec![1.0; sigmas.len()]),
    };
    line("least squares", ls);
    line("zero", zero);
    Ok(out)
}

pub fn run(args: ReportArgs) -> Result<()> {
    let mut runs = Vec::new();
    for dir in &args.runs {
        let path = dir.join("sweep.csv");
        if !path.is_file() {
            return usage(format!("{} not found", path.display()));
        }
        runs.push((run_label(dir), load_sweep_csv(&path)?));
    }
    let text = table(&runs, args.metric)?;
    print!("{text}");
    if let Some(out) = &args.out {
        fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(scale: f64) -> Vec<SweepRow> {
        (1..=3)
            .map(|s| SweepRow {
                sigma: s as f64,
                eps_sigma: scale * s as f64,
                eps_star: 0.0,
                eps_zero: 2.0,
                r_eps: 0.5,
                n_functions: 1,
                seed: 0,
            })
            .collect()
    }

    #[test]
    fn header_and_rows() {
        let t = table(&[("a".into(), rows(0.1)), ("b".into(), rows(0.2))], Metric::Eps).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "| models \\ σ | 1 | 2 | 3 |");
        assert_eq!(lines[2], "| a | 0.1000 | 0.2000 | 0.3000 |");
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[5], "| zero | 2.0000 | 2.0000 | 2.0000 |");
    }

    #[test]
    fn mismatched_sigmas_rejected() {
        let mut b = rows(0.2);
        b.pop();
        assert!(table(&[("a".into(), rows(0.1)), ("b".into(), b)], Metric::Eps).is_err());
    }
}
