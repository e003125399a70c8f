//! Tiny comparison language for `--assert` flags, e.g.
//! `cascade.recall@0.7/50 > rpn.recall@0.7/50` or `cascade.map >= 0.4`.
//! The process exit code reflects the verdict, so CI can gate on trends.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};

use cascadet::eval::EvalReport;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Gt,
    Ge,
    Lt,
    Le,
}

#[derive(Debug, Clone)]
enum Term {
    Literal(f64),
    Metric { variant: String, metric: Metric },
}

#[derive(Debug, Clone)]
enum Metric {
    Map,
    Recall { thr: f64, budget: usize },
    Ap { class_id: usize },
    Confusion { gt: usize, det: usize },
}

fn parse_term(s: &str) -> Result<Term> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return Ok(Term::Literal(v));
    }
    let (variant, rest) = s
        .split_once('.')
        .with_context(|| format!("expected `<variant>.<metric>` or a number, got `{s}`"))?;
    let metric = if rest == "map" {
        Metric::Map
    } else if let Some(spec) = rest.strip_prefix("recall@") {
        let (thr, budget) = spec
            .split_once('/')
            .with_context(|| format!("expected `recall@<iou>/<budget>`, got `{rest}`"))?;
        Metric::Recall { thr: thr.parse()?, budget: budget.parse()? }
    } else if let Some(c) = rest.strip_prefix("ap@") {
        Metric::Ap { class_id: c.parse()? }
    } else if let Some(cell) = rest.strip_prefix("confusion[").and_then(|r| r.strip_suffix(']')) {
        let (i, j) = cell.split_once(',').with_context(|| "expected `confusion[i,j]`")?;
        Metric::Confusion { gt: i.trim().parse()?, det: j.trim().parse()? }
    } else {
        bail!("unknown metric `{rest}` (expected map, recall@<iou>/<budget>, ap@<class>, confusion[i,j])");
    };
    Ok(Term::Metric { variant: variant.to_string(), metric })
}

fn eval_term(term: &Term, reports: &BTreeMap<String, EvalReport>) -> Result<f64> {
    match term {
        Term::Literal(v) => Ok(*v),
        Term::Metric { variant, metric } => {
            let report = reports
                .get(variant)
                .with_context(|| format!("no `{variant}` report in this run (have: {:?})", reports.keys().collect::<Vec<_>>()))?;
            match metric {
                Metric::Map => report
                    .detection
                    .as_ref()
                    .map(|d| d.map)
                    .with_context(|| format!("`{variant}` has no detection metrics")),
                Metric::Recall { thr, budget } => report
                    .recall
                    .as_ref()
                    .and_then(|r| r.at(*budget, *thr))
                    .with_context(|| format!("`{variant}` has no recall cell @{thr}/{budget}")),
                Metric::Ap { class_id } => report
                    .detection
                    .as_ref()
                    .and_then(|d| d.ap.get(class_id).copied())
                    .with_context(|| format!("`{variant}` has no AP for class {class_id}")),
                Metric::Confusion { gt, det } => report
                    .detection
                    .as_ref()
                    .and_then(|d| d.confusion.get(*gt).and_then(|row| row.get(*det)))
                    .map(|&v| v as f64)
                    .with_context(|| format!("`{variant}` has no confusion cell [{gt},{det}]")),
            }
        }
    }
}

/// Evaluates one assertion expression against the run's reports.
pub fn evaluate(expr: &str, reports: &BTreeMap<String, EvalReport>) -> Result<bool> {
    let (op, op_str) = if expr.contains(">=") {
        (Op::Ge, ">=")
    } else if expr.contains("<=") {
        (Op::Le, "<=")
    } else if expr.contains('>') {
        (Op::Gt, ">")
    } else if expr.contains('<') {
        (Op::Lt, "<")
    } else {
        bail!("assertion `{expr}` needs one of > >= < <=");
    };
    let (lhs, rhs) = expr.split_once(op_str).unwrap();
    let l = eval_term(&parse_term(lhs)?, reports)?;
    let r = eval_term(&parse_term(rhs)?, reports)?;
    Ok(match op {
        Op::Gt => l > r,
        Op::Ge => l >= r,
        Op::Lt => l < r,
        Op::Le => l <= r,
    })
}
