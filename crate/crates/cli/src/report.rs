//! CSV tables and SVG plots. Every artifact starts with the producing run
//! manifest hash.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dualmoe_core::eval::{EvalReport, RouteTrace};
use dualmoe_core::experts::{ExpertId, EXPERT_COUNT};
use dualmoe_core::sim::{Metrics, ScenarioKind};
use dualmoe_core::trainer::EpochLog;
use dualmoe_core::{Error, Result};

pub const METRICS_CSV: &str = "metrics.csv";
pub const PER_SCENARIO_CSV: &str = "per_scenario.csv";
pub const UTILIZATION_CSV: &str = "utilization.csv";
pub const EPISODES_CSV: &str = "episodes.csv";
pub const TRACES_CSV: &str = "traces.csv";
pub const TRAIN_LOG_CSV: &str = "train_log.csv";
pub const SWEEP_CSV: &str = "sweep_tau.csv";
pub const SWEEP_SVG: &str = "sweep_tau.svg";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_RUNS_CSV: &str = "ablation_runs.csv";

/// A CSV table under a `# manifest: <hash>` comment line.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(manifest_hash: &str, header: &[&str]) -> Self {
        let mut text = format!("# manifest: {manifest_hash}\n");
        text.push_str(&header.join(","));
        text.push('\n');
        Self { text }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text).map_err(|e| Error::io(path, e))
    }
}

pub fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub const METRIC_COLUMNS: [&str; 4] = ["episodes", "success_rate", "driving_score", "ability_mean"];

pub fn metric_cells(m: &Metrics) -> Vec<String> {
    vec![
        m.episodes.to_string(),
        num(m.success_rate),
        num(m.driving_score),
        num(m.ability_mean),
    ]
}

pub fn train_log(hash: &str, log: &[EpochLog]) -> Csv {
    let mut csv = Csv::new(
        hash,
        &[
            "epoch",
            "lr",
            "samples",
            "total",
            "traj_global",
            "feature_global",
            "value_global",
            "traj_adaptive",
            "feature_adaptive",
            "value_adaptive",
            "scenario",
            "speed",
            "load_balance",
            "val_router_accuracy",
        ],
    );
    for e in log {
        let l = &e.loss;
        csv.row(&[
            e.epoch.to_string(),
            format!("{:e}", e.lr),
            e.samples.to_string(),
            num(l.total),
            num(l.traj_global),
            num(l.feature_global),
            num(l.value_global),
            num(l.traj_adaptive),
            num(l.feature_adaptive),
            num(l.value_adaptive),
            num(l.scenario),
            num(l.speed),
            num(l.load_balance),
            opt(e.val_router_accuracy),
        ]);
    }
    csv
}

pub fn metrics(hash: &str, r: &EvalReport) -> Csv {
    let mut header = vec!["variant", "tau"];
    header.extend(METRIC_COLUMNS);
    header.extend(["router_accuracy", "global_utilization"]);
    let mut csv = Csv::new(hash, &header);
    let mut cells = vec![r.config.variant.to_string(), num(r.config.tau)];
    cells.extend(metric_cells(&r.metrics));
    cells.extend([num(r.routing.overall_accuracy), num(r.routing.global_utilization())]);
    csv.row(&cells);
    csv
}

/// Success rate, score and router accuracy per scenario kind.
pub fn per_scenario(hash: &str, r: &EvalReport) -> Csv {
    let mut csv = Csv::new(
        hash,
        &["scenario", "episodes", "success_rate", "driving_score", "steps", "router_accuracy"],
    );
    for kind in ScenarioKind::ALL {
        let of_kind: Vec<_> = r.outcomes.iter().filter(|o| o.kind == kind).collect();
        let score = if of_kind.is_empty() {
            None
        } else {
            Some(of_kind.iter().map(|o| o.driving_score).sum::<f64>() / of_kind.len() as f64)
        };
        csv.row(&[
            kind.name().to_string(),
            of_kind.len().to_string(),
            opt(r.metrics.per_ability[kind.id()]),
            opt(score),
            r.routing.steps[kind.id()].to_string(),
            opt(r.routing.accuracy[kind.id()]),
        ]);
    }
    csv
}

/// Percent of steps per expert; rows are experts, columns overall then kinds.
pub fn utilization(hash: &str, r: &EvalReport) -> Csv {
    let mut header = vec!["expert", "overall"];
    header.extend(ScenarioKind::ALL.iter().map(|k| k.name()));
    let mut csv = Csv::new(hash, &header);
    for (i, row) in r.routing.utilization.iter().enumerate().take(EXPERT_COUNT) {
        let mut cells = vec![ExpertId::from_index(i).expect("bank index").name()];
        cells.extend(row.iter().map(|&v| num(v)));
        csv.row(&cells);
    }
    csv
}

pub fn episodes(hash: &str, r: &EvalReport) -> Csv {
    let mut csv = Csv::new(
        hash,
        &[
            "episode",
            "scenario",
            "seed",
            "success",
            "termination",
            "collisions",
            "violations",
            "completion",
            "steps",
            "driving_score",
        ],
    );
    for (i, o) in r.outcomes.iter().enumerate() {
        csv.row(&[
            i.to_string(),
            o.kind.name().to_string(),
            o.seed.to_string(),
            o.success.to_string(),
            format!("{:?}", o.termination),
            o.collisions.to_string(),
            o.violations.to_string(),
            num(o.completion),
            o.steps.to_string(),
            num(o.driving_score),
        ]);
    }
    csv
}

pub fn traces(hash: &str, traces: &[RouteTrace]) -> Csv {
    let mut header = vec!["scenario", "seed", "step"];
    let probs: Vec<String> = ScenarioKind::ALL.iter().map(|k| format!("p_{}", k.name())).collect();
    header.extend(probs.iter().map(String::as_str));
    header.extend(["uncertainty", "selected"]);
    let mut csv = Csv::new(hash, &header);
    for t in traces {
        let mut cells = vec![t.kind.name().to_string(), t.seed.to_string(), t.step.to_string()];
        cells.extend(t.probs.iter().map(|&p| num(p)));
        cells.extend([num(t.uncertainty), t.selected.name()]);
        csv.row(&cells);
    }
    csv
}

/// One row of a τ sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub tau: f64,
    pub metrics: Metrics,
    pub global_utilization: f64,
    pub router_accuracy: f64,
}

pub fn sweep(hash: &str, rows: &[SweepRow]) -> Csv {
    let mut header = vec!["tau"];
    header.extend(METRIC_COLUMNS);
    header.extend(["global_utilization", "router_accuracy"]);
    let mut csv = Csv::new(hash, &header);
    for r in rows {
        let mut cells = vec![format!("{:.4}", r.tau)];
        cells.extend(metric_cells(&r.metrics));
        cells.extend([num(r.global_utilization), num(r.router_accuracy)]);
        csv.row(&cells);
    }
    csv
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

/// Line plot of the driving-score analog and success rate against τ, both on
/// a 0 to 100 axis.
pub fn sweep_svg(hash: &str, rows: &[SweepRow]) -> String {
    let (lo, hi) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.tau), b.max(r.tau)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px = |tau: f64| LEFT + (tau - lo) / span * (W - LEFT - RIGHT);
    let py = |v: f64| TOP + (1.0 - v.clamp(0.0, 100.0) / 100.0) * (H - TOP - BOTTOM);
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(s, "<!-- manifest: {hash} -->");
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, py(0.0), py(100.0));
    let _ = writeln!(s, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>");
    let _ = writeln!(s, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    for v in (0..=100).step_by(20) {
        let y = py(v as f64);
        let _ = writeln!(
            s,
            "<line x1=\"{x0}\" y1=\"{y:.2}\" x2=\"{x1}\" y2=\"{y:.2}\" stroke=\"#ddd\"/><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{v}</text>",
            x0 - 6.0,
            y + 4.0
        );
    }
    for r in rows {
        let x = px(r.tau);
        let _ = writeln!(
            s,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{:.1}</text>",
            y0 + 18.0,
            r.tau
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">tau</text>",
        (x0 + x1) / 2.0,
        H - 10.0
    );
    let series: [(&str, &str, fn(&SweepRow) -> f64); 2] = [
        ("driving score", "#1f77b4", |r| r.metrics.driving_score),
        ("success rate", "#d62728", |r| r.metrics.success_rate),
    ];
    for (i, (label, color, value)) in series.iter().enumerate() {
        let points: Vec<String> = rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", px(r.tau), py(value(r))))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            points.join(" ")
        );
        for p in &points {
            let (x, y) = p.split_once(',').expect("point");
            let _ = writeln!(s, "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"{color}\"/>");
        }
        let ly = TOP + 4.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{:.2}\" y=\"{:.2}\">{label}</text>",
            x1 - 130.0,
            x1 - 110.0,
            x1 - 104.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Per-seed ablation result.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub variant: dualmoe_core::model::Variant,
    pub seed: u64,
    pub metrics: Metrics,
}

pub fn ablation_runs(hash: &str, runs: &[AblationRun]) -> Csv {
    let mut csv = Csv::new(hash, &["variant", "seed", "driving_score", "success_rate", "ability_mean"]);
    for r in runs {
        csv.row(&[
            r.variant.to_string(),
            r.seed.to_string(),
            num(r.metrics.driving_score),
            num(r.metrics.success_rate),
            num(r.metrics.ability_mean),
        ]);
    }
    csv
}

/// Mean over seeds per variant, in first-seen variant order.
pub fn ablation_table(hash: &str, runs: &[AblationRun]) -> Csv {
    let mut csv = Csv::new(hash, &["variant", "seeds", "driving_score", "success_rate", "ability_mean"]);
    let mut order = Vec::new();
    for r in runs {
        if !order.contains(&r.variant) {
            order.push(r.variant);
        }
    }
    for v in order {
        let rs: Vec<_> = runs.iter().filter(|r| r.variant == v).collect();
        let mean = |f: fn(&Metrics) -> f64| rs.iter().map(|r| f(&r.metrics)).sum::<f64>() / rs.len() as f64;
        csv.row(&[
            v.to_string(),
            rs.len().to_string(),
            num(mean(|m| m.driving_score)),
            num(mean(|m| m.success_rate)),
            num(mean(|m| m.ability_mean)),
        ]);
    }
    csv
}
