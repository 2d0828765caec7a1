//! ROC analysis, operating thresholds at false-positive budgets and per-event
//! detection latency.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attackgen::AttackEvent;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ROC needs both benign and attack windows")]
    SingleClass,
    #[error("no threshold reaches false-positive budget {0}")]
    Unattainable(f64),
    #[error("budget {0} outside (0, 1]")]
    BadBudget(f64),
    #[error("missing artifact: {0}")]
    MissingArtifacts(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One scored detector window.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredWindow {
    /// Record index of the newest message in the window.
    pub origin_step: u64,
    /// Timestamp of that record.
    pub time: f64,
    /// Per-model anomaly scores.
    pub per_ae: Vec<f64>,
    pub p_ens: f64,
    /// Whether any record covered by a view carries the attack label.
    pub truth: bool,
}

/// Ground truth for windows ending at each record: true when any of the last
/// `span` records (the union of all views' coverage) is labelled attack.
pub fn window_truth(labels: &[bool], span: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(labels.len());
    let mut last_attack: Option<usize> = None;
    for (i, &l) in labels.iter().enumerate() {
        if l {
            last_attack = Some(i);
        }
        out.push(matches!(last_attack, Some(a) if i - a < span));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// Windows scoring at or above this value are flagged.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roc {
    /// Sorted by FPR, from (0, 0) to (1, 1).
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC curve over arbitrary scores, sweeping every distinct score value.
pub fn roc_scores(scores: &[f64], truth: &[bool]) -> Result<Roc, EvalError> {
    assert_eq!(scores.len(), truth.len());
    let positives = truth.iter().filter(|&&t| t).count();
    let negatives = truth.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let value = scores[order[i]];
        while i < order.len() && scores[order[i]] == value {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint { threshold: value, fpr: fp as f64 / negatives as f64, tpr: tp as f64 / positives as f64 });
    }
    let auc = points.windows(2).map(|p| (p[1].fpr - p[0].fpr) * (p[1].tpr + p[0].tpr) / 2.0).sum();
    Ok(Roc { points, auc })
}

/// ROC of the ensemble score.
pub fn roc(windows: &[ScoredWindow]) -> Result<Roc, EvalError> {
    let scores: Vec<f64> = windows.iter().map(|w| w.p_ens).collect();
    let truth: Vec<bool> = windows.iter().map(|w| w.truth).collect();
    roc_scores(&scores, &truth)
}

/// ROC of model `x`'s own score.
pub fn roc_model(windows: &[ScoredWindow], x: usize) -> Result<Roc, EvalError> {
    let scores: Vec<f64> = windows.iter().map(|w| w.per_ae[x]).collect();
    let truth: Vec<bool> = windows.iter().map(|w| w.truth).collect();
    roc_scores(&scores, &truth)
}

/// Operating threshold for a false-positive budget: the lowest benign score
/// value `t` such that the fraction of benign windows scoring strictly above
/// `t` stays within `budget`. Windows are flagged when `score > t`.
pub fn threshold_at_fpr(windows: &[ScoredWindow], budget: f64) -> Result<f64, EvalError> {
    let benign: Vec<f64> = windows.iter().filter(|w| !w.truth).map(|w| w.p_ens).collect();
    threshold_for_scores(&benign, budget)
}

pub fn threshold_for_scores(benign: &[f64], budget: f64) -> Result<f64, EvalError> {
    if !(budget > 0.0 && budget <= 1.0) {
        return Err(EvalError::BadBudget(budget));
    }
    if benign.is_empty() {
        return Err(EvalError::Unattainable(budget));
    }
    let mut sorted = benign.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    // ascending scan: the first value whose strict exceedance fits the budget
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        let above = (sorted.len() - j) as f64;
        if above / n <= budget {
            return Ok(v);
        }
        i = j;
    }
    Err(EvalError::Unattainable(budget))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLatency {
    pub start_step: u64,
    pub latency_steps: Option<u64>,
    pub latency_s: Option<f64>,
    pub missed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencySummary {
    pub events: Vec<EventLatency>,
    /// Mean over detected events only; `None` when every event was missed.
    pub mean_steps: Option<f64>,
    pub mean_s: Option<f64>,
    pub missed: usize,
}

/// Delay from each event's first attack message to the first flagged window
/// that overlaps it. `span` is the number of records a window covers.
/// `windows` must be sorted by origin step.
pub fn event_latency(windows: &[ScoredWindow], events: &[AttackEvent], threshold: f64, span: u64) -> LatencySummary {
    let mut out = Vec::with_capacity(events.len());
    for e in events {
        let first = windows.iter().find(|w| {
            w.p_ens > threshold
                && w.truth
                && w.origin_step >= e.start_step
                && w.origin_step < e.end_step.saturating_add(span)
        });
        out.push(match first {
            Some(w) => EventLatency {
                start_step: e.start_step,
                latency_steps: Some(w.origin_step - e.start_step),
                latency_s: Some(w.time - e.start_time),
                missed: false,
            },
            None => EventLatency { start_step: e.start_step, latency_steps: None, latency_s: None, missed: true },
        });
    }
    let detected: Vec<&EventLatency> = out.iter().filter(|e| !e.missed).collect();
    let mean = |f: &dyn Fn(&EventLatency) -> f64| {
        (!detected.is_empty()).then(|| detected.iter().map(|e| f(e)).sum::<f64>() / detected.len() as f64)
    };
    LatencySummary {
        mean_steps: mean(&|e| e.latency_steps.unwrap() as f64),
        mean_s: mean(&|e| e.latency_s.unwrap()),
        missed: out.len() - detected.len(),
        events: out,
    }
}

/// Scored windows of one test trace together with its events.
#[derive(Debug, Clone)]
pub struct AttackRun {
    pub name: String,
    pub windows: Vec<ScoredWindow>,
    pub events: Vec<AttackEvent>,
    /// Records covered by one window.
    pub span: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucRow {
    pub attack: String,
    pub per_ae: Vec<f64>,
    pub ensemble: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyRow {
    pub attack: String,
    pub fpr_budget: f64,
    pub threshold: f64,
    pub mean_latency_steps: Option<f64>,
    pub mean_latency_s: Option<f64>,
    pub events: usize,
    pub missed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenignRow {
    pub name: String,
    pub windows: usize,
    pub positive_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub auc: Vec<AucRow>,
    pub latency: Vec<LatencyRow>,
    /// Runs without attack windows, summarised by their positive rate.
    pub benign: Vec<BenignRow>,
}

/// Budgets at which latency is reported.
pub const DEFAULT_BUDGETS: [f64; 3] = [0.001, 0.005, 0.01];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v}"))
}

/// Computes every table for `runs` and writes `auc.csv`, `roc_<attack>.csv`,
/// `latency.csv` and `report.svg` into `out_dir`. Runs whose windows are all
/// benign go to `fpr.csv`, flagged at `benign_threshold`.
pub fn report(runs: &[AttackRun], budgets: &[f64], benign_threshold: f64, out_dir: &Path) -> Result<Report, EvalError> {
    fs::create_dir_all(out_dir)?;
    let mut rep = Report::default();
    let mut curves = Vec::new();
    for run in runs {
        let has_attack = run.windows.iter().any(|w| w.truth);
        if !has_attack {
            let positives = run.windows.iter().filter(|w| w.p_ens > benign_threshold).count();
            rep.benign.push(BenignRow {
                name: run.name.clone(),
                windows: run.windows.len(),
                positive_rate: if run.windows.is_empty() { 0.0 } else { positives as f64 / run.windows.len() as f64 },
            });
            continue;
        }
        let n_models = run.windows.first().map_or(0, |w| w.per_ae.len());
        let ens = roc(&run.windows)?;
        let per: Vec<Roc> = (0..n_models).map(|x| roc_model(&run.windows, x)).collect::<Result<_, _>>()?;
        let mut csv = String::from("threshold,fpr,tpr\n");
        for p in &ens.points {
            writeln!(csv, "{},{},{}", p.threshold, p.fpr, p.tpr).unwrap();
        }
        fs::write(out_dir.join(format!("roc_{}.csv", run.name)), csv)?;
        rep.auc.push(AucRow { attack: run.name.clone(), per_ae: per.iter().map(|r| r.auc).collect(), ensemble: ens.auc });
        for &budget in budgets {
            let threshold = threshold_at_fpr(&run.windows, budget)?;
            let lat = event_latency(&run.windows, &run.events, threshold, run.span);
            rep.latency.push(LatencyRow {
                attack: run.name.clone(),
                fpr_budget: budget,
                threshold,
                mean_latency_steps: lat.mean_steps,
                mean_latency_s: lat.mean_s,
                events: lat.events.len(),
                missed: lat.missed,
            });
        }
        curves.push((run.name.clone(), per, ens));
    }

    let n_models = rep.auc.iter().map(|r| r.per_ae.len()).max().unwrap_or(0);
    let mut csv = String::from("attack");
    for x in 1..=n_models {
        write!(csv, ",ae_{x}").unwrap();
    }
    csv.push_str(",ensemble\n");
    for row in &rep.auc {
        csv.push_str(&row.attack);
        for v in &row.per_ae {
            write!(csv, ",{v}").unwrap();
        }
        writeln!(csv, ",{}", row.ensemble).unwrap();
    }
    if !rep.auc.is_empty() {
        fs::write(out_dir.join("auc.csv"), csv)?;
    }

    let mut csv = String::from("attack,fpr_budget,threshold,mean_latency_steps,mean_latency_s,events,missed\n");
    for r in &rep.latency {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.attack,
            r.fpr_budget,
            r.threshold,
            opt(r.mean_latency_steps),
            opt(r.mean_latency_s),
            r.events,
            r.missed
        )
        .unwrap();
    }
    fs::write(out_dir.join("latency.csv"), csv)?;

    if !rep.benign.is_empty() {
        let mut csv = String::from("name,windows,threshold,positive_rate\n");
        for b in &rep.benign {
            writeln!(csv, "{},{},{},{}", b.name, b.windows, benign_threshold, b.positive_rate).unwrap();
        }
        fs::write(out_dir.join("fpr.csv"), csv)?;
    }
    fs::write(out_dir.join("report.svg"), render_svg(&curves))?;
    Ok(rep)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// One ROC panel per attack with every model and the ensemble overlaid.
fn render_svg(curves: &[(String, Vec<Roc>, Roc)]) -> String {
    let (panel, pad) = (220.0, 30.0);
    let cols = curves.len().clamp(1, 5);
    let rows = curves.len().div_ceil(cols).max(1);
    let width = cols as f64 * (panel + 2.0 * pad);
    let height = rows as f64 * (panel + 2.0 * pad);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    if curves.is_empty() {
        svg.push_str("<text x=\"10\" y=\"20\">no attack windows</text>\n");
    }
    for (i, (name, per, ens)) in curves.iter().enumerate() {
        let x0 = (i % cols) as f64 * (panel + 2.0 * pad) + pad;
        let y0 = (i / cols) as f64 * (panel + 2.0 * pad) + pad;
        writeln!(svg, "<rect x=\"{x0}\" y=\"{y0}\" width=\"{panel}\" height=\"{panel}\" fill=\"none\" stroke=\"#444\"/>").unwrap();
        writeln!(
            svg,
            "<line x1=\"{x0}\" y1=\"{}\" x2=\"{}\" y2=\"{y0}\" stroke=\"#bbb\" stroke-dasharray=\"4\"/>",
            y0 + panel,
            x0 + panel
        )
        .unwrap();
        writeln!(svg, "<text x=\"{x0}\" y=\"{}\">{name} (ens AUC {:.3})</text>", y0 - 8.0, ens.auc).unwrap();
        let line = |roc: &Roc, color: &str, w: f64| {
            let pts: Vec<String> = roc
                .points
                .iter()
                .map(|p| format!("{:.2},{:.2}", x0 + p.fpr * panel, y0 + (1.0 - p.tpr) * panel))
                .collect();
            format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"{w}\" points=\"{}\"/>\n", pts.join(" "))
        };
        for (x, r) in per.iter().enumerate() {
            svg.push_str(&line(r, PALETTE[x % PALETTE.len()], 1.0));
        }
        svg.push_str(&line(ens, "#d62728", 2.0));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attackgen::AttackKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn win(step: u64, p: f64, truth: bool) -> ScoredWindow {
        ScoredWindow { origin_step: step, time: step as f64 / 100.0, per_ae: vec![p], p_ens: p, truth }
    }

    fn event(start: u64, end: u64) -> AttackEvent {
        AttackEvent { kind: AttackKind::Plateau, start_step: start, end_step: end, start_time: start as f64 / 100.0, end_time: end as f64 / 100.0 }
    }

    #[test]
    fn separated_scores_give_unit_auc() {
        let windows: Vec<_> = (0..100).map(|i| win(i, i as f64, i >= 50)).collect();
        assert_eq!(roc(&windows).unwrap().auc, 1.0);
    }

    #[test]
    fn random_scores_give_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let windows: Vec<_> = (0..10_000).map(|i| win(i, rng.gen(), rng.gen_bool(0.3))).collect();
        let auc = roc(&windows).unwrap().auc;
        assert!((auc - 0.5).abs() < 0.05, "{auc}");
    }

    /// Mann-Whitney statistic: probability a random positive outscores a
    /// random negative, ties counting one half.
    fn pairwise_auc(scores: &[f64], truth: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (_, &a) in scores.iter().enumerate().filter(|(i, _)| truth[*i]) {
            for (j, &b) in scores.iter().enumerate() {
                if truth[j] {
                    continue;
                }
                den += 1.0;
                num += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
        num / den
    }

    #[test]
    fn trapezoid_matches_pairwise_count_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let scores: Vec<f64> = (0..400).map(|_| rng.gen_range(0..10) as f64 / 10.0).collect();
        let truth: Vec<bool> = scores.iter().map(|s| rng.gen_bool(0.2 + 0.5 * s)).collect();
        let auc = roc_scores(&scores, &truth).unwrap().auc;
        assert!((auc - pairwise_auc(&scores, &truth)).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scores: Vec<f64> = (0..500).map(|_| rng.gen()).collect();
        let truth: Vec<bool> = scores.iter().map(|s| rng.gen_bool(*s)).collect();
        let a = roc_scores(&scores, &truth).unwrap().auc;
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        assert_eq!(a, roc_scores(&mapped, &truth).unwrap().auc);
    }

    #[test]
    fn curve_is_monotone_from_origin_to_corner() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let windows: Vec<_> = (0..300).map(|i| win(i, rng.gen_range(0..20) as f64, rng.gen_bool(0.4))).collect();
        let r = roc(&windows).unwrap();
        assert_eq!((r.points[0].fpr, r.points[0].tpr), (0.0, 0.0));
        let last = r.points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert!(r.points.windows(2).all(|p| p[1].fpr >= p[0].fpr && p[1].tpr >= p[0].tpr));
    }

    #[test]
    fn single_class_is_rejected() {
        let windows: Vec<_> = (0..10).map(|i| win(i, 0.1, false)).collect();
        assert!(matches!(roc(&windows), Err(EvalError::SingleClass)));
    }

    #[test]
    fn grid_budget_picks_094() {
        let windows: Vec<_> = (0..100).map(|i| win(i, i as f64 / 100.0, false)).collect();
        assert_eq!(threshold_at_fpr(&windows, 0.05).unwrap(), 0.94);
        // five of the hundred benign scores lie strictly above it
        assert_eq!(windows.iter().filter(|w| w.p_ens > 0.94).count(), 5);
        assert_eq!(threshold_at_fpr(&windows, 1.0).unwrap(), 0.0);
        assert!(matches!(threshold_at_fpr(&windows, 0.0), Err(EvalError::BadBudget(_))));
    }

    #[test]
    fn threshold_is_monotone_in_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let benign: Vec<f64> = (0..1000).map(|_| rng.gen_range(0..50) as f64 / 50.0).collect();
        let budgets = [0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0];
        let t: Vec<f64> = budgets.iter().map(|&b| threshold_for_scores(&benign, b).unwrap()).collect();
        assert!(t.windows(2).all(|p| p[0] >= p[1]));
        for (&b, &t) in budgets.iter().zip(&t) {
            assert!(benign.iter().filter(|&&s| s > t).count() as f64 / 1000.0 <= b);
        }
    }

    #[test]
    fn identical_benign_scores_still_give_a_cut() {
        let benign = vec![0.3; 50];
        assert_eq!(threshold_for_scores(&benign, 0.01).unwrap(), 0.3);
        assert!(matches!(threshold_for_scores(&[], 0.01), Err(EvalError::Unattainable(_))));
    }

    #[test]
    fn latency_fixture() {
        let windows: Vec<_> = (900..1200).map(|i| win(i, if i >= 1040 { 0.9 } else { 0.0 }, i >= 1000)).collect();
        let lat = event_latency(&windows, &[event(1000, 1100)], 0.5, 50);
        assert_eq!(lat.events[0].latency_steps, Some(40));
        assert!((lat.mean_s.unwrap() - 0.40).abs() < 1e-12);
    }

    #[test]
    fn latency_zero_and_missed() {
        let windows: Vec<_> = (0..300).map(|i| win(i, if (100..110).contains(&i) { 1.0 } else { 0.0 }, (100..260).contains(&i))).collect();
        let lat = event_latency(&windows, &[event(100, 150), event(200, 210)], 0.5, 50);
        assert_eq!(lat.events[0].latency_steps, Some(0));
        assert!(lat.events[1].missed);
        assert_eq!(lat.missed, 1);
        assert_eq!(lat.mean_steps, Some(0.0));
    }

    #[test]
    fn truth_covers_span() {
        let labels = [false, true, false, false, false, true];
        assert_eq!(window_truth(&labels, 3), vec![false, true, true, true, false, true]);
    }

    #[test]
    fn report_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut runs = Vec::new();
        for (k, name) in ["flooding", "suppress", "plateau", "continuous", "playback"].iter().enumerate() {
            let windows: Vec<_> = (0..400u64)
                .map(|i| {
                    let truth = (200..300).contains(&i);
                    let p = if truth { 0.5 + 0.1 * k as f64 } else { (i % 7) as f64 / 20.0 };
                    ScoredWindow { origin_step: i, time: i as f64 * 0.01, per_ae: vec![p, p / 2.0], p_ens: p, truth }
                })
                .collect();
            runs.push(AttackRun { name: name.to_string(), windows, events: vec![event(200, 280)], span: 20 });
        }
        runs.push(AttackRun { name: "clean".into(), windows: (0..100).map(|i| win(i, 0.0, false)).collect(), events: vec![], span: 20 });
        let rep = report(&runs, &DEFAULT_BUDGETS, 0.1, dir.path()).unwrap();
        assert_eq!(rep.auc.len(), 5);
        assert_eq!(rep.latency.len(), 15);
        assert_eq!(rep.benign.len(), 1);
        let auc = fs::read_to_string(dir.path().join("auc.csv")).unwrap();
        assert_eq!(auc.lines().count(), 6);
        assert!(auc.starts_with("attack,ae_1,ae_2,ensemble\n"));
        for name in ["flooding", "playback"] {
            assert!(dir.path().join(format!("roc_{name}.csv")).exists());
        }
        assert!(fs::read_to_string(dir.path().join("report.svg")).unwrap().starts_with("<svg"));
    }

    #[test]
    fn benign_only_report_has_no_auc() {
        let dir = tempfile::tempdir().unwrap();
        let runs = [AttackRun { name: "clean".into(), windows: (0..10).map(|i| win(i, 0.0, false)).collect(), events: vec![], span: 5 }];
        let rep = report(&runs, &DEFAULT_BUDGETS, 0.0, dir.path()).unwrap();
        assert!(rep.auc.is_empty());
        assert!(!dir.path().join("auc.csv").exists());
        assert!(dir.path().join("fpr.csv").exists());
    }
}
