//! Pretty-printing of JSON check reports, run manifests and sweep manifests.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde_json::Value;

fn mark(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn num(v: &Value) -> String {
    v.as_f64().map_or_else(|| "null".into(), |x| format!("{x:.6e}"))
}

/// Renders a report and returns whether everything in it passed.
pub fn render(report: &Value) -> (String, bool) {
    let mut out = String::new();
    let mut ok = true;
    if let Some(name) = report.get("name").and_then(Value::as_str) {
        let _ = writeln!(out, "{name}");
    }
    if let Some(status) = report.get("status").and_then(Value::as_str) {
        let _ = writeln!(out, "status: {status}");
        ok &= status == "ok";
    }
    if let Some(error) = report.get("error").and_then(Value::as_str) {
        let _ = writeln!(out, "error: {error}");
        ok = false;
    }
    for check in report.get("hard_checks").and_then(Value::as_array).into_iter().flatten() {
        let pass = check["pass"].as_bool().unwrap_or(false);
        ok &= pass;
        let _ = writeln!(
            out,
            "{} {:<32} {} {} {}",
            mark(pass),
            check["name"].as_str().unwrap_or("?"),
            num(&check["value"]),
            check["relation"].as_str().unwrap_or("?"),
            num(&check["limit"]),
        );
    }
    if let Some(reports) = report.get("reports").and_then(Value::as_array) {
        // (passed, total, worst margin, largest ratio) per check kind
        let mut summary: BTreeMap<&str, (usize, usize, f64, f64)> = BTreeMap::new();
        for r in reports {
            let entry = summary
                .entry(r["check"].as_str().unwrap_or("?"))
                .or_insert((0, 0, f64::INFINITY, 0.0));
            entry.1 += 1;
            if r["pass"].as_bool().unwrap_or(false) {
                entry.0 += 1;
            }
            for s in r["samples"].as_array().into_iter().flatten() {
                if let Some(m) = s["margin"].as_f64() {
                    entry.2 = entry.2.min(m);
                }
                if let Some(q) = s["ratio"].as_f64() {
                    entry.3 = entry.3.max(q);
                }
            }
        }
        for (name, (passed, total, margin, ratio)) in summary {
            ok &= passed == total;
            let margin = if margin.is_finite() { format!("{margin:.6e}") } else { "n/a".into() };
            let _ = writeln!(
                out,
                "{} {name:<32} {passed}/{total} sampled times, worst margin {margin}, max ratio {ratio:.6e}",
                mark(passed == total)
            );
        }
    }
    if let Some(audit) = report.get("integrated_audit").filter(|a| !a.is_null()) {
        let pass = audit["pass"].as_bool().unwrap_or(false);
        ok &= pass;
        let _ = writeln!(
            out,
            "{} integrated_audit                 K1 {} K2 {} K3 {} K4 {}",
            mark(pass),
            num(&audit["k1"]),
            num(&audit["k2"]),
            num(&audit["k3"]),
            num(&audit["k4"]),
        );
    }
    for run in report.get("runs").and_then(Value::as_array).into_iter().flatten() {
        let status = run["status"].as_str().unwrap_or("?");
        ok &= status == "ok";
        let _ = writeln!(
            out,
            "{} {:<32} value {} {}",
            mark(status == "ok"),
            run["dir"].as_str().unwrap_or("?"),
            num(&run["value"]),
            run["error"].as_str().unwrap_or(status),
        );
    }
    (out, ok)
}
