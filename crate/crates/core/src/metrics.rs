//! Robustness and timing metrics over certification records.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::smoothing::CertificationRecord;
use crate::train::EpochTiming;

/// Default spacing of the certified-accuracy curve.
pub const DEFAULT_GRID_STEP: f64 = 0.25;

fn require_records(records: &[CertificationRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no certification records"));
    }
    Ok(())
}

/// Fraction of records that are correct and certified at radius `>= r`.
pub fn certified_accuracy_at(records: &[CertificationRecord], r: f64) -> Result<f64> {
    require_records(records)?;
    if !(r >= 0.0) {
        return Err(Error::invalid(format!("radius must be >= 0, got {r}")));
    }
    let hits = records.iter().filter(|rec| rec.correct && rec.radius >= r).count();
    Ok(hits as f64 / records.len() as f64)
}

/// Average certified radius; misclassified and abstained inputs count as 0.
pub fn acr(records: &[CertificationRecord]) -> Result<f64> {
    require_records(records)?;
    let total: f64 = records
        .iter()
        .map(|rec| if rec.correct { rec.radius } else { 0.0 })
        .sum();
    Ok(total / records.len() as f64)
}

pub fn abstain_rate(records: &[CertificationRecord]) -> Result<f64> {
    require_records(records)?;
    let n = records.iter().filter(|r| r.prediction.is_none()).count();
    Ok(n as f64 / records.len() as f64)
}

/// How many times faster the candidate is than the baseline.
pub fn speedup_factor(baseline_total_seconds: f64, candidate_total_seconds: f64) -> Result<f64> {
    if !(baseline_total_seconds > 0.0) || !(candidate_total_seconds > 0.0) {
        return Err(Error::invalid(format!(
            "times must be positive, got {baseline_total_seconds} and {candidate_total_seconds}"
        )));
    }
    Ok(baseline_total_seconds / candidate_total_seconds)
}

/// Fraction of cumulative time saved when every baseline run is replaced by
/// its candidate counterpart: `1 - sum(candidate) / sum(baseline)`.
pub fn cumulative_savings(baseline_totals: &[f64], candidate_totals: &[f64]) -> Result<f64> {
    let b: f64 = baseline_totals.iter().sum();
    let c: f64 = candidate_totals.iter().sum();
    if baseline_totals.iter().chain(candidate_totals).any(|t| !(*t > 0.0)) || b <= 0.0 {
        return Err(Error::invalid("cumulative savings need positive times"));
    }
    Ok(1.0 - c / b)
}

/// Curve points `(k * step, certified accuracy)` from `k = 0` up to the last
/// grid radius with non-zero accuracy.
pub fn accuracy_curve(records: &[CertificationRecord], step: f64) -> Result<Vec<(f64, f64)>> {
    if !(step > 0.0) {
        return Err(Error::invalid(format!("grid step must be > 0, got {step}")));
    }
    let mut curve = vec![(0.0, certified_accuracy_at(records, 0.0)?)];
    for k in 1.. {
        let r = k as f64 * step;
        let a = certified_accuracy_at(records, r)?;
        if a == 0.0 {
            break;
        }
        curve.push((r, a));
    }
    Ok(curve)
}

/// Mean of `samples` and the half-width of its normal-approximation 95%
/// interval. The flag is set when fewer than two samples make the interval
/// undefined; the half-width is then 0.
pub fn mean_and_ci95(samples: &[f64]) -> (f64, f64, bool) {
    let n = samples.len();
    if n == 0 {
        return (0.0, 0.0, true);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0, true);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt(), false)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportMeta {
    pub method_tag: String,
    pub sigma: f64,
    pub grid_step: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub method_tag: String,
    pub sigma: f64,
    pub num_records: usize,
    pub clean_accuracy: f64,
    pub acr: f64,
    pub abstain_rate: f64,
    pub curve: Vec<(f64, f64)>,
    pub total_train_seconds: f64,
    pub epochs: usize,
    pub epoch_mean_seconds: f64,
    pub epoch_ci95_half_width: f64,
    pub degenerate_ci: bool,
}

pub fn build_report(
    records: &[CertificationRecord],
    timings: &[EpochTiming],
    meta: &ReportMeta,
) -> Result<MetricsReport> {
    let curve = accuracy_curve(records, meta.grid_step)?;
    let secs: Vec<f64> = timings.iter().map(|t| t.wall_seconds).collect();
    let (mean, half, degenerate) = mean_and_ci95(&secs);
    Ok(MetricsReport {
        method_tag: meta.method_tag.clone(),
        sigma: meta.sigma,
        num_records: records.len(),
        clean_accuracy: certified_accuracy_at(records, 0.0)?,
        acr: acr(records)?,
        abstain_rate: abstain_rate(records)?,
        curve,
        total_train_seconds: secs.iter().sum(),
        epochs: secs.len(),
        epoch_mean_seconds: mean,
        epoch_ci95_half_width: half,
        degenerate_ci: degenerate,
    })
}

impl MetricsReport {
    /// `key=value` lines in a fixed order with full-precision numbers.
    ///
    /// Keys: `method`, `sigma`, `records`, `clean_accuracy`, `acr`,
    /// `abstain_rate`, `curve` (comma-separated `radius:accuracy` pairs),
    /// `total_train_seconds`, `epochs`, `epoch_mean_seconds`,
    /// `epoch_ci95_half_width`, `degenerate_ci`.
    pub fn to_machine_text(&self) -> String {
        let curve = self
            .curve
            .iter()
            .map(|(r, a)| format!("{r}:{a}"))
            .collect::<Vec<_>>()
            .join(",");
        let mut out = String::new();
        let _ = writeln!(out, "method={}", self.method_tag);
        let _ = writeln!(out, "sigma={}", self.sigma);
        let _ = writeln!(out, "records={}", self.num_records);
        let _ = writeln!(out, "clean_accuracy={}", self.clean_accuracy);
        let _ = writeln!(out, "acr={}", self.acr);
        let _ = writeln!(out, "abstain_rate={}", self.abstain_rate);
        let _ = writeln!(out, "curve={curve}");
        let _ = writeln!(out, "total_train_seconds={}", self.total_train_seconds);
        let _ = writeln!(out, "epochs={}", self.epochs);
        let _ = writeln!(out, "epoch_mean_seconds={}", self.epoch_mean_seconds);
        let _ = writeln!(out, "epoch_ci95_half_width={}", self.epoch_ci95_half_width);
        let _ = writeln!(out, "degenerate_ci={}", self.degenerate_ci);
        out
    }

    pub fn from_machine_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format("report", format!("expected key=value, got {line:?}")))?;
            fields.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::format("report", format!("missing key {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::format("report", format!("bad number for {k}")))
        };
        let count = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::format("report", format!("bad count for {k}")))
        };
        let curve = get("curve")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|pair| {
                let (r, a) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::format("report", format!("bad curve point {pair:?}")))?;
                let parse = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|_| Error::format("report", format!("bad curve point {pair:?}")))
                };
                Ok((parse(r)?, parse(a)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            method_tag: get("method")?.to_string(),
            sigma: num("sigma")?,
            num_records: count("records")?,
            clean_accuracy: num("clean_accuracy")?,
            acr: num("acr")?,
            abstain_rate: num("abstain_rate")?,
            curve,
            total_train_seconds: num("total_train_seconds")?,
            epochs: count("epochs")?,
            epoch_mean_seconds: num("epoch_mean_seconds")?,
            epoch_ci95_half_width: num("epoch_ci95_half_width")?,
            degenerate_ci: match get("degenerate_ci")? {
                "true" => true,
                "false" => false,
                other => return Err(Error::format("report", format!("bad flag {other:?}"))),
            },
        })
    }
}

/// Human-readable table: certified accuracy (percent, 2 decimals) at each
/// grid radius, then ACR (3 decimals), epoch time and total time in hours.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let radii: Vec<f64> = reports
        .iter()
        .max_by_key(|r| r.curve.len())
        .map(|r| r.curve.iter().map(|(x, _)| *x).collect())
        .unwrap_or_default();
    let mut out = String::new();
    let _ = write!(out, "{:<16}", "Method");
    for r in &radii {
        let _ = write!(out, " {:>7.2}", r);
    }
    let _ = writeln!(
        out,
        " | {:>6} | {:>20} | {:>14}",
        "ACR", "Epoch Time (s)", "Total Time (h)"
    );
    for rep in reports {
        let _ = write!(out, "{:<16}", rep.method_tag);
        for (i, _) in radii.iter().enumerate() {
            let acc = rep.curve.get(i).map_or(0.0, |(_, a)| *a);
            let _ = write!(out, " {:>7.2}", 100.0 * acc);
        }
        let epoch = if rep.degenerate_ci {
            format!("{:.2}", rep.epoch_mean_seconds)
        } else {
            format!("{:.2} ± {:.2}", rep.epoch_mean_seconds, rep.epoch_ci95_half_width)
        };
        let _ = writeln!(
            out,
            " | {:>6.3} | {:>20} | {:>14.4}",
            rep.acr,
            epoch,
            rep.total_train_seconds / 3600.0
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(radius: f64, correct: bool, abstain: bool) -> CertificationRecord {
        CertificationRecord {
            input_index: 0,
            true_label: 0,
            prediction: if abstain {
                None
            } else {
                Some(if correct { 0 } else { 1 })
            },
            radius: if abstain { 0.0 } else { radius },
            correct: correct && !abstain,
            wall_seconds: 0.01,
        }
    }

    fn fixture() -> Vec<CertificationRecord> {
        vec![
            rec(0.5, true, false),
            rec(0.25, true, false),
            rec(0.1, true, false),
            rec(0.0, false, true),
        ]
    }

    #[test]
    fn certified_accuracy_examples() {
        let all = vec![rec(0.3, true, false); 5];
        assert_eq!(certified_accuracy_at(&all, 0.25).unwrap(), 1.0);
        let abstains = vec![rec(0.0, false, true); 4];
        for r in [0.0, 0.25, 1.0] {
            assert_eq!(certified_accuracy_at(&abstains, r).unwrap(), 0.0);
        }
        assert_eq!(certified_accuracy_at(&fixture(), 0.25).unwrap(), 0.5);
        assert!(certified_accuracy_at(&[], 0.0).is_err());
        assert!(certified_accuracy_at(&fixture(), -0.1).is_err());
    }

    #[test]
    fn acr_examples() {
        let recs = vec![
            rec(0.5, true, false),
            rec(0.25, true, false),
            rec(0.0, true, false),
            rec(0.0, false, true),
        ];
        assert_eq!(acr(&recs).unwrap(), 0.1875);
        assert_eq!(acr(&vec![rec(0.0, false, true); 3]).unwrap(), 0.0);
        assert!((acr(&vec![rec(0.42, true, false); 7]).unwrap() - 0.42).abs() < 1e-15);
        // A misclassified input's radius does not count.
        assert_eq!(acr(&[rec(0.9, false, false)]).unwrap(), 0.0);
        assert!(acr(&[]).is_err());
    }

    #[test]
    fn speedups() {
        assert!((speedup_factor(45.21, 4.80).unwrap() - 9.42).abs() < 0.01);
        assert_eq!(speedup_factor(3.0, 3.0).unwrap(), 1.0);
        assert!((speedup_factor(18.98, 10.07).unwrap() - 1.88).abs() < 0.01);
        assert!(speedup_factor(0.0, 1.0).is_err());
        assert!(speedup_factor(1.0, -1.0).is_err());
        let s = cumulative_savings(&[45.21, 35.60, 15.39], &[4.80, 3.46, 3.44]).unwrap();
        assert!((100.0 * s - 87.84).abs() < 0.01, "{s}");
    }

    #[test]
    fn curve_caps_at_last_nonzero_bucket() {
        let recs = vec![rec(0.9, true, false), rec(0.3, true, false), rec(0.0, false, true)];
        let curve = accuracy_curve(&recs, 0.25).unwrap();
        let radii: Vec<f64> = curve.iter().map(|c| c.0).collect();
        assert_eq!(radii, vec![0.0, 0.25, 0.5, 0.75]);
        assert!(curve.windows(2).all(|w| w[1].1 <= w[0].1));
    }

    #[test]
    fn report_fields() {
        let timings = vec![EpochTiming {
            epoch_index: 0,
            wall_seconds: 2.0,
            method_tag: "crt".into(),
        }];
        let meta = ReportMeta {
            method_tag: "crt".into(),
            sigma: 0.25,
            grid_step: 0.25,
        };
        let rep = build_report(&fixture(), &timings, &meta).unwrap();
        assert!(rep.degenerate_ci);
        assert_eq!(rep.epoch_ci95_half_width, 0.0);
        assert_eq!(rep.clean_accuracy, certified_accuracy_at(&fixture(), 0.0).unwrap());
        assert_eq!(rep.clean_accuracy, rep.curve[0].1);
        assert_eq!(rep.abstain_rate, 0.25);
        let back = MetricsReport::from_machine_text(&rep.to_machine_text()).unwrap();
        assert_eq!(back, rep);
        let table = render_table(&[rep]);
        assert!(table.contains("75.00"), "{table}");
        assert!(table.contains("ACR"), "{table}");
    }

    #[test]
    fn ci_from_several_epochs() {
        let (m, h, d) = mean_and_ci95(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!(!d);
        assert!((h - 1.96 * (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
