//! Convergence summaries of a finished run: fitted h-slopes, K-sweep tables
//! and the multiscale check.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::runner::ResultRow;

pub const RESULTS_HEADER: [&str; 12] = [
    "K",
    "r",
    "h",
    "p",
    "nev_index",
    "lambda",
    "eig_error_vs_ref",
    "l2_error",
    "dg_error",
    "iters",
    "cond_estimate",
    "wall_time",
];

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("results.csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("results.csv: expected header {expected}, found {found}")]
    Header { expected: String, found: String },
    #[error("results.csv row {row}: {msg}")]
    Row { row: usize, msg: String },
}

/// Parses `results.csv`. The header must match exactly; `h` must be
/// positive and `lambda` finite.
pub fn parse_results(text: &str) -> Result<Vec<ResultRow>, ReportError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.iter().ne(RESULTS_HEADER.iter().copied()) {
        return Err(ReportError::Header {
            expected: RESULTS_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<ResultRow>().enumerate() {
        let row = rec?;
        if !(row.h > 0.0 && row.h.is_finite()) {
            return Err(ReportError::Row { row: i + 1, msg: format!("mesh size {} is not positive", row.h) });
        }
        if !row.lambda.is_finite() {
            return Err(ReportError::Row { row: i + 1, msg: "eigenvalue is not finite".into() });
        }
        if row.nev_index == 0 {
            return Err(ReportError::Row { row: i + 1, msg: "nev_index starts at 1".into() });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// `key = value` lines of `meta.txt`; comments and other lines are skipped.
pub fn parse_meta(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`, over pairs with both
/// coordinates positive and finite. Needs two distinct abscissae.
pub fn loglog_slope(pts: &[(f64, f64)]) -> Option<f64> {
    let v: Vec<(f64, f64)> = pts
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if v.len() < 2 {
        return None;
    }
    let n = v.len() as f64;
    let mx = v.iter().map(|p| p.0).sum::<f64>() / n;
    let my = v.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = v.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(v.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Whether `ln e(K)` decreases with non-increasing secant slopes.
pub fn concave_decreasing(pts: &[(f64, f64)]) -> bool {
    if pts.len() < 2 || pts.iter().any(|p| !(p.1 > 0.0)) {
        return false;
    }
    let slopes: Vec<f64> = pts.windows(2).map(|w| (w[1].1.ln() - w[0].1.ln()) / (w[1].0 - w[0].0)).collect();
    slopes.iter().all(|&s| s < 0.0) && slopes.windows(2).all(|w| w[1] <= w[0] + 1e-12)
}

/// Exponent of the DG-norm weight in the multiscale bound for `h ∼ K^{-α}`.
pub fn multiscale_gamma(alpha: f64) -> f64 {
    (3.0 - alpha) / (2.0 * alpha)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HStudy {
    pub cutoff: usize,
    pub degree: usize,
    pub nev_index: usize,
    pub eig_slope: Option<f64>,
    pub l2_slope: Option<f64>,
    pub dg_slope: Option<f64>,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KStudy {
    pub level: u32,
    pub degree: usize,
    pub nev_index: usize,
    /// `(K, eigenvalue error)` ascending in `K`.
    pub errors: Vec<(usize, f64)>,
    pub concave_decreasing: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Multiscale {
    pub alpha: f64,
    pub gamma: f64,
    pub l2_slope: Option<f64>,
    pub scaled_dg_slope: Option<f64>,
    pub points: usize,
}

impl Multiscale {
    /// Slopes in `h` within 0.5 of each other.
    pub fn consistent(&self) -> bool {
        matches!((self.l2_slope, self.scaled_dg_slope), (Some(a), Some(b)) if (a - b).abs() <= 0.5)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub h_studies: Vec<HStudy>,
    pub k_studies: Vec<KStudy>,
    pub multiscale: Option<Multiscale>,
}

/// Groups the rows into studies. Rows with zero error (the reference) do
/// not enter the fits.
pub fn analyse(rows: &[ResultRow], alpha_scale: Option<f64>) -> Report {
    let mut by_kp: BTreeMap<(usize, usize, usize), Vec<&ResultRow>> = BTreeMap::new();
    let mut by_rp: BTreeMap<(u32, usize, usize), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        by_kp.entry((r.k, r.p, r.nev_index)).or_default().push(r);
        by_rp.entry((r.r, r.p, r.nev_index)).or_default().push(r);
    }
    let mut rep = Report::default();
    for ((k, p, j), g) in by_kp {
        if g.iter().map(|r| r.r).collect::<std::collections::BTreeSet<_>>().len() < 2 {
            continue;
        }
        let fit = |f: fn(&ResultRow) -> f64| loglog_slope(&g.iter().map(|r| (r.h, f(r))).collect::<Vec<_>>());
        rep.h_studies.push(HStudy {
            cutoff: k,
            degree: p,
            nev_index: j,
            eig_slope: fit(|r| r.eig_error_vs_ref),
            l2_slope: fit(|r| r.l2_error),
            dg_slope: fit(|r| r.dg_error),
            points: g.len(),
        });
    }
    for ((r, p, j), mut g) in by_rp {
        g.sort_by_key(|row| row.k);
        g.dedup_by_key(|row| row.k);
        if g.len() < 2 {
            continue;
        }
        let errors: Vec<(usize, f64)> = g.iter().filter(|row| row.eig_error_vs_ref > 0.0).map(|row| (row.k, row.eig_error_vs_ref)).collect();
        let pts: Vec<(f64, f64)> = errors.iter().map(|&(k, e)| (k as f64, e)).collect();
        rep.k_studies.push(KStudy {
            level: r,
            degree: p,
            nev_index: j,
            concave_decreasing: concave_decreasing(&pts),
            errors,
        });
    }
    if let Some(alpha) = alpha_scale {
        let gamma = multiscale_gamma(alpha);
        let first: Vec<&ResultRow> = rows.iter().filter(|r| r.nev_index == 1 && r.eig_error_vs_ref > 0.0).collect();
        rep.multiscale = Some(Multiscale {
            alpha,
            gamma,
            l2_slope: loglog_slope(&first.iter().map(|r| (r.h, r.l2_error)).collect::<Vec<_>>()),
            scaled_dg_slope: loglog_slope(&first.iter().map(|r| (r.h, r.h.powf(gamma) * r.dg_error)).collect::<Vec<_>>()),
            points: first.len(),
        });
    }
    rep
}

fn fmt_slope(s: Option<f64>) -> String {
    s.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

pub fn render(rep: &Report) -> String {
    let mut s = String::new();
    if !rep.h_studies.is_empty() {
        s.push_str("h-convergence (log-log slopes in h)\n");
        s.push_str("   K  p  idx  pts  eig      l2       dg\n");
        for h in &rep.h_studies {
            let _ = writeln!(
                s,
                "{:>4} {:>2} {:>4} {:>4}  {:<8} {:<8} {:<8}",
                h.cutoff,
                h.degree,
                h.nev_index,
                h.points,
                fmt_slope(h.eig_slope),
                fmt_slope(h.l2_slope),
                fmt_slope(h.dg_slope)
            );
        }
    }
    if !rep.k_studies.is_empty() {
        s.push_str("K-convergence (eigenvalue error)\n");
        for k in &rep.k_studies {
            let _ = write!(s, "  r={} p={} idx={}:", k.level, k.degree, k.nev_index);
            for (kk, e) in &k.errors {
                let _ = write!(s, " K={kk} {e:.3e};");
            }
            let _ = writeln!(s, " concave-decreasing: {}", k.concave_decreasing);
        }
    }
    if let Some(m) = &rep.multiscale {
        let _ = writeln!(
            s,
            "multiscale alpha={} gamma={:.3}: l2 slope {}, h^gamma*dg slope {}, {} points, consistent: {}",
            m.alpha,
            m.gamma,
            fmt_slope(m.l2_slope),
            fmt_slope(m.scaled_dg_slope),
            m.points,
            m.consistent()
        );
    }
    if s.is_empty() {
        s.push_str("no sweep with two or more points\n");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(k: usize, r: u32, e: f64) -> ResultRow {
        let h = 0.4 / f64::from(1u32 << r);
        ResultRow {
            k,
            r,
            h,
            p: 1,
            nev_index: 1,
            lambda: 1.0,
            eig_error_vs_ref: e,
            l2_error: e,
            dg_error: e.sqrt(),
            iters: 3,
            cond_estimate: f64::NAN,
            wall_time: 0.1,
        }
    }

    #[test]
    fn slope_of_power_law() {
        let rows: Vec<ResultRow> = (2..6).map(|r| row(20, r, 3.0 * (0.4 / f64::from(1u32 << r)).powi(2))).collect();
        let rep = analyse(&rows, None);
        assert_eq!(rep.h_studies.len(), 1);
        assert!((rep.h_studies[0].eig_slope.unwrap() - 2.0).abs() < 1e-12);
        assert!((rep.h_studies[0].dg_slope.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_with_nan() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let rows = vec![row(10, 2, 1e-3), row(20, 2, 0.0)];
        crate::runner::write_results(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&RESULTS_HEADER.join(",")));
        let back = parse_results(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back[0].cond_estimate.is_nan());
        assert_eq!(back[1].k, 20);
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(matches!(parse_results("K,r\n1,2\n"), Err(ReportError::Header { .. })));
    }

    #[test]
    fn gamma_at_unit_scale() {
        assert_eq!(multiscale_gamma(1.0), 1.0);
    }

    proptest! {
        #[test]
        fn slope_recovers_exponent(a in -4.0f64..4.0, c in 0.1f64..10.0) {
            let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025, 0.0125].iter().map(|&h: &f64| (h, c * h.powf(a))).collect();
            prop_assert!((loglog_slope(&pts).unwrap() - a).abs() < 1e-9);
        }

        #[test]
        fn exponential_decay_is_concave(b in 0.1f64..2.0, q in 1.0f64..2.0) {
            // ln e = -b K^q is concave for q >= 1
            let pts: Vec<(f64, f64)> = [5.0, 10.0, 15.0, 20.0].iter().map(|&k: &f64| (k, (-b * k.powf(q) / 10.0).exp())).collect();
            prop_assert!(concave_decreasing(&pts));
        }
    }
}
