//! ROC exports, the log-log SVG plot and TD/ED comparison tables.

use std::fmt::Write as _;

use miagrid::stats::{by_adjust, dp_tpr_bound, paired_permutation_test, paired_t_test, RocCurve, TestKind};
use miagrid::Result;
use serde::{Deserialize, Serialize};

/// `fpr,tpr,threshold` rows, starting at (0,0) and ending at (1,1).
pub fn roc_csv(roc: &RocCurve) -> String {
    let mut out = String::from("fpr,tpr,threshold\n");
    for (&(fpr, tpr), thr) in roc.points.iter().zip(&roc.thresholds) {
        let _ = writeln!(out, "{fpr:?},{tpr:?},{thr:?}");
    }
    out
}

/// Empirical operating point of one strategy at one grid FPR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FprPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub tp: usize,
    pub n_pos: usize,
    pub cp_lo: f64,
    pub cp_hi: f64,
    /// TPR of each repeat, pooled over its targets.
    pub repeat_tpr: Vec<f64>,
    pub median_tpr: f64,
    pub dp_bound: Option<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub const SUMMARY_HEADER: &str = "strategy,fpr,tpr,tp,n_pos,cp_lo,cp_hi,median_repeat_tpr,dp_bound";

pub fn summary_rows(strategy: &str, points: &[FprPoint], out: &mut String) {
    for p in points {
        let bound = p.dp_bound.map(|b| format!("{b:?}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{strategy},{:?},{:?},{},{},{:?},{:?},{:?},{bound}",
            p.fpr, p.tpr, p.tp, p.n_pos, p.cp_lo, p.cp_hi, p.median_tpr
        );
    }
}

const AXIS_MIN: f64 = 1e-3;
const WIDTH: f64 = 560.0;
const HEIGHT: f64 = 560.0;
const MARGIN: f64 = 70.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn sx(fpr: f64) -> f64 {
    let t = (fpr.max(AXIS_MIN).log10() + 3.0) / 3.0;
    MARGIN + t * (WIDTH - 2.0 * MARGIN)
}

fn sy(tpr: f64) -> f64 {
    let t = (tpr.max(AXIS_MIN).log10() + 3.0) / 3.0;
    HEIGHT - MARGIN - t * (HEIGHT - 2.0 * MARGIN)
}

/// Log-log ROC plot over [1e-3, 1] with Clopper–Pearson bars at the grid
/// FPRs and, when given, the DP upper bound.
pub fn roc_svg(curves: &[(String, &RocCurve, &[FprPoint])], dp_curve: Option<&[(f64, f64)]>) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    for k in 0..=3 {
        let v = 10f64.powi(-k);
        let (x, y) = (sx(v), sy(v));
        let _ = writeln!(
            s,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/><line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##,
            MARGIN,
            HEIGHT - MARGIN,
            MARGIN,
            WIDTH - MARGIN
        );
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">1e-{k}</text>"#, HEIGHT - MARGIN + 18.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">1e-{k}</text>"#, MARGIN - 6.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">FPR</text>"#, WIDTH / 2.0, HEIGHT - 25.0);
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.1}" text-anchor="middle" transform="rotate(-90 20 {:.1})">TPR</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    let diag = format!("{:.1},{:.1} {:.1},{:.1}", sx(AXIS_MIN), sy(AXIS_MIN), sx(1.0), sy(1.0));
    let _ = writeln!(s, r##"<polyline points="{diag}" fill="none" stroke="#999" stroke-dasharray="4 3"/>"##);

    let mut legend = Vec::new();
    if let Some(curve) = dp_curve {
        let pts: Vec<String> = (0..=60)
            .map(|k| {
                let fpr = 10f64.powf(-3.0 + 3.0 * k as f64 / 60.0);
                format!("{:.1},{:.1}", sx(fpr), sy(dp_tpr_bound(curve, fpr)))
            })
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="black" stroke-width="2"/>"#, pts.join(" "));
        legend.push(("DP(UB)".to_string(), "black"));
    }
    for (k, (name, roc, points)) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = roc
            .points
            .iter()
            .filter(|&&(f, _)| f >= AXIS_MIN)
            .map(|&(f, t)| format!("{:.1},{:.1}", sx(f), sy(t)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        for p in points.iter() {
            let x = sx(p.fpr);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{color}"/><circle cx="{x:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#,
                sy(p.cp_lo),
                sy(p.cp_hi),
                sy(p.tpr)
            );
        }
        legend.push((name.clone(), color));
    }
    for (k, (name, color)) in legend.iter().enumerate() {
        let y = MARGIN + 16.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{name}</text>"#,
            MARGIN + 10.0,
            MARGIN + 30.0,
            MARGIN + 36.0,
            y + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Paired TD/ED measurements of one table row: `td[f][r]` is the TPR at
/// FPR index `f` in repeat `r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub dataset: String,
    pub model: String,
    pub config: String,
    pub shots: usize,
    pub epsilon: Option<f64>,
    pub mia: String,
    pub td: Vec<Vec<f64>>,
    pub ed: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub kind: TestKind,
    pub fprs: Vec<f64>,
    /// `cells[row][f]` = (Δtpr·10⁴, p, p_adjusted).
    pub cells: Vec<Vec<(f64, f64, f64)>>,
    pub rows: Vec<ComparisonRow>,
}

/// How the BY adjustment groups p-values; recorded next to every table.
pub const BY_FAMILY: &str = "per test kind, jointly over all rows and FPRs of the table";

impl ComparisonTable {
    pub fn header(&self) -> String {
        let mut h = String::from("dataset,model,config,S,ε,MIA");
        for f in &self.fprs {
            let _ = write!(h, ",Δtpr×10⁻⁴ (FPR={f}),p (FPR={f}),p_adjusted (FPR={f})");
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for (row, cells) in self.rows.iter().zip(&self.cells) {
            let eps = row.epsilon.map(|e| e.to_string()).unwrap_or_else(|| "inf".into());
            let _ = write!(out, "{},{},{},{},{eps},{}", row.dataset, row.model, row.config, row.shots, row.mia);
            for (d, p, q) in cells {
                let _ = write!(out, ",{d:.3},{p:.6},{q:.6}");
            }
            out.push('\n');
        }
        out
    }

    /// Number of BY-adjusted p-values below `alpha`.
    pub fn discoveries(&self, alpha: f64) -> usize {
        self.cells.iter().flatten().filter(|c| c.2 < alpha).count()
    }

    /// All unadjusted p-values.
    pub fn raw_p(&self) -> Vec<f64> {
        self.cells.iter().flatten().map(|c| c.1).collect()
    }
}

/// One-sided paired tests (H₁: TD > ED) for every row and FPR, with BY
/// adjustment per test kind.
pub fn comparison_tables(
    rows: &[ComparisonRow],
    fprs: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<[ComparisonTable; 2]> {
    let mut raw: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
    for (r, row) in rows.iter().enumerate() {
        for f in 0..fprs.len() {
            let (x, y) = (&row.td[f], &row.ed[f]);
            let delta = 1e4 * x.iter().zip(y).map(|(a, b)| a - b).sum::<f64>() / x.len() as f64;
            raw[0].push((delta, paired_t_test(x, y)?.p_value));
            let s = miagrid::seed::derive_indexed(seed, "permutation", (r * fprs.len() + f) as u64);
            raw[1].push((delta, paired_permutation_test(x, y, resamples, s)?.p_value));
        }
    }
    let build = |kind: TestKind, raw: &[(f64, f64)]| -> Result<ComparisonTable> {
        let adjusted = by_adjust(&raw.iter().map(|c| c.1).collect::<Vec<_>>())?;
        let cells = raw
            .iter()
            .zip(adjusted)
            .map(|(&(d, p), q)| (d, p, q))
            .collect::<Vec<_>>()
            .chunks(fprs.len())
            .map(<[_]>::to_vec)
            .collect();
        Ok(ComparisonTable { kind, fprs: fprs.to_vec(), cells, rows: rows.to_vec() })
    };
    Ok([build(TestKind::T, &raw[0])?, build(TestKind::Permutation, &raw[1])?])
}
