//! Long-format plot data. Cost surfaces come from the exact E(u_max) formula, never from simulation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheme::{gamma_max, tail_mass, SamplingScheme, SchemeSpec};
use crate::tuning::{expected_umax, expected_umax_bound};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureKind {
    UmaxVsM,
    CostHeatmap,
    TpdProfile,
    UmaxTrace,
    KdeInputs,
}

impl FigureKind {
    pub fn file_stem(self) -> &'static str {
        match self {
            FigureKind::UmaxVsM => "umax_vs_m",
            FigureKind::CostHeatmap => "cost_heatmap",
            FigureKind::TpdProfile => "tpd_profile",
            FigureKind::UmaxTrace => "umax_trace",
            FigureKind::KdeInputs => "kde_inputs",
        }
    }
}

/// A numeric table; every value is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureData {
    pub kind: FigureKind,
    /// Written as `#` lines above the header.
    pub comments: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FigureData {
    fn new(kind: FigureKind, columns: &[&str]) -> Self {
        FigureData {
            kind,
            comments: vec![format!("figure: {}", kind.file_stem()), "missing values: none (all entries finite)".into()],
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("{} produced a non-finite value {v}", self.kind.file_stem())));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for c in &self.comments {
            writeln!(w, "# {c}")?;
        }
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.to_string());
        wr.write_record(&self.columns).map_err(io)?;
        for r in &self.rows {
            wr.write_record(r.iter().map(|v| v.to_string())).map_err(io)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn scheme_at(c: f64, t_star: usize, b: f64, t_len: usize) -> Result<(f64, f64, SamplingScheme)> {
    let gamma = gamma_max(c, t_star, b, t_len)?;
    let eps = tail_mass(gamma, t_star, b, t_len)?;
    Ok((gamma, eps, SamplingScheme::build(SchemeSpec::tpd(gamma, t_star, b, t_len))?))
}

/// E(u_max)/T against m for each floor fraction c (c = 1 is uniform sampling).
pub fn umax_vs_m(t_len: usize, t_star: usize, b: f64, cs: &[f64], ms: &[usize]) -> Result<FigureData> {
    let mut f = FigureData::new(
        FigureKind::UmaxVsM,
        &["c", "gamma", "epsilon", "m", "m_over_t", "expected_umax", "umax_ratio", "bound", "bound_ratio"],
    );
    f.comments.push(format!("T = {t_len}, t_star = {t_star}, b = {b}"));
    let tt = t_len as f64;
    for &c in cs {
        let (gamma, eps, scheme) = scheme_at(c, t_star, b, t_len)?;
        for &m in ms {
            let e = expected_umax(scheme.probs(), m);
            let bound = expected_umax_bound(t_star, t_len, eps, m);
            f.push(vec![c, gamma, eps, m as f64, m as f64 / tt, e, e / tt, bound, bound / tt])?;
        }
    }
    Ok(f)
}

/// E(u_max)/T over a (c, m) grid.
pub fn cost_heatmap(t_len: usize, t_star: usize, b: f64, cs: &[f64], ms: &[usize]) -> Result<FigureData> {
    let mut f = FigureData::new(FigureKind::CostHeatmap, &["c", "m", "epsilon", "umax_ratio", "bound_ratio"]);
    f.comments.push(format!("T = {t_len}, t_star = {t_star}, b = {b}"));
    let tt = t_len as f64;
    for &c in cs {
        let (_, eps, scheme) = scheme_at(c, t_star, b, t_len)?;
        for &m in ms {
            let e = expected_umax(scheme.probs(), m);
            f.push(vec![c, m as f64, eps, e / tt, expected_umax_bound(t_star, t_len, eps, m) / tt])?;
        }
    }
    Ok(f)
}

/// p_t over t for the TPD scheme whose tail mass is (just above) `epsilon`.
pub fn tpd_profile(t_len: usize, t_star: usize, b: f64, epsilon: f64) -> Result<FigureData> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("tail mass must lie in (0, 1), got {epsilon}")));
    }
    let c = (epsilon * t_len as f64 / (t_len - t_star) as f64).min(1.0);
    let (gamma, eps, scheme) = scheme_at(c, t_star, b, t_len)?;
    let mut f = FigureData::new(FigureKind::TpdProfile, &["t", "p", "tail"]);
    f.comments.push(format!("T = {t_len}, t_star = {t_star}, b = {b}, gamma = {gamma}, epsilon = {eps}"));
    f.comments.push("tail: 0 = head (t <= t_star), 1 = tail".into());
    for (i, &p) in scheme.probs().iter().enumerate() {
        let t = i + 1;
        f.push(vec![t as f64, p, if t > t_star { 1.0 } else { 0.0 }])?;
    }
    Ok(f)
}

/// Per-iteration u_max of a chain, raw and relative to T.
pub fn umax_trace(u_max: &[usize], t_len: usize) -> Result<FigureData> {
    let mut f = FigureData::new(FigureKind::UmaxTrace, &["iteration", "u_max", "umax_ratio"]);
    for (i, &u) in u_max.iter().enumerate() {
        f.push(vec![(i + 1) as f64, u as f64, u as f64 / t_len as f64])?;
    }
    Ok(f)
}

/// Posterior draws in long format: (series, parameter, value). Labels are listed in the comments.
pub fn kde_inputs(series: &[(&str, &[Vec<f64>])], names: &[String]) -> Result<FigureData> {
    let mut f = FigureData::new(FigureKind::KdeInputs, &["series", "parameter", "value"]);
    f.comments
        .push(format!("series ids: {}", series.iter().enumerate().map(|(i, (s, _))| format!("{i}={s}")).collect::<Vec<_>>().join(" ")));
    f.comments.push(format!("parameter ids: {}", names.iter().enumerate().map(|(i, n)| format!("{i}={n}")).collect::<Vec<_>>().join(" ")));
    for (s, (_, draws)) in series.iter().enumerate() {
        for d in draws.iter() {
            for (k, &v) in d.iter().enumerate() {
                f.push(vec![s as f64, k as f64, v])?;
            }
        }
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_has_flat_tail() {
        let f = tpd_profile(30, 10, 0.0, 0.1).unwrap();
        let p = f.column("p").unwrap();
        assert_eq!(p.len(), 30);
        assert!((p[9] - p[10]).abs() < 1e-15);
        assert!(p[..10].windows(2).all(|w| w[0] > w[1]));
        assert!(p[10..].windows(2).all(|w| w[0] == w[1]));
        let eps: f64 = p[10..].iter().sum();
        assert!((eps - 0.1).abs() < 1e-6);
    }

    #[test]
    fn csv_has_comment_header() {
        let f = umax_trace(&[3, 5], 10).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("# figure: umax_trace"));
        assert!(s.contains("iteration,u_max,umax_ratio\n1,3,0.3\n"));
    }
}
